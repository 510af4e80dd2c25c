"""Synthetic handwritten-formula dataset.

Formulas are sampled from the arithmetic grammar with a fixed length
mix; each symbol slot gets a feature vector drawn from a per-class
pool (basis-vector prototype plus isotropic Gaussian noise).  Train
and test pools are disjoint, so no feature vector crosses the split.
Formulas whose execution would divide by zero are resampled away.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import symbols
from .grammar import Grammar, enumerate_language, load_arithmetic_grammar
from .parsing import cnf_for, parse_string
from .reasoning import DivisionByZero, evaluate, format_value, parse_value

DEFAULT_LENGTH_MIX = (
    (1, 1000, 200),
    (3, 1000, 200),
    (5, 2000, 400),
    (7, 6000, 1200),
)


@dataclass(frozen=True)
class DatasetSpec:
    length_mix: tuple = DEFAULT_LENGTH_MIX  # (length, train count, test count)
    feature_dim: int = 16
    noise_sigma: float = 0.3
    instances_per_class: int = 200
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self):
        for length, ntr, nte in self.length_mix:
            if length % 2 == 0:
                raise ValueError(f"even formula length {length}")
            if ntr < 0 or nte < 0:
                raise ValueError("negative example count")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")
        if self.feature_dim < symbols.NUM_SYMBOLS:
            raise ValueError("feature_dim must be >= 14 (one prototype axis per class)")

    def scaled_mix(self):
        return tuple(
            (length, round(ntr * self.scale), round(nte * self.scale))
            for length, ntr, nte in self.length_mix
        )

    def to_dict(self):
        return {
            "length_mix": [list(row) for row in self.length_mix],
            "feature_dim": self.feature_dim,
            "noise_sigma": self.noise_sigma,
            "instances_per_class": self.instances_per_class,
            "seed": self.seed,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            length_mix=tuple(tuple(row) for row in d["length_mix"]),
            feature_dim=d["feature_dim"],
            noise_sigma=d["noise_sigma"],
            instances_per_class=d["instances_per_class"],
            seed=d["seed"],
            scale=d["scale"],
        )


@dataclass
class Example:
    """One weakly-supervised example: features and the executed answer.

    The generating symbol string is stored but deliberately private;
    training code must not read it.  Evaluation accesses it through
    ``harness``'s accessor only.
    """

    features: np.ndarray  # (l, d)
    answer: Fraction
    _hidden_truth: tuple = field(repr=False)

    @property
    def length(self) -> int:
        return self.features.shape[0]


def sample_formula(g: Grammar, length: int, rng) -> tuple:
    """Uniform grammar-valid formula of odd length, resampled until its
    execution has no zero divisor."""
    if length % 2 == 0:
        raise ValueError("formula lengths are odd")
    cnf = cnf_for(g)
    pool = enumerate_language(g, length) if length <= 5 else None
    while True:
        if pool is not None:
            z = pool[int(rng.integers(len(pool)))]
        else:
            # digits at even slots, operators at odd slots: identical to
            # uniform over the language without materializing it
            z = tuple(
                int(rng.choice(symbols.DIGITS))
                if i % 2 == 0
                else int(rng.choice(symbols.OPERATORS))
                for i in range(length)
            )
        try:
            evaluate(parse_string(cnf, z))
            return z
        except DivisionByZero:
            continue


def build_symbol_pools(spec: DatasetSpec, rng):
    """(train, test) arrays of shape (14, K, d): per-class instance pools."""
    prototypes = np.zeros((symbols.NUM_SYMBOLS, spec.feature_dim))
    prototypes[np.arange(symbols.NUM_SYMBOLS), np.arange(symbols.NUM_SYMBOLS)] = 1.0
    shape = (symbols.NUM_SYMBOLS, spec.instances_per_class, spec.feature_dim)
    train = prototypes[:, None, :] + spec.noise_sigma * rng.normal(size=shape)
    test = prototypes[:, None, :] + spec.noise_sigma * rng.normal(size=shape)
    return train, test


def generate_dataset(spec: DatasetSpec):
    """Deterministic (train, test) example lists for the spec."""
    g = load_arithmetic_grammar()
    cnf = cnf_for(g)
    rng = np.random.default_rng(spec.seed)
    train_pool, test_pool = build_symbol_pools(spec, rng)
    splits = []
    for split_index, pool in ((1, train_pool), (2, test_pool)):
        examples = []
        for length, ntr, nte in spec.scaled_mix():
            count = ntr if split_index == 1 else nte
            for k in range(count):
                ex_rng = np.random.default_rng((spec.seed, split_index, length, k))
                z = sample_formula(g, length, ex_rng)
                feats = np.stack(
                    [
                        pool[sym, int(ex_rng.integers(spec.instances_per_class))]
                        for sym in z
                    ]
                )
                answer = evaluate(parse_string(cnf, z)).value
                examples.append(Example(feats, answer, z))
        splits.append(examples)
    return splits[0], splits[1]


# ---------------------------------------------------------------------------
# On-disk format: one JSON record per line plus a manifest


def _example_record(ex: Example) -> str:
    return json.dumps(
        {
            "len": ex.length,
            "y": format_value(ex.answer),
            "z": list(ex._hidden_truth),
            "x": [[float(v) for v in row] for row in ex.features],
        }
    )


def save_dataset(out_dir, train, test, spec: DatasetSpec):
    os.makedirs(out_dir, exist_ok=True)
    for name, examples in (("train", train), ("test", test)):
        with open(os.path.join(out_dir, f"{name}.jsonl"), "w") as f:
            for ex in examples:
                f.write(_example_record(ex) + "\n")
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump({"spec": spec.to_dict(), "format_version": 1}, f, indent=2)
        f.write("\n")


def load_dataset(data_dir):
    """Returns (train, test, spec)."""
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    spec = DatasetSpec.from_dict(manifest["spec"])
    out = []
    for name in ("train", "test"):
        examples = []
        with open(os.path.join(data_dir, f"{name}.jsonl")) as f:
            for line in f:
                rec = json.loads(line)
                examples.append(
                    Example(
                        np.array(rec["x"], dtype=np.float64),
                        parse_value(rec["y"]),
                        tuple(rec["z"]),
                    )
                )
        out.append(examples)
    return out[0], out[1], spec


def supervised_subset(examples, size: int, seed: int = 0):
    """Fully-labeled (features, symbols) pairs for optional pretraining.

    This is the one sanctioned training-side use of the hidden strings,
    mirroring pretraining on a small fully-supervised set.  The subset
    is a seeded draw across the whole list so every formula length (and
    hence every symbol class, operators included) is represented.
    """
    if size >= len(examples):
        picked = list(examples)
    else:
        rng = np.random.default_rng([seed, 41])
        picked = [examples[i] for i in sorted(rng.permutation(len(examples))[:size])]
    return [(ex.features, ex._hidden_truth) for ex in picked]
