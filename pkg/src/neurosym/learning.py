"""Training loops for the weakly-supervised formula recognizer.

Four methods share one loop skeleton:

* ``ngs-mbs``  - parse, execute, and on a wrong answer run the
  multi-step back-search; a correction that executes to the answer
  becomes a pseudo label for a likelihood update.
* ``ngs-rl``   - REINFORCE with grammar-constrained sampling and a
  moving-average reward baseline.
* ``ns-rl``    - REINFORCE with unconstrained per-position sampling;
  grammar-invalid samples earn zero reward without execution.
* ``ngs-mapo`` - a simplified memory-buffer variant: mixes a gradient
  term on a remembered rewarding sample with the on-policy term.

Also houses the exact-posterior oracle (enumeration over the language
at short lengths) and the smoothed-posterior KL check.
"""
from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import perception, symbols
from .backsearch import MbsConfig, multi_step_backsearch
from .dataset import supervised_subset
from .grammar import enumerate_language, load_arithmetic_grammar
from .parsing import cnf_for, constrained_sample, viterbi_parse
from .reasoning import DivisionByZero, NotAFormula, execute_string

METHODS = ("ngs-mbs", "ns-rl", "ngs-rl", "ngs-mapo")
PRETRAIN_ITERATIONS = 1000
MAPO_MIN_BUFFER_WEIGHT = 0.1


class EmptySupport(ValueError):
    """No grammar-valid string of this length executes to the answer."""


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ngs-mbs"
    batch_size: int = 64
    iterations: int = 15000
    lr: float = perception.DEFAULT_LR
    mbs: MbsConfig = field(default_factory=MbsConfig)
    baseline_decay: float = 0.99
    data_fraction: float = 1.0
    pretrain_size: int = 0
    seed: int = 0
    arch: str = "linear"
    hidden: int = 32

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ValueError("data_fraction must be in (0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class LogRecord:
    iteration: int
    calc_acc: float
    sym_acc: float
    label_frac: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, rec: LogRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("log iterations must be strictly increasing")
        self.records.append(rec)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            self.write_csv_to(f)

    def write_csv_to(self, f):
        w = csv.writer(f)
        w.writerow(["iter", "calc_acc", "sym_acc", "label_frac", "seconds"])
        for r in self.records:
            w.writerow(
                [r.iteration, f"{r.calc_acc:.6f}", f"{r.sym_acc:.6f}",
                 f"{r.label_frac:.6f}", f"{r.seconds:.3f}"]
            )


def select_fraction(data, fraction: float, seed: int):
    """Deterministic data subset: seeded shuffle, first fraction."""
    if fraction >= 1.0:
        return list(data)
    rng = np.random.default_rng([seed, 97])
    order = rng.permutation(len(data))
    keep = max(1, round(fraction * len(data)))
    return [data[i] for i in sorted(order[:keep])]


class _BatchSampler:
    """Epoch-shuffled batch index stream, deterministic given the rng."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._order = []
        self._cursor = 0

    def next_batch(self):
        out = []
        while len(out) < self.batch_size:
            if self._cursor >= len(self._order):
                self._order = self.rng.permutation(self.n)
                self._cursor = 0
            out.append(int(self._order[self._cursor]))
            self._cursor += 1
        return out


def _forward_batch(model, examples, indices):
    """One stacked forward pass; returns per-example probability matrices."""
    X = np.concatenate([examples[i].features for i in indices])
    probs = perception._softmax_floored(perception._scores(model, X)[0])
    out = []
    offset = 0
    for i in indices:
        l = examples[i].length
        out.append(probs[offset : offset + l])
        offset += l
    return out


def _sample_rows(pm, rng):
    """One symbol per row, sampled from the row distribution."""
    u = rng.random(pm.shape[0])
    cdf = np.cumsum(pm, axis=1)
    return tuple(int(np.searchsorted(cdf[i], u[i] * cdf[i, -1])) for i in range(pm.shape[0]))


def _executes_to(z, answer):
    try:
        return execute_string(z) == answer
    except (NotAFormula, DivisionByZero):
        return False


class _Trainer:
    """Shared loop; subclass hooks provide the per-batch gradient."""

    needs_baseline = False

    def __init__(self, data, cfg: TrainConfig):
        self.cfg = cfg
        self.grammar = load_arithmetic_grammar()
        self.cnf = cnf_for(self.grammar)
        self.data = select_fraction(data, cfg.data_fraction, cfg.seed)
        self.model = perception.init_model(
            input_dim=data[0].features.shape[1],
            arch=cfg.arch, hidden=cfg.hidden, seed=cfg.seed, lr=cfg.lr,
        )
        self.rng = np.random.default_rng([cfg.seed, 11])
        self.sampler = _BatchSampler(len(self.data), cfg.batch_size, self.rng)
        self.baseline = 0.0
        self.iteration = 0

    # -- hook -------------------------------------------------------------
    def batch_terms(self, indices, pms):
        """Returns (list of (features, labels, row_weight), usable_count)."""
        raise NotImplementedError

    # ---------------------------------------------------------------------
    def step(self):
        indices = self.sampler.next_batch()
        pms = _forward_batch(self.model, self.data, indices)
        terms, usable = self.batch_terms(indices, pms)
        if terms:
            X = np.concatenate([t[0] for t in terms])
            labels = np.concatenate([np.asarray(t[1], dtype=np.intp) for t in terms])
            weights = np.concatenate(
                [np.full(len(t[1]), t[2]) for t in terms]
            )
            grad = perception.weighted_nll_gradient(self.model, X, labels, weights)
        else:
            grad = {k: np.zeros_like(v) for k, v in self.model.params.items()}
        perception.apply_update(self.model, grad)
        self.iteration += 1
        return usable / len(indices)

    def pretrain(self):
        pairs = supervised_subset(self.data, self.cfg.pretrain_size, self.cfg.seed)
        if not pairs:
            return
        rng = np.random.default_rng([self.cfg.seed, 23])
        sampler = _BatchSampler(len(pairs), self.cfg.batch_size, rng)
        for _ in range(PRETRAIN_ITERATIONS):
            idx = sampler.next_batch()
            X = np.concatenate([pairs[i][0] for i in idx])
            labels = np.concatenate([np.asarray(pairs[i][1], dtype=np.intp) for i in idx])
            grad = perception.weighted_nll_gradient(
                self.model, X, labels, np.full(len(labels), 1.0 / len(idx))
            )
            perception.apply_update(self.model, grad)

    def state_dict(self):
        return {
            "iteration": self.iteration,
            "baseline": self.baseline,
            "rng_state": self.rng.bit_generator.state,
            "sampler_order": [int(i) for i in self.sampler._order],
            "sampler_cursor": self.sampler._cursor,
        }

    def load_state_dict(self, state):
        self.iteration = state["iteration"]
        self.baseline = state["baseline"]
        self.rng.bit_generator.state = state["rng_state"]
        self.sampler._order = np.array(state["sampler_order"], dtype=np.intp)
        self.sampler._cursor = state["sampler_cursor"]


class _MbsTrainer(_Trainer):
    def batch_terms(self, indices, pms):
        terms = []
        usable = 0
        for i, pm in zip(indices, pms):
            ex = self.data[i]
            z_hat, _, _ = viterbi_parse(self.cnf, pm)
            label = z_hat if _executes_to(z_hat, ex.answer) else None
            if label is None:
                z_t = multi_step_backsearch(
                    z_hat, ex.answer, pm, self.cfg.mbs, self.rng, cnf=self.cnf
                )
                if _executes_to(z_t, ex.answer):
                    label = z_t
            if label is not None:
                usable += 1
                terms.append((ex.features, label, 1.0))
        scale = 1.0 / usable if usable else 1.0
        return [(x, z, w * scale) for x, z, w in terms], usable


class _ReinforceTrainer(_Trainer):
    needs_baseline = True

    def sample(self, pm):
        if self.cfg.method == "ns-rl":
            return _sample_rows(pm, self.rng)
        return constrained_sample(self.grammar, pm, self.rng)

    def batch_terms(self, indices, pms):
        terms = []
        rewards = []
        for i, pm in zip(indices, pms):
            ex = self.data[i]
            z = self.sample(pm)
            r = 1.0 if _executes_to(z, ex.answer) else 0.0
            rewards.append(r)
            w = (r - self.baseline) / len(indices)
            if w != 0.0:
                terms.append((ex.features, z, w))
        mean_r = float(np.mean(rewards))
        self.baseline = (
            self.cfg.baseline_decay * self.baseline
            + (1.0 - self.cfg.baseline_decay) * mean_r
        )
        return terms, int(sum(rewards))


class _MapoTrainer(_Trainer):
    needs_baseline = True

    def __init__(self, data, cfg):
        super().__init__(data, cfg)
        self.buffers = {i: [] for i in range(len(self.data))}

    def batch_terms(self, indices, pms):
        terms = []
        rewards = []
        for i, pm in zip(indices, pms):
            ex = self.data[i]
            z_on = constrained_sample(self.grammar, pm, self.rng)
            r = 1.0 if _executes_to(z_on, ex.answer) else 0.0
            rewards.append(r)
            buf = self.buffers[i]
            if buf:
                probs = np.array(
                    [np.prod(pm[np.arange(len(z)), list(z)]) for z in buf]
                )
                mass = float(probs.sum())
                w = min(max(mass, MAPO_MIN_BUFFER_WEIGHT), 1.0)
                pick = buf[int(self.rng.choice(len(buf), p=probs / probs.sum()))]
                terms.append((ex.features, pick, w / len(indices)))
            else:
                w = 0.0
            on_w = (1.0 - w) * (r - self.baseline) / len(indices)
            if on_w != 0.0:
                terms.append((ex.features, z_on, on_w))
            if r == 1.0 and tuple(z_on) not in map(tuple, buf):
                buf.append(tuple(z_on))
        mean_r = float(np.mean(rewards))
        self.baseline = (
            self.cfg.baseline_decay * self.baseline
            + (1.0 - self.cfg.baseline_decay) * mean_r
        )
        return terms, int(sum(rewards))

    def state_dict(self):
        state = super().state_dict()
        state["buffers"] = {str(i): [list(z) for z in b] for i, b in self.buffers.items()}
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.buffers = {
            int(i): [tuple(z) for z in b] for i, b in state["buffers"].items()
        }


_TRAINERS = {
    "ngs-mbs": _MbsTrainer,
    "ns-rl": _ReinforceTrainer,
    "ngs-rl": _ReinforceTrainer,
    "ngs-mapo": _MapoTrainer,
}


def make_trainer(data, cfg: TrainConfig) -> _Trainer:
    return _TRAINERS[cfg.method](data, cfg)


def train(
    data,
    cfg: TrainConfig,
    eval_fn=None,
    eval_every: int = 500,
    log_stream=None,
    trainer: _Trainer | None = None,
    checkpoint_fn=None,
    checkpoint_every: int | None = None,
):
    """Run a training method to completion; returns (model, TrainLog).

    ``eval_fn(model) -> (calc_acc, sym_acc)`` is called every
    ``eval_every`` iterations and at the end.  A pre-built ``trainer``
    (possibly restored from a checkpoint) may be passed for resumption.
    """
    if trainer is None:
        trainer = make_trainer(data, cfg)
        if cfg.pretrain_size:
            trainer.pretrain()
    log = TrainLog()
    writer = None
    if log_stream is not None:
        writer = csv.writer(log_stream)
        if trainer.iteration == 0:
            writer.writerow(["iter", "calc_acc", "sym_acc", "label_frac", "seconds"])
    start = time.perf_counter()
    usable_sum, usable_n = 0.0, 0

    def record():
        calc, sym = eval_fn(trainer.model) if eval_fn else (float("nan"), float("nan"))
        frac = usable_sum / usable_n if usable_n else 0.0
        rec = LogRecord(
            trainer.iteration, calc, sym, frac, time.perf_counter() - start
        )
        log.append(rec)
        if writer is not None:
            writer.writerow(
                [rec.iteration, f"{rec.calc_acc:.6f}", f"{rec.sym_acc:.6f}",
                 f"{rec.label_frac:.6f}", f"{rec.seconds:.3f}"]
            )
        return rec

    while trainer.iteration < cfg.iterations:
        usable_sum += trainer.step()
        usable_n += 1
        it = trainer.iteration
        if it % eval_every == 0 or it == cfg.iterations:
            record()
            usable_sum, usable_n = 0.0, 0
        if checkpoint_fn and checkpoint_every and it % checkpoint_every == 0:
            checkpoint_fn(trainer)
    if not log.records:
        record()  # zero-iteration run still reports initial metrics
    return trainer.model, log


def train_ngs_mbs(data, cfg: TrainConfig, **kw):
    assert cfg.method == "ngs-mbs"
    return train(data, cfg, **kw)


def train_reinforce(data, cfg: TrainConfig, **kw):
    assert cfg.method in ("ns-rl", "ngs-rl")
    return train(data, cfg, **kw)


def train_mapo_lite(data, cfg: TrainConfig, **kw):
    assert cfg.method == "ngs-mapo"
    return train(data, cfg, **kw)


# ---------------------------------------------------------------------------
# Exact posterior and the smoothed-posterior KL


@lru_cache(maxsize=8)
def _language_values(length: int):
    """All valid strings of the length with their executed values
    (None where execution divides by zero)."""
    g = load_arithmetic_grammar()
    out = []
    for z in enumerate_language(g, length):
        try:
            out.append((z, execute_string(z)))
        except DivisionByZero:
            out.append((z, None))
    return tuple(out)


def _string_probs(pm, strings):
    arr = np.array(strings)
    return np.prod(pm[np.arange(arr.shape[1]), arr], axis=1)


def exact_posterior(example, model):
    """Exact posterior over latent strings given features and answer.

    Returns (dict z -> probability, C) where C is the perception
    probability mass of the answer-consistent set.  Raises
    EmptySupport when no valid string reaches the answer.
    """
    l = example.length
    pm = perception.forward(model, example.features)
    pairs = _language_values(l)
    members = [z for z, v in pairs if v is not None and v == example.answer]
    if not members:
        raise EmptySupport(f"answer {example.answer} unreachable at length {l}")
    probs = _string_probs(pm, members)
    C = float(probs.sum())
    return {z: float(p) / C for z, p in zip(members, probs)}, C


def kl_smoothed(example, model, epsilon: float):
    """KL(true posterior || epsilon-smoothed posterior) by enumeration,
    next to its closed form log(1 + eps/C) - log(1 + eps).

    The smoothed distribution adds epsilon to the answer indicator for
    every string of the length, valid or not, so its normalizer is
    enumerated over the full symbol space (that is what collapses the
    closed form to the two-log expression).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    l = example.length
    if l > 5:
        raise ValueError("full-space enumeration capped at length 5")
    pm = perception.forward(model, example.features)
    value_of = {z: v for z, v in _language_values(l)}
    full = np.array(list(itertools.product(range(symbols.NUM_SYMBOLS), repeat=l)))
    p_theta = np.prod(pm[np.arange(l), full], axis=1)
    in_q = np.array(
        [value_of.get(tuple(z)) == example.answer for z in full], dtype=float
    )
    if not in_q.any():
        raise EmptySupport(f"answer {example.answer} unreachable at length {l}")
    C = float((p_theta * in_q).sum())
    posterior = p_theta * in_q / C
    smoothed = (in_q + epsilon) * p_theta
    smoothed = smoothed / smoothed.sum()
    mask = posterior > 0
    kl = float(np.sum(posterior[mask] * np.log(posterior[mask] / smoothed[mask])))
    closed = float(np.log1p(epsilon / C) - np.log1p(epsilon))
    return kl, closed
