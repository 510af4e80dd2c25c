"""Experiment orchestration: evaluation, plans, sweeps, and tables.

Evaluation is the only place allowed to read an example's hidden
symbol string (for symbol accuracy); trainers see features and answers
only.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field


from . import learning, perception
from .backsearch import MbsConfig
from .dataset import load_dataset
from .grammar import load_arithmetic_grammar
from .parsing import cnf_for, viterbi_parse
from .reasoning import DivisionByZero, evaluate

DEFAULT_EVAL_EVERY = 500


def hidden_symbols(example) -> tuple:
    """Evaluation-only accessor for the ground-truth symbol string."""
    return example._hidden_truth


def evaluate_model(model, test_set):
    """(calculation accuracy, symbol accuracy) on a test set.

    Calculation accuracy counts examples whose parsed formula executes
    exactly to the answer (spurious formulas count).  Symbol accuracy
    is the per-position match rate against the hidden string, averaged
    over all symbol slots.
    """
    cnf = cnf_for(load_arithmetic_grammar())
    calc_hits = 0
    sym_hits = 0
    sym_total = 0
    for ex in test_set:
        pm = perception.forward(model, ex.features)
        parsed = viterbi_parse(cnf, pm)
        truth = hidden_symbols(ex)
        sym_total += len(truth)
        if parsed is None:
            continue
        z_hat, tree, _ = parsed
        sym_hits += sum(a == b for a, b in zip(z_hat, truth))
        try:
            if evaluate(tree).value == ex.answer:
                calc_hits += 1
        except DivisionByZero:
            pass
    n = len(test_set)
    return (calc_hits / n if n else 0.0, sym_hits / sym_total if sym_total else 0.0)


# ---------------------------------------------------------------------------
# Plans


@dataclass(frozen=True)
class RunSpec:
    name: str
    config: learning.TrainConfig
    data_dir: str


@dataclass(frozen=True)
class ExperimentPlan:
    runs: tuple
    eval_every: int = DEFAULT_EVAL_EVERY
    out_dir: str = "runs"
    checkpoint_every: int | None = None

    def __post_init__(self):
        names = [r.name for r in self.runs]
        if len(names) != len(set(names)):
            raise ValueError("run names must be unique")


@dataclass
class RunResult:
    name: str
    calc_acc: float
    sym_acc: float
    curve_path: str
    config_hash: str
    error: str | None = None


@dataclass
class MetricsReport:
    runs: list = field(default_factory=list)

    def to_dict(self):
        return {
            "runs": [
                {
                    "name": r.name,
                    "calc_acc": r.calc_acc,
                    "sym_acc": r.sym_acc,
                    "curve": r.curve_path,
                    "config_hash": r.config_hash,
                    "error": r.error,
                }
                for r in self.runs
            ]
        }

    @property
    def complete(self) -> bool:
        return all(r.error is None for r in self.runs)


def _config_dict(cfg: learning.TrainConfig) -> dict:
    d = {k: getattr(cfg, k) for k in (
        "method", "batch_size", "iterations", "lr", "baseline_decay",
        "data_fraction", "pretrain_size", "seed", "arch", "hidden",
    )}
    d["mbs"] = {"steps": cfg.mbs.steps, "mix": cfg.mbs.mix, "walk_mean": cfg.mbs.walk_mean}
    return d


def config_from_dict(d: dict) -> learning.TrainConfig:
    d = dict(d)
    mbs = d.pop("mbs", {})
    return learning.TrainConfig(mbs=MbsConfig(**mbs), **d)


def _config_hash(cfg) -> str:
    return hashlib.sha256(
        json.dumps(_config_dict(cfg), sort_keys=True).encode()
    ).hexdigest()[:12]


def _checkpoint_paths(run_dir):
    return os.path.join(run_dir, "model.npz"), os.path.join(run_dir, "state.json")


def save_run_checkpoint(trainer, run_dir):
    model_path, state_path = _checkpoint_paths(run_dir)
    perception.save_checkpoint(trainer.model, model_path + ".tmp.npz")
    os.replace(model_path + ".tmp.npz", model_path)
    with open(state_path + ".tmp", "w") as f:
        json.dump(trainer.state_dict(), f)
    os.replace(state_path + ".tmp", state_path)


def load_run_checkpoint(data, cfg, run_dir):
    """Rebuild a trainer from a saved checkpoint, or None if absent."""
    model_path, state_path = _checkpoint_paths(run_dir)
    if not (os.path.exists(model_path) and os.path.exists(state_path)):
        return None
    trainer = learning.make_trainer(data, cfg)
    trainer.model = perception.load_checkpoint(model_path)
    with open(state_path) as f:
        trainer.load_state_dict(json.load(f))
    return trainer


def run_one(run: RunSpec, out_dir, eval_every=DEFAULT_EVAL_EVERY, checkpoint_every=None):
    train_set, test_set, _ = load_dataset(run.data_dir)
    run_dir = os.path.join(out_dir, run.name)
    os.makedirs(run_dir, exist_ok=True)
    trainer = load_run_checkpoint(train_set, run.config, run_dir)
    if trainer is None and run.config.pretrain_size:
        trainer = learning.make_trainer(train_set, run.config)
        trainer.pretrain()
    curve_path = os.path.join(run_dir, "curve.csv")
    append = trainer is not None and trainer.iteration > 0
    with open(curve_path, "a" if append else "w") as log_stream:
        model, log = learning.train(
            train_set,
            run.config,
            eval_fn=lambda m: evaluate_model(m, test_set),
            eval_every=eval_every,
            log_stream=log_stream,
            trainer=trainer,
            checkpoint_fn=(lambda t: save_run_checkpoint(t, run_dir))
            if checkpoint_every
            else None,
            checkpoint_every=checkpoint_every,
        )
    calc, sym = evaluate_model(model, test_set)
    perception.save_checkpoint(model, os.path.join(run_dir, "model.npz"))
    return RunResult(run.name, calc, sym, curve_path, _config_hash(run.config))


def run_plan(plan: ExperimentPlan) -> MetricsReport:
    """Execute every run; failures are recorded and do not stop others."""
    os.makedirs(plan.out_dir, exist_ok=True)
    report = MetricsReport()
    for run in plan.runs:
        try:
            result = run_one(
                run, plan.out_dir, plan.eval_every, plan.checkpoint_every
            )
        except Exception as e:  # surface per run, keep going
            result = RunResult(
                run.name, float("nan"), float("nan"), "", _config_hash(run.config),
                error=f"{type(e).__name__}: {e}",
            )
        report.runs.append(result)
    with open(os.path.join(plan.out_dir, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    return report


def plan_from_file(path) -> ExperimentPlan:
    with open(path) as f:
        d = json.load(f)
    runs = tuple(
        RunSpec(r["name"], config_from_dict(r["config"]), r["data"]) for r in d["runs"]
    )
    return ExperimentPlan(
        runs,
        eval_every=d.get("eval_every", DEFAULT_EVAL_EVERY),
        out_dir=d.get("out", "runs"),
        checkpoint_every=d.get("checkpoint_every"),
    )


# ---------------------------------------------------------------------------
# Tables


def emit_tables(report: MetricsReport, out_dir, metric="calc_acc"):
    """Method-by-fraction accuracy tables (CSV + aligned text).

    Cells come from runs named ``<method>@<fraction>`` (or any unique
    name for single-cell tables).  Missing or failed runs render as an
    em dash; returns False in that case so callers can flag exit codes.
    """
    cells = {}
    methods, fractions = [], []
    for r in report.runs:
        if "@" in r.name:
            method, fraction = r.name.split("@", 1)
        else:
            method, fraction = r.name, ""
        if method not in methods:
            methods.append(method)
        if fraction not in fractions:
            fractions.append(fraction)
        if r.error is None:
            cells[(method, fraction)] = getattr(r, metric)
    os.makedirs(out_dir, exist_ok=True)
    complete = True
    rows = []
    for m in methods:
        row = [m]
        for fr in fractions:
            if (m, fr) in cells:
                row.append(f"{cells[(m, fr)]:.3f}")
            else:
                row.append("—")
                complete = False
        rows.append(row)
    header = ["method"] + [fr or "accuracy" for fr in fractions]
    with open(os.path.join(out_dir, f"table_{metric}.csv"), "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    with open(os.path.join(out_dir, f"table_{metric}.txt"), "w") as f:
        for row in [header] + rows:
            f.write("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")
    return complete


# ---------------------------------------------------------------------------
# Key-value config files


def parse_kv_file(path) -> dict:
    """Read a ``key = value`` config file ('#' comments allowed)."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


_CONFIG_KEYS = {
    "method": str,
    "batch_size": int,
    "iterations": int,
    "lr": float,
    "baseline_decay": float,
    "data_fraction": float,
    "pretrain_size": int,
    "seed": int,
    "arch": str,
    "hidden": int,
    "mbs_steps": int,
    "mbs_mix": float,
    "mbs_walk_mean": float,
}


def train_config_from_kv(kv: dict) -> learning.TrainConfig:
    plain = {}
    mbs = {}
    for key, raw in kv.items():
        if key not in _CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        value = _CONFIG_KEYS[key](raw)
        if key.startswith("mbs_"):
            mbs[key[4:]] = value
        else:
            plain[key] = value
    return learning.TrainConfig(mbs=MbsConfig(**mbs), **plain)
