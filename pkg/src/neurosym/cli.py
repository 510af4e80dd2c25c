"""Command-line interface: gen-data, train, eval, sweep."""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, perception
from .dataset import DatasetSpec, generate_dataset, load_dataset, save_dataset


def _cmd_gen_data(args):
    if args.spec:
        kv = harness.parse_kv_file(args.spec)
        spec_kwargs = {}
        for key, cast in (
            ("feature_dim", int), ("noise_sigma", float),
            ("instances_per_class", int), ("seed", int), ("scale", float),
        ):
            if key in kv:
                spec_kwargs[key] = cast(kv.pop(key))
        if "length_mix" in kv:
            # e.g. length_mix = 1:1000:200,3:1000:200
            spec_kwargs["length_mix"] = tuple(
                tuple(int(x) for x in part.split(":"))
                for part in kv.pop("length_mix").split(",")
            )
        if kv:
            raise ValueError(f"unknown dataset spec keys: {sorted(kv)}")
        spec = DatasetSpec(**spec_kwargs)
    else:
        spec = DatasetSpec(seed=args.seed, scale=args.scale)
    train, test, = generate_dataset(spec)
    save_dataset(args.out, train, test, spec)
    print(f"wrote {len(train)} train / {len(test)} test examples to {args.out}")
    return 0


def _cmd_train(args):
    cfg = harness.train_config_from_kv(harness.parse_kv_file(args.config))
    run = harness.RunSpec(args.name, cfg, args.data)
    result = harness.run_one(
        run, args.out, eval_every=args.eval_every, checkpoint_every=args.checkpoint_every
    )
    print(f"{result.name}: calc_acc={result.calc_acc:.4f} sym_acc={result.sym_acc:.4f}")
    return 0


def _cmd_eval(args):
    model = perception.load_checkpoint(args.model)
    _, test, _ = load_dataset(args.data)
    calc, sym = harness.evaluate_model(model, test)
    print(json.dumps({"calc_acc": calc, "sym_acc": sym}))
    return 0


def _cmd_sweep(args):
    plan = harness.plan_from_file(args.plan)
    report = harness.run_plan(plan)
    tables_dir = os.path.join(plan.out_dir, "tables")
    complete = harness.emit_tables(report, tables_dir, "calc_acc")
    complete = harness.emit_tables(report, tables_dir, "sym_acc") and complete
    for r in report.runs:
        status = "ok" if r.error is None else f"FAILED ({r.error})"
        print(f"{r.name}: calc_acc={r.calc_acc:.4f} sym_acc={r.sym_acc:.4f} [{status}]")
    return 0 if (report.complete and complete) else 1


def build_parser():
    p = argparse.ArgumentParser(
        prog="neurosym",
        description="Weakly-supervised formula recognition experiments",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--spec", help="dataset spec file (key = value)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=float, default=1.0)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config", required=True, help="training config file (key = value)")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--name", default="run")
    t.add_argument("--eval-every", type=int, default=harness.DEFAULT_EVAL_EVERY)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("sweep", help="run an experiment plan")
    s.add_argument("--plan", required=True, help="plan file (JSON)")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
