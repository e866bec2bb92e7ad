"""Command-line entry point: ``python -m dualnet_magpha <subcommand>``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .channels import dataset_load, dataset_save, reciprocity_summary
from .experiments import ConfigError, ExperimentSpec, compare_core, compare_losses, summarize, write_rows, parameter_table
from .model import DualNetModel
from .training import checkpoint_load, checkpoint_save, evaluate, train_stage1, train_stage2


def _spec(args) -> ExperimentSpec:
    if args.spec:
        spec = ExperimentSpec.load(args.spec, desk_scale=args.desk_scale)
    else:
        spec = ExperimentSpec.desk() if args.desk_scale else ExperimentSpec()
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    if args.genie_signs:
        spec = spec.with_genie(True)
    if args.out:
        spec = dataclasses.replace(spec, out_dir=Path(args.out))
    return spec


def cmd_gen_data(args) -> int:
    spec = _spec(args)
    ds = spec.dataset()
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    path = spec.out_dir / "dataset.csid"
    dataset_save(ds, path)
    fw = spec.framework
    corr = reciprocity_summary(ds, fw.q_f, fw.q_l, limit=min(len(ds.samples), 500))
    print(f"wrote {path}: {len(ds.samples)} samples ({ds.split} train / {len(ds.samples) - ds.split} test)")
    print(f"mean DL/UL angle-delay magnitude correlation: {corr:.4f}")
    return 0


def cmd_train(args) -> int:
    spec = _spec(args)
    ds = dataset_load(args.dataset) if args.dataset else spec.dataset()
    out = spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    model = DualNetModel(spec.framework)
    r1 = train_stage1(model, ds, dataclasses.replace(spec.train, stage=1, loss_kind="magnitude"))
    checkpoint_save(model, r1.state, out / "stage1.ckpt")
    (out / "stage1_report.json").write_text(r1.to_json())
    print(f"stage 1: magnitude NMSE {r1.final_test_nmse_db:.2f} dB in {r1.wall_clock_s:.1f} s")
    loss = "smdp" if spec.framework.phase_method == "mdpq" else spec.framework.phase_method
    r2 = train_stage2(model, ds, dataclasses.replace(spec.train, stage=2, loss_kind=loss))
    checkpoint_save(model, r2.state, out / "stage2.ckpt")
    (out / "stage2_report.json").write_text(r2.to_json())
    print(f"stage 2: test NMSE {r2.final_test_nmse_db:.2f} dB in {r2.wall_clock_s:.1f} s")
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint or not args.dataset:
        raise SystemExit("eval needs --checkpoint and --dataset")
    model, _ = checkpoint_load(args.checkpoint)
    ds = dataset_load(args.dataset)
    genie = True if args.genie_signs else None
    nmse = evaluate(model, ds, "test", r_s=args.r_s, genie=genie)
    report = {"nmse_db": nmse, "samples": len(ds.test()), "phase_method": model.config.phase_method}
    print(json.dumps(report, indent=2))
    return 0


def _compare(args, fn, stem) -> int:
    spec = _spec(args)
    ds = dataset_load(args.dataset) if args.dataset else spec.dataset()
    rows = fn(spec, ds, progress=lambda r: print(f"  {r.method} cr={r.cr_pha:.4f}: {r.nmse_db:.2f} dB", flush=True))
    paths = write_rows(rows, spec.out_dir, stem, as_json=args.json)
    print(summarize(rows))
    if stem == "compare_core":
        print("phase-branch parameters:", parameter_table(spec.framework, tuple(spec.cores)))
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualnet-magpha", description="CSI feedback with split magnitude/phase branches")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--spec", help="experiment spec file (key = value with [sections])")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="overrides every seed in the spec")
        sp.add_argument("--desk-scale", action="store_true", help="start from the small desk preset")
        sp.add_argument("--genie-signs", action="store_true", help="place signs with the true magnitudes")
        sp.add_argument("--dataset", help="CSID dataset file instead of generating one")
        return sp

    common(sub.add_parser("gen-data", help="generate a CSID dataset")).set_defaults(fn=cmd_gen_data)
    common(sub.add_parser("train", help="two-stage training with checkpoints")).set_defaults(fn=cmd_train)
    ev = common(sub.add_parser("eval", help="test-split NMSE of a checkpoint"))
    ev.add_argument("--checkpoint")
    ev.add_argument("--r-s", type=float, dest="r_s")
    ev.set_defaults(fn=cmd_eval)
    for name, fn, stem in (("compare-losses", compare_losses, "compare_losses"),
                           ("compare-core", compare_core, "compare_core")):
        sp = common(sub.add_parser(name, help=f"{stem.replace('_', ' ')} sweep to CSV"))
        sp.add_argument("--json", action="store_true", help="also write a JSON mirror")
        sp.set_defaults(fn=lambda a, fn=fn, stem=stem: _compare(a, fn, stem))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
