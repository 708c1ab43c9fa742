"""Command-line entry point: train, eval, compare, replay.

Every command resolves its configuration, writes a manifest.json into the
output directory before any computation, and exits 0 on success, 1 on a
runtime failure, 2 on invalid input.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

VEHICLE_CHOICES = {"small": "small_quad", "large": "large_quad"}

# the scenario vehicle the residual policy augments
MEASURED_VEHICLE = "LQ"
MEASURED_CLASS = "large_quad"


def _apply_thread_cap():
    # numpy's BLAS reads these at library load, so they must be in the
    # environment before any compute module is imported; hence the lazy
    # proxfly imports throughout this module
    cap = os.environ.get("PROXFLY_THREADS")
    if not cap:
        return
    for name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(name, cap)


def _load_settings(explicit):
    from .config import default_settings, find_config, load_config

    path = find_config(explicit)
    if path is None:
        return default_settings()
    return load_config(path)


def write_manifest(out_dir, command, snapshot, seed, checkpoints, argv):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": snapshot,
        "checkpoints": [str(p) for p in checkpoints],
        "out_dir": str(out_dir),
        "argv": list(argv),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_policy_checkpoint(path):
    """Checkpoint tensors for the measured vehicle; raises ConfigError."""
    from .config import ConfigError
    from .policy import load_checkpoint

    try:
        params, header = load_checkpoint(path)
    except (OSError, ValueError) as err:
        raise ConfigError(f"checkpoint {path}: {err}") from None
    trained_for = header.get("vehicle")
    if trained_for is not None and trained_for != MEASURED_CLASS:
        raise ConfigError(
            f"checkpoint {path} was trained for {trained_for!r}, "
            f"but the augmented scenario vehicle is {MEASURED_CLASS!r}"
        )
    return params


def cmd_train(args):
    from dataclasses import replace

    from . import ppo
    from .config import load_preset, settings_snapshot

    settings = _load_settings(args.config)
    vehicle_class = VEHICLE_CHOICES[args.vehicle]
    training = replace(settings.training, vehicle=vehicle_class)
    if args.seed is not None:
        training = replace(training, seed=args.seed)
    settings.training = training

    out_dir = Path(args.out or f"runs/train_{vehicle_class}_seed{training.seed}")
    planned = [out_dir / "policy_final.npz", out_dir / "learning_curve.csv"]
    snapshot = settings_snapshot(settings, load_preset(vehicle_class))
    write_manifest(out_dir, "train", snapshot, training.seed, planned, sys.argv[1:])

    def progress(row):
        if row["epoch"] % 10 == 0 or row["epoch"] == training.epochs - 1:
            print(
                f"epoch {row['epoch']:4d}  mean return {row['mean_return']:10.2f}  "
                f"entropy {row['entropy']:7.3f}",
                flush=True,
            )
        if not all(map(_finite, row.values())):
            raise FloatingPointError(f"training diverged at epoch {row['epoch']}")

    try:
        ppo.train(training, out_dir=out_dir, progress=progress)
    except FloatingPointError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out_dir / 'policy_final.npz'}")
    return EXIT_OK


def _finite(value):
    import numpy as np

    return not isinstance(value, float) or np.isfinite(value)


def cmd_eval(args):
    from . import metrics
    from .config import settings_snapshot
    from .scenarios import run_scenario

    settings = _load_settings(args.config)
    policy_params = None
    if args.controller == "proxfly":
        policy_params = _load_policy_checkpoint(args.checkpoint)
    controllers = (
        {MEASURED_VEHICLE: policy_params} if policy_params is not None else None
    )

    out_dir = Path(
        args.out or f"runs/eval_{args.scenario}_{args.controller}_seed{args.seed}"
    )
    snapshot = settings_snapshot(settings, settings.vehicle)
    checkpoints = [args.checkpoint] if args.checkpoint else []
    write_manifest(out_dir, "eval", snapshot, args.seed, checkpoints, sys.argv[1:])

    result = run_scenario(
        args.scenario,
        controllers=controllers,
        seed=args.seed,
        height=args.height,
        downwash=settings.downwash,
    )

    summary = {"scenario": args.scenario, "failed": result.failed}
    if result.failure:
        summary["failure"] = result.failure
    for name, log in result.logs.items():
        log.save_csv(out_dir / f"{name}.csv")
        summary[name] = metrics.summarize(log)
    with open(out_dir / "events.csv", "w") as fh:
        fh.write("t,event\n")
        for t, name in result.events:
            fh.write(f"{t:.17g},{name}\n")
    (out_dir / "metrics.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )

    for name in sorted(result.logs):
        m = summary[name]
        print(f"{name}: E_pos {m['E_pos']:.4f} m  E_att {m['E_att']:.4f} rad")
    for t, name in result.events:
        print(f"event t={t:.2f}: {name}")
    if result.failed:
        print(f"scenario failed: {result.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out_dir}")
    return EXIT_OK


def _parse_variants(tokens):
    from .config import ConfigError

    variants = {}
    for token in tokens:
        name, sep, path = token.partition("=")
        if not name:
            raise ConfigError(f"bad variant {token!r}, expected name or name=checkpoint")
        if name in variants:
            raise ConfigError(f"duplicate variant {name!r}")
        variants[name] = _load_policy_checkpoint(path) if sep else None
    return variants


def cmd_compare(args):
    from . import metrics
    from .config import ConfigError, settings_snapshot
    from .scenarios import SCENARIO_NAMES

    settings = _load_settings(args.config)
    for name in args.scenarios:
        if name not in SCENARIO_NAMES:
            raise ConfigError(
                f"unknown scenario {name!r}, expected one of {SCENARIO_NAMES}"
            )
    variants = _parse_variants(args.variants)

    out_dir = Path(args.out or "runs/compare")
    snapshot = settings_snapshot(settings, settings.vehicle)
    checkpoints = [t.partition("=")[2] for t in args.variants if "=" in t]
    write_manifest(out_dir, "compare", snapshot, args.seeds[0], checkpoints, sys.argv[1:])

    report = metrics.compare_controllers(
        variants, scenarios=tuple(args.scenarios), seeds=tuple(args.seeds)
    )
    (out_dir / "report.csv").write_text(metrics.report_csv(report))
    text = metrics.report_text(report)
    (out_dir / "report.txt").write_text(text)
    print(text, end="")

    total_runs = len(args.scenarios) * len(args.seeds) * len(variants)
    total_failures = sum(
        cell["failures"] for cell in report["cells"].values()
    )
    if total_failures:
        print(f"{total_failures} of {total_runs} runs failed", file=sys.stderr)
    if total_failures >= total_runs:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_replay(args):
    import numpy as np

    from . import metrics
    from .scenarios import FlightLog

    try:
        log = FlightLog.load_csv(args.log)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    cas = log.block("cas_c", "cas_wx", "cas_wy", "cas_wz")
    res = log.block("res_c", "res_wx", "res_wy", "res_wz")
    cmd = log.block("cmd_c", "cmd_wx", "cmd_wy", "cmd_wz")
    expected = cas + res
    expected[:, 0] = np.maximum(expected[:, 0], 0.0)

    names = ("cmd_c", "cmd_wx", "cmd_wy", "cmd_wz")
    bad = np.argwhere(np.abs(cmd - expected) > 1e-9)
    violations = [
        (int(row), names[int(col)], float(expected[row, col]), float(cmd[row, col]))
        for row, col in bad
    ]

    summary = metrics.summarize(log)
    out_dir = Path(args.out or f"runs/replay_{Path(args.log).stem}")
    write_manifest(out_dir, "replay", {"log": str(args.log)}, 0, [], sys.argv[1:])
    with open(out_dir / "violations.csv", "w") as fh:
        fh.write("row,column,expected,got\n")
        for row, col, want, got in violations:
            fh.write(f"{row},{col},{want:.17g},{got:.17g}\n")
    (out_dir / "metrics.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )

    print(f"E_pos {summary['E_pos']:.4f} m  E_att {summary['E_att']:.4f} rad")
    print(f"consistency violations: {len(violations)}")
    for row, col, want, got in violations[:10]:
        print(f"  row {row} {col}: expected {want:.6g}, got {got:.6g}")
    if violations:
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser():
    from .scenarios import FLYOVER_HEIGHTS, SCENARIO_NAMES

    parser = argparse.ArgumentParser(
        prog="proxfly",
        description="Residual-augmented close-proximity quadcopter flight",
    )
    parser.add_argument(
        "--version", action="version", version=f"proxfly {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a residual policy")
    train.add_argument("--config", help="config file (default: ./proxfly.conf if present)")
    train.add_argument("--vehicle", choices=sorted(VEHICLE_CHOICES), default="large")
    train.add_argument("--seed", type=int)
    train.add_argument("--out", help="output directory")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="fly one scenario and write flight logs")
    ev.add_argument("--scenario", required=True, choices=SCENARIO_NAMES)
    ev.add_argument("--controller", required=True, choices=("basic", "proxfly"))
    ev.add_argument("--checkpoint", help="policy file, required with --controller proxfly")
    ev.add_argument("--height", type=float, default=0.25, choices=FLYOVER_HEIGHTS,
                    help="flyover height offset")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--config")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    cmp_ = sub.add_parser("compare", help="controller comparison matrix")
    cmp_.add_argument("--scenarios", nargs="+", default=["hover_prox", "circle_same", "circle_reversed"])
    cmp_.add_argument("--variants", nargs="+", required=True,
                      metavar="NAME[=CHECKPOINT]",
                      help="bare name flies basic-only; name=path flies the checkpoint")
    cmp_.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    cmp_.add_argument("--config")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)

    rp = sub.add_parser("replay", help="recompute metrics and check a flight log")
    rp.add_argument("--log", required=True)
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval":
        if args.controller == "proxfly" and not args.checkpoint:
            parser.error("--controller proxfly requires --checkpoint")
        if args.controller == "basic" and args.checkpoint:
            parser.error("--checkpoint only applies to --controller proxfly")

    from .config import ConfigError

    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
