"""Command-line entry point: flat key=value configs, presets, run orchestration.

Every output file is written atomically (temp file + rename) so an
interrupted run never leaves a truncated CSV behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from pathlib import Path

from . import gradcheck
from .backend import backend_name
from .data import save_csv
from .harness import (
    METHODS,
    RunConfig,
    TrainingDiverged,
    ablation_csv_text,
    ablation_suite,
    export_features,
    make_datasets,
    train,
)

PRESETS: dict[str, dict] = {
    "two-moons": {
        "dataset": "two_moons",
        "delta": 0.9,
        "optimizer": "sgd",
        "total_steps": 2000,
        "batch": 64,
        "n_per_domain": 2000,
    },
    "blobs-k5": {
        "dataset": "blobs",
        "blobs_k": 5,
        "delta": 0.9,
        "optimizer": "sgd",
        "total_steps": 2000,
        "batch": 64,
        "n_per_domain": 2000,
    },
    "mnist-usps-subset": {
        "dataset": "idx",
        "delta": 0.6,  # digit-adaptation threshold
        "optimizer": "adam",
        "eta0": 1e-3,  # digit-adaptation Adam step size
        "sched_alpha": 0.0,  # constant learning rate under Adam
        "head_lr_mult": 1.0,
        "total_steps": 3000,
        "batch": 64,
        "source_limit": 2000,
        "target_limit": 1800,
        "source_images": "data/digits/train-images-idx3-ubyte.gz",
        "source_labels": "data/digits/train-labels-idx1-ubyte.gz",
        "target_images": "data/digits/usps-images-idx3-ubyte.gz",
        "target_labels": "data/digits/usps-labels-idx1-ubyte.gz",
    },
}

# one-line help per config key, surfaced in --help
CONFIG_DOC: dict[str, str] = {
    "method": f"loss wiring; one of {', '.join(METHODS)}",
    "dataset": "two_moons | blobs | idx",
    "n_per_domain": "samples per synthetic domain",
    "moons_noise": "gaussian jitter of the half-circles",
    "blobs_k": "cluster count for the blobs dataset",
    "blobs_spread": "per-cluster standard deviation",
    "blobs_centers_seed": "seed fixing cluster centers across domains",
    "shift_rotation_deg": "target-domain rotation (degrees)",
    "shift_tx": "target-domain x translation",
    "shift_ty": "target-domain y translation",
    "shift_scale": "target-domain isotropic scale",
    "shift_noise": "fresh gaussian noise added to the target draw",
    "source_images": "IDX image file for the source domain",
    "source_labels": "IDX label file for the source domain",
    "target_images": "IDX image file for the target domain",
    "target_labels": "IDX label file for the target domain",
    "source_limit": "subsample size for the source domain (0 = all)",
    "target_limit": "subsample size for the target domain (0 = all)",
    "delta": "pseudo-label confidence threshold (0.9 default; 0.6 in the digit preset)",
    "total_steps": "training iterations (one D step + one C/G step each)",
    "batch": "paired minibatch size per domain",
    "seed_init": "seed for parameter init and dropout",
    "seed_data": "seed for dataset draws, batching and probes",
    "optimizer": "sgd (momentum 0.9) | adam (digit preset)",
    "eta0": "base learning rate of the inverse-decay schedule",
    "sched_alpha": "decay strength of eta0/(1+alpha*q)^beta",
    "sched_beta": "decay exponent of eta0/(1+alpha*q)^beta",
    "head_lr_mult": "classifier/discriminator lr multiple of the generator lr",
    "momentum": "sgd momentum coefficient",
    "hidden": "hidden width of generator and discriminator stacks",
    "feature_dim": "generator output width",
    "dropout": "discriminator dropout rate",
    "probe_every": "record cadence in steps (final step always recorded)",
    "mmd_probe_n": "per-domain subsample size for the alignment probe",
    "force_lambda": "pin the adversarial trade-off for every step (<0 = schedule)",
    "reg_to_generator": "let the discriminator's source-CE term update the generator",
    "soft_pseudo": "use soft classifier rows instead of hard one-hots in the corrected labels",
}


class CliError(Exception):
    pass


def _config_fields() -> dict[str, type]:
    return {f.name: type(f.default) for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str, want: type):
    raw = raw.strip()
    try:
        if want is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return want(raw)
    except ValueError:
        raise CliError(f"config key {key!r} expects {want.__name__}, got {raw!r}") from None


def read_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def parse_config(path=None, overrides=()) -> RunConfig:
    """Resolve preset defaults, then file values, then key=value overrides."""
    fields = _config_fields()
    raw: dict[str, str] = {}
    if path is not None:
        raw.update(read_kv_file(path))
    for item in overrides:
        if "=" not in item:
            raise CliError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()

    resolved: dict = {}
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise CliError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        resolved.update(PRESETS[preset])

    for key, value in raw.items():
        if key not in fields:
            raise CliError(f"unknown config key {key!r}")
        resolved[key] = _parse_value(key, value, fields[key])

    cfg = RunConfig(**resolved)
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return cfg


def config_as_text(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _final_metrics_json(cfg: RunConfig, record) -> str:
    last = record.final()
    payload = {
        "config": dataclasses.asdict(cfg),
        "backend": backend_name(),
        "final": dataclasses.asdict(last),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# -- verbs ------------------------------------------------------------------------


def _cmd_train(args) -> int:
    cfg = parse_config(args.config, args.set)
    out = Path(args.out)
    try:
        _, record = train(cfg)
    except TrainingDiverged as exc:
        atomic_write_text(out / "record.csv", exc.record.to_csv_text())
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    atomic_write_text(out / "record.csv", record.to_csv_text())
    atomic_write_text(out / "final.json", _final_metrics_json(cfg, record))
    atomic_write_text(out / "config.txt", config_as_text(cfg))
    last = record.final()
    print(
        f"{cfg.method}: source_acc={last.src_acc:.4f} target_acc={last.tgt_acc:.4f} "
        f"mmd={last.mmd:.5f} ({cfg.total_steps} steps)"
    )
    return 0


def _cmd_ablate(args) -> int:
    cfg = parse_config(args.config, args.set)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    for m in methods:
        if m not in METHODS:
            raise CliError(f"unknown method {m!r} in --methods")
    rows = ablation_suite(cfg, methods, seeds)
    atomic_write_text(Path(args.out) / "ablation.csv", ablation_csv_text(rows))
    for r in rows:
        print(f"{r['method']:16s} {r['mean_acc']:.4f} +/- {r['std_acc']:.4f}")
    return 0


def _cmd_export_features(args) -> int:
    cfg = parse_config(args.config, args.set)
    models, _ = train(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source, target = make_datasets(cfg)
    export_features(models["generator"], source, out / "features_source.csv")
    export_features(models["generator"], target, out / "features_target.csv")
    print(f"wrote features for {len(source)} source / {len(target)} target rows")
    return 0


def _cmd_grad_check(args) -> int:
    report = gradcheck.run_suite(trials=args.trials)
    width = max(len(name) for name, _, _ in report)
    ok = True
    for name, err, tol in report:
        passed = err < tol
        ok &= passed
        print(f"{name:<{width}s}  {err:.3e}  (tol {tol:g})  {'PASS' if passed else 'FAIL'}")
    print("grad-check:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_gen_data(args) -> int:
    cfg = parse_config(args.config, args.set)
    source, target = make_datasets(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(source, out / "source.csv")
    save_csv(target, out / "target.csv")
    print(f"wrote {len(source)} source and {len(target)} target rows to {out}")
    return 0


def _config_epilog() -> str:
    defaults = RunConfig()
    lines = ["config keys (key = value lines in --config files, or --set key=value):"]
    for f in dataclasses.fields(RunConfig):
        doc = CONFIG_DOC.get(f.name, "")
        lines.append(f"  {f.name:<20} default {getattr(defaults, f.name)!r}: {doc}")
    lines.append(f"  {'preset':<20} one of {sorted(PRESETS)} applied before other keys")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alda",
        description="Domain adaptation lab: adversarial-learned corrected losses at desk scale.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )

    p = sub.add_parser("train", help="run one training configuration")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ablate", help="train a grid of methods x seeds and tabulate")
    common(p)
    p.add_argument("--methods", required=True, help="comma-separated method names")
    p.add_argument("--seeds", required=True, help="comma-separated integer seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export-features", help="train, then dump generator features to CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_features)

    p = sub.add_parser("grad-check", help="finite-difference the registered ops and objectives")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("gen-data", help="materialize the configured dataset pair as CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
