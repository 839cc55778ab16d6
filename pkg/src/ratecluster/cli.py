"""Command-line entry point: gen-data, train, eval, export, check.

Exit codes: 0 success, 1 usage or config error, 2 numerical abort during
training, 3 self-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np
import yaml

from . import __version__
from . import autodiff as ad
from . import evaluation
from .config import ConfigError, build_data, load_config, parse_config
from .data import Dataset, double_spiral, load_csv, random_mlp_manifolds, save_csv
from .model import forward, load_checkpoint, save_checkpoint
from .selfcheck import run_all
from .training import TrainingAbort, multistage_train

PRESETS = {
    "double-spiral": "double_spiral.yaml",
    "synthetic-identifiable": "synthetic_identifiable.yaml",
    "synthetic-nonidentifiable": "synthetic_nonidentifiable.yaml",
}

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    numerical aborts, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _preset_text(name: str) -> str:
    return resources.files("ratecluster.configs").joinpath(PRESETS[name]).read_text("utf-8")


def cmd_gen_data(args) -> int:
    if args.generator == "double-spiral":
        dataset = double_spiral(
            n_per_arm=args.n, radius=args.radius, noise_sigma=args.noise_sigma, seed=args.seed
        )
    else:
        dataset = random_mlp_manifolds(
            latent_dims=tuple(args.latent_dims),
            with_bias=not args.no_bias,
            n_per_manifold=args.n,
            ambient_dim=args.ambient_dim,
            seed=args.seed,
        )
    save_csv(dataset, args.out)
    print(f"wrote {dataset.n_points} points to {args.out}")
    return EXIT_OK


def _resolve_config(args):
    if args.preset:
        raw = yaml.safe_load(_preset_text(args.preset))
        cfg = parse_config(raw)
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
        cfg = parse_config(cfg.raw)
    return cfg


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    data = build_data(cfg)
    params, records = multistage_train(cfg.model, data, cfg.stages, seed=cfg.seed)

    checkpoint_path = os.path.join(args.out, "checkpoint.npz")
    save_checkpoint(checkpoint_path, cfg.model, params)
    history_paths = []
    for i, record in enumerate(records):
        path = os.path.join(args.out, f"history_stage{i}.csv")
        record.write_csv(path)
        history_paths.append(path)

    manifest = {
        "tool_version": __version__,
        "seed": cfg.seed,
        "config": cfg.raw,
        "artifacts": {
            "checkpoint": os.path.basename(checkpoint_path),
            "history": [os.path.basename(p) for p in history_paths],
        },
        "wall_clock_seconds": sum(r.wall_clock for r in records),
    }
    manifest_path = os.path.join(args.out, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name in [checkpoint_path, manifest_path, *history_paths]:
        if not os.path.exists(name):
            raise OSError(f"expected artifact missing: {name}")
    print(f"run complete: {args.out} ({len(records)} stage(s))")
    return EXIT_OK


def _eval_features(spec, params, dataset: Dataset):
    out = forward(spec, params, dataset.points, train_mode=False)
    pred = np.argmax(out.assignment.value, axis=1)
    return out.features.value, pred


def cmd_eval(args) -> int:
    spec, params = load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data)
    if dataset.ambient_dim != spec.input_dim:
        raise ValueError(
            f"dimension mismatch: checkpoint expects input_dim {spec.input_dim}, "
            f"dataset has {dataset.ambient_dim} columns"
        )
    os.makedirs(args.out, exist_ok=True)
    z, pred = _eval_features(spec, params, dataset)
    report = evaluation.evaluate_clustering(z, pred, dataset.labels, seed=args.seed)

    with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text())

    cols = [f"x{i}" for i in range(dataset.ambient_dim)]
    cols += [f"z{i}" for i in range(z.shape[1])]
    cols.append("pred")
    if dataset.labels is not None:
        cols.append("true")
    with open(os.path.join(args.out, "embeddings.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(dataset.n_points):
            row = [f"{v:.17g}" for v in dataset.points[i]]
            row += [f"{v:.17g}" for v in z[i]]
            row.append(str(int(pred[i])))
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            fh.write(",".join(row) + "\n")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_export(args) -> int:
    if args.what == "config":
        text = _preset_text(args.preset)
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        print(f"wrote preset {args.preset} to {args.out}")
        return EXIT_OK
    spec, params = load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data)
    if dataset.ambient_dim != spec.input_dim:
        raise ValueError(
            f"dimension mismatch: checkpoint expects input_dim {spec.input_dim}, "
            f"dataset has {dataset.ambient_dim} columns"
        )
    z, pred = _eval_features(spec, params, dataset)
    spectra = evaluation.singular_spectrum(z, pred)
    evaluation.spectra_to_csv(spectra, args.out)
    print(f"wrote per-cluster spectra to {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    return EXIT_OK if run_all(verbose=True) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratecluster", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset as CSV + metadata sidecar")
    gen_sub = gen.add_subparsers(dest="generator", required=True, parser_class=_Parser)
    spiral = gen_sub.add_parser("double-spiral", help="two interleaved planar spirals")
    spiral.add_argument("--n", type=int, required=True, help="points per arm")
    spiral.add_argument("--radius", type=float, default=15.0)
    spiral.add_argument("--noise-sigma", type=float, default=0.05)
    mlp = gen_sub.add_parser("random-mlp", help="manifolds traced by random leaky-ReLU networks")
    mlp.add_argument("--n", type=int, required=True, help="points per manifold")
    mlp.add_argument("--ambient-dim", type=int, default=12)
    mlp.add_argument("--latent-dims", type=int, nargs="+", default=[3, 6])
    mlp.add_argument("--no-bias", action="store_true", help="omit biases (manifolds intersect at 0)")
    for p in (spiral, mlp):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output CSV path")
        p.set_defaults(func=cmd_gen_data)
    spiral.set_defaults(generator="double-spiral")
    mlp.set_defaults(generator="random-mlp")

    train = sub.add_parser("train", help="run a (multi-stage) training config")
    source = train.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="YAML config path")
    source.add_argument("--preset", choices=sorted(PRESETS), help="bundled config")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--out", required=True, help="output directory")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--seed", type=int, default=0, help="seed for z-sim pair sampling")
    ev.set_defaults(func=cmd_eval)

    export = sub.add_parser("export", help="export a preset config or per-cluster spectra")
    export_sub = export.add_subparsers(dest="what", required=True, parser_class=_Parser)
    exp_cfg = export_sub.add_parser("config", help="write a bundled preset to a file")
    exp_cfg.add_argument("--preset", choices=sorted(PRESETS), required=True)
    exp_cfg.add_argument("--out", required=True)
    exp_cfg.set_defaults(func=cmd_export, what="config")
    exp_spec = export_sub.add_parser("spectra", help="singular values per found cluster as CSV")
    exp_spec.add_argument("--checkpoint", required=True)
    exp_spec.add_argument("--data", required=True)
    exp_spec.add_argument("--out", required=True)
    exp_spec.set_defaults(func=cmd_export, what="spectra")

    check = sub.add_parser("check", help="run built-in gradient/identity/metric checks")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except TrainingAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ad.NonFiniteError, ad.PositiveDefiniteError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
