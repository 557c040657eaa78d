"""Batch command-line interface.

Subcommands: ``sample`` (draw from a model file), ``estimate`` (full
random-projection pipeline on a CSV), ``agree`` (projected-KS agreement of two
CSVs), ``simulate`` (replicated scenario studies) and ``certify-directions``.
Exit codes: 0 success, 2 configuration error, 3 estimation failure, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agreement import agree_two_samples, prewhiten
from .dataio import read_sample_csv, write_sample_csv
from .directions import DirectionSet, certify_sm_uniqueness, required_directions, sample_directions
from .errors import ConfigError, EstimationError, InvalidArgumentError, NumericalError, ParseError
from .model import GAUSSIAN, LabeledSample, MixtureModel, sample
from .pipeline import EstimateConfig, run_estimate
from .simulate import SimulationConfig, run_simulation, write_metrics_csv, write_summary_json

EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_DATA = 4


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_mode(text: str) -> tuple[str, int]:
    if text in ("pooled", "split"):
        return text, 0
    if text.startswith("bootstrap:"):
        try:
            return "bootstrap", int(text.split(":", 1)[1])
        except ValueError:
            pass
    raise ConfigError(f"bad --mode {text!r}; expected pooled, split or bootstrap:<B>")


def cmd_sample(args) -> int:
    model = MixtureModel.load_json(args.model)
    drawn = sample(model, args.n, args.seed)
    if not args.labels:
        drawn = LabeledSample(data=drawn.data, labels=None)
    write_sample_csv(args.out, drawn, include_labels=args.labels)
    print(f"wrote {drawn.n} observations (d={drawn.dim}) to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    cfg_doc = _load_config_file(args.config)
    data = read_sample_csv(args.data, has_labels=args.labels).data
    known = None
    if args.known_weights:
        with open(args.known_weights) as fh:
            known = np.asarray(json.load(fh), dtype=float)
    config = EstimateConfig(
        m=args.m if args.m is not None else cfg_doc.get("m", 2),
        family=args.family or cfg_doc.get("family", GAUSSIAN),
        nu=args.nu if args.nu is not None else cfg_doc.get("nu"),
        k=args.k if args.k is not None else cfg_doc.get("k"),
        seed=args.seed,
        tau=cfg_doc.get("tau"),
        grid_points=cfg_doc.get("grid_points", 20),
        weight_mode=cfg_doc.get("weight_mode", "identity"),
        restarts=cfg_doc.get("restarts", 3),
        robust=args.robust or cfg_doc.get("robust", "l2"),
        known_weights=known,
        constrained=args.constrained or bool(cfg_doc.get("constrained", False)),
    )
    directions = DirectionSet.load_csv(args.directions) if args.directions else None
    result = run_estimate(data, config, directions=directions)
    out = _out_dir(args)

    result.directions.save_csv(out / "directions.csv")
    fitted = result.model(family=config.family, nu=config.nu)
    fitted.save_json(out / "model.json")
    summary = {
        "weights": result.weights.tolist(),
        "means": result.means.tolist(),
        "covariances": [c.ravel().tolist() for c in result.covariances],
        "method": result.reconstruction.method,
        "n_usable_directions": result.n_usable,
        "k": result.directions.k,
        "warnings": result.warnings,
        "diagnostics": _jsonable(result.diagnostics),
        "alignment": result.plan.to_dict() if result.plan is not None else None,
    }
    if result.constrained is not None:
        summary["constrained"] = {
            "mean_scalars": result.constrained.mean_scalars.tolist(),
            "x": result.constrained.x,
        }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"estimate written to {out}")
    return 0


def cmd_agree(args) -> int:
    x = read_sample_csv(args.data_a).data
    y = read_sample_csv(args.data_b).data
    if args.whiten:
        x = prewhiten(x)
        y = prewhiten(y)
    mode, n_boot = _parse_mode(args.mode)
    d = x.shape[1]
    if args.directions:
        dirs = DirectionSet.load_csv(args.directions)
    else:
        k = args.k if args.k is not None else required_directions(args.m, d)
        dirs = sample_directions(d, k, args.seed)
    result = agree_two_samples(
        x, y, dirs, mode=mode, n_boot=n_boot or 200, seed=args.seed,
        expected_components=args.m,
    )
    out = _out_dir(args)
    dirs.save_csv(out / "directions.csv")
    with open(out / "ks_profile.csv", "w") as fh:
        fh.write("direction,ks\n")
        for i, v in enumerate(result.profile.values):
            fh.write(f"{i},{v!r}\n")
    summary = result.summary_dict()
    summary["seed"] = args.seed
    summary["whitened"] = bool(args.whiten)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"D_k = {result.d_k:.6f}, MA_k = {result.ma_k:.6f} ({result.mode}, k={dirs.k})")
    return 0


def cmd_simulate(args) -> int:
    cfg_doc = _load_config_file(args.config)
    cfg_doc.setdefault("scenario", args.scenario)
    if args.scenario is not None:
        cfg_doc["scenario"] = args.scenario
    if cfg_doc.get("scenario") is None:
        raise ConfigError("simulate needs --scenario or a config file with one")
    if args.replicates is not None:
        cfg_doc["replicates"] = args.replicates
    if args.k is not None:
        cfg_doc["k"] = args.k
    if args.n is not None:
        cfg_doc["n"] = args.n
    if args.robust is not None:
        cfg_doc["robust"] = args.robust
    cfg_doc["seed"] = args.seed
    allowed = {
        "scenario", "seed", "replicates", "n", "k", "grid", "robust",
        "baseline", "grid_points", "restarts", "nu",
    }
    unknown = set(cfg_doc) - allowed
    if unknown:
        raise ConfigError(f"unknown simulation config keys: {sorted(unknown)}")
    config = SimulationConfig(**cfg_doc)
    rows, summary = run_simulation(config)
    out = _out_dir(args)
    write_metrics_csv(out / "metrics.csv", rows)
    write_summary_json(out / "summary.json", summary)
    if args.plots:
        _write_plots(out, rows)
    print(f"{len(rows)} metric rows written to {out}")
    return 0


def cmd_certify(args) -> int:
    if args.directions:
        dirs = DirectionSet.load_csv(args.directions)
    else:
        if args.d is None or args.k is None:
            raise ConfigError("certify-directions needs --directions or both --d and --k")
        dirs = sample_directions(args.d, args.k, args.seed)
    cert = certify_sm_uniqueness(dirs, strong=args.strong, seed=args.seed)
    doc = cert.to_dict()
    doc["k"] = dirs.k
    doc["d"] = dirs.dim
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0 if cert.is_sm_unique else EXIT_ESTIMATION


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _write_plots(out: Path, rows: list[dict]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    by_metric: dict = {}
    for row in rows:
        by_metric.setdefault((row["metric"], row["method"]), {}).setdefault(
            row["param"], []
        ).append(row["value"])
    metrics = sorted({metric for metric, _ in by_metric})
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(6, 4))
        offset = 0
        for (met, method), groups in sorted(by_metric.items()):
            if met != metric:
                continue
            params = sorted(groups)
            data = [groups[p] for p in params]
            positions = np.arange(len(params)) * 2.0 + offset
            ax.boxplot(data, positions=positions, widths=0.6, label=method)
            offset += 0.7
        ax.set_title(metric)
        ax.set_xticks(np.arange(len(params)) * 2.0 + offset / 2 - 0.35)
        ax.set_xticklabels([f"{p:g}" for p in params])
        ax.legend()
        fig.tight_layout()
        fig.savefig(plots / f"{metric}.svg")
        plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpmix", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rpmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw observations from a model JSON file")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", action="store_true", help="append latent labels as a final column")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", help="random-projection mixture estimation from a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", action="store_true", help="data file has a final label column")
    p.add_argument("--m", type=int)
    p.add_argument("--family", choices=["gaussian", "student_t"])
    p.add_argument("--nu", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config with grid/optimizer settings")
    p.add_argument("--robust", help="l2, l1 or mom:<L>")
    p.add_argument("--known-weights", help="JSON file with fixed mixture weights")
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--directions", help="reuse a directions.csv from a previous run")
    p.add_argument("--out-dir", default="rpmix-out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("agree", help="projected-KS agreement between two samples")
    p.add_argument("--data-a", required=True)
    p.add_argument("--data-b", required=True)
    p.add_argument("--m", type=int, default=2, help="component count for the k warning bound")
    p.add_argument("--k", type=int)
    p.add_argument("--mode", default="pooled", help="pooled, split or bootstrap:<B>")
    p.add_argument("--whiten", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--directions")
    p.add_argument("--out-dir", default="rpmix-out")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("simulate", help="replicated scenario studies")
    p.add_argument("--scenario", choices=[
        "example1", "example2", "example3", "agreement1", "agreement2", "agreement3",
    ])
    p.add_argument("--config")
    p.add_argument("--replicates", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--robust")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plots", action="store_true", help="emit boxplot SVGs (needs matplotlib)")
    p.add_argument("--out-dir", default="rpmix-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certify-directions", help="sm-uniqueness certificate for a direction set")
    p.add_argument("--directions")
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strong", action="store_true")
    p.set_defaults(func=cmd_certify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, NumericalError) as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ParseError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
