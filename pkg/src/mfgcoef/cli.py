"""Command-line experiment runner.

Five subcommands cover the benchmark workflow: ``generate`` produces a
dataset directory, ``invert`` reconstructs a coefficient from one,
``sweep-lambda`` repeats the inversion across weight strengths,
``verify-carleman`` certifies the weighted integral inequality, and
``render`` turns stored fields into heatmaps.  Every command writes a
JSON manifest with the full configuration echo, library versions, input
hashes and output hashes, so a run can be reproduced from the manifest
alone.

Exit codes: 0 on success, 2 for configuration and precondition errors,
3 for numerical failures (stalled descent, violated certification,
denominator bound).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .carleman import ratio_log_slope, run_certification, validate_exponent
from .config import ExperimentConfig, load_config
from .fieldio import read_field, write_csv, write_field, write_pgm
from .forward import ObservationData
from .grid import SPACE_TIME, SPATIAL, Field
from .kernels import denominator_field
from .phantoms import LETTERS, make_k
from .pipeline import observation_bundle, run_generation, run_inversion

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NUMERICAL = 3

DATASET_FIELDS = ("v0", "p0", "g01", "g02", "g11", "g12", "cost", "cost_rate")

# config fields an inversion must inherit from the dataset it reads,
# so the two halves of a run cannot silently disagree
DATASET_BOUND_FIELDS = (
    "a", "b", "half_width", "horizon", "fine", "coarse",
    "kernel_variant", "sigma", "letter", "contrast", "density_offset",
)


class NumericalFailure(RuntimeError):
    """A run that started fine but failed on the numbers."""


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _versions() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mfgcoef": __version__,
    }


def _prepare_out(path: str, force: bool) -> None:
    os.makedirs(path, exist_ok=True)
    if os.listdir(path) and not force:
        raise ValueError(
            f"output directory {path!r} is not empty; pass --force to overwrite"
        )


def _write_manifest(out_dir: str, payload: dict) -> str:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _hash_map(paths: dict) -> dict:
    return {name: {"path": p, "sha256": _sha256(p)} for name, p in paths.items()}


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for attr, field in (
        ("seed", "seed"),
        ("delta", "delta"),
        ("letter", "letter"),
        ("contrast", "contrast"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "out", None):
        overrides["output_root"] = args.out
    if overrides:
        cfg = cfg.replace(**overrides)
    cfg.validate()
    return cfg


def _out_dir(args, cfg: ExperimentConfig, default_name: str) -> str:
    return args.out if args.out else os.path.join(cfg.output_root, default_name)


def _dataset_paths(dataset_dir: str) -> dict:
    return {name: os.path.join(dataset_dir, name + ".field") for name in DATASET_FIELDS}


def _read_dataset(dataset_dir: str):
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ValueError(f"dataset {dataset_dir!r} has no manifest.json")
    with open(manifest_path, "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    paths = _dataset_paths(dataset_dir)
    fields = {}
    for name, path in paths.items():
        if not os.path.exists(path):
            raise ValueError(f"dataset {dataset_dir!r} is missing {name}.field")
        fields[name] = read_field(path)
    grid = fields["v0"].grid
    obs = ObservationData(
        grid=grid,
        v0=fields["v0"],
        p0=fields["p0"],
        g01=fields["g01"],
        g02=fields["g02"],
        g11=fields["g11"],
        g12=fields["g12"],
    )
    return obs, fields["cost"].values, fields["cost_rate"].values, manifest, paths


def _adopt_dataset_config(cfg: ExperimentConfig, manifest: dict) -> ExperimentConfig:
    stored = manifest.get("config", {})
    changes = {}
    for name in DATASET_BOUND_FIELDS:
        if name in stored:
            value = stored[name]
            if name in ("fine", "coarse"):
                value = tuple(value)
            changes[name] = value
    return cfg.replace(**changes) if changes else cfg


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, cfg, "dataset")
    _prepare_out(out, args.force)
    data = run_generation(cfg)
    obs = data.observations
    paths = _dataset_paths(out)
    for name, field in obs.fields().items():
        write_field(paths[name], field)
    coarse = obs.grid
    write_field(paths["cost"], Field(coarse, SPACE_TIME, data.cost_coarse))
    write_field(paths["cost_rate"], Field(coarse, SPACE_TIME, data.cost_rate_coarse))
    denom = denominator_field(cfg.kernel(), obs.p0)
    _write_manifest(out, {
        "command": "generate",
        "config": cfg.to_dict(),
        "versions": _versions(),
        "measurements": {
            "min_density": data.min_density,
            "denominator_min_abs": float(np.abs(denom.values).min()),
        },
        "outputs": _hash_map(paths),
    })
    print(f"dataset written to {out}")
    return EXIT_OK


def _invert_core(cfg: ExperimentConfig, obs, cost, cost_rate, out: str) -> dict:
    """Shared by invert and the sweep: run, persist, return the summary row."""
    used, _ = observation_bundle(obs, cfg.delta, cfg.seed)
    try:
        denominator_field(cfg.kernel(), used.p0)
    except ValueError as exc:
        raise NumericalFailure(str(exc))
    outcome = run_inversion(cfg, obs, cost, cost_rate)
    result = outcome.result

    paths = {
        "k_comp": os.path.join(out, "k_comp.field"),
        "k_comp_csv": os.path.join(out, "k_comp.csv"),
        "k_comp_pgm": os.path.join(out, "k_comp.pgm"),
        "k_true": os.path.join(out, "k_true.field"),
        "u": os.path.join(out, "u.field"),
        "m": os.path.join(out, "m.field"),
        "metrics": os.path.join(out, "metrics.csv"),
        "objective_history": os.path.join(out, "objective_history.csv"),
        "gradient_history": os.path.join(out, "gradient_history.csv"),
    }
    grid = obs.grid
    k_comp = Field(grid, SPATIAL, result.coefficient)
    write_field(paths["k_comp"], k_comp)
    write_csv(paths["k_comp_csv"], k_comp)
    write_pgm(paths["k_comp_pgm"], result.coefficient)
    paths["k_comp_pgm_sidecar"] = paths["k_comp_pgm"] + ".json"
    write_field(paths["k_true"], make_k(outcome.phantom))
    write_field(paths["u"], Field(grid, SPACE_TIME, result.iterate.u))
    write_field(paths["m"], Field(grid, SPACE_TIME, result.iterate.m))
    metrics = outcome.metrics
    with open(paths["metrics"], "w", encoding="ascii") as fh:
        fh.write("rel_l2,mask_rel_l2,contrast,converged,iterations\n")
        fh.write(
            f"{metrics.rel_l2:.17g},{metrics.mask_rel_l2:.17g},"
            f"{metrics.contrast:.17g},{int(result.converged)},{result.iterations}\n"
        )
    with open(paths["objective_history"], "w", encoding="ascii") as fh:
        fh.write("step,objective\n")
        for i, value in enumerate(result.objective_history):
            fh.write(f"{i},{value:.17g}\n")
    with open(paths["gradient_history"], "w", encoding="ascii") as fh:
        fh.write("iteration,gradient_max\n")
        for i, value in enumerate(result.gradient_history):
            fh.write(f"{i},{value:.17g}\n")

    return {
        "metrics": {
            "rel_l2": metrics.rel_l2,
            "mask_rel_l2": metrics.mask_rel_l2,
            "contrast": metrics.contrast,
        },
        "converged": result.converged,
        "iterations": result.iterations,
        "final_step": result.final_step,
        "final_objective": float(result.objective_history[-1]),
        "final_gradient_max": float(result.gradient_history[-1]),
        "denominator_min_abs": outcome.denominator_min,
        "unweighted": cfg.lam == 0.0,
        "outputs": _hash_map(paths),
    }


def cmd_invert(args) -> int:
    cfg = _config_from_args(args)
    obs, cost, cost_rate, ds_manifest, ds_paths = _read_dataset(args.dataset)
    cfg = _adopt_dataset_config(cfg, ds_manifest)
    cfg.validate()
    out = _out_dir(args, cfg, "invert")
    _prepare_out(out, args.force)
    summary = _invert_core(cfg, obs, cost, cost_rate, out)
    _write_manifest(out, {
        "command": "invert",
        "config": cfg.to_dict(),
        "versions": _versions(),
        "inputs": _hash_map(ds_paths),
        **summary,
    })
    m = summary["metrics"]
    print(
        f"rel_l2={m['rel_l2']:.4f} contrast={m['contrast']:.3f} "
        f"converged={summary['converged']} -> {out}"
    )
    return EXIT_OK


def cmd_sweep_lambda(args) -> int:
    cfg = _config_from_args(args)
    if not args.lam_list:
        raise ValueError("--lambda needs at least one value")
    obs, cost, cost_rate, ds_manifest, ds_paths = _read_dataset(args.dataset)
    cfg = _adopt_dataset_config(cfg, ds_manifest)
    cfg.validate()
    out = _out_dir(args, cfg, "sweep")
    _prepare_out(out, args.force)
    rows = []
    per_lam = {}
    for lam in args.lam_list:
        sub = os.path.join(out, f"lam_{lam:g}")
        os.makedirs(sub, exist_ok=True)
        try:
            summary = _invert_core(cfg.replace(lam=lam), obs, cost, cost_rate, sub)
        except (ValueError, RuntimeError) as exc:
            rows.append((lam, "failed", "", "", ""))
            per_lam[f"{lam:g}"] = {"status": "failed", "error": str(exc)}
            continue
        m = summary["metrics"]
        rows.append((lam, "ok", m["rel_l2"], m["contrast"], int(summary["converged"])))
        per_lam[f"{lam:g}"] = {"status": "ok", **summary}
    summary_path = os.path.join(out, "summary.csv")
    with open(summary_path, "w", encoding="ascii") as fh:
        fh.write("lambda,status,rel_l2,contrast,converged\n")
        for lam, status, rel, contrast, conv in rows:
            rel_s = f"{rel:.17g}" if rel != "" else ""
            con_s = f"{contrast:.17g}" if contrast != "" else ""
            fh.write(f"{lam:g},{status},{rel_s},{con_s},{conv}\n")
    _write_manifest(out, {
        "command": "sweep-lambda",
        "config": cfg.to_dict(),
        "lambdas": list(args.lam_list),
        "versions": _versions(),
        "inputs": _hash_map(ds_paths),
        "runs": per_lam,
        "outputs": _hash_map({"summary": summary_path}),
    })
    print(f"sweep summary in {summary_path}")
    return EXIT_OK


def cmd_verify_carleman(args) -> int:
    cfg = _config_from_args(args)
    lambdas = args.lam_list if args.lam_list else [1.0, 2.0, 4.0, 8.0]
    for lam in lambdas:
        if lam <= 0:
            raise ValueError(f"certification needs lam > 0, got {lam:g}")
    validate_exponent(cfg.alpha)
    out = _out_dir(args, cfg, "carleman")
    _prepare_out(out, args.force)
    results = run_certification(
        seed=cfg.seed, n_trials=args.trials, lambdas=lambdas,
        d=cfg.half_width, alpha=cfg.alpha,
    )
    slope = ratio_log_slope(lambdas, d=cfg.half_width, alpha=cfg.alpha) if len(lambdas) > 1 else None
    report_path = os.path.join(out, "report.txt")
    counts = {"holds": 0, "violated": 0, "inconclusive": 0}
    with open(report_path, "w", encoding="ascii") as fh:
        fh.write("trial lam lhs rhs margin status\n")
        for i, r in enumerate(results):
            counts[r.status] += 1
            fh.write(
                f"{i} {r.lam:g} {r.lhs:.12e} {r.rhs:.12e} {r.margin:.12e} {r.status}\n"
            )
        fh.write(
            f"# {counts['holds']} hold, {counts['violated']} violated, "
            f"{counts['inconclusive']} inconclusive\n"
        )
        if slope is not None:
            fh.write(f"# sharpened-constant log-log slope {slope:.6f}\n")
    _write_manifest(out, {
        "command": "verify-carleman",
        "config": cfg.to_dict(),
        "lambdas": [float(l) for l in lambdas],
        "trials": args.trials,
        "versions": _versions(),
        "counts": counts,
        "slope": slope,
        "outputs": _hash_map({"report": report_path}),
    })
    bad = counts["violated"] + counts["inconclusive"]
    print(f"{counts['holds']} hold, {bad} failures -> {report_path}")
    if bad:
        raise NumericalFailure(f"{bad} certification trials did not hold")
    return EXIT_OK


def cmd_render(args) -> int:
    field = read_field(args.field)
    if field.rank == SPATIAL:
        values = field.values
        suffix = ""
    elif field.rank == SPACE_TIME:
        if args.slice is None:
            raise ValueError("a space-time field needs --slice t=VALUE")
        t = args.slice
        idx = int(np.argmin(np.abs(field.grid.t - t)))
        values = field.values[:, :, idx]
        suffix = f"_t{field.grid.t[idx]:g}"
    else:
        raise ValueError(f"cannot render rank {field.rank!r} as a heatmap")
    out = args.out if args.out else (os.path.dirname(os.path.abspath(args.field)))
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.field))[0] + suffix
    pgm_path = os.path.join(out, stem + ".pgm")
    csv_path = os.path.join(out, stem + ".csv")
    write_pgm(pgm_path, values)
    write_csv(csv_path, Field(field.grid, SPATIAL, values))
    print(f"wrote {pgm_path} and {csv_path}")
    return EXIT_OK


def _parse_lambda_list(raw: str):
    parts = [p for p in raw.replace(",", " ").split() if p]
    return [float(p) for p in parts]


def _parse_slice(raw: str) -> float:
    if not raw.startswith("t="):
        raise argparse.ArgumentTypeError(f"expected t=VALUE, got {raw!r}")
    return float(raw[2:])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgcoef",
        description="Coefficient reconstruction benchmarks for the crowd "
        "interaction model: data generation, weighted inversion, sweeps, "
        "certification, rendering.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False):
        p.add_argument("--config", help="INI config file; defaults are the benchmark setup")
        p.add_argument("--out", help="output directory (default: under the output root)")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        p.add_argument("--seed", type=int, help="noise stream seed override")
        p.add_argument("--delta", type=float, help="relative noise level override")
        p.add_argument("--letter", choices=LETTERS, help="phantom letter override")
        p.add_argument("--contrast", type=float, help="inside value override")
        if dataset:
            p.add_argument("dataset", help="dataset directory from a generate run")

    p = sub.add_parser("generate", help="forward-solve the benchmark and write a dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("invert", help="reconstruct the coefficient from a dataset")
    common(p, dataset=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("sweep-lambda", help="repeat the inversion across weight strengths")
    common(p, dataset=True)
    p.add_argument("--lambda", dest="lam_list", type=_parse_lambda_list, required=True,
                   help="comma-separated weight strengths, e.g. 0,1,2,3,4,10")
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("verify-carleman", help="certify the weighted integral inequality")
    common(p)
    p.add_argument("--lambda", dest="lam_list", type=_parse_lambda_list,
                   help="weight strengths to certify (default 1,2,4,8)")
    p.add_argument("--trials", type=int, default=100, help="random profiles per strength")
    p.set_defaults(func=cmd_verify_carleman)

    p = sub.add_parser("render", help="render a stored field as PGM + CSV")
    p.add_argument("field", help="field container file")
    p.add_argument("--out", help="output directory (default: next to the input)")
    p.add_argument("--slice", type=_parse_slice, help="time slice for space-time fields, t=VALUE")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RuntimeError as exc:
        # NumericalFailure and a stalled descent both land here
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
