"""Command-line entry point: gram, simulate, fit, diagnose, complexity, experiment.

Every run writes a manifest next to its outputs (tool version, config echo,
master seed, timestamps, SHA-256 digests of the emitted files).  Exit codes:
0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .grids import (Grid, GridFunction, OracleSpec, build_uniform_grid,
                    grid_from_csv, grid_to_csv, weighted_l1_norm)
from .kernels import (NonPsdError, gram_matrix, gram_to_csv, kernel_spec_from_json)
from .sampling import (load_sample_binary, load_sample_csv, save_sample_binary,
                       save_sample_csv, simulate)
from .solver import LassoProblem, fit_empirical
from .sparsity import (AlignmentError, RKHSNormInfinite, alignment_coefficient,
                       fourier_sobolev_norm, rkhs_norm, spike_subgradient)
from .complexity import (blocks_touching_support, covering_profile,
                         approximate_dimension, expected_sup_bound, gamma2_dudley,
                         kolmogorov_width, rip_beta_bound, rip_constant)
from .experiments import ExperimentConfig, run_scenario

log = logging.getLogger("funlasso")

USAGE_ERROR = 1
NUMERICAL_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; the contract wants 1
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("FUNLASSO_LOG", "warn").lower()
    logging.basicConfig(level={"debug": logging.DEBUG, "info": logging.INFO,
                               "warn": logging.WARNING}.get(level, logging.WARNING))


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_paths, config_echo, seed, manifest_path):
    manifest = {
        "tool": "funlasso",
        "version": __version__,
        "config": config_echo,
        "seed": seed,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "digests": {os.path.basename(p): _sha256(p) for p in out_paths if os.path.exists(p)},
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _grid_from_config(cfg: dict) -> Grid:
    if "csv" in cfg:
        grid, _ = grid_from_csv(cfg["csv"])
        return grid
    return build_uniform_grid(int(cfg["n_points"]), tuple(cfg.get("interval", (0.0, 1.0))),
                              cfg.get("measure_kind", "counting"))


def _oracle_from_config(cfg: dict, grid: Grid) -> OracleSpec:
    slope = np.asarray(cfg.get("slope", np.zeros(grid.size)), dtype=float)
    return OracleSpec(slope=GridFunction(slope), intercept=float(cfg.get("intercept", 0.0)),
                      noise_sd=float(cfg.get("noise_sd", 0.0)),
                      noise_kind=cfg.get("noise_kind", "gaussian"))


def _function_from_config(cfg, grid: Grid) -> np.ndarray:
    if isinstance(cfg, dict) and "csv" in cfg:
        _, gf = grid_from_csv(cfg["csv"])
        if gf is None:
            raise ValueError(f"{cfg['csv']} has no value column")
        return gf.values
    vals = np.asarray(cfg, dtype=float).ravel()
    if vals.shape[0] != grid.size:
        raise ValueError("function length does not match the grid")
    return vals


def cmd_gram(args) -> int:
    cfg = _load_config(args.config)
    grid = _grid_from_config(cfg["grid"])
    model = gram_matrix(kernel_spec_from_json(cfg["kernel"]), grid)
    out = args.out or "gram.csv"
    gram_to_csv(model, out)
    grid_out = os.path.splitext(out)[0] + ".grid.csv"
    grid_to_csv(grid, grid_out)
    _write_manifest([out, grid_out], cfg, args.seed, os.path.splitext(out)[0] + ".manifest.json")
    print(json.dumps({"out": out, "jitter": model.jitter, "n_points": grid.size}))
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    grid = _grid_from_config(cfg["grid"])
    model = gram_matrix(kernel_spec_from_json(cfg["kernel"]), grid)
    oracle = _oracle_from_config(cfg.get("oracle", {}), grid)
    sample = simulate(model, oracle, int(cfg["n"]), driver=cfg.get("driver", "gaussian"),
                      seed=args.seed)
    out = args.out or "sample.bin"
    outputs = [out]
    if args.format == "csv":
        base = os.path.splitext(out)[0]
        xp, yp = base + ".x.csv", base + ".y.csv"
        save_sample_csv(sample, xp, yp)
        outputs = [xp, yp]
    else:
        save_sample_binary(sample, out)
    _write_manifest(outputs, cfg, args.seed, os.path.splitext(out)[0] + ".manifest.json")
    print(json.dumps({"out": outputs, "n": sample.n, "n_points": sample.n_points}))
    return 0


def _load_data(path):
    with open(path, "rb") as fh:
        magic = fh.read(5)
    if magic == b"FLXS1":
        return load_sample_binary(path)
    base = path[:-6] if path.endswith(".x.csv") else os.path.splitext(path)[0]
    return load_sample_csv(base + ".x.csv", base + ".y.csv")


def cmd_fit(args) -> int:
    sample = _load_data(args.data)
    if args.grid:
        grid, _ = grid_from_csv(args.grid)
    else:
        grid = Grid(np.arange(sample.n_points, dtype=float), np.ones(sample.n_points))
    problem = LassoProblem(grid=grid, epsilon=args.epsilon, sample=sample,
                           tol=args.tol, max_iters=args.max_iters,
                           constraint_radius=args.constraint_radius)
    fit = fit_empirical(problem)
    out = args.out or "fit.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t_index", "lambda_hat"])
        for i, v in enumerate(fit.slope.values):
            wr.writerow([i, repr(float(v))])
    summary = {"intercept": fit.intercept, "objective": fit.objective,
               "kkt_residual": fit.kkt_residual, "iterations": fit.iterations,
               "converged": fit.converged}
    print(json.dumps(summary))
    summary_path = os.path.splitext(out)[0] + ".summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh)
    _write_manifest([out, summary_path],
                    {"data": args.data, "epsilon": args.epsilon, "tol": args.tol},
                    args.seed, os.path.splitext(out)[0] + ".manifest.json")
    return 0 if fit.converged else NUMERICAL_ERROR


def cmd_diagnose(args) -> int:
    cfg = _load_config(args.config)
    grid = _grid_from_config(cfg["grid"])
    model = gram_matrix(kernel_spec_from_json(cfg["kernel"]), grid)
    style = cfg.get("subgradient_style")
    if "w" in cfg:
        w = _function_from_config(cfg["w"], grid)
    elif "lambda" in cfg:
        lam = _function_from_config(cfg["lambda"], grid)
        w = spike_subgradient(grid, lam, style=style or "interpolating",
                              r=cfg.get("r")).values
    else:
        raise ValueError("diagnose config needs either `w` or `lambda`")
    b = cfg.get("b", 16)
    b = math.inf if b in ("inf", None) else float(b)
    p = float(cfg.get("p", 1.0))
    try:
        norm = rkhs_norm(model, w)
    except RKHSNormInfinite:
        norm = math.inf
    align = alignment_coefficient(model, w, b=b, tol=float(cfg.get("tol", 1e-8)))
    report = {
        "rkhs_norm": norm,
        "alignment": {"b": b, "value": align.value, "certificate": align.certificate},
        "sobolev": {"p": p, "value": fourier_sobolev_norm(grid, w, p)},
        "spike_subgradient_style": style,
    }
    text = json.dumps(report)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest([args.out], cfg, args.seed,
                        os.path.splitext(args.out)[0] + ".manifest.json")
    return 0


def cmd_complexity(args) -> int:
    cfg = _load_config(args.config)
    grid = _grid_from_config(cfg["grid"])
    model = gram_matrix(kernel_spec_from_json(cfg["kernel"]), grid)
    prefix = args.out or "complexity"
    profile = covering_profile(model)
    est = expected_sup_bound(model, L_const=float(cfg.get("L_const", 1.0)), profile=profile)
    outputs = []

    def _table(name, header, rows):
        path = f"{prefix}.{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(rows)
        outputs.append(path)

    eps_list = cfg.get("eps_list") or [e for e, _ in profile]
    _table("covering", ["epsilon", "covering"],
           [(repr(float(e)), c) for e, c in zip(eps_list,
            [next(k for r, k in profile if r <= e) for e in eps_list])])
    _table("gamma2", ["delta", "gamma2"],
           [(repr(float(d)), repr(gamma2_dudley(profile, float(d)))) for d, _ in est.gamma2_table]
           or [(repr(float(d)), repr(g)) for d, g in est.gamma2_table])
    d_list = cfg.get("d_list") or list(range(0, min(model.size, 16)))
    _table("width", ["d", "width"],
           [(d, repr(kolmogorov_width(model, None, int(d)))) for d in d_list])

    summary = {"s_T": est.s_T}
    if "oracle" in cfg:
        ocfg = cfg["oracle"]
        lam = _function_from_config(ocfg["lambda"], grid)
        w = _function_from_config(ocfg["w"], grid) if "w" in ocfg else None
        if w is None:
            from .grids import canonical_subgradient
            w = canonical_subgradient(lam).values
        summary["d_w_lambda"] = approximate_dimension(
            w, lam, float(ocfg["sigma_y"]), int(ocfg["n"]), model, profile=profile)
    if "partition" in cfg:
        partition = [tuple(r) for r in cfg["partition"]]
        gamma = float(cfg.get("gamma", 1.0))
        deltas = {}
        for d in cfg.get("rip_d", [1, 2]):
            est_d = rip_constant(model, partition, int(d),
                                 search_budget=int(cfg.get("search_budget", 200)),
                                 seed=args.seed or 0)
            deltas[int(d)] = {"delta": est_d.delta, "exact": est_d.exact}
        summary["delta_d"] = deltas
        ds = sorted(deltas)
        if len(ds) >= 2:
            d2, d3 = deltas[ds[0]]["delta"], deltas[ds[-1]]["delta"]
            if d2 < 1.0 and d3 < 1.0:
                summary["beta_bound"] = rip_beta_bound(d2, d3, gamma)
            else:
                summary["beta_bound"] = math.inf  # outside the formula's domain
    spath = f"{prefix}.summary.json"
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    outputs.append(spath)
    _write_manifest(outputs, cfg, args.seed, f"{prefix}.manifest.json")
    print(json.dumps(summary))
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads:
        cfg["threads"] = args.threads
    config = ExperimentConfig.from_json(cfg)
    report = run_scenario(config)
    outdir = args.out or "experiment_out"
    os.makedirs(outdir, exist_ok=True)
    rows_path = os.path.join(outdir, "rows.csv")
    report.rows_csv(rows_path)
    outputs = [rows_path]
    if "slopes" in report.summary:
        spath = os.path.join(outdir, "slopes.csv")
        with open(spath, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["label", "slope", "stderr", "median_final_risk"])
            for label, rec in report.summary["slopes"].items():
                wr.writerow([label, repr(rec["slope"]), repr(rec["stderr"]),
                             repr(rec["median_final_risk"])])
        outputs.append(spath)
    if "margins" in report.summary:
        mpath = os.path.join(outdir, "margins.csv")
        with open(mpath, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            keys = list(report.summary["margins"][0])
            wr.writerow(keys)
            for m in report.summary["margins"]:
                wr.writerow([m[k] for k in keys])
        outputs.append(mpath)
    sum_path = os.path.join(outdir, "summary.json")
    with open(sum_path, "w", encoding="utf-8") as fh:
        json.dump(report.summary, fh, indent=2, sort_keys=True, default=float)
    outputs.append(sum_path)
    _write_manifest(outputs, config.to_json(), config.seed, os.path.join(outdir, "manifest.json"))
    print(json.dumps({"out": outdir, "rows": len(report.rows)}))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="funlasso",
                     description="Measure-weighted LASSO for functional regression "
                                 "with sparsity/complexity diagnostics")
    parser.add_argument("--version", action="version", version=f"funlasso {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", default=None, help="output path or directory")
        p.add_argument("--threads", type=int, default=None, help="worker parallelism cap")
        p.add_argument("--format", choices=("csv", "bin"), default="bin")

    common(sub.add_parser("gram", help="kernel Gram matrix to CSV"))
    common(sub.add_parser("simulate", help="draw a regression sample"))
    fit_p = sub.add_parser("fit", help="solve the penalized problem on saved data")
    fit_p.add_argument("--data", required=True, help="FLXS1 binary or CSV-pair sample")
    fit_p.add_argument("--epsilon", type=float, required=True)
    fit_p.add_argument("--tol", type=float, default=1e-8)
    fit_p.add_argument("--max-iters", type=int, default=None)
    fit_p.add_argument("--constraint-radius", type=float, default=None)
    fit_p.add_argument("--grid", default=None, help="grid CSV (default: counting measure)")
    common(fit_p, needs_config=False)
    common(sub.add_parser("diagnose", help="RKHS/alignment/Sobolev report for a subgradient"))
    common(sub.add_parser("complexity", help="covering/gamma2/width tables and summary"))
    common(sub.add_parser("experiment", help="run a Monte Carlo scenario"))
    return parser


_COMMANDS = {
    "gram": cmd_gram,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "complexity": cmd_complexity,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (NonPsdError, AlignmentError, RKHSNormInfinite, np.linalg.LinAlgError) as exc:
        print(f"funlasso: numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"funlasso: error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
