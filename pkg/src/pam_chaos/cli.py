"""Experiment runner: ``pam-chaos <experiment> --config cfg.yaml --out DIR``.

Exit status: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (DISTANCE_FIELDS, SCALING_FIELDS, SWEEP_FIELDS, choose_order, distance_report,
                       exact_variance, md_bound_sweep, poincare_A_regular, poincare_A_rough,
                       sample_spatial_average, scaling_report, stein_bound, stein_bound_se, write_csv,
                       write_long_csv)
from .checks import kernel_checks
from .errors import ArgumentError, HypothesisViolation, NumericalError, ResourceError, UnsupportedCaseError
from .gaussian_field import make_lattice
from .grid import Grid
from .noise_model import NoiseSpec, dalang_check

EXPERIMENTS = ("variance-scaling", "clt", "derivative-bounds", "kernel-checks", "poincare")
THREADS_ENV = "PAM_CHAOS_THREADS"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

_MIN_REPLICAS = {"clt": 1000, "poincare": 16, "derivative-bounds": 16}

DEFAULTS = {
    "temporal.kind": "dirac",
    "spatial.kind": "integrable",
    "spatial.d": 1,
    "spatial.ell": 1.0,
    "grid.T": 0.5,
    "grid.nt": 8,
    "grid.L": 32.0,
    "grid.nx": 256,
    "t": 0.5,
    "x": 0.0,
    "R": [2.0, 4.0, 8.0, 16.0],
    "N": None,
    "tail_target": 1e-3,
    "replicas": 0,
    "seed": 0,
    "p": 4,
    "n_cells": 1000,
    "method": None,
    "mc_tuples": 0,
    "stein": False,
    "caps.max_M": 20_000,
    "caps.max_N": 12,
    "caps.max_replicas": 1_000_000,
}


def flatten(cfg, prefix="") -> dict:
    """Nested mappings to dotted keys; already-flat keys pass through."""
    out = {}
    for k, v in cfg.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path) -> dict:
    """Read a YAML or JSON config file into flat keys."""
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ArgumentError("config must be a mapping")
    return flatten(data)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    spec: NoiseSpec
    grid: Grid
    t: float
    x: float
    R: tuple
    N: int | None
    tail_target: float
    replicas: int
    seed: int
    p: int
    n_cells: int
    method: str | None
    mc_tuples: int
    stein: bool
    values: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_mapping(cls, kind: str, cfg: dict) -> "ExperimentConfig":
        if kind not in EXPERIMENTS:
            raise ArgumentError(f"unknown experiment {kind!r}")
        unknown = set(cfg) - set(DEFAULTS) - {"spatial.beta", "spatial.H1", "temporal.H0"}
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        v = {**DEFAULTS, **cfg}
        spec = NoiseSpec.from_config(v).validate()
        if not dalang_check(spec).admissible:
            raise HypothesisViolation(["Dalang's condition fails"])
        grid = Grid(float(v["grid.T"]), int(v["grid.nt"]), float(v["grid.L"]), int(v["grid.nx"]), spec.d)
        R = v["R"]
        R = tuple(float(r) for r in (R if isinstance(R, (list, tuple)) else [R]))
        if any(b <= a for a, b in zip(R, R[1:])):
            raise ArgumentError("R schedule must be increasing")
        if R and R[-1] > grid.L:
            raise ArgumentError("max R exceeds the grid half-width L")
        N = None if v["N"] is None else int(v["N"])
        if grid.M > int(v["caps.max_M"]):
            raise ResourceError(f"grid has {grid.M} cells, cap is {v['caps.max_M']}")
        if N is not None and not 0 <= N <= int(v["caps.max_N"]):
            raise ResourceError(f"N must lie in [0, {v['caps.max_N']}]")
        replicas = int(v["replicas"])
        if replicas > int(v["caps.max_replicas"]):
            raise ResourceError(f"replicas exceed cap {v['caps.max_replicas']}")
        need = _MIN_REPLICAS.get(kind, 0)
        if replicas < need:
            raise ArgumentError(f"{kind} needs replicas >= {need}")
        t = float(v["t"])
        if not 0 < t <= grid.T:
            raise ArgumentError("t must lie in (0, grid.T]")
        values = {k: v[k] for k in sorted(v)}
        return cls(kind, spec, grid, t, float(v["x"]), R, N, float(v["tail_target"]), replicas,
                   int(v["seed"]), int(v["p"]), int(v["n_cells"]), v["method"], int(v["mc_tuples"]),
                   bool(v["stein"]), values)

    def config_hash(self) -> str:
        blob = json.dumps({"kind": self.kind, **self.values}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def case(self) -> str:
        return "rough" if self.spec.is_rough else "regular"


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    version: str
    wall_time: float
    seeds: dict
    files: list
    summary: dict

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def stage_seed(master: int, stage: str) -> int:
    """Per-stage seed derived from the master seed and the stage name."""
    key = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([master, key]).generate_state(1)[0])


def resolve_threads(cli_value: int | None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, cli_value or 1)


def _order(cfg: ExperimentConfig, lat) -> int:
    if cfg.N is not None:
        return cfg.N
    return choose_order(cfg.t, cfg.R, cfg.grid, lat.cov, cfg.tail_target)


def _samples(cfg, lat, N, seed, threads, block=500):
    """F_R samples in fixed blocks, so the values do not depend on ``threads``."""
    starts = list(range(0, cfg.replicas, block))

    def work(a):
        return sample_spatial_average(cfg.t, cfg.R, N, cfg.grid, lat, min(block, cfg.replicas - a),
                                      seed, start=a)

    with ThreadPoolExecutor(threads) as pool:
        return np.concatenate(list(pool.map(work, starts)))


def _poincare(cfg, lat, R, N, seed):
    method = cfg.method
    if cfg.spec.is_rough:
        return poincare_A_rough(cfg.t, R, N, cfg.grid, lat, cfg.mc_tuples, cfg.replicas, seed,
                                H1=cfg.spec.spatial.H1, method=method or "exhaustive")
    return poincare_A_regular(cfg.t, R, N, cfg.grid, lat, cfg.mc_tuples, cfg.replicas, seed,
                              method=method or "factored")


def run_variance_scaling(cfg, lat, out, threads):
    seed = stage_seed(cfg.seed, "noise")
    N = _order(cfg, lat)
    samples = _samples(cfg, lat, N, seed, threads) if cfg.replicas > 1 else None
    rep = scaling_report(cfg.t, cfg.R, cfg.grid, lat.cov, N=N, samples=samples)
    rows = list(rep.rows())
    files = [write_csv(out / "scaling.csv", rows, SCALING_FIELDS)]
    summary = {"N": N, "slope": rep.fit.slope, "intercept": rep.fit.intercept, "r_squared": rep.fit.r_squared}
    return files, rows, summary, {"noise": seed}


def run_clt(cfg, lat, out, threads):
    seeds = {"noise": stage_seed(cfg.seed, "noise"), "bootstrap": stage_seed(cfg.seed, "bootstrap"),
             "poincare": stage_seed(cfg.seed, "poincare")}
    N = _order(cfg, lat)
    F = _samples(cfg, lat, N, seeds["noise"], threads)
    rows = []
    for j, R in enumerate(cfg.R):
        sigma2 = exact_variance(cfg.t, R, N, cfg.grid, lat.cov)
        sb = sb_se = None
        if cfg.stein:
            A = _poincare(cfg, lat, R, N, seeds["poincare"])
            sb = stein_bound(sigma2, A.value, cfg.case)
            sb_se = stein_bound_se(sigma2, A.value, A.stderr, cfg.case)
        rep = distance_report(F[:, j], R, cfg.case, seeds["bootstrap"] % 2**32, sb, sb_se, sigma2=sigma2)
        rows.append(rep.row())
    files = [write_csv(out / "distances.csv", rows, DISTANCE_FIELDS)]
    return files, rows, {"N": N}, seeds


def run_derivative_bounds(cfg, lat, out, threads):
    seed = stage_seed(cfg.seed, "noise")
    N = cfg.N if cfg.N is not None else 4
    res = md_bound_sweep(cfg.t, cfg.x, N, cfg.grid, lat, replicas=cfg.replicas, p=cfg.p, seed=seed,
                         n_cells=cfg.n_cells, spec=cfg.spec)
    files = [write_csv(out / "sweeps.csv", res.rows, SWEEP_FIELDS)]
    return files, res.rows, {"N": N, "max_ratio": res.max_ratio, "by_family": res.by_family}, {"noise": seed}


def run_poincare(cfg, lat, out, threads):
    seed = stage_seed(cfg.seed, "poincare")
    N = _order(cfg, lat)
    rows = []
    for R in cfg.R:
        sigma2 = exact_variance(cfg.t, R, N, cfg.grid, lat.cov)
        A = _poincare(cfg, lat, R, N, seed)
        rows.append({"R": R, "A": A.value, "A_se": A.stderr, "sigma2": sigma2,
                     "stein_bound": stein_bound(sigma2, A.value, cfg.case),
                     "stein_bound_se": stein_bound_se(sigma2, A.value, A.stderr, cfg.case),
                     "case": cfg.case, "method": A.method})
    fields = ["R", "A", "A_se", "sigma2", "stein_bound", "stein_bound_se", "case", "method"]
    files = [write_csv(out / "poincare.csv", rows, fields)]
    return files, rows, {"N": N}, {"poincare": seed}


def run_kernel_checks(cfg, lat, out, threads):
    seed = stage_seed(cfg.seed, "checks")
    rows = kernel_checks(cfg.spec, cfg.grid, seed)
    fields = ["name", "value", "reference", "error", "tolerance", "passed"]
    files = [write_csv(out / "checks.csv", rows, fields)]
    return files, rows, {"all_passed": all(r["passed"] for r in rows)}, {"checks": seed}


RUNNERS = {
    "variance-scaling": run_variance_scaling,
    "clt": run_clt,
    "derivative-bounds": run_derivative_bounds,
    "kernel-checks": run_kernel_checks,
    "poincare": run_poincare,
}


def run(cfg: ExperimentConfig, out, threads=1, plot_data=False) -> RunManifest:
    """Execute one experiment, write its CSV files and the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    lat = None if cfg.kind == "kernel-checks" else make_lattice(cfg.grid, cfg.spec)
    files, rows, summary, seeds = RUNNERS[cfg.kind](cfg, lat, out, threads)
    if plot_data:
        stem = files[0].stem
        files.append(write_long_csv(out / f"{stem}_long.csv", rows))
    manifest = RunManifest(cfg.kind, cfg.config_hash(), __version__, time.perf_counter() - t0,
                           {"master": cfg.seed, **seeds}, [f.name for f in files], summary)
    manifest.write(out)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pam-chaos",
                                     description="Wiener-chaos experiments for the parabolic Anderson model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML or JSON file with flat or nested keys")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (the {THREADS_ENV} environment variable wins)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--plot-data", action="store_true", help="also write tidy long-format CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ArgumentError("seed must be an unsigned 64-bit integer")
            raw["seed"] = args.seed
        cfg = ExperimentConfig.from_mapping(args.experiment, raw)
    except HypothesisViolation as exc:
        print(f"invalid configuration: {'; '.join(exc.clauses)}", file=sys.stderr)
        return EXIT_INVALID
    except (ArgumentError, ResourceError, UnsupportedCaseError, OSError, yaml.YAMLError,
            json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        manifest = run(cfg, args.out, resolve_threads(args.threads), args.plot_data)
    except (NumericalError, ResourceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    summary = {k: v for k, v in manifest.summary.items() if not isinstance(v, dict)}
    print(json.dumps({"experiment": manifest.experiment, "files": manifest.files, **summary},
                     default=_jsonable))
    if cfg.kind == "kernel-checks" and not manifest.summary["all_passed"]:
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
