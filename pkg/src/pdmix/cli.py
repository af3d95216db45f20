"""Command-line interface: ``pdmix``.

Writes into the output directory (``--out``, else ``$PDMIX_OUT``, else
``./pdmix-out``):

``report.json``
    Configuration echo and results.
``trace.csv``
    Per-iteration history. Columns ``iteration, phase, K, loglik, psi,
    lambda, gamma, n_active`` (``K``/``gamma`` empty for EM runs).
``measure.csv``
    Active supports (one column per coordinate) and ``weight``.
``tree.csv``
    Sweep only: ``sieve``, support coordinates and ``weight`` per row.
``cdf.csv``
    Univariate fits: ``point, cumulative``.

Exit status: 0 converged, 2 not converged, 1 input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .builder import (ACTIVE_THRESHOLD, algorithm1, cdf_of_Q, fit_fixed_support, sieve_sweep)
from .data import (DistinctDataset, InputError, RawDataset, SupportSet, deduplicate, read_csv,
                   sample_covariance, support_from_data, support_grid_1d, support_lattice)
from .datasets import BUILTIN, csv_path
from .densities import NormalFamily, PoissonFamily, likelihood_matrix
from .dual import SolverOptions
from .em import ContinuousFit, continuous_em_solve, loglik_residual, reference_loglik
from .oracle import brute_force_primal
from .recovery import MixingMeasure
from .synthetic import SyntheticDesign, generate_synthetic

ALGORITHMS = ("pd", "pd-ic", "dem", "cem", "algorithm1", "sweep")
OUT_ENV = "PDMIX_OUT"


@dataclass
class RunConfig:
    data: str | None = None
    header: bool | None = None
    columns: list | None = None
    count_column: str | None = None
    family: str = "normal"
    support: str = "data"
    algorithm: str = "pd"
    delta: float = 1.0
    sieve: list = field(default_factory=list)
    sieve_kind: str = "delta"
    psi_tol: float = 0.005
    joint_tol: float = 1e-6
    tau: float | None = None
    cem_tol: float = 1e-4
    max_iter: int | None = None
    active_threshold: float = ACTIVE_THRESHOLD
    dedup_tol: float = 0.0
    out: str = "pdmix-out"
    synthetic: bool = False
    seed: int = 0
    verify: bool = False
    reference: bool = True
    warm_start: bool = True

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise InputError(f"unknown algorithm {self.algorithm!r}")
        if self.family not in ("normal", "poisson"):
            raise InputError(f"unknown family {self.family!r}")
        if self.data is None and not self.synthetic:
            raise InputError("give --data or --synthetic")
        if self.algorithm == "sweep" and not self.sieve:
            raise InputError("--algorithm sweep needs --sieve values")
        for name in ("psi_tol", "joint_tol", "cem_tol", "delta", "active_threshold"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.tau is not None and not self.tau > 0:
            raise InputError("tau must be positive")
        if self.sieve_kind not in ("delta", "sigma"):
            raise InputError("sieve kind must be delta or sigma")


@dataclass
class RunReport:
    config: dict
    results: dict
    converged: bool
    wall_time: float
    files: list = field(default_factory=list)


def _load_raw(cfg: RunConfig) -> tuple[RawDataset, MixingMeasure | None]:
    if cfg.synthetic:
        return generate_synthetic(SyntheticDesign(), cfg.seed)
    integer = cfg.family == "poisson"
    kwargs = dict(header=cfg.header, columns=cfg.columns, count_column=cfg.count_column,
                  integer=integer)
    if cfg.data.startswith("builtin:"):
        name = cfg.data.split(":", 1)[1]
        if name not in BUILTIN:
            raise InputError(f"unknown builtin dataset {name!r}; choose from {', '.join(BUILTIN)}")
        if name == "mortality" and cfg.count_column is None:
            kwargs.update(columns=["deaths"], count_column="days")
        with csv_path(name) as path:
            return read_csv(path, **kwargs), None
    path = Path(cfg.data)
    if not path.is_file():
        raise InputError(f"data file not found: {path}")
    return read_csv(path, **kwargs), None


def _supports(cfg: RunConfig, data: DistinctDataset, truth) -> SupportSet:
    source = cfg.support
    if source == "data":
        return support_from_data(data)
    if source == "true":
        if truth is None:
            raise InputError("--support true is only available with --synthetic")
        return SupportSet(truth.theta)
    kind, _, rest = source.partition(":")
    if kind == "grid":
        try:
            lo, hi, step = (float(v) for v in rest.split(":"))
        except ValueError as exc:
            raise InputError("grid support is grid:lo:hi:step") from exc
        return support_grid_1d(lo, hi, step)
    if kind == "lattice":
        levels = [float(v) for v in rest.split(",") if v]
        return support_lattice(levels, data.p)
    if kind == "file":
        return SupportSet(read_csv(rest).rows)
    raise InputError(f"unknown support source {source!r}")


def _family(cfg: RunConfig, raw: RawDataset):
    if cfg.family == "poisson":
        return PoissonFamily()
    return NormalFamily(sample_covariance(raw), cfg.delta)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _coord_names(p):
    return [f"theta{k + 1}" for k in range(p)]


def _measure_rows(measure: MixingMeasure):
    return [[*th.tolist(), float(w)] for th, w in zip(measure.theta, measure.weights)]


def _fixed_trace_rows(fit, lambdas):
    rows = []
    if fit.solver == "dem":
        for t, (l, psi) in enumerate(zip(fit.trace.loglik, fit.trace.psi)):
            rows.append([t, "em", "", l, psi, "" if lambdas is None else lambdas[t], "", ""])
    else:
        for t, r in enumerate(fit.trace.records):
            rows.append([t, r.phase, r.k, r.loglik, r.psi,
                         "" if lambdas is None else lambdas[t], r.gamma, r.n_active])
    return rows


TRACE_HEADER = ["iteration", "phase", "K", "loglik", "psi", "lambda", "gamma", "n_active"]


def _fixed_summary(fit, threshold):
    out = {
        "solver": fit.solver,
        "loglik": fit.loglik,
        "psi": fit.psi,
        "m_hat": fit.n_active(threshold),
        "active_threshold": threshold,
        "iterations": fit.iterations,
        "converged": bool(fit.converged),
    }
    if fit.state is not None:
        out["gamma"] = fit.state.gamma
        out["gradient_bound"] = fit.gradient_bound
    return out


def run(cfg: RunConfig) -> RunReport:
    """Execute one configured pipeline and write its outputs."""
    cfg.validate()
    t0 = time.perf_counter()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    raw, truth = _load_raw(cfg)
    data = deduplicate(raw, cfg.dedup_tol)
    supports = _supports(cfg, data, truth)
    family = _family(cfg, raw)
    options = SolverOptions(psi_tol=cfg.psi_tol, joint_tol=cfg.joint_tol,
                            **({"max_iter": cfg.max_iter} if cfg.max_iter and cfg.algorithm != "dem" else {}))
    results: dict = {"n": data.total, "d": data.d, "p": data.p, "m": supports.m}
    files = []
    converged = True
    measure = None

    if cfg.algorithm in ("pd", "pd-ic", "dem", "algorithm1"):
        solver = cfg.algorithm if cfg.algorithm != "algorithm1" else "pd"
        fit = fit_fixed_support(family, supports, data, options, solver, tau=cfg.tau,
                                max_iter=cfg.max_iter if solver == "dem" else None)
        results["fixed"] = _fixed_summary(fit, cfg.active_threshold)
        converged = fit.converged
        measure = fit.measure.active(cfg.active_threshold)
        lambdas = None
        if cfg.reference:
            L = likelihood_matrix(family, supports, data)
            l_star, _, psi_star = reference_loglik(L.scaled, data.counts, L.column_shift)
            logliks = [r[3] for r in _fixed_trace_rows(fit, None)]
            lambdas = loglik_residual(logliks, l_star).tolist()
            results["reference"] = {"loglik": l_star, "psi": psi_star}
            results["fixed"]["lambda"] = lambdas[-1]
        _write_csv(out / "trace.csv", TRACE_HEADER, _fixed_trace_rows(fit, lambdas))
        files.append("trace.csv")
        if cfg.algorithm == "algorithm1":
            from .builder import seed_from_fit

            free = continuous_em_solve(data, family, seed_from_fit(fit, family, cfg.active_threshold),
                                       tol=cfg.cem_tol)
            results["continuous"] = _continuous_summary(free, cfg.cem_tol)
            converged = converged and free.converged
            measure = free.measure
        if cfg.verify:
            results["verify"] = _verify(family, supports, data, fit)
            converged = converged and results["verify"].get("pass", True)

    elif cfg.algorithm == "cem":
        m = supports.m
        seed = ContinuousFit(MixingMeasure(supports.theta, np.full(m, 1.0 / m)),
                             np.array(family.Sigma) if cfg.family == "normal" else None, np.nan,
                             cfg.delta)
        free = continuous_em_solve(data, family, seed, tol=cfg.cem_tol,
                                   max_iter=cfg.max_iter or 10_000)
        results["continuous"] = _continuous_summary(free, cfg.cem_tol)
        _write_csv(out / "trace.csv", TRACE_HEADER,
                   [[t, "cem", "", l, "", "", "", ""] for t, l in enumerate(free.history)])
        files.append("trace.csv")
        converged = free.converged
        measure = free.measure

    else:  # sweep
        tree = sieve_sweep(data, family, supports, cfg.sieve, options, cfg.sieve_kind,
                           cfg.warm_start, cfg.active_threshold)
        results["tree"] = [
            {"sieve": lev.sieve, "m_hat": lev.m_hat, "loglik": lev.loglik, "psi": lev.psi,
             "converged": lev.converged, "degenerate": lev.degenerate, "warm_start": lev.warm,
             **({"error": lev.error} if lev.error else {})}
            for lev in tree.levels
        ]
        _write_csv(out / "tree.csv", [cfg.sieve_kind, *_coord_names(data.p), "weight"],
                   list(tree.rows()))
        files.append("tree.csv")
        converged = all(lev.converged for lev in tree.levels)

    if measure is not None:
        _write_csv(out / "measure.csv", [*_coord_names(measure.theta.shape[1]), "weight"],
                   _measure_rows(measure))
        files.append("measure.csv")
        if measure.theta.shape[1] == 1:
            steps = cdf_of_Q(measure)
            _write_csv(out / "cdf.csv", ["point", "cumulative"],
                       zip(steps.points.tolist(), steps.cumulative.tolist()))
            files.append("cdf.csv")

    report = RunReport(asdict(cfg), results, bool(converged), time.perf_counter() - t0,
                       files + ["report.json"])
    with (out / "report.json").open("w") as fh:
        json.dump(asdict(report), fh, indent=2, default=_json_default)
    return report


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _continuous_summary(free, tol):
    out = {
        "loglik": free.loglik,
        "m": free.measure.m,
        "iterations": free.n_iter,
        "tol": tol,
        "converged": bool(free.converged),
        "degenerate": bool(free.degenerate),
    }
    if free.Sigma_hat is not None:
        out["covariance"] = (free.delta * free.Sigma_hat).tolist()
    return out


def _verify(family, supports, data, fit):
    if supports.m > 4:
        return {"skipped": f"oracle grid mode needs m <= 4 (m = {supports.m})"}
    L = likelihood_matrix(family, supports, data)
    sol = brute_force_primal(L.scaled, data.counts)
    oracle_l = sol.loglik + float(data.counts @ L.column_shift)
    gap = oracle_l - fit.loglik
    return {"oracle_loglik": oracle_l, "solver_loglik": fit.loglik, "gap": gap,
            "oracle_coarse": sol.coarse, "pass": bool(gap <= 1e-6)}


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pdmix",
        description="Fit nonparametric mixing distributions with the penalized dual method.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    src = p.add_argument_group("data")
    src.add_argument("--data", help="CSV path or builtin:iris|galaxies|mortality")
    src.add_argument("--header", dest="header", action="store_true", default=None,
                     help="first CSV line is a header (default: detect)")
    src.add_argument("--no-header", dest="header", action="store_false")
    src.add_argument("--columns", type=lambda s: s.split(","), help="columns to use")
    src.add_argument("--count-column", help="column of row frequencies")
    src.add_argument("--dedup-tol", type=float, default=0.0)
    src.add_argument("--synthetic", action="store_true",
                     help="simulate n=270 points from 27 equal N_3(theta, I) components")
    src.add_argument("--seed", type=int, default=0)
    mod = p.add_argument_group("model")
    mod.add_argument("--family", choices=("normal", "poisson"), default="normal")
    mod.add_argument("--support", default="data",
                     help="data | grid:lo:hi:step | lattice:v1,v2,... | file:path | true")
    mod.add_argument("--algorithm", choices=ALGORITHMS, default="pd")
    mod.add_argument("--delta", type=float, default=1.0)
    mod.add_argument("--sieve", type=_floats, default=[], help="comma-separated sieve values")
    mod.add_argument("--sieve-kind", choices=("delta", "sigma"), default="delta")
    mod.add_argument("--no-warm-start", dest="warm_start", action="store_false")
    tol = p.add_argument_group("tolerances")
    tol.add_argument("--psi-tol", type=float, default=0.005)
    tol.add_argument("--joint-tol", type=float, default=1e-6)
    tol.add_argument("--tau", type=float, default=None,
                     help="also stop EM once the loglikelihood gain is at most tau")
    tol.add_argument("--cem-tol", type=float, default=1e-4)
    tol.add_argument("--max-iter", type=int, default=None)
    tol.add_argument("--active-threshold", type=float, default=ACTIVE_THRESHOLD)
    o = p.add_argument_group("output")
    o.add_argument("--out", default=os.environ.get(OUT_ENV, "pdmix-out"),
                   help=f"output directory (default ${OUT_ENV} or ./pdmix-out)")
    o.add_argument("--no-reference", dest="reference", action="store_false",
                   help="skip the high-accuracy reference solve used for lambda")
    o.add_argument("--verify", action="store_true", help="compare with the brute-force oracle")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**vars(args))
    try:
        report = run(cfg)
    except (InputError, OSError) as exc:
        print(f"pdmix: error: {exc}", file=sys.stderr)
        return 1
    summary = report.results.get("fixed") or report.results.get("continuous") or {}
    if "loglik" in summary:
        print(f"loglik {summary['loglik']:.6f}  psi {summary.get('psi', float('nan')):.3g}  "
              f"m_hat {summary.get('m_hat', summary.get('m'))}")
    for lev in report.results.get("tree", []):
        print(f"{cfg.sieve_kind} {lev['sieve']:g}: m_hat {lev['m_hat']}  loglik {lev['loglik']:.6f}")
    print(f"wrote {', '.join(report.files)} to {cfg.out}")
    return 0 if report.converged else 2


if __name__ == "__main__":
    sys.exit(main())
