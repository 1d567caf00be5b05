"""Benchmark experiments: convergence, stability, joint error surface, time shift.

Every experiment couples scheme runs through shared noise realizations: per
path index one Brownian path and one jump stream are drawn at the finest
resolution involved and re-binned onto coarser grids, so the reported L^p
distances isolate the perturbation under study (mesh, initial gap, or start
time). Compensator variates are per (path, grid), matching the scheme's
grid-indexed V blocks. Path indices map to RNG streams, so results are
independent of worker count.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import DiscretizationMap, build_uniform_grid
from .levy import truncate
from .model import SdeModel
from .scheme import NoiseRealization, coarsen_noise, mc_hypothesis_ok, run_arms
from .streams import DEFAULT_SEED

log = logging.getLogger(__name__)

TABLE_COLUMNS = {
    "convergence": ("mesh", "lp_error", "p", "n_paths", "n_diverged", "seed"),
    "stability": ("gap", "lp_error", "p", "n_paths", "n_diverged", "seed"),
    "heatmap": ("gap", "mesh", "lp_error", "p", "n_paths", "n_diverged", "seed"),
    "timeshift": ("ds", "lp_error", "p", "n_paths", "n_diverged", "seed"),
}


@dataclass
class ErrorTable:
    """Experiment output rows plus per-row standard errors (not serialized)."""

    kind: str
    rows: list[dict]
    stderr: list[float] = field(default_factory=list)

    @property
    def columns(self) -> tuple[str, ...]:
        return TABLE_COLUMNS[self.kind]

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(row[c]) for c in self.columns))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    stderr: float
    n_used: int


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_error_csv(table: ErrorTable, path: str):
    with open(path, "w", newline="\n") as f:
        f.write(table.to_csv())


def write_slopes_csv(fits: list[tuple[str, SlopeFit]], path: str):
    lines = ["experiment,slope,intercept,r_squared"]
    for name, fit in fits:
        lines.append(f"{name},{_fmt(fit.slope)},{_fmt(fit.intercept)},"
                     f"{_fmt(fit.r_squared)}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def lp_error(samples_a, samples_b, p: float = 2.0) -> float:
    """Empirical strong L^p distance ((1/N) sum |a_k - b_k|^p)^(1/p)."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("sample lists must be non-empty and of equal length")
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))


def _lp_with_se(diffs: np.ndarray, p: float) -> tuple[float, float]:
    """L^p estimate and its delta-method standard error."""
    powered = np.abs(diffs) ** p
    m = float(powered.mean())
    err = m ** (1.0 / p)
    if m <= 0.0 or diffs.size < 2:
        return err, 0.0
    se_m = float(powered.std(ddof=1)) / math.sqrt(diffs.size)
    return err, se_m * m ** (1.0 / p - 1.0) / p


def fit_loglog_slope(table: ErrorTable) -> SlopeFit:
    """OLS of log2(error) against log2(abscissa) over rows with error > 0."""
    if table.kind == "heatmap":
        raise ValueError("heatmap tables have two abscissas; no single slope")
    key = table.columns[0]
    xs, ys = [], []
    for row in table.rows:
        if row["lp_error"] > 0.0 and row[key] > 0.0:
            xs.append(math.log2(row[key]))
            ys.append(math.log2(row["lp_error"]))
    if len(xs) < 2:
        raise ValueError("need at least 2 rows with positive error to fit")
    x = np.array(xs)
    y = np.array(ys)
    sxx = float(np.sum((x - x.mean()) ** 2))
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    n = len(xs)
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else 0.0
    return SlopeFit(slope, intercept, r2, stderr, n)


def _fit_or_nan(table: ErrorTable) -> SlopeFit:
    """Experiment wrapper policy: degenerate tables get a NaN fit, not an error."""
    try:
        return fit_loglog_slope(table)
    except ValueError as e:
        log.info("slope fit skipped: %s", e)
        return SlopeFit(math.nan, math.nan, math.nan, math.nan, 0)


# -- mesh validation ----------------------------------------------------------

def _cells_for(T: float, mesh: float, dyadic: bool) -> int:
    n = round(T / mesh)
    if n < 1 or abs(n * mesh - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"mesh {mesh} does not divide the horizon T={T}")
    if dyadic and (n & (n - 1)) != 0:
        raise ValueError(f"mesh {mesh} gives {n} cells; dyadic family required")
    return n


# -- worker-pool plumbing -----------------------------------------------------

_CTX: dict = {}


def _set_ctx(**kw):
    _CTX.clear()
    _CTX.update(kw)


def _resolve_threads(threads: int | None) -> int:
    if threads is None or threads == 0:
        return os.cpu_count() or 1
    return max(1, int(threads))


def _parallel_map(worker, n_items: int, threads: int):
    """Run worker(0..n-1); results in index order regardless of worker count."""
    threads = _resolve_threads(threads)
    if threads <= 1 or n_items <= 1:
        return [worker(k) for k in range(n_items)]
    ctx = multiprocessing.get_context("fork")
    chunk = max(1, n_items // (threads * 4))
    with ctx.Pool(processes=threads) as pool:
        return pool.map(worker, range(n_items), chunksize=chunk)


def _warm_kernels(model: SdeModel, epsilon: float):
    """Compile the hot kernels in the parent before any fork."""
    if model.gamma_linear_in_z:
        _kernels.step_kernel_for(model)
    params = model.jump_law.normal_params
    if params is not None and model.jump_law.intensity_lambda > 0:
        rng = np.random.default_rng(0)
        _kernels.gaussian_cell_means(rng, 1, 1, params[0], params[1], epsilon)
        _kernels.gaussian_cell_draws(rng, 1, params[0], params[1], epsilon)


def _check_hypothesis(model: SdeModel, epsilon: float, mc_samples: int):
    if not mc_hypothesis_ok(model, epsilon, mc_samples):
        zd = model.constants.get("Z_d") or 0.0
        log.warning(
            "mc_samples=%d below the hypothesis (1 v eps^-2 Z_d)^2 = %.4g "
            "(eps=%g, Z_d=%.4g); reproducing anyway",
            mc_samples, max(1.0, zd / epsilon ** 2) ** 2, epsilon, zd)


# -- strong convergence vs mesh ----------------------------------------------

def _worker_convergence(k: int):
    c = _CTX
    noise = NoiseRealization.generate(c["seed"], c["tag"], k, c["fine_map"],
                                      c["tlaw"])
    ref = run_arms(c["model"], coarsen_noise(noise, c["fine_map"]),
                   [(0.0, c["x0"])], c["mc_samples"])[0]
    terms, divs = [], []
    for dmap in c["maps"]:
        out = run_arms(c["model"], coarsen_noise(noise, dmap),
                       [(0.0, c["x0"])], c["mc_samples"])[0]
        terms.append(out.terminal)
        divs.append(out.diverged_at >= 0)
    return ref.terminal, ref.diverged_at >= 0, terms, divs


def strong_convergence(model: SdeModel, meshes, ref_mesh: float, epsilon: float,
                       mc_samples: int, n_paths: int, T: float, x0: float,
                       p: float = 2.0, seed: int = DEFAULT_SEED,
                       threads: int = 1,
                       tag: str = "convergence") -> tuple[ErrorTable, SlopeFit]:
    """Coupled fine-reference vs coarse-run terminal errors over a mesh sweep."""
    meshes = sorted(set(float(m) for m in meshes), reverse=True)
    if not meshes:
        raise ValueError("need at least one mesh")
    if ref_mesh > min(meshes):
        raise ValueError("ref_mesh must be at least as fine as every compared mesh")
    n_ref = _cells_for(T, ref_mesh, dyadic=True)
    fine_map = build_uniform_grid(n_ref, T)
    maps = [build_uniform_grid(_cells_for(T, m, dyadic=True), T) for m in meshes]
    tlaw = truncate(model.jump_law, epsilon)
    _check_hypothesis(model, epsilon, mc_samples)
    _warm_kernels(model, epsilon)
    _set_ctx(model=model, tlaw=tlaw, fine_map=fine_map, maps=maps, x0=x0,
             mc_samples=mc_samples, seed=seed, tag=tag)
    results = _parallel_map(_worker_convergence, n_paths, threads)
    ref_terms = np.array([r[0] for r in results])
    ref_div = np.array([r[1] for r in results])
    rows, errs = [], []
    for i, mesh in enumerate(meshes):
        terms = np.array([r[2][i] for r in results])
        div = np.array([r[3][i] for r in results]) | ref_div
        keep = ~div
        err, se = (_lp_with_se(terms[keep] - ref_terms[keep], p)
                   if keep.any() else (math.nan, math.nan))
        rows.append({"mesh": mesh, "lp_error": err, "p": p, "n_paths": n_paths,
                     "n_diverged": int(div.sum()), "seed": seed})
        errs.append(se)
    table = ErrorTable("convergence", rows, errs)
    return table, _fit_or_nan(table)


# -- stability in the initial value --------------------------------------------

def _worker_stability(k: int):
    c = _CTX
    noise = NoiseRealization.generate(c["seed"], c["tag"], k, c["run_map"],
                                      c["tlaw"])
    outs = run_arms(c["model"], coarsen_noise(noise, c["run_map"]),
                    c["starts"], c["mc_samples"])
    return [o.terminal for o in outs], [o.diverged_at >= 0 for o in outs]


def stability_initial_value(model: SdeModel, gaps, mesh: float, epsilon: float,
                            mc_samples: int, n_paths: int, T: float, x0: float,
                            p: float = 2.0, seed: int = DEFAULT_SEED,
                            threads: int = 1,
                            tag: str = "stability") -> tuple[ErrorTable, SlopeFit]:
    """Error between two runs started at x0 and x0+gap under shared noise."""
    gaps = [float(g) for g in gaps]
    if len(set(gaps)) != len(gaps):
        raise ValueError("gaps must be unique")
    if any(g < 0 for g in gaps):
        raise ValueError("gaps must be nonnegative")
    run_map = build_uniform_grid(_cells_for(T, mesh, dyadic=False), T)
    tlaw = truncate(model.jump_law, epsilon)
    _check_hypothesis(model, epsilon, mc_samples)
    _warm_kernels(model, epsilon)
    starts = [(0.0, x0)] + [(0.0, x0 + g) for g in gaps]
    _set_ctx(model=model, tlaw=tlaw, run_map=run_map, starts=starts,
             mc_samples=mc_samples, seed=seed, tag=tag)
    results = _parallel_map(_worker_stability, n_paths, threads)
    terms = np.array([r[0] for r in results])
    divs = np.array([r[1] for r in results])
    rows, errs = [], []
    for i, g in enumerate(gaps):
        div = divs[:, 0] | divs[:, i + 1]
        keep = ~div
        err, se = (_lp_with_se(terms[keep, i + 1] - terms[keep, 0], p)
                   if keep.any() else (math.nan, math.nan))
        rows.append({"gap": g, "lp_error": err, "p": p, "n_paths": n_paths,
                     "n_diverged": int(div.sum()), "seed": seed})
        errs.append(se)
    table = ErrorTable("stability", rows, errs)
    return table, _fit_or_nan(table)


# -- joint (gap x mesh) error surface ------------------------------------------

def _worker_heatmap(k: int):
    c = _CTX
    noise = NoiseRealization.generate(c["seed"], c["tag"], k, c["fine_map"],
                                      c["tlaw"])
    per_mesh = []
    for dmap in c["maps"]:
        outs = run_arms(c["model"], coarsen_noise(noise, dmap), c["starts"],
                        c["mc_samples"])
        per_mesh.append(([o.terminal for o in outs],
                         [o.diverged_at >= 0 for o in outs]))
    return per_mesh


def heatmap_joint(model: SdeModel, gaps, meshes, epsilon: float,
                  mc_samples: int, n_paths: int, T: float, x0: float,
                  p: float = 2.0, seed: int = DEFAULT_SEED, threads: int = 1,
                  tag: str = "heatmap") -> ErrorTable:
    """Coupled two-initial-value error on the full (gap, mesh) grid."""
    gaps = sorted(set(float(g) for g in gaps))
    meshes = sorted(set(float(m) for m in meshes))
    if any(g <= 0 for g in gaps):
        raise ValueError("gaps must be positive")
    maps = [build_uniform_grid(_cells_for(T, m, dyadic=True), T) for m in meshes]
    fine_map = maps[0]
    tlaw = truncate(model.jump_law, epsilon)
    _check_hypothesis(model, epsilon, mc_samples)
    _warm_kernels(model, epsilon)
    starts = [(0.0, x0)] + [(0.0, x0 + g) for g in gaps]
    _set_ctx(model=model, tlaw=tlaw, fine_map=fine_map, maps=maps,
             starts=starts, mc_samples=mc_samples, seed=seed, tag=tag)
    results = _parallel_map(_worker_heatmap, n_paths, threads)
    rows, errs = [], []
    for g_i, g in enumerate(gaps):
        for m_i, mesh in enumerate(meshes):
            terms = np.array([r[m_i][0] for r in results])
            divs = np.array([r[m_i][1] for r in results])
            div = divs[:, 0] | divs[:, g_i + 1]
            keep = ~div
            err, se = (_lp_with_se(terms[keep, g_i + 1] - terms[keep, 0], p)
                       if keep.any() else (math.nan, math.nan))
            rows.append({"gap": g, "mesh": mesh, "lp_error": err, "p": p,
                         "n_paths": n_paths, "n_diverged": int(div.sum()),
                         "seed": seed})
            errs.append(se)
    return ErrorTable("heatmap", rows, errs)


# -- initial-time perturbation --------------------------------------------------

def _worker_timeshift(k: int):
    c = _CTX
    noise = NoiseRealization.generate(c["seed"], c["tag"], k, c["run_map"],
                                      c["tlaw"])
    outs = run_arms(c["model"], coarsen_noise(noise, c["run_map"]),
                    c["starts"], c["mc_samples"])
    return [o.terminal for o in outs], [o.diverged_at >= 0 for o in outs]


def initial_time_perturbation(model: SdeModel, s_values, mesh: float,
                              epsilon: float, mc_samples: int, n_paths: int,
                              T: float, x0: float, p: float = 2.0,
                              seed: int = DEFAULT_SEED, threads: int = 1,
                              tag: str = "timeshift") -> ErrorTable:
    """Terminal error between runs started at s_values[0] and each later s.

    Start times must lie on the run grid so all arms share the same V blocks.
    """
    s_values = [float(s) for s in s_values]
    if len(s_values) < 2:
        raise ValueError("need a base start time plus at least one perturbed one")
    run_map = build_uniform_grid(_cells_for(T, mesh, dyadic=False), T)
    pts = run_map.points
    for s in s_values:
        if not (0.0 <= s < T):
            raise ValueError(f"start time {s} outside [0, T)")
        j = int(np.searchsorted(pts, s, side="left"))
        if not (j < pts.size and math.isclose(pts[j], s, rel_tol=0.0, abs_tol=1e-12)):
            raise ValueError(f"start time {s} is not a grid point of mesh {mesh}")
    tlaw = truncate(model.jump_law, epsilon)
    _check_hypothesis(model, epsilon, mc_samples)
    _warm_kernels(model, epsilon)
    starts = [(s, x0) for s in s_values]
    _set_ctx(model=model, tlaw=tlaw, run_map=run_map, starts=starts,
             mc_samples=mc_samples, seed=seed, tag=tag)
    results = _parallel_map(_worker_timeshift, n_paths, threads)
    terms = np.array([r[0] for r in results])
    divs = np.array([r[1] for r in results])
    base = s_values[0]
    rows, errs = [], []
    for i, s in enumerate(s_values[1:], start=1):
        div = divs[:, 0] | divs[:, i]
        keep = ~div
        err, se = (_lp_with_se(terms[keep, i] - terms[keep, 0], p)
                   if keep.any() else (math.nan, math.nan))
        rows.append({"ds": abs(s - base), "lp_error": err, "p": p,
                     "n_paths": n_paths, "n_diverged": int(div.sum()),
                     "seed": seed})
        errs.append(se)
    return ErrorTable("timeshift", rows, errs)
