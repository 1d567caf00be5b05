"""Fully implementable tamed Euler stepper for Levy-driven SDEs.

One step over a cell (t_j, t_{j+1}] of length dt, anchored at the state x
held at max{s, t_j}:

    x_next = x + mu_tamed(x) * dt + sigma_tamed(x) * dW
               + sum_k gamma(x, z_k)            (jumps with |z| >= eps in the cell)
               - mass/M * sum_i gamma(x, V_i) * dt   (Monte Carlo compensator)

Noise realizations live on a fine grid and can be coarsened exactly onto any
nested grid, so runs at different meshes, initial values, or initial times
share the same Brownian path and jump stream. Compensator variates are drawn
per (path, grid) from their own stream, one block of M per cell in cell order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, streams
from .grid import DiscretizationMap
from .levy import TruncatedJumpLaw, TruncatedSampleStream, sample_jump_events, \
    sample_truncated_size
from .model import SdeModel, tame

log = logging.getLogger(__name__)

_warned_configs: set = set()


def mc_hypothesis_ok(model: SdeModel, epsilon: float, mc_samples: int) -> bool:
    """Whether M >= (1 v eps^-2 Z_d)^2, the Monte Carlo sample-size hypothesis."""
    zd = model.constants.get("Z_d") or 0.0
    return mc_samples >= max(1.0, zd / (epsilon * epsilon)) ** 2


def _warn_mc_hypothesis(model: SdeModel, epsilon: float, mc_samples: int):
    key = (model.name, epsilon, mc_samples)
    if key not in _warned_configs:
        _warned_configs.add(key)
        zd = model.constants.get("Z_d") or 0.0
        log.warning(
            "mc_samples=%d is below the sample-size hypothesis (1 v eps^-2 Z_d)^2 "
            "= %.4g for eps=%g, Z_d=%.4g; proceeding anyway",
            mc_samples, max(1.0, zd / epsilon ** 2) ** 2, epsilon, zd)


@dataclass(frozen=True)
class SchemeConfig:
    """One run of the scheme: start (s, x), grid, truncation level, M."""

    start_time: float
    initial_value: float
    dmap: DiscretizationMap
    epsilon: float
    mc_samples: int
    record_full_path: bool = False

    def __post_init__(self):
        T = self.dmap.horizon_T
        if not 0.0 <= self.start_time <= T:
            raise ValueError(f"start_time {self.start_time} outside [0, {T}]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


@dataclass(frozen=True)
class PathResult:
    terminal_value: float
    trajectory: tuple[np.ndarray, np.ndarray] | None
    diagnostics: dict


@dataclass(frozen=True)
class NoiseRealization:
    """Shared randomness for one path: fine Brownian increments + jump stream.

    Compensator variates are not stored; they are re-derived on demand per
    run grid from the (master seed, tag, path index) address.
    """

    fine_map: DiscretizationMap
    tlaw: TruncatedJumpLaw
    brownian: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    master_seed: int
    tag: str
    path_index: int

    @classmethod
    def generate(cls, master_seed: int, tag: str, path_index: int,
                 fine_map: DiscretizationMap,
                 tlaw: TruncatedJumpLaw) -> "NoiseRealization":
        rng_b = streams.path_stream(master_seed, tag, path_index, streams.BROWNIAN)
        gaps = fine_map.grid.gaps()
        dw = rng_b.standard_normal(fine_map.n_cells) * np.sqrt(gaps)
        if tlaw.mass > 0.0:
            rng_j = streams.path_stream(master_seed, tag, path_index, streams.JUMPS)
            ev = sample_jump_events(tlaw, 0.0, fine_map.horizon_T, rng_j)
            times, sizes = ev.times, ev.sizes
        else:
            times, sizes = np.empty(0), np.empty(0)
        return cls(fine_map, tlaw, dw, times, sizes, master_seed, tag, path_index)

    def compensator_rng(self, run_key: int) -> np.random.Generator:
        return streams.path_stream(self.master_seed, self.tag, self.path_index,
                                   streams.COMPENSATOR, run_key)


@dataclass(frozen=True)
class CoarseNoiseView:
    """The realization's increments and jumps re-binned onto a nested grid."""

    noise: NoiseRealization
    dmap: DiscretizationMap
    boundaries: np.ndarray   # fine indices of this grid's points
    dW: np.ndarray           # per-cell Brownian increments
    event_cells: np.ndarray  # cell index of each jump event
    zsum: np.ndarray         # per-cell sum of jump sizes
    run_key: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "run_key", int(self.dmap.n_cells))


def coarsen_noise(noise: NoiseRealization,
                  target: DiscretizationMap) -> CoarseNoiseView:
    """Exact re-binning onto a grid whose cells are unions of fine cells."""
    fine_pts = noise.fine_map.points
    pts = target.points
    idx = np.searchsorted(fine_pts, pts)
    ok = (idx < fine_pts.size) & np.isclose(fine_pts[np.minimum(idx, fine_pts.size - 1)],
                                            pts, rtol=0.0, atol=1e-12)
    if not np.all(ok):
        raise ValueError("target grid is not nested in the fine grid")
    dw = np.add.reduceat(noise.brownian, idx[:-1])
    n_cells = target.n_cells
    if noise.jump_times.size:
        cells = np.searchsorted(pts, noise.jump_times, side="left") - 1
        cells = np.clip(cells, 0, n_cells - 1)
        zsum = np.bincount(cells, weights=noise.jump_sizes, minlength=n_cells)
    else:
        cells = np.empty(0, dtype=int)
        zsum = np.zeros(n_cells)
    return CoarseNoiseView(noise, target, idx, dw, cells, zsum)


def mc_compensator(model: SdeModel, tlaw: TruncatedJumpLaw, x, mc_samples: int,
                   rng: np.random.Generator):
    """Monte Carlo compensator estimate mass/M * sum_i gamma(x, V_i)."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    if tlaw.mass <= 0.0:
        return 0.0 if np.ndim(x) == 0 else np.zeros(np.shape(x))
    draws = sample_truncated_size(tlaw, rng, mc_samples)
    vals = np.asarray(model.jump_coef(x, draws), dtype=float)
    return tlaw.mass * vals.mean(axis=0)


def step(model: SdeModel, mesh: float, x_prev: float, dW: float,
         jump_sum: float, comp_est: float, dt: float) -> float:
    """One scheme step; comp_est is the compensator value (applied times dt)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if model.tamed:
        mu_t, sig_t = tame(model, mesh, x_prev)
    else:
        mu_t, sig_t = model.drift(x_prev), model.diffusion(x_prev)
    return x_prev + mu_t * dt + sig_t * dW + jump_sum - comp_est * dt


# -- per-run compensator data -------------------------------------------------

def _cell_comp_means(noise: NoiseRealization, run_key: int, n_cells: int,
                     mc_samples: int) -> np.ndarray:
    """mass * (mean of M truncated draws) for every cell, in cell order."""
    tlaw = noise.tlaw
    if tlaw.mass <= 0.0:
        return np.zeros(n_cells)
    rng = noise.compensator_rng(run_key)
    params = tlaw.base.normal_params
    if params is not None:
        means = _kernels.gaussian_cell_means(rng, n_cells, mc_samples,
                                             params[0], params[1], tlaw.epsilon)
    else:
        stream_ = TruncatedSampleStream(tlaw, rng)
        means = np.empty(n_cells)
        for j in range(n_cells):
            means[j] = stream_.draw(mc_samples).sum() / mc_samples
    return tlaw.mass * means


class _CellDraws:
    """Per-cell blocks of M compensator variates, consumed in cell order.

    Stream-compatible with _cell_comp_means: cell j sees the same draws.
    """

    def __init__(self, noise: NoiseRealization, run_key: int, mc_samples: int):
        self.tlaw = noise.tlaw
        self.m = mc_samples
        self._rng = noise.compensator_rng(run_key)
        params = self.tlaw.base.normal_params
        self._gauss = params
        if params is None and self.tlaw.mass > 0.0:
            self._stream = TruncatedSampleStream(self.tlaw, self._rng)

    def next_block(self) -> np.ndarray | None:
        if self.tlaw.mass <= 0.0:
            return None
        if self._gauss is not None:
            return _kernels.gaussian_cell_draws(
                self._rng, self.m, self._gauss[0], self._gauss[1], self.tlaw.epsilon)
        return self._stream.draw(self.m)


# -- arm preparation and engines ----------------------------------------------

@dataclass
class _Arm:
    s: float
    x0: float
    start_cell: int
    partial: bool
    dt0: float = 0.0
    dW0: float = 0.0
    zsum0: float = 0.0
    jumps_in_scope: int = 0


@dataclass(frozen=True)
class ArmOutcome:
    terminal: float
    diverged_at: int          # cell index, -1 if none
    n_jumps: int
    n_steps: int
    times: np.ndarray | None
    states: np.ndarray | None


def _prepare_arm(view: CoarseNoiseView, s: float, x0: float) -> _Arm:
    pts = view.dmap.points
    noise = view.noise
    idx = int(np.searchsorted(pts, s, side="left"))
    on_grid = idx < pts.size and (pts[idx] == s or math.isclose(pts[idx], s,
                                                                rel_tol=0.0,
                                                                abs_tol=1e-12))
    if on_grid:
        arm = _Arm(float(pts[idx]), x0, idx, False)
    else:
        c = idx - 1
        fine_pts = noise.fine_map.points
        fidx = int(np.searchsorted(fine_pts, s, side="left"))
        if fidx >= fine_pts.size or not math.isclose(fine_pts[fidx], s,
                                                     rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(
                f"start time {s} lies on neither the run grid nor the fine grid")
        dt0 = float(pts[c + 1] - s)
        dW0 = float(noise.brownian[fidx:view.boundaries[c + 1]].sum())
        mask = (noise.jump_times > s) & (noise.jump_times <= pts[c + 1])
        arm = _Arm(s, x0, c, True, dt0, dW0, float(noise.jump_sizes[mask].sum()))
    if noise.jump_times.size:
        arm.jumps_in_scope = int(np.count_nonzero(noise.jump_times > arm.s))
    return arm


def _run_arm_linear(model: SdeModel, view: CoarseNoiseView, arm: _Arm,
                    vcomp: np.ndarray, record: bool,
                    kernel) -> ArmOutcome:
    gaps = view.dmap.grid.gaps()
    dt, dw, zs = gaps, view.dW, view.zsum
    start = arm.start_cell
    if arm.partial:
        dt = gaps[start:].copy()
        dw = view.dW[start:].copy()
        zs = view.zsum[start:].copy()
        vc = vcomp[start:]
        dt[0], dw[0], zs[0] = arm.dt0, arm.dW0, arm.zsum0
        start = 0
    else:
        vc = vcomp
    n_steps = dt.shape[0] - start
    traj = np.full(n_steps + 1, np.nan) if record else np.zeros(1)
    root_mesh = math.sqrt(view.dmap.mesh)
    if kernel is not None:
        x, div = kernel(arm.x0, start, dt, dw, zs, vc, root_mesh,
                        float(model.chi), model.tamed, traj, record)
    else:
        x, div = _python_linear_loop(model, arm.x0, start, dt, dw, zs, vc,
                                     root_mesh, traj, record)
    times, states = None, None
    if record:
        pts = view.dmap.points
        after = pts[arm.start_cell + 1:]
        times = np.concatenate(([arm.s], after))
        states = traj
    return ArmOutcome(float(x), int(div), arm.jumps_in_scope, n_steps,
                      times, states)


def _python_linear_loop(model, x0, start, dt, dw, zs, vc, root_mesh,
                        traj, record):
    """Reference implementation of the compiled recursion, same semantics."""
    x = x0
    if record:
        traj[0] = x
    div = -1
    gamma = model.jump_coef
    for j in range(start, dt.shape[0]):
        if model.tamed:
            denom = math.sqrt(1.0 + root_mesh * abs(x) ** model.chi)
        else:
            denom = 1.0
        x = (x
             + (model.drift(x) / denom) * dt[j]
             + (model.diffusion(x) / denom) * dw[j]
             + gamma(x, zs[j])
             - gamma(x, vc[j]) * dt[j])
        if record:
            traj[j - start + 1] = x
        if not math.isfinite(x):
            div = j
            break
    return x, div


def _run_arms_general(model: SdeModel, view: CoarseNoiseView, arms: list[_Arm],
                      mc_samples: int, record: bool) -> list[ArmOutcome]:
    """One pass over cells for all arms; V blocks drawn once per cell."""
    noise = view.noise
    mass = noise.tlaw.mass
    draws = _CellDraws(noise, view.run_key, mc_samples)
    pts = view.dmap.points
    gaps = view.dmap.grid.gaps()
    n = view.dmap.n_cells
    ev_order = np.argsort(view.event_cells, kind="stable")
    ev_cells = view.event_cells[ev_order]
    ev_sizes = noise.jump_sizes[ev_order]
    ev_times = noise.jump_times[ev_order]
    cell_lo = np.searchsorted(ev_cells, np.arange(n), side="left")
    cell_hi = np.searchsorted(ev_cells, np.arange(n), side="right")

    x = np.array([a.x0 for a in arms])
    div = np.full(len(arms), -1, dtype=int)
    trajs = [np.full(n - a.start_cell + 1, np.nan) for a in arms] if record else None
    if record:
        for i, a in enumerate(arms):
            trajs[i][0] = a.x0
    for j in range(n):
        vblock = draws.next_block()
        for i, a in enumerate(arms):
            if j < a.start_cell or div[i] >= 0:
                continue
            if a.partial and j == a.start_cell:
                dt, dw = a.dt0, a.dW0
                lo, hi = cell_lo[j], cell_hi[j]
                sizes = ev_sizes[lo:hi][ev_times[lo:hi] > a.s]
            else:
                dt, dw = float(gaps[j]), float(view.dW[j])
                sizes = ev_sizes[cell_lo[j]:cell_hi[j]]
            xi = x[i]
            if model.tamed:
                denom = math.sqrt(1.0 + math.sqrt(view.dmap.mesh) * abs(xi) ** model.chi)
            else:
                denom = 1.0
            jump_sum = float(np.sum(model.jump_coef(xi, sizes))) if sizes.size else 0.0
            comp = mass * float(np.mean(model.jump_coef(xi, vblock))) \
                if vblock is not None else 0.0
            xi = (xi + (model.drift(xi) / denom) * dt
                  + (model.diffusion(xi) / denom) * dw
                  + jump_sum - comp * dt)
            x[i] = xi
            if record:
                trajs[i][j - a.start_cell + 1] = xi
            if not math.isfinite(xi):
                div[i] = j
    out = []
    for i, a in enumerate(arms):
        times = states = None
        if record:
            after = pts[a.start_cell + 1:]
            times = np.concatenate(([a.s], after))
            states = trajs[i]
        out.append(ArmOutcome(float(x[i]), int(div[i]), a.jumps_in_scope,
                              n - a.start_cell, times, states))
    return out


def run_arms(model: SdeModel, view: CoarseNoiseView,
             starts: list[tuple[float, float]], mc_samples: int,
             record: bool = False) -> list[ArmOutcome]:
    """Simulate several (start_time, initial_value) arms on one shared view.

    All arms on the same grid share the Brownian increments, the jump stream,
    and the compensator variates V (indexed by grid cell). Results for an arm
    do not depend on which other arms are present.
    """
    if model.dim_d != 1 or model.dim_m != 1:
        raise NotImplementedError("the stepper is implemented for d = m = 1")
    T = view.dmap.horizon_T
    arms = []
    outcomes: dict[int, ArmOutcome] = {}
    live = []
    for i, (s, x0) in enumerate(starts):
        if not 0.0 <= s <= T:
            raise ValueError(f"start time {s} outside [0, {T}]")
        if s >= T or math.isclose(s, T, rel_tol=0.0, abs_tol=1e-12):
            outcomes[i] = ArmOutcome(float(x0), -1, 0, 0,
                                     np.array([T]) if record else None,
                                     np.array([float(x0)]) if record else None)
        else:
            arms.append(_prepare_arm(view, s, float(x0)))
            live.append(i)
    if arms:
        if model.gamma_linear_in_z:
            vcomp = _cell_comp_means(view.noise, view.run_key,
                                     view.dmap.n_cells, mc_samples)
            kernel = _kernels.step_kernel_for(model)
            for i, arm in zip(live, arms):
                outcomes[i] = _run_arm_linear(model, view, arm, vcomp,
                                              record, kernel)
        else:
            for i, res in zip(live, _run_arms_general(model, view, arms,
                                                      mc_samples, record)):
                outcomes[i] = res
    return [outcomes[i] for i in range(len(starts))]


def simulate_path(model: SdeModel, config: SchemeConfig,
                  noise: NoiseRealization) -> PathResult:
    """Run the scheme once on config.dmap using the given realization."""
    if not 0.0 < config.epsilon < 1.0 or config.epsilon != noise.tlaw.epsilon:
        raise ValueError("config.epsilon must match the realization's truncation")
    if not mc_hypothesis_ok(model, config.epsilon, config.mc_samples):
        _warn_mc_hypothesis(model, config.epsilon, config.mc_samples)
    view = coarsen_noise(noise, config.dmap)
    out = run_arms(model, view, [(config.start_time, config.initial_value)],
                   config.mc_samples, record=config.record_full_path)[0]
    diagnostics = {
        "n_jumps": out.n_jumps,
        "n_compensator_draws": config.dmap.n_cells * config.mc_samples
        if noise.tlaw.mass > 0 else 0,
        "diverged": out.diverged_at >= 0,
        "diverged_at": (float(config.dmap.points[out.diverged_at + 1])
                        if out.diverged_at >= 0 else None),
        "mc_hypothesis_ok": mc_hypothesis_ok(model, config.epsilon,
                                             config.mc_samples),
        "n_steps": out.n_steps,
    }
    traj = (out.times, out.states) if config.record_full_path else None
    return PathResult(out.terminal, traj, diagnostics)
