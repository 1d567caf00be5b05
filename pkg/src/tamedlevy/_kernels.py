"""Compiled hot loops: truncated-normal draws and the scalar step recursion.

The kernels consume RNG streams one candidate at a time, which numpy's bulk
generation provably matches draw-for-draw, so the pure-Python engine and the
compiled one see identical noise. Compilation happens lazily on first use;
the step kernel is specialized per coefficient pair and memoized.
"""

from __future__ import annotations

import math

import numpy as np

_kernel_cache: dict = {}
_gauss_kernels: dict = {}


def _build_gauss_kernels():
    import numba

    @numba.njit(cache=True)
    def cell_means(rng, out, M, mean, std, eps):
        # per-cell mean of M accepted draws; rejection on |z| >= eps
        n = out.shape[0]
        for j in range(n):
            s = 0.0
            k = 0
            while k < M:
                z = mean + std * rng.standard_normal()
                if z >= eps or z <= -eps:
                    s += z
                    k += 1
            out[j] = s / M
        return out

    @numba.njit(cache=True)
    def cell_draws(rng, out, mean, std, eps):
        # fill one cell's block of draws; same consumption order as cell_means
        M = out.shape[0]
        k = 0
        while k < M:
            z = mean + std * rng.standard_normal()
            if z >= eps or z <= -eps:
                out[k] = z
                k += 1
        return out

    return cell_means, cell_draws


def gaussian_cell_means(rng: np.random.Generator, n_cells: int, M: int,
                        mean: float, std: float, eps: float) -> np.ndarray:
    """Means of M truncated N(mean, std^2) draws for each of n_cells cells."""
    if "means" not in _gauss_kernels:
        _gauss_kernels["means"], _gauss_kernels["draws"] = _build_gauss_kernels()
    out = np.empty(n_cells)
    _gauss_kernels["means"](rng, out, M, mean, std, eps)
    return out


def gaussian_cell_draws(rng: np.random.Generator, M: int,
                        mean: float, std: float, eps: float) -> np.ndarray:
    """One cell's block of M truncated draws (stream-compatible with means)."""
    if "draws" not in _gauss_kernels:
        _gauss_kernels["means"], _gauss_kernels["draws"] = _build_gauss_kernels()
    out = np.empty(M)
    _gauss_kernels["draws"](rng, out, mean, std, eps)
    return out


def step_kernel_for(model):
    """Compiled scalar recursion for a 1-D model with gamma(x,z) = gamma1(x)*z.

    Returns None if the coefficients cannot be jit-compiled.
    """
    key = (model.drift, model.diffusion, model.jump_coef)
    if key in _kernel_cache:
        return _kernel_cache[key]
    try:
        import numba

        drift = numba.njit(model.drift, cache=False)
        diffusion = numba.njit(model.diffusion, cache=False)
        gamma = numba.njit(model.jump_coef, cache=False)

        @numba.njit(cache=False)
        def run(x0, start, dt, dW, zsum, vcomp, root_mesh, chi, tamed,
                traj, record):
            x = x0
            diverged_at = -1
            if record:
                traj[0] = x
            n = dt.shape[0]
            for j in range(start, n):
                if tamed:
                    denom = math.sqrt(1.0 + root_mesh * abs(x) ** chi)
                else:
                    denom = 1.0
                x = (x
                     + (drift(x) / denom) * dt[j]
                     + (diffusion(x) / denom) * dW[j]
                     + gamma(x, zsum[j])
                     - gamma(x, vcomp[j]) * dt[j])
                if record:
                    traj[j - start + 1] = x
                if not math.isfinite(x):
                    diverged_at = j
                    break
            return x, diverged_at

        # force compilation now so failures fall back cleanly
        run(1.0, 0, np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1),
            0.1, 1.0, True, np.zeros(2), False)
        _kernel_cache[key] = run
    except Exception:
        _kernel_cache[key] = None
    return _kernel_cache[key]
