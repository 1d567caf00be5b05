"""Jump laws: Levy measure nu(dz) = lambda * phi(z) dz, truncation, sampling.

The large-jump region is {|z| >= eps}; restricting nu to it and normalizing
gives the sampling law for jump sizes and compensator variates. Everything
here is 1-dimensional in z (the built-in laws); quadrature helpers double as
independent oracles for the samplers and for the jump-moment assumptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate


class QuadratureError(RuntimeError):
    """Quadrature failed to reach the requested absolute tolerance."""


def _norm_cdf(x: float, mean: float, std: float) -> float:
    return 0.5 * math.erfc(-(x - mean) / (std * math.sqrt(2.0)))


@dataclass(frozen=True)
class JumpLaw:
    """Jump-size law: intensity lambda plus the size distribution phi.

    size_density, size_cdf take a float and return a float; size_sampler
    takes (rng, n) and returns n i.i.d. sizes. normal_params is set for
    Gaussian built-ins and enables the compiled sampling kernels.
    """

    intensity_lambda: float
    size_density: Callable[[float], float]
    size_cdf: Callable[[float], float]
    size_sampler: Callable[[np.random.Generator, int], np.ndarray]
    normal_params: tuple[float, float] | None = None
    validate_density: bool = True

    def __post_init__(self):
        if self.intensity_lambda < 0:
            raise ValueError("intensity_lambda must be >= 0")
        if self.validate_density:
            total, err = integrate.quad(self.size_density, -np.inf, np.inf, limit=200)
            if abs(total - 1.0) > 1e-8:
                raise ValueError(f"size density integrates to {total}, not 1")


def gaussian_jump_law(mean: float, std: float, intensity_lambda: float) -> JumpLaw:
    """Jump sizes ~ N(mean, std^2) arriving at the given rate."""
    if std <= 0:
        raise ValueError("std must be positive")
    inv = 1.0 / (std * math.sqrt(2.0 * math.pi))
    two_var = 2.0 * std * std

    def density(z: float) -> float:
        return inv * math.exp(-((z - mean) ** 2) / two_var)

    def cdf(z: float) -> float:
        return _norm_cdf(z, mean, std)

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(mean, std, size=n)

    return JumpLaw(intensity_lambda, density, cdf, sampler,
                   normal_params=(mean, std), validate_density=False)


@dataclass(frozen=True)
class TruncatedJumpLaw:
    """nu restricted to {|z| >= eps}: finite mass nu(A_eps) = lambda * tail_prob."""

    base: JumpLaw
    epsilon: float
    tail_prob: float = field(init=False)
    mass: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        tail = 1.0 - self.base.size_cdf(self.epsilon) + self.base.size_cdf(-self.epsilon)
        object.__setattr__(self, "tail_prob", float(tail))
        object.__setattr__(self, "mass", float(self.base.intensity_lambda * tail))


def truncate(law: JumpLaw, epsilon: float) -> TruncatedJumpLaw:
    """Restrict the jump law to sizes with |z| >= epsilon."""
    return TruncatedJumpLaw(law, float(epsilon))


def sample_truncated_size(tlaw: TruncatedJumpLaw, rng: np.random.Generator,
                          n: int | None = None) -> float | np.ndarray:
    """Draw sizes from the normalized restriction of nu to {|z| >= eps}.

    Rejection from the base sampler; exact for any size law.
    """
    if tlaw.mass <= 0.0:
        raise ValueError("truncated law has zero mass; nothing to condition on")
    want = 1 if n is None else int(n)
    out = np.empty(want)
    have = 0
    # acceptance probability is tail_prob; oversample modestly
    while have < want:
        need = want - have
        chunk = max(64, int(need / max(tlaw.tail_prob, 1e-12) * 1.2) + 16)
        cand = tlaw.base.size_sampler(rng, chunk)
        acc = cand[np.abs(cand) >= tlaw.epsilon]
        take = min(acc.size, need)
        out[have:have + take] = acc[:take]
        have += take
    return float(out[0]) if n is None else out


class TruncatedSampleStream:
    """Buffered rejection stream over one RNG.

    Consecutive draw(k) calls return the same accepted sequence regardless of
    call partitioning, so per-cell consumption and bulk consumption agree.
    """

    def __init__(self, tlaw: TruncatedJumpLaw, rng: np.random.Generator,
                 chunk: int = 65536):
        if tlaw.mass <= 0.0:
            raise ValueError("truncated law has zero mass")
        self._tlaw = tlaw
        self._rng = rng
        self._chunk = int(chunk)
        self._buf = np.empty(0)
        self._pos = 0

    def draw(self, k: int) -> np.ndarray:
        parts = [self._buf[self._pos:]]
        have = parts[0].size
        while have < k:
            cand = self._tlaw.base.size_sampler(self._rng, self._chunk)
            acc = cand[np.abs(cand) >= self._tlaw.epsilon]
            parts.append(acc)
            have += acc.size
        flat = np.concatenate(parts) if len(parts) > 1 else parts[0]
        self._buf = flat
        self._pos = k
        return flat[:k]


@dataclass(frozen=True)
class JumpEventStream:
    """Jumps of size >= eps on an interval: (time, size) pairs sorted by time."""

    t0: float
    t1: float
    times: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        if self.times.size != self.sizes.size:
            raise ValueError("times and sizes must have equal length")

    @property
    def count(self) -> int:
        return int(self.times.size)


def sample_jump_events(tlaw: TruncatedJumpLaw, t0: float, t1: float,
                       rng: np.random.Generator) -> JumpEventStream:
    """Poisson(mass * (t1-t0)) events, times uniform on (t0, t1], sizes from nu_eps."""
    if t0 >= t1:
        raise ValueError("need t0 < t1")
    if tlaw.mass <= 0.0:
        return JumpEventStream(t0, t1, np.empty(0), np.empty(0))
    count = int(rng.poisson(tlaw.mass * (t1 - t0)))
    if count == 0:
        return JumpEventStream(t0, t1, np.empty(0), np.empty(0))
    # u in [0,1) mapped to (t0, t1] so the left endpoint is excluded
    times = t1 - rng.random(count) * (t1 - t0)
    order = np.argsort(times, kind="stable")
    times = times[order]
    sizes = np.asarray(sample_truncated_size(tlaw, rng, count))
    return JumpEventStream(t0, t1, times, sizes)


def truncated_moment(tlaw: TruncatedJumpLaw, f: Callable[[float], float],
                     abs_tol: float = 1e-10) -> float:
    """Quadrature oracle for integral of f(z) nu(dz) over {|z| >= eps}.

    Adaptive quadrature on both tails; raises QuadratureError if the combined
    error estimate exceeds abs_tol.
    """
    lam = tlaw.base.intensity_lambda
    if lam == 0.0:
        return 0.0
    phi = tlaw.base.size_density

    def integrand(z: float) -> float:
        return f(z) * phi(z)

    lo, err_lo = integrate.quad(integrand, -np.inf, -tlaw.epsilon,
                                epsabs=abs_tol / 10, epsrel=1e-13, limit=400)
    hi, err_hi = integrate.quad(integrand, tlaw.epsilon, np.inf,
                                epsabs=abs_tol / 10, epsrel=1e-13, limit=400)
    if err_lo + err_hi > abs_tol:
        raise QuadratureError(
            f"tail quadrature error {err_lo + err_hi:.3e} exceeds {abs_tol:.1e}")
    return lam * (lo + hi)


def small_jump_moment(law: JumpLaw, f: Callable[[float], float], epsilon: float,
                      abs_tol: float = 1e-10) -> float:
    """Quadrature of f(z) nu(dz) over {|z| <= eps} (small-jump remainder probes)."""
    lam = law.intensity_lambda
    if lam == 0.0:
        return 0.0
    phi = law.size_density
    val, err = integrate.quad(lambda z: f(z) * phi(z), -epsilon, epsilon,
                              epsabs=abs_tol / 2, limit=400)
    if err > abs_tol:
        raise QuadratureError(f"small-jump quadrature error {err:.3e}")
    return lam * val
