"""SDE models: coefficient triples, taming transform, and assumption probes.

A model bundles drift mu, diffusion sigma, and jump coefficient gamma with
the taming exponent chi, the moment exponent p0, a jump law, and the growth
constants (declared or estimated by quadrature). Probes sample the state
space and report estimated constants with worst-case witnesses; they can
falsify or support the assumptions, never prove them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .levy import JumpLaw, gaussian_jump_law, small_jump_moment


@dataclass(frozen=True)
class SdeModel:
    """Coefficient triple (mu, sigma, gamma) with exponents and constants.

    Coefficients are pure callables; drift/diffusion map state to state (scalar
    in and out for dim_d = 1), gamma takes (state, z) with z a float or a 1-D
    array of sizes and is vectorized over z. Models are immutable; callables
    must be re-entrant.
    """

    name: str
    drift: Callable
    diffusion: Callable
    jump_coef: Callable
    chi: float
    p0: float
    jump_law: JumpLaw
    dim_d: int = 1
    dim_m: int = 1
    constants: dict = field(default_factory=dict)
    gamma_linear_in_z: bool = False
    tamed: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tamed and self.chi < 1:
            raise ValueError("taming exponent chi must be >= 1")
        if self.p0 < 2:
            raise ValueError("moment exponent p0 must be >= 2")
        for x in (0.0, 0.5, -1.0, 2.0):
            if not (np.all(np.isfinite(self.drift(x)))
                    and np.all(np.isfinite(self.diffusion(x)))):
                raise ValueError(f"drift/diffusion not finite at probe x={x}")

    def state_norm(self, x) -> float:
        if np.ndim(x) == 0:
            return abs(float(x))
        return float(np.linalg.norm(np.asarray(x, dtype=float)))


def tame(model: SdeModel, mesh: float, x):
    """Tamed coefficients at x: xi(x) / (1 + mesh^(1/2) * ||x||^chi)^(1/2)."""
    if mesh <= 0:
        raise ValueError("mesh must be positive")
    denom = math.sqrt(1.0 + math.sqrt(mesh) * model.state_norm(x) ** model.chi)
    if np.ndim(x) == 0:
        return model.drift(x) / denom, model.diffusion(x) / denom
    return (np.asarray(model.drift(x)) / denom,
            np.asarray(model.diffusion(x)) / denom)


@dataclass(frozen=True)
class TamedCoefficients:
    """Per-mesh view of the (possibly tamed) drift and diffusion."""

    base: SdeModel
    mesh: float

    def drift(self, x):
        if not self.base.tamed:
            return self.base.drift(x)
        return tame(self.base, self.mesh, x)[0]

    def diffusion(self, x):
        if not self.base.tamed:
            return self.base.diffusion(x)
        return tame(self.base, self.mesh, x)[1]


def pstar(p0: float, chi: float, zeta: float = 0.01) -> float:
    """Maximal admissible error exponent for given (p0, chi) and slack zeta."""
    if p0 < 2 or chi < 1 or zeta <= 0:
        raise ValueError("need p0 >= 2, chi >= 1, zeta > 0")
    t1 = 2.0 * p0 / (chi + 2.0) - zeta
    t2 = 2.0 * p0 / (3.0 * chi + 2.0)
    cz = chi * zeta
    t3 = (-cz + math.sqrt(cz * (cz + 8.0 * p0))) / (2.0 * chi)
    return min(t1, t2, t3)


def _full_moment(law: JumpLaw, g: Callable[[float], float],
                 abs_tol: float = 1e-9) -> float:
    """Integral of g(z) nu(dz) over all z."""
    lam = law.intensity_lambda
    if lam == 0.0:
        return 0.0
    val, _ = integrate.quad(lambda z: g(z) * law.size_density(z),
                            -np.inf, np.inf, epsabs=abs_tol, limit=400)
    return lam * val


def estimate_jump_constants(law: JumpLaw, p0: float, n_rho: int = 17) -> dict:
    """Quadrature estimates of the jump-moment constants for gamma(x,z) = x*z.

    m = sup over rho in [1, p0] of integral |z|^rho nu(dz); then L_d = N_d = m
    and Z_d = max(m, lambda) dominates both the (1 ^ z^2) integral and the
    small-jump bounds.
    """
    lam = law.intensity_lambda
    if lam == 0.0:
        return {"L": None, "L_d": 0.0, "N_d": 0.0, "Z_d": 0.0, "q": None}
    rhos = np.linspace(1.0, p0, n_rho)
    m = max(_full_moment(law, lambda z, r=r: abs(z) ** r) for r in rhos)
    return {"L": None, "L_d": m, "N_d": m, "Z_d": max(m, lam), "q": None}


# -- built-in models ---------------------------------------------------------

_JUMP_MEAN = 0.05
_JUMP_STD = 0.15


def make_model1(intensity_lambda: float, jump_mean: float = _JUMP_MEAN,
                jump_std: float = _JUMP_STD) -> SdeModel:
    """Polynomial-growth model: mu = x - x^3, sigma = x^2, gamma = x*z."""
    if intensity_lambda < 0:
        raise ValueError("intensity must be >= 0")
    law = gaussian_jump_law(jump_mean, jump_std, intensity_lambda)
    constants = estimate_jump_constants(law, 2.5)
    constants["L"] = 2.0
    return SdeModel(
        name="model1",
        drift=_model1_drift,
        diffusion=_model1_diffusion,
        jump_coef=_mult_jump,
        chi=4.0,
        p0=2.5,
        jump_law=law,
        constants=constants,
        gamma_linear_in_z=True,
        params={"lambda": intensity_lambda, "jump_mean": jump_mean,
                "jump_std": jump_std},
    )


def make_model2(a: float, b: float, c: float, intensity_lambda: float,
                jump_mean: float = _JUMP_MEAN,
                jump_std: float = _JUMP_STD) -> SdeModel:
    """3/2-volatility model: mu = a*x*(b - |x|), sigma = c*|x|^(3/2), gamma = x*z."""
    if min(a, b, c) < 0:
        raise ValueError("a, b, c must be >= 0")
    if c == 0:
        raise ValueError("c = 0 leaves the moment exponent p0 undefined")
    if intensity_lambda < 0:
        raise ValueError("intensity must be >= 0")
    p0 = 4.0 * a / (3.0 * c * c) + 1.0
    if p0 < 2.0:
        raise ValueError(f"p0 = 4a/(3c^2) + 1 = {p0} < 2; increase a or decrease c")
    law = gaussian_jump_law(jump_mean, jump_std, intensity_lambda)
    constants = estimate_jump_constants(law, p0)
    constants["L"] = 2.0 * a * b

    def drift(x):
        return a * x * (b - abs(x))

    def diffusion(x):
        return c * abs(x) ** 1.5

    return SdeModel(
        name="model2",
        drift=drift,
        diffusion=diffusion,
        jump_coef=_mult_jump,
        chi=2.0,
        p0=p0,
        jump_law=law,
        constants=constants,
        gamma_linear_in_z=True,
        params={"a": a, "b": b, "c": c, "lambda": intensity_lambda,
                "jump_mean": jump_mean, "jump_std": jump_std},
    )


def _model1_drift(x):
    return x - x ** 3


def _model1_diffusion(x):
    return x * x


def _mult_jump(x, z):
    return x * z


# -- assumption probes -------------------------------------------------------

@dataclass(frozen=True)
class ProbeVerdict:
    passed: bool
    constant: float | None
    witness: tuple | None
    detail: str


@dataclass(frozen=True)
class AssumptionReport:
    verdicts: dict
    pstar: float
    n_probe: int
    radius: float

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    def summary(self) -> str:
        lines = []
        for k in sorted(self.verdicts):
            v = self.verdicts[k]
            const = "n/a" if v.constant is None else f"{v.constant:.6g}"
            lines.append(f"{k}: {'pass' if v.passed else 'FAIL'}  "
                         f"constant~{const}  ({v.detail})")
        lines.append(f"pstar: {self.pstar:.6g}")
        return "\n".join(lines)


# Estimated constants on a tier of growing radii must stabilize; growth beyond
# this factor (plus an absolute floor for near-zero constants) is a failure.
_TIER_GROWTH = 1.25
_TIER_FLOOR = 0.5


def _tier_stable(tier_max: list[float]) -> bool:
    inner, outer = tier_max[0], tier_max[-1]
    return outer <= max(inner * _TIER_GROWTH, inner + _TIER_FLOOR)


def probe_assumptions(model: SdeModel, n_probe: int, radius: float,
                      rng: np.random.Generator, p: float = 2.0) -> AssumptionReport:
    """Statistical check of the coefficient assumptions on sampled states.

    Pairs are sampled in balls of radius r, 2r, 4r; a constant that keeps
    growing with the radius marks the assumption as failed, with the worst
    pair as witness. Jump-moment conditions are checked by quadrature at a
    subsample of states.
    """
    if n_probe < 100:
        raise ValueError("n_probe must be >= 100")
    verdicts: dict[str, ProbeVerdict] = {}
    tiers = [radius, 2.0 * radius, 4.0 * radius]

    def sample_pairs(r: float, n: int):
        x = rng.uniform(-r, r, size=n)
        y = rng.uniform(-r, r, size=n)
        keep = np.abs(x - y) > 1e-12
        return x[keep], y[keep]

    # A1: one-sided Lipschitz / monotonicity ratio
    tier_max, witness = [], None
    for r in tiers:
        x, y = sample_pairs(r, n_probe)
        dmu = np.array([model.drift(a) - model.drift(b) for a, b in zip(x, y)])
        dsig = np.array([model.diffusion(a) - model.diffusion(b)
                         for a, b in zip(x, y)])
        ratio = (2.0 * (x - y) * dmu + (model.p0 - 1.0) * dsig ** 2) / (x - y) ** 2
        i = int(np.argmax(ratio))
        tier_max.append(float(ratio[i]))
        witness = (float(x[i]), float(y[i]))
    ok = _tier_stable(tier_max)
    verdicts["A1_one_sided_lipschitz"] = ProbeVerdict(
        bool(ok), float(max(tier_max)), witness,
        f"tier maxima {['%.4g' % t for t in tier_max]}")

    # A2: polynomial Lipschitz ratio
    tier_max, witness = [], None
    half_chi = model.chi / 2.0
    for r in tiers:
        x, y = sample_pairs(r, n_probe)
        dmu = np.array([abs(model.drift(a) - model.drift(b)) for a, b in zip(x, y)])
        dsig = np.array([abs(model.diffusion(a) - model.diffusion(b))
                         for a, b in zip(x, y)])
        weight = np.abs(x - y) * (1.0 + np.abs(x) ** half_chi + np.abs(y) ** half_chi)
        ratio = np.maximum(dmu, dsig) / weight
        i = int(np.argmax(ratio))
        tier_max.append(float(ratio[i]))
        witness = (float(x[i]), float(y[i]))
    ok = _tier_stable(tier_max)
    verdicts["A2_polynomial_lipschitz"] = ProbeVerdict(
        bool(ok), float(max(tier_max)), witness,
        f"tier maxima {['%.4g' % t for t in tier_max]}")

    # A3/A4: jump-moment growth and Lipschitz constants by quadrature
    lam = model.jump_law.intensity_lambda
    if lam == 0.0:
        verdicts["A3_jump_growth"] = ProbeVerdict(True, 0.0, None, "no jumps")
        verdicts["A4_jump_lipschitz"] = ProbeVerdict(True, 0.0, None, "no jumps")
        verdicts["A5_small_jumps"] = ProbeVerdict(True, 0.0, None, "no jumps")
    else:
        n_quad = min(n_probe, 24)
        rhos = np.linspace(1.0, model.p0, 5)
        xs = rng.uniform(-tiers[-1], tiers[-1], size=n_quad)
        ys = rng.uniform(-tiers[-1], tiers[-1], size=n_quad)

        nd = 0.0
        for x in xs:
            for rho in rhos:
                num = _full_moment(model.jump_law,
                                   lambda z: abs(model.jump_coef(x, z)) ** rho)
                nd = max(nd, num / (1.0 + abs(x) ** rho))
        verdicts["A3_jump_growth"] = ProbeVerdict(
            bool(math.isfinite(nd)), float(nd), None,
            f"sup over {n_quad} states x {len(rhos)} rho")

        ld = 0.0
        for x, y in zip(xs, ys):
            if abs(x - y) < 1e-9:
                continue
            for rho in rhos:
                num = _full_moment(
                    model.jump_law,
                    lambda z: abs(model.jump_coef(x, z) - model.jump_coef(y, z)) ** rho)
                ld = max(ld, num / abs(x - y) ** rho)
        verdicts["A4_jump_lipschitz"] = ProbeVerdict(
            bool(math.isfinite(ld)), float(ld), None,
            f"sup over {n_quad} pairs x {len(rhos)} rho")

        # A5: (1 ^ z^2) mass bound plus fitted small-jump decay exponent q
        z_quad = _full_moment(model.jump_law, lambda z: min(1.0, z * z))
        zd = model.constants.get("Z_d") or max(lam, z_quad)
        eps_grid = np.array([0.4, 0.2, 0.1, 0.05, 0.025])
        x0 = float(xs[0]) if abs(xs[0]) > 0.1 else 1.0
        vals = np.array([
            small_jump_moment(model.jump_law,
                              lambda z: abs(model.jump_coef(x0, z)) ** p, e)
            for e in eps_grid])
        if np.all(vals > 0):
            slope = np.polyfit(np.log(eps_grid), np.log(vals), 1)[0]
        else:
            slope = math.inf  # identically zero small-jump mass decays faster
        ok = bool(z_quad <= zd * (1 + 1e-9) and slope > 0)
        verdicts["A5_small_jumps"] = ProbeVerdict(
            ok, float(zd), None,
            f"(1^z^2)-integral {z_quad:.4g} <= Z_d {zd:.4g}; fitted q ~ {slope:.3g}")

    return AssumptionReport(
        verdicts=verdicts,
        pstar=pstar(model.p0, max(model.chi, 1.0)),
        n_probe=n_probe,
        radius=radius,
    )
