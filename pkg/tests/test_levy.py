import math

import numpy as np
import pytest
from scipy import integrate

import tamedlevy as tl
from tamedlevy.levy import QuadratureError, TruncatedSampleStream

JUMP_MEAN, JUMP_STD = 0.05, 0.15


def _phi(z):
    """Independent density formula for the built-in Gaussian sizes."""
    return math.exp(-((z - JUMP_MEAN) ** 2) / (2 * JUMP_STD ** 2)) / (
        JUMP_STD * math.sqrt(2 * math.pi))


def _norm_cdf(x):
    return 0.5 * math.erfc(-(x - JUMP_MEAN) / (JUMP_STD * math.sqrt(2.0)))


def _tail_quad(f, eps):
    """Oracle: integral of f(z) phi(z) dz over |z| >= eps."""
    lo, _ = integrate.quad(lambda z: f(z) * _phi(z), -np.inf, -eps)
    hi, _ = integrate.quad(lambda z: f(z) * _phi(z), eps, np.inf)
    return lo + hi


def test_truncate_mass_normal_cdf_oracle(gauss_law):
    tlaw = tl.truncate(gauss_law, 0.05)
    # 3 * (1 - Phi(0) + Phi(-2/3)) computed from erfc, independent of the law
    expected = 3.0 * (1.0 - _norm_cdf(0.05) + _norm_cdf(-0.05))
    assert tlaw.mass == pytest.approx(expected, abs=1e-12)
    assert tlaw.mass == pytest.approx(2.2575, abs=5e-5)


def test_truncate_zero_intensity():
    law = tl.gaussian_jump_law(0.05, 0.15, 0.0)
    assert tl.truncate(law, 0.3).mass == 0.0


def test_truncate_rejects_bad_epsilon(gauss_law):
    for eps in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ValueError):
            tl.truncate(gauss_law, eps)


def test_mass_bounded_by_eps_minus2_zd(gauss_law, model1):
    zd = model1.constants["Z_d"]
    assert zd == pytest.approx(3.0)
    t005 = tl.truncate(gauss_law, 0.05)
    assert t005.mass <= 0.05 ** -2 * zd  # 2.2575 <= 1200
    for eps in (0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9):
        assert tl.truncate(gauss_law, eps).mass <= eps ** -2 * zd


def test_truncated_sampler_support(tlaw, rng):
    draws = tl.sample_truncated_size(tlaw, rng, 100_000)
    assert np.all(np.abs(draws) >= tlaw.epsilon)


def test_truncated_sampler_moments_vs_quadrature(tlaw, rng):
    n = 1_000_000
    draws = tl.sample_truncated_size(tlaw, rng, n)
    tail = _tail_quad(lambda z: 1.0, tlaw.epsilon)
    mean_oracle = _tail_quad(lambda z: z, tlaw.epsilon) / tail
    se = draws.std(ddof=1) / math.sqrt(n)
    assert abs(draws.mean() - mean_oracle) <= 3 * se

    pos_oracle = integrate.quad(_phi, tlaw.epsilon, np.inf)[0] / tail
    frac = (draws > 0).mean()
    se_frac = math.sqrt(pos_oracle * (1 - pos_oracle) / n)
    assert abs(frac - pos_oracle) <= 3 * se_frac


def test_truncated_sampler_zero_mass_errors(rng):
    law = tl.gaussian_jump_law(0.05, 0.15, 0.0)
    with pytest.raises(ValueError, match="zero mass"):
        tl.sample_truncated_size(tl.truncate(law, 0.05), rng)


def test_jump_events_empty_for_zero_mass(rng):
    law = tl.gaussian_jump_law(0.05, 0.15, 0.0)
    ev = tl.sample_jump_events(tl.truncate(law, 0.05), 0.0, 1.0, rng)
    assert ev.count == 0


def test_jump_events_mean_count(tlaw, rng):
    reps = 100_000
    counts = np.fromiter(
        (tl.sample_jump_events(tlaw, 0.0, 1.0, rng).count for _ in range(reps)),
        dtype=float, count=reps)
    se = counts.std(ddof=1) / math.sqrt(reps)
    assert abs(counts.mean() - tlaw.mass) <= 3 * se


def test_jump_events_times_inside_interval(tlaw, rng):
    for _ in range(200):
        ev = tl.sample_jump_events(tlaw, 0.25, 0.5, rng)
        if ev.count:
            assert np.all(ev.times > 0.25) and np.all(ev.times <= 0.5)
            assert np.all(np.diff(ev.times) >= 0)
            assert np.all(np.abs(ev.sizes) >= tlaw.epsilon)


def test_jump_events_deterministic(tlaw):
    a = tl.sample_jump_events(tlaw, 0.0, 1.0, np.random.default_rng(42))
    b = tl.sample_jump_events(tlaw, 0.0, 1.0, np.random.default_rng(42))
    assert np.array_equal(a.times, b.times) and np.array_equal(a.sizes, b.sizes)


def test_jump_events_rejects_bad_interval(tlaw, rng):
    with pytest.raises(ValueError):
        tl.sample_jump_events(tlaw, 0.5, 0.5, rng)


def test_truncated_moment_of_one_is_mass(tlaw):
    assert tl.truncated_moment(tlaw, lambda z: 1.0) == pytest.approx(
        tlaw.mass, abs=1e-10)
    # nu_eps is a probability law
    assert tl.truncated_moment(tlaw, lambda z: 1.0) / tlaw.mass == pytest.approx(
        1.0, abs=1e-10)


def test_truncated_moment_first_moment_cross_oracles(tlaw, rng):
    got = tl.truncated_moment(tlaw, lambda z: z)
    oracle = 3.0 * _tail_quad(lambda z: z, tlaw.epsilon)
    assert got == pytest.approx(oracle, abs=1e-10)
    n = 1_000_000
    draws = tl.sample_truncated_size(tlaw, rng, n)
    mc = tlaw.mass * draws.mean()
    se = tlaw.mass * draws.std(ddof=1) / math.sqrt(n)
    assert abs(mc - got) <= 4 * se


def test_truncated_moment_second_moment_closed_form(gauss_law):
    # eps -> 0: integral z^2 nu(dz) = lambda * (mean^2 + std^2) = 0.075
    tlaw = tl.truncate(gauss_law, 1e-9)
    assert tl.truncated_moment(tlaw, lambda z: z * z) == pytest.approx(
        0.075, abs=1e-8)


@pytest.mark.parametrize("f,name", [(lambda z: z, "z"),
                                    (lambda z: z * z, "z2"),
                                    (lambda z: abs(z), "absz")])
def test_sampler_quadrature_agreement(tlaw, rng, f, name):
    n = 1_000_000
    draws = tl.sample_truncated_size(tlaw, rng, n)
    vals = f(draws) if name != "absz" else np.abs(draws)
    mc = tlaw.mass * vals.mean()
    se = tlaw.mass * vals.std(ddof=1) / math.sqrt(n)
    assert abs(mc - tl.truncated_moment(tlaw, f)) <= 4 * se


def test_density_validation():
    with pytest.raises(ValueError, match="integrates"):
        tl.JumpLaw(1.0, lambda z: math.exp(-abs(z)),  # integrates to 2
                   lambda z: 0.5, lambda rng, n: rng.normal(size=n))


def test_sample_stream_partition_invariant(tlaw):
    s1 = TruncatedSampleStream(tlaw, np.random.default_rng(5))
    s2 = TruncatedSampleStream(tlaw, np.random.default_rng(5))
    a = np.concatenate([s1.draw(7), s1.draw(13), s1.draw(5)])
    b = s2.draw(25)
    assert np.array_equal(a, b)


def test_sample_stream_matches_compiled_kernel(tlaw):
    from tamedlevy import _kernels
    from tamedlevy.streams import stream

    s = TruncatedSampleStream(tlaw, stream(99, 1, 2, 3))
    a = s.draw(500)
    rng = stream(99, 1, 2, 3)
    b = _kernels.gaussian_cell_draws(rng, 500, JUMP_MEAN, JUMP_STD, tlaw.epsilon)
    assert np.array_equal(a, b)


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_quadrature_failure_reported(gauss_law):
    tlaw = tl.truncate(gauss_law, 0.05)
    with pytest.raises(QuadratureError):
        # wildly oscillatory integrand the adaptive rule cannot resolve
        tl.truncated_moment(tlaw, lambda z: math.sin(1e9 * z * z) * 1e6)
