import dataclasses
import logging
import math

import numpy as np
import pytest

import tamedlevy as tl
from tamedlevy import _kernels
from tamedlevy.scheme import (_cell_comp_means, _prepare_arm, _run_arm_linear)
from conftest import linear_test_model


def _noise(seed, tag, k, n_fine, tlaw, T=1.0):
    return tl.NoiseRealization.generate(seed, tag, k,
                                        tl.build_uniform_grid(n_fine, T), tlaw)


# -- mc_compensator ---------------------------------------------------------------

def test_compensator_constant_gamma_exact(tlaw, rng):
    law = tlaw.base
    const = tl.SdeModel("const-jump", lambda x: 0.0, lambda x: 0.0,
                        lambda x, z: 3.0 * np.ones_like(np.asarray(z, dtype=float)),
                        1.0, 2.0, law)
    for m in (1, 7, 100):
        got = tl.mc_compensator(const, tlaw, 1.0, m, rng)
        assert got == pytest.approx(tlaw.mass * 3.0, rel=1e-12)


def test_compensator_zero_state_linear_gamma(model1, tlaw, rng):
    assert tl.mc_compensator(model1, tlaw, 0.0, 10, rng) == 0.0


def test_compensator_zero_mass(model1, rng):
    law = tl.gaussian_jump_law(0.05, 0.15, 0.0)
    assert tl.mc_compensator(model1, tl.truncate(law, 0.05), 2.0, 10, rng) == 0.0


def test_compensator_unbiased_vs_quadrature(model1, tlaw, rng):
    # mean over many independent calls at M=10 matches the quadrature value
    x, m, n_calls = 2.0, 10, 100_000
    target = tl.truncated_moment(tlaw, lambda z: x * z)
    vals = np.fromiter(
        (tl.mc_compensator(model1, tlaw, x, m, rng) for _ in range(n_calls)),
        dtype=float, count=n_calls)
    se = vals.std(ddof=1) / math.sqrt(n_calls)
    assert abs(vals.mean() - target) <= 4 * se


def test_compensator_rejects_bad_m(model1, tlaw, rng):
    with pytest.raises(ValueError):
        tl.mc_compensator(model1, tlaw, 1.0, 0, rng)


# -- single step -------------------------------------------------------------------

def test_step_no_dynamics(tlaw):
    law = tlaw.base
    still = tl.SdeModel("still", lambda x: 0.0, lambda x: 0.0,
                        lambda x, z: 0.0 * z, 1.0, 2.0, law)
    assert tl.step(still, 0.5, 1.7, 0.3, 0.0, 0.0, 0.5) == 1.7


def test_step_model1_frozen_value(model1):
    # x=2, mesh=dt=0.5, dW=0: 2 - 6/sqrt(1 + sqrt(0.5)*16) * 0.5
    denom = math.sqrt(1.0 + math.sqrt(0.5) * 16.0)
    expected = 2.0 - 3.0 / denom
    got = tl.step(model1, 0.5, 2.0, 0.0, 0.0, 0.0, 0.5)
    assert got == pytest.approx(expected, abs=1e-14)
    assert got == pytest.approx(1.14508, abs=1e-5)


def test_step_single_jump_multiplicative(model1):
    # gamma(x,z) = x*z: one jump of size z multiplies the state by (1+z)
    x, z = 1.3, 0.4
    still = dataclasses.replace(model1, drift=lambda v: 0.0,
                                diffusion=lambda v: 0.0)
    got = tl.step(still, 0.25, x, 0.0, still.jump_coef(x, z), 0.0, 0.25)
    assert got == pytest.approx(x * (1.0 + z), rel=1e-14)


# -- simulate_path -----------------------------------------------------------------

def test_constant_path_without_dynamics(tlaw):
    law = tl.gaussian_jump_law(0.05, 0.15, 0.0)
    still = tl.SdeModel("still", lambda x: 0.0, lambda x: 0.0,
                        lambda x, z: 0.0 * z, 1.0, 2.0, law,
                        gamma_linear_in_z=True)
    t0 = tl.truncate(law, 0.05)
    noise = _noise(1, "still", 0, 64, t0)
    cfg = tl.SchemeConfig(0.0, 3.25, tl.build_uniform_grid(16, 1.0), 0.05, 5,
                          record_full_path=True)
    res = tl.simulate_path(still, cfg, noise)
    assert res.terminal_value == 3.25
    times, states = res.trajectory
    assert np.array_equal(times, np.linspace(0, 1, 17))
    assert np.all(states == 3.25)


def test_start_at_horizon_degenerate(model1, tlaw):
    noise = _noise(2, "degenerate", 0, 64, tlaw)
    cfg = tl.SchemeConfig(1.0, 2.0, tl.build_uniform_grid(16, 1.0), 0.05, 5)
    res = tl.simulate_path(model1, cfg, noise)
    assert res.terminal_value == 2.0
    assert res.diagnostics["n_steps"] == 0


def test_linear_flow_exponential_oracle():
    model = linear_test_model()
    law = model.jump_law
    tlaw0 = tl.truncate(law, 0.05)
    n = 2 ** 14
    dmap = tl.build_uniform_grid(n, 1.0)
    noise = tl.NoiseRealization.generate(3, "oracle", 0, dmap, tlaw0)
    cfg = tl.SchemeConfig(0.0, 2.0, dmap, 0.05, 1)
    res = tl.simulate_path(model, cfg, noise)
    exact = 2.0 * math.exp(-1.0)
    assert abs(res.terminal_value - exact) / exact < 1e-3
    # sigma = gamma = 0: the run is the deterministic Euler product
    assert res.terminal_value == pytest.approx(2.0 * (1 - 1.0 / n) ** n, rel=1e-12)


def test_linear_flow_from_later_start():
    model = linear_test_model()
    tlaw0 = tl.truncate(model.jump_law, 0.05)
    dmap = tl.build_uniform_grid(2 ** 12, 1.0)
    noise = tl.NoiseRealization.generate(4, "oracle-s", 0, dmap, tlaw0)
    s = 0.25
    cfg = tl.SchemeConfig(s, 2.0, dmap, 0.05, 1)
    res = tl.simulate_path(model, cfg, noise)
    exact = 2.0 * math.exp(-(1.0 - s))
    assert abs(res.terminal_value - exact) / exact < 1e-3


def test_off_grid_start_partial_first_cell():
    # start strictly inside a coarse cell but on the fine grid
    model = linear_test_model()
    tlaw0 = tl.truncate(model.jump_law, 0.05)
    fine = tl.build_uniform_grid(16, 1.0)
    coarse = tl.build_uniform_grid(4, 1.0)
    noise = tl.NoiseRealization.generate(5, "partial", 0, fine, tlaw0)
    s = 3.0 / 16.0
    cfg = tl.SchemeConfig(s, 2.0, coarse, 0.05, 1)
    res = tl.simulate_path(model, cfg, noise)
    # partial step of length 1/16, then three cells of length 1/4
    expected = 2.0 * (1 - 1.0 / 16.0) * (1 - 0.25) ** 3
    assert res.terminal_value == pytest.approx(expected, rel=1e-14)


def test_off_grid_start_not_on_fine_grid_rejected(model1, tlaw):
    noise = _noise(6, "partial-bad", 0, 16, tlaw)
    cfg = tl.SchemeConfig(0.1, 2.0, tl.build_uniform_grid(4, 1.0), 0.05, 5)
    with pytest.raises(ValueError, match="neither"):
        tl.simulate_path(model1, cfg, noise)


def test_epsilon_mismatch_rejected(model1, tlaw):
    noise = _noise(7, "eps", 0, 16, tlaw)
    cfg = tl.SchemeConfig(0.0, 2.0, tl.build_uniform_grid(4, 1.0), 0.1, 5)
    with pytest.raises(ValueError, match="truncation"):
        tl.simulate_path(model1, cfg, noise)


def test_non_nested_grids_rejected(model1, tlaw):
    noise = _noise(8, "nest", 0, 8, tlaw)
    cfg = tl.SchemeConfig(0.0, 2.0, tl.build_uniform_grid(3, 1.0), 0.05, 5)
    with pytest.raises(ValueError, match="nested"):
        tl.simulate_path(model1, cfg, noise)
    cfg2 = tl.SchemeConfig(0.0, 2.0, tl.build_uniform_grid(16, 1.0), 0.05, 5)
    with pytest.raises(ValueError, match="nested"):
        tl.simulate_path(model1, cfg2, noise)


# -- noise realizations and coarsening ----------------------------------------------

def test_noise_brownian_variance(tlaw):
    n = 2 ** 15
    noise = _noise(9, "bvar", 0, n, tlaw)
    h = 1.0 / n
    scaled = noise.brownian / math.sqrt(h)
    var = scaled.var(ddof=1)
    se = math.sqrt(2.0 / (n - 1))
    assert abs(var - 1.0) <= 3 * se
    assert abs(scaled.mean()) <= 3.0 / math.sqrt(n)


def test_noise_jump_stream_invariants(tlaw):
    noise = _noise(10, "jinv", 0, 256, tlaw)
    assert np.all(np.diff(noise.jump_times) >= 0)
    assert np.all(noise.jump_times > 0) and np.all(noise.jump_times <= 1.0)
    assert np.all(np.abs(noise.jump_sizes) >= tlaw.epsilon)


def test_coarsen_additivity_exact(tlaw):
    noise = _noise(11, "coarse", 0, 64, tlaw)
    view = tl.coarsen_noise(noise, tl.build_uniform_grid(16, 1.0))
    manual = noise.brownian.reshape(16, 4).sum(axis=1)
    assert np.allclose(view.dW, manual, rtol=0, atol=1e-15)
    assert view.dW.sum() == pytest.approx(noise.brownian.sum(), abs=1e-12)


def test_coarsen_preserves_jumps(tlaw):
    noise = _noise(12, "coarse-j", 0, 512, tlaw)
    for n_c in (2, 8, 64, 512):
        view = tl.coarsen_noise(noise, tl.build_uniform_grid(n_c, 1.0))
        assert view.event_cells.size == noise.jump_times.size
        assert view.zsum.sum() == pytest.approx(noise.jump_sizes.sum(), abs=1e-12)
        # each event lands in the cell containing its time
        pts = view.dmap.points
        for t, c in zip(noise.jump_times, view.event_cells):
            assert pts[c] < t <= pts[c + 1]


def test_coarse_increment_variance(tlaw):
    # across many realizations the coarse increments have variance ~ coarse dt
    reps, n_f, n_c = 100_000, 8, 2
    vals = np.empty(reps)
    for k in range(reps):
        noise = _noise(13, "cvar", k, n_f, tlaw)
        vals[k] = noise.brownian[:4].sum()  # first coarse cell, dt = 1/2
    var = vals.var(ddof=1)
    se = math.sqrt(2.0 / (reps - 1)) * 0.5
    assert abs(var - 0.5) <= 3 * se


# -- determinism and engine agreement -----------------------------------------------

def test_path_deterministic(model1, tlaw):
    dmap = tl.build_uniform_grid(64, 1.0)
    cfg = tl.SchemeConfig(0.0, 2.0, dmap, 0.05, 50)
    r1 = tl.simulate_path(model1, cfg, _noise(14, "det", 3, 256, tlaw))
    r2 = tl.simulate_path(model1, cfg, _noise(14, "det", 3, 256, tlaw))
    assert r1.terminal_value == r2.terminal_value


def test_arm_results_independent_of_other_arms(model1, tlaw):
    noise = _noise(15, "arms", 0, 256, tlaw)
    view = tl.coarsen_noise(noise, tl.build_uniform_grid(64, 1.0))
    solo = tl.run_arms(model1, view, [(0.0, 2.0)], 40)[0]
    multi = tl.run_arms(model1, view, [(0.0, 1.5), (0.0, 2.0), (0.25, 2.5)], 40)
    assert multi[1].terminal == solo.terminal


def test_python_loop_matches_kernel(model1, tlaw):
    noise = _noise(16, "engines", 0, 256, tlaw)
    view = tl.coarsen_noise(noise, tl.build_uniform_grid(64, 1.0))
    vcomp = _cell_comp_means(noise, view.run_key, 64, 30)
    arm = _prepare_arm(view, 0.0, 2.0)
    kernel = _kernels.step_kernel_for(model1)
    assert kernel is not None
    fast = _run_arm_linear(model1, view, arm, vcomp, False, kernel)
    slow = _run_arm_linear(model1, view, arm, vcomp, False, None)
    assert fast.terminal == pytest.approx(slow.terminal, rel=1e-12)


def test_general_engine_matches_linear_engine(model1, tlaw):
    # same model with the linear-in-z declaration dropped must agree: both
    # engines consume identical V draws per cell
    general = dataclasses.replace(model1, gamma_linear_in_z=False)
    noise = _noise(17, "general", 0, 256, tlaw)
    view = tl.coarsen_noise(noise, tl.build_uniform_grid(64, 1.0))
    a = tl.run_arms(model1, view, [(0.0, 2.0), (0.0, 2.5)], 25)
    b = tl.run_arms(general, view, [(0.0, 2.0), (0.0, 2.5)], 25)
    for ra, rb in zip(a, b):
        assert ra.terminal == pytest.approx(rb.terminal, rel=1e-10)


def test_general_engine_partial_start_matches_linear(model1, tlaw):
    general = dataclasses.replace(model1, gamma_linear_in_z=False)
    fine = tl.build_uniform_grid(64, 1.0)
    noise = tl.NoiseRealization.generate(23, "general-s", 0, fine, tlaw)
    view = tl.coarsen_noise(noise, tl.build_uniform_grid(16, 1.0))
    s = 3.0 / 64.0
    a = tl.run_arms(model1, view, [(s, 2.0)], 25)[0]
    b = tl.run_arms(general, view, [(s, 2.0)], 25)[0]
    assert a.terminal == pytest.approx(b.terminal, rel=1e-10)


def test_recorded_trajectory_shape(model1, tlaw):
    noise = _noise(18, "traj", 0, 64, tlaw)
    cfg = tl.SchemeConfig(0.0, 2.0, tl.build_uniform_grid(16, 1.0), 0.05, 10,
                          record_full_path=True)
    res = tl.simulate_path(model1, cfg, noise)
    times, states = res.trajectory
    assert np.array_equal(times, np.linspace(0, 1, 17))
    assert states.shape == (17,)
    assert states[0] == 2.0
    assert states[-1] == res.terminal_value
    assert np.all(np.isfinite(states))


# -- scheme-level statistical invariants --------------------------------------------

def test_taming_prevents_divergence(model1, tlaw):
    # classical Euler blows up for x - x^3 at coarse meshes; the tamed scheme
    # must keep every path finite
    dmap = tl.build_uniform_grid(64, 1.0)
    n_paths = 10_000
    diverged = 0
    for k in range(n_paths):
        noise = tl.NoiseRealization.generate(19, "stab", k, dmap, tlaw)
        out = tl.run_arms(model1, tl.coarsen_noise(noise, dmap), [(0.0, 2.0)],
                          100)[0]
        diverged += out.diverged_at >= 0
    assert diverged == 0


def test_moment_boundedness_across_meshes(model1, tlaw):
    # empirical E|X_T|^p0 stays uniformly bounded over the mesh sweep
    n_paths = 10_000
    moments = []
    for k_exp in range(6, 13):
        dmap = tl.build_uniform_grid(2 ** k_exp, 1.0)
        acc = np.empty(n_paths)
        for k in range(n_paths):
            noise = tl.NoiseRealization.generate(20, f"mom{k_exp}", k, dmap, tlaw)
            acc[k] = tl.run_arms(model1, tl.coarsen_noise(noise, dmap),
                                 [(0.0, 2.0)], 10)[0].terminal
        assert np.all(np.isfinite(acc))
        moments.append(np.mean(np.abs(acc) ** model1.p0))
    assert max(moments) / min(moments) < 2.0


def test_one_step_increment_scaling(model1, tlaw):
    # mean squared one-step increment decays as the mesh shrinks
    n_paths = 200
    means, ses = [], []
    for k_exp in (4, 5, 6, 7, 8):
        dmap = tl.build_uniform_grid(2 ** k_exp, 1.0)
        cfg = tl.SchemeConfig(0.0, 2.0, dmap, 0.05, 20, record_full_path=True)
        sq = []
        for k in range(n_paths):
            noise = tl.NoiseRealization.generate(21, f"inc{k_exp}", k, dmap, tlaw)
            _, states = tl.simulate_path(model1, cfg, noise).trajectory
            sq.append(np.diff(states) ** 2)
        sq = np.concatenate(sq)
        means.append(sq.mean())
        ses.append(sq.std(ddof=1) / math.sqrt(sq.size))
    for i in range(len(means) - 1):
        assert means[i + 1] <= means[i] + 3 * (ses[i] + ses[i + 1])


def test_mc_hypothesis_warning(model1, tlaw, caplog):
    noise = _noise(22, "warn", 0, 16, tlaw)
    cfg = tl.SchemeConfig(0.0, 2.0, tl.build_uniform_grid(4, 1.0), 0.05, 3)
    assert not tl.mc_hypothesis_ok(model1, 0.05, 3)
    with caplog.at_level(logging.WARNING, logger="tamedlevy.scheme"):
        res = tl.simulate_path(model1, cfg, noise)
    assert not res.diagnostics["mc_hypothesis_ok"]
    assert any("hypothesis" in r.message for r in caplog.records)


def test_mc_hypothesis_satisfied_when_m_large(model1):
    # eps = 0.5, Z_d = 3 -> bound = (12)^2 = 144
    assert tl.mc_hypothesis_ok(model1, 0.5, 144)
    assert not tl.mc_hypothesis_ok(model1, 0.5, 143)
