import numpy as np
import pytest

import tamedlevy as tl


@pytest.fixture(scope="session")
def model1():
    return tl.make_model1(3.0)


@pytest.fixture(scope="session")
def model2():
    return tl.make_model2(1.0, 2.0, 1.0, 3.0)


@pytest.fixture(scope="session")
def gauss_law():
    return tl.gaussian_jump_law(0.05, 0.15, 3.0)


@pytest.fixture(scope="session")
def tlaw(gauss_law):
    return tl.truncate(gauss_law, 0.05)


@pytest.fixture()
def rng():
    return np.random.default_rng(np.random.SeedSequence(20260810))


def linear_test_model(lam: float = 0.0) -> tl.SdeModel:
    """mu = -x, sigma = gamma = 0, untamed: classical-Euler validation model."""
    law = tl.gaussian_jump_law(0.05, 0.15, lam)
    return tl.SdeModel(
        name="linear-flow",
        drift=_neg_drift,
        diffusion=_zero_coef,
        jump_coef=_zero_jump,
        chi=1.0,
        p0=2.0,
        jump_law=law,
        constants=tl.estimate_jump_constants(law, 2.0),
        gamma_linear_in_z=True,
        tamed=False,
    )


def _neg_drift(x):
    return -x


def _zero_coef(x):
    return 0.0


def _zero_jump(x, z):
    return 0.0 * z
