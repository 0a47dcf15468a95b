import math

import numpy as np
import pytest

from fdwpt import fullcsi as fc
from fdwpt.model import (
    CovarianceModel,
    SystemParams,
    dbm_to_watts,
    full_csi_harvest_gain,
    ms_transmit_power,
    sample_realization,
)
from fdwpt.partialcsi import PartialCsiInstance


def make_params(n_tx=2, n_total=6, power_dbm=10.0, li_dbm=30.0, gamma_b=3.0, rho=1.0):
    return SystemParams(
        p_bs=dbm_to_watts(power_dbm), eta=0.5, n_total=n_total, n_tx=n_tx,
        sigma2_b=dbm_to_watts(-70.0), sigma2_m=dbm_to_watts(-70.0),
        sigma2_li_bs=dbm_to_watts(li_dbm), sigma2_li_ms=dbm_to_watts(li_dbm),
        d=10.0, tau=3.0, gamma_b=gamma_b, rho=rho)


def make_realization(params, seed):
    return sample_realization(params, np.random.default_rng(seed))


def make_instance(params, seed, theta_b=5.0, theta_m=15.0, spread=10.0):
    cov = CovarianceModel.from_angles(params, math.radians(theta_b), math.radians(theta_m),
                                      math.radians(spread), math.radians(spread))
    return PartialCsiInstance.draw(params, cov, np.random.default_rng(seed))


def two_antenna_grid(n_phi, n_psi=None):
    """Unit vectors (cos psi, sin psi e^{j phi}); with global phase removed this covers C^2."""
    phi = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    if n_psi is None:
        return phi
    psi = np.linspace(0.0, 0.5 * np.pi, n_psi)
    pp, ss = np.meshgrid(phi, psi, indexing="ij")
    return np.stack([np.cos(ss), np.sin(ss) * np.exp(1j * pp)], axis=-1).reshape(-1, 2)


def quadratic_form(us, a):
    return np.einsum("ki,ij,kj->k", us.conj(), a, us).real


def random_unit(rng, n):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def b_tilde(real, params):
    lam = full_csi_harvest_gain(real)
    return params.eta * params.p_bs * lam * np.vdot(real.h_m, real.h_m).real / params.sigma2_b


def feasible_alpha(real, params, target, rng):
    """An alpha between the zero-forcing time split and the upper feasibility edge."""
    lam = full_csi_harvest_gain(real)
    gam = np.vdot(real.h_m, real.h_m).real / params.sigma2_b
    a0 = fc.zf_alpha_opt(target, params.eta * params.p_bs * lam, gam)
    for _ in range(50):
        alpha = a0 + rng.uniform(0.0, 0.5) * (1.0 - a0)
        p_m = ms_transmit_power(alpha, params, lam)
        if fc.sdr_feasible(real, fc.gamma_b(target, alpha, p_m, real.h_m, params.sigma2_b),
                           params):
            return alpha
    return None


def feasible_instances(n_tx, count, seed=0, power_dbm=0.0):
    params = make_params(n_tx=n_tx, power_dbm=power_dbm)
    rng = np.random.default_rng(seed)
    out, k = [], 0
    while len(out) < count:
        k += 1
        real = make_realization(params, 1000 * seed + k)
        target = rng.uniform(0.1, 0.9) * fc.rb_max(b_tilde(real, params))[1]
        alpha = feasible_alpha(real, params, target, rng)
        if alpha is not None:
            out.append((params, real, target, alpha))
    return out


@pytest.fixture
def params():
    return make_params()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
