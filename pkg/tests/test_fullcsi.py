import math

from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from scipy import optimize

from fdwpt import fullcsi as fc
from fdwpt.model import ChannelRealization, full_csi_harvest_gain, ms_transmit_power

from conftest import b_tilde, feasible_instances, make_params, make_realization, random_unit
from oracles import full_csi_best_gain

LOG2E = math.log2(math.e)


# ---- receive side and rates -------------------------------------------------

def test_receive_beamformer_without_leakage_is_mrc():
    h = np.array([1 + 1j, 2.0, -0.5j])
    r = fc.receive_beamformer(np.zeros(3), h, 1e-3)
    assert np.allclose(r, h / np.linalg.norm(h))
    with pytest.raises(ValueError):
        fc.receive_beamformer(np.zeros(3), np.zeros(3), 1.0)


def test_receive_beamformer_beats_random_directions():
    rng = np.random.default_rng(0)
    g = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    sig = 0.3
    cov = sig * np.eye(4) + np.outer(g, g.conj())

    def sinr(u):
        return abs(np.vdot(u, h)) ** 2 / np.vdot(u, cov @ u).real

    r = fc.receive_beamformer(g, h, sig)
    best = max(sinr(random_unit(rng, 4)) for _ in range(1000))
    assert sinr(r) >= best
    assert sinr(r) == pytest.approx(np.vdot(h, np.linalg.solve(cov, h)).real, rel=1e-12)


def test_bs_sinr_matches_combiner_output():
    params = make_params(n_tx=3)
    real = make_realization(params, 4)
    w = math.sqrt(params.p_bs) * random_unit(np.random.default_rng(1), 3)
    g = real.h_li_bs @ w
    r = fc.receive_beamformer(g, real.h_m, params.sigma2_b)
    p_m = 1e-4
    direct = p_m * abs(np.vdot(r, real.h_m)) ** 2 / (
        params.sigma2_b + abs(np.vdot(r, g)) ** 2)
    assert fc.bs_sinr(real, w, p_m, params.sigma2_b) == pytest.approx(direct, rel=1e-10)


def test_bs_rate_edge_cases():
    params = make_params(n_tx=2)
    real = make_realization(params, 1)
    w = fc.mrt_beamformer(real.h_b, params.p_bs)
    assert fc.bs_rate(real, w, 0.0, params) == 0.0
    quiet = ChannelRealization(real.h_bm, real.h_b, real.h_m, np.zeros_like(real.h_li_bs),
                               real.h_li_ms)
    alpha = 0.3
    p_m = ms_transmit_power(alpha, params, full_csi_harvest_gain(real))
    expect = (1 - alpha) * math.log2(1 + p_m * np.vdot(real.h_m, real.h_m).real / params.sigma2_b)
    assert fc.bs_rate(quiet, w, alpha, params) == pytest.approx(expect, rel=1e-12)


def test_bs_rate_two_forms_agree():
    # unit-scale noise keeps the dense inverse well conditioned
    rng = np.random.default_rng(2)
    for k in range(1000):
        n_tx = int(rng.integers(1, 6))
        params = replace(make_params(n_tx=n_tx), sigma2_b=1.0, sigma2_m=1.0, p_bs=1.0, d=1.0,
                         sigma2_li_bs=float(10 ** rng.uniform(-2, 1)))
        real = make_realization(params, 10_000 + k)
        w = random_unit(rng, n_tx)
        alpha = float(rng.uniform(0.01, 0.99))
        a = fc.bs_rate(real, w, alpha, params)
        b = fc.bs_rate_inverse_form(real, w, alpha, params)
        assert a == pytest.approx(b, rel=1e-10)


def test_bs_rate_accurate_under_strong_loopback():
    mp.mp.dps = 40
    rng = np.random.default_rng(3)
    for k in range(100):
        n_tx = int(rng.integers(1, 6))
        params = make_params(n_tx=n_tx, li_dbm=float(rng.uniform(-30, 30)))
        real = make_realization(params, 11_000 + k)
        w = math.sqrt(params.p_bs) * random_unit(rng, n_tx)
        p_m = 1e-3
        g = [mp.mpc(x) for x in real.h_li_bs @ w]
        h = [mp.mpc(x) for x in real.h_m]
        cov = mp.eye(len(g)) * params.sigma2_b + mp.matrix(g) * mp.matrix(g).H
        ref = p_m * (mp.matrix(h).H * mp.lu_solve(cov, mp.matrix(h)))[0].real
        got = fc.bs_sinr(real, w, p_m, params.sigma2_b)
        assert got == pytest.approx(float(ref), rel=1e-12)


def test_ms_rate_properties():
    params = make_params(n_tx=2)
    real = make_realization(params, 3)
    perp = np.array([-np.conj(real.h_b[1]), np.conj(real.h_b[0])])
    assert fc.ms_rate(real, perp, 0.4, params) == pytest.approx(0.0, abs=1e-15)
    w = fc.mrt_beamformer(real.h_b, params.p_bs)
    expect = math.log2(1 + abs(np.vdot(real.h_b, w)) ** 2 / params.sigma2_m)
    assert fc.ms_rate(real, w, 0.0, params) == pytest.approx(expect, rel=1e-12)
    louder = ChannelRealization(real.h_bm, real.h_b, real.h_m, real.h_li_bs, 10 * real.h_li_ms)
    assert fc.ms_rate(louder, w, 0.3, params) < fc.ms_rate(real, w, 0.3, params)


def test_ms_rate_decreasing_in_alpha_for_fixed_beamformer():
    rng = np.random.default_rng(6)
    alphas = np.linspace(0.0, 0.99, 200)
    for k in range(1000):
        params = make_params(n_tx=int(rng.integers(1, 5)), power_dbm=float(rng.uniform(-10, 30)),
                             li_dbm=float(rng.uniform(-40, 40)))
        real = make_realization(params, 20_000 + k)
        w = math.sqrt(params.p_bs) * random_unit(rng, params.n_tx)
        lam = full_csi_harvest_gain(real)
        rates = np.array([fc.ms_rate(real, w, a, params, lam) for a in alphas])
        assert np.all(np.diff(rates) <= 0.0)


def test_gamma_b():
    h = np.array([1.0, 2.0j])
    assert fc.gamma_b(0.0, 0.5, 1.0, h, 0.1) == pytest.approx(5.0)
    assert fc.gamma_b(1.0, 0.5, 0.0, h, 0.1) == -math.inf
    assert fc.gamma_b(1.0, 0.5, 1.0, h, 0.1) == pytest.approx(5.0 - 0.1 * 3.0)
    params = make_params()
    vals = [fc.gamma_b(1.0, a, ms_transmit_power(a, params, 1e-3), h, params.sigma2_b)
            for a in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < -1e3


# ---- SDR at fixed alpha -----------------------------------------------------

def test_zero_target_gives_mrt():
    params = make_params(n_tx=3)
    real = make_realization(params, 5)
    sol = fc.solve_w_given_alpha(real, 0.2, 0.0, params)
    assert sol.feasible
    assert np.allclose(sol.w, math.sqrt(params.p_bs) * real.h_b / np.linalg.norm(real.h_b))


def test_no_loopback_channel_infeasible():
    params = make_params(n_tx=2)
    real = make_realization(params, 6)
    quiet = ChannelRealization(real.h_bm, real.h_b, real.h_m, np.zeros_like(real.h_li_bs),
                               real.h_li_ms)
    target = 0.5 * fc.rb_max(b_tilde(quiet, params))[1]
    sol = fc.solve_w_given_alpha(quiet, 0.5, target, params)
    assert not sol.feasible and sol.w is None


def test_alpha_domain():
    params = make_params(n_tx=2)
    real = make_realization(params, 6)
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            fc.solve_w_given_alpha(real, bad, 0.5, params)


@pytest.mark.parametrize("n_tx", [2, 3, 4])
def test_sdr_solution_properties(n_tx):
    for params, real, target, alpha in feasible_instances(n_tx, 5, seed=n_tx):
        sol = fc.solve_w_given_alpha(real, alpha, target, params)
        assert sol.feasible
        assert sol.rank_ratio <= 1e-6
        assert np.vdot(sol.w, sol.w).real == pytest.approx(params.p_bs, rel=1e-8)
        # the equality target is the BS rate
        assert sol.extra["bs_rate"] == pytest.approx(target, rel=1e-6)
        gam = sol.extra["gamma_b"]
        g = real.h_li_bs @ sol.w
        leak = abs(np.vdot(real.h_m, g)) ** 2 / (params.sigma2_b + np.vdot(g, g).real)
        assert leak == pytest.approx(gam, rel=1e-6)


def test_sdr_matches_two_antenna_oracle():
    for params, real, target, alpha in feasible_instances(2, 4, seed=11):
        sol = fc.solve_w_given_alpha(real, alpha, target, params)
        assert sol.feasible
        oracle = full_csi_best_gain(real, sol.extra["gamma_b"], params)
        assert oracle <= sol.extra["sdp_objective"] * (1 + 1e-6)
        assert sol.extra["sdp_objective"] == pytest.approx(oracle, rel=1e-3)
        assert abs(np.vdot(real.h_b, sol.w)) ** 2 == pytest.approx(oracle, rel=1e-3)


def test_constraint_value_capped_by_channel_norm():
    params = make_params(n_tx=3)
    rng = np.random.default_rng(8)
    real = make_realization(params, 8)
    cap = np.vdot(real.h_m, real.h_m).real
    for _ in range(200):
        w = math.sqrt(params.p_bs) * random_unit(rng, 3)
        g = real.h_li_bs @ w
        val = cap - abs(np.vdot(real.h_m, g)) ** 2 / (params.sigma2_b + np.vdot(g, g).real)
        assert val <= cap
    w = fc.zf_beamformer(real, params)
    g = real.h_li_bs @ w
    assert cap - abs(np.vdot(real.h_m, g)) ** 2 / (params.sigma2_b + np.vdot(g, g).real) \
        == pytest.approx(cap, rel=1e-12)


# ---- zero forcing and closed forms ------------------------------------------

def test_zf_projector_and_beamformer():
    params = make_params(n_tx=4)
    real = make_realization(params, 9)
    b = fc.zf_projector(real)
    assert np.abs(b @ b - b).max() <= 1e-12
    w = fc.zf_beamformer(real, params)
    null = abs(np.vdot(real.h_m, real.h_li_bs @ w))
    assert null <= 1e-10 * math.sqrt(params.p_bs) * np.linalg.norm(real.h_li_bs, 2) * \
        np.linalg.norm(real.h_m)
    assert np.vdot(w, w).real == pytest.approx(params.p_bs, rel=1e-12)
    gain = params.p_bs * np.vdot(real.h_b, b @ real.h_b).real
    assert abs(np.vdot(real.h_b, w)) ** 2 == pytest.approx(gain, rel=1e-9)


def test_zf_identity_when_already_orthogonal():
    params = make_params(n_tx=2)
    real = make_realization(params, 10)
    u = real.h_li_bs.conj().T @ real.h_m
    hb = np.array([-np.conj(u[1]), np.conj(u[0])])  # orthogonal to u
    real = ChannelRealization(real.h_bm, hb, real.h_m, real.h_li_bs, real.h_li_ms)
    w = fc.zf_beamformer(real, params)
    assert np.allclose(w, math.sqrt(params.p_bs) * hb / np.linalg.norm(hb))


def test_zf_degenerate_returns_none():
    params = make_params(n_tx=2)
    real = make_realization(params, 10)
    u = real.h_li_bs.conj().T @ real.h_m
    real = ChannelRealization(real.h_bm, 3 * u, real.h_m, real.h_li_bs, real.h_li_ms)
    assert fc.zf_beamformer(real, params) is None
    assert not fc.zf_joint(real, 0.1, params).feasible


def test_zf_two_antenna_null_space():
    params = make_params(n_tx=2)
    for seed in range(20):
        real = make_realization(params, 30 + seed)
        u = real.h_li_bs.conj().T @ real.h_m
        n = np.array([-np.conj(u[1]), np.conj(u[0])]) / np.linalg.norm(u)
        best = params.p_bs * abs(np.vdot(real.h_b, n)) ** 2
        w = fc.zf_beamformer(real, params)
        assert abs(np.vdot(real.h_b, w)) ** 2 == pytest.approx(best, rel=1e-9)


def zf_rate(alpha, bg):
    return (1 - alpha) * math.log2(1 + alpha * bg / (1 - alpha))


def test_zf_alpha_known_values():
    assert fc.zf_alpha_opt(0.0, 1.0, 1.0) == 0.0
    top = LOG2E / math.e
    assert fc.zf_alpha_opt(top, 1.0, 1.0) == pytest.approx(1 - 1 / math.e, abs=1e-6)
    assert math.isnan(fc.zf_alpha_opt(0.6, 1.0, 1.0))
    with pytest.raises(ValueError):
        fc.zf_alpha_opt(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        fc.zf_alpha_opt(1.0, 0.0, 1.0)


def test_zf_alpha_against_bisection():
    rng = np.random.default_rng(12)
    for _ in range(300):
        bg = 10 ** rng.uniform(-2, 6)
        a_top, r_top = fc.rb_max(bg)
        target = rng.uniform(0.01, 0.999) * r_top
        alpha = fc.zf_alpha_opt(target, bg, 1.0)
        ref = optimize.brentq(lambda a: zf_rate(a, bg) - target, 0.0, a_top, xtol=1e-15,
                              rtol=1e-15)
        assert alpha == pytest.approx(ref, abs=1e-9)
        assert zf_rate(alpha, bg) == pytest.approx(target, rel=1e-9)
        # splitting b and gamma differently gives the same answer
        assert fc.zf_alpha_opt(target, bg / 7.0, 7.0) == pytest.approx(alpha, rel=1e-12)


def test_rb_max_values():
    a, r = fc.rb_max(1.0)
    assert a == pytest.approx((math.e - 1) / math.e, rel=1e-12)
    assert r == pytest.approx(LOG2E / math.e, rel=1e-12)
    assert fc.rb_max(1e-9)[1] < 1e-8
    with pytest.raises(ValueError):
        fc.rb_max(0.0)


def test_rb_max_stationarity_and_grid():
    alphas = np.linspace(0.0, 1.0, 1_000_001)[1:-1]
    for bt in (1e-2, 0.3, 1.0, 5.0, 1e2, 1e4, 1e6):
        a, r = fc.rb_max(bt)
        z = 1.0 + a * bt / (1.0 - a)
        assert z * math.log(z) == pytest.approx(z + bt - 1.0, rel=1e-9)
        grid = (1 - alphas) * np.log2(1 + alphas * bt / (1 - alphas))
        assert grid.max() <= r + 1e-6


def test_hd_rates():
    params = make_params(n_tx=3)
    real = make_realization(params, 13)
    for variant in ("ac", "rfc"):
        assert fc.hd_rates(real, 0.0, params, variant)[0] == 0.0
    lam = full_csi_harvest_gain(real)
    alpha = 0.4
    bs, ms = fc.hd_rates(real, alpha, params, "ac")
    p = params.p_bs
    assert bs == pytest.approx(0.5 * (1 - alpha) * math.log2(
        1 + alpha / (1 - alpha) * params.eta * p * lam ** 2 / params.sigma2_b))
    assert ms == pytest.approx(0.5 * (1 - alpha) * math.log2(1 + p * lam / params.sigma2_m))
    _, ms = fc.hd_rates(real, alpha, params, "rfc")
    expect = 0.5 * (1 - alpha) * math.log2(1 + p * np.vdot(real.h_b, real.h_b).real
                                           / params.sigma2_m)
    assert ms == pytest.approx(expect)
    with pytest.raises(ValueError):
        fc.hd_rates(real, alpha, params, "xx")


# ---- joint design ---------------------------------------------------------------

def test_algorithm1_zero_target():
    params = make_params(n_tx=3)
    real = make_realization(params, 14)
    sol = fc.algorithm1_joint(real, 0.0, params)
    assert sol.feasible and sol.alpha == 0.0
    assert np.allclose(sol.w, fc.mrt_beamformer(real.h_b, params.p_bs))


def test_algorithm1_above_maximum():
    params = make_params(n_tx=3)
    real = make_realization(params, 14)
    top = fc.rb_max(b_tilde(real, params))[1]
    sol = fc.algorithm1_joint(real, 1.01 * top, params)
    assert not sol.feasible


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_algorithm1_against_full_grid(seed):
    params = make_params(n_tx=3, power_dbm=0.0)
    real = make_realization(params, 40 + seed)
    target = 0.4 * fc.rb_max(b_tilde(real, params))[1]
    step = 0.01
    grid = step * np.arange(1, 100)
    sweep = [fc.solve_w_given_alpha(real, float(a), target, params) for a in grid]
    feasible = [s for s in sweep if s.feasible]
    assert feasible
    first = fc.algorithm1_joint(real, target, params, alpha_step=step, search="first")
    assert first.alpha == pytest.approx(min(s.alpha for s in feasible))
    best = fc.algorithm1_joint(real, target, params, alpha_step=step, search="ascent")
    assert best.ms_rate >= max(s.ms_rate for s in feasible) - 1e-9
    zf = fc.zf_joint(real, target, params)
    assert best.ms_rate >= zf.ms_rate - 1e-9


def test_rate_region_sweep():
    params = make_params(n_tx=4, power_dbm=0.0)
    real = make_realization(params, 50)
    curves = fc.rate_region_sweep(real, params, n_points=8, alpha_step=1e-2)
    assert set(curves) == {"optimum", "zf", "hd_ac", "hd_rfc"}
    opt, zf = curves["optimum"].points, curves["zf"].points
    assert len(opt) == len(zf) == 8
    rates = [p.ms_rate for p in opt if p.feasible]
    assert rates[0] == max(rates)
    for a, b in zip(opt, zf):
        if a.feasible and b.feasible:
            assert a.ms_rate >= b.ms_rate - 1e-9
    assert opt[-1].feasible and zf[-1].feasible
    assert opt[-1].ms_rate == pytest.approx(zf[-1].ms_rate, rel=1e-6)
    with pytest.raises(ValueError):
        fc.rate_region_sweep(real, params, n_points=1)
