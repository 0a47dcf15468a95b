"""
Beamformer and time-split design when every channel is known.

The BS transmits data to the MS with beamformer ``w`` while receiving the
MS uplink through its remaining antennas; the MS funds its uplink with
energy harvested during the first ``alpha`` fraction of the block. For a
required BS rate the design maximizes the MS rate over ``(alpha, w)``:
``w`` comes from a semidefinite relaxation at fixed ``alpha``, and
``alpha`` is searched on an increasing grid.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import conic
from .model import (
    BeamformerSolution,
    ChannelRealization,
    RatePoint,
    SystemParams,
    TradeoffCurve,
    full_csi_harvest_gain,
    ms_transmit_power,
)
from .specfun import lambert_w0, lambert_wm1

__all__ = [
    "receive_beamformer",
    "bs_sinr",
    "bs_rate",
    "bs_rate_inverse_form",
    "ms_rate",
    "gamma_b",
    "sdr_feasible",
    "solve_w_given_alpha",
    "algorithm1_joint",
    "mrt_beamformer",
    "zf_projector",
    "zf_beamformer",
    "zf_alpha_opt",
    "zf_joint",
    "rb_max",
    "hd_rates",
    "rate_region_sweep",
]

LN2 = math.log(2.0)
# relative tolerance for the eigenvalue-range feasibility screen of the SDR
_SCREEN_TOL = 1e-9


def receive_beamformer(h_li_w: np.ndarray, h_m_ch: np.ndarray, sigma2_b: float) -> np.ndarray:
    """MMSE receive combiner ``(sigma_b^2 I + g g^H)^{-1} h_M``, normalized.

    ``h_li_w`` is the loopback seen at the BS receive array, ``g = H_B w``.
    """
    g = np.asarray(h_li_w, dtype=complex)
    h = np.asarray(h_m_ch, dtype=complex)
    if g.shape != h.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {h.shape}")
    if not np.any(h):
        raise ValueError("MS->BS channel is zero")
    # Sherman-Morrison applied to the combiner direction
    r = h - g * (np.vdot(g, h) / (sigma2_b + np.vdot(g, g).real))
    return r / np.linalg.norm(r)


def bs_sinr(real: ChannelRealization, w: np.ndarray, p_m: float, sigma2_b: float) -> float:
    """BS receive SINR with the MMSE combiner."""
    return p_m / sigma2_b * _leak_free_gain(real.h_li_bs @ w, real.h_m, sigma2_b)


def _leak_free_gain(g: np.ndarray, hm: np.ndarray, sigma2_b: float) -> float:
    """``|h|^2 - |h^H g|^2 / (sigma^2 + |g|^2)`` without the cancellation.

    Equal to ``(sigma^2 |h|^2 + |g|^2 |h_perp|^2) / (sigma^2 + |g|^2)`` with
    ``h_perp`` the part of ``h`` orthogonal to ``g``.
    """
    gg = np.vdot(g, g).real
    hh = np.vdot(hm, hm).real
    if gg == 0.0:
        return hh
    perp = hm - g * (np.vdot(g, hm) / gg)
    return (sigma2_b * hh + gg * np.vdot(perp, perp).real) / (sigma2_b + gg)


def bs_rate(real: ChannelRealization, w: np.ndarray, alpha: float, params: SystemParams,
            harvest_gain: Optional[float] = None) -> float:
    """Uplink rate at the BS in bits per channel use."""
    if harvest_gain is None:
        harvest_gain = full_csi_harvest_gain(real)
    p_m = ms_transmit_power(alpha, params, harvest_gain)
    return (1.0 - alpha) * math.log2(1.0 + bs_sinr(real, w, p_m, params.sigma2_b))


def bs_rate_inverse_form(real: ChannelRealization, w: np.ndarray, alpha: float,
                         params: SystemParams, harvest_gain: Optional[float] = None) -> float:
    """Same rate as :func:`bs_rate`, via an explicit matrix inverse."""
    if harvest_gain is None:
        harvest_gain = full_csi_harvest_gain(real)
    p_m = ms_transmit_power(alpha, params, harvest_gain)
    g = real.h_li_bs @ w
    cov = params.sigma2_b * np.eye(len(g)) + np.outer(g, g.conj())
    sinr = p_m * np.vdot(real.h_m, np.linalg.solve(cov, real.h_m)).real
    return (1.0 - alpha) * math.log2(1.0 + sinr)


def ms_rate(real: ChannelRealization, w: np.ndarray, alpha: float, params: SystemParams,
            harvest_gain: Optional[float] = None) -> float:
    """Downlink rate at the MS, which hears its own uplink through ``h_li_ms``."""
    if harvest_gain is None:
        harvest_gain = full_csi_harvest_gain(real)
    p_m = ms_transmit_power(alpha, params, harvest_gain)
    signal = float(abs(np.vdot(real.h_b, w)) ** 2)
    noise = params.sigma2_m + p_m * float(abs(real.h_li_ms)) ** 2
    return float((1.0 - alpha) * math.log2(1.0 + signal / noise))


def gamma_b(r_b_target: float, alpha: float, p_m: float, h_m_ch: np.ndarray,
            sigma2_b: float) -> float:
    """Loopback leakage ``|h_M^H g|^2 / (sigma_b^2 + |g|^2)`` that meets the rate target exactly.

    Returns ``-inf`` when no MS power is available but a positive rate is
    requested, which downstream code treats as infeasible.
    """
    gain = float(np.vdot(h_m_ch, h_m_ch).real)
    if r_b_target == 0.0:
        return gain
    if p_m <= 0.0:
        return -math.inf
    expo = r_b_target / (1.0 - alpha)
    if expo > 1000.0:
        return -math.inf
    return gain - sigma2_b / p_m * math.expm1(expo * LN2)


def _sdr_constraint(real: ChannelRealization, gam: float) -> np.ndarray:
    hb = real.h_li_bs
    u = hb.conj().T @ real.h_m
    return np.outer(u, u.conj()) - gam * (hb.conj().T @ hb)


def sdr_feasible(real: ChannelRealization, gam: float, params: SystemParams) -> bool:
    """Whether ``tr(V A) = gam sigma_b^2, tr V = P, V >= 0`` has a solution.

    ``tr(V A) / P`` sweeps exactly ``[lambda_min(A), lambda_max(A)]`` over
    the feasible ``V``, so this is an eigenvalue range check.
    """
    if not math.isfinite(gam) or gam < 0.0:
        return False
    a = _sdr_constraint(real, gam)
    vals = np.linalg.eigvalsh(a)
    target = gam * params.sigma2_b / params.p_bs
    slack = _SCREEN_TOL * max(np.abs(vals).max(), abs(target), np.finfo(float).tiny)
    return vals[0] - slack <= target <= vals[-1] + slack


def mrt_beamformer(h_b: np.ndarray, p: float) -> np.ndarray:
    return math.sqrt(p) * h_b / np.linalg.norm(h_b)


def _infeasible(alpha: float, target: float, tag: str, reason: str) -> BeamformerSolution:
    return BeamformerSolution(w=None, alpha=alpha, ms_rate=float("nan"),
                              bs_rate_or_target=target, rank_ratio=float("nan"),
                              feasible=False, method_tag=tag, extra={"reason": reason})


def solve_w_given_alpha(real: ChannelRealization, alpha: float, r_b_target: float,
                        params: SystemParams,
                        harvest_gain: Optional[float] = None) -> BeamformerSolution:
    """Best transmit beamformer for a fixed time split and BS rate target."""
    if harvest_gain is None:
        harvest_gain = full_csi_harvest_gain(real)
    p = params.p_bs
    if r_b_target == 0.0:
        if not 0.0 <= alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
        w = mrt_beamformer(real.h_b, p)
        return BeamformerSolution(
            w=w, alpha=alpha, ms_rate=ms_rate(real, w, alpha, params, harvest_gain),
            bs_rate_or_target=0.0, rank_ratio=0.0, feasible=True, method_tag="optimum")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p_m = ms_transmit_power(alpha, params, harvest_gain)
    gam = gamma_b(r_b_target, alpha, p_m, real.h_m, params.sigma2_b)
    if not sdr_feasible(real, gam, params):
        return _infeasible(alpha, r_b_target, "optimum", "screen")

    # work with X = V / P and unit-scaled data so the solver sees O(1) numbers
    hb_dir = real.h_b / np.linalg.norm(real.h_b)
    c_obj = np.outer(hb_dir, hb_dir.conj())
    a = _sdr_constraint(real, gam)
    a_scale = np.abs(a).max()
    rhs = gam * params.sigma2_b / p / a_scale
    prob = conic.HermitianSdp(
        dim=params.n_tx, objective=c_obj, sense="max",
        eq_constraints=[(a / a_scale, rhs), (np.eye(params.n_tx), 1.0)])
    sol = conic.solve(prob, precise=True)
    if sol.status == "infeasible":
        return _infeasible(alpha, r_b_target, "optimum", "solver")
    if not sol.optimal:
        return _infeasible(alpha, r_b_target, "optimum", sol.status)

    def residual(u):
        return abs(np.vdot(u, (a / a_scale) @ u).real - rhs) / max(abs(rhs), 1e-300)

    def scorer(u):
        # samples must meet the equality closely to count
        if residual(u) > 1e-3:
            return -math.inf
        return abs(np.vdot(hb_dir, u)) ** 2

    w_unit, ratio = conic.extract_rank_one(sol.v, 1.0, scorer=scorer,
                                           rng=np.random.default_rng(0))
    w = math.sqrt(p) * _polish_on_sphere(w_unit, a / a_scale, rhs)
    return BeamformerSolution(
        w=w, alpha=alpha, ms_rate=ms_rate(real, w, alpha, params, harvest_gain),
        bs_rate_or_target=r_b_target, rank_ratio=ratio, feasible=True,
        method_tag="optimum",
        extra={"bs_rate": bs_rate(real, w, alpha, params, harvest_gain),
               "gamma_b": gam,
               "sdp_objective": sol.objective_value * p * np.vdot(real.h_b, real.h_b).real})


def _polish_on_sphere(w: np.ndarray, a: np.ndarray, rhs: float) -> np.ndarray:
    """Rotate unit ``w`` along the great circle through ``A w`` until ``w^H A w = rhs``.

    The solver meets the equality only to its tolerance; the BS rate depends
    on it through a difference that can be much smaller than its terms.
    """
    aw = a @ w
    qa = np.vdot(w, aw).real
    u = aw - qa * w
    nu = np.linalg.norm(u)
    if nu <= 1e-14 * max(np.linalg.norm(aw), 1e-300):
        return w
    u = u / nu
    qb = np.vdot(u, a @ u).real
    qc = np.vdot(w, a @ u).real
    # q(phi/2) = (qa+qb)/2 + (qa-qb)/2 cos(phi) + qc sin(phi)
    c0, c1, c2 = 0.5 * (qa + qb), 0.5 * (qa - qb), qc
    amp = math.hypot(c1, c2)
    if amp == 0.0 or abs(rhs - c0) > amp:
        return w
    base = math.atan2(c2, c1)
    spread = math.acos((rhs - c0) / amp)
    phi = min((base + spread, base - spread), key=lambda x: abs(math.remainder(x, 2 * math.pi)))
    t = 0.5 * math.remainder(phi, 2 * math.pi)
    out = math.cos(t) * w + math.sin(t) * u
    return out / np.linalg.norm(out)


def _alpha_grid(step: float) -> np.ndarray:
    n = int(math.floor((1.0 - 1e-12) / step))
    return step * np.arange(1, n + 1)


def algorithm1_joint(real: ChannelRealization, r_b_target: float, params: SystemParams,
                     alpha_step: float = 1e-3, search: str = "first",
                     patience: int = 3) -> BeamformerSolution:
    """Joint time split and beamformer on a uniform ``alpha`` grid.

    ``search="first"`` returns the smallest feasible grid point. With a fixed
    beamformer the MS rate falls with ``alpha``, but the feasible beamformer
    set grows with ``alpha``, so the first point need not be best.
    ``search="ascent"`` keeps climbing the grid while the MS rate improves
    (stopping after ``patience`` non-improving points) and also compares the
    exact feasibility boundary, where the design collapses to zero forcing.

    When no grid point is feasible but the boundary exists (a target at the
    maximum BS rate) the boundary solution is returned in both modes.
    """
    if not 0.0 < alpha_step <= 0.1:
        raise ValueError(f"alpha_step must lie in (0, 0.1], got {alpha_step}")
    if search not in ("first", "ascent"):
        raise ValueError(f"unknown search mode {search!r}")
    lam = full_csi_harvest_gain(real)
    if r_b_target == 0.0:
        return solve_w_given_alpha(real, 0.0, 0.0, params, lam)
    b_tilde = params.eta * params.p_bs * lam * np.vdot(real.h_m, real.h_m).real / params.sigma2_b
    if r_b_target > rb_max(b_tilde)[1] * (1.0 + 1e-12):
        return _infeasible(float("nan"), r_b_target, "optimum", "above_rb_max")

    best = None
    misses = 0
    for alpha in _alpha_grid(alpha_step):
        p_m = ms_transmit_power(alpha, params, lam)
        gam = gamma_b(r_b_target, alpha, p_m, real.h_m, params.sigma2_b)
        if not sdr_feasible(real, gam, params):
            if best is not None:
                break
            continue
        sol = solve_w_given_alpha(real, float(alpha), r_b_target, params, lam)
        if not sol.feasible:
            continue
        if search == "first":
            return sol
        if best is None or sol.ms_rate > best.ms_rate:
            best, misses = sol, 0
        else:
            misses += 1
            if misses >= patience:
                break

    edge = _boundary_solution(real, r_b_target, params)
    if best is None:
        return edge if edge is not None else _infeasible(
            float("nan"), r_b_target, "optimum", "grid_exhausted")
    if search == "ascent" and edge is not None and edge.ms_rate > best.ms_rate:
        return edge
    return best


def _boundary_solution(real: ChannelRealization, r_b_target: float,
                       params: SystemParams) -> Optional[BeamformerSolution]:
    # at the smallest feasible alpha the required LI-free gain equals |h_M|^2,
    # which only the zero-forcing beamformer attains
    sol = zf_joint(real, r_b_target, params)
    if not sol.feasible:
        return None
    sol.method_tag = "optimum"
    sol.extra["boundary"] = True
    return sol


def zf_projector(real: ChannelRealization) -> np.ndarray:
    """Projector onto the complement of ``H_B^H h_M`` (kills LI at the MRC output)."""
    u = real.h_li_bs.conj().T @ real.h_m
    nu = np.vdot(u, u).real
    if nu == 0.0:
        raise ValueError("H_B^H h_M is zero; nothing to null")
    return np.eye(len(u)) - np.outer(u, u.conj()) / nu


def zf_beamformer(real: ChannelRealization, params: SystemParams) -> Optional[np.ndarray]:
    """Zero-forcing beamformer, or None when ``h_B`` lies in the nulled direction."""
    bh = zf_projector(real) @ real.h_b
    norm = np.linalg.norm(bh)
    if norm <= 1e-12 * np.linalg.norm(real.h_b):
        return None
    return math.sqrt(params.p_bs) * bh / norm


def zf_alpha_opt(r_b_target: float, b: float, gamma: float) -> float:
    """Smallest ``alpha`` with ``(1-alpha) log2(1 + alpha b gamma / (1-alpha)) = R_B``.

    Closed form through both real Lambert-W branches; returns ``nan`` when the
    target exceeds the achievable maximum.
    """
    if r_b_target < 0:
        raise ValueError("r_b_target must be >= 0")
    if not (b > 0 and gamma > 0):
        raise ValueError("b and gamma must be positive")
    if r_b_target == 0.0:
        return 0.0
    bg = b * gamma
    rbar = r_b_target * LN2
    kappa = rbar / bg
    # log of |Y| first, so huge exponents are caught instead of overflowing
    log_abs_y = math.log(kappa) + rbar * (1.0 - 1.0 / bg)
    if log_abs_y > -1.0 + 1e-12:
        return float("nan")
    # rounding can leave a target sitting exactly at the maximum just past -1/e
    y = -math.exp(min(log_abs_y, -1.0))
    roots = []
    for branch in (lambert_w0, lambert_wm1):
        try:
            wv = branch(y)
        except ValueError:
            continue
        u = -wv / rbar - 1.0 / bg
        if u < 0:
            continue
        alpha = u / (1.0 + u)
        if 0.0 <= alpha < 1.0:
            roots.append(alpha)
    return min(roots) if roots else float("nan")


def rb_max(b_tilde: float) -> tuple[float, float]:
    """Maximizer and maximum over alpha of ``(1-alpha) log2(1 + alpha b / (1-alpha))``."""
    if not b_tilde > 0:
        raise ValueError(f"b_tilde must be positive, got {b_tilde}")
    z = math.exp(lambert_w0((b_tilde - 1.0) / math.e) + 1.0)
    alpha = (z - 1.0) / (b_tilde + z - 1.0)
    rate = (1.0 - alpha) * math.log2(1.0 + alpha * b_tilde / (1.0 - alpha))
    return alpha, rate


def zf_joint(real: ChannelRealization, r_b_target: float,
             params: SystemParams) -> BeamformerSolution:
    """Zero-forcing beamformer with the closed-form time split."""
    lam = full_csi_harvest_gain(real)
    w = zf_beamformer(real, params)
    if w is None:
        return _infeasible(float("nan"), r_b_target, "zf", "degenerate")
    b = params.eta * params.p_bs * lam
    gam = np.vdot(real.h_m, real.h_m).real / params.sigma2_b
    alpha = zf_alpha_opt(r_b_target, b, gam)
    if not math.isfinite(alpha):
        return _infeasible(float("nan"), r_b_target, "zf", "above_rb_max")
    return BeamformerSolution(
        w=w, alpha=float(alpha), ms_rate=ms_rate(real, w, alpha, params, lam),
        bs_rate_or_target=r_b_target, rank_ratio=0.0, feasible=True, method_tag="zf",
        extra={"bs_rate": bs_rate(real, w, alpha, params, lam)})


def hd_rates(real: ChannelRealization, alpha: float, params: SystemParams,
             variant: str) -> tuple[float, float]:
    """(BS rate, MS rate) of the half-duplex baselines; ``variant`` is ``ac`` or ``rfc``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if variant == "ac":
        lam = full_csi_harvest_gain(real)
        up_gain, down_gain = lam * lam, lam
    elif variant == "rfc":
        up_gain = np.vdot(real.h_m, real.h_m).real
        down_gain = np.vdot(real.h_b, real.h_b).real
    else:
        raise ValueError(f"unknown half-duplex variant {variant!r}")
    half = 0.5 * (1.0 - alpha)
    p = params.p_bs
    bs = half * math.log2(1.0 + alpha / (1.0 - alpha) * params.eta * p * up_gain / params.sigma2_b)
    ms = half * math.log2(1.0 + p * down_gain / params.sigma2_m)
    return bs, ms


def _point(sol: BeamformerSolution, r_b: float) -> RatePoint:
    bs = (sol.extra or {}).get("bs_rate", float("nan")) if sol.feasible else float("nan")
    return RatePoint(r_b_target=r_b, ms_rate=sol.ms_rate if sol.feasible else float("nan"),
                     alpha=sol.alpha, method_tag=sol.method_tag, feasible=sol.feasible,
                     bs_rate=bs if r_b > 0 else 0.0)


def rate_region_sweep(real: ChannelRealization, params: SystemParams, n_points: int = 20,
                      alpha_step: float = 1e-3,
                      methods=("optimum", "zf", "hd_ac", "hd_rfc"),
                      search: str = "ascent") -> dict:
    """Trace the (BS rate, MS rate) boundary of each method for one realization.

    Full-duplex methods sweep the BS rate target over ``[0, R_B^max]``; the
    half-duplex baselines sweep ``alpha`` on ``n_points`` values in ``[0, 1)``.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    lam = full_csi_harvest_gain(real)
    b_tilde = params.eta * params.p_bs * lam * np.vdot(real.h_m, real.h_m).real / params.sigma2_b
    top = rb_max(b_tilde)[1]
    targets = np.linspace(0.0, top, n_points)
    curves = {}
    if "optimum" in methods:
        pts = [_point(algorithm1_joint(real, float(t), params, alpha_step, search=search),
                      float(t)) for t in targets]
        curves["optimum"] = TradeoffCurve("optimum", pts)
    if "zf" in methods:
        pts = []
        for t in targets:
            sol = zf_joint(real, float(t), params)
            pts.append(_point(sol, float(t)))
        curves["zf"] = TradeoffCurve("zf", pts)
    alphas = np.linspace(0.0, 1.0, n_points, endpoint=False)
    for variant in ("ac", "rfc"):
        tag = "hd_" + variant
        if tag not in methods:
            continue
        pts = []
        for a in alphas:
            bs, ms = hd_rates(real, float(a), params, variant)
            pts.append(RatePoint(r_b_target=bs, ms_rate=ms, alpha=float(a), method_tag=tag,
                                 feasible=True, bs_rate=bs))
        curves[tag] = TradeoffCurve(tag, pts)
    return curves
