"""
Design from channel statistics: ergodic MS rate under a BS outage ceiling.

The BS knows its own loopback channel and the covariances of the two data
channels, not their realizations. The MS rate is averaged over the BS->MS
channel; the BS rate is protected by capping the probability that it falls
below a threshold. The exact outage is a hypoexponential CDF; the design
enforces its Chernoff bound, which turns into a determinant-root cone
constraint on the lifted beamformer for each fixed Chernoff parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import conic
from .model import (
    BeamformerSolution,
    CovarianceModel,
    RatePoint,
    SystemParams,
    TradeoffCurve,
    crandn,
    isotropic_harvest_gain,
    ms_transmit_power,
    psd_sqrt,
)
from .specfun import exp_e1_scaled, exp_mix_cdf, exp_mix_coeffs

__all__ = [
    "PartialCsiInstance",
    "OutageSpectrum",
    "ergodic_ms_rate",
    "gamma_bar",
    "phi_matrix",
    "phi_matrix_sherman_morrison",
    "phi_matrix_dense",
    "outage_spectrum",
    "outage_exact",
    "chernoff_bound",
    "chernoff_optimal_beta",
    "beta_grid",
    "solve_outage_sdr",
    "joint_partial_csi",
    "tradeoff_sweep",
    "default_alpha_grid",
]

LN2 = math.log(2.0)
# eigenvalues of Phi below this fraction of the largest are treated as zero
_EIG_FLOOR = 1e-12
_LOG_MAX = 700.0
# smallest nonzero beta on the log grid, relative to the L / gamma_bar cap
_BETA_SPAN = 1e-4
_ACCEPT_TOL = 1e-6


@dataclass(frozen=True)
class PartialCsiInstance:
    """What the transmitter knows: covariances, its loopback channels and link parameters."""

    cov: CovarianceModel
    h_li_bs: np.ndarray
    h_li_ms: complex
    params: SystemParams
    harvest_gain: float

    def __post_init__(self):
        nt, nr = self.params.n_tx, self.params.n_rx
        if self.cov.cov_b.shape != (nt, nt):
            raise ValueError(f"cov_b has shape {self.cov.cov_b.shape}, expected {(nt, nt)}")
        if self.cov.cov_m.shape != (nr, nr):
            raise ValueError(f"cov_m has shape {self.cov.cov_m.shape}, expected {(nr, nr)}")
        if self.h_li_bs.shape != (nr, nt):
            raise ValueError(f"h_li_bs has shape {self.h_li_bs.shape}, expected {(nr, nt)}")
        if not self.harvest_gain > 0:
            raise ValueError("harvest_gain must be positive")

    @classmethod
    def draw(cls, params: SystemParams, cov: CovarianceModel,
             rng: np.random.Generator) -> "PartialCsiInstance":
        """Instance with freshly drawn loopback channels and the isotropic harvest gain."""
        h_li_bs = crandn(rng, (params.n_rx, params.n_tx), params.sigma2_li_bs)
        h_li_ms = complex(crandn(rng, (), params.sigma2_li_ms))
        return cls(cov, h_li_bs, h_li_ms, params, isotropic_harvest_gain(params))

    @cached_property
    def cov_m_sqrt(self) -> np.ndarray:
        return psd_sqrt(self.cov.cov_m)

    @cached_property
    def cov_b_top(self) -> tuple[float, np.ndarray]:
        vals, vecs = np.linalg.eigh(self.cov.cov_b)
        return float(vals[-1]), vecs[:, -1]

    @cached_property
    def cov_m_eigs(self) -> np.ndarray:
        return np.clip(np.linalg.eigvalsh(self.cov.cov_m), 0.0, None)

    @cached_property
    def phi_rank(self) -> int:
        """Number of positive eigenvalues of the outage matrix (the rank of ``R_M``)."""
        eigs = self.cov_m_eigs
        return int(np.sum(eigs > _EIG_FLOOR * eigs.max()))

    def p_m(self, alpha: float) -> float:
        return ms_transmit_power(alpha, self.params, self.harvest_gain)


@dataclass(frozen=True)
class OutageSpectrum:
    """Quadratic-form matrix of the BS SINR, its positive eigenvalues and the SINR threshold."""

    phi: np.ndarray
    lambdas: tuple[float, ...]
    gamma_bar: float

    @property
    def order(self) -> int:
        return len(self.lambdas)


def gamma_bar(inst: PartialCsiInstance, alpha: float) -> float:
    """Normalized SINR threshold ``(2^{gamma_B/(1-alpha)} - 1) / p_m``."""
    p_m = inst.p_m(alpha)
    if p_m <= 0.0:
        return math.inf
    expo = inst.params.gamma_b / (1.0 - alpha) * LN2
    if expo > 700.0:
        return math.inf
    return math.expm1(expo) / p_m


def ergodic_ms_rate(inst: PartialCsiInstance, w: np.ndarray, alpha: float) -> float:
    """Average MS rate over the BS->MS channel for beamformer ``w``."""
    gain = float(np.real(np.vdot(w, inst.cov.cov_b @ w)))
    return _ergodic_from_gain(inst, gain, alpha)


def _ergodic_from_gain(inst: PartialCsiInstance, gain: float, alpha: float) -> float:
    if not gain > 0.0:
        raise ValueError("beamformer has zero gain along the channel covariance")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    noise = inst.params.sigma2_m + inst.p_m(alpha) * abs(inst.h_li_ms) ** 2
    return (1.0 - alpha) / LN2 * exp_e1_scaled(noise / gain)


def phi_matrix(inst: PartialCsiInstance, w: np.ndarray) -> np.ndarray:
    """``R_M^{1/2} (sigma_b^2 I + g g^H)^{-1} R_M^{1/2}`` with ``g = H_B w``.

    Splits the inverse into the part orthogonal to ``g`` and the part along it,
    so strong loopback does not cost digits the way a dense solve does.
    """
    sig = inst.params.sigma2_b
    g = inst.h_li_bs @ w
    s = inst.cov_m_sqrt
    gg = np.vdot(g, g).real
    if gg == 0.0:
        return inst.cov.cov_m / sig
    u = g / math.sqrt(gg)
    b = s @ u
    perp = s - np.outer(u, u.conj() @ s)
    phi = perp.conj().T @ perp / sig + np.outer(b, b.conj()) / (sig + gg)
    return 0.5 * (phi + phi.conj().T)


def phi_matrix_dense(inst: PartialCsiInstance, w: np.ndarray) -> np.ndarray:
    """Same matrix by a dense linear solve; loses accuracy when ``|g|^2 >> sigma_b^2``."""
    g = inst.h_li_bs @ w
    s = inst.cov_m_sqrt
    cov = inst.params.sigma2_b * np.eye(len(g)) + np.outer(g, g.conj())
    phi = s @ np.linalg.solve(cov, s)
    return 0.5 * (phi + phi.conj().T)


def phi_matrix_sherman_morrison(inst: PartialCsiInstance, w: np.ndarray) -> np.ndarray:
    """Rank-one-update form of :func:`phi_matrix`."""
    sig = inst.params.sigma2_b
    g = inst.h_li_bs @ w
    a = inst.cov_m_sqrt @ g
    phi = inst.cov.cov_m / sig - np.outer(a, a.conj()) / (sig * (sig + np.vdot(g, g).real))
    return 0.5 * (phi + phi.conj().T)


def _positive_eigs(phi: np.ndarray) -> tuple[float, ...]:
    vals = np.linalg.eigvalsh(phi)
    top = vals[-1]
    if top <= 0.0:
        return ()
    return tuple(float(v) for v in vals if v > _EIG_FLOOR * top)


def outage_spectrum(inst: PartialCsiInstance, w: np.ndarray, alpha: float) -> OutageSpectrum:
    phi = phi_matrix(inst, w)
    return OutageSpectrum(phi, _positive_eigs(phi), gamma_bar(inst, alpha))


def outage_exact(spec: OutageSpectrum) -> float:
    """Probability that the BS SINR quadratic form stays below the threshold."""
    if spec.gamma_bar == 0.0:
        return 0.0
    if not spec.lambdas or math.isinf(spec.gamma_bar):
        return 1.0
    return exp_mix_cdf(exp_mix_coeffs(spec.lambdas), spec.gamma_bar)


def chernoff_bound(spec: OutageSpectrum, beta: float) -> float:
    """``e^{beta gamma_bar} / det(I + beta Phi)``; not capped at 1, ``inf`` on overflow."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if beta == 0.0:
        return 1.0
    log_det = sum(math.log1p(beta * lam) for lam in spec.lambdas)
    expo = beta * spec.gamma_bar - log_det
    return math.inf if expo > _LOG_MAX else math.exp(expo)


def chernoff_optimal_beta(spec: OutageSpectrum) -> float:
    """Minimizer of the Chernoff bound over ``[0, L / gamma_bar]``.

    The log-bound is convex with derivative ``gamma_bar - sum lam/(1+beta lam)``,
    so the minimizer is the root of that derivative when it starts negative.
    """
    gb = spec.gamma_bar
    if not gb > 0:
        raise ValueError("gamma_bar must be positive")
    lam = np.asarray(spec.lambdas, float)
    if lam.size == 0 or gb >= lam.sum():
        return 0.0
    cap = lam.size / gb

    def slope(beta: float) -> float:
        return gb - float(np.sum(lam / (1.0 + beta * lam)))

    # slope(cap) >= 0 since each term is below 1/beta
    if slope(cap) <= 0.0:
        return cap
    return brentq(slope, 0.0, cap, xtol=1e-15 * cap, rtol=1e-14, maxiter=500)


def beta_grid(order: int, gbar: float, resolution: int = 64) -> np.ndarray:
    """Zero plus ``resolution`` log-spaced points ending at ``order / gbar``."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if not (gbar > 0 and math.isfinite(gbar)) or order < 1:
        return np.zeros(1)
    cap = order / gbar
    return np.concatenate([[0.0], cap * np.logspace(math.log10(_BETA_SPAN), 0.0, resolution)])


def default_alpha_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1.0 / step))
    return step * np.arange(1, n)


def _no_leak_log_bound(inst: PartialCsiInstance, beta: float, gbar: float) -> float:
    # log Chernoff bound with zero loopback leakage: the best any W can do
    k = beta / inst.params.sigma2_b
    return beta * gbar - float(np.sum(np.log1p(k * inst.cov_m_eigs)))


def _rank_one_log_bound(inst: PartialCsiInstance, w: np.ndarray, beta: float,
                        gbar: float) -> float:
    if beta == 0.0:
        return 0.0
    lam = np.linalg.eigvalsh(phi_matrix(inst, w))
    return beta * gbar - float(np.sum(np.log1p(beta * np.clip(lam, 0.0, None))))


def _infeasible(alpha: float, rho: float, reason: str, beta: float = math.nan) -> BeamformerSolution:
    return BeamformerSolution(w=None, alpha=alpha, ms_rate=math.nan, bs_rate_or_target=rho,
                              rank_ratio=math.nan, feasible=False, method_tag="partial_csi",
                              beta=beta, extra={"reason": reason})


def solve_outage_sdr(inst: PartialCsiInstance, alpha: float, beta: float,
                     rho: Optional[float] = None) -> BeamformerSolution:
    """Lifted beamformer maximizing the covariance gain under the Chernoff outage ceiling.

    ``rho`` defaults to ``inst.params.rho``. The returned solution carries the
    Chernoff bound at this ``beta`` and the exact outage of the extracted
    beamformer; ``extra['gain_relaxed']`` is the relaxation's optimal gain.
    """
    params = inst.params
    rho = params.rho if rho is None else float(rho)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    p = params.p_bs
    gbar = gamma_bar(inst, alpha)
    nr = params.n_rx
    log_rho = math.log(rho)

    if beta == 0.0:
        # the bound is identically one, so the ceiling is either vacuous or unmeetable
        if rho < 1.0:
            return _infeasible(alpha, rho, "bound_is_one", beta)
        lam_top, vec = inst.cov_b_top
        return _finish(inst, math.sqrt(p) * vec, alpha, beta, rho, 0.0, p * lam_top)

    if not math.isfinite(gbar) or _no_leak_log_bound(inst, beta, gbar) > log_rho + 1e-12:
        return _infeasible(alpha, rho, "screen", beta)

    # normalized variable X = W / P; all matrices scaled to O(1)
    sig = params.sigma2_b
    k = beta / sig
    r_m = inst.cov.cov_m
    s_half = inst.cov_m_sqrt
    hb = inst.h_li_bs
    g_mat = hb.conj().T @ hb
    eye = np.eye(nr)
    base = eye + k * r_m
    s0 = sig / p
    scale = max(s0 + np.trace(g_mat).real / params.n_tx, 1e-300)
    m0 = base * (s0 / scale)
    leak = s_half @ hb  # maps X to S H X H^H S

    def m_lin(x):
        return (base * (np.trace(x @ g_mat).real / scale)
                - (k / scale) * (leak @ x @ leak.conj().T))

    c = math.exp((beta * gbar - log_rho) / nr)
    det = conic.DetRootConstraint(m0=m0, m_lin=m_lin, s0=s0 / scale, s_mat=g_mat / scale, c=c)
    r_b = inst.cov.cov_b
    obj = r_b / np.abs(r_b).max()
    prob = conic.HermitianSdp(dim=params.n_tx, objective=obj, sense="max",
                              ineq_constraints=[(np.eye(params.n_tx), 1.0)],
                              detroot_constraint=det)
    sol = conic.solve(prob)
    if sol.status == "infeasible":
        return _infeasible(alpha, rho, "solver", beta)
    if not sol.optimal:
        return _infeasible(alpha, rho, sol.status, beta)
    x = sol.v
    gain_relaxed = p * float(np.real(np.trace(x @ r_b)))
    if not gain_relaxed > 0.0:
        return _infeasible(alpha, rho, "zero_gain", beta)

    log_det_base = float(np.linalg.slogdet(base)[1])
    base_inv = np.linalg.inv(base)

    def rank_one_margin(xs):
        # det(M(x x^H))^(1/n) / (c s(x)) - 1 for each row x, by the determinant lemma
        s_val = (s0 + np.einsum("ki,ij,kj->k", xs.conj(), g_mat, xs).real) / scale
        a = xs @ leak.T
        quad = np.einsum("ki,ij,kj->k", a.conj(), base_inv, a).real
        factor = 1.0 - k * quad / (scale * s_val)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_root = (log_det_base + np.log(np.where(factor > 0, factor, np.nan))) / nr
        return np.where(factor > 0, np.exp(log_root) / c - 1.0, -np.inf)

    def batch_scorer(xs):
        gains = np.einsum("ki,ij,kj->k", xs.conj(), r_b, xs).real
        return np.where(rank_one_margin(xs) >= -_ACCEPT_TOL, gains, -np.inf)

    vals, vecs = np.linalg.eigh(x)
    ratio = float(vals[-2] / vals[-1]) if len(vals) > 1 and vals[-1] > 0 else 0.0
    if ratio <= 1e-6:
        # the dominant eigenvector keeps the trace of X, which may sit below one
        w_unit = vecs[:, -1] * math.sqrt(max(vals[-1], 0.0))
    else:
        w_unit, _ = conic.extract_rank_one(x, float(np.trace(x).real),
                                           rng=np.random.default_rng(0),
                                           batch_scorer=batch_scorer)
        if rank_one_margin(w_unit[None, :])[0] < -_ACCEPT_TOL:
            return _infeasible(alpha, rho, "randomization_rejected", beta)
    w = math.sqrt(p) * w_unit
    return _finish(inst, w, alpha, beta, rho, ratio, gain_relaxed)


def _finish(inst, w, alpha, beta, rho, ratio, gain_relaxed) -> BeamformerSolution:
    spec = outage_spectrum(inst, w, alpha)
    gain = float(np.real(np.vdot(w, inst.cov.cov_b @ w)))
    return BeamformerSolution(
        w=w, alpha=float(alpha), ms_rate=_ergodic_from_gain(inst, gain, alpha),
        bs_rate_or_target=rho, rank_ratio=ratio, feasible=True, method_tag="partial_csi",
        beta=float(beta), outage_bound=chernoff_bound(spec, beta),
        outage_exact=outage_exact(spec),
        extra={"gain": gain, "gain_relaxed": gain_relaxed, "gamma_bar": spec.gamma_bar})


def _feasible_beta_indices(inst: PartialCsiInstance, betas: np.ndarray, gbar: float,
                           log_rho: float) -> list[int]:
    out = []
    for i, b in enumerate(betas):
        if b == 0.0:
            if log_rho >= 0.0:
                out.append(i)
        elif _no_leak_log_bound(inst, b, gbar) <= log_rho + 1e-12:
            out.append(i)
    return out


def _best_over_beta(inst, alpha, betas, idx, rho, coarse_points):
    """Coarse pass over the feasible beta indices, then a halving refinement."""
    cache = {}

    def run(j):
        if j not in cache:
            cache[j] = solve_outage_sdr(inst, alpha, float(betas[j]), rho)
        return cache[j]

    def value(j):
        sol = run(j)
        return sol.extra["gain_relaxed"] if sol.feasible else -math.inf

    lo, hi = idx[0], idx[-1]
    coarse_stride = max(1, (hi - lo) // max(coarse_points - 1, 1))
    coarse = list(range(lo, hi + 1, coarse_stride))
    if coarse[-1] != hi:
        coarse.append(hi)
    best = max(coarse, key=value)
    step = coarse_stride // 2
    while step >= 1:
        for j in (best - step, best + step):
            if lo <= j <= hi and value(j) > value(best):
                best = j
        step //= 2
    return run(best), len(cache)


def joint_partial_csi(inst: PartialCsiInstance, alpha_grid: Optional[Sequence[float]] = None,
                      beta_grid_resolution: int = 64, rho: Optional[float] = None,
                      exhaustive: bool = False, coarse_points: int = 6,
                      patience: int = 2) -> BeamformerSolution:
    """Best (alpha, beta, beamformer) on the grids for one outage ceiling.

    Every ``alpha`` gets a rate ceiling from the unconstrained covariance
    gain; points whose ceiling cannot beat the incumbent are skipped. When
    the unconstrained beamformer already meets the ceiling at its own best
    ``beta`` it is optimal for that ``alpha`` and no cone program is solved.
    With ``exhaustive=False`` the feasible ``beta`` range is searched by about
    ``coarse_points`` evenly spaced points plus halving refinement, and the
    ``alpha`` scan stops after ``patience`` consecutive feasible points that
    do not improve the rate. ``exhaustive=True`` solves every feasible grid
    point of every ``alpha`` not excluded by its rate ceiling.
    """
    params = inst.params
    rho = params.rho if rho is None else float(rho)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    alphas = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, float)
    if alphas.size == 0:
        raise ValueError("alpha grid is empty")
    log_rho = math.log(rho)
    lam_top, vec_top = inst.cov_b_top
    w_top = math.sqrt(params.p_bs) * vec_top
    ceiling = np.array([_ergodic_from_gain(inst, params.p_bs * lam_top, float(a))
                        for a in alphas])
    best = None
    n_solves = 0
    misses = 0
    for i in np.argsort(-ceiling, kind="stable"):
        alpha = float(alphas[i])
        if best is not None and ceiling[i] <= best.ms_rate:
            break
        gbar = gamma_bar(inst, alpha)
        if not math.isfinite(gbar):
            continue
        spec_top = outage_spectrum(inst, w_top, alpha)
        b_top = chernoff_optimal_beta(spec_top) if gbar > 0 else 0.0
        betas = beta_grid(inst.phi_rank, gbar, beta_grid_resolution)
        # unconstrained beamformer, checked at the grid beta nearest its optimum
        j_top = int(np.argmin(np.abs(betas - b_top)))
        if _rank_one_log_bound(inst, w_top, float(betas[j_top]), gbar) <= log_rho + 1e-12:
            sol = _finish(inst, w_top, alpha, float(betas[j_top]), rho, 0.0,
                          params.p_bs * lam_top)
        else:
            idx = _feasible_beta_indices(inst, betas, gbar, log_rho)
            if not idx:
                continue
            if exhaustive:
                sol = None
                for j in idx:
                    cand = solve_outage_sdr(inst, alpha, float(betas[j]), rho)
                    n_solves += 1
                    if cand.feasible and (sol is None or cand.ms_rate > sol.ms_rate):
                        sol = cand
                if sol is None:
                    continue
            else:
                sol, used = _best_over_beta(inst, alpha, betas, idx, rho, coarse_points)
                n_solves += used
                if not sol.feasible:
                    continue
        if best is None or sol.ms_rate > best.ms_rate:
            best, misses = sol, 0
        else:
            misses += 1
            if not exhaustive and misses >= patience:
                break
    if best is None:
        out = _infeasible(math.nan, rho, "grid_exhausted")
        out.extra["n_solves"] = n_solves
        return out
    best.extra["n_solves"] = n_solves
    return best


def tradeoff_sweep(inst: PartialCsiInstance, rho_grid: Sequence[float],
                   alpha_grid: Optional[Sequence[float]] = None,
                   beta_grid_resolution: int = 64, **kwargs) -> TradeoffCurve:
    """One joint design per outage ceiling, in the order given."""
    pts = []
    for rho in rho_grid:
        if not 0.0 < rho <= 1.0:
            raise ValueError(f"rho values must lie in (0, 1], got {rho}")
        sol = joint_partial_csi(inst, alpha_grid, beta_grid_resolution, rho=float(rho), **kwargs)
        pts.append(RatePoint(r_b_target=inst.params.gamma_b, ms_rate=sol.ms_rate,
                             alpha=sol.alpha, method_tag="partial_csi", feasible=sol.feasible,
                             beta=sol.beta, outage_bound=sol.outage_bound,
                             outage_exact=sol.outage_exact, rho=float(rho)))
    return TradeoffCurve("partial_csi", pts)
