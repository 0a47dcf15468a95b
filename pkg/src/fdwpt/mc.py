"""
Monte Carlo estimators for the ergodic MS rate and the BS outage.

Samples are generated in fixed-size chunks; chunk ``k`` draws from a Philox
stream keyed by ``(seed, k)``, so the estimate does not depend on how many
worker threads evaluate the chunks or in which order they finish.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .model import (
    CovarianceModel,
    SystemParams,
    crandn,
    dbm_to_watts,
    isotropic_harvest_gain,
    psd_sqrt,
)
from .partialcsi import (
    PartialCsiInstance,
    ergodic_ms_rate,
    outage_exact,
    outage_spectrum,
    phi_matrix_sherman_morrison,
)

__all__ = [
    "CHUNK",
    "mc_ergodic_rate",
    "mc_outage",
    "chunk_rng",
    "ValidationPlan",
    "ValidationPoint",
    "ValidationReport",
    "validate_figures",
    "random_unit_beamformer",
]

CHUNK = 1 << 15
MIN_SAMPLES = 1000


def chunk_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for chunk ``index`` of the stream rooted at ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _chunked_sums(n_samples: int, seed: int, draw: Callable, threads: int = 1):
    """Run ``draw(rng, size) -> values`` over all chunks; return (sum, sum of squares)."""
    sizes = [CHUNK] * (n_samples // CHUNK)
    if n_samples % CHUNK:
        sizes.append(n_samples % CHUNK)

    def work(k):
        vals = np.asarray(draw(chunk_rng(seed, k), sizes[k]), float)
        return math.fsum(vals), math.fsum(vals * vals)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(k) for k in range(len(sizes))]
    return math.fsum(p[0] for p in parts), math.fsum(p[1] for p in parts)


def _mean_stderr(total: float, total_sq: float, n: int) -> tuple[float, float]:
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n)


def _check_samples(n_samples: int) -> None:
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_SAMPLES}, got {n_samples}")


def mc_ergodic_rate(inst: PartialCsiInstance, w: np.ndarray, alpha: float,
                    n_samples: int = 100_000, seed: int = 0,
                    threads: int = 1) -> tuple[float, float]:
    """Sample mean and standard error of the MS rate over BS->MS channel draws."""
    _check_samples(n_samples)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    root = psd_sqrt(inst.cov.cov_b)
    # h_B = R^{1/2} z, so h_B^H w = z^H (R^{1/2} w)
    proj = root @ np.asarray(w, complex)
    noise = inst.params.sigma2_m + inst.p_m(alpha) * abs(inst.h_li_ms) ** 2
    scale = 1.0 - alpha

    def draw(rng, size):
        z = crandn(rng, (size, len(proj)))
        gain = np.abs(z.conj() @ proj) ** 2
        return scale * np.log2(1.0 + gain / noise)

    total, total_sq = _chunked_sums(n_samples, seed, draw, threads)
    return _mean_stderr(total, total_sq, n_samples)


def mc_outage(inst: PartialCsiInstance, w: np.ndarray, alpha: float,
              n_samples: int = 1_000_000, seed: int = 0,
              threads: int = 1) -> tuple[float, float]:
    """Empirical probability that the BS rate falls to or below ``gamma_b``."""
    _check_samples(n_samples)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    params = inst.params
    p_m = inst.p_m(alpha)
    # h_M = R_M^{1/2} z turns the SINR quadratic form into z^H Phi z
    quad = phi_matrix_sherman_morrison(inst, np.asarray(w, complex))
    scale = 1.0 - alpha
    threshold = params.gamma_b

    def draw(rng, size):
        z = crandn(rng, (size, quad.shape[0]))
        sinr = p_m * np.einsum("ki,ij,kj->k", z.conj(), quad, z).real
        return (scale * np.log2(1.0 + sinr) <= threshold).astype(float)

    total, _ = _chunked_sums(n_samples, seed, draw, threads)
    est = total / n_samples
    return est, math.sqrt(est * (1.0 - est) / n_samples)


def random_unit_beamformer(n: int, seed: int) -> np.ndarray:
    """Isotropically random unit vector, reproducible from ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 << 20,)))
    v = crandn(rng, (n,))
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ValidationPlan:
    """Sweeps used to check the closed forms against simulation.

    The outage sweep varies transmit power at threshold ``outage_gamma_b``; the
    rate sweep varies the MS loopback power, which is applied as the known
    instantaneous loopback magnitude ``|h_m|^2``.
    """

    base: SystemParams
    theta_b: float = math.radians(5.0)
    theta_m: float = math.radians(15.0)
    sigma_theta: float = math.radians(10.0)
    alpha: float = 0.1
    outage_gamma_b: float = 10.0
    power_dbm_grid: tuple = (10.0, 16.0, 22.0, 28.0, 34.0, 40.0)
    rate_power_dbm: float = 10.0
    li_ms_dbm_grid: tuple = (-20.0, -10.0, 0.0, 10.0, 20.0, 30.0)
    outage_samples: int = 1_000_000
    rate_samples: int = 100_000
    outage_abs_tol: float = 0.003
    rate_rel_tol: float = 0.01
    stderr_factor: float = 3.0
    tolerance_scale: float = 1.0
    seed: int = 0
    threads: int = 1


@dataclass
class ValidationPoint:
    quantity: str  # "outage" or "rate"
    sweep_value: float
    analytic: float
    mc: float
    stderr: float
    allowed: float
    passed: bool


@dataclass
class ValidationReport:
    points: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points)

    def failures(self) -> list:
        return [p for p in self.points if not p.passed]


def _instance(plan: ValidationPlan, params: SystemParams, h_li_ms: complex) -> PartialCsiInstance:
    cov = CovarianceModel.from_angles(params, plan.theta_b, plan.theta_m,
                                      plan.sigma_theta, plan.sigma_theta)
    rng = np.random.default_rng(np.random.SeedSequence(plan.seed, spawn_key=(1 << 21,)))
    h_li_bs = crandn(rng, (params.n_rx, params.n_tx), params.sigma2_li_bs)
    return PartialCsiInstance(cov, h_li_bs, complex(h_li_ms), params,
                              isotropic_harvest_gain(params))


def validate_figures(plan: ValidationPlan, progress: Optional[Callable] = None) -> ValidationReport:
    """Analytic vs simulated outage (power sweep) and ergodic rate (MS loopback sweep)."""
    report = ValidationReport()
    u = random_unit_beamformer(plan.base.n_tx, plan.seed)
    li_ms_nominal = math.sqrt(plan.base.sigma2_li_ms)

    for k, p_dbm in enumerate(plan.power_dbm_grid):
        params = replace(plan.base, p_bs=dbm_to_watts(p_dbm), gamma_b=plan.outage_gamma_b)
        inst = _instance(plan, params, li_ms_nominal)
        w = math.sqrt(params.p_bs) * u
        analytic = outage_exact(outage_spectrum(inst, w, plan.alpha))
        est, se = mc_outage(inst, w, plan.alpha, plan.outage_samples,
                            seed=plan.seed + 1000 + k, threads=plan.threads)
        allowed = plan.tolerance_scale * max(plan.outage_abs_tol, plan.stderr_factor * se)
        report.points.append(ValidationPoint("outage", p_dbm, analytic, est, se, allowed,
                                             abs(analytic - est) <= allowed))
        if progress:
            progress(report.points[-1])

    for k, li_dbm in enumerate(plan.li_ms_dbm_grid):
        params = replace(plan.base, p_bs=dbm_to_watts(plan.rate_power_dbm),
                         sigma2_li_ms=dbm_to_watts(li_dbm))
        inst = _instance(plan, params, math.sqrt(params.sigma2_li_ms))
        w = math.sqrt(params.p_bs) * u
        analytic = ergodic_ms_rate(inst, w, plan.alpha)
        est, se = mc_ergodic_rate(inst, w, plan.alpha, plan.rate_samples,
                                  seed=plan.seed + 2000 + k, threads=plan.threads)
        rel_err = abs(analytic - est) / analytic
        allowed = plan.tolerance_scale * max(plan.rate_rel_tol, plan.stderr_factor * se / analytic)
        report.points.append(ValidationPoint("rate", li_dbm, analytic, est, se, allowed,
                                             rel_err <= allowed))
        if progress:
            progress(report.points[-1])
    return report
