"""
Link parameters, channel draws and spatial covariance models.

All quantities are kept in watts / linear units internally; dBm only
appears at the configuration boundary via :func:`dbm_to_watts`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "SystemParams",
    "ChannelRealization",
    "CovarianceModel",
    "BeamformerSolution",
    "dbm_to_watts",
    "crandn",
    "sample_realization",
    "build_covariance",
    "psd_sqrt",
    "max_eig_pair",
    "ms_transmit_power",
    "full_csi_harvest_gain",
    "isotropic_harvest_gain",
    "RatePoint",
    "TradeoffCurve",
]

METHOD_TAGS = ("optimum", "zf", "hd_ac", "hd_rfc", "partial_csi")


def dbm_to_watts(x: float) -> float:
    """Convert a power in dBm to watts."""
    return 10.0 ** ((float(x) - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Scalar link parameters, linear units.

    ``sigma2_li_bs`` / ``sigma2_li_ms`` are the per-entry variances of the
    residual loopback channels (dimensionless gains).
    """

    p_bs: float
    eta: float
    n_total: int
    n_tx: int
    sigma2_b: float
    sigma2_m: float
    sigma2_li_bs: float
    sigma2_li_ms: float
    d: float = 10.0
    tau: float = 3.0
    gamma_b: float = 0.0
    rho: float = 1.0

    def __post_init__(self):
        if not (0 < self.n_tx < self.n_total):
            raise ValueError(
                f"need 0 < n_tx < n_total, got n_tx={self.n_tx}, n_total={self.n_total}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        for name in ("p_bs", "sigma2_b", "sigma2_m", "sigma2_li_bs", "sigma2_li_ms", "d"):
            val = getattr(self, name)
            if not (val > 0 and np.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if self.tau < 2:
            raise ValueError(f"tau must be >= 2, got {self.tau}")
        if self.gamma_b < 0:
            raise ValueError(f"gamma_b must be >= 0, got {self.gamma_b}")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def n_rx(self) -> int:
        return self.n_total - self.n_tx

    @property
    def pathloss(self) -> float:
        """Large-scale power gain ``1 / d^tau``."""
        return self.d ** (-self.tau)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of every channel in the link.

    h_bm     : (2, N) energy-phase channel BS -> MS
    h_b      : (N_t,) BS -> MS data channel (received signal is ``h_b^H w``)
    h_m      : (N_r,) MS -> BS data channel
    h_li_bs  : (N_r, N_t) residual loopback channel at the BS
    h_li_ms  : residual loopback scalar at the MS
    """

    h_bm: np.ndarray
    h_b: np.ndarray
    h_m: np.ndarray
    h_li_bs: np.ndarray
    h_li_ms: complex

    def check(self, params: SystemParams) -> None:
        n, nt, nr = params.n_total, params.n_tx, params.n_rx
        shapes = {"h_bm": (2, n), "h_b": (nt,), "h_m": (nr,), "h_li_bs": (nr, nt)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if not np.isfinite(self.h_li_ms):
            raise ValueError("h_li_ms is not finite")


@dataclass(frozen=True)
class CovarianceModel:
    cov_b: np.ndarray
    cov_m: np.ndarray
    theta_b: float
    theta_m: float
    sigma_theta_b: float
    sigma_theta_m: float

    @classmethod
    def from_angles(cls, params: SystemParams, theta_b: float, theta_m: float,
                    sigma_theta_b: float, sigma_theta_m: float) -> "CovarianceModel":
        cov_b = build_covariance(params.n_tx, theta_b, sigma_theta_b, params.d, params.tau)
        cov_m = build_covariance(params.n_rx, theta_m, sigma_theta_m, params.d, params.tau)
        return cls(cov_b, cov_m, theta_b, theta_m, sigma_theta_b, sigma_theta_m)


@dataclass
class BeamformerSolution:
    """Result of one beamformer / time-split design.

    ``w`` is None when the design is infeasible. ``bs_rate_or_target`` is the
    BS rate target (full CSI) or outage threshold rate (partial CSI).
    """

    w: Optional[np.ndarray]
    alpha: float
    ms_rate: float
    bs_rate_or_target: float
    rank_ratio: float
    feasible: bool
    method_tag: str
    beta: float = float("nan")
    outage_bound: float = float("nan")
    outage_exact: float = float("nan")
    extra: dict = None


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with per-entry variance ``var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_realization(params: SystemParams, rng: np.random.Generator) -> ChannelRealization:
    """Draw all link channels; path-loss channels have per-entry variance ``1/d^tau``."""
    pl = params.pathloss
    nt, nr = params.n_tx, params.n_rx
    h_bm = crandn(rng, (2, params.n_total), pl)
    h_b = crandn(rng, (nt,), pl)
    h_m = crandn(rng, (nr,), pl)
    h_li_bs = crandn(rng, (nr, nt), params.sigma2_li_bs)
    h_li_ms = complex(crandn(rng, (), params.sigma2_li_ms))
    return ChannelRealization(h_bm, h_b, h_m, h_li_bs, h_li_ms)


def build_covariance(n: int, theta: float, sigma_theta: float, d: float = 1.0,
                     tau: float = 0.0) -> np.ndarray:
    """Uniform-linear-array covariance with a Gaussian angular spread.

    ``[R]_{m,n} = exp(j pi (m-n) sin theta) exp(-(pi (m-n) sigma cos theta)^2 / 2) / d^tau``.
    The result is symmetrized and eigenvalues below 1e-10 (relative to the
    diagonal level) are clipped to zero.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma_theta < 0:
        raise ValueError("sigma_theta must be >= 0")
    lag = np.subtract.outer(np.arange(n), np.arange(n)).astype(float)
    r = np.exp(1j * np.pi * lag * np.sin(theta))
    r *= np.exp(-0.5 * (np.pi * lag * sigma_theta * np.cos(theta)) ** 2)
    r = 0.5 * (r + r.conj().T)
    vals, vecs = np.linalg.eigh(r)
    vals = np.where(vals < 1e-10, 0.0, vals)
    r = (vecs * vals) @ vecs.conj().T
    r = 0.5 * (r + r.conj().T)
    # clipping perturbs the diagonal at the 1e-10 level; restore the exact value
    np.fill_diagonal(r, 1.0)
    return r / d ** tau


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Hermitian square root of a PSD matrix (negative eigenvalues clipped)."""
    vals, vecs = np.linalg.eigh(0.5 * (a + a.conj().T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def max_eig_pair(a: np.ndarray, herm_tol: float = 1e-8):
    """Largest eigenvalue of a Hermitian matrix and a unit eigenvector for it."""
    a = np.atleast_2d(np.asarray(a))
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.conj().T).max() > herm_tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    vals, vecs = np.linalg.eigh(0.5 * (a + a.conj().T))
    return float(vals[-1]), vecs[:, -1]


def full_csi_harvest_gain(real: ChannelRealization) -> float:
    """Largest eigenvalue of ``H_BM H_BM^H`` (energy beamforming gain)."""
    return max_eig_pair(real.h_bm @ real.h_bm.conj().T)[0]


def isotropic_harvest_gain(params: SystemParams) -> float:
    """Mean harvest gain under isotropic energy transmission: ``E[tr(H_BM H_BM^H)] / N_t``."""
    return 2.0 * params.n_total * params.pathloss / params.n_tx


def ms_transmit_power(alpha: float, params: SystemParams, harvest_gain: float) -> float:
    """MS transmit power funded by the energy harvested during ``alpha``."""
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return alpha * params.eta * params.p_bs * harvest_gain / (1.0 - alpha)


@dataclass
class RatePoint:
    """One point of a rate region or rate-vs-outage curve."""

    r_b_target: float
    ms_rate: float
    alpha: float
    method_tag: str
    feasible: bool
    bs_rate: float = float("nan")
    beta: float = float("nan")
    outage_bound: float = float("nan")
    outage_exact: float = float("nan")
    rho: float = float("nan")


@dataclass
class TradeoffCurve:
    method_tag: str
    points: list

    def feasible_points(self) -> list:
        return [p for p in self.points if p.feasible]
