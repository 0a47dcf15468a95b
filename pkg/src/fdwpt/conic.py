"""
Small dense conic programs over a Hermitian PSD matrix variable.

The problems handled here are

    maximize / minimize   tr(V C)
    subject to            tr(V A_k) = b_k,  tr(V B_k) <= d_k,  V >= 0
                          det(M(V))^(1/m) >= c * s(V)       (optional)

with ``M`` affine Hermitian-valued and ``s`` affine scalar. Complex
Hermitian blocks are mapped to real symmetric blocks of twice the size and
the determinant root is written with a lower-triangular factor plus a
second-order-cone tower for the geometric mean. The numerical work is done
by CVXOPT's primal-dual interior-point cone solver.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers

__all__ = [
    "DetRootConstraint",
    "HermitianSdp",
    "SdpSolution",
    "solve",
    "extract_rank_one",
    "hermitian_basis",
]

MAX_DIM = 16
MAX_ITERS = 60
# tried in order. The loose default run converges in ~15 iterations on
# almost everything; cvxopt occasionally hits a domain error in the NT
# scaling or stalls, and the LDL runs usually recover those. Every
# returned point is re-verified against the constraints anyway.
_ATTEMPTS = (
    ({"abstol": 1e-8, "reltol": 1e-8, "feastol": 1e-8}, None),
    ({"abstol": 1e-8, "reltol": 1e-8, "feastol": 1e-8}, "ldl"),
    ({"abstol": 1e-10, "reltol": 1e-9, "feastol": 1e-10, "refinement": 2}, "ldl"),
)
_PRECISE_ATTEMPTS = (
    ({"abstol": 1e-11, "reltol": 1e-10, "feastol": 1e-11}, None),
    ({"abstol": 1e-10, "reltol": 1e-9, "feastol": 1e-10, "refinement": 2}, "ldl"),
) + _ATTEMPTS
_ACCEPT_TOL = 1e-6


@dataclass
class DetRootConstraint:
    """``det(m0 + m_lin(V))^(1/m) >= c * (s0 + tr(V s_mat))``.

    ``m_lin`` must be real-linear and map Hermitian matrices to Hermitian
    matrices; ``s0 + tr(V s_mat)`` must be positive on the feasible set.
    """

    m0: np.ndarray
    m_lin: Callable[[np.ndarray], np.ndarray]
    s0: float
    s_mat: np.ndarray
    c: float

    @property
    def size(self) -> int:
        return self.m0.shape[0]

    def matrix(self, v: np.ndarray) -> np.ndarray:
        return self.m0 + self.m_lin(v)

    def affine_rhs(self, v: np.ndarray) -> float:
        return float(self.s0 + np.real(np.trace(v @ self.s_mat)))

    def slack(self, v: np.ndarray) -> float:
        """``det(M(V))^(1/m) - c s(V)`` (-inf if ``M(V)`` is not positive definite)."""
        mv = self.matrix(v)
        mv = 0.5 * (mv + mv.conj().T)
        sign, logdet = np.linalg.slogdet(mv)
        if sign <= 0:
            return -math.inf
        return math.exp(logdet.real / self.size) - self.c * self.affine_rhs(v)


@dataclass
class HermitianSdp:
    dim: int
    objective: np.ndarray
    sense: str = "max"
    eq_constraints: list = field(default_factory=list)
    ineq_constraints: list = field(default_factory=list)
    detroot_constraint: Optional[DetRootConstraint] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.dim > MAX_DIM:
            raise ValueError(f"dim {self.dim} exceeds the dense limit {MAX_DIM}")
        if self.sense not in ("max", "min"):
            raise ValueError("sense must be 'max' or 'min'")
        mats = [self.objective] + [a for a, _ in self.eq_constraints] \
            + [a for a, _ in self.ineq_constraints]
        for a in mats:
            a = np.asarray(a)
            if a.shape != (self.dim, self.dim):
                raise ValueError(f"constraint matrix shape {a.shape} != {(self.dim, self.dim)}")
            scale = max(1.0, np.abs(a).max())
            if np.abs(a - a.conj().T).max() > 1e-12 * scale:
                raise ValueError("constraint and cost matrices must be Hermitian")


@dataclass
class SdpSolution:
    v: Optional[np.ndarray]
    objective_value: float
    status: str  # optimal | infeasible | numerical_failure
    max_constraint_violation: float
    duality_gap: float = math.nan
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def hermitian_basis(n: int) -> list[np.ndarray]:
    """Real-coordinate basis of n x n Hermitian matrices (n^2 elements)."""
    basis = []
    for i in range(n):
        e = np.zeros((n, n), complex)
        e[i, i] = 1.0
        basis.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n), complex)
            e[i, j] = e[j, i] = 1.0
            basis.append(e)
            e = np.zeros((n, n), complex)
            e[i, j] = 1j
            e[j, i] = -1j
            basis.append(e)
    return basis


def _lower_basis(m: int) -> tuple[list[np.ndarray], list[int]]:
    """Basis of lower-triangular complex matrices with real diagonal; also the diag indices."""
    basis, diag_idx = [], []
    for i in range(m):
        e = np.zeros((m, m), complex)
        e[i, i] = 1.0
        diag_idx.append(len(basis))
        basis.append(e)
    for i in range(m):
        for j in range(i):
            e = np.zeros((m, m), complex)
            e[i, j] = 1.0
            basis.append(e)
            e = np.zeros((m, m), complex)
            e[i, j] = 1j
            basis.append(e)
    return basis, diag_idx


def _embed(z: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[Re, -Im], [Im, Re]] of a Hermitian matrix."""
    re, im = z.real, z.imag
    return np.block([[re, -im], [im, re]])


def _trace_coeffs(basis, a: np.ndarray) -> np.ndarray:
    # Re tr(E a) for each basis element E, vectorized
    stack = np.asarray(basis)
    return np.real(np.einsum("kij,ji->k", stack, a))


@lru_cache(maxsize=None)
def _basis_stack(n: int) -> np.ndarray:
    out = np.asarray(hermitian_basis(n))
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _psd_columns(n: int) -> np.ndarray:
    """Columns mapping V coordinates to the vectorized embedding of -V."""
    out = -np.column_stack([_embed(e).ravel(order="F") for e in _basis_stack(n)])
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _delta_columns(m: int):
    """Embedded columns of [[0, D], [D^H, Diag D]] for the lower-triangular basis D."""
    lb, diag_idx = _lower_basis(m)
    big = 2 * m
    cols = np.zeros(((2 * big) ** 2, len(lb)))
    for k, f in enumerate(lb):
        blk = np.zeros((big, big), complex)
        blk[:m, m:] = f
        blk[m:, :m] = f.conj().T
        if k in diag_idx:
            blk[m:, m:] = f
        cols[:, k] = -_embed(blk).ravel(order="F")
    cols.flags.writeable = False
    return cols, tuple(diag_idx)


def _assemble(v_coords: np.ndarray, basis: Sequence[np.ndarray]) -> np.ndarray:
    return np.tensordot(v_coords, np.asarray(basis), axes=1)


def _reduce_equalities(a_eq: np.ndarray, b_eq: np.ndarray):
    """Drop dependent rows; return None if the system is inconsistent."""
    if a_eq.shape[0] == 0:
        return a_eq, b_eq
    q, r, piv = _qr_pivot(a_eq.T)
    diag = np.abs(np.diag(r)) if r.size else np.array([])
    tol = 1e-10 * (diag[0] if diag.size else 1.0)
    rank = int(np.sum(diag > tol))
    keep = np.sort(piv[:rank])
    a_red, b_red = a_eq[keep], b_eq[keep]
    # consistency: residual of least-squares fit to the full system
    sol, *_ = np.linalg.lstsq(a_red, b_red, rcond=None)
    resid = a_eq @ sol - b_eq
    if np.abs(resid).max() > 1e-9 * max(1.0, np.abs(b_eq).max()):
        return None
    return a_red, b_red


def _qr_pivot(a: np.ndarray):
    from scipy.linalg import qr
    return qr(a, pivoting=True, mode="economic")


def _geo_mean_tower(n_leaves: int):
    """Binary tower for t <= (prod leaves)^(1/n), padded with copies of t.

    Returns (n_aux, cones): each cone is a triple (u, a, b) of symbolic
    variable references meaning u^2 <= a*b with a, b >= 0, where a
    reference is ('leaf', i), ('aux', k) or ('t',).
    """
    if n_leaves == 1:
        return 0, []
    depth = math.ceil(math.log2(n_leaves))
    level = [("leaf", i) for i in range(n_leaves)] + [("t",)] * (2 ** depth - n_leaves)
    cones = []
    n_aux = 0
    while len(level) > 2:
        nxt = []
        for a, b in zip(level[0::2], level[1::2]):
            u = ("aux", n_aux)
            n_aux += 1
            cones.append((u, a, b))
            nxt.append(u)
        level = nxt
    cones.append((("t",), level[0], level[1]))
    return n_aux, cones


def solve(problem: HermitianSdp, precise: bool = False) -> SdpSolution:
    """Solve a :class:`HermitianSdp`; never returns an unverified 'optimal'.

    ``precise`` starts from tighter interior-point tolerances, for callers
    that need equality constraints met well below the acceptance level.
    """
    n = problem.dim
    vb = _basis_stack(n)
    nv = len(vb)
    sign = -1.0 if problem.sense == "max" else 1.0

    obj = np.asarray(problem.objective, complex)
    obj_scale = max(np.abs(obj).max(), 1e-300)
    c_v = sign * _trace_coeffs(vb, obj) / obj_scale

    def _rows(cons):
        rows, rhs = [], []
        for a, b in cons:
            a = np.asarray(a, complex)
            coeff = _trace_coeffs(vb, a)
            scale = np.linalg.norm(coeff)
            if scale == 0.0:
                scale = 1.0
            rows.append(coeff / scale)
            rhs.append(float(b) / scale)
        return np.array(rows).reshape(len(rows), nv), np.array(rhs)

    a_eq, b_eq = _rows(problem.eq_constraints)
    a_in, b_in = _rows(problem.ineq_constraints)

    reduced = _reduce_equalities(a_eq, b_eq)
    if reduced is None:
        return SdpSolution(None, math.nan, "infeasible", math.inf)
    a_eq, b_eq = reduced

    det = problem.detroot_constraint
    if det is None:
        n_x = nv
        c_vec = c_v
        g_l = a_in
        h_l = b_in
        g_q, h_q, q_dims = [], [], []
        s_blocks = [(_psd_columns(n), np.zeros(4 * n * n))]
        s_dims = [2 * n]
    else:
        m = det.size
        delta_cols, diag_idx = _delta_columns(m)
        nd = delta_cols.shape[1]
        n_aux, cones = _geo_mean_tower(m)
        # variable layout: [V coords | Delta coords | t | aux]
        i_t = nv + nd
        n_x = nv + nd + 1 + n_aux
        c_vec = np.concatenate([c_v, np.zeros(n_x - nv)])

        def ref_index(ref):
            if ref[0] == "leaf":
                return nv + diag_idx[ref[1]]
            if ref[0] == "t":
                return i_t
            return i_t + 1 + ref[1]

        # linear: existing ineqs, and c*s(V) - t <= -c*s0
        s_coeff = _trace_coeffs(vb, np.asarray(det.s_mat, complex))
        rows = [np.concatenate([r, np.zeros(n_x - nv)]) for r in a_in]
        row = np.zeros(n_x)
        row[:nv] = det.c * s_coeff
        row[i_t] = -1.0
        lin_scale = np.linalg.norm(row)
        rows.append(row / lin_scale)
        g_l = np.array(rows)
        h_l = np.concatenate([np.asarray(b_in, float), [-det.c * det.s0 / lin_scale]])
        if m == 1:
            row = np.zeros(n_x)
            row[i_t] = 1.0
            row[nv + diag_idx[0]] = -1.0
            g_l = np.vstack([g_l, row])
            h_l = np.concatenate([h_l, [0.0]])

        g_q, h_q, q_dims = [], [], []
        for u, a, b in cones:
            iu, ia, ib = ref_index(u), ref_index(a), ref_index(b)
            blk = np.zeros((3, n_x))
            # s = (a + b, a - b, 2u) in the second-order cone
            blk[0, ia] -= 1.0
            blk[0, ib] -= 1.0
            blk[1, ia] -= 1.0
            blk[1, ib] += 1.0
            blk[2, iu] -= 2.0
            g_q.append(blk)
            h_q.append(np.zeros(3))
            q_dims.append(3)

        # PSD block 1: V >= 0
        g_v = np.zeros((4 * n * n, n_x))
        g_v[:, :nv] = _psd_columns(n)
        # PSD block 2: [[M(V), Delta], [Delta^H, Diag(Delta)]] >= 0
        big = 2 * m
        g_b = np.zeros(((2 * big) ** 2, n_x))
        for k, e in enumerate(vb):
            blk = np.zeros((big, big), complex)
            blk[:m, :m] = det.m_lin(e)
            g_b[:, k] = -_embed(blk).ravel(order="F")
        g_b[:, nv:nv + nd] = delta_cols
        blk0 = np.zeros((big, big), complex)
        blk0[:m, :m] = det.m0
        h_b = _embed(blk0).ravel(order="F")
        s_blocks = [(g_v, np.zeros(4 * n * n)), (g_b, h_b)]
        s_dims = [2 * n, 2 * big]

    g_parts = [g_l.reshape(-1, n_x)] + g_q + [g for g, _ in s_blocks]
    h_parts = [np.asarray(h_l, float).ravel()] + h_q + [h for _, h in s_blocks]
    g_all = np.vstack(g_parts)
    h_all = np.concatenate(h_parts)
    dims = {"l": int(g_l.reshape(-1, n_x).shape[0]), "q": q_dims, "s": s_dims}

    kwargs = {}
    if a_eq.shape[0]:
        a_full = np.zeros((a_eq.shape[0], n_x))
        a_full[:, :nv] = a_eq
        kwargs["A"] = cvx_matrix(a_full)
        kwargs["b"] = cvx_matrix(np.asarray(b_eq, float))

    res = None
    for opts, kkt in (_PRECISE_ATTEMPTS if precise else _ATTEMPTS):
        options = {"show_progress": False, "maxiters": MAX_ITERS, **opts}
        try:
            res = cvx_solvers.conelp(cvx_matrix(c_vec), cvx_matrix(g_all), cvx_matrix(h_all),
                                     dims, options=options, kktsolver=kkt, **kwargs)
        except (ValueError, ArithmeticError):
            continue
        if res["status"] in ("optimal", "primal infeasible"):
            break
    if res is None:
        return SdpSolution(None, math.nan, "numerical_failure", math.inf)

    status = res["status"]
    iters = int(res.get("iterations", 0))
    if status == "primal infeasible":
        return SdpSolution(None, math.nan, "infeasible", math.inf, iterations=iters)
    if res["x"] is None:
        return SdpSolution(None, math.nan, "numerical_failure", math.inf, iterations=iters)

    x = np.array(res["x"]).ravel()
    v = _assemble(x[:nv], vb)
    v = 0.5 * (v + v.conj().T)
    value = float(np.real(np.trace(v @ obj)))
    viol = _violation(problem, v)
    gap_rel = math.nan
    if res.get("gap") is not None and res.get("primal objective") is not None:
        gap_rel = abs(res["gap"]) / max(1.0, abs(res["primal objective"]))
    if status == "dual infeasible":
        return SdpSolution(v, value, "numerical_failure", viol, gap_rel, iters)
    if status == "optimal" or (viol <= _ACCEPT_TOL and gap_rel <= _ACCEPT_TOL
                               and _pres_ok(res)):
        if viol <= _ACCEPT_TOL:
            return SdpSolution(v, value, "optimal", viol, gap_rel, iters)
    # cvxopt stalls near the boundary of an empty feasible set; treat a
    # large primal residual with a small dual one as infeasibility
    if res.get("primal infeasibility") is not None and res.get("dual infeasibility") is not None:
        if res["primal infeasibility"] > 1e-4 and res["dual infeasibility"] < 1e-6:
            return SdpSolution(None, math.nan, "infeasible", viol, gap_rel, iters)
    return SdpSolution(v, value, "numerical_failure", viol, gap_rel, iters)


def _pres_ok(res) -> bool:
    pr = res.get("primal infeasibility")
    dr = res.get("dual infeasibility")
    return pr is not None and dr is not None and pr <= _ACCEPT_TOL and dr <= _ACCEPT_TOL


def _violation(problem: HermitianSdp, v: np.ndarray) -> float:
    """Largest relative constraint violation of ``v``."""
    scale_v = max(abs(np.real(np.trace(v))), 1e-300)
    worst = 0.0
    lam_min = float(np.linalg.eigvalsh(v)[0])
    worst = max(worst, -lam_min / scale_v)
    for a, b in problem.eq_constraints:
        a = np.asarray(a)
        lhs = float(np.real(np.trace(v @ a)))
        ref = max(abs(b), np.linalg.norm(a, 2) * scale_v, 1e-300)
        worst = max(worst, abs(lhs - b) / ref)
    for a, b in problem.ineq_constraints:
        a = np.asarray(a)
        lhs = float(np.real(np.trace(v @ a)))
        ref = max(abs(b), np.linalg.norm(a, 2) * scale_v, 1e-300)
        worst = max(worst, (lhs - b) / ref)
    det = problem.detroot_constraint
    if det is not None:
        slack = det.slack(v)
        ref = max(det.c * abs(det.affine_rhs(v)), 1e-300)
        worst = max(worst, -slack / ref)
    return worst


def extract_rank_one(v: np.ndarray, budget: float, scorer: Optional[Callable] = None,
                     rng: Optional[np.random.Generator] = None, n_samples: int = 1000,
                     rank_tol: float = 1e-6, batch_scorer: Optional[Callable] = None):
    """Recover a beamformer ``w`` with ``||w||^2 = budget`` from a lifted PSD matrix.

    Uses the dominant eigenvector when ``lambda_2 / lambda_1 <= rank_tol``,
    otherwise Gaussian randomization: ``n_samples`` draws ``U L^(1/2) z`` are
    rescaled to the budget and the one with the highest ``scorer(w)`` is
    kept (``scorer`` defaults to ``w^H v w``). ``batch_scorer``, if given,
    scores all rescaled samples at once from an ``(n_samples, n)`` array.

    Returns
    -------
    w : ndarray
    rank_ratio : float
    """
    v = 0.5 * (np.asarray(v) + np.asarray(v).conj().T)
    vals, vecs = np.linalg.eigh(v)
    vals = np.clip(vals, 0.0, None)
    if vals[-1] <= 0.0:
        raise ValueError("cannot extract a beamformer from a zero matrix")
    ratio = float(vals[-2] / vals[-1]) if len(vals) > 1 else 0.0
    if ratio <= rank_tol:
        return math.sqrt(budget) * vecs[:, -1], ratio
    if rng is None:
        rng = np.random.default_rng(0)
    if scorer is None:
        def scorer(w):
            return float(np.real(w.conj() @ v @ w))
    n = v.shape[0]
    z = (rng.standard_normal((n_samples, n)) + 1j * rng.standard_normal((n_samples, n))) / math.sqrt(2)
    cands = (z * np.sqrt(vals)) @ vecs.T
    norms = np.linalg.norm(cands, axis=1)
    if batch_scorer is not None:
        ok = norms > 0.0
        scaled = math.sqrt(budget) * cands[ok] / norms[ok, None]
        if scaled.shape[0]:
            scores = np.asarray(batch_scorer(scaled), float)
            k = int(np.argmax(scores))
            if np.isfinite(scores[k]):
                return scaled[k], ratio
        return math.sqrt(budget) * vecs[:, -1], ratio
    best_w, best_s = None, -math.inf
    for cand, nrm in zip(cands, norms):
        if nrm == 0.0:
            continue
        w = math.sqrt(budget) * cand / nrm
        s = scorer(w)
        if s > best_s:
            best_s, best_w = s, w
    if best_w is None:
        best_w = math.sqrt(budget) * vecs[:, -1]
    return best_w, ratio
