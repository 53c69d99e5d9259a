"""Low-rank plus transformed column-sparse decomposition by ADMM.

Solves::

    min  ||L||_* + lam1 * ||C||_{1,2} + lam2 * sum |S_ij|
    s.t. || P_Omega(M - L - C W^T - S) ||_F <= sqrt(|Omega| / (t p)) * eta

The splitting keeps two copies of the variables. The first copy ``x =
(L, C, S)`` is updated with the separable proximal maps (singular value
thresholding, column shrinkage, entrywise shrinkage). The second copy ``y``
is projected onto the data-fit set. That projection is exact: the map
``y -> P_Omega(L + C W^T + S)`` acts row by row through the Hermitian
matrix ``D_t (k I + conj(W) W^T) D_t``, whose eigenbasis is computed once,
and the Lagrange multiplier of the ball constraint is found by a scalar
root search. Both subproblems are solved exactly, so this is plain
two-block ADMM with the usual convergence guarantee.

Setting ``lam2 = inf`` removes the scattered term (basic program) and
``lam1 = inf`` removes the column-sparse term.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ShapeMismatch, SvdFailure

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = {"noiseless": 0.95, "column_sparse_compare": 0.9, "combined": (1.0, 0.1)}


# -- proximal operators ------------------------------------------------------


def _svt(X: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    try:
        U, s, Vh = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vh[keep], s[keep]


def svt(X, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal map of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return _svt(np.asarray(X), tau)[0]


def group_shrink(C, tau: float) -> np.ndarray:
    """Column-wise shrinkage, the proximal map of ``tau * ||.||_{1,2}``.

    Column j becomes ``max(0, 1 - tau / ||C_j||) * C_j``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    C = np.asarray(C)
    norms = np.linalg.norm(C, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > tau, 1.0 - tau / norms, 0.0)
    return C * scale


def entrywise_shrink(S, tau: float) -> np.ndarray:
    """Soft thresholding by magnitude, valid for real and complex entries."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    S = np.asarray(S)
    mag = np.abs(S)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > tau, 1.0 - tau / mag, 0.0)
    return S * scale


def project_residual_ball(R, Omega, radius: float) -> np.ndarray:
    """Project a residual onto ``{R : ||P_Omega(R)||_F <= radius}``.

    Entries outside ``Omega`` are unconstrained and come back unchanged.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    R = np.asarray(R)
    Omega = np.ones(R.shape, bool) if Omega is None else np.asarray(Omega, bool)
    obs = np.where(Omega, R, 0)
    nrm = np.linalg.norm(obs)
    if nrm <= radius:
        return R.copy()
    scale = radius / nrm
    return np.where(Omega, R * scale, R)


# -- problem / result containers --------------------------------------------


class Mode(str, Enum):
    BASIC = "basic"
    COMBINED = "combined"


@dataclass
class ProblemSpec:
    """One instance of the decomposition program plus solver knobs.

    ``lam1`` weighs the column-sparse term; ``lam2`` the scattered term and is
    only used in combined mode. Either may be ``inf`` to drop its block.
    """

    M: np.ndarray
    W: np.ndarray
    lam1: float = 0.95
    Omega: np.ndarray | None = None
    eta: float = 0.0
    mode: Mode = Mode.BASIC
    lam2: float = np.inf
    max_iters: int = 5000
    tol_abs: float = 1e-7
    tol_rel: float = 1e-5
    tol_feas: float = 1e-6
    rho: float = 1.0
    alpha: float = 1.6
    adaptive_rho: bool = True

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.M = np.asarray(self.M)
        self.W = np.asarray(self.W)
        if self.M.ndim != 2 or self.W.ndim != 2:
            raise ShapeMismatch("M and W must be 2-D")
        if self.M.shape[1] != self.W.shape[0]:
            raise ShapeMismatch(f"M is {self.M.shape} but W is {self.W.shape}")
        if self.Omega is None:
            self.Omega = np.ones(self.M.shape, bool)
        self.Omega = np.asarray(self.Omega, bool)
        if self.Omega.shape != self.M.shape:
            raise ShapeMismatch(f"Omega {self.Omega.shape} does not match M {self.M.shape}")
        if not self.lam1 > 0 or not self.lam2 > 0:
            raise ValueError("regularisation weights must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.mode is Mode.BASIC:
            self.lam2 = np.inf

    @property
    def radius(self) -> float:
        t, p = self.M.shape
        return float(np.sqrt(self.Omega.sum() / (t * p)) * self.eta)


@dataclass
class DecompositionResult:
    L_star: np.ndarray
    C_star: np.ndarray
    S_star: np.ndarray
    iterations: int
    converged: bool
    constraint_violation: float
    objective: float
    primal_history: list = field(default_factory=list, repr=False)
    dual_history: list = field(default_factory=list, repr=False)
    objective_history: list = field(default_factory=list, repr=False)
    rho_final: float = 1.0


def objective_value(L, C, S, lam1: float, lam2: float) -> float:
    """``||L||_* + lam1 ||C||_{1,2} + lam2 ||S||_1`` with infinite weights on zero blocks ignored."""
    val = float(np.linalg.svd(L, compute_uv=False).sum())
    if np.isfinite(lam1):
        val += lam1 * float(np.linalg.norm(C, axis=0).sum())
    if np.isfinite(lam2):
        val += lam2 * float(np.abs(S).sum())
    return val


def constraint_violation(M, L, C, S, W, Omega, radius: float) -> float:
    R = np.where(Omega, M - L - C @ W.T - S, 0)
    return max(0.0, float(np.linalg.norm(R)) - radius)


# -- the data-fit projection -------------------------------------------------


class _FitProjector:
    """Euclidean projection of ``(L, C, S)`` onto the data-fit set."""

    def __init__(self, W, Omega, use_c: bool, use_s: bool, dtype):
        self.W = W
        self.Wc = W.conj()
        self.Omega = Omega
        self.use_c, self.use_s = use_c, use_s
        p = W.shape[0]
        K = (1.0 + use_s) * np.eye(p, dtype=dtype)
        if use_c:
            K = K + self.Wc @ W.T
        self.full = bool(Omega.all())
        if self.full:
            self.evals, self.Q = np.linalg.eigh(K)
        else:
            D = Omega.astype(float)
            Kt = D[:, :, None] * K[None, :, :] * D[:, None, :]
            self.evals, self.Q = np.linalg.eigh(Kt)
        # null directions of a partially observed row are the unobserved coordinates
        self.inv = np.where(self.evals > 0.5, 1.0 / np.maximum(self.evals, 0.5), 0.0)

    def forward(self, R):
        if self.full:
            return R @ self.Q
        return np.einsum("tp,tpq->tq", R, self.Q)

    def backward(self, Rh):
        if self.full:
            return Rh @ self.Q.conj().T
        return np.einsum("tq,tpq->tp", Rh, self.Q.conj())

    def apply(self, L, C, S):
        out = L
        if self.use_c:
            out = out + C @ self.W.T
        if self.use_s:
            out = out + S
        return out

    def _multiplier(self, r2, delta: float) -> float:
        """Root of ``sum r2 / (1 + g e)^2 = delta^2`` in g > 0."""
        e = self.evals if not self.full else np.broadcast_to(self.evals, r2.shape)
        target = delta * delta

        def q(g):
            return float(np.sum(r2 / (1.0 + g * e) ** 2))

        lo, hi = 0.0, 1.0
        while q(hi) > target:
            lo, hi = hi, hi * 4.0
            if hi > 1e300:
                return hi
        g = 0.5 * (lo + hi)
        for _ in range(100):
            d = 1.0 + g * e
            qv = float(np.sum(r2 / d**2))
            if abs(qv - target) <= 1e-13 * target:
                break
            if qv > target:
                lo = g
            else:
                hi = g
            # Newton on 1/sqrt(q) - 1/delta, which is close to linear in g
            dq = -2.0 * float(np.sum(r2 * e / d**3))
            h = qv**-0.5 - 1.0 / delta
            dh = -0.5 * qv**-1.5 * dq
            g_new = g - h / dh if dh > 0 else 0.5 * (lo + hi)
            if not lo < g_new < hi:
                g_new = 0.5 * (lo + hi)
            if abs(g_new - g) <= 1e-15 * max(g, 1e-300):
                g = g_new
                break
            g = g_new
        return g

    def project(self, L, C, S, m, delta: float):
        r0 = np.where(self.Omega, m - self.apply(L, C, S), 0)
        if float(np.linalg.norm(r0)) <= delta:
            return L, C, S
        rh = self.forward(r0)
        if delta == 0.0:
            coef = self.inv
        else:
            r2 = np.abs(rh) ** 2
            g = self._multiplier(r2, delta)
            coef = g / (1.0 + g * self.evals)
        w = self.backward(rh * coef)
        w = np.where(self.Omega, w, 0)
        L = L + w
        if self.use_c:
            C = C + w @ self.Wc
        if self.use_s:
            S = S + w
        return L, C, S


# -- ADMM ------------------------------------------------------------------


def solve(spec: ProblemSpec) -> DecompositionResult:
    """Run ADMM on one problem instance.

    Stops when the primal and dual residuals are below
    ``tol_abs * sqrt(N) + tol_rel * scale`` and the data-fit constraint is met
    within ``tol_feas * (1 + ||P_Omega(M)||_F)``. If ``max_iters`` runs out,
    the iterate with the best residual ratio is returned with
    ``converged=False``.
    """
    W, Omega = spec.W, spec.Omega
    t, p = spec.M.shape
    n = W.shape[1]
    use_c = bool(np.isfinite(spec.lam1))
    use_s = bool(np.isfinite(spec.lam2))
    dtype = np.result_type(spec.M.dtype, W.dtype, np.float64)
    m = np.where(Omega, spec.M, 0).astype(dtype)
    delta = spec.radius
    proj = _FitProjector(W.astype(dtype), Omega, use_c, use_s, dtype)

    zeros_l = np.zeros((t, p), dtype)
    L, Ly, uL = zeros_l.copy(), zeros_l.copy(), zeros_l.copy()
    C, Cy, uC = (np.zeros((t, n), dtype) for _ in range(3))
    S, Sy, uS = zeros_l.copy(), zeros_l.copy(), zeros_l.copy()

    rho, alpha = float(spec.rho), float(spec.alpha)
    n_var = t * p + (t * n if use_c else 0) + (t * p if use_s else 0)
    sqrt_n = np.sqrt(n_var)
    feas_tol = spec.tol_feas * (1.0 + float(np.linalg.norm(m)))

    hist_p, hist_d, hist_o = [], [], []
    best = None
    best_merit = np.inf
    converged = False
    it = 0
    for it in range(1, spec.max_iters + 1):
        L, sv = _svt(Ly - uL, 1.0 / rho)
        obj = float(sv.sum())
        if use_c:
            C = group_shrink(Cy - uC, spec.lam1 / rho)
            obj += spec.lam1 * float(np.linalg.norm(C, axis=0).sum())
        if use_s:
            S = entrywise_shrink(Sy - uS, spec.lam2 / rho)
            obj += spec.lam2 * float(np.abs(S).sum())

        hL = alpha * L + (1 - alpha) * Ly
        hC = alpha * C + (1 - alpha) * Cy if use_c else C
        hS = alpha * S + (1 - alpha) * Sy if use_s else S
        Ly_old, Cy_old, Sy_old = Ly, Cy, Sy
        Ly, Cy, Sy = proj.project(hL + uL, hC + uC, hS + uS, m, delta)
        uL = uL + hL - Ly
        if use_c:
            uC = uC + hC - Cy
        if use_s:
            uS = uS + hS - Sy

        r_sq = np.linalg.norm(L - Ly) ** 2
        s_sq = np.linalg.norm(Ly - Ly_old) ** 2
        x_sq, y_sq, u_sq = np.linalg.norm(L) ** 2, np.linalg.norm(Ly) ** 2, np.linalg.norm(uL) ** 2
        if use_c:
            r_sq += np.linalg.norm(C - Cy) ** 2
            s_sq += np.linalg.norm(Cy - Cy_old) ** 2
            x_sq += np.linalg.norm(C) ** 2
            y_sq += np.linalg.norm(Cy) ** 2
            u_sq += np.linalg.norm(uC) ** 2
        if use_s:
            r_sq += np.linalg.norm(S - Sy) ** 2
            s_sq += np.linalg.norm(Sy - Sy_old) ** 2
            x_sq += np.linalg.norm(S) ** 2
            y_sq += np.linalg.norm(Sy) ** 2
            u_sq += np.linalg.norm(uS) ** 2
        r_norm = float(np.sqrt(r_sq))
        s_norm = rho * float(np.sqrt(s_sq))
        eps_pri = sqrt_n * spec.tol_abs + spec.tol_rel * float(np.sqrt(max(x_sq, y_sq)))
        eps_dual = sqrt_n * spec.tol_abs + spec.tol_rel * rho * float(np.sqrt(u_sq))
        hist_p.append(r_norm)
        hist_d.append(s_norm)
        hist_o.append(obj)

        merit = max(r_norm / eps_pri, s_norm / eps_dual)
        if merit <= 1.0 or merit < best_merit:
            viol = max(0.0, float(np.linalg.norm(np.where(Omega, m - proj.apply(L, C, S), 0))) - delta)
            merit = max(merit, viol / feas_tol)
            if merit < best_merit:
                best_merit = merit
                best = (L, C, S, viol, obj)
            if merit <= 1.0:
                converged = True
                break

        if spec.adaptive_rho and it % 10 == 0:
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                uL, uC, uS = uL / 2.0, uC / 2.0, uS / 2.0
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                uL, uC, uS = uL * 2.0, uC * 2.0, uS * 2.0

    L, C, S, viol, obj = best
    if not use_c:
        C = np.zeros((t, n), dtype)
    if not use_s:
        S = np.zeros((t, p), dtype)
    if not converged:
        logger.warning("ADMM stopped after %d iterations without meeting tolerances", it)
    return DecompositionResult(
        L_star=L,
        C_star=C,
        S_star=S,
        iterations=it,
        converged=converged,
        constraint_violation=viol,
        objective=obj,
        primal_history=hist_p,
        dual_history=hist_d,
        objective_history=hist_o,
        rho_final=rho,
    )
