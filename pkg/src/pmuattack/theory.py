"""Incoherence parameters, admissible regularisation ranges and dual certificates.

Notation follows the rest of the package: ``W`` is p x n with unit-norm
columns, ``conj(W)`` plays the role of the entrywise conjugate, ``L_bar =
U_bar diag(s) V_bar^H`` is the compact SVD of the clean data and ``I_bar`` is
the set of attacked buses.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import optimize

from .errors import (
    BoundInapplicable,
    EmptySupport,
    InvalidPsiC,
    RankDeficiencyAmbiguous,
    SeriesDivergent,
    SingularGram,
)

RANK_TOL = 1e-9
EXHAUSTIVE_N = 20
EXHAUSTIVE_SUBSETS = 100_000


# -- rank and subspaces ------------------------------------------------------


def compact_svd(A, rank_tol: float = RANK_TOL, band: float = 100.0):
    """Compact SVD truncated at ``rank_tol * s[0]``.

    Raises :class:`RankDeficiencyAmbiguous` when a singular value falls within
    a factor ``band`` of the cut-off, where the rank is a matter of taste.
    """
    A = np.asarray(A)
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0], s[:0], Vh[:0].conj().T
    cut = rank_tol * s[0]
    if np.any((s > cut / band) & (s <= cut * band)):
        raise RankDeficiencyAmbiguous(
            f"singular values {s[(s > cut / band) & (s <= cut * band)]} lie near the cut-off {cut:.3g}"
        )
    r = int(np.sum(s > cut))
    return U[:, :r], s[:r], Vh[:r].conj().T


def _inf2(A) -> float:
    """Largest column 2-norm."""
    A = np.asarray(A)
    return float(np.linalg.norm(A, axis=0).max(initial=0.0))


# -- incoherence -------------------------------------------------------------


def coherence(W) -> float:
    """Largest absolute inner product between two distinct columns of ``W``."""
    G = np.abs(np.asarray(W).conj().T @ np.asarray(W))
    np.fill_diagonal(G, 0.0)
    return float(G.max(initial=0.0))


def _inv_min_eig(G) -> float:
    lo = float(np.linalg.eigvalsh(G)[0])
    return math.inf if lo <= 1e-14 * max(1.0, float(np.abs(G).max())) else 1.0 / lo


def sigma_exhaustive(W, k: int) -> float:
    """Exact ``max_{|I|<=k} ||(W_I^H W_I)^{-1}||`` by enumerating all size-k sets.

    By eigenvalue interlacing the largest value over ``|I| <= k`` is attained
    at ``|I| = k``.
    """
    W = np.asarray(W)
    G = W.conj().T @ W
    n = G.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    best = 0.0
    for I in itertools.combinations(range(n), k):
        best = max(best, _inv_min_eig(G[np.ix_(I, I)]))
        if math.isinf(best):
            break
    return best


def sigma_greedy(W, k: int) -> float:
    """Lower bound on the k-subset maximum by growing the worst set greedily."""
    W = np.asarray(W)
    G = W.conj().T @ W
    n = G.shape[0]
    A = np.abs(G.copy())
    np.fill_diagonal(A, -1.0)
    i, j = np.unravel_index(int(np.argmax(A)), A.shape)
    chosen = [int(i)] if k == 1 else [int(i), int(j)]
    while len(chosen) < k:
        rest = [c for c in range(n) if c not in chosen]
        vals = [_inv_min_eig(G[np.ix_(chosen + [c], chosen + [c])]) for c in rest]
        chosen.append(rest[int(np.argmax(vals))])
    return _inv_min_eig(G[np.ix_(chosen, chosen)])


def gershgorin_sigma_bound(mu: float, k: int) -> float:
    """Upper bound ``1 / (1 - (k-1) mu)`` on sigma_k, valid when ``k mu < 1``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k * mu >= 1:
        raise BoundInapplicable(f"k*mu = {k * mu:.4g} >= 1")
    return 1.0 / (1.0 - (k - 1) * mu)


@dataclass(frozen=True)
class SigmaEstimate:
    k: int
    value: float
    lower: float
    upper: float
    exact: bool


@dataclass(frozen=True)
class IncoherenceStats:
    """Scalars describing how well the data subspace and transform separate.

    ``sigma`` maps k to a :class:`SigmaEstimate`. When enumeration was too
    expensive ``value`` is the Gershgorin upper bound (``inf`` when that bound
    does not apply) and ``lower`` is a greedy lower bound.
    """

    epsilon: float
    mu: float
    rho: float
    r: int
    p: int
    n: int
    sigma: dict = field(default_factory=dict)

    def sigma_k(self, k: int) -> float:
        if k not in self.sigma:
            raise KeyError(f"sigma_{k} was not computed; pass k={k} to compute_incoherence")
        return self.sigma[k].value

    def gershgorin_bound(self, k: int) -> float:
        try:
            return gershgorin_sigma_bound(self.mu, k)
        except BoundInapplicable:
            return math.inf

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "mu": self.mu,
            "rho": self.rho,
            "r": self.r,
            "p": self.p,
            "n": self.n,
            "sigma": {
                str(k): {"value": s.value, "lower": s.lower, "upper": s.upper, "exact": s.exact}
                for k, s in self.sigma.items()
            },
        }


def estimate_sigma(W, k: int, mu: Optional[float] = None, exhaustive: Optional[bool] = None) -> SigmaEstimate:
    W = np.asarray(W)
    n = W.shape[1]
    mu = coherence(W) if mu is None else mu
    try:
        upper = gershgorin_sigma_bound(mu, k)
    except BoundInapplicable:
        upper = math.inf
    if exhaustive is None:
        exhaustive = n <= EXHAUSTIVE_N or math.comb(n, k) <= EXHAUSTIVE_SUBSETS
    if exhaustive:
        val = sigma_exhaustive(W, k)
        return SigmaEstimate(k, val, val, val, True)
    lower = sigma_greedy(W, k)
    return SigmaEstimate(k, upper, lower, upper, False)


def compute_incoherence(
    L_bar,
    W,
    ks: Iterable[int] = (1,),
    rank_tol: float = RANK_TOL,
    exhaustive: Optional[bool] = None,
) -> IncoherenceStats:
    """Compute epsilon, mu, rho and sigma_k for each requested k."""
    W = np.asarray(W)
    L_bar = np.asarray(L_bar)
    _, s, V = compact_svd(L_bar, rank_tol)
    r = s.size
    if r == 0:
        raise ValueError("L_bar is zero")
    p, n = W.shape
    eps = _inf2(V.conj().T @ W.conj())
    mu = coherence(W)
    rho = p * float(np.max(np.sum(np.abs(V) ** 2, axis=1))) / r
    sig = {int(k): estimate_sigma(W, int(k), mu, exhaustive) for k in ks}
    return IncoherenceStats(epsilon=eps, mu=mu, rho=rho, r=r, p=p, n=n, sigma=sig)


# -- admissible regularisation range ------------------------------------------


def psi_c_admissible(psi_tilde: float, c: float) -> bool:
    """The pairing condition between the contraction level and the coherence budget."""
    lhs = (2 - psi_tilde) * math.sqrt(psi_tilde) / (1 - psi_tilde)
    return lhs <= math.sqrt((1 + c) / (1 - c))


@dataclass(frozen=True)
class LambdaRange:
    psi_tilde: float
    c: float
    k_tilde: int
    sigma: float
    lambda_min: float
    lambda_max: float
    lambda_min_noisy: float
    lambda_max_noisy: float
    coherence_ok: bool
    feasible_noiseless: bool
    feasible_noisy: bool
    noisy: bool = False

    @property
    def feasible(self) -> bool:
        return self.feasible_noisy if self.noisy else self.feasible_noiseless

    @property
    def interval(self) -> tuple[float, float]:
        if self.noisy:
            return self.lambda_min_noisy, self.lambda_max_noisy
        return self.lambda_min, self.lambda_max

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["feasible"] = self.feasible
        return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()}


def lambda_range(
    stats: IncoherenceStats,
    psi_tilde: float,
    c: float,
    k_tilde: int,
    noisy: bool = False,
    sigma: Optional[float] = None,
) -> LambdaRange:
    """Interval of weights for which the certificate construction is guaranteed.

    ``sigma`` overrides ``stats.sigma_k(k_tilde)``. A nonpositive denominator
    makes the lower end infinite and the range infeasible.
    """
    if not (0 < psi_tilde < 1 and 0 < c < 1):
        raise InvalidPsiC("psi_tilde and c must lie in (0, 1)")
    if not psi_c_admissible(psi_tilde, c):
        raise InvalidPsiC(f"(psi_tilde, c) = ({psi_tilde}, {c}) violates the pairing condition")
    if k_tilde < 1:
        raise ValueError("k_tilde must be at least 1")
    sig = stats.sigma_k(k_tilde) if sigma is None else float(sigma)
    a = 1.0 + 1.0 / (2.0 - psi_tilde)
    drift = a * k_tilde * sig * stats.mu

    def _low(head: float) -> float:
        den = head - drift
        if not den > 0:
            return math.inf
        return a * stats.epsilon / den

    lmin, lmin_n = _low(1.0), _low(0.5)
    lmax = math.sqrt(psi_tilde / (k_tilde * sig)) if sig > 0 else math.inf
    lmax_n = 0.5 * lmax
    ok = k_tilde * stats.mu <= c
    return LambdaRange(
        psi_tilde=psi_tilde,
        c=c,
        k_tilde=k_tilde,
        sigma=sig,
        lambda_min=lmin,
        lambda_max=lmax,
        lambda_min_noisy=lmin_n,
        lambda_max_noisy=lmax_n,
        coherence_ok=ok,
        feasible_noiseless=ok and math.isfinite(lmin) and lmin <= lmax,
        feasible_noisy=ok and math.isfinite(lmin_n) and lmin_n <= lmax_n,
        noisy=noisy,
    )


def noisy_error_bounds(
    stats: IncoherenceStats,
    lam: float,
    k: int,
    eta: float,
    t: int,
    p: int,
    r: int,
    psi_tilde: float,
    n: Optional[int] = None,
    sigma: Optional[float] = None,
) -> tuple[float, float]:
    """Frobenius error bounds on the low-rank part and on the attack part.

    ``k`` is the number of attacked buses; ``n`` defaults to ``stats.n``.
    """
    n = stats.n if n is None else n
    sig = stats.sigma_k(k) if sigma is None else float(sigma)
    mu = stats.mu
    root = math.sqrt(min(t, p) + 3 * r)
    gn = math.sqrt(1 + (n - 1) * mu)
    gk = math.sqrt(1 + (k - 1) * mu)
    q = 1.0 - psi_tilde
    bound_L = (2 - psi_tilde + (lam + (2 - psi_tilde) * gn) / lam * root) * 2 * eta / q
    bound_C = (1 + ((lam + gn) / lam + q / (lam * sig * gk)) * root) * 2 * eta * sig * gk / q
    return bound_L, bound_C


# -- oracle problem ------------------------------------------------------------


@dataclass(frozen=True)
class OracleSolution:
    """Optimum of the decomposition with column space and bus support pinned."""

    L: np.ndarray
    C: np.ndarray
    U_bar: np.ndarray
    V_hat: np.ndarray
    H_hat: np.ndarray
    support: tuple
    objective: float
    stationarity: float


def _polar(K):
    Uk, s, Vkh = np.linalg.svd(K, full_matrices=False)
    return Uk, s, Vkh


def solve_oracle(L_bar, C_bar, W, lam: float, rank_tol: float = RANK_TOL) -> OracleSolution:
    """Minimise ``||L||_* + lam ||C||_{1,2}`` over ``L + C W^T = L_bar + C_bar W^T``
    with ``col(L)`` inside ``col(L_bar)`` and ``C`` supported on the columns of ``C_bar``.

    Every feasible point is ``L = U (U^H L_bar - B W_I^T)`` and
    ``C_I = C_bar_I + U B`` for an r x k matrix ``B``, so the problem is an
    unconstrained smooth minimisation over ``B`` near a nondegenerate optimum.
    """
    L_bar = np.asarray(L_bar)
    C_bar = np.asarray(C_bar)
    W = np.asarray(W)
    U, _, _ = compact_svd(L_bar, rank_tol)
    r = U.shape[1]
    I = tuple(int(j) for j in np.flatnonzero(np.linalg.norm(C_bar, axis=0) > 0))
    if not I:
        raise EmptySupport("C_bar has no nonzero column")
    WI = W[:, list(I)]
    K0 = U.conj().T @ L_bar
    C0 = C_bar[:, list(I)]
    cplx = np.iscomplexobj(L_bar) or np.iscomplexobj(C_bar) or np.iscomplexobj(W)
    k = len(I)

    def unpack(x):
        if cplx:
            h = x.size // 2
            return (x[:h] + 1j * x[h:]).reshape(r, k)
        return x.reshape(r, k)

    def pack(B):
        B = B.ravel()
        return np.concatenate([B.real, B.imag]) if cplx else B.real.copy()

    def fg(x):
        B = unpack(x)
        K = K0 - B @ WI.T
        Uk, s, Vkh = _polar(K)
        CI = C0 + U @ B
        norms = np.linalg.norm(CI, axis=0)
        H = CI / np.where(norms > 0, norms, 1.0)
        f = float(s.sum() + lam * norms.sum())
        g = -(Uk @ Vkh) @ WI.conj() + lam * (U.conj().T @ H)
        return f, pack(g)

    x0 = np.zeros(r * k * (2 if cplx else 1))
    res = optimize.minimize(fg, x0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 20000})
    x = res.x
    if np.linalg.norm(fg(x)[1]) > 1e-11:
        polished = optimize.root(lambda z: fg(z)[1], x, method="hybr", options={"xtol": 1e-15})
        if np.linalg.norm(fg(polished.x)[1]) < np.linalg.norm(fg(x)[1]):
            x = polished.x
    B = unpack(x)
    K = K0 - B @ WI.T
    Uk, s, Vkh = _polar(K)
    C = np.zeros_like(C_bar, dtype=np.result_type(C_bar, U, B))
    C[:, list(I)] = C0 + U @ B
    CI = C[:, list(I)]
    H = CI / np.linalg.norm(CI, axis=0)
    V_hat = (Uk @ Vkh).conj().T
    stat = float(np.linalg.norm(V_hat.conj().T @ WI.conj() - lam * U.conj().T @ H))
    return OracleSolution(
        L=U @ K,
        C=C,
        U_bar=U,
        V_hat=V_hat,
        H_hat=H,
        support=I,
        objective=float(s.sum() + lam * np.linalg.norm(CI, axis=0).sum()),
        stationarity=stat,
    )


# -- dual certificate ----------------------------------------------------------

NEUMANN_TOL = 1e-12
NEUMANN_MAX = 10_000


@dataclass(frozen=True)
class CertificateReport:
    """Candidate dual certificate ``Q`` and the raw quantities behind each condition.

    ``value_b`` is ``||P_{T perp}(Q)||`` and ``value_d`` the largest column norm
    of ``(Q conj(W))`` off the support; both already include the Neumann tail
    bound ``tail_bound``. ``error_a`` and ``error_c`` are residuals of the two
    equality conditions.
    """

    Q: np.ndarray
    lam: float
    support: tuple
    channels: tuple
    U_bar: np.ndarray
    V_hat: np.ndarray
    H_hat: np.ndarray
    L: np.ndarray
    C: np.ndarray
    h_residual: float
    psi: float
    neumann_terms: int
    tail_bound: float
    error_a: float
    error_c: float
    value_b: float
    value_d: float
    at: str = "oracle"
    approximate: bool = False
    intersection_trivial: bool = True
    note: str = ""

    @property
    def valid(self) -> bool:
        return verify_conditions(self).valid


@dataclass(frozen=True)
class ConditionVerdict:
    a: bool
    b: bool
    c: bool
    d: bool
    margin_a: float
    margin_b: float
    margin_c: float
    margin_d: float
    noisy: bool

    @property
    def valid(self) -> bool:
        return self.a and self.b and self.c and self.d

    @property
    def strict(self) -> bool:
        return self.valid and self.margin_b > 0 and self.margin_d > 0

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__} | {
            "valid": self.valid,
            "strict": self.strict,
        }


def verify_conditions(report: CertificateReport, noisy: bool = False, tol: float = 1e-8) -> ConditionVerdict:
    """Apply the noiseless thresholds ``(1, lam)`` or the noisy ones ``(1/2, lam/2)``."""
    scale = 0.5 if noisy else 1.0
    qn = float(np.linalg.norm(report.Q))
    ma = tol * max(qn, 1e-300) - report.error_a
    mc = tol * max(1.0, report.lam) - report.error_c
    mb = scale - report.value_b
    md = scale * report.lam - report.value_d
    return ConditionVerdict(
        a=ma >= 0, b=mb >= 0, c=mc >= 0, d=md >= 0,
        margin_a=ma, margin_b=mb, margin_c=mc, margin_d=md, noisy=noisy,
    )


def channel_support(W, support) -> tuple:
    """Channels touched by the given buses (nonzero rows of ``W[:, support]``)."""
    W = np.asarray(W)
    if not len(support):
        return ()
    return tuple(int(k) for k in np.flatnonzero(np.any(W[:, list(support)] != 0, axis=1)))


def intersection_is_trivial(V, channels, p: int) -> bool:
    """True when no nonzero ``Y V^H`` vanishes outside ``channels``.

    Equivalent to the rows of ``V`` outside ``channels`` having full rank.
    """
    V = np.asarray(V)
    r = V.shape[1]
    rest = [k for k in range(p) if k not in set(channels)]
    if r == 0:
        return True
    if len(rest) < r:
        return False
    return int(np.linalg.matrix_rank(V[rest])) == r


def build_certificate(
    L_bar,
    C_bar,
    W,
    lam: float,
    at: str = "oracle",
    rank_tol: float = RANK_TOL,
) -> CertificateReport:
    """Construct the candidate dual certificate ``Q`` and measure all four conditions.

    ``at="oracle"`` builds it at the optimum of the pinned problem (where the
    sign matrix ``H_hat`` satisfying the stationarity equation exists);
    ``at="ground_truth"`` uses ``(L_bar, C_bar)`` directly and reports the
    residual of that equation, flagging the result as approximate when it
    exceeds 1e-8.
    """
    L_bar = np.asarray(L_bar)
    C_bar = np.asarray(C_bar)
    W = np.asarray(W)
    t, p = L_bar.shape
    support = tuple(int(j) for j in np.flatnonzero(np.linalg.norm(C_bar, axis=0) > 0))

    if not support:
        U, _, V = compact_svd(L_bar, rank_tol)
        Q = U @ V.conj().T
        return CertificateReport(
            Q=Q, lam=lam, support=(), channels=(), U_bar=U, V_hat=V,
            H_hat=np.zeros((t, 0)), L=L_bar, C=C_bar, h_residual=0.0, psi=0.0,
            neumann_terms=0, tail_bound=0.0, error_a=0.0, error_c=0.0,
            value_b=float(np.linalg.norm(Q - U @ (U.conj().T @ Q) - (Q @ V) @ V.conj().T + U @ (U.conj().T @ Q @ V) @ V.conj().T, 2)),
            value_d=_inf2(Q @ W.conj()), at=at, note="empty support: Q reduces to U V^H",
        )

    if at == "oracle":
        sol = solve_oracle(L_bar, C_bar, W, lam, rank_tol)
        U, V_hat, H, L, C = sol.U_bar, sol.V_hat, sol.H_hat, sol.L, sol.C
    elif at == "ground_truth":
        U, s, V_hat = compact_svd(L_bar, rank_tol)
        CI = C_bar[:, list(support)]
        H = CI / np.linalg.norm(CI, axis=0)
        L, C = L_bar, C_bar
    else:
        raise ValueError(f"unknown certificate point {at!r}")

    WI = W[:, list(support)]
    A = WI.conj()
    G = WI.T @ A
    if np.linalg.cond(G) > 1e12:
        raise SingularGram("W restricted to the support is rank deficient")
    Ginv = np.linalg.inv(G)
    h_res = float(np.linalg.norm(V_hat.conj().T @ A - lam * U.conj().T @ H))

    R_W = A @ Ginv @ WI.T
    R_W = 0.5 * (R_W + R_W.conj().T)
    P_V = V_hat @ V_hat.conj().T
    P_U = U @ U.conj().T
    Pi = P_V @ R_W @ P_V
    psi = float(np.linalg.norm(Pi, 2))
    if psi >= 1:
        raise SeriesDivergent(f"psi = {psi:.6g} >= 1, the Neumann series does not converge")

    Phi = lam * H @ Ginv @ WI.T
    Delta1 = P_U @ Phi
    head = (Phi - Delta1) @ P_V
    acc = head.copy()
    term = head
    m = 0
    while m < NEUMANN_MAX:
        term = term @ Pi
        m += 1
        acc = acc + term
        if np.linalg.norm(term) < NEUMANN_TOL:
            break
    tail = float(np.linalg.norm(Phi, 2)) * psi ** (m + 1) / (1 - psi)
    Delta2 = acc @ P_V @ (np.eye(p) - R_W)
    Q = U @ V_hat.conj().T + Phi - Delta1 - Delta2

    UVh = U @ V_hat.conj().T
    PT = P_U @ Q + Q @ P_V - P_U @ Q @ P_V
    err_a = float(np.linalg.norm(PT - UVh))
    QW = Q @ W.conj()
    err_c = float(np.abs(QW[:, list(support)] - lam * H).max())
    Qperp = (Q - P_U @ Q) - (Q - P_U @ Q) @ P_V
    val_b = float(np.linalg.norm(Qperp, 2)) + tail
    off = [j for j in range(W.shape[1]) if j not in set(support)]
    val_d = (_inf2(QW[:, off]) + tail) if off else 0.0

    channels = channel_support(W, support)
    return CertificateReport(
        Q=Q, lam=lam, support=support, channels=channels, U_bar=U, V_hat=V_hat, H_hat=H,
        L=L, C=C, h_residual=h_res, psi=psi, neumann_terms=m, tail_bound=tail,
        error_a=err_a, error_c=err_c, value_b=val_b, value_d=val_d, at=at,
        approximate=h_res > 1e-8,
        intersection_trivial=intersection_is_trivial(V_hat, channels, p),
    )


def certificate_summary(report: CertificateReport, noisy: bool = False) -> dict:
    v = verify_conditions(report, noisy)
    return {
        "at": report.at,
        "lambda": report.lam,
        "support": list(report.support),
        "channels": list(report.channels),
        "psi": report.psi,
        "h_residual": report.h_residual,
        "approximate": report.approximate,
        "neumann_terms": report.neumann_terms,
        "tail_bound": report.tail_bound,
        "error_a": report.error_a,
        "error_c": report.error_c,
        "value_b": report.value_b,
        "value_d": report.value_d,
        "intersection_trivial": report.intersection_trivial,
        "note": report.note,
        "conditions": v.to_dict(),
    }
