"""Turn a decomposition into an attack verdict and score it against ground truth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attacksim import AttackScenario, MeasurementSet
from .solver import DecompositionResult, Mode, ProblemSpec, solve
from .theory import RANK_TOL, compact_svd

EPS1_NOISELESS = 0.002
EPS1_NOISY = 0.001
EPS2 = 0.01


def extract_support(C_star, W, eps1: float) -> tuple[frozenset, frozenset]:
    """Buses whose column of ``C_star`` and channels whose column of ``C_star W^T`` exceed ``eps1``."""
    if not eps1 > 0:
        raise ValueError("eps1 must be positive")
    C_star = np.asarray(C_star)
    I = frozenset(int(j) for j in np.flatnonzero(np.linalg.norm(C_star, axis=0) > eps1))
    D = C_star @ np.asarray(W).T
    J = frozenset(int(k) for k in np.flatnonzero(np.linalg.norm(D, axis=0) > eps1))
    return I, J


def column_basis(L, rank: Optional[int] = None, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the leading ``rank`` left singular vectors.

    With ``rank=None`` the rank is detected at ``rank_tol`` relative to the
    largest singular value.
    """
    L = np.asarray(L)
    if rank is None:
        return compact_svd(L, rank_tol)[0]
    U, _, _ = np.linalg.svd(L, full_matrices=False)
    return U[:, :rank]


def projector_gap(U1, U2) -> float:
    """Spectral norm of ``U1 U1^H - U2 U2^H``."""
    P = U1 @ U1.conj().T - U2 @ U2.conj().T
    return float(np.linalg.norm(P, 2)) if P.size else 0.0


def subspace_distance(L_star, L_bar, rank_tol: float = RANK_TOL, rank: Optional[int] = None) -> float:
    """Distance between the column spaces of two matrices.

    ``rank`` truncates ``L_star`` to its leading singular vectors; when omitted
    both ranks are detected at ``rank_tol``.
    """
    Ub = column_basis(L_bar, None, rank_tol)
    Us = column_basis(L_star, rank, rank_tol)
    return projector_gap(Us, Ub)


@dataclass(frozen=True)
class DetectionOutcome:
    I_star: frozenset
    J_star: frozenset
    U_star: np.ndarray
    clean_channels: np.ndarray
    subspace_gap: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "I_star": sorted(self.I_star),
            "J_star": sorted(self.J_star),
            "rank": int(self.U_star.shape[1]),
            "subspace_gap": self.subspace_gap,
        }


@dataclass(frozen=True)
class SuccessRecord:
    success: bool
    support_exact: bool
    channels_exact: bool
    subspace_gap: float
    clean_error: float
    false_alarms: int
    missed: int

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def detect(
    result: DecompositionResult,
    W,
    eps1: float = EPS1_NOISELESS,
    rank: Optional[int] = None,
    rank_tol: float = RANK_TOL,
) -> DetectionOutcome:
    """Read off attacked buses, attacked channels and the clean subspace."""
    I, J = extract_support(result.C_star, W, eps1)
    L = np.asarray(result.L_star)
    if rank is None and not np.any(L):
        U = L[:, :0]
    else:
        U = column_basis(L, rank, rank_tol)
    keep = [k for k in range(L.shape[1]) if k not in J]
    return DetectionOutcome(I_star=I, J_star=J, U_star=U, clean_channels=L[:, keep])


def score(
    outcome: DetectionOutcome,
    scenario: AttackScenario,
    eps2: float = EPS2,
    L_star=None,
) -> SuccessRecord:
    """Compare an outcome with the ground truth of ``scenario``.

    Success means the attacked buses are found exactly and the clean subspace
    is within ``eps2``. ``L_star`` enables the clean-channel error.
    """
    Ub = column_basis(scenario.L_bar) if np.any(scenario.L_bar) else scenario.L_bar[:, :0]
    gap = projector_gap(outcome.U_star, Ub)
    I_bar, J_bar = scenario.I_bar, scenario.J_bar
    clean_err = float("nan")
    if L_star is not None:
        keep_s = [k for k in range(scenario.shape[1]) if k not in outcome.J_star]
        keep_b = [k for k in range(scenario.shape[1]) if k not in J_bar]
        if keep_s == keep_b and keep_b:
            ref = scenario.L_bar[:, keep_b]
            den = float(np.linalg.norm(ref))
            diff = float(np.linalg.norm(np.asarray(L_star)[:, keep_s] - ref))
            clean_err = diff / den if den > 0 else diff
    exact = outcome.I_star == I_bar
    return SuccessRecord(
        success=bool(exact and gap <= eps2),
        support_exact=bool(exact),
        channels_exact=bool(outcome.J_star == J_bar),
        subspace_gap=gap,
        clean_error=clean_err,
        false_alarms=len(outcome.I_star - I_bar),
        missed=len(I_bar - outcome.I_star),
    )


def identify(
    data: MeasurementSet | AttackScenario,
    lam1: float = 0.95,
    eps1: Optional[float] = None,
    lam2: float = np.inf,
    rank: Optional[int] = None,
    **solver_options,
) -> tuple[DecompositionResult, DetectionOutcome]:
    """Full pipeline: solve the convex program and extract the attack support.

    ``eps1`` defaults to the noiseless threshold when ``eta == 0`` and to the
    noisy one otherwise. For a scenario with ground truth, ``rank`` defaults
    to the true rank.
    """
    if isinstance(data, AttackScenario):
        if rank is None:
            rank = data.rank
        data = data.observed()
    mode = Mode.BASIC if np.isinf(lam2) else Mode.COMBINED
    spec = ProblemSpec(
        M=data.M, W=data.W, lam1=lam1, Omega=data.Omega, eta=data.eta, mode=mode, lam2=lam2,
        **solver_options,
    )
    result = solve(spec)
    if eps1 is None:
        eps1 = EPS1_NOISELESS if data.eta == 0 else EPS1_NOISY
    return result, detect(result, data.W, eps1, rank)
