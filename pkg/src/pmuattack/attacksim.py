"""Synthetic PMU data with unobservable, scattered and combined attacks.

Every generator is a pure function of its arguments and an integer seed, so
a scenario can be rebuilt bit for bit from its :class:`ScenarioConfig`.
Noise is added before the observation mask is drawn.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .errors import DegenerateAttack, EmptyMask, EmptySupport, RankTooLarge, ShapeMismatch
from .gridmodel import (
    TransformMatrix,
    binary_regular_transform,
    gaussian_transform,
    transform_from_matrix,
)

MAX_DEGENERATE_RETRIES = 16


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _unit_w(W) -> np.ndarray:
    return W.W if isinstance(W, TransformMatrix) else np.asarray(W)


def derive_seeds(seed: int, count: int) -> list[int]:
    """Independent child seeds for the stages of one scenario."""
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(count)]


@dataclass(frozen=True)
class MeasurementSet:
    """What the operator sees: ``M`` on ``Omega`` (NaN elsewhere), ``eta`` and ``W``."""

    M: np.ndarray
    Omega: np.ndarray
    eta: float
    W: np.ndarray

    def __post_init__(self):
        if not np.asarray(self.Omega).any():
            raise EmptyMask("observation mask is empty")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


@dataclass(frozen=True)
class AttackScenario:
    """Ground truth for one trial.

    ``M = L_bar + C_bar W^T + S_bar + N`` and only entries in ``Omega`` are
    observed.
    """

    L_bar: np.ndarray
    C_bar: np.ndarray
    W: np.ndarray
    S_bar: np.ndarray
    N: np.ndarray
    Omega: np.ndarray
    eta: float = 0.0
    seed: Optional[int] = None
    config: Optional["ScenarioConfig"] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.L_bar.shape

    @property
    def D_bar(self) -> np.ndarray:
        return self.C_bar @ self.W.T + self.S_bar

    @property
    def M_full(self) -> np.ndarray:
        return self.L_bar + self.C_bar @ self.W.T + self.S_bar + self.N

    @property
    def I_bar(self) -> frozenset:
        """Attacked buses: nonzero columns of ``C_bar``."""
        return frozenset(int(j) for j in np.flatnonzero(np.linalg.norm(self.C_bar, axis=0) > 0))

    @property
    def J_bar(self) -> frozenset:
        """Attacked channels: nonzero columns of ``C_bar W^T``."""
        return attacked_channels(self.C_bar, self.W)[0]

    @property
    def rank(self) -> int:
        return numerical_rank(self.L_bar)

    def observed(self) -> MeasurementSet:
        M = np.where(self.Omega, self.M_full, np.nan)
        return MeasurementSet(M=M, Omega=self.Omega.copy(), eta=self.eta, W=self.W)

    def replace(self, **changes) -> "AttackScenario":
        return dataclasses.replace(self, **changes)


def numerical_rank(A, rank_tol: float = 1e-9) -> int:
    s = np.linalg.svd(np.asarray(A), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def attacked_channels(C, W, rel_tol: float = 1e-12) -> tuple[frozenset, frozenset]:
    """Channel support of ``C W^T`` and the channels lost to exact cancellation.

    The second set holds channels that some attacked bus touches through
    ``W`` but whose column of ``C W^T`` is (numerically) zero anyway.
    """
    C, W = np.asarray(C), np.asarray(W)
    D = C @ W.T
    dn = np.linalg.norm(D, axis=0)
    scale = max(float(np.linalg.norm(C)) * max(float(np.abs(W).max(initial=0.0)), 1.0), 1e-300)
    J = frozenset(int(k) for k in np.flatnonzero(dn > rel_tol * scale))
    buses = np.flatnonzero(np.linalg.norm(C, axis=0) > 0)
    touched = frozenset(int(k) for k in np.flatnonzero(np.any(W[:, buses] != 0, axis=1))) if buses.size else frozenset()
    return J, touched - J


# -- generators -----------------------------------------------------------


def gen_synthetic_lowrank(t: int, p: int, r: int, seed) -> np.ndarray:
    """``A @ B.T`` with i.i.d. standard normal ``A`` (t x r) and ``B`` (p x r)."""
    if r < 0 or r > min(t, p):
        raise RankTooLarge(f"rank {r} impossible for a {t}x{p} matrix")
    rng = _rng(seed)
    A = rng.standard_normal((t, r))
    B = rng.standard_normal((p, r))
    return A @ B.T


def _degenerate(L_bar, D, tol: float = 1e-8) -> bool:
    """True if some nonzero column of ``D`` lies in the column space of ``L_bar``."""
    U, s, _ = np.linalg.svd(L_bar, full_matrices=False)
    r = int(np.sum(s > 1e-9 * s[0])) if s.size and s[0] > 0 else 0
    U = U[:, :r]
    norms = np.linalg.norm(D, axis=0)
    cols = np.flatnonzero(norms > 0)
    if cols.size == 0:
        return True
    resid = D[:, cols] - U @ (U.conj().T @ D[:, cols])
    return bool(np.any(np.linalg.norm(resid, axis=0) <= tol * norms[cols]))


def inject_unobservable(
    L_bar,
    W,
    support,
    magnitudes=1.0,
    seed=None,
    max_retries: int = MAX_DEGENERATE_RETRIES,
) -> AttackScenario:
    """Attack the state of the buses in ``support`` at every time instant.

    Column j of ``C_bar`` is i.i.d. N(0, 1) scaled by ``magnitudes`` (scalar or
    one value per bus in ``support``). Draws that put an attacked channel
    inside the column space of ``L_bar`` are redrawn.
    """
    L_bar = np.asarray(L_bar)
    Wu = _unit_w(W)
    t, p = L_bar.shape
    if Wu.shape[0] != p:
        raise ShapeMismatch(f"W has {Wu.shape[0]} rows but L_bar has {p} columns")
    support = sorted(int(j) for j in support)
    if not support:
        raise EmptySupport("attack support is empty")
    if isinstance(W, TransformMatrix):
        bad = set(support) - set(W.observed.tolist())
        if bad:
            raise ValueError(f"buses {sorted(bad)} are unobserved and cannot be attacked")
    mags = np.broadcast_to(np.asarray(magnitudes, dtype=float), (len(support),))
    rng = _rng(seed)
    for _ in range(max_retries):
        C = np.zeros((t, Wu.shape[1]), dtype=np.result_type(L_bar, Wu, float))
        C[:, support] = rng.standard_normal((t, len(support))) * mags
        if not _degenerate(L_bar, C @ Wu.T):
            return AttackScenario(
                L_bar=L_bar,
                C_bar=C,
                W=Wu,
                S_bar=np.zeros_like(L_bar, dtype=C.dtype),
                N=np.zeros_like(L_bar, dtype=C.dtype),
                Omega=np.ones((t, p), bool),
                seed=seed,
            )
    raise DegenerateAttack(f"attack stayed in span(L_bar) after {max_retries} draws")


def clean_scenario(L_bar, W) -> AttackScenario:
    """Scenario with no attack at all."""
    L_bar = np.asarray(L_bar)
    Wu = _unit_w(W)
    t, p = L_bar.shape
    z = np.zeros_like(L_bar, dtype=np.result_type(L_bar, Wu, float))
    return AttackScenario(
        L_bar=L_bar,
        C_bar=np.zeros((t, Wu.shape[1]), z.dtype),
        W=Wu,
        S_bar=z,
        N=z.copy(),
        Omega=np.ones((t, p), bool),
    )


def state_errors_to_attack(betas: dict, tm: TransformMatrix, t: int) -> np.ndarray:
    """``C_bar`` for additive errors ``betas[j]`` (length-t) on bus voltages.

    With the normalised transform the column for bus j is ``||W_bar_j|| * beta``.
    """
    C = np.zeros((t, tm.W.shape[1]), dtype=complex)
    for j, beta in betas.items():
        C[:, j] = tm.column_norms[j] * np.asarray(beta)
    return C


def inject_ramp(L_bar, W, support, slope: float = 0.05, seed=None) -> AttackScenario:
    """Slowly drifting state offsets (a demo profile, not part of the benchmark suite).

    Each attacked bus gets ``slope * k * g`` at instant k with a random sign
    ``g``, which is hard to see in one snapshot but clear over time.
    """
    L_bar = np.asarray(L_bar)
    Wu = _unit_w(W)
    rng = _rng(seed)
    t = L_bar.shape[0]
    sc = clean_scenario(L_bar, Wu)
    C = sc.C_bar.copy()
    ramp = slope * np.arange(1, t + 1)
    for j in support:
        C[:, j] = ramp * rng.choice([-1.0, 1.0])
    return sc.replace(C_bar=C, seed=seed)


def inject_scattered(scenario: AttackScenario, density: float, seed=None) -> AttackScenario:
    """Add a sparse attack with ``ceil(density * t * p)`` N(0, 1) entries at random places."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    t, p = scenario.shape
    count = math.ceil(round(density * t * p, 9))
    rng = _rng(seed)
    S = np.zeros((t, p), dtype=scenario.S_bar.dtype)
    idx = rng.choice(t * p, size=count, replace=False)
    S.flat[idx] = rng.standard_normal(count)
    return scenario.replace(S_bar=S)


def add_noise(scenario: AttackScenario, sigma: float, seed=None) -> AttackScenario:
    """i.i.d. N(0, sigma^2) noise; the budget ``eta`` is set to ``||N||_F``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    t, p = scenario.shape
    N = sigma * _rng(seed).standard_normal((t, p))
    return scenario.replace(N=N.astype(scenario.N.dtype), eta=float(np.linalg.norm(N)))


def mask_observations(scenario: AttackScenario, keep_fraction: float, seed=None) -> AttackScenario:
    """Keep ``ceil(keep_fraction * t * p)`` entries chosen uniformly without replacement."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    t, p = scenario.shape
    count = math.ceil(round(keep_fraction * t * p, 9))
    if count == 0:
        raise EmptyMask("no entries left to observe")
    Omega = np.zeros(t * p, bool)
    if count == t * p:
        Omega[:] = True
    else:
        Omega[_rng(seed).choice(t * p, size=count, replace=False)] = True
    return scenario.replace(Omega=Omega.reshape(t, p))


# -- replayable configurations ----------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to regenerate a synthetic scenario.

    ``w_kind`` is ``"gaussian"`` (dense N(0, 1) transform), ``"binary"``
    (``row_ones`` ones per row, balanced columns) or ``"identity"``
    (``n`` must equal ``p``). ``obs_seed``, when set, drives the scattered
    attack, the noise and the mask separately from the rest, so sweeps over
    those knobs can share the same underlying data. ``normalize_w=False``
    keeps the raw transform (for instance a 0/1 matrix) for both the attack
    and the solver.
    """

    t: int = 50
    p: int = 50
    n: int = 25
    r: int = 3
    support_size: int = 0
    sigma: float = 0.0
    keep: float = 1.0
    density: float = 0.0
    magnitude: float = 1.0
    w_kind: str = "gaussian"
    row_ones: int = 2
    seed: int = 0
    obs_seed: Optional[int] = None
    normalize_w: bool = True

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def make_transform(config: ScenarioConfig, seed) -> np.ndarray:
    rng = _rng(seed)
    if config.w_kind == "gaussian":
        tm = gaussian_transform(config.p, config.n, rng)
    elif config.w_kind == "binary":
        tm = binary_regular_transform(config.p, config.n, config.row_ones, rng)
    elif config.w_kind == "identity":
        if config.n != config.p:
            raise ShapeMismatch("identity transform needs n == p")
        tm = transform_from_matrix(np.eye(config.p))
    else:
        raise ValueError(f"unknown w_kind {config.w_kind!r}")
    return tm.W if config.normalize_w else np.array(tm.W_bar)


def generate_scenario(config: ScenarioConfig, W: Optional[np.ndarray] = None) -> AttackScenario:
    """Build the full scenario: low-rank data, transform, attacks, noise, mask."""
    s_low, s_w, s_sup, s_att, s_sc, s_noise, s_mask = derive_seeds(config.seed, 7)
    if config.obs_seed is not None:
        s_sc, s_noise, s_mask = derive_seeds(config.obs_seed, 3)
    L_bar = gen_synthetic_lowrank(config.t, config.p, config.r, s_low)
    if W is None:
        W = make_transform(config, s_w)
    if config.support_size > 0:
        support = _rng(s_sup).choice(W.shape[1], size=config.support_size, replace=False)
        sc = inject_unobservable(L_bar, W, support, config.magnitude, s_att)
    else:
        sc = clean_scenario(L_bar, W)
    if config.density > 0:
        sc = inject_scattered(sc, config.density, s_sc)
    if config.sigma > 0:
        sc = add_noise(sc, config.sigma, s_noise)
    if config.keep < 1.0:
        sc = mask_observations(sc, config.keep, s_mask)
    return sc.replace(seed=config.seed, config=config)


# -- persistence -------------------------------------------------------------

_MATRICES = ("L_bar", "C_bar", "S_bar", "N", "W")


def save_scenario(scenario: AttackScenario, out_dir, materialize: bool = True) -> Path:
    """Write ``scenario.json`` (config + seed) and optionally the matrices as CSV."""
    out = io.ensure_dir(out_dir)
    manifest = {
        "config": scenario.config.to_dict() if scenario.config else None,
        "seed": scenario.seed,
        "eta": scenario.eta,
        "shape": list(scenario.shape),
        "n": int(scenario.W.shape[1]),
        "I_bar": sorted(scenario.I_bar),
        "J_bar": sorted(scenario.J_bar),
        "files": {},
    }
    if materialize:
        for name in _MATRICES:
            fname = f"{name}.csv"
            io.write_complex_csv(out / fname, getattr(scenario, name))
            manifest["files"][name] = fname
        io.write_complex_csv(out / "M.csv", np.where(scenario.Omega, scenario.M_full, 0))
        io.write_mask_csv(out / "Omega.csv", scenario.Omega)
        manifest["files"]["M"] = "M.csv"
        manifest["files"]["Omega"] = "Omega.csv"
    path = out / "scenario.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_scenario(path) -> AttackScenario:
    """Rebuild a scenario from ``scenario.json``.

    Materialised CSV matrices take precedence; otherwise the config is
    replayed from its seed.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "scenario.json"
    manifest = json.loads(path.read_text())
    files = manifest.get("files") or {}
    config = ScenarioConfig.from_dict(manifest["config"]) if manifest.get("config") else None
    if files:
        mats = {name: io.read_matrix(path.parent / files[name]) for name in _MATRICES}
        Omega = io.read_mask_csv(path.parent / files["Omega"])
        return AttackScenario(
            L_bar=mats["L_bar"],
            C_bar=mats["C_bar"],
            W=mats["W"],
            S_bar=mats["S_bar"],
            N=mats["N"],
            Omega=Omega,
            eta=float(manifest["eta"]),
            seed=manifest.get("seed"),
            config=config,
        )
    if config is None:
        raise ValueError(f"{path} holds neither matrices nor a config")
    return generate_scenario(config)
