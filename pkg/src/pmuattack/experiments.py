"""Batch experiments: success-rate grids, noise and mask sweeps, method comparison
and the ring-network guarantee calculus.

Each trial is a pure function of its :class:`TrialTask`, so reports are
bit-identical across runs and worker counts apart from timing fields.
"""
from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .attacksim import ScenarioConfig, generate_scenario
from .detect import EPS1_NOISELESS, EPS1_NOISY, EPS2, detect, score
from .gridmodel import build_ring_network
from .io import json_safe
from .solver import Mode, ProblemSpec, solve
from .theory import compute_incoherence, lambda_range, psi_c_admissible


class Family(str, Enum):
    PHASE_GRID = "PhaseGrid"
    NOISE_SWEEP = "NoiseSweep"
    MASK_SWEEP = "MaskSweep"
    COMBINED_COMPARE = "CombinedCompare"
    RING_THEORY = "RingTheory"


COMPARE_MODES = ("Basic", "ScatteredOnly", "Combined")


@dataclass(frozen=True)
class ExperimentPlan:
    """Axes, trial count and parameter overrides for one experiment family.

    Unused axes are ignored by families that do not sweep them.
    """

    family: Family = Family.PHASE_GRID
    t: int = 50
    p: int = 50
    n: int = 25
    ranks: tuple = tuple(range(1, 9))
    supports: tuple = tuple(range(0, 7))
    sigmas: tuple = (0.0,)
    keeps: tuple = (1.0,)
    densities: tuple = (0.0,)
    modes: tuple = COMPARE_MODES
    trials: int = 20
    base_seed: int = 0
    lam1: float = 0.95
    lam2: float = 0.1
    basic_lam1: float = 1.0
    eps1: Optional[float] = None
    eps2: float = EPS2
    w_kind: str = "gaussian"
    row_ones: int = 2
    normalize_w: bool = True
    max_iters: int = 5000
    ring_ns: tuple = (48, 96, 144, 192)
    ring_r: int = 1
    rho_policy: str = "flat"
    psi_tilde: float = 0.125
    c: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        for name in ("ranks", "supports", "sigmas", "keeps", "densities", "modes", "ring_ns"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if any(r < 0 or r > min(self.t, self.p) for r in self.ranks):
            raise ValueError("rank outside [0, min(t, p)]")
        if any(k < 0 or k > self.n for k in self.supports):
            raise ValueError("support size outside [0, n]")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("negative noise level")
        if any(not 0 < q <= 1 for q in self.keeps):
            raise ValueError("keep fraction outside (0, 1]")
        if any(not 0 <= d <= 1 for d in self.densities):
            raise ValueError("density outside [0, 1]")
        if any(m not in COMPARE_MODES for m in self.modes):
            raise ValueError(f"modes must be among {COMPARE_MODES}")
        if any(n < 4 or n % 2 for n in self.ring_ns):
            raise ValueError("ring sizes must be even and >= 4")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["family"] = self.family.value
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown plan fields {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "ExperimentPlan":
        return dataclasses.replace(self, **changes)


def trial_seed(*key: int) -> int:
    """Deterministic 63-bit seed from an integer key."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0] >> 1)


def _code(x: float) -> int:
    return int(round(x * 1_000_000))


@dataclass(frozen=True)
class TrialTask:
    cell: tuple
    trial: int
    config: ScenarioConfig
    lam1: float
    lam2: float
    eps1: float
    eps2: float
    criterion: str
    max_iters: int


def run_trial(task: TrialTask) -> dict:
    """Generate, solve, detect and score one trial. Errors become failed records."""
    t0 = time.perf_counter()
    rec = {"cell": list(task.cell), "trial": task.trial, "seed": task.config.seed, "obs_seed": task.config.obs_seed}
    try:
        sc = generate_scenario(task.config)
        data = sc.observed()
        mode = Mode.BASIC if math.isinf(task.lam2) else Mode.COMBINED
        res = solve(
            ProblemSpec(
                M=data.M, W=data.W, lam1=task.lam1, Omega=data.Omega, eta=data.eta,
                mode=mode, lam2=task.lam2, max_iters=task.max_iters,
            )
        )
        out = detect(res, data.W, task.eps1, rank=sc.rank)
        sr = score(out, sc, task.eps2, L_star=res.L_star)
        ok = sr.subspace_gap <= task.eps2 if task.criterion == "subspace" else sr.success
        rec.update(
            success=bool(ok),
            support_exact=sr.support_exact,
            channels_exact=sr.channels_exact,
            subspace_gap=sr.subspace_gap,
            false_alarms=sr.false_alarms,
            iterations=res.iterations,
            converged=res.converged,
            error=None,
        )
    except Exception as exc:  # one bad trial must not sink a grid
        rec.update(
            success=False, support_exact=False, channels_exact=False, subspace_gap=float("nan"),
            false_alarms=0, iterations=0, converged=False, error=f"{type(exc).__name__}: {exc}",
        )
    rec["wall_time"] = time.perf_counter() - t0
    return rec


def _map(fn: Callable, tasks: Sequence, jobs: int, progress: Optional[Callable] = None) -> list:
    out = []
    if jobs <= 1:
        for i, task in enumerate(tasks):
            out.append(fn(task))
            if progress:
                progress(i + 1, len(tasks))
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for i, rec in enumerate(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (8 * jobs)))):
            out.append(rec)
            if progress:
                progress(i + 1, len(tasks))
    return out


@dataclass
class ExperimentReport:
    """Per-cell aggregates, raw trial records and a reproducibility manifest."""

    family: str
    axes: list
    cells: list
    trials: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    series: list = field(default_factory=list)

    def cell(self, **key) -> dict:
        for c in self.cells:
            if all(c.get(k) == v for k, v in key.items()):
                return c
        raise KeyError(key)

    def to_dict(self, timing: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not timing:
            for c in d["cells"]:
                c.pop("wall_time", None)
            for t in d["trials"]:
                t.pop("wall_time", None)
            d["manifest"].pop("wall_time", None)
        return d

    @property
    def complete(self) -> bool:
        return all(c["n_trials"] == c["n_completed"] for c in self.cells)


def environment_fingerprint() -> dict:
    return {
        "package": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def _aggregate(axes: list, tasks: list, records: list) -> list:
    groups: dict = {}
    for task, rec in zip(tasks, records):
        groups.setdefault(task.cell, []).append(rec)
    cells = []
    for key, recs in groups.items():
        gaps = [r["subspace_gap"] for r in recs if r["error"] is None]
        done = [r for r in recs if r["error"] is None]
        cell = dict(zip(axes, key))
        cell.update(
            n_trials=len(recs),
            n_completed=len(done),
            n_failed=len(recs) - len(done),
            successes=sum(r["success"] for r in recs),
            success_rate=sum(r["success"] for r in recs) / len(recs),
            support_success_rate=sum(r["support_exact"] for r in recs) / len(recs),
            channel_success_rate=sum(r["channels_exact"] for r in recs) / len(recs),
            mean_subspace_gap=float(np.mean(gaps)) if gaps else float("nan"),
            mean_iterations=float(np.mean([r["iterations"] for r in done])) if done else 0.0,
            false_alarm_trials=sum(r["false_alarms"] > 0 for r in recs),
            wall_time=float(sum(r["wall_time"] for r in recs)),
        )
        cells.append(cell)
    return cells


def _execute(plan: ExperimentPlan, axes: list, tasks: list, jobs: int, progress) -> ExperimentReport:
    t0 = time.perf_counter()
    records = _map(run_trial, tasks, jobs, progress)
    cells = _aggregate(axes, tasks, records)
    manifest = {
        "plan": plan.to_dict(),
        "seeds": [{"cell": list(t.cell), "trial": t.trial, "seed": t.config.seed, "obs_seed": t.config.obs_seed} for t in tasks],
        "environment": environment_fingerprint(),
        "wall_time": time.perf_counter() - t0,
    }
    return ExperimentReport(family=plan.family.value, axes=axes, cells=cells, trials=records, manifest=manifest)


def _config(plan: ExperimentPlan, r: int, k: int, trial: int, **kw) -> ScenarioConfig:
    return ScenarioConfig(
        t=plan.t, p=plan.p, n=plan.n, r=r, support_size=k, w_kind=plan.w_kind,
        row_ones=plan.row_ones, normalize_w=plan.normalize_w,
        seed=trial_seed(plan.base_seed, r, k, trial), **kw,
    )


def _task(plan, cell, trial, config, lam1=None, lam2=math.inf, eps1=None, criterion="support"):
    return TrialTask(
        cell=cell, trial=trial, config=config,
        lam1=plan.lam1 if lam1 is None else lam1, lam2=lam2,
        eps1=eps1 if eps1 is not None else (plan.eps1 or EPS1_NOISELESS),
        eps2=plan.eps2, criterion=criterion, max_iters=plan.max_iters,
    )


def _require(plan: ExperimentPlan, family: Family):
    if plan.family is not family:
        raise ValueError(f"plan family is {plan.family.value}, expected {family.value}")


def run_phase_grid(plan: ExperimentPlan, jobs: int = 1, progress=None) -> ExperimentReport:
    """Success rate over (rank, number of attacked buses), noiseless and fully observed."""
    _require(plan, Family.PHASE_GRID)
    tasks = [
        _task(plan, (r, k), i, _config(plan, r, k, i))
        for r in plan.ranks for k in plan.supports for i in range(plan.trials)
    ]
    return _execute(plan, ["r", "k"], tasks, jobs, progress)


def run_mask_sweep(plan: ExperimentPlan, jobs: int = 1, progress=None) -> ExperimentReport:
    """Phase grid repeated per keep fraction on the same underlying scenarios."""
    _require(plan, Family.MASK_SWEEP)
    tasks = [
        _task(plan, (q, r, k), i,
              _config(plan, r, k, i, keep=q, obs_seed=trial_seed(plan.base_seed, r, k, i, 1, _code(q))))
        for q in plan.keeps for r in plan.ranks for k in plan.supports for i in range(plan.trials)
    ]
    return _execute(plan, ["keep", "r", "k"], tasks, jobs, progress)


def run_noise_sweep(plan: ExperimentPlan, jobs: int = 1, progress=None) -> ExperimentReport:
    """Support recovery and subspace error against the noise level."""
    _require(plan, Family.NOISE_SWEEP)
    eps1 = plan.eps1 or EPS1_NOISY
    tasks = [
        _task(plan, (s, r, k), i,
              _config(plan, r, k, i, sigma=s, obs_seed=trial_seed(plan.base_seed, r, k, i, 2, _code(s))),
              eps1=eps1)
        for s in plan.sigmas for r in plan.ranks for k in plan.supports for i in range(plan.trials)
    ]
    return _execute(plan, ["sigma", "r", "k"], tasks, jobs, progress)


def mode_weights(plan: ExperimentPlan, mode: str) -> tuple[float, float]:
    """(lam1, lam2) for a comparison mode; ``inf`` drops the corresponding term."""
    if mode == "Basic":
        return plan.basic_lam1, math.inf
    if mode == "ScatteredOnly":
        return math.inf, plan.lam2
    return plan.lam1, plan.lam2


def run_combined_compare(plan: ExperimentPlan, jobs: int = 1, progress=None) -> ExperimentReport:
    """Column-space recovery for each mode against the density of scattered entries."""
    _require(plan, Family.COMBINED_COMPARE)
    tasks = []
    for d in plan.densities:
        for k in plan.supports:
            for r in plan.ranks:
                for i in range(plan.trials):
                    cfg = _config(plan, r, k, i, density=d,
                                  obs_seed=trial_seed(plan.base_seed, r, k, i, 3, _code(d)))
                    for mode in plan.modes:
                        l1, l2 = mode_weights(plan, mode)
                        tasks.append(_task(plan, (d, k, r, mode), i, cfg, lam1=l1, lam2=l2, criterion="subspace"))
    return _execute(plan, ["density", "k", "r", "mode"], tasks, jobs, progress)


def combined_plan(**overrides) -> ExperimentPlan:
    """Comparison setup: raw 0/1 transform with two ones per row and five per column."""
    base = dict(
        family=Family.COMBINED_COMPARE, n=20, ranks=(2,), supports=(0, 2), densities=(0.0, 0.05),
        lam1=1.0, lam2=0.1, basic_lam1=0.9, w_kind="binary", row_ones=2, normalize_w=False,
    )
    base.update(overrides)
    return ExperimentPlan(**base)


# -- ring network -------------------------------------------------------------


def ring_lowrank(p: int, t: int, r: int, policy: str, seed: int) -> np.ndarray:
    """Rank-r data whose row space has the flattest possible energy profile.

    ``"flat"`` uses r columns of the unitary DFT basis (every row of the
    right factor has norm ``sqrt(r/p)``); ``"gaussian"`` draws both factors.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((t, r))
    if policy == "flat":
        k = np.arange(p)[:, None] * np.arange(r)[None, :]
        V = np.exp(-2j * np.pi * k / p) / np.sqrt(p)
        return A @ V.conj().T
    if policy == "gaussian":
        return A @ rng.standard_normal((p, r)).T
    raise ValueError(f"unknown rho policy {policy!r}")


def ring_k_tilde(n: int, rho: float, r: int) -> int:
    return int(math.floor(n / (48.0 * rho * r) + 1e-12))


def ring_theory_point(n: int, r: int = 1, rho_policy: str = "flat", psi_tilde: float = 0.125,
                      c: float = 0.25, seed: int = 0, t: Optional[int] = None) -> dict:
    _, tm = build_ring_network(n)
    W = tm.W
    p = W.shape[0]
    L = ring_lowrank(p, t or max(r, 8), r, rho_policy, seed)
    probe = compute_incoherence(L, W, ())
    k_tilde = ring_k_tilde(n, probe.rho, r)
    row = {
        "n": n, "p": p, "r": probe.r, "rho": probe.rho, "epsilon": probe.epsilon, "mu": probe.mu,
        "mu_formula": 2.0 / math.sqrt(n * n + 2 * n), "k_tilde": k_tilde,
        "lambda_min": None, "lambda_max": None, "sigma": None, "sigma_exact": None,
        "feasible": False, "coherence_ok": None,
        "lambda_min_ref": 23.0 / 14.0 * math.sqrt(2 * probe.rho * r / n),
        "lambda_max_ref": 0.5 * math.sqrt(23 * probe.rho * r / n),
    }
    if k_tilde >= 1:
        stats = compute_incoherence(L, W, (k_tilde,))
        lr = lambda_range(stats, psi_tilde, c, k_tilde)
        row.update(
            lambda_min=lr.lambda_min, lambda_max=lr.lambda_max, sigma=lr.sigma,
            sigma_exact=stats.sigma[k_tilde].exact, feasible=lr.feasible, coherence_ok=lr.coherence_ok,
        )
    return row


def run_ring_theory(plan: ExperimentPlan) -> ExperimentReport:
    """Guarantee calculus on ring networks of growing size.

    ``threshold_n`` in the manifest is the smallest tested n from which the
    range is feasible for every larger tested n.
    """
    _require(plan, Family.RING_THEORY)
    if not psi_c_admissible(plan.psi_tilde, plan.c):
        raise ValueError("(psi_tilde, c) violates the pairing condition")
    t0 = time.perf_counter()
    rows = [
        ring_theory_point(n, plan.ring_r, plan.rho_policy, plan.psi_tilde, plan.c,
                          trial_seed(plan.base_seed, n, plan.ring_r))
        for n in sorted(plan.ring_ns)
    ]
    threshold = None
    for row in reversed(rows):
        if not row["feasible"]:
            break
        threshold = row["n"]
    manifest = {
        "plan": plan.to_dict(),
        "environment": environment_fingerprint(),
        "threshold_n": threshold,
        "pairing_condition": True,
        "wall_time": time.perf_counter() - t0,
    }
    return ExperimentReport(family=plan.family.value, axes=["n"], cells=[], series=rows, manifest=manifest)


RUNNERS = {
    Family.PHASE_GRID: run_phase_grid,
    Family.MASK_SWEEP: run_mask_sweep,
    Family.NOISE_SWEEP: run_noise_sweep,
    Family.COMBINED_COMPARE: run_combined_compare,
}


def run_plan(plan: ExperimentPlan, jobs: int = 1, progress=None) -> ExperimentReport:
    if plan.family is Family.RING_THEORY:
        return run_ring_theory(plan)
    return RUNNERS[plan.family](plan, jobs, progress)


# -- emission -------------------------------------------------------------------

CELL_COLUMNS = (
    "n_trials", "n_completed", "n_failed", "successes", "success_rate", "support_success_rate",
    "channel_success_rate", "mean_subspace_gap", "mean_iterations", "false_alarm_trials",
)


def grid_csv(report: ExperimentReport) -> str:
    """Success rates laid out with one row per rank and one column per support size.

    Families with an extra leading axis (keep fraction, noise level) get that
    axis as the first column.
    """
    if "r" not in report.axes or "k" not in report.axes or "mode" in report.axes:
        return ""
    lead = [a for a in report.axes if a not in ("r", "k")]
    ks = sorted({c["k"] for c in report.cells})
    keys = sorted({tuple(c[a] for a in lead) + (c["r"],) for c in report.cells})
    buf = _io.StringIO()
    w = csv.writer(buf)
    w.writerow(lead + ["r"] + [f"k={k}" for k in ks])
    for key in keys:
        row = list(key)
        for k in ks:
            match = [c for c in report.cells if tuple(c[a] for a in lead) + (c["r"],) == key and c["k"] == k]
            row.append(repr(match[0]["success_rate"]) if match else "")
        w.writerow(row)
    return buf.getvalue()


def parse_grid_csv(text: str) -> dict:
    """Inverse of :func:`grid_csv`: maps (lead..., r, k) to success rate."""
    rows = list(csv.reader(_io.StringIO(text)))
    head = rows[0]
    split = head.index("r")
    ks = [int(h.split("=")[1]) for h in head[split + 1:]]
    out = {}
    for row in rows[1:]:
        lead = tuple(float(v) for v in row[:split])
        r = int(row[split])
        for k, v in zip(ks, row[split + 1:]):
            if v != "":
                out[lead + (r, k)] = float(v)
    return out


def curves_csv(report: ExperimentReport) -> str:
    """One row per cell (or per ring size) with every aggregate."""
    buf = _io.StringIO()
    w = csv.writer(buf)
    if report.series:
        cols = list(report.series[0])
        w.writerow(cols)
        for row in report.series:
            w.writerow(["" if row[c] is None else repr(row[c]) for c in cols])
        return buf.getvalue()
    w.writerow(list(report.axes) + list(CELL_COLUMNS))
    for c in report.cells:
        w.writerow([c[a] for a in report.axes] + [repr(c[k]) for k in CELL_COLUMNS])
    return buf.getvalue()


def parse_curves_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(_io.StringIO(text)))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            if v == "":
                parsed[k] = None
                continue
            try:
                parsed[k] = int(v)
            except ValueError:
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = {"True": True, "False": False}.get(v, v)
        out.append(parsed)
    return out


def write_report(report: ExperimentReport, out_dir) -> dict:
    """Write ``report.json``, ``grid.csv``, ``curves.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    d = report.to_dict()
    manifest = d.pop("manifest")
    (out / "report.json").write_text(json.dumps(json_safe(d), indent=2, allow_nan=False))
    (out / "manifest.json").write_text(json.dumps(json_safe(manifest), indent=2, allow_nan=False))
    (out / "curves.csv").write_text(curves_csv(report))
    paths.update(report=out / "report.json", manifest=out / "manifest.json", curves=out / "curves.csv")
    grid = grid_csv(report)
    if grid:
        (out / "grid.csv").write_text(grid)
        paths["grid"] = out / "grid.csv"
    return paths
