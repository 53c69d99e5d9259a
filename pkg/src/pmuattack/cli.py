"""Command-line entry points.

``pmuattack`` groups every command; ``attacksim``, ``theory``, ``expgrid`` and
``detect`` are shortcuts to the matching subcommand.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .attacksim import ScenarioConfig, generate_scenario, load_scenario, save_scenario
from .detect import EPS1_NOISELESS, EPS1_NOISY, EPS2, DetectionOutcome, column_basis, extract_support, score
from .errors import PMUAttackError
from .experiments import ExperimentPlan, run_plan, write_report
from .gridmodel import load_topology, build_transform
from .solver import DEFAULT_LAMBDA, DecompositionResult, Mode, ProblemSpec, solve
from .theory import build_certificate, certificate_summary, compute_incoherence, lambda_range, IncoherenceStats, SigmaEstimate

log = logging.getLogger("pmuattack")


def _dump(obj, path) -> None:
    text = json.dumps(io.json_safe(obj), indent=2, allow_nan=False)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _ks(text: str) -> list[int]:
    """``"3"``, ``"1..4"`` or ``"1,2,5"``."""
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


# -- attacksim -------------------------------------------------------------------


def cmd_gen(args) -> int:
    W = None
    n = args.n
    if args.topology:
        W = build_transform(load_topology(args.topology)).W
        if W.shape[0] != args.p:
            raise SystemExit(f"topology has {W.shape[0]} channels but --p is {args.p}")
        n = W.shape[1]
    cfg = ScenarioConfig(
        t=args.t, p=args.p, n=n, r=args.r, support_size=args.support, sigma=args.sigma,
        keep=args.keep, density=args.density, magnitude=args.magnitude, w_kind=args.w_kind,
        row_ones=args.row_ones, normalize_w=not args.raw_w, seed=args.seed,
    )
    sc = generate_scenario(cfg, W=W)
    path = save_scenario(sc, args.out, materialize=not args.no_materialize or W is not None)
    print(path)
    return 0


# -- solve / detect ---------------------------------------------------------------


def cmd_solve(args) -> int:
    sc = load_scenario(args.scenario)
    data = sc.observed()
    mode = Mode(args.mode) if args.mode else (Mode.BASIC if args.lambda2 is None else Mode.COMBINED)
    combined_lam1, combined_lam2 = DEFAULT_LAMBDA["combined"]
    if mode is Mode.COMBINED:
        lam1 = combined_lam1 if args.lam is None else args.lam
        lam2 = combined_lam2 if args.lambda2 is None else args.lambda2
    else:
        lam1 = DEFAULT_LAMBDA["noiseless"] if args.lam is None else args.lam
        lam2 = math.inf
    eta = data.eta if args.eta == "auto" else float(args.eta)
    spec = ProblemSpec(
        M=data.M, W=data.W, lam1=lam1, Omega=data.Omega, eta=eta,
        mode=mode, lam2=lam2, max_iters=args.max_iters,
    )
    res = solve(spec)
    out = Path(args.out)
    folder = out.with_suffix("") if out.suffix else out
    folder.mkdir(parents=True, exist_ok=True)
    for name in ("L_star", "C_star", "S_star"):
        io.write_complex_csv(folder / f"{name}.csv", getattr(res, name))
    summary = {
        "mode": mode.value,
        "lambda1": lam1,
        "lambda2": None if math.isinf(lam2) else lam2,
        "eta": eta,
        "iterations": res.iterations,
        "converged": res.converged,
        "constraint_violation": res.constraint_violation,
        "objective": res.objective,
        "primal_history": res.primal_history,
        "dual_history": res.dual_history,
        "files": {name: str((folder / f"{name}.csv").resolve()) for name in ("L_star", "C_star", "S_star")},
    }
    _dump(summary, out if out.suffix else out / "result.json")
    return 0 if res.converged else 3


def _load_result(path) -> DecompositionResult:
    meta = json.loads(Path(path).read_text())
    mats = {k: io.read_matrix(v) for k, v in meta["files"].items()}
    return DecompositionResult(
        L_star=mats["L_star"], C_star=mats["C_star"], S_star=mats["S_star"],
        iterations=meta["iterations"], converged=meta["converged"],
        constraint_violation=meta["constraint_violation"], objective=meta["objective"],
    )


def cmd_detect(args) -> int:
    sc = load_scenario(args.scenario)
    res = _load_result(args.result)
    eps1 = args.eps1 if args.eps1 is not None else (EPS1_NOISELESS if sc.eta == 0 else EPS1_NOISY)
    I, J = extract_support(res.C_star, sc.W, eps1)
    rank = sc.rank if args.rank is None else args.rank
    U = column_basis(res.L_star, rank)
    keep = [k for k in range(sc.shape[1]) if k not in J]
    outcome = DetectionOutcome(I_star=I, J_star=J, U_star=U, clean_channels=res.L_star[:, keep])
    rec = score(outcome, sc, args.eps2, L_star=res.L_star)
    payload = outcome.to_dict() | {
        "eps1": eps1,
        "eps2": args.eps2,
        "I_bar": sorted(sc.I_bar),
        "J_bar": sorted(sc.J_bar),
        "score": rec.to_dict(),
    }
    payload["subspace_gap"] = rec.subspace_gap
    _dump(payload, args.out)
    return 0


# -- theory -----------------------------------------------------------------------


def _stats_from_dict(d: dict) -> IncoherenceStats:
    sig = {
        int(k): SigmaEstimate(int(k), _num(v["value"]), _num(v["lower"]), _num(v["upper"]), bool(v["exact"]))
        for k, v in d["sigma"].items()
    }
    return IncoherenceStats(d["epsilon"], d["mu"], d["rho"], d["r"], d["p"], d["n"], sig)


def _num(v) -> float:
    return math.inf if v is None else float(v)


def cmd_stats(args) -> int:
    L = io.read_matrix(args.L)
    W = io.read_matrix(args.W)
    stats = compute_incoherence(L, W, _ks(args.k), rank_tol=args.rank_tol)
    _dump(stats.to_dict(), args.out)
    return 0


def cmd_lambda_range(args) -> int:
    if args.stats:
        stats = _stats_from_dict(json.loads(Path(args.stats).read_text()))
        if args.k not in stats.sigma:
            raise SystemExit(f"stats file has no sigma for k={args.k}")
    elif args.L and args.W:
        stats = compute_incoherence(io.read_matrix(args.L), io.read_matrix(args.W), [args.k])
    else:
        raise SystemExit("lambda-range needs --stats or both --L and --W")
    lr = lambda_range(stats, args.psi, args.c, args.k, noisy=args.noisy)
    _dump({"stats": stats.to_dict(), "lambda_range": lr.to_dict()}, args.out)
    return 0


def cmd_certify(args) -> int:
    sc = load_scenario(args.scenario)
    rep = build_certificate(sc.L_bar, sc.C_bar, sc.W, args.lam, at=args.at)
    _dump(certificate_summary(rep, noisy=args.noisy), args.out)
    return 0


# -- expgrid ----------------------------------------------------------------------


def cmd_expgrid(args) -> int:
    plan = ExperimentPlan.load(args.plan)
    if args.trials is not None:
        plan = plan.replace(trials=args.trials)

    def progress(done, total):
        if args.progress and (done == total or done % max(1, total // 20) == 0):
            print(f"{done}/{total} trials", file=sys.stderr, flush=True)

    report = run_plan(plan, jobs=args.jobs, progress=progress)
    for name, path in write_report(report, args.out).items():
        print(f"{name}: {path}")
    return 0 if not report.cells or report.complete else 4


# -- parser -----------------------------------------------------------------------


def _add_gen(sp):
    p = sp.add_parser("gen", help="generate a synthetic attack scenario")
    p.add_argument("--t", type=int, default=50)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--r", type=int, default=3)
    p.add_argument("--support", type=int, default=2, help="number of attacked buses")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--keep", type=float, default=1.0)
    p.add_argument("--density", type=float, default=0.0, help="fraction of scattered corrupted entries")
    p.add_argument("--magnitude", type=float, default=1.0)
    p.add_argument("--w-kind", choices=["gaussian", "binary", "identity"], default="gaussian")
    p.add_argument("--row-ones", type=int, default=2)
    p.add_argument("--raw-w", action="store_true", help="keep the transform's raw column scaling")
    p.add_argument("--topology", help="JSON topology; overrides --n and --w-kind")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-materialize", action="store_true", help="write only the replayable manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)


def _add_solve(sp):
    p = sp.add_parser("solve", help="run the convex decomposition on a scenario")
    p.add_argument("--scenario", "--input", dest="scenario", required=True)
    p.add_argument("--lambda", "--lambda1", dest="lam", type=float, default=None,
                   help="weight of the column-sparse term")
    p.add_argument("--lambda2", type=float, default=None, help="weight of the scattered term (combined mode)")
    p.add_argument("--mode", choices=["basic", "combined"], default=None,
                   help="default: combined when --lambda2 is given")
    p.add_argument("--eta", default="auto", help="noise budget; 'auto' uses the scenario's value")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--out", required=True, help="result JSON path; matrices go next to it")
    p.set_defaults(func=cmd_solve)


def _add_detect(sp):
    p = sp.add_parser("detect", help="extract and score the attack support")
    _detect_args(p)


def _detect_args(p):
    p.add_argument("--scenario", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--eps1", type=float, default=None)
    p.add_argument("--eps2", type=float, default=EPS2)
    p.add_argument("--rank", type=int, default=None, help="rank of the recovered subspace (default: true rank)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_detect)


def _add_theory(sp):
    p = sp.add_parser("theory", help="incoherence parameters, lambda ranges and certificates")
    tp = p.add_subparsers(dest="theory_cmd", required=True)
    s = tp.add_parser("stats")
    s.add_argument("--L", required=True)
    s.add_argument("--W", required=True)
    s.add_argument("--k", default="1")
    s.add_argument("--rank-tol", type=float, default=1e-9)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_stats)
    lr = tp.add_parser("lambda-range")
    lr.add_argument("--psi", type=float, default=0.125)
    lr.add_argument("--c", type=float, default=0.25)
    lr.add_argument("--k", type=int, default=1)
    lr.add_argument("--stats", help="JSON written by 'theory stats'")
    lr.add_argument("--L")
    lr.add_argument("--W")
    lr.add_argument("--noisy", action="store_true")
    lr.add_argument("--out", default="-")
    lr.set_defaults(func=cmd_lambda_range)
    c = tp.add_parser("certify")
    c.add_argument("--scenario", required=True)
    c.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA["noiseless"])
    c.add_argument("--noisy", action="store_true")
    c.add_argument("--at", choices=["oracle", "ground_truth"], default="oracle")
    c.add_argument("--out", default="-")
    c.set_defaults(func=cmd_certify)


def _add_expgrid(sp):
    p = sp.add_parser("expgrid", help="batch experiments")
    ep = p.add_subparsers(dest="exp_cmd", required=True)
    r = ep.add_parser("run")
    r.add_argument("plan")
    r.add_argument("--out", required=True)
    r.add_argument("--trials", type=int, default=None)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--progress", action="store_true")
    r.set_defaults(func=cmd_expgrid)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmuattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sp = parser.add_subparsers(dest="command", required=True)
    a = sp.add_parser("attacksim", help="scenario generation")
    _add_gen(a.add_subparsers(dest="attacksim_cmd", required=True))
    _add_solve(sp)
    _add_detect(sp)
    _add_theory(sp)
    _add_expgrid(sp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(args.func(args) or 0)
    except PMUAttackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _shortcut(command: str):
    def entry(argv=None) -> int:
        argv = sys.argv[1:] if argv is None else list(argv)
        return main([command, *argv])

    return entry


attacksim_main = _shortcut("attacksim")
theory_main = _shortcut("theory")
expgrid_main = _shortcut("expgrid")
detect_main = _shortcut("detect")


if __name__ == "__main__":
    sys.exit(main())
