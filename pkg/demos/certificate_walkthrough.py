"""
Checking a recovery guarantee numerically
=========================================

For a small instance we compute the incoherence scalars, the admissible
range of the regularisation weight, and then build the dual certificate
at the optimum of the pinned problem. When all four conditions hold with
slack, the convex program must return the true attacked channels, and
the solver confirms it.
"""
import numpy as np

from pmuattack.attacksim import gen_synthetic_lowrank, inject_unobservable
from pmuattack.detect import extract_support
from pmuattack.gridmodel import binary_regular_transform
from pmuattack.solver import ProblemSpec, solve
from pmuattack.theory import build_certificate, compute_incoherence, lambda_range, verify_conditions

rng = np.random.default_rng(0)
W = binary_regular_transform(12, 6, 1, rng).W        # each bus owns two channels
L_bar = gen_synthetic_lowrank(12, 12, 1, rng)
sc = inject_unobservable(L_bar, W, [2], seed=0)

stats = compute_incoherence(sc.L_bar, W, ks=(1, 2))
print(f"epsilon={stats.epsilon:.3f}  mu={stats.mu:.3f}  rho={stats.rho:.2f}  sigma_1={stats.sigma_k(1):.3f}")

lr = lambda_range(stats, psi_tilde=0.125, c=0.25, k_tilde=1)
print(f"sufficient range [{lr.lambda_min:.3f}, {lr.lambda_max:.3f}], feasible={lr.feasible}")

# the closed-form range is only sufficient and is empty at this size; the
# certificate itself is the sharper test, so probe a few weights directly

for lam in (0.3, 0.6, 1.2):
    rep = build_certificate(sc.L_bar, sc.C_bar, W, lam)
    v = verify_conditions(rep)
    res = solve(ProblemSpec(M=sc.M_full, W=W, lam1=lam, tol_abs=1e-10, tol_rel=1e-9, max_iters=20000))
    _, J = extract_support(res.C_star, W, 0.002)
    print(f"lambda={lam}: certificate valid={v.valid} strict={v.strict} "
          f"(b margin {v.margin_b:+.3f}, d margin {v.margin_d:+.3f}), psi={rep.psi:.3f}; "
          f"solver channels {sorted(J)} vs true {sorted(sc.J_bar)}")
