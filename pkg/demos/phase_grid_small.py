"""
A miniature phase-transition grid
=================================

Success rate of attack identification as the rank of the clean data and
the number of attacked buses grow. The full-size grid (t=p=50, n=25,
ranks 1..8, supports 0..6) is available through ``pmuattack expgrid``;
this version runs in well under a minute.
"""
from pmuattack.experiments import ExperimentPlan, grid_csv, run_plan

plan = ExperimentPlan(t=30, p=30, n=15, ranks=(1, 2, 3, 4), supports=(0, 1, 2, 3), trials=5)
report = run_plan(plan, progress=lambda done, total: None)
print(grid_csv(report))
print("mean iterations per cell:", {(c["r"], c["k"]): round(c["mean_iterations"]) for c in report.cells})
