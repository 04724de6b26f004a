"""
A posteriori error estimation
=============================

After a run the estimator produces, for every time step, a set of
computable indicators:

  eta                element residuals plus diffusive flux jumps
  energy_jump        energy norm of the increment u^n - u^{n-1}
  conv_dual          dual-norm bound for the convective increment,
                     either by solving a small auxiliary reaction-
                     diffusion problem or by a direct parameter bound
  temporal_linear    sqrt(tau) (energy_jump + conv_dual)
  temporal_nonlinear increment term from the source non-linearity
  data_residual      consistency error of the time-discretized data

The estimator combines them into a guaranteed-form bound on the
space-time error.  For a manufactured solution we can also compute the
true error and report the effectivity (estimate / error).
"""

from convdiff.estimator import estimate_trajectory
from convdiff.mesh import generate_structured
from convdiff.stepper import TimePartition, run
from convdiff.verification import manufactured_case, true_errors, effectivity

case = manufactured_case("nonlinear", T=0.5)
mesh = generate_structured((0.0, 0.0, 1.0, 1.0), 12)
traj = run(case.problem, mesh, TimePartition.uniform(0.5, 10))

report = estimate_trajectory(traj)

print("n    eta       jump      conv_dual (branch)   temporal  data")
for s in report.steps:
    print("%2d  %.2e  %.2e  %.2e (%-8s)  %.2e  %.2e"
          % (s.n, s.eta, s.energy_jump, s.conv_dual, s.conv_branch,
             s.temporal_linear, s.data_residual))

print()
print("totals:")
for key in ("initial_sq", "primary_sum", "data_sum", "radicand",
            "estimate"):
    print("  %-12s %.6e" % (key, report.totals[key]))
print("regime:", report.regime)

# Against the truth.
errors = true_errors(traj, case)
print()
print("true errors: sup-L2 %.3e  energy %.3e  dual %.3e  X %.3e"
      % (errors.sup_l2, errors.energy, errors.dual, errors.x_norm))
eff = effectivity(report, errors)
print("effectivity: %.2f" % eff)
assert 0.05 <= eff <= 50.0

# The per-step lower bounds never exceed the total estimate.
assert all(lb <= report.estimate * (1 + 1e-12)
           for lb in report.lower_bounds)
