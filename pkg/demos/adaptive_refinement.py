"""
Adaptive mesh refinement driven by the estimator
================================================

Between time steps the solver can refine the triangles carrying the
largest share of the spatial indicator (Doerfler marking plus newest
vertex bisection) and coarsen triangles whose contribution is
negligible.  The meshes stay conforming and nested, so the transfer
between consecutive spaces is exact.
"""

from convdiff.adaptivity import AdaptPolicy
from convdiff.estimator import estimate_trajectory
from convdiff.mesh import generate_structured, mesh_metrics
from convdiff.stepper import TimePartition, run
from convdiff.verification import manufactured_case, true_errors

case = manufactured_case("nonlinear", T=0.25)
mesh0 = generate_structured((0.0, 0.0, 1.0, 1.0), 8)
times = TimePartition.uniform(0.25, 8)

adaptive = run(case.problem, mesh0, times,
               policy=AdaptPolicy(refine_fraction=0.4,
                                  coarsen_fraction=0.05))

print("step   triangles   h_min      h_max     same mesh as before?")
for n, sp in enumerate(adaptive.spaces):
    m = mesh_metrics(sp.mesh)
    tag = "" if n == 0 else ("yes" if adaptive.diagnostics[n - 1].same_mesh
                             else "no")
    print("%4d   %9d   %.2e   %.2e   %s"
          % (n, sp.mesh.n_triangles, m.h_min, m.h_max, tag))

# Compare against a uniform run with a comparable number of unknowns.
uniform = run(case.problem, generate_structured((0.0, 0.0, 1.0, 1.0), 14),
              times)
err_a = true_errors(adaptive, case).x_norm
err_u = true_errors(uniform, case).x_norm
dofs_a = max(sp.n_dofs for sp in adaptive.spaces)
dofs_u = uniform.spaces[0].n_dofs
print()
print("adaptive:  max %5d dofs, X-error %.4e" % (dofs_a, err_a))
print("uniform:   %9d dofs, X-error %.4e" % (dofs_u, err_u))

est = estimate_trajectory(adaptive)
print("estimate on the adaptive run: %.4e" % est.estimate)
