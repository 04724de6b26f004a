"""
Solving a linear heat problem
=============================

The simplest use of the solver: a pure diffusion problem with a known
closed-form solution, discretized with piecewise linear elements in
space and the implicit Euler scheme in time.  We solve on a fixed
uniform mesh and compare the discrete solution against the exact one
at the final time.
"""

import math

import numpy as np

from convdiff.fem import FeSpace, interpolate, mass_matrix
from convdiff.mesh import generate_structured
from convdiff.stepper import TimePartition, run
from convdiff.verification import manufactured_case

# The "heat" case is u(x, y, t) = exp(-t) sin(pi x) sin(pi y) on the
# unit square, with the matching right-hand side built in.
case = manufactured_case("heat", T=0.5)
problem = case.problem

mesh = generate_structured((0.0, 0.0, 1.0, 1.0), 16)
times = TimePartition.uniform(problem.T, 20)

traj = run(problem, mesh, times)

# Norm of the solution at each time node.
print("step   t       ||u_h||_L2   picard  residual")
for n, t in enumerate(traj.times.nodes):
    sp = traj.spaces[n]
    u = traj.states[n].values
    M = mass_matrix(sp)
    l2 = math.sqrt(u @ (M @ u))
    if n == 0:
        print("%4d  %5.3f  %10.6f" % (n, t, l2))
    else:
        d = traj.diagnostics[n - 1]
        print("%4d  %5.3f  %10.6f  %5d   %.2e"
              % (n, t, l2, d.picard_iterations, d.residual))

# Error at the final time, measured against the nodal interpolant of
# the exact solution.
sp = traj.spaces[-1]
exact = interpolate(sp, lambda x, y: case.exact(x, y, problem.T))
diff = traj.states[-1].values - exact.values
M = mass_matrix(sp)
err = math.sqrt(diff @ (M @ diff))
amp = math.exp(-problem.T) * 0.5   # L2 norm of the exact solution
print()
print("final-time L2 error: %.3e  (relative %.2e)" % (err, err / amp))
assert err / amp < 0.02
