"""
Verification by manufactured solutions
======================================

Convergence study for the heat case: mesh width halves per level and
the time step scales so the temporal error keeps pace (tau ~ h^2 for
implicit Euler, tau ~ h for the midpoint rule).  First order in the
energy norm is expected, and the estimator's effectivity should settle
down as the meshes resolve the solution.
"""

import numpy as np

from convdiff.verification import manufactured_case, convergence_study

case = manufactured_case("heat", T=0.2)

for theta, tau_power, label in ((1.0, 2, "implicit Euler"),
                                (0.5, 1, "midpoint rule")):
    rows = convergence_study(case, levels=4, n0=4, theta=theta,
                             tau0=0.04, tau_power=tau_power)
    print(label)
    print("  h_max     tau       err_energy  rate   err_X     estimator  eff")
    for r in rows:
        rate = "  -  " if np.isnan(r["rate_energy"]) else \
            "%5.2f" % r["rate_energy"]
        print("  %.2e  %.2e  %.3e  %s  %.2e  %.2e  %5.2f"
              % (r["h_max"], r["tau"], r["err_energy"], rate,
                 r["err_X"], r["estimator"], r["effectivity"]))
    slope = np.polyfit(np.log([r["h_max"] for r in rows]),
                       np.log([r["err_energy"] for r in rows]), 1)[0]
    print("  least-squares energy rate: %.3f" % slope)
    print()
    assert 0.9 <= slope <= 1.1
