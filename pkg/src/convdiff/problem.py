"""Problem data for the non-stationary convection-diffusion equation

    du/dt - eps * Laplace(u) + a . grad u + b u = nu * phi(u) * g  (+ source)

on a polygonal domain with homogeneous Dirichlet boundary conditions.

Standing assumptions, checked by `validate_assumptions` on sampled data:
  * eps > 0, nu >= 0;
  * -1/2 div a + b >= beta >= 0 pointwise;
  * ||b||_inf <= c_b * beta (so beta = 0 forces b = 0);
  * phi Lipschitz with constant lipschitz_L.

Time-dependent fields are callables f(x, y, t) with numpy-array x, y and a
scalar t; `None` means identically zero.  The optional `source` field is an
extra known right-hand side used by manufactured-solution studies where
nu = 0 would otherwise leave no forcing slot; it defaults to zero.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fem import FeSpace
from .mesh import domain_diameter

__all__ = [
    "ProblemData", "ThetaParams", "DerivedConstants", "ValidationReport",
    "phi_by_name", "PHI_NAMES", "validate_assumptions", "derived_constants",
    "blend_field", "friedrichs_bound",
]


def _phi_one_plus_abs(s):
    return 1.0 + np.abs(s)


def _phi_sqrt_one_plus_sq(s):
    return np.sqrt(1.0 + s * s)


PHI_NAMES = {
    "one_plus_abs": (_phi_one_plus_abs, 1.0),
    "sqrt_one_plus_sq": (_phi_sqrt_one_plus_sq, 1.0),
}


def phi_by_name(name):
    """Return (callable, Lipschitz constant) for a named non-linearity."""
    if name not in PHI_NAMES:
        raise ValueError("unknown phi %r; choose from %s"
                         % (name, sorted(PHI_NAMES)))
    return PHI_NAMES[name]


@dataclass
class ProblemData:
    epsilon: float
    nu: float
    T: float
    beta: float = 0.0
    c_b: float = 1.0
    lipschitz_L: float = 1.0
    phi: Callable = _phi_one_plus_abs
    phi_name: str = "one_plus_abs"
    a1: Optional[Callable] = None
    a2: Optional[Callable] = None
    b: Optional[Callable] = None
    g: Optional[Callable] = None
    u0: Optional[Callable] = None
    source: Optional[Callable] = None
    div_a: Optional[Callable] = None   # analytic divergence of a, if known


@dataclass
class ThetaParams:
    """Implicitness weights: theta for the linear terms, vartheta for the
    source non-linearity."""
    theta: float = 1.0
    vartheta: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.theta <= 1.0 and 0.0 <= self.vartheta <= 1.0):
            raise ValueError("theta and vartheta must lie in [0, 1]")


@dataclass
class DerivedConstants:
    """Parameter-explicit constants entering the estimator.

    lam bounds ||v||_L2 <= lam ||v||_E; gamma is the sup of |g|; the
    smallness parameters control which bound regime applies:
        kappa       = 2 nu L min{T, lam^2} gamma
        kappa_tilde = 25 (2 + c_b) nu L lam^2 gamma
    """
    lam: float
    gamma: float
    kappa: float
    kappa_tilde: float
    c_f: float
    gamma_of_t: Callable = field(default=None, repr=False)

    @property
    def kappa_small(self):
        return self.kappa < 1.0

    @property
    def kappa_tilde_small(self):
        return self.kappa_tilde < 1.0


@dataclass
class AssumptionCheck:
    assumption: str
    passed: bool
    worst_value: float
    witness: Optional[tuple] = None

    def as_dict(self):
        d = {"assumption": self.assumption, "passed": bool(self.passed),
             "worst_value": float(self.worst_value)}
        if self.witness is not None:
            d["witness_x"], d["witness_y"], d["witness_t"] = \
                (float(v) for v in self.witness)
        return d


class ValidationReport:
    def __init__(self, checks, fd_divergence_used):
        self.checks = checks
        self.fd_divergence_used = fd_divergence_used

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def as_dict(self):
        return {"passed": self.passed,
                "fd_divergence_used": bool(self.fd_divergence_used),
                "checks": [c.as_dict() for c in self.checks]}


def _eval_or_zero(f, x, y, t):
    if f is None:
        return np.zeros_like(x)
    return np.broadcast_to(np.asarray(f(x, y, t), dtype=float), x.shape)


def _divergence_of_a(problem, x, y, t):
    if problem.div_a is not None:
        return _eval_or_zero(problem.div_a, x, y, t), False
    if problem.a1 is None and problem.a2 is None:
        return np.zeros_like(x), False
    h = 1e-6  # central differences on the convection field
    d = (_eval_or_zero(problem.a1, x + h, y, t)
         - _eval_or_zero(problem.a1, x - h, y, t)
         + _eval_or_zero(problem.a2, x, y + h, t)
         - _eval_or_zero(problem.a2, x, y - h, t)) / (2 * h)
    return d, True


TOL = 1e-10


def validate_assumptions(problem, mesh, times):
    """Check the standing assumptions on quadrature points at every time
    node; returns a ValidationReport with witnesses for failures."""
    checks = []
    checks.append(AssumptionCheck("epsilon_positive", problem.epsilon > 0.0,
                                  problem.epsilon))
    checks.append(AssumptionCheck("nu_nonnegative", problem.nu >= 0.0,
                                  problem.nu))
    checks.append(AssumptionCheck("beta_nonnegative", problem.beta >= 0.0,
                                  problem.beta))

    space = FeSpace(mesh, 1)
    qp = space.geometry()["qpoints"].reshape(-1, 2)
    X, Y = qp[:, 0], qp[:, 1]
    worst_rc, worst_rc_w = np.inf, None
    worst_b, worst_b_w = -np.inf, None
    fd_used = False
    for t in np.asarray(times.nodes if hasattr(times, "nodes") else times):
        div_a, fd = _divergence_of_a(problem, X, Y, float(t))
        fd_used = fd_used or fd
        bv = _eval_or_zero(problem.b, X, Y, float(t))
        rc = -0.5 * div_a + bv
        k = int(np.argmin(rc))
        if rc[k] < worst_rc:
            worst_rc, worst_rc_w = rc[k], (X[k], Y[k], t)
        k = int(np.argmax(np.abs(bv)))
        if abs(bv[k]) > worst_b:
            worst_b, worst_b_w = abs(bv[k]), (X[k], Y[k], t)
    checks.append(AssumptionCheck(
        "reaction_convection_bound", worst_rc >= problem.beta - TOL,
        worst_rc, worst_rc_w))
    checks.append(AssumptionCheck(
        "b_sup_bound", worst_b <= problem.c_b * problem.beta + TOL,
        worst_b, worst_b_w))

    s = np.linspace(-10.0, 10.0, 401)
    ps = problem.phi(s)
    num = np.abs(ps[:, None] - ps[None, :])
    den = np.abs(s[:, None] - s[None, :])
    ratio = float((num[den > 0] / den[den > 0]).max())
    checks.append(AssumptionCheck(
        "phi_lipschitz", ratio <= problem.lipschitz_L * (1.0 + 1e-12),
        ratio))
    return ValidationReport(checks, fd_used)


def _sample_times(times, per_step):
    nodes = np.asarray(times.nodes if hasattr(times, "nodes") else times)
    out = []
    for n in range(len(nodes) - 1):
        s = np.linspace(0.0, 1.0, per_step, endpoint=False) + 0.5 / per_step
        out.append(nodes[n] + s * (nodes[n + 1] - nodes[n]))
    return np.concatenate(out) if out else nodes


def derived_constants(problem, c_f, mesh=None, times=None, gamma=None,
                      samples_per_step=10):
    """Compute lam, gamma and the smallness parameters.

    gamma is the max of |g| over mesh quadrature points at uniformly
    sampled times (samples_per_step per step); pass `gamma` to override
    (e.g. for a known sup).  lam = min{c_f / sqrt(eps), 1/sqrt(beta)},
    with the beta branch dropped for beta = 0.
    """
    eps, beta = problem.epsilon, problem.beta
    if eps <= 0.0:
        raise ValueError("epsilon must be positive")
    lam = c_f / np.sqrt(eps)
    if beta > 0.0:
        lam = min(lam, 1.0 / np.sqrt(beta))
    gamma_of_t = None
    if gamma is None:
        if problem.g is None:
            gamma = 0.0
        else:
            if mesh is None or times is None:
                raise ValueError("need mesh and times to sample gamma "
                                 "(or pass gamma explicitly)")
            space = FeSpace(mesh, 1)
            qp = space.geometry()["qpoints"].reshape(-1, 2)
            X, Y = qp[:, 0], qp[:, 1]

            def gamma_of_t(t, _X=X, _Y=Y, _g=problem.g):
                return float(np.max(np.abs(_g(_X, _Y, float(t)))))

            ts = _sample_times(times, samples_per_step)
            nodes = np.asarray(times.nodes if hasattr(times, "nodes")
                               else times)
            gamma = max(gamma_of_t(t) for t in np.concatenate([ts, nodes]))
    if gamma_of_t is None:
        gamma_of_t = lambda t, _g=float(gamma): _g  # noqa: E731
    nuL = problem.nu * problem.lipschitz_L
    kappa = 2.0 * nuL * min(problem.T, lam * lam) * gamma
    kappa_tilde = 25.0 * (2.0 + problem.c_b) * nuL * lam * lam * gamma
    return DerivedConstants(float(lam), float(gamma), float(kappa),
                            float(kappa_tilde), float(c_f), gamma_of_t)


def blend_field(f, t_prev, t_cur, weight):
    """Spatial field Theta * f(., t_cur) + (1 - Theta) * f(., t_prev);
    endpoints are evaluated exactly for weight 0 or 1."""
    if f is None:
        return None
    if weight == 1.0:
        return lambda x, y: f(x, y, t_cur)
    if weight == 0.0:
        return lambda x, y: f(x, y, t_prev)

    def blended(x, y):
        return (weight * np.asarray(f(x, y, t_cur), dtype=float)
                + (1.0 - weight) * np.asarray(f(x, y, t_prev), dtype=float))

    return blended


def friedrichs_bound(mesh):
    """Guaranteed Friedrichs constant: ||v||_L2 <= diam(Omega) ||grad v||
    for v vanishing on the boundary."""
    return domain_diameter(mesh)
