"""Run configuration: an INI-style file with a fixed key schema.

Sections and keys (defaults in parentheses; * marks mandatory):

    [problem]        epsilon*, nu (0), L (1), beta (0), c_b (1), T*,
                     phi (one_plus_abs), and coefficient expressions
                     g, a1, a2, b, u0, f
    [mesh]           n (8), refine (0), degree (1)
    [time]           steps (10) or tau, theta (1), vartheta (0)
    [stabilization]  method (none), c_s (0.5)
    [adapt]          enabled (false), refine_fraction (0.5),
                     coarsen_fraction (0.05), adapt_time (false),
                     tau_min (1e-8), tau_max (inf)
    [solver]         linear (lu), tol (1e-12), picard_max (50),
                     picard_tol (1e-11), friedrichs (diameter)
    [output]         prefix (run), vtk (true), fields (true)
    [verify]         case*, levels (3), n0 (4), tau0 (0.1),
                     tau_power (2), epsilon, extra_refine (2)

Coefficient expressions use the grammar of `expressions`; u0 may not
reference t.  Unknown sections or keys are rejected by name.  The
divergence of the convection field is formed symbolically when both
partial derivatives exist analytically, otherwise left to the central
finite-difference fallback and flagged in the validation report.
"""

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from typing import List, Optional

from .adaptivity import AdaptPolicy
from .expressions import Expression, ExpressionError, parse_expression
from .problem import ProblemData, ThetaParams, phi_by_name
from .stabilization import StabilizationSpec

__all__ = ["ConfigError", "RunConfig", "parse_config", "config_hash"]

_PHI_CHOICES = ("one_plus_abs", "sqrt_one_plus_sq")
_SCHEMA = {
    "problem": ("epsilon", "nu", "L", "beta", "c_b", "T", "phi",
                "g", "a1", "a2", "b", "u0", "f"),
    "mesh": ("n", "refine", "degree"),
    "time": ("steps", "tau", "theta", "vartheta"),
    "stabilization": ("method", "c_s"),
    "adapt": ("enabled", "refine_fraction", "coarsen_fraction",
              "adapt_time", "tau_min", "tau_max"),
    "solver": ("linear", "tol", "picard_max", "picard_tol", "friedrichs"),
    "output": ("prefix", "vtk", "fields"),
    "verify": ("case", "levels", "n0", "tau0", "tau_power", "epsilon",
               "extra_refine"),
}


class ConfigError(ValueError):
    """Configuration file defect: syntax, unknown key, bad value."""


@dataclass
class OutputOptions:
    prefix: str = "run"
    vtk: bool = True
    fields: bool = True


@dataclass
class VerifyOptions:
    case: str
    levels: int = 3
    n0: int = 4
    tau0: float = 0.1
    tau_power: int = 2
    epsilon: Optional[float] = None
    extra_refine: int = 2


@dataclass
class RunConfig:
    problem: ProblemData
    params: ThetaParams
    stab: StabilizationSpec
    policy: Optional[AdaptPolicy]
    mesh_n: int
    mesh_refine: int
    degree: int
    n_steps: Optional[int]
    tau: Optional[float]
    solver_kind: str
    solver_tol: float
    picard_max: int
    picard_tol: float
    friedrichs: str
    output: OutputOptions
    verify: Optional[VerifyOptions]
    text: str
    path: str = ""
    fd_derivative_fields: List[str] = field(default_factory=list)

    @property
    def hash(self):
        return config_hash(self.text)

    def time_nodes(self, T=None):
        """Uniform partition from steps / tau; tau wins if both absent
        the steps default applies."""
        import numpy as np
        T = self.problem.T if T is None else T
        if self.tau is not None:
            n = max(1, int(round(T / self.tau)))
        else:
            n = self.n_steps
        return np.linspace(0.0, T, n + 1)


def config_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _reject_unknown(cp):
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError("unknown section [%s]" % sec)
        for key in cp[sec]:
            if key not in _SCHEMA[sec]:
                raise ConfigError(
                    "unknown key %r in section [%s]" % (key, sec))


def _get(cp, sec, key, conv, default):
    if not cp.has_option(sec, key):
        return default
    raw = cp.get(sec, key).strip()
    try:
        return conv(raw)
    except (ValueError, ExpressionError) as exc:
        raise ConfigError("bad value for %s.%s: %s" % (sec, key, exc))


def _float(raw):
    v = float(raw)
    if math.isnan(v):
        raise ValueError("nan not allowed")
    return v


def _int(raw):
    return int(raw, 10)


_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _bool(raw):
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError("expected a boolean, got %r" % raw)


def _choice(options):
    def conv(raw):
        if raw not in options:
            raise ValueError("expected one of %s, got %r"
                             % (", ".join(options), raw))
        return raw
    return conv


def _require(cp, sec, key, conv):
    if not cp.has_option(sec, key):
        raise ConfigError("missing mandatory key %s.%s" % (sec, key))
    return _get(cp, sec, key, conv, None)


def _expr(cp, sec, key):
    return _get(cp, sec, key, parse_expression, None)


def _time_field(expr):
    """Adapt an Expression to the (x, y, t) callable slots of
    ProblemData."""
    if expr is None:
        return None
    return lambda X, Y, T_: expr(X, Y, T_)


def parse_config(path):
    """Parse and cross-check a configuration file into a RunConfig.

    Raises ConfigError for syntax errors (with line numbers, from the
    INI reader), unknown sections or keys, missing mandatory keys, and
    value defects.
    """
    with open(path, "r") as fh:
        text = fh.read()
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str        # keys are case sensitive (T vs t)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError("syntax error: %s" % exc)
    _reject_unknown(cp)
    if not cp.has_section("problem"):
        raise ConfigError("missing mandatory section [problem]")

    epsilon = _require(cp, "problem", "epsilon", _float)
    T = _require(cp, "problem", "T", _float)
    if epsilon <= 0.0:
        raise ConfigError("problem.epsilon must be positive")
    if T <= 0.0:
        raise ConfigError("problem.T must be positive")
    phi_name = _get(cp, "problem", "phi", _choice(_PHI_CHOICES),
                    "one_plus_abs")
    phi, lip_default = phi_by_name(phi_name)

    exprs = {k: _expr(cp, "problem", k) for k in
             ("g", "a1", "a2", "b", "u0", "f")}
    if exprs["u0"] is not None and exprs["u0"].uses_t:
        raise ConfigError("problem.u0 may not depend on t")

    # analytic divergence of the convection field when available
    fd_fields = []
    div_a = None
    if exprs["a1"] is not None or exprs["a2"] is not None:
        parts = []
        ok = True
        for key, var in (("a1", "x"), ("a2", "y")):
            e = exprs[key]
            if e is None:
                continue
            d = e.derivative(var)
            if d is None:
                ok = False
                fd_fields.append(key)
            else:
                parts.append(d)
        if ok:
            if len(parts) == 2:
                p0, p1 = parts
                div_a = lambda X, Y, T_: p0(X, Y, T_) + p1(X, Y, T_)
            elif parts:
                div_a = _time_field(parts[0])
            else:
                div_a = lambda X, Y, T_: 0.0 * X

    u0e = exprs["u0"]
    problem = ProblemData(
        epsilon=epsilon,
        nu=_get(cp, "problem", "nu", _float, 0.0),
        T=T,
        beta=_get(cp, "problem", "beta", _float, 0.0),
        c_b=_get(cp, "problem", "c_b", _float, 1.0),
        lipschitz_L=_get(cp, "problem", "L", _float, lip_default),
        phi=phi, phi_name=phi_name,
        a1=_time_field(exprs["a1"]), a2=_time_field(exprs["a2"]),
        b=_time_field(exprs["b"]), g=_time_field(exprs["g"]),
        u0=(None if u0e is None else (lambda X, Y: u0e(X, Y))),
        source=_time_field(exprs["f"]),
        div_a=div_a)

    try:
        params = ThetaParams(_get(cp, "time", "theta", _float, 1.0),
                             _get(cp, "time", "vartheta", _float, 0.0))
    except ValueError as exc:
        raise ConfigError(str(exc))
    n_steps = _get(cp, "time", "steps", _int, None)
    tau = _get(cp, "time", "tau", _float, None)
    if n_steps is not None and tau is not None:
        raise ConfigError("give time.steps or time.tau, not both")
    if n_steps is None and tau is None:
        n_steps = 10
    if n_steps is not None and n_steps < 1:
        raise ConfigError("time.steps must be at least 1")
    if tau is not None and tau <= 0.0:
        raise ConfigError("time.tau must be positive")

    try:
        stab = StabilizationSpec(
            _get(cp, "stabilization", "method",
                 _choice(("none", "sd", "cip")), "none"),
            _get(cp, "stabilization", "c_s", _float, 0.5))
        policy = None
        if _get(cp, "adapt", "enabled", _bool, False):
            policy = AdaptPolicy(
                enabled=True,
                refine_fraction=_get(cp, "adapt", "refine_fraction",
                                     _float, 0.5),
                coarsen_fraction=_get(cp, "adapt", "coarsen_fraction",
                                      _float, 0.05),
                adapt_time=_get(cp, "adapt", "adapt_time", _bool, False),
                tau_min=_get(cp, "adapt", "tau_min", _float, 1e-8),
                tau_max=_get(cp, "adapt", "tau_max", _float, math.inf))
    except ValueError as exc:
        raise ConfigError(str(exc))

    mesh_n = _get(cp, "mesh", "n", _int, 8)
    degree = _get(cp, "mesh", "degree", _int, 1)
    if mesh_n < 1:
        raise ConfigError("mesh.n must be at least 1")
    if degree not in (1, 2):
        raise ConfigError("mesh.degree must be 1 or 2")

    verify = None
    if cp.has_section("verify"):
        verify = VerifyOptions(
            case=_require(cp, "verify", "case",
                          _choice(("heat", "nonlinear"))),
            levels=_get(cp, "verify", "levels", _int, 3),
            n0=_get(cp, "verify", "n0", _int, 4),
            tau0=_get(cp, "verify", "tau0", _float, 0.1),
            tau_power=_get(cp, "verify", "tau_power", _int, 2),
            epsilon=_get(cp, "verify", "epsilon", _float, None),
            extra_refine=_get(cp, "verify", "extra_refine", _int, 2))
        if verify.levels < 1:
            raise ConfigError("verify.levels must be at least 1")

    return RunConfig(
        problem=problem, params=params, stab=stab, policy=policy,
        mesh_n=mesh_n,
        mesh_refine=_get(cp, "mesh", "refine", _int, 0),
        degree=degree, n_steps=n_steps, tau=tau,
        solver_kind=_get(cp, "solver", "linear",
                         _choice(("lu", "bicgstab")), "lu"),
        solver_tol=_get(cp, "solver", "tol", _float, 1e-12),
        picard_max=_get(cp, "solver", "picard_max", _int, 50),
        picard_tol=_get(cp, "solver", "picard_tol", _float, 1e-11),
        friedrichs=_get(cp, "solver", "friedrichs",
                        _choice(("diameter", "eigen")), "diameter"),
        output=OutputOptions(
            prefix=_get(cp, "output", "prefix", str, "run"),
            vtk=_get(cp, "output", "vtk", _bool, True),
            fields=_get(cp, "output", "fields", _bool, True)),
        verify=verify, text=text, path=str(path),
        fd_derivative_fields=fd_fields)
