"""Control-affine problem definitions and the two benchmark systems.

A problem is ``dx/dt = f(x, t) + h(x, t) u`` with box-bounded input, an
optional scalar state-input constraint ``g(x, u) <= 0``, quadratic cost
weights, and an admissible state region (the "domain guard") outside of
which the dynamics are undefined or meaningless.

Two presets are shipped:

``double_integrator``
    Position/velocity point mass, acceleration input in [-10, 10],
    velocity constraint x2 <= 2.8 m/s, horizon 1.5 s.

``plasma``
    Surface temperature / cumulative thermal dose (CEM, minutes) of a
    cold-atmospheric-plasma device, power input in [1, 5] W, temperature
    constraint x1 <= 45 C, horizon 100 s.  The temperature equation has
    logarithmic singularities at 25 C and 35 C, so the guard rejects
    states with x1 <= 35.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

Array = np.ndarray


class DomainError(ValueError):
    """Raised when a state leaves the admissible region of a problem.

    Carries the offending state and, when raised from an integrator, the
    time and step index at which the rollout failed.  Failing loudly here
    is deliberate: clamping states back into the domain would silently
    corrupt gradients.
    """

    def __init__(self, message: str, x=None, t: float | None = None,
                 step: int | None = None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x, dtype=float)
        self.t = t
        self.step = step


def _as_vector(v, n: int, name: str) -> Array:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    return a


def _check_weight_matrix(M: Array, n: int, name: str) -> Array:
    M = np.asarray(M, dtype=float)
    if M.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}")
    if not np.allclose(M, M.T):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return M


@dataclass(frozen=True)
class ProblemSpec:
    """One control-affine optimal control problem instance.

    The callables close over nothing mutable; every operation below is a
    pure function of its arguments, so instances are safe to share across
    threads.
    """

    name: str
    n_x: int
    n_u: int
    x0: Array
    x_star: Array
    t_f: float
    u_lb: Array
    u_ub: Array
    P: Array          # potential-function weight
    P_ell: Array      # stage-cost weight
    P_phi: Array      # terminal-cost weight
    drift_fn: Callable[[Array, float], Array]
    input_map_fn: Callable[[Array, float], Array]
    drift_jac_fn: Callable[[Array, float], Array]
    # d(h(x,t) u)/dx at fixed u; None means h does not depend on x.
    input_map_jac_fn: Callable[[Array, Array, float], Array] | None = None
    # scalar constraint g(x, u) <= 0 and its gradients (g_x, g_u)
    constraint_fn: Callable[[Array, Array], float] | None = None
    constraint_grad_fn: Callable[[Array, Array], tuple[Array, Array]] | None = None
    domain_fn: Callable[[Array], bool] = field(default=lambda x: bool(np.all(np.isfinite(x))))
    domain_desc: str = "all finite states"
    # policy-input standardization constants (problem data, physical units):
    # states already of order one use the identity
    x_center: Array | None = None
    x_scale: Array | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", _as_vector(self.x0, self.n_x, "x0"))
        object.__setattr__(self, "x_star", _as_vector(self.x_star, self.n_x, "x_star"))
        center = np.zeros(self.n_x) if self.x_center is None else self.x_center
        scale = np.ones(self.n_x) if self.x_scale is None else self.x_scale
        object.__setattr__(self, "x_center", _as_vector(center, self.n_x, "x_center"))
        object.__setattr__(self, "x_scale", _as_vector(scale, self.n_x, "x_scale"))
        if not np.all(self.x_scale > 0.0):
            raise ValueError("x_scale entries must be positive")
        object.__setattr__(self, "u_lb", _as_vector(self.u_lb, self.n_u, "u_lb"))
        object.__setattr__(self, "u_ub", _as_vector(self.u_ub, self.n_u, "u_ub"))
        object.__setattr__(self, "P", _check_weight_matrix(self.P, self.n_x, "P"))
        object.__setattr__(self, "P_ell", _check_weight_matrix(self.P_ell, self.n_x, "P_ell"))
        object.__setattr__(self, "P_phi", _check_weight_matrix(self.P_phi, self.n_x, "P_phi"))
        if not self.t_f > 0.0:
            raise ValueError("t_f must be positive")
        if not np.all(self.u_lb < self.u_ub):
            raise ValueError("u_lb must be elementwise below u_ub")
        for label, x in (("x0", self.x0), ("x_star", self.x_star)):
            if not self.domain_fn(x):
                raise ValueError(f"{label} lies outside the domain guard ({self.domain_desc})")

    def with_horizon(self, t_f: float) -> "ProblemSpec":
        """Copy of this problem with a different horizon."""
        return replace(self, t_f=float(t_f))


def _guard(p: ProblemSpec, x: Array, t: float) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n_x,):
        raise ValueError(f"state must have shape ({p.n_x},), got {x.shape}")
    if not p.domain_fn(x):
        raise DomainError(
            f"state {x.tolist()} outside admissible region of '{p.name}' "
            f"({p.domain_desc})", x=x, t=t)
    return x


def eval_drift(p: ProblemSpec, x: Array, t: float = 0.0) -> Array:
    """Uncontrolled part f(x, t) of the dynamics."""
    x = _guard(p, x, t)
    return p.drift_fn(x, t)


def eval_input_map(p: ProblemSpec, x: Array, t: float = 0.0) -> Array:
    """Input map h(x, t), shape (n_x, n_u)."""
    x = _guard(p, x, t)
    return p.input_map_fn(x, t)


def eval_F(p: ProblemSpec, x: Array, u: Array, t: float = 0.0) -> Array:
    """Full right-hand side f(x, t) + h(x, t) u."""
    x = _guard(p, x, t)
    u = _as_vector(u, p.n_u, "u")
    return p.drift_fn(x, t) + p.input_map_fn(x, t) @ u


def eval_constraint(p: ProblemSpec, x: Array, u: Array) -> float:
    """Scalar constraint value; positive means violated.

    Problems without a constraint report -inf (always satisfied).
    """
    if p.constraint_fn is None:
        return -math.inf
    x = np.asarray(x, dtype=float)
    u = _as_vector(u, p.n_u, "u")
    return float(p.constraint_fn(x, u))


def constraint_grads(p: ProblemSpec, x: Array, u: Array) -> tuple[Array, Array]:
    """Gradients (dg/dx, dg/du) of the constraint; zeros when absent."""
    if p.constraint_grad_fn is None:
        return np.zeros(p.n_x), np.zeros(p.n_u)
    return p.constraint_grad_fn(np.asarray(x, dtype=float), _as_vector(u, p.n_u, "u"))


def jac_F_x(p: ProblemSpec, x: Array, u: Array, t: float = 0.0) -> Array:
    """Analytic Jacobian dF/dx holding u fixed, shape (n_x, n_x)."""
    x = _guard(p, x, t)
    u = _as_vector(u, p.n_u, "u")
    J = p.drift_jac_fn(x, t)
    if p.input_map_jac_fn is not None:
        J = J + p.input_map_jac_fn(x, u, t)
    return J


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def double_integrator() -> ProblemSpec:
    """Point mass: dx1 = x2, dx2 = u, velocity bound x2 <= 2.8 m/s."""

    def drift(x, t):
        return np.array([x[1], 0.0])

    def input_map(x, t):
        return np.array([[0.0], [1.0]])

    def drift_jac(x, t):
        return np.array([[0.0, 1.0], [0.0, 0.0]])

    def constraint(x, u):
        return x[1] - 2.8

    def constraint_grad(x, u):
        return np.array([0.0, 1.0]), np.zeros(1)

    return ProblemSpec(
        name="double_integrator",
        n_x=2, n_u=1,
        x0=[0.0, 0.0], x_star=[1.0, 0.0],
        t_f=1.5,
        u_lb=[-10.0], u_ub=[10.0],
        P=np.diag([1.0, 1e-6]),
        P_ell=np.diag([1.0, 1e-6]),
        P_phi=np.diag([1.0, 1e-6]),
        drift_fn=drift, input_map_fn=input_map, drift_jac_fn=drift_jac,
        constraint_fn=constraint, constraint_grad_fn=constraint_grad,
    )


_PLASMA_X1_MIN = 35.0 + 1e-6
_PLASMA_X1_MAX = 100.0
_PLASMA_POWER_SCALE = 3.1981
_PLASMA_COOLING = 0.8088


def plasma() -> ProblemSpec:
    """Thermal dose delivery: x1 temperature (C), x2 dose CEM (min).

    The temperature equation has log singularities at x1 = 25 and 35, so
    the guard keeps x1 strictly above 35 and dynamics evaluation fails
    loudly outside.
    """

    def domain(x):
        return bool(np.all(np.isfinite(x))) and _PLASMA_X1_MIN < x[0] <= _PLASMA_X1_MAX

    def drift(x, t):
        x1 = x[0]
        denom = math.log(x1 - 25.0) - math.log(x1 - 35.0)
        return np.array([
            -_PLASMA_COOLING / denom,
            0.5 ** (43.0 - x1) / 60.0,
        ])

    def input_map(x, t):
        return np.array([[1.0 / _PLASMA_POWER_SCALE], [0.0]])

    def drift_jac(x, t):
        x1 = x[0]
        denom = math.log(x1 - 25.0) - math.log(x1 - 35.0)
        ddenom = 1.0 / (x1 - 25.0) - 1.0 / (x1 - 35.0)
        return np.array([
            [_PLASMA_COOLING * ddenom / denom ** 2, 0.0],
            [math.log(2.0) * 0.5 ** (43.0 - x1) / 60.0, 0.0],
        ])

    def constraint(x, u):
        return x[0] - 45.0

    def constraint_grad(x, u):
        return np.array([1.0, 0.0]), np.zeros(1)

    return ProblemSpec(
        name="plasma",
        n_x=2, n_u=1,
        x0=[37.0, 0.0], x_star=[37.0, 1.5],
        t_f=100.0,
        u_lb=[1.0], u_ub=[5.0],
        P=np.diag([1e-10, 1e-2]),
        P_ell=np.diag([1e-10, 1e-2]),
        P_phi=np.diag([1e-10, 1e-2]),
        drift_fn=drift, input_map_fn=input_map, drift_jac_fn=drift_jac,
        constraint_fn=constraint, constraint_grad_fn=constraint_grad,
        domain_fn=domain,
        domain_desc=f"{_PLASMA_X1_MIN} < x1 <= {_PLASMA_X1_MAX}, finite",
    )


PROBLEM_PRESETS: dict[str, Callable[[], ProblemSpec]] = {
    "double_integrator": double_integrator,
    "plasma": plasma,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEM_PRESETS[name]()
    except KeyError:
        known = ", ".join(sorted(PROBLEM_PRESETS))
        raise ValueError(f"unknown problem preset '{name}' (known: {known})") from None
