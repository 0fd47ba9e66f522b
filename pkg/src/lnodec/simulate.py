"""Deterministic forward rollout of the controlled system on a uniform grid.

Integration is classical fixed-step RK4.  The state feedback u = pi(x) is
re-evaluated at every RK4 stage, so the integrator sees the true closed-loop
vector field rather than a zero-order hold of the control.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from . import losses
from . import policy as pol

Array = np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """One rollout on a uniform grid of Gamma segments.

    ``pointwise_losses`` holds the constrained pointwise stability loss at
    the left endpoint of each segment (length ``len(times) - 1``), computed
    with the kappa/beta the rollout was annotated with.  Outputs of
    ``truncate_at_target`` carry one interpolated final sample, so their
    last step may be shorter than the rest.
    """

    times: Array
    states: Array
    controls: Array
    potentials: Array
    pointwise_losses: Array

    def __post_init__(self):
        for name in ("times", "states", "controls", "potentials", "pointwise_losses"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        n = len(self.times)
        if self.states.shape[0] != n or self.controls.shape[0] != n:
            raise ValueError("states/controls must have one row per time")
        if self.potentials.shape != (n,):
            raise ValueError("potentials must have one entry per time")
        if self.pointwise_losses.shape != (max(n - 1, 0),):
            raise ValueError("pointwise_losses must have one entry per segment")


def rk4_step(F, x: Array, t: float, dt: float) -> Array:
    """One classical Runge-Kutta step of dx/dt = F(x, t)."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    k1 = F(x, t)
    k2 = F(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = F(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = F(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rollout(p: dyn.ProblemSpec, params: pol.PolicyParams, x_init: Array,
            gamma: int, kappa: float = 5.0, beta: float = 0.0) -> Trajectory:
    """Roll the closed loop out from ``x_init`` over ``gamma`` segments.

    Raises DomainError (with the failing step index attached) if any RK4
    stage leaves the problem's admissible region.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    x_init = np.asarray(x_init, dtype=float)
    dt = p.t_f / gamma
    times = np.linspace(0.0, p.t_f, gamma + 1)

    def F(x, t):
        return dyn.eval_F(p, x, pol.forward(params, x), t)

    states = np.empty((gamma + 1, p.n_x))
    controls = np.empty((gamma + 1, p.n_u))
    potentials = np.empty(gamma + 1)
    pointwise = np.empty(gamma)

    x = x_init
    for i in range(gamma + 1):
        t = float(times[i])
        if not p.domain_fn(x):
            raise dyn.DomainError(
                f"rollout left the admissible region of '{p.name}' at step {i}"
                f" (t={t:g})", x=x, t=t, step=i)
        u = pol.forward(params, x)
        states[i] = x
        controls[i] = u
        potentials[i] = losses.potential(x, p.x_star, p.P)
        if i < gamma:
            s, q = losses.pointwise_terms(p, x, u, t, kappa, beta)
            pointwise[i] = s + q
            try:
                x = rk4_step(F, x, t, dt)
            except dyn.DomainError as e:
                raise dyn.DomainError(
                    f"RK4 stage left the admissible region of '{p.name}' during"
                    f" step {i} (t={t:g}): {e}", x=e.x, t=e.t, step=i) from None

    return Trajectory(times=times, states=states, controls=controls,
                      potentials=potentials, pointwise_losses=pointwise)


def truncate_at_target(traj: Trajectory, component: int,
                       target: float) -> tuple[Trajectory, bool]:
    """Prefix of a trajectory up to the first crossing of a state target.

    Returns ``(prefix, True)`` where the prefix ends with a linearly
    interpolated sample at the exact crossing of
    ``states[:, component] >= target``, or ``(traj, False)`` if the target
    is never reached.  Controls and potentials at the crossing are
    interpolated linearly as well.
    """
    values = traj.states[:, component]
    hits = np.nonzero(values >= target)[0]
    if hits.size == 0:
        return traj, False
    i = int(hits[0])
    if i == 0:
        return Trajectory(
            times=traj.times[:1], states=traj.states[:1],
            controls=traj.controls[:1], potentials=traj.potentials[:1],
            pointwise_losses=traj.pointwise_losses[:0]), True

    # values[i-1] < target <= values[i], so the denominator is positive
    frac = (target - values[i - 1]) / (values[i] - values[i - 1])
    t_cross = traj.times[i - 1] + frac * (traj.times[i] - traj.times[i - 1])

    def interp(a):
        return a[i - 1] + frac * (a[i] - a[i - 1])

    times = np.append(traj.times[:i], t_cross)
    states = np.vstack([traj.states[:i], interp(traj.states)])
    controls = np.vstack([traj.controls[:i], interp(traj.controls)])
    potentials = np.append(traj.potentials[:i], interp(traj.potentials))
    return Trajectory(times=times, states=states, controls=controls,
                      potentials=potentials,
                      pointwise_losses=traj.pointwise_losses[:i]), True


# ---------------------------------------------------------------------------
# CSV export: one row per grid point, 9 significant digits.
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.9g}"


def trajectory_header(n_x: int, n_u: int) -> list[str]:
    return (["t"] + [f"x{i+1}" for i in range(n_x)]
            + [f"u{i+1}" for i in range(n_u)] + ["V", "pointwise_loss"])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns: t, x1..xn, u1..um, V, pointwise_loss.

    The final row's pointwise_loss field is empty: no segment starts there.
    """
    n = len(traj.times)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(trajectory_header(traj.states.shape[1], traj.controls.shape[1]))
        for i in range(n):
            row = ([_fmt(traj.times[i])]
                   + [_fmt(v) for v in traj.states[i]]
                   + [_fmt(v) for v in traj.controls[i]]
                   + [_fmt(traj.potentials[i])])
            row.append(_fmt(traj.pointwise_losses[i]) if i < n - 1 else "")
            w.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        n_x = sum(1 for c in header if c.startswith("x"))
        n_u = sum(1 for c in header if c.startswith("u"))
        rows = [row for row in r if row]
    times, states, controls, potentials, pointwise = [], [], [], [], []
    for row in rows:
        times.append(float(row[0]))
        states.append([float(v) for v in row[1:1 + n_x]])
        controls.append([float(v) for v in row[1 + n_x:1 + n_x + n_u]])
        potentials.append(float(row[1 + n_x + n_u]))
        if row[2 + n_x + n_u]:
            pointwise.append(float(row[2 + n_x + n_u]))
    return Trajectory(times=np.array(times), states=np.array(states),
                      controls=np.array(controls), potentials=np.array(potentials),
                      pointwise_losses=np.array(pointwise))
