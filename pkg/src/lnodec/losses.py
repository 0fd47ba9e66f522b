"""Scalar objectives: potential, pointwise and integrated stability losses,
tracking baselines, and the exponential decay envelope.

The stability losses measure violation of the exponential-decrease
condition dV/dt + kappa*V <= 0 along the closed loop; the integrated form
is a left-endpoint Riemann sum over the rollout grid.  Constraint handling
adds beta * max(0, g)^2 penalties pointwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import dynamics as dyn
from . import policy as pol

if TYPE_CHECKING:  # pragma: no cover
    from .simulate import Trajectory

Array = np.ndarray

MODE_LYAPUNOV = "L-NODEC"
MODE_STAGE = "NODEC-stage"
MODE_TERMINAL = "NODEC-terminal"
MODES = (MODE_LYAPUNOV, MODE_STAGE, MODE_TERMINAL)


@dataclass(frozen=True)
class LossReport:
    """One training-loss evaluation, split into its two terms.

    For L-NODEC, ``stability_term`` is the summed max{0, dV/dt + kappa V}
    quadrature and ``total = stability_term + penalty_term``.  For the
    NODEC baselines the primary tracking objective (stage or terminal
    cost) is carried in ``stability_term`` so the history CSV keeps a
    uniform shape.
    """

    total: float
    stability_term: float
    penalty_term: float
    mode: str


def potential(x: Array, x_star: Array, P: Array) -> float:
    """Quadratic potential (x - x*)^T P (x - x*)."""
    d = np.asarray(x, dtype=float) - np.asarray(x_star, dtype=float)
    return float(d @ P @ d)


def potential_grad(x: Array, x_star: Array, P: Array) -> Array:
    """Gradient 2 P (x - x*) of the quadratic potential."""
    d = np.asarray(x, dtype=float) - np.asarray(x_star, dtype=float)
    return 2.0 * (P @ d)


def pointwise_terms(p: dyn.ProblemSpec, x: Array, u: Array, t: float,
                    kappa: float, beta: float) -> tuple[float, float]:
    """(stability, penalty) parts of the constrained pointwise loss at one
    state, with the control supplied by the caller."""
    gV = potential_grad(x, p.x_star, p.P)
    F = dyn.eval_F(p, x, u, t)
    z = float(gV @ F) + kappa * potential(x, p.x_star, p.P)
    stability = max(0.0, z)
    penalty = 0.0
    if beta > 0.0:
        g = dyn.eval_constraint(p, x, u)
        if g > 0.0:
            penalty = beta * g * g
    return stability, penalty


def pointwise_lyapunov(p: dyn.ProblemSpec, params: pol.PolicyParams,
                       x: Array, t: float, kappa: float) -> float:
    """max{0, dV/dt + kappa V} at one state under the policy's control."""
    if not kappa > 0.0:
        raise ValueError("kappa must be positive")
    u = pol.forward(params, x)
    stability, _ = pointwise_terms(p, x, u, t, kappa, 0.0)
    return stability


def pointwise_constrained(p: dyn.ProblemSpec, params: pol.PolicyParams,
                          x: Array, t: float, kappa: float,
                          beta: float) -> tuple[float, tuple[float, float]]:
    """Constrained pointwise loss; returns (value, (stability, penalty))."""
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    u = pol.forward(params, x)
    stability, penalty = pointwise_terms(p, x, u, t, kappa, beta)
    return stability + penalty, (stability, penalty)


def quadrature_sum(values, dt: float, dt_weighted: bool = True) -> float:
    """Left-endpoint sum of per-segment values, optionally scaled by dt."""
    s = float(np.sum(np.asarray(values, dtype=float)))
    return s * dt if dt_weighted else s


def lyapunov_loss(traj: "Trajectory", p: dyn.ProblemSpec,
                  params: pol.PolicyParams, kappa: float, beta: float,
                  dt_weighted: bool = True) -> LossReport:
    """Integrated stability loss over a rollout's left endpoints.

    Recomputes the pointwise terms from the trajectory's states and
    recorded controls (which equal the policy's outputs when the
    trajectory came from ``rollout`` with the same params).
    """
    dt = float(traj.times[1] - traj.times[0]) if len(traj.times) > 1 else 0.0
    stab = 0.0
    pen = 0.0
    for i in range(len(traj.times) - 1):
        s, q = pointwise_terms(p, traj.states[i], traj.controls[i],
                               float(traj.times[i]), kappa, beta)
        stab += s
        pen += q
    w = dt if dt_weighted else 1.0
    stab *= w
    pen *= w
    return LossReport(total=stab + pen, stability_term=stab,
                      penalty_term=pen, mode=MODE_LYAPUNOV)


def nodec_stage_loss(traj: "Trajectory", x_star: Array, P_ell: Array) -> float:
    """Left-endpoint Riemann sum of the stage tracking cost."""
    if len(traj.times) < 2:
        return 0.0
    dt = float(traj.times[1] - traj.times[0])
    total = 0.0
    for i in range(len(traj.times) - 1):
        total += potential(traj.states[i], x_star, P_ell)
    return total * dt


def nodec_terminal_loss(traj: "Trajectory", x_star: Array, P_phi: Array) -> float:
    """Terminal tracking cost at the final sample."""
    return potential(traj.states[-1], x_star, P_phi)


def constraint_penalty_sum(traj: "Trajectory", p: dyn.ProblemSpec,
                           beta: float, dt_weighted: bool = True) -> float:
    """beta-weighted quadratic constraint penalty over left endpoints."""
    if beta <= 0.0 or len(traj.times) < 2:
        return 0.0
    dt = float(traj.times[1] - traj.times[0])
    total = 0.0
    for i in range(len(traj.times) - 1):
        g = dyn.eval_constraint(p, traj.states[i], traj.controls[i])
        if g > 0.0:
            total += beta * g * g
    return total * (dt if dt_weighted else 1.0)


def mode_loss(traj: "Trajectory", p: dyn.ProblemSpec, params: pol.PolicyParams,
              mode: str, kappa: float, beta: float,
              dt_weighted: bool = True) -> LossReport:
    """Training loss for one rollout under the given loss mode.

    ``beta`` is the effective penalty weight: pass 0 for unconstrained runs.
    """
    if mode == MODE_LYAPUNOV:
        return lyapunov_loss(traj, p, params, kappa, beta, dt_weighted)
    if mode == MODE_STAGE:
        primary = nodec_stage_loss(traj, p.x_star, p.P_ell)
    elif mode == MODE_TERMINAL:
        primary = nodec_terminal_loss(traj, p.x_star, p.P_phi)
    else:
        raise ValueError(f"unknown loss mode '{mode}' (known: {', '.join(MODES)})")
    pen = constraint_penalty_sum(traj, p, beta, dt_weighted)
    return LossReport(total=primary + pen, stability_term=primary,
                      penalty_term=pen, mode=mode)


def stability_envelope(V0: float, kappa: float, t: float) -> float:
    """Exponential decay threshold V0 * exp(-kappa * t)."""
    if V0 < 0.0:
        raise ValueError("V0 must be nonnegative")
    if not kappa > 0.0:
        raise ValueError("kappa must be positive")
    return V0 * math.exp(-kappa * t)
