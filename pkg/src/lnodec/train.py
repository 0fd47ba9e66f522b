"""Policy learning loop: per-iteration rollout, loss, gradient, update.

The update rule is bias-corrected Adam by default; plain gradient descent
is available for fidelity runs.  Training is fully deterministic given the
config (the seed only enters through the parameter initialization).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from . import losses
from . import policy as pol
from .gradients import GRAD_ENGINES

Array = np.ndarray

OPTIMIZERS = ("adam", "gd")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    Defaults are the double-integrator reproduction settings; the plasma
    preset raises beta to 50 (see ``config.problem_defaults``).
    ``dt_weighted`` selects whether the summed pointwise losses are scaled
    by the segment width; with Adam the two conventions train identically
    up to epsilon effects, with plain GD they rescale the step size.
    """

    M: int = 400
    gamma: int = 500
    alpha: float = 0.025
    kappa: float = 5.0
    beta: float = 5.0
    mode: str = losses.MODE_LYAPUNOV
    constrained: bool = False
    seed: int = 0
    grad_engine: str = "discrete"
    dt_weighted: bool = True
    optimizer: str = "adam"
    hidden: tuple[int, ...] = (32, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not self.kappa > 0.0:
            raise ValueError("kappa must be positive")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if self.mode not in losses.MODES:
            raise ValueError(f"mode must be one of {losses.MODES}")
        if self.grad_engine not in GRAD_ENGINES:
            raise ValueError(f"grad_engine must be one of {tuple(GRAD_ENGINES)}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class AdamState:
    m: Array
    v: Array
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(n_theta: int) -> AdamState:
    return AdamState(m=np.zeros(n_theta), v=np.zeros(n_theta))


def adam_update(params: pol.PolicyParams, grad: Array, st: AdamState,
                alpha: float) -> tuple[pol.PolicyParams, AdamState]:
    """One bias-corrected Adam step; returns fresh params and state."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.theta.shape:
        raise ValueError("gradient shape does not match theta")
    t = st.step_count + 1
    m = st.beta1 * st.m + (1.0 - st.beta1) * grad
    v = st.beta2 * st.v + (1.0 - st.beta2) * grad * grad
    m_hat = m / (1.0 - st.beta1 ** t)
    v_hat = v / (1.0 - st.beta2 ** t)
    theta = params.theta - alpha * m_hat / (np.sqrt(v_hat) + st.eps)
    return params.with_theta(theta), AdamState(
        m=m, v=v, step_count=t, beta1=st.beta1, beta2=st.beta2, eps=st.eps)


def train_policy(p: dyn.ProblemSpec, cfg: TrainConfig, verbose: bool = False,
                 log_every: int = 50,
                 ) -> tuple[pol.PolicyParams, list[losses.LossReport]]:
    """Run the full learning loop from the problem's nominal initial state.

    Returns the final parameters and one LossReport per iteration (exactly
    M entries; no early stopping).  A DomainError mid-training aborts the
    run loudly with the iteration attached rather than patching the step.
    """
    arch = pol.PolicyArch(n_in=p.n_x, hidden=cfg.hidden, n_out=p.n_u)
    params = pol.init_params(arch, (p.u_lb, p.u_ub), cfg.seed)
    engine = GRAD_ENGINES[cfg.grad_engine]
    st = init_adam(arch.n_theta)
    history: list[losses.LossReport] = []
    for k in range(cfg.M):
        try:
            grad, report = engine(p, params, cfg, p.x0)
        except dyn.DomainError as e:
            raise dyn.DomainError(
                f"training iteration {k} aborted: {e}", x=e.x, t=e.t,
                step=e.step) from None
        history.append(report)
        if verbose and (k % log_every == 0 or k == cfg.M - 1):
            print(f"iter {k:4d}  total {report.total:.6g}  "
                  f"stability {report.stability_term:.6g}  "
                  f"penalty {report.penalty_term:.6g}")
        if cfg.optimizer == "adam":
            params, st = adam_update(params, grad, st, cfg.alpha)
        else:
            params = params.with_theta(params.theta - cfg.alpha * grad)
    return params, history


def write_history_csv(history, path) -> None:
    """Columns: iter,total,stability,penalty."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "total", "stability", "penalty"])
        for k, r in enumerate(history):
            w.writerow([k, f"{r.total:.9g}", f"{r.stability_term:.9g}",
                        f"{r.penalty_term:.9g}"])
