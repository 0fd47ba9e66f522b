import dataclasses

import numpy as np
import pytest

import lnodec as ln
from lnodec.dynamics import ProblemSpec
from lnodec.gradients import (NonFiniteError, adjoint_gradient_from_states,
                              central_difference, evaluate_loss)

from conftest import random_params, zero_theta_params


def _cfg(**kw):
    base = dict(M=1, gamma=50, kappa=5.0, beta=5.0, constrained=True)
    base.update(kw)
    return ln.TrainConfig(**base)


def richardson_fd(p, params, cfg, coords, h):
    """Extrapolated central differences, the oracle for gradient checks."""
    d1 = ln.finite_difference_gradient(p, params, cfg, p.x0, coords, h)
    d2 = ln.finite_difference_gradient(p, params, cfg, p.x0, coords, h / 2)
    return (4.0 * d2 - d1) / 3.0


def max_rel_err(a, b, coords):
    floor = 1e-5 * (1.0 + np.abs(b[coords]).max())
    return max(abs(a[j] - b[j]) / max(abs(b[j]), floor) for j in coords)


def test_zero_loss_configuration_has_zero_gradient(di):
    params = zero_theta_params(di)
    cfg = _cfg()
    grad, report = ln.loss_gradient_discrete(di, params, cfg, di.x_star)
    assert report.total == 0.0
    assert not grad.any()
    grad_a, _ = ln.loss_gradient_adjoint(di, params, cfg, di.x_star)
    assert not grad_a.any()


def test_discrete_matches_fd_on_toy_run(di):
    params = random_params(di, seed=0)
    cfg = _cfg(gamma=10)
    grad, _ = ln.loss_gradient_discrete(di, params, cfg, di.x0)
    rng = np.random.default_rng(0)
    coords = rng.choice(params.arch.n_theta, size=20, replace=False)
    fd = richardson_fd(di, params, cfg, coords, 1e-3)
    assert max_rel_err(grad, fd, coords) <= 1e-6


@pytest.mark.parametrize("preset", ["double_integrator", "plasma"])
@pytest.mark.parametrize("mode", [ln.MODE_LYAPUNOV, ln.MODE_STAGE,
                                  ln.MODE_TERMINAL])
def test_discrete_matches_fd_all_modes(preset, mode):
    p = ln.get_problem(preset)
    params = random_params(p, seed=3)
    cfg = _cfg(mode=mode, beta=5.0 if preset == "double_integrator" else 50.0)
    grad, _ = ln.loss_gradient_discrete(p, params, cfg, p.x0)
    rng = np.random.default_rng(1)
    coords = rng.choice(params.arch.n_theta, size=12, replace=False)
    fd = richardson_fd(p, params, cfg, coords, 1e-3)
    assert max_rel_err(grad, fd, coords) <= 1e-6


@pytest.mark.parametrize("preset", ["double_integrator", "plasma"])
def test_adjoint_matches_discrete(preset):
    p = ln.get_problem(preset)
    cfg = _cfg(beta=5.0 if preset == "double_integrator" else 50.0)
    for seed in range(3):
        params = random_params(p, seed=seed)
        gd, _ = ln.loss_gradient_discrete(p, params, cfg, p.x0)
        ga, _ = ln.loss_gradient_adjoint(p, params, cfg, p.x0)
        scale = max(np.abs(gd).max(), 1e-12)
        assert np.abs(ga - gd).max() / scale <= 1e-3


def test_adjoint_consumes_only_grid_states(di):
    # the sweep is a function of the stored (states, times) grid alone
    params = random_params(di, seed=5)
    cfg = _cfg(gamma=30)
    _, traj = evaluate_loss(di, params, cfg, di.x0)
    from_states = adjoint_gradient_from_states(di, params, cfg, traj.states,
                                               traj.times)
    full, _ = ln.loss_gradient_adjoint(di, params, cfg, di.x0)
    assert np.array_equal(from_states, full)


def test_engines_share_subgradient_convention_on_kink(di):
    # on the zero-loss set both engines return exactly zero, so it is a
    # fixed point of training under either engine
    params = zero_theta_params(di)
    cfg = _cfg(mode=ln.MODE_LYAPUNOV, constrained=False)
    gd, _ = ln.loss_gradient_discrete(di, params, cfg, di.x_star)
    ga, _ = ln.loss_gradient_adjoint(di, params, cfg, di.x_star)
    assert not gd.any() and not ga.any()


def test_gradient_of_terminal_loss_single_segment(di):
    # one RK4 step: dL/dtheta = 2 P_phi (x1 - x*) . dx1/dtheta
    params = random_params(di, seed=7)
    cfg = _cfg(mode=ln.MODE_TERMINAL, constrained=False, gamma=1)
    grad, _ = ln.loss_gradient_discrete(di, params, cfg, di.x0)

    _, traj = evaluate_loss(di, params, cfg, di.x0)
    x1 = traj.states[-1]
    lhs = 2.0 * (di.P_phi @ (x1 - di.x_star))
    rng = np.random.default_rng(2)
    coords = rng.choice(params.arch.n_theta, size=15, replace=False)
    h = 1e-6
    for j in coords:
        theta = params.theta.copy()
        theta[j] += h
        up = evaluate_loss(di, params.with_theta(theta), cfg, di.x0)[1].states[-1]
        theta[j] -= 2 * h
        dn = evaluate_loss(di, params.with_theta(theta), cfg, di.x0)[1].states[-1]
        dx_dtheta = (up - dn) / (2 * h)
        assert grad[j] == pytest.approx(float(lhs @ dx_dtheta), rel=1e-5, abs=1e-10)


def test_fd_zero_for_frozen_coordinate(di):
    # pinned rollout at the origin: first-layer weights never see a nonzero
    # input, so the loss is exactly flat along them
    params = zero_theta_params(di)
    cfg = _cfg(constrained=False)
    fd = ln.finite_difference_gradient(di, params, cfg, di.x0, [0, 1, 5], 1e-4)
    assert not fd.any()


def test_central_difference_quadratic():
    val = central_difference(lambda t: t * t, 3.0, 1e-4)
    assert val == pytest.approx(6.0, abs=1e-7)


def test_central_difference_error_quadratic_in_h(di):
    # smooth loss (terminal mode): halving h shrinks the FD error ~4x
    params = random_params(di, seed=11)
    cfg = _cfg(mode=ln.MODE_TERMINAL, constrained=False, gamma=8)
    grad, _ = ln.loss_gradient_discrete(di, params, cfg, di.x0)
    j = int(np.argmax(np.abs(grad)))
    errs = []
    for h in (2e-2, 1e-2, 5e-3):
        fd = ln.finite_difference_gradient(di, params, cfg, di.x0, [j], h)
        errs.append(abs(fd[j] - grad[j]))
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0


def test_fd_validation(di):
    params = zero_theta_params(di)
    with pytest.raises(ValueError):
        ln.finite_difference_gradient(di, params, _cfg(), di.x0, [0], 0.0)


def test_oracle_chain_skips_near_kink_samples(di):
    # tolerance chain is only claimed away from the max kink; verify the
    # guard logic finds no near-kink samples for these seeds
    cfg = _cfg(constrained=False)
    for seed in range(3):
        params = random_params(di, seed=seed)
        _, traj = evaluate_loss(di, params, cfg, di.x0)
        z = []
        for i in range(len(traj.times) - 1):
            gV = ln.potential_grad(traj.states[i], di.x_star, di.P)
            F = ln.eval_F(di, traj.states[i], traj.controls[i])
            z.append(float(gV @ F) + cfg.kappa * ln.potential(
                traj.states[i], di.x_star, di.P))
        assert min(abs(v) for v in z) > 1e-9


def test_gradient_vanishes_on_zero_loss_set(di):
    params = zero_theta_params(di)
    cfg = _cfg(constrained=True)
    grad, report = ln.loss_gradient_discrete(di, params, cfg, di.x_star)
    assert report.total == 0.0 and not grad.any()


def _explosive_problem():
    big = 1e300
    return ProblemSpec(
        name="explosive", n_x=2, n_u=1,
        x0=[1.0, 0.0], x_star=[0.0, 0.0], t_f=1.0,
        u_lb=[-1.0], u_ub=[1.0],
        P=np.eye(2), P_ell=np.eye(2), P_phi=np.eye(2),
        drift_fn=lambda x, t: np.zeros(2),
        input_map_fn=lambda x, t: np.zeros((2, 1)),
        drift_jac_fn=lambda x, t: np.array([[big, 0.0], [0.0, 0.0]]),
    )


def test_adjoint_nonfinite_raises_with_step():
    p = _explosive_problem()
    arch = ln.PolicyArch(n_in=2, hidden=(4,), n_out=1)
    params = ln.PolicyParams(theta=np.zeros(arch.n_theta), arch=arch,
                             u_lb=p.u_lb, u_ub=p.u_ub)
    cfg = ln.TrainConfig(M=1, gamma=4, mode=ln.MODE_TERMINAL)
    with np.errstate(all="ignore"):  # the overflow is the point
        with pytest.raises(NonFiniteError) as exc:
            ln.loss_gradient_adjoint(p, params, cfg, p.x0)
    assert exc.value.step is not None
