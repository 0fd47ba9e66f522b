import numpy as np
import pytest

import lnodec as ln
from lnodec.dynamics import DomainError, ProblemSpec
from lnodec.train import init_adam, write_history_csv

from conftest import random_params


def test_adam_zero_gradient_is_identity(di):
    params = random_params(di, seed=0)
    st = init_adam(params.arch.n_theta)
    new, st2 = ln.adam_update(params, np.zeros(params.arch.n_theta), st, 0.025)
    assert np.array_equal(new.theta, params.theta)
    assert st2.step_count == 1


def test_adam_first_step_magnitude(di):
    params = random_params(di, seed=1)
    st = init_adam(params.arch.n_theta)
    grad = np.ones(params.arch.n_theta)
    new, _ = ln.adam_update(params, grad, st, 0.025)
    delta = params.theta - new.theta
    # bias correction makes the first step alpha/(1+eps) per coordinate
    np.testing.assert_allclose(delta, 0.025 / (1.0 + 1e-8), rtol=1e-12)
    assert abs(delta[0] - 0.025) < 1e-9


def test_adam_first_step_sign_opposes_gradient(di):
    params = random_params(di, seed=2)
    st = init_adam(params.arch.n_theta)
    rng = np.random.default_rng(0)
    grad = rng.standard_normal(params.arch.n_theta)
    new, _ = ln.adam_update(params, grad, st, 0.01)
    step = new.theta - params.theta
    nz = grad != 0
    assert np.all(np.sign(step[nz]) == -np.sign(grad[nz]))


def test_adam_second_moment_nonnegative(di):
    params = random_params(di, seed=3)
    st = init_adam(params.arch.n_theta)
    rng = np.random.default_rng(1)
    for _ in range(5):
        params, st = ln.adam_update(
            params, rng.standard_normal(params.arch.n_theta), st, 0.01)
    assert np.all(st.v >= 0.0)
    assert st.step_count == 5


def test_adam_shape_mismatch(di):
    params = random_params(di, seed=0)
    with pytest.raises(ValueError):
        ln.adam_update(params, np.zeros(3), init_adam(params.arch.n_theta), 0.1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        ln.TrainConfig(M=0)
    with pytest.raises(ValueError):
        ln.TrainConfig(gamma=0)
    with pytest.raises(ValueError):
        ln.TrainConfig(alpha=0.0)
    with pytest.raises(ValueError):
        ln.TrainConfig(kappa=0.0)
    with pytest.raises(ValueError):
        ln.TrainConfig(beta=-1.0)
    with pytest.raises(ValueError):
        ln.TrainConfig(mode="LQR")
    with pytest.raises(ValueError):
        ln.TrainConfig(grad_engine="autograd")
    with pytest.raises(ValueError):
        ln.TrainConfig(optimizer="sgd-momentum")


def test_train_deterministic(di):
    cfg = ln.TrainConfig(M=3, gamma=20, hidden=(8, 8), seed=42)
    p1, h1 = ln.train_policy(di, cfg)
    p2, h2 = ln.train_policy(di, cfg)
    assert np.array_equal(p1.theta, p2.theta)
    assert [r.total for r in h1] == [r.total for r in h2]


def test_train_history_has_exactly_M_entries(di):
    cfg = ln.TrainConfig(M=7, gamma=15, hidden=(8,), seed=0)
    _, history = ln.train_policy(di, cfg)
    assert len(history) == 7
    assert all(r.mode == ln.MODE_LYAPUNOV for r in history)


def test_train_smoke_loss_decreases(di):
    cfg = ln.TrainConfig(M=40, gamma=60, hidden=(16, 16), seed=1)
    _, history = ln.train_policy(di, cfg)
    assert history[0].total > 0.0
    assert history[-1].total < history[0].total


def test_train_adjoint_engine_runs(di):
    cfg = ln.TrainConfig(M=3, gamma=20, hidden=(8, 8), seed=0,
                         grad_engine="adjoint")
    params, history = ln.train_policy(di, cfg)
    assert len(history) == 3
    assert np.all(np.isfinite(params.theta))


def test_train_plain_gd_runs(di):
    cfg = ln.TrainConfig(M=3, gamma=20, hidden=(8, 8), seed=0, optimizer="gd")
    params, history = ln.train_policy(di, cfg)
    assert len(history) == 3


def test_adam_insensitive_to_dt_weighting(di):
    # Adam normalizes the gradient scale, so the quadrature convention only
    # enters through epsilon; a short run stays essentially identical
    a, _ = ln.train_policy(di, ln.TrainConfig(M=5, gamma=30, hidden=(8, 8),
                                              seed=3, dt_weighted=True))
    b, _ = ln.train_policy(di, ln.TrainConfig(M=5, gamma=30, hidden=(8, 8),
                                              seed=3, dt_weighted=False))
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-4)


def _escaping_problem():
    return ProblemSpec(
        name="escape", n_x=1, n_u=1,
        x0=[0.0], x_star=[0.0], t_f=4.0,
        u_lb=[-1.0], u_ub=[1.0],
        P=np.eye(1), P_ell=np.eye(1), P_phi=np.eye(1),
        drift_fn=lambda x, t: np.array([1.0]),
        input_map_fn=lambda x, t: np.zeros((1, 1)),
        drift_jac_fn=lambda x, t: np.zeros((1, 1)),
        domain_fn=lambda x: bool(np.all(np.isfinite(x))) and x[0] < 2.0,
        domain_desc="x < 2",
    )


def test_train_aborts_loudly_on_domain_error():
    p = _escaping_problem()
    cfg = ln.TrainConfig(M=3, gamma=16, hidden=(4,), seed=0)
    with pytest.raises(DomainError, match="training iteration 0"):
        ln.train_policy(p, cfg)


def test_history_csv_format(tmp_path, di):
    cfg = ln.TrainConfig(M=4, gamma=10, hidden=(8,), seed=0, constrained=True)
    _, history = ln.train_policy(di, cfg)
    path = tmp_path / "history.csv"
    write_history_csv(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,total,stability,penalty"
    assert len(lines) == 5
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) == pytest.approx(history[0].total, rel=1e-8)


def test_mode_separation_terminal(di):
    # terminal-mode training loss ignores everything but the final state
    params = random_params(di, seed=4)
    cfg = ln.TrainConfig(M=1, gamma=12, mode=ln.MODE_TERMINAL)
    from lnodec.gradients import evaluate_loss
    report, traj = evaluate_loss(di, params, cfg, di.x0)
    assert report.total == ln.potential(traj.states[-1], di.x_star, di.P_phi)
