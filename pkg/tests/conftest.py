import numpy as np
import pytest

import lnodec as ln


@pytest.fixture(scope="session")
def di():
    return ln.double_integrator()


@pytest.fixture(scope="session")
def plasma():
    return ln.plasma()


@pytest.fixture(scope="session")
def di_arch(di):
    return ln.PolicyArch(n_in=di.n_x, hidden=(32, 32, 32), n_out=di.n_u)


def zero_theta_params(problem, hidden=(32, 32, 32)):
    """All-zero parameters: the policy outputs the midpoint of its bounds."""
    arch = ln.PolicyArch(n_in=problem.n_x, hidden=hidden, n_out=problem.n_u)
    return ln.PolicyParams(theta=np.zeros(arch.n_theta), arch=arch,
                           u_lb=problem.u_lb, u_ub=problem.u_ub)


def constant_control_params(problem, u_value, hidden=(32, 32, 32)):
    """Zero weights plus a final-layer bias that pins the output at u_value."""
    u_value = float(u_value)
    lb, ub = float(problem.u_lb[0]), float(problem.u_ub[0])
    frac = (u_value - lb) / (ub - lb)
    if not 0.0 < frac < 1.0:
        raise ValueError("u_value must lie strictly inside the bounds")
    arch = ln.PolicyArch(n_in=problem.n_x, hidden=hidden, n_out=problem.n_u)
    theta = np.zeros(arch.n_theta)
    theta[-1] = np.log(frac / (1.0 - frac))
    return ln.PolicyParams(theta=theta, arch=arch, u_lb=problem.u_lb,
                           u_ub=problem.u_ub)


def random_params(problem, seed, scale=0.3, hidden=(32, 32, 32)):
    """Fully random parameters (biases included, unlike init_params)."""
    arch = ln.PolicyArch(n_in=problem.n_x, hidden=hidden, n_out=problem.n_u)
    rng = np.random.default_rng(seed)
    theta = scale * rng.standard_normal(arch.n_theta)
    return ln.PolicyParams(theta=theta, arch=arch, u_lb=problem.u_lb,
                           u_ub=problem.u_ub)
