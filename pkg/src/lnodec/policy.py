"""Bounded-output MLP state-feedback policy with exact reverse-mode derivatives.

The policy is ``u = u_lb + (u_ub - u_lb) * sigmoid(W_L z + b_L)`` applied to
the last hidden activation ``z``; hidden layers are affine maps followed by
tanh.  The sigmoid output layer keeps every control strictly inside its
bounds, and the whole map is smooth, hence locally Lipschitz.

Parameter layout (frozen; checkpoints depend on it): layer-major, weights
before biases.  For each layer, the weight matrix is stored row-major with
shape (fan_out, fan_in), followed by the bias of length fan_out.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

Array = np.ndarray

CHECKPOINT_MAGIC = "lnodec-policy v1"


@dataclass(frozen=True)
class PolicyArch:
    n_in: int
    hidden: tuple[int, ...]
    n_out: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        widths = (self.n_in, *self.hidden, self.n_out)
        if any(w < 1 for w in widths):
            raise ValueError("all layer widths must be >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activation is supported")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) for each affine layer, input to output."""
        widths = (self.n_in, *self.hidden, self.n_out)
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    @property
    def n_theta(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)


def default_arch(n_in: int, n_out: int) -> PolicyArch:
    """Three tanh hidden layers of 32 units each."""
    return PolicyArch(n_in=n_in, hidden=(32, 32, 32), n_out=n_out)


@dataclass(frozen=True)
class PolicyParams:
    """Immutable flat parameter vector plus architecture and output bounds."""

    theta: Array
    arch: PolicyArch
    u_lb: Array
    u_ub: Array

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (self.arch.n_theta,):
            raise ValueError(
                f"theta must have length {self.arch.n_theta}, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta entries must be finite")
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        lb = np.asarray(self.u_lb, dtype=float).reshape(self.arch.n_out).copy()
        ub = np.asarray(self.u_ub, dtype=float).reshape(self.arch.n_out).copy()
        if not np.all(lb < ub):
            raise ValueError("u_lb must be elementwise below u_ub")
        lb.setflags(write=False)
        ub.setflags(write=False)
        object.__setattr__(self, "u_lb", lb)
        object.__setattr__(self, "u_ub", ub)
        views = []
        pos = 0
        for o, i in self.arch.layer_shapes:
            W = theta[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = theta[pos:pos + o]
            pos += o
            views.append((W, b))
        object.__setattr__(self, "_layers", tuple(views))

    def layers(self) -> tuple[tuple[Array, Array], ...]:
        """(W, b) views into theta, input to output."""
        return self._layers

    def with_theta(self, theta: Array) -> "PolicyParams":
        return PolicyParams(theta=theta, arch=self.arch, u_lb=self.u_lb, u_ub=self.u_ub)


def init_params(arch: PolicyArch, bounds: tuple, seed: int) -> PolicyParams:
    """Glorot-uniform weights, zero biases; deterministic given seed.

    Zero biases put the initial policy at the midpoint of the bounds, a
    safe input for both presets.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    for o, i in arch.layer_shapes:
        s = np.sqrt(6.0 / (i + o))
        chunks.append(rng.uniform(-s, s, size=o * i))
        chunks.append(np.zeros(o))
    u_lb, u_ub = bounds
    return PolicyParams(theta=np.concatenate(chunks), arch=arch, u_lb=u_lb, u_ub=u_ub)


def _sigmoid(z: Array) -> Array:
    # clipping keeps exp finite; sigmoid saturates to 0/1 in float64 far
    # before the clip bites
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def _forward_cached(params: PolicyParams, x: Array):
    """Forward pass returning (u, cache) for reuse by the backward pass."""
    layers = params._layers
    acts = [np.asarray(x, dtype=float)]
    z = acts[0]
    for W, b in layers[:-1]:
        z = np.tanh(W @ z + b)
        acts.append(z)
    W, b = layers[-1]
    s = _sigmoid(W @ z + b)
    scale = params.u_ub - params.u_lb
    u = params.u_lb + scale * s
    return u, (layers, acts, s, scale)


def forward(params: PolicyParams, x: Array) -> Array:
    """Control u = pi(x); strictly inside (u_lb, u_ub) elementwise."""
    u, _ = _forward_cached(params, x)
    return u


def _vjp_cached(cache, u_bar: Array) -> tuple[Array, Array]:
    """Backward pass given a forward cache.  Returns (x_bar, theta_bar)."""
    layers, acts, s, scale = cache
    n_layers = len(layers)
    theta_parts = [None] * (2 * n_layers)

    # output layer: u = lb + scale * sigmoid(W z + b)
    delta = np.asarray(u_bar, dtype=float) * scale * s * (1.0 - s)
    W, _ = layers[-1]
    theta_parts[-2] = np.outer(delta, acts[-1]).ravel()
    theta_parts[-1] = delta
    grad = W.T @ delta

    for li in range(n_layers - 2, -1, -1):
        a = acts[li + 1]                     # tanh output of this layer
        delta = grad * (1.0 - a * a)
        W, _ = layers[li]
        theta_parts[2 * li] = np.outer(delta, acts[li]).ravel()
        theta_parts[2 * li + 1] = delta
        grad = W.T @ delta

    return grad, np.concatenate(theta_parts)


def vjp(params: PolicyParams, x: Array, u_bar: Array) -> tuple[Array, Array]:
    """Vector-Jacobian products ((du/dx)^T u_bar, (du/dtheta)^T u_bar)."""
    _, cache = _forward_cached(params, x)
    return _vjp_cached(cache, u_bar)


def jac_x(params: PolicyParams, x: Array) -> Array:
    """Full input Jacobian du/dx, shape (n_out, n_in); built from vjp rows."""
    _, cache = _forward_cached(params, x)
    n_out = params.arch.n_out
    rows = []
    e = np.zeros(n_out)
    for k in range(n_out):
        e[:] = 0.0
        e[k] = 1.0
        xb, _ = _vjp_cached(cache, e)
        rows.append(xb)
    return np.stack(rows)


# ---------------------------------------------------------------------------
# Checkpoint I/O: ASCII header followed by little-endian float64 payload.
# ---------------------------------------------------------------------------

def save_policy(path, params: PolicyParams) -> None:
    header = io.StringIO()
    header.write(f"{CHECKPOINT_MAGIC}\n")
    header.write(f"n_in {params.arch.n_in}\n")
    header.write("hidden " + " ".join(str(w) for w in params.arch.hidden) + "\n")
    header.write(f"n_out {params.arch.n_out}\n")
    header.write(f"activation {params.arch.activation}\n")
    header.write("u_lb " + " ".join(f"{v:.17g}" for v in params.u_lb) + "\n")
    header.write("u_ub " + " ".join(f"{v:.17g}" for v in params.u_ub) + "\n")
    header.write(f"n_theta {params.arch.n_theta}\n")
    header.write("end-header\n")
    with open(path, "wb") as f:
        f.write(header.getvalue().encode("ascii"))
        f.write(params.theta.astype("<f8").tobytes())


def load_policy(path) -> PolicyParams:
    with open(path, "rb") as f:
        fields = {}
        magic = f.readline().decode("ascii").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a policy checkpoint (bad magic line {magic!r})")
        while True:
            line = f.readline().decode("ascii").rstrip("\n")
            if line == "end-header":
                break
            if not line:
                raise ValueError("truncated checkpoint header")
            key, _, value = line.partition(" ")
            fields[key] = value
        n_theta = int(fields["n_theta"])
        payload = f.read(8 * n_theta)
        if len(payload) != 8 * n_theta:
            raise ValueError("truncated checkpoint payload")
        theta = np.frombuffer(payload, dtype="<f8").astype(float)
    arch = PolicyArch(
        n_in=int(fields["n_in"]),
        hidden=tuple(int(w) for w in fields["hidden"].split()),
        n_out=int(fields["n_out"]),
        activation=fields["activation"],
    )
    u_lb = np.array([float(v) for v in fields["u_lb"].split()])
    u_ub = np.array([float(v) for v in fields["u_ub"].split()])
    return PolicyParams(theta=theta, arch=arch, u_lb=u_lb, u_ub=u_ub)


def export_policy_text(path, params: PolicyParams) -> None:
    """Plain-text export, one parameter value per line, for diffing."""
    with open(path, "w") as f:
        for v in params.theta:
            f.write(f"{v:.17g}\n")
