"""Small feed-forward networks with hand-derived gradients.

Networks here are plain numpy: a stack of affine layers with ReLU or
identity activations, a forward pass that caches activations, and a
backward pass that produces exact analytic gradients for every weight,
bias and the input.  Gradient correctness is enforced by finite-difference
checks in the test suite; nothing in the package trains a network whose
backward pass has not been checked that way.

Also provides the three training losses used downstream (MSE, the
scaled-cosine cross-entropy over prototypes, and the KL head loss lives
with its network), SGD-with-momentum and Adam updates, and a checkpoint
format (JSON manifest line + raw float64 parameter blob).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numeric import as_vector

_ACTIVATIONS = ("relu", "identity")


def _glorot_limit(fan_in: int, fan_out: int) -> float:
    return np.sqrt(6.0 / (fan_in + fan_out))


class Mlp:
    """Affine layers with ReLU/identity activations and exact backprop.

    ``dims`` is ``[in, hidden..., out]``; ``activations`` has one entry per
    layer (default: ReLU everywhere except an identity output layer).
    Weights are Glorot-uniform, biases zero.  ``forward`` caches the
    activations needed by ``backward``; for graphs that reuse one network
    several times per step, the ``*_cached`` variants thread the cache
    explicitly instead.
    """

    def __init__(self, dims, activations=None, rng: np.random.Generator | None = None):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"need at least one layer with positive dims, got {dims}")
        n_layers = len(dims) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        activations = [str(a) for a in activations]
        if len(activations) != n_layers:
            raise ValueError("one activation per layer required")
        for a in activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.dims = tuple(dims)
        self.activations = tuple(activations)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                lim = _glorot_limit(fan_in, fan_out)
                w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        self.grad_weights = [np.zeros_like(w) for w in self.weights]
        self.grad_biases = [np.zeros_like(b) for b in self.biases]
        self._cache = None

    # -- forward / backward -------------------------------------------------

    def forward_cached(self, x: np.ndarray):
        """Run the network on ``x`` ((d,) or (n, d)); returns (output, cache)."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[1] != self.dims[0]:
            raise ValueError(
                f"input dim {h.shape[1]} does not match first layer {self.dims[0]}"
            )
        inputs = []
        masks = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            pre = h @ w.T + b
            if act == "relu":
                mask = pre > 0
                h = np.where(mask, pre, 0.0)
            else:
                mask = None
            if act == "identity":
                h = pre
            masks.append(mask)
        return (h[0] if squeeze else h), (inputs, masks, squeeze)

    def backward_cached(self, cache, upstream: np.ndarray, accumulate: bool = True):
        """Backpropagate ``upstream`` (same shape as the forward output)
        through ``cache``; adds parameter gradients, returns the input grad."""
        inputs, masks, squeeze = cache
        g = np.asarray(upstream, dtype=np.float64)
        g = g[None, :] if squeeze else g
        if not accumulate:
            self.zero_grads()
        for layer in reversed(range(len(self.weights))):
            if self.activations[layer] == "relu":
                g = np.where(masks[layer], g, 0.0)
            self.grad_weights[layer] += g.T @ inputs[layer]
            self.grad_biases[layer] += g.sum(axis=0)
            g = g @ self.weights[layer]
        return g[0] if squeeze else g

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, self._cache = self.forward_cached(x)
        return out

    def backward(self, upstream: np.ndarray, accumulate: bool = True) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        return self.backward_cached(self._cache, upstream, accumulate=accumulate)

    # -- parameter plumbing --------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def zero_grads(self) -> None:
        for gw, gb in zip(self.grad_weights, self.grad_biases):
            gw[:] = 0.0
            gb[:] = 0.0

    def params_flat(self) -> np.ndarray:
        """Parameters in layer order: W0 (row-major), b0, W1, b1, ..."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def grads_flat(self) -> np.ndarray:
        parts = []
        for gw, gb in zip(self.grad_weights, self.grad_biases):
            parts.append(gw.ravel())
            parts.append(gb)
        return np.concatenate(parts)

    def set_params_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[:] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
            b[:] = flat[pos : pos + b.size]
            pos += b.size


@dataclass
class ScaleParam:
    """Trainable positive scalar that sharpens the cosine softmax."""

    value: float = 10.0

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class TrainingReport:
    """Per-step loss curve plus any named metric curves."""

    losses: tuple[float, ...]
    metrics: dict[str, tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "losses", tuple(float(x) for x in self.losses))
        object.__setattr__(self, "metrics", dict(self.metrics or {}))

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def tail_non_increasing(self, fraction: float = 0.1, rel_tol: float = 1e-3) -> bool:
        """True when the last ``fraction`` of the curve never rises by more
        than ``rel_tol`` relative to the curve's scale."""
        if len(self.losses) < 2:
            return True
        tail = self.losses[-max(2, int(len(self.losses) * fraction)) :]
        scale = max(abs(x) for x in self.losses) + 1e-12
        return all(b - a <= rel_tol * scale for a, b in zip(tail, tail[1:]))

    def to_dict(self) -> dict:
        return {"losses": list(self.losses), "metrics": {k: list(v) for k, v in self.metrics.items()}}


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred, target):
    """Mean squared error over dimensions; returns (loss, dloss/dpred)."""
    pred = as_vector(pred, "pred")
    target = as_vector(target, "target")
    if pred.shape != target.shape:
        raise ValueError("pred and target dims differ")
    diff = pred - target
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / diff.size


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cosine_ce_loss(query_features, prototypes, labels, gamma: float):
    """Mean negative log-softmax of scale-sharpened cosine logits.

    Logits for query ``x`` and prototype ``p_k`` are ``gamma * cos(x, p_k)``.
    Returns ``(loss, dloss/dprototypes, dloss/dgamma)``; queries are treated
    as constants (the feature extractor is frozen upstream).
    """
    q = np.asarray(query_features, dtype=np.float64)
    p = np.asarray(prototypes, dtype=np.float64)
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ValueError("queries and prototypes must be (m, d) and (N, d)")
    if p.shape[0] < 2:
        raise ValueError("need at least two prototypes")
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (q.shape[0],) or labels.min() < 0 or labels.max() >= p.shape[0]:
        raise ValueError("labels must index the prototype list, one per query")
    nq = np.linalg.norm(q, axis=1)
    npr = np.linalg.norm(p, axis=1)
    if np.any(nq == 0) or np.any(npr == 0):
        raise ValueError("zero-norm query or prototype")
    cos = (q @ p.T) / np.outer(nq, npr)
    logits = gamma * cos
    logp = log_softmax(logits)
    m = q.shape[0]
    loss = float(-logp[np.arange(m), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(m), labels] -= 1.0
    dlogits /= m
    dgamma = float(np.sum(dlogits * cos))
    # dcos/dp_k = q / (|q||p_k|) - cos * p_k / |p_k|^2
    a = gamma * dlogits  # (m, N)
    dp = (a.T @ (q / nq[:, None])) / npr[:, None]
    dp -= ((a * cos).sum(axis=0))[:, None] * p / (npr**2)[:, None]
    return loss, dp, dgamma


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

class Optimizer:
    """SGD with momentum, or Adam, over one flat parameter vector.

    Weight decay is the classic L2 form (decay added to the gradient).
    """

    def __init__(
        self,
        kind: str = "sgd_momentum",
        lr: float = 0.01,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.kind = kind
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._velocity = None
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if params.shape != grads.shape:
            raise ValueError("parameter and gradient shapes differ")
        g = grads + self.weight_decay * params
        if self.kind == "sgd_momentum":
            if self._velocity is None:
                self._velocity = np.zeros_like(params)
            self._velocity = self.momentum * self._velocity + g
            return params - self.lr * self._velocity
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._t += 1
        self._m = self.beta1 * self._m + (1 - self.beta1) * g
        self._v = self.beta2 * self._v + (1 - self.beta2) * g**2
        m_hat = self._m / (1 - self.beta1**self._t)
        v_hat = self._v / (1 - self.beta2**self._t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(loss_and_grad, get_flat, set_flat, h: float = 1e-5):
    """Worst-case relative error between analytic and central-difference
    gradients over every parameter.

    ``loss_and_grad()`` must return ``(loss, grads_flat)`` evaluated at the
    current parameters; ``get_flat``/``set_flat`` read and write them.
    """
    base = get_flat().copy()
    _, analytic = loss_and_grad()
    analytic = np.asarray(analytic, dtype=np.float64).copy()
    if analytic.shape != base.shape:
        raise ValueError("gradient vector does not match parameter vector")
    worst = 0.0
    try:
        for i in range(base.size):
            probe = base.copy()
            probe[i] = base[i] + h
            set_flat(probe)
            up, _ = loss_and_grad()
            probe[i] = base[i] - h
            set_flat(probe)
            down, _ = loss_and_grad()
            numeric = (up - down) / (2 * h)
            diff = abs(analytic[i] - numeric)
            scale = max(abs(analytic[i]), abs(numeric))
            if scale < 1e-12 and diff < 1e-12:
                continue
            worst = max(worst, diff / max(scale, 1e-8))
    finally:
        set_flat(base)
    return worst


def grad_check(net: Mlp, loss_fn, x, h: float = 1e-5) -> float:
    """Check ``net``'s parameter gradients for the scalar loss
    ``loss_fn(output) -> (loss, dloss/doutput)`` at input ``x``."""

    def loss_and_grad():
        net.zero_grads()
        out = net.forward(x)
        loss, dout = loss_fn(out)
        net.backward(dout)
        return loss, net.grads_flat()

    return finite_difference_check(loss_and_grad, net.params_flat, net.set_params_flat, h=h)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, module_tag: str, networks: dict[str, Mlp], extras: dict | None = None) -> None:
    """JSON manifest line (module tag, per-network layer dims/activations,
    scalar extras) followed by every network's float64 parameters in layer
    order."""
    manifest = {
        "module": module_tag,
        "networks": [
            {"name": name, "dims": list(net.dims), "activations": list(net.activations)}
            for name, net in networks.items()
        ],
        "extras": {k: float(v) for k, v in (extras or {}).items()},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8"))
        fh.write(b"\n")
        for net in networks.values():
            fh.write(net.params_flat().astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(module_tag, {name: Mlp}, extras)``."""
    with open(path, "rb") as fh:
        try:
            manifest = json.loads(fh.readline().decode("utf-8"))
        except ValueError as exc:
            raise ValueError(f"bad checkpoint manifest in {path}: {exc}") from exc
        networks = {}
        for entry in manifest["networks"]:
            net = Mlp(entry["dims"], entry["activations"])
            blob = fh.read(8 * net.n_params)
            if len(blob) != 8 * net.n_params:
                raise ValueError(f"truncated checkpoint {path}")
            net.set_params_flat(np.frombuffer(blob, dtype="<f8"))
            networks[entry["name"]] = net
        if fh.read(1):
            raise ValueError(f"trailing bytes in checkpoint {path}")
    return manifest["module"], networks, manifest.get("extras", {})
