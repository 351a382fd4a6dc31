"""Feedforward ReLU networks, exact backpropagation and Adam.

Explicit ReLU constructions (shrink, indicator, cubic nonlinearity, emulation of
the Allen-Cahn scheme) live in :mod:`deeponet_bounds.gadgets`.
"""

import json
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "linear")


def relu(z):
    return np.maximum(z, 0.0)


class Mlp:
    """Alternating affine maps and activations, final layer affine.

    Parameters
    ----------
    layers : list of (W, b)
        ``W`` has shape (d_out, d_in) for every layer.
    activation : {"relu", "linear"}
        Hidden activation; ``linear`` gives an affine network.
    """

    def __init__(self, layers, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        self.layers = [(np.array(W, dtype=float, ndmin=2), np.array(b, dtype=float).ravel()) for W, b in layers]
        self.activation = activation
        for i, (W, b) in enumerate(self.layers):
            if b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bias length {b.size} does not match {W.shape[0]} rows")
            if i and W.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i}: expects {W.shape[1]} inputs, previous layer gives {self.layers[i - 1][0].shape[0]}")

    @classmethod
    def init(cls, widths, seed=0, activation="relu"):
        """He-initialized network with zero biases, deterministic in ``seed``."""
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError("widths must list at least input and output sizes, all positive")
        rng = np.random.default_rng(seed)
        layers = []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            layers.append((rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in)), np.zeros(d_out)))
        return cls(layers, activation)

    # -- structure ---------------------------------------------------------

    @property
    def widths(self):
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    @property
    def d_in(self):
        return self.layers[0][0].shape[1]

    @property
    def d_out(self):
        return self.layers[-1][0].shape[0]

    @property
    def depth(self):
        """Number of hidden layers."""
        return len(self.layers) - 1

    @property
    def size(self):
        """Number of nonzero weights and biases."""
        return int(sum(np.count_nonzero(W) + np.count_nonzero(b) for W, b in self.layers))

    @property
    def n_params(self):
        return int(sum(W.size + b.size for W, b in self.layers))

    def flat_params(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def set_flat_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        pos = 0
        layers = []
        for W, b in self.layers:
            nW = W.size
            layers.append((theta[pos : pos + nW].reshape(W.shape).copy(), theta[pos + nW : pos + nW + b.size].copy()))
            pos += nW + b.size
        self.layers = layers
        return self

    def copy(self):
        return Mlp([(W.copy(), b.copy()) for W, b in self.layers], self.activation)

    # -- evaluation --------------------------------------------------------

    def _act(self, z):
        return relu(z) if self.activation == "relu" else z

    def forward(self, x):
        """Evaluate on a vector (d_in,) or a batch (N, d_in)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None] if single else x
        if h.shape[-1] != self.d_in:
            raise ValueError(f"input has {h.shape[-1]} features, network expects {self.d_in}")
        for i, (W, b) in enumerate(self.layers):
            h = h @ W.T + b
            if i < self.depth:
                h = self._act(h)
        return h[0] if single else h

    __call__ = forward

    def forward_cached(self, X):
        """Forward pass keeping pre-activations for :meth:`backward`."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        acts = [X]
        pre = []
        h = X
        for i, (W, b) in enumerate(self.layers):
            z = h @ W.T + b
            pre.append(z)
            h = self._act(z) if i < self.depth else z
            acts.append(h)
        return h, (acts, pre)

    def backward(self, cache, d_out):
        """Gradients of ``sum(d_out * output)`` with respect to every ``(W, b)``.

        The ReLU derivative at 0 is taken as 0.
        """
        acts, pre = cache
        grads = [None] * len(self.layers)
        delta = np.asarray(d_out, dtype=float)
        for i in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[i]
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
            if i > 0:
                delta = delta @ W
                if self.activation == "relu":
                    delta = delta * (pre[i - 1] > 0)
        return grads

    def input_gradient(self, cache, d_out):
        acts, pre = cache
        delta = np.asarray(d_out, dtype=float)
        for i in range(len(self.layers) - 1, -1, -1):
            delta = delta @ self.layers[i][0]
            if i > 0 and self.activation == "relu":
                delta = delta * (pre[i - 1] > 0)
        return delta

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "widths": self.widths,
            "activation": self.activation,
            "layers": [{"W": W.ravel().tolist(), "b": b.tolist()} for W, b in self.layers],
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        widths = data["widths"]
        if len(data["layers"]) != len(widths) - 1:
            raise ValueError("layer count does not match widths")
        layers = []
        for (d_in, d_out), layer in zip(zip(widths[:-1], widths[1:]), data["layers"]):
            W = np.asarray(layer["W"], dtype=float)
            if W.size != d_in * d_out:
                raise ValueError("weight array does not match widths")
            layers.append((W.reshape(d_out, d_in), np.asarray(layer["b"], dtype=float)))
        return cls(layers, data.get("activation", "relu"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def flatten_grads(grads):
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def mse_loss_and_grad(net, X, Y):
    """Mean squared error over all output entries and its flat parameter gradient."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out, cache = net.forward_cached(X)
    resid = out - Y
    loss = float(np.mean(resid**2))
    grads = net.backward(cache, 2.0 * resid / resid.size)
    return loss, flatten_grads(grads)


@dataclass
class AdamState:
    """First/second moment estimates and step counter for Adam."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, lr, betas[0], betas[1], eps)


def adam_step(state, theta, grad, lr=None):
    """One bias-corrected Adam update; mutates ``state`` and returns the new parameters."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape or np.shape(theta) != grad.shape:
        raise ValueError("parameter, gradient and state shapes differ")
    lr = state.lr if lr is None else lr
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# network algebra (exact, used by the explicit constructions)


def affine_net(W, b=None):
    W = np.array(W, dtype=float, ndmin=2)
    return Mlp([(W, np.zeros(W.shape[0]) if b is None else b)])


def identity_net(d, depth=1):
    """ReLU network of the given depth realizing the identity via ``x = relu(x) - relu(-x)``."""
    if depth < 1:
        return affine_net(np.eye(d))
    I = np.eye(d)
    layers = [(np.vstack([I, -I]), np.zeros(2 * d))]
    layers += [(np.eye(2 * d), np.zeros(2 * d)) for _ in range(depth - 1)]
    layers.append((np.hstack([I, -I]), np.zeros(d)))
    return Mlp(layers)


def compose(outer, inner):
    """``outer o inner``, merging the last affine map of ``inner`` into the first of ``outer``."""
    if outer.d_in != inner.d_out:
        raise ValueError(f"cannot compose: {inner.d_out} outputs into {outer.d_in} inputs")
    Wi, bi = inner.layers[-1]
    Wo, bo = outer.layers[0]
    merged = (Wo @ Wi, Wo @ bi + bo)
    return Mlp(inner.layers[:-1] + [merged] + outer.layers[1:])


def pad_depth(net, depth):
    """Extend with identity layers to exactly ``depth`` hidden layers."""
    extra = depth - net.depth
    if extra < 0:
        raise ValueError("cannot reduce depth")
    if extra == 0:
        return net
    return compose(identity_net(net.d_out, extra), net)


def _block_diag(blocks):
    rows = sum(B.shape[0] for B in blocks)
    cols = sum(B.shape[1] for B in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for B in blocks:
        out[r : r + B.shape[0], c : c + B.shape[1]] = B
        r += B.shape[0]
        c += B.shape[1]
    return out


def stack(nets):
    """Networks acting on disjoint slices of the input; outputs concatenated."""
    depth = max(n.depth for n in nets)
    nets = [pad_depth(n, depth) for n in nets]
    layers = []
    for i in range(depth + 1):
        layers.append((_block_diag([n.layers[i][0] for n in nets]), np.concatenate([n.layers[i][1] for n in nets])))
    return Mlp(layers)


def parallel(nets):
    """Networks sharing one input; outputs concatenated."""
    d_in = nets[0].d_in
    if any(n.d_in != d_in for n in nets):
        raise ValueError("parallel networks must share the input dimension")
    s = stack(nets)
    W0, b0 = s.layers[0]
    tiled = np.vstack([np.eye(d_in)] * len(nets))
    return Mlp([(W0 @ tiled, b0)] + s.layers[1:])
