"""Explicit ReLU network constructions with certified contracts.

Every constructor checks its network against the defining property before
returning it, so a :class:`GadgetNet` in hand has passed its certificate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .neuralnet import Mlp, affine_net, compose, identity_net, parallel, stack
from .oracles import resolvent_matrix
from .fourier import TWO_PI


class CertificateError(RuntimeError):
    """A constructed network does not meet its contract."""


@dataclass
class GadgetNet:
    """A ReLU network together with the contract it was certified against.

    Attributes
    ----------
    net : Mlp
    kind : str
        ``shrink``, ``indicator``, ``cubic`` or ``acEmulator``.
    params : dict
        Construction parameters.
    tolerance : float
        Guaranteed error of the contract (sup or L1, depending on ``kind``).
    """

    net: Mlp
    kind: str
    params: dict = field(default_factory=dict)
    tolerance: float = 0.0

    def __call__(self, x):
        return self.net.forward(x)

    def scalar(self, x):
        """Evaluate a scalar-to-scalar gadget elementwise on an array."""
        x = np.asarray(x, dtype=float)
        return self.net.forward(x.reshape(-1, 1)).reshape(x.shape)


# ---------------------------------------------------------------------------
# shrink


def shrink_net():
    """``shrink(y) = 1 - relu(2 - relu(1 + y))``, the clamp to [-1, 1]."""
    net = Mlp([([[1.0]], [1.0]), ([[-1.0]], [2.0]), ([[-1.0]], [1.0])])
    g = GadgetNet(net, "shrink", {}, 0.0)
    probe = np.array([-5.0, -2.0, -1.0, -0.4, 0.0, 0.3, 1.0, 5.0])
    if np.max(np.abs(g.scalar(probe) - np.clip(probe, -1.0, 1.0))) > 1e-15:
        raise CertificateError("shrink network is not the clamp")
    return g


# ---------------------------------------------------------------------------
# indicator


def indicator_net(a, b, eps):
    """Trapezoid approximation of the indicator of [a, b] with ramps of width ``eps/2``.

    Zero outside [a, b], one on [a + eps/2, b - eps/2]; the exact L1 distance to the
    indicator is ``eps/2``, within the ``eps`` budget.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not 0 < eps < b - a:
        raise ValueError("need 0 < eps < b - a")
    h = 0.5 * eps
    W1 = np.ones((4, 1))
    b1 = np.array([-a, -a - h, -b + h, -b])
    W2 = np.array([[1.0, -1.0, -1.0, 1.0]]) / h
    g = GadgetNet(Mlp([(W1, b1), (W2, [0.0])]), "indicator", {"a": a, "b": b, "eps": eps}, eps)
    dist = indicator_l1_distance(g)
    if dist > eps * (1 + 1e-12):
        raise CertificateError(f"L1 distance {dist} exceeds {eps}")
    return g


def _abs_linear_integral(x0, x1, y0, y1):
    # exact integral of |linear| between (x0, y0) and (x1, y1)
    L = x1 - x0
    if y0 * y1 >= 0:
        return 0.5 * L * (abs(y0) + abs(y1))
    return 0.5 * L * (y0 * y0 + y1 * y1) / (abs(y0) + abs(y1))


def indicator_l1_distance(gadget):
    """Exact L1 distance between an indicator gadget and the indicator of [a, b]."""
    a, b = gadget.params["a"], gadget.params["b"]
    W1, b1 = gadget.net.layers[0]
    kinks = -b1 / W1[:, 0]
    pad = abs(b - a) + 1.0
    xs = np.unique(np.concatenate([kinks, [a, b, a - pad, b + pad]]))
    total = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        mid = 0.5 * (x0 + x1)
        target = 1.0 if a <= mid <= b else 0.0
        y = gadget.scalar(np.array([x0, x1])) - target
        total += _abs_linear_integral(x0, x1, y[0], y[1])
    return total


# ---------------------------------------------------------------------------
# squaring, products and the cubic nonlinearity


def _sq01_net(m):
    # f_m(x) = x - sum_{s<=m} 2^{-2s} g_s(x) for x in [0, 1]; hidden units
    # (f_{s-1}, relu(g_{s-1}), relu(g_{s-1} - 1/2)) are nonnegative.
    layers = [(np.ones((3, 1)), np.array([0.0, 0.0, -0.5]))]
    for s in range(1, m):
        c = 2.0 ** (-2 * s)
        W = np.array([[1.0, -2.0 * c, 4.0 * c], [0.0, 2.0, -4.0], [0.0, 2.0, -4.0]])
        layers.append((W, np.array([0.0, 0.0, -0.5])))
    c = 2.0 ** (-2 * m)
    layers.append((np.array([[1.0, -2.0 * c, 4.0 * c]]), np.zeros(1)))
    return Mlp(layers)


def square_net(M, m):
    """``x^2`` on [-M, M] as ``M^2 f_m(|x| / M)``; error at most ``M^2 4^{-m-1}``."""
    abs_net = Mlp([(np.array([[1.0], [-1.0]]), np.zeros(2)), (np.array([[1.0, 1.0]]) / M, np.zeros(1))])
    return compose(affine_net([[M * M]]), compose(_sq01_net(m), abs_net))


def product_net(m):
    """``xi * s`` for ``xi`` in [-1, 1], ``s`` in [0, 1] by polarization of squares."""
    sq_sum = compose(square_net(2.0, m), affine_net([[1.0, 1.0]]))
    sq_xi = compose(square_net(1.0, m), affine_net([[1.0, 0.0]]))
    sq_s = compose(square_net(1.0, m), affine_net([[0.0, 1.0]]))
    return compose(affine_net([[0.5, -0.5, -0.5]]), parallel([sq_sum, sq_xi, sq_s]))


def clip_net():
    """``relu(x + 1) - relu(x - 1) - 1``, the clamp to [-1, 1] with one hidden layer."""
    return Mlp([(np.array([[1.0], [1.0]]), np.array([1.0, -1.0])), (np.array([[1.0, -1.0]]), np.array([-1.0]))])


def cubic_depth(eps):
    """Sawtooth depth ``ceil(log2(1/eps)) + 2``."""
    return int(math.ceil(math.log2(1.0 / eps))) + 2


def cubic_target(eta):
    return eta - eta**3


def cubic_net(eps, certify=True):
    """ReLU approximation ``g_eps`` of ``eta - eta^3`` on [-1, 1] with sup error below ``eps``.

    Input and output are clamped to [-1, 1]. The square ``c^2`` and the product
    ``c * c^2`` use sawtooth squaring of depth :func:`cubic_depth`, so depth and size
    grow like ``log(1/eps)``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    m = cubic_depth(eps)
    with_square = parallel([identity_net(1, 1), square_net(1.0, m)])
    carry = compose(identity_net(1, 1), affine_net([[1.0, 0.0]]))
    with_product = parallel([carry, product_net(m)])
    core = compose(affine_net([[1.0, -1.0]]), compose(with_product, with_square))
    net = compose(clip_net(), compose(core, clip_net()))
    g = GadgetNet(net, "cubic", {"eps": eps, "sawtooth_depth": m}, eps)
    if certify:
        grid = np.linspace(-1.0, 1.0, 10001)
        err = float(np.max(np.abs(g.scalar(grid) - cubic_target(grid))))
        if err > eps:
            raise CertificateError(f"sup error {err:.3e} exceeds eps = {eps}")
        g.params["measured_sup_error"] = err
    return g


def measured_lipschitz(gadget, lo=-1.0, hi=1.0, n=10001):
    """Largest difference quotient of a scalar gadget on a uniform grid."""
    x = np.linspace(lo, hi, n)
    y = gadget.scalar(x)
    return float(np.max(np.abs(np.diff(y)) / np.diff(x)))


# ---------------------------------------------------------------------------
# Allen-Cahn scheme emulation


def ac_reference_recursion(U0, dt, n, g, dx=None):
    """``U <- R (U + dt g(U))`` applied ``n`` times with the dense resolvent ``R``."""
    U = np.array(U0, dtype=float)
    m = U.shape[-1]
    R = resolvent_matrix(m, dt, TWO_PI / m if dx is None else dx)
    for _ in range(n):
        U = (U + dt * g(U)) @ R.T
    return U


def ac_emulator_net(m, n, dt, eps, dx=None, certify=True):
    """ReLU network mapping ``U^0`` to ``U^n`` of the scheme with ``f`` replaced by ``g_eps``.

    Each of the ``n`` blocks applies ``g_eps`` entrywise next to an identity carry and
    ends with the dense affine map ``R [dt I, I]``; adjacent affine maps are merged.
    """
    if not 0 < dt <= 0.5:
        raise ValueError("dt must lie in (0, 1/2]")
    if n < 1 or m < 2:
        raise ValueError("need n >= 1 steps and m >= 2 grid points")
    dx = TWO_PI / m if dx is None else dx
    g = cubic_net(eps)
    entrywise = stack([g.net] * m)
    carry = identity_net(m, entrywise.depth)
    R = resolvent_matrix(m, dt, dx)
    step = affine_net(R @ np.hstack([dt * np.eye(m), np.eye(m)]))
    block = compose(step, parallel([entrywise, carry]))
    net = block
    for _ in range(n - 1):
        net = compose(block, net)
    gadget = GadgetNet(net, "acEmulator", {"m": m, "n": n, "dt": dt, "eps": eps, "dx": dx}, eps)
    if certify:
        U0 = np.random.default_rng(0).uniform(-1.0, 1.0, size=(4, m))
        ref = ac_reference_recursion(U0, dt, n, g.scalar, dx)
        dev = float(np.max(np.abs(net.forward(U0) - ref)))
        if dev > 1e-12:
            raise CertificateError(f"emulator deviates from its recursion by {dev:.3e}")
    gadget.cubic = g
    return gadget
