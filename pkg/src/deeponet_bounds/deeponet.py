"""DeepONet estimator, training on the empirical loss, and error estimators.

A DeepONet maps encoded inputs ``E(u)`` (sensor values) to output functions
``N(u)(y) = tau_0(y) + sum_k beta_k(E(u)) tau_k(y)``. The branch ``beta`` is an
:class:`~deeponet_bounds.neuralnet.Mlp`; the trunk is either a second Mlp producing
``(tau_0, ..., tau_p)`` or a fixed analytic :class:`TrunkBasis`.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .encdec import MCEstimate, PointwiseEncoder, encode_pointwise
from .measures import sample_batch
from .neuralnet import AdamState, Mlp, adam_step, flatten_grads
from .reconstruction import (
    TrunkBasis,
    analytic_trunk,
    dual_basis,
    power_iteration_norm,
    project,
    reconstruction_error_mc,
    reconstruction_lipschitz,
    spectral_lower_bound,
)
from .measures import empirical_spectrum
from .stats import jackknife_of_mean

# Index offsets of the sample streams; training uses indices from 0.
TEST_STREAM = 2**32
MC_STREAM = 2**33
DIVERGENCE_LOSS = 1e6
Y_SAMPLING = ("quadrature", "randomUniform")
LR_SCHEDULES = ("cosine", "constant")


class TrainingDivergedError(RuntimeError):
    """The training loss exceeded the divergence threshold."""


# ---------------------------------------------------------------------------
# datasets


@dataclass
class OperatorDataset:
    """Encoded inputs, oracle outputs on the output nodes, and the sample latents."""

    inputs: np.ndarray
    outputs: np.ndarray
    latents: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    input_values: Optional[np.ndarray] = None

    def __len__(self):
        return self.inputs.shape[0]


def make_dataset(oracle, measure, sensors, n, seed, start=0, keep_inputs=False):
    """Draw ``n`` samples of ``measure`` and apply the encoder and the oracle.

    Parameters
    ----------
    oracle : OperatorSpec
    measure : MeasureSpec
    sensors : SensorSet
        Point-evaluation sensors of the encoder.
    n, seed, start : int
        Samples ``start .. start + n - 1`` of the stream keyed by ``seed``.
    """
    grid = oracle.input_grid()
    values, latents = sample_batch(measure, grid, n, seed, start)
    inputs = PointwiseEncoder(sensors, grid).fit().transform(values.reshape(n, -1))
    outputs = oracle.apply(measure, latents, grid)
    nodes, weights = oracle.output_grid()
    return OperatorDataset(inputs, outputs, latents, nodes, weights, values if keep_inputs else None)


# ---------------------------------------------------------------------------
# estimator


@dataclass
class TrainConfig:
    """Optimization settings; ``y_sampling`` is ``quadrature`` or ``randomUniform``."""

    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    y_sampling: str = "quadrature"
    n_y: int = 1
    lr_schedule: str = "cosine"

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.n_y) < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size, n_y and lr must be positive")
        if self.y_sampling not in Y_SAMPLING:
            raise ValueError(f"y_sampling must be one of {Y_SAMPLING}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")

    def learning_rate(self, epoch):
        """Step size used during ``epoch`` (0-based)."""
        if self.lr_schedule == "constant":
            return self.lr
        return 0.5 * self.lr * (1.0 + np.cos(np.pi * epoch / self.epochs))


class DeepONet(RegressorMixin, BaseEstimator):
    """Branch/trunk operator network on a fixed set of output nodes.

    Parameters
    ----------
    p : int
        Number of trunk members.
    branch_hidden : tuple of int
        Hidden widths of the branch; ``()`` gives an affine branch.
    trunk : {"neural", "fourier", "legendre", "constant"}
        Trunk kind; analytic trunks are fixed and have zero bias.
    trunk_hidden : tuple of int
        Hidden widths of a neural trunk. Its inputs are the output nodes mapped
        affinely onto [-1, 1] per coordinate.
    activation : {"relu", "linear"}
        Branch activation.
    output_nodes, output_weights : ndarray
        Output nodes (n_out, d) and quadrature weights (n_out,).
    T : float
        Output interval length for analytic trunks.
    epochs, batch_size, lr, seed : training settings
    y_sampling : {"quadrature", "randomUniform"}
        Loss weights: quadrature weights at every node, or ``n_y`` random nodes per
        sample weighted by ``|U| / n_y``.
    n_y : int
    lr_schedule : {"cosine", "constant"}
        Cosine annealing from ``lr`` to 0 over the epochs, or a fixed step size.
    solver : {"adam", "lstsq"}
        ``lstsq`` fits an affine branch to the trunk projections of the targets in
        closed form (fixed trunk only).
    """

    def __init__(
        self,
        p=8,
        branch_hidden=(128, 128),
        trunk="neural",
        trunk_hidden=(128, 128),
        activation="relu",
        output_nodes=None,
        output_weights=None,
        T=2 * np.pi,
        epochs=200,
        batch_size=64,
        lr=1e-3,
        seed=0,
        y_sampling="quadrature",
        n_y=1,
        lr_schedule="cosine",
        solver="adam",
    ):
        self.p = p
        self.branch_hidden = branch_hidden
        self.trunk = trunk
        self.trunk_hidden = trunk_hidden
        self.activation = activation
        self.output_nodes = output_nodes
        self.output_weights = output_weights
        self.T = T
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.y_sampling = y_sampling
        self.n_y = n_y
        self.lr_schedule = lr_schedule
        self.solver = solver

    # -- construction ------------------------------------------------------

    def _nodes(self):
        if self.output_nodes is None:
            raise ValueError("output_nodes must be set")
        nodes = np.asarray(self.output_nodes, dtype=float)
        nodes = nodes[:, None] if nodes.ndim == 1 else nodes
        w = self.output_weights
        w = np.full(nodes.shape[0], 1.0) if w is None else np.broadcast_to(np.asarray(w, dtype=float), (nodes.shape[0],))
        return nodes, w.copy()

    def _initialize(self, m):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        self.nodes_, self.weights_ = self._nodes()
        self._set_trunk_scaling()
        self.config_ = TrainConfig(self.epochs, self.batch_size, self.lr, self.seed, self.y_sampling, self.n_y,
                                   self.lr_schedule)
        branch_seed, trunk_seed = np.random.SeedSequence([self.seed, 1]).generate_state(2)
        widths = [m, *self.branch_hidden, self.p]
        self.branch_ = Mlp.init(widths, int(branch_seed), self.activation)
        if self.trunk == "neural":
            self.trunk_net_ = Mlp.init([self.nodes_.shape[1], *self.trunk_hidden, self.p + 1], int(trunk_seed))
            self.fixed_basis_ = None
        else:
            self.trunk_net_ = None
            self.fixed_basis_ = self._analytic_basis()
        self.n_features_in_ = m

    def _set_trunk_scaling(self):
        # affine map of each node coordinate onto [-1, 1] before the trunk net
        lo, hi = self.nodes_.min(axis=0), self.nodes_.max(axis=0)
        self.trunk_shift_ = 0.5 * (lo + hi)
        self.trunk_scale_ = np.where(hi > lo, 2.0 / np.where(hi > lo, hi - lo, 1.0), 1.0)

    def _trunk_inputs(self, nodes):
        return (nodes - self.trunk_shift_) * self.trunk_scale_

    def _analytic_basis(self):
        if self.trunk == "constant":
            if self.p != 1:
                raise ValueError("a constant trunk has p = 1")
            n = self.nodes_.shape[0]
            return TrunkBasis(np.ones((1, n)), None, self.weights_, "fourier")
        return analytic_trunk(self.trunk, self.p, self.nodes_, self.weights_, self.T)

    # -- trunk -------------------------------------------------------------

    def trunk_values(self, nodes=None):
        """``(tau_0, ..., tau_p)`` at the nodes, shape (n, p + 1)."""
        check_is_fitted(self, "branch_")
        if self.trunk_net_ is not None:
            return self.trunk_net_.forward(self._trunk_inputs(self.nodes_ if nodes is None else np.atleast_2d(nodes)))
        if nodes is not None:
            raise ValueError("analytic trunks are tabulated on the output nodes only")
        b = self.fixed_basis_
        return np.column_stack([b.bias, b.members.T])

    def trunk_basis(self):
        """The trunk as a :class:`TrunkBasis` on the output nodes."""
        if self.fixed_basis_ is not None:
            return self.fixed_basis_
        T = self.trunk_values()
        return TrunkBasis(T[:, 1:].T, T[:, 0], self.weights_, "neural")

    # -- evaluation --------------------------------------------------------

    def branch(self, X):
        check_is_fitted(self, "branch_")
        return self.branch_.forward(check_array(X))

    def predict(self, X):
        """Outputs on the output nodes, shape (N, n_out)."""
        T = self.trunk_values()
        return T[:, 0] + self.branch(X) @ T[:, 1:].T

    def eval_field(self, u, sensors):
        """Encode a field at the sensors and evaluate the network on the output nodes."""
        return self.predict(encode_pointwise(u, sensors)[None])[0]

    # -- loss --------------------------------------------------------------

    def _loss_layout(self, n, rng):
        n_out = self.nodes_.shape[0]
        if self.y_sampling == "quadrature":
            idx = np.broadcast_to(np.arange(n_out), (n, n_out))
            w = np.broadcast_to(self.weights_, (n, n_out))
        else:
            idx = rng.integers(0, n_out, size=(n, self.n_y))
            w = np.full((n, self.n_y), self.weights_.sum() / self.n_y)
        return idx, w

    def _loss_and_grad(self, X, Y, idx, w, need_grad=True):
        if self.trunk_net_ is not None:
            T, t_cache = self.trunk_net_.forward_cached(self._trunk_inputs(self.nodes_))
        else:
            T = self.trunk_values()
        B, b_cache = self.branch_.forward_cached(X)
        Tg = T[idx]  # (n, k, p + 1)
        pred = Tg[..., 0] + np.einsum("nkp,np->nk", Tg[..., 1:], B)
        target = np.take_along_axis(Y, idx, axis=1)
        resid = pred - target
        n = X.shape[0]
        loss = float(np.sum(w * resid**2) / n)
        if not need_grad:
            return loss, None
        d_pred = 2.0 * w * resid / n
        d_B = np.einsum("nk,nkp->np", d_pred, Tg[..., 1:])
        grads = flatten_grads(self.branch_.backward(b_cache, d_B))
        if self.trunk_net_ is not None:
            d_T = np.zeros_like(T)
            contrib = np.concatenate([d_pred[..., None], d_pred[..., None] * B[:, None, :]], axis=-1)
            np.add.at(d_T, idx, contrib)
            grads = np.concatenate([grads, flatten_grads(self.trunk_net_.backward(t_cache, d_T))])
        return loss, grads

    def empirical_loss(self, X, Y, idx=None, w=None):
        """``(1/N_u) sum_j sum_k w_k |G(u_j)(y_k) - N(u_j)(y_k)|^2`` over all output nodes
        by default, or over given node indices ``idx`` with weights ``w``."""
        X = check_array(X)
        Y = np.asarray(Y, dtype=float)
        if idx is None:
            idx = np.broadcast_to(np.arange(self.nodes_.shape[0]), Y.shape)
            w = np.broadcast_to(self.weights_, Y.shape)
        return self._loss_and_grad(X, Y, idx, w, need_grad=False)[0]

    def _params(self):
        parts = [self.branch_.flat_params()]
        if self.trunk_net_ is not None:
            parts.append(self.trunk_net_.flat_params())
        return np.concatenate(parts)

    def _set_params(self, theta):
        nb = self.branch_.n_params
        self.branch_.set_flat_params(theta[:nb])
        if self.trunk_net_ is not None:
            self.trunk_net_.set_flat_params(theta[nb:])

    # -- fitting -----------------------------------------------------------

    def fit(self, X, Y, X_test=None, Y_test=None):
        """Train on encoded inputs ``X`` (N, m) and outputs ``Y`` (N, n_out).

        With ``solver="adam"``: deterministic minibatch Adam on the empirical loss;
        ``history_`` holds the training loss (and the quadrature test loss when test
        data are given) after every epoch.
        """
        X = check_array(X, ensure_min_samples=1)
        Y = check_array(Y, ensure_min_samples=1)
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different sample counts")
        self._initialize(X.shape[1])
        if Y.shape[1] != self.nodes_.shape[0]:
            raise ValueError(f"Y has {Y.shape[1]} columns, expected {self.nodes_.shape[0]} output nodes")
        if self.solver == "lstsq":
            return self._fit_lstsq(X, Y)
        if self.solver != "adam":
            raise ValueError(f"unknown solver {self.solver!r}")
        rng = np.random.default_rng([self.seed, 2])
        idx, w = self._loss_layout(X.shape[0], rng)
        theta = self._params()
        state = AdamState.zeros(theta.size, lr=self.lr)
        history = {"train": [], "test": []}
        n = X.shape[0]
        for epoch in range(self.epochs):
            lr = self.config_.learning_rate(epoch)
            order = rng.permutation(n)
            for s in range(0, n, self.batch_size):
                sel = order[s : s + self.batch_size]
                loss, grad = self._loss_and_grad(X[sel], Y[sel], idx[sel], w[sel])
                if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                    raise TrainingDivergedError(f"loss {loss:.3e} at epoch {epoch}, lr {self.lr}")
                theta = adam_step(state, theta, grad, lr)
                self._set_params(theta)
            train_loss = self._loss_and_grad(X, Y, idx, w, need_grad=False)[0]
            if not np.isfinite(train_loss) or train_loss > DIVERGENCE_LOSS:
                raise TrainingDivergedError(f"loss {train_loss:.3e} after epoch {epoch}, lr {self.lr}")
            history["train"].append(train_loss)
            if X_test is not None:
                history["test"].append(self.empirical_loss(X_test, Y_test))
        self.history_ = history
        return self

    def _fit_lstsq(self, X, Y):
        if self.branch_hidden:
            raise ValueError("lstsq needs an affine branch (branch_hidden=())")
        if self.trunk_net_ is not None:
            raise ValueError("lstsq needs a fixed analytic trunk")
        proj = dual_basis(self.fixed_basis_)
        coeffs = project(Y, proj)
        A = np.column_stack([X, np.ones(X.shape[0])])
        sol, *_ = np.linalg.lstsq(A, coeffs, rcond=None)
        self.branch_ = Mlp([(sol[:-1].T, sol[-1])], "linear")
        self.history_ = {"train": [self.empirical_loss(X, Y)], "test": []}
        return self

    def to_checkpoint(self):
        """JSON-ready record: Mlp checkpoints plus trunk and output-node descriptors."""
        check_is_fitted(self, "branch_")
        trunk = self.trunk_net_.to_dict() if self.trunk_net_ is not None else {"kind": self.trunk, "p": self.p, "T": self.T}
        return {
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()
                       if k not in ("output_nodes", "output_weights")},
            "branch": self.branch_.to_dict(),
            "trunk": trunk,
            "output": {"nodes": self.nodes_.tolist(), "weights": self.weights_.tolist()},
        }

    @classmethod
    def from_checkpoint(cls, data):
        params = dict(data["params"])
        for key in ("branch_hidden", "trunk_hidden"):
            params[key] = tuple(params[key])
        net = cls(**params, output_nodes=np.asarray(data["output"]["nodes"]),
                  output_weights=np.asarray(data["output"]["weights"]))
        net.nodes_, net.weights_ = net._nodes()
        net._set_trunk_scaling()
        net.branch_ = Mlp.from_dict(data["branch"])
        if "layers" in data["trunk"]:
            net.trunk_net_ = Mlp.from_dict(data["trunk"])
            net.fixed_basis_ = None
        else:
            net.trunk_net_ = None
            net.fixed_basis_ = net._analytic_basis()
        net.n_features_in_ = net.branch_.d_in
        return net

    def score(self, X, Y, sample_weight=None):
        """Negative empirical quadrature loss (larger is better)."""
        return -self.empirical_loss(X, Y)


def train(net, oracle, measure, sensors, n_train, n_test=None, data_seed=0):
    """Generate data from the oracle and fit ``net``.

    Training samples use indices ``0..n_train-1`` of the stream keyed by
    ``data_seed``; test samples use the disjoint index range starting at
    :data:`TEST_STREAM`.

    Returns
    -------
    net : DeepONet
        The fitted estimator (``net.history_`` holds the loss history).
    train_data, test_data : OperatorDataset
    """
    train_data = make_dataset(oracle, measure, sensors, n_train, data_seed)
    test_data = make_dataset(oracle, measure, sensors, n_test, data_seed, TEST_STREAM) if n_test else None
    nodes, weights = oracle.output_grid()
    net.set_params(output_nodes=nodes, output_weights=weights)
    if test_data is None:
        net.fit(train_data.inputs, train_data.outputs)
    else:
        net.fit(train_data.inputs, train_data.outputs, test_data.inputs, test_data.outputs)
    return net, train_data, test_data


# ---------------------------------------------------------------------------
# error estimators


def _norms(residual, weights, norm):
    if norm == "L2":
        return np.sqrt(np.maximum(np.sum(weights * residual**2, axis=-1), 0.0))
    if norm == "L1":
        return np.sum(weights * np.abs(residual), axis=-1)
    raise ValueError("norm must be 'L2' or 'L1'")


def total_error_mc(net, data, norm="L2"):
    """Total error over a held-out dataset.

    ``L2``: root-mean-square of the L2 output errors; ``L1``: mean of the L1 output
    errors. Both come with jackknife standard errors.
    """
    if len(data) < 2:
        raise ValueError("need at least 2 samples")
    errors = _norms(net.predict(data.inputs) - data.outputs, data.weights, norm)
    if norm == "L2":
        return MCEstimate.from_errors(errors)
    est, se = jackknife_of_mean(errors)
    return MCEstimate(float(est), float(se), errors.size, errors)


def fresh_mc_dataset(oracle, measure, sensors, n_mc, seed, keep_inputs=False):
    """Samples from the Monte-Carlo stream, disjoint from training and test streams."""
    return make_dataset(oracle, measure, sensors, n_mc, seed, MC_STREAM, keep_inputs)


@dataclass
class ErrorReport:
    """Error components with jackknife standard errors.

    ``bound`` is ``lip_g * lip_rp * encoding + lip_r * approximation + reconstruction``
    with measured Lipschitz surrogates; ``lip_g`` is heuristic.
    """

    total: float
    total_stderr: float
    total_l1: float
    total_l1_stderr: float
    encoding: float
    encoding_stderr: float
    approximation: float
    approximation_stderr: float
    reconstruction: float
    reconstruction_stderr: float
    lower_bound: float
    lip_g: float
    lip_r: float
    lip_rp: float
    bound: float
    bound_satisfied: bool
    n_samples: int

    def as_dict(self):
        return asdict(self)


def lipschitz_surrogate(inputs, outputs, input_weight, output_weights):
    """Largest ratio ``||G(u_i) - G(u_j)|| / ||u_i - u_j||`` over consecutive sample pairs."""
    du = np.sqrt(input_weight * np.sum((inputs[1:] - inputs[:-1]) ** 2, axis=1))
    dv = np.sqrt(np.sum(output_weights * (outputs[1:] - outputs[:-1]) ** 2, axis=1))
    ok = du > 0
    return float(np.max(dv[ok] / du[ok])) if np.any(ok) else 0.0


def error_decomposition(net, oracle, measure, sensors, decoder, n_mc, seed):
    """Monte-Carlo encoding, approximation and reconstruction errors of a fitted net.

    Parameters
    ----------
    decoder : object with ``decode(V, grid)``
        Decoder compatible with the sensors (DFT or pseudoinverse).

    Returns
    -------
    ErrorReport
    """
    if decoder is None:
        raise ValueError("error_decomposition needs a decoder")
    data = fresh_mc_dataset(oracle, measure, sensors, n_mc, seed, keep_inputs=True)
    grid = oracle.input_grid()
    values = data.input_values.reshape(n_mc, -1)
    decoded = decoder.decode(data.inputs, grid).reshape(n_mc, -1)
    enc = MCEstimate.from_errors(np.sqrt(grid.weight * np.sum((decoded - values) ** 2, axis=1)))

    basis = net.trunk_basis()
    proj = dual_basis(basis)
    target = project(oracle.apply_values(decoded.reshape((n_mc,) + grid.shape), grid), proj)
    approx = MCEstimate.from_errors(np.linalg.norm(net.branch(data.inputs) - target, axis=1))
    rec = reconstruction_error_mc(data.outputs, basis, proj)
    tot = total_error_mc(net, data, "L2")
    tot1 = total_error_mc(net, data, "L1")

    spectrum = empirical_spectrum(data.outputs, weights=data.weights)
    lower = spectral_lower_bound(spectrum.eigenvalues, basis.p, spectrum.total_variance)
    lip_g = lipschitz_surrogate(values, data.outputs, grid.weight, data.weights)
    lip_r = reconstruction_lipschitz(basis)
    dual_gram = (proj.duals * proj.weights) @ proj.duals.T
    lip_rp = float(np.sqrt(power_iteration_norm(_sym_sqrt(basis.gram()) @ dual_gram @ _sym_sqrt(basis.gram()))))
    bound = lip_g * lip_rp * enc.estimate + lip_r * approx.estimate + rec.estimate
    return ErrorReport(
        tot.estimate, tot.stderr, tot1.estimate, tot1.stderr,
        enc.estimate, enc.stderr, approx.estimate, approx.stderr, rec.estimate, rec.stderr,
        lower, lip_g, lip_r, lip_rp, bound, bool(tot.estimate <= bound), n_mc,
    )


def _sym_sqrt(G):
    vals, vecs = np.linalg.eigh(G)
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


# ---------------------------------------------------------------------------
# generalization


def population_loss(net, data):
    """Quadrature empirical loss on a large held-out dataset (population surrogate)."""
    return net.empirical_loss(data.inputs, data.outputs)


def generalization_gap(make_net, oracle, measure, sensors, n_values, seeds, n_test=None, n_reference=None, data_seed=0):
    """Median generalization gap over seeds for every training-set size.

    Each run trains ``make_net(seed)`` on ``N`` samples drawn from stream ``(data_seed
    + seed)`` and reports its population-loss surrogate minus that of a reference
    run trained on ``n_reference`` samples.

    Returns
    -------
    rows : list of dict
        One row per (N, seed) with ``loss`` and ``gap``.
    summary : dict
        ``N -> (median gap, jackknife stderr of the mean gap)``.
    reference_loss : float
    """
    n_values = sorted(n_values)
    n_test = 10 * max(n_values) if n_test is None else n_test
    if n_test < 10 * max(n_values):
        raise ValueError("test set must hold at least 10 * max(N) samples")
    n_reference = n_test if n_reference is None else n_reference
    test = make_dataset(oracle, measure, sensors, n_test, data_seed, TEST_STREAM)
    nodes, weights = oracle.output_grid()

    ref_net = make_net(seeds[0])
    ref_net.set_params(output_nodes=nodes, output_weights=weights)
    ref_data = make_dataset(oracle, measure, sensors, n_reference, data_seed, MC_STREAM)
    ref_net.fit(ref_data.inputs, ref_data.outputs)
    ref_loss = population_loss(ref_net, test)

    rows = []
    for N in n_values:
        for seed in seeds:
            data = make_dataset(oracle, measure, sensors, N, data_seed + 1 + seed)
            net = make_net(seed)
            net.set_params(output_nodes=nodes, output_weights=weights)
            net.fit(data.inputs, data.outputs)
            loss = population_loss(net, test)
            rows.append({"N": N, "seed": seed, "loss": loss, "gap": loss - ref_loss})
    summary = {}
    for N in n_values:
        gaps = np.array([r["gap"] for r in rows if r["N"] == N])
        se = jackknife_of_mean(gaps)[1] if gaps.size > 1 else 0.0
        summary[N] = (float(np.median(gaps)), float(se))
    return rows, summary, ref_loss
