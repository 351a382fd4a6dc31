import math

import numpy as np
import pytest

from deeponet_bounds.deeponet import (
    DeepONet,
    OperatorDataset,
    TrainConfig,
    TrainingDivergedError,
    error_decomposition,
    fresh_mc_dataset,
    generalization_gap,
    make_dataset,
    total_error_mc,
    train,
)
from deeponet_bounds.encdec import DFTDecoder, SensorSet
from deeponet_bounds.measures import MeasureSpec, PeriodicGrid, empirical_spectrum, evaluate
from deeponet_bounds.neuralnet import Mlp
from deeponet_bounds.oracles import OperatorSpec
from deeponet_bounds.reconstruction import (
    analytic_trunk,
    dual_basis,
    project,
    reconstruct,
    reconstruction_error_mc,
    spectral_lower_bound,
)

PERIODIC = PeriodicGrid(32)


def periodic_net(**kw):
    kw.setdefault("output_nodes", PERIODIC.axis)
    kw.setdefault("output_weights", PERIODIC.weight)
    return DeepONet(**kw)


class IdentityOperator:
    """G(u) = u on a small periodic grid."""

    def __init__(self, n):
        self.grid = PeriodicGrid(n)

    def input_grid(self):
        return self.grid

    def output_grid(self):
        return self.grid.axis[:, None], np.full(self.grid.n, self.grid.weight)

    def apply(self, spec, latents, input_grid=None):
        return evaluate(spec, np.atleast_2d(latents), self.grid.points()).reshape(-1, self.grid.n)

    def apply_values(self, values, grid=None):
        return np.asarray(values).reshape(-1, self.grid.n)


# -- evaluation ---------------------------------------------------------------


def test_zero_branch_gives_trunk_bias():
    net = periodic_net(p=3, branch_hidden=(8,), trunk_hidden=(8,), epochs=1)
    X = np.random.default_rng(0).normal(size=(4, 5))
    net.fit(X, np.zeros((4, PERIODIC.n)))
    for W, b in net.branch_.layers:
        W[:] = 0
        b[:] = 0
    tau0 = net.trunk_values()[:, 0]
    np.testing.assert_allclose(net.predict(X), np.broadcast_to(tau0, (4, PERIODIC.n)), atol=0)


def test_fourier_trunk_with_exact_coefficients_is_projection():
    p = 7
    net = periodic_net(p=p, trunk="fourier", branch_hidden=(), solver="lstsq")
    rng = np.random.default_rng(1)
    V = np.sin(PERIODIC.axis[None] * rng.integers(1, 6, size=(6, 1))) + rng.normal(size=(6, 1))
    basis = analytic_trunk("fourier", p, PERIODIC.axis, PERIODIC.weight)
    coeffs = project(V, dual_basis(basis))
    net.fit(coeffs, V)
    net.branch_ = Mlp([(np.eye(p), np.zeros(p))], "linear")
    np.testing.assert_allclose(net.predict(coeffs), reconstruct(coeffs, basis), atol=1e-12)


def test_linear_in_final_branch_layer():
    net = periodic_net(p=4, branch_hidden=(16,), trunk_hidden=(16,), epochs=1)
    X = np.random.default_rng(2).normal(size=(5, 3))
    net.fit(X, np.random.default_rng(3).normal(size=(5, PERIODIC.n)))
    tau0 = net.trunk_values()[:, 0]
    before = net.predict(X) - tau0
    W, b = net.branch_.layers[-1]
    net.branch_.layers[-1] = (2 * W, 2 * b)
    np.testing.assert_allclose(net.predict(X) - tau0, 2 * before, atol=1e-12)


def test_eval_field_matches_reconstruct():
    sensors = SensorSet.equispaced(8)
    net = periodic_net(p=5, branch_hidden=(16,), trunk_hidden=(16,), epochs=1)
    X = np.random.default_rng(4).normal(size=(3, 8))
    net.fit(X, np.zeros((3, PERIODIC.n)))
    u = lambda x: np.cos(x) + 0.1 * x
    out = net.eval_field(u, sensors)
    basis = net.trunk_basis()
    coeff = net.branch(u(sensors.locations[:, 0])[None])
    np.testing.assert_allclose(out, reconstruct(coeff, basis)[0], atol=1e-12)


# -- empirical loss -----------------------------------------------------------


def test_loss_zero_when_exact():
    net = periodic_net(p=2, branch_hidden=(4,), trunk_hidden=(4,), epochs=1)
    X = np.random.default_rng(0).normal(size=(6, 3))
    net.fit(X, np.zeros((6, PERIODIC.n)))
    # exact up to rounding in the einsum contraction
    assert net.empirical_loss(X, net.predict(X)) <= 1e-25


def test_loss_constant_offset_random_points():
    net = periodic_net(p=2, branch_hidden=(4,), trunk_hidden=(4,), epochs=1, y_sampling="randomUniform", n_y=5)
    X = np.random.default_rng(0).normal(size=(6, 3))
    net.fit(X, np.zeros((6, PERIODIC.n)))
    c = 0.7
    idx, w = net._loss_layout(6, np.random.default_rng(9))
    loss = net.empirical_loss(X, net.predict(X) + c, idx, w)
    assert loss == pytest.approx(c * c * 2 * np.pi, rel=1e-12)


def test_quadrature_loss_second_order():
    g = lambda t: np.exp(t) * np.sin(3 * t)

    def loss(n):
        t = np.linspace(0, 1, n + 1)
        w = np.full(n + 1, 1 / n)
        w[[0, -1]] /= 2
        net = DeepONet(p=1, trunk="constant", branch_hidden=(), activation="linear", solver="lstsq",
                       output_nodes=t, output_weights=w)
        X = np.zeros((2, 1))
        net.fit(X, np.zeros((2, n + 1)))
        return net.empirical_loss(X, np.stack([g(t)] * 2))

    dense = loss(64 * 32)
    errs = [abs(loss(n) - dense) for n in (16, 32)]
    assert 3.0 <= errs[0] / errs[1] <= 5.0


# -- training -----------------------------------------------------------------


def test_zero_target_trains_to_zero():
    X = np.random.default_rng(0).normal(size=(32, 4))
    net = periodic_net(p=1, branch_hidden=(4,), trunk_hidden=(4,), epochs=200, batch_size=32, lr=1e-1)
    net.fit(X, np.zeros((32, PERIODIC.n)))
    assert net.history_["train"][-1] <= 1e-6


def test_training_is_bitwise_reproducible():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(40, 5)), rng.normal(size=(40, PERIODIC.n))
    runs = [periodic_net(p=3, branch_hidden=(8,), trunk_hidden=(8,), epochs=5, batch_size=16, seed=4).fit(X, Y)
            for _ in range(2)]
    assert runs[0].history_ == runs[1].history_
    assert runs[0]._params().tobytes() == runs[1]._params().tobytes()


def test_divergence_aborts():
    rng = np.random.default_rng(2)
    X, Y = 1e3 * rng.normal(size=(20, 3)), 1e3 * rng.normal(size=(20, PERIODIC.n))
    with pytest.raises(TrainingDivergedError, match="loss"):
        periodic_net(p=2, branch_hidden=(8,), trunk_hidden=(8,), epochs=50, lr=1.0).fit(X, Y)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(y_sampling="grid")


def _linear_functional_setup(n):
    oracle = OperatorSpec("IntegralFunctional", {"gridN": 16})
    measure = MeasureSpec("GaussianKernel", dim=2, ell=0.5 * np.pi)
    sensors = SensorSet.equispaced(4, dim=2)
    return oracle, measure, sensors


def test_linear_branch_adam_matches_least_squares():
    oracle, measure, sensors = _linear_functional_setup(200)
    common = dict(p=1, trunk="constant", branch_hidden=(), activation="linear")
    exact, _, test = train(DeepONet(**common, solver="lstsq"), oracle, measure, sensors, 200, 500)
    adam, _, _ = train(DeepONet(**common, epochs=1000, batch_size=50, lr=3e-2), oracle, measure, sensors, 200, 500)
    ref = exact.empirical_loss(test.inputs, test.outputs)
    got = adam.empirical_loss(test.inputs, test.outputs)
    assert abs(got - ref) <= 0.1 * ref


def test_linear_operator_exact_affine_approximator():
    # identity on band-limited inputs: encoder, trunk and affine branch are all exact
    op = IdentityOperator(9)
    measure = MeasureSpec("ParamFourier", K=4, alpha_decay={"C": 0.5}, ell=0.5)
    sensors = SensorSet.equispaced(9)
    nodes, w = op.output_grid()
    net = DeepONet(p=9, trunk="fourier", branch_hidden=(), activation="linear", solver="lstsq",
                   output_nodes=nodes, output_weights=w)
    data = make_dataset(op, measure, sensors, 50, 0)
    net.fit(data.inputs, data.outputs)
    rep = error_decomposition(net, op, measure, sensors, DFTDecoder(9), 40, 1)
    assert rep.encoding <= 1e-8 and rep.approximation <= 1e-8 and rep.reconstruction <= 1e-8
    assert rep.total <= 1e-8


# -- checkpoints --------------------------------------------------------------


@pytest.mark.parametrize("trunk", ["neural", "legendre"])
def test_checkpoint_roundtrip(trunk):
    t = np.linspace(0, 1, 11)
    net = DeepONet(p=3, trunk=trunk, branch_hidden=(6,), trunk_hidden=(6,), epochs=2, T=1.0,
                   output_nodes=t, output_weights=np.full(11, 0.1))
    X = np.random.default_rng(0).normal(size=(8, 4))
    net.fit(X, np.random.default_rng(1).normal(size=(8, 11)))
    import json

    again = DeepONet.from_checkpoint(json.loads(json.dumps(net.to_checkpoint())))
    assert again.predict(X).tobytes() == net.predict(X).tobytes()


# -- error estimators ---------------------------------------------------------


def test_cheating_net_total_error_equals_reconstruction_error():
    p = 5
    rng = np.random.default_rng(0)
    V = np.cos(PERIODIC.axis[None] * rng.integers(0, 8, size=(30, 1))) + 0.1 * rng.normal(size=(30, PERIODIC.n))
    basis = analytic_trunk("fourier", p, PERIODIC.axis, PERIODIC.weight)
    proj = dual_basis(basis)
    coeffs = project(V, proj)
    net = periodic_net(p=p, trunk="fourier", branch_hidden=(), solver="lstsq")
    net.fit(coeffs, V)
    net.branch_ = Mlp([(np.eye(p), np.zeros(p))], "linear")
    data = OperatorDataset(coeffs, V, np.zeros((30, 1)), PERIODIC.axis[:, None], np.full(PERIODIC.n, PERIODIC.weight))
    total = total_error_mc(net, data)
    rec = reconstruction_error_mc(V, basis, proj)
    assert total.estimate == pytest.approx(rec.estimate, abs=1e-10)


def test_total_error_above_lower_bound_and_l1_vs_l2():
    oracle = OperatorSpec("ConsLaw", {"gridN": 64})
    measure = MeasureSpec("ShiftedSine")
    sensors = SensorSet.equispaced(9)
    net = DeepONet(p=4, branch_hidden=(16,), trunk_hidden=(16,), epochs=20)
    net, _, _ = train(net, oracle, measure, sensors, 128)
    data = fresh_mc_dataset(oracle, measure, sensors, 200, 0)
    l2 = total_error_mc(net, data, "L2")
    l1 = total_error_mc(net, data, "L1")
    spec = empirical_spectrum(data.outputs, weights=data.weights)
    assert l2.estimate >= spectral_lower_bound(spec.eigenvalues, 4, spec.total_variance) - 4 * l2.stderr
    assert np.all(l1.per_sample <= math.sqrt(2 * math.pi) * l2.per_sample + 1e-12)
    assert l2.stderr > 0


def test_error_decomposition_shares_reconstruction_estimator():
    oracle = OperatorSpec("Pendulum", {"steps": 50})
    measure = MeasureSpec("GaussianKernel", ell=0.5)
    sensors = SensorSet.equispaced(9)
    net = DeepONet(p=6, trunk="legendre", T=1.0, branch_hidden=(32,), epochs=20)
    net, _, _ = train(net, oracle, measure, sensors, 128)
    rep = error_decomposition(net, oracle, measure, sensors, DFTDecoder(9), 100, 3)
    data = fresh_mc_dataset(oracle, measure, sensors, 100, 3)
    basis = net.trunk_basis()
    assert rep.reconstruction == reconstruction_error_mc(data.outputs, basis, dual_basis(basis)).estimate
    assert rep.lower_bound <= rep.reconstruction + 1e-12
    with pytest.raises(ValueError):
        error_decomposition(net, oracle, measure, sensors, None, 10, 0)


@pytest.mark.slow
def test_pendulum_decomposition_inequality_across_seeds():
    oracle = OperatorSpec("Pendulum", {"steps": 50})
    measure = MeasureSpec("GaussianKernel", ell=0.5)
    sensors = SensorSet.equispaced(9)
    ok = 0
    for seed in range(20):
        net = DeepONet(p=8, trunk="legendre", T=1.0, branch_hidden=(32, 32), epochs=30, seed=seed)
        net, _, _ = train(net, oracle, measure, sensors, 256, data_seed=seed)
        ok += error_decomposition(net, oracle, measure, sensors, DFTDecoder(9), 200, seed).bound_satisfied
    assert ok >= 19


def test_generalization_gap_vanishes_for_closed_form_linear_case():
    oracle, measure, sensors = _linear_functional_setup(0)
    make = lambda seed: DeepONet(p=1, trunk="constant", branch_hidden=(), activation="linear", solver="lstsq", seed=seed)
    rows, summary, ref = generalization_gap(make, oracle, measure, sensors, [2000], [0, 1, 2], n_test=20000, n_reference=2000)
    median, se = summary[2000]
    assert len(rows) == 3
    assert abs(median) <= max(3 * se, 0.05 * ref)
    with pytest.raises(ValueError):
        generalization_gap(make, oracle, measure, sensors, [200], [0], n_test=100)
