"""Config-driven experiments producing deterministic CSV tables and JSON manifests."""

import csv
import hashlib
import io
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .deeponet import (
    LR_SCHEDULES,
    DeepONet,
    TEST_STREAM,
    error_decomposition,
    fresh_mc_dataset,
    generalization_gap,
    make_dataset,
    total_error_mc,
)
from .encdec import (
    DFTDecoder,
    PointwiseEncoder,
    SensorSet,
    encoding_error_mc,
    gaussian_encoding_bound,
)
from .gadgets import ac_emulator_net, ac_reference_recursion, measured_lipschitz
from .measures import MeasureSpec, PeriodicGrid, empirical_spectrum, sample_batch
from .oracles import OperatorSpec, solve_allen_cahn
from .reconstruction import pca_reconstruction, reconstruction_error_mc, spectral_lower_bound

EXPERIMENTS = (
    "linearFunctional",
    "pendulum",
    "elliptic",
    "allenCahn",
    "burgers",
    "encodingSweep",
    "spectrumStudy",
    "generalizationSweep",
    "emulationCheck",
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# configuration


DEFAULT_MEASURES = {
    "linearFunctional": {"family": "GaussianKernel", "ell": 0.2 * math.pi, "dim": 2},
    "pendulum": {"family": "GaussianKernel", "ell": 0.5},
    "elliptic": {"family": "ParamFourier", "ell": 1.0, "mean": 2.0, "alphaDecay": {"C": 0.3}},
    "allenCahn": {"family": "ParamFourier", "ell": 1.0, "alphaDecay": {"C": 0.4}},
    "burgers": {"family": "ShiftedSine"},
    "encodingSweep": {"family": "GaussianKernel", "ell": 0.5},
    "spectrumStudy": {"family": "ShiftedSine"},
    "generalizationSweep": {"family": "GaussianKernel", "ell": 0.5},
    "emulationCheck": None,
}

DEFAULT_ORACLES = {
    "linearFunctional": {"tag": "IntegralFunctional"},
    "pendulum": {"tag": "Pendulum"},
    "elliptic": {"tag": "Elliptic"},
    "allenCahn": {"tag": "AllenCahn"},
    "burgers": {"tag": "ConsLaw"},
    "spectrumStudy": {"tag": "ConsLaw"},
    "generalizationSweep": {"tag": "Pendulum"},
}

DEFAULT_SWEEPS = {
    "linearFunctional": {"m": [4, 16, 64], "seeds": [0]},
    "pendulum": {"m": [17], "p": [8, 16], "N_u": [512], "seeds": [0]},
    "elliptic": {"m": [17], "p": [8, 16], "N_u": [512], "seeds": [0]},
    "allenCahn": {"m": [17], "p": [8, 16], "N_u": [512], "seeds": [0]},
    "burgers": {"m": [9], "p": [8, 16, 32], "N_u": [1000], "seeds": [0, 1]},
    "encodingSweep": {"m": [5, 9, 17, 33], "seeds": [0]},
    "spectrumStudy": {"p": [64], "N_u": [2000], "seeds": [0]},
    "generalizationSweep": {"N_u": [128, 512, 2048], "seeds": [0, 1, 2, 3, 4]},
    "emulationCheck": {"m": [33], "n": [10], "eps": [1e-3], "seeds": [0]},
}

DEFAULT_TRAIN = {
    "epochs": 200,
    "batch_size": 64,
    "lr": 1e-3,
    "branch_hidden": [128, 128],
    "trunk_hidden": [128, 128],
    "trunk": "neural",
    "y_sampling": "quadrature",
    "n_y": 1,
    "lr_schedule": "cosine",
}

TOP_LEVEL_KEYS = {"experiment", "seed", "measure", "oracle", "sweep", "train", "n_mc", "n_test", "output", "dt", "T"}


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration (defaults filled in, specs validated)."""

    experiment: str
    seed: int
    measure: dict
    oracle: dict
    sweep: dict
    train: dict
    n_mc: int
    n_test: int
    output: str
    extra: dict

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "measure": self.measure,
            "oracle": self.oracle,
            "sweep": self.sweep,
            "train": self.train,
            "n_mc": self.n_mc,
            "n_test": self.n_test,
            "output": self.output,
            **self.extra,
        }

    def hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def measure_spec(self):
        return MeasureSpec.from_dict(self.measure) if self.measure else None

    def oracle_spec(self):
        return OperatorSpec.from_dict(self.oracle) if self.oracle else None


def load_config(source, seed=None, experiment=None):
    """Validate a config mapping (or JSON file path) and fill defaults.

    Raises
    ------
    ConfigError
        Naming the offending field.
    """
    if isinstance(source, (str, Path)):
        try:
            data = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ConfigError(f"config: cannot read {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON: {exc}") from exc
    else:
        data = dict(source or {})
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
    tag = experiment or data.get("experiment")
    if tag not in EXPERIMENTS:
        raise ConfigError(f"experiment: must be one of {list(EXPERIMENTS)}, got {tag!r}")
    master = data.get("seed", 0) if seed is None else seed
    if not isinstance(master, int) or master < 0:
        raise ConfigError("seed: must be a non-negative integer")

    measure = data.get("measure", DEFAULT_MEASURES[tag])
    if measure is not None:
        try:
            MeasureSpec.from_dict(measure)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"measure: {exc}") from exc
    oracle = data.get("oracle", DEFAULT_ORACLES.get(tag))
    if oracle is not None:
        try:
            OperatorSpec.from_dict(oracle)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"oracle: {exc}") from exc

    sweep = dict(DEFAULT_SWEEPS[tag])
    given = data.get("sweep", {})
    if not isinstance(given, dict):
        raise ConfigError("sweep: must be an object of lists")
    sweep.update(given)
    for key, values in sweep.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}: must be a nonempty list")
    train = dict(DEFAULT_TRAIN)
    given_train = data.get("train", {})
    unknown = set(given_train) - set(DEFAULT_TRAIN)
    if unknown:
        raise ConfigError(f"train: unknown field(s) {sorted(unknown)}")
    train.update(given_train)
    for key in ("epochs", "batch_size", "n_y"):
        if not isinstance(train[key], int) or train[key] < 1:
            raise ConfigError(f"train.{key}: must be a positive integer")
    if not train["lr"] > 0:
        raise ConfigError("train.lr: must be positive")
    if train["lr_schedule"] not in LR_SCHEDULES:
        raise ConfigError(f"train.lr_schedule: must be one of {list(LR_SCHEDULES)}")
    n_mc = data.get("n_mc", 2000)
    n_test = data.get("n_test", 500)
    for key, val in (("n_mc", n_mc), ("n_test", n_test)):
        if not isinstance(val, int) or val < 2:
            raise ConfigError(f"{key}: must be an integer >= 2")
    extra = {k: data[k] for k in ("dt", "T") if k in data}
    return ExperimentConfig(tag, master, measure, oracle, sweep, train, n_mc, n_test, data.get("output", f"{tag}.csv"), extra)


def point_seed(master, index):
    """Seed of replicate ``index`` derived from the master seed.

    Points that share a replicate index share their random streams (common random
    numbers across the other sweep dimensions).
    """
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def sweep_points(sweep, keys):
    """Cartesian product of the listed sweep keys, in a fixed order."""
    points = [{}]
    for key in keys:
        points = [dict(pt, **{key: v}) for pt in points for v in sweep[key]]
    return points


# ---------------------------------------------------------------------------
# experiment bodies; each maps (config, point) to an ordered row dict


def _encoding_point(cfg, pt):
    spec = cfg.measure_spec()
    m = pt["m"]
    dim = spec.dim
    band = 2 * spec.truncation + 1 if spec.family != "ShiftedSine" else 3
    grid = PeriodicGrid(4 * max(m, band), dim)
    encoder = PointwiseEncoder(SensorSet.equispaced(m, dim), grid).fit()
    est = encoding_error_mc(spec, encoder, DFTDecoder(m, dim), cfg.n_mc, pt["seeds"], grid)
    bound = gaussian_encoding_bound(spec.ell, m) if spec.family == "GaussianKernel" and dim == 1 else ""
    return {"m": m, "estimate": est.estimate, "stderr": est.stderr, "bound": bound}


def _pushforward_samples(cfg, n, seed, start=0):
    spec = cfg.measure_spec()
    oracle = cfg.oracle_spec()
    if oracle is None:
        grid = PeriodicGrid(256, spec.dim)
        values, _ = sample_batch(spec, grid, n, seed, start)
        return values.reshape(n, -1), np.full(grid.size, grid.weight)
    latents = sample_batch(spec, PeriodicGrid(4, spec.dim), n, seed, start)[1]
    nodes, weights = oracle.output_grid()
    return oracle.apply(spec, latents), weights


def spectrum_rows(cfg, seed):
    """Rows ``k, lambda_k, lower_bound_p`` of the empirical pushforward spectrum."""
    n = cfg.sweep["N_u"][0]
    p = cfg.sweep["p"][0]
    samples, weights = _pushforward_samples(cfg, n, seed)
    spectrum = empirical_spectrum(samples, weights=weights)
    rows = []
    for k in range(1, min(p, len(spectrum.eigenvalues)) + 1):
        rows.append({
            "k": k,
            "lambda_k": float(spectrum.eigenvalues[k - 1]),
            "lower_bound_p": spectral_lower_bound(spectrum.eigenvalues, k, spectrum.total_variance),
        })
    return rows


def _make_net(cfg, p, seed, nodes=None, weights=None, T=2 * math.pi):
    t = cfg.train
    return DeepONet(
        p=p,
        branch_hidden=tuple(t["branch_hidden"]),
        trunk=t["trunk"],
        trunk_hidden=tuple(t["trunk_hidden"]),
        output_nodes=nodes,
        output_weights=weights,
        T=T,
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        lr=t["lr"],
        seed=seed,
        y_sampling=t["y_sampling"],
        n_y=t["n_y"],
        lr_schedule=t["lr_schedule"],
    )


def _sensors_for(cfg, m, seed):
    spec = cfg.measure_spec()
    if spec.dim == 2:
        side = int(round(math.sqrt(m)))
        if side * side == m:
            return SensorSet.equispaced(side, 2)
        return SensorSet.random(m, np.random.default_rng([seed, 3]), 2)
    return SensorSet.equispaced(m, 1)


def _operator_point(cfg, pt):
    spec, oracle = cfg.measure_spec(), cfg.oracle_spec()
    seed = pt["seeds"]
    sensors = _sensors_for(cfg, pt["m"], seed)
    train = make_dataset(oracle, spec, sensors, pt["N_u"], seed)
    nodes, weights = oracle.output_grid()
    T = oracle.params.get("T", 2 * math.pi) if oracle.tag == "Pendulum" else 2 * math.pi
    net = _make_net(cfg, pt["p"], seed, nodes, weights, T).fit(train.inputs, train.outputs)
    row = {"m": pt["m"], "p": pt["p"], "N_u": pt["N_u"], "train_loss": net.history_["train"][-1]}
    if net.trunk_net_ is None and pt["m"] % 2 == 1 and spec.dim == 1:
        rep = error_decomposition(net, oracle, spec, sensors, DFTDecoder(pt["m"]), cfg.n_mc, seed)
        row.update(rep.as_dict())
        return row
    data = fresh_mc_dataset(oracle, spec, sensors, cfg.n_mc, seed)
    tot = total_error_mc(net, data, "L2")
    spectrum = empirical_spectrum(data.outputs, weights=data.weights)
    row.update({
        "total": tot.estimate,
        "total_stderr": tot.stderr,
        "lower_bound": spectral_lower_bound(spectrum.eigenvalues, pt["p"], spectrum.total_variance),
    })
    return row


def _burgers_point(cfg, pt):
    spec, oracle = cfg.measure_spec(), cfg.oracle_spec()
    seed, p = pt["seeds"], pt["p"]
    sensors = SensorSet.equispaced(pt["m"])
    train = make_dataset(oracle, spec, sensors, pt["N_u"], seed)
    nodes, weights = oracle.output_grid()
    net = _make_net(cfg, p, seed, nodes, weights).fit(train.inputs, train.outputs)
    data = fresh_mc_dataset(oracle, spec, sensors, cfg.n_mc, seed)
    tot = total_error_mc(net, data, "L2")
    spectrum = empirical_spectrum(data.outputs, weights=data.weights)
    lower = spectral_lower_bound(spectrum.eigenvalues, p, spectrum.total_variance)
    basis, proj = pca_reconstruction(data.outputs, p, data.weights)
    pca = reconstruction_error_mc(data.outputs, basis, proj)
    return {
        "m": pt["m"],
        "p": p,
        "N_u": pt["N_u"],
        "train_loss": net.history_["train"][-1],
        "total": tot.estimate,
        "total_stderr": tot.stderr,
        "lower_bound": lower,
        "pca_error": pca.estimate,
        "dominates": bool(tot.estimate >= lower - 4 * tot.stderr),
    }


def linear_functional_point(cfg, pt):
    """Affine least-squares branch with a constant trunk for the masked integral."""
    spec, oracle = cfg.measure_spec(), cfg.oracle_spec()
    seed = pt["seeds"]
    sensors = _sensors_for(cfg, pt["m"], seed)
    n_train = cfg.sweep.get("N_u", [max(200, 4 * pt["m"])])[0]
    train = make_dataset(oracle, spec, sensors, n_train, seed)
    test = make_dataset(oracle, spec, sensors, cfg.n_test, seed, TEST_STREAM)
    nodes, weights = oracle.output_grid()
    net = DeepONet(p=1, branch_hidden=(), trunk="constant", activation="linear", output_nodes=nodes,
                   output_weights=weights, solver="lstsq", seed=seed)
    net.fit(train.inputs, train.outputs)
    return {
        "m": pt["m"],
        "N_u": n_train,
        "train_mse": net.empirical_loss(train.inputs, train.outputs),
        "test_mse": net.empirical_loss(test.inputs, test.outputs),
    }


def _emulation_point(cfg, pt):
    m, n, eps = pt["m"], pt["n"], pt["eps"]
    dt = cfg.extra.get("dt", 0.05)
    T = n * dt
    gadget = ac_emulator_net(m, n, dt, eps)
    U0 = np.random.default_rng(pt["seeds"]).uniform(-1.0, 1.0, size=(20, m))
    out = gadget.net.forward(U0)
    ref = ac_reference_recursion(U0, dt, n, gadget.cubic.scalar)
    true = solve_allen_cahn(U0, dt, n)
    M = measured_lipschitz(gadget.cubic)
    dev = float(np.max(np.abs(out - ref)))
    return {
        "m": m,
        "n": n,
        "eps": eps,
        "dt": dt,
        "max_dev_recursion": dev,
        "exact": bool(dev <= 1e-12),
        "max_dev_scheme": float(np.max(np.abs(true - out))),
        "scheme_bound": T * math.exp(M * T) * eps,
        "lipschitz_g": M,
        "size": gadget.net.size,
        "depth": gadget.net.depth,
    }


POINT_KEYS = {
    "encodingSweep": ("m", "seeds"),
    "linearFunctional": ("m", "seeds"),
    "pendulum": ("m", "p", "N_u", "seeds"),
    "elliptic": ("m", "p", "N_u", "seeds"),
    "allenCahn": ("m", "p", "N_u", "seeds"),
    "burgers": ("m", "p", "N_u", "seeds"),
    "emulationCheck": ("m", "n", "eps", "seeds"),
}

POINT_FUNCS = {
    "encodingSweep": _encoding_point,
    "linearFunctional": linear_functional_point,
    "pendulum": _operator_point,
    "elliptic": _operator_point,
    "allenCahn": _operator_point,
    "burgers": _burgers_point,
    "emulationCheck": _emulation_point,
}


# ---------------------------------------------------------------------------
# runner


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def rows_to_csv(rows, columns=None):
    """CSV text with a header row; missing fields are left empty."""
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(k for k in row if k not in columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[c]) if c in row else "" for c in columns])
    return buf.getvalue()


def versions():
    import scipy
    import sklearn

    return {
        "deeponet_bounds": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def _run_points(cfg, func, points, threads):
    # Sweep seeds come straight from the config; every other random stream is
    # keyed by (seed, index), so results do not depend on scheduling.
    def task(pt):
        try:
            row = func(cfg, pt)
            row["status"] = "ok"
        except Exception as exc:  # recorded per row, the run continues
            row = {k: v for k, v in pt.items() if k not in ("seeds", "replicate")}
            row["status"] = f"error: {type(exc).__name__}: {exc}"
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, points))
    else:
        results = [task(pt) for pt in points]
    h = cfg.hash()
    out = []
    for i, (pt, row) in enumerate(zip(points, results)):
        out.append({**row, "seed": pt["seeds"], "replicate": pt["replicate"], "point": i, "config_hash": h})
    return out


def run_rows(cfg, threads=1):
    """Compute the result rows of an experiment (no files written)."""
    tag = cfg.experiment
    if tag == "spectrumStudy":
        h = cfg.hash()
        rows = []
        for rep in cfg.sweep["seeds"]:
            seed = point_seed(cfg.seed, rep)
            rows.extend({**r, "seed": seed, "config_hash": h} for r in spectrum_rows(cfg, seed))
        return rows, {}
    if tag == "generalizationSweep":
        return _generalization_rows(cfg)
    points = [dict(pt, replicate=pt["seeds"], seeds=point_seed(cfg.seed, pt["seeds"]))
              for pt in sweep_points(cfg.sweep, POINT_KEYS[tag])]
    rows = _run_points(cfg, POINT_FUNCS[tag], points, threads)
    summary = {}
    if tag == "burgers":
        summary["all_dominate"] = all(r.get("dominates") is True for r in rows)
    if tag == "linearFunctional":
        mses = [r.get("test_mse") for r in rows]
        summary["test_mse"] = mses
    return rows, summary


def _generalization_rows(cfg):
    spec, oracle = cfg.measure_spec(), cfg.oracle_spec()
    m = cfg.sweep.get("m", [17])[0]
    p = cfg.sweep.get("p", [8])[0]
    sensors = SensorSet.equispaced(m)
    t = dict(cfg.train, y_sampling="randomUniform", n_y=1)

    def make_net(seed):
        return DeepONet(p=p, branch_hidden=tuple(t["branch_hidden"]), trunk=t["trunk"],
                        trunk_hidden=tuple(t["trunk_hidden"]), T=oracle.params.get("T", 1.0),
                        epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], seed=seed,
                        y_sampling="randomUniform", n_y=1, lr_schedule=t["lr_schedule"])

    n_values = cfg.sweep["N_u"]
    rows, summary, ref = generalization_gap(make_net, oracle, spec, sensors, n_values, cfg.sweep["seeds"],
                                            n_test=max(cfg.n_test, 10 * max(n_values)), data_seed=cfg.seed)
    h = cfg.hash()
    rows = [{**r, "config_hash": h} for r in rows]
    return rows, {"median_gap": {str(k): v[0] for k, v in summary.items()},
                  "gap_stderr": {str(k): v[1] for k, v in summary.items()}, "reference_loss": ref}


def write_outputs(cfg, rows, out_dir, name=None, summary=None, columns=None, extra_files=()):
    """Write the CSV body and a JSON manifest next to it; returns the CSV path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or cfg.output
    csv_path = out / name
    csv_path.write_text(rows_to_csv(rows, columns))
    seeds = sorted({int(r["seed"]) for r in rows if "seed" in r})
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "master_seed": cfg.seed,
        "seeds": seeds,
        "versions": versions(),
        "files": [name, *extra_files],
        "rows": len(rows),
        "summary": summary or {},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    manifest_path = csv_path.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return csv_path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def run(cfg, out_dir, threads=1):
    """Run a configured experiment and write its CSV and manifest."""
    rows, summary = run_rows(cfg, threads)
    return write_outputs(cfg, rows, out_dir, summary=summary)
