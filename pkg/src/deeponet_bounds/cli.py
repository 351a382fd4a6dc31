"""Command-line interface.

Exit codes: 0 on success, 2 on configuration errors, 1 on runtime failures.
All output paths are relative to ``--out``.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .deeponet import DeepONet, TEST_STREAM, fresh_mc_dataset, make_dataset, total_error_mc
from .encdec import SensorSet
from .experiments import (
    ConfigError,
    _make_net,
    _sensors_for,
    load_config,
    point_seed,
    run_rows,
    write_outputs,
)
from .measures import MeasureSpec, PeriodicGrid, empirical_spectrum, sample_batch
from .oracles import OperatorSpec
from .reconstruction import spectral_lower_bound


def _read_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON: {exc}") from exc


def _dump_config(data):
    """Validate a ``sample`` / ``oracle`` config: measure, optional oracle, n, gridN, seed."""
    allowed = {"measure", "oracle", "n", "gridN", "seed", "output"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
    if "measure" not in data:
        raise ConfigError("measure: required")
    try:
        spec = MeasureSpec.from_dict(data["measure"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"measure: {exc}") from exc
    oracle = None
    if data.get("oracle") is not None:
        try:
            oracle = OperatorSpec.from_dict(data["oracle"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"oracle: {exc}") from exc
    n = data.get("n", 10)
    if not isinstance(n, int) or n < 1:
        raise ConfigError("n: must be a positive integer")
    grid_n = data.get("gridN", 64)
    if not isinstance(grid_n, int) or grid_n < 2:
        raise ConfigError("gridN: must be an integer >= 2")
    return spec, oracle, n, grid_n


def cmd_sample(args):
    data = _read_json(args.config)
    spec, _, n, grid_n = _dump_config(data)
    seed = data.get("seed", 0) if args.seed is None else args.seed
    grid = PeriodicGrid(grid_n, spec.dim)
    values, latents = sample_batch(spec, grid, n, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / data.get("output", "samples.jsonl")
    with path.open("w") as fh:
        for i in range(n):
            meta = {"seed": seed, "index": i, "measure": spec.to_dict(), "gridN": grid_n, "latent": latents[i].tolist()}
            fh.write(json.dumps({"u": values[i].ravel().tolist(), "meta": meta}) + "\n")
    return path


def cmd_oracle(args):
    data = _read_json(args.config)
    spec, oracle, n, _ = _dump_config(data)
    if oracle is None:
        raise ConfigError("oracle: required")
    seed = data.get("seed", 0) if args.seed is None else args.seed
    grid = oracle.input_grid()
    values, latents = sample_batch(spec, grid, n, seed)
    outputs = oracle.apply(spec, latents, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / data.get("output", "dataset.jsonl")
    with path.open("w") as fh:
        for i in range(n):
            meta = {"seed": seed, "index": i, "measure": spec.to_dict(), "oracle": oracle.to_dict(),
                    "latent": latents[i].tolist()}
            fh.write(json.dumps({"u": values[i].ravel().tolist(), "Gu": outputs[i].tolist(), "meta": meta},
                                default=float) + "\n")
    return path


def _run_experiment(args, tag=None, name=None, columns=None):
    cfg = load_config(_read_json(args.config), seed=args.seed, experiment=tag)
    rows, summary = run_rows(cfg, args.threads)
    return write_outputs(cfg, rows, args.out, name=name, summary=summary, columns=columns)


def cmd_encdec_error(args):
    cols = ["m", "estimate", "stderr", "bound", "seed", "replicate", "point", "config_hash", "status"]
    return _run_experiment(args, "encodingSweep", "encdec_error.csv", cols)


def cmd_spectrum(args):
    return _run_experiment(args, "spectrumStudy", "spectrum.csv", ["k", "lambda_k", "lower_bound_p", "seed", "config_hash"])


def cmd_emulate(args):
    return _run_experiment(args, "emulationCheck", "emulation.csv")


def cmd_experiment(args):
    return _run_experiment(args)


TRAINABLE = ("pendulum", "elliptic", "allenCahn", "burgers")


def _training_setup(args):
    cfg = load_config(_read_json(args.config), seed=args.seed)
    if cfg.experiment not in TRAINABLE:
        raise ConfigError(f"experiment: train/evaluate need one of {list(TRAINABLE)}")
    sw = cfg.sweep
    seed = point_seed(cfg.seed, sw["seeds"][0])
    return cfg, sw["m"][0], sw["p"][0], sw["N_u"][0], seed


def cmd_train(args):
    cfg, m, p, n_u, seed = _training_setup(args)
    spec, oracle = cfg.measure_spec(), cfg.oracle_spec()
    sensors = _sensors_for(cfg, m, seed)
    train = make_dataset(oracle, spec, sensors, n_u, seed)
    test = make_dataset(oracle, spec, sensors, cfg.n_test, seed, TEST_STREAM)
    nodes, weights = oracle.output_grid()
    T = oracle.params.get("T", 2 * np.pi) if oracle.tag == "Pendulum" else 2 * np.pi
    net = _make_net(cfg, p, seed, nodes, weights, T).fit(train.inputs, train.outputs, test.inputs, test.outputs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = {
        "config_hash": cfg.hash(),
        "seed": seed,
        "config": cfg.to_dict(),
        "encoder": {"kind": "pointwise", "sensors": "equispaced", "m": m},
        "model": net.to_checkpoint(),
    }
    (out / "checkpoint.json").write_text(json.dumps(checkpoint) + "\n")
    rows = [
        {"epoch": i + 1, "train_loss": tr, "test_loss": te, "seed": seed, "config_hash": cfg.hash()}
        for i, (tr, te) in enumerate(zip(net.history_["train"], net.history_["test"]))
    ]
    return write_outputs(cfg, rows, out, name="history.csv", extra_files=("checkpoint.json",))


def cmd_evaluate(args):
    if args.checkpoint is None:
        raise ConfigError("--checkpoint: required")
    try:
        record = json.loads((Path(args.out) / args.checkpoint).read_text())
        net = DeepONet.from_checkpoint(record["model"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint: {exc}") from exc
    if args.config is None:
        cfg = load_config(record["config"], seed=args.seed)
    else:
        cfg = load_config(_read_json(args.config), seed=args.seed)
    spec, oracle = cfg.measure_spec(), cfg.oracle_spec()
    seed = point_seed(cfg.seed, cfg.sweep["seeds"][0])
    sensors = SensorSet.equispaced(record["encoder"]["m"])
    data = fresh_mc_dataset(oracle, spec, sensors, cfg.n_mc, seed)
    l2 = total_error_mc(net, data, "L2")
    l1 = total_error_mc(net, data, "L1")
    spectrum = empirical_spectrum(data.outputs, weights=data.weights)
    row = {
        "p": net.p,
        "total": l2.estimate,
        "total_stderr": l2.stderr,
        "total_l1": l1.estimate,
        "total_l1_stderr": l1.stderr,
        "lower_bound": spectral_lower_bound(spectrum.eigenvalues, net.p, spectrum.total_variance),
        "n_mc": cfg.n_mc,
        "seed": seed,
        "config_hash": cfg.hash(),
    }
    return write_outputs(cfg, [row], args.out, name="evaluation.csv")


COMMANDS = {
    "sample": (cmd_sample, "draw input samples and write them as JSON lines"),
    "oracle": (cmd_oracle, "write (u, G(u)) pairs as JSON lines"),
    "encdec-error": (cmd_encdec_error, "Monte-Carlo encoding error sweep over m (CSV)"),
    "spectrum": (cmd_spectrum, "empirical pushforward covariance spectrum (CSV)"),
    "train": (cmd_train, "train a DeepONet and write a checkpoint and loss history"),
    "evaluate": (cmd_evaluate, "evaluate a checkpoint on fresh samples (CSV)"),
    "emulate": (cmd_emulate, "check the Allen-Cahn emulation network (CSV)"),
    "experiment": (cmd_experiment, "run any configured experiment (CSV + manifest)"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="deeponet-bounds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="parallel sweep points")
        if name == "evaluate":
            p.add_argument("--checkpoint", metavar="PATH", help="checkpoint file, relative to --out")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.seed is not None and args.seed < 0:
        parser.error("--seed must be non-negative")
    func = COMMANDS[args.command][0]
    try:
        path = func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
