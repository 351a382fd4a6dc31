import csv
import json

import pytest

from deeponet_bounds.cli import main

SMALL_TRAIN = {
    "experiment": "pendulum",
    "sweep": {"m": [9], "p": [4], "N_u": [64], "seeds": [0]},
    "train": {"epochs": 5, "batch_size": 32, "branch_hidden": [16], "trunk_hidden": [16]},
    "n_mc": 64,
    "n_test": 32,
}


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    return main([str(a) for a in argv])


# -- exit codes ---------------------------------------------------------------


def test_encdec_error_success_and_manifest(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "encodingSweep", "sweep": {"m": [5, 9]}, "n_mc": 200})
    out = tmp_path / "run"
    assert run("encdec-error", "--config", cfg, "--out", out) == 0
    rows = read_rows(out / "encdec_error.csv")
    assert [r["m"] for r in rows] == ["5", "9"]
    assert all(float(r["estimate"]) <= float(r["bound"]) + 3 * float(r["stderr"]) for r in rows)
    manifest = json.loads((out / "encdec_error.manifest.json").read_text())
    assert {r["config_hash"] for r in rows} == {manifest["config_hash"]}
    assert manifest["seeds"] == sorted({int(r["seed"]) for r in rows})
    assert {"numpy", "scipy", "python"} <= set(manifest["versions"])
    assert str(out / "encdec_error.csv") in capsys.readouterr().out


def test_rerun_is_byte_identical_and_thread_independent(tmp_path):
    cfg = write_config(tmp_path, {"experiment": "encodingSweep", "sweep": {"m": [5, 9, 17], "seeds": [0, 1]},
                                  "n_mc": 100})
    bodies = []
    for out, threads in (("a", 1), ("b", 1), ("c", 3)):
        assert run("encdec-error", "--config", cfg, "--out", tmp_path / out, "--threads", threads) == 0
        bodies.append((tmp_path / out / "encdec_error.csv").read_bytes())
    assert bodies[0] == bodies[1] == bodies[2]


def test_seed_flag_overrides_and_changes_output(tmp_path):
    cfg = write_config(tmp_path, {"experiment": "encodingSweep", "sweep": {"m": [5]}, "n_mc": 100, "seed": 3})
    run("encdec-error", "--config", cfg, "--out", tmp_path / "a")
    run("encdec-error", "--config", cfg, "--out", tmp_path / "b", "--seed", 4)
    a, b = read_rows(tmp_path / "a" / "encdec_error.csv"), read_rows(tmp_path / "b" / "encdec_error.csv")
    assert a[0]["seed"] != b[0]["seed"] and a[0]["config_hash"] != b[0]["config_hash"]


def test_empty_sweep_is_config_error_without_files(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "encodingSweep", "sweep": {"m": []}})
    out = tmp_path / "run"
    assert run("experiment", "--config", cfg, "--out", out) == 2
    assert "sweep.m" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize(
    "data, field",
    [
        ({"experiment": "nonsense"}, "experiment"),
        ({"experiment": "encodingSweep", "bogus": 1}, "bogus"),
        ({"experiment": "encodingSweep", "measure": {"family": "GaussianKernel", "ell": -1.0}}, "measure"),
        ({"experiment": "pendulum", "train": {"epochs": 0}}, "train.epochs"),
        ({"experiment": "encodingSweep", "n_mc": 1}, "n_mc"),
    ],
)
def test_invalid_config_names_field(tmp_path, capsys, data, field):
    cfg = write_config(tmp_path, data)
    assert run("experiment", "--config", cfg, "--out", tmp_path / "run") == 2
    assert field in capsys.readouterr().err


def test_unreadable_and_malformed_config(tmp_path):
    assert run("experiment", "--config", tmp_path / "missing.json", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("experiment", "--config", bad, "--out", tmp_path) == 2


def test_bad_flags_exit_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("experiment", "--threads", 0, "--out", tmp_path)
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run("no-such-command")
    assert exc.value.code == 2


def test_runtime_failure_exit_one(tmp_path, capsys):
    data = dict(SMALL_TRAIN, train=dict(SMALL_TRAIN["train"], lr=1e6, epochs=50))
    cfg = write_config(tmp_path, data)
    assert run("train", "--config", cfg, "--out", tmp_path / "run") == 1
    assert "TrainingDivergedError" in capsys.readouterr().err


# -- per-subcommand behavior ----------------------------------------------------


def test_sample_writes_json_lines(tmp_path):
    cfg = write_config(tmp_path, {"measure": {"family": "GaussianKernel", "ell": 0.5}, "n": 4, "gridN": 16})
    assert run("sample", "--config", cfg, "--out", tmp_path / "s", "--seed", 7) == 0
    lines = (tmp_path / "s" / "samples.jsonl").read_text().splitlines()
    assert len(lines) == 4
    rec = json.loads(lines[2])
    assert len(rec["u"]) == 16 and rec["meta"]["seed"] == 7 and rec["meta"]["index"] == 2


def test_oracle_writes_pairs(tmp_path):
    cfg = write_config(tmp_path, {"measure": {"family": "ShiftedSine"}, "oracle": {"tag": "ConsLaw"}, "n": 3})
    assert run("oracle", "--config", cfg, "--out", tmp_path / "o") == 0
    recs = [json.loads(s) for s in (tmp_path / "o" / "dataset.jsonl").read_text().splitlines()]
    assert len(recs) == 3
    assert all({"u", "Gu", "meta"} <= set(r) for r in recs)
    assert recs[0]["meta"]["oracle"]["tag"] == "ConsLaw"


def test_oracle_requires_operator(tmp_path, capsys):
    cfg = write_config(tmp_path, {"measure": {"family": "ShiftedSine"}})
    assert run("oracle", "--config", cfg, "--out", tmp_path) == 2
    assert "oracle" in capsys.readouterr().err


def test_spectrum_rows(tmp_path):
    cfg = write_config(tmp_path, {"experiment": "spectrumStudy", "sweep": {"p": [6], "N_u": [200]}})
    assert run("spectrum", "--config", cfg, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "spectrum.csv")
    assert [int(r["k"]) for r in rows] == list(range(1, 7))
    lam = [float(r["lambda_k"]) for r in rows]
    assert lam == sorted(lam, reverse=True)
    bounds = [float(r["lower_bound_p"]) for r in rows]
    assert bounds == sorted(bounds, reverse=True)


def test_emulate_flags_exactness(tmp_path):
    assert run("emulate", "--out", tmp_path) == 0
    (row,) = read_rows(tmp_path / "emulation.csv")
    assert row["exact"] == "true" and float(row["max_dev_recursion"]) <= 1e-12
    assert float(row["max_dev_scheme"]) <= float(row["scheme_bound"])
    assert row["status"] == "ok" and row["config_hash"]


def test_train_then_evaluate(tmp_path):
    cfg = write_config(tmp_path, SMALL_TRAIN)
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", out) == 0
    history = read_rows(out / "history.csv")
    assert len(history) == 5 and all(h["seed"] and h["config_hash"] for h in history)
    manifest = json.loads((out / "history.manifest.json").read_text())
    assert "checkpoint.json" in manifest["files"]
    assert run("evaluate", "--out", out, "--checkpoint", "checkpoint.json") == 0
    (row,) = read_rows(out / "evaluation.csv")
    assert row["config_hash"] == history[0]["config_hash"]
    assert float(row["total"]) >= 0 and int(row["p"]) == 4
    first = (out / "evaluation.csv").read_bytes()
    assert run("evaluate", "--out", out, "--checkpoint", "checkpoint.json") == 0
    assert (out / "evaluation.csv").read_bytes() == first


def test_evaluate_missing_checkpoint(tmp_path):
    assert run("evaluate", "--out", tmp_path, "--checkpoint", "nope.json") == 2
    assert run("evaluate", "--out", tmp_path) == 2


def test_train_rejects_untrainable_experiment(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "encodingSweep"})
    assert run("train", "--config", cfg, "--out", tmp_path) == 2
    assert "experiment" in capsys.readouterr().err


def test_failed_point_recorded_and_run_continues(tmp_path):
    # m = 4 is even, so the DFT decoder rejects that point; m = 5 still runs
    cfg = write_config(tmp_path, {"experiment": "encodingSweep", "sweep": {"m": [4, 5]}, "n_mc": 50})
    assert run("experiment", "--config", cfg, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "encodingSweep.csv")
    assert rows[0]["status"].startswith("error") and rows[1]["status"] == "ok"
    assert all(r["seed"] and r["config_hash"] for r in rows)


def test_linear_functional_experiment(tmp_path):
    cfg = write_config(tmp_path, {"experiment": "linearFunctional", "sweep": {"m": [4, 16]}, "n_test": 200})
    assert run("experiment", "--config", cfg, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "linearFunctional.csv")
    assert float(rows[1]["test_mse"]) < float(rows[0]["test_mse"])
