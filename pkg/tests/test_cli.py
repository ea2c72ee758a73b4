from __future__ import annotations

import json

import pytest

from japs.cli import main
from japs.environment import reference_spec
from japs.online import CSV_COLUMNS


@pytest.fixture
def files(tmp_path, world):
    (tmp_path / "spec.json").write_text(json.dumps(reference_spec().to_dict()))
    (tmp_path / "run.toml").write_text("T = 25\n")
    doc = world.to_dict()
    (tmp_path / "params.json").write_text(json.dumps({k: doc[k] for k in ("psi", "phi", "W", "L0")}))
    (tmp_path / "catalog.json").write_text(json.dumps({k: doc[k] for k in ("d", "items")}))
    return tmp_path


def test_gen_env_then_simulate(files):
    assert main(["gen-env", "--spec", str(files / "spec.json"), "--out", str(files / "world.json")]) == 0
    for algo in ("supcb", "ts", "ucb-mle"):
        out = files / f"{algo}.csv"
        assert main(["simulate", "--algo", algo, "--env", str(files / "world.json"), "--config",
                     str(files / "run.toml"), "--seed", "3", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 26


def test_simulate_accepts_spec_and_is_reproducible(files):
    args = ["simulate", "--algo", "ts", "--env", str(files / "spec.json"), "--config", str(files / "run.toml"),
            "--seed", "1", "--out"]
    main(args + [str(files / "a.csv")])
    main(args + [str(files / "b.csv")])
    assert (files / "a.csv").read_bytes() == (files / "b.csv").read_bytes()


def test_oracle_prints_solution(files, capsys, world):
    assert main(["oracle", "--params", str(files / "params.json"), "--catalog", str(files / "catalog.json"),
                 "--k", "2", "--grid", "5"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"assortment", "prices", "revenue", "method"}
    assert doc["assortment"] == list(world.optimum().assortment)
    assert doc["revenue"] == pytest.approx(world.optimum().revenue)
    main(["oracle", "--params", str(files / "params.json"), "--catalog", str(files / "catalog.json"), "--k", "2"])
    cont = json.loads(capsys.readouterr().out)
    assert cont["method"] == "structural" and cont["revenue"] >= doc["revenue"]


def test_offline_command(files, world):
    from japs.harness import BehaviorPolicy, generate_offline_dataset
    import numpy as np

    data = generate_offline_dataset(world, BehaviorPolicy(), 100, np.random.default_rng(0))
    (files / "data.jsonl").write_text(data.to_jsonl())
    problem = {"dataset": "data.jsonl", "target_catalog": world.catalog.to_dict(), "K": 2,
               "price_grid": world.grid.tolist()}
    (files / "problem.json").write_text(json.dumps(problem))
    assert main(["offline", "--problem", str(files / "problem.json"), "--out", str(files / "r.json")]) == 0
    assert "widths" not in json.loads((files / "r.json").read_text())
    main(["offline", "--problem", str(files / "problem.json"), "--out", str(files / "w.json"), "--emit-widths"])
    assert "widths" in json.loads((files / "w.json").read_text())


def test_validate_command(capsys, tmp_path):
    assert main(["validate", "--suite", "perturbation", "--failures-dir", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("[PASS] perturbation")


def test_bad_config_exits_nonzero(files):
    (files / "bad.toml").write_text("T = 5\nnope = 1\n")
    assert main(["simulate", "--algo", "ts", "--env", str(files / "spec.json"), "--config",
                 str(files / "bad.toml")]) == 2


def test_experiment_command_reports_failures(files):
    doc = {"environment": reference_spec().to_dict(), "seeds": [0], "output_dir": str(files / "exp"),
           "runs": [{"name": "bad", "config": {"T": 3, "algorithm": "supcb", "lambda": 0.1}}]}
    (files / "exp.json").write_text(json.dumps(doc))
    assert main(["experiment", "--spec", str(files / "exp.json")]) == 1
    doc["runs"] = [{"name": "good", "config": {"T": 3, "algorithm": "uniform"}}]
    (files / "exp.json").write_text(json.dumps(doc))
    assert main(["experiment", "--spec", str(files / "exp.json")]) == 0
