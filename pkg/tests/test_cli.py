import json
import os

import numpy as np
import pytest

from jkiv.cli import CliInputError, RunConfig, execute, main, parse_config


@pytest.fixture()
def dataset_files(tmp_path):
    rng = np.random.default_rng(0)
    n = 60
    Z = rng.standard_normal((n, 3))
    eps = rng.standard_normal(n)
    x = Z @ np.array([1.0, 0.7, -0.4]) + 0.5 * eps + rng.standard_normal(n)
    y = 1.0 * x + eps
    lines = ["y,x,z1,z2,z3"]
    for i in range(n):
        lines.append(",".join(repr(float(v)) for v in (y[i], x[i], Z[i, 0], Z[i, 1], Z[i, 2])))
    data = tmp_path / "d.csv"
    data.write_text("\n".join(lines) + "\n")
    schema = tmp_path / "s.json"
    schema.write_text(
        json.dumps({"outcome": "y", "endogenous": ["x"], "instrument": ["z1", "z2", "z3"]})
    )
    return str(data), str(schema)


class TestParseConfig:
    def test_defaults_filled(self, dataset_files):
        data, schema = dataset_files
        cfg = parse_config(
            ["test", "--data", data, "--schema", schema, "--beta0", "1.0", "--kind", "jk"]
        )
        assert cfg.alpha == 0.05
        assert cfg.hat == "ridge"
        assert cfg.draws == 1000
        assert cfg.beta0 == (1.0,)
        assert cfg.output == "jkiv_result.json"

    def test_file_then_flag_precedence(self, tmp_path, dataset_files):
        data, schema = dataset_files
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"alpha": 0.10, "draws": 250}))
        cfg = parse_config(
            ["test", "--config", str(conf), "--data", data, "--schema", schema,
             "--beta0", "1.0", "--alpha", "0.05"]
        )
        assert cfg.alpha == 0.05  # flag wins
        assert cfg.draws == 250  # file kept

    def test_unknown_test_kind(self, dataset_files):
        data, schema = dataset_files
        with pytest.raises(CliInputError, match="invalid choice"):
            parse_config(["test", "--data", data, "--schema", schema, "--beta0", "1", "--kind", "jkk"])

    def test_unknown_config_key_fails_closed(self, tmp_path, dataset_files):
        data, schema = dataset_files
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"alhpa": 0.10}))
        with pytest.raises(CliInputError, match="unknown config key 'alhpa'"):
            parse_config(["test", "--config", str(conf), "--data", data, "--schema", schema, "--beta0", "1"])

    def test_missing_required(self):
        with pytest.raises(CliInputError, match="requires --data"):
            parse_config(["test", "--beta0", "1.0"])

    def test_round_trip_normalization(self, dataset_files):
        data, schema = dataset_files
        argv = ["test", "--data", data, "--schema", schema, "--beta0", "1.0,2.0", "--seed", "9"]
        cfg = parse_config(argv)
        resolved = cfg.to_dict()
        rebuilt = RunConfig(command=resolved.pop("command") or cfg.command, threads=cfg.threads, **resolved)
        assert rebuilt.to_dict() == cfg.to_dict()

    def test_env_seed_honored_and_echoed(self, dataset_files, monkeypatch):
        data, schema = dataset_files
        monkeypatch.setenv("JKIV_SEED", "777")
        cfg = parse_config(["test", "--data", data, "--schema", schema, "--beta0", "1"])
        assert cfg.seed == 777
        assert cfg.to_dict()["seed"] == 777
        cfg2 = parse_config(["test", "--data", data, "--schema", schema, "--beta0", "1", "--seed", "3"])
        assert cfg2.seed == 3  # explicit flag wins


class TestExecute:
    def test_test_command_writes_replayable_json(self, dataset_files, tmp_path, capsys):
        data, schema = dataset_files
        out = str(tmp_path / "res.json")
        argv = ["test", "--data", data, "--schema", schema, "--beta0", "1.0",
                "--kind", "thresholding", "--draws", "200", "--seed", "5", "--output", out]
        assert main(argv) == 0
        payload = json.loads(open(out).read())
        assert payload["command"] == "test"
        assert payload["config"]["seed"] == 5
        assert payload["result"]["kind"] == "thresholding"
        first = open(out, "rb").read()
        assert main(argv) == 0  # replay
        assert open(out, "rb").read() == first

    def test_invert_command(self, dataset_files, tmp_path):
        data, schema = dataset_files
        out = str(tmp_path / "ci.json")
        code = main(
            ["invert", "--data", data, "--schema", schema, "--kind", "jk",
             "--grid-lo", "0.0", "--grid-hi", "2.0", "--grid-points", "9",
             "--draws", "150", "--seed", "2", "--output", out]
        )
        assert code == 0
        payload = json.loads(open(out).read())
        assert len(payload["result"]["grid"]) == 9
        csv_out = out[:-5] + ".csv"
        lines = open(csv_out).read().strip().splitlines()
        assert lines[0] == "grid,accepted,statistic"
        assert len(lines) == 10

    def test_simulate_command_and_csv(self, tmp_path):
        out = str(tmp_path / "size.json")
        code = main(
            ["simulate", "--n", "60", "--reps", "4", "--tests", "jk,sup_score",
             "--draws", "120", "--seed", "1", "--output", out]
        )
        assert code == 0
        payload = json.loads(open(out).read())
        assert {row["test"] for row in payload["result"]["rows"]} == {"jk", "sup_score"}
        lines = open(out[:-5] + ".csv").read().strip().splitlines()
        assert lines[0].startswith("n,d_z,rho1")
        assert len(lines) == 3

    def test_fstat_command(self, tmp_path):
        out = str(tmp_path / "f.json")
        code = main(["fstat-demo", "--n", "150", "--reps", "2", "--counts", "1,5", "--output", out])
        assert code == 0
        payload = json.loads(open(out).read())
        selected = [row["selected"] for row in payload["result"]["rows"]]
        assert selected == ["true10", 1, 5]

    def test_diagnose_command(self, dataset_files, tmp_path):
        data, schema = dataset_files
        out = str(tmp_path / "diag.json")
        code = main(
            ["diagnose", "--data", data, "--schema", schema, "--beta0", "1.0",
             "--q", "25", "--output", out]
        )
        assert code == 0
        payload = json.loads(open(out).read())
        assert "eig_ratio" in payload["result"]
        assert payload["result"]["flags"].keys() >= {"leverage", "fitted"}

    def test_missing_file_exit_code_1(self, tmp_path):
        out = str(tmp_path / "x.json")
        code = main(["test", "--data", "nope.csv", "--schema", "nope.json", "--beta0", "1", "--output", out])
        assert code == 1

    def test_numerical_failure_exit_code_2(self, tmp_path):
        # y = 2 x exactly: testing beta0 = 2 zeroes the residual and the
        # Anderson-Rubin denominator
        rng = np.random.default_rng(1)
        x = rng.standard_normal(30)
        lines = ["y,x,z1"]
        for i in range(30):
            lines.append(",".join(repr(float(v)) for v in (2 * x[i], x[i], rng.standard_normal())))
        data = tmp_path / "d.csv"
        data.write_text("\n".join(lines) + "\n")
        schema = tmp_path / "s.json"
        schema.write_text(json.dumps({"outcome": "y", "endogenous": "x", "instrument": "z1"}))
        out = str(tmp_path / "res.json")
        code = main(
            ["test", "--data", str(data), "--schema", str(schema), "--beta0", "2.0",
             "--kind", "anderson_rubin", "--output", out]
        )
        assert code == 2

    def test_threads_do_not_change_output(self, tmp_path):
        out = str(tmp_path / "a.json")
        base = ["simulate", "--n", "60", "--reps", "6", "--tests", "jk",
                "--draws", "120", "--seed", "3", "--output", out]
        assert main(base + ["--threads", "1"]) == 0
        json_serial = open(out, "rb").read()
        csv_serial = open(out[:-5] + ".csv", "rb").read()
        assert main(base + ["--threads", "4"]) == 0
        assert open(out, "rb").read() == json_serial
        assert open(out[:-5] + ".csv", "rb").read() == csv_serial

    def test_no_writes_outside_output(self, dataset_files, tmp_path, monkeypatch):
        data, schema = dataset_files
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = str(tmp_path / "only.json")
        assert main(["test", "--data", data, "--schema", schema, "--beta0", "1.0",
                     "--kind", "jk", "--seed", "1", "--output", out]) == 0
        assert os.listdir(workdir) == []
