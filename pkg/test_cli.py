import json
import os

import pytest

from cli import main

SMALL = {
    "torus": {"d": 1, "n": [1]},
    "connectivity": {"upsilon": 0.01, "gamma": 1.01},
    "integration": {"dt": 0.01, "T": 0.1},
    "experiment": {"replicas": 2, "seed": 1,
                   "events": [{"name": "up", "observable": "mean_terminal", "op": ">",
                               "threshold": 0.0}]},
}


def write_config(tmp_path, doc=SMALL):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def run(capsys, *argv):
    code = main(["--log-level", "WARNING", *argv])
    return code, capsys.readouterr().out


def test_weights_command(capsys):
    code, out = run(capsys, "weights", "--m", "1", "--rho", "2")
    assert code == 0, out
    assert json.loads(out)["certificates"]["passed"]


def test_simulate_command_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code, text = run(capsys, "simulate", "--config", write_config(tmp_path),
                     "--out", str(out), "--no-store", "--trajectories")
    assert code == 0, text
    names = os.listdir(out)
    assert any(n.endswith(".csv") and n.startswith("run_") for n in names)
    assert any(n.endswith(".json") for n in names)
    assert any(n.startswith("trajectories_") for n in names)


def test_simulate_seed_override_changes_the_run_hash(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(tmp_path)
    for seed in ("1", "2"):
        code, text = run(capsys, "simulate", "--config", cfg, "--out", str(out),
                         "--no-store", "--seed", seed)
        assert code == 0, text
    assert len([n for n in os.listdir(out) if n.endswith(".json")]) == 2


def test_ldp_scan_command(tmp_path, capsys):
    out = tmp_path / "ldp.csv"
    code, text = run(capsys, "ldp-scan", "--config", write_config(tmp_path),
                     "--event", "up", "--out", str(out))
    assert code == 0, text
    assert out.read_text(encoding="utf-8").startswith("n,volume,trials,hits")


def test_gibbs_command_reports_zero_rate(capsys):
    code, out = run(capsys, "gibbs", "--config", "configs/gibbs_small.json", "--m", "1")
    assert code == 0, out
    report = json.loads(out)
    assert abs(report["rate"]) < 1e-9
    assert report["states"] == 2 ** 9


def test_audit_and_ac_check_commands(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out = run(capsys, "audit", "--config", cfg, "--paths", "4")
    assert code == 0, out
    assert json.loads(out)["n_paths"] == 4
    code, out = run(capsys, "ac-check", "--config", cfg, "--c", "5", "--c-grid", "0.5,1e9")
    assert code == 0, out
    report = json.loads(out)
    assert "exit_rate_bound" in report
    assert report["member_fraction_by_c"]["1000000000.0"] == 1.0


def test_metric_command(tmp_path, capsys):
    from connectivity_engine import ConnSpace, ConnectionField
    from lattice_engine import TorusSpec
    from measure_engine import double_layer_measure
    from solver_engine import sample_noise

    spec = TorusSpec(1, 1)
    noise = sample_noise(spec, 0.01, 0.1, 0)
    mu = double_layer_measure(noise, ConnectionField.empty(spec, ConnSpace.binary(1.0)))
    mu.save(str(tmp_path / "a.npz"))
    code, out = run(capsys, "metric", "--a", str(tmp_path / "a.npz"),
                    "--b", str(tmp_path / "a.npz"), "--jmax", "2")
    assert code == 0, out
    assert json.loads(out)["value"] == 0.0


def test_bad_input_exits_with_two(tmp_path, capsys):
    bad = write_config(tmp_path, {"torus": {"d": 5}})
    assert run(capsys, "audit", "--config", bad)[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["weights", "--m", "-1"])
    assert exc.value.code == 2


def test_gibbs_writes_an_edge_list_that_reads_back(tmp_path, capsys):
    import pandas as pd

    out = tmp_path / "edges" / "field.csv"
    argv = ("gibbs", "--config", "configs/gibbs_small.json", "--m", "1", "--sweeps", "5",
            "--seed", "3", "--out", str(out))
    code, text = run(capsys, *argv)
    assert code == 0, text
    report = json.loads(text)
    df = pd.read_csv(out)
    assert list(df.columns) == ["j0", "k0", "value"]
    assert len(df) == report["edge_count"]
    assert set(df["value"]) <= {1.0}
    assert df["j0"].between(-1, 1).all() and df["k0"].between(-1, 1).all()

    first = out.read_text(encoding="utf-8")
    assert run(capsys, *argv)[0] == 0
    assert out.read_text(encoding="utf-8") == first


def test_gibbs_edge_list_without_sweeps_uses_the_base_law(tmp_path, capsys):
    import pandas as pd

    doc = {**SMALL, "connectivity": {"upsilon": 1.0, "gamma": 1.5, "m0": 2, "p_near": 1.0}}
    out = tmp_path / "field.csv"
    code, text = run(capsys, "gibbs", "--config", write_config(tmp_path, doc), "--m", "1",
                     "--out", str(out))
    assert code == 0, text
    df = pd.read_csv(out)
    # every offset inside m0 is bonded when p_near is one
    assert len(df) == json.loads(text)["edge_count"] == 9
    assert {(j, k) for j in (-1, 0, 1) for k in (-1, 0, 1)} <= set(zip(df["j0"], df["k0"]))


def test_ac_check_resolves_a_run_manifest_file(tmp_path, capsys):
    out = tmp_path / "out"
    code, text = run(capsys, "simulate", "--config", write_config(tmp_path),
                     "--out", str(out), "--no-store")
    assert code == 0, text
    manifest_path = next(out / n for n in os.listdir(out) if n.endswith(".json"))
    code, text = run(capsys, "ac-check", "--run", str(manifest_path), "--c-grid", "1e9")
    assert code == 0, text
    report = json.loads(text)
    assert report["run"]["n"] == 1
    assert report["smallest_c"] == pytest.approx(report["run"]["recorded_smallest_c"])
    assert report["member_fraction_by_c"]["1000000000.0"] == 1.0


def test_ac_check_resolves_a_stored_config_hash(tmp_path, capsys, monkeypatch):
    import run_store

    monkeypatch.setattr(run_store, "DB_PATH", str(tmp_path / "runs.db"))
    monkeypatch.setattr(run_store, "REPORTS_DIR", str(tmp_path / "reports"))
    monkeypatch.setattr("cli.LEDGER_PATH", str(tmp_path / "ledger.json"))
    code, text = run(capsys, "simulate", "--config", write_config(tmp_path),
                     "--out", str(tmp_path / "out"))
    assert code == 0, text
    (stored,) = run_store.list_runs()
    code, text = run(capsys, "ac-check", "--run", stored["config_hash"])
    assert code == 0, text
    assert json.loads(text)["run"]["config_hash"] == stored["config_hash"]


def test_ac_check_unknown_run_exits_with_two(tmp_path, capsys, monkeypatch):
    import run_store

    monkeypatch.setattr(run_store, "DB_PATH", str(tmp_path / "runs.db"))
    monkeypatch.setattr(run_store, "REPORTS_DIR", str(tmp_path / "reports"))
    assert run(capsys, "ac-check", "--run", "feedface")[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["ac-check", "--run", "feedface", "--config", "configs/default.json"])
    assert exc.value.code == 2
