import csv
import io
import json

import numpy as np
import pytest

from cfisac.config import SimConfig
from cfisac.errors import ConfigError
from cfisac.harness import KINDS, ExperimentResult, ExperimentSpec, Record, emit_results, run_experiment
from cfisac.harness.cli import bundled_config, load_run_config, main
from cfisac.harness.experiments import THREADS_ENV, TrialError, resolve_threads

TINY = SimConfig(num_aps=4, antennas_per_ap=2, num_users=4, obs_window=4, rcs_variance_dbsm=10.0)


def tiny_spec(kind, **kw):
    base = dict(kind=kind, trials=6, seed=5)
    base.update(kw)
    return ExperimentSpec(**base)


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [line.split("\t")[0] for line in lines] == list(KINDS)
    assert all(bundled_config(k).is_file() for k in KINDS)


def test_missing_config_file_is_a_usage_error(tmp_path, capsys):
    assert main(["validate-config", "--config", str(tmp_path / "none.toml")]) == 2
    assert "file not found" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "none.toml"), "--experiment", "roc",
                 "--out", str(tmp_path)]) == 2


def test_bad_arguments_are_usage_errors():
    assert main([]) == 2
    assert main(["run", "--experiment", "nonsense"]) == 2


@pytest.mark.parametrize("kind", KINDS)
def test_bundled_configs_validate(kind):
    assert main(["validate-config", "--config", str(bundled_config(kind)), "--experiment", kind]) == 0


def test_invalid_config_exits_with_failure(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[system]\nnum_aps = 0\n")
    assert main(["validate-config", "--config", str(path)]) == 1
    path.write_text("[system]\n[extra]\n")
    assert main(["validate-config", "--config", str(path)]) == 1
    path.write_text('[system]\n[experiment]\nkind = "roc"\nsweep = { warp_factor = [1] }\n')
    assert main(["run", "--config", str(path), "--experiment", "roc", "--out", str(tmp_path)]) == 1
    assert "warp_factor" in capsys.readouterr().err


def test_cli_run_writes_csv_and_json(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(bundled_config("pod_vs_T")), "--experiment", "pod_vs_T",
                 "--seed", "3", "--trials", "5", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "pod_vs_T.csv")))
    assert {r["metric"] for r in rows} >= {"pod", "threshold"}
    assert all(r["trials"] == "5" and r["seed"] == "3" for r in rows)
    data = json.loads((out / "pod_vs_T.json").read_text())
    assert data["seed"] == 3 and len(data["config_hash"]) == 64


@pytest.mark.slow
def test_full_bundled_run(tmp_path):
    assert main(["run", "--config", str(bundled_config("pod_vs_T")), "--experiment", "pod_vs_T",
                 "--out", str(tmp_path)]) == 0
    result = ExperimentResult.from_json((tmp_path / "pod_vs_T.json").read_text())
    pods = [result.value("pod", obs_window=T, detector="centralized", pfa=0.1)
            for T in (10, 40, 120)]
    assert pods[0] < pods[-1]


def test_serial_runs_are_byte_identical():
    spec = tiny_spec("pod_vs_rcs", sweep={"rcs_variance_dbsm": [0.0, 10.0]})
    assert run_experiment(spec, TINY).to_csv() == run_experiment(spec, TINY).to_csv()


def test_parallel_run_matches_serial():
    spec = tiny_spec("nmse_vs_rcs", trials=8)
    assert run_experiment(spec, TINY, threads=2).to_csv() == run_experiment(spec, TINY).to_csv()


def test_seed_changes_results():
    a = run_experiment(tiny_spec("nmse_vs_rcs"), TINY)
    b = run_experiment(tiny_spec("nmse_vs_rcs", seed=6), TINY)
    assert a.to_csv() != b.to_csv()


def test_single_trial_has_no_standard_error():
    result = run_experiment(tiny_spec("ser_vs_power", trials=1), TINY.with_updates(constellation="qpsk"))
    assert all(r.stderr is None for r in result.records)
    row = result.to_csv().splitlines()[1].split(",")
    assert row[-3] == ""


def test_roc_is_monotone_in_false_alarm_target():
    spec = tiny_spec("roc", trials=40)
    result = run_experiment(spec, TINY)
    for det in spec.detector:
        pods = [result.value("pod", detector=det, pfa=p, duplex="dtdd") for p in spec.pfa_grid]
        assert all(a <= b for a, b in zip(pods, pods[1:]))
        assert pods[-1] == 1.0
    assert result.select("undersampled", pfa=0.01)


def test_se_experiment_records():
    spec = tiny_spec("se_cdf", duplex=["dtdd", "tdd"], precoder=["user_centric", "target_centric"])
    result = run_experiment(spec, TINY)
    for precoder in spec.precoder:
        assert len(result.select("sum_se", precoder=precoder, duplex="tdd")) == spec.trials
        assert result.value("sum_se_p10_ratio", precoder=precoder) > 0
        p10 = result.select("sum_se_p10", precoder=precoder, duplex="dtdd")[0]
        assert p10.stderr is None


def test_scheduling_experiment_records():
    result = run_experiment(tiny_spec("scheduling_compare", trials=3), TINY)
    assert 0.0 <= result.value("ordering_fraction") <= 1.0
    comm = result.value("sum_se_mean", scheme="comm_exhaustive")
    assert comm >= result.value("sum_se_mean", scheme="traffic") - 1e-9
    assert comm >= result.value("sum_se_mean", scheme="random") - 1e-9


def test_scheduling_refuses_large_deployments():
    with pytest.raises(ConfigError):
        run_experiment(tiny_spec("scheduling_compare"), TINY.with_updates(num_aps=13))


def test_trial_error_names_the_trial():
    cfg = TINY.with_updates(antennas_per_ap=1, obs_window=1)
    with pytest.raises(TrialError, match="trial 0 at sweep point 0"):
        run_experiment(tiny_spec("pod_vs_T", detector=["mle"]), cfg)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(kind="roc", trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec(kind="roc", seed=2**64)
    with pytest.raises(ValueError):
        ExperimentSpec(kind="roc", pfa=[0.0])
    with pytest.raises(ValueError):
        ExperimentSpec(kind="roc", sweep={"num_aps": []})
    with pytest.raises(ValueError):
        ExperimentSpec(kind="teleport")
    spec = ExperimentSpec(kind="roc", duplex="tdd", sweep={"a": [1, 2], "b": [3]})
    assert spec.duplex == ["tdd"]
    assert spec.points() == [{"a": 1, "b": 3}, {"a": 2, "b": 3}]
    assert spec.geometry_policy == "fixed"
    assert ExperimentSpec(kind="se_cdf").geometry_policy == "per_trial"


def test_thread_override(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1 and resolve_threads(3) == 3
    monkeypatch.setenv(THREADS_ENV, "2")
    assert resolve_threads(5) == 2
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads(1)
    monkeypatch.setenv(THREADS_ENV, "0")
    with pytest.raises(ConfigError):
        resolve_threads(1)


def _result(records):
    return ExperimentResult(records, {}, {"kind": "roc"}, "0" * 64, 7, "0.1.0")


def test_empty_result_writes_header_only(tmp_path):
    path = emit_results(_result([]), tmp_path / "r.csv")
    assert path.read_text() == "metric,value,stderr,trials,seed\n"


def test_csv_rows_have_constant_width():
    result = _result([Record({"a": 1}, "x", 1.5, 0.1, 3), Record({"b": "y"}, "z", float("nan"))])
    rows = list(csv.reader(io.StringIO(result.to_csv())))
    assert rows[0] == ["a", "b", "metric", "value", "stderr", "trials", "seed"]
    assert {len(r) for r in rows} == {7}
    assert rows[2][4] == "" and rows[2][3] == "nan"


def test_json_round_trip(tmp_path):
    result = _result([Record({"a": 1, "pfa": 0.1}, "x", 1.5, 0.1, 3), Record({}, "y", float("inf"))])
    path = emit_results(result, tmp_path / "r.json", fmt="json")
    again = ExperimentResult.from_json(path.read_text())
    assert again.records[0] == result.records[0]
    assert np.isinf(again.records[1].value) and again.records[1].stderr is None
    assert again.to_json() == result.to_json()
    with pytest.raises(ValueError):
        emit_results(result, tmp_path / "r.xml", fmt="xml")


def test_unwritable_output_raises(tmp_path):
    with pytest.raises(OSError):
        emit_results(_result([]), tmp_path / "missing" / "r.csv")


def test_load_run_config_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[system]\nnum_aps = 4\n[experiment]\nkind = "roc"\ntrials = 9\nseed = 2\n')
    config, spec = load_run_config(path, trials=3)
    assert config.num_aps == 4 and spec.trials == 3 and spec.seed == 2
