import json

import pytest

from services.experiment_runner import DisorderArm, ExperimentConfig, ExperimentKind, ExperimentRunner, config_hash
from services.hamiltonian_model import DisorderKind
from utils.artifact_utils import ArtifactUtils
from utils.errors import ProvenanceError, SchemaError


@pytest.fixture
def runner(model, spectral):
    return ExperimentRunner(model, spectral, params={'threads': 2, 'fail_fast': False})


def _universality(**overrides):
    data = {
        "experiment_id": "universality-small",
        "kind": "universality",
        "n": 4,
        "p": 2,
        "samples": 4,
        "disorders": [{"kind": "gaussian"}, {"kind": "rademacher"}],
        "seed": 3,
    }
    data.update(overrides)
    return ExperimentConfig.from_json(data)


def test_schema_errors_name_the_field():
    with pytest.raises(SchemaError) as info:
        ExperimentConfig.from_json({"experiment_id": "a"})
    assert info.value.field == "kind"
    with pytest.raises(SchemaError) as info:
        ExperimentConfig.from_json({"experiment_id": "a", "kind": "concentration", "bogus": 1})
    assert info.value.field == "bogus"
    with pytest.raises(SchemaError):
        ExperimentConfig.from_json("{not json")
    with pytest.raises(SchemaError):
        ExperimentConfig.from_json({"experiment_id": "a", "kind": "universality", "disorders": [{}]})
    with pytest.raises(SchemaError):
        ExperimentConfig.from_json({"experiment_id": "a", "kind": "scaling", "n_values": [4]})


def test_disorder_arm_parse():
    arm = DisorderArm.parse("sparse_rademacher:8")
    assert arm.kind == DisorderKind.SPARSE_RADEMACHER
    assert arm.average_degree == 8.0
    assert arm.label == "sparse_rademacher:8"
    assert DisorderArm.parse("gaussian").label == "gaussian"


def test_config_hash_ignores_output_settings():
    base = _universality()
    assert config_hash(base) == config_hash(base.model_copy(update={"out_dir": "elsewhere", "threads": 7}))
    assert config_hash(base) != config_hash(base.model_copy(update={"seed": 4}))
    assert base.c_epsilon == pytest.approx(0.9 * 2 ** 0.5)


def test_identical_arms_have_zero_gap(runner):
    config = _universality(disorders=[{"kind": "gaussian"}, {"kind": "gaussian"}])
    report = runner.run(config)
    assert len(report.records) == 8
    assert report.summary["gap"] == 0.0
    assert report.summary["within_gate"]
    assert report.columns == ["arm", "kind", "sample", "seed", "lambda_max", "lambda_max_over_sqrt_n"]


def test_records_do_not_depend_on_thread_count(runner):
    one = runner.run(_universality(threads=1))
    many = runner.run(_universality(threads=4))
    assert ArtifactUtils.to_csv_text(one.records, one.columns) == ArtifactUtils.to_csv_text(many.records, many.columns)
    assert one.summary == many.summary


def test_product_scaling(runner):
    config = ExperimentConfig(experiment_id="scaling-small", kind=ExperimentKind.SCALING,
                              n_values=[3, 4], p_values=[2, 3], samples=2, restarts=2, seed=1)
    report = runner.run(config)
    assert len(report.records) == 8
    assert [(g["n"], g["p"]) for g in report.summary["groups"]] == [(3, 2), (3, 3), (4, 2), (4, 3)]
    for group in report.summary["groups"]:
        assert group["below_lambda_max"]
        assert group["not_below_initial"]


def test_concentration(runner):
    config = ExperimentConfig(experiment_id="conc-small", kind=ExperimentKind.CONCENTRATION,
                              n=4, p=2, samples=4, restarts=2, seed=2)
    report = runner.run(config)
    assert len(report.records) == 4
    assert report.summary["std_times_sqrt_n"] >= 0
    assert set(report.summary["lambda_max"]) == {"std_sqrt_n", "t", "tail_bound"}


def test_sample_errors_are_recorded(runner):
    report = runner.run(_universality(experiment_id="broken", n=2, p=3, samples=2))
    assert report.records == []
    assert len(report.errors) == 4
    assert [e["sample"] for e in report.errors] == [0, 1, 2, 3]


def test_write_report_is_deterministic_and_guarded(runner, out_dir):
    config = _universality()
    report = runner.run(config)
    paths = runner.write_report(report)
    first = open(paths["csv"], encoding="utf-8").read(), open(paths["json"], encoding="utf-8").read()
    runner.write_report(runner.run(config))
    second = open(paths["csv"], encoding="utf-8").read(), open(paths["json"], encoding="utf-8").read()
    assert first == second
    payload = json.loads(first[1])
    assert payload["record_count"] == 8
    assert payload["provenance"]["config_hash"] == config_hash(config)

    tampered = report.model_copy(update={"provenance": {"config_hash": "0" * 64, "code_version": "x"}})
    with pytest.raises(ProvenanceError):
        runner.write_report(tampered)


def test_run_all_reports_each_experiment(runner, out_dir):
    manifest = json.dumps({"experiments": [
        {"experiment_id": "ok", "kind": "universality", "n": 3, "p": 2, "samples": 2,
         "disorders": [{"kind": "gaussian"}, {"kind": "rademacher"}]},
        {"experiment_id": "bad", "kind": "universality", "n": 2, "p": 3, "samples": 2,
         "disorders": [{"kind": "gaussian"}, {"kind": "rademacher"}]},
    ]})
    reports = runner.run_all(manifest)
    assert [r.experiment_id for r in reports] == ["ok", "bad"]
    assert reports[0].errors == []
    assert len(reports[1].errors) == 4
    assert (out_dir / "ok.csv").exists()
    with pytest.raises(SchemaError):
        runner.run_all([{"experiment_id": "x"}])


@pytest.mark.slow
def test_gaussian_and_rademacher_agree_at_n8(runner):
    config = _universality(experiment_id="universality-n8", n=8, samples=200, disorders=[
        {"kind": "gaussian"}, {"kind": "rademacher"}, {"kind": "sparse_rademacher", "average_degree": 8.0},
    ])
    report = runner.run(config)
    assert report.errors == []
    assert len(report.records) == 600
    assert report.summary["within_gate"]
    assert [arm["kind"] for arm in report.summary["arms"]] == ["gaussian", "rademacher", "sparse_rademacher:8"]
    assert all(arm["mean"] > 0 for arm in report.summary["arms"])


@pytest.mark.slow
def test_optimized_energy_concentrates_at_n8(runner):
    config = ExperimentConfig(experiment_id="conc-n8", kind=ExperimentKind.CONCENTRATION,
                              n=8, p=2, samples=200, restarts=4, seed=11)
    report = runner.run(config)
    assert report.errors == []
    assert report.summary["std_times_sqrt_n"] <= 3.0
