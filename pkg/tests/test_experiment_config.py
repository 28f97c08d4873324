import json

import pytest

from config import Config
from dynamics.ensemble import RelaxationKind
from dynamics.errors import ConfigError
from dynamics.experiment_config import EXPERIMENTS, load, parse, validation_report
from dynamics.models import ModelKind


def _document(**overrides):
    document = {
        "version": 1,
        "experiment": "gap-convergence",
        "model": {"kind": "BrickworkLoss", "X": 8, "beta": 0.3, "seed": 4},
    }
    document.update(overrides)
    return document


def _violations(document):
    with pytest.raises(ConfigError) as info:
        parse(document)
    return info.value.violations


def test_minimal_document_gets_defaults():
    config = parse(_document())
    assert config.model.kind is ModelKind.BRICKWORK and config.model.size == 8
    assert config.t_max == 10_000 and config.n_samples == 100 and config.c == 1e-6
    assert config.record_every is None and config.with_bound
    assert config.relaxation_kinds[0] is RelaxationKind.TAU_DELTA


def test_experiments_get_their_default_inputs():
    config = parse(_document(experiment="decay-curves", model={"X": 20}))
    assert config.inputs == ((-5, 5), (-1, 0))
    assert [c.positions for c in config.input_configurations()] == [(-5, 5), (-1, 0)]


def test_resolved_document_round_trips():
    config = parse(_document(experiment="relaxation-scan", betas=[0.1, 0.2, 0.4], repeats=3,
                             inputs=[[-1, 0], [1, 2]], record_every=5, output_dir="out"))
    assert parse(config.to_dict()) == config


def test_every_violation_is_reported():
    problems = _violations(_document(
        version=2, experiment="nope", t_max=0, c=2.0, sizes=[5], kinds=["tauOmegaSv"],
        with_bound="yes", colour="red", model={"X": 7},
    ))
    for field in ("version", "experiment", "t_max", "c:", "sizes[0]", "kinds[0]", "with_bound",
                  "colour: unknown key", "model.X"):
        assert any(field in p for p in problems), field


def test_record_every_must_fit_in_the_run():
    problems = _violations(_document(t_max=50, record_every=100))
    assert any(p.startswith("record_every") and "t_max=50" in p for p in problems)
    assert any(p.startswith("record_every") for p in _violations(_document(record_every=20_000)))
    assert parse(_document(t_max=50, record_every=50)).record_every == 50


def test_boolean_version_is_rejected():
    assert any(p.startswith("version") for p in _violations(_document(version=True)))


def test_unhashable_experiment_is_reported():
    assert any(p.startswith("experiment") for p in _violations(_document(experiment=["lyapunov"])))


def test_tau_x_needs_two_inputs():
    problems = _violations(_document(experiment="relaxation-scan", inputs=[[-1, 0]], kinds=["tauX"]))
    assert any("tauX" in p for p in problems)
    parse(_document(experiment="size-scan", inputs=[[-1, 0]], kinds=["tauX"]))


def test_input_experiments_need_inputs():
    problems = _violations(_document(experiment="trajectories", inputs=[]))
    assert any("needs at least one input" in p for p in problems)


@pytest.mark.parametrize(
    "inputs, fragment",
    [([[0, 1, 2, 3, 0, 1, 2]], "boson count"), ([[9]], "inputs[0]"), ([["a"]], "integer coordinates"),
     ("0,1", "coordinate lists")],
)
def test_bad_inputs(inputs, fragment):
    assert any(fragment in p for p in _violations(_document(inputs=inputs)))


def test_document_must_be_an_object():
    assert _violations([1, 2]) == ["document: must be a JSON object"]


def test_overrides():
    config = parse(_document()).with_overrides(seed=2 ** 64 + 3, output_dir="elsewhere", threads=4)
    assert config.model.seed == 3
    assert str(config.destination) == "elsewhere"
    assert config.n_jobs == 4
    with pytest.raises(ConfigError):
        config.with_overrides(threads=0)


def test_threads_fall_back_to_environment(monkeypatch):
    monkeypatch.setattr(Config, "THREADS", 3)
    monkeypatch.setattr(Config, "OUTPUT_DIR", "env-results")
    config = parse(_document())
    assert config.n_jobs == 3
    assert str(config.destination) == "env-results"


def test_data_dict_ignores_placement():
    config = parse(_document())
    moved = config.with_overrides(output_dir="a", threads=2)
    assert moved.data_dict() == config.data_dict()
    assert "output_dir" not in config.data_dict()


def test_every_experiment_name_parses():
    for name in EXPERIMENTS:
        parse(_document(experiment=name, model={"X": 20}))


# ========== FILES ==========

def test_load_reports_json_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"version": 1,\n  "experiment": }', encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load(path)
    assert "line 2, column" in info.value.violations[0]


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "absent.json")


def test_validation_report(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(_document()), encoding="utf-8")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(_document(t_max=-1)), encoding="utf-8")
    assert validation_report(good) == {"valid": True, "violations": []}
    report = validation_report(bad)
    assert not report["valid"] and report["violations"]
