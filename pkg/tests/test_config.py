import pytest

from config import Config, get_solver_options


def test_defaults_are_valid():
    Config.validate()


@pytest.mark.parametrize(
    "attribute, value, fragment",
    [("THREADS", 0, "LAB_THREADS"), ("EIGEN_SOLVER", "lanczos", "LAB_EIGEN_SOLVER"),
     ("LOG_LEVEL", "LOUD", "LAB_LOG_LEVEL"), ("POWER_TOL", 2.0, "LAB_POWER_TOL")],
)
def test_invalid_settings_are_listed(monkeypatch, attribute, value, fragment):
    monkeypatch.setattr(Config, attribute, value)
    with pytest.raises(ValueError, match=fragment):
        Config.validate()


def test_solver_options_follow_settings(monkeypatch):
    monkeypatch.setattr(Config, "EIGEN_SOLVER", "power")
    monkeypatch.setattr(Config, "POWER_MAX_ITER", 50)
    options = get_solver_options("mu")
    assert options["method"] == "power" and options["max_iter"] == 50


def test_solver_overrides_win():
    options = get_solver_options("nu", method="dense", tol=1e-14)
    assert options["method"] == "dense" and options["tol"] == 1e-14
