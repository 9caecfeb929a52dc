# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Pytest tests for configuration files, overrides and the config hash."""
# -------------------------------------------
import pytest

from app.engine.benchmarks import benchmark_registry, get_benchmark
from app.schemas.experiment import ExperimentConfig
from app.utils.config import build_config, config_hash, load_config, read_config_file
from app.utils.validation import ValidationError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[problem]\n"
        "problem = lqg_po\n"
        "mode = penalized\n"
        "\n"
        "[numerics]\n"
        "paths = 5000\n"
        "steps = 16\n"
        "lambda = 6\n"
        "\n"
        "[solver]\n"
        "penalty_n = 32\n"
        "penalty-step = explicit\n"
        "\n"
        "[dual]\n"
        "budget = 20\n"
        "upper = 8\n"
        "\n"
        "[output]\n"
        "out = results\n",
        encoding="utf-8",
    )
    return path


def test_read_config_file(config_file):
    values = read_config_file(config_file)
    assert values["problem"] == "lqg_po"
    assert values["penalty_step"] == "explicit"
    assert values["dual_budget"] == "20"
    assert values["dual_upper"] == "8"


def test_load_config(config_file):
    config = load_config(config_file)
    assert config.problem == "lqg_po"
    assert config.mode == "penalized"
    assert config.paths == 5000
    assert config.steps == 16
    assert config.total_mass == 6.0
    assert config.penalty_n == 32
    assert config.dual_budget == 20
    assert config.out == "results"


def test_flags_override_file(config_file):
    config = load_config(config_file, paths=800, total_mass=2.0, seed=None)
    assert config.paths == 800
    assert config.total_mass == 2.0
    assert config.seed == 0


def test_unknown_section_is_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[plotting]\ncolor = red\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_config_file(path)


def test_duplicate_key_is_rejected(tmp_path):
    path = tmp_path / "twice.ini"
    path.write_text("[problem]\nmode = dual\n[solver]\nmode = primal\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_config_file(path)


def test_missing_file_is_rejected(tmp_path):
    with pytest.raises(ValidationError):
        read_config_file(tmp_path / "absent.ini")


def test_unknown_key_is_rejected():
    with pytest.raises(ValidationError):
        build_config({"pathz": "100"})


@pytest.mark.parametrize(
    "values",
    [{"paths": "10"}, {"mode": "greedy"}, {"lambda": "-1"}, {"degree": "7"}],
)
def test_invalid_values_are_rejected(values):
    with pytest.raises(ValidationError):
        build_config(values)


def test_hash_ignores_output_settings():
    base = build_config({"problem": "bangbang1d"})
    moved = build_config({"problem": "bangbang1d", "out": "elsewhere", "threads": "3"})
    assert config_hash(base) == config_hash(moved)


def test_hash_tracks_numerics():
    assert config_hash(build_config({"seed": "1"})) != config_hash(build_config({"seed": "2"}))


def test_defaults():
    config = ExperimentConfig()
    assert config.paths == 20_000
    assert config.penalty_n == 16
    assert config.min_bucket == 50
    assert config.dual_budget == 50


def test_registry_lookup():
    assert "bangbang1d" in benchmark_registry
    assert get_benchmark("bangbang1d").name == "bangbang1d"
    with pytest.raises(ValidationError) as exc:
        get_benchmark("heston")
    assert "bangbang1d" in str(exc.value)


def test_closed_form_benchmark():
    bench = get_benchmark("latent_frozen")
    assert bench.oracle == "closed_form"
    assert bench.reference_value == pytest.approx(0.03)
