"""Config layering: env > yaml > defaults, with collected validation errors."""

import os

import pytest

from src.config import load_config, load_env_file
from src.models import AggregationKind, ControlGroup, HcVariant, Weighting
from src.montecarlo import TrueSeForm

ENV_KEYS = (
    "UNDID_HC", "UNDID_COVARIATES", "UNDID_BASE_RULE", "UNDID_CONTROL_GROUP", "UNDID_MODE",
    "UNDID_WEIGHTING", "UNDID_SCHEME", "UNDID_JACKKNIFE", "UNDID_RI", "UNDID_SEED",
    "UNDID_REPLICATIONS", "UNDID_WORKERS", "UNDID_TRUE_SE", "LOG_LEVEL", "LOG_FILE",
)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)


def _write_yaml(tmp_path, text):
    path = tmp_path / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadConfig:
    def test_defaults_without_file(self, tmp_path):
        config = load_config(str(tmp_path / "missing.yaml"))
        assert config.estimation.hc is HcVariant.HC1
        assert config.estimation.control_group is ControlGroup.NOT_YET_TREATED
        assert config.estimation.weighting is Weighting.BY_N
        assert config.inference.scheme == "simple"
        assert config.inference.seed is None
        assert config.simulation.true_se_form is TrueSeForm.RESIDUALIZED
        assert config.logging.file is None

    def test_yaml_values(self, tmp_path):
        path = _write_yaml(tmp_path, (
            "estimation:\n  hc: hc0\n  covariates: [age, female]\n  weighting: unweighted\n"
            "inference:\n  scheme: group\n  jackknife: true\n"
            "simulation:\n  replications: 50\n  true_se_form: centered\n"
        ))
        config = load_config(path)
        assert config.estimation.hc is HcVariant.HC0
        assert config.estimation.covariates == ["age", "female"]
        assert config.estimation.weighting is Weighting.UNWEIGHTED
        assert config.inference.aggregation_kind is AggregationKind.GROUP
        assert config.inference.jackknife is True
        assert config.simulation.replications == 50
        assert config.simulation.true_se_form is TrueSeForm.CENTERED

    def test_env_overrides_yaml(self, tmp_path, monkeypatch):
        path = _write_yaml(tmp_path, "estimation:\n  hc: HC0\ninference:\n  scheme: group\n")
        monkeypatch.setenv("UNDID_HC", "HC1")
        monkeypatch.setenv("UNDID_SCHEME", "Weighted")
        monkeypatch.setenv("UNDID_COVARIATES", "age, female")
        monkeypatch.setenv("UNDID_JACKKNIFE", "yes")
        config = load_config(path)
        assert config.estimation.hc is HcVariant.HC1
        assert config.inference.aggregation_kind is AggregationKind.POPULATION_WEIGHTED
        assert config.estimation.covariates == ["age", "female"]
        assert config.inference.jackknife is True

    def test_errors_are_collected(self, tmp_path, monkeypatch):
        path = _write_yaml(tmp_path, "estimation:\n  hc: HC9\ninference:\n  scheme: median\n")
        monkeypatch.setenv("UNDID_WORKERS", "0")
        with pytest.raises(ValueError) as exc:
            load_config(path)
        message = str(exc.value)
        assert message.startswith("Config validation failed")
        assert "hc" in message
        assert "median" in message
        assert "workers" in message

    def test_ri_needs_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UNDID_RI", "100")
        with pytest.raises(ValueError, match="seed"):
            load_config(str(tmp_path / "missing.yaml"))
        monkeypatch.setenv("UNDID_SEED", "7")
        config = load_config(str(tmp_path / "missing.yaml"))
        assert (config.inference.n_permutations, config.inference.seed) == (100, 7)

    def test_non_integer_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UNDID_SEED", "abc")
        with pytest.raises(ValueError, match="seed must be an integer"):
            load_config(str(tmp_path / "missing.yaml"))

    def test_duplicate_covariates(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UNDID_COVARIATES", "age,age")
        with pytest.raises(ValueError, match="duplicates"):
            load_config(str(tmp_path / "missing.yaml"))

    def test_bad_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "chatty")
        with pytest.raises(ValueError, match="log level"):
            load_config(str(tmp_path / "missing.yaml"))


class TestEnvFile:
    def test_loads_missing_keys_only(self, tmp_path, monkeypatch):
        env = tmp_path / ".env"
        env.write_text('# comment\nUNDID_SEED="42"\nUNDID_HC=HC0\nnot a pair\n', encoding="utf-8")
        monkeypatch.setenv("UNDID_HC", "HC1")
        load_env_file(env)
        assert os.environ["UNDID_SEED"] == "42"
        assert os.environ["UNDID_HC"] == "HC1"

    def test_missing_file_is_ignored(self, tmp_path):
        load_env_file(tmp_path / "nope.env")
