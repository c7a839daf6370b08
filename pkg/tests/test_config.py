"""Tests for settings loading."""

import pytest
import structlog

from automr.cli.main import create_parser, overrides_from_args
from automr.core.config import Settings, load_settings, parse_config_file, setup_logging
from automr.core.exceptions import ConfigurationError
from automr.core.logging import setup_structlog
from automr.core.models import Strategy, TaskKind


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """No stray .env file or AUTOMR_* variables."""
    monkeypatch.chdir(tmp_path)
    for name in ("AUTOMR_API_KEY", "AUTOMR_RUN__SEED", "AUTOMR_BACKEND__KIND"):
        monkeypatch.delenv(name, raising=False)


class TestDefaults:
    def test_defaults(self):
        settings = load_settings()
        assert settings.search.batch_queries == 8
        assert settings.search.samples_per_query == 16
        assert settings.search.eta == 5e-4
        assert settings.search.clip_norm == 1.0
        assert settings.search.rs_candidates == 48
        assert settings.sampler.budget == 1024
        assert settings.sampler.max_nodes == 64
        assert settings.policy.d_c == 64 and settings.policy.d_s == 32 and settings.policy.hidden == 256
        assert settings.backend.kind == "mock"
        assert settings.run.checkpoint_every == 50


class TestConfigFile:
    def test_sections_and_short_names(self, config_file):
        path = config_file(
            "# comment\n"
            "search.N=4\n"
            "search.M=2\n"
            "search.eta=0.01\n"
            "sampler.budget=64\n"
            "backend.kind=scripted\n"
            "backend.scripted_target=reflect\n"
            "run.task=math_qa\n"
        )
        settings = load_settings(path)
        assert settings.search.batch_queries == 4
        assert settings.search.samples_per_query == 2
        assert settings.search.eta == 0.01
        assert settings.sampler.budget == 64
        assert settings.backend.scripted_target is Strategy.REFLECT
        assert settings.run.task is TaskKind.MATH_QA

    def test_parse_nested(self, config_file):
        nested = parse_config_file(config_file("search.N=3\nrun.seed=9\n"))
        assert nested == {"search": {"batch_queries": "3"}, "run": {"seed": "9"}}

    def test_unknown_section(self, config_file):
        with pytest.raises(ConfigurationError, match="Invalid config key"):
            load_settings(config_file("model.depth=3\n"))

    def test_unknown_field(self, config_file):
        with pytest.raises(ConfigurationError, match="search"):
            load_settings(config_file("search.depth=3\n"))

    def test_invalid_value(self, config_file):
        with pytest.raises(ConfigurationError, match="sampler.budget"):
            load_settings(config_file("sampler.budget=-1\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_settings(tmp_path / "absent.cfg")

    def test_zero_target_rejected(self, config_file):
        with pytest.raises(ConfigurationError):
            load_settings(config_file("backend.scripted_target=Zero\n"))


class TestPrecedence:
    def test_flags_override_file(self, config_file):
        path = config_file("run.seed=3\nsampler.budget=64\n")
        settings = load_settings(path, {"run": {"seed": 7, "out_dir": None}, "sampler": {"budget": None}})
        assert settings.run.seed == 7
        assert settings.sampler.budget == 64

    def test_file_overrides_environment(self, config_file, monkeypatch):
        monkeypatch.setenv("AUTOMR_RUN__SEED", "5")
        assert load_settings().run.seed == 5
        assert load_settings(config_file("run.seed=6\n")).run.seed == 6

    def test_api_key_from_environment(self, monkeypatch):
        monkeypatch.setenv("AUTOMR_API_KEY", "token")
        assert load_settings().api_key == "token"


class TestValidation:
    def test_http_requires_base_url(self):
        settings = Settings(backend={"kind": "http", "model": "m"}, api_key="k")
        with pytest.raises(ConfigurationError, match="Base URL"):
            settings.validate_for_http()

    def test_http_requires_api_key(self):
        settings = Settings(backend={"kind": "http", "base_url": "http://x", "model": "m"})
        with pytest.raises(ConfigurationError, match="AUTOMR_API_KEY"):
            settings.validate_for_http()

    def test_dataset_required_unless_scripted(self):
        with pytest.raises(ConfigurationError):
            Settings().validate_for_dataset()
        Settings(backend={"kind": "scripted"}).validate_for_dataset()

    def test_log_level_normalized(self):
        assert Settings(run={"log_level": "debug"}).run.log_level == "DEBUG"


class TestLogging:
    def test_json_logs_flag_selects_json_renderer(self):
        args = create_parser().parse_args(["--json-logs", "gradcheck"])
        settings = load_settings(None, overrides_from_args(args))
        assert settings.run.json_logs is True
        try:
            setup_logging(settings)
            assert isinstance(structlog.get_config()["processors"][-1], structlog.processors.JSONRenderer)
        finally:
            setup_structlog("INFO")
        assert isinstance(structlog.get_config()["processors"][-1], structlog.dev.ConsoleRenderer)

    def test_console_renderer_by_default(self):
        args = create_parser().parse_args(["gradcheck"])
        assert load_settings(None, overrides_from_args(args)).run.json_logs is False
