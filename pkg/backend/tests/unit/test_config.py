"""
Unit tests for run configuration layering.
"""
import pytest

from app.config import ConfigError, build_run_config, settings


class TestBuildRunConfig:
    def test_defaults_come_from_settings(self):
        config = build_run_config()
        assert config.rules_dir == settings.RULES_DIR
        assert config.max_iters == settings.MAX_ITERS
        assert config.fixtures_dir == settings.FIXTURES_DIR

    def test_overrides_win_and_none_is_ignored(self):
        config = build_run_config(max_iters=5, resolver="replay", model_only=True, output_dir=None)
        assert config.max_iters == 5
        assert config.resolver == "replay"
        assert config.model_only
        assert config.output_dir == settings.OUTPUT_DIR

    @pytest.mark.parametrize("max_iters", [0, -2])
    def test_max_iters_must_be_positive(self, max_iters):
        with pytest.raises(ConfigError, match="max iterations must be >= 1"):
            build_run_config(max_iters=max_iters)

    @pytest.mark.parametrize("resolver", ["external", "record"])
    def test_live_modes_need_endpoint_and_key(self, monkeypatch, resolver):
        monkeypatch.setattr(settings, "MODEL_ENDPOINT_URL", None)
        monkeypatch.setattr(settings, "MODEL_API_KEY", None)
        with pytest.raises(ConfigError, match="requires MODEL_ENDPOINT_URL and MODEL_API_KEY"):
            build_run_config(resolver=resolver)

    def test_live_mode_with_credentials(self, monkeypatch):
        monkeypatch.setattr(settings, "MODEL_API_KEY", None)
        config = build_run_config(resolver="external", endpoint_url="http://localhost:8080", api_key="k")
        assert config.api_key == "k"

    def test_unknown_resolver(self):
        with pytest.raises(ConfigError):
            build_run_config(resolver="guess")

    def test_model_configured(self, monkeypatch):
        monkeypatch.setattr(settings, "MODEL_ENDPOINT_URL", "http://localhost:8080")
        monkeypatch.setattr(settings, "MODEL_API_KEY", "")
        assert not settings.model_configured
