"""Tests for the Flask app factory and core setup."""

import logging

from dmtlab import __version__, create_app

COMMANDS = {
    "gen-data",
    "train-ddpm",
    "select-timestep",
    "select-pair",
    "train-dmt",
    "translate",
    "evaluate",
    "validate-theory",
    "export-images",
    "run-pipeline",
    "ablate-t",
}


class TestAppFactory:
    def test_create_app_returns_flask_app(self):
        app = create_app()
        assert app is not None
        assert app.name == "dmtlab"

    def test_testing_config(self, app):
        assert app.config["TESTING"] is True
        assert app.config["DMT_SAMPLER"] == "ddim:5"

    def test_defaults(self):
        app = create_app()
        assert app.config["DMT_THREADS"] >= 1
        assert app.config["DMT_SIGMA_MODE"] in ("posterior", "beta")

    def test_version_is_set(self):
        assert __version__
        parts = __version__.split(".")
        assert len(parts) == 3

    def test_commands_registered(self, app):
        assert COMMANDS <= set(app.cli.commands)

    def test_log_level(self):
        create_app({"DMT_LOG_LEVEL": "warning"})
        assert logging.getLogger("dmtlab").level == logging.WARNING
        create_app({"DMT_LOG_LEVEL": "INFO"})
        assert logging.getLogger("dmtlab").level == logging.INFO
