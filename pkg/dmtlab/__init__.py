import logging

from flask import Flask

__version__ = "0.1.0"


def create_app(test_config=None):
    app = Flask(__name__)
    app.config.from_object("dmtlab.config.Config")
    if test_config:
        app.config.update(test_config)

    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("dmtlab").setLevel(app.config["DMT_LOG_LEVEL"].upper())

    from dmtlab.commands import register_commands

    register_commands(app)

    return app
