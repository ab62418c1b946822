"""Python access to the ndlc command pipeline.

Configs are plain dicts layered over the defaults; ``overrides`` take the
same ``key.path=value`` strings as the command line ``--set`` option.
"""

import json

from . import _ndlc
from ._ndlc import DataError, NumericError, SpecError, derive_seed, mixture_interval, rhat

__all__ = [
    "DataError",
    "NumericError",
    "SpecError",
    "default_config",
    "derive_seed",
    "mixture_interval",
    "resolve_config",
    "rhat",
    "run",
]


def _layer(config):
    return json.dumps(config) if config else ""


def default_config():
    return json.loads(_ndlc.default_config())


def resolve_config(config=None, overrides=()):
    return json.loads(_ndlc.resolve_config(_layer(config), list(overrides)))


def run(command, config=None, overrides=()):
    """Runs one subcommand and returns its manifest."""
    return json.loads(_ndlc.run(command, _layer(config), list(overrides)))
