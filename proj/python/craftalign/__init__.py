"""Python bindings for the craft anchor-aligned adapter library."""

import json as _json

from ._craft import *  # noqa: F401,F403
from ._craft import CraftError, run_experiment_json


def run_experiment(config, mode=""):
    """Run one experiment from a config dict and return the parsed results."""
    return _json.loads(run_experiment_json(_json.dumps(config), mode))


__all__ = [name for name in dir() if not name.startswith("_")]
