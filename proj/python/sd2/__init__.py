"""Disentangled representation learning for treatment effects, native core."""

import json

from ._sd2 import (
    ConfigError,
    IoError,
    Model,
    NumericalError,
    __version__,
    bernoulli_kl,
    gaussian_kl,
    generate_demand,
    generate_synthetic,
    read_dataset,
    verify_identities,
)
from ._sd2 import train_and_evaluate as _train_and_evaluate

__all__ = [
    "ConfigError",
    "IoError",
    "Model",
    "NumericalError",
    "__version__",
    "bernoulli_kl",
    "gaussian_kl",
    "generate_demand",
    "generate_synthetic",
    "read_dataset",
    "train_and_evaluate",
    "verify_identities",
]


def train_and_evaluate(config, seed=0, verbose=False):
    """Train on ``config["dataset"]`` for one seed and score it.

    ``config`` is a dict or JSON string in the CLI's training-config format.
    Returns a dict with ``within``, ``out``, ``selected_epoch``, ``epochs`` and
    the trained ``model``.
    """
    if not isinstance(config, str):
        config = json.dumps(config)
    return _train_and_evaluate(config, seed, verbose)
