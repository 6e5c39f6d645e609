"""Multitype birth-death simulation and inference on affinity-typed trees."""

import json

from ._core import (
    NumericalError,
    ValidationError,
    __version__,
    birth_rate,
    cc_truth,
    discretize,
    effective_sample_size,
    estimate_gamma,
    extinction_probability,
    log_density,
    nm_truth,
    paper_type_space,
    run_chain,
    run_cli,
    simulate,
    translate,
)


def load_trees(text):
    """Parse the tree JSON returned by simulate into a list of dicts."""
    data = json.loads(text)
    if isinstance(data, dict) and "trees" in data:
        return data["trees"]
    return data if isinstance(data, list) else [data]
