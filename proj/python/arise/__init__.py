"""Python interface to the ARISE native core."""

import json as _json

from ._arise import (  # noqa: F401
    AriseConfig,
    ConfigError,
    EmptyBufferError,
    Environment,
    EnvironmentFault,
    Error,
    InvalidAction,
    NumericError,
    PPOConfig,
    Rng,
    ShapeError,
    Trainer,
    UndefinedMetric,
    adapt_coefficients,
    augment_reward,
    compute_gae,
    compute_returns,
    csv_header,
    decay_inertia,
    derive_seed,
    known_variants,
    make_env,
    normalize_advantages,
    novelty_bonus,
    population_variance,
    run_grid,
    select_agent,
    selection_distribution,
    surrogate_objective,
    value_loss,
)
from ._arise import summarize as _summarize

__version__ = "0.1.0"


def summarize(directory):
    """Aggregate `<directory>/metrics/*.csv`; returns the summary as a dict."""
    return _json.loads(_summarize(str(directory)))
