"""Density-adaptive latent-action beam search for black-box coverage problems."""

__version__ = "0.1.0"

from .domain import Dataset, DomainError, SearchSpace  # noqa: E402
from .objectives import holder_table, make_problem, ripples, simulate_car_following  # noqa: E402
from .search import Campaign, SearchSettings, run_campaign  # noqa: E402

__all__ = [
    "Campaign", "Dataset", "DomainError", "SearchSettings", "SearchSpace",
    "holder_table", "make_problem", "ripples", "run_campaign", "simulate_car_following",
]
