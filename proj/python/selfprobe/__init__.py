"""Consensus-based selection of self-generated code, its estimators and analyzers."""

from ._core import (
    Error,
    correctness_lower_bound,
    lexical_entropy,
    min_tests_bound,
    pass_at_k,
    pearson_r,
    perplexity,
    run_cli,
    select,
    simulate_consensus,
    simulate_dynamics,
    syntax_profile,
)

__all__ = [
    "Error",
    "correctness_lower_bound",
    "lexical_entropy",
    "min_tests_bound",
    "pass_at_k",
    "pearson_r",
    "perplexity",
    "run_cli",
    "select",
    "simulate_consensus",
    "simulate_dynamics",
    "syntax_profile",
]
