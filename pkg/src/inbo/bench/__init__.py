"""Benchmark problems, the multi-seed experiment runner and the command line."""

from .problems import (
    PROBLEMS,
    Problem,
    bitten_torus_problem,
    get_problem,
    load_domain,
    synthetic_sea,
    synthetic_sea_problem,
    ushape_problem,
)

__all__ = [
    "PROBLEMS",
    "Problem",
    "bitten_torus_problem",
    "get_problem",
    "load_domain",
    "synthetic_sea",
    "synthetic_sea_problem",
    "ushape_problem",
]
