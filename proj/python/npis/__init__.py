"""Nonparametric importance sampling with linear blend frequency polygons."""

import sys

from ._core import (
    Lbfp,
    Report,
    Result,
    __version__,
    black_scholes_price,
    gambler_ruin_prob,
    integrate,
    level_prob,
    problems,
    replicate,
    synthetic_trace,
)
from ._core import main as _main


def main(argv=None):
    """Runs the command-line tool with `argv` (default: sys.argv[1:])."""
    args = sys.argv[1:] if argv is None else list(argv)
    return _main(["npis", *args])


__all__ = [
    "Lbfp",
    "Report",
    "Result",
    "__version__",
    "black_scholes_price",
    "gambler_ruin_prob",
    "integrate",
    "level_prob",
    "main",
    "problems",
    "replicate",
    "synthetic_trace",
]
