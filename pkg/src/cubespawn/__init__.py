"""Deterministic simulator of closure-based remote process creation on
a hypercube multicomputer, with the matching analytical cost model.
"""

from .costmodel import CostConstants, DEFAULT_CONSTANTS
from .programs import run_distribute, run_msort, run_seq_sort
from .topology import Hypercube

__all__ = [
    "CostConstants",
    "DEFAULT_CONSTANTS",
    "Hypercube",
    "run_distribute",
    "run_msort",
    "run_seq_sort",
]

__version__ = "0.1.0"
