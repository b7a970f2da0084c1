"""Queue-aware feedback-bit allocation for OFDMA downlinks with slow scheduling."""

from fbq.core import (
    Allocation,
    AllocationProblem,
    Assignment,
    FractionalAllocation,
    RateTable,
    virtualize,
    weighted_sum_rate,
)
from fbq.solvers import (
    brute_force_solve,
    dp_solve,
    greedy_solve,
    relaxation_solve,
    round_allocation,
)

__all__ = [
    "Allocation",
    "AllocationProblem",
    "Assignment",
    "FractionalAllocation",
    "RateTable",
    "brute_force_solve",
    "dp_solve",
    "greedy_solve",
    "relaxation_solve",
    "round_allocation",
    "virtualize",
    "weighted_sum_rate",
]
