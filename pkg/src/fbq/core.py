"""Problem and solution types shared by the solvers and the simulator.

Rates are stored unweighted in a dense ``RateTable``; the queue weights live
on the ``AllocationProblem`` and are applied by whoever evaluates it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

OBJ_TOL = 1e-12


class FbqError(ValueError):
    """Base class for all library errors."""


class InvalidAssignmentError(FbqError):
    pass


class InfeasibleAllocationError(FbqError):
    pass


class InvalidProblemError(FbqError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RateTable:
    """Expected (unweighted) rate of each user for 0..B feedback bits.

    ``entries[i, j]`` is the rate of user ``i`` given ``j`` bits.
    """

    entries: np.ndarray
    monotone: bool = False
    submodular: bool = False

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[1] < 1:
            raise InvalidProblemError(f"rate table must be 2-D with >= 1 column, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise InvalidProblemError("rate table entries must be finite and non-negative")
        object.__setattr__(self, "entries", _frozen(a))

    @property
    def num_users(self) -> int:
        return self.entries.shape[0]

    @property
    def budget(self) -> int:
        return self.entries.shape[1] - 1

    @classmethod
    def tagged(cls, entries) -> "RateTable":
        """Build a table with the monotone/submodular tags set by inspection."""
        from fbq.rates import check_monotone, check_submodular

        raw = cls(entries)
        return cls(raw.entries, monotone=check_monotone(raw), submodular=check_submodular(raw))


@dataclass(frozen=True, eq=False)
class AllocationProblem:
    num_users: int
    budget: int
    weights: np.ndarray
    rate_table: RateTable

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.budget < 0 or int(self.budget) != self.budget:
            raise InvalidProblemError(f"budget must be a non-negative integer, got {self.budget}")
        if w.shape != (self.num_users,):
            raise InvalidProblemError(f"weights has length {w.size}, expected {self.num_users}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidProblemError("weights must be finite and non-negative")
        if self.rate_table.entries.shape != (self.num_users, self.budget + 1):
            raise InvalidProblemError(
                f"rate table shape {self.rate_table.entries.shape} does not match "
                f"({self.num_users}, {self.budget + 1})"
            )
        object.__setattr__(self, "budget", int(self.budget))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def from_arrays(cls, weights, rates, budget: int | None = None, tag: bool = True) -> "AllocationProblem":
        rates = np.asarray(rates, dtype=float)
        if budget is None:
            budget = rates.shape[1] - 1
        table = RateTable.tagged(rates) if tag else RateTable(rates)
        return cls(rates.shape[0], budget, np.asarray(weights, dtype=float), table)

    def weighted_rates(self) -> np.ndarray:
        """The ``q_k * A[k, j]`` matrix the solvers actually maximise over."""
        return self.weights[:, None] * self.rate_table.entries

    def with_weights(self, weights) -> "AllocationProblem":
        return AllocationProblem(self.num_users, self.budget, weights, self.rate_table)

    def to_json(self) -> dict:
        return {
            "num_users": self.num_users,
            "budget": self.budget,
            "weights": self.weights.tolist(),
            "rate_table": self.rate_table.entries.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AllocationProblem":
        rates = np.asarray(obj["rate_table"], dtype=float).reshape(int(obj["num_users"]), -1)
        return cls(int(obj["num_users"]), int(obj["budget"]), obj["weights"], RateTable.tagged(rates))


@dataclass(frozen=True, eq=False)
class Allocation:
    bits: np.ndarray
    objective_value: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "bits", _frozen(self.bits, dtype=np.int64))

    @classmethod
    def evaluate(cls, problem: AllocationProblem, bits, **meta) -> "Allocation":
        return cls(np.asarray(bits, dtype=np.int64), weighted_sum_rate(problem, bits), dict(meta))

    def to_json(self) -> dict:
        return {"bits": self.bits.tolist(), "objective": float(self.objective_value)}


@dataclass(frozen=True, eq=False)
class FractionalAllocation:
    bits: np.ndarray
    eta: float
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _frozen(self.bits))
        object.__setattr__(self, "theta", _frozen(self.theta))

    @property
    def budget(self) -> float:
        return float(self.bits.sum())


@dataclass(frozen=True, eq=False)
class Assignment:
    """Fixed sub-band sets per physical user (0-based band indices)."""

    bands: tuple[tuple[int, ...], ...]
    queues: np.ndarray

    def __post_init__(self):
        bands = tuple(tuple(int(j) for j in nk) for nk in self.bands)
        seen: set[int] = set()
        for k, nk in enumerate(bands):
            if len(set(nk)) != len(nk) or seen.intersection(nk):
                raise InvalidAssignmentError(f"sub-band set of user {k} overlaps another assignment: {nk}")
            if any(j < 0 for j in nk):
                raise InvalidAssignmentError(f"negative band index for user {k}")
            seen.update(nk)
        q = np.asarray(self.queues, dtype=float)
        if q.shape != (len(bands),) or np.any(q < 0):
            raise InvalidAssignmentError("queues must be one non-negative value per user")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "queues", _frozen(q))

    @property
    def num_users(self) -> int:
        return len(self.bands)

    @classmethod
    def paired(cls, num_users: int, queues=None, bands_per_user: int = 2) -> "Assignment":
        """User ``k`` gets bands ``{n*k, ..., n*k + n - 1}`` (the contiguous layout)."""
        q = np.zeros(num_users) if queues is None else queues
        return cls(tuple(tuple(range(bands_per_user * k, bands_per_user * (k + 1))) for k in range(num_users)), q)


@dataclass(frozen=True)
class VirtualSystem:
    """One virtual user per assigned band.

    ``owner[v]`` is the physical user of virtual user ``v``; ``band[v]`` its band;
    ``backmap[k]`` lists the virtual users of physical user ``k``.
    """

    weights: np.ndarray
    owner: np.ndarray
    band: np.ndarray
    backmap: dict

    @property
    def num_users(self) -> int:
        return len(self.owner)

    def problem(self, rate_table: RateTable) -> AllocationProblem:
        return AllocationProblem(self.num_users, rate_table.budget, self.weights, rate_table)

    def physical_rates(self, virtual_rates) -> np.ndarray:
        """Sum virtual-user rates back onto physical users."""
        out = np.zeros(len(self.backmap))
        np.add.at(out, self.owner, np.asarray(virtual_rates, dtype=float))
        return out


def virtualize(assignment: Assignment, per_band_snr: Sequence[float] | None = None):
    """Flatten (user, band) pairs into virtual users carrying replicated queue weights.

    Returns the virtual system and the SNR of each virtual user (``None`` when
    ``per_band_snr`` is not given).
    """
    owner, band = [], []
    backmap = {}
    for k, nk in enumerate(assignment.bands):
        backmap[k] = list(range(len(owner), len(owner) + len(nk)))
        for j in nk:
            owner.append(k)
            band.append(j)
    owner_arr = np.asarray(owner, dtype=np.int64)
    band_arr = np.asarray(band, dtype=np.int64)
    snr = None
    if per_band_snr is not None:
        per_band_snr = np.asarray(per_band_snr, dtype=float)
        if band_arr.size and band_arr.max() >= per_band_snr.size:
            raise InvalidAssignmentError(
                f"band index {band_arr.max()} outside per-band SNR vector of length {per_band_snr.size}"
            )
        snr = per_band_snr[band_arr]
    weights = assignment.queues[owner_arr] if owner_arr.size else np.zeros(0)
    vs = VirtualSystem(_frozen(weights), _frozen(owner_arr, np.int64), _frozen(band_arr, np.int64), backmap)
    return vs, snr


def weighted_sum_rate(problem: AllocationProblem, bits) -> float:
    b = np.asarray(bits)
    if b.shape != (problem.num_users,):
        raise InfeasibleAllocationError(f"allocation has shape {b.shape}, expected ({problem.num_users},)")
    if np.any(b < 0) or np.any(b > problem.budget) or b.sum() > problem.budget:
        raise InfeasibleAllocationError(f"allocation {b.tolist()} violates budget {problem.budget}")
    b = b.astype(np.int64)
    rates = problem.rate_table.entries[np.arange(problem.num_users), b]
    return float(np.dot(problem.weights, rates))
