"""Feedback-bit allocation solvers.

``dp_solve`` is exact for any rate table, ``greedy_solve`` is a (1 - 1/e)
approximation for monotone submodular tables, and ``relaxation_solve`` +
``round_allocation`` is the closed-form water-filling route for the MISO-RVQ
rate model. ``brute_force_solve`` exists as a test oracle.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from fbq.core import Allocation, AllocationProblem, FbqError, FractionalAllocation, OBJ_TOL
from fbq.rates import beta1, beta2, miso_rvq_rate_continuous

GREEDY_FACTOR = 1.0 - 1.0 / math.e
BRUTE_FORCE_LIMIT = 10**7


class InstanceTooLargeError(FbqError):
    pass


class DegenerateProblemError(FbqError):
    pass


@dataclass(frozen=True, eq=False)
class DpTrace:
    values: np.ndarray
    choices: np.ndarray
    op_count: int


def dp_solve(problem: AllocationProblem) -> tuple[Allocation, DpTrace]:
    """Exact dynamic program over users, ``O(L B^2)``.

    ``values[k, b]`` is the best weighted sum-rate of users ``0..k`` using at
    most ``b`` bits and ``choices[k, b]`` the bits given to user ``k`` there.
    Ties go to the smallest bit count.
    """
    L, B = problem.num_users, problem.budget
    A = problem.weighted_rates()
    R = np.zeros((L, B + 1))
    choice = np.zeros((L, B + 1), dtype=np.int64)
    ops = 0
    prev = np.zeros(B + 1)
    for k in range(L):
        row = A[k]
        for b in range(B + 1):
            # candidates[j] = prev[b - j] + A[k, j], j = 0..b
            cand = prev[b::-1] + row[: b + 1]
            ops += b + 1
            j = int(np.argmax(cand))
            R[k, b] = cand[j]
            choice[k, b] = j
        prev = R[k]
    bits = np.zeros(L, dtype=np.int64)
    b = B
    for k in range(L - 1, -1, -1):
        bits[k] = choice[k, b]
        b -= bits[k]
    R.setflags(write=False)
    choice.setflags(write=False)
    alloc = Allocation.evaluate(problem, bits, solver="dp", op_count=ops, guaranteed=True, bound=1.0)
    return alloc, DpTrace(R, choice, ops)


def dp_op_count(L: int, B: int) -> int:
    """Inner-max evaluations performed by ``dp_solve``: ``L (B+1)(B+2)/2``."""
    return L * (B + 1) * (B + 2) // 2


@lru_cache(maxsize=64)
def _compositions(L: int, B: int) -> np.ndarray:
    """Every vector of ``L`` non-negative integers summing to at most ``B``."""
    rows = []
    # stars and bars with a slack user absorbing unused bits
    for bars in itertools.combinations(range(B + L), L):
        prev, row = -1, []
        for bar in bars:
            row.append(bar - prev - 1)
            prev = bar
        rows.append(row)
    out = np.asarray(rows, dtype=np.int64).reshape(-1, L)
    out.setflags(write=False)
    return out


def brute_force_solve(problem: AllocationProblem) -> Allocation:
    L, B = problem.num_users, problem.budget
    if L == 0:
        return Allocation.evaluate(problem, np.zeros(0, dtype=np.int64), solver="brute-force")
    if math.comb(B + L - 1, L - 1) > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(f"C({B + L - 1}, {L - 1}) exceeds {BRUTE_FORCE_LIMIT}")
    allocs = _compositions(L, B)
    A = problem.weighted_rates()
    values = A[np.arange(L), allocs].sum(axis=1)
    best = int(np.argmax(values))
    return Allocation.evaluate(problem, allocs[best], solver="brute-force", evaluated=len(allocs))


def greedy_solve(problem: AllocationProblem) -> Allocation:
    """Grant bits one at a time to the user with the largest marginal utility.

    The heap is keyed on ``(-utility, user)`` so ties go to the lowest index.
    Stops once every marginal utility is <= 0.
    """
    L, B = problem.num_users, problem.budget
    A = problem.weighted_rates()
    bits = np.zeros(L, dtype=np.int64)
    heap = [(-(A[k, 1] - A[k, 0]), k) for k in range(L)] if B > 0 else []
    heapq.heapify(heap)
    extractions = 0
    spent = 0
    while spent < B and heap and -heap[0][0] > 0:
        _, k = heapq.heappop(heap)
        extractions += 1
        bits[k] += 1
        spent += 1
        if bits[k] < B:
            heapq.heappush(heap, (-(A[k, bits[k] + 1] - A[k, bits[k]]), k))
    table = problem.rate_table
    guaranteed = bool(table.monotone and table.submodular)
    return Allocation.evaluate(
        problem,
        bits,
        solver="greedy",
        op_count=extractions,
        guaranteed=guaranteed,
        bound=GREEDY_FACTOR if guaranteed else None,
        early_stop=spent < B,
    )


def relaxation_solve(coeffs, weights, B: float) -> FractionalAllocation:
    """Closed-form minimiser of ``sum q_k c_k 2^-b_k`` s.t. ``sum b_k = B``, ``b_k >= 0``.

    ``c_k`` is the per-user quantization-loss coefficient. With
    ``theta_k = q_k c_k ln 2`` the solution is ``b_k = [log2(theta_k / eta)]^+``.
    Users are sorted by ``theta``, the active-set size is found by binary
    search and ``eta`` is then solved on that set in closed form.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    q = np.asarray(weights, dtype=float)
    if coeffs.shape != q.shape:
        raise FbqError("coeffs and weights must have the same length")
    if B < 0:
        raise FbqError(f"budget must be >= 0, got {B}")
    theta = q * coeffs * math.log(2.0)
    if theta.size == 0 or not np.any(theta > 0):
        raise DegenerateProblemError("every q_k * c_k is zero")
    order = np.argsort(-theta, kind="stable")
    positive = int(np.count_nonzero(theta > 0))
    log_sorted = np.log2(theta[order[:positive]])
    prefix = np.cumsum(log_sorted)
    bits = np.zeros(theta.size)
    if B == 0:
        return FractionalAllocation(bits, float(theta[order[0]]), theta)

    def bits_at_threshold(m: int) -> float:
        # total bits of the top m-1 users if eta sat exactly at the m-th largest theta
        return float(prefix[m - 2] - (m - 1) * log_sorted[m - 1]) if m > 1 else 0.0

    # largest m (1-based) such that the m-th user still gets positive bits
    lo, hi = 1, positive
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if bits_at_threshold(mid) < B:
            lo = mid
        else:
            hi = mid - 1
    m = lo
    log_eta = (prefix[m - 1] - B) / m
    active = order[:m]
    bits[active] = np.maximum(log_sorted[:m] - log_eta, 0.0)
    return FractionalAllocation(bits, float(2.0**log_eta), theta)


def miso_loss_coeffs(snrs) -> np.ndarray:
    """``beta2 - beta1`` per linear SNR: the factor multiplying ``2^-b`` in the MISO-RVQ rate."""
    return np.array([beta2(float(s)) - beta1(float(s)) for s in snrs])


def relaxation_solve_snr(snrs, weights, B: float) -> FractionalAllocation:
    """``relaxation_solve`` for MISO-RVQ users given their linear SNRs."""
    return relaxation_solve(miso_loss_coeffs(snrs), weights, B)


def kkt_residuals(frac: FractionalAllocation) -> dict:
    """Budget, stationarity and complementary-slackness residuals of a relaxed solution."""
    b, theta, eta = frac.bits, frac.theta, frac.eta
    active = b > 0
    stationarity = np.abs(theta[active] * np.exp2(-b[active]) - eta) / eta
    slack_violation = np.maximum(theta[~active] - eta, 0.0) / eta
    return {
        "budget": float(b.sum()),
        "stationarity": float(stationarity.max(initial=0.0)),
        "slackness": float(slack_violation.max(initial=0.0)),
        "min_bits": float(b.min(initial=0.0)),
    }


def round_allocation(frac: FractionalAllocation) -> np.ndarray:
    """Floor each coordinate; anything below one bit becomes zero."""
    b = np.asarray(frac.bits if isinstance(frac, FractionalAllocation) else frac, dtype=float)
    # guard against 2.9999999999 from the closed form landing just under an integer
    snapped = np.where(np.abs(b - np.round(b)) < 1e-9, np.round(b), b)
    out = np.floor(snapped).astype(np.int64)
    out[snapped < 1] = 0
    return out


def relaxation_allocate(problem: AllocationProblem, coeffs=None) -> Allocation:
    """Relax, solve in closed form and floor; evaluated on ``problem``.

    Without ``coeffs`` the loss coefficient is read off the table as
    ``2 (A[k, 1] - A[k, 0])``, which is exact for MISO-RVQ rows.
    """
    if coeffs is None:
        A = problem.rate_table.entries
        coeffs = 2.0 * (A[:, 1] - A[:, 0]) if problem.budget > 0 else np.zeros(problem.num_users)
    if not np.any(problem.weights * np.asarray(coeffs) > 0) or problem.budget == 0:
        return Allocation.evaluate(problem, np.zeros(problem.num_users, dtype=np.int64), solver="relaxation")
    frac = relaxation_solve(coeffs, problem.weights, problem.budget)
    bits = round_allocation(frac)
    return Allocation.evaluate(problem, bits, solver="relaxation", eta=frac.eta, fractional=frac.bits.tolist())


def miso_objective(snrs, weights, bits) -> float:
    """Weighted MISO-RVQ sum-rate for (possibly fractional) bits."""
    snrs = np.asarray(snrs, dtype=float)
    b1 = np.array([beta1(s) for s in snrs])
    b2 = np.array([beta2(s) for s in snrs])
    return float(np.dot(weights, miso_rvq_rate_continuous(b1, b2, bits)))


def approximation_factor_from_ratio(max_ratio: float) -> float:
    return min(0.5, 1.0 / (0.5 * max_ratio + 1.0))


def approximation_factor_bound(snrs) -> float:
    """Certified factor of relax-and-floor for the given linear SNRs."""
    ratio = max(beta2(float(s)) / beta1(float(s)) for s in snrs)
    return approximation_factor_from_ratio(ratio)


def miso_certificate(table, tol: float = 1e-9) -> float | None:
    """Relax-and-floor factor for a table whose rows have the MISO-RVQ shape, else ``None``.

    A row fits when ``A[j] = b2 - (b2 - b1) 2^-j`` with ``b1 = A[0] > 0``.
    """
    A = table.entries
    if A.shape[1] < 2 or np.any(A[:, 0] <= 0):
        return None
    b1 = A[:, 0]
    b2 = b1 + 2.0 * (A[:, 1] - A[:, 0])
    fitted = b2[:, None] - (b2 - b1)[:, None] * np.exp2(-np.arange(A.shape[1]))[None, :]
    if not np.allclose(fitted, A, rtol=0.0, atol=tol):
        return None
    return approximation_factor_from_ratio(float(np.max(b2 / b1)))


def beta_ratio_check(snr_db_grid) -> np.ndarray:
    """``beta2 / beta1`` along a dB grid."""
    return np.array([beta2(10 ** (s / 10)) / beta1(10 ** (s / 10)) for s in snr_db_grid])


SOLVERS = {
    "dp": lambda p: dp_solve(p)[0],
    "greedy": greedy_solve,
    "brute-force": brute_force_solve,
}


def certificate(alloc: Allocation) -> dict:
    m = alloc.meta
    return {
        "bound_used": m.get("bound"),
        "op_count": m.get("op_count"),
        "guaranteed": bool(m.get("guaranteed", False)),
    }


def objectives_close(a: float, b: float) -> bool:
    return abs(a - b) <= OBJ_TOL
