"""Cross-module consistency checks run by ``fbq check``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fbq.core import AllocationProblem, Assignment, virtualize, weighted_sum_rate
from fbq.rates import SisoModel, db_to_linear, miso_table, siso_incremental_gain, siso_rate
from fbq.solvers import (
    GREEDY_FACTOR,
    approximation_factor_bound,
    beta_ratio_check,
    brute_force_solve,
    dp_op_count,
    dp_solve,
    greedy_solve,
    kkt_residuals,
    miso_objective,
    objectives_close,
    relaxation_solve_snr,
    round_allocation,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def random_monotone_problem(rng: np.random.Generator, max_users: int = 6, max_budget: int = 10,
                            submodular: bool = False) -> AllocationProblem:
    """Rows are cumulative sums of U[0,1] increments (sorted descending for submodular rows)."""
    L = int(rng.integers(1, max_users + 1))
    B = int(rng.integers(0, max_budget + 1))
    inc = rng.uniform(0.0, 1.0, size=(L, B))
    if submodular:
        inc = -np.sort(-inc, axis=1)
    rates = np.hstack([np.zeros((L, 1)), np.cumsum(inc, axis=1)])
    return AllocationProblem.from_arrays(rng.uniform(0.0, 1.0, L), rates, B)


def random_miso_instance(rng: np.random.Generator, max_users: int = 6, max_budget: int = 10):
    L = int(rng.integers(1, max_users + 1))
    B = int(rng.integers(1, max_budget + 1))
    snrs = np.asarray(db_to_linear(rng.uniform(-15.0, 15.0, L)))
    q = rng.uniform(0.0, 1.0, L)
    return AllocationProblem(L, B, q, miso_table(snrs, B)), snrs


def check_toy(problem: AllocationProblem | None = None) -> CheckResult:
    if problem is None:
        problem = AllocationProblem.from_arrays([1.0, 1.0], [[0.0, 1.0, 1.5], [0.0, 0.9, 1.35]])
    bf = brute_force_solve(problem).objective_value
    dp = dp_solve(problem)[0].objective_value
    gr = greedy_solve(problem)
    ok = objectives_close(dp, bf) and gr.objective_value >= GREEDY_FACTOR * dp - 1e-12
    return CheckResult("toy problem", ok, f"dp={dp:.12g} brute={bf:.12g} greedy={gr.objective_value:.12g}")


def check_dp_oracle(n: int, seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for _ in range(n):
        p = random_monotone_problem(rng)
        worst = max(worst, abs(dp_solve(p)[0].objective_value - brute_force_solve(p).objective_value))
    return CheckResult("dp == brute force", worst <= 1e-12, f"{n} instances, max |diff| = {worst:.3g}")


def check_greedy_bound(n: int, seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 2])
    worst = math.inf
    for _ in range(n):
        p = random_monotone_problem(rng, submodular=True)
        opt = dp_solve(p)[0].objective_value
        if opt > 0:
            worst = min(worst, greedy_solve(p).objective_value / opt)
    return CheckResult("greedy >= (1-1/e) dp", worst >= GREEDY_FACTOR, f"{n} instances, min ratio = {worst:.4f}")


def check_relaxation(n: int, seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 3])
    min_ratio, min_gap, max_kkt = math.inf, math.inf, 0.0
    for _ in range(n):
        p, snrs = random_miso_instance(rng)
        opt = dp_solve(p)[0].objective_value
        frac = relaxation_solve_snr(snrs, p.weights, p.budget)
        res = kkt_residuals(frac)
        max_kkt = max(max_kkt, abs(res["budget"] - p.budget), res["stationarity"], res["slackness"])
        rounded = weighted_sum_rate(p, round_allocation(frac))
        bound = approximation_factor_bound(snrs)
        min_ratio = min(min_ratio, rounded / opt / bound)
        min_gap = min(min_gap, miso_objective(snrs, p.weights, frac.bits) - opt)
    ok = min_ratio >= 1.0 and min_gap >= -1e-12 and max_kkt <= 1e-9
    return CheckResult(
        "relax+floor bound and KKT", ok,
        f"{n} instances, min rounded/(bound*dp) = {min_ratio:.4f}, min frac-dp = {min_gap:.3g}, max KKT residual = {max_kkt:.3g}",
    )


def check_op_counts() -> CheckResult:
    rng = np.random.default_rng(7)
    bad = []
    for L, B in ((4, 12), (8, 12), (50, 50)):
        p = AllocationProblem.from_arrays(np.ones(L), np.cumsum(rng.uniform(0, 1, (L, B + 1)), axis=1), B)
        trace = dp_solve(p)[1]
        if trace.op_count != dp_op_count(L, B):
            bad.append((L, B, trace.op_count))
        if greedy_solve(p).meta["op_count"] > B:
            bad.append((L, B, "greedy"))
    return CheckResult("operation counts", not bad, "L(B+1)(B+2)/2 exact" if not bad else f"mismatch {bad}")


def check_rate_identities() -> CheckResult:
    worst = 0.0
    for sigma in (5.0, 20.0, 50.0):
        m = SisoModel(1.0, sigma)
        rates = [siso_rate(m, b) for b in range(22)]
        for b in range(21):
            direct = (rates[b + 1] - rates[b]) / m.normalization
            worst = max(worst, abs(direct - siso_incremental_gain(m, b)))
    # at sigma = 20 the coarse quantizers (b < 3) floor almost all mass to zero,
    # so the one-bit gain only starts to shrink from b = 3
    decreasing = True
    for sigma, first in ((20.0, 3), (5.0, 1)):
        m = SisoModel(1.0, sigma)
        gains = [siso_incremental_gain(m, b) for b in range(first, 26)]
        decreasing &= all(b <= a for a, b in zip(gains, gains[1:]))
    ratio = beta_ratio_check(np.arange(-15.0, 15.01, 0.5)).max()
    ok = worst <= 1e-10 and decreasing and ratio <= 2.0
    return CheckResult("rate identities", ok, f"max gain mismatch {worst:.3g}, gains non-increasing={decreasing}, max beta2/beta1={ratio:.4f}")


def check_virtualization(seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 4])
    worst = 0.0
    for _ in range(50):
        K = int(rng.integers(1, 4))
        bands = rng.permutation(6)
        cuts = np.sort(rng.choice(np.arange(7), size=K - 1, replace=True))
        parts = np.split(bands, cuts)
        a = Assignment(tuple(tuple(p.tolist()) for p in parts), rng.uniform(0, 5, K))
        vs, _ = virtualize(a)
        B = int(rng.integers(0, 5))
        if vs.num_users == 0:
            continue
        rates = np.cumsum(rng.uniform(0, 1, (vs.num_users, B + 1)), axis=1)
        bits = np.zeros(vs.num_users, dtype=np.int64)
        for _ in range(B):
            bits[rng.integers(vs.num_users)] += 1
        virtual = rates[np.arange(vs.num_users), bits]
        phys = vs.physical_rates(virtual)
        p = AllocationProblem.from_arrays(vs.weights, rates, B, tag=False)
        worst = max(worst, abs(weighted_sum_rate(p, bits) - float(np.dot(a.queues, phys))))
    return CheckResult("virtual-user back-map", worst <= 1e-12, f"max |diff| = {worst:.3g}")


def run_checks(seed: int = 0, n: int = 200, problem: AllocationProblem | None = None) -> list[CheckResult]:
    return [
        check_toy(problem),
        check_dp_oracle(n, seed),
        check_greedy_bound(n, seed),
        check_relaxation(n // 2, seed),
        check_op_counts(),
        check_rate_identities(),
        check_virtualization(seed),
    ]
