"""Slotted-time downlink queueing simulation with slow feedback allocation.

Every ``T`` slots the base station re-solves the queue-weighted sum-rate
problem on the virtual (one user per band) system; in between, each band is
served at the instantaneous rate of its user's RVQ codebook for the allocated
bit count. Queues follow ``q <- max(q + lambda - service, 0)`` per slot.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from fbq.core import Assignment, FbqError, InvalidAssignmentError, virtualize
from fbq.rates import (
    SuperCodebook,
    codebook_gains,
    complex_gaussian,
    db_to_linear,
    generate_supercodebook,
    miso_table,
)
from fbq.solvers import dp_solve, greedy_solve, miso_loss_coeffs, relaxation_allocate

POLICIES = ("maxweight-dp", "maxweight-greedy", "maxweight-relaxation", "equal-static", "perfect-feedback")
SLOPE_EPS = 1e-3


class ConfigurationError(FbqError):
    pass


@dataclass(frozen=True)
class SimConfig:
    num_users: int = 4
    num_bands: int = 8
    bands: tuple | None = None
    budget: int = 12
    period: int = 10
    snr_db: tuple = (-10.0, -8.0, 10.0, 10.0)
    arrival_rate: float | tuple = 0.3
    horizon: int = 10_000
    policy: str = "maxweight-greedy"
    seed: int = 0
    codebook_seed: int = 0
    codebook_candidates: int = 100
    codebook_channels: int = 1000
    initial_queues: tuple | None = None

    def __post_init__(self):
        if self.bands is None:
            per = self.num_bands // self.num_users
            bands = tuple(tuple(range(per * k, per * (k + 1))) for k in range(self.num_users))
            object.__setattr__(self, "bands", bands)
        else:
            object.__setattr__(self, "bands", tuple(tuple(int(j) for j in nk) for nk in self.bands))
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if isinstance(self.arrival_rate, (list, tuple)):
            object.__setattr__(self, "arrival_rate", tuple(float(x) for x in self.arrival_rate))
        if self.initial_queues is not None:
            object.__setattr__(self, "initial_queues", tuple(float(x) for x in self.initial_queues))
        self.validate()

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigurationError(f"policy: unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.period < 1 or self.horizon < 0 or self.horizon % self.period:
            raise ConfigurationError(f"horizon: {self.horizon} is not a multiple of period {self.period}")
        if self.budget < 0:
            raise ConfigurationError("budget: must be >= 0")
        if len(self.bands) != self.num_users or len(self.snr_db) != self.num_users:
            raise ConfigurationError("bands/snr_db: need one entry per user")
        if np.any(self.arrivals < 0):
            raise ConfigurationError("arrival_rate: must be >= 0")
        used = [j for nk in self.bands for j in nk]
        if any(j < 0 or j >= self.num_bands for j in used):
            raise ConfigurationError(f"bands: indices must lie in [0, {self.num_bands})")
        try:
            Assignment(self.bands, np.zeros(self.num_users))
        except InvalidAssignmentError as exc:
            raise ConfigurationError(f"bands: {exc}") from exc

    @property
    def arrivals(self) -> np.ndarray:
        lam = np.asarray(self.arrival_rate, dtype=float)
        return np.broadcast_to(lam, (self.num_users,)).copy()

    @property
    def snr(self) -> np.ndarray:
        return np.asarray(db_to_linear(self.snr_db), dtype=float)

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        d = asdict(self)
        d["bands"] = [list(nk) for nk in self.bands]
        for key in ("snr_db", "initial_queues"):
            if d[key] is not None:
                d[key] = list(d[key])
        if isinstance(d["arrival_rate"], tuple):
            d["arrival_rate"] = list(d["arrival_rate"])
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ConfigurationError(f"{sorted(extra)[0]}: unknown configuration field")
        kw = dict(obj)
        for key in ("bands", "snr_db", "initial_queues"):
            if kw.get(key) is not None:
                kw[key] = tuple(tuple(x) if isinstance(x, list) else x for x in kw[key])
        if isinstance(kw.get("arrival_rate"), list):
            kw["arrival_rate"] = tuple(kw["arrival_rate"])
        return cls(**kw)


class ChannelDraws:
    """I.i.d. per-slot 2x1 channels for every band, with lazily cached codebook gains.

    Shared across policies and arrival rates so that comparisons are paired.
    """

    def __init__(self, horizon: int, num_bands: int, seed: int, codebook: SuperCodebook | None = None):
        rng = np.random.default_rng([seed, 0xC4A])
        self.horizon = horizon
        self.num_bands = num_bands
        self.h = complex_gaussian(rng, (horizon, num_bands, 2))
        self.codebook = codebook
        self._gains: dict[int, np.ndarray] = {}
        flat = self.h.reshape(-1, 2)
        self.norm2 = (np.abs(flat) ** 2).sum(axis=1).reshape(horizon, num_bands)

    def gains(self, b: int) -> np.ndarray:
        """``max_w |<h, w>|^2`` over ``C*(b)`` for every (slot, band)."""
        if b not in self._gains:
            if self.codebook is None:
                raise ConfigurationError("codebook: no super-codebook attached to the channel draws")
            if b > self.codebook.max_bits:
                raise ConfigurationError(f"codebook: no codebook for {b} bits")
            g = codebook_gains(self.codebook[b], self.h.reshape(-1, 2)).reshape(self.horizon, self.num_bands)
            g.setflags(write=False)
            self._gains[b] = g
        return self._gains[b]


def equal_static_allocation(config: SimConfig) -> np.ndarray:
    """Per-band bits of the static baseline.

    ``floor(B / K)`` bits per user with the remainder going to the lowest
    indices; each user splits its bits over its bands as evenly as possible,
    earlier bands first (3 bits over two bands gives (2, 1)).
    """
    K, B = config.num_users, config.budget
    per_user = np.full(K, B // K, dtype=np.int64)
    per_user[: B % K] += 1
    out = []
    for k, nk in enumerate(config.bands):
        n = len(nk)
        if n == 0:
            continue
        split = np.full(n, per_user[k] // n, dtype=np.int64)
        split[: per_user[k] % n] += 1
        out.extend(split.tolist())
    return np.asarray(out, dtype=np.int64)


def overhead_estimate(config: SimConfig, per_physical_user: bool = False) -> float:
    """Signalling cost ``log2 C(B + L - 1, L - 1) / T`` in bits per slot.

    ``L`` counts virtual users (assigned bands), or physical users when
    ``per_physical_user`` is set.
    """
    L = config.num_users if per_physical_user else sum(len(nk) for nk in config.bands)
    if L == 0:
        return 0.0
    return math.log2(math.comb(config.budget + L - 1, L - 1)) / config.period


@dataclass
class SimResult:
    config: SimConfig
    slots: np.ndarray
    queues: np.ndarray
    service: np.ndarray
    allocations: np.ndarray
    mean_queue: float
    mean_queue_per_user: np.ndarray
    mean_service: np.ndarray
    overhead: float
    extra: dict = field(default_factory=dict)

    def queue_slopes(self, fraction: float = 0.5) -> np.ndarray:
        """Least-squares slope (bits/slot) of each user's queue over the final part of the run."""
        n = len(self.slots)
        start = int(n * (1 - fraction))
        if n - start < 2:
            return np.zeros(self.queues.shape[1])
        x = self.slots[start:].astype(float)
        y = self.queues[start:]
        xc = x - x.mean()
        return (xc @ (y - y.mean(axis=0))) / (xc @ xc)

    def is_stable(self, eps: float = SLOPE_EPS) -> bool:
        return bool(np.all(self.queue_slopes() < eps))

    def write_csv(self, path) -> None:
        K = self.queues.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot"] + [f"q{k + 1}" for k in range(K)] + [f"s{k + 1}" for k in range(K)])
            for t, q, s in zip(self.slots, self.queues, self.service):
                w.writerow([int(t)] + [repr(float(x)) for x in q] + [repr(float(x)) for x in s])

    def summary(self) -> dict:
        return {
            "policy": self.config.policy,
            "arrival_rate": self.config.arrival_rate if not isinstance(self.config.arrival_rate, tuple) else list(self.config.arrival_rate),
            "mean_queue": float(self.mean_queue),
            "mean_queue_per_user": self.mean_queue_per_user.tolist(),
            "mean_service": self.mean_service.tolist(),
            "overhead_bits_per_slot": float(self.overhead),
            "queue_slopes": self.queue_slopes().tolist(),
            "stable": self.is_stable(),
            "allocation_counts": _allocation_counts(self.allocations),
        }


def _allocation_counts(allocs: np.ndarray) -> dict:
    counts: dict[str, int] = {}
    for row in allocs:
        key = ",".join(str(int(x)) for x in row)
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def default_codebook(config: SimConfig) -> SuperCodebook:
    return generate_supercodebook(config.budget, config.codebook_candidates, config.codebook_channels, config.codebook_seed)


class _Planner:
    """Per-slow-slot allocation for one policy."""

    def __init__(self, config: SimConfig):
        self.config = config
        init = Assignment(config.bands, np.zeros(config.num_users))
        vs, _ = virtualize(init)
        self.owner = vs.owner
        self.band = vs.band
        self.vsnr = config.snr[vs.owner]
        self.table = miso_table(self.vsnr, config.budget)
        self.coeffs = miso_loss_coeffs(self.vsnr)
        self.static = equal_static_allocation(config) if config.policy == "equal-static" else None

    def bits(self, queues: np.ndarray) -> np.ndarray:
        policy = self.config.policy
        if self.static is not None:
            return self.static
        if policy == "perfect-feedback":
            return np.zeros(len(self.owner), dtype=np.int64)
        vs, _ = virtualize(Assignment(self.config.bands, queues))
        problem = vs.problem(self.table)
        if policy == "maxweight-dp":
            return dp_solve(problem)[0].bits
        if policy == "maxweight-greedy":
            return greedy_solve(problem).bits
        return relaxation_allocate(problem, self.coeffs).bits


def run(config: SimConfig, codebook: SuperCodebook | None = None, channels: ChannelDraws | None = None) -> SimResult:
    """Simulate ``config.horizon`` slots; deterministic given the seeds."""
    T, K = config.period, config.num_users
    if channels is None:
        if codebook is None and config.policy != "perfect-feedback":
            codebook = default_codebook(config)
        channels = ChannelDraws(config.horizon, config.num_bands, config.seed, codebook)
    elif channels.horizon < config.horizon or channels.num_bands != config.num_bands:
        raise ConfigurationError("channels: shared draws do not cover this configuration")
    book = channels.codebook
    if config.policy != "perfect-feedback" and book is not None and book.max_bits < config.budget:
        raise ConfigurationError(f"codebook: super-codebook covers {book.max_bits} bits, budget is {config.budget}")
    planner = _Planner(config)
    lam = config.arrivals
    q = np.zeros(K) if config.initial_queues is None else np.asarray(config.initial_queues, dtype=float)
    if q.shape != (K,) or np.any(q < 0):
        raise ConfigurationError("initial_queues: need one non-negative value per user")
    n_slow = config.horizon // T
    Lv = len(planner.owner)
    samples = np.zeros((n_slow, K))
    service_avg = np.zeros((n_slow, K))
    allocs = np.zeros((n_slow, Lv), dtype=np.int64)
    queue_sum = np.zeros(K)
    service_sum = np.zeros(K)
    snr_v = planner.vsnr
    perfect = config.policy == "perfect-feedback"
    for s in range(n_slow):
        t0, t1 = s * T, (s + 1) * T
        bits = planner.bits(q)
        allocs[s] = bits
        if perfect:
            g = channels.norm2[t0:t1, planner.band]
        else:
            g = np.empty((T, Lv))
            for v in range(Lv):
                g[:, v] = channels.gains(int(bits[v]))[t0:t1, planner.band[v]]
        rate_v = np.log2(1.0 + snr_v * g)
        rate_k = np.zeros((T, K))
        np.add.at(rate_k, (slice(None), planner.owner), rate_v)
        for t in range(T):
            q = np.maximum(q + lam - rate_k[t], 0.0)
            queue_sum += q
        service_sum += rate_k.sum(axis=0)
        samples[s] = q
        service_avg[s] = rate_k.mean(axis=0)
    horizon = max(config.horizon, 1)
    dynamic = config.policy.startswith("maxweight")
    return SimResult(
        config=config,
        slots=np.arange(1, n_slow + 1) * T,
        queues=samples,
        service=service_avg,
        allocations=allocs,
        mean_queue=float(queue_sum.sum() / (horizon * K)),
        mean_queue_per_user=queue_sum / horizon,
        mean_service=service_sum / horizon,
        overhead=overhead_estimate(config) if dynamic else 0.0,
    )


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("FBQ_THREADS", "1")))
    except ValueError:
        return 1


def find_knee(lams, stable) -> float | None:
    """Largest arrival rate of the leading run of stable grid points."""
    knee = None
    for lam, ok in zip(lams, stable):
        if not ok:
            break
        knee = float(lam)
    return knee


def stability_sweep(config: SimConfig, lam_grid, policies=None, codebook: SuperCodebook | None = None,
                    channels: ChannelDraws | None = None, eps: float = SLOPE_EPS, workers: int | None = None) -> dict:
    """Run every policy over ``lam_grid`` on common random numbers and locate the stability knees."""
    lam_grid = [float(x) for x in lam_grid]
    if any(b <= a for a, b in zip(lam_grid, lam_grid[1:])):
        raise ConfigurationError("lambda_grid: must be strictly increasing")
    policies = list(policies or [config.policy])
    if codebook is None and any(p != "perfect-feedback" for p in policies):
        codebook = default_codebook(config)
    if channels is None:
        channels = ChannelDraws(config.horizon, config.num_bands, config.seed, codebook)
        if codebook is not None:
            # warm the gain cache up front; threads then only read it
            for b in range(config.budget + 1):
                channels.gains(b)

    jobs = [(p, lam) for p in policies for lam in lam_grid]

    def one(job):
        p, lam = job
        res = run(config.with_(policy=p, arrival_rate=lam), codebook, channels)
        return {
            "arrival_rate": lam,
            "stable": res.is_stable(eps),
            "max_slope": float(np.max(res.queue_slopes())),
            "mean_queue": float(res.mean_queue),
        }

    n = workers or _workers()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            points = list(ex.map(one, jobs))
    else:
        points = [one(j) for j in jobs]

    out: dict = {"policies": {}, "lambda_grid": lam_grid, "slope_eps": eps}
    for i, p in enumerate(policies):
        pts = points[i * len(lam_grid) : (i + 1) * len(lam_grid)]
        out["policies"][p] = {"points": pts, "knee": find_knee(lam_grid, [x["stable"] for x in pts])}
    knees = {p: v["knee"] for p, v in out["policies"].items()}
    ratios = {}
    for ref in ("perfect-feedback", "equal-static"):
        if knees.get(ref):
            ratios[ref] = {p: (k / knees[ref] if k is not None else None) for p, k in knees.items()}
    out["knees"] = knees
    out["ratios"] = ratios
    return out


def perfect_feedback_capacity(config: SimConfig, channels: ChannelDraws) -> float:
    """Smallest per-user mean perfect-feedback service: the symmetric-arrival knee under perfect CSI."""
    vs, _ = virtualize(Assignment(config.bands, np.zeros(config.num_users)))
    rate = np.log2(1.0 + config.snr[vs.owner] * channels.norm2[: config.horizon, vs.band])
    per_user = np.zeros(config.num_users)
    np.add.at(per_user, vs.owner, rate.mean(axis=0))
    return float(per_user.min())


def knee_grid(config: SimConfig, channels: ChannelDraws, lo: float = 0.5, hi: float = 1.1, step: float = 0.02) -> list:
    """Arrival-rate grid at ``step`` resolution of the perfect-feedback capacity."""
    ref = perfect_feedback_capacity(config, channels)
    n = int(round((hi - lo) / step))
    return [ref * (lo + step * i) for i in range(n + 1)]


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
