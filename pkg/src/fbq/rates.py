"""Rate models that populate rate tables.

* SISO link with a uniform ``b``-bit quantizer of a truncated-exponential gain.
* 2x1 MISO beamforming with random vector quantization (RVQ), modelled as
  ``beta2 - (beta2 - beta1) * 2**-b``.
* RVQ codebook generation and instantaneous codebook rates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate

from fbq.core import FbqError, RateTable

SLACK = 1e-12
MAX_SISO_BITS = 30
_CHUNK = 1 << 20


class BudgetTooLargeError(FbqError):
    pass


class DomainError(FbqError):
    pass


# --------------------------------------------------------------------------
# SISO uniform quantizer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SisoModel:
    alpha: float = 1.0
    sigma: float = 20.0

    def __post_init__(self):
        if self.alpha < 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if self.sigma <= 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")

    @property
    def normalization(self) -> float:
        """C(sigma), so that C * exp(-x) integrates to one on [0, sigma]."""
        return 1.0 / -math.expm1(-self.sigma)


def _chunked_sum(n: int, fn) -> float:
    total = 0.0
    for start in range(0, n, _CHUNK):
        idx = np.arange(start, min(n, start + _CHUNK), dtype=float)
        total += float(np.sum(fn(idx)))
    return total


def siso_rate(model: SisoModel, b: int) -> float:
    """Expected rate ``E[log2(1 + Q(sqrt(alpha) |h|^2))]`` with a ``b``-bit uniform quantizer on [0, sigma]."""
    if b < 0 or b > MAX_SISO_BITS:
        raise BudgetTooLargeError(f"b must be in [0, {MAX_SISO_BITS}], got {b}")
    n = 1 << b
    step = model.sigma / n
    c = model.normalization
    if model.alpha == 1.0:
        scale = -math.expm1(-step)
        return c * scale * _chunked_sum(n, lambda i: np.log2(1.0 + i * step) * np.exp(-i * step))
    if model.alpha == 0.0:
        return 0.0
    # Cell i collects x with i*step <= sqrt(alpha)*x < (i+1)*step; values past
    # sigma saturate in the top cell.
    root = math.sqrt(model.alpha)

    def cell_terms(i):
        lo = np.minimum(i * step / root, model.sigma)
        hi = np.minimum((i + 1) * step / root, model.sigma)
        hi = np.where(i == n - 1, model.sigma, hi)
        prob = np.exp(-lo) - np.exp(-hi)
        return np.log2(1.0 + i * step) * prob

    return c * _chunked_sum(n, cell_terms)


def siso_incremental_gain(model: SisoModel, b: int) -> float:
    """Normalized one-bit gain ``(r[b+1] - r[b]) / C(sigma)`` in factored form (alpha = 1)."""
    if b < 0 or b > MAX_SISO_BITS - 1:
        raise BudgetTooLargeError(f"b must be in [0, {MAX_SISO_BITS - 1}], got {b}")
    if model.alpha != 1.0:
        raise DomainError("the factored incremental gain is only available for alpha = 1")
    n = 1 << b
    step = model.sigma / n
    front = math.exp(-step / 2) - math.exp(-step)
    inv = n / model.sigma
    return front * _chunked_sum(n, lambda j: np.exp(-j * step) * np.log2(1.0 + 0.5 / (inv + j)))


def siso_unquantized_rate(model: SisoModel) -> float:
    """``E[log2(1 + sqrt(alpha) |h|^2)]`` for the truncated density, by quadrature."""
    root = math.sqrt(model.alpha)
    val, _ = integrate.quad(
        lambda x: math.log2(1.0 + root * x) * math.exp(-x), 0.0, model.sigma, epsabs=1e-13, epsrel=1e-12, limit=200
    )
    return model.normalization * val


# --------------------------------------------------------------------------
# 2x1 MISO with RVQ
# --------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _expected_log_rate(snr: float, taps: int) -> float:
    if not snr > 0:
        raise DomainError(f"average SNR must be positive, got {snr}")
    # |h_1|^2 ~ Exp(1); ||h||^2 ~ Gamma(2, 1)
    if taps == 1:
        dens = lambda x: math.exp(-x)
    else:
        dens = lambda x: x * math.exp(-x)
    val, _ = integrate.quad(lambda x: math.log2(1.0 + snr * x) * dens(x), 0.0, np.inf, epsabs=1e-10, epsrel=1e-10, limit=200)
    return val


def beta1(snr_bar: float) -> float:
    """Ergodic rate of a one-tap Rayleigh channel at linear average SNR ``snr_bar``."""
    return _expected_log_rate(float(snr_bar), 1)


def beta2(snr_bar: float) -> float:
    """Ergodic rate with perfect two-tap beamforming at linear average SNR ``snr_bar``."""
    return _expected_log_rate(float(snr_bar), 2)


def db_to_linear(db) -> np.ndarray | float:
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class MisoModel:
    snr_bar: float
    beta1: float = field(init=False)
    beta2: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "beta1", beta1(self.snr_bar))
        object.__setattr__(self, "beta2", beta2(self.snr_bar))

    @classmethod
    def from_db(cls, snr_db: float) -> "MisoModel":
        return cls(float(db_to_linear(snr_db)))


def miso_rvq_rate(model: MisoModel, b) -> np.ndarray | float:
    """Approximate RVQ ergodic rate: ``beta2 (1 - 2^-b) + beta1 2^-b``."""
    loss = np.exp2(-np.asarray(b, dtype=float))
    out = model.beta2 * (1.0 - loss) + model.beta1 * loss
    return float(out) if np.ndim(out) == 0 else out


def miso_rvq_rate_continuous(b1, b2, bits) -> np.ndarray:
    """Same model evaluated on real-valued bits and vectors of betas."""
    loss = np.exp2(-np.asarray(bits, dtype=float))
    return np.asarray(b2) * (1.0 - loss) + np.asarray(b1) * loss


# --------------------------------------------------------------------------
# RVQ codebooks
# --------------------------------------------------------------------------


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Zero-mean unit-variance circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int = 2) -> np.ndarray:
    v = complex_gaussian(rng, (n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def codebook_gains(codebook: np.ndarray, channels: np.ndarray) -> np.ndarray:
    """``max_w |<h, w>|^2`` for every row ``h`` of ``channels``."""
    codebook = np.asarray(codebook)
    if codebook.size == 0:
        raise FbqError("codebook is empty")
    channels = np.atleast_2d(channels)
    # keep the projection block around 2^21 complex entries
    chunk = max(1, (1 << 21) // codebook.shape[0])
    out = np.empty(channels.shape[0])
    wh = codebook.conj().T
    for s in range(0, channels.shape[0], chunk):
        proj = channels[s : s + chunk] @ wh
        out[s : s + chunk] = np.max(proj.real**2 + proj.imag**2, axis=1)
    return out


def codebook_rate(codebook, snr_bar: float, channel) -> float:
    """Instantaneous rate ``log2(1 + snr * max_w |<h, w>|^2)`` for one channel vector."""
    g = codebook_gains(np.asarray(codebook), np.asarray(channel, dtype=complex).reshape(1, -1))[0]
    return float(np.log2(1.0 + snr_bar * g))


@dataclass(frozen=True, eq=False)
class SuperCodebook:
    """Best-of-random RVQ codebook for every bit count ``0..B``."""

    codebooks: tuple
    seed: int

    @property
    def max_bits(self) -> int:
        return len(self.codebooks) - 1

    def __getitem__(self, b: int) -> np.ndarray:
        if b < 0 or b >= len(self.codebooks):
            raise FbqError(f"no codebook for {b} bits (super-codebook covers 0..{self.max_bits})")
        return self.codebooks[b]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "codebooks": [[[[w.real, w.imag] for w in cw] for cw in cb] for cb in self.codebooks],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SuperCodebook":
        books = []
        for cb in obj["codebooks"]:
            arr = np.asarray(cb, dtype=float)
            books.append(arr[..., 0] + 1j * arr[..., 1])
        return cls(tuple(books), int(obj["seed"]))


def generate_supercodebook(B: int, num_candidates: int = 100, num_channels: int = 1000, seed: int = 0,
                           snr_bar: float = 1.0) -> SuperCodebook:
    """For each ``b`` keep the best of ``num_candidates`` random ``2**b``-point codebooks.

    Candidates are ranked by empirical ergodic rate over ``num_channels``
    Gaussian channels at ``snr_bar`` (0 dB by default).
    """
    if B < 0 or num_candidates < 1 or num_channels < 1:
        raise FbqError("need B >= 0 and at least one candidate and channel")
    books = [np.array([[1.0 + 0j, 0j]])]
    for b in range(1, B + 1):
        rng = np.random.default_rng([seed, b])
        h = complex_gaussian(rng, (num_channels, 2))
        best, best_rate = None, -np.inf
        for _ in range(num_candidates):
            cb = random_unit_vectors(rng, 1 << b)
            rate = float(np.mean(np.log2(1.0 + snr_bar * codebook_gains(cb, h))))
            if rate > best_rate:
                best, best_rate = cb, rate
        books.append(best)
    for cb in books:
        cb.setflags(write=False)
    return SuperCodebook(tuple(books), int(seed))


def ergodic_codebook_rate(codebook, snr_bar: float, channels: np.ndarray) -> float:
    return float(np.mean(np.log2(1.0 + snr_bar * codebook_gains(codebook, channels))))


# --------------------------------------------------------------------------
# Rate tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UserModel:
    """Rate model for one virtual user.

    ``kind`` is ``"miso-rvq"`` (uses ``snr`` linear), ``"siso"`` (``alpha``,
    ``sigma``) or ``"table"`` (explicit ``rates`` for 0..B bits).
    """

    kind: str
    snr: float | None = None
    alpha: float = 1.0
    sigma: float = 20.0
    rates: tuple | None = None

    def to_json(self) -> dict:
        if self.kind == "miso-rvq":
            return {"kind": self.kind, "snr_db": 10.0 * math.log10(self.snr)}
        if self.kind == "siso":
            return {"kind": self.kind, "alpha": self.alpha, "sigma": self.sigma}
        return {"kind": self.kind, "rates": list(self.rates)}

    @classmethod
    def from_json(cls, obj: dict) -> "UserModel":
        kind = obj["kind"]
        if kind == "miso-rvq":
            return cls(kind, snr=float(db_to_linear(obj["snr_db"])))
        if kind == "siso":
            return cls(kind, alpha=float(obj.get("alpha", 1.0)), sigma=float(obj.get("sigma", 20.0)))
        if kind == "table":
            return cls(kind, rates=tuple(float(x) for x in obj["rates"]))
        raise FbqError(f"unknown rate model kind {kind!r}")


@dataclass(frozen=True)
class ChannelProfile:
    users: tuple

    @classmethod
    def miso_db(cls, snr_db: Sequence[float], bands_per_user: int = 1) -> "ChannelProfile":
        """MISO-RVQ users with the given dB SNRs, each replicated over its bands."""
        snr = [float(db_to_linear(s)) for s in snr_db for _ in range(bands_per_user)]
        return cls(tuple(UserModel("miso-rvq", snr=s) for s in snr))

    def to_json(self) -> dict:
        return {"users": [u.to_json() for u in self.users]}

    @classmethod
    def from_json(cls, obj: dict) -> "ChannelProfile":
        return cls(tuple(UserModel.from_json(u) for u in obj["users"]))


def _row(user: UserModel, B: int) -> np.ndarray:
    if user.kind == "miso-rvq":
        return np.asarray(miso_rvq_rate(MisoModel(user.snr), np.arange(B + 1)), dtype=float)
    if user.kind == "siso":
        m = SisoModel(user.alpha, user.sigma)
        return np.array([siso_rate(m, b) for b in range(B + 1)])
    if user.kind == "table":
        if len(user.rates) != B + 1:
            raise FbqError(f"explicit rate row has {len(user.rates)} entries, expected {B + 1}")
        return np.asarray(user.rates, dtype=float)
    raise FbqError(f"unknown rate model kind {user.kind!r}")


def build_rate_table(profile: ChannelProfile, B: int) -> RateTable:
    entries = np.vstack([_row(u, B) for u in profile.users]) if profile.users else np.zeros((0, B + 1))
    return RateTable.tagged(entries)


def miso_table(snrs, B: int) -> RateTable:
    """Rate table with one MISO-RVQ row per linear SNR."""
    bits = np.arange(B + 1)
    rows = [miso_rvq_rate(MisoModel(float(s)), bits) for s in snrs]
    return RateTable.tagged(np.vstack(rows) if rows else np.zeros((0, B + 1)))


def _entries(table) -> np.ndarray:
    return table.entries if isinstance(table, RateTable) else np.atleast_2d(np.asarray(table, dtype=float))


def check_monotone(table, slack: float = SLACK) -> bool:
    a = _entries(table)
    return bool(np.all(np.diff(a, axis=1) >= -slack))


def check_submodular(table, slack: float = SLACK) -> bool:
    """Forward differences of every row are non-increasing (diminishing returns per bit)."""
    a = _entries(table)
    return bool(np.all(np.diff(a, n=2, axis=1) <= slack))


def write_rate_table_csv(table: RateTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user"] + [f"b{j}" for j in range(table.budget + 1)])
        for i, row in enumerate(table.entries):
            w.writerow([i] + [repr(float(x)) for x in row])


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
