"""Latency-to-shard model: exponential stage rates and expected delays.

Getting a proof out of shard i is modeled as an exponential communication
stage (rate lambda_c) followed by an exponential verification stage (rate
lambda_v); their convolution is a hypoexponential whose density and CDF
have closed forms.  A transaction placed in shard j waits for the maximum
of the proof times over its input shards, then for one confirmation stage
at j.  The expected total is evaluated with composite Simpson quadrature
on [0, T_max] so repeated scoring is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Relative rate gap below which the two stages are treated as equal-rate
# (Erlang-2) to avoid catastrophic cancellation.
EQUAL_RATE_GAP = 1e-9

DEFAULT_PANELS = 4096
DEFAULT_TMAX_FACTOR = 20.0
TAIL_BOUND = 1e-6


class LatencyError(Exception):
    pass


class NegativeTime(LatencyError):
    pass


class EmptyProofSet(LatencyError):
    pass


class NonPositiveRate(LatencyError):
    pass


@dataclass(frozen=True)
class ShardRates:
    """Per-shard rates: 1/lambda_c is the expected communication time,
    1/lambda_v the expected verification time, both in seconds."""

    lambda_c: float
    lambda_v: float

    def __post_init__(self) -> None:
        for name, lam in (("lambda_c", self.lambda_c), ("lambda_v", self.lambda_v)):
            if not (math.isfinite(lam) and lam > 0):
                raise NonPositiveRate(f"{name} must be finite and > 0, got {lam}")

    @property
    def mean_total(self) -> float:
        return 1.0 / self.lambda_c + 1.0 / self.lambda_v

    def _nearly_equal(self) -> bool:
        return abs(self.lambda_v - self.lambda_c) <= EQUAL_RATE_GAP * max(
            self.lambda_c, self.lambda_v
        )


class RateModel:
    """Immutable snapshot of per-shard rates."""

    def __init__(self, shards: Sequence[ShardRates]) -> None:
        if not shards:
            raise NonPositiveRate("rate model needs at least one shard")
        self.shards = tuple(shards)

    def __len__(self) -> int:
        return len(self.shards)

    def __getitem__(self, i: int) -> ShardRates:
        return self.shards[i]

    @classmethod
    def uniform(cls, k: int, lambda_c: float, lambda_v: float) -> "RateModel":
        return cls([ShardRates(lambda_c, lambda_v)] * k)

    @classmethod
    def from_json(cls, path: str) -> "RateModel":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(
            [ShardRates(s["lambda_c"], s["lambda_v"]) for s in data["shards"]]
        )

    def to_json(self, path: str) -> None:
        data = {
            "shards": [
                {"lambda_c": s.lambda_c, "lambda_v": s.lambda_v} for s in self.shards
            ]
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
            f.write("\n")


def _check_time(t: np.ndarray | float) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0):
        raise NegativeTime("time must be >= 0")
    return arr


def proof_time_pdf(rates: ShardRates, t: np.ndarray | float) -> np.ndarray | float:
    """Density of communication + verification time for one shard."""
    arr = _check_time(t)
    # The two-stage density is symmetric in the rates; anchoring the decay
    # on the smaller one keeps delta >= 0 so expm1 never overflows and the
    # near-equal subtraction stays accurate.
    a, b = sorted((rates.lambda_c, rates.lambda_v))
    if rates._nearly_equal():
        lam = 0.5 * (a + b)
        out = lam * lam * arr * np.exp(-lam * arr)
    else:
        delta = b - a
        # a*b/(b-a) * (exp(-a t) - exp(-b t))
        out = a * b * np.exp(-a * arr) * (-np.expm1(-delta * arr)) / delta
    return out if isinstance(t, np.ndarray) else float(out)


def proof_time_cdf(rates: ShardRates, T: np.ndarray | float) -> np.ndarray | float:
    """P(proof time < T) for one shard; monotone, 0 at 0, -> 1 at infinity."""
    arr = _check_time(T)
    a, b = sorted((rates.lambda_c, rates.lambda_v))
    if rates._nearly_equal():
        lam = 0.5 * (a + b)
        out = -np.expm1(-lam * arr) - lam * arr * np.exp(-lam * arr)
    else:
        delta = b - a
        out = -np.expm1(-a * arr) - a * np.exp(-a * arr) * (
            -np.expm1(-delta * arr)
        ) / delta
    return out if isinstance(T, np.ndarray) else float(out)


def _as_rate_list(rates: Iterable[ShardRates]) -> list[ShardRates]:
    lst = list(rates)
    if not lst:
        raise EmptyProofSet("proof shard set is empty")
    return lst


def all_proofs_cdf(
    proof_rates: Iterable[ShardRates], T: np.ndarray | float
) -> np.ndarray | float:
    """CDF of the slowest proof among shards queried simultaneously."""
    lst = _as_rate_list(proof_rates)
    arr = _check_time(T)
    out = np.ones_like(arr, dtype=np.float64)
    for r in lst:
        out = out * proof_time_cdf(r, arr)
    return out if isinstance(T, np.ndarray) else float(out)


def all_proofs_pdf(
    proof_rates: Iterable[ShardRates], t: np.ndarray | float
) -> np.ndarray | float:
    """Density of the slowest proof: sum_i f_i(t) * prod_{r != i} F_r(t)."""
    lst = _as_rate_list(proof_rates)
    arr = _check_time(t)
    cdfs = np.vstack([np.atleast_1d(proof_time_cdf(r, arr)) for r in lst])
    pdfs = np.vstack([np.atleast_1d(proof_time_pdf(r, arr)) for r in lst])
    m = len(lst)
    out = np.zeros(cdfs.shape[1], dtype=np.float64)
    for i in range(m):
        others = np.ones(cdfs.shape[1], dtype=np.float64)
        for r in range(m):
            if r != i:
                others *= cdfs[r]
        out += pdfs[i] * others
    if isinstance(t, np.ndarray):
        return out.reshape(np.shape(t))
    return float(out[0])


def _simpson_weights(n_points: int, h: float) -> np.ndarray:
    if n_points % 2 == 0:
        raise ValueError("Simpson rule needs an odd number of grid points")
    w = np.ones(n_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _tmax(rate_sets: Iterable[ShardRates], factor: float) -> float:
    total = 0.0
    for r in rate_sets:
        total += 1.0 / r.lambda_c + 1.0 / r.lambda_v
    return factor * total


def _grid(tmax: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    ts = np.linspace(0.0, tmax, panels + 1)
    return ts, _simpson_weights(panels + 1, tmax / panels)


def expected_max_proof_time(
    proof_rates: Iterable[ShardRates],
    panels: int = DEFAULT_PANELS,
    tmax_factor: float = DEFAULT_TMAX_FACTOR,
    tmax: float | None = None,
) -> float:
    """E[max over proof shards] via Simpson quadrature of t * density."""
    lst = _as_rate_list(proof_rates)
    limit = _tmax(lst, tmax_factor) if tmax is None else tmax
    while float(1.0 - all_proofs_cdf(lst, limit)) >= TAIL_BOUND:
        limit *= 2.0
    ts, w = _grid(limit, panels)
    dens = all_proofs_pdf(lst, ts)
    return float(np.dot(w, ts * dens))


def expected_stage_time(
    rates: ShardRates,
    panels: int = DEFAULT_PANELS,
    tmax_factor: float = DEFAULT_TMAX_FACTOR,
    tmax: float | None = None,
) -> float:
    """E[one hypoexponential stage] via the same quadrature."""
    limit = _tmax([rates], tmax_factor) if tmax is None else tmax
    while float(1.0 - proof_time_cdf(rates, limit)) >= TAIL_BOUND:
        limit *= 2.0
    ts, w = _grid(limit, panels)
    return float(np.dot(w, ts * np.atleast_1d(proof_time_pdf(rates, ts))))


def expected_latency(
    proof_rates: Iterable[ShardRates],
    confirm_rates: ShardRates,
    literal_self_convolution: bool = False,
    panels: int = DEFAULT_PANELS,
    tmax_factor: float = DEFAULT_TMAX_FACTOR,
) -> float:
    """Expected end-to-end delay for a candidate output shard.

    Normal mode treats the total as (slowest proof) then (confirmation at
    the output shard) and adds the two stage expectations.  The literal
    mode instead evaluates the self-convolution form
    E = integral t * (f_v conv f_v)(t) dt, exposed for comparison via the
    CLI's --strict-paper-l2s flag.
    """
    lst = _as_rate_list(proof_rates)
    involved = lst + [confirm_rates]
    limit = _tmax(involved, tmax_factor)
    if literal_self_convolution:
        return _literal_self_convolution(lst, limit, panels)
    e_proofs = expected_max_proof_time(lst, panels=panels, tmax=limit)
    e_confirm = expected_stage_time(confirm_rates, panels=panels, tmax=limit)
    return e_proofs + e_confirm


def _literal_self_convolution(
    proof_rates: list[ShardRates], tmax: float, panels: int
) -> float:
    ts, _ = _grid(tmax, panels)
    h = tmax / panels
    f = np.atleast_1d(all_proofs_pdf(proof_rates, ts))
    # f(0) = 0, so the trapezoid endpoint corrections of the inner integral
    # vanish and the discrete convolution is the inner integral directly.
    conv = np.convolve(f, f) * h
    t_all = np.arange(conv.size) * h
    w = _simpson_weights(conv.size if conv.size % 2 == 1 else conv.size - 1, h)
    m = w.size
    return float(np.dot(w, t_all[:m] * conv[:m]))


# ---------------------------------------------------------------------------
# Rate estimation from telemetry
# ---------------------------------------------------------------------------

class DecayingMean:
    """Time-decayed mean with a configurable half-life in seconds."""

    def __init__(self, halflife: float) -> None:
        if halflife <= 0:
            raise NonPositiveRate("halflife must be > 0")
        self.halflife = halflife
        self._num = 0.0
        self._den = 0.0
        self._last = 0.0

    def update(self, now: float, value: float) -> None:
        decay = 0.5 ** ((now - self._last) / self.halflife) if self._den else 1.0
        self._num = self._num * decay + value
        self._den = self._den * decay + 1.0
        self._last = now

    @property
    def count_weight(self) -> float:
        return self._den

    def mean(self) -> float | None:
        if self._den == 0.0:
            return None
        return self._num / self._den


@dataclass
class ShardTelemetry:
    """Observations a client keeps per shard."""

    rtt: DecayingMean
    block_interval: DecayingMean
    queue_length: int = 0

    @classmethod
    def fresh(cls, halflife: float = 30.0) -> "ShardTelemetry":
        return cls(rtt=DecayingMean(halflife), block_interval=DecayingMean(halflife))


_MIN_MEAN = 1e-9


def estimate_rates(
    telemetry: Sequence[ShardTelemetry],
    defaults: ShardRates,
    block_capacity: int,
) -> RateModel:
    """Turn per-shard observations into a rate snapshot.

    lambda_c is the reciprocal of the decayed round-trip mean; lambda_v is
    the reciprocal of the decayed block interval inflated by the current
    queue backlog measured in block capacities.  Missing round-trip
    samples fall back to the default rate; a missing block interval falls
    back to the default verification time as the base interval, but the
    queue factor still applies (an empty queue then reproduces the
    default rate exactly).
    """
    shards = []
    for tele in telemetry:
        rtt = tele.rtt.mean()
        lam_c = defaults.lambda_c if rtt is None else 1.0 / max(rtt, _MIN_MEAN)
        interval = tele.block_interval.mean()
        if interval is None:
            interval = 1.0 / defaults.lambda_v
        expected_verif = max(interval, _MIN_MEAN) * (
            1.0 + tele.queue_length / block_capacity
        )
        lam_v = 1.0 / expected_verif
        shards.append(ShardRates(lambda_c=lam_c, lambda_v=lam_v))
    return RateModel(shards)


class LatencyScorer:
    """Caches expected-latency queries against one rate snapshot.

    Placement evaluates every candidate shard for every transaction, but
    the (proof shard set, output shard) combinations repeat heavily
    between rate updates, so a small cache removes nearly all quadrature
    work.  An empty proof shard set (coinbase) costs only the
    confirmation stage.
    """

    def __init__(
        self,
        model: RateModel,
        literal_self_convolution: bool = False,
        panels: int = DEFAULT_PANELS,
    ) -> None:
        self.literal = literal_self_convolution
        self.panels = panels
        self._cache: dict[tuple[frozenset[int], int], float] = {}
        self.model = model

    def update_model(self, model: RateModel) -> None:
        self.model = model
        self._cache.clear()

    def expected(self, proof_shards: frozenset[int], out_shard: int) -> float:
        key = (proof_shards, out_shard)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        confirm = self.model[out_shard]
        if proof_shards:
            val = expected_latency(
                [self.model[i] for i in sorted(proof_shards)],
                confirm,
                literal_self_convolution=self.literal,
                panels=self.panels,
            )
        else:
            val = expected_stage_time(confirm, panels=self.panels)
        self._cache[key] = val
        return val
