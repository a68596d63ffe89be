"""Strategies mapping each arriving transaction to a shard.

Five policies share one streaming interface: hash-based random placement,
greedy input-shard matching under a soft size cap, highest
transaction-to-shard score under the same cap, temporal fitness
(score minus weighted expected latency, no cap), and replay of an
imported partition file.  A strategy owns all state it needs (shard
sizes, prior assignments, and for the score-based ones the transaction
graph plus score vectors), so callers just feed records in arrival
order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .l2s import LatencyScorer, RateModel
from .t2s import ScoreState
from .tan import TanGraph, TxRecord

_M64 = (1 << 64) - 1

STRATEGY_KINDS = ("random", "greedy", "t2s", "optchain", "imported")


class PlacementError(Exception):
    pass


class MissingAssignment(PlacementError):
    """The imported partition does not cover a transaction."""


@dataclass(frozen=True, slots=True)
class PlacementDecision:
    tx: int
    shard: int
    input_shards: frozenset[int]
    is_cross_shard: bool


def make_decision(tx: int, shard: int, input_shards: frozenset[int]) -> PlacementDecision:
    """Cross iff the input shard set is nonempty and differs from {shard}."""
    cross = bool(input_shards) and input_shards != frozenset((shard,))
    return PlacementDecision(tx=tx, shard=shard, input_shards=input_shards, is_cross_shard=cross)


@dataclass
class StrategyConfig:
    kind: str = "random"
    k: int = 4
    epsilon: float = 0.1
    fitness_weight: float = 0.01
    capacity_n: int | None = None
    alpha: float = 0.5
    l2s_literal: bool = False

    def validate(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise PlacementError(f"unknown strategy kind {self.kind!r}")
        if self.k < 1:
            raise PlacementError(f"k must be >= 1, got {self.k}")
        if self.epsilon < 0:
            raise PlacementError("epsilon must be >= 0")
        if self.capacity_n is not None and self.capacity_n < 1:
            raise PlacementError("capacity_n must be >= 1 when given")


# ---------------------------------------------------------------------------
# Policy kernels
# ---------------------------------------------------------------------------

def _splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def place_random(tx: int, k: int) -> int:
    """Stable 64-bit hash of the transaction identity, mod shard count."""
    return _splitmix64(tx) % k


def _cap(n: int, k: int, epsilon: float) -> int:
    return int((1.0 + epsilon) * (n // k))


def _least_loaded(counts: Sequence[int]) -> int:
    best = 0
    for j in range(1, len(counts)):
        if counts[j] < counts[best]:
            best = j
    return best


def place_greedy(
    tx: int,
    shard_tx_counts: Sequence[int],
    input_shards: frozenset[int],
    epsilon: float,
    capacity_n: int,
) -> tuple[int, bool]:
    """Pick the shard minimizing the count of input shards it differs from.

    Any admissible input shard attains the minimum; ties break to the
    lowest index.  Shards at the (1+epsilon)*floor(n/k) cap are skipped;
    if every shard is full the least-loaded one is used and the overflow
    is flagged (second return value).
    """
    k = len(shard_tx_counts)
    cap = _cap(capacity_n, k, epsilon)
    admissible = [j for j in range(k) if shard_tx_counts[j] < cap]
    if not admissible:
        return _least_loaded(shard_tx_counts), True
    for j in sorted(input_shards):
        if shard_tx_counts[j] < cap:
            return j, False
    return admissible[0], False


def place_t2s(
    tx: int,
    score: np.ndarray,
    shard_tx_counts: Sequence[int],
    epsilon: float,
    capacity_n: int,
) -> tuple[int, bool]:
    """Highest-scoring shard under the cap; zero score goes least-loaded."""
    k = len(shard_tx_counts)
    cap = _cap(capacity_n, k, epsilon)
    admissible = [j for j in range(k) if shard_tx_counts[j] < cap]
    if not admissible:
        return _least_loaded(shard_tx_counts), True
    if not np.any(score > 0.0):
        best = admissible[0]
        for j in admissible[1:]:
            if shard_tx_counts[j] < shard_tx_counts[best]:
                best = j
        return best, False
    best = admissible[0]
    for j in admissible[1:]:
        if score[j] > score[best]:
            best = j
    return best, False


def place_optchain(
    tx: int,
    score: np.ndarray,
    scorer: LatencyScorer,
    input_shards: frozenset[int],
    fitness_weight: float,
    shard_tx_counts: Sequence[int] | None = None,
) -> int:
    """Maximize score[j] minus weighted expected latency of placing at j.

    Proof-of-acceptance is owed by the input shards (the output shard
    included only when it already is one); a coinbase pays only the
    confirmation stage.  No size cap: balance comes from the latency
    term.  Exact fitness ties (typical for coinbases under identical
    rates) break to the least-loaded shard, then the lowest index, which
    keeps the identical-rate behavior aligned with the capless
    score-argmax policy.
    """
    k = len(score)
    counts = shard_tx_counts if shard_tx_counts is not None else [0] * k
    best = 0
    best_fit = -np.inf
    for j in range(k):
        fit = score[j] - fitness_weight * scorer.expected(input_shards, j)
        if fit > best_fit or (fit == best_fit and counts[j] < counts[best]):
            best, best_fit = j, fit
    return best


def place_imported(tx: int, partition: Sequence[int]) -> int:
    if tx >= len(partition):
        raise MissingAssignment(f"partition does not cover tx {tx}")
    return int(partition[tx])


# ---------------------------------------------------------------------------
# Streaming strategy objects
# ---------------------------------------------------------------------------

class BaseStrategy:
    """Shared bookkeeping: prior assignments, shard sizes, cross counts."""

    kind = "base"

    def __init__(self, cfg: StrategyConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        self.k = cfg.k
        self.assignment: list[int] = []
        self.shard_counts = [0] * cfg.k
        self.placed = 0
        self.cap_overflow_events = 0
        self.stats = CrossTxAccumulator(cfg.k)

    def input_shards(self, record: TxRecord) -> frozenset[int]:
        return frozenset(self.assignment[p] for p in record.inputs)

    def _capacity_n(self) -> int:
        # Offline runs know the total; streaming runs grow the cap with
        # the number of placements seen so far.
        return self.cfg.capacity_n if self.cfg.capacity_n is not None else self.placed + 1

    def _choose(self, record: TxRecord, input_shards: frozenset[int]) -> int:
        raise NotImplementedError

    def _observe(self, record: TxRecord, shard: int) -> None:
        """Hook for state carried by score-based strategies."""

    def place(self, record: TxRecord) -> PlacementDecision:
        if record.id != len(self.assignment):
            raise PlacementError(
                f"records must arrive densely; expected {len(self.assignment)}, got {record.id}"
            )
        shards_in = self.input_shards(record)
        shard = self._choose(record, shards_in)
        self.assignment.append(shard)
        self.shard_counts[shard] += 1
        self.placed += 1
        decision = make_decision(record.id, shard, shards_in)
        self.stats.add(decision)
        return decision

    def absorb(self, record: TxRecord, shard: int) -> None:
        """Register a pre-existing placement (warm start) without deciding
        or counting it in the cross-transaction statistics."""
        if record.id != len(self.assignment):
            raise PlacementError("warm-start records must arrive densely")
        if not (0 <= shard < self.k):
            raise PlacementError(f"warm-start shard {shard} out of range")
        self._observe(record, shard)
        self.assignment.append(shard)
        self.shard_counts[shard] += 1
        self.placed += 1


class RandomStrategy(BaseStrategy):
    kind = "random"

    def _choose(self, record: TxRecord, input_shards: frozenset[int]) -> int:
        return place_random(record.id, self.k)


class GreedyStrategy(BaseStrategy):
    kind = "greedy"

    def _choose(self, record: TxRecord, input_shards: frozenset[int]) -> int:
        shard, overflow = place_greedy(
            record.id, self.shard_counts, input_shards, self.cfg.epsilon, self._capacity_n()
        )
        if overflow:
            self.cap_overflow_events += 1
        return shard


class _ScoredStrategy(BaseStrategy):
    """Common graph + score-state plumbing for t2s and optchain."""

    def __init__(self, cfg: StrategyConfig) -> None:
        super().__init__(cfg)
        self.graph = TanGraph()
        self.scores = ScoreState(k=cfg.k, alpha=cfg.alpha)

    def _observe(self, record: TxRecord, shard: int) -> None:
        self.graph.add_tx(record)
        self.scores.compute_score(record.id, record.inputs, self.graph)
        self.scores.commit_placement(record.id, shard)

    def place(self, record: TxRecord) -> PlacementDecision:
        self.graph.add_tx(record)
        self._score = self.scores.compute_score(record.id, record.inputs, self.graph)
        decision = super().place(record)
        self.scores.commit_placement(record.id, decision.shard)
        return decision


class T2SStrategy(_ScoredStrategy):
    kind = "t2s"

    def _choose(self, record: TxRecord, input_shards: frozenset[int]) -> int:
        shard, overflow = place_t2s(
            record.id, self._score, self.shard_counts, self.cfg.epsilon, self._capacity_n()
        )
        if overflow:
            self.cap_overflow_events += 1
        return shard


class OptChainStrategy(_ScoredStrategy):
    """Temporal-fitness placement.

    The expected-latency term splits into the slowest-proof stage, which
    depends only on the input shards and is therefore the same for every
    candidate, and the confirmation stage at the candidate itself.  When a
    live confirmation-expectation callback is available (simulation), the
    ranking drops the constant proof term and uses the callback, which
    tracks shard queues tick-free; offline it evaluates the full
    expectation against the frozen rate model.
    """

    kind = "optchain"

    def __init__(
        self,
        cfg: StrategyConfig,
        scorer: LatencyScorer,
        confirm_expectation: Callable[[int], float] | None = None,
    ) -> None:
        super().__init__(cfg)
        self.scorer = scorer
        self.confirm_expectation = confirm_expectation

    def _choose(self, record: TxRecord, input_shards: frozenset[int]) -> int:
        if self.confirm_expectation is not None:
            w = self.cfg.fitness_weight
            conf = self.confirm_expectation
            counts = self.shard_counts
            best, best_fit = 0, -np.inf
            for j in range(self.k):
                fit = self._score[j] - w * conf(j)
                if fit > best_fit or (fit == best_fit and counts[j] < counts[best]):
                    best, best_fit = j, fit
            return best
        return place_optchain(
            record.id,
            self._score,
            self.scorer,
            input_shards,
            self.cfg.fitness_weight,
            self.shard_counts,
        )


class ImportedStrategy(BaseStrategy):
    kind = "imported"

    def __init__(self, cfg: StrategyConfig, partition: Sequence[int]) -> None:
        super().__init__(cfg)
        self.partition = partition
        for i, s in enumerate(partition):
            if not (0 <= s < cfg.k):
                raise PlacementError(f"partition assigns tx {i} to invalid shard {s}")

    def _choose(self, record: TxRecord, input_shards: frozenset[int]) -> int:
        return place_imported(record.id, self.partition)


def build_strategy(
    cfg: StrategyConfig,
    partition: Sequence[int] | None = None,
    rate_model: RateModel | None = None,
    scorer: LatencyScorer | None = None,
    confirm_expectation: Callable[[int], float] | None = None,
) -> BaseStrategy:
    cfg.validate()
    if cfg.kind == "random":
        return RandomStrategy(cfg)
    if cfg.kind == "greedy":
        return GreedyStrategy(cfg)
    if cfg.kind == "t2s":
        return T2SStrategy(cfg)
    if cfg.kind == "optchain":
        if scorer is None:
            if rate_model is None:
                rate_model = RateModel.uniform(cfg.k, lambda_c=5.0, lambda_v=1.0)
            scorer = LatencyScorer(rate_model, literal_self_convolution=cfg.l2s_literal)
        return OptChainStrategy(cfg, scorer, confirm_expectation=confirm_expectation)
    if cfg.kind == "imported":
        if partition is None:
            raise PlacementError("imported strategy needs a partition")
        return ImportedStrategy(cfg, partition)
    raise PlacementError(f"unknown strategy kind {cfg.kind!r}")


def warm_start(
    strategy: BaseStrategy, prefix: Iterable[TxRecord], partition: Sequence[int]
) -> int:
    """Seed a strategy with an already-partitioned stream prefix."""
    count = 0
    for record in prefix:
        strategy.absorb(record, place_imported(record.id, partition))
        count += 1
    return count


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

@dataclass
class CrossTxAccumulator:
    """Streaming aggregate of placement decisions."""

    k: int
    total: int = 0
    cross_count: int = 0
    per_shard: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.per_shard:
            self.per_shard = [0] * self.k

    def add(self, decision: PlacementDecision) -> None:
        self.total += 1
        self.per_shard[decision.shard] += 1
        if decision.is_cross_shard:
            self.cross_count += 1

    @property
    def fraction(self) -> float:
        return self.cross_count / self.total if self.total else 0.0

    def report(self) -> dict:
        return {
            "total": self.total,
            "cross_count": self.cross_count,
            "fraction": self.fraction,
            "per_shard": list(self.per_shard),
        }


def cross_tx_report(decisions: Iterable[PlacementDecision], k: int) -> dict:
    acc = CrossTxAccumulator(k)
    for d in decisions:
        acc.add(d)
    return acc.report()


def read_metis_partition(path: str) -> list[int]:
    """Metis output: line r holds the shard index of tx r, ASCII decimal."""
    parts: list[int] = []
    with open(path, "r", encoding="ascii") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                parts.append(int(line))
            except ValueError as exc:
                raise PlacementError(f"partition line {line_no}: {line!r}") from exc
    return parts


def write_decision_log(path: str, decisions: Iterable[PlacementDecision]) -> None:
    """CSV log, one row per decision: tx_id,shard,is_cross,input_shards.

    Input shards are sorted and joined with ';'.
    """
    with open(path, "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["tx_id", "shard", "is_cross", "input_shards"])
        for d in decisions:
            shards = ";".join(str(s) for s in sorted(d.input_shards))
            writer.writerow([d.tx, d.shard, int(d.is_cross_shard), shards])


def run_stream(
    strategy: BaseStrategy, records: Iterable[TxRecord]
) -> Iterator[PlacementDecision]:
    for record in records:
        yield strategy.place(record)
