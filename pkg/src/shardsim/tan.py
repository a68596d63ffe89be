"""Transactions-as-nodes DAG maintained under streaming insertion.

Every transaction is a node; a directed edge (u, v) exists when u spends
an output of v.  Nodes arrive in topological order (parents always carry
smaller ids), so the graph is acyclic by construction and supports cheap
append-only bookkeeping: per-node parent tuples plus a running count of
distinct children per node.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator


class TanError(Exception):
    pass


class UnknownParent(TanError):
    """A record references a parent id that has not been inserted yet."""


class DuplicateId(TanError):
    """A record's id does not match the next dense index."""


class ZeroWindow(TanError):
    """Window size for the average-degree series must be >= 1."""


@dataclass(frozen=True)
class TxRecord:
    """One transaction: dense id, distinct parent ids, UTXO counts.

    `inputs` is deduplicated at the parent-transaction level; the raw
    UTXO-level input count (before dedup) is kept in `input_count_raw`.
    A record with no inputs is a coinbase transaction.
    """

    id: int
    inputs: tuple[int, ...]
    output_count: int
    input_count_raw: int = -1

    def __post_init__(self) -> None:
        deduped = tuple(sorted(set(self.inputs)))
        if deduped != tuple(self.inputs):
            object.__setattr__(self, "inputs", deduped)
        if self.input_count_raw < 0:
            object.__setattr__(self, "input_count_raw", len(self.inputs))
        if self.output_count < 0:
            raise ValueError(f"negative output_count for tx {self.id}")

    @property
    def is_coinbase(self) -> bool:
        return not self.inputs


@dataclass
class DegreeHistogram:
    in_degree: Counter = field(default_factory=Counter)
    out_degree: Counter = field(default_factory=Counter)


class TanGraph:
    """Append-only transaction DAG with O(1) out-degree lookups."""

    def __init__(self) -> None:
        self._inputs: list[tuple[int, ...]] = []
        self._output_counts: list[int] = []
        self._raw_counts: list[int] = []
        self._out_degree: list[int] = []

    def __len__(self) -> int:
        return len(self._inputs)

    def __contains__(self, txid: int) -> bool:
        return 0 <= txid < len(self._inputs)

    def add_tx(self, record: TxRecord) -> int:
        """Insert the next record; parents' out-degrees gain one each.

        The record id must equal the next dense index and every parent
        must already be present.
        """
        nxt = len(self._inputs)
        if record.id != nxt:
            raise DuplicateId(
                f"tx id {record.id} does not match next index {nxt}"
            )
        for p in record.inputs:
            if not (0 <= p < nxt):
                raise UnknownParent(f"tx {record.id} references unknown parent {p}")
        self._inputs.append(record.inputs)
        self._output_counts.append(record.output_count)
        self._raw_counts.append(record.input_count_raw)
        self._out_degree.append(0)
        for p in record.inputs:
            self._out_degree[p] += 1
        return record.id

    def record(self, txid: int) -> TxRecord:
        return TxRecord(
            id=txid,
            inputs=self._inputs[txid],
            output_count=self._output_counts[txid],
            input_count_raw=self._raw_counts[txid],
        )

    def parents(self, txid: int) -> tuple[int, ...]:
        return self._inputs[txid]

    def output_count(self, txid: int) -> int:
        return self._output_counts[txid]

    def in_degree(self, txid: int) -> int:
        return len(self._inputs[txid])

    def out_degree(self, txid: int) -> int:
        return self._out_degree[txid]

    def records(self) -> Iterator[TxRecord]:
        for i in range(len(self._inputs)):
            yield self.record(i)

    def degree_histogram(self) -> DegreeHistogram:
        """Node counts per degree, separately for in- and out-degree."""
        hist = DegreeHistogram()
        for parents in self._inputs:
            hist.in_degree[len(parents)] += 1
        for d in self._out_degree:
            hist.out_degree[d] += 1
        return hist

    def avg_degree_series(self, window: int) -> list[tuple[int, float]]:
        """Mean in-degree per window of `window` consecutive arrivals.

        The trailing partial window, if any, is included.
        """
        if window < 1:
            raise ZeroWindow(f"window must be >= 1, got {window}")
        series: list[tuple[int, float]] = []
        n = len(self._inputs)
        for start in range(0, n, window):
            chunk = self._inputs[start : start + window]
            total = sum(len(p) for p in chunk)
            series.append((start // window, total / len(chunk)))
        return series


def build_graph(records: Iterable[TxRecord]) -> TanGraph:
    g = TanGraph()
    for r in records:
        g.add_tx(r)
    return g
