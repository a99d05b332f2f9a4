"""Historical resource-usage accounting with exponential decay and a time window.

Each record is a weighted resource-seconds amount:

    amount = (cpu_weight * vcpus + mem_weight_per_gb * memory_gb) * seconds

The effective usage of an entity at time ``now`` sums its records no older
than ``window``, each decayed by ``2 ** (-(now - at) / half_life)``.  The
ledger keeps an incrementally decayed running sum per entity so queries stay
O(1) amortized even with hundreds of thousands of records; appends and
queries must move forward in time (the simulator clock does).
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

from .core import ResourceVector


@dataclass(frozen=True)
class UsageRecord:
    entity: str
    amount: float
    at: float


class _EntityUsage:
    __slots__ = ("records", "decayed_sum", "as_of")

    def __init__(self) -> None:
        self.records: deque[tuple[float, float]] = deque()  # (amount, at), time-ordered
        self.decayed_sum = 0.0
        self.as_of = 0.0


class UsageLedger:
    def __init__(
        self,
        half_life: float = 86_400.0,
        window: float = 604_800.0,
        cpu_weight: float = 1.0,
        mem_weight_per_gb: float = 0.25,
    ) -> None:
        if half_life <= 0 or window <= 0:
            raise ValueError("half_life and window must be > 0")
        if cpu_weight < 0 or mem_weight_per_gb < 0:
            raise ValueError("usage weights must be >= 0")
        self.half_life = half_life
        self.window = window
        self.cpu_weight = cpu_weight
        self.mem_weight_per_gb = mem_weight_per_gb
        self._entities: dict[str, _EntityUsage] = {}

    def weighted_amount(self, consumed: ResourceVector, seconds: float) -> float:
        per_second = self.cpu_weight * consumed.vcpus + self.mem_weight_per_gb * (
            consumed.memory_mb / 1024.0
        )
        return per_second * seconds

    def record(self, entity: str, consumed: ResourceVector, seconds: float, at: float) -> float:
        """Append one usage record; returns the weighted amount stored."""
        if seconds < 0:
            raise ValueError(f"negative duration {seconds}")
        if at < 0:
            raise ValueError(f"negative timestamp {at}")
        amount = self.weighted_amount(consumed, seconds)
        eu = self._entities.setdefault(entity, _EntityUsage())
        if eu.records and at < eu.records[-1][1]:
            raise ValueError(f"records for {entity!r} must be appended in time order")
        self._decay_to(eu, at)
        eu.records.append((amount, at))
        eu.decayed_sum += amount
        return amount

    def _decay_to(self, eu: _EntityUsage, now: float) -> None:
        if now < eu.as_of:
            raise ValueError("usage queries must not move backwards in time")
        if now > eu.as_of and eu.decayed_sum:
            eu.decayed_sum *= 2.0 ** (-(now - eu.as_of) / self.half_life)
        eu.as_of = now
        # Drop records past the window; their decayed contribution leaves the sum.
        cutoff = now - self.window
        while eu.records and eu.records[0][1] < cutoff:
            amount, at = eu.records.popleft()
            eu.decayed_sum -= amount * 2.0 ** (-(now - at) / self.half_life)
        if eu.decayed_sum < 0.0:
            eu.decayed_sum = 0.0
        if not eu.records:
            eu.decayed_sum = 0.0

    def effective(self, entity: str, now: float) -> float:
        """Decayed, windowed usage of one entity at time ``now``."""
        eu = self._entities.get(entity)
        if eu is None:
            return 0.0
        self._decay_to(eu, now)
        return eu.decayed_sum

    def normalized(self, entity: str, peer_set, now: float) -> float:
        """Entity's fraction of the peer set's total effective usage.

        Returns 0 when nobody in the peer set has any usage.
        """
        peers = list(peer_set)
        if entity not in peers:
            raise ValueError(f"{entity!r} not in its own peer set")
        total = 0.0
        mine = 0.0
        for p in peers:
            u = self.effective(p, now)
            total += u
            if p == entity:
                mine = u
        if total == 0.0:
            return 0.0
        return mine / total

    def export_lines(self):
        """All retained records as ``entity,amount,at`` lines, time-ordered."""

        def stream(entity: str, eu: _EntityUsage):
            return ((at, entity, amount) for amount, at in eu.records)

        streams = [stream(entity, eu) for entity, eu in sorted(self._entities.items())]
        for at, entity, amount in heapq.merge(*streams):
            yield f"{entity},{amount!r},{at!r}"
