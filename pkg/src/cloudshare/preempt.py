"""Victim selection for preemptible instances.

When a normal request cannot be placed anywhere, the scheduler looks for a
host whose preemptible instances, once terminated, would free enough room.
Candidate victim sets are ranked by a configurable cascade; the default is
fewest victims, then smallest freed surplus beyond the demand, then the
youngest instances (least work lost).  Hosts holding at most
``exhaustive_limit`` preemptibles are searched over every feasible subset,
so the chosen set is exactly optimal under the cascade; larger hosts fall
back to a greedy youngest-first sweep.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping

from .core import (
    Host,
    Request,
    RequestClass,
    RequestState,
    ResourceVector,
    SchedulerError,
    rv_sum,
)

RANKER_FEWEST_VICTIMS = "fewest_victims"
RANKER_SMALLEST_SURPLUS = "smallest_freed_surplus"
RANKER_YOUNGEST_FIRST = "youngest_first"

DEFAULT_RANKERS = (RANKER_FEWEST_VICTIMS, RANKER_SMALLEST_SURPLUS, RANKER_YOUNGEST_FIRST)


@dataclass(frozen=True)
class VictimPolicy:
    rankers: tuple[str, ...] = DEFAULT_RANKERS
    host_filter: Callable[[Host, tuple[str, ...]], bool] | None = None
    exhaustive_limit: int = 10

    def __post_init__(self) -> None:
        if not self.rankers:
            raise ValueError("victim policy needs at least one ranker")
        unknown = set(self.rankers) - {
            RANKER_FEWEST_VICTIMS,
            RANKER_SMALLEST_SURPLUS,
            RANKER_YOUNGEST_FIRST,
        }
        if unknown:
            raise ValueError(f"unknown rankers: {sorted(unknown)}")


@dataclass(frozen=True)
class VictimSelection:
    host_id: str
    victims: tuple[str, ...]
    freed: ResourceVector


@dataclass(frozen=True)
class _Candidate:
    victims: tuple[str, ...]
    freed: ResourceVector
    free_after: ResourceVector
    start_times: tuple[float, ...]


def _cascade_key(cand: _Candidate, demand: ResourceVector, rankers: tuple[str, ...]):
    key: list = []
    for ranker in rankers:
        if ranker == RANKER_FEWEST_VICTIMS:
            key.append(len(cand.victims))
        elif ranker == RANKER_SMALLEST_SURPLUS:
            key.append(
                (cand.free_after.vcpus - demand.vcpus, cand.free_after.memory_mb - demand.memory_mb)
            )
        elif ranker == RANKER_YOUNGEST_FIRST:
            # Prefer sets whose members started latest: compare negated start
            # times youngest-first, shorter tuples win ties.
            key.append(tuple(sorted(-t for t in cand.start_times)))
    key.append(cand.victims)  # deterministic final tie-break
    return tuple(key)


def _feasible(free: ResourceVector, freed: ResourceVector, demand: ResourceVector) -> bool:
    return demand.vcpus <= free.vcpus + freed.vcpus and (
        demand.memory_mb <= free.memory_mb + freed.memory_mb
    )


def _candidate(host: Host, subset, requests: Mapping[str, Request]) -> _Candidate:
    ids = tuple(sorted(rid for rid, _ in subset))
    freed = rv_sum(size for _, size in subset)
    return _Candidate(
        victims=ids,
        freed=freed,
        free_after=host.free + freed,
        start_times=tuple(requests[rid].started_at or 0.0 for rid in ids),
    )


def _best_on_host(
    host: Host,
    demand: ResourceVector,
    preemptibles: list[tuple[str, ResourceVector]],
    requests: Mapping[str, Request],
    policy: VictimPolicy,
) -> _Candidate | None:
    n = len(preemptibles)
    if n <= policy.exhaustive_limit:
        best = None
        best_key = None
        fewest_first = policy.rankers[0] == RANKER_FEWEST_VICTIMS
        for k in range(1, n + 1):
            for subset in itertools.combinations(preemptibles, k):
                freed = rv_sum(size for _, size in subset)
                if not _feasible(host.free, freed, demand):
                    continue
                cand = _candidate(host, subset, requests)
                key = _cascade_key(cand, demand, policy.rankers)
                if best_key is None or key < best_key:
                    best, best_key = cand, key
            if best is not None and fewest_first:
                break  # smaller sets already beat anything larger
        return best

    # Too many preemptibles for subset search: evict youngest-first until the
    # demand fits, but prefer any single victim that suffices on its own.
    by_youth = sorted(preemptibles, key=lambda p: (-(requests[p[0]].started_at or 0.0), p[0]))
    greedy: list[tuple[str, ResourceVector]] = []
    freed = ResourceVector(0, 0)
    for rid, size in by_youth:
        greedy.append((rid, size))
        freed = freed + size
        if _feasible(host.free, freed, demand):
            break
    candidates = []
    if _feasible(host.free, freed, demand):
        candidates.append(_candidate(host, greedy, requests))
    for rid, size in preemptibles:
        if _feasible(host.free, size, demand):
            candidates.append(_candidate(host, [(rid, size)], requests))
    if not candidates:
        return None
    return min(candidates, key=lambda c: _cascade_key(c, demand, policy.rankers))


def find_victims(
    request: Request,
    hosts,
    requests: Mapping[str, Request],
    policy: VictimPolicy = VictimPolicy(),
) -> VictimSelection | None:
    """Pick the host and preemptible set to evict for a blocked normal request.

    Only called after ordinary placement failed everywhere; returns ``None``
    when no host can fit the request even with all its preemptibles gone.
    """
    if request.klass is not RequestClass.NORMAL:
        raise SchedulerError("victim search is only triggered for normal requests")
    demand = request.flavor.size
    best: tuple | None = None
    selected: VictimSelection | None = None
    for host in sorted(hosts, key=lambda h: h.id):
        if host.tenant is not None and host.tenant != request.project:
            continue
        preemptibles = [
            (rid, size)
            for rid, size in sorted(host.allocations.items())
            if requests[rid].klass is RequestClass.PREEMPTIBLE
        ]
        if not preemptibles:
            continue
        if not _feasible(host.free, rv_sum(size for _, size in preemptibles), demand):
            continue
        cand = _best_on_host(host, demand, preemptibles, requests, policy)
        if cand is None:
            continue
        if policy.host_filter is not None and not policy.host_filter(host, cand.victims):
            continue
        key = _cascade_key(cand, demand, policy.rankers) + (host.id,)
        if best is None or key < best:
            best = key
            selected = VictimSelection(host_id=host.id, victims=cand.victims, freed=cand.freed)
    return selected


def preempt_and_place(
    request: Request,
    hosts: Mapping[str, Host],
    quota_state,
    requests: Mapping[str, Request],
    selection: VictimSelection,
    on_instance_stop: Callable[[Request], None] | None = None,
) -> None:
    """Terminate the selected victims and claim the freed room.

    Victims move Running -> Preempted and their host/quota charges are
    released (``on_instance_stop`` runs first so callers can settle usage
    accounting).  The caller still owns the started request's bookkeeping:
    state transition, quota charge, and queue removal.
    """
    host = hosts[selection.host_id]
    for rid in selection.victims:
        victim = requests[rid]
        if on_instance_stop is not None:
            on_instance_stop(victim)
        victim.transition(RequestState.PREEMPTED)
        host.release(rid)
        if victim.quota_kind is not None:
            quota_state.credit(victim.project, victim.quota_kind, victim.flavor.size)
        victim.host = None
    if not request.flavor.size.fits_in(host.free):
        raise SchedulerError(
            f"internal error: {request.id!r} does not fit on {host.id!r} after preemption"
        )
    host.allocate(request.id, request.flavor.size)
