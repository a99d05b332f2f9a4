"""The scheduling cycle: quota admission, backfilling sweep, placement, retries.

Every cycle walks the queue in priority order.  A request that cannot be
admitted (quota) or placed (no host fits, even after victim selection) is
skipped, never blocking the entries behind it.  Start failures are retried
up to ``max_retries`` re-enqueues, after which the request fails.

Admission tries the project's private quota first, then the shared pool
(administrator-gated via ``shared_eligible``).  Hosts dedicated to a single
tenant (machines moved over from the batch partition) are tried before the
quota path and are never charged against either quota.

The sweep keeps a cache of (flavor, project, class) keys that are known to
be unstartable; the cache is invalidated whenever resources are released,
quota changes, hosts change, or a preemptible instance starts.  This keeps
saturated cycles cheap without changing which requests start.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .core import (
    Host,
    Project,
    QuotaKind,
    Request,
    RequestClass,
    RequestState,
    ResourceVector,
    SchedulerError,
    ZERO,
    rv_sum,
)
from .preempt import VictimPolicy, VictimSelection, find_victims, preempt_and_place
from .queue import PersistentQueue


class QuotaError(SchedulerError):
    """A quota operation would violate the private/shared accounting rules."""


class Admission(str, enum.Enum):
    PRIVATE = "private"
    SHARED = "shared"
    DENY = "deny"

    @property
    def quota_kind(self) -> QuotaKind | None:
        if self is Admission.PRIVATE:
            return QuotaKind.PRIVATE
        if self is Admission.SHARED:
            return QuotaKind.SHARED
        return None


def shared_pool_size(total: ResourceVector, private_quotas: Iterable[ResourceVector]) -> ResourceVector:
    """Shared pool = total capacity minus everything reserved privately."""
    reserved = rv_sum(private_quotas)
    if not reserved.fits_in(total):
        raise QuotaError(f"private quotas {reserved} oversubscribe total capacity {total}")
    return total - reserved


@dataclass
class QuotaState:
    total_capacity: ResourceVector
    shared_pool: ResourceVector
    private_quota: dict[str, ResourceVector]
    shared_eligible: dict[str, bool]
    private_allocated: dict[str, ResourceVector] = field(default_factory=dict)
    shared_allocated: dict[str, ResourceVector] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for pid in self.private_quota:
            self.private_allocated.setdefault(pid, ZERO)
            self.shared_allocated.setdefault(pid, ZERO)
        self._shared_total = rv_sum(self.shared_allocated.values())

    @classmethod
    def build(cls, total: ResourceVector, projects: Iterable[Project]) -> "QuotaState":
        projects = list(projects)
        pool = shared_pool_size(total, (p.private_quota for p in projects))
        return cls(
            total_capacity=total,
            shared_pool=pool,
            private_quota={p.id: p.private_quota for p in projects},
            shared_eligible={p.id: p.shared_eligible for p in projects},
        )

    def _check_project(self, project: str) -> None:
        if project not in self.private_quota:
            raise KeyError(f"unknown project {project!r}")

    def remaining_private(self, project: str) -> ResourceVector:
        self._check_project(project)
        return self.private_quota[project] - self.private_allocated[project]

    def remaining_shared(self) -> ResourceVector:
        return self.shared_pool - self._shared_total

    def shared_allocated_total(self) -> ResourceVector:
        return self._shared_total

    def charge(self, project: str, kind: QuotaKind, size: ResourceVector) -> None:
        self._check_project(project)
        if kind is QuotaKind.PRIVATE:
            allocated = self.private_allocated[project] + size
            if not allocated.fits_in(self.private_quota[project]):
                raise QuotaError(f"project {project!r} private quota exceeded")
            self.private_allocated[project] = allocated
        else:
            total = self._shared_total + size
            if not total.fits_in(self.shared_pool):
                raise QuotaError("shared pool exceeded")
            self.shared_allocated[project] = self.shared_allocated[project] + size
            self._shared_total = total

    def credit(self, project: str, kind: QuotaKind, size: ResourceVector) -> None:
        self._check_project(project)
        if kind is QuotaKind.PRIVATE:
            self.private_allocated[project] = self.private_allocated[project] - size
        else:
            self.shared_allocated[project] = self.shared_allocated[project] - size
            self._shared_total = self._shared_total - size

    def set_private_quota(self, project: str, quota: ResourceVector) -> None:
        """Resize a private quota, keeping every accounting invariant or failing atomically."""
        self._check_project(project)
        quotas = dict(self.private_quota)
        quotas[project] = quota
        pool = shared_pool_size(self.total_capacity, quotas.values())
        if not self.private_allocated[project].fits_in(quota):
            raise QuotaError(f"project {project!r} already uses more than the new private quota")
        if not self._shared_total.fits_in(pool):
            raise QuotaError("shrunken shared pool would not cover currently allocated shared resources")
        self.private_quota = quotas
        self.shared_pool = pool


def admit(quota_state: QuotaState, project: str, demand: ResourceVector) -> Admission:
    """Gate a request on quota: private first, then the shared pool, else deny."""
    if demand.fits_in(quota_state.remaining_private(project)):
        return Admission.PRIVATE
    if quota_state.shared_eligible.get(project) and demand.fits_in(quota_state.remaining_shared()):
        return Admission.SHARED
    return Admission.DENY


class Weigher(str, enum.Enum):
    MOST_FREE_VCPUS = "most_free_vcpus"
    LEAST_FREE_VCPUS = "least_free_vcpus"


def place(
    request: Request, hosts: Iterable[Host], weigher: Weigher = Weigher.MOST_FREE_VCPUS
) -> str | None:
    """Pick a host the request fits on, or None.  Ties go to the lowest host id."""
    demand = request.flavor.size
    best: tuple | None = None
    best_id: str | None = None
    for host in hosts:
        if host.tenant is not None and host.tenant != request.project:
            continue
        if not demand.fits_in(host.free):
            continue
        if weigher is Weigher.MOST_FREE_VCPUS:
            key = (-host.free.vcpus, host.id)
        else:
            key = (host.free.vcpus, host.id)
        if best is None or key < best:
            best = key
            best_id = host.id
    return best_id


@dataclass(frozen=True)
class DispatchConfig:
    max_retries: int = 3
    recalc_period: float = 60.0
    weigher: Weigher = Weigher.MOST_FREE_VCPUS
    preempt_enabled: bool = True
    preempt_requeue: bool = False

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.recalc_period <= 0:
            raise ValueError("recalc_period must be > 0")


# -- cycle outcome records ---------------------------------------------------


@dataclass(frozen=True)
class Started:
    request_id: str
    host_id: str
    quota_kind: QuotaKind | None


@dataclass(frozen=True)
class Requeued:
    request_id: str
    retries: int


@dataclass(frozen=True)
class FailedStart:
    request_id: str


@dataclass(frozen=True)
class Preempted:
    for_request: str
    host_id: str
    victims: tuple[str, ...]


Action = Started | Requeued | FailedStart | Preempted


class Dispatcher:
    """Owns the sweep over the queue plus the retry and preemption wiring.

    ``fail_injector(request_id, attempt)`` simulates a host start failure
    when it returns True; ``on_instance_stop(request)`` lets the caller
    settle usage accounting for a victim before it is released.
    """

    def __init__(
        self,
        config: DispatchConfig = DispatchConfig(),
        policy: VictimPolicy = VictimPolicy(),
        fail_injector: Callable[[str, int], bool] | None = None,
        on_instance_stop: Callable[[Request], None] | None = None,
    ) -> None:
        self.config = config
        self.policy = policy
        self.fail_injector = fail_injector
        self.on_instance_stop = on_instance_stop
        self._queued_keys: Counter = Counter()
        self._key_of: dict[str, tuple] = {}
        self._blocked: set[tuple] = set()

    # -- queue index upkeep (callers route every enqueue/remove through these)

    @staticmethod
    def _key(request: Request) -> tuple:
        return (request.flavor.name, request.project, request.klass)

    def note_enqueued(self, request: Request) -> None:
        k = self._key(request)
        self._key_of[request.id] = k
        self._queued_keys[k] += 1

    def note_removed(self, request: Request) -> None:
        k = self._key_of.pop(request.id)
        self._queued_keys[k] -= 1
        if self._queued_keys[k] <= 0:
            del self._queued_keys[k]

    def rebuild_queue_index(self, queue: PersistentQueue, requests: Mapping[str, Request]) -> None:
        self._queued_keys.clear()
        self._key_of.clear()
        for entry in queue.ordered_snapshot():
            self.note_enqueued(requests[entry.request_id])
        self.invalidate()

    def invalidate(self) -> None:
        """Forget every cached unstartable key (resources or quota changed)."""
        self._blocked.clear()

    # -- the cycle ------------------------------------------------------------

    def cycle(
        self,
        queue: PersistentQueue,
        quota_state: QuotaState,
        hosts: Mapping[str, Host],
        requests: Mapping[str, Request],
        now: float,
    ) -> list[Action]:
        remaining = {k: n for k, n in self._queued_keys.items() if k not in self._blocked}
        if not remaining:
            return []

        public = [h for h in hosts.values() if h.tenant is None]
        dedicated: dict[str, list[Host]] = {}
        for h in hosts.values():
            if h.tenant is not None:
                dedicated.setdefault(h.tenant, []).append(h)

        actions: list[Action] = []
        track_remaining = True
        key_of = self._key_of
        blocked = self._blocked
        for neg_pri, _, rid in queue.iter_order():
            if track_remaining and not remaining:
                break
            k = key_of[rid]
            if k in blocked:
                continue
            if track_remaining and k in remaining:
                remaining[k] -= 1
                if remaining[k] <= 0:
                    del remaining[k]

            request = requests[rid]
            outcome = self._try_start(
                request, -neg_pri, queue, quota_state, hosts, public,
                dedicated.get(request.project, []), requests, now, actions,
            )
            if outcome == "blocked":
                blocked.add(k)
                if track_remaining:
                    remaining.pop(k, None)
            elif outcome == "freed":
                # Preemption surplus or a fresh preemptible instance may make
                # previously blocked keys startable again for the rest of the
                # sweep, so stop trusting the early-exit bookkeeping.
                blocked.clear()
                track_remaining = False
        return actions

    def _try_start(
        self,
        request: Request,
        priority: int,
        queue: PersistentQueue,
        quota_state: QuotaState,
        hosts: Mapping[str, Host],
        public: list[Host],
        dedicated: list[Host],
        requests: Mapping[str, Request],
        now: float,
        actions: list[Action],
    ) -> str:
        demand = request.flavor.size
        selection: VictimSelection | None = None
        kind: QuotaKind | None = None

        host_id = place(request, dedicated, self.config.weigher) if dedicated else None
        if host_id is None:
            admission = admit(quota_state, request.project, demand)
            if admission is not Admission.DENY:
                host_id = place(request, public, self.config.weigher)
                kind = admission.quota_kind if host_id is not None else None
            if host_id is None:
                if self.config.preempt_enabled and request.klass is RequestClass.NORMAL:
                    pool = list(dedicated)
                    if admission is not Admission.DENY:
                        pool += public
                    selection = find_victims(request, pool, requests, self.policy)
                if selection is None:
                    return "blocked"
                host_id = selection.host_id
                if hosts[host_id].tenant is None:
                    kind = admission.quota_kind

        if self.fail_injector is not None and self.fail_injector(request.id, request.retries):
            request.retries += 1
            queue.remove(request.id)
            self.note_removed(request)
            if request.retries > self.config.max_retries:
                request.transition(RequestState.FAILED)
                actions.append(FailedStart(request.id))
            else:
                queue.enqueue(request, priority)
                self.note_enqueued(request)
                actions.append(Requeued(request.id, request.retries))
            return "continue"

        freed = False
        if selection is not None:
            preempt_and_place(
                request, hosts, quota_state, requests, selection, self.on_instance_stop
            )
            actions.append(Preempted(request.id, host_id, selection.victims))
            freed = True
        else:
            hosts[host_id].allocate(request.id, demand)

        request.transition(RequestState.RUNNING)
        request.started_at = now
        request.host = host_id
        request.quota_kind = kind
        if kind is not None:
            quota_state.charge(request.project, kind, demand)
        queue.remove(request.id)
        self.note_removed(request)
        actions.append(Started(request.id, host_id, kind))
        if request.klass is RequestClass.PREEMPTIBLE:
            freed = True  # a new preemption candidate exists
        return "freed" if freed else "continue"


def release(quota_state: QuotaState, hosts: Mapping[str, Host], request: Request) -> None:
    """Give back a finished instance's host allocation and quota charge."""
    if request.state not in (RequestState.COMPLETED, RequestState.PREEMPTED):
        raise SchedulerError(f"request {request.id!r} is not finished ({request.state.value})")
    if request.host is None:
        raise SchedulerError(f"request {request.id!r} holds no allocation")
    hosts[request.host].release(request.id)
    if request.quota_kind is not None:
        quota_state.credit(request.project, request.quota_kind, request.flavor.size)
    request.host = None
