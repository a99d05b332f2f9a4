"""Domain value types shared by every scheduler component.

Resource quantities are integers (whole vcpus, whole megabytes); there is no
fractional-core or overcommit modeling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class SchedulerError(Exception):
    """Base class for scheduler domain errors."""


class InvalidTransition(SchedulerError):
    """A request or node attempted a lifecycle transition outside its graph."""


class CapacityError(SchedulerError):
    """A resource operation would leave a negative or oversubscribed vector."""


@dataclass(frozen=True)
class ResourceVector:
    """Two-dimensional capacity/demand vector: vcpus and memory in MB."""

    vcpus: int = 0
    memory_mb: int = 0

    def __post_init__(self) -> None:
        if self.vcpus < 0 or self.memory_mb < 0:
            raise CapacityError(f"resource components must be >= 0, got {self}")

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.vcpus + other.vcpus, self.memory_mb + other.memory_mb)

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        if other.vcpus > self.vcpus or other.memory_mb > self.memory_mb:
            raise CapacityError(f"cannot subtract {other} from {self}")
        return ResourceVector(self.vcpus - other.vcpus, self.memory_mb - other.memory_mb)

    def fits_in(self, free: "ResourceVector") -> bool:
        return self.vcpus <= free.vcpus and self.memory_mb <= free.memory_mb

    @property
    def is_zero(self) -> bool:
        return self.vcpus == 0 and self.memory_mb == 0


ZERO = ResourceVector(0, 0)


def rv_add(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    """Component-wise sum."""
    return a + b


def rv_sub(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    """Component-wise difference; raises CapacityError if any component would go negative."""
    return a - b


def rv_sum(vectors) -> ResourceVector:
    total = ZERO
    for v in vectors:
        total = total + v
    return total


def rv_fits(demand: ResourceVector, free: ResourceVector) -> bool:
    """True iff demand <= free in every component."""
    return demand.fits_in(free)


@dataclass(frozen=True)
class Flavor:
    """Named instance size, the unit a user can request."""

    name: str
    size: ResourceVector

    def __post_init__(self) -> None:
        if self.size.is_zero:
            raise ValueError(f"flavor {self.name!r} must have a strictly positive component")


@dataclass
class Project:
    id: str
    share: float = 1.0
    private_quota: ResourceVector = ZERO
    shared_eligible: bool = True

    def __post_init__(self) -> None:
        if self.share <= 0:
            raise ValueError(f"project {self.id!r} share must be > 0")


@dataclass
class User:
    id: str
    project: str
    share: float = 1.0

    def __post_init__(self) -> None:
        if self.share <= 0:
            raise ValueError(f"user {self.id!r} share must be > 0")


class RequestClass(str, enum.Enum):
    NORMAL = "normal"
    PREEMPTIBLE = "preemptible"


class RequestState(str, enum.Enum):
    SCHEDULING = "scheduling"
    RUNNING = "running"
    COMPLETED = "completed"
    PREEMPTED = "preempted"
    FAILED = "failed"


class QuotaKind(str, enum.Enum):
    PRIVATE = "private"
    SHARED = "shared"


# The only lifecycle edges a request may follow.  Queued requests stay in
# SCHEDULING; no extra states exist for queueing or retries.
LEGAL_REQUEST_EDGES = frozenset(
    {
        (RequestState.SCHEDULING, RequestState.RUNNING),
        (RequestState.SCHEDULING, RequestState.FAILED),
        (RequestState.RUNNING, RequestState.COMPLETED),
        (RequestState.RUNNING, RequestState.PREEMPTED),
    }
)


@dataclass
class Request:
    """A user's instance request and its lifecycle bookkeeping.

    ``duration`` is the instance's natural run time once started; ``None``
    means run-forever (it ends only through preemption or node teardown).
    """

    id: str
    user: str
    project: str
    flavor: Flavor
    klass: RequestClass = RequestClass.NORMAL
    submit_time: float = 0.0
    duration: float | None = None
    state: RequestState = RequestState.SCHEDULING
    retries: int = 0
    priority: int = 0
    quota_kind: QuotaKind | None = None
    started_at: float | None = None
    host: str | None = None

    def transition(self, new_state: RequestState) -> None:
        if (self.state, new_state) not in LEGAL_REQUEST_EDGES:
            raise InvalidTransition(
                f"request {self.id!r}: illegal transition {self.state.value} -> {new_state.value}"
            )
        if new_state is RequestState.PREEMPTED and self.klass is not RequestClass.PREEMPTIBLE:
            raise InvalidTransition(f"request {self.id!r}: normal instances are never preempted")
        self.state = new_state


@dataclass
class Host:
    """A placement target.  ``tenant`` restricts the host to one project
    (used for machines moved into the cloud partition for a single group)."""

    id: str
    capacity: ResourceVector
    tenant: str | None = None
    allocations: dict[str, ResourceVector] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.free = self.capacity - rv_sum(self.allocations.values())

    def allocate(self, request_id: str, size: ResourceVector) -> None:
        if request_id in self.allocations:
            raise CapacityError(f"host {self.id!r}: {request_id!r} already allocated")
        if not size.fits_in(self.free):
            raise CapacityError(f"host {self.id!r}: {size} does not fit in free {self.free}")
        self.allocations[request_id] = size
        self.free = self.free - size

    def release(self, request_id: str) -> ResourceVector:
        try:
            size = self.allocations.pop(request_id)
        except KeyError:
            raise CapacityError(f"host {self.id!r}: no allocation for {request_id!r}") from None
        self.free = self.free + size
        return size
