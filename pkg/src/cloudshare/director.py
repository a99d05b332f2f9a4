"""Role switching of physical nodes between the batch and cloud partitions.

Each node is driven by a six-state machine.  ``B`` and ``C`` are the only
stable states (active worker node / active compute node); ``B2CR`` and
``C2BR`` validate a requested conversion and either advance into a draining
state or fall back; ``B2C`` waits for the last batch job, ``C2B`` gives the
hosted VMs a TTL and tears down whatever is still alive at the deadline.

Every node publishes a ``dynp`` load index: 1 while it accepts batch work
(``B``/``B2CR``), 2 everywhere else, and the batch side must never assign
work to a dynp==2 node.

Moving a node to the cloud hands its capacity to one tenant, so the batch
side's relative shares are rebalanced to keep every group's overall pledge
(batch entitlement plus cloud-held capacity) unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import ResourceVector, SchedulerError


class TransitionDenied(SchedulerError):
    """A node role change request was rejected."""


class NodeState(str, enum.Enum):
    BATCH = "B"
    BATCH_TO_CLOUD_REQUESTED = "B2CR"
    BATCH_TO_CLOUD_DRAINING = "B2C"
    CLOUD = "C"
    CLOUD_TO_BATCH_REQUESTED = "C2BR"
    CLOUD_TO_BATCH_DRAINING = "C2B"


class Partition(str, enum.Enum):
    BATCH = "batch"
    CLOUD = "cloud"


_S = NodeState
LEGAL_NODE_EDGES = frozenset(
    {
        (_S.BATCH, _S.BATCH_TO_CLOUD_REQUESTED),
        (_S.BATCH_TO_CLOUD_REQUESTED, _S.BATCH),  # validation failed
        (_S.BATCH_TO_CLOUD_REQUESTED, _S.BATCH_TO_CLOUD_DRAINING),
        (_S.BATCH_TO_CLOUD_DRAINING, _S.CLOUD),
        (_S.CLOUD, _S.CLOUD_TO_BATCH_REQUESTED),
        (_S.CLOUD_TO_BATCH_REQUESTED, _S.CLOUD),  # validation failed
        (_S.CLOUD_TO_BATCH_REQUESTED, _S.CLOUD_TO_BATCH_DRAINING),
        (_S.CLOUD_TO_BATCH_DRAINING, _S.BATCH),
    }
) | frozenset((s, s) for s in NodeState)  # waiting in place is always legal


@dataclass
class NodeRecord:
    id: str
    capacity: ResourceVector
    state: NodeState = NodeState.BATCH
    batch_jobs: set[str] = field(default_factory=set)
    cloud_tenant: str | None = None
    ttl_deadline: float | None = None
    # transition observer, e.g. the simulator's role-change log
    observer: Optional[Callable[["NodeRecord", NodeState, NodeState], None]] = field(
        default=None, repr=False, compare=False
    )

    def dynp(self) -> int:
        return 1 if self.state in (NodeState.BATCH, NodeState.BATCH_TO_CLOUD_REQUESTED) else 2

    def set_state(self, new_state: NodeState) -> None:
        if (self.state, new_state) not in LEGAL_NODE_EDGES:
            raise TransitionDenied(
                f"node {self.id!r}: illegal transition {self.state.value} -> {new_state.value}"
            )
        old = self.state
        if new_state is NodeState.BATCH:
            self.cloud_tenant = None
        if new_state is not NodeState.CLOUD_TO_BATCH_DRAINING:
            self.ttl_deadline = None
        self.state = new_state
        if self.observer is not None and old is not new_state:
            self.observer(self, old, new_state)


def dynp(node: NodeRecord) -> int:
    """Published load index: 1 = open for batch jobs, 2 = closed."""
    return node.dynp()


class MoveDirection(str, enum.Enum):
    TO_CLOUD = "to_cloud"
    TO_BATCH = "to_batch"


class PledgeTable:
    """Per-group capacity pledges and the batch-side share bookkeeping.

    ``batch_capacity`` tracks the vcpus currently serving the batch
    partition; it starts equal to the sum of pledges and moves with nodes.
    The sum of each group's batch entitlement and cloud-held capacity stays
    equal to its original pledge across any rebalance sequence.
    """

    def __init__(self, pledges: dict[str, float], batch_capacity: float | None = None) -> None:
        if not pledges:
            raise ValueError("pledge table needs at least one group")
        if any(p < 0 for p in pledges.values()):
            raise ValueError("pledges must be >= 0")
        total = float(sum(pledges.values()))
        if batch_capacity is None:
            batch_capacity = total
        if batch_capacity != total:
            raise ValueError(
                f"batch capacity {batch_capacity} must equal the sum of pledges {total}"
            )
        self.pledges = dict(pledges)
        self.batch_capacity = float(batch_capacity)
        self.cloud_held: dict[str, float] = {g: 0.0 for g in pledges}

    def entitlement(self, group: str) -> float:
        return self.pledges[group] - self.cloud_held[group]

    def shares(self) -> dict[str, float]:
        """Batch-side share per group; empty when the batch partition is empty."""
        if self.batch_capacity <= 0:
            return {}
        return {g: self.entitlement(g) / self.batch_capacity for g in sorted(self.pledges)}

    def rebalance(self, moved_vcpus: float, tenant: str, direction: MoveDirection) -> dict[str, float]:
        if tenant not in self.pledges:
            raise KeyError(f"unknown group {tenant!r}")
        if moved_vcpus < 0:
            raise ValueError("moved capacity must be >= 0")
        if direction is MoveDirection.TO_CLOUD:
            if self.entitlement(tenant) < moved_vcpus:
                raise TransitionDenied(
                    f"group {tenant!r} batch entitlement {self.entitlement(tenant)} "
                    f"cannot cover {moved_vcpus} vcpus"
                )
            self.cloud_held[tenant] += moved_vcpus
            self.batch_capacity -= moved_vcpus
        else:
            if self.cloud_held[tenant] < moved_vcpus:
                raise TransitionDenied(
                    f"group {tenant!r} holds only {self.cloud_held[tenant]} cloud vcpus"
                )
            self.cloud_held[tenant] -= moved_vcpus
            self.batch_capacity += moved_vcpus
        return self.shares()


def rebalance_shares(
    pledges: PledgeTable, moved_vcpus: float, tenant: str, direction: MoveDirection
) -> dict[str, float]:
    """Shift one group's capacity between partitions; returns the new batch shares."""
    return pledges.rebalance(moved_vcpus, tenant, direction)


Validator = Callable[[NodeRecord, Partition, str | None], str | None]


def default_validator(
    node: NodeRecord,
    target: Partition,
    tenant: str | None,
    pledges: PledgeTable | None = None,
) -> str | None:
    """Consistency checks run while a node sits in a requested state."""
    current = Partition.BATCH if node.state is NodeState.BATCH_TO_CLOUD_REQUESTED else Partition.CLOUD
    if target is current:
        return "target partition equals the current one"
    if target is Partition.CLOUD:
        if tenant is None:
            return "cloud conversion needs a tenant"
        if pledges is not None:
            if tenant not in pledges.pledges:
                return f"unknown group {tenant!r}"
            if pledges.entitlement(tenant) < node.capacity.vcpus:
                return "tenant's batch entitlement cannot cover the node"
    return None


def request_transition(
    node: NodeRecord,
    target: Partition,
    now: float,
    tenant: str | None = None,
    ttl: float = 3600.0,
    pledges: PledgeTable | None = None,
    validator: Validator | None = None,
) -> bool:
    """Ask a stable node to switch partition.

    The node first enters the matching requested state; validation then
    either advances it into draining (True) or reverts it (False).  Nodes in
    any transitory state reject new requests outright.
    """
    if node.state not in (NodeState.BATCH, NodeState.CLOUD):
        raise TransitionDenied(f"node {node.id!r} is mid-transition ({node.state.value})")
    if node.state is NodeState.BATCH:
        node.set_state(NodeState.BATCH_TO_CLOUD_REQUESTED)
        revert, advance = NodeState.BATCH, NodeState.BATCH_TO_CLOUD_DRAINING
    else:
        node.set_state(NodeState.CLOUD_TO_BATCH_REQUESTED)
        revert, advance = NodeState.CLOUD, NodeState.CLOUD_TO_BATCH_DRAINING

    if validator is not None:
        error = validator(node, target, tenant)
    else:
        error = default_validator(node, target, tenant, pledges)
    if error is not None:
        node.set_state(revert)
        return False

    node.set_state(advance)
    if advance is NodeState.BATCH_TO_CLOUD_DRAINING:
        node.cloud_tenant = tenant
    else:
        node.ttl_deadline = now + ttl
    return True


class DrainAction(str, enum.Enum):
    WAITING = "waiting"
    BECAME_CLOUD = "became_cloud"
    BECAME_BATCH = "became_batch"
    DESTROY_VMS = "destroy_vms"


def tick_draining(node: NodeRecord, now: float, running_vms: int = 0) -> DrainAction:
    """Advance a draining node if its exit condition holds.

    ``B2C`` completes once the last batch job is gone.  ``C2B`` completes
    when no VMs remain; at the TTL deadline the caller must destroy the
    survivors (``DESTROY_VMS``) and tick again.
    """
    if node.state is NodeState.BATCH_TO_CLOUD_DRAINING:
        if not node.batch_jobs:
            node.set_state(NodeState.CLOUD)
            return DrainAction.BECAME_CLOUD
        return DrainAction.WAITING
    if node.state is NodeState.CLOUD_TO_BATCH_DRAINING:
        if running_vms == 0:
            node.set_state(NodeState.BATCH)
            return DrainAction.BECAME_BATCH
        if node.ttl_deadline is not None and now >= node.ttl_deadline:
            return DrainAction.DESTROY_VMS
        return DrainAction.WAITING
    raise TransitionDenied(f"node {node.id!r} is not draining ({node.state.value})")
