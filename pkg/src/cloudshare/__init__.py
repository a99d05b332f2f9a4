"""Fair-share cloud scheduling sandbox.

A framework-agnostic scheduler core (dual private/shared quotas, persistent
priority queue with backfilling, pluggable multifactor and fair-tree
priority algorithms, preemptible instances, batch/cloud partition
director), driven by a deterministic discrete-event simulator with a CLI
and a management HTTP facade.
"""

from .core import (
    Flavor,
    Host,
    Project,
    QuotaKind,
    Request,
    RequestClass,
    RequestState,
    ResourceVector,
    User,
    rv_add,
    rv_fits,
)
from .dispatch import Admission, DispatchConfig, QuotaState, Weigher, admit, place, shared_pool_size
from .director import NodeRecord, NodeState, Partition, PledgeTable, dynp, rebalance_shares
from .preempt import VictimPolicy, find_victims
from .priority import AlgorithmKind, PriorityWeights, ShareTree, fairtree_order, multifactor_priority
from .queue import PersistentQueue, QueueEntry
from .scenario import Scenario, load_scenario, parse_scenario
from .sim import Simulation, run_scenario
from .usage import UsageLedger

__version__ = "0.1.0"

__all__ = [
    "Admission", "AlgorithmKind", "DispatchConfig", "Flavor", "Host",
    "NodeRecord", "NodeState", "Partition", "PersistentQueue", "PledgeTable",
    "PriorityWeights", "Project", "QueueEntry", "QuotaKind", "QuotaState",
    "Request", "RequestClass", "RequestState", "ResourceVector", "Scenario",
    "ShareTree", "Simulation", "UsageLedger", "User", "VictimPolicy",
    "Weigher", "admit", "dynp", "fairtree_order", "find_victims",
    "load_scenario", "multifactor_priority", "parse_scenario", "place",
    "rebalance_shares", "run_scenario", "rv_add", "rv_fits",
    "shared_pool_size",
]
