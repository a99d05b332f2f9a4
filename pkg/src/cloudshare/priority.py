"""Pluggable fair-share priority algorithms over a two-level share hierarchy.

Two algorithms are provided:

* ``multifactor`` -- each queued request gets
  ``floor(scale * (w_age * age_factor + w_fairshare * fairshare_factor))``
  where the fairshare factor is ``2 ** (-U / S)`` for the request's user
  (U = that user's fraction of everyone's decayed usage, S = the user's
  composite normalized share).

* ``fair_tree`` -- projects are ranked by level fairshare (normalized share
  over normalized usage among siblings), users are ranked the same way
  inside their project, and the depth-first concatenation assigns rank-based
  factors (N - i) / N.  Every user of a better-ranked project therefore
  outranks every user of a worse-ranked one, which the per-user multifactor
  formula cannot guarantee.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

from .core import Request, RequestState
from .usage import UsageLedger


class AlgorithmKind(str, enum.Enum):
    MULTIFACTOR = "multifactor"
    FAIR_TREE = "fair_tree"


@dataclass(frozen=True)
class PriorityWeights:
    w_age: float = 0.3
    w_fairshare: float = 0.7
    age_max: float = 604_800.0  # 7 sim-days to full age credit
    scale: int = 10_000

    def __post_init__(self) -> None:
        if self.w_age < 0 or self.w_fairshare < 0:
            raise ValueError("priority weights must be >= 0")
        if self.w_age + self.w_fairshare <= 0:
            raise ValueError("at least one priority weight must be positive")
        if self.age_max <= 0:
            raise ValueError("age_max must be > 0")
        if self.scale <= 0:
            raise ValueError("scale must be a positive integer")


@dataclass(frozen=True)
class ShareNode:
    share: float
    users: dict[str, float] = field(default_factory=dict)


class ShareTree:
    """Project -> user share hierarchy with composite normalization."""

    def __init__(self, projects: Mapping[str, ShareNode]) -> None:
        if not projects:
            raise ValueError("share tree needs at least one project")
        for pid, node in projects.items():
            if node.share <= 0:
                raise ValueError(f"project {pid!r} share must be > 0")
            if not node.users:
                raise ValueError(f"project {pid!r} needs at least one user")
            for uid, share in node.users.items():
                if share <= 0:
                    raise ValueError(f"user {uid!r} share must be > 0")
        self.projects = dict(projects)
        self._project_of: dict[str, str] = {}
        for pid, node in projects.items():
            for uid in node.users:
                if uid in self._project_of:
                    raise ValueError(f"user {uid!r} appears in two projects")
                self._project_of[uid] = pid
        self._total_project_share = sum(n.share for n in self.projects.values())
        self._users_sorted = sorted(self._project_of)

    @classmethod
    def build(cls, projects, users) -> "ShareTree":
        nodes: dict[str, ShareNode] = {}
        by_project: dict[str, dict[str, float]] = {p.id: {} for p in projects}
        for u in users:
            if u.project not in by_project:
                raise ValueError(f"user {u.id!r} references unknown project {u.project!r}")
            by_project[u.project][u.id] = u.share
        for p in projects:
            nodes[p.id] = ShareNode(share=p.share, users=by_project[p.id])
        return cls(nodes)

    def project_of(self, user: str) -> str:
        try:
            return self._project_of[user]
        except KeyError:
            raise KeyError(f"unknown user {user!r}") from None

    def all_users(self) -> list[str]:
        return self._users_sorted

    def norm_share(self, user: str) -> float:
        """Composite share: project fraction times user fraction within the project."""
        pid = self.project_of(user)
        node = self.projects[pid]
        project_part = node.share / self._total_project_share
        user_part = node.users[user] / sum(node.users.values())
        return project_part * user_part


def age_factor(request: Request, now: float, weights: PriorityWeights) -> float:
    """Linear ramp from 0 at submission to 1 at age_max, then saturated."""
    if now < request.submit_time:
        raise ValueError("now precedes the request's submit time")
    return min(1.0, (now - request.submit_time) / weights.age_max)


def fairshare_factor(tree: ShareTree, ledger: UsageLedger, user: str, now: float) -> float:
    """2 ** (-U/S); 1.0 for an unused entity, 0.0 if the share were zero."""
    usage = ledger.normalized(user, tree.all_users(), now)
    if usage == 0.0:
        return 1.0
    share = tree.norm_share(user)
    if share == 0.0:
        return 0.0
    return 2.0 ** (-usage / share)


def multifactor_priority(
    request: Request,
    tree: ShareTree,
    ledger: UsageLedger,
    weights: PriorityWeights,
    now: float,
) -> int:
    if request.state is not RequestState.SCHEDULING:
        raise ValueError(f"request {request.id!r} is not queued")
    factor = fairshare_factor(tree, ledger, request.user, now)
    return math.floor(
        weights.scale * (weights.w_age * age_factor(request, now, weights) + weights.w_fairshare * factor)
    )


def _level_order(entries: list[tuple[str, float, float]]) -> list[str]:
    """Order siblings by level fairshare (share_norm / usage_norm) descending.

    ``entries`` holds (id, share, usage) of one sibling group.  Zero sibling
    usage means infinite level fairshare; ties break by id ascending.
    """
    total_share = sum(share for _, share, _ in entries)
    total_usage = sum(usage for _, _, usage in entries)
    ranked = []
    for ident, share, usage in entries:
        share_norm = share / total_share
        usage_norm = usage / total_usage if total_usage > 0 else 0.0
        lf = math.inf if usage_norm == 0.0 else share_norm / usage_norm
        ranked.append((-lf, ident))
    ranked.sort()
    return [ident for _, ident in ranked]


def fairtree_order(
    tree: ShareTree, ledger: UsageLedger, now: float
) -> tuple[list[str], dict[str, float]]:
    """Global user ordering plus the rank factor (N - i) / N per user."""
    usage = {u: ledger.effective(u, now) for u in tree.all_users()}

    project_entries = [
        (pid, node.share, sum(usage[u] for u in node.users))
        for pid, node in sorted(tree.projects.items())
    ]
    ordered_users: list[str] = []
    for pid in _level_order(project_entries):
        node = tree.projects[pid]
        user_entries = [(uid, share, usage[uid]) for uid, share in sorted(node.users.items())]
        ordered_users.extend(_level_order(user_entries))

    n = len(ordered_users)
    factors = {uid: (n - i) / n for i, uid in enumerate(ordered_users)}
    return ordered_users, factors


def compute_priority_terms(
    algorithm: AlgorithmKind,
    tree: ShareTree,
    ledger: UsageLedger,
    weights: PriorityWeights,
    now: float,
) -> dict[str, float]:
    """Per-user fairshare term, shared by all of that user's queued requests."""
    if algorithm is AlgorithmKind.FAIR_TREE:
        _, factors = fairtree_order(tree, ledger, now)
        return factors
    users = tree.all_users()
    effectives = {u: ledger.effective(u, now) for u in users}
    total = sum(effectives.values())
    factors = {}
    for u in users:
        usage = effectives[u] / total if total > 0 else 0.0
        factors[u] = 1.0 if usage == 0.0 else 2.0 ** (-usage / tree.norm_share(u))
    return factors


def priority_of(request: Request, factor: float, weights: PriorityWeights, now: float) -> int:
    return math.floor(
        weights.scale * (weights.w_age * age_factor(request, now, weights) + weights.w_fairshare * factor)
    )


def recalculate_priorities(
    queue,
    algorithm: AlgorithmKind,
    tree: ShareTree,
    ledger: UsageLedger,
    weights: PriorityWeights,
    now: float,
    requests: Mapping[str, Request],
) -> None:
    """Refresh every queued request's priority and rebuild the queue order."""
    entries = queue.ordered_snapshot()
    if not entries:
        return
    factors = compute_priority_terms(algorithm, tree, ledger, weights, now)
    # hot loop at large queue depths: keep everything local and branch-free
    scale, w_age, w_fs, age_max = weights.scale, weights.w_age, weights.w_fairshare, weights.age_max
    fairshare_term = {u: w_fs * f for u, f in factors.items()}
    updates = []
    append = updates.append
    for entry in entries:
        req = requests[entry.request_id]
        age = (now - req.submit_time) / age_max
        if age > 1.0:
            age = 1.0
        pri = int(scale * (w_age * age + fairshare_term[req.user]))
        req.priority = pri
        append((entry.request_id, pri))
    queue.reprioritize_bulk(updates)
