"""Deterministic discrete-event simulator driving the scheduler core.

Everything runs off a single (time, seq) ordered event heap; identical
scenario and seed give byte-identical outputs.  A dispatch sweep piggybacks
on every state-changing event and additionally runs on a periodic tick right
after each priority recalculation.  Running instances accrue usage in
slices (at every recalculation tick, metrics snapshot, and at their own
termination) so long-lived VMs influence priorities while still running.
"""

from __future__ import annotations

import enum
import heapq
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .core import (
    Host,
    QuotaKind,
    Request,
    RequestClass,
    RequestState,
    ResourceVector,
    SchedulerError,
)
from .director import (
    DrainAction,
    MoveDirection,
    NodeRecord,
    NodeState,
    Partition,
    PledgeTable,
    TransitionDenied,
    request_transition,
    tick_draining,
)
from .dispatch import (
    Dispatcher,
    DispatchConfig,
    FailedStart,
    Preempted,
    QuotaState,
    Requeued,
    Started,
    Weigher,
    release,
)
from .preempt import VictimPolicy
from .priority import (
    AlgorithmKind,
    PriorityWeights,
    ShareTree,
    compute_priority_terms,
    priority_of,
    recalculate_priorities,
)
from .queue import PersistentQueue
from .scenario import Arrival, Scenario, generate_workload
from .usage import UsageLedger


class EventKind(str, enum.Enum):
    ARRIVAL = "arrival"
    INSTANCE_END = "instance_end"
    RECALC_TICK = "recalc_tick"
    DISPATCH_TICK = "dispatch_tick"
    TRANSITION_REQUEST = "transition_request"
    TTL_EXPIRY = "ttl_expiry"
    METRICS_SNAPSHOT = "metrics_snapshot"
    BATCH_JOB_ARRIVAL = "batch_job_arrival"
    BATCH_JOB_END = "batch_job_end"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    arrival: Arrival | None = None
    request_id: str | None = None
    node_id: str | None = None
    target: str | None = None
    tenant: str | None = None
    ttl: float | None = None
    job_id: str | None = None


class ManagerStatus(str, enum.Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"


@dataclass
class ManagerDescriptor:
    name: str
    status: ManagerStatus = ManagerStatus.ACTIVE
    rate: float | None = None  # execution period for periodic managers


MANAGER_NAMES = ("nova", "fairshare", "queue", "scheduler", "quota", "director")


@dataclass
class MetricsFrame:
    time: float
    util_vcpus: float
    util_memory: float
    shared_util: float
    queue_len: int
    wait_mean: float
    wait_p95: float
    preempted: int
    per_project: dict[str, dict[str, float]]


_BUCKETS = ("private", "shared", "dedicated")


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        cfg = scenario.config
        self.now = 0.0
        self.horizon = scenario.horizon
        self._heap: list[tuple[float, int, Event]] = []
        self._event_seq = 0
        self._finalized = False

        self.flavors = scenario.flavors
        self.projects = {p.id: p for p in scenario.projects}
        self.users = {u.id: u for u in scenario.users}
        self.requests: dict[str, Request] = {}

        self.hosts: dict[str, Host] = {}
        for i in range(scenario.hosts_count):
            hid = f"h{i:04d}"
            self.hosts[hid] = Host(hid, scenario.host_capacity)
        self.node_log: list[tuple[float, str, str, str]] = []

        def observe(node, old, new):
            self.node_log.append((self.now, node.id, old.value, new.value))

        self.nodes: dict[str, NodeRecord] = {
            nid: NodeRecord(nid, cap, observer=observe) for nid, cap in scenario.batch_nodes
        }
        self.node_hosts: dict[str, Host] = {}  # node id -> Host while on the cloud side
        self._host_index: dict[str, Host] = dict(self.hosts)

        self.tree = ShareTree.build(scenario.projects, scenario.users)
        self.ledger = UsageLedger(
            half_life=cfg["usage.half_life"],
            window=cfg["usage.window"],
            cpu_weight=cfg["usage.cpu_weight"],
            mem_weight_per_gb=cfg["usage.mem_weight_per_gb"],
        )
        self.weights = PriorityWeights(
            w_age=cfg["priority.w_age"],
            w_fairshare=cfg["priority.w_fairshare"],
            age_max=cfg["priority.age_max"],
            scale=cfg["priority.scale"],
        )
        self.algorithm = AlgorithmKind(cfg["priority.algorithm"])
        self.quota = QuotaState.build(scenario.total_capacity, scenario.projects)
        self.pqueue = PersistentQueue(cfg["queue.journal_path"])
        self.dispatch_config = DispatchConfig(
            max_retries=cfg["dispatch.max_retries"],
            recalc_period=cfg["dispatch.recalc_period"],
            weigher=Weigher(cfg["dispatch.weigher"]),
            preempt_enabled=cfg["preempt.enabled"],
            preempt_requeue=cfg["preempt.requeue"],
        )
        self._failures_left = dict(scenario.start_failures)
        self.dispatcher = Dispatcher(
            config=self.dispatch_config,
            policy=VictimPolicy(rankers=tuple(cfg["preempt.rankers"])),
            fail_injector=self._inject_failure,
            on_instance_stop=self._settle_instance,
        )
        self.pledges = (
            PledgeTable(scenario.pledges) if scenario.pledges else None
        )
        self.director_ttl = cfg["director.ttl"]
        self.metrics_period = cfg["sim.metrics_period"]
        self.recalc_period = cfg["dispatch.recalc_period"]

        self.managers: dict[str, ManagerDescriptor] = {
            name: ManagerDescriptor(name) for name in MANAGER_NAMES
        }
        self.managers["fairshare"].rate = self.recalc_period
        self.managers["scheduler"].rate = self.recalc_period

        # metrics state
        self.frames: list[MetricsFrame] = []
        self.waits: list[float] = []
        self.counters = {
            "submitted": 0, "started": 0, "completed": 0, "failed": 0,
            "preempted": 0, "ttl_destroyed": 0, "rejected_intake": 0,
            "batch_jobs_assigned": 0, "batch_jobs_dropped": 0,
        }
        self.cpu_seconds: dict[str, dict[str, float]] = {
            p.id: {b: 0.0 for b in _BUCKETS} for p in scenario.projects
        }
        self._last_accrual: dict[str, float] = {}
        self._started_host: dict[str, str] = {}
        self._end_time: dict[str, float] = {}
        self._exit_tenant: dict[str, str] = {}
        self._requeue_counter = 0
        self._busy = ResourceVector(0, 0)
        self._placement_cap = scenario.total_capacity
        self._busy_integral = [0.0, 0.0]  # vcpu-seconds, MB-seconds
        self._capacity_integral = [0.0, 0.0]
        self._integral_at = 0.0

        self._schedule_initial_events()

    # -- event plumbing -------------------------------------------------------

    def _schedule(self, time: float, event: Event) -> None:
        if time < self.now:
            raise SchedulerError(f"event {event.kind.value} scheduled in the past ({time} < {self.now})")
        heapq.heappush(self._heap, (time, self._event_seq, event))
        self._event_seq += 1

    def _schedule_initial_events(self) -> None:
        scenario = self.scenario
        arrivals = list(scenario.arrivals)
        if scenario.generator is not None:
            arrivals += generate_workload(scenario.generator, scenario, scenario.seed)
        seen_ids: set[str] = set()
        for a in arrivals:
            if a.id in seen_ids:
                raise SchedulerError(
                    f"request id {a.id!r} appears twice (explicit arrivals may not "
                    "reuse generated ids)"
                )
            seen_ids.add(a.id)
        arrivals.sort(key=lambda a: (a.time, a.id))
        for a in arrivals:
            self._schedule(a.time, Event(EventKind.ARRIVAL, arrival=a))
        if self.recalc_period <= self.horizon:
            self._schedule(self.recalc_period, Event(EventKind.RECALC_TICK))
            self._schedule(self.recalc_period, Event(EventKind.DISPATCH_TICK))
        if self.metrics_period <= self.horizon:
            self._schedule(self.metrics_period, Event(EventKind.METRICS_SNAPSHOT))
        for d in scenario.director_events:
            self._schedule(
                d.time,
                Event(
                    EventKind.TRANSITION_REQUEST,
                    node_id=d.node, target=d.target, tenant=d.tenant, ttl=d.ttl,
                ),
            )
        if scenario.batch_workload is not None:
            rng = random.Random(f"{scenario.seed}-batch")
            spec = scenario.batch_workload
            t, i = 0.0, 0
            while True:
                t += rng.expovariate(spec.rate)
                if t > self.horizon:
                    break
                duration = spec.duration.draw(rng)
                self._schedule(
                    t, Event(EventKind.BATCH_JOB_ARRIVAL, job_id=f"bj{i:06d}", ttl=duration)
                )
                i += 1

    def run(self):
        """Process events up to the horizon and return (frames, summary)."""
        self.step_until(self.horizon)
        self.finalize()
        return self.frames, self.summary()

    def _pop_and_handle(self) -> None:
        time, _, event = heapq.heappop(self._heap)
        self._advance_integrals(time)
        self.now = time
        self._handle(event)

    def step_until(self, until: float) -> int:
        until = min(until, self.horizon)
        handled = 0
        while self._heap and self._heap[0][0] <= until:
            self._pop_and_handle()
            handled += 1
        if until > self.now:
            self._advance_integrals(until)
            self.now = until
        return handled

    def step_events(self, n: int) -> int:
        handled = 0
        while handled < n and self._heap and self._heap[0][0] <= self.horizon:
            self._pop_and_handle()
            handled += 1
        return handled

    def finalize(self) -> None:
        if self._finalized:
            return
        self._advance_integrals(self.horizon)
        self.now = self.horizon
        self._accrue_all_running()
        if not self.frames or self.frames[-1].time < self.horizon:
            self._snapshot_metrics()
        self.pqueue.close()
        self._finalized = True

    # -- integrals and usage accrual ------------------------------------------

    def _placement_capacity(self) -> ResourceVector:
        return self._placement_cap

    def _recompute_placement_capacity(self) -> None:
        cap = self.scenario.total_capacity
        for host in self.node_hosts.values():
            cap = cap + host.capacity
        self._placement_cap = cap

    def _advance_integrals(self, to_time: float) -> None:
        dt = to_time - self._integral_at
        if dt <= 0.0:
            return
        self._busy_integral[0] += self._busy.vcpus * dt
        self._busy_integral[1] += self._busy.memory_mb * dt
        cap = self._placement_cap
        self._capacity_integral[0] += cap.vcpus * dt
        self._capacity_integral[1] += cap.memory_mb * dt
        self._integral_at = to_time

    def _recompute_busy(self) -> None:
        v = m = 0
        for host in self._host_index.values():
            used = host.capacity - host.free
            v += used.vcpus
            m += used.memory_mb
        self._busy = ResourceVector(v, m)

    def _accrue(self, request: Request, upto: float) -> None:
        start = self._last_accrual.get(request.id, request.started_at)
        if start is None:
            return
        dt = upto - start
        if dt <= 0:
            return
        size = request.flavor.size
        self.ledger.record(request.user, size, dt, at=upto)
        bucket = request.quota_kind.value if request.quota_kind is not None else "dedicated"
        self.cpu_seconds[request.project][bucket] += size.vcpus * dt
        self._last_accrual[request.id] = upto

    def _accrue_all_running(self) -> None:
        for host in self._host_index.values():
            for rid in host.allocations:
                self._accrue(self.requests[rid], self.now)

    def _settle_instance(self, request: Request) -> None:
        """Final usage slice for an instance that is stopping right now."""
        self._accrue(request, self.now)
        self._last_accrual.pop(request.id, None)
        self._end_time[request.id] = self.now

    # -- dispatch wiring --------------------------------------------------------

    def _inject_failure(self, request_id: str, attempt: int) -> bool:
        left = self._failures_left.get(request_id, 0)
        if left > 0:
            self._failures_left[request_id] = left - 1
            return True
        return False

    def _placement_pool(self) -> dict[str, Host]:
        pool = dict(self.hosts)
        for nid, host in self.node_hosts.items():
            if self.nodes[nid].state is NodeState.CLOUD:
                pool[nid] = host
        return pool

    def _run_cycle(self) -> None:
        if self.managers["scheduler"].status is ManagerStatus.SUSPENDED:
            return
        actions = self.dispatcher.cycle(
            self.pqueue, self.quota, self._placement_pool(), self.requests, self.now
        )
        for action in actions:
            if isinstance(action, Started):
                req = self.requests[action.request_id]
                self.counters["started"] += 1
                self.waits.append(self.now - req.submit_time)
                self._started_host[req.id] = action.host_id
                self._last_accrual[req.id] = self.now
                if req.duration is not None:
                    self._schedule(
                        self.now + req.duration,
                        Event(EventKind.INSTANCE_END, request_id=req.id),
                    )
            elif isinstance(action, Preempted):
                self.counters["preempted"] += len(action.victims)
                if self.dispatch_config.preempt_requeue:
                    for vid in action.victims:
                        self._requeue_preempted(self.requests[vid])
            elif isinstance(action, FailedStart):
                self.counters["failed"] += 1
                self._end_time[action.request_id] = self.now
        if actions:
            self._recompute_busy()

    def _requeue_preempted(self, victim: Request) -> None:
        self._requeue_counter += 1
        clone = Request(
            id=f"{victim.id}.r{self._requeue_counter}",
            user=victim.user,
            project=victim.project,
            flavor=victim.flavor,
            klass=victim.klass,
            submit_time=self.now,
            duration=victim.duration,
        )
        self.requests[clone.id] = clone
        self._enqueue(clone)

    def _initial_priority(self, request: Request) -> int:
        if self.managers["fairshare"].status is ManagerStatus.SUSPENDED:
            return 0
        terms = compute_priority_terms(
            self.algorithm, self.tree, self.ledger, self.weights, self.now
        )
        return priority_of(request, terms[request.user], self.weights, self.now)

    def _enqueue(self, request: Request) -> None:
        request.priority = self._initial_priority(request)
        self.pqueue.enqueue(request, request.priority)
        self.dispatcher.note_enqueued(request)

    # -- event handlers ---------------------------------------------------------

    def _handle(self, event: Event) -> None:
        handler = {
            EventKind.ARRIVAL: self._on_arrival,
            EventKind.INSTANCE_END: self._on_instance_end,
            EventKind.RECALC_TICK: self._on_recalc_tick,
            EventKind.DISPATCH_TICK: self._on_dispatch_tick,
            EventKind.TRANSITION_REQUEST: self._on_transition_request,
            EventKind.TTL_EXPIRY: self._on_ttl_expiry,
            EventKind.METRICS_SNAPSHOT: self._on_metrics,
            EventKind.BATCH_JOB_ARRIVAL: self._on_batch_arrival,
            EventKind.BATCH_JOB_END: self._on_batch_end,
        }[event.kind]
        handler(event)

    def _on_arrival(self, event: Event) -> None:
        a = event.arrival
        request = Request(
            id=a.id, user=a.user, project=a.project, flavor=self.flavors[a.flavor],
            klass=a.klass, submit_time=a.time, duration=a.duration,
        )
        self.requests[request.id] = request
        self.counters["submitted"] += 1
        if self.managers["nova"].status is ManagerStatus.SUSPENDED:
            request.transition(RequestState.FAILED)
            self.counters["failed"] += 1
            self.counters["rejected_intake"] += 1
            self._end_time[request.id] = self.now
            return
        self._enqueue(request)
        self._run_cycle()

    def _on_instance_end(self, event: Event) -> None:
        request = self.requests[event.request_id]
        if request.state is not RequestState.RUNNING or request.host is None:
            return  # already preempted or torn down
        host_id = request.host
        self._settle_instance(request)
        request.transition(RequestState.COMPLETED)
        self.counters["completed"] += 1
        release(self.quota, self._host_index, request)
        self._recompute_busy()
        self.dispatcher.invalidate()
        if host_id in self.node_hosts:
            self._check_cloud_drain(self.nodes[host_id])
        self._run_cycle()

    def _on_recalc_tick(self, event: Event) -> None:
        self._accrue_all_running()
        if self.managers["fairshare"].status is ManagerStatus.ACTIVE:
            recalculate_priorities(
                self.pqueue, self.algorithm, self.tree, self.ledger,
                self.weights, self.now, self.requests,
            )
        nxt = self.now + self.recalc_period
        if nxt <= self.horizon:
            self._schedule(nxt, Event(EventKind.RECALC_TICK))

    def _on_dispatch_tick(self, event: Event) -> None:
        self._run_cycle()
        nxt = self.now + self.recalc_period
        if nxt <= self.horizon:
            self._schedule(nxt, Event(EventKind.DISPATCH_TICK))

    def _on_metrics(self, event: Event) -> None:
        self._accrue_all_running()
        self._snapshot_metrics()
        nxt = self.now + self.metrics_period
        if nxt <= self.horizon:
            self._schedule(nxt, Event(EventKind.METRICS_SNAPSHOT))

    # -- partition director wiring ------------------------------------------------

    def node_transition(self, node_id: str, target: str, tenant: str | None = None,
                        ttl: float | None = None) -> None:
        """Request a node role switch; raises TransitionDenied on rejection."""
        if self.managers["director"].status is ManagerStatus.SUSPENDED:
            raise TransitionDenied("director manager is suspended")
        node = self.nodes.get(node_id)
        if node is None:
            raise KeyError(f"unknown node {node_id!r}")
        if target == "cloud" and tenant is None:
            raise TransitionDenied("cloud conversion needs a tenant")
        advanced = request_transition(
            node, Partition(target), self.now, tenant=tenant,
            ttl=ttl if ttl is not None else self.director_ttl,
            pledges=self.pledges,
        )
        if not advanced:
            raise TransitionDenied(f"validation rejected the {target} request for {node_id!r}")
        if node.state is NodeState.BATCH_TO_CLOUD_DRAINING:
            if self.pledges is not None:
                self.pledges.rebalance(node.capacity.vcpus, tenant, MoveDirection.TO_CLOUD)
            self._check_batch_drain(node)
        elif node.state is NodeState.CLOUD_TO_BATCH_DRAINING:
            self._exit_tenant[node.id] = node.cloud_tenant
            self._schedule(node.ttl_deadline, Event(EventKind.TTL_EXPIRY, node_id=node.id))
            self._check_cloud_drain(node)

    def _on_transition_request(self, event: Event) -> None:
        try:
            self.node_transition(event.node_id, event.target, event.tenant, event.ttl)
        except (TransitionDenied, KeyError):
            pass  # scenario-driven requests may legitimately be rejected

    def _check_batch_drain(self, node: NodeRecord) -> None:
        if node.state is not NodeState.BATCH_TO_CLOUD_DRAINING:
            return
        if tick_draining(node, self.now) is DrainAction.BECAME_CLOUD:
            host = Host(node.id, node.capacity, tenant=node.cloud_tenant)
            self.node_hosts[node.id] = host
            self._host_index[node.id] = host
            self._recompute_placement_capacity()
            self.dispatcher.invalidate()
            self._run_cycle()

    def _check_cloud_drain(self, node: NodeRecord) -> None:
        if node.state is not NodeState.CLOUD_TO_BATCH_DRAINING:
            return
        host = self.node_hosts.get(node.id)
        vms = len(host.allocations) if host is not None else 0
        action = tick_draining(node, self.now, vms)
        if action is DrainAction.BECAME_BATCH:
            self._finish_cloud_exit(node)

    def _finish_cloud_exit(self, node: NodeRecord) -> None:
        host = self.node_hosts.pop(node.id, None)
        if host is not None:
            del self._host_index[node.id]
        # tick_draining already cleared the node's tenant, hence the capture
        tenant = self._exit_tenant.pop(node.id, None)
        if self.pledges is not None and tenant is not None:
            self.pledges.rebalance(node.capacity.vcpus, tenant, MoveDirection.TO_BATCH)
        self._recompute_placement_capacity()
        self._recompute_busy()

    def _on_ttl_expiry(self, event: Event) -> None:
        node = self.nodes.get(event.node_id)
        if node is None or node.state is not NodeState.CLOUD_TO_BATCH_DRAINING:
            return
        if node.ttl_deadline is None or self.now < node.ttl_deadline:
            return
        host = self.node_hosts[node.id]
        for rid in sorted(host.allocations):
            req = self.requests[rid]
            self._settle_instance(req)
            req.transition(RequestState.COMPLETED)
            self.counters["ttl_destroyed"] += 1
            release(self.quota, self._host_index, req)
        self._recompute_busy()
        self.dispatcher.invalidate()
        self._check_cloud_drain(node)
        self._run_cycle()

    def _on_batch_arrival(self, event: Event) -> None:
        candidates = sorted(
            (n for n in self.nodes.values() if n.dynp() == 1),
            key=lambda n: (len(n.batch_jobs), n.id),
        )
        if not candidates:
            self.counters["batch_jobs_dropped"] += 1
            return
        node = candidates[0]
        if node.dynp() != 1:
            raise SchedulerError("batch job assigned to a node with dynp != 1")
        node.batch_jobs.add(event.job_id)
        self.counters["batch_jobs_assigned"] += 1
        self._schedule(
            self.now + event.ttl,
            Event(EventKind.BATCH_JOB_END, node_id=node.id, job_id=event.job_id),
        )

    def _on_batch_end(self, event: Event) -> None:
        node = self.nodes[event.node_id]
        node.batch_jobs.discard(event.job_id)
        self._check_batch_drain(node)

    # -- management commands (facade) ------------------------------------------------

    def suspend_manager(self, name: str) -> None:
        self.managers[name].status = ManagerStatus.SUSPENDED

    def resume_manager(self, name: str) -> None:
        self.managers[name].status = ManagerStatus.ACTIVE
        if name == "scheduler":
            self._run_cycle()

    def set_private_quota(self, project: str, quota: ResourceVector) -> None:
        self.quota.set_private_quota(project, quota)
        self.dispatcher.invalidate()
        self._run_cycle()

    # -- metrics ------------------------------------------------------------------

    def _snapshot_metrics(self) -> None:
        cap = self._placement_capacity()
        util_v = self._busy.vcpus / cap.vcpus if cap.vcpus else 0.0
        util_m = self._busy.memory_mb / cap.memory_mb if cap.memory_mb else 0.0
        pool = self.quota.shared_pool
        shared_total = self.quota.shared_allocated_total()
        shared_util = shared_total.vcpus / pool.vcpus if pool.vcpus else 0.0
        if self.waits:
            arr = np.asarray(self.waits)
            wait_mean = float(arr.mean())
            wait_p95 = float(np.percentile(arr, 95))
        else:
            wait_mean = wait_p95 = 0.0

        running: dict[str, list[int]] = {p: [0, 0] for p in self.projects}
        for host in self._host_index.values():
            for rid, size in host.allocations.items():
                acc = running[self.requests[rid].project]
                acc[0] += size.vcpus
                acc[1] += size.memory_mb
        per_project = {}
        for pid in sorted(self.projects):
            per_project[pid] = {
                "running_vcpus": float(running[pid][0]),
                "running_memory": float(running[pid][1]),
                "cpu_seconds_private": self.cpu_seconds[pid]["private"],
                "cpu_seconds_shared": self.cpu_seconds[pid]["shared"],
            }
        self.frames.append(
            MetricsFrame(
                time=self.now,
                util_vcpus=min(1.0, util_v),
                util_memory=min(1.0, util_m),
                shared_util=min(1.0, shared_util),
                queue_len=len(self.pqueue),
                wait_mean=wait_mean,
                wait_p95=wait_p95,
                preempted=self.counters["preempted"],
                per_project=per_project,
            )
        )

    def summary(self) -> dict[str, Any]:
        total_shared = sum(r["shared"] for r in self.cpu_seconds.values())
        projects = {}
        for p in self.scenario.projects:
            row = self.cpu_seconds[p.id]
            projects[p.id] = {
                "share_weight": p.share,
                "cpu_seconds_private": round(row["private"], 3),
                "cpu_seconds_shared": round(row["shared"], 3),
                "cpu_seconds_dedicated": round(row["dedicated"], 3),
                "shared_fraction": round(row["shared"] / total_shared, 6) if total_shared else 0.0,
            }
        util = [
            b / c if c > 0 else 0.0
            for b, c in zip(self._busy_integral, self._capacity_integral)
        ]
        if self.waits:
            arr = np.asarray(self.waits)
            waits = {
                "count": len(self.waits),
                "mean": round(float(arr.mean()), 3),
                "p95": round(float(np.percentile(arr, 95)), 3),
            }
        else:
            waits = {"count": 0, "mean": 0.0, "p95": 0.0}
        out: dict[str, Any] = {
            "horizon": self.horizon,
            "seed": self.scenario.seed,
            "requests": {
                "submitted": self.counters["submitted"],
                "started": self.counters["started"],
                "completed": self.counters["completed"],
                "failed": self.counters["failed"],
                "preempted": self.counters["preempted"],
                "ttl_destroyed": self.counters["ttl_destroyed"],
                "queued_at_end": len(self.pqueue),
            },
            "waits": waits,
            "utilization_integral": {
                "vcpus": round(float(util[0]), 6),
                "memory_mb": round(float(util[1]), 6),
            },
            "projects": projects,
            "preemptions": self.counters["preempted"],
        }
        if self.scenario.batch_workload is not None or self.nodes:
            out["batch"] = {
                "jobs_assigned": self.counters["batch_jobs_assigned"],
                "jobs_dropped": self.counters["batch_jobs_dropped"],
                "node_states": {nid: n.state.value for nid, n in sorted(self.nodes.items())},
            }
        if self.pledges is not None:
            out["pledge_shares"] = {g: round(s, 9) for g, s in self.pledges.shares().items()}
        return out

    # -- output files ---------------------------------------------------------------

    def metrics_header(self) -> list[str]:
        cols = [
            "time", "util_vcpus", "util_memory", "shared_util",
            "queue_len", "wait_mean", "wait_p95", "preempted",
        ]
        for pid in sorted(self.projects):
            cols += [
                f"running_vcpus_{pid}", f"running_memory_{pid}",
                f"cpu_seconds_private_{pid}", f"cpu_seconds_shared_{pid}",
            ]
        return cols

    def write_outputs(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "metrics": out / "metrics.csv",
            "summary": out / "summary.json",
            "requests": out / "requests.csv",
            "usage": out / "usage_ledger.csv",
        }
        with open(paths["metrics"], "w", encoding="utf-8") as fh:
            fh.write(",".join(self.metrics_header()) + "\n")
            for f in self.frames:
                row = [
                    f"{f.time:.3f}", f"{f.util_vcpus:.6f}", f"{f.util_memory:.6f}",
                    f"{f.shared_util:.6f}", str(f.queue_len),
                    f"{f.wait_mean:.3f}", f"{f.wait_p95:.3f}", str(f.preempted),
                ]
                for pid in sorted(self.projects):
                    pp = f.per_project[pid]
                    row += [
                        f"{pp['running_vcpus']:.0f}", f"{pp['running_memory']:.0f}",
                        f"{pp['cpu_seconds_private']:.3f}", f"{pp['cpu_seconds_shared']:.3f}",
                    ]
                fh.write(",".join(row) + "\n")
        with open(paths["summary"], "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(paths["requests"], "w", encoding="utf-8") as fh:
            fh.write(
                "id,user,project,flavor,class,submit_time,start_time,end_time,"
                "state,quota_kind,host,retries\n"
            )
            for rid, req in self.requests.items():
                start = "" if req.started_at is None else f"{req.started_at:.3f}"
                end = "" if rid not in self._end_time else f"{self._end_time[rid]:.3f}"
                kind = "" if req.quota_kind is None else req.quota_kind.value
                host = self._started_host.get(rid, "")
                fh.write(
                    f"{rid},{req.user},{req.project},{req.flavor.name},{req.klass.value},"
                    f"{req.submit_time:.3f},{start},{end},{req.state.value},{kind},"
                    f"{host},{req.retries}\n"
                )
        with open(paths["usage"], "w", encoding="utf-8") as fh:
            for line in self.ledger.export_lines():
                fh.write(line + "\n")
        if self.nodes:
            paths["nodes"] = out / "nodes.csv"
            with open(paths["nodes"], "w", encoding="utf-8") as fh:
                fh.write("time,node,from,to\n")
                for t, nid, old, new in self.node_log:
                    fh.write(f"{t:.3f},{nid},{old},{new}\n")
        return paths


def run_scenario(scenario: Scenario, out_dir: str | Path | None = None):
    """Convenience wrapper: build, run, optionally write artifacts."""
    sim = Simulation(scenario)
    frames, summary = sim.run()
    if out_dir is not None:
        sim.write_outputs(out_dir)
    return sim, frames, summary
