"""Management HTTP API over an interactively stepped simulation.

The service owns one Simulation and advances it only on explicit ``step``
calls, so every mutation (quota change, manager suspend/resume, node
transition) lands between dispatch cycles.  All handlers funnel through one
lock; request handling may be concurrent but state changes are serialized.

Routes (all under /v1):

    GET  /v1/managers                      list manager descriptors
    POST /v1/managers/{name}/suspend       suspend a manager
    POST /v1/managers/{name}/resume        resume a manager
    GET  /v1/projects/{id}/quota           private quota plus current allocations
    PUT  /v1/projects/{id}/quota           set the private quota (409 on conflict)
    GET  /v1/queue                         ordered queue snapshot
    POST /v1/nodes/{id}/transition         request a partition switch
    POST /v1/step                          advance the clock {"until": t} or {"events": n}
    GET  /v1/state                         clock, counters, queue length

Suspension semantics: ``scheduler`` halts dispatch cycles (the queue keeps
its contents), ``fairshare`` freezes priority recalculation, ``nova``
rejects new arrivals, ``director`` rejects node transitions.  ``queue`` and
``quota`` are bookkeeping roles with no independent periodic activity, so
suspending them only changes their reported status.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .core import ResourceVector
from .director import TransitionDenied
from .dispatch import QuotaError
from .sim import Simulation


class QuotaUpdate(BaseModel):
    vcpus: int
    memory_mb: int


class TransitionBody(BaseModel):
    target: str
    tenant: str | None = None
    ttl: float | None = None


class StepBody(BaseModel):
    until: float | None = None
    events: int | None = None


def _rv(v: ResourceVector) -> dict:
    return {"vcpus": v.vcpus, "memory_mb": v.memory_mb}


def create_app(sim: Simulation) -> FastAPI:
    app = FastAPI(title="cloudshare management service")
    lock = threading.Lock()

    @app.get("/v1/managers")
    def list_managers():
        with lock:
            return [
                {"name": m.name, "status": m.status.value, "rate": m.rate}
                for m in sim.managers.values()
            ]

    @app.post("/v1/managers/{name}/suspend")
    def suspend(name: str):
        with lock:
            if name not in sim.managers:
                raise HTTPException(status_code=404, detail=f"unknown manager {name!r}")
            sim.suspend_manager(name)
            return {"name": name, "status": "suspended"}

    @app.post("/v1/managers/{name}/resume")
    def resume(name: str):
        with lock:
            if name not in sim.managers:
                raise HTTPException(status_code=404, detail=f"unknown manager {name!r}")
            sim.resume_manager(name)
            return {"name": name, "status": "active"}

    @app.get("/v1/projects/{project_id}/quota")
    def get_quota(project_id: str):
        with lock:
            if project_id not in sim.projects:
                raise HTTPException(status_code=404, detail=f"unknown project {project_id!r}")
            q = sim.quota
            return {
                "project": project_id,
                "private_quota": _rv(q.private_quota[project_id]),
                "private_allocated": _rv(q.private_allocated[project_id]),
                "shared_allocated": _rv(q.shared_allocated[project_id]),
                "shared_eligible": q.shared_eligible[project_id],
            }

    @app.put("/v1/projects/{project_id}/quota")
    def set_quota(project_id: str, body: QuotaUpdate):
        with lock:
            if project_id not in sim.projects:
                raise HTTPException(status_code=404, detail=f"unknown project {project_id!r}")
            try:
                sim.set_private_quota(project_id, ResourceVector(body.vcpus, body.memory_mb))
            except QuotaError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            return {"project": project_id, "private_quota": _rv(sim.quota.private_quota[project_id])}

    @app.get("/v1/queue")
    def list_queue():
        with lock:
            return [
                {"request_id": e.request_id, "priority": e.priority, "seq": e.seq}
                for e in sim.pqueue.ordered_snapshot()
            ]

    @app.post("/v1/nodes/{node_id}/transition")
    def node_transition(node_id: str, body: TransitionBody):
        with lock:
            if body.target not in ("batch", "cloud"):
                raise HTTPException(status_code=422, detail="target must be 'batch' or 'cloud'")
            try:
                sim.node_transition(node_id, body.target, body.tenant, body.ttl)
            except KeyError:
                raise HTTPException(status_code=404, detail=f"unknown node {node_id!r}")
            except TransitionDenied as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            node = sim.nodes[node_id]
            return {"node": node_id, "state": node.state.value, "dynp": node.dynp()}

    @app.post("/v1/step")
    def step(body: StepBody):
        with lock:
            if body.until is None and body.events is None:
                raise HTTPException(status_code=422, detail="provide 'until' or 'events'")
            if body.until is not None:
                handled = sim.step_until(body.until)
            else:
                handled = sim.step_events(body.events)
            return {"now": sim.now, "handled": handled}

    @app.get("/v1/state")
    def state():
        with lock:
            return {
                "now": sim.now,
                "queue_len": len(sim.pqueue),
                "counters": dict(sim.counters),
            }

    return app
