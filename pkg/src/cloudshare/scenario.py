"""Scenario files: schema validation, config key handling, workload generation.

A scenario is a YAML document describing the world (hosts, projects, users,
flavors), the workload (an explicit arrival list and/or a seeded generator),
optional batch-partition machinery (nodes, pledges, conversion events), and
configuration overrides.  Validation reports every problem with its field
path so a bad file can be fixed in one pass.

Config precedence: built-in defaults < config file (``key=value`` lines,
path from ``--config`` or the CLOUDSHARE_CONFIG environment variable) <
the scenario's ``config`` block.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .core import Flavor, Project, RequestClass, ResourceVector, User
from .preempt import DEFAULT_RANKERS

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.:-]*$")

CONFIG_DEFAULTS: dict[str, Any] = {
    "dispatch.max_retries": 3,
    "dispatch.recalc_period": 60.0,
    "dispatch.weigher": "most_free_vcpus",
    "queue.journal_path": None,
    "preempt.enabled": True,
    "preempt.rankers": list(DEFAULT_RANKERS),
    "preempt.requeue": False,
    "priority.algorithm": "multifactor",
    "priority.w_age": 0.3,
    "priority.w_fairshare": 0.7,
    "priority.age_max": 604_800.0,
    "priority.scale": 10_000,
    "usage.half_life": 86_400.0,
    "usage.window": 604_800.0,
    "usage.cpu_weight": 1.0,
    "usage.mem_weight_per_gb": 0.25,
    "director.ttl": 3600.0,
    "sim.metrics_period": 60.0,
}

_CONFIG_CHOICES = {
    "dispatch.weigher": {"most_free_vcpus", "least_free_vcpus"},
    "priority.algorithm": {"multifactor", "fair_tree"},
}


class ScenarioValidationError(Exception):
    """Carries every ``path: message`` diagnostic found in a scenario."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass(frozen=True)
class DurationSpec:
    dist: str  # "fixed" | "exponential"
    value: float = 0.0  # fixed value or exponential mean

    def draw(self, rng: random.Random) -> float:
        if self.dist == "fixed":
            return self.value
        return rng.expovariate(1.0 / self.value)


@dataclass(frozen=True)
class Arrival:
    time: float
    id: str
    user: str
    project: str
    flavor: str
    klass: RequestClass = RequestClass.NORMAL
    duration: float | None = None


@dataclass(frozen=True)
class GeneratorSpec:
    rate: float
    users: dict[str, float]
    flavor_mix: dict[str, float]
    duration: DurationSpec
    preemptible_fraction: float = 0.0


@dataclass(frozen=True)
class BatchWorkloadSpec:
    rate: float
    duration: DurationSpec


@dataclass(frozen=True)
class DirectorEvent:
    time: float
    node: str
    target: str  # "batch" | "cloud"
    tenant: str | None = None
    ttl: float | None = None


@dataclass
class Scenario:
    horizon: float
    seed: int = 0
    hosts_count: int = 0
    host_capacity: ResourceVector = ResourceVector(0, 0)
    flavors: dict[str, Flavor] = field(default_factory=dict)
    projects: list[Project] = field(default_factory=list)
    users: list[User] = field(default_factory=list)
    arrivals: list[Arrival] = field(default_factory=list)
    generator: GeneratorSpec | None = None
    batch_nodes: list[tuple[str, ResourceVector]] = field(default_factory=list)
    pledges: dict[str, float] | None = None
    batch_workload: BatchWorkloadSpec | None = None
    director_events: list[DirectorEvent] = field(default_factory=list)
    start_failures: dict[str, int] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def total_capacity(self) -> ResourceVector:
        return ResourceVector(
            self.hosts_count * self.host_capacity.vcpus,
            self.hosts_count * self.host_capacity.memory_mb,
        )

    def project_of_user(self, user_id: str) -> str:
        for u in self.users:
            if u.id == user_id:
                return u.project
        raise KeyError(user_id)


# -- validation helpers -------------------------------------------------------


class _Checker:
    def __init__(self) -> None:
        self.errors: list[str] = []

    def error(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def expect_map(self, value, path: str) -> dict | None:
        if not isinstance(value, dict):
            self.error(path, f"expected a mapping, got {type(value).__name__}")
            return None
        return value

    def expect_list(self, value, path: str) -> list | None:
        if not isinstance(value, list):
            self.error(path, f"expected a list, got {type(value).__name__}")
            return None
        return value

    def expect_str(self, value, path: str) -> str | None:
        if not isinstance(value, str) or not value:
            self.error(path, "expected a non-empty string")
            return None
        return value

    def expect_ident(self, value, path: str) -> str | None:
        s = self.expect_str(value, path)
        if s is None:
            return None
        if not _ID_RE.match(s):
            self.error(path, f"{s!r} is not a valid identifier")
            return None
        return s

    def expect_num(self, value, path: str, minimum=None, exclusive_min=None, maximum=None):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(path, f"expected a number, got {type(value).__name__}")
            return None
        if minimum is not None and value < minimum:
            self.error(path, f"must be >= {minimum}, got {value}")
            return None
        if exclusive_min is not None and value <= exclusive_min:
            self.error(path, f"must be > {exclusive_min}, got {value}")
            return None
        if maximum is not None and value > maximum:
            self.error(path, f"must be <= {maximum}, got {value}")
            return None
        return value

    def expect_int(self, value, path: str, minimum=None):
        if isinstance(value, bool) or not isinstance(value, int):
            self.error(path, f"expected an integer, got {type(value).__name__}")
            return None
        if minimum is not None and value < minimum:
            self.error(path, f"must be >= {minimum}, got {value}")
            return None
        return value

    def expect_bool(self, value, path: str):
        if not isinstance(value, bool):
            self.error(path, f"expected a boolean, got {type(value).__name__}")
            return None
        return value


def _parse_duration_spec(chk: _Checker, value, path: str) -> DurationSpec | None:
    m = chk.expect_map(value, path)
    if m is None:
        return None
    dist = m.get("dist")
    if dist not in ("fixed", "exponential"):
        chk.error(f"{path}.dist", "expected 'fixed' or 'exponential'")
        return None
    if dist == "fixed":
        v = chk.expect_num(m.get("value"), f"{path}.value", exclusive_min=0)
    else:
        v = chk.expect_num(m.get("mean"), f"{path}.mean", exclusive_min=0)
    if v is None:
        return None
    return DurationSpec(dist=dist, value=float(v))


def _parse_resource(chk: _Checker, m: dict, path: str, minimum_vcpus=0) -> ResourceVector | None:
    vcpus = chk.expect_int(m.get("vcpus", 0), f"{path}.vcpus", minimum=minimum_vcpus)
    mem = chk.expect_int(m.get("memory_mb", 0), f"{path}.memory_mb", minimum=0)
    if vcpus is None or mem is None:
        return None
    return ResourceVector(vcpus, mem)


def validate_scenario(data: Any) -> list[str]:
    """Structural and semantic checks; returns ``path: message`` diagnostics."""
    try:
        parse_scenario(data)
    except ScenarioValidationError as exc:
        return exc.errors
    return []


def parse_scenario(data: Any, base_config: dict[str, Any] | None = None) -> Scenario:
    chk = _Checker()
    root = chk.expect_map(data, "scenario")
    if root is None:
        raise ScenarioValidationError(chk.errors)

    known_keys = {
        "seed", "horizon", "hosts", "flavors", "projects", "workload",
        "batch_nodes", "pledges", "batch_workload", "director_events",
        "start_failures", "config",
    }
    for key in sorted(set(root) - known_keys):
        chk.error(str(key), "unknown scenario key")

    seed = chk.expect_int(root.get("seed", 0), "seed", minimum=0) or 0
    horizon = chk.expect_num(root.get("horizon"), "horizon", exclusive_min=0)

    hosts_count = 0
    host_capacity = ResourceVector(0, 0)
    if "hosts" in root:
        hosts = chk.expect_map(root["hosts"], "hosts")
        if hosts is not None:
            hosts_count = chk.expect_int(hosts.get("count"), "hosts.count", minimum=0) or 0
            if hosts_count > 0:
                cap = _parse_resource(chk, hosts, "hosts", minimum_vcpus=1)
                if cap is not None:
                    host_capacity = cap

    flavors: dict[str, Flavor] = {}
    flavor_list = chk.expect_list(root.get("flavors", []), "flavors")
    if flavor_list is not None:
        for i, item in enumerate(flavor_list):
            path = f"flavors[{i}]"
            m = chk.expect_map(item, path)
            if m is None:
                continue
            name = chk.expect_ident(m.get("name"), f"{path}.name")
            size = _parse_resource(chk, m, path)
            if name is None or size is None:
                continue
            if name in flavors:
                chk.error(f"{path}.name", f"duplicate flavor {name!r}")
                continue
            if size.is_zero:
                chk.error(path, "flavor needs at least one strictly positive component")
                continue
            flavors[name] = Flavor(name, size)

    projects: list[Project] = []
    users: list[User] = []
    seen_users: set[str] = set()
    project_list = chk.expect_list(root.get("projects", []), "projects")
    if project_list is not None:
        if not project_list:
            chk.error("projects", "at least one project is required")
        for i, item in enumerate(project_list):
            path = f"projects[{i}]"
            m = chk.expect_map(item, path)
            if m is None:
                continue
            pid = chk.expect_ident(m.get("id"), f"{path}.id")
            share = chk.expect_num(m.get("share", 1.0), f"{path}.share", exclusive_min=0)
            quota = ResourceVector(0, 0)
            if "private_quota" in m:
                qm = chk.expect_map(m["private_quota"], f"{path}.private_quota")
                if qm is not None:
                    q = _parse_resource(chk, qm, f"{path}.private_quota")
                    if q is not None:
                        quota = q
            eligible = m.get("shared_eligible", True)
            if chk.expect_bool(eligible, f"{path}.shared_eligible") is None:
                eligible = True
            user_list = chk.expect_list(m.get("users"), f"{path}.users")
            project_users: list[User] = []
            if user_list is not None:
                if not user_list:
                    chk.error(f"{path}.users", "each project needs at least one user")
                for j, uitem in enumerate(user_list):
                    upath = f"{path}.users[{j}]"
                    um = chk.expect_map(uitem, upath)
                    if um is None:
                        continue
                    uid = chk.expect_ident(um.get("id"), f"{upath}.id")
                    ushare = chk.expect_num(um.get("share", 1.0), f"{upath}.share", exclusive_min=0)
                    if uid is None or ushare is None or pid is None:
                        continue
                    if uid in seen_users:
                        chk.error(f"{upath}.id", f"duplicate user {uid!r}")
                        continue
                    seen_users.add(uid)
                    project_users.append(User(uid, pid, float(ushare)))
            if pid is None or share is None:
                continue
            if any(p.id == pid for p in projects):
                chk.error(f"{path}.id", f"duplicate project {pid!r}")
                continue
            projects.append(Project(pid, float(share), quota, bool(eligible)))
            users.extend(project_users)

    project_ids = {p.id for p in projects}
    user_project = {u.id: u.project for u in users}

    if horizon is not None and hosts_count >= 0 and projects:
        total = ResourceVector(hosts_count * host_capacity.vcpus, hosts_count * host_capacity.memory_mb)
        reserved_v = sum(p.private_quota.vcpus for p in projects)
        reserved_m = sum(p.private_quota.memory_mb for p in projects)
        if reserved_v > total.vcpus or reserved_m > total.memory_mb:
            chk.error("projects", f"private quotas ({reserved_v} vcpus) oversubscribe total capacity ({total.vcpus} vcpus)")

    arrivals: list[Arrival] = []
    generator: GeneratorSpec | None = None
    if "workload" in root:
        wl = chk.expect_map(root["workload"], "workload")
        if wl is not None:
            arr_list = chk.expect_list(wl.get("arrivals", []), "workload.arrivals")
            seen_ids: set[str] = set()
            if arr_list is not None:
                for i, item in enumerate(arr_list):
                    path = f"workload.arrivals[{i}]"
                    m = chk.expect_map(item, path)
                    if m is None:
                        continue
                    t = chk.expect_num(m.get("time"), f"{path}.time", minimum=0)
                    rid = m.get("id", f"r{i:05d}")
                    rid = chk.expect_ident(rid, f"{path}.id")
                    uid = chk.expect_str(m.get("user"), f"{path}.user")
                    if uid is not None and uid not in user_project:
                        chk.error(f"{path}.user", f"unknown user {uid!r}")
                        uid = None
                    fname = chk.expect_str(m.get("flavor"), f"{path}.flavor")
                    if fname is not None and fname not in flavors:
                        chk.error(f"{path}.flavor", f"unknown flavor {fname!r}")
                        fname = None
                    klass_s = m.get("class", "normal")
                    if klass_s not in ("normal", "preemptible"):
                        chk.error(f"{path}.class", "expected 'normal' or 'preemptible'")
                        klass_s = "normal"
                    duration = m.get("duration")
                    if duration is not None:
                        duration = chk.expect_num(duration, f"{path}.duration", exclusive_min=0)
                    if None in (t, rid, uid, fname):
                        continue
                    if rid in seen_ids:
                        chk.error(f"{path}.id", f"duplicate request id {rid!r}")
                        continue
                    seen_ids.add(rid)
                    arrivals.append(
                        Arrival(
                            time=float(t), id=rid, user=uid, project=user_project[uid],
                            flavor=fname, klass=RequestClass(klass_s),
                            duration=None if duration is None else float(duration),
                        )
                    )
            if "generator" in wl:
                g = chk.expect_map(wl["generator"], "workload.generator")
                if g is not None:
                    rate = chk.expect_num(g.get("rate"), "workload.generator.rate", exclusive_min=0)
                    gusers: dict[str, float] = {}
                    um = chk.expect_map(g.get("users"), "workload.generator.users")
                    if um is not None:
                        if not um:
                            chk.error("workload.generator.users", "needs at least one user")
                        for uid, w in um.items():
                            upath = f"workload.generator.users.{uid}"
                            if uid not in user_project:
                                chk.error(upath, f"unknown user {uid!r}")
                                continue
                            w = chk.expect_num(w, upath, exclusive_min=0)
                            if w is not None:
                                gusers[uid] = float(w)
                    fmix: dict[str, float] = {}
                    fm = chk.expect_map(g.get("flavor_mix"), "workload.generator.flavor_mix")
                    if fm is not None:
                        if not fm:
                            chk.error("workload.generator.flavor_mix", "needs at least one flavor")
                        for fname, w in fm.items():
                            fpath = f"workload.generator.flavor_mix.{fname}"
                            if fname not in flavors:
                                chk.error(fpath, f"unknown flavor {fname!r}")
                                continue
                            w = chk.expect_num(w, fpath, exclusive_min=0)
                            if w is not None:
                                fmix[fname] = float(w)
                    frac = chk.expect_num(
                        g.get("preemptible_fraction", 0.0),
                        "workload.generator.preemptible_fraction", minimum=0, maximum=1,
                    )
                    dur = _parse_duration_spec(chk, g.get("duration"), "workload.generator.duration")
                    if rate is not None and gusers and fmix and dur is not None and frac is not None:
                        generator = GeneratorSpec(
                            rate=float(rate), users=gusers, flavor_mix=fmix,
                            duration=dur, preemptible_fraction=float(frac),
                        )

    batch_nodes: list[tuple[str, ResourceVector]] = []
    node_ids: set[str] = set()
    if "batch_nodes" in root:
        bn = chk.expect_list(root["batch_nodes"], "batch_nodes")
        if bn is not None:
            for i, item in enumerate(bn):
                path = f"batch_nodes[{i}]"
                m = chk.expect_map(item, path)
                if m is None:
                    continue
                nid = chk.expect_ident(m.get("id"), f"{path}.id")
                cap = _parse_resource(chk, m, path, minimum_vcpus=1)
                if nid is None or cap is None:
                    continue
                if nid in node_ids:
                    chk.error(f"{path}.id", f"duplicate node {nid!r}")
                    continue
                node_ids.add(nid)
                batch_nodes.append((nid, cap))

    pledges: dict[str, float] | None = None
    if "pledges" in root:
        pm = chk.expect_map(root["pledges"], "pledges")
        if pm is not None:
            pledges = {}
            for gid, v in pm.items():
                path = f"pledges.{gid}"
                if gid not in project_ids:
                    chk.error(path, f"unknown project {gid!r}")
                    continue
                v = chk.expect_num(v, path, minimum=0)
                if v is not None:
                    pledges[gid] = float(v)

    batch_workload: BatchWorkloadSpec | None = None
    if "batch_workload" in root:
        bw = chk.expect_map(root["batch_workload"], "batch_workload")
        if bw is not None:
            if not batch_nodes:
                chk.error("batch_workload", "requires batch_nodes")
            rate = chk.expect_num(bw.get("rate"), "batch_workload.rate", exclusive_min=0)
            dur = _parse_duration_spec(chk, bw.get("duration"), "batch_workload.duration")
            if rate is not None and dur is not None:
                batch_workload = BatchWorkloadSpec(rate=float(rate), duration=dur)

    director_events: list[DirectorEvent] = []
    if "director_events" in root:
        de = chk.expect_list(root["director_events"], "director_events")
        if de is not None:
            for i, item in enumerate(de):
                path = f"director_events[{i}]"
                m = chk.expect_map(item, path)
                if m is None:
                    continue
                t = chk.expect_num(m.get("time"), f"{path}.time", minimum=0)
                nid = chk.expect_str(m.get("node"), f"{path}.node")
                if nid is not None and nid not in node_ids:
                    chk.error(f"{path}.node", f"unknown node {nid!r}")
                    nid = None
                target = m.get("target")
                if target not in ("batch", "cloud"):
                    chk.error(f"{path}.target", "expected 'batch' or 'cloud'")
                    target = None
                tenant = m.get("tenant")
                if target == "cloud":
                    if tenant is None or tenant not in project_ids:
                        chk.error(f"{path}.tenant", "cloud conversion needs a tenant project")
                        tenant = None
                ttl = m.get("ttl")
                if ttl is not None:
                    ttl = chk.expect_num(ttl, f"{path}.ttl", exclusive_min=0)
                if None in (t, nid, target) or (target == "cloud" and tenant is None):
                    continue
                director_events.append(
                    DirectorEvent(time=float(t), node=nid, target=target, tenant=tenant,
                                  ttl=None if ttl is None else float(ttl))
                )

    start_failures: dict[str, int] = {}
    if "start_failures" in root:
        sf = chk.expect_map(root["start_failures"], "start_failures")
        if sf is not None:
            for rid, count in sf.items():
                c = chk.expect_int(count, f"start_failures.{rid}", minimum=1)
                if c is not None:
                    start_failures[str(rid)] = c

    config = dict(CONFIG_DEFAULTS)
    if base_config:
        config.update(base_config)
    if "config" in root:
        cm = chk.expect_map(root["config"], "config")
        if cm is not None:
            for key, value in cm.items():
                path = f"config.{key}"
                if key not in CONFIG_DEFAULTS:
                    chk.error(path, "unknown config key")
                    continue
                coerced = _coerce_config_value(key, value)
                if coerced is _INVALID:
                    chk.error(path, f"invalid value {value!r}")
                    continue
                config[key] = coerced

    if not flavor_list and flavor_list is not None:
        chk.error("flavors", "at least one flavor is required")
    if hosts_count == 0 and not batch_nodes:
        chk.error("hosts.count", "scenario has no capacity at all (no hosts, no batch nodes)")

    if chk.errors:
        raise ScenarioValidationError(sorted(chk.errors))

    return Scenario(
        horizon=float(horizon), seed=seed, hosts_count=hosts_count,
        host_capacity=host_capacity, flavors=flavors, projects=projects,
        users=users, arrivals=arrivals, generator=generator,
        batch_nodes=batch_nodes, pledges=pledges, batch_workload=batch_workload,
        director_events=director_events, start_failures=start_failures, config=config,
    )


_INVALID = object()


def _coerce_config_value(key: str, value):
    default = CONFIG_DEFAULTS[key]
    if key in _CONFIG_CHOICES:
        return value if value in _CONFIG_CHOICES[key] else _INVALID
    if key == "queue.journal_path":
        if value is None or value == "":
            return None
        return value if isinstance(value, str) else _INVALID
    if key == "preempt.rankers":
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        if not isinstance(value, list) or not value:
            return _INVALID
        valid = set(DEFAULT_RANKERS)
        return value if all(v in valid for v in value) else _INVALID
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        return _INVALID
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            try:
                value = int(value)
            except (TypeError, ValueError):
                return _INVALID
        return value if value >= 0 else _INVALID
    if isinstance(default, float):
        if isinstance(value, bool):
            return _INVALID
        try:
            v = float(value)
        except (TypeError, ValueError):
            return _INVALID
        zero_ok = key in (
            "priority.w_age", "priority.w_fairshare",
            "usage.cpu_weight", "usage.mem_weight_per_gb",
        )
        if v < 0 or (v == 0 and not zero_ok):
            return _INVALID
        return v
    return value


def parse_config_file(path: str | Path) -> dict[str, Any]:
    """Read ``key=value`` overrides; unknown keys or bad values are errors."""
    errors: list[str] = []
    overrides: dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            errors.append(f"{path}:{lineno}: expected key=value")
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_DEFAULTS:
            errors.append(f"{path}:{lineno}: unknown config key {key!r}")
            continue
        coerced = _coerce_config_value(key, value)
        if coerced is _INVALID:
            errors.append(f"{path}:{lineno}: invalid value {value!r} for {key}")
            continue
        overrides[key] = coerced
    if errors:
        raise ScenarioValidationError(errors)
    return overrides


def load_scenario(path: str | Path, base_config: dict[str, Any] | None = None) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return parse_scenario(data, base_config)


def generate_workload(spec: GeneratorSpec, scenario: Scenario, seed: int) -> list[Arrival]:
    """Draw a deterministic Poisson arrival stream from the generator spec.

    Per arrival the draw order is fixed (gap, user, flavor, class, duration)
    so a seed fully determines the stream.
    """
    rng = random.Random(seed)
    users = sorted(spec.users.items())
    user_total = sum(w for _, w in users)
    flavors = sorted(spec.flavor_mix.items())
    flavor_total = sum(w for _, w in flavors)
    user_project = {u.id: u.project for u in scenario.users}

    def weighted(items, total, roll):
        acc = 0.0
        for name, w in items:
            acc += w
            if roll < acc / total:
                return name
        return items[-1][0]

    out: list[Arrival] = []
    t = 0.0
    i = 0
    while True:
        t += rng.expovariate(spec.rate)
        if t > scenario.horizon:
            break
        uid = weighted(users, user_total, rng.random())
        fname = weighted(flavors, flavor_total, rng.random())
        klass = (
            RequestClass.PREEMPTIBLE
            if rng.random() < spec.preemptible_fraction
            else RequestClass.NORMAL
        )
        duration = spec.duration.draw(rng)
        out.append(
            Arrival(
                time=t, id=f"g{i:06d}", user=uid, project=user_project[uid],
                flavor=fname, klass=klass, duration=duration,
            )
        )
        i += 1
    return out
