import itertools
import random

import pytest

from cloudshare.core import (
    Flavor,
    Host,
    Request,
    RequestClass,
    RequestState,
    ResourceVector,
    SchedulerError,
)
from cloudshare.dispatch import QuotaState
from cloudshare.preempt import (
    VictimPolicy,
    find_victims,
    preempt_and_place,
)


def running(rid, vcpus, mem, klass, started, host, project="p"):
    req = Request(
        id=rid, user="u", project=project,
        flavor=Flavor(f"f-{vcpus}-{mem}", ResourceVector(vcpus, mem)),
        klass=klass, state=RequestState.RUNNING, started_at=started, host=host.id,
    )
    host.allocate(rid, req.flavor.size)
    return req


def normal_request(rid, vcpus, mem, project="p"):
    return Request(
        id=rid, user="u", project=project,
        flavor=Flavor(f"f-{vcpus}-{mem}", ResourceVector(vcpus, mem)),
    )


def brute_force_min_cardinality(host, demand, preemptibles):
    """Oracle: smallest feasible victim-set size by full subset enumeration."""
    best = None
    ids = sorted(preemptibles)
    for k in range(1, len(ids) + 1):
        for subset in itertools.combinations(ids, k):
            freed_v = sum(host.allocations[r].vcpus for r in subset)
            freed_m = sum(host.allocations[r].memory_mb for r in subset)
            if (
                host.free.vcpus + freed_v >= demand.vcpus
                and host.free.memory_mb + freed_m >= demand.memory_mb
            ):
                best = k
                break
        if best is not None:
            break
    return best


class TestFindVictims:
    def test_single_big_victim_beats_pair(self):
        host = Host("h1", ResourceVector(10, 20480))
        x = running("x", 4, 4096, RequestClass.PREEMPTIBLE, 10.0, host)
        y = running("y", 2, 2048, RequestClass.PREEMPTIBLE, 20.0, host)
        requests = {"x": x, "y": y}
        req = normal_request("n", 8, 8192)
        sel = find_victims(req, [host], requests)
        assert sel is not None
        assert sel.victims == ("x",)  # frees 4+4=8 vcpus; {y} would free only 6

    def test_no_preemptibles_anywhere(self):
        host = Host("h1", ResourceVector(8, 16384))
        n = running("n1", 8, 16384, RequestClass.NORMAL, 0.0, host)
        sel = find_victims(normal_request("n", 4, 4096), [host], {"n1": n})
        assert sel is None

    def test_normal_instances_are_never_candidates(self):
        host = Host("h1", ResourceVector(8, 16384))
        n = running("n1", 6, 12288, RequestClass.NORMAL, 0.0, host)
        p = running("p1", 1, 1024, RequestClass.PREEMPTIBLE, 1.0, host)
        sel = find_victims(normal_request("n", 4, 4096), [host], {"n1": n, "p1": p})
        assert sel is None  # evicting p1 alone cannot make room

    def test_preemptible_request_is_a_contract_violation(self):
        req = normal_request("n", 1, 1024)
        req.klass = RequestClass.PREEMPTIBLE
        with pytest.raises(SchedulerError):
            find_victims(req, [], {})

    def test_youngest_breaks_ties(self):
        host = Host("h1", ResourceVector(8, 16384))
        old = running("old", 4, 4096, RequestClass.PREEMPTIBLE, 5.0, host)
        young = running("young", 4, 4096, RequestClass.PREEMPTIBLE, 50.0, host)
        requests = {"old": old, "young": young}
        sel = find_victims(normal_request("n", 4, 4096), [host], requests)
        assert sel.victims == ("young",)

    def test_cross_host_tie_lowest_host_id(self):
        h1, h2 = Host("h1", ResourceVector(8, 16384)), Host("h2", ResourceVector(8, 16384))
        a = running("a", 4, 4096, RequestClass.PREEMPTIBLE, 10.0, h1)
        b = running("b", 4, 4096, RequestClass.PREEMPTIBLE, 10.0, h2)
        sel = find_victims(normal_request("n", 8, 8192), [h2, h1], {"a": a, "b": b})
        assert sel.host_id == "h1"
        assert sel.victims == ("a",)

    def test_tenant_restricted_host_requires_matching_project(self):
        host = Host("h1", ResourceVector(8, 16384), tenant="other")
        p = running("p1", 8, 8192, RequestClass.PREEMPTIBLE, 0.0, host, project="other")
        sel = find_victims(normal_request("n", 4, 4096, project="p"), [host], {"p1": p})
        assert sel is None

    def test_greedy_fallback_beyond_exhaustive_limit(self):
        host = Host("h1", ResourceVector(16, 65536))
        requests = {}
        for i in range(12):
            rid = f"p{i:02d}"
            requests[rid] = running(rid, 1, 4096, RequestClass.PREEMPTIBLE, float(i), host)
        policy = VictimPolicy(exhaustive_limit=10)
        sel = find_victims(normal_request("n", 8, 16384), [host], requests, policy)
        assert sel is not None
        freed_v = sum(requests[r].flavor.size.vcpus for r in sel.victims)
        assert host.free.vcpus + freed_v >= 8


class TestMinimality:
    def test_thousand_randomized_instances_match_brute_force(self):
        rng = random.Random(20240917)
        for trial in range(1000):
            cap = ResourceVector(rng.randint(8, 32), rng.randint(8192, 65536))
            host = Host("h1", cap)
            requests = {}
            n_pre = rng.randint(0, 10)
            for i in range(n_pre):
                v = rng.randint(0, min(4, host.free.vcpus))
                m = rng.randint(0, min(8192, host.free.memory_mb))
                if v == 0 and m == 0:
                    continue
                rid = f"p{i:02d}"
                requests[rid] = running(
                    rid, v, m, RequestClass.PREEMPTIBLE, rng.uniform(0, 100), host
                )
            demand = ResourceVector(
                rng.randint(max(1, host.free.vcpus), cap.vcpus),
                rng.randint(host.free.memory_mb, cap.memory_mb),
            )
            if demand.fits_in(host.free):
                continue  # placement would not have failed; selection never runs
            req = normal_request("n", demand.vcpus, demand.memory_mb)
            sel = find_victims(req, [host], requests)
            oracle = brute_force_min_cardinality(
                host, demand, [r for r in requests if requests[r].klass is RequestClass.PREEMPTIBLE]
            )
            if oracle is None:
                assert sel is None
            else:
                assert sel is not None
                # feasible and minimal cardinality
                freed = sel.freed
                assert host.free.vcpus + freed.vcpus >= demand.vcpus
                assert host.free.memory_mb + freed.memory_mb >= demand.memory_mb
                assert len(sel.victims) == oracle
                assert all(requests[v].klass is RequestClass.PREEMPTIBLE for v in sel.victims)


class TestPreemptAndPlace:
    def _world(self):
        host = Host("h1", ResourceVector(12, 24576))
        x = running("x", 4, 4096, RequestClass.PREEMPTIBLE, 10.0, host)
        y = running("y", 2, 2048, RequestClass.PREEMPTIBLE, 20.0, host)
        keeper = running("keep", 2, 2048, RequestClass.NORMAL, 0.0, host)
        quota = QuotaState(
            total_capacity=ResourceVector(12, 24576),
            shared_pool=ResourceVector(12, 24576),
            private_quota={"p": ResourceVector(0, 0)},
            shared_eligible={"p": True},
        )
        from cloudshare.core import QuotaKind

        for r in (x, y, keeper):
            r.quota_kind = QuotaKind.SHARED
            quota.charge("p", QuotaKind.SHARED, r.flavor.size)
        return host, quota, {"x": x, "y": y, "keep": keeper}

    def test_victims_preempted_and_request_placed(self):
        host, quota, requests = self._world()
        req = normal_request("n", 8, 8192)
        sel = find_victims(req, [host], requests)
        assert sel.victims == ("x",)
        preempt_and_place(req, {"h1": host}, quota, requests, sel)
        assert requests["x"].state is RequestState.PREEMPTED
        assert requests["keep"].state is RequestState.RUNNING
        assert "n" in host.allocations
        assert req.flavor.size.fits_in(host.capacity)

    def test_quota_credited_back_for_victims(self):
        host, quota, requests = self._world()
        before = quota.shared_allocated_total()
        req = normal_request("n", 8, 8192)
        sel = find_victims(req, [host], requests)
        preempt_and_place(req, {"h1": host}, quota, requests, sel)
        after = quota.shared_allocated_total()
        assert before.vcpus - after.vcpus == 4

    def test_stop_callback_runs_before_release(self):
        host, quota, requests = self._world()
        seen = []

        def on_stop(victim):
            seen.append((victim.id, victim.state, victim.id in host.allocations))

        req = normal_request("n", 8, 8192)
        sel = find_victims(req, [host], requests)
        preempt_and_place(req, {"h1": host}, quota, requests, sel, on_stop)
        assert seen == [("x", RequestState.RUNNING, True)]
