import pytest
from hypothesis import given, strategies as st

from cloudshare.core import (
    CapacityError,
    Flavor,
    Host,
    InvalidTransition,
    LEGAL_REQUEST_EDGES,
    Request,
    RequestClass,
    RequestState,
    ResourceVector,
    rv_add,
    rv_fits,
    rv_sub,
)


def make_request(klass=RequestClass.NORMAL, state=RequestState.SCHEDULING):
    req = Request(
        id="r1", user="u1", project="p1",
        flavor=Flavor("small", ResourceVector(1, 1024)), klass=klass,
    )
    req.state = state
    return req


class TestResourceVector:
    def test_add(self):
        assert rv_add(ResourceVector(4, 8192), ResourceVector(2, 4096)) == ResourceVector(6, 12288)

    def test_add_identity(self):
        assert rv_add(ResourceVector(0, 0), ResourceVector(5, 1024)) == ResourceVector(5, 1024)

    def test_add_symmetry(self):
        assert rv_add(ResourceVector(1, 1), ResourceVector(1, 1)) == ResourceVector(2, 2)

    def test_fits(self):
        assert rv_fits(ResourceVector(2, 2048), ResourceVector(4, 4096))

    def test_fits_boundary_equality(self):
        assert rv_fits(ResourceVector(4, 4096), ResourceVector(4, 4096))

    def test_fits_one_component_exceeds(self):
        assert not rv_fits(ResourceVector(5, 1024), ResourceVector(4, 4096))

    def test_negative_component_rejected(self):
        with pytest.raises(CapacityError):
            ResourceVector(-1, 0)

    def test_sub_checked(self):
        assert rv_sub(ResourceVector(4, 4096), ResourceVector(1, 1024)) == ResourceVector(3, 3072)
        with pytest.raises(CapacityError):
            rv_sub(ResourceVector(1, 4096), ResourceVector(2, 0))

    @given(
        a=st.tuples(st.integers(0, 100), st.integers(0, 10_000)),
        b=st.tuples(st.integers(0, 100), st.integers(0, 10_000)),
    )
    def test_add_then_sub_roundtrip(self, a, b):
        va, vb = ResourceVector(*a), ResourceVector(*b)
        assert rv_sub(rv_add(va, vb), vb) == va

    @given(
        a=st.tuples(st.integers(0, 100), st.integers(0, 10_000)),
        b=st.tuples(st.integers(0, 100), st.integers(0, 10_000)),
    )
    def test_fits_iff_componentwise(self, a, b):
        va, vb = ResourceVector(*a), ResourceVector(*b)
        assert rv_fits(va, vb) == (a[0] <= b[0] and a[1] <= b[1])


class TestFlavor:
    def test_zero_flavor_rejected(self):
        with pytest.raises(ValueError):
            Flavor("nothing", ResourceVector(0, 0))

    def test_single_positive_component_allowed(self):
        Flavor("cpu-only", ResourceVector(4, 0))


class TestRequestLifecycle:
    def test_legal_path(self):
        req = make_request()
        req.transition(RequestState.RUNNING)
        req.transition(RequestState.COMPLETED)
        assert req.state is RequestState.COMPLETED

    def test_normal_never_preempted(self):
        req = make_request(state=RequestState.RUNNING)
        with pytest.raises(InvalidTransition):
            req.transition(RequestState.PREEMPTED)

    def test_preemptible_can_be_preempted(self):
        req = make_request(klass=RequestClass.PREEMPTIBLE, state=RequestState.RUNNING)
        req.transition(RequestState.PREEMPTED)
        assert req.state is RequestState.PREEMPTED

    @given(
        src=st.sampled_from(list(RequestState)),
        dst=st.sampled_from(list(RequestState)),
    )
    def test_transition_graph_is_exactly_the_edge_set(self, src, dst):
        req = make_request(klass=RequestClass.PREEMPTIBLE, state=src)
        if (src, dst) in LEGAL_REQUEST_EDGES:
            req.transition(dst)
            assert req.state is dst
        else:
            with pytest.raises(InvalidTransition):
                req.transition(dst)


class TestHost:
    def test_allocate_and_release(self):
        host = Host("h1", ResourceVector(8, 16384))
        host.allocate("r1", ResourceVector(4, 8192))
        assert host.free == ResourceVector(4, 8192)
        assert host.release("r1") == ResourceVector(4, 8192)
        assert host.free == host.capacity

    def test_over_allocation_rejected(self):
        host = Host("h1", ResourceVector(4, 4096))
        host.allocate("r1", ResourceVector(4, 4096))
        with pytest.raises(CapacityError):
            host.allocate("r2", ResourceVector(1, 0))

    def test_unknown_release_rejected(self):
        host = Host("h1", ResourceVector(4, 4096))
        with pytest.raises(CapacityError):
            host.release("ghost")

    @given(
        sizes=st.lists(
            st.tuples(st.integers(0, 4), st.integers(0, 4096)).filter(lambda s: s != (0, 0)),
            max_size=8,
        )
    )
    def test_allocations_never_exceed_capacity(self, sizes):
        host = Host("h1", ResourceVector(10, 10_000))
        for i, s in enumerate(sizes):
            size = ResourceVector(*s)
            try:
                host.allocate(f"r{i}", size)
            except CapacityError:
                pass
            used = ResourceVector(0, 0)
            for v in host.allocations.values():
                used = used + v
            assert rv_fits(used, host.capacity)
            assert host.free == rv_sub(host.capacity, used)
