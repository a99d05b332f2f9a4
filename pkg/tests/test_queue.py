import pytest
from hypothesis import given, settings, strategies as st

from cloudshare.core import Flavor, Request, RequestState, ResourceVector
from cloudshare.queue import JournalError, PersistentQueue

SMALL = Flavor("small", ResourceVector(1, 1024))


def req(rid, retries=0):
    r = Request(id=rid, user="u", project="p", flavor=SMALL, retries=retries)
    return r


def snapshot_ids(queue):
    return [(e.request_id, e.priority, e.seq) for e in queue.ordered_snapshot()]


class TestOrdering:
    def test_priority_descending(self):
        q = PersistentQueue(None)
        q.enqueue(req("a"), 5)
        q.enqueue(req("b"), 9)
        assert [e.request_id for e in q.ordered_snapshot()] == ["b", "a"]

    def test_fifo_within_equal_priority(self):
        q = PersistentQueue(None)
        for rid in ("a", "b", "c"):
            q.enqueue(req(rid), 7)
        assert [e.request_id for e in q.ordered_snapshot()] == ["a", "b", "c"]

    def test_mixed(self):
        q = PersistentQueue(None)
        q.enqueue(req("a"), 5)
        q.enqueue(req("b"), 9)
        q.enqueue(req("c"), 5)
        assert [e.request_id for e in q.ordered_snapshot()] == ["b", "a", "c"]

    def test_empty(self):
        assert PersistentQueue(None).ordered_snapshot() == []

    def test_duplicate_rejected(self):
        q = PersistentQueue(None)
        q.enqueue(req("a"), 5)
        with pytest.raises(ValueError):
            q.enqueue(req("a"), 6)

    def test_non_scheduling_rejected(self):
        q = PersistentQueue(None)
        r = req("a")
        r.state = RequestState.RUNNING
        with pytest.raises(ValueError):
            q.enqueue(r, 1)

    def test_remove_head_promotes_next(self):
        q = PersistentQueue(None)
        q.enqueue(req("a"), 9)
        q.enqueue(req("b"), 5)
        q.remove("a")
        assert [e.request_id for e in q.ordered_snapshot()] == ["b"]

    def test_remove_only_entry(self):
        q = PersistentQueue(None)
        q.enqueue(req("a"), 1)
        q.remove("a")
        assert len(q) == 0

    def test_remove_absent_errors(self):
        with pytest.raises(KeyError):
            PersistentQueue(None).remove("ghost")

    @given(
        prios=st.lists(st.integers(-100, 100), min_size=1, max_size=30),
    )
    def test_snapshot_is_strict_total_order(self, prios):
        q = PersistentQueue(None)
        for i, p in enumerate(prios):
            q.enqueue(req(f"r{i}"), p)
        snap = q.ordered_snapshot()
        keys = [(-e.priority, e.seq) for e in snap]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)


class TestJournal:
    def test_replay_insert_remove(self, tmp_path):
        path = tmp_path / "q.journal"
        q = PersistentQueue(path)
        q.enqueue(req("a"), 5)
        q.enqueue(req("b"), 9)
        q.remove("a")
        q.close()
        recovered = PersistentQueue.recover(path)
        assert [e.request_id for e in recovered.ordered_snapshot()] == ["b"]

    def test_replay_reprioritize(self, tmp_path):
        path = tmp_path / "q.journal"
        q = PersistentQueue(path)
        q.enqueue(req("a"), 5)
        q.reprioritize("a", 9)
        q.close()
        recovered = PersistentQueue.recover(path)
        assert snapshot_ids(recovered) == [("a", 9, 0)]

    def test_torn_final_line_discarded(self, tmp_path):
        path = tmp_path / "q.journal"
        q = PersistentQueue(path)
        q.enqueue(req("a"), 5)
        q.enqueue(req("b"), 9)
        q.close()
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("ins,c,3")  # crash mid-record: no checksum, no newline
        recovered = PersistentQueue.recover(path)
        assert [e.request_id for e in recovered.ordered_snapshot()] == ["b", "a"]

    def test_corrupt_middle_record_is_fatal(self, tmp_path):
        path = tmp_path / "q.journal"
        q = PersistentQueue(path)
        q.enqueue(req("a"), 5)
        q.enqueue(req("b"), 9)
        q.close()
        lines = path.read_text().splitlines(keepends=True)
        lines[0] = "ins,a,999,0,deadbeef\n"  # checksum no longer matches
        path.write_text("".join(lines))
        with pytest.raises(JournalError):
            PersistentQueue.recover(path)

    def test_recovered_queue_continues_journaling(self, tmp_path):
        path = tmp_path / "q.journal"
        q = PersistentQueue(path)
        q.enqueue(req("a"), 5)
        q.close()
        recovered = PersistentQueue.recover(path)
        recovered.enqueue(req("b"), 9)
        recovered.close()
        final = PersistentQueue.recover(path)
        assert [e.request_id for e in final.ordered_snapshot()] == ["b", "a"]
        # seq keeps growing across recovery
        assert final.get("b").seq > final.get("a").seq

    def test_append_only_between_compactions(self, tmp_path):
        path = tmp_path / "q.journal"
        q = PersistentQueue(path)  # default floor keeps compaction away at this scale
        previous = b""
        for i in range(20):
            q.enqueue(req(f"r{i}"), i % 3)
            if i % 3 == 0 and i:
                q.remove(f"r{i - 1}")
            current = path.read_bytes()
            assert current.startswith(previous)
            previous = current

    def test_compaction_rewrites_as_insert_snapshot(self, tmp_path):
        path = tmp_path / "q.journal"
        q = PersistentQueue(path, compaction_ratio=2, compaction_floor=4)
        for i in range(10):
            q.enqueue(req(f"r{i}"), i)
        for i in range(8):
            q.remove(f"r{i}")
        assert len(path.read_text().splitlines()) < 18  # auto-compaction shrank the log
        q.compact()
        lines = path.read_text().splitlines()
        assert all(line.startswith("ins,") for line in lines)
        assert len(lines) == 2
        recovered = PersistentQueue.recover(path)
        assert snapshot_ids(recovered) == snapshot_ids(q)

    def test_comma_in_id_rejected(self):
        q = PersistentQueue(None)
        with pytest.raises(ValueError):
            q.enqueue(req("bad,id"), 1)


@st.composite
def op_sequences(draw):
    ops = []
    alive = []
    n = draw(st.integers(1, 25))
    for i in range(n):
        kind = draw(st.sampled_from(["ins", "ins", "rem", "pri"]))
        if kind == "ins" or not alive:
            rid = f"r{i}"
            ops.append(("ins", rid, draw(st.integers(-50, 50))))
            alive.append(rid)
        elif kind == "rem":
            rid = draw(st.sampled_from(alive))
            ops.append(("rem", rid, None))
            alive.remove(rid)
        else:
            rid = draw(st.sampled_from(alive))
            ops.append(("pri", rid, draw(st.integers(-50, 50))))
    return ops


class TestCrashReplayEquivalence:
    @given(ops=op_sequences())
    @settings(max_examples=60, deadline=None)
    def test_recover_matches_live_at_every_boundary(self, ops, tmp_path_factory):
        path = tmp_path_factory.mktemp("q") / "q.journal"
        live = PersistentQueue(path)
        for op, rid, pri in ops:
            if op == "ins":
                live.enqueue(req(rid), pri)
            elif op == "rem":
                live.remove(rid)
            else:
                live.reprioritize(rid, pri)
            recovered = PersistentQueue.recover(path)
            assert snapshot_ids(recovered) == snapshot_ids(live)
            recovered.close()
        live.close()
