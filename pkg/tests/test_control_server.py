"""The TCP control-plane backend behaves like the in-process services."""

from __future__ import annotations

import threading
import time

import numpy as np
import pytest

from conftest import line_by_kernel
from lambdapack.analysis import AnalysisContext
from lambdapack.control_plane import (
    StaleReceiptError,
    StateStore,
    TaskMessage,
    TaskQueue,
    record_completion,
)
from lambdapack.control_server import ControlPlaneServer, QueueClient, StateClient
from lambdapack.executor import Worker, WorkerConfig, WorkerServices
from lambdapack.harness import cholesky_source
from lambdapack.lang import make_node, parse_program
from lambdapack.store import MemoryStore, TileKey, partition


@pytest.fixture
def server():
    s = ControlPlaneServer(TaskQueue(), StateStore("r")).start()
    yield s
    s.stop()


def test_queue_roundtrip_over_wire(server):
    q = QueueClient(server.address)
    node = make_node(2, {"i": 0, "j": 1, "k": 1})
    q.enqueue(TaskMessage(node=node, run_id="r"))
    assert q.depth() == 1
    msg, receipt = q.receive(0.5)
    assert msg.node == node and msg.delivery_count == 1
    receipt = q.renew_lease(receipt, 0.5)
    assert q.delete(receipt) is True
    assert q.receive(0.5) is None


def test_stale_receipt_raises_same_error_type(server):
    q = QueueClient(server.address)
    q.enqueue(TaskMessage(node=make_node(0, {}), run_id="r"))
    _, receipt = q.receive(0.05)
    time.sleep(0.08)
    q.receive(0.5)  # other client takes over
    with pytest.raises(StaleReceiptError):
        q.renew_lease(receipt, 0.5)


def test_state_ops_over_wire(server):
    st = StateClient(server.address)
    n = make_node(0, {"i": 0})
    assert st.mark_done_once(n) is True
    assert st.mark_done_once(n) is False
    assert st.child_increment(make_node(1, {"i": 0}), 1) is True
    assert st.counters_full(make_node(1, {"i": 0}))
    st.mark_enqueued(make_node(1, {"i": 0}))
    assert st.status(make_node(1, {"i": 0})) == "enqueued"
    assert st.completed_task_count == 1
    assert "0:i=0 done" in st.snapshot()


def test_record_completion_composes_over_wire(server):
    program = parse_program(cholesky_source(2))
    ana = AnalysisContext(program, {"N": 2})
    st = StateClient(server.address)
    chol_l = line_by_kernel(program, "chol")
    trsm_l = line_by_kernel(program, "trsm")
    ready = record_completion(st, make_node(chol_l, {"i": 0}), ana.children, ana.parent_count)
    assert ready == [make_node(trsm_l, {"i": 0, "j": 1})]


def test_full_run_through_tcp_services(server):
    program = parse_program(cholesky_source(2))
    params = {"N": 2}
    store = MemoryStore()
    rng = np.random.default_rng(0)
    n = 8
    m = rng.standard_normal((n, n))
    dense = m @ m.T + n * np.eye(n)
    initial = {}
    for (r, c), t in partition(dense, 4):
        if r >= c:
            store.put_tile(TileKey("r", "S", (0, r, c)), t)
            initial[("S", (0, r, c))] = t
    q = QueueClient(server.address)
    st = StateClient(server.address)
    ana = AnalysisContext(program, params)
    from lambdapack.harness import seed_roots

    seed_roots(program, params, ana, initial, q, st, "r")
    svc = WorkerServices(program, params, "r", q, st, store, ana)
    cfg = WorkerConfig(lease_length=1.0, poll_interval=0.005, idle_timeout=0.3)
    workers = [Worker(f"w{i}", cfg, svc) for i in range(2)]
    threads = [threading.Thread(target=w.run) for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert st.completed_task_count == 4
    low00 = store.get_tile(TileKey("r", "O", (0, 0)))
    assert np.allclose(low00.data @ low00.data.T, dense[:4, :4], atol=1e-10)
