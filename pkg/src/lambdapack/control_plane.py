"""Task queue with visibility-timeout leases, and the runtime state store.

The queue gives at-least-once delivery: a received message is invisible
while its lease lives and reappears (delivery_count + 1) if the lease
lapses without renewal or deletion. The state store holds one atomic
readiness counter per node; correctness of the whole engine rests on
idempotent tasks plus these two services, with no cross-service
transaction.

Clocks are injectable so lease timing is testable without real sleeps.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable

from .lang.ast import Program
from .lang.iteration import NodeRef, format_node, output_tiles
from .store import ObjectStore, TileKey


class QueueError(Exception):
    pass


class QueueClosedError(QueueError):
    pass


class StaleReceiptError(QueueError):
    """The lease expired or was superseded; another worker owns the task."""


@dataclass
class TaskMessage:
    node: NodeRef
    run_id: str
    enqueue_time: float = 0.0
    delivery_count: int = 0
    priority: int = 0  # FIFO today; hook for priority experiments
    msg_id: int = 0


@dataclass(frozen=True)
class Receipt:
    msg_id: int
    lease_id: int
    lease_expiry: float


class TaskQueue:
    """In-process queue; all operations are safe under concurrent use."""

    def __init__(self, clock: Callable[[], float] = time.monotonic):
        self._clock = clock
        self._lock = threading.Lock()
        self._ready: deque[TaskMessage] = deque()
        self._leased: dict[int, tuple[TaskMessage, int, float]] = {}
        self._deleted: set[int] = set()
        self._closed = False
        self._msg_ids = itertools.count(1)
        self._lease_ids = itertools.count(1)

    def close(self):
        with self._lock:
            self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    def enqueue(self, msg: TaskMessage) -> None:
        with self._lock:
            if self._closed:
                raise QueueClosedError("queue is closed")
            msg.msg_id = next(self._msg_ids)
            msg.enqueue_time = self._clock()
            self._ready.append(msg)

    def _reap_expired_locked(self, now: float):
        expired = [m for m, (msg, _, exp) in self._leased.items() if exp <= now]
        for mid in expired:
            msg, _, _ = self._leased.pop(mid)
            self._ready.append(msg)

    def receive(self, visibility_timeout: float) -> tuple[TaskMessage, Receipt] | None:
        if visibility_timeout <= 0:
            raise QueueError("visibility timeout must be positive")
        now = self._clock()
        with self._lock:
            self._reap_expired_locked(now)
            if not self._ready:
                return None
            msg = self._ready.popleft()
            msg.delivery_count += 1
            lease_id = next(self._lease_ids)
            expiry = now + visibility_timeout
            self._leased[msg.msg_id] = (msg, lease_id, expiry)
            return msg, Receipt(msg.msg_id, lease_id, expiry)

    def renew_lease(self, receipt: Receipt, extension: float) -> Receipt:
        now = self._clock()
        with self._lock:
            self._reap_expired_locked(now)
            held = self._leased.get(receipt.msg_id)
            if held is None or held[1] != receipt.lease_id:
                raise StaleReceiptError(f"lease {receipt.lease_id} no longer held")
            msg, lease_id, _ = held
            expiry = now + extension
            self._leased[receipt.msg_id] = (msg, lease_id, expiry)
            return Receipt(receipt.msg_id, lease_id, expiry)

    def delete(self, receipt: Receipt) -> bool:
        """True if this delete (or an earlier one of the same message)
        removed the message; False if the lease was lost to another worker."""
        now = self._clock()
        with self._lock:
            self._reap_expired_locked(now)
            held = self._leased.get(receipt.msg_id)
            if held is not None and held[1] == receipt.lease_id:
                del self._leased[receipt.msg_id]
                self._deleted.add(receipt.msg_id)
                return True
            return receipt.msg_id in self._deleted

    def depth(self) -> int:
        """Visible (receivable) messages; what the provisioner watches."""
        now = self._clock()
        with self._lock:
            self._reap_expired_locked(now)
            return len(self._ready)

    def in_flight(self) -> int:
        now = self._clock()
        with self._lock:
            self._reap_expired_locked(now)
            return len(self._leased)


# --- runtime state store ---------------------------------------------------------

UNSEEN = "unseen"
ENQUEUED = "enqueued"
DONE = "done"


@dataclass
class NodeState:
    total_parents: int | None = None
    completed_parents: int = 0
    status: str = UNSEEN


class StateStore:
    """Atomic per-node readiness state for one run.

    Counters are lazily initialized (total_parents is learned at first
    touch) so parents may complete in any order. Every mutator is a small
    atomic primitive; record_completion composes them and stays safe under
    duplicate execution because each primitive is idempotent or
    test-and-set.
    """

    def __init__(self, run_id: str):
        self.run_id = run_id
        self._lock = threading.Lock()
        self._nodes: dict[NodeRef, NodeState] = {}
        self._completed = 0
        self._aborted: str | None = None
        self._failed: dict[NodeRef, str] = {}

    def _get_locked(self, node: NodeRef) -> NodeState:
        st = self._nodes.get(node)
        if st is None:
            st = self._nodes[node] = NodeState()
        return st

    def mark_done_once(self, node: NodeRef) -> bool:
        """Transition node to done; False if it already was."""
        with self._lock:
            st = self._get_locked(node)
            if st.status == DONE:
                return False
            st.status = DONE
            self._completed += 1
            return True

    def child_increment(self, child: NodeRef, total_parents: int) -> bool:
        """Record one parent completion; True iff this crossed the threshold."""
        with self._lock:
            st = self._get_locked(child)
            if st.total_parents is None:
                st.total_parents = total_parents
            st.completed_parents += 1
            return st.completed_parents == st.total_parents

    def counters_full(self, child: NodeRef) -> bool:
        with self._lock:
            st = self._nodes.get(child)
            return (
                st is not None
                and st.total_parents is not None
                and st.completed_parents >= st.total_parents
            )

    def mark_enqueued(self, node: NodeRef) -> None:
        with self._lock:
            st = self._get_locked(node)
            if st.status == UNSEEN:
                st.status = ENQUEUED

    def status(self, node: NodeRef) -> str:
        with self._lock:
            st = self._nodes.get(node)
            return st.status if st else UNSEEN

    @property
    def completed_task_count(self) -> int:
        with self._lock:
            return self._completed

    def mark_failed(self, node: NodeRef, reason: str) -> None:
        with self._lock:
            self._failed[node] = reason

    def abort(self, reason: str) -> None:
        with self._lock:
            if self._aborted is None:
                self._aborted = reason

    @property
    def aborted(self) -> str | None:
        return self._aborted

    @property
    def failed_nodes(self) -> dict[NodeRef, str]:
        with self._lock:
            return dict(self._failed)

    def snapshot(self) -> str:
        """One line per tracked node: ``node status completed/total``, sorted."""
        with self._lock:
            items = sorted(self._nodes.items(), key=lambda kv: format_node(kv[0]))
            lines = [
                f"{format_node(n)} {st.status} "
                f"{st.completed_parents}/{st.total_parents if st.total_parents is not None else '?'}"
                for n, st in items
            ]
        return "\n".join(lines)


def record_completion(
    state: StateStore,
    node: NodeRef,
    children_fn: Callable[[NodeRef], Iterable[NodeRef]],
    parent_count_fn: Callable[[NodeRef], int],
) -> list[NodeRef]:
    """Mark node done and return children made ready by that completion.

    First completion: initialize-and-increment each child's counter;
    children whose counters just filled are returned (exactly one caller
    sees each child cross the threshold). Duplicate completion normally
    returns [] -- but children whose counters are full and that were never
    marked enqueued are returned again, so a crash between state update and
    child enqueue is healed by redelivery instead of stranding the subtree.
    """
    if state.mark_done_once(node):
        return [
            c
            for c in sorted(children_fn(node))
            if state.child_increment(c, parent_count_fn(c))
        ]
    return [
        c
        for c in sorted(children_fn(node))
        if state.counters_full(c) and state.status(c) == UNSEEN
    ]


def is_run_complete(
    state: StateStore,
    program: Program,
    params: dict[str, int],
    store: ObjectStore,
    run_id: str,
    tiles: list[tuple[str, tuple[int, ...]]] | None = None,
) -> bool:
    """True iff every declared output tile exists in the object store."""
    if tiles is None:
        tiles = output_tiles(program, params)
    return all(store.tile_exists(TileKey(run_id, m, idx)) for m, idx in tiles)
