"""Local TCP backend for the task queue and state store.

One JSON request/response pair per connection, newline-delimited. The
in-process classes stay authoritative; this wrapper exists so workers can
run out of process against the same two service interfaces (the object
store already has a cross-process backend: the filesystem).

Protocol: {"op": "queue.receive", "args": {...}} ->
          {"ok": true, "result": ...} | {"ok": false, "error": "...", "message": "..."}
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading

from .control_plane import (
    QueueClosedError,
    QueueError,
    Receipt,
    StaleReceiptError,
    StateStore,
    TaskMessage,
    TaskQueue,
)
from .lang.iteration import format_node, parse_node

_ERRORS = {
    "QueueClosedError": QueueClosedError,
    "StaleReceiptError": StaleReceiptError,
    "QueueError": QueueError,
}


def _msg_to_wire(msg: TaskMessage) -> dict:
    return {
        "node": format_node(msg.node),
        "run_id": msg.run_id,
        "enqueue_time": msg.enqueue_time,
        "delivery_count": msg.delivery_count,
        "priority": msg.priority,
        "msg_id": msg.msg_id,
    }


def _msg_from_wire(d: dict) -> TaskMessage:
    return TaskMessage(
        node=parse_node(d["node"]),
        run_id=d["run_id"],
        enqueue_time=d["enqueue_time"],
        delivery_count=d["delivery_count"],
        priority=d["priority"],
        msg_id=d["msg_id"],
    )


def _receipt_to_wire(r: Receipt) -> dict:
    return {"msg_id": r.msg_id, "lease_id": r.lease_id, "lease_expiry": r.lease_expiry}


def _receipt_from_wire(d: dict) -> Receipt:
    return Receipt(d["msg_id"], d["lease_id"], d["lease_expiry"])


class ControlPlaneServer:
    """Serves one queue plus one state store on a localhost port."""

    def __init__(self, queue: TaskQueue, state: StateStore, host: str = "127.0.0.1", port: int = 0):
        self.queue = queue
        self.state = state
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                line = self.rfile.readline()
                if not line:
                    return
                try:
                    req = json.loads(line)
                    result = outer._dispatch(req["op"], req.get("args", {}))
                    resp = {"ok": True, "result": result}
                except (QueueError, KeyError, ValueError) as e:
                    resp = {"ok": False, "error": type(e).__name__, "message": str(e)}
                self.wfile.write(json.dumps(resp).encode() + b"\n")

        class Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = Server((host, port), Handler)
        self.address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def _dispatch(self, op: str, args: dict):
        q, st = self.queue, self.state
        if op == "queue.enqueue":
            q.enqueue(_msg_from_wire(args["msg"]))
            return None
        if op == "queue.receive":
            got = q.receive(args["visibility_timeout"])
            if got is None:
                return None
            msg, receipt = got
            return {"msg": _msg_to_wire(msg), "receipt": _receipt_to_wire(receipt)}
        if op == "queue.renew":
            r = q.renew_lease(_receipt_from_wire(args["receipt"]), args["extension"])
            return _receipt_to_wire(r)
        if op == "queue.delete":
            return q.delete(_receipt_from_wire(args["receipt"]))
        if op == "queue.depth":
            return q.depth()
        if op == "queue.in_flight":
            return q.in_flight()
        if op == "queue.close":
            q.close()
            return None
        if op == "queue.closed":
            return q.closed
        if op == "state.mark_done_once":
            return st.mark_done_once(parse_node(args["node"]))
        if op == "state.child_increment":
            return st.child_increment(parse_node(args["node"]), args["total"])
        if op == "state.counters_full":
            return st.counters_full(parse_node(args["node"]))
        if op == "state.mark_enqueued":
            st.mark_enqueued(parse_node(args["node"]))
            return None
        if op == "state.status":
            return st.status(parse_node(args["node"]))
        if op == "state.completed":
            return st.completed_task_count
        if op == "state.mark_failed":
            st.mark_failed(parse_node(args["node"]), args["reason"])
            return None
        if op == "state.abort":
            st.abort(args["reason"])
            return None
        if op == "state.aborted":
            return st.aborted
        if op == "state.snapshot":
            return st.snapshot()
        raise ValueError(f"unknown op {op!r}")


class _Rpc:
    def __init__(self, address):
        self.address = address

    def call(self, op: str, **args):
        with socket.create_connection(self.address, timeout=10.0) as sock:
            f = sock.makefile("rwb")
            f.write(json.dumps({"op": op, "args": args}).encode() + b"\n")
            f.flush()
            resp = json.loads(f.readline())
        if resp["ok"]:
            return resp["result"]
        exc = _ERRORS.get(resp["error"], QueueError)
        raise exc(resp["message"])


class QueueClient:
    """TaskQueue interface over the wire."""

    def __init__(self, address):
        self._rpc = _Rpc(address)

    def enqueue(self, msg: TaskMessage) -> None:
        self._rpc.call("queue.enqueue", msg=_msg_to_wire(msg))

    def receive(self, visibility_timeout: float):
        got = self._rpc.call("queue.receive", visibility_timeout=visibility_timeout)
        if got is None:
            return None
        return _msg_from_wire(got["msg"]), _receipt_from_wire(got["receipt"])

    def renew_lease(self, receipt: Receipt, extension: float) -> Receipt:
        return _receipt_from_wire(
            self._rpc.call("queue.renew", receipt=_receipt_to_wire(receipt), extension=extension)
        )

    def delete(self, receipt: Receipt) -> bool:
        return self._rpc.call("queue.delete", receipt=_receipt_to_wire(receipt))

    def depth(self) -> int:
        return self._rpc.call("queue.depth")

    def in_flight(self) -> int:
        return self._rpc.call("queue.in_flight")

    def close(self) -> None:
        self._rpc.call("queue.close")

    @property
    def closed(self) -> bool:
        return self._rpc.call("queue.closed")


class StateClient:
    """StateStore interface over the wire."""

    def __init__(self, address, run_id: str = ""):
        self._rpc = _Rpc(address)
        self.run_id = run_id

    def mark_done_once(self, node) -> bool:
        return self._rpc.call("state.mark_done_once", node=format_node(node))

    def child_increment(self, node, total: int) -> bool:
        return self._rpc.call("state.child_increment", node=format_node(node), total=total)

    def counters_full(self, node) -> bool:
        return self._rpc.call("state.counters_full", node=format_node(node))

    def mark_enqueued(self, node) -> None:
        self._rpc.call("state.mark_enqueued", node=format_node(node))

    def status(self, node) -> str:
        return self._rpc.call("state.status", node=format_node(node))

    @property
    def completed_task_count(self) -> int:
        return self._rpc.call("state.completed")

    def mark_failed(self, node, reason: str) -> None:
        self._rpc.call("state.mark_failed", node=format_node(node), reason=reason)

    def abort(self, reason: str) -> None:
        self._rpc.call("state.abort", reason=reason)

    @property
    def aborted(self) -> str | None:
        return self._rpc.call("state.aborted")

    def snapshot(self) -> str:
        return self._rpc.call("state.snapshot")
