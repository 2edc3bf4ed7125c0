"""Client for the operator sandbox: one worker subprocess per session.

Requests are line-delimited JSON matched by a `seq` counter. A watchdog
enforces wall-clock budgets from this side as a backstop for the worker's
own timer: if the worker does not answer in time it is killed, a timeout
reply is synthesized, and the next request transparently respawns the
worker and replays the cached instance registrations and operator loads.
"""

from __future__ import annotations

import hashlib
import json
import queue
import subprocess
import sys
import threading

from .errors import OperatorError, SandboxUnavailableError
from .operators.base import DestroyOutcome
from .problems import Instance, RouteSolution, TourSolution, TSP

DEFAULT_CMD = (sys.executable, "-m", "glns_sandbox")
WATCHDOG_GRACE = 0.35


class SandboxSession:
    """Serialized access to one sandbox worker process."""

    def __init__(self, cmd=DEFAULT_CMD, call_timeout: float = 2.0):
        self.cmd = list(cmd)
        self.call_timeout = call_timeout
        self._proc = None
        self._queue = None
        self._seq = 0
        self._instances: dict[str, dict] = {}
        self._operators: dict[str, tuple[str, str]] = {}
        self._registered: set[str] = set()
        self._loaded: set[str] = set()
        self._lock = threading.Lock()

    # --- process management ---

    def _spawn(self):
        try:
            self._proc = subprocess.Popen(
                self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, bufsize=1)
        except OSError as exc:
            raise SandboxUnavailableError(f"cannot start sandbox worker: {exc}") from None
        self._queue = queue.Queue()
        thread = threading.Thread(target=self._reader, args=(self._proc, self._queue),
                                  daemon=True)
        thread.start()
        self._registered.clear()
        self._loaded.clear()
        reply = self._roundtrip({"op": "ping"}, timeout=10.0)
        if reply.get("status") != "ok" or reply["result"].get("proto_version") != 1:
            raise SandboxUnavailableError(f"bad handshake: {reply}")
        for iid, payload in self._instances.items():
            self._roundtrip(dict(payload, op="instance", id=iid), timeout=10.0)
            self._registered.add(iid)
        for op_id, (source, kind) in self._operators.items():
            self._roundtrip({"op": "load", "id": op_id, "source": source, "kind": kind},
                            timeout=10.0)
            self._loaded.add(op_id)

    @staticmethod
    def _reader(proc, out_queue):
        for line in proc.stdout:
            out_queue.put(line)

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()

    def _kill(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._roundtrip({"op": "shutdown"}, timeout=2.0)
            except Exception:
                pass
            self._kill()
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # --- protocol ---

    def _roundtrip(self, payload: dict, timeout: float) -> dict:
        self._seq += 1
        payload = dict(payload, seq=self._seq)
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise SandboxUnavailableError(f"worker pipe broken: {exc}") from None
        deadline = timeout + WATCHDOG_GRACE
        while True:
            try:
                line = self._queue.get(timeout=deadline)
            except queue.Empty:
                self._kill()
                return {"seq": self._seq, "status": "timeout",
                        "error": {"message": "worker unresponsive, killed by watchdog",
                                  "category": "timeout"}}
            reply = json.loads(line)
            if reply.get("seq") == self._seq:
                return reply
            # stale line from a killed request; drop and keep reading

    def request(self, payload: dict, timeout: float | None = None) -> dict:
        """Send one request (thread-safe); respawns a dead worker first."""
        with self._lock:
            self._ensure()
            return self._roundtrip(payload, timeout or self.call_timeout)

    # --- caching layers ---

    def register_instance(self, instance: Instance) -> str:
        iid = instance_key(instance)
        if iid not in self._instances:
            payload = {
                "coords": [[float(x), float(y)] for x, y in instance.coords],
                "rounded": bool(getattr(instance, "rounded", False)),
            }
            if instance.kind != TSP:
                payload["demands"] = [int(d) for d in instance.demands]
                payload["capacity"] = int(instance.capacity)
                payload["depot"] = int(instance.depot)
            self._instances[iid] = payload
        if iid not in self._registered:
            reply = self.request(dict(self._instances[iid], op="instance", id=iid),
                                 timeout=10.0)
            if reply["status"] != "ok":
                raise SandboxUnavailableError(f"instance registration failed: {reply}")
            self._registered.add(iid)
        return iid

    def load(self, op_id: str, source: str, kind: str) -> dict:
        reply = self.request({"op": "load", "id": op_id, "source": source, "kind": kind},
                             timeout=10.0)
        if reply["status"] == "ok":
            self._operators[op_id] = (source, kind)
            self._loaded.add(op_id)
        return reply

    def ensure_loaded(self, op_id: str, source: str, kind: str):
        if op_id not in self._loaded:
            reply = self.load(op_id, source, kind)
            if reply["status"] != "ok":
                raise OperatorError(f"sandbox load failed: {reply['error']['message']}")

    # --- operator execution (engine-facing) ---

    def run_destroy(self, record_id: str, sol, cnt: int, instance: Instance, rng):
        iid = self.register_instance(instance)
        body = sol.tour if isinstance(sol, TourSolution) else [list(r) for r in sol.routes]
        reply = self.request({
            "op": "destroy", "id": record_id, "instance": iid,
            "solution": body, "count": int(cnt),
            "seed": int(rng.integers(0, 2 ** 63)),
            "timeout_ms": int(self.call_timeout * 1000),
        })
        result = self._unwrap(reply)
        if isinstance(sol, TourSolution):
            partial = TourSolution(result["partial"])
        else:
            partial = RouteSolution(result["partial"])
        return DestroyOutcome(result["removed"], partial)

    def run_repair(self, record_id: str, partial, removed, instance: Instance, rng):
        iid = self.register_instance(instance)
        body = (partial.tour if isinstance(partial, TourSolution)
                else [list(r) for r in partial.routes])
        reply = self.request({
            "op": "repair", "id": record_id, "instance": iid,
            "partial": body, "removed": [int(v) for v in removed],
            "seed": int(rng.integers(0, 2 ** 63)),
            "timeout_ms": int(self.call_timeout * 1000),
        })
        result = self._unwrap(reply)
        if isinstance(partial, TourSolution):
            return TourSolution(result["solution"])
        return RouteSolution(result["solution"])

    @staticmethod
    def _unwrap(reply: dict) -> dict:
        if reply["status"] != "ok":
            err = reply.get("error", {})
            raise OperatorError(
                f"sandbox {reply['status']} [{err.get('category')}]: {err.get('message')}")
        return reply["result"]


def instance_key(instance: Instance) -> str:
    digest = hashlib.sha1(instance.coords.tobytes()).hexdigest()[:12]
    return f"{instance.kind}-{instance.n}-{digest}"
