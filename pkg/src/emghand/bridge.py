"""Websocket JSON bridge between the pipeline and the browser dashboard.

The browser never speaks the binary protocol: events go out as JSON
objects ({"type": "pose" | "metrics" | "model_version" | "gesture_state",
...}) and every incoming command receives exactly one ack/reject JSON
message on the same connection. Endpoint: ws://host:port/ws.
"""

from __future__ import annotations

import json
import logging
import queue
import threading

log = logging.getLogger(__name__)


class BridgeServer:
    """Threaded websocket fan-out plus a command callback."""

    def __init__(self, port: int, command_handler, host: str = "127.0.0.1"):
        self.host = host
        self.port = port
        self._handler = command_handler
        self._clients: dict[object, queue.Queue] = {}
        self._lock = threading.Lock()
        self._server = None
        self._thread = None
        self.events_sent = 0

    def start(self):
        from websockets.sync.server import serve

        self._server = serve(self._client_loop, self.host, self.port)
        self.port = self._server.socket.getsockname()[1]
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)
        self._thread.start()

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
        with self._lock:
            self._clients.clear()

    @property
    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    def broadcast(self, event: dict):
        payload = json.dumps(event, separators=(",", ":"))
        with self._lock:
            queues = list(self._clients.values())
        for q in queues:
            try:
                q.put_nowait(payload)
            except queue.Full:
                pass  # slow client: newest-wins policy below drops for it
        self.events_sent += 1

    def _client_loop(self, conn):
        if getattr(conn, "request", None) is not None \
                and conn.request.path not in ("/ws", "/ws/"):
            conn.close(code=1008, reason="use /ws")
            return
        out: queue.Queue = queue.Queue(maxsize=512)
        with self._lock:
            self._clients[conn] = out
        stop = threading.Event()

        def sender():
            while not stop.is_set():
                try:
                    payload = out.get(timeout=0.2)
                except queue.Empty:
                    continue
                try:
                    conn.send(payload)
                except Exception:
                    return

        tx = threading.Thread(target=sender, daemon=True)
        tx.start()
        try:
            for raw in conn:
                reply = self._dispatch(raw)
                conn.send(json.dumps(reply, separators=(",", ":")))
        except Exception as exc:
            log.info("bridge client dropped: %s", exc)
        finally:
            stop.set()
            with self._lock:
                self._clients.pop(conn, None)

    def _dispatch(self, raw) -> dict:
        try:
            cmd = json.loads(raw)
            if not isinstance(cmd, dict) or "type" not in cmd:
                raise ValueError("command must be an object with a 'type'")
        except (ValueError, UnicodeDecodeError) as exc:
            return {"type": "ack", "ok": False, "error": f"bad command: {exc}"}
        try:
            return self._handler(cmd)
        except Exception as exc:  # noqa: BLE001 - command boundary
            log.warning("command failed: %s", exc)
            return {"type": "ack", "cmd": cmd.get("type"), "ok": False,
                    "error": str(exc)}
