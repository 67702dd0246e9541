"""Topic pub/sub hub over two byte-stream transports.

Wire format: UTF-8 JSON envelopes {op, topic, id, msg}. The TCP transport
frames envelopes with a single newline (0x0A); the websocket transport puts
one envelope per text frame. Semantics: fan-out to all subscribers,
at-most-once, per-publisher per-topic ordering, no replay except the latched
/robot_description topic, bounded per-subscriber queues that drop oldest on
overflow (counted on /diagnostics).
"""
from __future__ import annotations

import json
import socket
import threading
import time
from collections import deque
from typing import Callable, Optional

from . import capture, ws
from .errors import NotConnected, PortInUse, SchemaViolation

__all__ = [
    "Hub",
    "BusClient",
    "WsBusClient",
    "RecorderService",
    "validate_payload",
    "TOPIC_JOINT_STATES",
    "TOPIC_POINT_CLOUD",
    "TOPIC_TRAJECTORY_QUERY",
    "TOPIC_DEMONSTRATION",
    "TOPIC_FEATURE_TRACE_REQUEST",
    "TOPIC_PLANNED_TRAJECTORY",
    "TOPIC_ROBOT_DESCRIPTION",
    "TOPIC_RECORDER_CONTROL",
    "TOPIC_PLAYBACK_CONTROL",
    "TOPIC_DIAGNOSTICS",
    "TOPIC_DEMONSTRATION_STATUS",
]

TOPIC_JOINT_STATES = "/joint_states"
TOPIC_POINT_CLOUD = "/point_cloud"
TOPIC_TRAJECTORY_QUERY = "/trajectory_query"
TOPIC_DEMONSTRATION = "/demonstration"
TOPIC_FEATURE_TRACE_REQUEST = "/feature_trace_request"
TOPIC_PLANNED_TRAJECTORY = "/planned_trajectory"
TOPIC_ROBOT_DESCRIPTION = "/robot_description"
TOPIC_RECORDER_CONTROL = "/recorder_control"
TOPIC_PLAYBACK_CONTROL = "/playback_control"
TOPIC_DIAGNOSTICS = "/diagnostics"
TOPIC_DEMONSTRATION_STATUS = "/demonstration_status"

LATCHED_TOPICS = (TOPIC_ROBOT_DESCRIPTION,)

_OPS = ("advertise", "subscribe", "unsubscribe", "publish")


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_number_list(v) -> bool:
    return isinstance(v, list) and all(_is_number(x) for x in v)


def _check_joint_states(msg):
    if not isinstance(msg, dict) or not _is_number_list(msg.get("q")):
        return "joint_states needs q: [numbers]"
    if "stamp" in msg and not _is_number(msg["stamp"]):
        return "stamp must be a number"
    return None


def _check_point_cloud(msg):
    if not isinstance(msg, dict):
        return "point_cloud must be an object"
    points = msg.get("points")
    if not isinstance(points, list) or any(
            not _is_number_list(p) or len(p) != 3 for p in points):
        return "points must be a list of [x, y, z]"
    return None


def _check_trajectory_query(msg):
    if not isinstance(msg, dict) or not _is_number_list(msg.get("q_start")) \
            or not _is_number_list(msg.get("q_goal")):
        return "trajectory_query needs q_start and q_goal arrays"
    if len(msg["q_start"]) != len(msg["q_goal"]):
        return "q_start and q_goal lengths differ"
    return None


def _check_demonstration(msg):
    try:
        capture.record_from_json(msg)
    except SchemaViolation as exc:
        return str(exc)
    return None


def _check_feature_trace_request(msg):
    if not isinstance(msg, dict) or not isinstance(msg.get("feature_hint"), str) \
            or not isinstance(msg.get("request_id"), str):
        return "feature_trace_request needs feature_hint and request_id strings"
    return None


def _check_planned_trajectory(msg):
    if not isinstance(msg, dict) or not isinstance(msg.get("waypoints"), list):
        return "planned_trajectory needs waypoints"
    for wp in msg["waypoints"]:
        if not isinstance(wp, dict) or not _is_number_list(wp.get("q")) \
                or not _is_number(wp.get("t")):
            return "waypoints must be {q: [numbers], t: number}"
    return None


def _check_robot_description(msg):
    if not isinstance(msg, dict) or not isinstance(msg.get("urdf"), str) \
            or not isinstance(msg.get("scene"), dict):
        return "robot_description needs urdf string and scene object"
    return None


_VALIDATORS = {
    TOPIC_JOINT_STATES: _check_joint_states,
    TOPIC_POINT_CLOUD: _check_point_cloud,
    TOPIC_TRAJECTORY_QUERY: _check_trajectory_query,
    TOPIC_DEMONSTRATION: _check_demonstration,
    TOPIC_FEATURE_TRACE_REQUEST: _check_feature_trace_request,
    TOPIC_PLANNED_TRAJECTORY: _check_planned_trajectory,
    TOPIC_ROBOT_DESCRIPTION: _check_robot_description,
}


def validate_payload(topic: str, msg) -> Optional[str]:
    """Error string for well-known topics, None when valid or unknown."""
    checker = _VALIDATORS.get(topic)
    return checker(msg) if checker else None


def _encode(env: dict) -> str:
    return json.dumps(env, separators=(",", ":"), ensure_ascii=False)


class _Connection:
    """One hub-side client over either transport; owns a bounded send queue
    drained by a writer thread so a stalled peer never blocks dispatch."""

    _counter = 0
    _counter_lock = threading.Lock()

    def __init__(self, hub: "Hub", sock: socket.socket, transport: str):
        with _Connection._counter_lock:
            _Connection._counter += 1
            self.name = f"{transport}-{_Connection._counter}"
        self.hub = hub
        self.sock = sock
        self.transport = transport
        self.queue: deque = deque()
        self.queue_cv = threading.Condition()
        self.closed = False
        self.out_seq = 0
        self.dropped = 0

    def enqueue(self, env: dict) -> None:
        with self.queue_cv:
            if self.closed:
                return
            if len(self.queue) >= self.hub.queue_limit:
                self.queue.popleft()
                self.dropped += 1
                self.hub._note_drop(env.get("topic", "?"))
            self.out_seq += 1
            env = dict(env)
            env["id"] = str(self.out_seq)
            self.queue.append(env)
            self.queue_cv.notify()

    def writer_loop(self) -> None:
        while True:
            with self.queue_cv:
                while not self.queue and not self.closed:
                    self.queue_cv.wait()
                if self.closed and not self.queue:
                    return
                batch = []
                while self.queue and len(batch) < 512:
                    batch.append(self.queue.popleft())
            try:
                if self.transport == "tcp":
                    data = b"".join(_encode(env).encode("utf-8") + b"\n"
                                    for env in batch)
                else:
                    data = b"".join(ws.build_text_frame(_encode(env))
                                    for env in batch)
                self.sock.sendall(data)
            except OSError:
                self.hub._disconnect(self)
                return

    def close(self) -> None:
        with self.queue_cv:
            self.closed = True
            self.queue_cv.notify()
        try:
            self.sock.close()
        except OSError:
            pass


class Hub:
    """The pub/sub middleman, both transports, plus the trajectory player."""

    def __init__(self, port: int = 0, ws_port: Optional[int] = None,
                 static_dir: Optional[str] = None, queue_limit: int = 1024,
                 playback_duration: float = 5.0):
        self.queue_limit = queue_limit
        self.playback_duration = playback_duration
        self.static_dir = static_dir
        self._requested_ports = (port, ws_port)
        self._lock = threading.RLock()
        self._subs: dict = {}  # topic -> list[_Connection]
        self._latched: dict = {}
        self._internal_subs: dict = {}  # topic -> list[fn(topic, msg)]
        self._conns: list = []
        self._drops: dict = {}
        self._drop_total = 0
        self._listeners: list = []
        self._threads: list = []
        self._running = False
        # trajectory player state
        self._play_queue: deque = deque()
        self._play_cv = threading.Condition()
        self._playback_enabled = True

    # --- lifecycle ---

    def start(self) -> None:
        port, ws_port = self._requested_ports
        try:
            tcp = socket.create_server(("127.0.0.1", port))
        except OSError as exc:
            raise PortInUse(f"TCP port {port}: {exc}") from exc
        self._listeners.append(("tcp", tcp))
        if ws_port is not None:
            try:
                wss = socket.create_server(("127.0.0.1", ws_port))
            except OSError as exc:
                tcp.close()
                raise PortInUse(f"websocket port {ws_port}: {exc}") from exc
            self._listeners.append(("ws", wss))
        self._running = True
        for kind, listener in self._listeners:
            t = threading.Thread(target=self._accept_loop,
                                 args=(kind, listener), daemon=True)
            t.start()
            self._threads.append(t)
        player = threading.Thread(target=self._player_loop, daemon=True)
        player.start()
        self._threads.append(player)

    def stop(self) -> None:
        self._running = False
        for _, listener in self._listeners:
            try:
                listener.close()
            except OSError:
                pass
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            conn.close()
        with self._play_cv:
            self._play_cv.notify_all()

    @property
    def port(self) -> int:
        return self._listeners[0][1].getsockname()[1]

    @property
    def ws_port(self) -> Optional[int]:
        for kind, listener in self._listeners:
            if kind == "ws":
                return listener.getsockname()[1]
        return None

    # --- accept/read loops ---

    def _accept_loop(self, kind: str, listener: socket.socket) -> None:
        while self._running:
            try:
                sock, _ = listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_socket, args=(kind, sock),
                             daemon=True).start()

    def _serve_socket(self, kind: str, sock: socket.socket) -> None:
        if kind == "ws":
            try:
                request_line, headers = ws.read_http_request(sock)
            except ws.WsClosed:
                sock.close()
                return
            if not ws.is_websocket_upgrade(headers):
                if self.static_dir:
                    ws.serve_static(sock, request_line, self.static_dir)
                else:
                    ws._http_error(sock, 404, "no static dir configured")
                sock.close()
                return
            try:
                ws.accept_handshake(sock, headers)
            except OSError:
                sock.close()
                return
        conn = _Connection(self, sock, kind)
        with self._lock:
            self._conns.append(conn)
        threading.Thread(target=conn.writer_loop, daemon=True).start()
        try:
            if kind == "tcp":
                self._tcp_read_loop(conn)
            else:
                self._ws_read_loop(conn)
        finally:
            self._disconnect(conn)

    def _tcp_read_loop(self, conn: _Connection) -> None:
        buf = b""
        sock = conn.sock
        while True:
            try:
                chunk = sock.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    self._handle_raw(conn, line.decode("utf-8", "replace"))

    def _ws_read_loop(self, conn: _Connection) -> None:
        while True:
            try:
                text = ws.recv_text(conn.sock)
            except (ws.WsClosed, OSError):
                return
            self._handle_raw(conn, text)

    # --- envelope handling ---

    def _handle_raw(self, conn: _Connection, text: str) -> None:
        try:
            env = json.loads(text)
        except json.JSONDecodeError as exc:
            self._send_error(conn, "", "", f"bad JSON envelope: {exc}")
            return
        if not isinstance(env, dict):
            self._send_error(conn, "", "", "envelope must be an object")
            return
        op = env.get("op")
        topic = env.get("topic", "")
        env_id = str(env.get("id", ""))
        if op not in _OPS:
            self._send_error(conn, topic, env_id, f"unknown op {op!r}")
            return
        if not isinstance(topic, str) or not topic.startswith("/"):
            self._send_error(conn, topic, env_id,
                             "topic must be a nonempty string starting with /")
            return
        if op == "advertise":
            return
        if op == "subscribe":
            self._subscribe(conn, topic)
            return
        if op == "unsubscribe":
            with self._lock:
                subs = self._subs.get(topic, [])
                if conn in subs:
                    subs.remove(conn)
            return
        # publish
        if "msg" not in env:
            self._send_error(conn, topic, env_id, "publish requires msg")
            return
        error = validate_payload(topic, env["msg"])
        if error is not None:
            self._send_error(conn, topic, env_id, f"schema violation: {error}")
            return
        self._dispatch(topic, env["msg"])

    def _subscribe(self, conn: _Connection, topic: str) -> None:
        with self._lock:
            subs = self._subs.setdefault(topic, [])
            if conn not in subs:
                subs.append(conn)
            latched = self._latched.get(topic)
        if latched is not None:
            conn.enqueue({"op": "publish", "topic": topic, "msg": latched})

    def _dispatch(self, topic: str, msg) -> None:
        """Fan out one message; also feeds internal taps and the player."""
        with self._lock:
            if topic in LATCHED_TOPICS:
                self._latched[topic] = msg
            subscribers = list(self._subs.get(topic, ()))
            internal = list(self._internal_subs.get(topic, ()))
            for conn in subscribers:
                conn.enqueue({"op": "publish", "topic": topic, "msg": msg})
        for fn in internal:
            try:
                fn(topic, msg)
            except Exception:
                pass
        if topic == TOPIC_PLANNED_TRAJECTORY:
            with self._play_cv:
                self._play_queue.append(msg)
                self._play_cv.notify()
        elif topic == TOPIC_PLAYBACK_CONTROL and isinstance(msg, dict):
            with self._play_cv:
                self._playback_enabled = bool(msg.get("enabled", True))
                self._play_cv.notify()

    def _send_error(self, conn: _Connection, topic: str, env_id: str,
                    message: str) -> None:
        conn.enqueue({"op": "error", "topic": topic,
                      "msg": {"error": message, "request": env_id}})

    def _disconnect(self, conn: _Connection) -> None:
        with self._lock:
            if conn in self._conns:
                self._conns.remove(conn)
            for subs in self._subs.values():
                if conn in subs:
                    subs.remove(conn)
        conn.close()

    def _note_drop(self, topic: str) -> None:
        with self._lock:
            self._drops[topic] = self._drops.get(topic, 0) + 1
            self._drop_total += 1
            payload = {"dropped": dict(self._drops),
                       "total_dropped": self._drop_total}
            subscribers = list(self._subs.get(TOPIC_DIAGNOSTICS, ()))
        # direct enqueue; never recurses into _note_drop for itself because
        # a full diagnostics queue just drops silently
        for conn in subscribers:
            with conn.queue_cv:
                if not conn.closed and len(conn.queue) < self.queue_limit:
                    conn.out_seq += 1
                    conn.queue.append({"op": "publish",
                                       "topic": TOPIC_DIAGNOSTICS,
                                       "id": str(conn.out_seq),
                                       "msg": payload})
                    conn.queue_cv.notify()

    # --- in-process API (used by cmd_serve services) ---

    def publish(self, topic: str, msg) -> None:
        error = validate_payload(topic, msg)
        if error is not None:
            raise SchemaViolation(f"{topic}: {error}")
        self._dispatch(topic, msg)

    def subscribe_internal(self, topic: str, fn: Callable) -> None:
        with self._lock:
            self._internal_subs.setdefault(topic, []).append(fn)

    # --- trajectory player ---

    def _player_loop(self) -> None:
        while True:
            with self._play_cv:
                while self._running and (not self._play_queue
                                         or not self._playback_enabled):
                    self._play_cv.wait(timeout=0.2)
                    if not self._running:
                        return
                if not self._running:
                    return
                trajectory = self._play_queue.popleft()
            waypoints = trajectory.get("waypoints", [])
            if not waypoints:
                continue
            t_prev = None
            for wp in waypoints:
                with self._play_cv:
                    if not self._playback_enabled or not self._running:
                        break
                if t_prev is not None:
                    delay = (wp["t"] - t_prev) * self.playback_duration
                    if delay > 0:
                        time.sleep(delay)
                t_prev = wp["t"]
                self._dispatch(TOPIC_JOINT_STATES,
                               {"q": wp["q"], "stamp": time.time()})


class BusClient:
    """Newline-delimited-JSON TCP client; handlers run on the reader thread
    in arrival order. One logical thread of control per client."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise NotConnected(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        self._handlers: dict = {}
        self._seq = 0
        self._send_lock = threading.Lock()
        self.errors: list = []
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _next_id(self) -> str:
        self._seq += 1
        return str(self._seq)

    def _send(self, env: dict) -> None:
        if self._closed:
            raise NotConnected("client closed")
        data = _encode(env).encode("utf-8") + b"\n"
        with self._send_lock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise NotConnected(str(exc)) from exc

    def publish(self, topic: str, msg) -> None:
        self._send({"op": "publish", "topic": topic, "id": self._next_id(),
                    "msg": msg})

    def subscribe(self, topic: str, handler: Callable) -> None:
        self._handlers.setdefault(topic, []).append(handler)
        self._send({"op": "subscribe", "topic": topic, "id": self._next_id()})

    def unsubscribe(self, topic: str) -> None:
        self._handlers.pop(topic, None)
        self._send({"op": "unsubscribe", "topic": topic, "id": self._next_id()})

    def advertise(self, topic: str) -> None:
        self._send({"op": "advertise", "topic": topic, "id": self._next_id()})

    def _read_loop(self) -> None:
        buf = b""
        while True:
            try:
                chunk = self._sock.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    self._on_text(line.decode("utf-8", "replace"))

    def _on_text(self, text: str) -> None:
        try:
            env = json.loads(text)
        except json.JSONDecodeError:
            return
        if env.get("op") == "error":
            self.errors.append(env)
            return
        if env.get("op") == "publish":
            for handler in self._handlers.get(env.get("topic"), ()):
                handler(env.get("topic"), env.get("msg"))

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


class WsBusClient(BusClient):
    """Same surface over the websocket transport."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        try:
            self._sock = ws.connect(host, port, timeout=timeout)
        except (OSError, ws.WsClosed) as exc:
            raise NotConnected(f"cannot connect to ws {host}:{port}: {exc}") from exc
        self._handlers = {}
        self._seq = 0
        self._send_lock = threading.Lock()
        self.errors = []
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _send(self, env: dict) -> None:
        if self._closed:
            raise NotConnected("client closed")
        with self._send_lock:
            try:
                ws.send_text(self._sock, _encode(env), mask=True)
            except OSError as exc:
                raise NotConnected(str(exc)) from exc

    def _read_loop(self) -> None:
        while True:
            try:
                text = ws.recv_text(self._sock, reply_mask=True)
            except (ws.WsClosed, OSError):
                return
            self._on_text(text)


class RecorderService:
    """Hub-side demonstration recorder.

    Mirrors /joint_states into the active session and reacts to
    /recorder_control {action: start|stop, session_id, sample_interval?,
    demo_type?, request_id?}. Completed records are published on
    /demonstration (with the request_id when one was given) and a status
    line goes to /demonstration_status.
    """

    def __init__(self, hub: Hub, model, scene_id: str,
                 default_interval: float = 0.05):
        self.hub = hub
        self.model = model
        self.scene_id = scene_id
        self.default_interval = default_interval
        self.registry = capture.RecorderRegistry()
        self._lock = threading.Lock()
        self._active: dict = {}  # session_id -> (handle, ticker, stop_event, request_id)
        hub.subscribe_internal(TOPIC_JOINT_STATES, self._on_joint_states)
        hub.subscribe_internal(TOPIC_RECORDER_CONTROL, self._on_control)

    def _on_joint_states(self, _topic, msg) -> None:
        q = msg.get("q")
        with self._lock:
            sessions = list(self._active.values())
        for handle, _, _, _ in sessions:
            handle.observe(q)

    def _on_control(self, _topic, msg) -> None:
        if not isinstance(msg, dict):
            return
        action = msg.get("action")
        session_id = str(msg.get("session_id", "default"))
        if action == "start":
            self._start(session_id, msg)
        elif action == "stop":
            self._stop(session_id)

    def _start(self, session_id: str, msg: dict) -> None:
        interval = float(msg.get("sample_interval", self.default_interval))
        demo_type = msg.get("demo_type", "full_task")
        request_id = msg.get("request_id")
        try:
            handle = self.registry.start(session_id, interval, demo_type)
        except Exception as exc:
            self.hub.publish(TOPIC_DEMONSTRATION_STATUS, {
                "session_id": session_id, "status": "error", "error": str(exc)})
            return
        stop = threading.Event()
        ticker = threading.Thread(target=self._tick_loop,
                                  args=(handle, stop), daemon=True)
        with self._lock:
            self._active[session_id] = (handle, ticker, stop, request_id)
        ticker.start()
        self.hub.publish(TOPIC_DEMONSTRATION_STATUS, {
            "session_id": session_id, "status": "recording"})

    def _tick_loop(self, handle, stop: threading.Event) -> None:
        t0 = time.monotonic()
        while not stop.wait(handle.sample_interval):
            try:
                handle.sample(time.monotonic() - t0)
            except Exception:
                return

    def _stop(self, session_id: str) -> None:
        with self._lock:
            entry = self._active.pop(session_id, None)
        if entry is None:
            self.hub.publish(TOPIC_DEMONSTRATION_STATUS, {
                "session_id": session_id, "status": "error",
                "error": "no active session"})
            return
        handle, ticker, stop, request_id = entry
        stop.set()
        ticker.join(timeout=2.0)
        try:
            record = self.registry.finish(
                handle, self.model.joint_inertias(), self.model.name,
                self.scene_id, self.model.joint_names())
        except Exception as exc:
            self.hub.publish(TOPIC_DEMONSTRATION_STATUS, {
                "session_id": session_id, "status": "error", "error": str(exc)})
            return
        payload = capture.record_to_json(record)
        if request_id is not None:
            payload["request_id"] = request_id
        payload["session_id"] = session_id
        self.hub.publish(TOPIC_DEMONSTRATION, payload)
        self.hub.publish(TOPIC_DEMONSTRATION_STATUS, {
            "session_id": session_id, "status": "saved",
            "waypoints": len(record.trajectory)})
