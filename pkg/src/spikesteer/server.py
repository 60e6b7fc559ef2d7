"""Steering/telemetry server.

One acceptor per transport (raw TCP lines, WebSocket text frames), one session
handler per connection, and a single fan-out stage that reads the engine's
ordered telemetry stream and routes frames into per-session bounded queues.
Commands flow the other way into the engine's boundary queue; the server owns
the translation between per-connection command ids and engine-global ids.

Backpressure policy: membrane and rates frames are droppable (oldest first,
per session); the spike channel and ack/error/status frames are never dropped,
but a client that cannot keep up with them is disconnected with a status
frame. The engine's tick loop never blocks on a slow client either way.
"""

from __future__ import annotations

import dataclasses
import socket
import threading
import time
from collections import deque
from itertools import count

import numpy as np

from .engine import CommandQueue, DivergedError, Engine
from .protocol import (COMMAND_TYPES, AckFrame, ErrorFrame, MembraneFrame,
                       ProtocolError, RatesFrame, SpikesFrame, StatusFrame,
                       Subscribe, decode, encode, should_emit)


class _OutQueue:
    """Per-session outbound frames, merged in non-decreasing tick order.

    Two lanes: critical (spikes, acks, errors, status; never dropped, overflow
    kills the session) and droppable (membrane, rates; bounded, drop-oldest).
    """

    def __init__(self, critical_max: int = 20000, droppable_max: int = 512):
        self._critical: deque = deque()
        self._droppable: deque = deque(maxlen=droppable_max)
        self._critical_max = critical_max
        self._cv = threading.Condition()
        self.overflowed = False

    def put_critical(self, frame) -> None:
        with self._cv:
            if len(self._critical) >= self._critical_max:
                self.overflowed = True
            else:
                self._critical.append(frame)
            self._cv.notify()

    def put_droppable(self, frame) -> None:
        with self._cv:
            self._droppable.append(frame)  # maxlen drops the oldest
            self._cv.notify()

    @staticmethod
    def _tick_of(frame) -> int:
        t = getattr(frame, "tick", None)
        return -1 if t is None else t

    def get(self, timeout: float):
        """Next frame in tick order, or None on timeout/overflow."""
        with self._cv:
            if not self._critical and not self._droppable and not self.overflowed:
                self._cv.wait(timeout)
            if self.overflowed:
                return None
            if self._critical and self._droppable:
                if self._tick_of(self._droppable[0]) < self._tick_of(self._critical[0]):
                    return self._droppable.popleft()
                return self._critical.popleft()
            if self._critical:
                return self._critical.popleft()
            if self._droppable:
                return self._droppable.popleft()
            return None

    def pending(self) -> int:
        with self._cv:
            return len(self._critical) + len(self._droppable)


class Session:
    _ids = count(1)

    def __init__(self, server: "ControlServer", send_line, describe: str,
                 closer=None):
        self.server = server
        self.send_line = send_line
        self.closer = closer
        self.describe = describe
        self.id = next(self._ids)
        self.out = _OutQueue(critical_max=server.critical_queue_max,
                             droppable_max=server.droppable_queue_max)
        self.subscription: Subscribe | None = None
        self.alive = True
        self.last_command_id = 0
        self._bytes_seen = 0
        # rates aggregation state
        self._rate_counts: np.ndarray | None = None
        self._rate_window_ticks = 0
        self._rate_window_end = 0
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._writer.start()

    # -- outbound ---------------------------------------------------------------

    def _write_loop(self) -> None:
        while self.alive:
            frame = self.out.get(0.2)
            if self.out.overflowed:
                try:
                    self.send_line(encode(StatusFrame(
                        tick=self.server.engine.tick, state="disconnected",
                        detail="client too slow for the spike channel")))
                except OSError:
                    pass
                self.server.drop_session(self)
                return
            if frame is None:
                continue
            try:
                self.send_line(encode(frame))
            except Exception:  # socket gone or websocket closed
                self.server.drop_session(self)
                return

    def channels(self) -> tuple[str, ...]:
        return self.subscription.channels if self.subscription else ()

    def route(self, frame) -> None:
        if isinstance(frame, SpikesFrame):
            self._advance_rates(frame)
            if "spikes" in self.channels():
                self.out.put_critical(frame)
        elif isinstance(frame, MembraneFrame):
            sub = self.subscription
            if sub is None or "membrane" not in sub.channels:
                return
            if not should_emit(frame.tick, sub.membrane_decimation):
                return
            wanted = set(sub.membrane_neurons)
            samples = tuple(s for s in frame.samples if s[0] in wanted) \
                if wanted else frame.samples
            if samples:
                self.out.put_droppable(MembraneFrame(tick=frame.tick, samples=samples))
        else:
            self.out.put_critical(frame)

    def _advance_rates(self, frame: SpikesFrame) -> None:
        if "rates" not in self.channels():
            return
        net = self.server.engine.net
        if self._rate_counts is None:
            dt = net.config.dt
            self._rate_window_ticks = max(1, round(self.subscription.rate_window_ms / dt))
            self._rate_counts = np.zeros(len(net.pop_names), dtype=np.int64)
            self._rate_window_end = frame.tick + self._rate_window_ticks
        if frame.neurons:
            pops = np.searchsorted(net.pop_offsets, np.asarray(frame.neurons),
                                   side="right") - 1
            self._rate_counts += np.bincount(pops, minlength=len(net.pop_names))
        if frame.tick + 1 >= self._rate_window_end:
            dt = net.config.dt
            window_s = self._rate_window_ticks * dt / 1000.0
            rates = []
            for i, name in enumerate(net.pop_names):
                lo, hi = net.pop_slice(name)
                rates.append((name, float(self._rate_counts[i]) / (hi - lo) / window_s))
            self.out.put_droppable(RatesFrame(
                tick=frame.tick, window_ms=self._rate_window_ticks * dt,
                rates=tuple(rates)))
            self._rate_counts[:] = 0
            self._rate_window_end += self._rate_window_ticks

    # -- inbound ----------------------------------------------------------------

    def handle_line(self, line: str) -> None:
        offset = self._bytes_seen
        self._bytes_seen += len(line.encode("utf-8")) + 1
        if not line.strip():
            return
        try:
            msg = decode(line)
        except ProtocolError as e:
            self.out.put_critical(ErrorFrame(reason=str(e), offset=offset))
            return
        if type(msg) not in COMMAND_TYPES.values():
            self.out.put_critical(ErrorFrame(
                reason="unexpected frame type from client", offset=offset))
            return
        if msg.id <= self.last_command_id:
            self.out.put_critical(ErrorFrame(
                reason=f"command id {msg.id} is not increasing", id=msg.id))
            return
        self.last_command_id = msg.id
        if isinstance(msg, Subscribe):
            self._handle_subscribe(msg)
            return
        self.server.submit(self, msg)

    def _handle_subscribe(self, msg: Subscribe) -> None:
        cap = self.server.membrane_cap
        if len(msg.membrane_neurons) > cap:
            self.out.put_critical(ErrorFrame(
                reason=f"membrane neuron set exceeds cap of {cap}", id=msg.id))
            return
        if msg.membrane_decimation < 1:
            self.out.put_critical(ErrorFrame(
                reason="membrane_decimation must be >= 1", id=msg.id))
            return
        self.subscription = msg
        self._rate_counts = None  # window restarts with the new settings
        self.server.refresh_probe()
        self.out.put_critical(AckFrame(id=msg.id, tick=self.server.engine.tick))


class ControlServer:
    """Serves one engine over TCP and WebSocket."""

    def __init__(self, engine: Engine, host: str = "127.0.0.1", port: int = 7677,
                 ws_port: int | None = None, ws_path: str = "/control",
                 membrane_cap: int = 64, critical_queue_max: int = 20000,
                 droppable_queue_max: int = 512):
        self.engine = engine
        self.critical_queue_max = critical_queue_max
        self.droppable_queue_max = droppable_queue_max
        self.host = host
        self.port = port
        if ws_port is None:
            ws_port = port + 1 if port else 0  # port 0 means "any free port"
        self.ws_port = ws_port
        self.ws_path = ws_path
        self.membrane_cap = membrane_cap
        self.commands = CommandQueue()
        self.sessions: dict[int, Session] = {}
        self._sessions_lock = threading.Lock()
        self._engine_ids = count(1)
        self._id_map: dict[int, tuple[Session, int]] = {}
        self._telemetry: deque = deque()
        self._telemetry_cv = threading.Condition()
        self._threads: list[threading.Thread] = []
        self._tcp_sock: socket.socket | None = None
        self._ws_server = None
        self._engine_error: BaseException | None = None
        self._done = threading.Event()

    # -- engine side --------------------------------------------------------------

    def telemetry_sink(self, frame) -> None:
        # called on the engine's coordinator thread; must never block
        with self._telemetry_cv:
            self._telemetry.append(frame)
            self._telemetry_cv.notify()

    def submit(self, session: Session, msg) -> None:
        engine_id = next(self._engine_ids)
        self._id_map[engine_id] = (session, msg.id)
        self.commands.push(dataclasses.replace(msg, id=engine_id))

    def refresh_probe(self) -> None:
        union: set[int] = set()
        with self._sessions_lock:
            for s in self.sessions.values():
                if s.subscription and "membrane" in s.subscription.channels:
                    union.update(s.subscription.membrane_neurons)
        self.engine.set_membrane_probe(sorted(union))

    def drop_session(self, session: Session) -> None:
        session.alive = False
        with self._sessions_lock:
            self.sessions.pop(session.id, None)
        if session.closer is not None:
            try:
                session.closer()
            except Exception:
                pass
        self.refresh_probe()

    # -- fan-out --------------------------------------------------------------------

    def _fanout_loop(self) -> None:
        while not self._done.is_set():
            with self._telemetry_cv:
                if not self._telemetry:
                    self._telemetry_cv.wait(0.2)
                frames = list(self._telemetry)
                self._telemetry.clear()
            for frame in frames:
                self._route(frame)

    def _route(self, frame) -> None:
        if isinstance(frame, (AckFrame, ErrorFrame)) and frame.id is not None \
                and frame.id in self._id_map:
            session, client_id = self._id_map.pop(frame.id)
            session.route(dataclasses.replace(frame, id=client_id))
            return
        with self._sessions_lock:
            sessions = list(self.sessions.values())
        for s in sessions:
            s.route(frame)

    # -- transports -------------------------------------------------------------------

    def _tcp_accept_loop(self) -> None:
        while not self._done.is_set():
            try:
                conn, addr = self._tcp_sock.accept()
            except OSError:
                return
            threading.Thread(target=self._tcp_session, args=(conn, addr),
                             daemon=True).start()

    def _tcp_session(self, conn: socket.socket, addr) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        lock = threading.Lock()

        def send_line(line: str) -> None:
            with lock:
                conn.sendall(line.encode("utf-8") + b"\n")

        session = Session(self, send_line, f"tcp:{addr}", closer=conn.close)
        self._register(session)
        try:
            with conn.makefile("r", encoding="utf-8", newline="\n") as reader:
                for line in reader:
                    if not session.alive:
                        break
                    session.handle_line(line.rstrip("\n"))
        except (OSError, ValueError):
            pass
        finally:
            self.drop_session(session)
            try:
                conn.close()
            except OSError:
                pass

    def _ws_session(self, conn) -> None:
        path = conn.request.path if conn.request else ""
        if path != self.ws_path:
            conn.close(code=1008, reason=f"unknown path {path}")
            return
        session = Session(self, conn.send, f"ws:{conn.remote_address}",
                          closer=conn.close)
        self._register(session)
        try:
            for message in conn:
                if not session.alive:
                    break
                if isinstance(message, bytes):
                    message = message.decode("utf-8", errors="replace")
                session.handle_line(message)
        except Exception:
            pass
        finally:
            self.drop_session(session)

    def _register(self, session: Session) -> None:
        with self._sessions_lock:
            self.sessions[session.id] = session
        session.out.put_critical(StatusFrame(
            tick=self.engine.tick,
            state="paused" if self.engine.paused else "running",
            detail="connected"))

    # -- lifecycle ------------------------------------------------------------------------

    def start(self) -> None:
        """Bind both listeners and start the engine; raises OSError if a port
        is taken."""
        self._tcp_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._tcp_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._tcp_sock.bind((self.host, self.port))
        self._tcp_sock.listen()
        self.port = self._tcp_sock.getsockname()[1]  # resolves port 0

        from websockets.sync.server import serve as ws_serve
        try:
            self._ws_server = ws_serve(self._ws_session, self.host, self.ws_port)
            self.ws_port = self._ws_server.socket.getsockname()[1]
        except OSError:
            self._tcp_sock.close()
            raise

        for target in (self._tcp_accept_loop, self._fanout_loop, self._run_engine):
            th = threading.Thread(target=target, daemon=True)
            th.start()
            self._threads.append(th)
        th = threading.Thread(target=self._ws_server.serve_forever, daemon=True)
        th.start()
        self._threads.append(th)

    def _run_engine(self) -> None:
        try:
            self.engine.run(commands=self.commands, sink=self.telemetry_sink)
        except DivergedError as e:
            self._engine_error = e
        except BaseException as e:  # surfaced by wait()
            self._engine_error = e
        finally:
            self._flush_and_shutdown()

    def _flush_and_shutdown(self) -> None:
        # the final status frame is already in the telemetry queue; let the
        # fan-out and the session writers drain before tearing down
        deadline = time.monotonic() + 2.0
        while time.monotonic() < deadline:
            with self._telemetry_cv:
                telemetry_left = len(self._telemetry)
            with self._sessions_lock:
                session_left = sum(s.out.pending() for s in self.sessions.values())
            if telemetry_left == 0 and session_left == 0:
                break
            time.sleep(0.02)
        time.sleep(0.05)
        self.shutdown()

    def wait(self) -> None:
        """Block until the engine run finishes; re-raise divergence."""
        for th in self._threads:
            if th is threading.current_thread():
                continue
            th.join()
        if self._engine_error is not None:
            raise self._engine_error

    def shutdown(self) -> None:
        if self._done.is_set():
            return
        self._done.set()
        self.engine.request_stop()
        if self._tcp_sock is not None:
            try:
                # a plain close() does not wake a thread parked in accept()
                self._tcp_sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._tcp_sock.close()
            except OSError:
                pass
        if self._ws_server is not None:
            self._ws_server.shutdown()
        with self._sessions_lock:
            sessions = list(self.sessions.values())
        for s in sessions:
            self.drop_session(s)

    def endpoints(self) -> dict[str, str]:
        return {
            "tcp": f"{self.host}:{self.port}",
            "ws": f"ws://{self.host}:{self.ws_port}{self.ws_path}",
        }
