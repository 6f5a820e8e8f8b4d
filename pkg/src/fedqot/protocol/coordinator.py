"""Training Coordinator Node: eligibility, configuration, round loop, broadcast.

Each connection gets a reader thread that only decodes frames and posts them
to the coordinator's inbox. The coordinator thread owns all training state
(registry, round state, session states) and is the only writer to sessions.
"""
from __future__ import annotations

import enum
import itertools
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from ..errors import FedQoTError, FormatError, ProtocolError, RoundFailure, UsageError
from ..fedavg import Hyperparams, RoundRecord, RoundState, close_round
from ..nn import ModelSpec, ParameterVector, evaluate_accuracy, init_params
from .messages import (PROTOCOL_VERSION, Done, Eligible, Error, GlobalModel, Hello, LocalUpdate,
                       TrainConfig, read_message, write_message)
from .transport import ConnectionClosed, SocketStream

log = logging.getLogger(__name__)


class SessionState(enum.Enum):
    AWAITING_HELLO = "AwaitingHello"
    ELIGIBLE = "Eligible"
    CONFIGURED = "Configured"
    IN_ROUND = "InRound"
    DONE = "Done"
    FAILED = "Failed"


class Session:
    _ids = itertools.count(1)

    def __init__(self, stream, inbox):
        self.id = next(self._ids)
        self.stream = stream
        self.state = SessionState.AWAITING_HELLO
        self.round = None
        self.ecn_id = None
        self.n_samples = None
        self.alive = True
        self._inbox = inbox
        self._thread = threading.Thread(target=self._read_loop, name=f"tcn-session-{self.id}", daemon=True)

    def start(self):
        self._thread.start()

    def _read_loop(self):
        try:
            while self.alive:
                if not self.stream.wait_readable(0.2):
                    continue
                if not self.alive:
                    break
                self._inbox.put(("msg", self, read_message(self.stream)))
        except (ConnectionClosed, OSError) as exc:
            self._inbox.put(("closed", self, exc))
        except FedQoTError as exc:
            self._inbox.put(("bad", self, exc))

    def send(self, msg) -> bool:
        if not self.alive:
            return False
        try:
            write_message(self.stream, msg)
            return True
        except (ConnectionClosed, OSError):
            self.alive = False
            return False

    def close(self, state=None):
        if state is not None:
            self.state = state
        self.alive = False
        self.stream.close()


@dataclass
class TrainingOutcome:
    final_params: ParameterVector
    history: list
    final_accuracy: float | None
    session_states: dict
    dropped: dict = field(default_factory=dict)  # round -> list of ecn ids


class TrainingCoordinator:
    """Runs one federated training for a fixed number of ECNs.

    Connections come in through ``listen`` (TCP/TLS) or ``attach`` (any
    stream, e.g. an in-memory pair). ``run`` blocks until training ends.
    """

    def __init__(self, spec: ModelSpec, hp: Hyperparams, *, expected_ecns: int, schema_hash: int,
                 init_seed: int, eval_data=None, feature_stats: dict | None = None,
                 min_samples: int = 100, round_deadline: float = 60.0,
                 registration_timeout: float | None = None, on_round=None):
        if expected_ecns < 1:
            raise UsageError("expected_ecns must be at least 1")
        self.spec = spec
        self.hp = hp
        self.expected_ecns = expected_ecns
        self.schema_hash = schema_hash
        self.init_seed = init_seed
        self.eval_data = eval_data
        self.feature_stats = feature_stats
        self.min_samples = min_samples
        self.round_deadline = round_deadline
        self.registration_timeout = registration_timeout
        self.on_round = on_round
        self.registry: dict[str, Session] = {}
        self.sessions: list[Session] = []
        self._inbox: queue.Queue = queue.Queue()
        self._configured = False
        self._round: RoundState | None = None
        self._listener: socket.socket | None = None
        self._stopping = threading.Event()

    # -- connections -------------------------------------------------------

    def attach(self, stream) -> None:
        self._inbox.put(("attach", stream, None))

    def listen(self, host: str = "127.0.0.1", port: int = 0, ssl_context=None) -> tuple[str, int]:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
        sock.listen()
        sock.settimeout(0.2)
        self._listener = sock
        threading.Thread(target=self._accept_loop, args=(sock, ssl_context), name="tcn-accept",
                         daemon=True).start()
        return sock.getsockname()[:2]

    @property
    def address(self) -> tuple[str, int] | None:
        return None if self._listener is None else self._listener.getsockname()[:2]

    def _accept_loop(self, sock, ssl_context):
        while not self._stopping.is_set():
            try:
                conn, _ = sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            if ssl_context is None:
                self.attach(SocketStream(conn))
            else:
                threading.Thread(target=self._tls_handshake, args=(conn, ssl_context), daemon=True).start()

    def _tls_handshake(self, conn, ssl_context):
        try:
            conn.settimeout(10.0)
            tls = ssl_context.wrap_socket(conn, server_side=True)
            tls.settimeout(None)
        except OSError as exc:
            log.warning("TLS handshake failed: %s", exc)
            conn.close()
            return
        self.attach(SocketStream(tls))

    def shutdown(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            self._listener.close()
        for s in self.sessions:
            if s.alive:
                s.close()

    # -- event handling ----------------------------------------------------

    def _fail(self, session, code, detail):
        log.warning("session %s (%s): %s", session.id, session.ecn_id, detail)
        session.send(Error(code, detail))
        session.close(SessionState.FAILED)
        if not self._configured and self.registry.get(session.ecn_id) is session:
            del self.registry[session.ecn_id]

    def _handle(self, event):
        kind, subject, payload = event
        if kind == "attach":
            session = Session(subject, self._inbox)
            self.sessions.append(session)
            session.start()
            return
        session = subject
        if kind == "closed":
            if session.state not in (SessionState.DONE, SessionState.FAILED):
                log.info("session %s (%s) disconnected", session.id, session.ecn_id)
                session.state = SessionState.FAILED
            session.alive = False
            if not self._configured and self.registry.get(session.ecn_id) is session:
                del self.registry[session.ecn_id]
            return
        if kind == "bad":
            self._fail(session, "protocol", str(payload))
            return
        if not session.alive:
            return
        msg = payload
        if isinstance(msg, Hello):
            self._on_hello(session, msg)
        elif isinstance(msg, LocalUpdate):
            self._on_update(session, msg)
        else:
            self._fail(session, "unexpected", f"{type(msg).__name__} is never sent by an ECN")

    def _on_hello(self, session, msg: Hello):
        if session.state != SessionState.AWAITING_HELLO:
            self._fail(session, "state", "HELLO received twice")
            return
        reason = None
        existing = self.registry.get(msg.ecn_id)
        if msg.protocol_version != PROTOCOL_VERSION:
            reason = f"unsupported protocol version {msg.protocol_version}"
        elif existing is not None and existing.alive:
            reason = f"duplicate ecn_id {msg.ecn_id!r}"
        elif msg.schema_hash != self.schema_hash:
            reason = "feature schema hash mismatch"
        elif msg.n_samples < self.min_samples:
            reason = f"n_samples {msg.n_samples} below minimum {self.min_samples}"
        elif existing is None and len(self.registry) >= self.expected_ecns:
            reason = "training already has its full set of ECNs"
        elif existing is not None and existing.n_samples != msg.n_samples:
            reason = "reconnecting ECN changed its sample count"
        if reason is not None:
            log.info("rejecting %s: %s", msg.ecn_id, reason)
            session.send(Eligible(False, reason))
            session.close(SessionState.FAILED)
            return
        session.ecn_id = msg.ecn_id
        session.n_samples = msg.n_samples
        self.registry[msg.ecn_id] = session
        session.send(Eligible(True, ""))
        session.state = SessionState.ELIGIBLE
        if existing is not None:
            log.info("ECN %s reconnected", msg.ecn_id)
        if self._configured:
            self._configure(session)
            rs = self._round
            if rs is not None and msg.ecn_id not in rs.received:
                self._send_global(session, rs)

    def _configure(self, session):
        session.send(TrainConfig(self.spec, self.hp, self.feature_stats))
        session.state = SessionState.CONFIGURED

    def _send_global(self, session, rs: RoundState):
        if session.send(GlobalModel.of(rs.round_index, rs.global_params)):
            session.state = SessionState.IN_ROUND
            session.round = rs.round_index

    def _on_update(self, session, msg: LocalUpdate):
        rs = self._round
        seen = session.round  # last round this session was sent a GLOBAL_MODEL for
        if seen is not None and rs is not None and msg.round_index < rs.round_index:
            log.warning("ignoring stale update from %s for round %d", session.ecn_id, msg.round_index)
            return
        if session.state != SessionState.IN_ROUND or rs is None or msg.round_index != seen \
                or seen != rs.round_index:
            self._fail(session, "state", f"LOCAL_UPDATE for round {msg.round_index} not expected")
            return
        if msg.n_samples != session.n_samples:
            self._fail(session, "samples", "LOCAL_UPDATE sample count differs from HELLO")
            return
        try:
            params = msg.params(self.spec)
        except FormatError as exc:
            self._fail(session, "format", str(exc))
            return
        rs.add(session.ecn_id, params, msg.n_samples)
        session.state = SessionState.CONFIGURED

    def _pump(self, until):
        """Handle events until ``until()`` holds or its deadline (second return) passes."""
        while True:
            done, deadline = until()
            if done:
                return True
            timeout = None if deadline is None else deadline - time.monotonic()
            if timeout is not None and timeout <= 0:
                return False
            try:
                event = self._inbox.get(timeout=0.5 if timeout is None else min(timeout, 0.5))
            except queue.Empty:
                continue
            self._handle(event)

    # -- main loop ---------------------------------------------------------

    def run(self) -> TrainingOutcome:
        try:
            return self._run()
        finally:
            self.shutdown()

    def _run(self) -> TrainingOutcome:
        reg_deadline = None if self.registration_timeout is None else time.monotonic() + self.registration_timeout
        ok = self._pump(lambda: (len(self.registry) >= self.expected_ecns, reg_deadline))
        if not ok:
            raise RoundFailure(f"only {len(self.registry)} of {self.expected_ecns} ECNs registered in time")
        self._configured = True
        for session in list(self.registry.values()):
            self._configure(session)

        params = init_params(self.spec, self.init_seed)
        history, dropped = [], {}
        for t in range(1, self.hp.rounds + 1):
            for attempt in (1, 2):
                rs = RoundState(t, params, frozenset(self.registry),
                                deadline=time.monotonic() + self.round_deadline)
                self._round = rs
                for session in list(self.registry.values()):
                    self._send_global(session, rs)
                self._pump(lambda: (rs.complete, rs.deadline))
                try:
                    params = close_round(rs)
                    break
                except RoundFailure:
                    if attempt == 2:
                        self._round = None
                        for s in self.registry.values():
                            if s.alive:
                                self._fail(s, "aborted", f"round {t} failed twice")
                        raise
                    log.warning("round %d received no updates; retrying once", t)
            if rs.missing:
                dropped[t] = rs.missing
            acc = evaluate_accuracy(params, self.eval_data) if self.eval_data is not None else None
            record = RoundRecord(t, None, acc)
            history.append(record)
            log.info("round %d closed with %d/%d updates, accuracy=%s", t, len(rs.received),
                     len(rs.expected), acc)
            if self.on_round is not None:
                self.on_round(record)
        self._round = None

        final_acc = history[-1].eval_accuracy if history else None
        for session in self.registry.values():
            if session.alive and session.send(Done(final_acc)):
                session.state = SessionState.DONE
        states = {eid: s.state for eid, s in self.registry.items()}
        return TrainingOutcome(params, history, final_acc, states, dropped)


def tcn_serve(spec, hp, *, expected_ecns, schema_hash, init_seed, host="127.0.0.1", port=0,
              ssl_context=None, **kwargs) -> TrainingOutcome:
    coordinator = TrainingCoordinator(spec, hp, expected_ecns=expected_ecns, schema_hash=schema_hash,
                                      init_seed=init_seed, **kwargs)
    coordinator.listen(host, port, ssl_context)
    return coordinator.run()
