"""Helpers for running a coordinator and clients inside one test process."""
import socket
import threading

from fedqot.protocol import EcnClient, TrainingCoordinator, memory_pair


class Background:
    """Runs ``fn`` in a daemon thread and keeps its result or exception."""

    def __init__(self, fn, *args, **kwargs):
        self.result = None
        self.error = None
        self._thread = threading.Thread(target=self._run, args=(fn, args, kwargs), daemon=True)
        self._thread.start()

    def _run(self, fn, args, kwargs):
        try:
            self.result = fn(*args, **kwargs)
        except BaseException as exc:  # noqa: BLE001 - re-raised in join
            self.error = exc

    def join(self, timeout=60.0):
        self._thread.join(timeout)
        if self._thread.is_alive():
            raise TimeoutError("background task did not finish")
        if self.error is not None:
            raise self.error
        return self.result


def coordinator_for(prepared, spec, hp, init_seed, **kwargs):
    kwargs.setdefault("expected_ecns", len(prepared.partitions))
    kwargs.setdefault("min_samples", 1)
    return TrainingCoordinator(spec, hp, schema_hash=prepared.schema.hash, init_seed=init_seed,
                               eval_data=prepared.test, feature_stats=prepared.stats, **kwargs)


def memory_connector(coordinator):
    """Zero-argument callable that hands the coordinator a fresh in-memory stream."""
    def connect():
        ours, theirs = memory_pair()
        coordinator.attach(theirs)
        return ours
    return connect


def run_clients(connectors, prepared, ids=None):
    ids = ids or [f"ecn-{k}" for k in range(len(prepared.train_samples))]
    clients = [EcnClient(c, samples, eid, schema=prepared.schema)
               for c, samples, eid in zip(connectors, prepared.train_samples, ids)]
    return clients, [Background(c.run) for c in clients]


class CapturingRelay:
    """TCP relay between ECNs and a TCN that records every byte in both directions."""

    def __init__(self, upstream):
        self.upstream = upstream
        self.captured = []  # (direction, bytes) per connection and direction
        self._lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen()
        self.address = self._sock.getsockname()
        threading.Thread(target=self._accept, daemon=True).start()

    @property
    def endpoint(self):
        return f"{self.address[0]}:{self.address[1]}"

    def _accept(self):
        while True:
            try:
                down, _ = self._sock.accept()
            except OSError:
                return
            up = socket.create_connection(self.upstream)
            for src, dst, tag in ((down, up, "ecn->tcn"), (up, down, "tcn->ecn")):
                buf = bytearray()
                with self._lock:
                    self.captured.append((tag, buf))
                threading.Thread(target=self._pump, args=(src, dst, buf), daemon=True).start()

    def _pump(self, src, dst, buf):
        try:
            while True:
                chunk = src.recv(65536)
                if not chunk:
                    break
                with self._lock:
                    buf += chunk
                dst.sendall(chunk)
        except OSError:
            pass
        finally:
            for s in (src, dst):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def streams(self):
        with self._lock:
            return [(tag, bytes(buf)) for tag, buf in self.captured]

    def close(self):
        self._sock.close()
