"""Reliable byte streams: in-memory duplex, plain TCP, TLS over TCP.

A stream exposes ``send``, ``recv_exact``, ``wait_readable`` and ``close``.
``recv_exact`` raises ``ConnectionClosed`` when the peer goes away mid-read.
"""
from __future__ import annotations

import select
import socket
import ssl
import threading
import time

from ..errors import UsageError


class ConnectionClosed(ConnectionError):
    pass


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise UsageError(f"endpoint must be host:port, got {endpoint!r}")
    try:
        port_no = int(port)
    except ValueError:
        raise UsageError(f"bad port in endpoint {endpoint!r}") from None
    if not 0 <= port_no <= 65535:
        raise UsageError(f"port out of range in endpoint {endpoint!r}")
    return host.strip("[]"), port_no


class SocketStream:
    """Stream over a connected (optionally TLS-wrapped) socket.

    One lock serializes reads and writes so a TLS session is never driven
    from two threads at once. Readers should call ``wait_readable`` first so
    the lock is not held while idle.
    """

    def __init__(self, sock: socket.socket, read_timeout: float = 30.0):
        self.sock = sock
        self.read_timeout = read_timeout
        self._lock = threading.Lock()
        self._closed = False
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass

    def send(self, data: bytes) -> None:
        with self._lock:
            try:
                self.sock.sendall(data)
            except OSError as exc:
                raise ConnectionClosed(str(exc)) from exc

    def recv_exact(self, n: int) -> bytes:
        with self._lock:
            buf = bytearray()
            self.sock.settimeout(self.read_timeout)
            try:
                while len(buf) < n:
                    chunk = self.sock.recv(min(n - len(buf), 1 << 20))
                    if not chunk:
                        raise ConnectionClosed("peer closed the connection")
                    buf += chunk
            except socket.timeout as exc:
                raise ConnectionClosed("read timed out inside a frame") from exc
            except (OSError, ssl.SSLError) as exc:
                if isinstance(exc, ConnectionClosed):
                    raise
                raise ConnectionClosed(str(exc)) from exc
            finally:
                try:
                    self.sock.settimeout(None)
                except OSError:
                    pass
            return bytes(buf)

    def wait_readable(self, timeout: float) -> bool:
        if self._closed:
            return True
        if isinstance(self.sock, ssl.SSLSocket) and self.sock.pending():
            return True
        try:
            ready, _, _ = select.select([self.sock], [], [], timeout)
        except (OSError, ValueError):
            return True
        return bool(ready)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _Pipe:
    def __init__(self):
        self.buf = bytearray()
        self.closed = False
        self.cond = threading.Condition()


class MemoryStream:
    """One end of an in-process duplex byte stream."""

    def __init__(self, inbound: _Pipe, outbound: _Pipe):
        self._in = inbound
        self._out = outbound

    def send(self, data: bytes) -> None:
        with self._out.cond:
            if self._out.closed:
                raise ConnectionClosed("stream closed")
            self._out.buf += data
            self._out.cond.notify_all()

    def recv_exact(self, n: int) -> bytes:
        with self._in.cond:
            while len(self._in.buf) < n:
                if self._in.closed:
                    raise ConnectionClosed("peer closed the connection")
                self._in.cond.wait()
            out = bytes(self._in.buf[:n])
            del self._in.buf[:n]
            return out

    def wait_readable(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        with self._in.cond:
            while not self._in.buf and not self._in.closed:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._in.cond.wait(remaining)
            return True

    def close(self) -> None:
        for pipe in (self._in, self._out):
            with pipe.cond:
                pipe.closed = True
                pipe.cond.notify_all()


def memory_pair() -> tuple[MemoryStream, MemoryStream]:
    a_to_b, b_to_a = _Pipe(), _Pipe()
    return MemoryStream(b_to_a, a_to_b), MemoryStream(a_to_b, b_to_a)


def connect_tcp(endpoint: str, ssl_context: ssl.SSLContext | None = None,
                timeout: float = 10.0) -> SocketStream:
    host, port = parse_endpoint(endpoint)
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    if ssl_context is not None:
        sock = ssl_context.wrap_socket(sock, server_hostname=host)
    return SocketStream(sock)


def server_ssl_context(certfile, keyfile) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.load_cert_chain(certfile, keyfile)
    return ctx


def client_ssl_context(cafile=None) -> ssl.SSLContext:
    ctx = ssl.create_default_context(cafile=cafile)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    return ctx
