"""Framed, ordered byte transport over TCP sockets or in-process queues.

Wire frame: ``kind`` (1 byte) | ``length`` (4 bytes, big-endian) | payload.
The top bit of ``kind`` marks a frame whose payload continues in the next
frame of the same kind.
"""

import queue
import socket
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum

from .errors import FrameTooLarge

HEADER = struct.Struct(">BI")
MAX_PAYLOAD = 64 * 1024 * 1024
CONTINUED = 0x80


class Kind(IntEnum):
    HELLO = 1
    HELLO_ACK = 2
    ESTIMATE = 3
    IBLT_ROUND = 4
    DELTA_ACK = 5
    HASH_REQUEST = 6
    HASH_RESPONSE_LITERAL = 7
    HASH_RESPONSE_COMPOSED = 8
    VERIFY = 9
    VERIFY_FAIL = 10
    FULL_TRANSFER = 11
    DONE = 12


@dataclass(frozen=True)
class Frame:
    kind: int
    payload: bytes = b""

    @property
    def base_kind(self) -> Kind:
        return Kind(self.kind & ~CONTINUED)

    @property
    def continued(self) -> bool:
        return bool(self.kind & CONTINUED)

    @property
    def wire_size(self) -> int:
        return HEADER.size + len(self.payload)


def parse_address(address: str):
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {address!r}")
    return host or "127.0.0.1", int(port)


def send_chunked(link, kind: int, payload, prefix: bytes = b"") -> None:
    """Send ``prefix + payload`` split across frames no larger than the link's cap.

    Every frame repeats ``prefix``; all but the last carry the continuation bit.
    """
    room = link.max_payload - len(prefix)
    if room <= 0:
        raise FrameTooLarge("prefix alone exceeds the frame cap")
    view = memoryview(payload)
    pos = 0
    while True:
        piece = view[pos:pos + room]
        pos += len(piece)
        more = pos < len(view)
        link.send(Frame(kind | (CONTINUED if more else 0), prefix + bytes(piece)))
        if not more:
            return


def receive_chunked(link, first: Frame, prefix_len: int = 0):
    """Reassemble a chunked payload starting at ``first``; returns ``(prefix, body)``."""
    prefix = first.payload[:prefix_len]
    parts = [first.payload[prefix_len:]]
    frame = first
    while frame.continued:
        frame = link.receive()
        if frame.base_kind != first.base_kind:
            raise ConnectionError(f"expected continuation of {first.base_kind.name}, "
                                  f"got {frame.base_kind.name}")
        parts.append(frame.payload[prefix_len:])
    return prefix, b"".join(parts)


class Transport:
    """Base class; subclasses implement ``_write`` and ``_read``."""

    def __init__(self, max_payload: int = MAX_PAYLOAD):
        self.max_payload = max_payload
        self.bytes_in = 0
        self.bytes_out = 0
        self._lock = threading.Lock()

    def send(self, frame: Frame) -> None:
        if len(frame.payload) > self.max_payload:
            raise FrameTooLarge(
                f"payload of {len(frame.payload)} bytes exceeds cap {self.max_payload}")
        self._write(HEADER.pack(frame.kind, len(frame.payload)), frame.payload)
        with self._lock:
            self.bytes_out += frame.wire_size

    def receive(self) -> Frame:
        kind, length = HEADER.unpack(self._read(HEADER.size))
        if length > self.max_payload:
            raise FrameTooLarge(f"incoming frame of {length} bytes exceeds cap {self.max_payload}")
        frame = Frame(kind, self._read(length) if length else b"")
        with self._lock:
            self.bytes_in += frame.wire_size
        return frame

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class StreamTransport(Transport):
    def __init__(self, sock: socket.socket, max_payload: int = MAX_PAYLOAD, peer=None):
        super().__init__(max_payload)
        self.sock = sock
        self.peer = peer

    def _write(self, header, payload):
        self.sock.sendall(header)
        if payload:
            self.sock.sendall(payload)

    def _read(self, n):
        buf = bytearray(n)
        view = memoryview(buf)
        got = 0
        while got < n:
            r = self.sock.recv_into(view[got:], n - got)
            if r == 0:
                raise ConnectionError(f"connection to {self.peer} closed mid-frame")
            got += r
        return bytes(buf)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class LoopbackTransport(Transport):
    """One end of an in-process pipe; frames are encoded exactly as on a socket."""

    def __init__(self, inbox, outbox, max_payload=MAX_PAYLOAD, timeout=None):
        super().__init__(max_payload)
        self._inbox = inbox
        self._outbox = outbox
        self._pending = b""
        self.timeout = timeout

    def _write(self, header, payload):
        self._outbox.put(header + payload)

    def _read(self, n):
        while len(self._pending) < n:
            try:
                chunk = self._inbox.get(timeout=self.timeout)
            except queue.Empty:
                raise TimeoutError("loopback peer sent nothing") from None
            if chunk is None:
                raise ConnectionError("loopback peer closed")
            self._pending += chunk
        out, self._pending = self._pending[:n], self._pending[n:]
        return out

    def close(self):
        self._outbox.put(None)


def loopback_pair(max_payload=MAX_PAYLOAD, timeout=None):
    a, b = queue.Queue(), queue.Queue()
    return (LoopbackTransport(a, b, max_payload, timeout),
            LoopbackTransport(b, a, max_payload, timeout))


class Listener:
    def __init__(self, address: str, backlog: int = 8):
        host, port = parse_address(address)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise OSError(f"cannot listen on {address}: {exc}") from exc
        self.sock.listen(backlog)

    @property
    def address(self) -> str:
        host, port = self.sock.getsockname()[:2]
        return f"{host}:{port}"

    def accept(self, timeout=None) -> StreamTransport:
        self.sock.settimeout(timeout)
        conn, peer = self.sock.accept()
        conn.settimeout(None)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return StreamTransport(conn, peer=f"{peer[0]}:{peer[1]}")

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def listen(address: str) -> Listener:
    return Listener(address)


def connect(address: str, timeout: float = 10.0) -> StreamTransport:
    host, port = parse_address(address)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectionError(f"cannot connect to {address}: {exc}") from exc
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return StreamTransport(sock, peer=address)
