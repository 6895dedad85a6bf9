"""Message framing, delivery backends, and per-session byte metering.

Every protocol message travels as an envelope: 16-byte session id, one type
byte, and a length-prefixed payload. On the wire an envelope is preceded by a
4-byte big-endian frame length, for 25 bytes of header per message.

Two backends share one node interface (send to a peer index, receive from
any): an in-process bus for tests and single-process runs, and TCP with one
connection per directed party pair for multi-process runs. Party index 0 is
reserved for dealer endpoints (correlated-randomness setup); traffic to or
from index 0 is accounted as setup bytes, everything else as protocol bytes.
Delivery is exactly-once and FIFO per directed pair on both backends.
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Optional

from .errors import TransportClosed, TransportError

SESSION_ID_BYTES = 16
HEADER_BYTES = 25  # 4 frame length + 16 session + 1 type + 4 payload length
MAX_PAYLOAD = (1 << 32) - 1

DEALER_INDEX = 0


@dataclass(frozen=True)
class Envelope:
    session_id: bytes
    msg_type: int
    payload: bytes

    def __post_init__(self):
        if len(self.session_id) != SESSION_ID_BYTES:
            raise ValueError("session id must be 16 bytes")
        if not 0 <= self.msg_type <= 0xFF:
            raise ValueError("message type must fit one byte")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError("payload too large for the frame format")

    def to_frame(self) -> bytes:
        body = (self.session_id + bytes([self.msg_type])
                + len(self.payload).to_bytes(4, "big") + self.payload)
        return len(body).to_bytes(4, "big") + body

    @classmethod
    def from_body(cls, body: bytes) -> "Envelope":
        if len(body) < SESSION_ID_BYTES + 5:
            raise TransportError("truncated envelope")
        sid = body[:SESSION_ID_BYTES]
        msg_type = body[SESSION_ID_BYTES]
        plen = int.from_bytes(body[SESSION_ID_BYTES + 1 : SESSION_ID_BYTES + 5], "big")
        payload = body[SESSION_ID_BYTES + 5 :]
        if len(payload) != plen:
            raise TransportError("payload length mismatch")
        return cls(session_id=sid, msg_type=msg_type, payload=payload)

    @property
    def wire_bytes(self) -> int:
        return HEADER_BYTES + len(self.payload)


class Meter:
    """Monotone byte counters per (session, src, dst, msg_type).

    Dealer traffic (src or dst 0) lands in the setup bucket; the rest is
    protocol traffic.
    """

    def __init__(self):
        self._counts: dict[tuple[bytes, int, int, int], int] = {}
        self._lock = threading.Lock()

    def add(self, session_id: bytes, src: int, dst: int, msg_type: int, nbytes: int):
        key = (session_id, src, dst, msg_type)
        with self._lock:
            self._counts[key] = self._counts.get(key, 0) + nbytes

    def _select(self, session_id: Optional[bytes], setup: bool) -> dict:
        out = {}
        with self._lock:
            for (sid, src, dst, mt), nb in self._counts.items():
                if session_id is not None and sid != session_id:
                    continue
                if (src == DEALER_INDEX or dst == DEALER_INDEX) != setup:
                    continue
                out[(sid, src, dst, mt)] = nb
        return out

    def protocol_bytes(self, session_id: Optional[bytes] = None) -> int:
        return sum(self._select(session_id, setup=False).values())

    def setup_bytes(self, session_id: Optional[bytes] = None) -> int:
        return sum(self._select(session_id, setup=True).values())

    def per_type(self, session_id: Optional[bytes] = None) -> dict[str, int]:
        out: dict[str, int] = {}
        for (_, _, _, mt), nb in self._select(session_id, setup=False).items():
            key = f"0x{mt:02x}"
            out[key] = out.get(key, 0) + nb
        return out


class Transcript:
    """Ordered log of sent messages: (src, dst, type, wire bytes, payload digest)."""

    def __init__(self):
        self.entries: list[tuple[int, int, int, int, str]] = []
        self._lock = threading.Lock()

    def add(self, src: int, dst: int, env: Envelope):
        digest = hashlib.sha256(env.payload).hexdigest()[:16]
        with self._lock:
            self.entries.append((src, dst, env.msg_type, env.wire_bytes, digest))

    def per_pair(self) -> dict[tuple[int, int], list[tuple[int, int, str]]]:
        """Per directed pair, the ordered (type, bytes, digest) sequence."""
        out: dict[tuple[int, int], list[tuple[int, int, str]]] = {}
        with self._lock:
            for src, dst, mt, nb, dg in self.entries:
                out.setdefault((src, dst), []).append((mt, nb, dg))
        return out


def make_report(meter: Meter, *, session_id: bytes, n: int, parties: int,
                t: Optional[int], phase_ms: dict, aborted: bool) -> dict:
    """Communication summary in the shape consumed by the CLI and benchmarks."""
    protocol = meter.protocol_bytes(session_id)
    return {
        "session": session_id.hex(),
        "n": n,
        "parties": parties,
        "t": t,
        "bytes_total": protocol,
        "bits_per_element": (protocol * 8 / n) if n else 0.0,
        "per_type": meter.per_type(session_id),
        "setup_bytes": meter.setup_bytes(session_id),
        "phase_ms": phase_ms,
        "aborted": aborted,
    }


_CLOSED = object()


class BusNode:
    """One party's endpoint on the in-process bus."""

    def __init__(self, network: "BusNetwork", index: int):
        self._network = network
        self.index = index
        self._inbox: queue.Queue = queue.Queue()
        self._closed = False

    def send(self, dst: int, env: Envelope):
        if self._closed:
            raise TransportError("send on closed endpoint")
        self._network.deliver(self.index, dst, env)

    def recv(self, timeout: Optional[float] = None):
        """Next (src, envelope), or None on timeout."""
        try:
            item = self._inbox.get(timeout=timeout) if timeout is not None else self._inbox.get_nowait()
        except queue.Empty:
            return None
        if item is _CLOSED:
            raise TransportClosed("peer endpoint closed")
        return item

    def close(self):
        if not self._closed:
            self._closed = True
            self._network.notify_closed(self.index)


class BusNetwork:
    """All-pairs in-process delivery with shared metering and transcript."""

    def __init__(self, meter: Optional[Meter] = None, transcript: Optional[Transcript] = None):
        self.meter = meter if meter is not None else Meter()
        self.transcript = transcript if transcript is not None else Transcript()
        self._nodes: dict[int, BusNode] = {}

    def node(self, index: int) -> BusNode:
        if index not in self._nodes:
            self._nodes[index] = BusNode(self, index)
        return self._nodes[index]

    def deliver(self, src: int, dst: int, env: Envelope):
        node = self._nodes.get(dst)
        if node is None or node._closed:
            raise TransportError(f"no open endpoint for party {dst}")
        self.meter.add(env.session_id, src, dst, env.msg_type, env.wire_bytes)
        self.transcript.add(src, dst, env)
        node._inbox.put((src, env))

    def notify_closed(self, index: int):
        for other, node in self._nodes.items():
            if other != index and not node._closed:
                node._inbox.put(_CLOSED)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = bytearray()
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            raise TransportClosed("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Envelope:
    length = struct.unpack(">I", _recv_exact(sock, 4))[0]
    return Envelope.from_body(_recv_exact(sock, length))


class TcpNode:
    """TCP endpoint: listens on its own address, dials peers on first send.

    A dialing party identifies itself with a 2-byte index right after
    connecting; afterwards both directions carry ordinary frames (each
    direction of a pair uses its own connection).
    """

    def __init__(self, index: int, listen_addr: Optional[tuple[str, int]],
                 peers: dict[int, tuple[str, int]],
                 meter: Optional[Meter] = None, transcript: Optional[Transcript] = None):
        self.index = index
        self.meter = meter if meter is not None else Meter()
        self.transcript = transcript if transcript is not None else Transcript()
        self._peers = dict(peers)
        self._out: dict[int, socket.socket] = {}
        self._inbox: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._closed = False
        self._listener = None
        self._threads: list[threading.Thread] = []
        if listen_addr is not None:
            self._listener = socket.create_server(listen_addr)
            th = threading.Thread(target=self._accept_loop, daemon=True)
            th.start()
            self._threads.append(th)

    @property
    def bound_port(self) -> Optional[int]:
        return self._listener.getsockname()[1] if self._listener else None

    def _accept_loop(self):
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            try:
                src = struct.unpack(">H", _recv_exact(conn, 2))[0]
            except TransportError:
                conn.close()
                continue
            th = threading.Thread(target=self._read_loop, args=(conn, src), daemon=True)
            th.start()
            self._threads.append(th)

    def _read_loop(self, conn: socket.socket, src: int):
        try:
            while True:
                env = read_frame(conn)
                self.meter.add(env.session_id, src, self.index, env.msg_type, env.wire_bytes)
                self._inbox.put((src, env))
        except TransportClosed:
            if not self._closed:
                self._inbox.put(_CLOSED)
        except OSError:
            pass

    def _connection(self, dst: int, retry_for: float = 10.0) -> socket.socket:
        with self._lock:
            sock = self._out.get(dst)
            if sock is None:
                addr = self._peers.get(dst)
                if addr is None:
                    raise TransportError(f"no address configured for party {dst}")
                deadline = time.monotonic() + retry_for
                while True:
                    try:
                        sock = socket.create_connection(addr, timeout=5)
                        break
                    except OSError as exc:
                        # peers come up in arbitrary order; retry until the deadline
                        if time.monotonic() >= deadline:
                            raise TransportError(
                                f"cannot reach party {dst} at {addr}: {exc}") from exc
                        time.sleep(0.05)
                sock.sendall(struct.pack(">H", self.index))
                self._out[dst] = sock
            return sock

    def send(self, dst: int, env: Envelope):
        if self._closed:
            raise TransportError("send on closed endpoint")
        sock = self._connection(dst)
        try:
            sock.sendall(env.to_frame())
        except OSError as exc:
            raise TransportError(f"send to party {dst} failed: {exc}") from exc
        self.meter.add(env.session_id, self.index, dst, env.msg_type, env.wire_bytes)
        self.transcript.add(self.index, dst, env)

    def recv(self, timeout: Optional[float] = None):
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is _CLOSED:
            raise TransportClosed("peer closed the connection")
        return item

    def close(self):
        self._closed = True
        if self._listener:
            self._listener.close()
        with self._lock:
            for sock in self._out.values():
                try:
                    sock.close()
                except OSError:
                    pass
            self._out.clear()
