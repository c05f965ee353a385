"""Client/server protocol for distributed lazy-Hessian cubic Newton.

One optimization round has every client upload its local gradient at the
current iterate plus one column of its local Hessian evaluated at a
frozen snapshot point; the server averages the reports in client-id
order, takes a cubic-regularized Newton step against the snapshot
Hessian it finished assembling one epoch earlier, and broadcasts the new
iterate.  Before the first step there are exactly dim warm-up rounds
that assemble the Hessian at the starting point column by column while
the iterate stays put.

Two transports implement the same schedule: an in-process loop (client
sessions called directly) and a localhost TCP mode (one thread per
client, length-prefixed binary frames).  Both are driven by the same
coordinator code and aggregate in the same order, so for a given
problem they produce bit-identical iterates; the TCP mode additionally
counts bytes on the wire.

Wire format: each frame is a 4-byte little-endian length (counting
everything after itself), a 1-byte tag, a 4-byte round index, a 4-byte
sender id (0 for the server), then the payload as little-endian IEEE-754
doubles.  A broadcast of a 2-vector is therefore 29 bytes on the wire
with a length field of 25.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, Union

import numpy as np

from . import numkit
from .cubic_solver import CubicModel, EpochCache, solve_cubic, solve_newton
from .numkit import NotPositiveDefinite

__all__ = [
    "ProtocolError",
    "Broadcast",
    "ClientReport",
    "WarmupReport",
    "Start",
    "Stop",
    "Hello",
    "Message",
    "encode_message",
    "decode_message",
    "RoundTraffic",
    "CommLedger",
    "LocalOracle",
    "ClientSession",
    "ServerConfig",
    "EpochSnapshot",
    "CoordinatorResult",
    "run_inprocess",
    "run_tcp",
]


class ProtocolError(RuntimeError):
    """Violation of the message schedule or a malformed/truncated frame."""


# ---------------------------------------------------------------------------
# messages and wire format

@dataclass(frozen=True)
class Broadcast:
    """Server -> clients: the iterate for the named round."""

    round: int
    x: np.ndarray


@dataclass(frozen=True)
class ClientReport:
    """Client -> server: gradient at the iterate plus one snapshot-Hessian
    column (the round index modulo dim selects the column)."""

    round: int
    client_id: int
    grad: np.ndarray
    hess_col: np.ndarray


@dataclass(frozen=True)
class WarmupReport:
    """Client -> server: one Hessian column at the starting point."""

    round: int
    client_id: int
    hess_col: np.ndarray


@dataclass(frozen=True)
class Start:
    """Server -> clients: run parameters and the starting point.

    Control message; its scalars are not charged to the communication
    ledger, which counts per-round optimization traffic only.
    """

    total_rounds: int
    M: float
    dim: int
    num_clients: int
    x0: np.ndarray


@dataclass(frozen=True)
class Stop:
    """Server -> clients: the run is over."""


@dataclass(frozen=True)
class Hello:
    """Client -> server: declares which shard id this connection serves."""

    client_id: int


Message = Union[Broadcast, ClientReport, WarmupReport, Start, Stop, Hello]

_TAG_BROADCAST = 1
_TAG_REPORT = 2
_TAG_WARMUP = 3
_TAG_START = 4
_TAG_STOP = 5
_TAG_HELLO = 6

# little-endian: tag byte, round, sender id (standard sizes, no padding)
_HEADER = struct.Struct("<BII")
_LENGTH = struct.Struct("<I")
_MAX_FRAME = 1 << 30


def _doubles_to_bytes(v: np.ndarray) -> bytes:
    return np.ascontiguousarray(v, dtype="<f8").tobytes()


def _bytes_to_doubles(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def encode_message(msg: Message) -> bytes:
    """Serialize one message to a complete frame (length prefix included)."""
    if isinstance(msg, Broadcast):
        tag, rnd, sender, payload = _TAG_BROADCAST, msg.round, 0, _doubles_to_bytes(msg.x)
    elif isinstance(msg, ClientReport):
        if np.shape(msg.grad) != np.shape(msg.hess_col):
            raise ProtocolError("report gradient and column lengths differ")
        tag, rnd, sender = _TAG_REPORT, msg.round, msg.client_id
        payload = _doubles_to_bytes(msg.grad) + _doubles_to_bytes(msg.hess_col)
    elif isinstance(msg, WarmupReport):
        tag, rnd, sender, payload = _TAG_WARMUP, msg.round, msg.client_id, _doubles_to_bytes(msg.hess_col)
    elif isinstance(msg, Start):
        tag, rnd, sender = _TAG_START, 0, 0
        head = np.array(
            [msg.total_rounds, msg.M, msg.dim, msg.num_clients], dtype=np.float64
        )
        payload = _doubles_to_bytes(head) + _doubles_to_bytes(msg.x0)
    elif isinstance(msg, Stop):
        tag, rnd, sender, payload = _TAG_STOP, 0, 0, b""
    elif isinstance(msg, Hello):
        tag, rnd, sender, payload = _TAG_HELLO, 0, msg.client_id, b""
    else:
        raise ProtocolError(f"cannot encode object of type {type(msg).__name__}")
    body = _HEADER.pack(tag, rnd, sender) + payload
    return _LENGTH.pack(len(body)) + body


def decode_message(frame: bytes) -> Message:
    """Parse one complete frame (as produced by encode_message)."""
    if len(frame) < _LENGTH.size + _HEADER.size:
        raise ProtocolError(f"frame too short: {len(frame)} bytes")
    (length,) = _LENGTH.unpack_from(frame, 0)
    if length != len(frame) - _LENGTH.size:
        raise ProtocolError(
            f"frame length field {length} does not match body of {len(frame) - _LENGTH.size}"
        )
    tag, rnd, sender = _HEADER.unpack_from(frame, _LENGTH.size)
    payload = frame[_LENGTH.size + _HEADER.size :]
    if len(payload) % 8 != 0:
        raise ProtocolError(f"payload of {len(payload)} bytes is not a whole number of doubles")
    values = _bytes_to_doubles(payload)
    if tag == _TAG_BROADCAST:
        if values.size == 0:
            raise ProtocolError("broadcast carries no iterate")
        return Broadcast(round=rnd, x=values)
    if tag == _TAG_REPORT:
        if values.size == 0 or values.size % 2 != 0:
            raise ProtocolError(f"report payload of {values.size} doubles is not 2*dim")
        half = values.size // 2
        return ClientReport(round=rnd, client_id=sender, grad=values[:half], hess_col=values[half:])
    if tag == _TAG_WARMUP:
        if values.size == 0:
            raise ProtocolError("warm-up report carries no column")
        return WarmupReport(round=rnd, client_id=sender, hess_col=values)
    if tag == _TAG_START:
        if values.size < 4:
            raise ProtocolError("start message missing parameters")
        total_rounds, m_weight, dim, num_clients = values[:4]
        x0 = values[4:]
        if x0.size != int(dim):
            raise ProtocolError(
                f"start message dim {int(dim)} does not match x0 of length {x0.size}"
            )
        return Start(
            total_rounds=int(total_rounds),
            M=float(m_weight),
            dim=int(dim),
            num_clients=int(num_clients),
            x0=x0,
        )
    if tag == _TAG_STOP:
        return Stop()
    if tag == _TAG_HELLO:
        return Hello(client_id=sender)
    raise ProtocolError(f"unknown message tag {tag}")


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = bytearray()
    while len(buf) < count:
        try:
            chunk = sock.recv(count - len(buf))
        except socket.timeout:
            raise ProtocolError("timed out waiting for a frame") from None
        if not chunk:
            raise ProtocolError(
                f"connection closed mid-frame ({len(buf)} of {count} bytes received)"
            )
        buf.extend(chunk)
    return bytes(buf)


def send_message(sock: socket.socket, msg: Message) -> int:
    frame = encode_message(msg)
    sock.sendall(frame)
    return len(frame)


def recv_message(sock: socket.socket) -> tuple[Message, int]:
    raw_len = _recv_exact(sock, _LENGTH.size)
    (length,) = _LENGTH.unpack(raw_len)
    if length < _HEADER.size or length > _MAX_FRAME:
        raise ProtocolError(f"invalid frame length {length}")
    body = _recv_exact(sock, length)
    return decode_message(raw_len + body), _LENGTH.size + length


# ---------------------------------------------------------------------------
# communication ledger

@dataclass(frozen=True)
class RoundTraffic:
    """Exact traffic counts for one round.

    Scalar counts are doubles in optimization payloads: upstream sums
    over clients, downstream counts each broadcast payload once.
    Message counts are physical frames (a broadcast to n clients is n
    frames).  Byte counts are zero for the in-process transport.
    """

    round: int
    up_scalars: int
    down_scalars: int
    up_messages: int
    down_messages: int
    up_bytes: int = 0
    down_bytes: int = 0


class CommLedger:
    """Per-round and cumulative communication accounting."""

    def __init__(self):
        self.rounds: list[RoundTraffic] = []
        self.control_bytes = 0  # Start/Stop/Hello frames (TCP only)

    def record(self, traffic: RoundTraffic) -> None:
        self.rounds.append(traffic)

    @property
    def up_scalars(self) -> int:
        return sum(r.up_scalars for r in self.rounds)

    @property
    def down_scalars(self) -> int:
        return sum(r.down_scalars for r in self.rounds)

    @property
    def up_messages(self) -> int:
        return sum(r.up_messages for r in self.rounds)

    @property
    def down_messages(self) -> int:
        return sum(r.down_messages for r in self.rounds)

    @property
    def up_bytes(self) -> int:
        return sum(r.up_bytes for r in self.rounds)

    @property
    def down_bytes(self) -> int:
        return sum(r.down_bytes for r in self.rounds)

    def totals(self) -> dict[str, int]:
        return {
            "rounds": len(self.rounds),
            "up_scalars": self.up_scalars,
            "down_scalars": self.down_scalars,
            "up_messages": self.up_messages,
            "down_messages": self.down_messages,
            "up_bytes": self.up_bytes,
            "down_bytes": self.down_bytes,
            "control_bytes": self.control_bytes,
        }


# ---------------------------------------------------------------------------
# client side

class LocalOracle:
    """The only view of a shard the protocol hands to a client session.

    Exposes value, gradient, and single Hessian columns; nothing on this
    surface returns a dim x dim object, which keeps every implementation
    honest about per-round communication being O(dim).
    """

    def __init__(self, shard):
        self._shard = shard
        self.dim = shard.dim

    def value(self, x) -> float:
        return self._shard.value(x)

    def gradient(self, x) -> np.ndarray:
        return self._shard.gradient(x)

    def hessian_column(self, x, j: int) -> np.ndarray:
        return self._shard.hessian_column(x, j)


class ClientSession:
    """Transport-agnostic client state machine.

    handle(message) -> list of replies.  On Start the session emits all
    dim warm-up columns plus the first main-round report immediately
    (the iterate is still the starting point, so nothing has to wait for
    a broadcast); afterwards every Broadcast for a non-final round
    yields exactly one report.
    """

    def __init__(self, client_id: int, oracle):
        if client_id < 0:
            raise ValueError("client id must be nonnegative")
        self.client_id = int(client_id)
        self.oracle = oracle
        self.x: np.ndarray | None = None
        self.snapshot: np.ndarray | None = None
        self.dim = 0
        self.total_rounds = 0
        self.next_broadcast = 0
        self.done = False

    def _report(self, k: int) -> ClientReport:
        col = self.oracle.hessian_column(self.snapshot, k % self.dim)
        return ClientReport(
            round=k,
            client_id=self.client_id,
            grad=self.oracle.gradient(self.x),
            hess_col=col,
        )

    def handle(self, msg: Message) -> list[Message]:
        if isinstance(msg, Start):
            if self.x is not None:
                raise ProtocolError(f"client {self.client_id}: duplicate start")
            if msg.dim != self.oracle.dim:
                raise ProtocolError(
                    f"client {self.client_id}: server dim {msg.dim} != shard dim {self.oracle.dim}"
                )
            if msg.total_rounds <= msg.dim:
                raise ProtocolError(
                    f"need more than {msg.dim} total rounds for any step, got {msg.total_rounds}"
                )
            self.dim = msg.dim
            self.total_rounds = msg.total_rounds
            self.x = numkit.as_vector(msg.x0, self.dim).copy()
            self.snapshot = self.x.copy()
            out: list[Message] = [
                WarmupReport(
                    round=k,
                    client_id=self.client_id,
                    hess_col=self.oracle.hessian_column(self.x, k),
                )
                for k in range(self.dim)
            ]
            # the first main round runs at the starting point, which is
            # never broadcast; report it right away
            out.append(self._report(self.dim))
            self.next_broadcast = self.dim + 1
            return out
        if isinstance(msg, Broadcast):
            if self.x is None:
                raise ProtocolError(f"client {self.client_id}: broadcast before start")
            if msg.round != self.next_broadcast:
                raise ProtocolError(
                    f"client {self.client_id}: expected broadcast round "
                    f"{self.next_broadcast}, got {msg.round}"
                )
            self.next_broadcast += 1
            self.x = numkit.as_vector(msg.x, self.dim).copy()
            if msg.round % self.dim == 0:
                self.snapshot = self.x.copy()
            if msg.round <= self.total_rounds - 1:
                return [self._report(msg.round)]
            return []
        if isinstance(msg, Stop):
            self.done = True
            return []
        raise ProtocolError(
            f"client {self.client_id}: unexpected message {type(msg).__name__}"
        )


# ---------------------------------------------------------------------------
# links: how the coordinator talks to one client

class Link(Protocol):
    def send(self, msg: Message) -> None: ...

    def recv(self) -> Message: ...

    bytes_sent: int
    bytes_received: int


class InProcessLink:
    """Drives a ClientSession directly; replies queue up in arrival order."""

    def __init__(self, session: ClientSession):
        self.session = session
        self.inbox: list[Message] = []
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, msg: Message) -> None:
        self.inbox.extend(self.session.handle(msg))

    def recv(self) -> Message:
        if not self.inbox:
            raise ProtocolError(
                f"client {self.session.client_id} produced no reply when one was expected"
            )
        return self.inbox.pop(0)


class SocketLink:
    """Server-side handle on one connected client."""

    def __init__(self, conn: socket.socket, client_id: int):
        self.conn = conn
        self.client_id = client_id
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, msg: Message) -> None:
        self.bytes_sent += send_message(self.conn, msg)

    def recv(self) -> Message:
        msg, nbytes = recv_message(self.conn)
        self.bytes_received += nbytes
        return msg


# ---------------------------------------------------------------------------
# coordinator

@dataclass(frozen=True)
class ServerConfig:
    """Parameters the coordinator needs to run a schedule."""

    dim: int
    num_clients: int
    total_rounds: int
    M: float  # cubic weight; 0 switches to plain Newton steps
    x0: np.ndarray
    grad_tol: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if self.num_clients < 1:
            raise ValueError("need at least one client")
        if self.total_rounds <= self.dim:
            raise ValueError(
                f"total_rounds must exceed dim={self.dim} (warm-up uses dim rounds); "
                f"got {self.total_rounds}"
            )
        if self.M < 0.0:
            raise ValueError("cubic weight must be nonnegative")
        object.__setattr__(self, "x0", numkit.as_vector(self.x0, self.dim))


@dataclass(frozen=True)
class EpochSnapshot:
    """Record of one Hessian promotion, for staleness verification.

    hessian became active at promotion_round; its columns were reported
    at hessian_point, which trails the promotion by exactly one epoch.
    report_point is where this epoch's fresh columns are being evaluated.
    """

    promotion_round: int
    hessian: np.ndarray
    hessian_point: np.ndarray
    report_point: np.ndarray


@dataclass
class CoordinatorResult:
    final_x: np.ndarray
    ledger: CommLedger
    snapshots: list[EpochSnapshot]
    stopped_early: bool = False
    stop_round: int | None = None


def _expect(msg: Message, kind, rnd: int, client_id: int) -> Message:
    if not isinstance(msg, kind):
        raise ProtocolError(
            f"round {rnd}: expected {kind.__name__} from client {client_id}, "
            f"got {type(msg).__name__}"
        )
    if msg.round != rnd:
        raise ProtocolError(
            f"expected a report for round {rnd} from client {client_id}, "
            f"got round {msg.round}"
        )
    if msg.client_id != client_id:
        raise ProtocolError(
            f"round {rnd}: report from client {msg.client_id} arrived on "
            f"client {client_id}'s link"
        )
    return msg


def run_coordinator(
    cfg: ServerConfig,
    links: Sequence[Link],
    on_iterate: Callable[[int, np.ndarray], None] | None = None,
    record_snapshots: bool = False,
) -> CoordinatorResult:
    """Drive the full schedule over any set of links.

    on_iterate(k, x_k) fires once with the starting point and then once
    after every completed round; traffic recorded so far is exactly the
    traffic of rounds before k.
    """
    if len(links) != cfg.num_clients:
        raise ValueError(f"expected {cfg.num_clients} links, got {len(links)}")
    d, n, total = cfg.dim, cfg.num_clients, cfg.total_rounds
    ledger = CommLedger()
    snapshots: list[EpochSnapshot] = []
    cache = EpochCache()

    def phase_bytes():
        return (
            sum(l.bytes_sent for l in links),
            sum(l.bytes_received for l in links),
        )

    sent0, recv0 = phase_bytes()
    start = Start(total_rounds=total, M=cfg.M, dim=d, num_clients=n, x0=cfg.x0)
    for link in links:
        link.send(start)
    sent1, _ = phase_bytes()
    ledger.control_bytes += sent1 - sent0

    x = cfg.x0.copy()
    if on_iterate is not None:
        on_iterate(0, x)

    h_next = np.zeros((d, d))
    report_point = cfg.x0.copy()  # where h_next's columns are evaluated
    h_active: np.ndarray | None = None

    for k in range(d):
        _, b0 = phase_bytes()
        cols = []
        for i, link in enumerate(links):
            msg = _expect(link.recv(), WarmupReport, k, i)
            if msg.hess_col.shape != (d,):
                raise ProtocolError(f"round {k}: warm-up column has wrong length")
            cols.append(msg.hess_col)
        _, b1 = phase_bytes()
        h_next[:, k] = numkit.mean_in_order(cols)
        ledger.record(
            RoundTraffic(
                round=k,
                up_scalars=n * d,
                down_scalars=0,
                up_messages=n,
                down_messages=0,
                up_bytes=b1 - b0,
            )
        )
        if on_iterate is not None:
            on_iterate(k + 1, x)

    stopped_early = False
    stop_round: int | None = None
    decomp = None
    for k in range(d, total):
        if k % d == 0:
            hessian_point = report_point
            report_point = x.copy()
            h_active = h_next
            h_next = np.zeros((d, d))
            decomp = cache.for_epoch(k // d, h_active)
            if record_snapshots:
                snapshots.append(
                    EpochSnapshot(
                        promotion_round=k,
                        hessian=h_active.copy(),
                        hessian_point=hessian_point.copy(),
                        report_point=report_point.copy(),
                    )
                )
        _, b0 = phase_bytes()
        grads, cols = [], []
        for i, link in enumerate(links):
            msg = _expect(link.recv(), ClientReport, k, i)
            if msg.grad.shape != (d,) or msg.hess_col.shape != (d,):
                raise ProtocolError(f"round {k}: report payload has wrong length")
            grads.append(msg.grad)
            cols.append(msg.hess_col)
        _, b1 = phase_bytes()
        g = numkit.mean_in_order(grads)
        col_mean = numkit.mean_in_order(cols)

        if float(np.linalg.norm(g)) <= cfg.grad_tol:
            stopped_early = True
            stop_round = k
            ledger.record(
                RoundTraffic(
                    round=k,
                    up_scalars=2 * n * d,
                    down_scalars=0,
                    up_messages=n,
                    down_messages=0,
                    up_bytes=b1 - b0,
                )
            )
            break

        try:
            if cfg.M > 0.0:
                sol = solve_cubic(CubicModel(g=g, H=h_active, M=cfg.M, anchor=x), decomp)
            else:
                sol = solve_newton(g, h_active, x, decomp)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(f"round {k}: {exc}") from None
        x = sol.point
        h_next[:, k % d] = col_mean

        s0, _ = phase_bytes()
        bcast = Broadcast(round=k + 1, x=x)
        for link in links:
            link.send(bcast)
        s1, _ = phase_bytes()
        ledger.record(
            RoundTraffic(
                round=k,
                up_scalars=2 * n * d,
                down_scalars=d,
                up_messages=n,
                down_messages=n,
                up_bytes=b1 - b0,
                down_bytes=s1 - s0,
            )
        )
        if on_iterate is not None:
            on_iterate(k + 1, x)

    s0, _ = phase_bytes()
    for link in links:
        link.send(Stop())
    s1, _ = phase_bytes()
    ledger.control_bytes += s1 - s0

    return CoordinatorResult(
        final_x=x,
        ledger=ledger,
        snapshots=snapshots,
        stopped_early=stopped_early,
        stop_round=stop_round,
    )


# ---------------------------------------------------------------------------
# transports

def run_inprocess(
    client_oracles: Sequence,
    cfg: ServerConfig,
    on_iterate: Callable[[int, np.ndarray], None] | None = None,
    record_snapshots: bool = False,
) -> CoordinatorResult:
    """Run the schedule with all clients in this process."""
    links = [
        InProcessLink(ClientSession(i, oracle))
        for i, oracle in enumerate(client_oracles)
    ]
    return run_coordinator(cfg, links, on_iterate=on_iterate, record_snapshots=record_snapshots)


def _client_worker(host: str, port: int, session: ClientSession, timeout: float, errors: list):
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(timeout)
            send_message(sock, Hello(client_id=session.client_id))
            while not session.done:
                msg, _ = recv_message(sock)
                for reply in session.handle(msg):
                    send_message(sock, reply)
    except Exception as exc:  # surfaced after join by the driver
        errors.append((session.client_id, exc))


def run_tcp(
    client_oracles: Sequence,
    cfg: ServerConfig,
    host: str = "127.0.0.1",
    port: int = 0,
    timeout: float = 30.0,
    on_iterate: Callable[[int, np.ndarray], None] | None = None,
    record_snapshots: bool = False,
) -> CoordinatorResult:
    """Run the schedule over localhost TCP, one thread per client.

    port=0 picks a free ephemeral port.  Any worker failure or dropped
    connection surfaces as a ProtocolError naming the round.
    """
    n = cfg.num_clients
    if len(client_oracles) != n:
        raise ValueError(f"expected {n} client oracles, got {len(client_oracles)}")
    errors: list[tuple[int, Exception]] = []
    threads: list[threading.Thread] = []
    conns: list[socket.socket] = []
    server_sock = socket.create_server((host, port))
    try:
        server_sock.settimeout(timeout)
        actual_port = server_sock.getsockname()[1]
        for i, oracle in enumerate(client_oracles):
            session = ClientSession(i, oracle)
            t = threading.Thread(
                target=_client_worker,
                args=(host, actual_port, session, timeout, errors),
                name=f"client-{i}",
                daemon=True,
            )
            t.start()
            threads.append(t)

        hello_bytes = 0
        by_id: dict[int, socket.socket] = {}
        for _ in range(n):
            try:
                conn, _addr = server_sock.accept()
            except socket.timeout:
                raise ProtocolError("timed out waiting for client connections") from None
            conns.append(conn)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(timeout)
            msg, nbytes = recv_message(conn)
            hello_bytes += nbytes
            if not isinstance(msg, Hello):
                raise ProtocolError(f"expected Hello, got {type(msg).__name__}")
            if msg.client_id in by_id:
                raise ProtocolError(f"duplicate client id {msg.client_id}")
            by_id[msg.client_id] = conn
        if sorted(by_id) != list(range(n)):
            raise ProtocolError(f"client ids {sorted(by_id)} do not cover 0..{n - 1}")

        links = [SocketLink(by_id[i], i) for i in range(n)]
        result = run_coordinator(
            cfg, links, on_iterate=on_iterate, record_snapshots=record_snapshots
        )
        result.ledger.control_bytes += hello_bytes
        for t in threads:
            t.join(timeout=timeout)
        if errors:
            cid, exc = errors[0]
            raise ProtocolError(f"client {cid} failed: {exc}") from exc
        return result
    finally:
        for conn in conns:
            conn.close()
        server_sock.close()
