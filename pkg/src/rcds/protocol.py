"""Two-party synchronization session.

A session runs over one ordered link:

1. handshake: ``HELLO`` / ``HELLO_ACK`` fix tree parameters, salt and
   direction and carry the source's length and hash (``VERIFY`` for push);
2. both sides build their partition trees and reconcile shingle sets;
3. each receiving side ("sink") requests the hashes it cannot resolve and the
   sending side ("source") answers with literals or composition records;
4. the sink rebuilds the string bottom-up and reports ``VERIFY`` or
   ``VERIFY_FAIL``; a failure may be followed by a whole-file transfer;
5. the server closes with ``DONE``.

In ``both`` mode the two transfers share every phase and, during the answer
phase, alternate one response at a time (server first).
"""

import secrets
import struct
import threading
import time
from dataclasses import dataclass, field

from .backtrack import DEFAULT_BUDGET, LevelGraph, CompositionInfo, compose, reconstruct
from .errors import (MaxRoundsExceeded, ParamMismatch, RecoverableSyncError, SyncFailed,
                     UnknownHash, VerifyMismatch)
from .setrecon import MAX_DOUBLINGS, IbltEngine, reconcile_sets
from .shingle import apply_delta, tree_to_shingles, unknown_hashes
from .transport import Frame, Kind, receive_chunked, send_chunked
from .tree import TreeParams, build_tree, hash64, iter_nodes, tree_stats

MAGIC = b"RCDS"
VERSION = 1
HELLO = struct.Struct(">4sBBHHQB")
DIGEST = struct.Struct(">QQ")
REQUEST_ENTRY = struct.Struct(">QB")

DIRECTIONS = {"pull": 1, "push": 2, "both": 3, "dir": 4, "dir-paranoid": 5}
_DIRECTION_NAMES = {v: k for k, v in DIRECTIONS.items()}
FILE_DIRECTIONS = ("pull", "push", "both")

PHASES = ("hello", "estimate", "iblt", "requests", "literals", "composition",
          "verify", "fallback")
_PHASE_OF = {
    Kind.HELLO: "hello", Kind.HELLO_ACK: "hello", Kind.DONE: "hello",
    Kind.ESTIMATE: "estimate",
    Kind.IBLT_ROUND: "iblt", Kind.DELTA_ACK: "iblt",
    Kind.HASH_REQUEST: "requests",
    Kind.HASH_RESPONSE_LITERAL: "literals",
    Kind.HASH_RESPONSE_COMPOSED: "composition",
    Kind.VERIFY: "verify", Kind.VERIFY_FAIL: "verify",
    Kind.FULL_TRANSFER: "fallback",
}


@dataclass
class SessionConfig:
    """Per-side session settings.

    ``tree`` of ``None`` on a server means "adopt whatever the client asks
    for".  ``salt`` of ``None`` on a client draws a fresh random salt.
    """
    tree: TreeParams = field(default_factory=TreeParams)
    salt: int = None
    direction: str = "pull"
    fallback_allowed: bool = True
    max_doublings: int = MAX_DOUBLINGS
    backtrack_budget: int = DEFAULT_BUDGET
    table_size: int = None  # fixed first IBLT size; None sizes it from an estimate

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass
class SyncReport:
    role: str
    direction: str = "pull"
    bytes_sent: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))
    bytes_received: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))
    times: dict = field(default_factory=dict)
    partitions_total: int = 0
    partitions_remote: int = 0
    partitions_unmatched: int = 0
    literal_bytes: int = 0
    rounds: int = 0
    table_sizes: list = field(default_factory=list)
    estimate: float = None
    fallback_used: bool = False
    backtrack_visits: int = 0
    max_duplication: int = 1
    failure: str = None

    @property
    def total_sent(self) -> int:
        return sum(self.bytes_sent.values())

    @property
    def total_received(self) -> int:
        return sum(self.bytes_received.values())

    @property
    def total_bytes(self) -> int:
        return self.total_sent + self.total_received

    @property
    def unmatched_fraction(self) -> float:
        return self.partitions_unmatched / self.partitions_remote if self.partitions_remote else 0.0

    def phase_bytes(self, phase: str) -> int:
        return self.bytes_sent[phase] + self.bytes_received[phase]

    def format_text(self) -> str:
        lines = [f"role {self.role}, direction {self.direction}"]
        for phase in PHASES:
            if self.phase_bytes(phase):
                lines.append(f"  {phase:<12} sent {self.bytes_sent[phase]:>12,}"
                             f"  received {self.bytes_received[phase]:>12,}")
        lines.append(f"  {'total':<12} sent {self.total_sent:>12,}"
                     f"  received {self.total_received:>12,}")
        lines.append(f"  partitions {self.partitions_total} local, "
                     f"{self.partitions_unmatched} unmatched remote")
        lines.append(f"  reconciliation rounds {self.rounds}, fallback "
                     f"{'used' if self.fallback_used else 'not used'}")
        if self.times:
            lines.append("  time " + ", ".join(f"{k} {v:.3f}s" for k, v in self.times.items()))
        return "\n".join(lines)


class MeteredLink:
    """Wraps a transport and books every frame under its protocol phase."""

    def __init__(self, link, report: SyncReport):
        self.link = link
        self.report = report

    @property
    def max_payload(self):
        return self.link.max_payload

    def send(self, frame: Frame) -> None:
        self.link.send(frame)
        self.report.bytes_sent[_PHASE_OF[frame.base_kind]] += frame.wire_size

    def receive(self) -> Frame:
        frame = self.link.receive()
        self.report.bytes_received[_PHASE_OF[frame.base_kind]] += frame.wire_size
        return frame

    def expect(self, *kinds) -> Frame:
        frame = self.receive()
        if frame.base_kind not in kinds:
            names = "/".join(k.name for k in kinds)
            raise ConnectionError(f"expected {names}, got {frame.base_kind.name}")
        return frame


# -- small codecs ------------------------------------------------------------

def digest(data) -> tuple:
    return len(data), hash64(data)


def encode_hello(params: TreeParams, salt: int, direction: str, path: str = None) -> bytes:
    head = HELLO.pack(MAGIC, VERSION, params.levels, params.branch, params.window,
                      salt, DIRECTIONS[direction])
    return head + (path.encode("utf-8") if path is not None else b"")


def decode_hello(raw: bytes):
    """Returns ``(params, salt, direction, path)``; raises ParamMismatch on a bad header."""
    if len(raw) < HELLO.size:
        raise ParamMismatch(f"HELLO too short ({len(raw)} bytes)")
    magic, version, levels, branch, window, salt, code = HELLO.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ParamMismatch(f"unsupported protocol {magic!r} version {version}")
    if code not in _DIRECTION_NAMES:
        raise ParamMismatch(f"unknown direction code {code}")
    try:
        params = TreeParams(levels, branch, window)
    except ValueError as exc:
        raise ParamMismatch(str(exc)) from None
    path = raw[HELLO.size:].decode("utf-8") if len(raw) > HELLO.size else None
    return params, salt, _DIRECTION_NAMES[code], path


def encode_request(entries) -> bytes:
    out = bytearray(len(entries).to_bytes(4, "big"))
    for h, level in entries:
        out += REQUEST_ENTRY.pack(h, level)
    return bytes(out)


def decode_request(raw: bytes) -> list:
    count = int.from_bytes(raw[:4], "big")
    if len(raw) != 4 + count * REQUEST_ENTRY.size:
        raise ConnectionError("malformed HASH_REQUEST")
    return [REQUEST_ENTRY.unpack_from(raw, 4 + i * REQUEST_ENTRY.size) for i in range(count)]


def encode_failure(reason: str, want_fallback: bool = False) -> bytes:
    return bytes([1 if want_fallback else 0]) + reason.encode("utf-8", "replace")


def decode_failure(raw: bytes):
    return bool(raw[:1] == b"\x01"), raw[1:].decode("utf-8", "replace")


# -- source side ---------------------------------------------------------------

class Source:
    """Answers hash requests from a local tree."""

    def __init__(self, data, root, shingles, budget: int = DEFAULT_BUDGET):
        self.data = data
        self.shingles = shingles
        self.budget = budget
        self.nodes = {}
        for node in iter_nodes(root):
            self.nodes.setdefault((node.hash, node.level), node)
        self._graphs = {}
        self.visits = 0

    def graph(self, level: int) -> LevelGraph:
        g = self._graphs.get(level)
        if g is None:
            g = self._graphs[level] = LevelGraph(self.shingles.level(level), level, self.budget)
        return g

    def answer(self, h: int, level: int):
        """``("literal", bytes)`` for a leaf, ``("composed", CompositionInfo)`` otherwise."""
        node = self.nodes.get((h, level))
        if node is None:
            raise UnknownHash(f"no partition {h:#018x} at level {level}")
        if node.is_leaf:
            return "literal", memoryview(self.data)[node.start:node.end]
        g = self.graph(level + 1)
        info = compose([c.hash for c in node.children], g)
        self.visits += g.last_visits
        return "composed", info

    def prepare(self, request) -> list:
        """All answers, or a single ``("fail", reason)`` unit if any is unavailable."""
        try:
            return [(h,) + self.answer(h, level) for h, level in request]
        except RecoverableSyncError as exc:
            return [(0, "fail", f"{type(exc).__name__}: {exc}")]


def answer_hash_request(source: Source, request) -> list:
    return source.prepare(request)


def send_unit(link, unit) -> bool:
    """Send one prepared answer; returns False if it was a failure notice."""
    h, kind, body = unit
    prefix = h.to_bytes(8, "big")
    if kind == "literal":
        send_chunked(link, Kind.HASH_RESPONSE_LITERAL, body, prefix)
    elif kind == "composed":
        link.send(Frame(Kind.HASH_RESPONSE_COMPOSED, prefix + body.encode()))
    else:
        link.send(Frame(Kind.VERIFY_FAIL, encode_failure(body)))
        return False
    return True


# -- sink side -----------------------------------------------------------------

class Sink:
    """Collects answers and rebuilds the remote string."""

    def __init__(self, catalog, remote_set, request, budget: int = DEFAULT_BUDGET):
        self.catalog = catalog
        self.remote_set = remote_set
        self.request = request
        self.budget = budget
        self.composed = {}
        self.literal_bytes = 0
        self.visits = 0
        self.error = None

    def receive_unit(self, link) -> bool:
        """Read one answer; returns False if the source reported failure."""
        frame = link.expect(Kind.HASH_RESPONSE_LITERAL, Kind.HASH_RESPONSE_COMPOSED,
                            Kind.VERIFY_FAIL)
        if frame.base_kind == Kind.VERIFY_FAIL:
            self.error = "source: " + decode_failure(frame.payload)[1]
            return False
        if frame.base_kind == Kind.HASH_RESPONSE_COMPOSED:
            h = int.from_bytes(frame.payload[:8], "big")
            self.composed[h] = CompositionInfo.decode(frame.payload[8:])
            return True
        prefix, body = receive_chunked(link, frame, 8)
        h = int.from_bytes(prefix, "big")
        self.literal_bytes += len(body)
        if self.error is None:
            try:
                if hash64(body) != h:
                    raise VerifyMismatch(f"literal for {h:#018x} does not match its hash")
                self.catalog.insert(h, body)
            except RecoverableSyncError as exc:
                self.error = f"{type(exc).__name__}: {exc}"
        return True

    def rebuild(self, expected) -> bytes:
        """Resolve requested hashes deepest first and return the verified root."""
        if self.error is not None:
            raise VerifyMismatch(self.error)
        graphs = {}
        for h, level in self.request:
            if h in self.catalog:
                continue
            info = self.composed.get(h)
            if info is None:
                raise UnknownHash(f"no answer received for {h:#018x}")
            g = graphs.get(level + 1)
            if g is None:
                g = graphs[level + 1] = LevelGraph(self.remote_set.level(level + 1),
                                                   level + 1, self.budget)
            seq = reconstruct(info, g)
            self.visits += g.last_visits
            try:
                content = b"".join(self.catalog.lookup(c) for c in seq)
            except KeyError as exc:
                raise UnknownHash(f"child {exc.args[0]:#018x} unresolved") from None
            if hash64(content) != h:
                raise VerifyMismatch(f"rebuilt partition {h:#018x} does not match its hash")
            self.catalog.insert(h, content)
        roots = [sh.curr for sh in self.remote_set.level(0)]
        if len(roots) != 1:
            raise VerifyMismatch(f"remote shingle set has {len(roots)} roots")
        out = self.catalog.lookup(roots[0])
        if digest(out) != tuple(expected):
            raise VerifyMismatch("rebuilt string does not match the source digest")
        return out


# -- session -------------------------------------------------------------------

@dataclass
class _Transfer:
    """One direction of data flow; ``mine`` says which end this side plays."""
    mine: str               # "source" or "sink"
    expected: tuple = None  # sink: source digest
    request: list = None
    units: list = None      # source: prepared answers
    sink: Sink = None
    failed: str = None
    want_fallback: bool = False
    result: bytes = None


def _transfers(direction: str, is_client: bool) -> list:
    flows = {"pull": ["server"], "push": ["client"], "both": ["server", "client"]}[direction]
    me = "client" if is_client else "server"
    return [_Transfer("source" if sender == me else "sink") for sender in flows]


class _Session:
    def __init__(self, data, params, salt, direction, cfg, link, report, is_client):
        self.data = data
        self.params = params
        self.salt = salt
        self.direction = direction
        self.cfg = cfg
        self.link = link
        self.report = report
        self.is_client = is_client
        self.transfers = _transfers(direction, is_client)

    def _clock(self, name, start):
        self.report.times[name] = self.report.times.get(name, 0.0) + time.perf_counter() - start

    def run(self, peer_digest) -> bytes:
        for t in self.transfers:
            if t.mine == "sink":
                t.expected = peer_digest
        rep = self.report

        t0 = time.perf_counter()
        root, catalog = build_tree(self.data, self.params)
        shingles = tree_to_shingles(root)
        stats = tree_stats(root)
        rep.partitions_total = stats["nodes"]
        rep.max_duplication = stats["max_duplication"]
        self._clock("tree", t0)

        t0 = time.perf_counter()
        engine = IbltEngine(self.salt, max_doublings=self.cfg.max_doublings,
                            initial_size=self.cfg.table_size)
        recon_failed = None
        try:
            mine, theirs = reconcile_sets(shingles, self.link,
                                          "initiator" if self.is_client else "responder", engine)
        except MaxRoundsExceeded as exc:
            recon_failed = f"set reconciliation failed: {exc}"
        rep.rounds = engine.stats.rounds
        rep.table_sizes = list(engine.stats.table_sizes)
        rep.estimate = engine.stats.estimate
        self._clock("setrecon", t0)

        if recon_failed:
            for t in self.transfers:
                t.failed = recon_failed
        else:
            self._exchange(shingles, catalog, root, mine, theirs)
        self._verify()
        self._fallback()
        if self.is_client:
            self.link.expect(Kind.DONE)
        else:
            self.link.send(Frame(Kind.DONE))
        results = [t.result for t in self.transfers if t.mine == "sink"]
        return results[0] if results else bytes(self.data)

    def _exchange(self, shingles, catalog, root, mine, theirs):
        rep = self.report
        t0 = time.perf_counter()
        for t in self.transfers:
            if t.mine != "sink":
                continue
            try:
                remote = apply_delta(shingles, mine, theirs)
                t.request = unknown_hashes(remote, catalog)
            except RecoverableSyncError as exc:
                t.failed = f"{type(exc).__name__}: {exc}"
                remote, t.request = None, []
            t.sink = Sink(catalog, remote, t.request, self.cfg.backtrack_budget)
            if remote is not None:
                rep.partitions_remote = len(remote)
                rep.partitions_unmatched = len(t.request)
        self._clock("delta", t0)

        # requests, in transfer order
        for t in self.transfers:
            if t.mine == "sink":
                self.link.send(Frame(Kind.HASH_REQUEST, encode_request(t.request)))
            else:
                t.request = decode_request(self.link.expect(Kind.HASH_REQUEST).payload)
                t0 = time.perf_counter()
                source = Source(self.data, root, shingles, self.cfg.backtrack_budget)
                t.units = answer_hash_request(source, t.request)
                rep.backtrack_visits += source.visits
                self._clock("compose", t0)

        # answers, one unit per transfer per turn
        t0 = time.perf_counter()
        pending = {id(t): len(t.request) for t in self.transfers}
        turn = 0
        while any(turn < n for n in pending.values()):
            for t in self.transfers:
                if turn >= pending[id(t)]:
                    continue
                if t.mine == "source":
                    unit = t.units[turn]
                    if unit[1] == "literal":
                        rep.literal_bytes += len(unit[2])
                    ok = send_unit(self.link, unit)
                    if not ok:
                        t.failed = unit[2]
                else:
                    ok = t.sink.receive_unit(self.link)
                    if not ok:
                        t.failed = t.sink.error
                if not ok:
                    pending[id(t)] = 0
            turn += 1
        self._clock("answers", t0)

        t0 = time.perf_counter()
        for t in self.transfers:
            if t.mine == "sink" and t.failed is None:
                rep.literal_bytes += t.sink.literal_bytes
                try:
                    t.result = t.sink.rebuild(t.expected)
                except RecoverableSyncError as exc:
                    t.failed = f"{type(exc).__name__}: {exc}"
                rep.backtrack_visits += t.sink.visits
        self._clock("reconstruct", t0)

    def _verify(self):
        t0 = time.perf_counter()
        mine = digest(self.data)
        for t in self.transfers:
            if t.mine == "sink":
                if t.failed is None:
                    self.link.send(Frame(Kind.VERIFY, DIGEST.pack(*digest(t.result))))
                else:
                    self.link.send(Frame(Kind.VERIFY_FAIL,
                                         encode_failure(t.failed, self.cfg.fallback_allowed)))
            else:
                frame = self.link.expect(Kind.VERIFY, Kind.VERIFY_FAIL)
                if frame.base_kind == Kind.VERIFY:
                    if DIGEST.unpack(frame.payload) != mine:
                        raise SyncFailed("peer confirmed a digest that differs from the source")
                else:
                    want, reason = decode_failure(frame.payload)
                    t.failed = reason
                    t.want_fallback = want
        self._clock("verify", t0)

    def _fallback(self):
        t0 = time.perf_counter()
        for t in self.transfers:
            if t.failed is None:
                continue
            if t.mine == "source":
                if not (t.want_fallback and self.cfg.fallback_allowed):
                    self.link.send(Frame(Kind.VERIFY_FAIL, encode_failure("fallback refused")))
                    raise SyncFailed(f"synchronization failed: {t.failed}")
                send_chunked(self.link, Kind.FULL_TRANSFER, memoryview(self.data))
                self.report.fallback_used = True
                frame = self.link.expect(Kind.VERIFY, Kind.VERIFY_FAIL)
                if frame.base_kind == Kind.VERIFY_FAIL:
                    raise SyncFailed("peer rejected the full transfer: "
                                     + decode_failure(frame.payload)[1])
            else:
                if not self.cfg.fallback_allowed:
                    self.link.expect(Kind.VERIFY_FAIL)
                    raise SyncFailed(f"synchronization failed: {t.failed}")
                frame = self.link.expect(Kind.FULL_TRANSFER, Kind.VERIFY_FAIL)
                if frame.base_kind == Kind.VERIFY_FAIL:
                    raise SyncFailed(f"synchronization failed ({t.failed}); "
                                     "peer refused full transfer")
                _, body = receive_chunked(self.link, frame)
                self.report.fallback_used = True
                self.report.literal_bytes += len(body)
                if digest(body) != tuple(t.expected):
                    self.link.send(Frame(Kind.VERIFY_FAIL, encode_failure("digest mismatch")))
                    raise SyncFailed("full transfer does not match the source digest")
                self.link.send(Frame(Kind.VERIFY, DIGEST.pack(*digest(body))))
                t.result = body
                t.failed = None
        self._clock("fallback", t0)


# -- entry points ----------------------------------------------------------------

def client_handshake(link, cfg: SessionConfig, data, path: str = None,
                     direction: str = None):
    """Send HELLO and read HELLO_ACK; returns ``(params, salt, server_digest)``."""
    direction = direction or cfg.direction
    salt = cfg.salt if cfg.salt is not None else secrets.randbits(64)
    link.send(Frame(Kind.HELLO, encode_hello(cfg.tree, salt, direction, path)))
    frame = link.expect(Kind.HELLO_ACK, Kind.VERIFY_FAIL)
    if frame.base_kind == Kind.VERIFY_FAIL:
        raise ParamMismatch("server rejected session: " + decode_failure(frame.payload)[1])
    params, echoed_salt, echoed_dir, _ = decode_hello(frame.payload[:HELLO.size])
    if params != cfg.tree or echoed_salt != salt or echoed_dir != direction:
        raise ParamMismatch(f"server answered with {params}, expected {cfg.tree}")
    server_digest = DIGEST.unpack(frame.payload[HELLO.size:])
    if direction in ("push", "both"):
        link.send(Frame(Kind.VERIFY, DIGEST.pack(*digest(data))))
    return params, salt, server_digest


def run_client(data, cfg: SessionConfig, link, path: str = None):
    """Client end of a file session; returns ``(final_data, report)``."""
    if cfg.direction not in FILE_DIRECTIONS:
        raise ValueError(f"file sessions support {FILE_DIRECTIONS}, got {cfg.direction!r}")
    report = SyncReport("client", cfg.direction)
    mlink = MeteredLink(link, report)
    t0 = time.perf_counter()
    params, salt, server_digest = client_handshake(mlink, cfg, data, path)
    session = _Session(data, params, salt, cfg.direction, cfg, mlink, report, True)
    out = session.run(server_digest)
    report.times["total"] = time.perf_counter() - t0
    return out, report


def serve_session(data, cfg: SessionConfig, link, hello: Frame = None):
    """Server end of a file session; ``hello`` may already have been read."""
    report = SyncReport("server")
    mlink = MeteredLink(link, report)
    t0 = time.perf_counter()
    if hello is None:
        hello = mlink.expect(Kind.HELLO)
    else:
        report.bytes_received["hello"] += hello.wire_size
    try:
        params, salt, direction, _ = decode_hello(hello.payload)
        if direction not in FILE_DIRECTIONS:
            raise ParamMismatch(f"this server does not handle {direction!r} sessions")
        if cfg.tree is not None and params != cfg.tree:
            raise ParamMismatch(f"client asked for {params}, server requires {cfg.tree}")
    except ParamMismatch as exc:
        mlink.send(Frame(Kind.VERIFY_FAIL, encode_failure(str(exc))))
        raise
    report.direction = direction
    mlink.send(Frame(Kind.HELLO_ACK, encode_hello(params, salt, direction)
                     + DIGEST.pack(*digest(data))))
    client_digest = None
    if direction in ("push", "both"):
        client_digest = DIGEST.unpack(mlink.expect(Kind.VERIFY).payload)
    session = _Session(data, params, salt, direction, cfg, mlink, report, False)
    out = session.run(client_digest)
    report.times["total"] = time.perf_counter() - t0
    return out, report


def run_session(local_data, cfg: SessionConfig, link, role: str):
    """Run one side of a file session; returns ``(final_data, report)``.

    ``final_data`` is the string this side holds afterwards: the peer's
    string if it received one, its own otherwise.
    """
    if role == "client":
        return run_client(local_data, cfg, link)
    if role == "server":
        return serve_session(local_data, cfg, link)
    raise ValueError(f"role must be client or server, got {role!r}")


def run_pair(client_fn, server_fn, timeout: float = 120.0, max_payload: int = None):
    """Run two session callables against a loopback pair, server in a thread.

    Each callable receives its transport.  Returns ``(client_result,
    server_result)``; an exception on either side closes both links and is
    re-raised (the client's first).
    """
    from .transport import MAX_PAYLOAD, loopback_pair

    c_link, s_link = loopback_pair(max_payload or MAX_PAYLOAD, timeout=timeout)
    box = {}

    def serve():
        try:
            box["result"] = server_fn(s_link)
        except BaseException as exc:  # reported to the caller below
            box["error"] = exc
            s_link.close()

    th = threading.Thread(target=serve, daemon=True)
    th.start()
    try:
        client_result = client_fn(c_link)
    except BaseException:
        c_link.close()
        th.join(timeout)
        raise
    th.join(timeout)
    if "error" in box:
        raise box["error"]
    return client_result, box.get("result")


def sync_loopback(client_data, server_data, cfg: SessionConfig = None,
                  server_cfg: SessionConfig = None, max_payload: int = None):
    """Convenience wrapper: ``((client_final, client_report), (server_final, server_report))``."""
    cfg = cfg or SessionConfig()
    server_cfg = server_cfg or SessionConfig(tree=cfg.tree, direction=cfg.direction,
                                             fallback_allowed=cfg.fallback_allowed,
                                             max_doublings=cfg.max_doublings,
                                             backtrack_budget=cfg.backtrack_budget,
                                             table_size=cfg.table_size)
    return run_pair(lambda link: run_client(client_data, cfg, link),
                    lambda link: serve_session(server_data, server_cfg, link),
                    max_payload=max_payload)
