"""Directory synchronization by file-name/size stamps.

Each regular file is stamped with ``hash64(path || size)`` (plus the content
hash in paranoid mode).  The two stamp sets are reconciled with the IBLT
engine; a path whose stamp is missing on one side is then classified as
changed, new or deleted.  Changed files are synchronized one after another
with the file protocol over the same connection, new files are sent whole and
deleted files are removed.
"""

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath

import numpy as np

from .errors import ParamMismatch, RcdsError, SyncFailed, UnknownHash
from .protocol import (DIGEST, MeteredLink, SessionConfig, SyncReport, client_handshake,
                       decode_failure, decode_hello, decode_request, encode_failure,
                       encode_hello, encode_request, run_client, serve_session)
from .setrecon import IbltEngine
from .transport import Frame, Kind, receive_chunked, send_chunked
from .tree import TreeParams, hash64

log = logging.getLogger(__name__)

LEAF_TARGET = 128


class PathRejected(RcdsError, ValueError):
    pass


@dataclass(frozen=True)
class FileStamp:
    path: str
    size: int
    content_hash: int = None

    @property
    def stamp(self) -> int:
        raw = self.path.encode("utf-8") + self.size.to_bytes(8, "big")
        if self.content_hash is not None:
            raw += self.content_hash.to_bytes(8, "big")
        return hash64(raw)

    def encode_meta(self) -> bytes:
        return self.size.to_bytes(8, "big") + self.path.encode("utf-8")

    @classmethod
    def decode_meta(cls, raw: bytes) -> "FileStamp":
        return cls(raw[8:].decode("utf-8"), int.from_bytes(raw[:8], "big"))


@dataclass
class DirPlan:
    unchanged: list = field(default_factory=list)
    changed: list = field(default_factory=list)
    new: list = field(default_factory=list)
    deleted: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.changed or self.new or self.deleted)

    def as_dict(self) -> dict:
        return {k: sorted(getattr(self, k))
                for k in ("unchanged", "changed", "new", "deleted", "skipped")}


@dataclass
class DirSyncReport:
    plan: DirPlan
    control: SyncReport
    files: dict = field(default_factory=dict)
    new_bytes: int = 0
    elapsed: float = 0.0

    @property
    def total_bytes(self) -> int:
        return self.control.total_bytes + sum(r.total_bytes for r in self.files.values())

    @property
    def fallback_count(self) -> int:
        return sum(r.fallback_used for r in self.files.values())

    def format_text(self) -> str:
        p = self.plan
        return (f"unchanged {len(p.unchanged)}, changed {len(p.changed)}, new {len(p.new)}, "
                f"deleted {len(p.deleted)}, skipped {len(p.skipped)}\n"
                f"total bytes {self.total_bytes:,} (control {self.control.total_bytes:,}, "
                f"new-file content {self.new_bytes:,}), fallbacks {self.fallback_count}, "
                f"{self.elapsed:.3f}s")


# -- paths -------------------------------------------------------------------

def normalize(rel: str) -> str:
    """Validate a relative forward-slash path; raises PathRejected on traversal."""
    if not rel or "\\" in rel or "\0" in rel:
        raise PathRejected(f"malformed path {rel!r}")
    p = PurePosixPath(rel)
    if p.is_absolute() or any(part in ("..", ".", "") for part in rel.split("/")):
        raise PathRejected(f"path {rel!r} escapes the sync root")
    return p.as_posix()


def resolve_under(root, rel: str) -> Path:
    rel = normalize(rel)
    root = Path(root).resolve()
    target = (root / rel).resolve()
    if target != root and root not in target.parents:
        raise PathRejected(f"path {rel!r} resolves outside {root}")
    return target


def scan_dir(root, paranoid: bool = False):
    """Stamp every regular file under ``root``; returns ``(stamps, skipped)``."""
    root = Path(root)
    stamps, skipped = [], []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = Path(dirpath) / name
            rel = full.relative_to(root).as_posix()
            if full.is_symlink() or not full.is_file():
                continue
            try:
                if paranoid:
                    data = full.read_bytes()
                    stamps.append(FileStamp(rel, len(data), hash64(data)))
                else:
                    with open(full, "rb"):
                        pass
                    stamps.append(FileStamp(rel, full.stat().st_size))
            except OSError as exc:
                log.warning("skipping unreadable file %s: %s", rel, exc)
                skipped.append(rel)
    stamps.sort(key=lambda s: s.path)
    return stamps, skipped


def stamp_rows(stamps) -> np.ndarray:
    rows = np.zeros((len(stamps), 3), dtype=np.uint64)
    rows[:, 0] = np.array([s.stamp for s in stamps], dtype=np.uint64)
    return rows


def params_for_size(n: int, base: TreeParams) -> TreeParams:
    """Scale the level count so bottom partitions sit near ``LEAF_TARGET`` bytes."""
    if n <= LEAF_TARGET * base.branch:
        levels = 1
    else:
        levels = round(math.log(n / LEAF_TARGET, base.branch))
    return replace(base, levels=max(1, min(base.levels, levels)))


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.rcds-tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _prune_empty(path: Path, root: Path) -> None:
    parent = path.parent
    while parent != root and root in parent.parents:
        try:
            parent.rmdir()
        except OSError:
            return
        parent = parent.parent


# -- client ------------------------------------------------------------------

def plan_dir_sync(local_dir, link, cfg: SessionConfig = None, paranoid: bool = False,
                  report: SyncReport = None):
    """Reconcile stamps with the server's directory; returns ``(plan, remote_meta)``.

    ``remote_meta`` maps each new or changed path to the server's size.
    """
    cfg = cfg or SessionConfig()
    report = report or SyncReport("client", "dir")
    mlink = link if isinstance(link, MeteredLink) else MeteredLink(link, report)
    direction = "dir-paranoid" if paranoid else "dir"
    params, salt, _ = client_handshake(mlink, cfg, b"", direction=direction)

    stamps, skipped = scan_dir(local_dir, paranoid)
    by_stamp = {s.stamp: s for s in stamps}
    engine = IbltEngine(salt, max_doublings=cfg.max_doublings)
    local_only, remote_only = engine.reconcile(stamp_rows(stamps), mlink, "initiator")
    report.rounds = engine.stats.rounds

    wanted = sorted(int(k) for k in remote_only[:, 0])
    mlink.send(Frame(Kind.HASH_REQUEST, encode_request([(h, 0) for h in wanted])))
    remote = {}
    for h in wanted:
        frame = mlink.expect(Kind.HASH_RESPONSE_LITERAL, Kind.VERIFY_FAIL)
        if frame.base_kind == Kind.VERIFY_FAIL:
            raise SyncFailed("server could not describe its files: "
                             + decode_failure(frame.payload)[1])
        prefix, body = receive_chunked(mlink, frame, 8)
        meta = FileStamp.decode_meta(body)
        if int.from_bytes(prefix, "big") != h:
            raise SyncFailed("file metadata arrived out of order")
        try:
            remote[normalize(meta.path)] = meta.size
        except PathRejected as exc:
            log.warning("ignoring remote file: %s", exc)
            skipped.append(meta.path)

    gone = {by_stamp[int(k)].path for k in local_only[:, 0]}
    plan = DirPlan(skipped=sorted(skipped))
    plan.unchanged = sorted(s.path for s in stamps if s.path not in gone)
    for path in sorted(remote):
        (plan.changed if path in gone else plan.new).append(path)
    plan.deleted = sorted(gone - set(remote))
    return plan, remote


def sync_dir(local_dir, link, cfg: SessionConfig = None, paranoid: bool = False):
    """Make ``local_dir`` a copy of the server's directory; returns a DirSyncReport."""
    cfg = cfg or SessionConfig()
    t0 = time.perf_counter()
    root = Path(local_dir)
    root.mkdir(parents=True, exist_ok=True)
    control = SyncReport("client", "dir-paranoid" if paranoid else "dir")
    mlink = MeteredLink(link, control)
    plan, remote = plan_dir_sync(root, mlink, cfg, paranoid, control)
    out = DirSyncReport(plan, control)

    for path in plan.changed:
        target = resolve_under(root, path)
        data = target.read_bytes()
        fcfg = replace(cfg, tree=params_for_size(max(len(data), remote[path]), cfg.tree),
                       direction="pull")
        final, rep = run_client(data, fcfg, link, path=path)
        out.files[path] = rep
        _write_atomic(target, final)

    for path in plan.new:
        target = resolve_under(root, path)
        mlink.send(Frame(Kind.FULL_TRANSFER, path.encode("utf-8")))
        frame = mlink.expect(Kind.FULL_TRANSFER, Kind.VERIFY_FAIL)
        if frame.base_kind == Kind.VERIFY_FAIL:
            raise SyncFailed(f"server refused {path}: " + decode_failure(frame.payload)[1])
        _, body = receive_chunked(mlink, frame)
        if len(body) != remote[path]:
            raise SyncFailed(f"{path}: expected {remote[path]} bytes, got {len(body)}")
        out.new_bytes += len(body)
        _write_atomic(target, body)

    for path in plan.deleted:
        target = resolve_under(root, path)
        target.unlink()
        _prune_empty(target, root.resolve())

    mlink.send(Frame(Kind.DONE))
    mlink.expect(Kind.DONE)
    out.elapsed = time.perf_counter() - t0
    return out


# -- server ------------------------------------------------------------------

def _accepts(base: TreeParams, params: TreeParams, exact: bool) -> bool:
    if base is None:
        return True
    if exact:
        return params == base
    return (params.branch, params.window) == (base.branch, base.window) \
        and params.levels <= base.levels


def serve_dir(root, cfg: SessionConfig, link, hello: Frame = None):
    """Serve one directory session (read-only); returns the control SyncReport."""
    root = Path(root)
    control = SyncReport("server", "dir")
    mlink = MeteredLink(link, control)
    if hello is None:
        hello = mlink.expect(Kind.HELLO)
    else:
        control.bytes_received["hello"] += hello.wire_size
    try:
        params, salt, direction, _ = decode_hello(hello.payload)
        if direction not in ("dir", "dir-paranoid"):
            raise ParamMismatch(f"expected a directory session, got {direction!r}")
        if not _accepts(cfg.tree, params, exact=True):
            raise ParamMismatch(f"client asked for {params}, server requires {cfg.tree}")
    except ParamMismatch as exc:
        mlink.send(Frame(Kind.VERIFY_FAIL, encode_failure(str(exc))))
        raise
    control.direction = direction
    mlink.send(Frame(Kind.HELLO_ACK, encode_hello(params, salt, direction) + DIGEST.pack(0, 0)))

    stamps, _ = scan_dir(root, direction == "dir-paranoid")
    by_stamp = {s.stamp: s for s in stamps}
    engine = IbltEngine(salt, max_doublings=cfg.max_doublings)
    engine.reconcile(stamp_rows(stamps), mlink, "responder")
    control.rounds = engine.stats.rounds

    for h, _level in decode_request(mlink.expect(Kind.HASH_REQUEST).payload):
        meta = by_stamp.get(h)
        if meta is None:
            mlink.send(Frame(Kind.VERIFY_FAIL, encode_failure(f"unknown stamp {h:#018x}")))
            raise UnknownHash(f"client asked for unknown stamp {h:#018x}")
        send_chunked(mlink, Kind.HASH_RESPONSE_LITERAL, meta.encode_meta(), h.to_bytes(8, "big"))

    file_cfg = replace(cfg, tree=None)
    while True:
        frame = mlink.expect(Kind.HELLO, Kind.FULL_TRANSFER, Kind.DONE)
        if frame.base_kind == Kind.DONE:
            mlink.send(Frame(Kind.DONE))
            return control
        if frame.base_kind == Kind.FULL_TRANSFER:
            try:
                data = resolve_under(root, frame.payload.decode("utf-8")).read_bytes()
            except (PathRejected, OSError, UnicodeDecodeError) as exc:
                mlink.send(Frame(Kind.VERIFY_FAIL, encode_failure(str(exc))))
                continue
            send_chunked(mlink, Kind.FULL_TRANSFER, data)
            continue
        # per-file session; undo the control booking, serve_session books it itself
        control.bytes_received["hello"] -= frame.wire_size
        params, _, fdir, path = decode_hello(frame.payload)
        try:
            if fdir != "pull" or path is None:
                raise ParamMismatch("directory peers accept only per-file pull sessions")
            if not _accepts(cfg.tree, params, exact=False):
                raise ParamMismatch(f"per-file parameters {params} incompatible with {cfg.tree}")
            data = resolve_under(root, path).read_bytes()
        except (ParamMismatch, PathRejected, OSError) as exc:
            mlink.send(Frame(Kind.VERIFY_FAIL, encode_failure(str(exc))))
            raise ParamMismatch(str(exc)) from exc
        serve_session(data, file_cfg, link, frame)


def serve_path(path, cfg: SessionConfig, link):
    """Serve one session against a file or a directory, dispatching on the HELLO.

    Returns ``(report, new_file_bytes_or_None)``; the latter is set when a
    client pushed new content for a served file.
    """
    path = Path(path)
    hello = link.receive()
    if hello.base_kind != Kind.HELLO:
        raise ConnectionError(f"expected HELLO, got {hello.base_kind.name}")
    if path.is_dir():
        return serve_dir(path, cfg, link, hello), None
    data = path.read_bytes() if path.exists() else b""
    final, report = serve_session(data, cfg, link, hello)
    if report.direction in ("push", "both") and final != data:
        _write_atomic(path, final)
        return report, final
    return report, None

