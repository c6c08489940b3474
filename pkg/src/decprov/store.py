"""Per-domain append-only provenance log, persistence, and federation registry.

Every record (node or edge) is chained: ``hash[i] = SHA-256(hash[i-1] || bytes[i])``
with a fixed genesis digest standing in for ``hash[-1]``.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import re
import threading
from bisect import bisect_left
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Final, Union

from decprov.errors import (
    ChainMismatch,
    DanglingReference,
    DecProvError,
    DuplicateId,
    InvalidIdentifier,
    KindConstraintViolation,
    MalformedRecord,
    ValidationFailed,
)
from decprov.model import (
    EDGE_CONSTRAINTS,
    NodeKind,
    ProvEdge,
    ProvNode,
    QualifiedId,
    Record,
    canonical_serialize,
    dumps_canonical,
    record_from_dict,
    validate_edge,
)

GENESIS: Final[bytes] = hashlib.sha256(b"decprov-log/genesis/v1").digest()
LOG_FORMAT: Final = "decprov-log"
LOG_VERSION: Final = 1
LOG_SUFFIX: Final = ".provlog"
FEDERATION_FILE: Final = "federation.json"

# Requesting principal that always sees full nodes.
REGULATOR: Final = "regulator"

_LINE_RE: Final = re.compile(rb'\{"seq":(0|[1-9][0-9]*),"hash":"([0-9a-f]{64})","record":(.*)\}')

PathOrStream = Union[str, os.PathLike, IO[str]]


def chain_step(prev: bytes, blob: bytes) -> bytes:
    return hashlib.sha256(prev + blob).digest()


@dataclass(frozen=True, slots=True)
class ChainReport:
    """Outcome of a chain verification; ``first_corrupt`` is None when intact."""

    domain: str
    records: int
    first_corrupt: int | None = None

    @property
    def ok(self) -> bool:
        return self.first_corrupt is None


class ProvStore:
    """Append-only, hash-chained record log for one organizational domain.

    Single writer, many readers: :meth:`snapshot` returns a position-bounded
    view that later appends never disturb.
    """

    def __init__(self, domain: str):
        QualifiedId(domain, "_")  # validates the domain text
        if domain == REGULATOR:
            raise InvalidIdentifier(f"{REGULATOR!r} is reserved for the regulator principal")
        self.domain = domain
        self._records: list[Record] = []
        self._blobs: list[bytes] = []
        self._hashes: list[bytes] = []
        self._nodes: dict[QualifiedId, int] = {}
        self._out: dict[QualifiedId, list[int]] = {}
        self._in: dict[QualifiedId, list[int]] = {}
        self._aliases: dict[QualifiedId, list[int]] = {}
        self._write_lock = threading.Lock()

    def __repr__(self) -> str:
        return f"ProvStore({self.domain!r}, records={len(self)})"

    def __len__(self) -> int:
        return len(self._hashes)

    @property
    def head_hash(self) -> bytes:
        return self._hashes[-1] if self._hashes else GENESIS

    @property
    def records(self) -> tuple[Record, ...]:
        return tuple(self._records[: len(self)])

    def hash_at(self, position: int) -> bytes:
        return self._hashes[position]

    def node(self, node_id: QualifiedId) -> ProvNode | None:
        pos = self._nodes.get(node_id)
        return None if pos is None else self._records[pos]

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def snapshot(self) -> StoreSnapshot:
        return StoreSnapshot(self, len(self))

    # -- writing ---------------------------------------------------------

    def append(self, record: Record) -> tuple[int, bytes]:
        """Append one record; returns its position and the new head hash."""
        return self.extend([record])[0]

    def extend(self, records: Iterable[Record]) -> list[tuple[int, bytes]]:
        """Append records atomically: all are validated before any is written."""
        batch = list(records)
        with self._write_lock:
            pending: dict[QualifiedId, ProvNode] = {}
            for record in batch:
                self._check(record, pending)
                if isinstance(record, ProvNode):
                    pending[record.id] = record
            return [self._write(record) for record in batch]

    def _kind_of(self, node_id: QualifiedId, pending: Mapping[QualifiedId, ProvNode]) -> NodeKind | None:
        node = pending.get(node_id) or self.node(node_id)
        return None if node is None else node.kind

    def _check(self, record: Record, pending: Mapping[QualifiedId, ProvNode]) -> None:
        if isinstance(record, ProvNode):
            if record.id.domain != self.domain:
                raise ValidationFailed(f"node {record.id} does not belong to domain {self.domain!r}")
            if record.id in self._nodes or record.id in pending:
                raise DuplicateId(f"node {record.id} already exists")
            return
        if not isinstance(record, ProvEdge):
            raise ValidationFailed(f"not a provenance record: {record!r}")
        if record.source.domain != self.domain:
            raise ValidationFailed(f"edge source {record.source} does not belong to domain {self.domain!r}")
        source_kind = self._kind_of(record.source, pending)
        if source_kind is None:
            raise DanglingReference(f"edge source {record.source} is not in store {self.domain!r}")
        if record.target.domain == self.domain:
            target_kind = self._kind_of(record.target, pending)
            if target_kind is None:
                raise DanglingReference(f"edge target {record.target} is not in store {self.domain!r}")
            validate_edge(record, source_kind, target_kind)
        else:
            expected = EDGE_CONSTRAINTS[record.kind][0]
            if source_kind is not expected:
                raise KindConstraintViolation(
                    f"{record.kind.value} requires a {expected.value} source, got {source_kind.value}"
                )

    def _write(self, record: Record) -> tuple[int, bytes]:
        blob = canonical_serialize(record)
        digest = chain_step(self.head_hash, blob)
        pos = len(self._records)
        self._records.append(record)
        self._blobs.append(blob)
        if isinstance(record, ProvNode):
            self._nodes[record.id] = pos
            alias = record.alias_of
            if alias is not None:
                self._aliases.setdefault(alias, []).append(pos)
        else:
            self._out.setdefault(record.source, []).append(pos)
            self._in.setdefault(record.target, []).append(pos)
        # Publishing the hash last makes the record visible to new snapshots.
        self._hashes.append(digest)
        return pos, digest


def verify_chain(store: ProvStore) -> ChainReport:
    """Recompute the chain from the in-memory records."""
    prev = GENESIS
    size = len(store)
    for pos in range(size):
        blob = canonical_serialize(store._records[pos])
        digest = chain_step(prev, blob)
        if digest != store._hashes[pos] or blob != store._blobs[pos]:
            return ChainReport(store.domain, size, pos)
        prev = digest
    return ChainReport(store.domain, size)


class StoreSnapshot:
    """Read-only view of the first ``size`` records of a store."""

    __slots__ = ("store", "size", "domain")

    def __init__(self, store: ProvStore, size: int):
        self.store = store
        self.size = size
        self.domain = store.domain

    def _bounded(self, positions: list[int] | None) -> list[int]:
        if not positions:
            return []
        if positions[-1] < self.size:
            return positions
        return positions[: bisect_left(positions, self.size)]

    @property
    def head_hash(self) -> bytes:
        return self.store._hashes[self.size - 1] if self.size else GENESIS

    def node(self, node_id: QualifiedId) -> ProvNode | None:
        pos = self.store._nodes.get(node_id)
        if pos is None or pos >= self.size:
            return None
        return self.store._records[pos]

    def position(self, node_id: QualifiedId) -> int | None:
        pos = self.store._nodes.get(node_id)
        return None if pos is None or pos >= self.size else pos

    def out_edges(self, node_id: QualifiedId) -> list[ProvEdge]:
        records = self.store._records
        return [records[p] for p in self._bounded(self.store._out.get(node_id))]

    def in_edges(self, node_id: QualifiedId) -> list[ProvEdge]:
        records = self.store._records
        return [records[p] for p in self._bounded(self.store._in.get(node_id))]

    def aliases_of(self, node_id: QualifiedId) -> list[ProvNode]:
        records = self.store._records
        return [records[p] for p in self._bounded(self.store._aliases.get(node_id))]

    def records(self) -> Iterator[Record]:
        records = self.store._records
        for pos in range(self.size):
            yield records[pos]

    def nodes(self) -> Iterator[ProvNode]:
        for record in self.records():
            if isinstance(record, ProvNode):
                yield record


# -- persistence -------------------------------------------------------------


def _header(domain: str) -> str:
    return dumps_canonical({"format": LOG_FORMAT, "version": LOG_VERSION, "domain": domain})


def _record_line(seq: int, digest: bytes, blob: bytes) -> bytes:
    return b'{"seq":%d,"hash":"%s","record":%s}' % (seq, digest.hex().encode("ascii"), blob)


def dump_store(store: ProvStore) -> bytes:
    """Bit-exact persisted form of a store."""
    snap = store.snapshot()
    lines = [_header(store.domain).encode("utf-8")]
    lines.extend(_record_line(i, store._hashes[i], store._blobs[i]) for i in range(snap.size))
    return b"\n".join(lines) + b"\n"


def export_store(store: ProvStore, destination: PathOrStream) -> None:
    data = dump_store(store)
    if isinstance(destination, io.TextIOBase):
        destination.write(data.decode("utf-8"))
    elif hasattr(destination, "write"):
        destination.write(data)
    else:
        Path(destination).write_bytes(data)


def _read_source(source: PathOrStream | bytes) -> bytes:
    if isinstance(source, bytes):
        return source
    if hasattr(source, "read"):
        data = source.read()
        return data.encode("utf-8") if isinstance(data, str) else data
    return Path(source).read_bytes()


def _parse_header(line: bytes) -> str:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedRecord(1, f"header is not valid JSON: {exc}") from exc
    if (
        not isinstance(header, dict)
        or set(header) != {"format", "version", "domain"}
        or header["format"] != LOG_FORMAT
        or header["version"] != LOG_VERSION
        or not isinstance(header["domain"], str)
    ):
        raise MalformedRecord(1, f"expected a {LOG_FORMAT} v{LOG_VERSION} header")
    if _header(header["domain"]).encode("utf-8") != line:
        raise MalformedRecord(1, "header is not in canonical form")
    return header["domain"]


def _split(data: bytes) -> tuple[bytes, list[bytes]]:
    """Header line and record lines; a missing final newline keeps its line for reporting."""
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if not lines:
        raise MalformedRecord(1, "missing header")
    return lines[0], lines[1:]


class _LineFault(Exception):
    def __init__(self, kind: str, reason: str):
        super().__init__(reason)
        self.kind = kind
        self.reason = reason


def _scan_line(seq: int, line: bytes, prev: bytes) -> tuple[bytes, Record]:
    match = _LINE_RE.fullmatch(line)
    if match is None:
        raise _LineFault("malformed", "line is not a canonical log entry")
    if int(match.group(1)) != seq:
        raise _LineFault("malformed", f"expected seq {seq}, found {match.group(1).decode()}")
    blob = match.group(3)
    digest = chain_step(prev, blob)
    if digest.hex().encode("ascii") != match.group(2):
        raise _LineFault("chain", "declared hash does not match recomputed hash")
    try:
        record = record_from_dict(json.loads(blob.decode("utf-8")))
    except (UnicodeDecodeError, ValueError, DecProvError) as exc:
        raise _LineFault("malformed", f"record does not decode: {exc}") from exc
    if canonical_serialize(record) != blob:
        raise _LineFault("malformed", "record is not in canonical form")
    return digest, record


def import_store(source: PathOrStream | bytes, domain: str | None = None) -> ProvStore:
    """Rebuild a store from its persisted form, re-validating every record.

    An empty stream yields an empty store for ``domain``.
    """
    data = _read_source(source)
    if not data:
        if domain is None:
            raise MalformedRecord(1, "empty stream and no domain given")
        return ProvStore(domain)
    header, lines = _split(data)
    store = ProvStore(_parse_header(header))
    prev = GENESIS
    for seq, line in enumerate(lines):
        lineno = seq + 2
        try:
            digest, record = _scan_line(seq, line, prev)
        except _LineFault as fault:
            if fault.kind == "chain":
                raise ChainMismatch(lineno) from None
            raise MalformedRecord(lineno, fault.reason) from None
        try:
            _, head = store.append(record)
        except (ValidationFailed, DanglingReference) as exc:
            raise MalformedRecord(lineno, str(exc)) from exc
        if head != digest:  # pragma: no cover - guarded by canonical check above
            raise ChainMismatch(lineno)
        prev = digest
    return store


def verify_log(source: PathOrStream | bytes) -> ChainReport:
    """Check a persisted log; any defect in record line k reports position k.

    Raises MalformedRecord only when the header itself is unusable.
    """
    data = _read_source(source)
    header, lines = _split(data)
    domain = _parse_header(header)
    prev = GENESIS
    for seq, line in enumerate(lines):
        try:
            prev, _ = _scan_line(seq, line, prev)
        except _LineFault:
            return ChainReport(domain, len(lines), seq)
    return ChainReport(domain, len(lines))


# -- federation ----------------------------------------------------------------


class Visibility(str, Enum):
    FULL = "full"
    AGENTS_ONLY = "agents-only"


@dataclass(frozen=True, slots=True)
class Redacted:
    """Stub standing in for a node the requester may not see."""

    id: QualifiedId
    kind: NodeKind


@dataclass(frozen=True, slots=True)
class Unresolvable:
    """Reference to a node in an unknown domain or absent from its store."""

    id: QualifiedId


Resolved = Union[ProvNode, Redacted, Unresolvable]


class Federation:
    """Registry of per-domain stores plus their visibility levels."""

    def __init__(self, stores: Iterable[ProvStore] = (), visibility: Mapping[str, str] | None = None):
        self._stores: dict[str, ProvStore] = {}
        self._visibility: dict[str, Visibility] = {}
        visibility = visibility or {}
        for store in stores:
            self.add(store, visibility.get(store.domain, Visibility.FULL))

    def add(self, store: ProvStore, visibility: Visibility | str = Visibility.FULL) -> None:
        existing = self._stores.get(store.domain)
        if existing is not None and existing is not store:
            raise ValidationFailed(f"domain {store.domain!r} is already registered")
        self._stores[store.domain] = store
        self._visibility[store.domain] = Visibility(visibility)

    def __contains__(self, domain: object) -> bool:
        return domain in self._stores

    def __iter__(self) -> Iterator[ProvStore]:
        return iter(self._stores[d] for d in sorted(self._stores))

    def __len__(self) -> int:
        return len(self._stores)

    @property
    def domains(self) -> list[str]:
        return sorted(self._stores)

    def store(self, domain: str) -> ProvStore:
        return self._stores[domain]

    def visibility(self, domain: str) -> Visibility:
        return self._visibility[domain]

    def set_visibility(self, domain: str, visibility: Visibility | str) -> None:
        if domain not in self._stores:
            raise KeyError(domain)
        self._visibility[domain] = Visibility(visibility)

    def snapshot(self) -> FederationView:
        return FederationView(
            {d: s.snapshot() for d, s in self._stores.items()}, dict(self._visibility)
        )

    def unresolved_domains(self) -> set[str]:
        """Foreign domains referenced by some record but not registered."""
        return self.snapshot().unresolved_domains()

    def resolve(self, node_id: QualifiedId, requesting_domain: str) -> Resolved:
        return federated_resolve(self, node_id, requesting_domain)

    # -- directory persistence ---------------------------------------------

    def save(self, directory: str | os.PathLike) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for store in self:
            path = out / f"{store.domain}{LOG_SUFFIX}"
            export_store(store, path)
            written.append(path)
        meta = {
            "format": "decprov-federation",
            "version": 1,
            "visibility": {d: self._visibility[d].value for d in self.domains},
        }
        (out / FEDERATION_FILE).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return written

    @classmethod
    def load(cls, directory: str | os.PathLike) -> Federation:
        root = Path(directory)
        if not root.is_dir():
            raise MalformedRecord(0, f"{root} is not a directory")
        fed = cls()
        for path in sorted(root.glob(f"*{LOG_SUFFIX}")):
            try:
                store = import_store(path, domain=path.stem)
            except MalformedRecord as exc:
                raise MalformedRecord(exc.line, f"{path.name}: {exc.reason}") from exc
            except ChainMismatch as exc:
                raise ChainMismatch(exc.line, f"{path.name}: chain mismatch") from exc
            fed.add(store)
        meta_path = root / FEDERATION_FILE
        if meta_path.exists():
            try:
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
                for domain, level in meta.get("visibility", {}).items():
                    if domain in fed:
                        fed.set_visibility(domain, level)
            except (ValueError, AttributeError) as exc:
                raise MalformedRecord(1, f"{FEDERATION_FILE}: {exc}") from exc
        return fed


class FederationView:
    """Consistent read snapshot across every store of a federation."""

    def __init__(self, stores: Mapping[str, StoreSnapshot], visibility: Mapping[str, Visibility]):
        self.stores = dict(stores)
        self.visibility = dict(visibility)
        self._ordered = [self.stores[d] for d in sorted(self.stores)]

    def snapshot(self) -> FederationView:
        return self

    @property
    def domains(self) -> list[str]:
        return sorted(self.stores)

    def node(self, node_id: QualifiedId) -> ProvNode | None:
        snap = self.stores.get(node_id.domain)
        return None if snap is None else snap.node(node_id)

    def out_edges(self, node_id: QualifiedId) -> list[ProvEdge]:
        snap = self.stores.get(node_id.domain)
        return [] if snap is None else snap.out_edges(node_id)

    def in_edges(self, node_id: QualifiedId) -> list[ProvEdge]:
        if len(self._ordered) == 1:
            return self._ordered[0].in_edges(node_id)
        edges: list[ProvEdge] = []
        for snap in self._ordered:
            edges.extend(snap.in_edges(node_id))
        return edges

    def aliases_of(self, node_id: QualifiedId) -> list[ProvNode]:
        aliases: list[ProvNode] = []
        for snap in self._ordered:
            aliases.extend(snap.aliases_of(node_id))
        return aliases

    def sees_full(self, owner_domain: str, requesting_domain: str) -> bool:
        return (
            requesting_domain == REGULATOR
            or requesting_domain == owner_domain
            or self.visibility.get(owner_domain, Visibility.FULL) is Visibility.FULL
        )

    def resolve(self, node_id: QualifiedId, requesting_domain: str) -> Resolved:
        node = self.node(node_id)
        if node is None:
            return Unresolvable(node_id)
        if node.kind is NodeKind.AGENT or self.sees_full(node_id.domain, requesting_domain):
            return node
        return Redacted(node_id, node.kind)

    def unresolved_domains(self) -> set[str]:
        missing: set[str] = set()
        for snap in self._ordered:
            for record in snap.records():
                if isinstance(record, ProvEdge):
                    refs = (record.target.domain,)
                else:
                    alias = record.alias_of
                    refs = () if alias is None else (alias.domain,)
                missing.update(d for d in refs if d not in self.stores)
        return missing


def federated_resolve(
    federation: Federation | FederationView, node_id: QualifiedId, requesting_domain: str
) -> Resolved:
    """Resolve ``node_id`` as seen by ``requesting_domain``.

    Own-domain nodes and regulator requests are always full; agents-only
    stores expose Agents in full and everything else as Redacted stubs.
    """
    return federation.snapshot().resolve(node_id, requesting_domain)
