"""Append-only action history with payload redaction.

File layout of ``actions.log``::

    b"DCAL" | version:u8 | record*
    record = body_len:u32 | body | crc32(body):u32
    body   = time:u64 | flags:u8 | action:u8 | erase_mode:u8 | digest:16s
             | unit_id | purpose | entity_kind:u8 | entity_id | detail
    (strings are u16-length-prefixed UTF-8)

Redaction rewrites a record in place with the same length: the digest becomes
``SENTINEL`` and the redacted flag is set. Nothing else changes.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import struct
import threading
import zlib
from dataclasses import dataclass, replace
from typing import Callable, Optional

from .errors import CorruptFile, TimeRegression, UnknownUnit
from .model import (COMPLIANCE_ERASE, ActionKind, ActionRecord, Entity, EntityKind,
                    ErasureMode, Timestamp, format_time)

MAGIC = b"DCAL"
VERSION = 1
SENTINEL = bytes(16)

_HEAD = struct.Struct(">QBBB16s")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")

_FLAG_REGULATION = 0x01
_FLAG_REDACTED = 0x02

_ACTIONS = list(ActionKind)
_MODES = list(ErasureMode)
_KINDS = list(EntityKind)
_NO_MODE = 0xFF


def digest_of(*chunks: bytes) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for c in chunks:
        h.update(_U32.pack(len(c)))
        h.update(c)
    return h.digest()


class RedactionReason(str, enum.Enum):
    STRONG_DELETE = "strong-delete"
    PERMANENT_DELETE = "permanent-delete"


@dataclass(frozen=True)
class RedactionMark:
    position: int
    redacted_at: Timestamp
    reason: RedactionReason


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return _U16.pack(len(b)) + b


def encode_record(r: ActionRecord) -> bytes:
    flags = (_FLAG_REGULATION if r.regulation_required else 0) | (_FLAG_REDACTED if r.redacted else 0)
    mode = _NO_MODE if r.erase_mode is None else _MODES.index(r.erase_mode)
    body = b"".join((
        _HEAD.pack(r.time, flags, _ACTIONS.index(r.action), mode, r.digest),
        _pack_str(r.unit_id),
        _pack_str(r.purpose),
        bytes((_KINDS.index(r.entity.kind),)),
        _pack_str(r.entity.id),
        _pack_str(r.detail),
    ))
    return _U32.pack(len(body)) + body + _U32.pack(zlib.crc32(body))


def decode_body(body: bytes) -> ActionRecord:
    time, flags, action, mode, digest = _HEAD.unpack_from(body, 0)
    pos = _HEAD.size
    strings = []
    for i in range(4):
        if i == 2:
            kind = _KINDS[body[pos]]
            pos += 1
        (n,) = _U16.unpack_from(body, pos)
        pos += 2
        strings.append(body[pos:pos + n].decode("utf-8"))
        pos += n
    unit_id, purpose, entity_id, detail = strings
    return ActionRecord(
        unit_id=unit_id, purpose=purpose, entity=Entity(entity_id, kind),
        action=_ACTIONS[action], time=time,
        regulation_required=bool(flags & _FLAG_REGULATION),
        erase_mode=None if mode == _NO_MODE else _MODES[mode],
        digest=digest, detail=detail, redacted=bool(flags & _FLAG_REDACTED),
    )


class Ledger:
    """Action history H(X) for every unit, optionally backed by a file.

    One logical writer appends; readers get consistent prefixes because
    records are only ever added at the end and redaction swaps whole records.
    """

    def __init__(self, path: Optional[str] = None, *, fsync: bool = False):
        self.path = path
        self.fsync = fsync
        self._records: list = []
        self._offsets: list = []
        self._by_unit: dict = {}
        self.redactions: list = []
        self._lock = threading.Lock()
        self._fh = None
        if path is not None:
            self._open_file(path)

    # -- persistence -----------------------------------------------------

    def _open_file(self, path: str) -> None:
        exists = os.path.exists(path) and os.path.getsize(path) > 0
        self._fh = open(path, "r+b" if exists else "w+b", buffering=0)
        if not exists:
            self._fh.write(MAGIC + bytes((VERSION,)))
            return
        data = self._fh.read()
        if data[:4] != MAGIC:
            raise CorruptFile(f"{path}: bad ledger magic")
        if data[4] != VERSION:
            raise CorruptFile(f"{path}: unsupported ledger version {data[4]}")
        pos = 5
        while pos + 4 <= len(data):
            (n,) = _U32.unpack_from(data, pos)
            end = pos + 4 + n + 4
            if end > len(data):
                break
            body = data[pos + 4:pos + 4 + n]
            (crc,) = _U32.unpack_from(data, pos + 4 + n)
            if zlib.crc32(body) != crc:
                break
            self._index(decode_body(body), pos)
            pos = end
        if pos != len(data):
            # torn tail from an interrupted append
            self._fh.truncate(pos)
        self._rebuild_marks()
        self._fh.seek(0, os.SEEK_END)

    def _rebuild_marks(self) -> None:
        for uid, positions in self._by_unit.items():
            pending = []
            for i in positions:
                r = self._records[i]
                if r.detail.startswith("redact:"):
                    reason = RedactionReason(r.detail.split(":", 1)[1])
                    self.redactions.extend(RedactionMark(j, r.time, reason) for j in pending)
                    pending = []
                elif r.redacted:
                    pending.append(i)
        self.redactions.sort(key=lambda m: m.position)

    def _index(self, record: ActionRecord, offset: int) -> int:
        pos = len(self._records)
        self._records.append(record)
        self._offsets.append(offset)
        self._by_unit.setdefault(record.unit_id, []).append(pos)
        return pos

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # -- writer ----------------------------------------------------------

    @property
    def last_time(self) -> Optional[Timestamp]:
        return self._records[-1].time if self._records else None

    def append(self, record: ActionRecord) -> int:
        with self._lock:
            last = self.last_time
            if last is not None and record.time < last:
                raise TimeRegression(f"record time {record.time} precedes last ledger time {last}")
            offset = 0
            if self._fh is not None:
                offset = self._fh.seek(0, os.SEEK_END)
                self._fh.write(encode_record(record))
                if self.fsync:
                    os.fsync(self._fh.fileno())
            return self._index(record, offset)

    def redact_values(self, unit_id: str, reason, t: Timestamp,
                      entity: Optional[Entity] = None) -> int:
        """Replace every payload of ``unit_id`` with the sentinel; returns the number changed."""
        reason = RedactionReason(reason)
        with self._lock:
            positions = self._by_unit.get(unit_id)
            if not positions:
                raise UnknownUnit(f"no ledger records for unit {unit_id!r}")
            changed = 0
            for i in list(positions):
                r = self._records[i]
                if r.redacted:
                    continue
                new = replace(r, digest=SENTINEL, redacted=True)
                if self._fh is not None:
                    self._fh.seek(self._offsets[i])
                    self._fh.write(encode_record(new))
                self._records[i] = new
                self.redactions.append(RedactionMark(i, t, reason))
                changed += 1
            if self._fh is not None and self.fsync:
                os.fsync(self._fh.fileno())
        self.append(ActionRecord(
            unit_id=unit_id, purpose=COMPLIANCE_ERASE,
            entity=entity or Entity("system", EntityKind.CONTROLLER),
            action=ActionKind.UPDATE_METADATA, time=t, regulation_required=True,
            digest=SENTINEL, detail=f"redact:{reason.value}", redacted=True,
        ))
        return changed

    # -- readers ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, position: int) -> ActionRecord:
        return self._records[position]

    def __iter__(self):
        return iter(list(self._records))

    def records(self) -> list:
        return list(self._records)

    def unit_ids(self) -> list:
        return list(self._by_unit)

    def positions_of(self, unit_id: str) -> list:
        return list(self._by_unit.get(unit_id, ()))

    def history_of(self, unit_id: str) -> list:
        return [self._records[i] for i in self._by_unit.get(unit_id, ())]

    def last_record(self, unit_id: str) -> Optional[ActionRecord]:
        positions = self._by_unit.get(unit_id)
        return self._records[positions[-1]] if positions else None

    def audit_scan(self, predicate: Callable[[ActionRecord], bool]) -> list:
        return [i for i, r in enumerate(list(self._records)) if predicate(r)]

    def to_json(self, record: ActionRecord) -> dict:
        return {
            "unit_id": record.unit_id,
            "purpose": record.purpose,
            "entity": str(record.entity),
            "action": record.action_label,
            "time": format_time(record.time),
            "regulation_required": record.regulation_required,
            "redacted": record.redacted,
        }

    def export_jsonl(self, out) -> int:
        n = 0
        for r in list(self._records):
            out.write(json.dumps(self.to_json(r), sort_keys=True) + "\n")
            n += 1
        return n

