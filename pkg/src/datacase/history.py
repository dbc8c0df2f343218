"""Append-only log of policy versions per unit, kept for audits after erasure.

Layout of ``metadata.log``::

    b"DCPHIST" | version:u8 | record*
    record = body_len:u32 | body | crc32(body):u32
    body   = b"P" | policy_id:u32 | policy               defines a policy once
           | b"V" | pos:u64 | uid | category:u8 | subjects | n:u16 | policy_id:u32 * n

Policies are interned: each distinct policy is written once and versions
refer to it by id, so units sharing grants cost a few bytes per version.
A torn tail is truncated on open.
"""

from __future__ import annotations

import os
import struct
import zlib

from . import codec
from .errors import CorruptFile
from .model import Category, Entity, EntityKind

MAGIC = b"DCPHIST"
VERSION = 1
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_CATEGORIES = list(Category)


def _s(text: str) -> bytes:
    b = text.encode("utf-8")
    return _U16.pack(len(b)) + b


class PolicyHistory:
    def __init__(self, path: str, fsync: bool = False):
        self.path = path
        self.fsync = fsync
        self._ids: dict = {}       # Policy -> id
        self._policies: list = []  # id -> Policy
        self._rows: list = []      # (pos, uid, category, subjects, policies) read on open
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        self._fh = open(path, "ab+", buffering=0)
        if new:
            self._fh.write(MAGIC + bytes((VERSION,)))
        else:
            self._load()

    def _load(self) -> None:
        self._fh.seek(0)
        data = self._fh.read()
        if data[:len(MAGIC)] != MAGIC:
            raise CorruptFile(f"{self.path}: bad magic")
        pos = len(MAGIC) + 1
        while pos + 4 <= len(data):
            (n,) = _U32.unpack_from(data, pos)
            end = pos + 8 + n
            body = data[pos + 4:pos + 4 + n]
            if end > len(data) or zlib.crc32(body) != _U32.unpack_from(data, pos + 4 + n)[0]:
                break
            self._decode(body)
            pos = end
        if pos != len(data):
            self._fh.truncate(pos)

    def _decode(self, body: bytes) -> None:
        r = codec._Reader(body, 1)
        if body[:1] == b"P":
            (pid,) = r.take(_U32)
            (policy,) = codec._read_policies(r)
            self._ids[policy] = pid
            self._policies.append(policy)
            return
        (pos,) = r.take(_U64)
        uid = r.str()
        category = _CATEGORIES[body[r.pos]]
        r.pos += 1
        (ns,) = r.take(_U16)
        subjects = frozenset(Entity(r.str(), EntityKind.DATA_SUBJECT) for _ in range(ns))
        (n,) = r.take(_U16)
        ids = struct.unpack_from(f">{n}I", body, r.pos)
        self._rows.append((pos, uid, category, subjects,
                           frozenset(self._policies[i] for i in ids)))

    def rows(self) -> list:
        """Versions found on open, in append order."""
        return list(self._rows)

    def _frame(self, body: bytes) -> bytes:
        return _U32.pack(len(body)) + body + _U32.pack(zlib.crc32(body))

    def append(self, pos: int, uid: str, category: Category, subjects, policies) -> None:
        out = []
        ids = []
        for p in sorted(policies):
            pid = self._ids.get(p)
            if pid is None:
                pid = self._ids[p] = len(self._policies)
                self._policies.append(p)
                out.append(self._frame(b"P" + _U32.pack(pid) + codec.encode_policies((p,))))
            ids.append(pid)
        body = [b"V", _U64.pack(pos), _s(uid), bytes((_CATEGORIES.index(category),)),
                _U16.pack(len(subjects))]
        body += [_s(s.id) for s in sorted(subjects)]
        body += [_U16.pack(len(ids)), struct.pack(f">{len(ids)}I", *ids)]
        out.append(self._frame(b"".join(body)))
        self._fh.write(b"".join(out))
        if self.fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()
