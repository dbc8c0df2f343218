"""Binary encoding of data units and the invertible keyed transform.

Values are stored as raw bytes (never base64) so that a raw file scan can
tell whether a value is still physically present.
"""

from __future__ import annotations

import hashlib
import struct

from .model import Category, DataUnit, Entity, EntityKind, Policy

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_TIMES = struct.Struct(">QQ")
_VAL = struct.Struct(">QI")

_CATEGORIES = list(Category)
_KINDS = list(EntityKind)


def _s(text: str) -> bytes:
    b = text.encode("utf-8")
    return _U16.pack(len(b)) + b


def encode_policies(policies) -> bytes:
    parts = [_U16.pack(len(policies))]
    for p in sorted(policies):
        parts += [_s(p.purpose), _U8.pack(_KINDS.index(p.entity.kind)), _s(p.entity.id),
                  _TIMES.pack(p.t_b, p.t_f)]
    return b"".join(parts)


def encode_unit(unit: DataUnit, with_policies: bool = True) -> bytes:
    parts = [_U8.pack(_CATEGORIES.index(unit.category)), _U16.pack(len(unit.subjects))]
    for s in sorted(unit.subjects):
        parts.append(_s(s.id))
    parts.append(_U16.pack(len(unit.origins)))
    parts += [_s(o) for o in sorted(unit.origins)]
    parts.append(_U32.pack(len(unit.values)))
    for v, t in unit.values:
        parts += [_VAL.pack(t, len(v)), v]
    parts.append(encode_policies(unit.policies if with_policies else ()))
    return b"".join(parts)


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def take(self, st: struct.Struct):
        out = st.unpack_from(self.buf, self.pos)
        self.pos += st.size
        return out

    def str(self) -> str:
        (n,) = self.take(_U16)
        out = self.buf[self.pos:self.pos + n].decode("utf-8")
        self.pos += n
        return out

    def bytes(self, n: int) -> bytes:
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out


def _read_policies(r: _Reader) -> frozenset:
    (n,) = r.take(_U16)
    out = []
    for _ in range(n):
        purpose = r.str()
        (kind,) = r.take(_U8)
        eid = r.str()
        t_b, t_f = r.take(_TIMES)
        out.append(Policy(purpose, Entity(eid, _KINDS[kind]), t_b, t_f))
    return frozenset(out)


def decode_policies(blob: bytes) -> frozenset:
    return _read_policies(_Reader(blob))


def decode_unit(unit_id: str, blob: bytes) -> DataUnit:
    r = _Reader(blob)
    (cat,) = r.take(_U8)
    (ns,) = r.take(_U16)
    subjects = [Entity(r.str(), EntityKind.DATA_SUBJECT) for _ in range(ns)]
    (no,) = r.take(_U16)
    origins = [r.str() for _ in range(no)]
    (nv,) = r.take(_U32)
    values = []
    for _ in range(nv):
        t, n = r.take(_VAL)
        values.append((r.bytes(n), t))
    policies = _read_policies(r)
    return DataUnit(unit_id, frozenset(subjects), frozenset(origins), tuple(values),
                    policies, _CATEGORIES[cat])


def keystream(key: bytes, nonce: bytes, n: int) -> bytes:
    return hashlib.shake_256(key + b"\x00" + nonce).digest(n)


def xor_transform(data: bytes, key: bytes, nonce: bytes = b"") -> bytes:
    """Keyed XOR stream transform; applying it twice with the same key is the identity.

    Good enough to demonstrate invertibility and hide plaintext from raw
    scans. Not a vetted cipher.
    """
    if not data:
        return b""
    ks = keystream(key, nonce, len(data))
    return (int.from_bytes(data, "big") ^ int.from_bytes(ks, "big")).to_bytes(len(data), "big")
