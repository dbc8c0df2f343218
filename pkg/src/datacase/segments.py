"""Segment files holding the serialized data units.

Layout of ``segments/seg-<n>.dat``::

    b"DCSEGMNT" | version:u8 | record*
    record = body_len:u32 | body | crc32(body):u32
    body   = flags:u8 | uid_len:u16 | uid | blob

A unit has at most one live record. Superseded and erased records are
tombstoned in place: the blob bytes are zeroed immediately and the flag set.
Compaction only reclaims the space of tombstoned records.
"""

from __future__ import annotations

import os
import random
import re
import struct
import zlib
from typing import NamedTuple

from .errors import CorruptFile

MAGIC = b"DCSEGMNT"
VERSION = 1
HEADER_SIZE = len(MAGIC) + 1

FLAG_TOMBSTONE = 0x01
FLAG_ESCROWED = 0x02

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_NAME = re.compile(r"^seg-(\d+)\.dat$")


class Slot(NamedTuple):
    segment: int
    offset: int       # start of the record (length prefix)
    length: int       # whole record, prefix and crc included
    head: int         # bytes from record start to the blob
    flags: int = 0

    @property
    def blob_offset(self) -> int:
        return self.offset + self.head

    @property
    def blob_length(self) -> int:
        return self.length - self.head - 4


def _frame(uid: str, blob: bytes, flags: int) -> tuple:
    u = uid.encode("utf-8")
    body = bytes((flags,)) + _U16.pack(len(u)) + u + blob
    return _U32.pack(len(body)) + body + _U32.pack(zlib.crc32(body)), 7 + len(u)


class SegmentStore:
    def __init__(self, directory: str, *, max_segment_bytes: int = 64 * 1024,
                 fsync: bool = False, seed: int = 0):
        self.directory = directory
        self.max_segment_bytes = max_segment_bytes
        self.fsync = fsync
        self.index: dict = {}      # uid -> Slot of its live record
        self.members: dict = {}    # segment -> {uid: Slot}, in offset order
        self.dead: dict = {}       # segment -> number of tombstoned records
        self.sizes: dict = {}      # segment -> file size
        self._fds: dict = {}
        self._rng = random.Random(seed)
        os.makedirs(directory, exist_ok=True)
        self._load()

    # -- files -----------------------------------------------------------

    def path(self, seg: int) -> str:
        return os.path.join(self.directory, f"seg-{seg}.dat")

    def _fd(self, seg: int) -> int:
        fd = self._fds.get(seg)
        if fd is None:
            fd = os.open(self.path(seg), os.O_RDWR)
            self._fds[seg] = fd
        return fd

    def _new_segment(self, seg: int) -> None:
        with open(self.path(seg), "wb") as fh:
            fh.write(MAGIC + bytes((VERSION,)))
        self.members[seg] = {}
        self.dead[seg] = 0
        self.sizes[seg] = HEADER_SIZE

    @property
    def active(self) -> int:
        return max(self.sizes)

    def segment_ids(self) -> list:
        return sorted(self.sizes)

    def _load(self) -> None:
        segs = sorted(int(m.group(1)) for m in map(_NAME.match, os.listdir(self.directory)) if m)
        if not segs:
            self._new_segment(0)
            return
        stale = []
        for seg in segs:
            self.members[seg] = {}
            self.dead[seg] = 0
            with open(self.path(seg), "rb") as fh:
                data = fh.read()
            if data[:len(MAGIC)] != MAGIC:
                raise CorruptFile(f"{self.path(seg)}: bad segment magic")
            pos = HEADER_SIZE
            while pos + 4 <= len(data):
                (n,) = _U32.unpack_from(data, pos)
                end = pos + 8 + n
                if n < 3 or end > len(data):
                    break
                body = data[pos + 4:pos + 4 + n]
                flags = body[0]
                (ulen,) = _U16.unpack_from(body, 1)
                uid = body[3:3 + ulen].decode("utf-8", "replace")
                intact = zlib.crc32(body) == _U32.unpack_from(data, pos + 4 + n)[0]
                if not intact or flags & FLAG_TOMBSTONE:
                    # a record with a bad checksum counts as tombstoned
                    self.dead[seg] += 1
                else:
                    slot = Slot(seg, pos, 8 + n, 7 + ulen, flags)
                    prev = self.index.get(uid)
                    if prev is not None:
                        stale.append((uid, prev))
                    self.index[uid] = slot
                    self.members[seg][uid] = slot
                pos = end
            self.sizes[seg] = pos
            if pos != len(data):
                with open(self.path(seg), "r+b") as fh:
                    fh.truncate(pos)
        # a crash between writing a new record and tombstoning the old one
        for uid, slot in stale:
            self._tombstone(uid, slot)

    def close(self) -> None:
        for fd in self._fds.values():
            os.close(fd)
        self._fds.clear()

    def _sync(self, fd: int) -> None:
        if self.fsync:
            os.fsync(fd)

    # -- record operations -----------------------------------------------

    def write(self, uid: str, blob: bytes, flags: int = 0) -> Slot:
        """Store a new live record for ``uid``; any previous record is tombstoned."""
        seg = self.active
        if self.sizes[seg] >= self.max_segment_bytes:
            seg += 1
            self._new_segment(seg)
        frame, head = _frame(uid, blob, flags)
        offset = self.sizes[seg]
        fd = self._fd(seg)
        os.pwrite(fd, frame, offset)
        self._sync(fd)
        self.sizes[seg] = offset + len(frame)
        slot = Slot(seg, offset, len(frame), head, flags)
        prev = self.index.get(uid)
        if prev is not None:
            self._tombstone(uid, prev)
        self.index[uid] = slot
        self.members[seg][uid] = slot
        return slot

    def read(self, uid: str) -> tuple:
        slot = self.index[uid]
        blob = os.pread(self._fd(slot.segment), slot.length - slot.head - 4, slot.offset + slot.head)
        return slot.flags, blob

    def rewrite(self, uid: str, blob: bytes, flags: int) -> Slot:
        """Replace the blob of the live record in place (same length)."""
        slot = self.index[uid]
        if len(blob) != slot.blob_length:
            raise ValueError("in-place rewrite must preserve blob length")
        frame, _ = _frame(uid, blob, flags)
        fd = self._fd(slot.segment)
        os.pwrite(fd, frame, slot.offset)
        self._sync(fd)
        new = slot._replace(flags=flags)
        self.index[uid] = new
        self.members[slot.segment][uid] = new
        return new

    def _tombstone(self, uid: str, slot: Slot, passes: tuple = ()) -> None:
        fd = self._fd(slot.segment)
        n = slot.blob_length
        for pattern in passes:
            os.pwrite(fd, self._pattern(pattern, n), slot.blob_offset)
            os.fsync(fd)
        frame, _ = _frame(uid, bytes(n), FLAG_TOMBSTONE)
        os.pwrite(fd, frame, slot.offset)
        self._sync(fd)
        members = self.members[slot.segment]
        if members.get(uid) == slot:
            del members[uid]
        self.dead[slot.segment] += 1

    def _pattern(self, pattern, n: int) -> bytes:
        if pattern == "random":
            return self._rng.randbytes(n)
        return bytes((pattern,)) * n

    def remove(self, uid: str, passes: tuple = ()) -> int:
        """Tombstone the live record, overwriting its blob with each pass first.

        Returns the number of blob bytes destroyed.
        """
        slot = self.index.pop(uid)
        self._tombstone(uid, slot, passes)
        return slot.blob_length

    # -- space -----------------------------------------------------------

    def tombstones(self) -> int:
        return sum(self.dead.values())

    def total_bytes(self) -> int:
        return sum(self.sizes.values())

    def compact(self, level: str = "incremental", min_dead_fraction: float = 0.0) -> int:
        """Reclaim tombstoned space; returns the bytes reclaimed.

        ``incremental`` rewrites, one at a time, the segments whose share of
        tombstoned records exceeds ``min_dead_fraction``. ``full`` repacks
        every live record into fresh, densely filled segments.
        """
        before = self.total_bytes()
        if level == "incremental":
            for seg in self.segment_ids():
                dead = self.dead[seg]
                if dead and dead / (dead + len(self.members[seg])) > min_dead_fraction:
                    self._rewrite_segment(seg)
        elif level == "full":
            self._repack()
        else:
            raise ValueError(f"unknown compaction level {level!r}")
        return before - self.total_bytes()

    def _rewrite_segment(self, seg: int) -> None:
        fd = self._fd(seg)
        data = os.pread(fd, self.sizes[seg], 0)
        chunks = [data[:HEADER_SIZE]]
        pos = HEADER_SIZE
        moved = {}
        for uid, slot in self.members[seg].items():
            chunks.append(data[slot.offset:slot.offset + slot.length])
            moved[uid] = Slot(seg, pos, slot.length, slot.head, slot.flags)
            pos += slot.length
        self._replace_file(seg, b"".join(chunks))
        self.members[seg] = moved
        self.index.update(moved)
        self.dead[seg] = 0
        self.sizes[seg] = pos

    def _replace_file(self, seg: int, content: bytes) -> None:
        tmp = self.path(seg) + ".compact"
        with open(tmp, "wb") as fh:
            fh.write(content)
            if self.fsync:
                fh.flush()
                os.fsync(fh.fileno())
        fd = self._fds.pop(seg, None)
        if fd is not None:
            os.close(fd)
        os.replace(tmp, self.path(seg))

    def _repack(self) -> None:
        old = self.segment_ids()
        seg = old[-1] + 1
        limit = self.max_segment_bytes
        header = MAGIC + bytes((VERSION,))
        make = tuple.__new__
        out, pos = [header], HEADER_SIZE
        members: dict = {}
        new_members, new_sizes = {}, {}
        for src in old:
            data = os.pread(self._fd(src), self.sizes[src], 0)
            start = end = -1   # contiguous run of live records, copied with one slice
            for uid, (_, offset, length, head, flags) in self.members[src].items():
                if pos >= limit:
                    if start >= 0:
                        out.append(data[start:end])
                        start = -1
                    new_members[seg], new_sizes[seg] = members, pos
                    self._replace_file(seg, b"".join(out))
                    seg += 1
                    out, pos, members = [header], HEADER_SIZE, {}
                if offset != end or start < 0:
                    if start >= 0:
                        out.append(data[start:end])
                    start = offset
                end = offset + length
                members[uid] = make(Slot, (seg, pos, length, head, flags))
                pos += length
            if start >= 0:
                out.append(data[start:end])
        new_members[seg], new_sizes[seg] = members, pos
        self._replace_file(seg, b"".join(out))
        for src in old:
            fd = self._fds.pop(src, None)
            if fd is not None:
                os.close(fd)
            os.remove(self.path(src))
        self.members = new_members
        self.sizes = new_sizes
        self.dead = {s: 0 for s in new_members}
        for m in new_members.values():
            self.index.update(m)
