"""Per-access query and policy logs kept beside the action history.

Entries are ``len:u32 | uid_len:u16 | uid | payload``; payloads may be
encrypted with a keyed stream. ``scrub`` zeroes every payload of a unit in
place so the log can be purged without rewriting the file.
"""

from __future__ import annotations

import os
import struct
from typing import Optional

from .codec import xor_transform

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")


class AuxLog:
    def __init__(self, path: str, key: Optional[bytes] = None):
        self.path = path
        self.key = key
        self._entries: dict = {}   # uid -> [(payload offset, length)]
        self._fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_APPEND, 0o644)
        self._size = os.fstat(self._fd).st_size
        if self._size:
            self._scan()

    def _scan(self) -> None:
        data = os.pread(self._fd, self._size, 0)
        pos = 0
        while pos + 6 <= len(data):
            (n,) = _U32.unpack_from(data, pos)
            (ulen,) = _U16.unpack_from(data, pos + 4)
            uid = data[pos + 6:pos + 6 + ulen].decode("utf-8", "replace")
            start = pos + 6 + ulen
            self._entries.setdefault(uid, []).append((start, n - 2 - ulen))
            pos += 4 + n

    def append(self, uid: str, line: str) -> None:
        payload = line.encode("utf-8")
        if self.key is not None:
            payload = xor_transform(payload, self.key, _U32.pack(self._size))
        u = uid.encode("utf-8")
        entry = _U16.pack(len(u)) + u + payload
        os.write(self._fd, _U32.pack(len(entry)) + entry)
        self._entries.setdefault(uid, []).append((self._size + 6 + len(u), len(payload)))
        self._size += 4 + len(entry)

    def scrub(self, uid: str) -> int:
        spans = self._entries.pop(uid, ())
        if not spans:
            return 0
        fd = os.open(self.path, os.O_WRONLY)
        try:
            for offset, n in spans:
                os.pwrite(fd, bytes(n), offset)
        finally:
            os.close(fd)
        return len(spans)

    @property
    def size(self) -> int:
        return self._size

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
