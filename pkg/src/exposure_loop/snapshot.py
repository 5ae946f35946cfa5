"""二进制快照的公共头部：4 字节 magic + 1 字节版本，其余字段均为小端"""
import struct

import numpy as np

from exposure_loop.errors import SnapshotError

VERSION = 1


class SnapshotReader:
    """按顺序读取快照字段，长度不足时报完整性错误"""

    def __init__(self, data: bytes, magic: bytes, source: str = "snapshot"):
        self._data = data
        self._pos = 0
        self._source = source
        head = self._take(len(magic) + 1)
        if head[: len(magic)] != magic:
            raise SnapshotError(f"{source}: bad magic {head[:len(magic)]!r}, expected {magic!r}")
        if head[len(magic)] != VERSION:
            raise SnapshotError(f"{source}: unsupported version {head[len(magic)]}")

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise SnapshotError(f"{self._source}: truncated at byte {self._pos}")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self._take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        if count < 0:
            raise SnapshotError(f"{self._source}: negative array length {count}")
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self._take(itemsize * count), dtype=dtype).copy()

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise SnapshotError(f"{self._source}: {len(self._data) - self._pos} trailing bytes")


def header(magic: bytes) -> bytes:
    return magic + bytes([VERSION])
