"""
GPND — Binary Files
Atomic file writes and the checksummed little-endian framing shared by the
model file ("GPND") and the synthetic dataset file ("GPDS").

Frame layout: 4-byte magic, u32 version, payload, u64 checksum of every
preceding byte (BLAKE2b, 8-byte digest, little-endian).
"""

import hashlib
import os
import struct
import tempfile

import numpy as np

from gpnd.errors import DataError, ModelFormatError

_CHECKSUM_SIZE = 8


def checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=_CHECKSUM_SIZE).digest(), "little")


# ── Atomic writes ─────────────────────────────────────────────────────────────

def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write to a temp file in the target directory, fsync, then rename over ``path``."""
    atomic_write_group([(path, payload)])


def atomic_write_group(items: list[tuple[str, bytes]]) -> None:
    """Stage every file as an fsynced temp file, then rename them all into place.

    Nothing is renamed unless every file was staged.  If a rename fails, the
    targets already renamed in this call are removed so no partial group remains.
    """
    staged: list[tuple[str, str]] = []
    try:
        for path, payload in items:
            staged.append((_stage(path, payload), path))
    except BaseException:
        for tmp_path, _ in staged:
            _discard(tmp_path)
        raise
    placed: list[str] = []
    for tmp_path, path in staged:
        try:
            os.replace(tmp_path, path)
        except OSError as exc:
            for leftover, _ in staged:
                _discard(leftover)
            for done in placed:
                _discard(done)
            raise DataError(f"cannot write {path}: {exc}") from exc
        placed.append(path)


def _stage(path: str, payload: bytes) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
    except OSError as exc:
        _discard(tmp_path)
        raise DataError(f"cannot write {path}: {exc}") from exc
    except BaseException:
        _discard(tmp_path)
        raise
    return tmp_path


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _discard(path: str) -> None:
    try:
        os.remove(path)
    except OSError:
        pass


# ── Framing ───────────────────────────────────────────────────────────────────

class BinaryWriter:
    """Accumulates a framed payload; ``finish()`` appends the checksum."""

    def __init__(self, magic: bytes, version: int):
        self._parts = [magic, struct.pack("<I", version)]

    def u8(self, value: int) -> None:
        self._parts.append(struct.pack("<B", value))

    def u32(self, value: int) -> None:
        self._parts.append(struct.pack("<I", value))

    def f64(self, value: float) -> None:
        self._parts.append(struct.pack("<d", value))

    def f64_array(self, values: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(values, dtype="<f8").tobytes())

    def u32_array(self, values: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(values, dtype="<u4").tobytes())

    def blob(self, payload: bytes) -> None:
        self.u32(len(payload))
        self._parts.append(payload)

    def finish(self) -> bytes:
        body = b"".join(self._parts)
        return body + struct.pack("<Q", checksum(body))


class BinaryReader:
    """Validates checksum, magic and version up front, then reads sequentially.

    Every failure raises ModelFormatError; nothing is returned half-parsed.
    """

    def __init__(self, data: bytes, magic: bytes, version: int, kind: str = "file"):
        self.kind = kind
        header = len(magic) + 4
        if len(data) < header + _CHECKSUM_SIZE:
            raise ModelFormatError(f"{kind} is truncated ({len(data)} bytes)")
        if data[:len(magic)] != magic:
            raise ModelFormatError(f"{kind} has bad magic {data[:len(magic)]!r}, expected {magic!r}")
        body, (stored,) = data[:-_CHECKSUM_SIZE], struct.unpack("<Q", data[-_CHECKSUM_SIZE:])
        if checksum(body) != stored:
            raise ModelFormatError(f"{kind} checksum mismatch (truncated or corrupted)")
        (found,) = struct.unpack("<I", body[len(magic):header])
        if found != version:
            raise ModelFormatError(f"{kind} version {found} is not supported (expected {version})")
        self._body = body
        self._offset = header

    def _take(self, size: int) -> bytes:
        end = self._offset + size
        if size < 0 or end > len(self._body):
            raise ModelFormatError(f"{self.kind} is truncated")
        chunk = self._body[self._offset:end]
        self._offset = end
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def f64_array(self, count: int, shape: tuple[int, ...] | None = None) -> np.ndarray:
        arr = np.frombuffer(self._take(8 * count), dtype="<f8").astype(np.float64)
        return arr.reshape(shape) if shape is not None else arr

    def u32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * count), dtype="<u4").astype(np.int64)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def done(self) -> None:
        if self._offset != len(self._body):
            raise ModelFormatError(f"{self.kind} has {len(self._body) - self._offset} trailing bytes")
