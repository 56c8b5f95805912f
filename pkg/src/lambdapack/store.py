"""Tile-granular object store with per-key read-after-write consistency.

Two backends behind one interface: an in-memory dict and a filesystem tree
that publishes atomically via write-to-temp-then-rename. The only
consistency promise is per-key read-after-write; there is no cross-key
ordering. Overwriting a key with identical bytes is allowed (idempotent
re-execution under at-least-once delivery); different bytes is an error.

Tile wire format: 8-byte magic ``LPTILE01``, little-endian u32 rows, u32
cols, then rows*cols little-endian f64 values, row-major.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
import threading
import time
from dataclasses import dataclass, field

import numpy as np

TILE_MAGIC = b"LPTILE01"
_HEADER = struct.Struct("<8sII")


class StoreError(Exception):
    pass


class MissingTileError(StoreError):
    pass


class TileFormatError(StoreError):
    pass


class WriteConflictError(StoreError):
    """Same key written twice with different bytes: single assignment broken."""


@dataclass(frozen=True)
class TileKey:
    run_id: str
    matrix_name: str
    indices: tuple[int, ...]

    def canonical(self) -> str:
        return f"{self.run_id}/{self.matrix_name}/" + "_".join(map(str, self.indices))

    def __str__(self) -> str:
        return self.canonical()


class Tile:
    """A dense float64 block; the unit of storage, transfer, and compute."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        a = np.ascontiguousarray(data, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise TileFormatError(f"tile must be 2-D and non-empty, got shape {a.shape}")
        self.data = a

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def nbytes(self) -> int:
        return _HEADER.size + self.data.size * 8

    def encode(self) -> bytes:
        if not np.isfinite(self.data).all():
            raise TileFormatError("tile contains non-finite values")
        return _HEADER.pack(TILE_MAGIC, self.rows, self.cols) + self.data.tobytes()

    @classmethod
    def decode(cls, blob: bytes) -> "Tile":
        if len(blob) < _HEADER.size:
            raise TileFormatError("truncated tile header")
        magic, rows, cols = _HEADER.unpack_from(blob)
        if magic != TILE_MAGIC:
            raise TileFormatError(f"bad tile magic {magic!r}")
        expected = _HEADER.size + rows * cols * 8
        if len(blob) != expected:
            raise TileFormatError(
                f"tile payload is {len(blob)} bytes, header implies {expected}"
            )
        data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
        return cls(data.copy())

    def __eq__(self, other):
        return isinstance(other, Tile) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"Tile({self.rows}x{self.cols})"


@dataclass
class StoreStats:
    puts: int = 0
    gets: int = 0
    bytes_written: int = 0
    bytes_read: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record_put(self, n: int):
        with self._lock:
            self.puts += 1
            self.bytes_written += n

    def record_get(self, n: int):
        with self._lock:
            self.gets += 1
            self.bytes_read += n

    def snapshot(self) -> tuple[int, int, int, int]:
        with self._lock:
            return (self.puts, self.gets, self.bytes_written, self.bytes_read)


class ObjectStore:
    """Common backend behavior: latency/bandwidth simulation and counters.

    ``op_delay_s`` sleeps before each get/put commit; ``bytes_per_second``
    adds size-proportional delay. Both exist to reproduce pipelining
    effects at desk scale. tile_exists is treated as control traffic and
    is never delayed.
    """

    def __init__(self, op_delay_s: float = 0.0, bytes_per_second: float | None = None):
        self.op_delay_s = op_delay_s
        self.bytes_per_second = bytes_per_second
        self.stats = StoreStats()

    def _simulate(self, nbytes: int):
        delay = self.op_delay_s
        if self.bytes_per_second:
            delay += nbytes / self.bytes_per_second
        if delay > 0:
            time.sleep(delay)

    def put_tile(self, key: TileKey, tile: Tile) -> None:
        blob = tile.encode()
        self._simulate(len(blob))
        self._commit(key, blob)
        self.stats.record_put(len(blob))

    def get_tile(self, key: TileKey) -> Tile:
        self._simulate(0)
        blob = self._fetch(key)
        self.stats.record_get(len(blob))
        return Tile.decode(blob)

    def tile_exists(self, key: TileKey) -> bool:
        raise NotImplementedError

    def _commit(self, key: TileKey, blob: bytes) -> None:
        raise NotImplementedError

    def _fetch(self, key: TileKey) -> bytes:
        raise NotImplementedError


class MemoryStore(ObjectStore):
    def __init__(self, **kw):
        super().__init__(**kw)
        self._blobs: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def _commit(self, key: TileKey, blob: bytes) -> None:
        k = key.canonical()
        with self._lock:
            old = self._blobs.get(k)
            if old is not None and old != blob:
                raise WriteConflictError(f"{k} rewritten with different bytes")
            self._blobs[k] = blob

    def _fetch(self, key: TileKey) -> bytes:
        try:
            return self._blobs[key.canonical()]
        except KeyError:
            raise MissingTileError(key.canonical()) from None

    def tile_exists(self, key: TileKey) -> bool:
        return key.canonical() in self._blobs


class FileStore(ObjectStore):
    """Layout: <root>/<run_id>/<matrix>/<i0>_<i1>[...].tile

    Publication is atomic on POSIX: the blob is written to a temp file in
    the same directory and renamed over the final path, so a concurrent
    reader sees either nothing or the whole tile.
    """

    def __init__(self, root: str, **kw):
        super().__init__(**kw)
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, key: TileKey) -> str:
        return os.path.join(
            self.root, key.run_id, key.matrix_name,
            "_".join(map(str, key.indices)) + ".tile",
        )

    def _commit(self, key: TileKey, blob: bytes) -> None:
        path = self._path(key)
        if os.path.exists(path):
            with open(path, "rb") as f:
                if f.read() != blob:
                    raise WriteConflictError(f"{key} rewritten with different bytes")
            return
        os.makedirs(os.path.dirname(path), exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _fetch(self, key: TileKey) -> bytes:
        try:
            with open(self._path(key), "rb") as f:
                return f.read()
        except FileNotFoundError:
            raise MissingTileError(key.canonical()) from None

    def tile_exists(self, key: TileKey) -> bool:
        return os.path.exists(self._path(key))


# --- big-matrix blocking -------------------------------------------------------


@dataclass(frozen=True)
class BigMatrix:
    """Blocking metadata for one dense matrix; boundary tiles may be ragged."""

    name: str
    element_rows: int
    element_cols: int
    block: int

    def __post_init__(self):
        if self.block < 1:
            raise ValueError("block must be >= 1")

    @property
    def grid_rows(self) -> int:
        return math.ceil(self.element_rows / self.block)

    @property
    def grid_cols(self) -> int:
        return math.ceil(self.element_cols / self.block)

    def tile_shape(self, i: int, j: int) -> tuple[int, int]:
        if not (0 <= i < self.grid_rows and 0 <= j < self.grid_cols):
            raise IndexError(f"tile ({i},{j}) outside {self.grid_rows}x{self.grid_cols} grid")
        rows = min(self.block, self.element_rows - i * self.block)
        cols = min(self.block, self.element_cols - j * self.block)
        return rows, cols


def partition(dense: np.ndarray, block: int) -> list[tuple[tuple[int, int], Tile]]:
    """Row-major list of ((i, j), tile); ragged edges keep their true size."""
    if block < 1:
        raise ValueError("block must be >= 1")
    dense = np.asarray(dense, dtype=np.float64)
    rows, cols = dense.shape
    out = []
    for i in range(math.ceil(rows / block)):
        for j in range(math.ceil(cols / block)):
            piece = dense[i * block : (i + 1) * block, j * block : (j + 1) * block]
            out.append(((i, j), Tile(piece)))
    return out


def assemble(tiles: dict[tuple[int, int], Tile]) -> np.ndarray:
    """Inverse of partition; validates that tile shapes agree along rows/cols."""
    if not tiles:
        raise ValueError("no tiles to assemble")
    grid_rows = 1 + max(i for i, _ in tiles)
    grid_cols = 1 + max(j for _, j in tiles)
    row_heights = [None] * grid_rows
    col_widths = [None] * grid_cols
    for (i, j), t in tiles.items():
        if row_heights[i] is None:
            row_heights[i] = t.rows
        elif row_heights[i] != t.rows:
            raise StoreError(f"inconsistent tile heights in block-row {i}")
        if col_widths[j] is None:
            col_widths[j] = t.cols
        elif col_widths[j] != t.cols:
            raise StoreError(f"inconsistent tile widths in block-col {j}")
    if len(tiles) != grid_rows * grid_cols:
        raise StoreError(
            f"assemble requires a full tile grid: got {len(tiles)} of "
            f"{grid_rows * grid_cols} tiles"
        )
    out = np.zeros((sum(row_heights), sum(col_widths)))
    r0 = np.concatenate([[0], np.cumsum(row_heights)])
    c0 = np.concatenate([[0], np.cumsum(col_widths)])
    for (i, j), t in tiles.items():
        out[r0[i] : r0[i + 1], c0[j] : c0[j + 1]] = t.data
    return out
