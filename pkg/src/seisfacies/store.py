"""Flattened feature matrix, z-score normalisation and the chunked columnar store.

Row order: row id = ((il * n_crossline) + xl) * n_sample + s, i.e. C order of
the (inline, crossline, sample) cube.

On-disk layout of a store directory::

    manifest            JSON text, see StoreManifest
    chunk_000000.bin    rows [0, chunk_rows), column-major little-endian float32
    chunk_000001.bin    ...

Each chunk file holds column 0 for all of the chunk's rows, then column 1, and
so on. The manifest records every chunk's row range, byte length and CRC-32.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .attributes import ATTRIBUTE_NAMES, FeatureVolumeSet
from .errors import (
    ChecksumError,
    ChunkOutOfRange,
    DataIOError,
    EmptyMatrix,
    GeometryMismatch,
    ManifestError,
    StatsMismatch,
)

FORMAT_NAME = "seisfacies-store"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest"
DEFAULT_CHUNK_ROWS = 1 << 20
# A column is constant when its std is at most this fraction of |mean|.
CONSTANT_STD_RTOL = 1e-12

_STORE_DTYPE = np.dtype("<f4")


def chunk_file_name(index: int) -> str:
    return f"chunk_{index:06d}.bin"


def row_ids(il, xl, s, geometry) -> np.ndarray:
    return np.ravel_multi_index((il, xl, s), tuple(geometry))


def row_coords(row, geometry) -> tuple:
    """Inverse of :func:`row_ids`: (il, xl, s) for one or many row ids."""
    return np.unravel_index(row, tuple(geometry))


class FeatureMatrix:
    """A samples x columns matrix that is only ever seen one row chunk at a time.

    ``loader(start, stop)`` returns rows ``[start, stop)`` as a fresh 2D array.
    """

    def __init__(
        self,
        n_rows: int,
        columns: Sequence[str],
        chunk_rows: int,
        loader: Callable[[int, int], np.ndarray],
        geometry: Optional[tuple] = None,
    ):
        if chunk_rows < 1:
            raise ValueError("chunk_rows must be >= 1")
        self.n_rows = int(n_rows)
        self.columns = tuple(columns)
        self.chunk_rows = int(chunk_rows)
        self.geometry = None if geometry is None else tuple(int(n) for n in geometry)
        self._loader = loader

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def chunk_count(self) -> int:
        return -(-self.n_rows // self.chunk_rows)

    def chunk_bounds(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.chunk_count:
            raise ChunkOutOfRange(f"chunk {index} out of range [0, {self.chunk_count})")
        start = index * self.chunk_rows
        return start, min(start + self.chunk_rows, self.n_rows)

    def read_chunk(self, index: int) -> np.ndarray:
        start, stop = self.chunk_bounds(index)
        return self._loader(start, stop)

    def iter_chunks(self) -> Iterator[np.ndarray]:
        for i in range(self.chunk_count):
            yield self.read_chunk(i)

    @classmethod
    def from_array(cls, array, chunk_rows: Optional[int] = None, columns=None, geometry=None) -> "FeatureMatrix":
        """Wrap an in-memory 2D array (mainly for tests and small data)."""
        array = np.asarray(array)
        if array.ndim != 2:
            raise GeometryMismatch(f"expected a 2D array, got shape {array.shape}")
        if columns is None:
            columns = [f"f{j}" for j in range(array.shape[1])]
        if chunk_rows is None:
            chunk_rows = max(1, array.shape[0])
        return cls(array.shape[0], columns, chunk_rows, lambda a, b: array[a:b].copy(), geometry)


def flatten(features: FeatureVolumeSet, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> FeatureMatrix:
    geometry = features.geometry
    for name in ATTRIBUTE_NAMES:
        if features[name].shape != geometry:
            raise GeometryMismatch(f"attribute {name} has shape {features[name].shape}, expected {geometry}")
    flat = [np.asarray(features[name]).reshape(-1) for name in ATTRIBUTE_NAMES]

    def load(start, stop):
        return np.column_stack([col[start:stop] for col in flat]).astype(np.float64)

    return FeatureMatrix(int(np.prod(geometry)), ATTRIBUTE_NAMES, chunk_rows, load, geometry)


# --- z-score --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray
    n_rows: int

    @property
    def constant(self) -> np.ndarray:
        return self.std <= CONSTANT_STD_RTOL * np.abs(self.mean)

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "constant": [bool(v) for v in self.constant],
        }

    @classmethod
    def from_dict(cls, d) -> "ColumnStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64), int(d["n_rows"]))


def zscore_fit(matrix: FeatureMatrix) -> ColumnStats:
    """Single pass population mean/std, merging per-chunk moments (Chan et al.)."""
    if matrix.n_rows < 2:
        raise EmptyMatrix(f"need at least 2 rows to fit z-score statistics, got {matrix.n_rows}")
    n = 0
    mean = np.zeros(matrix.n_cols)
    m2 = np.zeros(matrix.n_cols)
    for chunk in matrix.iter_chunks():
        x = np.asarray(chunk, dtype=np.float64)
        nb = x.shape[0]
        mean_b = x.mean(axis=0)
        m2_b = ((x - mean_b) ** 2).sum(axis=0)
        total = n + nb
        delta = mean_b - mean
        mean = mean + delta * (nb / total)
        m2 = m2 + m2_b + delta * delta * (n * nb / total)
        n = total
    return ColumnStats(mean, np.sqrt(m2 / n), n)


def zscore_apply(matrix: FeatureMatrix, stats: ColumnStats) -> FeatureMatrix:
    """Lazily normalised view: (x - mean) / std per column, constant columns -> 0."""
    if len(stats.mean) != matrix.n_cols or len(stats.std) != matrix.n_cols:
        raise StatsMismatch(f"stats cover {len(stats.mean)} columns, matrix has {matrix.n_cols}")
    mean = stats.mean
    scale = np.where(stats.constant, 1.0, stats.std)
    keep = ~stats.constant

    def load(start, stop):
        x = np.asarray(matrix.read_chunk(start // matrix.chunk_rows), dtype=np.float64)
        return (x - mean) / scale * keep

    return FeatureMatrix(matrix.n_rows, matrix.columns, matrix.chunk_rows, load, matrix.geometry)


# --- persistence ----------------------------------------------------------


@dataclass(frozen=True)
class ChunkInfo:
    file: str
    row_start: int
    row_stop: int
    n_bytes: int
    crc32: int

    @property
    def n_rows(self) -> int:
        return self.row_stop - self.row_start


@dataclass(frozen=True, eq=False)
class StoreManifest:
    root: Path
    columns: tuple
    n_rows: int
    chunk_rows: int
    chunks: tuple
    stats: ColumnStats
    geometry: Optional[tuple] = None
    format_version: int = FORMAT_VERSION

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def chunk_count(self) -> int:
        return len(self.chunks)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "format_version": self.format_version,
            "geometry": None if self.geometry is None else list(self.geometry),
            "columns": list(self.columns),
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "dtype": "float32-le",
            "layout": "column-major",
            "chunk_rows": self.chunk_rows,
            "chunk_count": self.chunk_count,
            "stats": self.stats.to_dict(),
            "chunks": [
                {"file": c.file, "row_start": c.row_start, "row_stop": c.row_stop,
                 "n_bytes": c.n_bytes, "crc32": c.crc32}
                for c in self.chunks
            ],
        }


def write_store(matrix: FeatureMatrix, stats: ColumnStats, path) -> StoreManifest:
    """Persist ``matrix`` chunk by chunk; the manifest is written last."""
    root = Path(path)
    if len(stats.mean) != matrix.n_cols:
        raise StatsMismatch(f"stats cover {len(stats.mean)} columns, matrix has {matrix.n_cols}")
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / MANIFEST_NAME).unlink(missing_ok=True)
        for stale in root.glob("chunk_*.bin"):
            stale.unlink()
        chunks = []
        for i in range(matrix.chunk_count):
            start, stop = matrix.chunk_bounds(i)
            block = np.asarray(matrix.read_chunk(i))
            if block.shape != (stop - start, matrix.n_cols):
                raise GeometryMismatch(f"chunk {i} has shape {block.shape}, expected {(stop - start, matrix.n_cols)}")
            payload = block.astype(_STORE_DTYPE).T.tobytes()
            name = chunk_file_name(i)
            (root / name).write_bytes(payload)
            chunks.append(ChunkInfo(name, start, stop, len(payload), zlib.crc32(payload)))
        manifest = StoreManifest(
            root=root,
            columns=matrix.columns,
            n_rows=matrix.n_rows,
            chunk_rows=matrix.chunk_rows,
            chunks=tuple(chunks),
            stats=stats,
            geometry=matrix.geometry,
        )
        tmp = root / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
        os.replace(tmp, root / MANIFEST_NAME)
    except OSError as exc:
        raise DataIOError(f"cannot write store at {root}: {exc}") from exc
    return manifest


def open_store(path) -> StoreManifest:
    root = Path(path)
    try:
        text = (root / MANIFEST_NAME).read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read store manifest in {root}: {exc.strerror or exc}") from exc
    try:
        d = json.loads(text)
        if d.get("format") != FORMAT_NAME:
            raise ManifestError(f"{root} is not a {FORMAT_NAME} directory")
        if d["format_version"] != FORMAT_VERSION:
            raise ManifestError(f"unsupported store format version {d['format_version']}")
        chunks = tuple(
            ChunkInfo(c["file"], int(c["row_start"]), int(c["row_stop"]), int(c["n_bytes"]), int(c["crc32"]))
            for c in d["chunks"]
        )
        manifest = StoreManifest(
            root=root,
            columns=tuple(d["columns"]),
            n_rows=int(d["n_rows"]),
            chunk_rows=int(d["chunk_rows"]),
            chunks=chunks,
            stats=ColumnStats.from_dict(d["stats"]),
            geometry=None if d["geometry"] is None else tuple(d["geometry"]),
            format_version=int(d["format_version"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest in {root}: {exc}") from exc
    _check_manifest(manifest, d)
    return manifest


def _check_manifest(m: StoreManifest, raw: dict) -> None:
    if len(m.chunks) != raw.get("chunk_count", len(m.chunks)):
        raise ManifestError("chunk_count disagrees with the chunk list")
    if sum(c.n_rows for c in m.chunks) != m.n_rows:
        raise ManifestError("chunk row counts do not sum to n_rows")
    expected = 0
    for i, c in enumerate(m.chunks):
        if c.row_start != expected or c.n_bytes != c.n_rows * m.n_cols * _STORE_DTYPE.itemsize:
            raise ManifestError(f"chunk {i} row range or byte length is inconsistent")
        if i < len(m.chunks) - 1 and c.n_rows != m.chunk_rows:
            raise ManifestError(f"chunk {i} has {c.n_rows} rows, expected {m.chunk_rows}")
        expected = c.row_stop


def read_chunk(manifest: StoreManifest, chunk_index: int) -> np.ndarray:
    """Rows of one chunk as a (rows, n_cols) float32 array, checksum-verified."""
    if not 0 <= chunk_index < manifest.chunk_count:
        raise ChunkOutOfRange(f"chunk {chunk_index} out of range [0, {manifest.chunk_count})")
    info = manifest.chunks[chunk_index]
    path = manifest.root / info.file
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read chunk file {path}: {exc.strerror or exc}") from exc
    if len(payload) != info.n_bytes:
        raise ChecksumError(f"{path}: {len(payload)} bytes on disk, manifest says {info.n_bytes}")
    if zlib.crc32(payload) != info.crc32:
        raise ChecksumError(f"{path}: CRC-32 mismatch")
    cols = np.frombuffer(payload, dtype=_STORE_DTYPE).reshape(manifest.n_cols, info.n_rows)
    return cols.T.astype(np.float32)


def as_matrix(source) -> FeatureMatrix:
    """Accept a FeatureMatrix, a StoreManifest or a store path."""
    if isinstance(source, FeatureMatrix):
        return source
    if isinstance(source, (str, os.PathLike)):
        source = open_store(source)
    if isinstance(source, StoreManifest):
        m = source
        return FeatureMatrix(
            m.n_rows, m.columns, m.chunk_rows,
            lambda start, stop: read_chunk(m, start // m.chunk_rows),
            m.geometry,
        )
    raise TypeError(f"cannot use {type(source).__name__} as a feature matrix")
