"""Label volumes, their binary file format, and P6 slice images.

Label volume file (little-endian)::

    offset  size  field
    0       4     magic b"SFLV"
    4       4     format version (uint32, currently 1)
    8       4     k (uint32)
    12      12    n_inline, n_crossline, n_sample (3 x uint32)
    24      ...   n_inline * n_crossline * n_sample uint8 labels, C order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    CountMismatch,
    DataIOError,
    IndexOutOfRange,
    LabelOutOfRange,
    PaletteTooSmall,
    VersionMismatch,
)

LABEL_MAGIC = b"SFLV"
LABEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

# Twelve fixed, mutually distinct colours (enough for the k = 5..12 sweep).
DEFAULT_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (128, 128, 128),
)

AXES = ("inline", "crossline")


@dataclass(frozen=True, eq=False)
class LabelVolume:
    data: np.ndarray
    k: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise CountMismatch(f"label volume must be 3D, got shape {data.shape}")
        if not 1 <= self.k <= 256:
            raise LabelOutOfRange(f"k must be in [1, 256] for uint8 labels, got {self.k}")
        if data.size and int(data.max()) >= self.k:
            raise LabelOutOfRange(f"label {int(data.max())} is not below k={self.k}")
        data = data.astype(np.uint8, copy=False).view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def geometry(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)


def labels_to_volume(labels: Union[np.ndarray, Iterable[np.ndarray]], geometry, k: Optional[int] = None) -> LabelVolume:
    """Place a row-ordered label stream onto the (inline, crossline, sample) grid.

    ``labels`` may be one array or an iterable of per-chunk arrays. When ``k``
    is omitted it is taken as ``max(label) + 1``.
    """
    geometry = tuple(int(n) for n in geometry)
    total = int(np.prod(geometry))
    if isinstance(labels, np.ndarray):
        flat = labels.reshape(-1)
    else:
        flat = np.concatenate([np.asarray(c).reshape(-1) for c in labels] or [np.zeros(0, dtype=np.int64)])
    if flat.size != total:
        raise CountMismatch(f"{flat.size} labels for geometry {geometry} ({total} cells)")
    if flat.size and int(flat.min()) < 0:
        raise LabelOutOfRange(f"negative label {int(flat.min())}")
    top = int(flat.max()) + 1 if flat.size else 1
    if k is None:
        k = top
    elif top > k:
        raise LabelOutOfRange(f"label {top - 1} is not below k={k}")
    if k > 256:
        raise LabelOutOfRange(f"k={k} does not fit uint8 labels")
    return LabelVolume(flat.astype(np.uint8).reshape(geometry), k)


def validate_palette(palette: Sequence[Sequence[int]], k: int) -> np.ndarray:
    arr = np.asarray(palette, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3 or ((arr < 0) | (arr > 255)).any():
        raise ValueError("palette must be a list of 8-bit RGB triples")
    if len(arr) < k:
        raise PaletteTooSmall(f"palette has {len(arr)} colours, volume needs {k}")
    if len({tuple(c) for c in arr.tolist()}) != len(arr):
        raise ValueError("palette colours must be distinct")
    return arr.astype(np.uint8)


def slice_pixels(volume: LabelVolume, axis: str, index: int, palette=DEFAULT_PALETTE) -> np.ndarray:
    """RGB image (height = n_sample, width = other horizontal axis), time downward."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    n = volume.geometry[AXES.index(axis)]
    if not 0 <= index < n:
        raise IndexOutOfRange(f"{axis} index {index} outside [0, {n})")
    colours = validate_palette(palette, volume.k)
    section = volume.data[index] if axis == "inline" else volume.data[:, index]
    return colours[section.T]


def export_slice_image(volume: LabelVolume, axis: str, index: int, palette=DEFAULT_PALETTE, path=None) -> bytes:
    """Encode one vertical section as a binary PPM (P6); write it to ``path`` if given."""
    pixels = slice_pixels(volume, axis, index, palette)
    height, width, _ = pixels.shape
    blob = f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()
    if path is not None:
        try:
            Path(path).write_bytes(blob)
        except OSError as exc:
            raise DataIOError(f"cannot write image {path}: {exc.strerror or exc}") from exc
    return blob


def write_label_volume(volume: LabelVolume, path) -> None:
    header = _HEADER.pack(LABEL_MAGIC, LABEL_VERSION, volume.k, *volume.geometry)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(volume.data.tobytes())
    except OSError as exc:
        raise DataIOError(f"cannot write label volume {path}: {exc.strerror or exc}") from exc


def read_label_volume(path) -> LabelVolume:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read label volume {path}: {exc.strerror or exc}") from exc
    if len(blob) < _HEADER.size:
        raise DataIOError(f"{path}: file too short for a label volume header")
    magic, version, k, *geometry = _HEADER.unpack_from(blob)
    if magic != LABEL_MAGIC:
        raise DataIOError(f"{path}: not a label volume (bad magic {magic!r})")
    if version != LABEL_VERSION:
        raise VersionMismatch(f"{path}: label volume version {version}, expected {LABEL_VERSION}")
    expected = int(np.prod(geometry))
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise DataIOError(f"{path}: payload has {len(payload)} bytes, geometry {tuple(geometry)} needs {expected}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(geometry)
    return LabelVolume(data, k)
