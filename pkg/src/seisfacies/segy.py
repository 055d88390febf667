"""SEG-Y rev1 reading and writing, plus a layered synthetic volume generator.

Only fixed-length, big-endian traces in 4-byte IBM (format code 1) or 4-byte
IEEE (format code 5) floating point are supported. Traces are placed on a
rectilinear (inline, crossline) grid inferred from a header pre-scan; a file
that does not fill its grid completely is rejected instead of being padded.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional

import numpy as np

from .errors import (
    DataIOError,
    InvalidHeader,
    InvalidSpec,
    InvalidVolume,
    NonRectilinearGeometry,
    TruncatedHeader,
    TruncatedTrace,
    UnsupportedFormatCode,
    VariableTraceLength,
)

TEXTUAL_HEADER_BYTES = 3200
BINARY_HEADER_BYTES = 400
TRACE_HEADER_BYTES = 240
SAMPLE_BYTES = 4
SUPPORTED_FORMATS = (1, 5)

# 1-based byte positions from the rev1 standard, stored 0-based.
_BH_TRACES_PER_ENSEMBLE = 12
_BH_SAMPLE_INTERVAL = 16
_BH_SAMPLES_PER_TRACE = 20
_BH_FORMAT_CODE = 24
_BH_SORTING_CODE = 28
_BH_MEASUREMENT_SYSTEM = 54
_BH_REVISION = 300
_BH_FIXED_LENGTH = 302
_BH_EXTENDED_HEADERS = 304

_TH_SEQ_LINE = 0
_TH_SEQ_FILE = 4
_TH_TRACE_ID = 28
_TH_SCALAR_COORD = 70
_TH_SAMPLES = 114
_TH_SAMPLE_INTERVAL = 116
_TH_INLINE = 188
_TH_CROSSLINE = 192


@dataclass(frozen=True)
class BinaryHeader:
    sample_interval_us: int
    samples_per_trace: int
    data_format_code: int
    trace_count_hint: Optional[int] = None
    extended_textual_headers: int = 0


@dataclass(frozen=True)
class TraceHeader:
    inline_no: int
    crossline_no: int
    samples_in_trace: int
    scalar_coord: int


@dataclass(frozen=True, eq=False)
class SeismicVolume:
    """Immutable amplitude cube with axes (inline, crossline, sample).

    ``inlines`` and ``crosslines`` hold the header numbers of each grid row and
    column; they default to 1-based counters for synthetic volumes.
    """

    data: np.ndarray
    dt_s: float
    inlines: Optional[np.ndarray] = None
    crosslines: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidVolume(f"volume must be a non-empty 3D array, got shape {data.shape}")
        if not self.dt_s > 0:
            raise InvalidVolume(f"sample interval must be positive, got {self.dt_s}")
        if not np.isfinite(data).all():
            raise InvalidVolume("volume contains non-finite amplitudes")
        data = data.view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        n_il, n_xl, _ = data.shape
        for name, n in (("inlines", n_il), ("crosslines", n_xl)):
            numbers = getattr(self, name)
            numbers = np.arange(1, n + 1) if numbers is None else np.asarray(numbers, dtype=np.int64)
            if numbers.shape != (n,):
                raise InvalidVolume(f"{name} must have length {n}, got {numbers.shape}")
            object.__setattr__(self, name, numbers)

    @property
    def geometry(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def n_samples_total(self) -> int:
        return int(self.data.size)


# --- IBM floating point ---------------------------------------------------


def decode_ibm_float(word: int) -> float:
    """Decode one 32-bit IBM System/360 single-precision word.

    value = sign * (fraction / 2**24) * 16**(exponent - 64), applied without
    renormalising unnormalised fractions. The result is exact in float64.
    """
    word &= 0xFFFFFFFF
    fraction = word & 0x00FFFFFF
    exponent = (word >> 24) & 0x7F
    value = math.ldexp(float(fraction), 4 * (exponent - 64) - 24)
    return -value if word >> 31 else value


def ibm_to_float(words: np.ndarray) -> np.ndarray:
    """Vectorised :func:`decode_ibm_float` over an array of uint32 words."""
    words = np.asarray(words, dtype=np.uint32)
    fraction = (words & np.uint32(0x00FFFFFF)).astype(np.float64)
    exponent = ((words >> np.uint32(24)) & np.uint32(0x7F)).astype(np.int32)
    value = np.ldexp(fraction, 4 * (exponent - 64) - 24)
    return np.where(words >> np.uint32(31), -value, value)


def float_to_ibm(values: np.ndarray) -> np.ndarray:
    """Encode reals as IBM words, rounding the 24-bit fraction to nearest.

    Magnitudes below the smallest IBM normal are stored unnormalised (and
    eventually flush to zero); magnitudes above the IBM range raise.
    """
    x = np.asarray(values, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("cannot encode non-finite values as IBM floats")
    a = np.abs(x)
    _, p = np.frexp(a)
    q = (p.astype(np.int64) + 3) // 4
    frac = np.rint(np.ldexp(a, (24 - 4 * q).astype(np.int32)))
    carry = frac >= 2.0**24
    q = np.where(carry, q + 1, q)
    frac = np.where(carry, np.rint(np.ldexp(a, (24 - 4 * q).astype(np.int32))), frac)
    if np.any((q + 64 > 127) & (a > 0)):
        raise ValueError("value exceeds the IBM floating-point range")
    under = q + 64 < 0
    if np.any(under):
        frac = np.where(under, np.rint(np.ldexp(a, 24 + 4 * 64)), frac)
        q = np.where(under, -64, q)
    frac = np.where(a == 0, 0.0, frac).astype(np.uint32)
    exponent = np.where(a == 0, 0, q + 64).astype(np.uint32)
    sign = np.where(np.signbit(x) & (a > 0), np.uint32(0x80000000), np.uint32(0))
    return sign | (exponent << np.uint32(24)) | frac


# --- headers --------------------------------------------------------------


def parse_binary_header(block: bytes) -> BinaryHeader:
    if len(block) < BINARY_HEADER_BYTES:
        raise TruncatedHeader(f"binary header needs {BINARY_HEADER_BYTES} bytes, got {len(block)}")
    (traces_per_ensemble,) = struct.unpack_from(">H", block, _BH_TRACES_PER_ENSEMBLE)
    (interval,) = struct.unpack_from(">H", block, _BH_SAMPLE_INTERVAL)
    (samples,) = struct.unpack_from(">H", block, _BH_SAMPLES_PER_TRACE)
    (code,) = struct.unpack_from(">h", block, _BH_FORMAT_CODE)
    (n_ext,) = struct.unpack_from(">h", block, _BH_EXTENDED_HEADERS)
    if code not in SUPPORTED_FORMATS:
        raise UnsupportedFormatCode(code)
    if samples == 0:
        raise InvalidHeader("binary header declares zero samples per trace")
    return BinaryHeader(
        sample_interval_us=interval,
        samples_per_trace=samples,
        data_format_code=code,
        trace_count_hint=traces_per_ensemble or None,
        extended_textual_headers=max(int(n_ext), 0),
    )


def parse_trace_header(block: bytes) -> TraceHeader:
    if len(block) < TRACE_HEADER_BYTES:
        raise TruncatedHeader(f"trace header needs {TRACE_HEADER_BYTES} bytes, got {len(block)}")
    (inline_no,) = struct.unpack_from(">i", block, _TH_INLINE)
    (crossline_no,) = struct.unpack_from(">i", block, _TH_CROSSLINE)
    (samples,) = struct.unpack_from(">H", block, _TH_SAMPLES)
    (scalar,) = struct.unpack_from(">h", block, _TH_SCALAR_COORD)
    return TraceHeader(inline_no, crossline_no, samples, scalar)


# --- reading --------------------------------------------------------------


def _as_seekable(source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source))
    if getattr(source, "seekable", lambda: False)():
        return source
    return io.BytesIO(source.read())


def _sample_dtype(format_code: int) -> np.dtype:
    return np.dtype(">u4") if format_code == 1 else np.dtype(">f4")


def read_volume(source, chunk_bytes: int = 64 << 20) -> SeismicVolume:
    """Read a rev1 SEG-Y stream (or bytes) into a rectilinear :class:`SeismicVolume`.

    Headers are pre-scanned in one pass to infer the (inline, crossline) grid;
    samples are then loaded in blocks of roughly ``chunk_bytes``.
    """
    stream = _as_seekable(source)
    start = stream.tell()
    text = stream.read(TEXTUAL_HEADER_BYTES)
    if len(text) < TEXTUAL_HEADER_BYTES:
        raise TruncatedHeader(f"textual header needs {TEXTUAL_HEADER_BYTES} bytes, got {len(text)}")
    bh = parse_binary_header(stream.read(BINARY_HEADER_BYTES))

    data_start = start + TEXTUAL_HEADER_BYTES + BINARY_HEADER_BYTES
    data_start += bh.extended_textual_headers * TEXTUAL_HEADER_BYTES
    end = stream.seek(0, io.SEEK_END)
    if end < data_start:
        raise TruncatedHeader("file ends inside the extended textual headers")
    ns = bh.samples_per_trace
    record = TRACE_HEADER_BYTES + SAMPLE_BYTES * ns
    n_traces, leftover = divmod(end - data_start, record)
    if leftover:
        raise TruncatedTrace(
            f"trace {n_traces} is truncated: {leftover} of {record} bytes present"
        )

    il_no = np.empty(n_traces, dtype=np.int64)
    xl_no = np.empty(n_traces, dtype=np.int64)
    for i in range(n_traces):
        stream.seek(data_start + i * record)
        th = parse_trace_header(stream.read(TRACE_HEADER_BYTES))
        if th.samples_in_trace not in (0, ns):
            raise VariableTraceLength(
                f"trace {i} declares {th.samples_in_trace} samples, binary header {ns}"
            )
        il_no[i] = th.inline_no
        xl_no[i] = th.crossline_no

    il_idx, xl_idx, inlines, crosslines = _grid_from_headers(il_no, xl_no)

    rec_dtype = np.dtype([("header", f"V{TRACE_HEADER_BYTES}"), ("samples", _sample_dtype(bh.data_format_code), (ns,))])
    data = np.empty((len(inlines), len(crosslines), ns), dtype=np.float64)
    per_block = max(1, chunk_bytes // record)
    stream.seek(data_start)
    for first in range(0, n_traces, per_block):
        count = min(per_block, n_traces - first)
        raw = stream.read(count * record)
        if len(raw) != count * record:
            raise TruncatedTrace(f"stream ended while reading traces {first}..{first + count - 1}")
        samples = np.frombuffer(raw, dtype=rec_dtype)["samples"]
        if bh.data_format_code == 1:
            values = ibm_to_float(samples)
        else:
            values = samples.astype(np.float64)
        data[il_idx[first:first + count], xl_idx[first:first + count]] = values

    return SeismicVolume(data, bh.sample_interval_us * 1e-6, inlines, crosslines)


def _grid_from_headers(il_no, xl_no):
    if il_no.size == 0:
        raise NonRectilinearGeometry("file contains no traces")
    inlines, il_idx = np.unique(il_no, return_inverse=True)
    crosslines, xl_idx = np.unique(xl_no, return_inverse=True)
    counts = np.zeros((len(inlines), len(crosslines)), dtype=np.int64)
    np.add.at(counts, (il_idx, xl_idx), 1)
    missing = [(int(inlines[i]), int(crosslines[j])) for i, j in zip(*np.nonzero(counts == 0))]
    duplicated = [(int(inlines[i]), int(crosslines[j])) for i, j in zip(*np.nonzero(counts > 1))]
    if missing or duplicated:
        parts = []
        if missing:
            parts.append(f"{len(missing)} missing (inline, crossline) cells, first: {missing[:10]}")
        if duplicated:
            parts.append(f"{len(duplicated)} duplicated cells, first: {duplicated[:10]}")
        raise NonRectilinearGeometry("; ".join(parts), missing=missing, duplicated=duplicated)
    return il_idx, xl_idx, inlines, crosslines


def read_segy(path) -> SeismicVolume:
    """Open ``path`` and :func:`read_volume` it."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataIOError(f"cannot open SEG-Y file {path}: {exc.strerror}") from exc
    with fh:
        return read_volume(fh)


# --- writing --------------------------------------------------------------


def _textual_header(lines) -> bytes:
    cards = [f"C{i + 1:2d} {line}"[:80].ljust(80) for i, line in enumerate(lines)]
    cards += [f"C{i + 1:2d}".ljust(80) for i in range(len(cards), 40)]
    return "".join(cards[:40]).encode("cp037")


def write_volume(volume: SeismicVolume, stream: BinaryIO, format_code: int = 5) -> None:
    """Write ``volume`` as rev1 SEG-Y. Samples are stored as 4-byte floats.

    Exists so the reader can be round-trip tested; it writes only the header
    words the reader consumes plus the usual bookkeeping fields.
    """
    if format_code not in SUPPORTED_FORMATS:
        raise UnsupportedFormatCode(format_code)
    n_il, n_xl, ns = volume.geometry
    interval_us = round(volume.dt_s * 1e6)
    if not 0 < interval_us <= 0xFFFF or ns > 0xFFFF:
        raise InvalidVolume("sample interval or trace length does not fit SEG-Y rev1 fields")

    stream.write(_textual_header([
        "seisfacies SEG-Y writer",
        f"inlines {n_il} crosslines {n_xl} samples {ns} dt {interval_us} us",
        f"data format code {format_code}",
        "inline number bytes 189-192, crossline number bytes 193-196",
    ]))
    bh = bytearray(BINARY_HEADER_BYTES)
    struct.pack_into(">H", bh, _BH_TRACES_PER_ENSEMBLE, min(n_xl, 0xFFFF))
    struct.pack_into(">H", bh, _BH_SAMPLE_INTERVAL, interval_us)
    struct.pack_into(">H", bh, _BH_SAMPLES_PER_TRACE, ns)
    struct.pack_into(">h", bh, _BH_FORMAT_CODE, format_code)
    struct.pack_into(">h", bh, _BH_SORTING_CODE, 4)
    struct.pack_into(">h", bh, _BH_MEASUREMENT_SYSTEM, 1)
    struct.pack_into(">H", bh, _BH_REVISION, 0x0100)
    struct.pack_into(">h", bh, _BH_FIXED_LENGTH, 1)
    stream.write(bytes(bh))

    seq = 0
    for i, il in enumerate(volume.inlines):
        if format_code == 1:
            block = float_to_ibm(volume.data[i]).astype(">u4")
        else:
            block = volume.data[i].astype(">f4")
        for j, xl in enumerate(volume.crosslines):
            seq += 1
            th = bytearray(TRACE_HEADER_BYTES)
            struct.pack_into(">i", th, _TH_SEQ_LINE, seq)
            struct.pack_into(">i", th, _TH_SEQ_FILE, seq)
            struct.pack_into(">h", th, _TH_TRACE_ID, 1)
            struct.pack_into(">h", th, _TH_SCALAR_COORD, 1)
            struct.pack_into(">H", th, _TH_SAMPLES, ns)
            struct.pack_into(">H", th, _TH_SAMPLE_INTERVAL, interval_us)
            struct.pack_into(">i", th, _TH_INLINE, int(il))
            struct.pack_into(">i", th, _TH_CROSSLINE, int(xl))
            stream.write(bytes(th))
            stream.write(block[j].tobytes())


def write_segy(volume: SeismicVolume, path, format_code: int = 5) -> None:
    try:
        fh = open(path, "wb")
    except OSError as exc:
        raise DataIOError(f"cannot write SEG-Y file {path}: {exc.strerror}") from exc
    with fh:
        write_volume(volume, fh, format_code)


# --- synthetic volumes ----------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a layered-earth synthetic.

    ``n_layers`` homogeneous layers give ``n_layers - 1`` reflecting interfaces.
    ``dip`` shifts every interface by that many samples per inline step, so
    ``dip=0`` means horizontal layers.
    """

    geometry: tuple[int, int, int]
    n_layers: int = 6
    wavelet_peak_hz: float = 30.0
    noise_std: float = 0.0
    seed: int = 0
    dt_s: float = 0.004
    dip: float = 0.0

    def validate(self) -> None:
        if len(self.geometry) != 3 or any(int(n) <= 0 for n in self.geometry):
            raise InvalidSpec(f"geometry must be three positive sizes, got {self.geometry}")
        if self.n_layers < 1:
            raise InvalidSpec("n_layers must be >= 1")
        if self.n_layers - 1 > self.geometry[2] - 1:
            raise InvalidSpec("too many layers for the trace length")
        if self.noise_std < 0:
            raise InvalidSpec("noise_std must be >= 0")
        if not self.wavelet_peak_hz > 0 or not self.dt_s > 0:
            raise InvalidSpec("wavelet_peak_hz and dt_s must be positive")


def ricker(peak_hz: float, dt_s: float) -> np.ndarray:
    """Zero-phase Ricker wavelet sampled at ``dt_s``, odd length, truncated at +-1.5 periods."""
    half = max(1, int(math.ceil(1.5 / (peak_hz * dt_s))))
    t = np.arange(-half, half + 1) * dt_s
    arg = (math.pi * peak_hz * t) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def synth_volume(spec: SynthSpec) -> SeismicVolume:
    """Layered reflectivity convolved with a Ricker wavelet plus seeded Gaussian noise."""
    spec.validate()
    n_il, n_xl, ns = (int(n) for n in spec.geometry)
    rng = np.random.default_rng(spec.seed)
    n_iface = spec.n_layers - 1
    depths = np.sort(rng.choice(np.arange(1, ns), size=n_iface, replace=False))
    impedance = rng.uniform(2.0, 6.0, size=spec.n_layers)
    coeff = (impedance[1:] - impedance[:-1]) / (impedance[1:] + impedance[:-1])
    wavelet = ricker(spec.wavelet_peak_hz, spec.dt_s)
    half = len(wavelet) // 2

    data = np.zeros((n_il, n_xl, ns))
    for il in range(n_il if spec.dip else 1):
        refl = np.zeros(ns)
        pos = depths + int(round(spec.dip * il))
        keep = (pos >= 0) & (pos < ns)
        np.add.at(refl, pos[keep], coeff[keep])
        trace = np.convolve(refl, wavelet)[half:half + ns]
        if spec.dip:
            data[il] = trace
        else:
            data[:] = trace
    if spec.noise_std > 0:
        data += spec.noise_std * rng.standard_normal(data.shape)
    return SeismicVolume(data, spec.dt_s)
