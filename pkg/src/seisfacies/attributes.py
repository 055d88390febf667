"""Per-trace instantaneous attributes from the FFT analytic signal.

Every function works along the last axis, so a single trace, an inline slab or
a whole cube can be passed. Formulas are fixed so runs are reproducible:

* envelope            sqrt(re**2 + im**2)
* phase               atan2(im, re), atan2(0, 0) = 0
* frequency           d(unwrapped phase)/dt / 2pi, central differences
* bandwidth           |d envelope/dt| / (2pi envelope), 0 on near-silent samples
* dominant frequency  sqrt(frequency**2 + bandwidth**2)
* reflection intensity  sliding sum of |x| dt over an odd window
* second derivative   (x[n+1] - 2x[n] + x[n-1]) / dt**2, zero at both ends
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import ordered_map
from .errors import GeometryMismatch, InvalidWindow, TraceTooShort, WindowTooLarge
from .segy import SeismicVolume

ATTRIBUTE_NAMES = (
    "amplitude",
    "cosine_inst_phase",
    "dominant_frequency",
    "envelope",
    "inst_bandwidth",
    "inst_frequency",
    "inst_phase",
    "reflection_intensity",
    "second_derivative",
)

DEFAULT_WINDOW = 11
MIN_TRACE_LENGTH = 4
# Bandwidth is zeroed where the envelope is at or below this fraction of the trace maximum.
ENVELOPE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class AnalyticTrace:
    real_part: np.ndarray
    imag_part: np.ndarray
    dt_s: float

    def __post_init__(self):
        if np.shape(self.real_part) != np.shape(self.imag_part):
            raise ValueError("real and imaginary parts must have the same shape")


def hilbert_mask(n: int) -> np.ndarray:
    """Spectral weights turning a real spectrum into a one-sided analytic one."""
    m = np.zeros(n)
    m[0] = 1.0
    if n % 2 == 0:
        m[1:n // 2] = 2.0
        m[n // 2] = 1.0
    else:
        m[1:(n + 1) // 2] = 2.0
    return m


def analytic_signal(trace, dt_s: float) -> AnalyticTrace:
    x = np.asarray(trace, dtype=np.float64)
    n = x.shape[-1] if x.ndim else 0
    if n < MIN_TRACE_LENGTH:
        raise TraceTooShort(f"trace has {n} samples, need at least {MIN_TRACE_LENGTH}")
    z = np.fft.ifft(np.fft.fft(x, axis=-1) * hilbert_mask(n), axis=-1)
    # + 0.0 turns -0.0 into +0.0 so the phase of a negative real sample is +pi.
    return AnalyticTrace(z.real.copy(), z.imag + 0.0, dt_s)


def envelope(a: AnalyticTrace) -> np.ndarray:
    return np.hypot(a.real_part, a.imag_part)


def instantaneous_phase(a: AnalyticTrace) -> np.ndarray:
    return np.arctan2(a.imag_part + 0.0, a.real_part)


def cosine_instantaneous_phase(a: AnalyticTrace) -> np.ndarray:
    return np.cos(instantaneous_phase(a))


def instantaneous_frequency(a: AnalyticTrace) -> np.ndarray:
    phase = np.unwrap(instantaneous_phase(a), axis=-1)
    return np.gradient(phase, a.dt_s, axis=-1) / (2.0 * np.pi)


def instantaneous_bandwidth(a: AnalyticTrace, env=None) -> np.ndarray:
    e = envelope(a) if env is None else env
    de = np.gradient(e, a.dt_s, axis=-1)
    floor = ENVELOPE_EPS * e.max(axis=-1, keepdims=True)
    live = e > floor
    out = np.zeros_like(e)
    np.divide(np.abs(de), 2.0 * np.pi * e, out=out, where=live)
    return out


def dominant_frequency(a: AnalyticTrace, freq=None, bandwidth=None) -> np.ndarray:
    f = instantaneous_frequency(a) if freq is None else freq
    b = instantaneous_bandwidth(a) if bandwidth is None else bandwidth
    return np.hypot(f, b)


def reflection_intensity(trace, dt_s: float, window_samples: int = DEFAULT_WINDOW) -> np.ndarray:
    x = np.abs(np.asarray(trace, dtype=np.float64))
    n = x.shape[-1]
    if window_samples < 1 or window_samples % 2 == 0:
        raise InvalidWindow(f"window must be a positive odd sample count, got {window_samples}")
    if window_samples > n:
        raise WindowTooLarge(f"window of {window_samples} samples exceeds trace length {n}")
    half = window_samples // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    windows = np.lib.stride_tricks.sliding_window_view(np.pad(x, pad), window_samples, axis=-1)
    return windows.sum(axis=-1) * dt_s


def second_derivative(trace, dt_s: float) -> np.ndarray:
    x = np.asarray(trace, dtype=np.float64)
    out = np.zeros_like(x)
    out[..., 1:-1] = (x[..., 2:] - 2.0 * x[..., 1:-1] + x[..., :-2]) / (dt_s * dt_s)
    return out


def trace_attributes(traces, dt_s: float, window_samples: int = DEFAULT_WINDOW) -> dict[str, np.ndarray]:
    """All nine attributes for one trace or a stack of traces (last axis = time)."""
    x = np.asarray(traces, dtype=np.float64)
    a = analytic_signal(x, dt_s)
    env = envelope(a)
    phase = instantaneous_phase(a)
    freq = instantaneous_frequency(a)
    bw = instantaneous_bandwidth(a, env)
    return {
        "amplitude": x.copy(),
        "cosine_inst_phase": np.cos(phase),
        "dominant_frequency": dominant_frequency(a, freq, bw),
        "envelope": env,
        "inst_bandwidth": bw,
        "inst_frequency": freq,
        "inst_phase": phase,
        "reflection_intensity": reflection_intensity(x, dt_s, window_samples),
        "second_derivative": second_derivative(x, dt_s),
    }


@dataclass(frozen=True, eq=False)
class FeatureVolumeSet:
    """Nine attribute cubes sharing one (inline, crossline, sample) geometry."""

    arrays: dict
    dt_s: float

    def __post_init__(self):
        if tuple(self.arrays) != ATTRIBUTE_NAMES:
            raise GeometryMismatch(f"attributes must be exactly {ATTRIBUTE_NAMES} in order")
        shapes = {np.shape(v) for v in self.arrays.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 3:
            raise GeometryMismatch(f"attribute volumes disagree on geometry: {sorted(shapes)}")

    @property
    def geometry(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.arrays[ATTRIBUTE_NAMES[0]].shape)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


def compute_all(volume: SeismicVolume, window_samples: int = DEFAULT_WINDOW, workers: int = 1) -> FeatureVolumeSet:
    """Attribute cubes for every trace of ``volume``.

    Work is split into one task per inline slab regardless of ``workers``, so
    the output is bitwise identical for any worker count.
    """
    n_il, n_xl, ns = volume.geometry
    if ns < MIN_TRACE_LENGTH:
        raise TraceTooShort(
            f"trace has {ns} samples, need at least {MIN_TRACE_LENGTH}",
            trace=(int(volume.inlines[0]), int(volume.crosslines[0])),
        )
    if window_samples < 1 or window_samples % 2 == 0:
        raise InvalidWindow(f"window must be a positive odd sample count, got {window_samples}")
    if window_samples > ns:
        raise WindowTooLarge(
            f"window of {window_samples} samples exceeds trace length {ns}",
            trace=(int(volume.inlines[0]), int(volume.crosslines[0])),
        )

    out = {name: np.empty(volume.geometry) for name in ATTRIBUTE_NAMES}

    def slab(il):
        return il, trace_attributes(volume.data[il], volume.dt_s, window_samples)

    for il, attrs in ordered_map(slab, range(n_il), workers):
        for name in ATTRIBUTE_NAMES:
            out[name][il] = attrs[name]
    return FeatureVolumeSet(out, volume.dt_s)
