"""IQ capture ingestion, decimation and the 3 x M input tensor.

The tensor rows are magnitude, phase and single-record periodogram of the
decimated series. Two decimation paths exist: plain sample dropping and
Chebyshev type I anti-aliasing followed by sample dropping.
"""
from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import ArgumentError, FormatError

DEFAULT_RIPPLE_DB = 0.05
DEFAULT_ORDER = 8
CUTOFF_FRACTION = 0.8


@dataclass
class ComplexSeries:
    iq: np.ndarray
    sample_rate_hz: float
    center_freq_hz: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.iq = np.asarray(self.iq, dtype=np.complex128)
        if self.iq.ndim != 1 or self.iq.size < 1:
            raise ArgumentError(f"ComplexSeries needs a non-empty 1-D sample array, got shape {self.iq.shape}")
        if not self.sample_rate_hz > 0:
            raise ArgumentError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.iq.size


@dataclass
class FeatureTensor:
    rows: np.ndarray

    @property
    def M(self):
        return self.rows.shape[1]

    @property
    def shape(self):
        return self.rows.shape


@dataclass
class IirFilter:
    """Cascade of second-order sections, one row ``[b0 b1 b2 1 a1 a2]`` each."""

    sos: np.ndarray

    def poles(self):
        return np.concatenate([np.roots(s[3:]) for s in self.sos])

    def is_stable(self):
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, w):
        """Complex frequency response at normalized angular frequencies ``w`` (rad/sample)."""
        z = np.exp(-1j * np.asarray(w, dtype=float))
        h = np.ones_like(z)
        for s in self.sos:
            h *= (s[0] + s[1] * z + s[2] * z * z) / (s[3] + s[4] * z + s[5] * z * z)
        return h


# ---------------------------------------------------------------- capture files

@dataclass
class CaptureDescriptor:
    """How to decode a raw interleaved I,Q file."""

    scalar: str = "f32"  # "f32" or "i16"
    endianness: str = "little"
    sample_rate_hz: float = 2e6
    center_freq_hz: float = 0.0
    full_scale: float = 32768.0  # i16 values are divided by this

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"scalar", "endianness", "sample_rate_hz", "center_freq_hz", "full_scale", "interleaving", "emitter_label"}
        if unknown:
            raise FormatError(f"descriptor: unknown fields {sorted(unknown)}")
        if d.get("interleaving", "IQ") != "IQ":
            raise FormatError(f"descriptor.interleaving: only 'IQ' is supported, got {d['interleaving']!r}")
        desc = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        if desc.scalar not in ("f32", "i16"):
            raise FormatError(f"descriptor.scalar: expected 'f32' or 'i16', got {desc.scalar!r}")
        if desc.endianness not in ("little", "big"):
            raise FormatError(f"descriptor.endianness: expected 'little' or 'big', got {desc.endianness!r}")
        if not desc.sample_rate_hz > 0:
            raise FormatError(f"descriptor.sample_rate_hz: must be positive, got {desc.sample_rate_hz}")
        return desc

    @property
    def numpy_dtype(self):
        return np.dtype(("<" if self.endianness == "little" else ">") + ("f4" if self.scalar == "f32" else "i2"))


def read_capture(path, descriptor=None):
    """Read an interleaved I,Q capture.

    Without a descriptor, a ``<path>.json`` sidecar is used if present,
    otherwise little-endian float32 at 2 MS/s.
    """
    path = Path(path)
    meta = {}
    if descriptor is None:
        sidecar = path.with_name(path.name + ".json")
        descriptor = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    if isinstance(descriptor, dict):
        meta = {k: descriptor[k] for k in ("emitter_label",) if k in descriptor}
        descriptor = CaptureDescriptor.from_dict(descriptor)
    raw = path.read_bytes()
    dt = descriptor.numpy_dtype
    if len(raw) == 0:
        raise FormatError(f"{path}: empty capture")
    if len(raw) % dt.itemsize:
        raise FormatError(f"{path}: {len(raw)} bytes is not a whole number of {descriptor.scalar} scalars")
    vals = np.frombuffer(raw, dtype=dt)
    if vals.size % 2:
        raise FormatError(f"{path}: odd scalar count {vals.size}, truncated I/Q pair")
    vals = vals.astype(np.float64)
    if descriptor.scalar == "i16":
        vals /= descriptor.full_scale
    iq = vals[0::2] + 1j * vals[1::2]
    return ComplexSeries(iq, descriptor.sample_rate_hz, descriptor.center_freq_hz, meta)


def write_capture(path, series, descriptor=None, emitter_label=None):
    """Write ``series`` as interleaved I,Q plus a JSON sidecar."""
    descriptor = descriptor or CaptureDescriptor(sample_rate_hz=series.sample_rate_hz, center_freq_hz=series.center_freq_hz)
    if isinstance(descriptor, dict):
        descriptor = CaptureDescriptor.from_dict(descriptor)
    inter = np.empty(2 * len(series), dtype=np.float64)
    inter[0::2] = series.iq.real
    inter[1::2] = series.iq.imag
    if descriptor.scalar == "i16":
        inter = np.clip(np.round(inter * descriptor.full_scale), -32768, 32767)
    path = Path(path)
    path.write_bytes(inter.astype(descriptor.numpy_dtype).tobytes())
    side = {
        "scalar": descriptor.scalar,
        "endianness": descriptor.endianness,
        "sample_rate_hz": descriptor.sample_rate_hz,
        "center_freq_hz": descriptor.center_freq_hz,
        "interleaving": "IQ",
    }
    if descriptor.scalar == "i16":
        side["full_scale"] = descriptor.full_scale
    if emitter_label is not None:
        side["emitter_label"] = emitter_label
    path.with_name(path.name + ".json").write_text(json.dumps(side, indent=2))
    return path


# ---------------------------------------------------------------- decimation

def downsample(x, factor):
    """Keep every ``factor``-th sample starting at index 0."""
    if int(factor) != factor or factor < 1:
        raise ArgumentError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if len(x) < factor:
        raise ArgumentError(f"series of length {len(x)} is shorter than factor {factor}")
    return ComplexSeries(x.iq[::factor], x.sample_rate_hz / factor, x.center_freq_hz, dict(x.meta))


def design_cheby1(order=DEFAULT_ORDER, ripple_db=DEFAULT_RIPPLE_DB, cutoff_norm=0.5):
    """Digital Chebyshev type I lowpass as second-order sections.

    ``cutoff_norm`` is the passband edge as a fraction of Nyquist. The
    analog prototype is prewarped and mapped through the bilinear
    transform, so the response at the cutoff sits exactly on the ripple
    floor.
    """
    if not 0.0 < cutoff_norm < 1.0:
        raise ArgumentError(f"cutoff_norm must be in (0, 1), got {cutoff_norm}")
    if order < 2 or order % 2:
        raise ArgumentError(f"order must be even and >= 2, got {order}")
    if not ripple_db > 0:
        raise ArgumentError(f"ripple_db must be positive, got {ripple_db}")

    eps = np.sqrt(10.0 ** (ripple_db / 10.0) - 1.0)
    mu = np.arcsinh(1.0 / eps) / order
    k = np.arange(1, order + 1)
    theta = np.pi * (2 * k - 1) / (2 * order)
    proto = -np.sinh(mu) * np.sin(theta) + 1j * np.cosh(mu) * np.cos(theta)

    fs2 = 4.0  # 2 * fs with fs = 2 (cutoff in units of Nyquist)
    wc = fs2 * np.tan(np.pi * cutoff_norm / 2.0)
    poles = wc * proto
    # even order: DC gain equals the ripple floor
    gain = np.prod(-poles).real / np.sqrt(1.0 + eps * eps)
    zpoles = (fs2 + poles) / (fs2 - poles)
    gain_d = (gain / np.prod(fs2 - poles)).real

    upper = zpoles[zpoles.imag > 0]
    upper = upper[np.argsort(np.abs(upper))]
    n_sec = upper.size
    g = gain_d ** (1.0 / n_sec)
    sos = np.zeros((n_sec, 6))
    for i, p in enumerate(upper):
        sos[i] = [g, 2 * g, g, 1.0, -2.0 * p.real, abs(p) ** 2]
    return IirFilter(sos)


@functools.lru_cache(maxsize=32)
def _aa_filter(factor):
    return design_cheby1(DEFAULT_ORDER, DEFAULT_RIPPLE_DB, CUTOFF_FRACTION / factor)


def aa_filter_for(factor):
    """Default anti-aliasing filter: passband edge at 0.8 of the post-decimation Nyquist."""
    return _aa_filter(int(factor))


def decimate_aa(x, factor, filt=None):
    """Forward-only IIR filtering from zero state, then :func:`downsample`."""
    if int(factor) != factor or factor < 1:
        raise ArgumentError(f"decimation factor must be a positive integer, got {factor}")
    if len(x) < factor:
        raise ArgumentError(f"series of length {len(x)} is shorter than factor {factor}")
    if factor == 1 and filt is None:
        return ComplexSeries(x.iq.copy(), x.sample_rate_hz, x.center_freq_hz, dict(x.meta))
    filt = filt or aa_filter_for(factor)
    y = signal.sosfilt(filt.sos, x.iq)
    return downsample(ComplexSeries(y, x.sample_rate_hz, x.center_freq_hz, dict(x.meta)), factor)


# ---------------------------------------------------------------- features

def psd(x):
    """Periodogram |FFT|^2 / (M fs), shifted so index 0 is -fs/2."""
    if len(x) < 2:
        raise ArgumentError("psd needs at least 2 samples")
    spec = np.fft.fft(x.iq)
    p = (spec.real ** 2 + spec.imag ** 2) / (len(x) * x.sample_rate_hz)
    return np.fft.fftshift(p)


def _standardize(rows):
    mu = rows.mean(axis=1, keepdims=True)
    sd = rows.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    return (rows - mu) / sd


def feature_rows(y, kind="tensor"):
    """Rows of the network input for an already decimated series.

    ``kind="tensor"`` gives [magnitude, phase, PSD]; ``kind="iq"`` gives the
    raw [I, Q] pair used for the input-format ablation.
    """
    if kind == "iq":
        return np.stack([y.iq.real, y.iq.imag])
    if kind != "tensor":
        raise ArgumentError(f"unknown feature kind {kind!r}")
    phase = np.angle(y.iq)
    phase[phase <= -np.pi] = np.pi
    return np.stack([np.abs(y.iq), phase, psd(y)])


def build_feature_tensor(x, M, mode="plain", kind="tensor", standardize=True):
    """Decimate ``x`` by ``len(x) // M`` and stack the feature rows.

    ``mode`` is ``"plain"`` or ``"anti_aliased"`` (``"aa"`` accepted).
    Standardization to zero mean, unit variance per row is applied last.
    """
    M = int(M)
    if M < 2:
        raise ArgumentError(f"M must be at least 2, got {M}")
    factor = len(x) // M
    if factor < 1:
        raise ArgumentError(f"M={M} exceeds the {len(x)} available samples")
    if mode in ("aa", "anti_aliased"):
        y = decimate_aa(x, factor)
    elif mode == "plain":
        y = downsample(x, factor)
    else:
        raise ArgumentError(f"mode must be 'plain' or 'anti_aliased', got {mode!r}")
    y = ComplexSeries(y.iq[:M], y.sample_rate_hz, y.center_freq_hz, y.meta)
    rows = feature_rows(y, kind)
    if standardize:
        rows = _standardize(rows)
    return FeatureTensor(rows)


# ---------------------------------------------------------------- tensor cache files

_FT_MAGIC = {3: b"FT3M", 2: b"FT2M"}


def write_feature_tensor(path, ft):
    """Binary cache: magic, M as u64, then rows x M float32 values row-major."""
    n_rows = ft.rows.shape[0]
    if n_rows not in _FT_MAGIC:
        raise FormatError(f"cannot store a {n_rows}-row tensor")
    body = np.ascontiguousarray(ft.rows, dtype="<f4").tobytes()
    Path(path).write_bytes(_FT_MAGIC[n_rows] + struct.pack("<Q", ft.M) + body)


def read_feature_tensor(path):
    buf = Path(path).read_bytes()
    rows_by_magic = {v: k for k, v in _FT_MAGIC.items()}
    if len(buf) < 12 or buf[:4] not in rows_by_magic:
        raise FormatError(f"{path}: not a feature tensor file")
    n_rows = rows_by_magic[buf[:4]]
    (m,) = struct.unpack_from("<Q", buf, 4)
    if len(buf) != 12 + 4 * n_rows * m:
        raise FormatError(f"{path}: expected {n_rows}x{m} values, file has {(len(buf) - 12) // 4}")
    rows = np.frombuffer(buf, dtype="<f4", offset=12).reshape(n_rows, m).astype(np.float32)
    return FeatureTensor(rows)
