"""Synthetic frequency-hopping GFSK emitters with hardware impairments.

The simulated receiver sits on one 2 MHz channel of a hopping plan, so a
record holds short GFSK bursts whenever the pseudorandom hop sequence visits
the tuned channel, and silence otherwise. Each emitter is an
:class:`EmitterProfile`; impairments are applied in a fixed order:
IQ imbalance, DC offset, odd-order PA nonlinearity, CFO rotation, phase noise.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .datasets import Dataset
from .dsp import ComplexSeries, build_feature_tensor
from .errors import ArgumentError


@dataclass
class EmitterProfile:
    cfo_hz: float = 0.0
    iq_gain_imbalance: float = 1.0
    iq_phase_imbalance_rad: float = 0.0
    dc_offset: complex = 0j
    pa_a3: float = 0.0
    pa_a5: float = 0.0
    phase_noise_std_rad: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.dc_offset = complex(*self.dc_offset) if isinstance(self.dc_offset, (list, tuple)) else complex(self.dc_offset)
        if not self.iq_gain_imbalance > 0:
            raise ArgumentError(f"iq_gain_imbalance must be positive, got {self.iq_gain_imbalance}")
        if self.phase_noise_std_rad < 0:
            raise ArgumentError(f"phase_noise_std_rad must be >= 0, got {self.phase_noise_std_rad}")

    def to_dict(self):
        d = asdict(self)
        d["dc_offset"] = [self.dc_offset.real, self.dc_offset.imag]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class HopConfig:
    num_channels: int = 40
    channel_spacing_hz: float = 2e6
    hop_rate_hz: float = 1600.0
    tuned_channel: int = 6
    symbol_rate_hz: float = 1e6
    modulation_index: float = 0.5
    burst_duty: float = 1.0
    bt: float = 0.5
    hop_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.tuned_channel < self.num_channels:
            raise ArgumentError(f"tuned_channel {self.tuned_channel} outside [0, {self.num_channels})")
        if not self.hop_rate_hz > 0:
            raise ArgumentError(f"hop_rate_hz must be positive, got {self.hop_rate_hz}")
        if not 0 < self.burst_duty <= 1:
            raise ArgumentError(f"burst_duty must be in (0, 1], got {self.burst_duty}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ChannelModel:
    tap_delays_samples: list = field(default_factory=lambda: [0])
    tap_gains: list = field(default_factory=lambda: [1 + 0j])
    snr_db: float = math.inf

    def __post_init__(self):
        self.tap_delays_samples = [int(d) for d in self.tap_delays_samples]
        self.tap_gains = [complex(*g) if isinstance(g, (list, tuple)) else complex(g) for g in self.tap_gains]
        if not self.tap_delays_samples or len(self.tap_delays_samples) != len(self.tap_gains):
            raise ArgumentError("channel needs at least one tap and one gain per delay")
        if self.tap_delays_samples[0] != 0 or min(self.tap_delays_samples) < 0:
            raise ArgumentError("tap 0 must have delay 0 and delays must be non-negative")
        self.snr_db = float(self.snr_db)

    def to_dict(self):
        return {
            "tap_delays_samples": list(self.tap_delays_samples),
            "tap_gains": [[g.real, g.imag] for g in self.tap_gains],
            "snr_db": self.snr_db if math.isfinite(self.snr_db) else "inf",
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------- waveform

def gfsk_phase(bits, n, fs, symbol_rate, modulation_index, bt):
    """Instantaneous phase (rad) of ``n`` GFSK samples for NRZ ``bits``."""
    idx = np.minimum((np.arange(n) * symbol_rate / fs).astype(np.int64), len(bits) - 1)
    nrz = 2.0 * bits[idx] - 1.0
    sps = fs / symbol_rate
    sigma = math.sqrt(math.log(2.0)) / (2.0 * math.pi * bt) * sps
    freq = gaussian_filter1d(nrz, sigma, mode="nearest")
    dev = modulation_index * symbol_rate / 2.0
    return 2.0 * math.pi * dev * np.cumsum(freq) / fs


def hop_slots(hops, n, fs, rng):
    """Sample ranges ``[(start, stop), ...]`` of bursts landing on the tuned channel."""
    slot = fs / hops.hop_rate_hz
    offset = rng.uniform(0.0, slot)
    n_slots = int(math.ceil((n + offset) / slot)) + 1
    chans = rng.integers(0, hops.num_channels, size=n_slots)
    bursts = []
    for k in np.flatnonzero(chans == hops.tuned_channel):
        start = int(round(k * slot - offset))
        stop = int(round(k * slot - offset + hops.burst_duty * slot))
        start, stop = max(start, 0), min(stop, n)
        if stop > start:
            bursts.append((start, stop))
    return bursts


def apply_impairments(x, profile, t0, fs, rng):
    """Apply the profile's distortions to baseband burst ``x`` starting at sample ``t0``."""
    g, phi = profile.iq_gain_imbalance, profile.iq_phase_imbalance_rad
    mu = (1.0 + g * np.exp(-1j * phi)) / 2.0
    nu = (1.0 - g * np.exp(1j * phi)) / 2.0
    y = mu * x + nu * np.conj(x)
    y = y + profile.dc_offset
    p = np.abs(y) ** 2
    y = y * (1.0 + profile.pa_a3 * p + profile.pa_a5 * p * p)
    t = (t0 + np.arange(len(y))) / fs
    y = y * np.exp(2j * np.pi * profile.cfo_hz * t)
    if profile.phase_noise_std_rad > 0:
        y = y * np.exp(1j * np.cumsum(rng.normal(0.0, profile.phase_noise_std_rad, size=len(y))))
    return y


def gen_emission(profile, hops, duration_s, fs, rng=None):
    """Tuned-channel receiver view of one emitter over ``duration_s`` seconds."""
    if not fs > 0 or fs < 2 * hops.symbol_rate_hz:
        raise ArgumentError(f"sample rate {fs} must be at least twice the symbol rate {hops.symbol_rate_hz}")
    n = int(round(duration_s * fs))
    if n < 1:
        raise ArgumentError(f"duration {duration_s}s at {fs} S/s gives no samples")
    if rng is None:
        rng = np.random.default_rng([profile.seed, hops.hop_seed])
    out = np.zeros(n, dtype=np.complex128)
    for start, stop in hop_slots(hops, n, fs, rng):
        length = stop - start
        n_bits = int(math.ceil(length * hops.symbol_rate_hz / fs)) + 1
        bits = rng.integers(0, 2, size=n_bits).astype(np.float64)
        phase = gfsk_phase(bits, length, fs, hops.symbol_rate_hz, hops.modulation_index, hops.bt)
        burst = np.exp(1j * (phase + rng.uniform(0, 2 * np.pi)))
        out[start:stop] = apply_impairments(burst, profile, start, fs, rng)
    return ComplexSeries(out, fs, meta={"profile_seed": profile.seed})


def apply_channel(x, ch, rng):
    """FIR multipath, then complex AWGN at ``ch.snr_db`` relative to the active-signal power."""
    n = len(x)
    if max(ch.tap_delays_samples) >= n:
        raise ArgumentError(f"tap delay {max(ch.tap_delays_samples)} not shorter than series length {n}")
    y = np.zeros(n, dtype=np.complex128)
    for d, g in zip(ch.tap_delays_samples, ch.tap_gains):
        y[d:] += g * x.iq[:n - d]
    if math.isfinite(ch.snr_db):
        active = np.abs(y) > 0
        power = float(np.mean(np.abs(y[active]) ** 2)) if active.any() else 1.0
        sigma = math.sqrt(power / 10 ** (ch.snr_db / 10) / 2.0)
        y = y + sigma * (rng.normal(size=n) + 1j * rng.normal(size=n))
    return ComplexSeries(y, x.sample_rate_hz, x.center_freq_hz, dict(x.meta))


def estimate_cfo(x, pad=8):
    """Frequency (Hz) of the strongest spectral line, via a zero-padded FFT."""
    n = len(x) * pad
    spec = np.abs(np.fft.fft(x.iq, n))
    k = int(np.argmax(spec))
    freqs = np.fft.fftfreq(n, 1.0 / x.sample_rate_hz)
    return float(freqs[k])


# Carrier leakage of the desk profiles, raised 1 dB from the nominal set: the
# weakest level on a 1 dB grid at which nearest-centroid on PSD rows reaches
# 0.9 for five emitters (checked on two seeds).
DESK_LEAKAGE_GAIN = 10 ** (1 / 20)


def desk_profiles(n=5):
    """A fixed set of distinguishable emitter profiles for desk experiments."""
    base = [
        EmitterProfile(cfo_hz=-9e3, iq_gain_imbalance=1.04, iq_phase_imbalance_rad=0.03, dc_offset=0.06 + 0.02j, pa_a3=-0.05, pa_a5=0.01, phase_noise_std_rad=2e-3, seed=11),
        EmitterProfile(cfo_hz=-4e3, iq_gain_imbalance=0.97, iq_phase_imbalance_rad=-0.02, dc_offset=-0.03 + 0.05j, pa_a3=-0.08, pa_a5=0.02, phase_noise_std_rad=3e-3, seed=12),
        EmitterProfile(cfo_hz=1e3, iq_gain_imbalance=1.02, iq_phase_imbalance_rad=0.05, dc_offset=0.04 - 0.04j, pa_a3=-0.03, pa_a5=0.0, phase_noise_std_rad=1e-3, seed=13),
        EmitterProfile(cfo_hz=6e3, iq_gain_imbalance=0.95, iq_phase_imbalance_rad=0.0, dc_offset=-0.05 - 0.01j, pa_a3=-0.1, pa_a5=0.03, phase_noise_std_rad=2e-3, seed=14),
        EmitterProfile(cfo_hz=11e3, iq_gain_imbalance=1.06, iq_phase_imbalance_rad=-0.04, dc_offset=0.02 + 0.06j, pa_a3=-0.06, pa_a5=0.01, phase_noise_std_rad=4e-3, seed=15),
    ]
    if n > len(base):
        rng = np.random.default_rng(1234)
        for i in range(len(base), n):
            base.append(EmitterProfile(
                cfo_hz=float(rng.uniform(-15e3, 15e3)),
                iq_gain_imbalance=float(rng.uniform(0.94, 1.06)),
                iq_phase_imbalance_rad=float(rng.uniform(-0.05, 0.05)),
                dc_offset=complex(rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06)),
                pa_a3=float(rng.uniform(-0.1, -0.02)),
                pa_a5=float(rng.uniform(0.0, 0.03)),
                phase_noise_std_rad=float(rng.uniform(1e-3, 4e-3)),
                seed=11 + i,
            ))
    return [replace(p, dc_offset=p.dc_offset * DESK_LEAKAGE_GAIN) for p in base[:n]]


def desk_channels():
    """Setup-1 style (line of sight) and Setup-2 style (richer multipath, lower SNR) channels."""
    return {
        "train": ChannelModel([0, 3], [1 + 0j, 0.2 - 0.1j], 20.0),
        "test": ChannelModel([0, 2, 7, 15], [0.9 + 0.2j, -0.35 + 0.3j, 0.25 - 0.2j, 0.15 + 0.1j], 12.0),
    }


def with_hop_seed(hops, seed):
    return replace(hops, hop_seed=int(seed))


# ---------------------------------------------------------------- datasets

SCENARIOS = {"tts": 0, "ttd": 1}
TTD_HOP_SEED_OFFSET = 7919


def worker_count():
    raw = os.environ.get("RFLAB_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _example(args):
    profile, hops, channel, n_raw, fs, M, mode, kind, seeds = args
    rng = np.random.default_rng(np.random.SeedSequence(seeds))
    x = gen_emission(profile, hops, n_raw / fs, fs, rng)
    x = apply_channel(x, channel, rng)
    return build_feature_tensor(x, M, mode, kind).rows


def make_dataset(profiles, hops, channels, n_per_class, M, mode="anti_aliased", seed=0,
                 scenario="tts", factor=40, fs=2e6, kind="tensor", workers=None):
    """Labeled feature tensors, ``n_per_class`` per profile; label = profile index.

    ``scenario="tts"`` records through ``channels["train"]`` with the base hop
    seed. ``scenario="ttd"`` uses ``channels["test"]`` and a shifted hop seed.
    Every example draws from its own stream keyed by
    (seed, scenario, hop seed, class, index), so results do not depend on
    worker scheduling.
    """
    if len(profiles) < 2:
        raise ArgumentError("need at least two emitter profiles")
    if n_per_class < 1:
        raise ArgumentError("n_per_class must be positive")
    if scenario not in SCENARIOS:
        raise ArgumentError(f"scenario must be one of {sorted(SCENARIOS)}, got {scenario!r}")
    channel = channels["train"] if scenario == "tts" else channels["test"]
    if scenario == "ttd":
        hops = with_hop_seed(hops, hops.hop_seed + TTD_HOP_SEED_OFFSET)
    n_raw = int(M) * int(factor)
    jobs, ids, labels, records = [], [], [], []
    for cls, profile in enumerate(profiles):
        for idx in range(n_per_class):
            seeds = [int(seed), SCENARIOS[scenario], int(hops.hop_seed), cls, idx]
            jobs.append((profile, hops, channel, n_raw, fs, M, mode, kind, seeds))
            ex_id = f"{scenario}-c{cls:02d}-{idx:05d}"
            ids.append(ex_id)
            labels.append(cls)
            records.append({
                "profile": profile.to_dict(),
                "channel": channel.to_dict(),
                "seeds": {"master": int(seed), "scenario": scenario, "hop_seed": int(hops.hop_seed), "class": cls, "index": idx},
            })
    n_workers = workers or worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            rows = list(pool.map(_example, jobs))
    else:
        rows = [_example(j) for j in jobs]
    info = {
        "M": int(M), "mode": mode, "kind": kind, "factor": int(factor), "fs": float(fs),
        "seed": int(seed), "num_classes": len(profiles), "hops": hops.to_dict(),
    }
    return Dataset(np.stack(rows).astype(np.float32), np.array(labels, dtype=np.int64), ids,
                   [scenario] * len(ids), records, info)


def make_scenarios(profiles, hops, channels, n_per_class, n_ttd, M, mode="anti_aliased", seed=0,
                   factor=40, fs=2e6, kind="tensor", workers=None):
    """TTS examples (split 80/10/10 later) plus a TTD test population."""
    parts = [make_dataset(profiles, hops, channels, n_per_class, M, mode, seed, "tts", factor, fs, kind, workers)]
    if n_ttd:
        parts.append(make_dataset(profiles, hops, channels, n_ttd, M, mode, seed, "ttd", factor, fs, kind, workers))
    ds = Dataset.concat(parts)
    ds.info.update({
        "hops": hops.to_dict(),
        "channels": {k: v.to_dict() for k, v in channels.items()},
        "profiles": [p.to_dict() for p in profiles],
    })
    return ds
