"""Simulated pressure-sensor capture channel.

A clean 8 kHz clip is standardized to a fixed length, sampled at the sensor
rate (by default without an anti-alias filter), corrupted with transient HVAC
noise at a target SNR, and band-limited-interpolated back onto the 8 kHz grid.
"""

import logging
import math
import zlib
from dataclasses import dataclass, asdict

import numpy as np
from scipy import signal

from .audio import TARGET_RATE

log = logging.getLogger(__name__)

CAPTURE_RATES = (500, 1000, 2000)
EVENT_KINDS = ("shock", "turbulence", "drift")


@dataclass(frozen=True)
class DegradationProfile:
    """Capture-channel description.

    Burst defaults are plausible stand-ins, not measurements of a real duct:
    shocks are damped sinusoids of 30-120 ms, turbulence is 20-100 ms of
    band-passed noise, drift is a 0.3-1.0 s swell below 8 Hz.
    """

    capture_rate: int = 500
    alias_mode: str = "aliased"
    snr_db: float = 7.0
    event_rate: float = 4.0
    clip_seconds: float = 4.0
    target_rate: int = TARGET_RATE
    seed: int = 0
    kind_probs: tuple = (0.4, 0.4, 0.2)
    shock_ms: tuple = (30.0, 120.0)
    turbulence_ms: tuple = (20.0, 100.0)
    drift_ms: tuple = (300.0, 1000.0)
    trim_threshold_db: float = -40.0

    def __post_init__(self):
        if self.capture_rate >= self.target_rate:
            raise ValueError("capture_rate must be below target_rate")
        if self.target_rate % self.capture_rate:
            raise ValueError(
                f"decimation factor {self.target_rate}/{self.capture_rate} is not an integer"
            )
        if self.alias_mode not in ("aliased", "anti-aliased"):
            raise ValueError(f"alias_mode must be 'aliased' or 'anti-aliased', got {self.alias_mode!r}")
        if self.snr_db is not None and math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")
        if self.event_rate < 0:
            raise ValueError("event_rate must be >= 0")

    @property
    def clip_samples(self):
        return int(round(self.clip_seconds * self.target_rate))

    @property
    def factor(self):
        return self.target_rate // self.capture_rate

    @property
    def noisy(self):
        return self.snr_db is not None and math.isfinite(self.snr_db) and self.event_rate > 0

    @property
    def mean_event_seconds(self):
        spans = (self.shock_ms, self.turbulence_ms, self.drift_ms)
        return sum(p * (lo + hi) / 2 for p, (lo, hi) in zip(self.kind_probs, spans)) / 1000.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("kind_probs", "shock_ms", "turbulence_ms", "drift_ms"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def standardize_clip(x, rate=TARGET_RATE, seconds=4.0, threshold_db=-40.0, window_ms=20.0):
    """Return exactly ``seconds`` of audio.

    Short clips are zero-padded at the tail. Long clips first lose leading and
    trailing windows whose RMS is below ``threshold_db`` dBFS, then are cut at
    the tail.
    """
    x = np.asarray(x, dtype=np.float64)
    n = int(round(seconds * rate))
    if len(x) > n:
        win = max(1, int(round(window_ms * rate / 1000)))
        n_win = int(math.ceil(len(x) / win))
        padded = np.zeros(n_win * win)
        padded[: len(x)] = x
        power = np.mean(padded.reshape(n_win, win) ** 2, axis=1)
        loud = np.flatnonzero(power > 10 ** (threshold_db / 10))
        if len(loud):
            x = x[loud[0] * win : min(len(x), (loud[-1] + 1) * win)]
    out = np.zeros(n)
    out[: min(n, len(x))] = x[:n]
    return out


def _lowpass_taps(cutoff, rate, numtaps=511):
    return signal.firwin(numtaps, cutoff, window=("kaiser", 10.0), fs=rate)


def capture_downsample(x, p):
    """Sample an 8 kHz-grid signal at the sensor rate."""
    x = np.asarray(x, dtype=np.float64)
    if p.target_rate % p.capture_rate:
        raise ValueError(f"non-integer decimation factor {p.target_rate}/{p.capture_rate}")
    if p.alias_mode == "anti-aliased":
        x = np.convolve(x, _lowpass_taps(0.45 * p.capture_rate, p.target_rate), mode="same")
    return x[:: p.factor].copy()


def interpolate_to_target(y, p, n_out=None):
    """Band-limited (periodic sinc) interpolation from the sensor rate to the target grid."""
    n_out = n_out if n_out is not None else len(y) * p.factor
    return signal.resample(np.asarray(y, dtype=np.float64), n_out)


@dataclass(frozen=True)
class NoiseEvent:
    kind: str
    onset: float
    duration: float
    amplitude: float


def _event_waveform(ev, rate, rng):
    n = max(1, int(round(ev.duration * rate)))
    t = np.arange(n) / rate
    nyq = rate / 2
    if ev.kind == "shock":
        f = rng.uniform(0.1, 0.8) * nyq
        tau = ev.duration / 5.0
        w = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) * np.exp(-t / tau)
    elif ev.kind == "turbulence":
        lo = rng.uniform(0.05, 0.5)
        hi = min(0.95, lo + rng.uniform(0.1, 0.4))
        sos = signal.butter(2, [lo, hi], btype="bandpass", output="sos")
        w = signal.sosfilt(sos, rng.standard_normal(n)) * np.hanning(n + 2)[1:-1]
    else:
        f = rng.uniform(1.0, 8.0)
        w = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) * np.hanning(n + 2)[1:-1]
    peak = np.max(np.abs(w))
    return ev.amplitude * w / peak if peak > 0 else w


def synthesize_transient_noise(duration, p, rng, rate=None, return_events=False):
    """Sum of Poisson-timed shocks, turbulence bursts and slow drift swells.

    ``rate`` defaults to the sensor rate. Events may run past the end and are
    truncated there.
    """
    rate = rate or p.capture_rate
    n = int(round(duration * rate))
    noise = np.zeros(n)
    events = []
    if p.event_rate > 0 and n > 0:
        count = rng.poisson(p.event_rate * duration)
        onsets = np.sort(rng.uniform(0.0, duration, size=count))
        spans = {"shock": p.shock_ms, "turbulence": p.turbulence_ms, "drift": p.drift_ms}
        for onset in onsets:
            kind = EVENT_KINDS[rng.choice(3, p=np.asarray(p.kind_probs) / np.sum(p.kind_probs))]
            lo, hi = spans[kind]
            ev = NoiseEvent(kind, float(onset), rng.uniform(lo, hi) / 1000.0, rng.uniform(0.5, 1.5))
            w = _event_waveform(ev, rate, rng)
            start = int(round(onset * rate))
            stop = min(n, start + len(w))
            noise[start:stop] += w[: stop - start]
            events.append(ev)
    return (noise, events) if return_events else noise


def burst_occupancy(events, duration):
    """Fraction of ``duration`` covered by event spans, overlaps counted per event."""
    return sum(min(ev.duration, duration - ev.onset) for ev in events) / duration


def mix_at_snr(clean, noise, snr_db):
    """Scale ``noise`` so that 10 log10(P_clean / P_noise) = ``snr_db`` and add it.

    ``snr_db`` of None or +inf returns the clean signal unchanged.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if snr_db is None or snr_db == math.inf:
        return clean.copy()
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ValueError(f"length mismatch: {clean.shape} vs {noise.shape}")
    p_clean = np.mean(clean**2)
    p_noise = np.mean(noise**2)
    if p_clean == 0:
        raise ValueError("clean signal is all zero; SNR is undefined")
    if p_noise == 0:
        raise ValueError(f"noise is all zero but a finite SNR of {snr_db} dB was requested")
    scale = math.sqrt(p_clean / (p_noise * 10 ** (snr_db / 10)))
    return clean + scale * noise


def clip_rng(seed, clip_id):
    """Per-clip generator derived from (seed, clip id) so order and parallelism don't matter."""
    return np.random.default_rng([int(seed), zlib.crc32(str(clip_id).encode())])


def build_pair(x, p, rng=None, clip_id=""):
    """Return (degraded input, clean target), both ``p.clip_samples`` long on the target grid."""
    rng = rng if rng is not None else clip_rng(p.seed, clip_id)
    target = standardize_clip(x, p.target_rate, p.clip_seconds, p.trim_threshold_db)
    captured = capture_downsample(target, p)
    if p.noisy and np.any(target):
        noise = synthesize_transient_noise(len(captured) / p.capture_rate, p, rng)
        if np.any(noise):
            captured = mix_at_snr(captured, noise, p.snr_db)
        else:
            log.debug("clip %s drew no noise events", clip_id)
    elif p.noisy:
        log.warning("clip %s is silent; skipping noise (SNR undefined)", clip_id)
    inp = interpolate_to_target(captured, p, len(target))
    return inp, target
