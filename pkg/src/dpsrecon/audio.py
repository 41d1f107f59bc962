"""WAV I/O and resampling helpers."""

from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RATE = 8000


def read_wav(path):
    """Read a mono WAV as float64 in [-1, 1]; multi-channel files are averaged."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return np.asarray(x, dtype=np.float64), int(rate)


def write_wav(path, x, rate=TARGET_RATE):
    """Write float32 PCM; deterministic bytes for identical input."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), rate, np.asarray(x, dtype=np.float32))


def resample(x, rate_in, rate_out=TARGET_RATE):
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64)
    ratio = Fraction(rate_out, rate_in)
    return resample_poly(np.asarray(x, dtype=np.float64), ratio.numerator, ratio.denominator)


def rms_dbfs(x):
    p = float(np.mean(np.square(x))) if len(x) else 0.0
    return 10 * np.log10(p) if p > 0 else -np.inf
