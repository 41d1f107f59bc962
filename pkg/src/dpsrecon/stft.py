"""Short-time Fourier transforms on the model and loss resolutions."""

from dataclasses import dataclass, asdict

import numpy as np
import torch


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = 128
    win_length: int = 512
    window: str = "hann"
    center: bool = True

    def __post_init__(self):
        if not 0 < self.hop <= self.win_length <= self.n_fft:
            raise ValueError(
                f"need 0 < hop <= win_length <= n_fft, got {self.hop}, {self.win_length}, {self.n_fft}"
            )
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples):
        return 1 + n_samples // self.hop if self.center else 1 + (n_samples - self.n_fft) // self.hop

    def to_dict(self):
        return asdict(self)


MODEL_STFT = StftConfig(512, 128, 512)
LOSS_STFTS = (StftConfig(256, 128, 256), StftConfig(512, 256, 512), StftConfig(1024, 512, 1024))


def window_tensor(cfg, dtype=torch.float32, device=None):
    return torch.hann_window(cfg.win_length, periodic=True, dtype=dtype, device=device)


def is_cola(cfg, tol=1e-10):
    """True if the shifted windows overlap-add to a constant."""
    w = window_tensor(cfg, torch.float64).numpy()
    acc = np.zeros(cfg.hop)
    for start in range(0, cfg.win_length, cfg.hop):
        seg = w[start : start + cfg.hop]
        acc[: len(seg)] += seg
    return bool(np.ptp(acc) <= tol * max(acc.max(), 1.0))


@dataclass
class ComplexSpectrogram:
    """One-sided complex spectrogram ``data`` of shape (..., F, T)."""

    data: torch.Tensor
    config: StftConfig
    sample_rate: int = 8000

    @property
    def shape(self):
        return tuple(self.data.shape)


def stft(x, cfg=MODEL_STFT, sample_rate=8000):
    """Transform a waveform (..., N) into a ComplexSpectrogram (..., F, T).

    Accepts numpy arrays or tensors; numpy input is converted to float64.
    """
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if x.shape[-1] < 1:
        raise ValueError("cannot transform an empty signal")
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    spec = torch.stft(
        flat,
        cfg.n_fft,
        cfg.hop,
        cfg.win_length,
        window=window_tensor(cfg, flat.dtype, flat.device),
        center=cfg.center,
        pad_mode="reflect",
        return_complex=True,
    )
    return ComplexSpectrogram(spec.reshape(*lead, *spec.shape[-2:]), cfg, sample_rate)


def istft(spec, out_len):
    """Overlap-add inverse of :func:`stft`, trimmed or zero-padded to ``out_len``."""
    cfg = spec.config
    if not is_cola(cfg):
        raise ValueError(f"STFT config {cfg} violates the constant-overlap-add condition")
    data = spec.data
    lead = data.shape[:-2]
    flat = data.reshape(-1, *data.shape[-2:])
    real_dtype = flat.real.dtype
    y = torch.istft(
        flat,
        cfg.n_fft,
        cfg.hop,
        cfg.win_length,
        window=window_tensor(cfg, real_dtype, flat.device),
        center=cfg.center,
        length=out_len,
    )
    return y.reshape(*lead, out_len)
