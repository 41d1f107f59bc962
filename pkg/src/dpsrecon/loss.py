"""Complex multi-resolution STFT loss.

Spectral convergence and log-magnitude terms are evaluated separately on
``|Re S|`` and ``|Im S|`` at every resolution, then averaged over resolutions.
Because only component magnitudes enter, the loss is blind to a global sign
flip of the estimate; phase information survives through how the real and
imaginary components are distributed across bins.
"""

import logging
from dataclasses import dataclass

import torch

from .stft import StftConfig, stft

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    fft_sizes: tuple = (256, 512, 1024)
    hop_sizes: tuple = (128, 256, 512)
    win_lengths: tuple = (256, 512, 1024)
    eps: float = 1e-7
    # "magnitude": |Re|, |Im| components; "signed": SC on signed Re/Im, log term on |.|
    component_mode: str = "magnitude"

    def __post_init__(self):
        if not len(self.fft_sizes) == len(self.hop_sizes) == len(self.win_lengths):
            raise ValueError("fft_sizes, hop_sizes and win_lengths must have equal length")
        if self.component_mode not in ("magnitude", "signed"):
            raise ValueError(f"unknown component_mode {self.component_mode!r}")

    @property
    def resolutions(self):
        return [StftConfig(n, h, w) for n, h, w in zip(self.fft_sizes, self.hop_sizes, self.win_lengths)]


def spectral_convergence(m_ref, m_est, eps=1e-7):
    """||M_ref - M_est||_F / ||M_ref||_F over the last two axes, averaged over the batch."""
    num = torch.linalg.norm((m_ref - m_est).flatten(-2), dim=-1)
    den = torch.linalg.norm(m_ref.flatten(-2), dim=-1)
    if bool((den == 0).any()):
        log.warning("spectral convergence with an all-zero reference; using eps denominator")
    return (num / den.clamp_min(eps)).mean()


def log_stft_magnitude(m_ref, m_est, eps=1e-7):
    """Mean absolute difference of log(M + eps) over all bins."""
    return (torch.log(m_ref + eps) - torch.log(m_est + eps)).abs().mean()


def complex_multires_stft_loss(y_ref, y_est, cfg=LossConfig()):
    """Average over resolutions of SC + log-mag on real and imaginary components.

    ``y_ref`` and ``y_est`` are (..., N) waveforms of equal length.
    """
    if y_ref.shape != y_est.shape:
        raise ValueError(f"length mismatch: {tuple(y_ref.shape)} vs {tuple(y_est.shape)}")
    res = cfg.resolutions
    totals = {"real": 0.0, "imag": 0.0}
    for r in res:
        s_ref = stft(y_ref, r).data
        s_est = stft(y_est, r).data
        for part in totals:
            c_ref = getattr(s_ref, part)
            c_est = getattr(s_est, part)
            if cfg.component_mode == "signed":
                sc = spectral_convergence(c_ref, c_est, cfg.eps)
            else:
                sc = spectral_convergence(c_ref.abs(), c_est.abs(), cfg.eps)
            totals[part] = totals[part] + sc + log_stft_magnitude(c_ref.abs(), c_est.abs(), cfg.eps)
    return totals["real"] / len(res) + totals["imag"] / len(res)


class ComplexMultiResolutionSTFTLoss(torch.nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or LossConfig()

    def forward(self, y_est, y_ref):
        return complex_multires_stft_loss(y_ref, y_est, self.cfg)
