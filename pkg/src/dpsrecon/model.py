"""Complex U-Net with skip blocks, a conformer bottleneck and unified T-F attention.

Feature maps are complex tensors laid out as (B, C, F, T). Encoders halve the
frequency axis only; the time axis is never strided so the bottleneck sees the
full frame sequence.
"""

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn

from .cplx import (
    ComplexBatchNorm,
    ComplexConv1d,
    ComplexConv2d,
    ComplexConvTranspose2d,
    ComplexLayerNorm,
    ComplexLinear,
    ComplexMultiheadAttention,
    CReLU,
)
from .stft import MODEL_STFT, ComplexSpectrogram, istft, stft

N_LEVELS = 8
CUAB_PLACEMENTS = {"paper": (0, 6), "every": tuple(range(N_LEVELS)), "none": ()}


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple = (32, 64, 64, 128, 128, 256, 256, 512)
    freq_strides: tuple = (2,) * N_LEVELS
    n_freq: int = 256
    n_frames: int = 251
    enc_kernel: tuple = (5, 3)
    skip_kernel: tuple = (3, 3)
    conformer_depth: int = 2
    heads: int = 8
    ff_expansion: int = 4
    conv_kernel: int = 15
    bottleneck: str = "conformer"
    cuab: str = "paper"
    cuab_reduction: int = 4
    cuab_mask_kernel: int = 9
    cuab_fuse_kernel: int = 3
    skips: bool = True
    residual_output: bool = True
    zero_init_residual: bool = True
    seed: int = 0

    def validate(self):
        if len(self.widths) != N_LEVELS:
            raise ValueError(f"widths must have {N_LEVELS} entries, got {len(self.widths)}")
        if len(self.freq_strides) != N_LEVELS:
            raise ValueError(f"freq_strides must have {N_LEVELS} entries, got {len(self.freq_strides)}")
        if any(s not in (1, 2) for s in self.freq_strides):
            raise ValueError(f"freq_strides must be 1 or 2, got {self.freq_strides}")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")
        total = math.prod(self.freq_strides)
        if self.n_freq % total:
            raise ValueError(
                f"n_freq={self.n_freq} is not divisible by the total frequency stride {total}"
            )
        if self.n_frames <= 0:
            raise ValueError("n_frames must be positive")
        if self.bottleneck not in ("conformer", "transformer"):
            raise ValueError(f"bottleneck must be 'conformer' or 'transformer', got {self.bottleneck!r}")
        if self.cuab not in CUAB_PLACEMENTS:
            raise ValueError(f"cuab must be one of {sorted(CUAB_PLACEMENTS)}, got {self.cuab!r}")
        if self.bottleneck_dim % self.heads:
            raise ValueError(
                f"bottleneck dim {self.bottleneck_dim} is not divisible by heads={self.heads}"
            )
        if any(k % 2 == 0 for k in (*self.enc_kernel, *self.skip_kernel)):
            raise ValueError("kernel sizes must be odd")
        return self

    @property
    def bottleneck_freq(self):
        return self.n_freq // math.prod(self.freq_strides)

    @property
    def bottleneck_dim(self):
        return self.widths[-1] * self.bottleneck_freq

    def level_freqs(self):
        """Frequency size of each encoder output."""
        f, out = self.n_freq, []
        for s in self.freq_strides:
            f //= s
            out.append(f)
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("widths", "freq_strides", "enc_kernel", "skip_kernel"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def toy_config(**overrides):
    """About 1.2 M parameters; runs on 64 x 32 spectrogram patches."""
    base = dict(
        widths=(8, 8, 16, 16, 32, 32, 64, 64),
        freq_strides=(2, 2, 2, 2, 2, 2, 1, 1),
        n_freq=64,
        n_frames=32,
        conformer_depth=1,
        heads=4,
        ff_expansion=2,
        cuab_reduction=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_config(**overrides):
    """About 0.82 M parameters on the full 4 s grid; for overfit checks."""
    base = dict(widths=(8, 8, 8, 16, 16, 32, 32, 48), conformer_depth=1, heads=4, ff_expansion=2, cuab_reduction=2)
    base.update(overrides)
    return ModelConfig(**base)


def small_config(**overrides):
    """About 5.2 M parameters on the full 4 s grid; trainable on a CPU in about two hours."""
    base = dict(widths=(8, 16, 16, 32, 32, 64, 128, 128), conformer_depth=2, heads=4, ff_expansion=2)
    base.update(overrides)
    return ModelConfig(**base)


class ComplexConvBlock(nn.Module):
    """Cplx conv -> Cplx BN -> CReLU.

    The conv has no bias: batch statistics would cancel it.
    """

    def __init__(self, cin, cout, kernel, stride=(1, 1)):
        super().__init__()
        pad = (kernel[0] // 2, kernel[1] // 2)
        self.conv = ComplexConv2d(cin, cout, kernel, stride=stride, padding=pad, bias=False)
        self.bn = ComplexBatchNorm(cout)
        self.act = CReLU()
        self.stride = stride

    def forward(self, x):
        if self.stride[0] == 2 and x.shape[-2] % 2:
            raise ValueError(f"frequency size {x.shape[-2]} is not divisible by 2")
        return self.act(self.bn(self.conv(x)))


class Encoder(ComplexConvBlock):
    def __init__(self, cin, cout, kernel, freq_stride):
        super().__init__(cin, cout, kernel, stride=(freq_stride, 1))


class SkipBlock(ComplexConvBlock):
    def __init__(self, channels, kernel):
        super().__init__(channels, channels, kernel)


class Decoder(nn.Module):
    """Cplx transposed conv (-> Cplx BN -> CReLU unless ``final``)."""

    def __init__(self, cin, cout, kernel, freq_stride, final=False):
        super().__init__()
        pad = (kernel[0] // 2, kernel[1] // 2)
        self.conv = ComplexConvTranspose2d(
            cin, cout, kernel, stride=(freq_stride, 1), padding=pad, output_padding=(freq_stride - 1, 0), bias=final
        )
        self.final = final
        if not final:
            self.bn = ComplexBatchNorm(cout)
            self.act = CReLU()

    def forward(self, x):
        x = self.conv(x)
        return x if self.final else self.act(self.bn(x))


class CUAB(nn.Module):
    """Unified time-frequency attention over a (B, C, F, T) complex feature.

    A shared 1x1 squeeze produces ``reduction`` channels. The time path builds a
    per-frame mask by convolving along frequency, gates the input, and applies a
    frequency-axis FC inside each frame (layout C x T x F). The frequency path
    mirrors it per bin with a time-axis FC (layout C x F x T), which ties the
    block to a fixed number of frames. Each path is fused with the input, then
    both are fused into a tensor with the input's shape.
    """

    def __init__(self, channels, n_freq, n_frames, reduction=4, mask_kernel=9, fuse_kernel=3):
        super().__init__()
        self.channels, self.n_freq, self.n_frames = channels, n_freq, n_frames
        self.squeeze = ComplexConvBlock(channels, reduction, (1, 1))
        pad = mask_kernel // 2
        self.time_mask = nn.Sequential(
            ComplexConv1d(reduction, 1, mask_kernel, padding=pad, bias=False), ComplexBatchNorm(1), CReLU()
        )
        self.freq_mask = nn.Sequential(
            ComplexConv1d(reduction, 1, mask_kernel, padding=pad, bias=False), ComplexBatchNorm(1), CReLU()
        )
        self.time_fc = ComplexLinear(n_freq, n_freq)
        self.freq_fc = ComplexLinear(n_frames, n_frames)
        self.time_fuse = ComplexConvBlock(2 * channels, channels, (1, 1))
        self.freq_fuse = ComplexConvBlock(2 * channels, channels, (1, 1))
        self.fuse = ComplexConvBlock(2 * channels, channels, (fuse_kernel, fuse_kernel))
        self.use_time = True
        self.use_freq = True

    def _check(self, e):
        if e.shape[1:] != (self.channels, self.n_freq, self.n_frames):
            raise ValueError(
                f"CUAB built for (C, F, T) = {(self.channels, self.n_freq, self.n_frames)}, "
                f"got {tuple(e.shape[1:])}"
            )

    def time_branch(self, e, squeezed=None):
        b, c, f, t = e.shape
        a = self.squeeze(e) if squeezed is None else squeezed
        r = a.shape[1]
        # r*T vectors of length F, one 1-d conv per frame
        frames = a.permute(0, 3, 1, 2).reshape(b * t, r, f)
        mask = self.time_mask(frames).reshape(b, t, f).transpose(1, 2).unsqueeze(1)
        gated = (e * mask).transpose(-1, -2)  # (B, C, T, F)
        path = self.time_fc(gated).transpose(-1, -2)
        return self.time_fuse(torch.cat([e, path], dim=1))

    def freq_branch(self, e, squeezed=None):
        b, c, f, t = e.shape
        a = self.squeeze(e) if squeezed is None else squeezed
        r = a.shape[1]
        # r*F vectors of length T, one 1-d conv per bin
        bins = a.permute(0, 2, 1, 3).reshape(b * f, r, t)
        mask = self.freq_mask(bins).reshape(b, f, t).unsqueeze(1)
        path = self.freq_fc(e * mask)  # (B, C, F, T), FC along T
        return self.freq_fuse(torch.cat([e, path], dim=1))

    def forward(self, e):
        self._check(e)
        a = self.squeeze(e)
        zeros = torch.zeros_like(e)
        t_out = self.time_branch(e, a) if self.use_time else zeros
        f_out = self.freq_branch(e, a) if self.use_freq else zeros
        return self.fuse(torch.cat([t_out, f_out], dim=1))


class FeedForward(nn.Module):
    def __init__(self, dim, expansion):
        super().__init__()
        self.norm = ComplexLayerNorm(dim)
        self.up = ComplexLinear(dim, dim * expansion)
        self.act = CReLU()
        self.down = ComplexLinear(dim * expansion, dim)

    def forward(self, x):
        return self.down(self.act(self.up(self.norm(x))))


class ConvModule(nn.Module):
    """Pointwise -> CReLU -> depthwise conv over time -> BN -> CReLU -> pointwise."""

    def __init__(self, dim, kernel):
        super().__init__()
        self.norm = ComplexLayerNorm(dim)
        self.pw1 = ComplexLinear(dim, dim)
        self.dw = ComplexConv1d(dim, dim, kernel, padding=kernel // 2, groups=dim, bias=False)
        self.bn = ComplexBatchNorm(dim)
        self.act = CReLU()
        self.pw2 = ComplexLinear(dim, dim)

    def forward(self, x):
        h = self.act(self.pw1(self.norm(x))).transpose(1, 2)
        h = self.act(self.bn(self.dw(h))).transpose(1, 2)
        return self.pw2(h)


class AttentionModule(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.norm = ComplexLayerNorm(dim)
        self.attn = ComplexMultiheadAttention(dim, heads)

    def forward(self, x, return_weights=False):
        return self.attn(self.norm(x), return_weights=return_weights)


class ConformerBlock(nn.Module):
    def __init__(self, dim, heads, expansion, kernel, with_conv=True):
        super().__init__()
        self.with_conv = with_conv
        if with_conv:
            self.ff1 = FeedForward(dim, expansion)
            self.conv = ConvModule(dim, kernel)
        self.mhsa = AttentionModule(dim, heads)
        self.ff2 = FeedForward(dim, expansion)

    def residual_outputs(self):
        mods = [self.mhsa.attn.out, self.ff2.down]
        if self.with_conv:
            mods += [self.ff1.down, self.conv.pw2]
        return mods

    def forward(self, x, return_weights=False):
        # macaron halves only apply to the conformer; the transformer uses a full FF step
        half = 0.5 if self.with_conv else 1.0
        if self.with_conv:
            x = x + 0.5 * self.ff1(x)
        a, w = self.mhsa(x, return_weights=True)
        x = x + a
        if self.with_conv:
            x = x + self.conv(x)
        x = x + half * self.ff2(x)
        return (x, w) if return_weights else x


class Bottleneck(nn.Module):
    """Conformer (or plain transformer) stack over the frame sequence."""

    def __init__(self, cfg):
        super().__init__()
        dim = cfg.bottleneck_dim
        self.blocks = nn.ModuleList(
            ConformerBlock(dim, cfg.heads, cfg.ff_expansion, cfg.conv_kernel, cfg.bottleneck == "conformer")
            for _ in range(cfg.conformer_depth)
        )
        if cfg.zero_init_residual:
            for blk in self.blocks:
                for m in blk.residual_outputs():
                    m.zero_()

    def forward(self, x, return_weights=False):
        b, c, f, t = x.shape
        h = x.permute(0, 3, 1, 2).reshape(b, t, c * f)
        weights = []
        for blk in self.blocks:
            h, w = blk(h, return_weights=True)
            weights.append(w)
        y = h.reshape(b, t, c, f).permute(0, 2, 3, 1)
        return (y, weights) if return_weights else y


class ReconstructionNet(nn.Module):
    """Maps a (B, F, T) complex spectrogram to a (B, F, T) reconstruction."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        k = cfg.enc_kernel
        ins = (1,) + tuple(w[:-1])
        self.encoders = nn.ModuleList(Encoder(ins[n], w[n], k, cfg.freq_strides[n]) for n in range(N_LEVELS))
        self.skips = nn.ModuleList(SkipBlock(w[n], cfg.skip_kernel) for n in range(N_LEVELS))
        freqs = cfg.level_freqs()
        self.cuab_levels = CUAB_PLACEMENTS[cfg.cuab]
        self.cuabs = nn.ModuleDict(
            {
                str(n): CUAB(w[n], freqs[n], cfg.n_frames, cfg.cuab_reduction, cfg.cuab_mask_kernel, cfg.cuab_fuse_kernel)
                for n in self.cuab_levels
            }
        )
        self.bottleneck = Bottleneck(cfg)
        decoders = []
        prev = w[-1]
        for j in range(N_LEVELS):
            n = N_LEVELS - 1 - j  # encoder level whose skip this decoder consumes
            out = w[n - 1] if n > 0 else 1
            decoders.append(Decoder(prev + w[n], out, k, cfg.freq_strides[n], final=(n == 0)))
            prev = out
        self.decoders = nn.ModuleList(decoders)

    def encode(self, x):
        """Run the contracting path; returns (bottleneck input, skip outputs)."""
        h = x.unsqueeze(1)
        skips = []
        for n, enc in enumerate(self.encoders):
            e = enc(h)
            skips.append(self.skips[n](e) if self.cfg.skips else torch.zeros_like(e))
            h = self.cuabs[str(n)](e) if n in self.cuab_levels else e
        return h, skips

    def decode(self, h, skips):
        for j, dec in enumerate(self.decoders):
            h = dec(torch.cat([h, skips[N_LEVELS - 1 - j]], dim=1))
        return h.squeeze(1)

    def forward(self, x):
        if x.shape[-2] != self.cfg.n_freq:
            raise ValueError(f"expected {self.cfg.n_freq} frequency bins, got {x.shape[-2]}")
        h, skips = self.encode(x)
        y = self.decode(self.bottleneck(h), skips)
        return x + y if self.cfg.residual_output else y


def build_model(cfg):
    """Validate ``cfg`` and build a network whose weights depend only on ``cfg.seed``."""
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = ReconstructionNet(cfg)
    return net


def parameter_count(net):
    return sum(p.numel() for p in net.parameters())


def model_forward(spec, net):
    """Reconstruct a one-sided spectrogram; the Nyquist row is dropped and re-appended as zero."""
    data = spec.data
    squeeze = data.dim() == 2
    if squeeze:
        data = data.unsqueeze(0)
    if data.shape[-2] != net.cfg.n_freq + 1:
        raise ValueError(f"expected {net.cfg.n_freq + 1} bins, got {data.shape[-2]}")
    dtype = next(net.parameters()).dtype
    x = data[..., :-1, :].to(torch.complex128 if dtype == torch.float64 else torch.complex64)
    y = net(x)
    y = torch.cat([y, torch.zeros_like(y[..., :1, :])], dim=-2)
    return ComplexSpectrogram(y.squeeze(0) if squeeze else y, spec.config, spec.sample_rate)


def reconstruct_waveform(net, wav, stft_cfg=MODEL_STFT):
    """Waveform (B, N) -> reconstructed waveform (B, N) through the network."""
    spec = stft(wav, stft_cfg)
    return istft(model_forward(spec, net), wav.shape[-1])
