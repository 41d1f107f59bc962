"""Complex-valued building blocks.

Activations are native ``torch`` complex tensors. Every weight is stored as a
pair of real tensors (real part, imaginary part) so that checkpoints, optimizers
and batch-norm statistics stay in plain real arithmetic.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def _split(x):
    if not torch.is_complex(x):
        raise TypeError(f"expected a complex tensor, got dtype {x.dtype}")
    return x.real, x.imag


def _check_channels(x, w, groups=1, transposed=False):
    expected = w.shape[0] if transposed else w.shape[1] * groups
    if x.shape[1] != expected:
        raise ValueError(
            f"input has {x.shape[1]} channels but the kernel expects {expected}"
        )


def _complex_conv(conv, x, w_real, w_imag, b_real, b_imag, groups):
    """Apply a real conv op with the complex product rule.

    For ungrouped kernels the four real products come from a single call on
    batch-stacked inputs and channel-stacked kernels.
    """
    xr, xi = _split(x)
    if groups == 1:
        n, c = xr.shape[0], w_real.shape[0]
        y = conv(torch.cat([xr, xi]), torch.cat([w_real, w_imag]))
        real = y[:n, :c] - y[n:, c:]
        imag = y[:n, c:] + y[n:, :c]
    else:
        real = conv(xr, w_real) - conv(xi, w_imag)
        imag = conv(xr, w_imag) + conv(xi, w_real)
    if b_real is not None:
        shape = (1, -1) + (1,) * (real.dim() - 2)
        real = real + b_real.view(shape)
        imag = imag + b_imag.view(shape)
    return torch.complex(real, imag)


def complex_conv2d(x, w_real, w_imag, b_real=None, b_imag=None, stride=1, padding=0, groups=1):
    """2-D convolution of a complex input with a complex kernel."""
    _check_channels(x, w_real, groups)
    conv = lambda t, w: F.conv2d(t, w, None, stride, padding, 1, groups)
    return _complex_conv(conv, x, w_real, w_imag, b_real, b_imag, groups)


def complex_conv1d(x, w_real, w_imag, b_real=None, b_imag=None, stride=1, padding=0, groups=1):
    _check_channels(x, w_real, groups)
    conv = lambda t, w: F.conv1d(t, w, None, stride, padding, 1, groups)
    return _complex_conv(conv, x, w_real, w_imag, b_real, b_imag, groups)


def complex_conv_transpose2d(
    x, w_real, w_imag, b_real=None, b_imag=None, stride=1, padding=0, output_padding=0
):
    """Transposed 2-D convolution with the same (Re, Im) combination rule."""
    _check_channels(x, w_real, transposed=True)
    xr, xi = _split(x)
    conv = lambda t, w: F.conv_transpose2d(t, w, None, stride, padding, output_padding)
    # transposed kernels are (in, out, ...): stack along the output axis
    n, c = xr.shape[0], w_real.shape[1]
    y = conv(torch.cat([xr, xi]), torch.cat([w_real, w_imag], dim=1))
    real = y[:n, :c] - y[n:, c:]
    imag = y[:n, c:] + y[n:, :c]
    if b_real is not None:
        real = real + b_real.view(1, -1, 1, 1)
        imag = imag + b_imag.view(1, -1, 1, 1)
    return torch.complex(real, imag)


def complex_linear(x, w_real, w_imag, b_real=None, b_imag=None):
    """Complex matrix product over the last axis; weights are (out, in)."""
    if x.shape[-1] != w_real.shape[1]:
        raise ValueError(
            f"last dimension {x.shape[-1]} does not match weight input size {w_real.shape[1]}"
        )
    xr, xi = _split(x)
    real = F.linear(xr, w_real) - F.linear(xi, w_imag)
    imag = F.linear(xr, w_imag) + F.linear(xi, w_real)
    if b_real is not None:
        real = real + b_real
        imag = imag + b_imag
    return torch.complex(real, imag)


def complex_relu(x):
    """CReLU: ReLU applied independently to the real and imaginary parts."""
    xr, xi = _split(x)
    return torch.complex(F.relu(xr), F.relu(xi))


def complex_attention(q, k, v):
    """Scaled dot-product attention on complex (..., L, d) tensors.

    Scores are ``Re(q conj(k)^T) / sqrt(d)`` so the softmax stays real; the
    row-stochastic weights are returned alongside the output.
    """
    d = q.shape[-1]
    qr, qi = _split(q)
    kr, ki = _split(k)
    # Re(q * conj(k)) = qr kr + qi ki
    scores = (qr @ kr.transpose(-1, -2) + qi @ ki.transpose(-1, -2)) / math.sqrt(d)
    weights = torch.softmax(scores, dim=-1)
    vr, vi = _split(v)
    return torch.complex(weights @ vr, weights @ vi), weights


def init_complex_(w_real, w_imag, fan_in, gain=1 / math.sqrt(2)):
    # Each part ~ U(-b, b) with Var = gain^2 / fan_in, so |w|^2 has variance 1/fan_in.
    bound = gain * math.sqrt(3.0 / fan_in)
    with torch.no_grad():
        w_real.uniform_(-bound, bound)
        w_imag.uniform_(-bound, bound)


class _ComplexWeights(nn.Module):
    """Holds a (real, imag) weight pair and optional complex bias."""

    def _make(self, shape, fan_in, bias, bias_size):
        self.weight_real = nn.Parameter(torch.empty(shape))
        self.weight_imag = nn.Parameter(torch.empty(shape))
        init_complex_(self.weight_real, self.weight_imag, fan_in)
        if bias:
            self.bias_real = nn.Parameter(torch.zeros(bias_size))
            self.bias_imag = nn.Parameter(torch.zeros(bias_size))
        else:
            self.register_parameter("bias_real", None)
            self.register_parameter("bias_imag", None)

    def zero_(self):
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def _params(self):
        return self.weight_real, self.weight_imag, self.bias_real, self.bias_imag


class ComplexConv2d(_ComplexWeights):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        kh, kw = _pair(kernel_size)
        self.stride, self.padding, self.groups = stride, padding, groups
        self._make(
            (out_channels, in_channels // groups, kh, kw),
            in_channels // groups * kh * kw,
            bias,
            out_channels,
        )

    def forward(self, x):
        return complex_conv2d(x, *self._params(), self.stride, self.padding, self.groups)


class ComplexConv1d(_ComplexWeights):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        self.stride, self.padding, self.groups = stride, padding, groups
        self._make(
            (out_channels, in_channels // groups, kernel_size),
            in_channels // groups * kernel_size,
            bias,
            out_channels,
        )

    def forward(self, x):
        return complex_conv1d(x, *self._params(), self.stride, self.padding, self.groups)


class ComplexConvTranspose2d(_ComplexWeights):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, output_padding=0, bias=True):
        super().__init__()
        kh, kw = _pair(kernel_size)
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        self._make((in_channels, out_channels, kh, kw), in_channels * kh * kw, bias, out_channels)

    def forward(self, x):
        return complex_conv_transpose2d(
            x, *self._params(), self.stride, self.padding, self.output_padding
        )


class ComplexLinear(_ComplexWeights):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self._make((out_features, in_features), in_features, bias, out_features)

    def forward(self, x):
        return complex_linear(x, *self._params())


class ComplexBatchNorm(nn.Module):
    """Split batch norm: real and imaginary parts normalized independently.

    Works on (B, C, ...) inputs of any rank, using the 1-d or 2-d torch
    implementation underneath. ``whitening=True`` is reserved for a 2x2
    covariance-whitening variant and currently raises.
    """

    def __init__(self, num_features, eps=1e-5, momentum=0.1, whitening=False):
        super().__init__()
        if whitening:
            raise NotImplementedError("whitening complex batch norm is not implemented")
        self.bn_real = nn.BatchNorm1d(num_features, eps=eps, momentum=momentum)
        self.bn_imag = nn.BatchNorm1d(num_features, eps=eps, momentum=momentum)

    def forward(self, x):
        xr, xi = _split(x)
        shape = xr.shape
        # BatchNorm1d accepts (B, C, L); fold trailing axes into L.
        xr = xr.reshape(shape[0], shape[1], -1)
        xi = xi.reshape(shape[0], shape[1], -1)
        return torch.complex(self.bn_real(xr).reshape(shape), self.bn_imag(xi).reshape(shape))


class ComplexLayerNorm(nn.Module):
    """Split layer norm over the last axis."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.ln_real = nn.LayerNorm(dim, eps=eps)
        self.ln_imag = nn.LayerNorm(dim, eps=eps)

    def forward(self, x):
        xr, xi = _split(x)
        return torch.complex(self.ln_real(xr), self.ln_imag(xi))


class CReLU(nn.Module):
    def forward(self, x):
        return complex_relu(x)


class ComplexMultiheadAttention(nn.Module):
    """Multi-head self-attention on (B, L, d) complex sequences."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = ComplexLinear(dim, dim)
        self.k = ComplexLinear(dim, dim)
        self.v = ComplexLinear(dim, dim)
        self.out = ComplexLinear(dim, dim)

    def _heads(self, t):
        b, n, _ = t.shape
        return t.reshape(b, n, self.heads, self.dim // self.heads).transpose(1, 2)

    def forward(self, x, return_weights=False):
        b, n, _ = x.shape
        ctx, weights = complex_attention(self._heads(self.q(x)), self._heads(self.k(x)), self._heads(self.v(x)))
        y = self.out(ctx.transpose(1, 2).reshape(b, n, self.dim))
        return (y, weights) if return_weights else y


def _pair(k):
    return (k, k) if isinstance(k, int) else tuple(k)
