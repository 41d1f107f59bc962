import numpy as np
import pytest
import torch

from dpsrecon import cplx
from oracles import conv2d_loop, conv_transpose2d_loop, fd_gradient_error, matvec_loop

torch.manual_seed(0)


def crandn(*shape, dtype=torch.complex128):
    return torch.randn(*shape, dtype=dtype)


def rrandn(*shape):
    return torch.randn(*shape, dtype=torch.float64)


def test_conv2d_identity_kernel():
    x = crandn(2, 3, 5, 4)
    wr = torch.zeros(3, 3, 1, 1, dtype=torch.float64)
    wr[range(3), range(3)] = 1
    y = cplx.complex_conv2d(x, wr, torch.zeros_like(wr))
    assert torch.allclose(y, x)


def test_conv2d_multiplication_by_j_rotates():
    x = crandn(1, 2, 4, 4)
    wi = torch.zeros(2, 2, 1, 1, dtype=torch.float64)
    wi[range(2), range(2)] = 1
    y = cplx.complex_conv2d(x, torch.zeros_like(wi), wi)
    assert torch.allclose(y, 1j * x)


@pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)), ((2, 1), (2, 1)), ((2, 2), (1, 0))])
def test_conv2d_matches_loop(stride, padding):
    x = crandn(2, 3, 7, 5)
    wr, wi = rrandn(4, 3, 5, 3), rrandn(4, 3, 5, 3)
    br, bi = rrandn(4), rrandn(4)
    y = cplx.complex_conv2d(x, wr, wi, br, bi, stride=stride, padding=padding).numpy()
    ref = conv2d_loop(x.numpy(), (wr + 1j * wi).numpy(), stride, padding)
    ref += (br + 1j * bi).numpy()[None, :, None, None]
    np.testing.assert_allclose(y, ref, rtol=1e-10, atol=1e-10)


def test_grouped_conv1d_matches_per_channel():
    x = crandn(2, 4, 9)
    wr, wi = rrandn(4, 1, 3), rrandn(4, 1, 3)
    y = cplx.complex_conv1d(x, wr, wi, padding=1, groups=4)
    for c in range(4):
        yc = cplx.complex_conv1d(x[:, c : c + 1], wr[c : c + 1], wi[c : c + 1], padding=1)
        assert torch.allclose(y[:, c : c + 1], yc)


@pytest.mark.parametrize("stride,padding,out_pad", [((1, 1), (0, 0), (0, 0)), ((2, 1), (2, 1), (1, 0))])
def test_conv_transpose2d_matches_scatter(stride, padding, out_pad):
    x = crandn(2, 3, 4, 5)
    wr, wi = rrandn(3, 2, 5, 3), rrandn(3, 2, 5, 3)
    y = cplx.complex_conv_transpose2d(x, wr, wi, stride=stride, padding=padding, output_padding=out_pad).numpy()
    ref = conv_transpose2d_loop(x.numpy(), (wr + 1j * wi).numpy(), stride, padding, out_pad)
    np.testing.assert_allclose(y, ref, rtol=1e-10, atol=1e-10)


def test_linear_matches_dot_products():
    x = crandn(3, 2, 6)
    wr, wi = rrandn(4, 6), rrandn(4, 6)
    y = cplx.complex_linear(x, wr, wi).numpy()
    np.testing.assert_allclose(y, matvec_loop(x.numpy(), (wr + 1j * wi).numpy()), rtol=1e-10, atol=1e-10)


def test_channel_mismatch_names_sizes():
    with pytest.raises(ValueError, match="3 channels"):
        cplx.complex_conv2d(crandn(1, 3, 4, 4), rrandn(2, 2, 1, 1), rrandn(2, 2, 1, 1))
    with pytest.raises(ValueError, match="does not match"):
        cplx.complex_linear(crandn(2, 5), rrandn(3, 4), rrandn(3, 4))


def test_real_input_rejected():
    with pytest.raises(TypeError):
        cplx.complex_relu(torch.randn(3))


def test_crelu_parts_independent():
    x = torch.complex(torch.tensor([-1.0, 2.0, -3.0, 0.5]), torch.tensor([1.0, -2.0, -1.0, 0.25]))
    y = cplx.complex_relu(x)
    assert torch.equal(y.real, torch.tensor([0.0, 2.0, 0.0, 0.5]))
    assert torch.equal(y.imag, torch.tensor([1.0, 0.0, 0.0, 0.25]))


def test_batchnorm_train_statistics():
    bn = cplx.ComplexBatchNorm(3).double()
    x = crandn(8, 3, 5, 4) * 3 + (2 - 1j)
    y = bn(x)
    for part in (y.real, y.imag):
        assert torch.allclose(part.mean(dim=(0, 2, 3)), torch.zeros(3, dtype=torch.float64), atol=1e-10)
        assert torch.allclose(part.var(dim=(0, 2, 3), unbiased=False), torch.ones(3, dtype=torch.float64), atol=1e-3)
    # running mean moved 10% toward the batch mean
    assert torch.allclose(bn.bn_real.running_mean, 0.1 * x.real.mean(dim=(0, 2, 3)))
    bn.eval()
    assert torch.allclose(bn(x).real, (x.real - bn.bn_real.running_mean.view(1, 3, 1, 1))
                          / torch.sqrt(bn.bn_real.running_var.view(1, 3, 1, 1) + 1e-5))


def test_batchnorm_any_rank_and_whitening_flag():
    bn = cplx.ComplexBatchNorm(2).double()
    assert bn(crandn(4, 2, 7)).shape == (4, 2, 7)
    with pytest.raises(NotImplementedError):
        cplx.ComplexBatchNorm(2, whitening=True)


def test_attention_rows_sum_to_one_and_permutation_equivariant():
    q, k, v = crandn(2, 6, 4), crandn(2, 6, 4), crandn(2, 6, 4)
    out, w = cplx.complex_attention(q, k, v)
    assert torch.allclose(w.sum(-1), torch.ones(2, 6, dtype=torch.float64))
    perm = torch.randperm(6)
    out_p, _ = cplx.complex_attention(q[:, perm], k[:, perm], v[:, perm])
    assert torch.allclose(out_p, out[:, perm])


def test_attention_scores_match_explicit_sum():
    q, k, v = crandn(1, 3, 2), crandn(1, 3, 2), crandn(1, 3, 2)
    _, w = cplx.complex_attention(q, k, v)
    s = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            s[i, j] = sum((q[0, i, d] * k[0, j, d].conj()).real.item() for d in range(2)) / np.sqrt(2)
    e = np.exp(s - s.max(1, keepdims=True))
    np.testing.assert_allclose(w[0].numpy(), e / e.sum(1, keepdims=True), rtol=1e-12)


def test_mhsa_heads_must_divide_dim():
    with pytest.raises(ValueError, match="not divisible"):
        cplx.ComplexMultiheadAttention(10, 4)
    m = cplx.ComplexMultiheadAttention(8, 2).double()
    y, w = m(crandn(2, 5, 8), return_weights=True)
    assert y.shape == (2, 5, 8) and w.shape == (2, 2, 5, 5)


def test_init_variance():
    wr = torch.empty(20000)
    wi = torch.empty(20000)
    cplx.init_complex_(wr, wi, fan_in=50)
    assert abs(float((wr**2 + wi**2).mean()) * 50 - 1.0) < 0.03


# central finite differences on every op (double precision)

GRAD_TOL = 1e-4


def test_grad_conv2d():
    err = fd_gradient_error(
        lambda x, wr, wi, br, bi: cplx.complex_conv2d(x, wr, wi, br, bi, stride=(2, 1), padding=(2, 1)),
        [crandn(2, 2, 6, 3), rrandn(3, 2, 5, 3), rrandn(3, 2, 5, 3), rrandn(3), rrandn(3)],
    )
    assert err <= GRAD_TOL


def test_grad_conv1d_grouped():
    err = fd_gradient_error(
        lambda x, wr, wi: cplx.complex_conv1d(x, wr, wi, padding=2, groups=3),
        [crandn(2, 3, 7), rrandn(3, 1, 5), rrandn(3, 1, 5)],
    )
    assert err <= GRAD_TOL


def test_grad_conv_transpose2d():
    err = fd_gradient_error(
        lambda x, wr, wi, br, bi: cplx.complex_conv_transpose2d(x, wr, wi, br, bi, (2, 1), (2, 1), (1, 0)),
        [crandn(1, 2, 3, 3), rrandn(2, 3, 5, 3), rrandn(2, 3, 5, 3), rrandn(3), rrandn(3)],
    )
    assert err <= GRAD_TOL


def test_grad_linear():
    err = fd_gradient_error(cplx.complex_linear, [crandn(3, 5), rrandn(4, 5), rrandn(4, 5), rrandn(4), rrandn(4)])
    assert err <= GRAD_TOL


def test_grad_crelu():
    x = crandn(40)
    # keep every part away from the kink so the difference quotient is clean
    x = torch.complex(x.real + 0.1 * x.real.sign(), x.imag + 0.1 * x.imag.sign())
    assert fd_gradient_error(cplx.complex_relu, [x]) <= GRAD_TOL


def test_grad_batchnorm():
    bn = cplx.ComplexBatchNorm(3).double()
    assert fd_gradient_error(lambda x: bn(x), [crandn(4, 3, 3, 2)]) <= GRAD_TOL


def test_grad_layernorm():
    ln = cplx.ComplexLayerNorm(6).double()
    assert fd_gradient_error(lambda x: ln(x), [crandn(3, 6)]) <= GRAD_TOL


def test_grad_attention():
    assert fd_gradient_error(lambda q, k, v: cplx.complex_attention(q, k, v)[0],
                             [crandn(1, 4, 3), crandn(1, 4, 3), crandn(1, 4, 3)]) <= GRAD_TOL


def test_grad_multihead_attention():
    m = cplx.ComplexMultiheadAttention(4, 2).double()
    assert fd_gradient_error(lambda x: m(x), [crandn(1, 3, 4)]) <= GRAD_TOL
