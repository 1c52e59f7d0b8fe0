import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eventcloud import autodiff as ad, spectral as S
from eventcloud.autodiff import Tensor

from oracles import circular_convolution, naive_dft, naive_dft_matrix_form, naive_idft

finite = st.floats(-1e3, 1e3, allow_nan=False)


# ---- transforms

def test_impulse_and_dc():
    assert np.allclose(S.rdft(np.array([1.0, 0, 0, 0])), [1, 1, 1])
    assert np.allclose(S.rdft(np.ones(4)), [4, 0, 0])


@pytest.mark.parametrize("L", [1, 2, 3, 5, 8, 12, 31, 33, 64, 100, 384])
@pytest.mark.parametrize("method", ["auto", "naive", "bluestein"])
def test_rdft_matches_direct_sum(L, method):
    x = np.random.default_rng(L).normal(size=L)
    ref = naive_dft(x)[:L // 2 + 1]
    assert np.max(np.abs(S.rdft(x, method=method) - ref)) < 1e-9
    assert np.max(np.abs(S.irdft(S.rdft(x, method=method), L, method=method) - x)) < 1e-10


@pytest.mark.parametrize("L", [1, 2, 4, 16, 128, 1024])
def test_radix2_full_fft(L):
    z = np.random.default_rng(L).normal(size=(3, L)) + 1j * np.random.default_rng(L + 1).normal(size=(3, L))
    ref = naive_dft_matrix_form(z)
    assert np.max(np.abs(S.fft(z, "radix2") - ref)) < 1e-9
    assert np.max(np.abs(S.ifft(S.fft(z, "radix2"), "radix2") - z)) < 1e-12


def test_ifft_matches_direct_sum():
    X = np.random.default_rng(0).normal(size=11) + 1j * np.random.default_rng(1).normal(size=11)
    assert np.allclose(S.ifft(X), naive_idft(X), atol=1e-12)


def test_radix2_rejects_odd_length():
    with pytest.raises(ValueError):
        S.fft(np.ones(6), "radix2")
    with pytest.raises(ValueError):
        S.fft(np.ones(4), "winograd")


def test_irdft_ignores_edge_imaginary_parts():
    x = np.random.default_rng(2).normal(size=8)
    X = S.rdft(x)
    X[0] += 5j
    X[-1] -= 3j
    assert np.allclose(S.irdft(X, 8), x)


def test_axis_argument():
    x = np.random.default_rng(3).normal(size=(5, 6, 7))
    X = S.rdft(x, axis=1)
    assert X.shape == (5, 4, 7)
    assert np.allclose(X[2, :, 3], naive_dft(x[2, :, 3])[:4])
    assert np.allclose(S.irdft(X, 6, axis=1), x)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 70).flatmap(lambda L: arrays(np.float64, L, elements=finite)))
def test_parseval(x):
    L = len(x)
    X = S.rdft(x)
    energy = np.sum(S.bin_weights(L) * np.abs(X) ** 2) / L
    assert abs(energy - np.sum(x * x)) <= 1e-9 * max(1.0, np.sum(x * x))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 70).flatmap(lambda L: st.tuples(arrays(np.float64, L, elements=finite),
                                                       arrays(np.float64, L, elements=finite))),
       finite, finite)
def test_linearity(xy, a, b):
    x, y = xy
    lhs = S.rdft(a * x + b * y)
    rhs = a * S.rdft(x) + b * S.rdft(y)
    scale = max(1.0, np.abs(lhs).max(), np.abs(rhs).max())
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale


def test_edge_bins_are_real():
    for L in (4, 7, 64, 100):
        X = S.rdft(np.random.default_rng(L).normal(size=L))
        assert X[0].imag == 0
        if L % 2 == 0:
            assert abs(X[-1].imag) < 1e-12


# ---- frequency-aware blocks

def test_all_pass_filter_is_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 8, 16)))
    filt = Tensor(np.stack([np.ones(9), np.zeros(9)], axis=-1))
    assert np.allclose(S.spatial_fa(x, filt, act="identity").data, x.data, atol=1e-12)
    y = Tensor(np.random.default_rng(1).normal(size=(64, 8)))
    tf = Tensor(np.stack([np.ones((33, 8)), np.zeros((33, 8))], axis=-1))
    assert np.allclose(S.temporal_fa(y, tf, act="identity").data, y.data, atol=1e-12)


@pytest.mark.parametrize("C", [2, 5, 16, 33, 64])
def test_spatial_fa_is_circular_convolution(C):
    rng = np.random.default_rng(C)
    x = rng.normal(size=(3, 4, C))
    h = rng.normal(size=C)
    H = naive_dft(h)[:C // 2 + 1]
    filt = Tensor(np.stack([H.real, H.imag], axis=-1))
    out = S.spatial_fa(Tensor(x), filt, act="identity").data
    ref = np.array([[circular_convolution(x[i, j], h) for j in range(4)] for i in range(3)])
    assert np.max(np.abs(out - ref)) < 1e-8


def test_temporal_fa_dc_projection():
    x = np.random.default_rng(4).normal(size=(10, 3))
    v = np.zeros((6, 3, 2))
    v[0, :, 0] = 1.0
    out = S.temporal_fa(Tensor(x), Tensor(v), act="identity").data
    assert np.allclose(out, np.broadcast_to(x.mean(axis=0), x.shape))


def test_temporal_fa_matches_naive_pipeline():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(64, 8))
    v = rng.normal(size=(33, 8, 2))
    out = S.temporal_fa(Tensor(x), Tensor(v), act="identity").data
    ref = np.empty_like(x)
    for c in range(8):
        full = naive_dft(x[:, c])
        V = v[:, c, 0] + 1j * v[:, c, 1]
        # a real-output filter acts on bin k and its mirror L-k with conjugate values
        Vfull = np.concatenate([V, np.conj(V[1:32][::-1])])
        Vfull[0] = V[0].real
        Vfull[32] = V[32].real
        ref[:, c] = naive_idft(Vfull * full).real
    assert np.max(np.abs(out - ref)) < 1e-9


def test_filter_shape_errors():
    x = Tensor(np.zeros((2, 3, 8)))
    with pytest.raises(ad.ShapeError):
        S.spatial_fa(x, Tensor(np.zeros((4, 2))))
    with pytest.raises(ad.ShapeError):
        S.temporal_fa(Tensor(np.zeros((10, 3))), Tensor(np.zeros((6, 4, 2))))


def test_filter_length_at_540():
    assert S.n_bins(540) == 271


@pytest.mark.parametrize("method", ["naive", "auto"])
def test_spatial_fa_gradients(method):
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(4, 8, 16)), requires_grad=True)
    filt = Tensor(S.init_filter((9,), rng, noise=0.3), requires_grad=True)
    w = rng.normal(size=(4, 8, 16))
    rep = ad.check_gradients(lambda: ad.sum(S.spatial_fa(x, filt, "gelu", method) * w), [x, filt])
    assert rep.passed, str(rep)


@pytest.mark.parametrize("N", [7, 12, 40])
def test_temporal_fa_gradients(N):
    rng = np.random.default_rng(N)
    x = Tensor(rng.normal(size=(2, N, 5)), requires_grad=True)
    filt = Tensor(S.init_filter((N // 2 + 1, 5), rng, noise=0.3), requires_grad=True)
    w = rng.normal(size=(2, N, 5))
    rep = ad.check_gradients(lambda: ad.sum(S.temporal_fa(x, filt, "gelu", "auto") * w), [x, filt])
    assert rep.passed, str(rep)


def test_init_filter_is_near_all_pass():
    v = S.init_filter((100,), np.random.default_rng(0))
    assert abs(v[..., 0].mean() - 1) < 0.01 and abs(v[..., 1].mean()) < 0.01
    assert 0.01 < v[..., 1].std() < 0.03


# ---- complexity

def test_macs_single_op():
    conv, freq, ratio = S.macs_single_op(540)
    assert conv == 291600
    assert abs(freq - 540 * np.log2(540)) < 1e-9 and abs(freq - 4901.48) < 0.01
    assert abs(ratio - 59.49) < 0.01
    assert S.macs_single_op(2)[2] == 2
    assert S.macs_single_op(256)[2] == 32
    with pytest.raises(ValueError):
        S.macs_single_op(1)
