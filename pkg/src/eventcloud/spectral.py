"""Real-signal DFT primitives and frequency-domain filtering blocks.

Transforms run along one axis of an n-d array and are vectorised over all
other axes. Length dispatch:

* power of two  -> iterative radix-2 Cooley-Tukey
* L < 32        -> direct O(L^2) sum (dense DFT matrix)
* otherwise     -> Bluestein chirp-z on a power-of-two radix-2 FFT

Spectra of real signals keep only the ``L // 2 + 1`` non-redundant bins.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

NAIVE_BELOW = 32


# --------------------------------------------------------------------------
# complex FFT kernels (transform along the last axis)

@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(h: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(h) / h)


def _fft_radix2(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    lead = a.shape[:-1]
    a = a[..., _bit_reverse(n)]
    h = 1
    while h < n:
        a = a.reshape(lead + (n // (2 * h), 2, h))
        t = a[..., 1, :] * _twiddles(h)
        u = a[..., 0, :]
        a = np.stack((u + t, u - t), axis=-2)
        h *= 2
    return a.reshape(lead + (n,))


@lru_cache(maxsize=None)
def _dft_matrix(n: int) -> np.ndarray:
    kn = np.outer(np.arange(n), np.arange(n)) % n
    return np.exp(-2j * np.pi * kn / n)


@lru_cache(maxsize=None)
def _bluestein_plan(n: int):
    m = 1 << (2 * n - 2).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase argument small and exact
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    return m, chirp, _fft_radix2(b)


def _fft_bluestein(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    m, chirp, b_hat = _bluestein_plan(n)
    padded = np.zeros(a.shape[:-1] + (m,), dtype=complex)
    padded[..., :n] = a * chirp
    conv = _ifft_pow2(_fft_radix2(padded) * b_hat)
    return conv[..., :n] * chirp


def _ifft_pow2(a: np.ndarray) -> np.ndarray:
    return np.conj(_fft_radix2(np.conj(a))) / a.shape[-1]


def _resolve(n: int, method: str) -> str:
    if method != "auto":
        if method not in ("radix2", "naive", "bluestein"):
            raise ValueError(f"unknown FFT method {method!r}")
        if method == "radix2" and n & (n - 1):
            raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
        return method
    if n & (n - 1) == 0:
        return "radix2"
    return "naive" if n < NAIVE_BELOW else "bluestein"


def fft(a: np.ndarray, method: str = "auto") -> np.ndarray:
    """Complex DFT along the last axis."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[-1]
    if n < 1:
        raise ValueError("transform length must be >= 1")
    method = _resolve(n, method)
    if method == "radix2":
        return _fft_radix2(a)
    if method == "naive":
        return a @ _dft_matrix(n).T
    return _fft_bluestein(a)


def ifft(a: np.ndarray, method: str = "auto") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    return np.conj(fft(np.conj(a), method)) / a.shape[-1]


# --------------------------------------------------------------------------
# real transforms

def n_bins(length: int) -> int:
    return length // 2 + 1


@lru_cache(maxsize=None)
def _real_dft_basis(n: int):
    """cos/sin of 2 pi k m / n for m < n, k <= n // 2; sin zeroed where it must vanish."""
    km = np.outer(np.arange(n), np.arange(n_bins(n))) % n
    ang = 2 * np.pi * km / n
    cos, sin = np.cos(ang), np.sin(ang)
    sin[:, 0] = 0.0
    if n % 2 == 0:
        sin[:, -1] = 0.0
    return cos, sin


def rdft(x: np.ndarray, axis: int = -1, method: str = "auto") -> np.ndarray:
    """Half spectrum ``X[k] = sum_n x[n] exp(-2j pi k n / L)``, k = 0 .. L//2."""
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("transform length must be >= 1")
    if _resolve(n, method) == "naive":
        cos, sin = _real_dft_basis(n)
        X = x @ cos - 1j * (x @ sin)
    else:
        X = fft(x, method)[..., :n_bins(n)]
    return np.moveaxis(X, -1, axis)


def irdft(X: np.ndarray, length: int, axis: int = -1, method: str = "auto") -> np.ndarray:
    """Inverse of :func:`rdft` with the 1/L factor.

    The imaginary parts of bin 0 (and bin L/2 for even L) cannot belong to a
    real signal's spectrum and are ignored.
    """
    X = np.moveaxis(np.asarray(X, dtype=complex), axis, -1)
    nb = n_bins(length)
    if X.shape[-1] != nb:
        raise ShapeError(f"irdft: {X.shape[-1]} bins given, length {length} needs {nb}")
    if _resolve(length, method) == "naive":
        cos, sin = _real_dft_basis(length)
        w = bin_weights(length) / length
        x = (X.real * w) @ cos.T - (X.imag * w) @ sin.T
        return np.moveaxis(x, -1, axis)
    full = np.empty(X.shape[:-1] + (length,), dtype=complex)
    full[..., :nb] = X
    full[..., 0] = X[..., 0].real
    if length % 2 == 0:
        full[..., nb - 1] = X[..., nb - 1].real
    # X[L-k] = conj(X[k])
    tail = length - nb
    if tail:
        full[..., nb:] = np.conj(X[..., 1:1 + tail][..., ::-1])
    x = ifft(full, method).real
    return np.moveaxis(x, -1, axis)


def bin_weights(length: int) -> np.ndarray:
    """Multiplicity of each stored bin in the full spectrum (1 for DC/Nyquist, else 2)."""
    w = np.full(n_bins(length), 2.0)
    w[0] = 1.0
    if length % 2 == 0:
        w[-1] = 1.0
    return w


# --------------------------------------------------------------------------
# differentiable filtering

def _complex(v: np.ndarray) -> np.ndarray:
    return v[..., 0] + 1j * v[..., 1]


def _expand_filter(V: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    """Align filter dims so its first axis sits on the transform axis."""
    axis = axis % ndim
    trailing = ndim - axis - V.ndim
    if trailing < 0:
        raise ShapeError(f"filter rank {V.ndim} too large for axis {axis} of a rank-{ndim} input")
    return V.reshape(V.shape + (1,) * trailing)


def spectral_filter(x: Tensor, filt: Tensor, axis: int = -1, method: str = "auto") -> Tensor:
    """``irdft(V * rdft(x))`` along ``axis``.

    ``filt`` holds V as real/imaginary pairs in its last dimension; its
    leading dimension is the frequency axis and any remaining dims follow
    the transform axis of ``x`` (e.g. ``(bins, C, 2)`` for axis -2).
    """
    L = x.shape[axis]
    nb = n_bins(L)
    if filt.shape[-1] != 2 or filt.shape[0] != nb:
        raise ShapeError(f"spectral filter shape {filt.shape} does not match {nb} bins "
                         f"(input length {L} along axis {axis})")
    V = _expand_filter(_complex(filt.data), x.ndim, axis)
    X = rdft(x.data, axis, method)
    try:
        Y = V * X
    except ValueError:
        raise ShapeError(f"spectral filter {filt.shape} does not broadcast against {x.shape}") from None
    out = irdft(Y, L, axis, method)
    shape_bins = (nb,) + (1,) * (x.ndim - (axis % x.ndim) - 1)
    scale = (bin_weights(L) / L).reshape(shape_bins)
    edge = np.zeros(nb, dtype=bool)
    edge[0] = True
    if L % 2 == 0:
        edge[-1] = True
    edge = edge.reshape(shape_bins)

    def backward(g):
        # gradient w.r.t. (Re Y, Im Y) of the irdft, packed as a complex array
        G = rdft(g, axis, method) * scale
        G = np.where(edge, G.real + 0j, G)
        gX = np.conj(V) * G
        gV = ad.unbroadcast(np.conj(X) * G, V.shape).reshape(filt.shape[:-1])
        gfilt = np.stack((gV.real, gV.imag), axis=-1)
        gx = _rdft_adjoint(gX, L, axis, method)
        return gx, gfilt
    return ad.record(out, (x, filt), backward)


def _rdft_adjoint(G: np.ndarray, L: int, axis: int, method: str) -> np.ndarray:
    """Adjoint of rdft: ``g[n] = Re sum_k G[k] exp(2j pi k n / L)`` over stored bins."""
    w = bin_weights(L).reshape((n_bins(L),) + (1,) * (G.ndim - (axis % G.ndim) - 1))
    return L * irdft(G / w, L, axis, method)


def init_filter(shape, rng: np.random.Generator, noise: float = 0.02) -> np.ndarray:
    """All-pass filter (1 + 0j) plus small Gaussian noise, as (..., 2) real pairs."""
    v = rng.normal(0.0, noise, size=tuple(shape) + (2,))
    v[..., 0] += 1.0
    return v


def spatial_fa(groups: Tensor, filt: Tensor, act: str = "gelu", method: str = "auto") -> Tensor:
    """Filter every (group, neighbor) feature vector across its channel axis."""
    C = groups.shape[-1]
    if filt.shape != (n_bins(C), 2):
        raise ShapeError(f"spatial_fa: filter {filt.shape} needs shape ({n_bins(C)}, 2) for C={C}")
    return ad.activation(act)(spectral_filter(groups, filt, axis=-1, method=method))


def temporal_fa(features: Tensor, filt: Tensor, act: str = "gelu", method: str = "auto") -> Tensor:
    """Filter each channel along the (chronological) point axis with a per-channel filter."""
    N, C = features.shape[-2:]
    if filt.shape != (n_bins(N), C, 2):
        raise ShapeError(f"temporal_fa: filter {filt.shape} needs shape ({n_bins(N)}, {C}, 2) "
                         f"for {N} points x {C} channels")
    return ad.activation(act)(spectral_filter(features, filt, axis=-2, method=method))


def macs_single_op(C: int) -> tuple[int, float, float]:
    """(C^2 pointwise-conv MACs, C*log2(C) frequency MACs, their ratio) for one feature vector."""
    if C < 2:
        raise ValueError("C must be >= 2")
    conv = C * C
    freq = C * math.log2(C)
    return conv, freq, conv / freq
