"""Dense neural-network kernels with explicit backward passes.

Everything works on float32 or float64 numpy arrays in channels-last layout:
a feature map is (batch, height, width, channels), a feature vector batch is
(batch, features). The input array's dtype is preserved end to end (anything
else is promoted to float64), so a graph can run in float32 for speed or in
float64 when gradients are being checked against finite differences.
Convolutions are cross-correlations without bias (batch normalization always
follows them in the architectures built here). Each forward has a matching
backward that consumes the upstream gradient and returns input/parameter
gradients; there is no autodiff graph.

Single-image arrays ((H, W, C) for convolutions and pooling) are accepted
everywhere and handled by adding a unit batch axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels as _K

# Compiled loop kernels take over the hot paths when numba is importable;
# flipping this to False (tests do) exercises the pure-numpy forms instead.
_USE_KERNELS = _K.HAVE

__all__ = [
    "conv2d_standard", "conv2d_standard_backward",
    "conv2d_depthwise", "conv2d_depthwise_backward",
    "conv2d_pointwise", "conv2d_pointwise_backward",
    "avgpool1d", "avgpool1d_backward",
    "avgpool2d", "avgpool2d_backward",
    "batchnorm_forward", "batchnorm_backward", "batchnorm_eval",
    "leaky_relu", "leaky_relu_backward",
    "dense", "dense_backward",
    "gradient_reversal", "gradient_reversal_backward",
]


def _as_float(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.float32 and x.dtype != np.float64:
        x = x.astype(np.float64)
    return x


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote (H, W, C) to (1, H, W, C); report whether promotion happened."""
    x = _as_float(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected a 3-D or 4-D array, got shape {x.shape}")
    return x, False


def _match(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Parameter array in the activation dtype (no copy when they agree)."""
    return np.asarray(w).astype(x.dtype, copy=False)


def _colsum(a: np.ndarray) -> np.ndarray:
    """Column sums of a (n, c) array via BLAS; far faster than add.reduce
    along the long axis for the tall-skinny shapes batch norm sees."""
    return np.ones(a.shape[0], a.dtype) @ a


def _fast(*arrays: np.ndarray) -> bool:
    """True when the compiled kernels apply: available and contiguous inputs."""
    return _USE_KERNELS and all(a.flags.c_contiguous for a in arrays)


def _contig(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def _check_kernel(kh: int, kw: int, padding: str) -> None:
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
        raise ValueError("same padding requires odd kernel extents")


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    b, h, w, c = x.shape
    # zeros + interior assignment; np.pad's edge bookkeeping costs real time
    # at the call rate the conv layers produce
    out = np.zeros((b, h + 2 * ph, w + 2 * pw, c), x.dtype)
    out[:, ph:ph + h, pw:pw + w, :] = x
    return out


def _patches(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Sliding (kh, kw) windows of a padded (B, Hp, Wp, C) map.

    Returns a zero-copy strided view of shape (B, Ho, Wo, C, kh, kw).
    """
    return sliding_window_view(xp, (kh, kw), axis=(1, 2))


def _shift_taps(xp: np.ndarray, kernel: np.ndarray, ho: int, wo: int) -> np.ndarray:
    """Sum of shifted views times per-channel taps: the depthwise kernel.

    kernel is (kh, kw, C); one multiply pass per tap accumulated into a
    single output buffer, which is the fastest pure-numpy form at these
    map sizes.
    """
    kh, kw = kernel.shape[0], kernel.shape[1]
    y = np.multiply(xp[:, 0:ho, 0:wo, :], kernel[0, 0])
    tmp = np.empty_like(y)
    for i in range(kh):
        for j in range(kw):
            if i == 0 and j == 0:
                continue
            np.multiply(xp[:, i:i + ho, j:j + wo, :], kernel[i, j], out=tmp)
            y += tmp
    return y


# ---------------------------------------------------------------------------
# standard convolution


def conv2d_standard(x: np.ndarray, kernel: np.ndarray, padding: str = "same") -> np.ndarray:
    """Cross-correlate (B, H, W, Ci) with a (kh, kw, Ci, Co) kernel, no bias."""
    x, single = _as_batch(x)
    kh, kw, ci, co = kernel.shape
    _check_kernel(kh, kw, padding)
    if x.shape[3] != ci:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {ci}")
    if padding == "valid" and (x.shape[1] < kh or x.shape[2] < kw):
        raise ValueError("input smaller than kernel under valid padding")
    ph, pw = (kh // 2, kw // 2) if padding == "same" else (0, 0)
    pats = _patches(_pad_hw(x, ph, pw), kh, kw)  # (B, Ho, Wo, Ci, kh, kw)
    # contract (Ci, kh, kw) against kernel axes (2, 0, 1); BLAS does the work
    y = np.tensordot(pats, _match(kernel, x), axes=([3, 4, 5], [2, 0, 1]))
    return y[0] if single else y


def conv2d_standard_backward(
    x: np.ndarray, kernel: np.ndarray, gy: np.ndarray, padding: str = "same"
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d_standard w.r.t. input and kernel."""
    x, single = _as_batch(x)
    gy, _ = _as_batch(gy)
    kh, kw, ci, co = kernel.shape
    ph, pw = (kh // 2, kw // 2) if padding == "same" else (0, 0)
    kern = _match(kernel, x)

    pats = _patches(_pad_hw(x, ph, pw), kh, kw)  # (B, Ho, Wo, Ci, kh, kw)
    gk = np.tensordot(pats, gy, axes=([0, 1, 2], [0, 1, 2]))  # (Ci, kh, kw, Co)
    gk = gk.transpose(1, 2, 0, 3)

    # input gradient as a gather: correlate the padded upstream gradient
    # with the spatially rotated, channel-transposed kernel
    gyp = _pad_hw(gy, kh - 1 - ph, kw - 1 - pw)
    gpats = _patches(gyp, kh, kw)  # (B, H, W, Co, kh, kw)
    kt = kern[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh, kw, Co, Ci)
    gx = np.tensordot(gpats, kt, axes=([3, 4, 5], [2, 0, 1]))
    return (gx[0], gk) if single else (gx, gk)


# ---------------------------------------------------------------------------
# depthwise convolution (one (kh, kw) filter per channel)


def conv2d_depthwise(x: np.ndarray, kernel: np.ndarray, padding: str = "same") -> np.ndarray:
    """Per-channel cross-correlation with a (kh, kw, C) kernel, no bias."""
    x, single = _as_batch(x)
    kh, kw, c = kernel.shape
    _check_kernel(kh, kw, padding)
    if x.shape[3] != c:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {c}")
    if padding == "valid" and (x.shape[1] < kh or x.shape[2] < kw):
        raise ValueError("input smaller than kernel under valid padding")
    ph, pw = (kh // 2, kw // 2) if padding == "same" else (0, 0)
    ho = x.shape[1] - kh + 1 + 2 * ph
    wo = x.shape[2] - kw + 1 + 2 * pw
    xp = _pad_hw(x, ph, pw)
    kern = _match(kernel, x)
    if _fast(xp):
        y = np.empty((x.shape[0], ho, wo, c), x.dtype)
        kc = _contig(kern)
        if (kh, kw) != (3, 3):
            _K.conv_dw(xp, kc, y)
        elif c == 1:
            _K.conv_dw3_c1(xp, kc, y)
        else:
            _K.conv_dw3(xp, kc, y)
    else:
        y = _shift_taps(xp, kern, ho, wo)
    return y[0] if single else y


def conv2d_depthwise_backward(
    x: np.ndarray, kernel: np.ndarray, gy: np.ndarray, padding: str = "same"
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d_depthwise w.r.t. input and kernel."""
    x, single = _as_batch(x)
    gy, _ = _as_batch(gy)
    kh, kw, c = kernel.shape
    ph, pw = (kh // 2, kw // 2) if padding == "same" else (0, 0)
    kern = _match(kernel, x)
    xp = _pad_hw(x, ph, pw)
    gyp = _pad_hw(gy, kh - 1 - ph, kw - 1 - pw)

    if _fast(xp, gyp, gy):
        three = (kh, kw) == (3, 3)
        # filter gradient accumulated in float64, cast back to the graph dtype
        acc = np.zeros((kh, kw, c), np.float64)
        if not three:
            _K.conv_dw_gk(xp, gy, acc)
        elif c == 1:
            _K.conv_dw3_gk_c1(xp, gy, acc)
        else:
            _K.conv_dw3_gk(xp, gy, acc)
        gk = acc.astype(x.dtype, copy=False)
        # input gradient as a gather: correlate the padded upstream gradient
        # with the spatially rotated taps (no scatter, no trailing crop)
        gx = np.empty_like(x)
        rot = _contig(kern[::-1, ::-1])
        if not three:
            _K.conv_dw(gyp, rot, gx)
        elif c == 1:
            _K.conv_dw3_c1(gyp, rot, gx)
        else:
            _K.conv_dw3(gyp, rot, gx)
    else:
        pats = _patches(xp, kh, kw)  # (B, Ho, Wo, C, kh, kw)
        gk = np.einsum("bhwcij,bhwc->ijc", pats, gy)
        gx = _shift_taps(gyp, kern[::-1, ::-1], x.shape[1], x.shape[2])
    return (gx[0], gk) if single else (gx, gk)


# ---------------------------------------------------------------------------
# pointwise (1x1) convolution: a per-pixel linear map, i.e. one matmul


def conv2d_pointwise(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """1x1 convolution with a (Ci, Co) weight, no bias."""
    x, single = _as_batch(x)
    ci, co = weight.shape
    if x.shape[3] != ci:
        raise ValueError(f"input has {x.shape[3]} channels, weight expects {ci}")
    w = _match(weight, x)
    if ci == 1 and _fast(x):
        y = np.empty(x.shape[:3] + (co,), x.dtype)
        _K.pw_expand(x.reshape(-1), _contig(w[0]), y.reshape(-1, co))
    else:
        y = (x.reshape(-1, ci) @ w).reshape(x.shape[:3] + (co,))
    return y[0] if single else y


def conv2d_pointwise_backward(
    x: np.ndarray, weight: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d_pointwise w.r.t. input and weight."""
    x, single = _as_batch(x)
    gy, _ = _as_batch(gy)
    ci, co = weight.shape
    g2 = gy.reshape(-1, co)
    x2 = x.reshape(-1, ci)
    gw = x2.T @ g2
    gx = (g2 @ _match(weight, x).T).reshape(x.shape)
    return (gx[0], gw) if single else (gx, gw)


# ---------------------------------------------------------------------------
# average pooling, kernel 2 stride 2, ceil mode (last window may be a single
# element and is averaged over its actual extent)


def _axis_slice(ndim: int, axis: int, sl: slice) -> tuple:
    ix = [slice(None)] * ndim
    ix[axis] = sl
    return tuple(ix)


def _pool_axis(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    if n == 0:
        raise ValueError("cannot pool an axis of extent 0")
    half, odd = divmod(n, 2)
    shape = list(x.shape)
    shape[axis] = half + odd
    y = np.empty(shape, x.dtype)
    head = y[_axis_slice(x.ndim, axis, slice(0, half))]
    np.add(x[_axis_slice(x.ndim, axis, slice(0, 2 * half, 2))],
           x[_axis_slice(x.ndim, axis, slice(1, 2 * half, 2))], out=head)
    head *= 0.5
    if odd:
        y[_axis_slice(x.ndim, axis, slice(half, half + 1))] = \
            x[_axis_slice(x.ndim, axis, slice(n - 1, n))]
    return y


def _pool_axis_backward(gy: np.ndarray, n: int, axis: int) -> np.ndarray:
    half, odd = divmod(n, 2)
    shape = list(gy.shape)
    shape[axis] = n
    gx = np.empty(shape, gy.dtype)
    t = gy[_axis_slice(gy.ndim, axis, slice(0, half))] * 0.5
    gx[_axis_slice(gy.ndim, axis, slice(0, 2 * half, 2))] = t
    gx[_axis_slice(gy.ndim, axis, slice(1, 2 * half, 2))] = t
    if odd:
        # the ragged single-element window has weight 1, not 1/2
        gx[_axis_slice(gy.ndim, axis, slice(n - 1, n))] = \
            gy[_axis_slice(gy.ndim, axis, slice(half, half + 1))]
    return gx


def avgpool1d(x: np.ndarray) -> np.ndarray:
    """Average-pool the last axis with kernel 2, stride 2, ceil mode."""
    x = _as_float(x)
    return _pool_axis(x, x.ndim - 1)


def avgpool1d_backward(gy: np.ndarray, n_in: int) -> np.ndarray:
    """Gradient of avgpool1d given the pooled-axis input extent."""
    gy = _as_float(gy)
    return _pool_axis_backward(gy, n_in, gy.ndim - 1)


def _hw_axes(ndim: int) -> tuple[int, int]:
    if ndim == 2:
        return 0, 1
    if ndim == 3:
        return 0, 1  # (H, W, C)
    if ndim == 4:
        return 1, 2  # (B, H, W, C)
    raise ValueError(f"expected a 2-D, 3-D or 4-D array, got {ndim} dims")


def avgpool2d(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 ceil-mode average pooling over the spatial axes.

    Pooling height then width is exactly the 2x2 window mean, including the
    ragged edge windows, because each window average is an average of
    row-pair averages over the window's true extent.
    """
    x = _as_float(x)
    if x.ndim in (3, 4) and _fast(x):
        xb = x[None] if x.ndim == 3 else x
        y = np.empty(
            (xb.shape[0], -(-xb.shape[1] // 2), -(-xb.shape[2] // 2), xb.shape[3]),
            x.dtype,
        )
        _K.pool2_fwd(xb, y)
        return y[0] if x.ndim == 3 else y
    ah, aw = _hw_axes(x.ndim)
    return _pool_axis(_pool_axis(x, ah), aw)


def avgpool2d_backward(gy: np.ndarray, h_in: int, w_in: int) -> np.ndarray:
    """Gradient of avgpool2d given the input spatial extents."""
    gy = _as_float(gy)
    if gy.ndim in (3, 4) and _fast(gy):
        gb = gy[None] if gy.ndim == 3 else gy
        gx = np.empty((gb.shape[0], h_in, w_in, gb.shape[3]), gy.dtype)
        _K.pool2_bwd(gb, gx)
        return gx[0] if gy.ndim == 3 else gx
    ah, aw = _hw_axes(gy.ndim)
    return _pool_axis_backward(_pool_axis_backward(gy, w_in, aw), h_in, ah)


# ---------------------------------------------------------------------------
# batch normalization over all axes but the channel (last) axis


def batchnorm_forward(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> tuple[np.ndarray, tuple]:
    """Train-mode batch normalization; returns (y, cache) with batch stats.

    Statistics are per channel over every other axis, with the biased
    (population) variance. Needs at least 2 elements per statistic. The
    normalization is applied as one affine pass y = a*x + b, so the cache
    holds (x, mean, ivar, var, n) rather than a materialized xhat.
    """
    x = _as_float(x)
    c = x.shape[-1]
    xr = x.reshape(-1, c)
    n = xr.shape[0]
    if n < 2:
        raise ValueError("batch normalization needs >= 2 elements per channel statistic")
    gamma = _match(gamma, x)
    beta = _match(beta, x)
    fast = _fast(x)  # x contiguous means xr and the output reshape are views
    if fast:
        sums = np.zeros((2, c), np.float64)
        _K.bn_sums(xr, sums)
        mean = (sums[0] / n).astype(x.dtype)
        sq = (sums[1] / n).astype(x.dtype)
    else:
        mean = _colsum(xr)
        mean /= n
        sq = np.einsum("nc,nc->c", xr, xr) / n
    # single-pass moments; the clamp guards against tiny negative rounding
    var = np.maximum(sq - mean * mean, 0.0)
    ivar = 1.0 / np.sqrt(var + eps)
    a = gamma * ivar
    shift = beta - mean * a
    if fast:
        y = np.empty_like(x)
        _K.scale_shift(xr, a, shift, y.reshape(-1, c))
    else:
        y = np.multiply(x, a)
        y += shift
    return y, (x, mean, ivar, var, n)


def batchnorm_backward(
    gy: np.ndarray, cache: tuple, gamma: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of train-mode batchnorm w.r.t. input, gamma, beta."""
    x, mean, ivar, _, n = cache
    c = gy.shape[-1]
    g2 = gy.reshape(-1, c)
    x2 = x.reshape(-1, c)
    gamma = _match(gamma, x)
    fast = _fast(x, gy)  # contiguous originals keep the 2-D reshapes as views
    if fast:
        sums = np.zeros((2, c), np.float64)
        _K.bn_bwd_sums(x2, g2, sums)
        dbeta = sums[0].astype(x.dtype)
        sgx = sums[1].astype(x.dtype)
    else:
        dbeta = _colsum(g2)
        sgx = np.einsum("nc,nc->c", g2, x2)
    # sum(gy * xhat) = ivar * (sum(gy * x) - mean * sum(gy))
    dgamma = ivar * (sgx - mean * dbeta)
    # classic reduced form (gamma*ivar/n)(n gy - dbeta - xhat dgamma),
    # expanded into one affine combination of gy and x so xhat never exists
    a = gamma * ivar
    b = -(a * ivar) * dgamma / n
    const = -(a * dbeta) / n - b * mean
    if fast:
        dx = np.empty_like(x)
        _K.bn_dx(x2, g2, a, b, const, dx.reshape(-1, c))
    else:
        dx = np.multiply(x, b)
        dx += const
        dx += np.multiply(gy, a)
    return dx, dgamma, dbeta


def batchnorm_eval(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Eval-mode batch normalization using stored running statistics."""
    x = _as_float(x)
    scale = _match(gamma, x) / np.sqrt(_match(running_var, x) + eps)
    shift = _match(beta, x) - scale * _match(running_mean, x)
    if _fast(x):
        c = x.shape[-1]
        y = np.empty_like(x)
        _K.scale_shift(x.reshape(-1, c), scale, shift, y.reshape(-1, c))
        return y
    y = np.multiply(x, scale)
    y += shift
    return y


# ---------------------------------------------------------------------------
# activations and linear layers


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """max(x, slope*x); identical to the usual piecewise form for 0 < slope < 1."""
    x = _as_float(x)
    if _fast(x):
        y = np.empty_like(x)
        _K.leaky_fwd(x.reshape(-1), x.dtype.type(slope), y.reshape(-1))
        return y
    y = np.multiply(x, slope)
    np.maximum(y, x, out=y)
    return y


def leaky_relu_backward(y: np.ndarray, gy: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """Gradient from the output alone; valid because the map preserves sign."""
    gy = _as_float(gy)
    if _fast(y, gy) and y.dtype == gy.dtype:
        dx = np.empty_like(gy)
        _K.leaky_bwd(y.reshape(-1), gy.reshape(-1), gy.dtype.type(slope), dx.reshape(-1))
        return dx
    # piecewise factor slope + (1-slope)*[y > 0], built arithmetically
    # because boolean selection ufuncs are several times slower
    f = (y > 0).astype(gy.dtype)
    f *= 1.0 - slope
    f += slope
    f *= gy
    return f


def dense(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map: (B, n) @ (n, m) + (m,). Accepts a single (n,) row too."""
    x = _as_float(x)
    return x @ _match(weight, x) + _match(bias, x)


def dense_backward(
    x: np.ndarray, weight: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of dense w.r.t. input, weight, bias."""
    x = _as_float(x)
    gy = _as_float(gy)
    if x.ndim == 1:
        return gy @ _match(weight, x).T, np.outer(x, gy), gy.copy()
    return gy @ _match(weight, x).T, x.T @ gy, gy.sum(axis=0)


# ---------------------------------------------------------------------------
# gradient reversal


def gradient_reversal(x: np.ndarray) -> np.ndarray:
    """Identity in the forward direction (bit-identical, no copy)."""
    return x


def gradient_reversal_backward(gy: np.ndarray, lam: float) -> np.ndarray:
    """Multiply the upstream gradient by -lambda, exactly."""
    if lam < 0:
        raise ValueError("gradient reversal strength must be >= 0")
    return (-lam) * _as_float(gy)
