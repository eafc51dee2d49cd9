"""Compiled inner loops for the hot tensor ops.

Every kernel is a plain nested-loop statement of the same arithmetic the
vectorized numpy forms in ops.py perform; numba only compiles the loops so
each array is read once instead of once per tap or per elementwise pass.
When numba is unavailable the public ops fall back to the numpy forms and
nothing here is called, so the package still runs on a bare numpy install.

Conventions: arrays are C-contiguous, channels-last; outputs are written into
caller-allocated buffers; channel-statistic accumulators are float64
regardless of the activation dtype. Kernels are compiled single-threaded
(no ``parallel=``) so results are reproducible run to run.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE = True
except Exception:  # pragma: no cover - exercised only without numba
    HAVE = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True)
def conv_dw3(xp, kern, out):
    """Depthwise cross-correlation of a padded map with (3, 3, C) taps.

    xp is (B, Ho + 2, Wo + 2, C), out is (B, Ho, Wo, C). The tap extents are
    compile-time literals so the loop nest unrolls and vectorizes; the
    accumulation runs in the same i-major tap order as the shifted-view
    numpy form.
    """
    bs, ho, wo, ch = out.shape
    for b in range(bs):
        for h in range(ho):
            for w in range(wo):
                for c in range(ch):
                    acc = 0.0
                    for i in range(3):
                        for j in range(3):
                            acc += xp[b, h + i, w + j, c] * kern[i, j, c]
                    out[b, h, w, c] = acc


@njit(cache=True)
def conv_dw3_c1(xp, kern, out):
    """conv_dw3 for a single channel, with the taps held in scalars.

    The channel loop of conv_dw3 has trip count 1 here and defeats
    vectorization; lifting the nine taps into scalars lets the w loop
    vectorize instead (about 20x faster on the first block's map).
    """
    bs, ho, wo, _ = out.shape
    k00 = kern[0, 0, 0]; k01 = kern[0, 1, 0]; k02 = kern[0, 2, 0]
    k10 = kern[1, 0, 0]; k11 = kern[1, 1, 0]; k12 = kern[1, 2, 0]
    k20 = kern[2, 0, 0]; k21 = kern[2, 1, 0]; k22 = kern[2, 2, 0]
    for b in range(bs):
        for h in range(ho):
            for w in range(wo):
                out[b, h, w, 0] = (
                    xp[b, h, w, 0] * k00
                    + xp[b, h, w + 1, 0] * k01
                    + xp[b, h, w + 2, 0] * k02
                    + xp[b, h + 1, w, 0] * k10
                    + xp[b, h + 1, w + 1, 0] * k11
                    + xp[b, h + 1, w + 2, 0] * k12
                    + xp[b, h + 2, w, 0] * k20
                    + xp[b, h + 2, w + 1, 0] * k21
                    + xp[b, h + 2, w + 2, 0] * k22)


@njit(cache=True)
def conv_dw(xp, kern, out):
    """conv_dw3 for arbitrary (kh, kw, C) taps; slower, used off the 3x3 path."""
    bs, ho, wo, ch = out.shape
    kh, kw = kern.shape[0], kern.shape[1]
    for b in range(bs):
        for h in range(ho):
            for w in range(wo):
                for c in range(ch):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[b, h + i, w + j, c] * kern[i, j, c]
                    out[b, h, w, c] = acc


@njit(cache=True)
def conv_dw3_gk(xp, gy, gk):
    """Depthwise 3x3 filter gradient: gk[i, j, c] += sum_bhw xp * gy.

    gk is a (3, 3, C) float64 accumulator supplied zeroed by the caller.
    The running sums live in a kernel-local buffer: the compiler can prove
    it aliases nothing, so the channel-innermost accumulation vectorizes
    (about 3x faster than accumulating through the output argument).
    """
    bs, ho, wo, ch = gy.shape
    acc = np.zeros((3, 3, ch), np.float64)
    for b in range(bs):
        for h in range(ho):
            for w in range(wo):
                for i in range(3):
                    for j in range(3):
                        for c in range(ch):
                            acc[i, j, c] += xp[b, h + i, w + j, c] * gy[b, h, w, c]
    for i in range(3):
        for j in range(3):
            for c in range(ch):
                gk[i, j, c] += acc[i, j, c]


@njit(cache=True)
def conv_dw3_gk_c1(xp, gy, gk):
    """conv_dw3_gk for a single channel: nine float64 register accumulators.

    np.float64() pins the accumulator type; a bare 0.0 literal would unify
    with the float32 products and lose the wide accumulation.
    """
    bs, ho, wo, _ = gy.shape
    a00 = np.float64(0.0); a01 = np.float64(0.0); a02 = np.float64(0.0)
    a10 = np.float64(0.0); a11 = np.float64(0.0); a12 = np.float64(0.0)
    a20 = np.float64(0.0); a21 = np.float64(0.0); a22 = np.float64(0.0)
    for b in range(bs):
        for h in range(ho):
            for w in range(wo):
                g = gy[b, h, w, 0]
                a00 += xp[b, h, w, 0] * g
                a01 += xp[b, h, w + 1, 0] * g
                a02 += xp[b, h, w + 2, 0] * g
                a10 += xp[b, h + 1, w, 0] * g
                a11 += xp[b, h + 1, w + 1, 0] * g
                a12 += xp[b, h + 1, w + 2, 0] * g
                a20 += xp[b, h + 2, w, 0] * g
                a21 += xp[b, h + 2, w + 1, 0] * g
                a22 += xp[b, h + 2, w + 2, 0] * g
    gk[0, 0, 0] += a00; gk[0, 1, 0] += a01; gk[0, 2, 0] += a02
    gk[1, 0, 0] += a10; gk[1, 1, 0] += a11; gk[1, 2, 0] += a12
    gk[2, 0, 0] += a20; gk[2, 1, 0] += a21; gk[2, 2, 0] += a22


@njit(cache=True)
def conv_dw_gk(xp, gy, gk):
    """conv_dw3_gk for arbitrary tap extents taken from gk's shape."""
    bs, ho, wo, ch = gy.shape
    kh, kw = gk.shape[0], gk.shape[1]
    for b in range(bs):
        for h in range(ho):
            for w in range(wo):
                for c in range(ch):
                    g = gy[b, h, w, c]
                    for i in range(kh):
                        for j in range(kw):
                            gk[i, j, c] += xp[b, h + i, w + j, c] * g


@njit(cache=True)
def bn_sums(x2, out):
    """Per-channel sum and sum of squares of an (N, C) map into float64 out (2, C).

    Sums run in a kernel-local buffer (alias-free, so the channel loop
    vectorizes) and land in the output at the end.
    """
    n, ch = x2.shape
    acc = np.zeros((2, ch), np.float64)
    for i in range(n):
        for c in range(ch):
            v = x2[i, c]
            acc[0, c] += v
            acc[1, c] += v * v
    for c in range(ch):
        out[0, c] += acc[0, c]
        out[1, c] += acc[1, c]


@njit(cache=True)
def bn_bwd_sums(x2, g2, out):
    """Per-channel sum(g) and sum(g*x) of (N, C) maps into float64 out (2, C)."""
    n, ch = x2.shape
    acc = np.zeros((2, ch), np.float64)
    for i in range(n):
        for c in range(ch):
            g = g2[i, c]
            acc[0, c] += g
            acc[1, c] += g * x2[i, c]
    for c in range(ch):
        out[0, c] += acc[0, c]
        out[1, c] += acc[1, c]


@njit(cache=True)
def scale_shift(x2, a, b, out2):
    """Per-channel affine map out = x * a[c] + b[c] on (N, C) views."""
    n, ch = x2.shape
    for i in range(n):
        for c in range(ch):
            out2[i, c] = x2[i, c] * a[c] + b[c]


@njit(cache=True)
def bn_dx(x2, g2, a, b, const, out2):
    """Input gradient of batchnorm: out = gy * a[c] + x * b[c] + const[c]."""
    n, ch = x2.shape
    for i in range(n):
        for c in range(ch):
            out2[i, c] = g2[i, c] * a[c] + x2[i, c] * b[c] + const[c]


@njit(cache=True)
def leaky_fwd(x1, slope, out1):
    """Leaky ReLU on flat views; slope is passed in the activation dtype."""
    for i in range(x1.shape[0]):
        v = x1[i]
        if v > 0:
            out1[i] = v
        else:
            out1[i] = v * slope


@njit(cache=True)
def leaky_bwd(y1, g1, slope, out1):
    """Leaky ReLU gradient from the output's sign, on flat views."""
    for i in range(y1.shape[0]):
        g = g1[i]
        if y1[i] > 0:
            out1[i] = g
        else:
            out1[i] = g * slope


@njit(cache=True)
def pool2_fwd(x, out):
    """2x2 stride-2 ceil-mode average pooling of (B, H, W, C).

    Full windows are summed with unrolled literal offsets so the channel
    loop vectorizes; a ragged last row/column (odd extent) is averaged over
    its true extent afterwards.
    """
    bs, hi, wi, ch = x.shape
    hf, wf = hi // 2, wi // 2
    for b in range(bs):
        for oh in range(hf):
            h0 = 2 * oh
            for ow in range(wf):
                w0 = 2 * ow
                for c in range(ch):
                    out[b, oh, ow, c] = (
                        x[b, h0, w0, c] + x[b, h0, w0 + 1, c]
                        + x[b, h0 + 1, w0, c] + x[b, h0 + 1, w0 + 1, c]
                    ) * 0.25
            if wi > 2 * wf:
                for c in range(ch):
                    out[b, oh, wf, c] = (x[b, h0, wi - 1, c] + x[b, h0 + 1, wi - 1, c]) * 0.5
        if hi > 2 * hf:
            for ow in range(wf):
                w0 = 2 * ow
                for c in range(ch):
                    out[b, hf, ow, c] = (x[b, hi - 1, w0, c] + x[b, hi - 1, w0 + 1, c]) * 0.5
            if wi > 2 * wf:
                for c in range(ch):
                    out[b, hf, wf, c] = x[b, hi - 1, wi - 1, c]


@njit(cache=True)
def pool2_sums(x, out, sums):
    """pool2_fwd fused with per-channel float64 sum / sum-of-squares of x.

    One read of the unpooled map produces both the pooled map and the batch
    statistics a following batch normalization needs; every element enters
    the sums exactly once because the windows partition the map.
    """
    bs, hi, wi, ch = x.shape
    hf, wf = hi // 2, wi // 2
    acc = np.zeros((2, ch), np.float64)
    for b in range(bs):
        for oh in range(hf):
            h0 = 2 * oh
            for ow in range(wf):
                w0 = 2 * ow
                for c in range(ch):
                    v00 = x[b, h0, w0, c]
                    v01 = x[b, h0, w0 + 1, c]
                    v10 = x[b, h0 + 1, w0, c]
                    v11 = x[b, h0 + 1, w0 + 1, c]
                    acc[0, c] += v00 + v01 + v10 + v11
                    acc[1, c] += v00 * v00 + v01 * v01 + v10 * v10 + v11 * v11
                    out[b, oh, ow, c] = (v00 + v01 + v10 + v11) * 0.25
            if wi > 2 * wf:
                for c in range(ch):
                    v0 = x[b, h0, wi - 1, c]
                    v1 = x[b, h0 + 1, wi - 1, c]
                    acc[0, c] += v0 + v1
                    acc[1, c] += v0 * v0 + v1 * v1
                    out[b, oh, wf, c] = (v0 + v1) * 0.5
        if hi > 2 * hf:
            for ow in range(wf):
                w0 = 2 * ow
                for c in range(ch):
                    v0 = x[b, hi - 1, w0, c]
                    v1 = x[b, hi - 1, w0 + 1, c]
                    acc[0, c] += v0 + v1
                    acc[1, c] += v0 * v0 + v1 * v1
                    out[b, hf, ow, c] = (v0 + v1) * 0.5
            if wi > 2 * wf:
                for c in range(ch):
                    v = x[b, hi - 1, wi - 1, c]
                    acc[0, c] += v
                    acc[1, c] += v * v
                    out[b, hf, wf, c] = v
    for c in range(ch):
        sums[0, c] += acc[0, c]
        sums[1, c] += acc[1, c]


@njit(cache=True)
def pool2_bwd(gy, out):
    """Gradient of pool2_fwd: out[b, h, w, c] = gy[window] / window extent."""
    bs, hi, wi, ch = out.shape
    for b in range(bs):
        for h in range(hi):
            oh = h // 2
            he = min(2 * oh + 2, hi)
            nh = he - 2 * oh
            for w in range(wi):
                ow = w // 2
                we = min(2 * ow + 2, wi)
                inv = 1.0 / (nh * (we - 2 * ow))
                for c in range(ch):
                    out[b, h, w, c] = gy[b, oh, ow, c] * inv


@njit(cache=True)
def pw_expand(x1, wrow, out):
    """Single-input-channel pointwise conv: out[n, o] = x1[n] * wrow[o].

    BLAS treats this as a rank-1 matmul and runs several times slower than
    the plain outer-product loop at these sizes.
    """
    n = x1.shape[0]
    co = wrow.shape[0]
    for i in range(n):
        v = x1[i]
        for o in range(co):
            out[i, o] = v * wrow[o]


@njit(cache=True)
def poolbwd_affine(gyp, x, a, b, const, out):
    """Input gradient of batchnorm composed with 2x2 average pooling.

    Expands the pooled upstream gradient gyp in place of gy in the batchnorm
    input-gradient affine form: out = gtilde * a[c] + x * b[c] + const[c]
    where gtilde[b, h, w, c] = gyp[window] / window extent. One pass over the
    unpooled map instead of materializing gtilde.
    """
    bs, hi, wi, ch = x.shape
    for bb in range(bs):
        for h in range(hi):
            oh = h // 2
            he = min(2 * oh + 2, hi)
            nh = he - 2 * oh
            for w in range(wi):
                ow = w // 2
                we = min(2 * ow + 2, wi)
                inv = 1.0 / (nh * (we - 2 * ow))
                for c in range(ch):
                    g = gyp[bb, oh, ow, c] * inv
                    out[bb, h, w, c] = g * a[c] + x[bb, h, w, c] * b[c] + const[c]
