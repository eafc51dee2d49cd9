"""Stateful layers wrapping the kernels in ops.py.

A layer owns its parameters and their gradient accumulators, caches what its
backward pass needs during forward, and counts forward invocations (the
inference path is contractually forbidden from touching the domain head, and
the counter makes that testable). Gradients accumulate across backward calls
until zero_grad(), which is what lets one optimizer step combine the source
and target passes of an adaptation step.
"""

from __future__ import annotations

import numpy as np

from . import ops

__all__ = [
    "Layer", "glorot_uniform",
    "FreqAvgPool", "StandardConv2d", "DepthwiseConv2d", "PointwiseConv2d",
    "BatchNorm", "BatchNormPool", "LeakyReLU", "AvgPool2d", "Flatten", "Dense",
    "GradientReversal", "NotReadyError",
]


class NotReadyError(RuntimeError):
    """Raised when eval mode is requested before any statistics exist."""


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int,
                   dtype: np.dtype = np.float64) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)).

    Draws are always taken in float64 and then cast, so a given seed yields
    the same parameter sequence regardless of the compute dtype.
    """
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype, copy=False)


class Layer:
    """Base layer: named, counted, with (possibly empty) parameter dicts."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.forward_calls = 0

    def __call__(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self.forward_calls += 1
        return self.forward(x, train)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grad(self) -> None:
        for g in self.grads().values():
            g[...] = 0.0


class FreqAvgPool(Layer):
    """Kernel-2 stride-2 ceil-mode average pool over the last axis."""

    def forward(self, x, train):
        self._n = x.shape[-1]
        return ops.avgpool1d(x)

    def backward(self, gy):
        return ops.avgpool1d_backward(gy, self._n)


class StandardConv2d(Layer):
    def __init__(self, name: str, cin: int, cout: int, kh: int = 3, kw: int = 3,
                 rng: np.random.Generator | None = None,
                 dtype: np.dtype = np.float64) -> None:
        super().__init__(name)
        fan = kh * kw
        if rng is None:
            self.kernel = np.zeros((kh, kw, cin, cout), dtype)
        else:
            self.kernel = glorot_uniform(rng, (kh, kw, cin, cout), fan * cin, fan * cout, dtype)
        self.gkernel = np.zeros_like(self.kernel)

    def forward(self, x, train):
        self._x = x
        return ops.conv2d_standard(x, self.kernel)

    def backward(self, gy):
        gx, gk = ops.conv2d_standard_backward(self._x, self.kernel, gy)
        self.gkernel += gk
        return gx

    def params(self):
        return {"kernel": self.kernel}

    def grads(self):
        return {"kernel": self.gkernel}


class DepthwiseConv2d(Layer):
    def __init__(self, name: str, channels: int, kh: int = 3, kw: int = 3,
                 rng: np.random.Generator | None = None,
                 dtype: np.dtype = np.float64) -> None:
        super().__init__(name)
        fan = kh * kw
        if rng is None:
            self.kernel = np.zeros((kh, kw, channels), dtype)
        else:
            self.kernel = glorot_uniform(rng, (kh, kw, channels), fan, fan, dtype)
        self.gkernel = np.zeros_like(self.kernel)

    def forward(self, x, train):
        self._x = x
        return ops.conv2d_depthwise(x, self.kernel)

    def backward(self, gy):
        gx, gk = ops.conv2d_depthwise_backward(self._x, self.kernel, gy)
        self.gkernel += gk
        return gx

    def params(self):
        return {"kernel": self.kernel}

    def grads(self):
        return {"kernel": self.gkernel}


class PointwiseConv2d(Layer):
    def __init__(self, name: str, cin: int, cout: int,
                 rng: np.random.Generator | None = None,
                 dtype: np.dtype = np.float64) -> None:
        super().__init__(name)
        if rng is None:
            self.weight = np.zeros((cin, cout), dtype)
        else:
            self.weight = glorot_uniform(rng, (cin, cout), cin, cout, dtype)
        self.gweight = np.zeros_like(self.weight)

    def forward(self, x, train):
        self._x = x
        return ops.conv2d_pointwise(x, self.weight)

    def backward(self, gy):
        gx, gw = ops.conv2d_pointwise_backward(self._x, self.weight, gy)
        self.gweight += gw
        return gx

    def params(self):
        return {"weight": self.weight}

    def grads(self):
        return {"weight": self.gweight}


class BatchNorm(Layer):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes with the batch statistics and folds them into the
    running estimates as running = momentum*running + (1-momentum)*batch.
    Eval mode requires at least one prior train-mode forward. update_stats
    can be cleared to run a train-mode forward without touching the running
    estimates (used for the duplicated forward of the MMD variant).
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.9,
                 eps: float = 1e-5, dtype: np.dtype = np.float64) -> None:
        super().__init__(name)
        self.gamma = np.ones(channels, dtype)
        self.beta = np.zeros(channels, dtype)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.batches_seen = 0
        self.update_stats = True

    def forward(self, x, train):
        if train:
            y, cache = ops.batchnorm_forward(x, self.gamma, self.beta, self.eps)
            self._cache = cache
            if self.update_stats:
                _, mean, _, var, _ = cache
                self.running_mean *= self.momentum
                self.running_mean += (1.0 - self.momentum) * mean
                self.running_var *= self.momentum
                self.running_var += (1.0 - self.momentum) * var
                self.batches_seen += 1
            return y
        if self.batches_seen == 0:
            raise NotReadyError(
                f"batchnorm {self.name!r}: eval mode before any running statistics exist")
        return ops.batchnorm_eval(x, self.gamma, self.beta,
                                  self.running_mean, self.running_var, self.eps)

    def backward(self, gy):
        gx, dgamma, dbeta = ops.batchnorm_backward(gy, self._cache, self.gamma)
        self.ggamma += dgamma
        self.gbeta += dbeta
        return gx

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.ggamma, "beta": self.gbeta}


class BatchNormPool(BatchNorm):
    """Batch normalization immediately followed by 2x2 average pooling, fused.

    A per-channel affine map commutes with average pooling, so the layer
    computes batch statistics on the unpooled map, pools first, and applies
    the normalization affine to the quarter-size result. The parameter
    gradients come out of the pooled map too, via the pooling adjoint
    (sum of pool_bwd(g) * x over the unpooled map equals sum of g * pool(x)
    over the pooled one). Outputs, gradients, and running statistics match
    the BatchNorm -> AvgPool2d composition up to floating-point rounding;
    the fusion exists because it reads the large map twice per step instead
    of six times.
    """

    def forward(self, x, train):
        if x.ndim != 4:
            raise ValueError(f"batchnorm+pool expects a (B, H, W, C) map, got {x.shape}")
        c = x.shape[-1]
        self._hw = (x.shape[1], x.shape[2])
        if not train:
            if self.batches_seen == 0:
                raise NotReadyError(
                    f"batchnorm {self.name!r}: eval mode before any running statistics exist")
            return ops.batchnorm_eval(ops.avgpool2d(x), self.gamma, self.beta,
                                      self.running_mean, self.running_var, self.eps)
        xr = x.reshape(-1, c)
        n = xr.shape[0]
        if n < 2:
            raise ValueError("batch normalization needs >= 2 elements per channel statistic")
        if ops._fast(x):
            sums = np.zeros((2, c), np.float64)
            zp = np.empty((x.shape[0], -(-x.shape[1] // 2), -(-x.shape[2] // 2), c), x.dtype)
            ops._K.pool2_sums(x, zp, sums)
            mean = (sums[0] / n).astype(x.dtype)
            sq = (sums[1] / n).astype(x.dtype)
        else:
            mean = np.ones(n, x.dtype) @ xr
            mean /= n
            sq = np.einsum("nc,nc->c", xr, xr) / n
            zp = ops.avgpool2d(x)
        var = np.maximum(sq - mean * mean, 0.0)
        ivar = 1.0 / np.sqrt(var + self.eps)
        if self.update_stats:
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mean
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var
            self.batches_seen += 1
        a = self.gamma * ivar
        y = np.multiply(zp, a)
        y += self.beta - mean * a
        self._cache = (x, zp, mean, ivar, n)
        return y

    def backward(self, gy):
        x, zp, mean, ivar, n = self._cache
        c = gy.shape[-1]
        g2 = gy.reshape(-1, c)
        # pooled-side channel sums equal the unpooled ones by the adjoint
        dbeta = np.ones(g2.shape[0], gy.dtype) @ g2
        sgx = np.einsum("nc,nc->c", g2, zp.reshape(-1, c))
        dgamma = ivar * (sgx - mean * dbeta)
        a = self.gamma * ivar
        b = -(a * ivar) * dgamma / n
        const = -(a * dbeta) / n - b * mean
        if ops._fast(x, gy):
            dx = np.empty_like(x)
            ops._K.poolbwd_affine(gy, x, a, b, const, dx)
        else:
            gt = ops.avgpool2d_backward(gy, *self._hw)
            dx = np.multiply(x, b)
            dx += const
            dx += np.multiply(gt, a)
        self.ggamma += dgamma
        self.gbeta += dbeta
        return dx


class LeakyReLU(Layer):
    def __init__(self, name: str, slope: float = 0.2) -> None:
        super().__init__(name)
        self.slope = float(slope)

    def forward(self, x, train):
        y = ops.leaky_relu(x, self.slope)
        self._y = y
        return y

    def backward(self, gy):
        return ops.leaky_relu_backward(self._y, gy, self.slope)


class AvgPool2d(Layer):
    def forward(self, x, train):
        self._hw = (x.shape[1], x.shape[2]) if x.ndim == 4 else (x.shape[0], x.shape[1])
        return ops.avgpool2d(x)

    def backward(self, gy):
        return ops.avgpool2d_backward(gy, *self._hw)


class Flatten(Layer):
    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._shape)


class Dense(Layer):
    def __init__(self, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator | None = None,
                 dtype: np.dtype = np.float64) -> None:
        super().__init__(name)
        if rng is None:
            self.weight = np.zeros((n_in, n_out), dtype)
        else:
            self.weight = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.bias = np.zeros(n_out, dtype)
        self.gweight = np.zeros_like(self.weight)
        self.gbias = np.zeros_like(self.bias)

    def forward(self, x, train):
        self._x = x
        return ops.dense(x, self.weight, self.bias)

    def backward(self, gy):
        gx, gw, gb = ops.dense_backward(self._x, self.weight, gy)
        self.gweight += gw
        self.gbias += gb
        return gx

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.gweight, "bias": self.gbias}


class GradientReversal(Layer):
    """Identity forward; backward multiplies the gradient by -lambda."""

    def __init__(self, name: str, lam: float = 0.5) -> None:
        super().__init__(name)
        if lam < 0:
            raise ValueError("gradient reversal strength must be >= 0")
        self.lam = float(lam)

    def forward(self, x, train):
        return ops.gradient_reversal(x)

    def backward(self, gy):
        return ops.gradient_reversal_backward(gy, self.lam)
