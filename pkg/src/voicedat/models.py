"""Classifier architectures, resource accounting and the runtime model.

Two trunk families over (127, 251) log power spectrograms:

* sepconv: 1-D frequency pooling, then five separable blocks (3x3 depthwise,
  BN, LeakyReLU 0.2, 1x1 pointwise to 16 channels, BN, 2x2 ceil avg pool),
  flattening to a 256-value feature vector.
* stdconv: the same skeleton with each depthwise+pointwise pair replaced by
  one standard 3x3 convolution to 16 channels (BN and pooling unchanged).

Both carry a 3-class disease predictor head and, optionally, a 3-class
domain head behind a gradient reversal layer. The domain head exists only
at training time; inference-scope parameter and MAC counts exclude it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .nn.layers import (
    AvgPool2d, BatchNorm, BatchNormPool, Dense, DepthwiseConv2d, Flatten,
    FreqAvgPool, GradientReversal, LeakyReLU, PointwiseConv2d, StandardConv2d,
)

__all__ = [
    "LayerSpec", "ModelSpec", "build_sepconv", "build_stdconv",
    "macs_conv_standard", "macs_conv_depthwise", "macs_conv_pointwise",
    "macs_dense", "reduction_ratio", "separable_reduction_law",
    "shape_trace", "count_params", "count_macs", "resource_table",
    "format_resource_table", "write_resource_csv",
    "serialize_spec", "parse_spec", "spec_hash",
    "Model", "predict", "N_CLASSES", "N_DOMAINS",
]

N_CLASSES = 3
N_DOMAINS = 3
INPUT_SHAPE = (127, 251)


@dataclass(frozen=True)
class LayerSpec:
    """One trunk layer: kind plus the integers that size its parameters."""

    kind: str  # freq_pool | conv | dwconv | pwconv | batchnorm | leaky_relu | avgpool2d | flatten
    name: str
    cin: int = 0
    cout: int = 0
    kh: int = 0
    kw: int = 0
    slope: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture description; everything needed to rebuild."""

    name: str
    input_shape: tuple[int, int]
    trunk: tuple[LayerSpec, ...]
    n_classes: int = N_CLASSES
    n_domains: int = N_DOMAINS
    domain_head: bool = True
    grl_lambda: float = 0.5

    def with_lambda(self, lam: float) -> "ModelSpec":
        return replace(self, grl_lambda=float(lam))


def _sep_block(i: int, cin: int, cout: int) -> list[LayerSpec]:
    b = f"block{i}"
    return [
        LayerSpec("dwconv", f"{b}_dw", cin=cin, cout=cin, kh=3, kw=3),
        LayerSpec("batchnorm", f"{b}_bn1", cin=cin, cout=cin),
        LayerSpec("leaky_relu", f"{b}_act", cin=cin, cout=cin, slope=0.2),
        LayerSpec("pwconv", f"{b}_pw", cin=cin, cout=cout),
        LayerSpec("batchnorm", f"{b}_bn2", cin=cout, cout=cout),
        LayerSpec("avgpool2d", f"{b}_pool", cin=cout, cout=cout),
    ]


def _std_block(i: int, cin: int, cout: int) -> list[LayerSpec]:
    b = f"block{i}"
    return [
        LayerSpec("conv", f"{b}_conv", cin=cin, cout=cout, kh=3, kw=3),
        LayerSpec("batchnorm", f"{b}_bn", cin=cout, cout=cout),
        LayerSpec("leaky_relu", f"{b}_act", cin=cout, cout=cout, slope=0.2),
        LayerSpec("avgpool2d", f"{b}_pool", cin=cout, cout=cout),
    ]


def _trunk(block_fn) -> tuple[LayerSpec, ...]:
    layers = [LayerSpec("freq_pool", "freq_pool", cin=1, cout=1)]
    cin = 1
    for i in range(1, 6):
        layers.extend(block_fn(i, cin, 16))
        cin = 16
    layers.append(LayerSpec("flatten", "flatten", cin=16, cout=16))
    return tuple(layers)


def build_sepconv(grl_lambda: float = 0.5, domain_head: bool = True) -> ModelSpec:
    """Separable-convolution classifier over (127, 251) spectrograms."""
    spec = ModelSpec("sepconv", INPUT_SHAPE, _trunk(_sep_block),
                     domain_head=domain_head, grl_lambda=grl_lambda)
    _validate(spec)
    return spec


def build_stdconv(grl_lambda: float = 0.5, domain_head: bool = True) -> ModelSpec:
    """Standard-convolution counterpart with the same width and depth."""
    spec = ModelSpec("stdconv", INPUT_SHAPE, _trunk(_std_block),
                     domain_head=domain_head, grl_lambda=grl_lambda)
    _validate(spec)
    return spec


def _validate(spec: ModelSpec) -> None:
    if spec.grl_lambda < 0:
        raise ValueError("gradient reversal strength must be >= 0")
    blocks = [l for l in spec.trunk if l.kind in ("dwconv", "conv")]
    if len(blocks) != 5:
        raise ValueError("trunk must hold exactly 5 convolution blocks")
    if blocks[0].cin != 1 or any(b.cin != 16 for b in blocks[1:]):
        raise ValueError("block input channels must be 1,16,16,16,16")
    if feature_dim(spec) != 256:
        raise ValueError(f"trunk must flatten to 256 features, got {feature_dim(spec)}")


# ---------------------------------------------------------------------------
# closed-form multiply-accumulate counts


def macs_conv_standard(kh: int, kw: int, cin: int, cout: int, ho: int, wo: int) -> int:
    """(kh*kw*cin) multiplies per output value, ho*wo*cout outputs."""
    return kh * kw * cin * ho * wo * cout


def macs_conv_depthwise(kh: int, kw: int, c: int, ho: int, wo: int) -> int:
    """(kh*kw) multiplies per output value, ho*wo*c outputs."""
    return kh * kw * ho * wo * c


def macs_conv_pointwise(cin: int, cout: int, ho: int, wo: int) -> int:
    """cin multiplies per output value, ho*wo*cout outputs."""
    return cin * ho * wo * cout


def macs_dense(n_in: int, n_out: int) -> int:
    return n_in * n_out


def reduction_ratio(small: float, large: float) -> float:
    """Fractional saving 1 - small/large."""
    if large <= 0:
        raise ValueError("baseline must be positive")
    return 1.0 - small / large


def separable_reduction_law(kh: int, kw: int, cout: int) -> float:
    """(depthwise+pointwise)/(standard) cost ratio: 1/cout + 1/(kh*kw).

    Holds for both parameter and MAC counts at equal spatial dims, for any
    input channel count.
    """
    return 1.0 / cout + 1.0 / (kh * kw)


# ---------------------------------------------------------------------------
# shape tracing and per-layer accounting


def _ceil_half(n: int) -> int:
    return (n + 1) // 2


@dataclass
class ResourceRow:
    name: str
    kind: str
    out_shape: tuple
    params: int
    macs: int
    elementwise: int  # BN + activation + pooling, one MAC per output element


def _layer_row(l: LayerSpec, h: int, w: int) -> tuple[ResourceRow, int, int]:
    """Account one trunk layer at input spatial dims (h, w)."""
    if l.kind == "freq_pool":
        wo = _ceil_half(w)
        return ResourceRow(l.name, l.kind, (h, wo, 1), 0, 0, h * wo), h, wo
    if l.kind == "dwconv":
        return ResourceRow(l.name, l.kind, (h, w, l.cout), l.kh * l.kw * l.cin,
                           macs_conv_depthwise(l.kh, l.kw, l.cin, h, w), 0), h, w
    if l.kind == "conv":
        return ResourceRow(l.name, l.kind, (h, w, l.cout), l.kh * l.kw * l.cin * l.cout,
                           macs_conv_standard(l.kh, l.kw, l.cin, l.cout, h, w), 0), h, w
    if l.kind == "pwconv":
        return ResourceRow(l.name, l.kind, (h, w, l.cout), l.cin * l.cout,
                           macs_conv_pointwise(l.cin, l.cout, h, w), 0), h, w
    if l.kind == "batchnorm":
        return ResourceRow(l.name, l.kind, (h, w, l.cout), 2 * l.cout, 0, h * w * l.cout), h, w
    if l.kind == "leaky_relu":
        return ResourceRow(l.name, l.kind, (h, w, l.cout), 0, 0, h * w * l.cout), h, w
    if l.kind == "avgpool2d":
        ho, wo = _ceil_half(h), _ceil_half(w)
        return ResourceRow(l.name, l.kind, (ho, wo, l.cout), 0, 0, ho * wo * l.cout), ho, wo
    if l.kind == "flatten":
        return ResourceRow(l.name, l.kind, (h * w * l.cout,), 0, 0, 0), h, w
    raise ValueError(f"unknown layer kind {l.kind!r}")


def shape_trace(spec: ModelSpec) -> list[ResourceRow]:
    """Per-layer output shapes and costs for the trunk plus heads."""
    h, w = spec.input_shape
    rows = []
    for l in spec.trunk:
        row, h, w = _layer_row(l, h, w)
        rows.append(row)
    feat = rows[-1].out_shape[0]
    rows.append(ResourceRow("predictor", "dense", (spec.n_classes,),
                            feat * spec.n_classes + spec.n_classes,
                            macs_dense(feat, spec.n_classes), 0))
    if spec.domain_head:
        rows.append(ResourceRow("domain", "dense+grl", (spec.n_domains,),
                                feat * spec.n_domains + spec.n_domains,
                                macs_dense(feat, spec.n_domains), 0))
    return rows


def feature_dim(spec: ModelSpec) -> int:
    h, w = spec.input_shape
    c = 1
    for l in spec.trunk:
        if l.kind == "freq_pool":
            w = _ceil_half(w)
        elif l.kind == "avgpool2d":
            h, w = _ceil_half(h), _ceil_half(w)
        if l.cout:
            c = l.cout
    return h * w * c


def count_params(spec: ModelSpec, scope: str = "inference") -> int:
    """Trainable parameter count; training scope adds the domain head."""
    if scope not in ("inference", "training"):
        raise ValueError("scope must be 'inference' or 'training'")
    rows = shape_trace(spec)
    total = sum(r.params for r in rows if r.name != "domain")
    if scope == "training" and spec.domain_head:
        total += next(r.params for r in rows if r.name == "domain")
    return total


def count_macs(spec: ModelSpec, include_elementwise: bool = False) -> int:
    """Inference-scope multiply-accumulate count for one input.

    The contract total counts convolution and dense multiplies only; the
    elementwise-inclusive variant adds one MAC per BN, activation and
    pooling output element for comparison with coarser counting styles.
    """
    rows = shape_trace(spec)
    total = sum(r.macs for r in rows if r.name != "domain")
    if include_elementwise:
        total += sum(r.elementwise for r in rows if r.name != "domain")
    return total


def resource_table(spec: ModelSpec, scope: str = "inference") -> list[ResourceRow]:
    rows = shape_trace(spec)
    if scope == "inference":
        rows = [r for r in rows if r.name != "domain"]
    return rows


def format_resource_table(rows: list[ResourceRow]) -> str:
    """Aligned text table with totals."""
    header = f"{'layer':<14}{'kind':<12}{'output':<16}{'params':>8}{'macs':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        shape = "x".join(str(d) for d in r.out_shape)
        lines.append(f"{r.name:<14}{r.kind:<12}{shape:<16}{r.params:>8}{r.macs:>12}")
    lines.append("-" * len(header))
    total_p = sum(r.params for r in rows)
    total_m = sum(r.macs for r in rows)
    total_e = sum(r.elementwise for r in rows)
    lines.append(f"{'total':<14}{'':<12}{'':<16}{total_p:>8}{total_m:>12}")
    lines.append(f"conv-only macs {total_m}, elementwise-inclusive {total_m + total_e}")
    return "\n".join(lines)


def write_resource_csv(path, rows: list[ResourceRow]) -> None:
    with open(path, "w") as f:
        f.write("layer,kind,params,macs\n")
        for r in rows:
            f.write(f"{r.name},{r.kind},{r.params},{r.macs}\n")


# ---------------------------------------------------------------------------
# versioned text serialization

_SPEC_HEADER = "voicedat-modelspec 1"


def serialize_spec(spec: ModelSpec) -> str:
    lines = [_SPEC_HEADER,
             f"name {spec.name}",
             f"input {spec.input_shape[0]} {spec.input_shape[1]}"]
    for l in spec.trunk:
        lines.append(f"trunk {l.kind} {l.name} {l.cin} {l.cout} {l.kh} {l.kw} {l.slope:g}")
    lines.append(f"classes {spec.n_classes}")
    if spec.domain_head:
        lines.append(f"domain {spec.n_domains} {spec.grl_lambda:.17g}")
    else:
        lines.append("domain none")
    return "\n".join(lines) + "\n"


def parse_spec(text: str) -> ModelSpec:
    lines = [ln for ln in text.strip().split("\n") if ln.strip()]
    if not lines or lines[0] != _SPEC_HEADER:
        raise ValueError("not a model spec (bad header)")
    name = ""
    input_shape = (0, 0)
    trunk: list[LayerSpec] = []
    n_classes = N_CLASSES
    domain_head = True
    n_domains = N_DOMAINS
    lam = 0.5
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "name":
            name = parts[1]
        elif parts[0] == "input":
            input_shape = (int(parts[1]), int(parts[2]))
        elif parts[0] == "trunk":
            trunk.append(LayerSpec(parts[1], parts[2], cin=int(parts[3]),
                                   cout=int(parts[4]), kh=int(parts[5]),
                                   kw=int(parts[6]), slope=float(parts[7])))
        elif parts[0] == "classes":
            n_classes = int(parts[1])
        elif parts[0] == "domain":
            if parts[1] == "none":
                domain_head = False
            else:
                n_domains = int(parts[1])
                lam = float(parts[2])
        else:
            raise ValueError(f"unknown spec line {ln!r}")
    return ModelSpec(name, input_shape, tuple(trunk), n_classes=n_classes,
                     n_domains=n_domains, domain_head=domain_head, grl_lambda=lam)


def spec_hash(spec: ModelSpec) -> bytes:
    """SHA-256 of the canonical serialization (32 bytes)."""
    return hashlib.sha256(serialize_spec(spec).encode()).digest()


# ---------------------------------------------------------------------------
# runtime model


def _make_layer(l: LayerSpec, rng: np.random.Generator | None, dtype: np.dtype):
    if l.kind == "freq_pool":
        return _FreqPoolExpand(l.name)
    if l.kind == "dwconv":
        return DepthwiseConv2d(l.name, l.cin, l.kh, l.kw, rng=rng, dtype=dtype)
    if l.kind == "conv":
        return StandardConv2d(l.name, l.cin, l.cout, l.kh, l.kw, rng=rng, dtype=dtype)
    if l.kind == "pwconv":
        return PointwiseConv2d(l.name, l.cin, l.cout, rng=rng, dtype=dtype)
    if l.kind == "batchnorm":
        return BatchNorm(l.name, l.cout, dtype=dtype)
    if l.kind == "leaky_relu":
        return LeakyReLU(l.name, l.slope)
    if l.kind == "avgpool2d":
        return AvgPool2d(l.name)
    if l.kind == "flatten":
        return Flatten(l.name)
    raise ValueError(f"unknown layer kind {l.kind!r}")


def _build_trunk(spec: ModelSpec, rng: np.random.Generator | None,
                 dtype: np.dtype, fused: bool) -> list:
    """Instantiate the trunk, optionally fusing batchnorm -> avgpool2d pairs.

    The fused layer keeps the batchnorm's name, parameters, and statistics
    (the pool holds none of either), so checkpoints and parameter listings
    are identical whichever way the trunk was built. Only batch norm draws
    nothing from the init stream, so fusion does not shift initialization.
    """
    layers = []
    skip = False
    for i, l in enumerate(spec.trunk):
        if skip:
            skip = False
            continue
        nxt = spec.trunk[i + 1] if i + 1 < len(spec.trunk) else None
        if fused and l.kind == "batchnorm" and nxt is not None and nxt.kind == "avgpool2d":
            layers.append(BatchNormPool(l.name, l.cout, dtype=dtype))
            skip = True
        else:
            layers.append(_make_layer(l, rng, dtype))
    return layers


class _FreqPoolExpand(FreqAvgPool):
    """Frequency pooling plus the trailing channel axis the convs expect."""

    def forward(self, x, train):
        return super().forward(x, train)[..., None]

    def backward(self, gy):
        return super().backward(gy[..., 0])


class Model:
    """Instantiated network: trunk + predictor head + optional domain head.

    The trunk and heads are separate parameter groups so training can update
    them with their own optimizers (the adaptation update scales the domain
    group's gradients by lambda). Initialization draws from streams derived
    from (seed, group index) in float64 before casting, so models built from
    the same spec and seed hold the same values at any compute dtype.

    dtype selects the compute precision: float32 (the default) for training
    and inference speed, float64 when gradients must survive finite-difference
    scrutiny. fused=False builds every spec entry as its own layer instead of
    merging batchnorm -> avgpool2d pairs; the two trunks agree to rounding and
    share parameter and checkpoint layout.
    """

    def __init__(self, spec: ModelSpec, seed: int | None = None,
                 dtype: np.dtype = np.float32, fused: bool = True) -> None:
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.fused = bool(fused)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError("model dtype must be float32 or float64")
        rng_t = np.random.default_rng([seed, 0]) if seed is not None else None
        rng_p = np.random.default_rng([seed, 1]) if seed is not None else None
        rng_d = np.random.default_rng([seed, 2]) if seed is not None else None
        self.trunk = _build_trunk(spec, rng_t, self.dtype, self.fused)
        feat = feature_dim(spec)
        self.predictor = Dense("predictor", feat, spec.n_classes, rng=rng_p,
                               dtype=self.dtype)
        if spec.domain_head:
            self.grl = GradientReversal("grl", spec.grl_lambda)
            self.domain = Dense("domain", feat, spec.n_domains, rng=rng_d,
                                dtype=self.dtype)
        else:
            self.grl = None
            self.domain = None

    # forward ---------------------------------------------------------------

    def features(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """(B, 127, 251) -> (B, 256)."""
        x = np.asarray(x)
        if x.dtype != self.dtype:
            x = x.astype(self.dtype)
        for layer in self.trunk:
            x = layer(x, train)
        return x

    def backward_features(self, gf: np.ndarray) -> None:
        """Push a feature-level gradient down the trunk (accumulates)."""
        g = gf
        for layer in reversed(self.trunk):
            g = layer.backward(g)

    def label_logits(self, feats: np.ndarray, train: bool = False) -> np.ndarray:
        return self.predictor(feats, train)

    def domain_logits(self, feats: np.ndarray, train: bool = False) -> np.ndarray:
        if self.domain is None:
            raise ValueError("model has no domain head")
        return self.domain(self.grl(feats, train), train)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode class probabilities; never touches the domain head."""
        from .nn.losses import softmax

        logits = self.label_logits(self.features(x, train=False))
        return softmax(logits.astype(np.float64, copy=False))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode hard labels (first index wins ties)."""
        return np.argmax(self.predict_proba(x), axis=-1)

    # parameter access --------------------------------------------------------

    def _group_layers(self, group: str):
        if group == "trunk":
            return self.trunk
        if group == "predictor":
            return [self.predictor]
        if group == "domain":
            return [self.grl, self.domain] if self.domain is not None else []
        raise ValueError(f"unknown group {group!r}")

    def group_params(self, group: str) -> dict[str, np.ndarray]:
        out = {}
        for layer in self._group_layers(group):
            for k, v in layer.params().items():
                out[f"{layer.name}.{k}"] = v
        return out

    def group_grads(self, group: str) -> dict[str, np.ndarray]:
        out = {}
        for layer in self._group_layers(group):
            for k, v in layer.grads().items():
                out[f"{layer.name}.{k}"] = v
        return out

    def zero_grad(self) -> None:
        for group in ("trunk", "predictor", "domain"):
            for layer in self._group_layers(group):
                layer.zero_grad()

    def parameter_entries(self) -> list[tuple[str, np.ndarray]]:
        """Trainable tensors in declaration order (trunk, predictor, domain)."""
        entries = []
        for group in ("trunk", "predictor", "domain"):
            for name, arr in self.group_params(group).items():
                entries.append((f"{group}.{name}", arr))
        return entries

    def stat_entries(self) -> list[tuple[str, np.ndarray]]:
        """Batch-norm running statistics, in declaration order."""
        entries = []
        for layer in self.trunk:
            if isinstance(layer, BatchNorm):
                entries.append((f"trunk.{layer.name}.running_mean", layer.running_mean))
                entries.append((f"trunk.{layer.name}.running_var", layer.running_var))
        return entries

    def bn_layers(self) -> list[BatchNorm]:
        return [l for l in self.trunk if isinstance(l, BatchNorm)]

    def set_bn_update(self, update: bool) -> None:
        for l in self.bn_layers():
            l.update_stats = update

    def copy(self) -> "Model":
        """Deep copy of parameters and statistics (fresh layer caches)."""
        other = Model(self.spec, seed=None, dtype=self.dtype, fused=self.fused)
        for (_, src), (_, dst) in zip(self.parameter_entries(), other.parameter_entries()):
            dst[...] = src
        for (_, src), (_, dst) in zip(self.stat_entries(), other.stat_entries()):
            dst[...] = src
        for a, b in zip(self.bn_layers(), other.bn_layers()):
            b.batches_seen = a.batches_seen
        return other


def predict(model: Model, spectrogram: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Classify one spectrogram or a batch of them.

    Returns (probabilities, predicted class, feature vector). Probabilities
    are computed in float64 and sum to 1 to near machine precision; ties in
    the probabilities resolve to the lowest class index. The domain head is
    never evaluated. A single (127, 251) input yields unbatched outputs.
    """
    x = np.asarray(spectrogram)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != model.spec.input_shape:
        raise ValueError(
            f"expected input shaped {model.spec.input_shape} "
            f"(optionally batched), got {np.asarray(spectrogram).shape}")
    from .nn.losses import softmax

    feats = model.features(x, train=False)
    logits = model.label_logits(feats).astype(np.float64, copy=False)
    probs = softmax(logits)
    labels = np.argmax(probs, axis=-1)
    if single:
        return probs[0], labels[0], feats[0]
    return probs, labels, feats
