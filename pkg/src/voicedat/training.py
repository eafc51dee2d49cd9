"""Training loops for all model variants, plus checkpointing.

Variants
--------
* stdconv / sepconv: supervised on the labeled source split.
* tgt: supervised on the labeled target split only.
* ft: start from a trained sepconv model, fine-tune on the labeled target.
* jnt: supervised on the union of both labeled splits.
* mmd: source cross-entropy plus a weighted squared distance between the
  source and target feature means; target labels are never read.
* dat: domain-adversarial training. Each step combines a source pass
  (label loss, domain loss) and a target pass (domain loss); the gradient
  reversal layer feeds the trunk the label gradient minus lambda times the
  domain gradient, while the domain head itself descends its own loss with
  its gradient scaled by lambda. Target labels are never read.

One optimizer step per training step covers all parameter groups: gradients
accumulate across the source and target passes in the layer buffers, then
each group's Adam instance applies one update. With lambda == 0 the domain
branch is skipped entirely (its update would be exactly zero), which makes
the trunk and predictor updates of a dat step bitwise identical to a
supervised step on the same batch; only batch-norm running statistics, which
are state rather than updates, see the extra target pass.

Randomness is split into named streams derived from (seed, stream, epoch),
with separate streams for source batch order, target batch order, and the
random crop of each split, so adding or removing the target branch never
perturbs the source-side draw sequence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .datasets import SampleSet, UnlabeledView
from .models import Model, ModelSpec, build_sepconv, build_stdconv, parse_spec, serialize_spec, spec_hash
from .nn.adam import Adam
from .nn.losses import mean_feature_distance, softmax_cross_entropy

__all__ = [
    "VARIANTS", "TrainConfig", "DataBundle", "EpochStats", "TrainResult",
    "make_optimizers", "supervised_step", "dat_step", "mmd_step",
    "train", "predict_labels", "embed",
    "save_checkpoint", "load_checkpoint", "write_training_log",
]

VARIANTS = ("stdconv", "sepconv", "tgt", "ft", "jnt", "mmd", "dat")

# rng stream ids under the training seed
_STREAM_SOURCE_ORDER = 31
_STREAM_TARGET_ORDER = 32
_STREAM_SOURCE_CROP = 33
_STREAM_TARGET_CROP = 34


@dataclass
class TrainConfig:
    variant: str
    seed: int
    epochs: int = 30
    batch_source: int = 16
    batch_target: int = 8
    lr: float = 1e-3
    grl_lambda: float = 0.5
    mmd_weight: float = 0.5
    eval_every: int = 0  # 0 disables in-loop evaluation
    log_path: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not isinstance(self.seed, (int, np.integer)):
            raise ValueError("seed is required and must be an integer")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_source < 2 or self.batch_target < 2:
            raise ValueError("batch sizes must be >= 2 (batch norm needs 2)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.grl_lambda < 0:
            raise ValueError("gradient reversal strength must be >= 0")
        if self.mmd_weight < 0:
            raise ValueError("feature-distance weight must be >= 0")


@dataclass
class DataBundle:
    """Splits a training run may draw on; unused ones can be None."""

    source: SampleSet | None = None
    target: SampleSet | UnlabeledView | None = None
    eval_source: SampleSet | None = None
    eval_target: SampleSet | None = None


@dataclass
class EpochStats:
    epoch: int
    label_loss: float
    domain_loss: float  # domain cross-entropy (dat) or feature distance (mmd)
    source_uar: float = float("nan")
    target_uar: float = float("nan")


@dataclass
class TrainResult:
    model: Model
    history: list[EpochStats]
    config: TrainConfig


def make_optimizers(model: Model, lr: float) -> dict[str, Adam]:
    opts = {"trunk": Adam(model.group_params("trunk"), lr),
            "predictor": Adam(model.group_params("predictor"), lr)}
    if model.domain is not None:
        opts["domain"] = Adam(model.group_params("domain"), lr)
    return opts


# ---------------------------------------------------------------------------
# single optimization steps


def supervised_step(model: Model, opts: dict[str, Adam],
                    x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """One labeled step: mean cross-entropy on one batch."""
    model.zero_grad()
    feats = model.features(x, train=True)
    losses, glogits = softmax_cross_entropy(model.label_logits(feats, train=True), y)
    # loss math runs in float64; gradients re-enter the graph at compute dtype
    gfeat = model.predictor.backward(
        (glogits / x.shape[0]).astype(model.dtype, copy=False))
    model.backward_features(gfeat)
    opts["trunk"].step(model.group_grads("trunk"))
    opts["predictor"].step(model.group_grads("predictor"))
    return float(losses.mean()), float("nan")


def dat_step(model: Model, opts: dict[str, Adam],
             x_src: np.ndarray, y_src: np.ndarray, d_src: np.ndarray,
             x_tgt: np.ndarray, d_tgt: np.ndarray) -> tuple[float, float]:
    """One adaptation step over a source batch and a target batch.

    The trunk gradient accumulates label loss minus lambda times domain loss
    (the reversal layer applies the -lambda); the domain head's own gradient
    is scaled by lambda at optimizer time. Only the source batch updates the
    shared batch-norm running statistics — evaluation statistics stay
    calibrated to the labeled domain, so adaptation must come from the
    features, not from statistic drift. With lambda == 0 the whole domain
    branch (including the target forward) is skipped: the step is identical
    to a supervised step, batch-norm state included, and the domain head
    stays frozen.
    """
    if model.domain is None:
        raise ValueError("adaptation needs a model with a domain head")
    lam = model.grl.lam
    ns, nt = x_src.shape[0], x_tgt.shape[0]
    model.zero_grad()

    feats = model.features(x_src, train=True)
    losses, glogits = softmax_cross_entropy(model.label_logits(feats, train=True), y_src)
    gfeat = model.predictor.backward(
        (glogits / ns).astype(model.dtype, copy=False))
    dom_total = 0.0
    if lam > 0.0:
        dlosses, gd = softmax_cross_entropy(model.domain_logits(feats, train=True), d_src)
        dom_total += float(dlosses.sum())
        gfeat = gfeat + model.grl.backward(model.domain.backward(
            (gd / (ns + nt)).astype(model.dtype, copy=False)))
    model.backward_features(gfeat)

    if lam > 0.0:
        model.set_bn_update(False)
        feats_t = model.features(x_tgt, train=True)
        model.set_bn_update(True)
        dlosses, gd = softmax_cross_entropy(model.domain_logits(feats_t, train=True), d_tgt)
        dom_total += float(dlosses.sum())
        model.backward_features(model.grl.backward(model.domain.backward(
            (gd / (ns + nt)).astype(model.dtype, copy=False))))

    opts["trunk"].step(model.group_grads("trunk"))
    opts["predictor"].step(model.group_grads("predictor"))
    if lam > 0.0:
        scaled = {k: lam * g for k, g in model.group_grads("domain").items()}
        opts["domain"].step(scaled)
        return float(losses.mean()), dom_total / (ns + nt)
    return float(losses.mean()), float("nan")


def mmd_step(model: Model, opts: dict[str, Adam],
             x_src: np.ndarray, y_src: np.ndarray,
             x_tgt: np.ndarray, weight: float) -> tuple[float, float]:
    """One feature-alignment step: source cross-entropy plus weighted squared
    distance between batch feature means.

    The target batch is forwarded twice: once with frozen running statistics
    to obtain its feature mean before the source backward pass consumes the
    layer caches, and once statistics-on to backpropagate its share of the
    distance gradient. Both forwards see the same parameters, so the features
    are identical; running statistics are updated once per batch, source
    first.
    """
    model.zero_grad()
    model.set_bn_update(False)
    feats_t = model.features(x_tgt, train=True)
    model.set_bn_update(True)

    feats = model.features(x_src, train=True)
    losses, glogits = softmax_cross_entropy(model.label_logits(feats, train=True), y_src)
    dist, gs, gt = mean_feature_distance(feats, feats_t)
    gfeat = model.predictor.backward(
        (glogits / x_src.shape[0]).astype(model.dtype, copy=False))
    gfeat = gfeat + (weight * gs).astype(model.dtype, copy=False)
    model.backward_features(gfeat)

    model.features(x_tgt, train=True)
    model.backward_features((weight * gt).astype(model.dtype, copy=False))

    opts["trunk"].step(model.group_grads("trunk"))
    opts["predictor"].step(model.group_grads("predictor"))
    return float(losses.mean()), float(dist)


# ---------------------------------------------------------------------------
# batching helpers


def _chunks(order: np.ndarray, size: int) -> list[np.ndarray]:
    out = [order[i:i + size] for i in range(0, len(order), size)]
    if len(out) > 1 and out[-1].size < 2:
        out.pop()  # batch norm needs at least 2 samples
    if not out or out[0].size < 2:
        raise ValueError("need at least 2 samples to train")
    return out


def _target_batches(n: int, size: int, steps: int, rng: np.random.Generator):
    """Seeded target batches drawn with replacement.

    The adaptation pool is typically much smaller than the labeled split, so
    batches sample it with replacement: every step sees a full-size batch no
    matter how few target recordings exist.
    """
    return [rng.choice(n, size=size, replace=True) for _ in range(steps)]


# ---------------------------------------------------------------------------
# evaluation-mode forward passes


def predict_labels(model: Model, samples, batch: int = 16) -> np.ndarray:
    """Argmax class per sample, head crop, eval mode."""
    out = []
    for i in range(0, len(samples), batch):
        x = samples.segments(range(i, min(i + batch, len(samples))), mode="head")
        out.append(model.predict(x))
    return np.concatenate(out)


def embed(model: Model, samples, batch: int = 16) -> np.ndarray:
    """(n, 256) eval-mode feature matrix, head crop."""
    out = []
    for i in range(0, len(samples), batch):
        x = samples.segments(range(i, min(i + batch, len(samples))), mode="head")
        out.append(model.features(x, train=False))
    return np.vstack(out)


# ---------------------------------------------------------------------------
# the training loop


def _build_model(config: TrainConfig, base: Model | None) -> Model:
    if config.variant == "ft":
        if base is None:
            raise ValueError("fine-tuning needs a base model")
        return base.copy()
    if config.variant == "stdconv":
        return Model(build_stdconv(domain_head=False), seed=config.seed)
    if config.variant == "dat":
        return Model(build_sepconv(grl_lambda=config.grl_lambda, domain_head=True),
                     seed=config.seed)
    return Model(build_sepconv(domain_head=False), seed=config.seed)


def _labeled_split(config: TrainConfig, bundle: DataBundle) -> SampleSet:
    if config.variant in ("stdconv", "sepconv", "mmd", "dat"):
        if bundle.source is None:
            raise ValueError(f"variant {config.variant} needs a source split")
        return bundle.source
    if config.variant in ("tgt", "ft"):
        if bundle.target is None:
            raise ValueError(f"variant {config.variant} needs a target split")
        if isinstance(bundle.target, UnlabeledView):
            raise ValueError("this variant trains on labels; got an unlabeled view")
        return bundle.target
    if bundle.source is None or bundle.target is None:
        raise ValueError("joint training needs both splits")
    if isinstance(bundle.target, UnlabeledView):
        raise ValueError("this variant trains on labels; got an unlabeled view")
    return SampleSet(list(bundle.source) + list(bundle.target))


def train(config: TrainConfig, bundle: DataBundle, base: Model | None = None) -> TrainResult:
    model = _build_model(config, base)
    opts = make_optimizers(model, config.lr)
    sup = _labeled_split(config, bundle)
    sup_labels = sup.labels
    sup_domains = sup.domains

    adapt = config.variant in ("mmd", "dat")
    if adapt:
        if bundle.target is None:
            raise ValueError(f"variant {config.variant} needs a target split")
        # the unlabeled view makes label reads impossible below this line
        unl = bundle.target if isinstance(bundle.target, UnlabeledView) \
            else UnlabeledView(bundle.target)
        unl_domains = unl.domains

    history = []
    for epoch in range(config.epochs):
        order = np.random.default_rng(
            [config.seed, _STREAM_SOURCE_ORDER, epoch]).permutation(len(sup))
        crop_rng = np.random.default_rng([config.seed, _STREAM_SOURCE_CROP, epoch])
        batches = _chunks(order, config.batch_source)
        if adapt:
            t_order_rng = np.random.default_rng([config.seed, _STREAM_TARGET_ORDER, epoch])
            t_crop_rng = np.random.default_rng([config.seed, _STREAM_TARGET_CROP, epoch])
            t_batches = _target_batches(len(unl), config.batch_target,
                                        len(batches), t_order_rng)

        label_sum = domain_sum = 0.0
        domain_steps = 0
        for step, idx in enumerate(batches):
            x = sup.segments(idx, mode="random", rng=crop_rng)
            y = sup_labels[idx]
            if config.variant == "dat":
                t_idx = t_batches[step]
                xt = unl.segments(t_idx, mode="random", rng=t_crop_rng)
                ll, dl = dat_step(model, opts, x, y, sup_domains[idx],
                                  xt, unl_domains[t_idx])
            elif config.variant == "mmd":
                t_idx = t_batches[step]
                xt = unl.segments(t_idx, mode="random", rng=t_crop_rng)
                ll, dl = mmd_step(model, opts, x, y, xt, config.mmd_weight)
            else:
                ll, dl = supervised_step(model, opts, x, y)
            label_sum += ll
            if not np.isnan(dl):
                domain_sum += dl
                domain_steps += 1

        stats = EpochStats(epoch, label_sum / len(batches),
                           domain_sum / domain_steps if domain_steps else float("nan"))
        if config.eval_every and ((epoch + 1) % config.eval_every == 0
                                  or epoch == config.epochs - 1):
            from .evaluate import confusion_matrix, uar  # late import; evaluate builds on training

            if bundle.eval_source is not None:
                cm = confusion_matrix(bundle.eval_source.labels,
                                      predict_labels(model, bundle.eval_source))
                stats.source_uar = uar(cm)[0]
            if bundle.eval_target is not None:
                cm = confusion_matrix(bundle.eval_target.labels,
                                      predict_labels(model, bundle.eval_target))
                stats.target_uar = uar(cm)[0]
        history.append(stats)

    if config.log_path:
        write_training_log(config.log_path, history)
    return TrainResult(model, history, config)


def write_training_log(path, history: list[EpochStats]) -> None:
    with open(path, "w") as f:
        f.write("epoch,label_loss,domain_loss,source_uar,target_uar\n")
        for h in history:
            f.write(f"{h.epoch},{h.label_loss:.17g},{h.domain_loss:.17g},"
                    f"{h.source_uar:.17g},{h.target_uar:.17g}\n")


# ---------------------------------------------------------------------------
# checkpoints
#
#   magic "VDCKPT" | version u8 = 1 | sha256(spec text) 32B
#   | spec_len u32 LE | spec text utf-8
#   | parameter tensors, float64 LE, declaration order
#   | per batch-norm layer: running_mean, running_var float64 LE,
#     batches_seen u64 LE
#   | adam flag u8; if 1, per parameter group (trunk, predictor, domain if
#     present): t u64 LE, then first and second moments per tensor in order

_CKPT_MAGIC = b"VDCKPT"
_CKPT_VERSION = 1
_GROUPS = ("trunk", "predictor", "domain")


def _groups_of(model: Model):
    return _GROUPS if model.domain is not None else _GROUPS[:2]


def save_checkpoint(path, model: Model, opts: dict[str, Adam] | None = None) -> None:
    text = serialize_spec(model.spec).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<B", _CKPT_VERSION))
        f.write(spec_hash(model.spec))
        f.write(struct.pack("<I", len(text)))
        f.write(text)
        for _, arr in model.parameter_entries():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for bn in model.bn_layers():
            f.write(np.ascontiguousarray(bn.running_mean, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(bn.running_var, dtype="<f8").tobytes())
            f.write(struct.pack("<Q", bn.batches_seen))
        f.write(struct.pack("<B", 1 if opts else 0))
        if opts:
            for group in _groups_of(model):
                opt = opts[group]
                f.write(struct.pack("<Q", opt.t))
                for store in (opt.m, opt.v):
                    for k in model.group_params(group):
                        f.write(np.ascontiguousarray(store[k], dtype="<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError("checkpoint is truncated")
    return data


def _read_array(f, like: np.ndarray) -> np.ndarray:
    raw = _read_exact(f, like.size * 8)
    return np.frombuffer(raw, dtype="<f8").reshape(like.shape).copy()


def load_checkpoint(path, lr: float = 1e-3,
                    dtype: np.dtype = np.float32) -> tuple[Model, dict[str, Adam] | None]:
    """Rebuild the model (and optimizers, if saved) from a checkpoint."""
    with open(path, "rb") as f:
        if _read_exact(f, len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version = struct.unpack("<B", _read_exact(f, 1))[0]
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        stored_hash = _read_exact(f, 32)
        text = _read_exact(f, struct.unpack("<I", _read_exact(f, 4))[0]).decode()
        spec = parse_spec(text)
        if spec_hash(spec) != stored_hash:
            raise ValueError("checkpoint spec does not match its stored digest")
        model = Model(spec, seed=None, dtype=dtype)
        for _, arr in model.parameter_entries():
            arr[...] = _read_array(f, arr)
        for bn in model.bn_layers():
            bn.running_mean[...] = _read_array(f, bn.running_mean)
            bn.running_var[...] = _read_array(f, bn.running_var)
            bn.batches_seen = struct.unpack("<Q", _read_exact(f, 8))[0]
        opts = None
        if struct.unpack("<B", _read_exact(f, 1))[0]:
            opts = make_optimizers(model, lr)
            for group in _groups_of(model):
                opt = opts[group]
                opt.t = struct.unpack("<Q", _read_exact(f, 8))[0]
                for store in (opt.m, opt.v):
                    for k in model.group_params(group):
                        store[k][...] = _read_array(f, store[k])
        return model, opts
