"""Shared-representation (SR) classifier, fused-representation (FR) baseline, checkpoints.

Both variants run the same stack: two blocks of linear -> batchnorm -> relu
-> dropout, then a plain linear head that emits logits. SR pushes each
modality through one shared parameter set and sums per-modality logits
(falling back to the image logits when text is absent); FR concatenates
text and image embeddings into one 2d-wide input, zero-filling missing text.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError, LoadError, NumericError, UsageError
from .layers import (
    BN_EPS,
    BN_MOMENTUM,
    DTYPE,
    BatchNormState,
    GradTape,
    batchnorm_backward,
    batchnorm_forward,
    dropout,
    dropout_backward,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
)

SR = "sr"
FR = "fr"

CHECKPOINT_MAGIC = b"MRSR"
CHECKPOINT_VERSION = 1
_OPT_SECTION = b"OPTS"


@dataclass
class LinearParams:
    w: np.ndarray  # [din, dout]
    b: np.ndarray  # [dout]

    def copy(self) -> "LinearParams":
        return LinearParams(self.w.copy(), self.b.copy())


@dataclass
class ModelParams:
    """One parameter set for either variant.

    For SR the single set serves both modalities structurally: there is no
    per-modality copy to diverge. For FR the stack input is 2 * embed_dim.
    """

    variant: str
    embed_dim: int
    hidden1: int
    hidden2: int
    n_classes: int
    dropout_rate: float
    lin1: LinearParams
    bn1: BatchNormState
    lin2: LinearParams
    bn2: BatchNormState
    head: LinearParams

    @property
    def input_dim(self) -> int:
        return self.embed_dim if self.variant == SR else 2 * self.embed_dim

    @classmethod
    def create(cls, variant: str, embed_dim: int, hidden1: int = 512,
               hidden2: int = 256, n_classes: int = 2, dropout_rate: float = 0.2,
               rng: Optional[np.random.Generator] = None,
               bn_eps: float = BN_EPS, bn_momentum: float = BN_MOMENTUM,
               dtype=DTYPE) -> "ModelParams":
        """He-normal weight init, zero biases, identity batch-norm affine."""
        if variant not in (SR, FR):
            raise ConfigError(f"variant must be '{SR}' or '{FR}', got {variant!r}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        if rng is None:
            rng = np.random.default_rng(0)
        in_dim = embed_dim if variant == SR else 2 * embed_dim

        def he(fan_in, fan_out):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            return LinearParams(w.astype(dtype), np.zeros(fan_out, dtype=dtype))

        return cls(
            variant=variant, embed_dim=embed_dim, hidden1=hidden1,
            hidden2=hidden2, n_classes=n_classes, dropout_rate=dropout_rate,
            lin1=he(in_dim, hidden1),
            bn1=BatchNormState.create(hidden1, bn_eps, bn_momentum, dtype),
            lin2=he(hidden1, hidden2),
            bn2=BatchNormState.create(hidden2, bn_eps, bn_momentum, dtype),
            head=he(hidden2, n_classes),
        )

    def trainable_arrays(self) -> dict[str, np.ndarray]:
        """Live references to every optimizable array, in declaration order."""
        return {
            "lin1.w": self.lin1.w, "lin1.b": self.lin1.b,
            "bn1.gamma": self.bn1.gamma, "bn1.beta": self.bn1.beta,
            "lin2.w": self.lin2.w, "lin2.b": self.lin2.b,
            "bn2.gamma": self.bn2.gamma, "bn2.beta": self.bn2.beta,
            "head.w": self.head.w, "head.b": self.head.b,
        }

    def all_arrays(self) -> dict[str, np.ndarray]:
        """Trainable arrays plus BN running statistics (checkpoint order)."""
        return {
            "lin1.w": self.lin1.w, "lin1.b": self.lin1.b,
            "bn1.gamma": self.bn1.gamma, "bn1.beta": self.bn1.beta,
            "bn1.running_mean": self.bn1.running_mean,
            "bn1.running_var": self.bn1.running_var,
            "lin2.w": self.lin2.w, "lin2.b": self.lin2.b,
            "bn2.gamma": self.bn2.gamma, "bn2.beta": self.bn2.beta,
            "bn2.running_mean": self.bn2.running_mean,
            "bn2.running_var": self.bn2.running_var,
            "head.w": self.head.w, "head.b": self.head.b,
        }

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.variant, self.embed_dim, self.hidden1, self.hidden2,
            self.n_classes, self.dropout_rate,
            self.lin1.copy(), self.bn1.copy(), self.lin2.copy(), self.bn2.copy(),
            self.head.copy(),
        )


@dataclass
class ModalBatch:
    """One batch of embeddings; the image channel is always present.

    Rows where text_present is False must never have their text read, so a
    batch with no text at all may pass text=None.
    """

    image: np.ndarray
    text: Optional[np.ndarray]
    text_present: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.image.ndim != 2:
            raise DimensionError("image embeddings must be 2-D")
        b = self.image.shape[0]
        self.text_present = np.asarray(self.text_present, dtype=bool)
        if self.text_present.shape != (b,):
            raise DimensionError("text_present must have one flag per row")
        if self.text_present.any():
            if self.text is None:
                raise DimensionError("text rows flagged present but text is None")
            if self.text.shape != self.image.shape:
                raise DimensionError(
                    f"text{self.text.shape} does not match image{self.image.shape}"
                )
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (b,):
                raise DimensionError("labels must have one entry per row")

    @property
    def size(self) -> int:
        return self.image.shape[0]


def _need_rng(params: ModelParams, mode: str, rng):
    if mode == "train" and params.dropout_rate > 0.0 and rng is None:
        raise ConfigError("train-mode forward with dropout needs an rng")
    return rng if rng is not None else np.random.default_rng(0)


def _stack_pass(params: ModelParams, x: np.ndarray, mode: str,
                rng: Optional[np.random.Generator]):
    """One full trip through block1, block2 and the head. Returns (logits, caches)."""
    if x.shape[1] != params.input_dim:
        raise DimensionError(
            f"stack input has {x.shape[1]} features, expected {params.input_dim}"
        )
    rate = params.dropout_rate
    z1, lin1_cache = linear_forward(x, params.lin1.w, params.lin1.b)
    n1, bn1_cache = batchnorm_forward(z1, params.bn1, mode)
    r1 = relu(n1)
    d1, mask1 = dropout(r1, rate, rng, mode)
    z2, lin2_cache = linear_forward(d1, params.lin2.w, params.lin2.b)
    n2, bn2_cache = batchnorm_forward(z2, params.bn2, mode)
    r2 = relu(n2)
    d2, mask2 = dropout(r2, rate, rng, mode)
    logits, head_cache = linear_forward(d2, params.head.w, params.head.b)
    caches = {
        "lin1": lin1_cache, "bn1": bn1_cache, "relu1": n1, "drop1": mask1,
        "lin2": lin2_cache, "bn2": bn2_cache, "relu2": n2, "drop2": mask2,
        "head": head_cache, "rate": rate,
    }
    return logits, caches


def _stack_grads(dlogits: np.ndarray, caches: dict):
    """Backward through one stack pass. Returns (dx, {name: grad})."""
    rate = caches["rate"]
    dd2, dhw, dhb = linear_backward(dlogits, caches["head"])
    dr2 = dropout_backward(dd2, caches["drop2"], rate)
    dn2 = relu_backward(dr2, caches["relu2"])
    dz2, dg2, db2_ = batchnorm_backward(dn2, caches["bn2"])
    dd1, dw2, db2 = linear_backward(dz2, caches["lin2"])
    dr1 = dropout_backward(dd1, caches["drop1"], rate)
    dn1 = relu_backward(dr1, caches["relu1"])
    dz1, dg1, db1_ = batchnorm_backward(dn1, caches["bn1"])
    dx, dw1, db1 = linear_backward(dz1, caches["lin1"])
    grads = {
        "lin1.w": dw1, "lin1.b": db1, "bn1.gamma": dg1, "bn1.beta": db1_,
        "lin2.w": dw2, "lin2.b": db2, "bn2.gamma": dg2, "bn2.beta": db2_,
        "head.w": dhw, "head.b": dhb,
    }
    return dx, grads


def shared_stack_forward(params: ModelParams, x: np.ndarray, mode: str,
                         rng: Optional[np.random.Generator] = None):
    """Run one matrix of embeddings through the stack. Returns (logits, tape)."""
    rng = _need_rng(params, mode, rng)
    logits, caches = _stack_pass(params, x, mode, rng)
    tape = GradTape({"kind": "stack", "mode": mode, "passes": [caches]})
    return logits, tape


def sr_forward(params: ModelParams, batch: ModalBatch, mode: str,
               rng: Optional[np.random.Generator] = None, pool_bn: bool = True):
    """Shared-representation forward: per-modality logits, summed where text exists.

    In train mode with pool_bn (the default) the text rows that are present
    and every image row are stacked into one matrix so BN statistics describe
    the shared space; with pool_bn=False each modality gets its own
    train-mode pass (text first). Eval mode uses running stats, so the two
    batching styles coincide and a single stacked pass is used.

    Returns (fused_logits, tape).
    """
    if params.variant != SR:
        raise ConfigError(f"sr_forward needs SR params, got variant {params.variant!r}")
    rng = _need_rng(params, mode, rng)
    present = np.flatnonzero(batch.text_present)
    n_text = present.size

    if mode == "train" and not pool_bn and n_text > 0:
        text_logits, text_caches = _stack_pass(params, batch.text[present], mode, rng)
        image_logits, image_caches = _stack_pass(params, batch.image, mode, rng)
        passes = [text_caches, image_caches]
    else:
        if n_text > 0:
            stacked = np.concatenate([batch.text[present], batch.image], axis=0)
        else:
            stacked = batch.image
        logits_stacked, caches = _stack_pass(params, stacked, mode, rng)
        text_logits = logits_stacked[:n_text]
        image_logits = logits_stacked[n_text:]
        passes = [caches]

    fused = image_logits.copy()
    if n_text > 0:
        fused[present] = fused[present] + text_logits
    tape = GradTape({
        "kind": SR, "mode": mode, "passes": passes,
        "present": present, "batch_size": batch.size,
        "pooled": len(passes) == 1,
    })
    return fused, tape


def fr_forward(params: ModelParams, batch: ModalBatch, mode: str,
               rng: Optional[np.random.Generator] = None):
    """Fused-representation forward: concat [text ; image], zero-filling absent text."""
    if params.variant != FR:
        raise ConfigError(f"fr_forward needs FR params, got variant {params.variant!r}")
    rng = _need_rng(params, mode, rng)
    d = batch.image.shape[1]
    text_part = np.zeros((batch.size, d), dtype=batch.image.dtype)
    present = np.flatnonzero(batch.text_present)
    if present.size:
        text_part[present] = batch.text[present]
    x = np.concatenate([text_part, batch.image], axis=1)
    logits, caches = _stack_pass(params, x, mode, rng)
    tape = GradTape({"kind": FR, "mode": mode, "passes": [caches],
                     "present": present, "batch_size": batch.size})
    return logits, tape


def _sum_grads(a: dict, b: dict) -> dict:
    return {k: a[k] + b[k] for k in a}


def model_backward(tape: GradTape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for any forward tape (consumes the tape)."""
    entries = tape.consume()
    if entries["mode"] != "train":
        raise UsageError("backward requires a train-mode forward tape")
    kind = entries["kind"]
    if kind == SR:
        present = entries["present"]
        if entries["pooled"]:
            dstacked = (np.concatenate([dlogits[present], dlogits], axis=0)
                        if present.size else dlogits)
            _, grads = _stack_grads(dstacked, entries["passes"][0])
            return grads
        # separate passes: text branch then image branch, grads summed
        text_caches, image_caches = entries["passes"]
        _, text_grads = _stack_grads(dlogits[present], text_caches)
        _, image_grads = _stack_grads(dlogits, image_caches)
        return _sum_grads(text_grads, image_grads)
    if kind in (FR, "stack"):
        _, grads = _stack_grads(dlogits, entries["passes"][0])
        return grads
    raise UsageError(f"unknown tape kind {kind!r}")


def sr_backward(tape: GradTape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients through the logit-sum fusion into the shared parameter set."""
    if tape.entries.get("kind") != SR:
        raise UsageError("sr_backward requires a tape from sr_forward")
    return model_backward(tape, dlogits)


def fr_backward(tape: GradTape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    if tape.entries.get("kind") != FR:
        raise UsageError("fr_backward requires a tape from fr_forward")
    return model_backward(tape, dlogits)


def forward(params: ModelParams, batch: ModalBatch, mode: str,
            rng: Optional[np.random.Generator] = None, pool_bn: bool = True):
    """Variant dispatch used by the training/evaluation harness."""
    if params.variant == SR:
        return sr_forward(params, batch, mode, rng, pool_bn)
    return fr_forward(params, batch, mode, rng)


def predict(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError("predict expects a [batch x classes] matrix, C >= 2")
    if np.isnan(logits).any():
        raise NumericError("NaN logits")
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(fh, shape, what: str) -> np.ndarray:
    count = int(np.prod(shape))
    raw = fh.read(count * 4)
    if len(raw) != count * 4:
        raise LoadError(f"checkpoint truncated while reading {what}")
    arr = np.frombuffer(raw, dtype="<f4", count=count).reshape(shape)
    arr = arr.astype(DTYPE)  # native-endian copy, writable
    if not np.all(np.isfinite(arr)):
        raise LoadError(f"non-finite values in checkpoint tensor {what}")
    return arr


def save_checkpoint(path, params: ModelParams, optimizer_state=None) -> None:
    """Versioned binary container; tensors little-endian float32, bit-exact."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IBIIIIf", CHECKPOINT_VERSION,
                             0 if params.variant == SR else 1,
                             params.embed_dim, params.hidden1, params.hidden2,
                             params.n_classes, np.float32(params.dropout_rate)))
        for arr in params.all_arrays().values():
            _write_array(fh, arr)
        if optimizer_state is not None:
            fh.write(_OPT_SECTION)
            fh.write(struct.pack("<Qdddd", optimizer_state.step,
                                 optimizer_state.beta1, optimizer_state.beta2,
                                 optimizer_state.eps, optimizer_state.weight_decay))
            names = sorted(optimizer_state.decay_names)
            fh.write(struct.pack("<I", len(names)))
            for name in names:
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
            for moment in (optimizer_state.m, optimizer_state.v):
                for name in params.trainable_arrays():
                    _write_array(fh, moment[name])


def load_checkpoint(path, bn_eps: float = BN_EPS, bn_momentum: float = BN_MOMENTUM):
    """Load a checkpoint; returns (params, optimizer_state_or_None).

    BN eps/momentum are build constants, not serialized; pass overrides when
    a model was trained with non-default values.
    """
    from .optim import AdamWState

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise LoadError(f"bad checkpoint magic {magic!r}")
        header = fh.read(struct.calcsize("<IBIIIIf"))
        if len(header) != struct.calcsize("<IBIIIIf"):
            raise LoadError("checkpoint header truncated")
        version, variant_code, d, h1, h2, c, rate = struct.unpack("<IBIIIIf", header)
        if version != CHECKPOINT_VERSION:
            raise LoadError(f"unsupported checkpoint version {version}")
        if variant_code not in (0, 1):
            raise LoadError(f"unknown variant code {variant_code}")
        variant = SR if variant_code == 0 else FR
        in_dim = d if variant == SR else 2 * d

        def bn(width, tag):
            gamma = _read_array(fh, (width,), f"{tag}.gamma")
            beta = _read_array(fh, (width,), f"{tag}.beta")
            rmean = _read_array(fh, (width,), f"{tag}.running_mean")
            rvar = _read_array(fh, (width,), f"{tag}.running_var")
            if (rvar < 0).any():
                raise LoadError(f"negative running variance in {tag}")
            return BatchNormState(gamma, beta, rmean, rvar, bn_eps, bn_momentum)

        lin1 = LinearParams(_read_array(fh, (in_dim, h1), "lin1.w"),
                            _read_array(fh, (h1,), "lin1.b"))
        bn1 = bn(h1, "bn1")
        lin2 = LinearParams(_read_array(fh, (h1, h2), "lin2.w"),
                            _read_array(fh, (h2,), "lin2.b"))
        bn2 = bn(h2, "bn2")
        head = LinearParams(_read_array(fh, (h2, c), "head.w"),
                            _read_array(fh, (c,), "head.b"))
        params = ModelParams(variant, d, h1, h2, c, float(rate),
                             lin1, bn1, lin2, bn2, head)

        opt_state = None
        tag = fh.read(4)
        if tag == _OPT_SECTION:
            step, beta1, beta2, eps, wd = struct.unpack("<Qdddd", fh.read(40))
            (n_names,) = struct.unpack("<I", fh.read(4))
            decay = []
            for _ in range(n_names):
                (ln,) = struct.unpack("<H", fh.read(2))
                decay.append(fh.read(ln).decode("utf-8"))
            shapes = {n: a.shape for n, a in params.trainable_arrays().items()}
            m = {n: _read_array(fh, s, f"m.{n}") for n, s in shapes.items()}
            v = {n: _read_array(fh, s, f"v.{n}") for n, s in shapes.items()}
            opt_state = AdamWState(step=step, m=m, v=v, beta1=beta1, beta2=beta2,
                                   eps=eps, weight_decay=wd,
                                   decay_names=frozenset(decay))
        elif tag:
            raise LoadError(f"unexpected trailing section {tag!r}")
    return params, opt_state
