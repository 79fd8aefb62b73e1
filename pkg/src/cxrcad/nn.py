"""Micro CNN with manual backpropagation.

VGG-style stacks of 3x3 same-padding convolutions with 2x2 max pools,
grouped into blocks, followed by a flatten -> dense -> relu -> dense ->
relu -> dense -> softmax head. Blocks at or below `freeze_below_block`
are frozen: their gradients are never computed and their tensors are
never touched by the optimizer, which is the transfer-learning mechanism
exercised here. Everything runs in float64 so finite-difference gradient
checks are decisive.
"""

from __future__ import annotations

import struct
from copy import deepcopy
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment
from .errors import DataError, NumericalError
from .image import MultiChannelSample

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1

HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc,lr"


@dataclass
class LayerSpec:
    kind: str                 # conv | relu | pool | flatten | dense | softmax
    in_ch: int = 0            # channels (conv) or nodes (dense)
    out_ch: int = 0
    block_id: int = 0
    name: str = ""


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]
    in_channels: int
    input_size: int
    freeze_below_block: int = 0

    def __post_init__(self):
        flattens = [l for l in self.layers if l.kind == "flatten"]
        if len(flattens) != 1:
            raise ValueError("network must contain exactly one flatten layer")
        if self.layers[-1].kind != "softmax":
            raise ValueError("network must end with softmax")

    def is_trainable(self, layer: LayerSpec) -> bool:
        return layer.block_id > self.freeze_below_block

    def param_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind in ("conv", "dense")]

    def trainable_param_names(self) -> list[str]:
        names = []
        for layer in self.param_layers():
            if self.is_trainable(layer):
                names.extend((f"{layer.name}.w", f"{layer.name}.b"))
        return names

    def frozen_param_names(self) -> list[str]:
        trainable = set(self.trainable_param_names())
        return [
            f"{l.name}.{p}"
            for l in self.param_layers()
            for p in ("w", "b")
            if f"{l.name}.{p}" not in trainable
        ]

    @property
    def n_pools(self) -> int:
        return sum(1 for l in self.layers if l.kind == "pool")


def build_network(
    in_channels: int = 3,
    input_size: int = 224,
    conv_blocks: tuple = ((4,), (8,), (8,), (16,), (16,)),
    head: tuple = (256, 128),
    classes: int = 3,
    freeze_below_block: int = 0,
) -> NetworkSpec:
    """Assemble the block structure.

    `conv_blocks` gives the output width of each convolution per block;
    each block ends with a 2x2 max pool. The head occupies one final
    block so `freeze_below_block = len(conv_blocks)` freezes every
    convolution and trains only the head.
    """
    conv_blocks = tuple((w,) if isinstance(w, int) else tuple(w) for w in conv_blocks)
    layers: list[LayerSpec] = []
    ch = in_channels
    size = input_size
    for block, widths in enumerate(conv_blocks, start=1):
        for i, width in enumerate(widths, start=1):
            layers.append(
                LayerSpec("conv", ch, width, block, name=f"b{block}.conv{i}")
            )
            layers.append(LayerSpec("relu", block_id=block))
            ch = width
        layers.append(LayerSpec("pool", block_id=block))
        if size % 2 != 0:
            raise ValueError(f"input size {input_size} does not survive {block} pools")
        size //= 2

    head_block = len(conv_blocks) + 1
    layers.append(LayerSpec("flatten", block_id=head_block))
    nodes = ch * size * size
    for i, width in enumerate(head, start=1):
        layers.append(
            LayerSpec("dense", nodes, width, head_block, name=f"b{head_block}.dense{i}")
        )
        layers.append(LayerSpec("relu", block_id=head_block))
        nodes = width
    layers.append(
        LayerSpec(
            "dense", nodes, classes, head_block, name=f"b{head_block}.dense{len(head) + 1}"
        )
    )
    layers.append(LayerSpec("softmax", block_id=head_block))
    return NetworkSpec(layers, in_channels, input_size, freeze_below_block)


def init_params(spec: NetworkSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases, in parameter-layer order."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for layer in spec.param_layers():
        if layer.kind == "conv":
            fan_in = layer.in_ch * 9
            shape = (layer.out_ch, layer.in_ch, 3, 3)
        else:
            fan_in = layer.in_ch
            shape = (layer.in_ch, layer.out_ch)
        limit = np.sqrt(6.0 / fan_in)
        params[f"{layer.name}.w"] = rng.uniform(-limit, limit, size=shape)
        params[f"{layer.name}.b"] = np.zeros(layer.out_ch)
    return params


def param_count(spec: NetworkSpec) -> tuple[int, int]:
    """Return (total, trainable) parameter counts."""
    total = 0
    trainable = 0
    for layer in spec.param_layers():
        if layer.kind == "conv":
            n = layer.out_ch * layer.in_ch * 9 + layer.out_ch
        else:
            n = layer.in_ch * layer.out_ch + layer.out_ch
        total += n
        if spec.is_trainable(layer):
            trainable += n
    return total, trainable


def forward(
    spec: NetworkSpec, params: dict, x: np.ndarray, keep_cache: bool = True
) -> tuple[np.ndarray, list]:
    """Run the network on a (B, C, H, W) batch.

    Returns (probs, caches); probs rows are nonnegative and sum to 1.
    Pass keep_cache=False for inference to skip storing activations.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValueError(
            f"expected (B, {spec.in_channels}, H, W) input, got shape {x.shape}"
        )
    stride = 1 << spec.n_pools
    if x.shape[2] % stride or x.shape[3] % stride:
        raise ValueError(f"input {x.shape[2]}x{x.shape[3]} incompatible with pooling depth")

    caches: list = []
    for layer in spec.layers:
        if layer.kind == "conv":
            x, cache = _conv_forward(x, params[f"{layer.name}.w"], params[f"{layer.name}.b"])
        elif layer.kind == "relu":
            cache = x > 0
            x = np.maximum(x, 0.0)
        elif layer.kind == "pool":
            x, cache = _pool_forward(x)
        elif layer.kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "dense":
            cache = x
            x = x @ params[f"{layer.name}.w"] + params[f"{layer.name}.b"]
        else:  # softmax
            logits = x
            shifted = logits - logits.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            x = exp / exp.sum(axis=1, keepdims=True)
            cache = (logits, x)
        caches.append(cache if keep_cache else None)
    return x, caches


def loss_and_grad(
    spec: NetworkSpec, params: dict, x: np.ndarray, labels
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and gradients for the trainable parameters only."""
    loss, grads, _ = _loss_grad_probs(spec, params, x, labels)
    return loss, grads


def _loss_grad_probs(spec, params, x, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0 or labels.dtype.kind not in "iu":
        raise ValueError("labels must be a nonempty 1-D integer sequence")
    n_classes = spec.layers[-2].out_ch
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must be in [0, {n_classes - 1}]")

    probs, caches = forward(spec, params, x)
    batch = probs.shape[0]
    logits, _ = caches[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(batch), labels].mean())

    grads: dict[str, np.ndarray] = {}
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch), labels] = 1.0
    delta = (probs - onehot) / batch

    # Stop backpropagating once every remaining layer below is frozen.
    trainable_idx = [
        i
        for i, layer in enumerate(spec.layers)
        if layer.kind in ("conv", "dense") and spec.is_trainable(layer)
    ]
    lowest = trainable_idx[0] if trainable_idx else len(spec.layers)

    for i in range(len(spec.layers) - 1, -1, -1):
        if i < lowest:
            break
        layer = spec.layers[i]
        cache = caches[i]
        if layer.kind == "softmax":
            continue  # delta already holds d(loss)/d(logits)
        if layer.kind == "dense":
            x_in = cache
            if spec.is_trainable(layer):
                grads[f"{layer.name}.w"] = x_in.T @ delta
                grads[f"{layer.name}.b"] = delta.sum(axis=0)
            if i > lowest:
                delta = delta @ params[f"{layer.name}.w"].T
        elif layer.kind == "flatten":
            delta = delta.reshape(cache)
        elif layer.kind == "relu":
            delta = delta * cache
        elif layer.kind == "pool":
            delta = _pool_backward(delta, cache)
        elif layer.kind == "conv":
            dw, db, delta = _conv_backward(
                delta, cache, params[f"{layer.name}.w"], need_dx=i > lowest
            )
            if spec.is_trainable(layer):
                grads[f"{layer.name}.w"] = dw
                grads[f"{layer.name}.b"] = db
    return loss, grads, probs


@dataclass
class AdamState:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """One bias-corrected Adam update, in place, touching only grad keys."""
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for name in sorted(grads):
        grad = grads[name]
        if grad.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(grad))
        v = state.v.setdefault(name, np.zeros_like(grad))
        m += (1.0 - state.beta1) * (grad - m)
        v += (1.0 - state.beta2) * (grad * grad - v)
        params[name] -= state.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + state.epsilon)


@dataclass
class PlateauSchedule:
    """Cut the learning rate by `factor` after `patience` stale epochs."""

    patience: int = 5
    factor: float = 0.8
    min_lr: float = 1e-8
    best: float = float("inf")
    wait: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must be in (0, 1)")


def schedule_update(sched: PlateauSchedule, val_loss: float, state: AdamState) -> None:
    """Track validation loss; reduce lr after `patience` non-improvements."""
    if val_loss < sched.best:
        sched.best = val_loss
        sched.wait = 0
        return
    sched.wait += 1
    if sched.wait >= sched.patience:
        state.learning_rate = max(sched.min_lr, state.learning_rate * sched.factor)
        sched.wait = 0


@dataclass
class TrainConfig:
    batch_size: int = 4
    max_epochs: int = 200
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 5
    lr_factor: float = 0.8
    min_lr: float = 1e-8
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[EpochStats]
    best_epoch: int
    best_val_acc: float


def train(
    spec: NetworkSpec,
    train_set: list[MultiChannelSample],
    val_set: list[MultiChannelSample],
    cfg: TrainConfig,
    augment_cfg: AugmentConfig | None = None,
    initial_params: dict | None = None,
) -> TrainResult:
    """Seeded training loop with augmentation and best-checkpoint selection.

    Shuffles per epoch, augments training batches only (one rng stream
    per sample index, so loader parallelism cannot change results), and
    keeps the parameters of the epoch with the highest validation
    accuracy, earliest epoch on ties.
    """
    if not train_set or not val_set:
        raise DataError("train and validation sets must be nonempty")
    if any(s.label is None for s in train_set) or any(s.label is None for s in val_set):
        raise DataError("training requires labeled samples")

    params = deepcopy(initial_params) if initial_params else init_params(spec, cfg.seed)
    state = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    sched = PlateauSchedule(cfg.patience, cfg.lr_factor, cfg.min_lr)
    labels = np.array([s.label for s in train_set])

    history: list[EpochStats] = []
    best_params = deepcopy(params)
    best_acc = -1.0
    best_epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng((cfg.seed, epoch, 0)).permutation(len(train_set))
        total_loss = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            planes = []
            for idx in batch_idx:
                sample = train_set[idx]
                if augment_cfg is not None:
                    stream = np.random.default_rng((cfg.seed, epoch, 1 + int(idx)))
                    sample = augment(sample, augment_cfg, stream)
                planes.append(sample.channels)
            x = np.stack(planes)
            y = labels[batch_idx]
            loss, grads, probs = _loss_grad_probs(spec, params, x, y)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            adam_step(state, params, grads)
            total_loss += loss * len(batch_idx)
            correct += int((probs.argmax(axis=1) == y).sum())

        val_loss, val_acc = evaluate(spec, params, val_set)
        lr_used = state.learning_rate
        schedule_update(sched, val_loss, state)
        history.append(
            EpochStats(
                epoch,
                total_loss / len(order),
                correct / len(order),
                val_loss,
                val_acc,
                lr_used,
            )
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = deepcopy(params)
    return TrainResult(best_params, history, best_epoch, best_acc)


def evaluate(
    spec: NetworkSpec, params: dict, samples: list[MultiChannelSample], batch_size: int = 16
) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over labeled samples."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = np.stack([s.channels for s in chunk])
        y = np.array([s.label for s in chunk])
        probs, caches = forward(spec, params, x)
        logits, _ = caches[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        total_loss += float(-log_probs[np.arange(len(chunk)), y].sum())
        correct += int((probs.argmax(axis=1) == y).sum())
    return total_loss / len(samples), correct / len(samples)


def predict(
    spec: NetworkSpec, params: dict, samples, batch_size: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Class indices (ties toward the lowest index) and probability rows."""
    if isinstance(samples, np.ndarray):
        batches = [samples[i : i + batch_size] for i in range(0, len(samples), batch_size)]
    else:
        arrays = [s.channels for s in samples]
        batches = [
            np.stack(arrays[i : i + batch_size]) for i in range(0, len(arrays), batch_size)
        ]
    probs_rows = []
    for batch in batches:
        probs, _ = forward(spec, params, batch, keep_cache=False)
        probs_rows.append(probs)
    probs = np.concatenate(probs_rows) if probs_rows else np.zeros((0, 3))
    return probs.argmax(axis=1), probs


def history_csv(history: list[EpochStats]) -> str:
    lines = [HISTORY_HEADER]
    for row in history:
        lines.append(
            f"{row.epoch},{row.train_loss!r},{row.train_acc!r},"
            f"{row.val_loss!r},{row.val_acc!r},{row.lr!r}"
        )
    return "\n".join(lines) + "\n"


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    """Binary checkpoint: CKPT magic, version, then named float64 tensors."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(params)))
        for name in sorted(params):
            tensor = np.asarray(params[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(tensor.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != CKPT_MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path}")
    pos = 12
    params: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            tensor = np.frombuffer(raw, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            params[name] = tensor.reshape(dims).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DataError(f"truncated checkpoint {path}: {exc}") from exc
    return params


def _conv_forward(x, w, b):
    batch, ch, h, width = x.shape
    out_ch = w.shape[0]
    padded = np.zeros((batch, ch, h + 2, width + 2))
    padded[:, :, 1:-1, 1:-1] = x
    cols = _im2col3(padded, h, width)
    wmat = w.reshape(out_ch, ch * 9)
    out = np.matmul(wmat[None], cols) + b[None, :, None]
    return out.reshape(batch, out_ch, h, width), (cols, x.shape)


def _conv_backward(dout, cache, w, need_dx):
    cols, x_shape = cache
    batch, ch, h, width = x_shape
    out_ch = w.shape[0]
    dmat = dout.reshape(batch, out_ch, h * width)
    dw = np.matmul(dmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dmat.sum(axis=(0, 2))
    if not need_dx:
        return dw, db, None
    wmat = w.reshape(out_ch, ch * 9)
    dcols = np.matmul(wmat.T[None], dmat)
    return dw, db, _col2im3(dcols, batch, ch, h, width)


def _im2col3(padded, h, w):
    batch, ch = padded.shape[:2]
    cols = np.empty((batch, ch, 9, h, w))
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[:, :, k] = padded[:, :, dy : dy + h, dx : dx + w]
            k += 1
    return cols.reshape(batch, ch * 9, h * w)


def _col2im3(dcols, batch, ch, h, w):
    dpadded = np.zeros((batch, ch, h + 2, w + 2))
    d = dcols.reshape(batch, ch, 9, h, w)
    k = 0
    for dy in range(3):
        for dx in range(3):
            dpadded[:, :, dy : dy + h, dx : dx + w] += d[:, :, k]
            k += 1
    return dpadded[:, :, 1:-1, 1:-1]


def _pool_forward(x):
    batch, ch, h, w = x.shape
    windows = x.reshape(batch, ch, h // 2, 2, w // 2, 2)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(batch, ch, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def _pool_backward(dout, cache):
    idx, x_shape = cache
    batch, ch, h, w = x_shape
    slots = np.zeros((batch, ch, h // 2, w // 2, 4))
    np.put_along_axis(slots, idx[..., None], dout[..., None], axis=-1)
    slots = slots.reshape(batch, ch, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return slots.reshape(batch, ch, h, w)
