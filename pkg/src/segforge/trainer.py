"""Training loop: Adam + cosine annealing + early stopping + checkpoints.

Determinism contract: for a fixed (model init seed, trainer seed, config) the
whole run is bit-reproducible. Each epoch shuffles with its own generator
seeded by (seed, epoch), so resuming from a checkpoint replays the exact
trajectory an uninterrupted run would have taken.

Checkpoint wire format (little-endian throughout):
    b"SEGF" | u16 version | 4 length-prefixed (u32) sections | u32 CRC-32
Sections: model config as key=value text, named parameter tensors, Adam state
(step counter plus first/second moments per parameter), history CSV. The CRC
covers every preceding byte.
"""

from __future__ import annotations

import io
import math
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .autodiff import Tensor, backward
from .metrics import dice_coeff
from .model import Model, ModelConfig, build_unet, forward
from .preprocess import SlicePair

CHECKPOINT_MAGIC = b"SEGF"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class BadFractionsError(ValueError):
    """Split fractions are negative or do not leave room for training data."""


class CheckpointError(Exception):
    """Base class for checkpoint parse failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptError(CheckpointError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_min: float = 1e-6
    batch_size: int = 16
    max_epochs: int = 25
    patience: int = 5
    val_fraction: float = 0.2
    loss: str = "bce_dice"
    loss_config: losses.LossConfig = field(default_factory=losses.LossConfig)
    seed: int = 0

    def __post_init__(self):
        # lr 0 is allowed so a frozen-model run can exercise early stopping
        if self.lr_min < 0 or self.lr0 < self.lr_min:
            raise ValueError(f"need 0 <= lr_min <= lr0, got {self.lr_min}, {self.lr0}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0,1), got {self.val_fraction}")
        if self.loss not in losses.LOSS_NAMES:
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def for_model(cls, model: Model) -> "AdamState":
        return cls(
            t=0,
            m={k: np.zeros_like(p.data) for k, p in model.params.items()},
            v={k: np.zeros_like(p.data) for k, p in model.params.items()},
        )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_dice: float
    val_accuracy: float
    lr: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    CSV_HEADER = "epoch,train_loss,val_loss,val_dice,val_accuracy,lr"

    def __len__(self):
        return len(self.records)

    def append(self, rec: EpochRecord):
        self.records.append(rec)

    def best_epoch(self) -> int | None:
        """Index of the record with the highest validation Dice, first wins."""
        if not self.records:
            return None
        dices = [r.val_dice for r in self.records]
        return int(np.argmax(dices))

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_dice!r},"
                f"{r.val_accuracy!r},{r.lr!r}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "History":
        lines = [ln for ln in text.split("\n") if ln]
        if not lines or lines[0] != cls.CSV_HEADER:
            raise CorruptError("history CSV header missing or unexpected")
        recs = []
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != 6:
                raise CorruptError(f"bad history row: {ln!r}")
            recs.append(
                EpochRecord(
                    epoch=int(parts[0]),
                    train_loss=float(parts[1]),
                    val_loss=float(parts[2]),
                    val_dice=float(parts[3]),
                    val_accuracy=float(parts[4]),
                    lr=float(parts[5]),
                )
            )
        return cls(records=recs)


def split_dataset(pairs, val_fraction: float, test_fraction: float, seed: int):
    """Seeded shuffle then partition into (train, val, test); exhaustive."""
    if val_fraction < 0 or test_fraction < 0:
        raise BadFractionsError("fractions must be non-negative")
    if val_fraction + test_fraction >= 1.0:
        raise BadFractionsError("val + test fractions must sum to < 1")
    n = len(pairs)
    n_val = int(n * val_fraction)
    n_test = int(n * test_fraction)
    n_train = n - n_val - n_test
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD5)))
    order = rng.permutation(n)
    train = [pairs[i] for i in order[:n_train]]
    val = [pairs[i] for i in order[n_train : n_train + n_val]]
    test = [pairs[i] for i in order[n_train + n_val :]]
    return train, val, test


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Half-cosine decay from lr0 at epoch 0 to lr_min at max_epochs."""
    if not 0 <= epoch <= cfg.max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.max_epochs}]")
    span = cfg.lr0 - cfg.lr_min
    return cfg.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * epoch / cfg.max_epochs))


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One Adam update over every parameter that accumulated a gradient."""
    state.t += 1
    b1c = 1.0 - ADAM_BETA1 ** state.t
    b2c = 1.0 - ADAM_BETA2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        mhat = m / b1c
        vhat = v / b2c
        p.data -= np.float32(lr) * mhat / (np.sqrt(vhat) + ADAM_EPS)


def stack_batch(pairs: list[SlicePair], idx) -> tuple[np.ndarray, np.ndarray]:
    imgs = np.stack([pairs[i].image for i in idx])[:, None, :, :].astype(np.float32)
    masks = np.stack([pairs[i].mask for i in idx])[:, None, :, :].astype(np.uint8)
    return imgs, masks


def _batch_indices(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def evaluate_split(model: Model, pairs: list[SlicePair], cfg: TrainConfig):
    """(mean loss, mean per-slice Dice at threshold 0.5, pooled pixel accuracy)."""
    loss_sum = 0.0
    n_seen = 0
    dices = []
    correct = 0
    total = 0
    order = np.arange(len(pairs))
    for idx in _batch_indices(len(pairs), cfg.batch_size, order):
        x, t = stack_batch(pairs, idx)
        p = forward(model, x)
        loss = losses.batch_loss(cfg.loss, p, t, cfg.loss_config)
        loss_sum += loss.item() * len(idx)
        n_seen += len(idx)
        pred = (p.data > 0.5).astype(np.uint8)
        for k in range(len(idx)):
            dices.append(dice_coeff(pred[k, 0], t[k, 0]))
        correct += int(np.count_nonzero(pred == t))
        total += t.size
    return loss_sum / n_seen, float(np.mean(dices)), correct / total


@dataclass
class TrainResult:
    best_model: Model
    best_epoch: int
    final_model: Model
    adam: AdamState
    history: History


class EmptyDatasetError(ValueError):
    pass


def train(
    model: Model,
    train_set: list[SlicePair],
    val_set: list[SlicePair],
    cfg: TrainConfig,
    *,
    adam: AdamState | None = None,
    history: History | None = None,
    initial_best: tuple[dict[str, np.ndarray], float, int] | None = None,
) -> TrainResult:
    """Run epochs until max_epochs or early stop on stalled validation Dice.

    ``adam``/``history``/``initial_best`` allow resuming: history length sets
    the starting epoch, and ``initial_best`` carries (params, dice, epoch) of
    the best model seen so far so best-model tracking survives a restart.
    """
    if not train_set or not val_set:
        raise EmptyDatasetError("train and validation sets must be non-empty")
    adam = adam if adam is not None else AdamState.for_model(model)
    history = history if history is not None else History()
    start_epoch = len(history)

    if initial_best is not None:
        best_params, best_dice, best_epoch = initial_best
        best_params = {k: v.copy() for k, v in best_params.items()}
    elif history.records:
        # without the saved tensors the historical best cannot be restored;
        # fall back to tracking improvements over the recorded best value
        best_epoch = history.best_epoch()
        best_dice = history.records[best_epoch].val_dice
        best_params = model.clone_param_data()
    else:
        best_params, best_dice, best_epoch = None, -np.inf, -1
    since_best = start_epoch - 1 - best_epoch if history.records else 0

    for epoch in range(start_epoch, cfg.max_epochs):
        lr = cosine_lr(epoch, cfg)
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch)))
        order = rng.permutation(len(train_set))

        loss_sum = 0.0
        n_seen = 0
        for idx in _batch_indices(len(train_set), cfg.batch_size, order):
            x, t = stack_batch(train_set, idx)
            p = forward(model, x)
            loss = losses.batch_loss(cfg.loss, p, t, cfg.loss_config)
            for param in model.params.values():
                param.zero_grad()
            backward(loss)
            adam_step(model.params, adam, lr)
            loss_sum += loss.item() * len(idx)
            n_seen += len(idx)

        val_loss, val_dice, val_acc = evaluate_split(model, val_set, cfg)
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / n_seen,
                val_loss=val_loss,
                val_dice=val_dice,
                val_accuracy=val_acc,
                lr=lr,
            )
        )

        if val_dice > best_dice:
            best_dice = val_dice
            best_epoch = epoch
            best_params = model.clone_param_data()
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.patience:
            break

    best_model = build_unet(model.config)
    best_model.load_param_data(best_params if best_params is not None else model.clone_param_data())
    return TrainResult(
        best_model=best_model,
        best_epoch=best_epoch,
        final_model=model,
        adam=adam,
        history=history,
    )


# -- checkpoint serialization -----------------------------------------------

def _pack_section(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def _pack_named_array(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    out = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return out


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptError("unexpected end of checkpoint data")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_named_array(r: _Reader) -> tuple[str, np.ndarray]:
    (nlen,) = r.unpack("<H")
    name = r.take(nlen).decode("utf-8")
    (ndim,) = r.unpack("<B")
    shape = r.unpack(f"<{ndim}I")
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
    return name, arr


def _config_text(cfg: ModelConfig) -> str:
    return (
        f"depth={cfg.depth}\n"
        f"base_channels={cfg.base_channels}\n"
        f"in_channels={cfg.in_channels}\n"
        f"input_h={cfg.input_size[0]}\n"
        f"input_w={cfg.input_size[1]}\n"
        f"attention_enabled={int(cfg.attention_enabled)}\n"
        f"init_seed={cfg.init_seed}\n"
    )


def _config_from_text(text: str) -> ModelConfig:
    kv = {}
    for ln in text.split("\n"):
        if not ln:
            continue
        if "=" not in ln:
            raise CorruptError(f"bad config line {ln!r}")
        k, v = ln.split("=", 1)
        kv[k] = v
    try:
        return ModelConfig(
            depth=int(kv["depth"]),
            base_channels=int(kv["base_channels"]),
            in_channels=int(kv["in_channels"]),
            input_size=(int(kv["input_h"]), int(kv["input_w"])),
            attention_enabled=bool(int(kv["attention_enabled"])),
            init_seed=int(kv["init_seed"]),
        )
    except KeyError as exc:
        raise CorruptError(f"config key missing: {exc}") from exc


def save_checkpoint(model: Model, state: AdamState, history: History) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))

    buf.write(_pack_section(_config_text(model.config).encode("utf-8")))

    params = io.BytesIO()
    params.write(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        params.write(_pack_named_array(name, t.data))
    buf.write(_pack_section(params.getvalue()))

    moments = io.BytesIO()
    moments.write(struct.pack("<Q", state.t))
    moments.write(struct.pack("<I", len(model.params)))
    for name in model.params:
        moments.write(_pack_named_array(name, state.m[name]))
        moments.write(_pack_named_array(name, state.v[name]))
    buf.write(_pack_section(moments.getvalue()))

    buf.write(_pack_section(history.to_csv().encode("utf-8")))

    data = buf.getvalue()
    return data + struct.pack("<I", zlib.crc32(data))


def load_checkpoint(data: bytes) -> tuple[Model, AdamState, History]:
    if len(data) < 10:
        raise CorruptError("checkpoint shorter than its fixed preamble")
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError("missing SEGF magic")
    if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise CorruptError("CRC-32 mismatch")
    r = _Reader(data[:-4])
    r.take(4)
    (version,) = r.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")

    def section() -> _Reader:
        (n,) = r.unpack("<I")
        return _Reader(r.take(n))

    cfg = _config_from_text(section().data.decode("utf-8"))
    model = build_unet(cfg)

    pr = _Reader(section().data)
    (count,) = pr.unpack("<I")
    if count != len(model.params):
        raise CorruptError(f"parameter block count {count} != {len(model.params)}")
    blob = {}
    for _ in range(count):
        name, arr = _read_named_array(pr)
        blob[name] = arr
    model.load_param_data(blob)

    mr = _Reader(section().data)
    (t_step,) = mr.unpack("<Q")
    (count,) = mr.unpack("<I")
    if count != len(model.params):
        raise CorruptError("moment block count mismatch")
    m = {}
    v = {}
    for _ in range(count):
        name, arr = _read_named_array(mr)
        m[name] = arr
        name2, arr2 = _read_named_array(mr)
        if name2 != name:
            raise CorruptError("moment blocks misaligned")
        v[name] = arr2
    state = AdamState(t=t_step, m=m, v=v)

    history = History.from_csv(section().data.decode("utf-8"))
    return model, state, history


def write_checkpoint_file(path, model: Model, state: AdamState, history: History) -> None:
    """Atomic write: serialize to a temp file, then rename into place."""
    data = save_checkpoint(model, state, history)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, str(path))


def read_checkpoint_file(path) -> tuple[Model, AdamState, History]:
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read())
