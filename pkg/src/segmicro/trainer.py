"""Training loop with plateau LR reduction, early stopping and best-weight checkpoints.

Checkpoint file layout::

    b"SEGMICRO1\\n"
    uint64 little-endian: header length in bytes
    header: UTF-8 JSON {"model", "optimizer", "epoch", "val_loss", "seed",
                        "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    payload: little-endian float32 tensors in header order, offsets relative
             to the payload start
"""

import csv
import io
import json
import logging
import math
import os
import struct
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, optim
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .netgraph import Graph, ModelConfig, build_graph, predict

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SEGMICRO1\n"
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "seconds")
EVAL_BATCH = 8


@dataclass
class EarlyStopConfig:
    min_delta: float = 1e-4
    patience: int = 12


@dataclass
class ReduceLRConfig:
    factor: float = 0.2
    patience: int = 8
    min_delta: float = 1e-4


@dataclass
class TrainConfig:
    batch_size: int = 1
    max_epochs: int = 500
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    reduce_lr: ReduceLRConfig = field(default_factory=ReduceLRConfig)
    shuffle_seed: int = 0
    checkpoint_path: str = None
    # wall-clock cap in seconds, checked at epoch end; None disables it
    time_budget: float = None

    def __post_init__(self):
        if isinstance(self.early_stop, dict):
            self.early_stop = EarlyStopConfig(**self.early_stop)
        if isinstance(self.reduce_lr, dict):
            self.reduce_lr = ReduceLRConfig(**self.reduce_lr)
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.early_stop.patience < 1 or self.reduce_lr.patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0 < self.reduce_lr.factor < 1:
            raise ConfigError("reduce_lr.factor must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _improved(value: float, best: float, min_delta: float) -> bool:
    # NaN compares false, so it never counts as an improvement
    return value <= best - min_delta


class PlateauTracker:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, factor: float = 0.2, patience: int = 8, min_delta: float = 1e-4):
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.wait = 0

    def update(self, val_loss: float, current_lr: float):
        """Returns the new learning rate, or None when it stays unchanged."""
        if _improved(val_loss, self.best, self.min_delta):
            self.best = val_loss
            self.wait = 0
            return None
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            return current_lr * self.factor
        return None


class EarlyStopper:
    def __init__(self, patience: int = 12, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.wait = 0

    def update(self, val_loss: float) -> bool:
        """True once ``patience`` consecutive epochs passed without improvement."""
        if _improved(val_loss, self.best, self.min_delta):
            self.best = val_loss
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def plateau_update(tracker: PlateauTracker, val_loss: float, current_lr: float):
    return tracker.update(val_loss, current_lr)


def early_stop_update(tracker: EarlyStopper, val_loss: float) -> bool:
    return tracker.update(val_loss)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    seconds: float


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: int = None
    stop_reason: str = None

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, wall_time: bool = True) -> str:
        """CSV text; with ``wall_time=False`` the seconds column is left empty."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss),
                        repr(r.val_acc), repr(r.lr), repr(r.seconds) if wall_time else ""])
        return buf.getvalue()

    def write_csv(self, path, wall_time: bool = True) -> None:
        Path(path).write_text(self.to_csv(wall_time))


@dataclass
class Checkpoint:
    header: dict
    params: dict

    @property
    def config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.header["model"])

    def to_graph(self) -> Graph:
        graph = build_graph(self.config, self.header.get("seed", 0))
        _check_shapes(graph, {k: v.shape for k, v in self.params.items()})
        graph.params = {k: self.params[k].copy() for k in graph.params}
        return graph


def _check_shapes(graph: Graph, shapes: dict) -> None:
    expected = {k: v.shape for k, v in graph.params.items()}
    if set(shapes) != set(expected):
        raise DataError(f"checkpoint tensors {sorted(set(shapes) ^ set(expected))} do not match the model")
    for k, shape in shapes.items():
        if tuple(shape) != expected[k]:
            raise DataError(f"checkpoint tensor {k} has shape {tuple(shape)}, model expects {expected[k]}")


def make_checkpoint(graph: Graph, meta: dict = None) -> Checkpoint:
    header = {"model": graph.config.to_dict(), "seed": graph.seed, **(meta or {})}
    return Checkpoint(header, {k: v.astype(np.float32) for k, v in graph.params.items()})


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors, offset = [], 0
    for name, arr in ckpt.params.items():
        nbytes = arr.size * 4
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {**ckpt.header, "tensors": tensors}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in ckpt.params.values())
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload


def decode_checkpoint(data: bytes) -> Checkpoint:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DataError("bad checkpoint magic")
    pos = len(CHECKPOINT_MAGIC)
    if len(data) < pos + 8:
        raise DataError("truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed checkpoint header: {exc}") from exc
    payload = data[pos + hlen:]
    params = {}
    for t in header.pop("tensors"):
        shape = tuple(t["shape"])
        if t["nbytes"] != int(np.prod(shape, dtype=np.int64)) * 4:
            raise DataError(f"checkpoint tensor {t['name']}: byte count does not match shape {shape}")
        end = t["offset"] + t["nbytes"]
        if end > len(payload):
            raise DataError(f"truncated checkpoint payload at tensor {t['name']}")
        params[t["name"]] = np.frombuffer(payload[t["offset"]:end], dtype="<f4").reshape(shape).astype(np.float32)
    return Checkpoint(header, params)


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, graph: Graph, meta: dict = None) -> Checkpoint:
    ckpt = make_checkpoint(graph, meta)
    atomic_write(path, encode_checkpoint(ckpt))
    return ckpt


def load_checkpoint(path) -> Graph:
    """Rebuild the graph stored at ``path``; the header is kept on ``graph.header``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = decode_checkpoint(data)
    graph = ckpt.to_graph()
    graph.header = ckpt.header
    return graph


def _batches(x, y, size):
    for i in range(0, len(x), size):
        yield x[i:i + size], y[i:i + size]


def evaluate_loss(graph: Graph, images: np.ndarray, masks: np.ndarray):
    """Mean cross-entropy and pixel accuracy over a full pass."""
    total_loss = 0.0
    correct = 0
    for xb, yb in _batches(images, masks, EVAL_BATCH):
        probs = graph.forward(xb)
        loss, _ = metrics.cross_entropy(probs, metrics.one_hot(yb, graph.config.num_classes, probs.dtype))
        total_loss += loss * len(xb)
        correct += int(np.count_nonzero(probs.argmax(axis=-1) == yb))
    return total_loss / len(images), correct / masks.size


def train(graph: Graph, optimizer: optim.OptimizerState, train_set, val_set, config: TrainConfig = None):
    """Fit ``graph`` in place and return ``(history, best_checkpoint)``.

    The graph ends holding the best-epoch weights. When
    ``config.checkpoint_path`` is set the best checkpoint is also written
    there every time it improves.
    """
    config = config or TrainConfig()
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    x_train, y_train = train_set.arrays()
    x_val, y_val = val_set.arrays()
    graph.check_input(x_train[:1])
    graph.check_input(x_val[:1])
    nc = graph.config.num_classes

    plateau = PlateauTracker(config.reduce_lr.factor, config.reduce_lr.patience, config.reduce_lr.min_delta)
    stopper = EarlyStopper(config.early_stop.patience, config.early_stop.min_delta)
    history = History()
    best_loss = math.inf
    best = None
    start = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        lr = optimizer.current_lr
        order = np.random.default_rng(config.shuffle_seed + epoch).permutation(len(x_train))
        for b, i in enumerate(range(0, len(order), config.batch_size), start=1):
            idx = order[i:i + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            try:
                probs = graph.forward(xb)
            except ShapeError:
                raise
            except ValueError as exc:  # softmax rejects non-finite logits
                raise TrainingError(f"non-finite logits at epoch {epoch}, batch {b}: {exc}") from exc
            loss, grad = metrics.cross_entropy(probs, metrics.one_hot(yb, nc, probs.dtype))
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss {loss} at epoch {epoch}, batch {b}")
            grads = graph.backward(grad)
            graph.params = optim.step(optimizer, graph.params, grads)

        train_loss, train_acc = evaluate_loss(graph, x_train, y_train)
        val_loss, val_acc = evaluate_loss(graph, x_val, y_val)
        history.records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, lr,
                                           time.perf_counter() - t0))
        log.info("epoch %d: loss %.5f acc %.4f val_loss %.5f val_acc %.4f lr %.3g",
                 epoch, train_loss, train_acc, val_loss, val_acc, lr)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")

        if _improved(val_loss, best_loss, config.early_stop.min_delta):
            best_loss = val_loss
            history.best_epoch = epoch
            best = make_checkpoint(graph, {"optimizer": optimizer.kind, "epoch": epoch, "val_loss": val_loss})
            if config.checkpoint_path:
                atomic_write(config.checkpoint_path, encode_checkpoint(best))

        new_lr = plateau.update(val_loss, optimizer.current_lr)
        if new_lr is not None:
            optim.set_lr(optimizer, new_lr)
            log.info("reducing learning rate to %.3g", new_lr)
        if stopper.update(val_loss):
            history.stop_reason = "early_stop"
            break
        if config.time_budget is not None and time.perf_counter() - start >= config.time_budget:
            history.stop_reason = "time_budget"
            break
    else:
        history.stop_reason = "max_epochs"

    graph.params = {k: v.astype(graph.dtype) for k, v in best.params.items()}
    return history, best


def evaluate(model, test_set, per_image: bool = False) -> metrics.MetricsReport:
    """Pooled accuracy and foreground Dice of ``model`` (Graph or checkpoint path) on ``test_set``."""
    graph = model if isinstance(model, Graph) else load_checkpoint(model)
    preds = [predict(graph, s.image) for s in test_set.samples]
    truths = [s.mask for s in test_set.samples]
    return metrics.dice_report(preds, truths, graph.config.num_classes, per_image=per_image)
