"""FCN and U-Net graphs: configuration, construction, forward/backward, prediction."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError, StateError

FCN = "fcn"
UNET = "unet"
UNET_DIVISOR = 16


@dataclass(frozen=True)
class ModelConfig:
    arch: str = UNET
    num_channels: int = 1
    num_classes: int = 3
    filters: tuple = (16, 32, 64, 128, 256)
    conv_kernel: int = 3
    deconv_kernel: int = 2
    out_kernel: int = 1
    pool_size: int = 2
    deconv_strides: tuple = (2, 2)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "deconv_strides", tuple(self.deconv_strides))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.arch not in (FCN, UNET):
            problems.append(f"arch must be '{FCN}' or '{UNET}', got {self.arch!r}")
        if self.num_channels < 1:
            problems.append("num_channels must be >= 1")
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if any(f < 1 for f in self.filters):
            problems.append("filters must all be >= 1")
        if self.arch == FCN and len(self.filters) < 3:
            problems.append("filters: FCN needs at least 3 entries")
        if self.arch == UNET and len(self.filters) != 5:
            problems.append("filters: U-Net needs exactly 5 entries")
        for name in ("conv_kernel", "deconv_kernel", "out_kernel"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.pool_size != 2:
            problems.append("pool_size is fixed at 2")
        if self.deconv_strides != (2, 2):
            problems.append("deconv_strides is fixed at (2, 2)")
        if problems:
            raise ConfigError("invalid ModelConfig: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        d["deconv_strides"] = list(self.deconv_strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Node:
    name: str
    kind: str  # conv | deconv | pool | concat
    inputs: tuple
    relu: bool = False


@dataclass
class Graph:
    """An instantiated network: ordered nodes plus a flat parameter dict.

    Parameters live in ``params`` under ``"<layer>/kernel"`` and
    ``"<layer>/bias"``; gradients returned by :meth:`backward` use the same keys.
    """

    config: ModelConfig
    nodes: list
    params: dict
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Graph":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return Graph(self.config, list(self.nodes), params, self.seed)

    def copy(self) -> "Graph":
        return self.astype(self.dtype)

    def check_input(self, batch: np.ndarray) -> None:
        L.check_tensor4(batch, "batch")
        if batch.shape[3] != self.config.num_channels:
            raise ShapeError(
                f"batch has {batch.shape[3]} channels, model expects {self.config.num_channels}")
        if self.config.arch == UNET:
            h, w = batch.shape[1:3]
            if h % UNET_DIVISOR or w % UNET_DIVISOR:
                raise ShapeError(
                    f"U-Net input height and width must be divisible by {UNET_DIVISOR}, got {h}x{w}")

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Class probabilities of shape (batch, height, width, num_classes)."""
        self.check_input(batch)
        x = batch.astype(self.dtype, copy=False)
        values = {"input": x}
        cache = {}
        for node in self.nodes:
            args = [values[i] for i in node.inputs]
            if node.kind == "conv":
                z = L.conv2d(args[0], self.params[node.name + "/kernel"], self.params[node.name + "/bias"])
                out = L.relu(z) if node.relu else z
                cache[node.name] = z
            elif node.kind == "deconv":
                out = L.transposed_conv2d(args[0], self.params[node.name + "/kernel"],
                                          self.params[node.name + "/bias"])
            elif node.kind == "pool":
                out, idx = L.maxpool2(args[0])
                cache[node.name] = idx
            elif node.kind == "concat":
                out = L.concat_channels(*args)
            else:
                raise StateError(f"unknown node kind {node.kind!r}")
            values[node.name] = out
        logits = values[self.nodes[-1].name]
        probs = L.softmax_channels(logits)
        self._cache = {"values": values, "aux": cache, "shape": batch.shape}
        return probs

    def backward(self, loss_grad: np.ndarray, batch: np.ndarray = None) -> dict:
        """Backpropagate the gradient of the loss w.r.t. the output logits.

        With the softmax + cross-entropy head this is ``(p - y) / N``.
        """
        if not self._cache:
            raise StateError("backward called without a preceding forward pass")
        if batch is not None and batch.shape != self._cache["shape"]:
            raise StateError(
                f"backward batch shape {batch.shape} does not match the cached forward {self._cache['shape']}")
        values, aux = self._cache["values"], self._cache["aux"]
        if loss_grad.shape != values[self.nodes[-1].name].shape:
            raise ShapeError(
                f"loss gradient {loss_grad.shape} does not match output {values[self.nodes[-1].name].shape}")
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        upstream = {self.nodes[-1].name: loss_grad.astype(self.dtype, copy=False)}
        for node in reversed(self.nodes):
            g = upstream.pop(node.name, None)
            if g is None:
                continue
            args = [values[i] for i in node.inputs]
            if node.kind == "conv":
                if node.relu:
                    g = L.relu_backward(aux[node.name], g)
                dx, dk, db = L.conv2d_backward(args[0], self.params[node.name + "/kernel"], g)
                grads[node.name + "/kernel"] += dk
                grads[node.name + "/bias"] += db
                d_inputs = [dx]
            elif node.kind == "deconv":
                dx, dk, db = L.transposed_conv2d_backward(args[0], self.params[node.name + "/kernel"], g)
                grads[node.name + "/kernel"] += dk
                grads[node.name + "/bias"] += db
                d_inputs = [dx]
            elif node.kind == "pool":
                d_inputs = [L.maxpool2_backward(g, aux[node.name], args[0].shape)]
            else:
                d_inputs = list(L.concat_backward(g, args[0].shape[3]))
            for src, d in zip(node.inputs, d_inputs):
                if src == "input":
                    continue
                if src in upstream:
                    upstream[src] = upstream[src] + d
                else:
                    upstream[src] = d
        return grads

    def layer_names(self) -> list:
        return [n.name for n in self.nodes if n.kind in ("conv", "deconv")]


def _init_params(nodes_with_shapes, seed: int, dtype) -> dict:
    params = {}
    for index, (name, kshape, fan_in, nbias) in enumerate(nodes_with_shapes):
        rng = np.random.default_rng([seed, index])
        limit = np.sqrt(6.0 / fan_in)
        params[name + "/kernel"] = rng.uniform(-limit, limit, size=kshape).astype(dtype)
        params[name + "/bias"] = np.zeros(nbias, dtype=dtype)
    return params


def build_fcn(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Graph:
    if config.arch != FCN:
        raise ConfigError(f"build_fcn needs arch '{FCN}', got {config.arch!r}")
    k = config.conv_kernel
    nodes, shapes = [], []
    prev, cin = "input", config.num_channels
    for i, f in enumerate(config.filters, start=1):
        name = f"conv_{i}"
        nodes.append(Node(name, "conv", (prev,), relu=True))
        shapes.append((name, (k, k, cin, f), k * k * cin, f))
        prev, cin = name, f
    ko = config.out_kernel
    nodes.append(Node("out", "conv", (prev,)))
    shapes.append(("out", (ko, ko, cin, config.num_classes), ko * ko * cin, config.num_classes))
    return Graph(config, nodes, _init_params(shapes, seed, dtype), seed)


def build_unet(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Graph:
    if config.arch != UNET:
        raise ConfigError(f"build_unet needs arch '{UNET}', got {config.arch!r}")
    k, kd, ko = config.conv_kernel, config.deconv_kernel, config.out_kernel
    f = config.filters
    nodes, shapes = [], []

    def conv(name, src, cin, cout):
        nodes.append(Node(name, "conv", (src,), relu=True))
        shapes.append((name, (k, k, cin, cout), k * k * cin, cout))

    prev, cin = "input", config.num_channels
    for level in range(1, 6):
        cout = f[level - 1]
        conv(f"conv_{level}a", prev, cin, cout)
        conv(f"conv_{level}b", f"conv_{level}a", cout, cout)
        prev, cin = f"conv_{level}b", cout
        if level < 5:
            nodes.append(Node(f"pool_{level}", "pool", (prev,)))
            prev = f"pool_{level}"
    for level in range(6, 10):
        mirror = 10 - level
        cout = f[mirror - 1]
        up = f"up_{level}"
        nodes.append(Node(up, "deconv", (prev,)))
        shapes.append((up, (kd, kd, cout, cin), kd * kd * cin, cout))
        nodes.append(Node(f"cat_{level}", "concat", (up, f"conv_{mirror}b")))
        conv(f"conv_{level}a", f"cat_{level}", 2 * cout, cout)
        conv(f"conv_{level}b", f"conv_{level}a", cout, cout)
        prev, cin = f"conv_{level}b", cout
    nodes.append(Node("out", "conv", (prev,)))
    shapes.append(("out", (ko, ko, cin, config.num_classes), ko * ko * cin, config.num_classes))
    return Graph(config, nodes, _init_params(shapes, seed, dtype), seed)


def build_graph(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Graph:
    if config.arch == FCN:
        return build_fcn(config, seed, dtype)
    return build_unet(config, seed, dtype)


def param_count(graph: Graph) -> int:
    return int(sum(v.size for v in graph.params.values()))


def predict(graph: Graph, image: np.ndarray) -> np.ndarray:
    """Per-pixel class labels (height, width) for one image.

    Accepts (H, W, C) or a single-sample (1, H, W, C) batch. Ties go to the
    lowest class index.
    """
    if image.ndim == 3:
        image = image[None]
    if image.shape[0] != 1:
        raise ShapeError(f"predict takes a single sample, got batch of {image.shape[0]}")
    probs = graph.forward(image)
    return probs[0].argmax(axis=-1).astype(np.uint8)
