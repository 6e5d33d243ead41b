"""Central finite-difference checks of analytic gradients."""

import numpy as np

from . import layers as L
from . import metrics
from .netgraph import Graph

ATOL = 1e-7


def relative_error(analytic, numeric, atol: float = ATOL) -> float:
    """Max over entries of |a - n| / max(|a|, |n|); pairs both below ``atol`` count as exact."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    err = np.where(scale > atol, diff / np.where(scale > atol, scale, 1.0), np.where(diff > atol, np.inf, 0.0))
    return float(err.max()) if err.size else 0.0


def numeric_grad(f, x: np.ndarray, eps: float = 1e-4, indices=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` at flat ``indices`` (all if None)."""
    flat = x.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    out = []
    for i in indices:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * eps))
    return np.array(out)


def check_primitives(seed: int = 0, eps: float = 1e-4) -> dict:
    """VJP vs finite differences for every layer primitive at f64."""
    rng = np.random.default_rng(seed)
    results = {}

    def probe(name, fwd, bwd, inputs):
        out = fwd(*inputs)
        r = rng.standard_normal(out.shape)
        analytic = bwd(*inputs, r)
        worst = 0.0
        for arr, g in zip(inputs, analytic):
            num = numeric_grad(lambda: float(np.sum(fwd(*inputs) * r)), arr, eps)
            worst = max(worst, relative_error(g, num))
        results[name] = worst

    x = rng.standard_normal((2, 5, 6, 3))
    for k in (1, 2, 3, 4, 5):
        kern = rng.standard_normal((k, k, 3, 2))
        bias = rng.standard_normal(2)
        probe(f"conv2d_k{k}", L.conv2d, lambda a, w, b, g: L.conv2d_backward(a, w, g), [x.copy(), kern, bias])
    for k in (1, 2, 3, 4):
        kern = rng.standard_normal((k, k, 2, 3))
        bias = rng.standard_normal(2)
        probe(f"transposed_conv2d_k{k}", L.transposed_conv2d,
              lambda a, w, b, g: L.transposed_conv2d_backward(a, w, g),
              [rng.standard_normal((2, 3, 4, 3)), kern, bias])
    xr = rng.standard_normal((2, 4, 4, 3))
    xr[np.abs(xr) < 1e-2] += 0.1  # stay away from the kink
    probe("relu", L.relu, lambda a, g: (L.relu_backward(a, g),), [xr])

    xp = rng.standard_normal((2, 5, 7, 3))
    probe("maxpool2", lambda a: L.maxpool2(a)[0],
          lambda a, g: (L.maxpool2_backward(g, L.maxpool2(a)[1], a.shape),), [xp])
    a, b = rng.standard_normal((1, 3, 3, 2)), rng.standard_normal((1, 3, 3, 4))
    probe("concat_channels", L.concat_channels, lambda p, q, g: L.concat_backward(g, p.shape[3]), [a, b])
    probe("softmax_channels", L.softmax_channels,
          lambda z, g: (L.softmax_backward(L.softmax_channels(z), g),), [rng.standard_normal((2, 3, 3, 4))])
    return results


def _pattern(graph: Graph) -> list:
    aux = graph._cache["aux"]
    out = []
    for node in graph.nodes:
        if node.kind == "conv" and node.relu:
            out.append(aux[node.name] > 0)
        elif node.kind == "pool":
            out.append(aux[node.name])
    return out


def check_graph(graph: Graph, batch: np.ndarray, labels: np.ndarray, eps: float = 1e-4,
                per_tensor: int = 8, seed: int = 0, backward=None) -> dict:
    """Max relative error per layer between backprop and finite differences.

    The graph is promoted to f64. ``per_tensor`` random entries of every
    kernel and bias are perturbed; an entry whose perturbation flips a ReLU
    sign or a max-pool choice is skipped, since the loss is not
    differentiable across that step. ``backward`` substitutes the analytic
    gradient routine (used to confirm the check can fail).

    Returns ``{layer: max_rel_error}`` plus ``"_skipped"``, the number of
    entries dropped for kink crossings.
    """
    g64 = graph.astype(np.float64)
    x = batch.astype(np.float64)
    targets = metrics.one_hot(labels, g64.config.num_classes, np.float64)
    probs = g64.forward(x)
    base = _pattern(g64)
    _, dlogits = metrics.cross_entropy(probs, targets)
    grads = (backward or Graph.backward)(g64, dlogits)
    crossed = []

    def loss():
        value = metrics.cross_entropy(g64.forward(x), targets)[0]
        if any(not np.array_equal(a, b) for a, b in zip(base, _pattern(g64))):
            crossed.append(True)
        return value

    rng = np.random.default_rng(seed)
    report, skipped = {}, 0
    for key, param in g64.params.items():
        layer = key.split("/")[0]
        report.setdefault(layer, 0.0)
        flat = param.reshape(-1)
        for i in rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False):
            crossed.clear()
            num = numeric_grad(loss, param, eps, [i])
            if crossed:
                skipped += 1
                continue
            report[layer] = max(report[layer], relative_error(grads[key].reshape(-1)[i], num))
    report["_skipped"] = skipped
    return report
