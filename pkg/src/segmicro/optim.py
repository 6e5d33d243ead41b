"""The eight update rules, applied to a flat dict of parameter arrays."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

SGD = "sgd"
SGD_NESTEROV = "sgd_nesterov"
RMSPROP = "rmsprop"
ADAGRAD = "adagrad"
ADADELTA = "adadelta"
ADAM = "adam"
ADAMAX = "adamax"
NADAM = "nadam"
KINDS = (SGD, SGD_NESTEROV, RMSPROP, ADAGRAD, ADADELTA, ADAM, ADAMAX, NADAM)


@dataclass(frozen=True)
class OptimizerHyperparams:
    kind: str
    lr: float
    rho: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    momentum: float = 0.0
    epsilon: float = 1e-8

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown optimizer kind {self.kind!r}; expected one of {KINDS}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        for name in ("rho", "beta1", "beta2", "momentum"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")


DEFAULTS = {
    ADAM: dict(lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8),
    SGD: dict(lr=0.01),
    SGD_NESTEROV: dict(lr=0.01, momentum=0.9),
    RMSPROP: dict(lr=0.001, rho=0.9, epsilon=1e-7),
    ADAGRAD: dict(lr=0.01, epsilon=1e-7),
    ADADELTA: dict(lr=1.0, rho=0.95, epsilon=1e-7),
    ADAMAX: dict(lr=0.002, beta1=0.9, beta2=0.999, epsilon=1e-8),
    # the literal published value beta2=0 is reachable through overrides
    NADAM: dict(lr=0.002, beta1=0.9, beta2=0.999, epsilon=1e-8),
}


@dataclass
class OptimizerState:
    hyper: OptimizerHyperparams
    current_lr: float
    t: int = 0
    slots: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.hyper.kind


def make_optimizer(kind: str, overrides: dict = None) -> OptimizerState:
    kind = kind.lower()
    if kind not in KINDS:
        raise ConfigError(f"unknown optimizer kind {kind!r}; expected one of {KINDS}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"lr", "rho", "beta1", "beta2", "momentum", "epsilon"}
    if unknown:
        raise ConfigError(f"unknown optimizer overrides: {sorted(unknown)}")
    hyper = OptimizerHyperparams(kind=kind, **{**DEFAULTS[kind], **overrides})
    hyper.validate()
    return OptimizerState(hyper=hyper, current_lr=hyper.lr)


def set_lr(state: OptimizerState, lr: float) -> None:
    if not lr > 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    state.current_lr = float(lr)


def _slot(state, name, key, like):
    store = state.slots.setdefault(name, {})
    if key not in store:
        store[key] = np.zeros_like(like)
    elif store[key].shape != like.shape:
        raise ShapeError(f"accumulator {name}[{key}] has shape {store[key].shape}, parameter {like.shape}")
    return store[key]


def step(state: OptimizerState, params: dict, grads: dict) -> dict:
    """Apply one update; returns a new parameter dict and advances ``state``."""
    if set(params) != set(grads):
        raise ShapeError(f"parameter and gradient keys differ: {sorted(set(params) ^ set(grads))}")
    for key in params:
        if params[key].shape != grads[key].shape:
            raise ShapeError(f"{key}: parameter {params[key].shape} vs gradient {grads[key].shape}")
    h = state.hyper
    lr = state.current_lr
    state.t += 1
    t = state.t
    out = {}
    for key, w in params.items():
        g = grads[key]
        eps = h.epsilon
        if h.kind == SGD:
            new = w - lr * g
        elif h.kind == SGD_NESTEROV:
            v = _slot(state, "velocity", key, w)
            v *= h.momentum
            v -= lr * g
            new = w + h.momentum * v - lr * g
        elif h.kind == RMSPROP:
            a = _slot(state, "sq", key, w)
            a *= h.rho
            a += (1 - h.rho) * g * g
            new = w - lr * g / (np.sqrt(a) + eps)
        elif h.kind == ADAGRAD:
            a = _slot(state, "sq", key, w)
            a += g * g
            new = w - lr * g / (np.sqrt(a) + eps)
        elif h.kind == ADADELTA:
            a = _slot(state, "sq", key, w)
            d = _slot(state, "delta_sq", key, w)
            a *= h.rho
            a += (1 - h.rho) * g * g
            delta = np.sqrt(d + eps) / np.sqrt(a + eps) * g
            d *= h.rho
            d += (1 - h.rho) * delta * delta
            new = w - lr * delta
        elif h.kind == ADAM:
            m = _slot(state, "m", key, w)
            v = _slot(state, "v", key, w)
            m *= h.beta1
            m += (1 - h.beta1) * g
            v *= h.beta2
            v += (1 - h.beta2) * g * g
            m_hat = m / (1 - h.beta1 ** t)
            v_hat = v / (1 - h.beta2 ** t)
            new = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        elif h.kind == ADAMAX:
            m = _slot(state, "m", key, w)
            u = _slot(state, "u", key, w)
            m *= h.beta1
            m += (1 - h.beta1) * g
            np.maximum(h.beta2 * u, np.abs(g), out=u)
            new = w - lr / (1 - h.beta1 ** t) * m / (u + eps)
        else:  # NADAM
            m = _slot(state, "m", key, w)
            v = _slot(state, "v", key, w)
            m *= h.beta1
            m += (1 - h.beta1) * g
            v *= h.beta2
            v += (1 - h.beta2) * g * g
            m_hat = m / (1 - h.beta1 ** t)
            v_hat = v / (1 - h.beta2 ** t)
            nesterov = h.beta1 * m_hat + (1 - h.beta1) * g / (1 - h.beta1 ** t)
            new = w - lr * nesterov / (np.sqrt(v_hat) + eps)
        out[key] = new.astype(w.dtype, copy=False)
    return out

