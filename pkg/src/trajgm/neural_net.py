"""Feed-forward ReLU network with manual backprop and Adam.

A model maps a flattened condition vector to a small head:

* ``drift``: one output, the drift ``v(x)`` of the learned SDE;
* ``jump``: three outputs mapped to ``(lam, mu, sigma)`` of a scaled Gaussian
  jump kernel through ``(softplus, identity, softplus)``;
* ``tfm``: one output, the predicted right-knot value (endpoint denoiser).

Inputs are standardized with fixed per-feature ``in_shift``/``in_scale`` and
head outputs de-standardized with ``out_shift``/``out_scale``; both are
estimated from data once before training and stored with the model.

Condition vector layout (length ``2 (m + 1) + 3``)::

    [x, t / T, t_next / T, v_{j-m}, t_{j-m} / T, ..., v_j, t_j / T]

with memory pairs ordered oldest to newest.
"""

from dataclasses import dataclass, field
import hashlib
import json

import numpy as np

from trajgm.config import TOL
from trajgm.errors import DivergenceError, DomainError
from trajgm.jump_kl import GaussianJumpKernel, softplus, softplus_grad

__all__ = [
    "HEAD_SIZES",
    "MlpModel",
    "ConditionVector",
    "condition_matrix",
    "init_mlp",
    "forward",
    "backward",
    "adam_step",
    "head_outputs",
    "head_backward",
    "drift_eval",
    "jump_eval",
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
]

HEAD_SIZES = {"drift": 1, "jump": 3, "tfm": 1}


@dataclass
class MlpModel:
    layer_dims: list
    weights: list
    biases: list
    head_type: str = "drift"
    in_shift: np.ndarray = None
    in_scale: np.ndarray = None
    out_shift: np.ndarray = None
    out_scale: np.ndarray = None
    m_w: list = None
    m_b: list = None
    v_w: list = None
    v_b: list = None
    step: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_in, n_out = self.layer_dims[0], self.layer_dims[-1]
        if self.in_shift is None:
            self.in_shift = np.zeros(n_in)
        if self.in_scale is None:
            self.in_scale = np.ones(n_in)
        if self.out_shift is None:
            self.out_shift = np.zeros(n_out)
        if self.out_scale is None:
            self.out_scale = np.ones(n_out)
        if self.m_w is None:
            self.m_w = [np.zeros_like(w) for w in self.weights]
            self.m_b = [np.zeros_like(b) for b in self.biases]
            self.v_w = [np.zeros_like(w) for w in self.weights]
            self.v_b = [np.zeros_like(b) for b in self.biases]

    @property
    def n_inputs(self):
        return self.layer_dims[0]

    def copy(self):
        cp = [np.array(a, copy=True) for a in (self.in_shift, self.in_scale,
                                               self.out_shift, self.out_scale)]
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.head_type, *cp,
            [a.copy() for a in self.m_w], [a.copy() for a in self.m_b],
            [a.copy() for a in self.v_w], [a.copy() for a in self.v_b],
            self.step, dict(self.meta),
        )


@dataclass
class ConditionVector:
    x: float
    t: float
    t_next: float
    memory: list  # [(value, time), ...] oldest first, length m + 1

    def flatten(self, horizon=1.0):
        flat = [self.x, self.t / horizon, self.t_next / horizon]
        for v, s in self.memory:
            flat.extend((v, s / horizon))
        return np.asarray(flat, dtype=np.float64)


def condition_matrix(x, t, t_next, mem_values, mem_times, horizon=1.0):
    """Batch of flattened condition vectors, one row per element.

    ``mem_values`` and ``mem_times`` have shape ``(batch, m + 1)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    mem_values = np.asarray(mem_values, dtype=np.float64).reshape(n, -1)
    mem_times = np.asarray(mem_times, dtype=np.float64).reshape(n, -1)
    out = np.empty((n, 3 + 2 * mem_values.shape[1]))
    out[:, 0] = x
    out[:, 1] = np.broadcast_to(t, (n,)) / horizon
    out[:, 2] = np.broadcast_to(t_next, (n,)) / horizon
    out[:, 3::2] = mem_values
    out[:, 4::2] = mem_times / horizon
    return out


def init_mlp(layer_dims, seed=0, head_type="drift"):
    """He-initialized network; biases start at zero."""
    layer_dims = [int(d) for d in layer_dims]
    if any(d < 1 for d in layer_dims) or len(layer_dims) < 2:
        raise DomainError(f"bad layer_dims {layer_dims}")
    if head_type in HEAD_SIZES and layer_dims[-1] != HEAD_SIZES[head_type]:
        raise DomainError(f"{head_type} head needs {HEAD_SIZES[head_type]} outputs")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_dims, weights, biases, head_type)


def forward(model, inputs):
    """Raw network output and the cache needed by :func:`backward`.

    ``inputs`` is one condition vector or a ``(batch, n_in)`` matrix; the
    output has the matching rank.
    """
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.n_inputs:
        raise DomainError(f"expected {model.n_inputs} inputs, got {x.shape[1]}")
    h = (x - model.in_shift) / model.in_scale
    acts = [h]
    pre = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ w + b
        pre.append(a)
        h = a if i == last else np.maximum(a, 0.0)
        acts.append(h)
    out = h[0] if single else h
    return out, {"acts": acts, "pre": pre, "single": single}


def backward(model, cache, output_grad):
    """Gradients of the loss with respect to weights and biases."""
    g = np.asarray(output_grad, dtype=np.float64)
    if cache["single"]:
        g = g[None, :]
    if g.shape != cache["acts"][-1].shape:
        raise DomainError(f"output_grad shape {g.shape} != {cache['acts'][-1].shape}")
    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        if i < len(model.weights) - 1:
            g = g * (cache["pre"][i] > 0)
        grad_w[i] = cache["acts"][i].T @ g
        grad_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ model.weights[i].T
    return grad_w, grad_b


def adam_step(model, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; returns the model."""
    grad_w, grad_b = grads
    if not all(np.all(np.isfinite(g)) for g in (*grad_w, *grad_b)):
        raise DivergenceError("non-finite gradient; update rejected", model.step)
    model.step += 1
    c1 = 1.0 - beta1**model.step
    c2 = 1.0 - beta2**model.step
    for params, ms, vs, gs in ((model.weights, model.m_w, model.v_w, grad_w),
                               (model.biases, model.m_b, model.v_b, grad_b)):
        for p, m, v, g in zip(params, ms, vs, gs):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return model


def head_outputs(model, raw):
    """Map raw outputs to head values.

    Drift/tfm heads return an array of shape ``(batch,)``; the jump head
    returns ``(lam, mu, sigma)``.
    """
    raw = np.atleast_2d(raw)
    if model.head_type == "jump":
        s, c = model.out_scale, model.out_shift
        lam = s[0] * softplus(raw[:, 0]) + TOL.softplus_floor
        mu = c[1] + s[1] * raw[:, 1]
        sigma = s[2] * softplus(raw[:, 2]) + TOL.softplus_floor
        return lam, mu, sigma
    return model.out_shift[0] + model.out_scale[0] * raw[:, 0]


def head_backward(model, raw, grad_head):
    """Pull gradients with respect to head values back to raw outputs."""
    raw = np.atleast_2d(raw)
    s = model.out_scale
    if model.head_type == "jump":
        g_lam, g_mu, g_sigma = grad_head
        out = np.empty_like(raw)
        out[:, 0] = g_lam * s[0] * softplus_grad(raw[:, 0])
        out[:, 1] = g_mu * s[1]
        out[:, 2] = g_sigma * s[2] * softplus_grad(raw[:, 2])
        return out
    return (np.asarray(grad_head) * s[0]).reshape(-1, 1)


def drift_eval(model, cond, horizon=1.0):
    flat = cond.flatten(horizon) if isinstance(cond, ConditionVector) else cond
    raw, _ = forward(model, flat)
    return float(head_outputs(model, raw)[0])


def jump_eval(model, cond, horizon=1.0):
    flat = cond.flatten(horizon) if isinstance(cond, ConditionVector) else cond
    raw, _ = forward(model, flat)
    lam, mu, sigma = head_outputs(model, raw)
    return GaussianJumpKernel(float(lam[0]), float(mu[0]), float(sigma[0]))


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _tolist(arrs):
    return [a.tolist() for a in arrs]


def save_checkpoint(model, path):
    doc = {
        "format": "trajgm-mlp/1",
        "layer_dims": model.layer_dims,
        "head_type": model.head_type,
        "weights": _tolist(model.weights),
        "biases": _tolist(model.biases),
        "normalization": {
            "in_shift": model.in_shift.tolist(),
            "in_scale": model.in_scale.tolist(),
            "out_shift": model.out_shift.tolist(),
            "out_scale": model.out_scale.tolist(),
        },
        "adam_state": {
            "m_w": _tolist(model.m_w), "m_b": _tolist(model.m_b),
            "v_w": _tolist(model.v_w), "v_b": _tolist(model.v_b),
        },
        "step": model.step,
        "meta": model.meta,
        "config_hash": model.meta.get("config_hash", ""),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    arr = lambda xs: [np.asarray(x, dtype=np.float64) for x in xs]  # noqa: E731
    norm = doc["normalization"]
    adam = doc["adam_state"]
    return MlpModel(
        doc["layer_dims"], arr(doc["weights"]),
        [np.asarray(b, dtype=np.float64).reshape(-1) for b in doc["biases"]],
        doc["head_type"],
        np.asarray(norm["in_shift"]), np.asarray(norm["in_scale"]),
        np.asarray(norm["out_shift"]), np.asarray(norm["out_scale"]),
        arr(adam["m_w"]), arr(adam["m_b"]), arr(adam["v_w"]), arr(adam["v_b"]),
        int(doc["step"]), doc.get("meta", {}),
    )
