"""Dense tanh network mapping a fixed input to physical parameters.

Gradients are hand-written reverse mode; the network is small enough that no
autodiff framework is warranted.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, TrainingDivergedError

LN10 = math.log(10.0)


@dataclass(frozen=True)
class OutputTransform:
    """Map raw network outputs to physical parameters.

    ``exp10_scaled``: p = 10**(scale*raw + shift)
    ``affine``:       p = scale*raw + shift
    """

    kind: str = "exp10_scaled"
    scale: float = 1.0
    shift: float = -14.0

    def __post_init__(self):
        if self.kind not in ("exp10_scaled", "affine"):
            raise InvalidArgumentError(f"unknown output transform {self.kind!r}")

    def __call__(self, raw):
        if self.kind == "exp10_scaled":
            return 10.0 ** (self.scale * raw + self.shift)
        return self.scale * raw + self.shift

    def derivative(self, raw, p):
        if self.kind == "exp10_scaled":
            return p * LN10 * self.scale
        return np.full_like(raw, self.scale)

    def inverse(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "exp10_scaled":
            return (np.log10(p) - self.shift) / self.scale
        return (p - self.shift) / self.scale


@dataclass
class ParamModel:
    layer_sizes: tuple
    weights: list
    biases: list
    transform: OutputTransform = field(default_factory=OutputTransform)
    init_seed: int = 0

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return ParamModel(tuple(self.layer_sizes), [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.transform, self.init_seed)

    def n_weights(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_model(layer_sizes, transform=None, seed=0) -> ParamModel:
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes) if layer_sizes is not None else ()
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise InvalidArgumentError(f"layer_sizes needs >= 2 positive entries, got {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ParamModel(sizes, weights, biases, transform or OutputTransform(), seed)


def _check_input(model, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != model.layer_sizes[0]:
        raise InvalidArgumentError(
            f"input length {x.shape[0]} does not match layer_sizes[0]={model.layer_sizes[0]}")
    return x


def _activations(model, x):
    acts = [x]
    h = x
    last = model.n_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = w @ h + b
        h = z if k == last else np.tanh(z)
        acts.append(h)
    return acts


def raw_output(model, x):
    return _activations(model, _check_input(model, x))[-1]


def forward(model: ParamModel, x) -> np.ndarray:
    """Physical parameters p = transform(raw network output)."""
    return model.transform(raw_output(model, x))


def backprop(model: ParamModel, x, dL_dp):
    """Vector-Jacobian product: gradients of a scalar w.r.t. weights and biases given dL/dp."""
    x = _check_input(model, x)
    acts = _activations(model, x)
    raw = acts[-1]
    p = model.transform(raw)
    delta = np.asarray(dL_dp, dtype=float).ravel() * model.transform.derivative(raw, p)
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    for k in range(model.n_layers - 1, -1, -1):
        grads_w[k] = np.outer(delta, acts[k])
        grads_b[k] = delta.copy()
        if k > 0:
            # acts[k] = tanh(z_{k-1}); tanh' = 1 - tanh^2
            delta = (model.weights[k].T @ delta) * (1.0 - acts[k] ** 2)
    return grads_w, grads_b


def param_weight_jacobian(model: ParamModel, x):
    """Jacobians of every output parameter w.r.t. every weight and bias.

    Returns ``(d_p_d_W, d_p_d_b)`` where ``d_p_d_W[k]`` has shape
    ``(n_outputs,) + W[k].shape`` and ``d_p_d_b[k]`` has shape ``(n_outputs,) + b[k].shape``.
    """
    n_out = model.layer_sizes[-1]
    jw = [np.empty((n_out,) + w.shape) for w in model.weights]
    jb = [np.empty((n_out,) + b.shape) for b in model.biases]
    for o in range(n_out):
        seed = np.zeros(n_out)
        seed[o] = 1.0
        gw, gb = backprop(model, x, seed)
        for k in range(model.n_layers):
            jw[k][o] = gw[k]
            jb[k][o] = gb[k]
    return jw, jb


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None

    def copy(self):
        return AdamState(self.beta1, self.beta2, self.eps, self.step,
                         None if self.m is None else [a.copy() for a in self.m],
                         None if self.v is None else [a.copy() for a in self.v])


def apply_adam_step(model: ParamModel, grads_w, grads_b, state: AdamState, lr=1e-3) -> ParamModel:
    """One bias-corrected Adam update; returns a new model and advances ``state``."""
    grads = list(grads_w) + list(grads_b)
    params = list(model.weights) + list(model.biases)
    if len(grads) != len(params) or any(g.shape != q.shape for g, q in zip(grads, params)):
        raise InvalidArgumentError("gradient shapes do not match the model")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergedError("non-finite gradient passed to Adam")
    if state.m is None:
        state.m = [np.zeros_like(q) for q in params]
        state.v = [np.zeros_like(q) for q in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new = []
    for q, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        new.append(q - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    n = model.n_layers
    return ParamModel(model.layer_sizes, new[:n], new[n:], model.transform, model.init_seed)


# --------------------------------------------------------------------------
# checkpoint files

def save_model(path, model: ParamModel):
    """Text checkpoint: layer sizes, transform, then row-major weights and biases."""
    t = model.transform
    lines = [
        "layer_sizes," + ",".join(str(s) for s in model.layer_sizes),
        f"transform,{t.kind},{float(t.scale)!r},{float(t.shift)!r}",
        f"init_seed,{model.init_seed}",
    ]
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"W{k}," + ",".join(repr(float(a)) for a in w.ravel()))
        lines.append(f"b{k}," + ",".join(repr(float(a)) for a in b.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> ParamModel:
    with open(path) as fh:
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if rows[0][0] != "layer_sizes" or rows[1][0] != "transform" or rows[2][0] != "init_seed":
        raise InvalidArgumentError(f"{path}: not a model checkpoint")
    sizes = tuple(int(s) for s in rows[0][1:])
    transform = OutputTransform(rows[1][1], float(rows[1][2]), float(rows[1][3]))
    seed = int(rows[2][1])
    weights, biases = [], []
    body = rows[3:]
    if len(body) != 2 * (len(sizes) - 1):
        raise InvalidArgumentError(f"{path}: expected {2 * (len(sizes) - 1)} weight rows")
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w_row, b_row = body[2 * k], body[2 * k + 1]
        weights.append(np.array([float(a) for a in w_row[1:]]).reshape(fan_out, fan_in))
        biases.append(np.array([float(a) for a in b_row[1:]]))
    return ParamModel(sizes, weights, biases, transform, seed)
