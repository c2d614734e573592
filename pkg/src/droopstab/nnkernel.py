"""Dense feed-forward networks with exact backpropagation, in plain numpy.

Layer l computes ``z = a @ W + b``; hidden layers optionally apply batch
normalization to ``z`` and then LeakyReLU.  The output layer applies either
LeakyReLU or a sigmoid.  Weight matrices are stored as (fan_in, fan_out).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, FormatError, ShapeMismatch, StaleCache

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

OUTPUT_ACTIVATIONS = ("leaky_relu", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    leaky_slope: float = 0.2
    batchnorm_hidden: bool = False
    output_activation: str = "leaky_relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ShapeMismatch("an MLP needs at least an input and an output width")
        if not 0 < self.leaky_slope < 1:
            raise ShapeMismatch("leaky slope must lie in (0, 1)")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ShapeMismatch(f"unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self):
        return len(self.layer_widths) - 1

    @property
    def hidden_widths(self):
        return self.layer_widths[1:-1]

    @property
    def input_width(self):
        return self.layer_widths[0]

    @property
    def output_width(self):
        return self.layer_widths[-1]

    def to_dict(self):
        return {
            "layer_widths": list(self.layer_widths),
            "leaky_slope": self.leaky_slope,
            "batchnorm_hidden": self.batchnorm_hidden,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_widths"]), float(d["leaky_slope"]), bool(d["batchnorm_hidden"]), d["output_activation"])


@dataclass(eq=False)
class MlpParams:
    weights: list
    biases: list
    bn_gamma: list = field(default_factory=list)
    bn_beta: list = field(default_factory=list)
    bn_running_mean: list = field(default_factory=list)
    bn_running_var: list = field(default_factory=list)
    version: int = 0

    def trainable(self):
        """Trainable arrays in declaration order (weights/biases, then bn gamma/beta)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        for g, be in zip(self.bn_gamma, self.bn_beta):
            out += [g, be]
        return out

    def arrays(self):
        """All arrays in declaration order, inference statistics last."""
        out = self.trainable()
        for m, v in zip(self.bn_running_mean, self.bn_running_var):
            out += [m, v]
        return out

    def copy(self):
        cp = lambda xs: [x.copy() for x in xs]
        return MlpParams(
            cp(self.weights), cp(self.biases), cp(self.bn_gamma), cp(self.bn_beta),
            cp(self.bn_running_mean), cp(self.bn_running_var), self.version,
        )

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


INIT_SCHEMES = ("fan_in", "glorot")


def init_params(spec: MlpSpec, rng: np.random.Generator, scheme="fan_in") -> MlpParams:
    """Uniform init. ``fan_in``: weights and biases in +-1/sqrt(fan_in).
    ``glorot``: weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        if scheme == "glorot":
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
    params = MlpParams(weights, biases)
    if spec.batchnorm_hidden:
        for w in spec.hidden_widths:
            params.bn_gamma.append(np.ones(w))
            params.bn_beta.append(np.zeros(w))
            params.bn_running_mean.append(np.zeros(w))
            params.bn_running_var.append(np.ones(w))
    return params


def params_like(spec: MlpSpec) -> MlpParams:
    """Zero-filled parameter container shaped for ``spec``."""
    dims = list(zip(spec.layer_widths[:-1], spec.layer_widths[1:]))
    hidden = spec.hidden_widths if spec.batchnorm_hidden else ()
    zeros = lambda: [np.zeros(w) for w in hidden]
    return MlpParams(
        [np.zeros(d) for d in dims], [np.zeros(d[1]) for d in dims],
        zeros(), zeros(), zeros(), zeros(),
    )


def leaky_relu(x, slope):
    # valid because 0 < slope < 1
    return np.maximum(x, slope * x)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class _Cache:
    mode: str
    version: int
    inputs: list  # activation entering each layer
    pre: list  # affine output of each layer
    post_bn: list  # batch-normalized value (hidden, bn only)
    x_hat: list
    inv_std: list
    output: np.ndarray = None


def forward(params: MlpParams, spec: MlpSpec, batch, mode="train"):
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.input_width:
        raise ShapeMismatch(f"expected input of width {spec.input_width}, got shape {x.shape}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and spec.batchnorm_hidden and spec.n_layers > 1 and x.shape[0] < 2:
        raise BatchTooSmall("batch normalization in train mode needs at least two rows")

    cache = _Cache(mode, params.version, [], [], [], [], [])
    a = x
    last = spec.n_layers - 1
    for l in range(spec.n_layers):
        cache.inputs.append(a)
        z = a @ params.weights[l] + params.biases[l]
        cache.pre.append(z)
        if l < last:
            if spec.batchnorm_hidden:
                if mode == "train":
                    mean = z.mean(axis=0)
                    var = z.var(axis=0)
                    rm, rv = params.bn_running_mean[l], params.bn_running_var[l]
                    rm *= BN_MOMENTUM
                    rm += (1 - BN_MOMENTUM) * mean
                    # running variance keeps the unbiased estimate
                    m = z.shape[0]
                    rv *= BN_MOMENTUM
                    rv += (1 - BN_MOMENTUM) * var * m / (m - 1)
                else:
                    mean = params.bn_running_mean[l]
                    var = params.bn_running_var[l]
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                x_hat = (z - mean) * inv_std
                z = params.bn_gamma[l] * x_hat + params.bn_beta[l]
                cache.x_hat.append(x_hat)
                cache.inv_std.append(inv_std)
                cache.post_bn.append(z)
            a = leaky_relu(z, spec.leaky_slope)
        elif spec.output_activation == "sigmoid":
            a = sigmoid(z)
        else:
            a = leaky_relu(z, spec.leaky_slope)
    cache.output = a
    return a, cache


def bce(pred, target):
    """Mean binary cross-entropy and its gradient with respect to ``pred``."""
    p = np.clip(np.asarray(pred, dtype=float), 1e-12, 1 - 1e-12)
    t = np.broadcast_to(np.asarray(target, dtype=float), p.shape)
    m = p.size
    loss = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    grad = (-(t / p) + (1 - t) / (1 - p)) / m
    return float(loss), grad


def backward(params: MlpParams, spec: MlpSpec, cache, output_grad):
    """Gradients of the loss w.r.t. every trainable array and the input.

    Returns ``(grads, input_grad)`` where ``grads`` is an ``MlpParams``
    holding gradients (running statistics left as zeros).
    """
    if cache.version != params.version:
        raise StaleCache("parameters changed since the forward pass")
    g = np.asarray(output_grad, dtype=float)
    if g.shape != cache.output.shape:
        raise ShapeMismatch(f"output gradient shape {g.shape} != output shape {cache.output.shape}")

    grads = params_like(spec)
    last = spec.n_layers - 1
    slope = spec.leaky_slope
    for l in range(last, -1, -1):
        if l == last:
            z = cache.pre[l]
            if spec.output_activation == "sigmoid":
                s = cache.output
                g = g * s * (1 - s)
            else:
                g = g * np.where(z > 0, 1.0, slope)
        else:
            pre_act = cache.post_bn[l] if spec.batchnorm_hidden else cache.pre[l]
            g = g * np.where(pre_act > 0, 1.0, slope)
            if spec.batchnorm_hidden:
                x_hat, inv_std = cache.x_hat[l], cache.inv_std[l]
                grads.bn_gamma[l][...] = np.sum(g * x_hat, axis=0)
                grads.bn_beta[l][...] = np.sum(g, axis=0)
                g_hat = g * params.bn_gamma[l]
                if cache.mode == "train":
                    m = g.shape[0]
                    g = (inv_std / m) * (
                        m * g_hat - g_hat.sum(axis=0) - x_hat * np.sum(g_hat * x_hat, axis=0)
                    )
                else:
                    g = g_hat * inv_std
        a_in = cache.inputs[l]
        grads.weights[l][...] = a_in.T @ g
        grads.biases[l][...] = g.sum(axis=0)
        g = g @ params.weights[l].T
    return grads, g


@dataclass(eq=False)
class OptState:
    first: list
    second: list
    step: int = 0
    method: str = "adam"
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2


def init_opt_state(params: MlpParams, method="adam", beta1=ADAM_BETA1, beta2=ADAM_BETA2) -> OptState:
    if method not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {method!r}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("moment decay rates must lie in [0, 1)")
    zeros = [np.zeros_like(a) for a in params.trainable()]
    return OptState(zeros, [z.copy() for z in zeros], 0, method, beta1, beta2)


def opt_step(params: MlpParams, grads: MlpParams, state: OptState, lr: float):
    """In-place adaptive-moment (or plain SGD) update; returns (params, state)."""
    p_list, g_list = params.trainable(), grads.trainable()
    if len(p_list) != len(g_list) or any(p.shape != g.shape for p, g in zip(p_list, g_list)):
        raise ShapeMismatch("gradients do not match parameter shapes")
    state.step += 1
    if state.method == "sgd":
        for p, g in zip(p_list, g_list):
            p -= lr * g
    else:
        t = state.step
        b1, b2 = state.beta1, state.beta2
        c1 = 1 - b1**t
        c2 = 1 - b2**t
        for p, g, m, v in zip(p_list, g_list, state.first, state.second):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    params.version += 1
    return params, state


def pack_params(params: MlpParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())


def unpack_params(spec: MlpSpec, blob: bytes, offset: int = 0):
    """Read parameters for ``spec`` from ``blob``; returns (params, new_offset)."""
    params = params_like(spec)
    for a in params.arrays():
        nbytes = a.size * 8
        if offset + nbytes > len(blob):
            raise FormatError("parameter blob is truncated")
        a[...] = np.frombuffer(blob, dtype="<f8", count=a.size, offset=offset).reshape(a.shape)
        offset += nbytes
    params.version = 0
    return params, offset


def n_param_values(spec: MlpSpec) -> int:
    return sum(a.size for a in params_like(spec).arrays())

