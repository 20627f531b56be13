"""Dense feed-forward arithmetic with exact reverse-mode gradients.

Networks are plain stacks of affine layers followed by an elementwise
activation. The same container backs the static emissions network (10 inputs,
4 ReLU layers) and the recurrent control-oriented model (state and input
concatenated, Tanh layers). Everything runs in float64 on 2-D row batches so
that a single evaluation always takes the same arithmetic path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import NumericError, StructuralError

ACTIVATIONS = ("relu", "tanh", "identity")
FORMAT_NAME = "dieselempc-nn"
FORMAT_VERSION = 1

FNN_CHANNELS = (
    "injection_pressure",
    "main_injection_timing",
    "main_injection_fuel_rate",
    "engine_torque",
    "engine_speed",
    "intake_manifold_pressure",
    "exhaust_manifold_pressure",
    "mass_air_flow",
    "egr_position",
    "vgt_position",
)
RNN_CHANNELS = ("nox", "soot", "p_im", "chi_egr", "n_e", "w_inj")


def _frozen(a, ndim: int | None = None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise StructuralError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FnnInput:
    injection_pressure: float  # bar
    main_injection_timing: float  # deg CA
    main_injection_fuel_rate: float  # mg/stroke
    engine_torque: float  # N m
    engine_speed: float  # rpm
    intake_manifold_pressure: float  # kPa
    exhaust_manifold_pressure: float  # kPa
    mass_air_flow: float  # kg/h
    egr_position: float  # % open
    vgt_position: float  # % closed

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)


@dataclass(frozen=True)
class EmissionsState:
    nox: float  # ppm
    soot: float  # %

    def as_array(self) -> np.ndarray:
        return np.array([self.nox, self.soot], dtype=np.float64)


@dataclass(frozen=True)
class RnnInput:
    p_im: float  # kPa
    chi_egr: float  # fraction
    n_e: float  # rpm
    w_inj: float  # mg/stroke

    def as_array(self) -> np.ndarray:
        return np.array([self.p_im, self.chi_egr, self.n_e, self.w_inj], dtype=np.float64)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        object.__setattr__(self, "weight", _frozen(self.weight, 2))
        object.__setattr__(self, "bias", _frozen(self.bias, 1))
        if self.activation not in ACTIVATIONS:
            raise StructuralError(f"unknown activation {self.activation!r}")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise StructuralError(
                f"weight rows {self.weight.shape[0]} != bias length {self.bias.shape[0]}"
            )


@dataclass(frozen=True)
class Normalization:
    """Per-channel affine maps: ``z = (x - in_offset) / in_scale`` on the way in,
    ``x = out_offset + out_scale * y`` on the way out."""

    in_offset: np.ndarray
    in_scale: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            arr = _frozen(getattr(self, f.name), 1)
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"normalization field {f.name} is not finite")
            object.__setattr__(self, f.name, arr)
        if self.in_offset.shape != self.in_scale.shape:
            raise StructuralError("input offset/scale length mismatch")
        if self.out_offset.shape != self.out_scale.shape:
            raise StructuralError("output offset/scale length mismatch")
        if np.any(self.in_scale == 0) or np.any(self.out_scale == 0):
            raise StructuralError("normalization scales must be nonzero")

    @classmethod
    def identity(cls, n_in: int, n_out: int) -> "Normalization":
        return cls(np.zeros(n_in), np.ones(n_in), np.zeros(n_out), np.ones(n_out))

    def normalize_input(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_offset) / self.in_scale

    def denormalize_output(self, y: np.ndarray) -> np.ndarray:
        return self.out_offset + self.out_scale * y

    def normalize_output(self, x: np.ndarray) -> np.ndarray:
        return (x - self.out_offset) / self.out_scale


@dataclass(frozen=True)
class NnParams:
    layers: tuple[Layer, ...]
    norm: Normalization

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise StructuralError("a network needs at least one layer")
        object.__setattr__(self, "layers", layers)
        for i in range(1, len(layers)):
            if layers[i].weight.shape[1] != layers[i - 1].weight.shape[0]:
                raise StructuralError(
                    f"layer {i} expects {layers[i].weight.shape[1]} inputs but "
                    f"layer {i - 1} produces {layers[i - 1].weight.shape[0]}"
                )
        if self.norm.in_offset.shape[0] != self.input_dim:
            raise StructuralError("input normalization does not match input_dim")
        if self.norm.out_offset.shape[0] != self.output_dim:
            raise StructuralError("output normalization does not match output_dim")
        for i, layer in enumerate(layers):
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise NumericError(f"layer {i} has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [l.weight.shape[0] for l in self.layers]

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def flat(self) -> np.ndarray:
        """All weights and biases, layer by layer (W row-major, then b)."""
        return np.concatenate([np.r_[l.weight.ravel(), l.bias] for l in self.layers])

    def with_flat(self, theta: np.ndarray) -> "NnParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise StructuralError(f"expected {self.n_params} parameters, got {theta.shape}")
        layers, pos = [], 0
        for l in self.layers:
            nw, nb = l.weight.size, l.bias.size
            w = theta[pos:pos + nw].reshape(l.weight.shape)
            b = theta[pos + nw:pos + nw + nb]
            pos += nw + nb
            layers.append(Layer(w, b, l.activation))
        return NnParams(tuple(layers), self.norm)

    def with_norm(self, norm: Normalization) -> "NnParams":
        return NnParams(self.layers, norm)


@dataclass(frozen=True)
class Gradient:
    """Partials congruent with an :class:`NnParams` plus optional input partials."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    inputs: np.ndarray | None = None

    def flat(self) -> np.ndarray:
        return np.concatenate([np.r_[w.ravel(), b] for w, b in zip(self.weights, self.biases)])

    @classmethod
    def from_flat(cls, like: NnParams, theta: np.ndarray) -> "Gradient":
        p = like.with_flat(theta)
        return cls(tuple(l.weight for l in p.layers), tuple(l.bias for l in p.layers))

    @classmethod
    def zeros_like(cls, params: NnParams) -> "Gradient":
        return cls(
            tuple(np.zeros_like(l.weight) for l in params.layers),
            tuple(np.zeros_like(l.bias) for l in params.layers),
        )

    def is_congruent(self, params: NnParams) -> bool:
        return len(self.weights) == len(params.layers) and all(
            w.shape == l.weight.shape and b.shape == l.bias.shape
            for w, b, l in zip(self.weights, self.biases, params.layers)
        )


def init_params(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
                norm: Normalization | None = None) -> NnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    if len(activations) != len(sizes) - 1:
        raise StructuralError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        layers.append(Layer(w, b, act))
    if norm is None:
        norm = Normalization.identity(sizes[0], sizes[-1])
    return NnParams(tuple(layers), norm)


def fnn_architecture(hidden: Sequence[int] = (32, 32, 16)) -> tuple[list[int], list[str]]:
    sizes = [len(FNN_CHANNELS), *hidden, 2]
    return sizes, ["relu"] * (len(sizes) - 1)


def rnn_architecture(hidden: Sequence[int] = (15, 5)) -> tuple[list[int], list[str]]:
    sizes = [len(RNN_CHANNELS), *hidden, 2]
    return sizes, ["tanh"] * (len(sizes) - 1)


# --- core arithmetic -------------------------------------------------------

class LayerView(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray
    activation: str


class NetView(NamedTuple):
    """Unvalidated layer views over a flat parameter vector (training hot path)."""

    layers: list
    input_dim: int


def net_view(params: NnParams, theta: np.ndarray) -> NetView:
    layers, pos = [], 0
    for l in params.layers:
        nw, nb = l.weight.size, l.bias.size
        layers.append(LayerView(theta[pos:pos + nw].reshape(l.weight.shape),
                                theta[pos + nw:pos + nw + nb], l.activation))
        pos += nw + nb
    return NetView(layers, params.input_dim)


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    return a


def _act_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    # derivative expressed through pre-activation a and output h; relu'(0) = 0
    if name == "relu":
        return (a > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(a)


def forward_cache(params: NnParams, z: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Forward pass on the normalized scale keeping (pre-activation, output) per layer.

    ``z`` has shape (batch, input_dim). Entry 0 of the result is (z, z).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.input_dim:
        raise StructuralError(f"expected input of shape (batch, {params.input_dim}), got {z.shape}")
    cache = [(z, z)]
    h = z
    for i, layer in enumerate(params.layers):
        a = h @ layer.weight.T + layer.bias
        h = _act(layer.activation, a)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activation in layer {i}")
        cache.append((a, h))
    return cache


def forward_normalized(params: NnParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    out = forward_cache(params, np.atleast_2d(z))[-1][1]
    return out[0] if single else out


def backward(params: NnParams, cache, output_grad: np.ndarray) -> Gradient:
    """Reverse pass for a batch; parameter partials are summed over rows."""
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache[-1][1].shape:
        raise StructuralError(f"output_grad shape {g.shape} != output shape {cache[-1][1].shape}")
    dws, dbs = [], []
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        a, h = cache[i + 1]
        delta = g * _act_grad(layer.activation, a, h)
        h_prev = cache[i][1]
        dws.append(delta.T @ h_prev)
        dbs.append(delta.sum(axis=0))
        g = delta @ layer.weight
    return Gradient(tuple(reversed(dws)), tuple(reversed(dbs)), g)


def backprop(params: NnParams, inputs, output_grad) -> Gradient:
    """Partials of <net(inputs), output_grad> w.r.t. weights, biases and inputs.

    Works on the normalized scale. ``inputs`` may be one vector or a batch of
    rows; for a batch the parameter partials are summed over rows and
    ``Gradient.inputs`` keeps one row per sample.
    """
    x = np.asarray(inputs, dtype=np.float64)
    g = np.asarray(output_grad, dtype=np.float64)
    single = x.ndim == 1
    if g.shape[-1] != params.output_dim:
        raise StructuralError(f"output_grad needs {params.output_dim} entries, got {g.shape}")
    cache = forward_cache(params, np.atleast_2d(x))
    grad = backward(params, cache, np.atleast_2d(g))
    if single:
        return Gradient(grad.weights, grad.biases, grad.inputs[0])
    return grad


def input_jacobian_normalized(params: NnParams, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Output and d(output)/d(input) for one normalized input vector.

    Reverse accumulation with an identity seed matrix, one row per output.
    """
    cache = forward_cache(params, np.atleast_2d(z))
    jac = np.eye(params.output_dim)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        a, h = cache[i + 1]
        jac = (jac * _act_grad(layer.activation, a, h)) @ layer.weight
    return cache[-1][1][0], jac


# --- physical-unit entry points ---------------------------------------------

def _as_vec(v, n: int, what: str) -> np.ndarray:
    arr = v.as_array() if hasattr(v, "as_array") else np.asarray(v, dtype=np.float64)
    if arr.shape != (n,):
        raise StructuralError(f"{what} must have {n} entries, got shape {arr.shape}")
    return arr


def fnn_forward(params: NnParams, y0) -> EmissionsState:
    """Static emissions prediction in physical units."""
    x = _as_vec(y0, params.input_dim, "FNN input")
    if params.output_dim != 2:
        raise StructuralError("emissions network must have 2 outputs")
    y = forward_cache(params, params.norm.normalize_input(x)[None, :])[-1][1][0]
    out = params.norm.denormalize_output(y)
    return EmissionsState(float(out[0]), float(out[1]))


def _rnn_z(params: NnParams, x, u) -> np.ndarray:
    xv = _as_vec(x, 2, "RNN state")
    uv = _as_vec(u, params.input_dim - 2, "RNN input")
    return params.norm.normalize_input(np.concatenate([xv, uv]))


def rnn_step_array(params: NnParams, x, u) -> np.ndarray:
    y = forward_cache(params, _rnn_z(params, x, u)[None, :])[-1][1][0]
    return params.norm.denormalize_output(y)


def rnn_step(params: NnParams, x, u) -> EmissionsState:
    """One step of the recurrent model, ``x_next = f(x, u)``, in physical units."""
    out = rnn_step_array(params, x, u)
    return EmissionsState(float(out[0]), float(out[1]))


def rnn_step_jacobian(params: NnParams, x, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(x_next, d x_next/d x, d x_next/d u)`` in physical units."""
    z = _rnn_z(params, x, u)
    y, jz = input_jacobian_normalized(params, z)
    jac = params.norm.out_scale[:, None] * jz / params.norm.in_scale[None, :]
    return params.norm.denormalize_output(y), jac[:, :2], jac[:, 2:]


@dataclass(frozen=True)
class HorizonSensitivities:
    """Rolled trajectory and its sensitivities.

    ``states[j]`` is the state after step j (x_{j+1}). ``du[j, i]`` is
    d x_{j+1} / d u_i (zero for i > j) and ``dx0[j]`` is d x_{j+1} / d x_0.
    """

    states: np.ndarray  # (N, 2)
    du: np.ndarray  # (N, N, 2, n_u)
    dx0: np.ndarray  # (N, 2, 2)


def rnn_horizon_jacobians(params: NnParams, x0, u_seq) -> HorizonSensitivities:
    u_seq = np.asarray([_as_vec(u, params.input_dim - 2, "RNN input") for u in u_seq])
    n = len(u_seq)
    if n < 1:
        raise StructuralError("horizon must contain at least one input")
    nu = u_seq.shape[1]
    x = _as_vec(x0, 2, "RNN state")
    states = np.empty((n, 2))
    du = np.zeros((n, n, 2, nu))
    dx0 = np.empty((n, 2, 2))
    carry_x0 = np.eye(2)
    for j in range(n):
        try:
            x_next, a, b = rnn_step_jacobian(params, x, u_seq[j])
        except NumericError as exc:
            raise NumericError(f"step {j}: {exc}") from exc
        if not np.all(np.isfinite(x_next)):
            raise NumericError(f"step {j}: non-finite state")
        if j > 0:
            du[j, :j] = np.einsum("ab,ibc->iac", a, du[j - 1, :j])
        du[j, j] = b
        carry_x0 = a @ carry_x0
        dx0[j] = carry_x0
        states[j] = x_next
        x = x_next
    return HorizonSensitivities(states, du, dx0)


# --- persistence -------------------------------------------------------------

def params_to_dict(params: NnParams, kind: str = "generic") -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "input_dim": params.input_dim,
        "output_dim": params.output_dim,
        "layers": [
            {
                "in": l.weight.shape[1],
                "out": l.weight.shape[0],
                "activation": l.activation,
                "weight": l.weight.ravel().tolist(),
                "bias": l.bias.tolist(),
            }
            for l in params.layers
        ],
        "normalization": {f.name: getattr(params.norm, f.name).tolist() for f in fields(Normalization)},
    }


def params_from_dict(d: dict) -> NnParams:
    if d.get("format") != FORMAT_NAME:
        raise StructuralError(f"not a {FORMAT_NAME} document")
    if d.get("format_version") != FORMAT_VERSION:
        raise StructuralError(f"unsupported format_version {d.get('format_version')}")
    layers = []
    for spec in d["layers"]:
        w = np.array(spec["weight"], dtype=np.float64).reshape(spec["out"], spec["in"])
        layers.append(Layer(w, np.array(spec["bias"], dtype=np.float64), spec["activation"]))
    norm = Normalization(**{k: np.array(v, dtype=np.float64) for k, v in d["normalization"].items()})
    params = NnParams(tuple(layers), norm)
    if params.input_dim != d["input_dim"] or params.output_dim != d["output_dim"]:
        raise StructuralError("declared dims do not match the layers")
    return params


def save_params(params: NnParams, path, kind: str = "generic") -> Path:
    path = Path(path)
    path.write_text(json.dumps(params_to_dict(params, kind), allow_nan=False, indent=1))
    return path


def load_params(path) -> NnParams:
    return params_from_dict(json.loads(Path(path).read_text()))
