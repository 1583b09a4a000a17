"""
Minimal dense-network machinery
Tape-recorded reverse-mode differentiation over numpy arrays, MLP forward pass,
Adam, fan-based initialisation and JSON checkpoints.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from jsonschema import Draft7Validator
from scipy.special import expit

from shared_utils import load_json_file, save_json_file

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "uwgnn-ckpt"
CHECKPOINT_VERSION = 1

Params = Dict[str, np.ndarray]
SeedLike = Union[int, np.random.SeedSequence]


class NNCoreError(Exception):
    """Base error for the network machinery"""


class ShapeMismatchError(NNCoreError):
    """Operand shapes do not line up"""


class StaleTapeError(NNCoreError):
    """A tape was reused after its backward pass"""


class NonFiniteGradientError(NNCoreError):
    """A gradient handed to the optimizer contains NaN or inf"""

    def __init__(self, tensor_name: str):
        super().__init__(f"non-finite gradient for tensor '{tensor_name}'")
        self.tensor_name = tensor_name


class CheckpointError(NNCoreError):
    """A checkpoint file is malformed"""


@dataclass
class ParamTensor:
    """Serialisable named tensor; values are flat and row-major"""
    name: str
    shape: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if int(np.prod(self.shape, dtype=np.int64)) != self.values.size:
            raise ShapeMismatchError(
                f"tensor '{self.name}': shape {self.shape} does not hold {self.values.size} values")
        if not np.all(np.isfinite(self.values)):
            raise NNCoreError(f"tensor '{self.name}' has non-finite values")

    @staticmethod
    def from_array(name: str, array: np.ndarray) -> 'ParamTensor':
        return ParamTensor(name=name, shape=array.shape, values=array.ravel())

    def to_array(self) -> np.ndarray:
        return self.values.reshape(self.shape).copy()


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: Tuple[int, ...]
    activation: str = "relu"
    final_activation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            raise ShapeMismatchError(f"MLP needs >= 2 positive layer sizes, got {self.layer_sizes}")
        if self.activation not in ("relu", "none"):
            raise NNCoreError(f"unknown hidden activation: {self.activation}")
        if self.final_activation not in ("none", "sigmoid"):
            raise NNCoreError(f"unknown final activation: {self.final_activation}")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def param_shapes(self, prefix: str) -> List[Tuple[str, Tuple[int, ...]]]:
        shapes = []
        for layer, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            shapes.append((f"{prefix}.W{layer}", (fan_in, fan_out)))
            shapes.append((f"{prefix}.b{layer}", (fan_out,)))
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.param_shapes("mlp"))


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Node:
    __slots__ = ("tape", "index", "op", "value", "parents", "backward", "name")

    def __init__(self, tape: 'Tape', index: int, op: str, value: np.ndarray,
                 parents: Tuple['Node', ...], backward: Optional[Callable], name: Optional[str]):
        self.tape = tape
        self.index = index
        self.op = op
        self.value = value
        self.parents = parents
        self.backward = backward
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape


class Tape:
    """Wengert list of the recorded computation; one backward pass per tape"""

    def __init__(self):
        self.nodes: List[Node] = []
        self.params: Dict[str, Node] = {}
        self.inputs: Dict[str, Node] = {}
        self.consumed = False

    def record(self, op: str, value: np.ndarray, parents: Sequence[Node] = (),
               backward: Optional[Callable] = None, name: Optional[str] = None) -> Node:
        if self.consumed:
            raise StaleTapeError("cannot record on a tape whose backward pass already ran")
        node = Node(self, len(self.nodes), op, value, tuple(parents), backward, name)
        self.nodes.append(node)
        return node

    def param(self, name: str, value: np.ndarray) -> Node:
        """Leaf for a trainable tensor; repeated use of a name shares one node"""
        if name not in self.params:
            self.params[name] = self.record("param", np.asarray(value, dtype=np.float64), name=name)
        return self.params[name]

    def input(self, name: str, value: np.ndarray) -> Node:
        node = self.record("input", np.asarray(value, dtype=np.float64), name=name)
        self.inputs[name] = node
        return node

    def constant(self, value: np.ndarray) -> Node:
        return self.record("constant", np.asarray(value, dtype=np.float64))


@dataclass
class Gradients:
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    inputs: Dict[str, np.ndarray] = field(default_factory=dict)


def backward(tape: Tape, upstream_grad, output: Optional[Node] = None) -> Gradients:
    """Reverse sweep from output (default: last recorded node) seeded with upstream_grad"""
    if tape.consumed:
        raise StaleTapeError("tape was already consumed by a backward pass")
    if not tape.nodes:
        raise NNCoreError("empty tape")
    output = output if output is not None else tape.nodes[-1]
    upstream = np.asarray(upstream_grad, dtype=np.float64)
    if upstream.shape != output.shape:
        if upstream.size == output.value.size:
            upstream = upstream.reshape(output.shape)
        else:
            raise ShapeMismatchError(f"upstream gradient shape {upstream.shape} != output shape {output.shape}")
    grads: List[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[output.index] = upstream
    for node in reversed(tape.nodes[:output.index + 1]):
        g = grads[node.index]
        if g is None or node.backward is None:
            continue
        for parent, parent_grad in zip(node.parents, node.backward(g)):
            if parent_grad is None:
                continue
            current = grads[parent.index]
            grads[parent.index] = parent_grad if current is None else current + parent_grad
    tape.consumed = True

    def _grad_or_zero(node: Node) -> np.ndarray:
        g = grads[node.index]
        return np.zeros_like(node.value) if g is None else g

    return Gradients(params={name: _grad_or_zero(node) for name, node in tape.params.items()},
                     inputs={name: _grad_or_zero(node) for name, node in tape.inputs.items()})


# ---------------------------------------------------------------------------
# Differentiable ops
# ---------------------------------------------------------------------------

def _dense(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    # per-row products reduced in a fixed order, so a row's result never depends on its position
    return (x[:, :, None] * W[None, :, :]).sum(axis=1)


def linear(x: Node, W: Node, b: Node) -> Node:
    if x.value.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeMismatchError(f"linear: input {x.shape} does not match weight {W.shape}")
    value = _dense(x.value, W.value) + b.value

    def _backward(g):
        return g @ W.value.T, x.value.T @ g, g.sum(axis=0)
    return x.tape.record("linear", value, (x, W, b), _backward)


def relu(x: Node) -> Node:
    mask = x.value > 0

    def _backward(g):
        return (np.where(mask, g, 0.0),)
    return x.tape.record("relu", np.where(mask, x.value, 0.0), (x,), _backward)


def sigmoid(x: Node) -> Node:
    s = expit(x.value)

    def _backward(g):
        return (g * s * (1.0 - s),)
    return x.tape.record("sigmoid", s, (x,), _backward)


def concat(nodes: Sequence[Node]) -> Node:
    """Column-wise concatenation of 2-D nodes"""
    widths = [n.shape[1] for n in nodes]
    splits = np.cumsum(widths)[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=1))
    return nodes[0].tape.record("concat", np.concatenate([n.value for n in nodes], axis=1),
                                tuple(nodes), _backward)


def pad_columns(x: Node, width: int) -> Node:
    """Right-pad with zero columns up to width"""
    extra = width - x.shape[1]
    if extra < 0:
        raise ShapeMismatchError(f"cannot pad {x.shape[1]} columns down to {width}")
    if extra == 0:
        return x
    value = np.concatenate([x.value, np.zeros((x.shape[0], extra))], axis=1)

    def _backward(g):
        return (g[:, :x.shape[1]],)
    return x.tape.record("pad", value, (x,), _backward)


def gather(x: Node, index: np.ndarray) -> Node:
    """Rows x[index]"""
    index = np.asarray(index)

    def _backward(g):
        out = np.zeros_like(x.value)
        np.add.at(out, index, g)
        return (out,)
    return x.tape.record("gather", x.value[index], (x,), _backward)


def segment_sum(x: Node, segment_ids: np.ndarray, n_segments: int) -> Node:
    segment_ids = np.asarray(segment_ids)
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segment_ids, x.value)

    def _backward(g):
        return (g[segment_ids],)
    return x.tape.record("segment_sum", out, (x,), _backward)


def segment_mean(x: Node, segment_ids: np.ndarray, n_segments: int) -> Node:
    """Mean per segment; empty segments give zeros"""
    segment_ids = np.asarray(segment_ids)
    counts = np.bincount(segment_ids, minlength=n_segments).astype(np.float64)
    scale = 1.0 / np.maximum(counts, 1.0)
    scale = scale.reshape((n_segments,) + (1,) * (x.value.ndim - 1))
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segment_ids, x.value)

    def _backward(g):
        return ((g * scale)[segment_ids],)
    return x.tape.record("segment_mean", out * scale, (x,), _backward)


def segment_max(x: Node, segment_ids: np.ndarray, n_segments: int) -> Node:
    """Elementwise max over the rows of each segment.

    Empty segments give zeros. The subgradient goes to the first row (lowest
    index) holding the maximum.
    """
    segment_ids = np.asarray(segment_ids)
    rows, width = x.shape
    out = np.full((n_segments, width), -np.inf)
    np.maximum.at(out, segment_ids, x.value)
    empty = np.bincount(segment_ids, minlength=n_segments) == 0
    out[empty] = 0.0
    row_index = np.broadcast_to(np.arange(rows)[:, None], (rows, width))
    candidate = np.where(x.value == out[segment_ids], row_index, rows)
    winner = np.full((n_segments, width), rows)
    np.minimum.at(winner, segment_ids, candidate)

    def _backward(g):
        grad = np.zeros_like(x.value)
        seg, col = np.nonzero(winner < rows)
        grad[winner[seg, col], col] = g[seg, col]
        return (grad,)
    return x.tape.record("segment_max", out, (x,), _backward)


def add(a: Node, b: Node) -> Node:
    def _backward(g):
        return g, g
    return a.tape.record("add", a.value + b.value, (a, b), _backward)


def add_const(a: Node, c) -> Node:
    def _backward(g):
        return (g,)
    return a.tape.record("add_const", a.value + c, (a,), _backward)


def mul(a: Node, b: Node) -> Node:
    def _backward(g):
        return g * b.value, g * a.value
    return a.tape.record("mul", a.value * b.value, (a, b), _backward)


def scale(a: Node, c) -> Node:
    """a * c for a constant c broadcastable to a's shape"""
    c = np.asarray(c, dtype=np.float64)

    def _backward(g):
        return (g * c,)
    return a.tape.record("scale", a.value * c, (a,), _backward)


def div(a: Node, b: Node) -> Node:
    def _backward(g):
        return g / b.value, -g * a.value / (b.value * b.value)
    return a.tape.record("div", a.value / b.value, (a, b), _backward)


def square(a: Node) -> Node:
    def _backward(g):
        return (2.0 * a.value * g,)
    return a.tape.record("square", a.value * a.value, (a,), _backward)


def log2_1p(a: Node) -> Node:
    """log2(1 + a)"""
    def _backward(g):
        return (g / ((1.0 + a.value) * math.log(2.0)),)
    return a.tape.record("log2_1p", np.log1p(a.value) / math.log(2.0), (a,), _backward)


def mean(a: Node) -> Node:
    size = a.value.size

    def _backward(g):
        return (np.full(a.shape, float(g) / size),)
    return a.tape.record("mean", np.asarray(a.value.mean()), (a,), _backward)


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

def mlp_apply(tape: Tape, spec: MlpSpec, params: Params, x: Node, prefix: str) -> Node:
    """Record an MLP on an existing tape"""
    if x.value.ndim != 2 or x.shape[1] != spec.input_size:
        raise ShapeMismatchError(f"{prefix}: expected input width {spec.input_size}, got shape {x.shape}")
    h = x
    n_layers = len(spec.layer_sizes) - 1
    for layer in range(n_layers):
        W = tape.param(f"{prefix}.W{layer}", params[f"{prefix}.W{layer}"])
        b = tape.param(f"{prefix}.b{layer}", params[f"{prefix}.b{layer}"])
        h = linear(h, W, b)
        if layer < n_layers - 1:
            if spec.activation == "relu":
                h = relu(h)
        elif spec.final_activation == "sigmoid":
            h = sigmoid(h)
    return h


def mlp_forward(spec: MlpSpec, params: Params, x, prefix: str = "mlp") -> Tuple[np.ndarray, Tape]:
    """Forward a batch (rows) through the MLP; the returned tape feeds backward()"""
    tape = Tape()
    out = mlp_apply(tape, spec, params, tape.input("x", x), prefix)
    return out.value, tape


def init_params(spec: MlpSpec, seed: SeedLike, prefix: str = "mlp") -> Params:
    """Weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases zero"""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for layer, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"{prefix}.W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{prefix}.b{layer}"] = np.zeros(fan_out)
    return params


def count_parameters(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


def count_parameters_nested(params: Params) -> int:
    """Profiler-style count: each tensor once per enclosing scope in its dotted name.

    'mlp1.W0' counts for its layer and for the mlp1 container, i.e. twice.
    """
    return int(sum(v.size * (name.count(".") + 1) for name, v in params.items()))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise NNCoreError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise NNCoreError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


def adam_step(state: AdamState, params: Params, grads: Dict[str, np.ndarray]) -> Tuple[Params, AdamState]:
    """One bias-corrected Adam update; returns fresh parameter arrays"""
    for name in params:
        if name not in grads:
            raise ShapeMismatchError(f"missing gradient for tensor '{name}'")
        if grads[name].shape != params[name].shape:
            raise ShapeMismatchError(
                f"gradient for '{name}' has shape {grads[name].shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(name)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    updated: Params = {}
    for name, value in params.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        updated[name] = value - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return updated, state


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                       coordinates: Optional[Iterable[int]] = None) -> np.ndarray:
    """Central differences of a scalar fn at x (flat coordinates; all by default)"""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in (range(flat.size) if coordinates is None else coordinates):
        original = flat[i]
        flat[i] = original + h
        plus = fn(x)
        flat[i] = original - h
        minus = fn(x)
        flat[i] = original
        grad[i] = (plus - minus) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, floor: float = 1e-4) -> np.ndarray:
    """|a - n| / max(|a| + |n|, floor), elementwise"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "meta", "tensors"],
    "properties": {
        "format": {"const": CHECKPOINT_FORMAT},
        "version": {"type": "integer"},
        "meta": {"type": "object"},
        "tensors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "shape", "values"],
                "properties": {
                    "name": {"type": "string"},
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "values": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
    },
}

_checkpoint_validator = Draft7Validator(_CHECKPOINT_SCHEMA)


def save_params(params: Params, meta: Dict, path: str):
    tensors = [ParamTensor.from_array(name, value) for name, value in params.items()]
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "tensors": [{"name": t.name, "shape": list(t.shape), "values": t.values.tolist()} for t in tensors],
    }
    save_json_file(path, payload, indent=None)
    logger.info(f"Saved checkpoint with {count_parameters(params)} scalars to {path}")


def load_params(path: str) -> Tuple[Params, Dict]:
    try:
        payload = load_json_file(path)
    except (OSError, ValueError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    errors = sorted(_checkpoint_validator.iter_errors(payload), key=lambda e: list(e.path))
    if errors:
        where = "/".join(str(p) for p in errors[0].path) or "<root>"
        raise CheckpointError(f"{path}: {where}: {errors[0].message}")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload['version']} is not supported")
    params: Params = {}
    for record in payload["tensors"]:
        try:
            tensor = ParamTensor(record["name"], tuple(record["shape"]), np.array(record["values"]))
        except NNCoreError as e:
            raise CheckpointError(f"{path}: {e}") from e
        params[tensor.name] = tensor.to_array()
    return params, payload["meta"]
