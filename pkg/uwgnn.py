"""
WMMSE-unrolled graph network (UWGNN)
K layers, each running a receiver-side aggregation that stands in for the u/w
updates and a transmitter-side aggregation that stands in for the v update.
Trained unsupervised on the negative weighted sum rate.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from tqdm import tqdm

import nn_core
from channel_sim import GraphSample, NetworkInstance, to_graph
from nn_core import AdamState, MlpSpec, Node, Params, Tape
from shared_utils import chunked, digest_of
from wmmse_core import ContractViolationError, power_from_v, single_run_rates, sum_rate

logger = logging.getLogger(__name__)

MLP_NAMES = ("mlp1", "mlp2", "mlp3", "mlp4", "mlp5")

# (input, hidden, output) unit sizes of the literal five-triple reading
TRIPLE_UNIT_SIZES = {
    "mlp1": (5, 8, 16),
    "mlp2": (19, 8, 4),
    "mlp3": (7, 8, 4),
    "mlp4": (10, 8, 16),
    "mlp5": (27, 8, 1),
}

AGGREGATIONS = ("max", "mean", "sum")
MLP_READINGS = ("equations", "triples")


class UwgnnError(Exception):
    """Base error for the unrolled network"""


class UwgnnConfigError(UwgnnError):
    """Inconsistent network configuration"""


class TrainingError(UwgnnError):
    """Training hit a non-finite loss or gradient"""

    def __init__(self, message: str, batch_index: int):
        super().__init__(f"batch {batch_index}: {message}")
        self.batch_index = batch_index


@dataclass(frozen=True)
class UwgnnConfig:
    K: int = 3
    d_u: int = 4
    d_w: int = 4
    d_msg: int = 16
    hidden: int = 8
    mlp_reading: str = "equations"
    share_parameters: bool = True
    aggregation: str = "max"
    activation: str = "relu"

    def __post_init__(self):
        if self.K < 0:
            raise UwgnnConfigError(f"K must be >= 0, got {self.K}")
        for name in ("d_u", "d_w", "d_msg", "hidden"):
            if getattr(self, name) < 1:
                raise UwgnnConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.mlp_reading not in MLP_READINGS:
            raise UwgnnConfigError(f"mlp_reading must be one of {MLP_READINGS}, got {self.mlp_reading}")
        if self.aggregation not in AGGREGATIONS:
            raise UwgnnConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation}")
        if self.mlp_reading == "triples":
            for name, (width_in, _, width_out) in TRIPLE_UNIT_SIZES.items():
                if self.feature_widths[name] > width_in or self.output_widths[name] != width_out:
                    raise UwgnnConfigError(
                        f"triple unit sizes for {name} need input <= {width_in} and output {width_out}")

    @property
    def feature_widths(self) -> Dict[str, int]:
        """Width of the concatenated features each MLP consumes"""
        return {
            "mlp1": 2,
            "mlp2": 2 + self.d_msg,
            "mlp3": 2 + self.d_u,
            "mlp4": 1 + self.d_u + self.d_w,
            "mlp5": 2 + self.d_u + self.d_w + self.d_msg,
        }

    @property
    def output_widths(self) -> Dict[str, int]:
        return {"mlp1": self.d_msg, "mlp2": self.d_u, "mlp3": self.d_w, "mlp4": self.d_msg, "mlp5": 1}

    @property
    def mlp_specs(self) -> Dict[str, MlpSpec]:
        specs = {}
        for name in MLP_NAMES:
            if self.mlp_reading == "triples":
                sizes = TRIPLE_UNIT_SIZES[name]
            else:
                sizes = (self.feature_widths[name], self.hidden, self.output_widths[name])
            final = "sigmoid" if name == "mlp5" else "none"
            specs[name] = MlpSpec(sizes, activation=self.activation, final_activation=final)
        return specs

    def layer_scope(self, layer: int) -> str:
        """Parameter name prefix of a layer; every layer shares one scope when parameters are shared"""
        return "" if self.share_parameters else f"layer{layer}."

    @property
    def scopes(self) -> List[str]:
        if self.share_parameters:
            return [""] if self.K > 0 else []
        return [self.layer_scope(k) for k in range(self.K)]

    def to_dict(self) -> Dict:
        return asdict(self)

    @staticmethod
    def from_dict(payload: Dict) -> 'UwgnnConfig':
        known = {k: v for k, v in payload.items() if k in UwgnnConfig.__dataclass_fields__}
        return UwgnnConfig(**known)


@dataclass
class NodeState:
    v: np.ndarray
    u: np.ndarray
    w: np.ndarray
    scope: str = ""


# ---------------------------------------------------------------------------
# Batching: a list of graphs becomes one disjoint union
# ---------------------------------------------------------------------------

@dataclass
class GraphBatch:
    n_nodes: int
    n_graphs: int
    dst: np.ndarray
    src: np.ndarray
    h_edge: np.ndarray
    lam: np.ndarray
    direct: np.ndarray
    v0: np.ndarray
    sqrt_pmax: np.ndarray
    sigma2: np.ndarray
    graph_id: np.ndarray
    offsets: np.ndarray

    def split(self, values: np.ndarray) -> List[np.ndarray]:
        return [values[self.offsets[g]:self.offsets[g + 1]] for g in range(self.n_graphs)]


def batch_graphs(graphs: Sequence[GraphSample]) -> GraphBatch:
    sizes = [g.n_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    dst, src, h_edge = [], [], []
    for g, offset in zip(graphs, offsets[:-1]):
        d, s, h = g.edge_index()
        dst.append(d + offset)
        src.append(s + offset)
        h_edge.append(h)

    def _cat(parts, dtype=np.float64):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return GraphBatch(
        n_nodes=int(offsets[-1]),
        n_graphs=len(graphs),
        dst=_cat(dst, int),
        src=_cat(src, int),
        h_edge=_cat(h_edge),
        lam=_cat([g.lam for g in graphs]),
        direct=_cat([g.direct for g in graphs]),
        v0=_cat([g.v for g in graphs]),
        sqrt_pmax=_cat([np.full(g.n_nodes, math.sqrt(g.p_max)) for g in graphs]),
        sigma2=_cat([np.full(g.n_nodes, g.sigma2) for g in graphs]),
        graph_id=_cat([np.full(g.n_nodes, i) for i, g in enumerate(graphs)], int),
        offsets=offsets,
    )


# ---------------------------------------------------------------------------
# Recorded computation
# ---------------------------------------------------------------------------

def _pool(cfg: UwgnnConfig, messages: Node, segment_ids: np.ndarray, n_segments: int) -> Node:
    if cfg.aggregation == "max":
        return nn_core.segment_max(messages, segment_ids, n_segments)
    if cfg.aggregation == "mean":
        return nn_core.segment_mean(messages, segment_ids, n_segments)
    return nn_core.segment_sum(messages, segment_ids, n_segments)


def _apply(tape: Tape, cfg: UwgnnConfig, params: Params, name: str, scope: str,
           parts: Sequence[Node]) -> Node:
    spec = cfg.mlp_specs[name]
    x = nn_core.pad_columns(nn_core.concat(parts), spec.input_size)
    return nn_core.mlp_apply(tape, spec, params, x, f"{scope}{name}")


def _record_layer(tape: Tape, cfg: UwgnnConfig, params: Params, batch: GraphBatch,
                  v: Node, layer: int) -> Tuple[Node, Node, Node]:
    scope = cfg.layer_scope(layer)
    h_edge = tape.constant(batch.h_edge[:, None])
    direct = tape.constant(batch.direct[:, None])
    lam = tape.constant(batch.lam[:, None])

    # receiver side: interference arriving at i from transmitters j
    m1 = _apply(tape, cfg, params, "mlp1", scope, [h_edge, nn_core.gather(v, batch.src)])
    alpha_u = _pool(cfg, m1, batch.dst, batch.n_nodes)
    u = _apply(tape, cfg, params, "mlp2", scope, [direct, v, alpha_u])
    w = _apply(tape, cfg, params, "mlp3", scope, [direct, v, u])

    # transmitter side: interference i causes at receivers j (edge h_ji)
    m4 = _apply(tape, cfg, params, "mlp4", scope,
                [h_edge, nn_core.gather(u, batch.dst), nn_core.gather(w, batch.dst)])
    alpha_v = _pool(cfg, m4, batch.src, batch.n_nodes)
    gate = _apply(tape, cfg, params, "mlp5", scope, [lam, direct, u, w, alpha_v])
    v_next = nn_core.scale(gate, batch.sqrt_pmax[:, None])
    return v_next, u, w


def _record_forward(tape: Tape, cfg: UwgnnConfig, params: Params, batch: GraphBatch,
                    v0: np.ndarray) -> Tuple[Node, List[Tuple[Node, Node, Node]]]:
    v = tape.input("v0", v0[:, None])
    layers = []
    for layer in range(cfg.K):
        v, u, w = _record_layer(tape, cfg, params, batch, v, layer)
        layers.append((v, u, w))
    return v, layers


def _record_negative_rate(tape: Tape, batch: GraphBatch, p: Node) -> Node:
    """Mean over graphs of -sum_i lambda_i log2(1 + SINR_i), from powers p (N, 1)"""
    h2 = (batch.h_edge * batch.h_edge)[:, None]
    interference = nn_core.segment_sum(nn_core.scale(nn_core.gather(p, batch.src), h2),
                                       batch.dst, batch.n_nodes)
    interference = nn_core.add_const(interference, batch.sigma2[:, None])
    signal = nn_core.scale(p, (batch.direct * batch.direct)[:, None])
    rate = nn_core.scale(nn_core.log2_1p(nn_core.div(signal, interference)), batch.lam[:, None])
    per_graph = nn_core.segment_sum(rate, batch.graph_id, batch.n_graphs)
    return nn_core.scale(nn_core.mean(per_graph), -1.0)


def _check_params(cfg: UwgnnConfig, params: Params):
    for scope in cfg.scopes:
        for name, spec in cfg.mlp_specs.items():
            for tensor, shape in spec.param_shapes(f"{scope}{name}"):
                if tensor not in params:
                    raise UwgnnConfigError(f"missing parameter tensor '{tensor}'")
                if params[tensor].shape != shape:
                    raise UwgnnConfigError(
                        f"tensor '{tensor}' has shape {params[tensor].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def init_model(cfg: UwgnnConfig, seed: int) -> Params:
    """Fresh parameters for every (scope, MLP) pair, seeded per MLP"""
    params: Params = {}
    groups = [(scope, name) for scope in cfg.scopes for name in MLP_NAMES]
    children = np.random.SeedSequence(seed).spawn(len(groups))
    for (scope, name), child in zip(groups, children):
        params.update(nn_core.init_params(cfg.mlp_specs[name], child, prefix=f"{scope}{name}"))
    return params


def layer_forward(cfg: UwgnnConfig, params: Params, graph: GraphSample, state: NodeState,
                  layer: int = 0) -> NodeState:
    """One unrolled layer on a single graph"""
    n = graph.n_nodes
    if state.v.shape != (n,) or state.u.shape != (n, cfg.d_u) or state.w.shape != (n, cfg.d_w):
        raise UwgnnConfigError(
            f"node state shapes {state.v.shape}, {state.u.shape}, {state.w.shape} do not match "
            f"n={n}, d_u={cfg.d_u}, d_w={cfg.d_w}")
    _check_params(cfg, params)
    tape = Tape()
    batch = batch_graphs([graph])
    v, u, w = _record_layer(tape, cfg, params, batch, tape.input("v", state.v[:, None]), layer)
    return NodeState(v=v.value[:, 0], u=u.value, w=w.value, scope=cfg.layer_scope(layer))


def forward(cfg: UwgnnConfig, params: Params, graph: GraphSample,
            v0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, List[NodeState]]:
    """K layers from v0 (default: the graph's v column); returns (p, per-layer states)"""
    _check_params(cfg, params)
    if v0 is not None:
        v0 = np.asarray(v0, dtype=np.float64)
        if v0.shape != (graph.n_nodes,):
            raise UwgnnConfigError(f"v0 must have length {graph.n_nodes}, got shape {v0.shape}")
        if np.any(v0 < 0) or np.any(v0 > math.sqrt(graph.p_max)):
            raise UwgnnConfigError("v0 entries must lie in [0, sqrt(p_max)]")
    batch = batch_graphs([graph])
    start = batch.v0 if v0 is None else v0
    tape = Tape()
    v, layers = _record_forward(tape, cfg, params, batch, start)
    trace = [NodeState(v=lv.value[:, 0], u=lu.value, w=lw.value, scope=cfg.layer_scope(k))
             for k, (lv, lu, lw) in enumerate(layers)]
    return power_from_v(v.value[:, 0], graph.p_max), trace


def predict_powers(cfg: UwgnnConfig, params: Params, instances: Sequence[NetworkInstance],
                   chunk_size: int = 256) -> List[np.ndarray]:
    """Powers for each instance from the default full-power start, evaluated in chunks"""
    _check_params(cfg, params)
    powers: List[np.ndarray] = []
    for chunk in chunked(list(instances), chunk_size):
        batch = batch_graphs([to_graph(inst, cfg.d_u, cfg.d_w) for inst in chunk])
        v, _ = _record_forward(Tape(), cfg, params, batch, batch.v0)
        for inst, v_graph in zip(chunk, batch.split(v.value[:, 0])):
            powers.append(power_from_v(v_graph, inst.p_max))
    return powers


def predict_rates(cfg: UwgnnConfig, params: Params, instances: Sequence[NetworkInstance],
                  chunk_size: int = 256) -> np.ndarray:
    powers = predict_powers(cfg, params, instances, chunk_size)
    return np.array([sum_rate(inst, p) for inst, p in zip(instances, powers)])


def loss(inst: NetworkInstance, p) -> float:
    """Unsupervised objective: negative weighted sum rate"""
    return -sum_rate(inst, p)


def loss_gradient(inst: NetworkInstance, p) -> Tuple[float, np.ndarray]:
    """(loss, d loss / d p) by reverse mode"""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (inst.n_users,) or np.any(p < 0):
        raise ContractViolationError("p must be a nonnegative vector with one entry per user")
    tape = Tape()
    batch = batch_graphs([to_graph(inst)])
    out = _record_negative_rate(tape, batch, tape.input("p", p[:, None]))
    grads = nn_core.backward(tape, 1.0, out)
    return float(out.value), grads.inputs["p"][:, 0]


def batch_loss(cfg: UwgnnConfig, params: Params, instances: Sequence[NetworkInstance]) -> float:
    batch = batch_graphs([to_graph(inst, cfg.d_u, cfg.d_w) for inst in instances])
    tape = Tape()
    v, _ = _record_forward(tape, cfg, params, batch, batch.v0)
    return float(_record_negative_rate(tape, batch, nn_core.square(v)).value)


def batch_loss_and_grads(cfg: UwgnnConfig, params: Params,
                         instances: Sequence[NetworkInstance]) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean negative sum rate over the batch and its gradient for every parameter tensor"""
    batch = batch_graphs([to_graph(inst, cfg.d_u, cfg.d_w) for inst in instances])
    tape = Tape()
    v, _ = _record_forward(tape, cfg, params, batch, batch.v0)
    out = _record_negative_rate(tape, batch, nn_core.square(v))
    grads = nn_core.backward(tape, 1.0, out).params
    full = {name: grads.get(name, np.zeros_like(value)) for name, value in params.items()}
    return float(out.value), full


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_ratio: float


@dataclass
class TrainingCurve:
    initial_val_loss: float
    initial_val_ratio: float
    epochs: List[EpochRecord] = field(default_factory=list)

    def rows(self) -> List[Dict]:
        return [{"epoch": r.epoch, "train_loss": r.train_loss, "val_ratio": r.val_ratio} for r in self.epochs]

    @property
    def final_ratio(self) -> float:
        return self.epochs[-1].val_ratio if self.epochs else self.initial_val_ratio


def ratio_of_means(model_rates: np.ndarray, reference_rates: np.ndarray) -> float:
    """Mean per-instance ratio over instances with a positive reference rate"""
    keep = reference_rates > 0
    if not keep.any():
        return float("nan")
    return float(np.mean(model_rates[keep] / reference_rates[keep]))


def train(cfg: UwgnnConfig, dataset: Sequence[NetworkInstance], epochs: int, batch_size: int = 64,
          seed: int = 0, lr: float = 1e-3, val_set: Optional[Sequence[NetworkInstance]] = None,
          progress: bool = False) -> Tuple[Params, TrainingCurve]:
    """Minibatch Adam on the mean negative sum rate; deterministic given seed"""
    if not dataset:
        raise UwgnnError("training needs a nonempty dataset")
    if epochs < 0 or batch_size < 1:
        raise UwgnnError(f"invalid schedule: epochs={epochs}, batch_size={batch_size}")
    params = init_model(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    val_set = list(val_set) if val_set is not None else list(dataset[:200])
    val_reference = single_run_rates(val_set)

    def _validate(current: Params) -> Tuple[float, float]:
        rates = predict_rates(cfg, current, val_set)
        return float(-np.mean(rates)), ratio_of_means(rates, val_reference)

    initial_loss, initial_ratio = _validate(params)
    curve = TrainingCurve(initial_val_loss=initial_loss, initial_val_ratio=initial_ratio)
    logger.info(f"Training UWGNN on {len(dataset)} instances for {epochs} epochs "
                f"(batch {batch_size}, lr {lr}); initial val ratio {initial_ratio:.4f}")
    adam = AdamState(lr=lr)
    batch_index = 0
    for epoch in tqdm(range(1, epochs + 1), desc="Training", disable=not progress):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(dataset), batch_size):
            members = [dataset[i] for i in order[start:start + batch_size]]
            value, grads = batch_loss_and_grads(cfg, params, members)
            if not math.isfinite(value):
                logger.error(f"Non-finite loss at batch {batch_index}")
                raise TrainingError(f"non-finite loss {value}", batch_index)
            try:
                params, adam = nn_core.adam_step(adam, params, grads)
            except nn_core.NonFiniteGradientError as e:
                raise TrainingError(str(e), batch_index) from e
            losses.append(value)
            batch_index += 1
            logger.debug(f"epoch {epoch} batch {batch_index}: loss {value:.6f}")
        val_loss, val_ratio = _validate(params)
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val_loss,
                             val_ratio=val_ratio)
        curve.epochs.append(record)
        logger.info(f"Epoch {epoch}/{epochs}: train loss {record.train_loss:.5f}, "
                    f"val loss {val_loss:.5f}, val ratio {val_ratio:.4f}")
    return params, curve


# ---------------------------------------------------------------------------
# Model wrapper
# ---------------------------------------------------------------------------

@dataclass
class UwgnnModel:
    cfg: UwgnnConfig
    params: Params

    @staticmethod
    def initialise(cfg: UwgnnConfig, seed: int) -> 'UwgnnModel':
        return UwgnnModel(cfg, init_model(cfg, seed))

    @property
    def n_parameters(self) -> int:
        return nn_core.count_parameters(self.params)

    @property
    def n_parameters_nested(self) -> int:
        return nn_core.count_parameters_nested(self.params)

    def digest(self) -> str:
        return digest_of({"config": self.cfg.to_dict(),
                          "params": {k: v.tolist() for k, v in sorted(self.params.items())}})

    def powers(self, instances: Sequence[NetworkInstance]) -> List[np.ndarray]:
        return predict_powers(self.cfg, self.params, instances)

    def save(self, path: str, meta: Optional[Dict] = None):
        meta = dict(meta or {})
        meta.update({
            "uwgnn": self.cfg.to_dict(),
            "n_parameters": self.n_parameters,
            "n_parameters_nested": self.n_parameters_nested,
        })
        nn_core.save_params(self.params, meta, path)

    @staticmethod
    def load(path: str) -> Tuple['UwgnnModel', Dict]:
        params, meta = nn_core.load_params(path)
        if "uwgnn" not in meta:
            raise nn_core.CheckpointError(f"{path}: checkpoint meta lacks the network configuration")
        try:
            cfg = UwgnnConfig.from_dict(meta["uwgnn"])
            _check_params(cfg, params)
        except (UwgnnConfigError, TypeError) as e:
            raise nn_core.CheckpointError(f"{path}: {e}") from e
        return UwgnnModel(cfg, params), meta

