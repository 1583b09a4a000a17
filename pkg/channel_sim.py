"""
D2D channel simulator
Generates network instances (Rayleigh/Rician gains, weights, geometry, mobility,
topology masks), converts them to the directed-graph view and persists datasets
as JSON-lines.
"""

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from jsonschema import Draft7Validator

from shared_utils import iter_jsonl_lines, save_jsonl_file

logger = logging.getLogger(__name__)

DATASET_FORMAT = "d2d-dataset"
DATASET_VERSION = 1

SeedLike = Union[int, np.random.SeedSequence]


class ChannelSimError(Exception):
    """Base error for channel simulation and dataset IO"""


class InvalidInstanceError(ChannelSimError):
    """A network instance or graph violates its invariants"""


class DatasetFormatError(ChannelSimError):
    """A dataset file could not be parsed"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DatasetVersionError(ChannelSimError):
    """A dataset file was written by an incompatible format version"""


@dataclass(frozen=True)
class ChannelConfig:
    """Scenario-wide constants shared by every generated instance"""
    sigma2: float = 1.0
    p_max: float = 1.0
    weighted: bool = False
    pathloss_exponent: float = 2.0
    area_size: float = 1000.0
    rx_distance_range: Tuple[float, float] = (30.0, 90.0)
    coverage_radius: float = 1000.0
    min_distance: float = 1.0

    @staticmethod
    def from_noise_db(noise_db: float, **kwargs) -> 'ChannelConfig':
        return ChannelConfig(sigma2=10.0 ** (noise_db / 10.0), **kwargs)


@dataclass(frozen=True)
class ChannelDistribution:
    """Per-component Gaussian law of the complex small-scale gain.

    rayleigh ignores ``mean``; rician uses ``mean * los_strength`` as the
    per-component mean, so los_strength scales the line-of-sight part.
    """
    family: str = "rayleigh"
    mean: float = 0.0
    std: float = 1.0
    los_strength: float = 1.0

    def __post_init__(self):
        if self.family not in ("rayleigh", "rician"):
            raise ChannelSimError(f"Unknown channel family: {self.family}")
        if not self.std > 0:
            raise ChannelSimError(f"Channel std must be positive, got {self.std}")

    @property
    def component_mean(self) -> float:
        if self.family == "rayleigh":
            return 0.0
        return self.mean * self.los_strength

    def label(self) -> str:
        if self.family == "rayleigh":
            return f"rayleigh(std={self.std:g})"
        return f"rician(mean={self.mean:g},std={self.std:g},los={self.los_strength:g})"


class NetworkInstance:
    """One D2D scenario: gains H (row i = receiver i), weights, noise and power budget"""

    __slots__ = ("H", "lam", "sigma2", "p_max")

    def __init__(self, H, lam, sigma2: float, p_max: float):
        H = np.array(H, dtype=np.float64)
        lam = np.array(lam, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 1:
            raise InvalidInstanceError(f"H must be a non-empty square matrix, got shape {H.shape}")
        if lam.shape != (H.shape[0],):
            raise InvalidInstanceError(f"lambda must have length {H.shape[0]}, got shape {lam.shape}")
        if not np.all(np.isfinite(H)) or np.any(H < 0):
            raise InvalidInstanceError("H must be finite and nonnegative")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0) or not np.any(lam > 0):
            raise InvalidInstanceError("lambda must be nonnegative with at least one positive entry")
        if not (math.isfinite(sigma2) and sigma2 > 0):
            raise InvalidInstanceError(f"sigma2 must be positive, got {sigma2}")
        if not (math.isfinite(p_max) and p_max > 0):
            raise InvalidInstanceError(f"p_max must be positive, got {p_max}")
        H.flags.writeable = False
        lam.flags.writeable = False
        self.H = H
        self.lam = lam
        self.sigma2 = float(sigma2)
        self.p_max = float(p_max)

    @property
    def n_users(self) -> int:
        return self.H.shape[0]

    @property
    def direct(self) -> np.ndarray:
        return np.diag(self.H)

    def with_channels(self, H) -> 'NetworkInstance':
        return NetworkInstance(H, self.lam, self.sigma2, self.p_max)

    def with_weights(self, lam) -> 'NetworkInstance':
        return NetworkInstance(self.H, lam, self.sigma2, self.p_max)

    def permuted(self, perm: Sequence[int]) -> 'NetworkInstance':
        """Relabel users: new user k is old user perm[k]"""
        perm = np.asarray(perm)
        return NetworkInstance(self.H[np.ix_(perm, perm)], self.lam[perm], self.sigma2, self.p_max)

    def to_record(self) -> Dict:
        return {
            "n": self.n_users,
            "h": self.H.tolist(),
            "lambda": self.lam.tolist(),
            "sigma2": self.sigma2,
            "p_max": self.p_max,
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkInstance):
            return NotImplemented
        return (np.array_equal(self.H, other.H) and np.array_equal(self.lam, other.lam)
                and self.sigma2 == other.sigma2 and self.p_max == other.p_max)

    def __repr__(self) -> str:
        return f"NetworkInstance(n={self.n_users}, sigma2={self.sigma2:g}, p_max={self.p_max:g})"


@dataclass
class GraphSample:
    """Directed-graph view of an instance.

    Z columns: lambda, h_ii, v, u (d_u columns), w (d_w columns).
    A[i, j] = h_ij for j != i, 0 on the diagonal and on removed edges.
    """
    Z: np.ndarray
    A: np.ndarray
    d_u: int
    d_w: int
    sigma2: float
    p_max: float

    def __post_init__(self):
        n = self.A.shape[0]
        if self.Z.shape != (n, 3 + self.d_u + self.d_w):
            raise InvalidInstanceError(
                f"Z must have shape ({n}, {3 + self.d_u + self.d_w}), got {self.Z.shape}")
        if np.any(np.diag(self.A) != 0):
            raise InvalidInstanceError("A must have a zero diagonal")

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    @property
    def lam(self) -> np.ndarray:
        return self.Z[:, 0]

    @property
    def direct(self) -> np.ndarray:
        return self.Z[:, 1]

    @property
    def v(self) -> np.ndarray:
        return self.Z[:, 2]

    @property
    def neighbors(self) -> List[np.ndarray]:
        """In-neighbours of each receiver i: transmitters j with A[i, j] != 0"""
        return [np.flatnonzero(row) for row in self.A]

    def edge_index(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(dst, src, h) for every interference edge, row-major (dst, then src ascending)"""
        dst, src = np.nonzero(self.A)
        return dst, src, self.A[dst, src]


@dataclass
class GeometryState:
    """Transmitter/receiver coordinates in meters plus the per-step movement std"""
    tx_pos: np.ndarray
    rx_pos: np.ndarray
    speed: float = 0.0

    def __post_init__(self):
        if self.speed < 0:
            raise ChannelSimError(f"speed must be >= 0, got {self.speed}")

    def distances(self) -> np.ndarray:
        """D[i, j] = distance from transmitter j to receiver i"""
        diff = self.rx_pos[:, None, :] - self.tx_pos[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))


def _as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _draw_instance(rng: np.random.Generator, n: int, dist: ChannelDistribution,
                   config: ChannelConfig) -> NetworkInstance:
    mean = dist.component_mean
    real = rng.normal(mean, dist.std, size=(n, n))
    imag = rng.normal(mean, dist.std, size=(n, n))
    H = np.abs(real + 1j * imag)
    if config.weighted:
        lam = 1.0 - rng.random(n)  # (0, 1]
    else:
        lam = np.ones(n)
    return NetworkInstance(H, lam, config.sigma2, config.p_max)


def generate_instance(n: int, dist: ChannelDistribution, seed: SeedLike,
                      config: Optional[ChannelConfig] = None) -> NetworkInstance:
    """Draw one instance; h_ij = |x + jy| with x, y ~ N(component_mean, std^2)"""
    if n < 1:
        raise ChannelSimError(f"n must be >= 1, got {n}")
    config = config or ChannelConfig()
    return _draw_instance(np.random.default_rng(seed), n, dist, config)


def generate_rayleigh(n: int, mean: float = 0.0, std: float = 1.0, seed: SeedLike = 0,
                      config: Optional[ChannelConfig] = None) -> NetworkInstance:
    """Magnitudes of complex Gaussian draws; mean != 0 yields Rician magnitudes"""
    if n < 1:
        raise ChannelSimError(f"n must be >= 1, got {n}")
    if not std > 0:
        raise ChannelSimError(f"std must be positive, got {std}")
    family = "rayleigh" if mean == 0 else "rician"
    return generate_instance(n, ChannelDistribution(family, mean, std), seed, config)


def generate_dataset(count: int, n: int, seed: Union[int, Sequence[int]],
                     dist: Optional[ChannelDistribution] = None,
                     config: Optional[ChannelConfig] = None,
                     eta_lc: Optional[float] = None) -> List[NetworkInstance]:
    """Independent instances from spawned child seeds; optional topology masking.

    seed is an int or a list of ints (SeedSequence entropy).
    """
    if count < 0:
        raise ChannelSimError(f"count must be >= 0, got {count}")
    dist = dist or ChannelDistribution()
    config = config or ChannelConfig()
    children = np.random.SeedSequence(seed).spawn(count)
    samples = []
    for child in children:
        channel_seed, mask_seed = child.spawn(2)
        inst = generate_instance(n, dist, channel_seed, config)
        if eta_lc is not None:
            inst = mask_topology(inst, eta_lc, mask_seed)
        samples.append(inst)
    logger.debug(f"Generated {count} instances (n={n}, {dist.label()}, eta_lc={eta_lc})")
    return samples


def to_graph(inst: NetworkInstance, d_u: int = 4, d_w: int = 4,
             v_init: Optional[np.ndarray] = None) -> GraphSample:
    """Node features (lambda, h_ii, v, u = 0, w = 0) and off-diagonal edge matrix"""
    n = inst.n_users
    if v_init is None:
        v_init = np.full(n, math.sqrt(inst.p_max))
    v_init = np.asarray(v_init, dtype=np.float64)
    if v_init.shape != (n,):
        raise InvalidInstanceError(f"v_init must have length {n}, got shape {v_init.shape}")
    if np.any(v_init < 0) or np.any(v_init > math.sqrt(inst.p_max)):
        raise InvalidInstanceError("v_init entries must lie in [0, sqrt(p_max)]")
    Z = np.zeros((n, 3 + d_u + d_w))
    Z[:, 0] = inst.lam
    Z[:, 1] = inst.direct
    Z[:, 2] = v_init
    A = np.array(inst.H, dtype=np.float64)
    np.fill_diagonal(A, 0.0)
    return GraphSample(Z=Z, A=A, d_u=d_u, d_w=d_w, sigma2=inst.sigma2, p_max=inst.p_max)


def instance_from_graph(graph: GraphSample) -> NetworkInstance:
    """Rebuild the instance from (Z direct-gain column, A)"""
    H = np.array(graph.A, dtype=np.float64)
    np.fill_diagonal(H, graph.direct)
    return NetworkInstance(H, graph.lam, graph.sigma2, graph.p_max)


def mask_topology(inst: NetworkInstance, eta_lc: float, seed: SeedLike) -> NetworkInstance:
    """Drop interference edge (i, j) when its standard-normal score c_ij < eta_lc"""
    n = inst.n_users
    scores = np.random.default_rng(seed).standard_normal((n, n))
    keep = (scores >= eta_lc) | np.eye(n, dtype=bool)
    return inst.with_channels(np.where(keep, inst.H, 0.0))


def generate_geometry(n: int, seed: SeedLike, speed: float = 0.0,
                      config: Optional[ChannelConfig] = None) -> GeometryState:
    """Transmitters uniform in the square area, receivers at U(30, 90) m from their transmitter"""
    config = config or ChannelConfig()
    rng = np.random.default_rng(seed)
    tx = rng.uniform(0.0, config.area_size, size=(n, 2))
    low, high = config.rx_distance_range
    radius = rng.uniform(low, high, size=n)
    angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
    offset = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    # mirror an axis offset that would leave the area; keeps the drawn distance
    outside = (tx + offset < 0.0) | (tx + offset > config.area_size)
    offset = np.where(outside, -offset, offset)
    return GeometryState(tx_pos=tx, rx_pos=tx + offset, speed=float(speed))


def generate_mobility_scenario(n: int, seed: SeedLike, speed: float,
                               config: Optional[ChannelConfig] = None,
                               dist: Optional[ChannelDistribution] = None
                               ) -> Tuple[GeometryState, NetworkInstance]:
    """Geometry plus a small-scale-faded instance drawn from the training law; pairs beyond coverage start cut"""
    config = config or ChannelConfig()
    geo_seed, channel_seed = _as_seed_sequence(seed).spawn(2)
    geo = generate_geometry(n, geo_seed, speed, config)
    inst = generate_instance(n, dist or ChannelDistribution(), channel_seed, config)
    H = inst.H.copy()
    H[geo.distances() > config.coverage_radius] = 0.0
    return geo, inst.with_channels(H)


def rescale_channels(old: GeometryState, new: GeometryState, inst: NetworkInstance,
                     config: Optional[ChannelConfig] = None) -> NetworkInstance:
    """Scale gains by (d_old / d_new)^(alpha/2); links beyond coverage are cut to 0"""
    config = config or ChannelConfig()
    d_old = np.maximum(old.distances(), config.min_distance)
    d_new = np.maximum(new.distances(), config.min_distance)
    factor = (d_old / d_new) ** (config.pathloss_exponent / 2.0)
    H = inst.H * factor
    H[d_new > config.coverage_radius] = 0.0
    return inst.with_channels(H)


def _reflect_into_area(pos: np.ndarray, size: float) -> np.ndarray:
    """Fold coordinates into [0, size] by mirroring at the walls (any number of bounces)"""
    folded = np.mod(pos, 2.0 * size)
    return np.where(folded > size, 2.0 * size - folded, folded)


def step_mobility(geo: GeometryState, inst: NetworkInstance, seed: SeedLike,
                  config: Optional[ChannelConfig] = None) -> Tuple[GeometryState, NetworkInstance]:
    """Move every receiver by N(0, S^2 I), reflected back into the area, and rescale the channels"""
    if geo.speed == 0:
        return geo, inst
    config = config or ChannelConfig()
    rng = np.random.default_rng(seed)
    delta = rng.normal(0.0, geo.speed, size=geo.rx_pos.shape)
    rx_pos = _reflect_into_area(geo.rx_pos + delta, config.area_size)
    moved = GeometryState(tx_pos=geo.tx_pos, rx_pos=rx_pos, speed=geo.speed)
    return moved, rescale_channels(geo, moved, inst, config)


# ---------------------------------------------------------------------------
# Dataset persistence (JSON-lines)
# ---------------------------------------------------------------------------

_HEADER_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "seed"],
    "properties": {
        "format": {"const": DATASET_FORMAT},
        "version": {"type": "integer"},
        "seed": {"type": "integer"},
        "config_digest": {"type": "string"},
    },
}

_RECORD_SCHEMA = {
    "type": "object",
    "required": ["n", "h", "lambda", "sigma2", "p_max"],
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "h": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "lambda": {"type": "array", "items": {"type": "number"}},
        "sigma2": {"type": "number", "exclusiveMinimum": 0},
        "p_max": {"type": "number", "exclusiveMinimum": 0},
    },
}

_header_validator = Draft7Validator(_HEADER_SCHEMA)
_record_validator = Draft7Validator(_RECORD_SCHEMA)


def _first_schema_error(validator: Draft7Validator, payload) -> Optional[str]:
    errors = sorted(validator.iter_errors(payload), key=lambda e: list(e.path))
    if not errors:
        return None
    error = errors[0]
    where = "/".join(str(p) for p in error.path) or "<root>"
    return f"{where}: {error.message}"


def save_dataset(samples: Sequence[NetworkInstance], path: str, seed: int = 0,
                 config_digest: Optional[str] = None):
    """Header line then one record per instance"""
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "seed": int(seed)}
    if config_digest:
        header["config_digest"] = config_digest
    save_jsonl_file(path, [header] + [inst.to_record() for inst in samples])
    logger.info(f"Saved dataset with {len(samples)} instances to {path}")


def load_dataset_with_header(path: str) -> Tuple[Dict, List[NetworkInstance]]:
    """Parse a dataset file; any defect raises before a result is returned"""
    header = None
    samples: List[NetworkInstance] = []
    for line_number, line in iter_jsonl_lines(path):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"invalid JSON ({e.msg})", line_number) from e
        if header is None:
            problem = _first_schema_error(_header_validator, payload)
            if problem:
                raise DatasetFormatError(f"bad header: {problem}", line_number)
            if payload["version"] != DATASET_VERSION:
                raise DatasetVersionError(
                    f"{path}: dataset version {payload['version']} is not supported "
                    f"(expected {DATASET_VERSION})")
            header = payload
            continue
        problem = _first_schema_error(_record_validator, payload)
        if problem:
            raise DatasetFormatError(f"bad record: {problem}", line_number)
        n = payload["n"]
        if len(payload["h"]) != n or any(len(row) != n for row in payload["h"]):
            raise DatasetFormatError(f"h is not {n}x{n}", line_number)
        try:
            samples.append(NetworkInstance(payload["h"], payload["lambda"],
                                           payload["sigma2"], payload["p_max"]))
        except InvalidInstanceError as e:
            raise DatasetFormatError(str(e), line_number) from e
    if header is None:
        raise DatasetFormatError("missing header record", 1)
    logger.debug(f"Loaded {len(samples)} instances from {path}")
    return header, samples


def load_dataset(path: str) -> List[NetworkInstance]:
    return load_dataset_with_header(path)[1]
