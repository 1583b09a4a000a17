"""
Evaluation suites
Sum-rate ratio tables against single-run WMMSE, scalability, channel
distribution shift, topology masking, mobility, sample complexity, width and
aggregation sweeps, plus the feature correlation metric.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Protocol, Sequence
import logging

import numpy as np
from scipy.stats import spearmanr
from tqdm import tqdm

from channel_sim import (ChannelConfig, ChannelDistribution, NetworkInstance, generate_dataset,
                         generate_mobility_scenario, step_mobility, to_graph)
from shared_utils import digest_of, ordered_parallel_map
from uwgnn import UwgnnConfig, UwgnnModel, forward, predict_powers, ratio_of_means, train
from wmmse_core import single_run_powers, solve_best_of, sum_rate

logger = logging.getLogger(__name__)

DEFAULT_TEST_COUNT = 2000
DEFAULT_TRAIN_COUNT = 10000

TOPOLOGY_DIRECTIONS = ("dense_to_sparse", "sparse_to_dense")
# the sparse-to-dense direction starts from the training sparsity and densifies
DENSE_TO_SPARSE_ETAS = (-1e6, -1.0, -0.5, 0.0, 0.3, 0.6)
SPARSE_TRAIN_ETA = 0.6

# entropy tags for held-out draws; training sets use the bare seed
TEST_SET_TAGS = {"test": 1, "shift": 2, "topology": 3}


class ExperimentError(Exception):
    """An experiment was configured inconsistently"""


class Policy(Protocol):
    name: str

    def powers(self, instances: Sequence[NetworkInstance]) -> List[np.ndarray]:
        ...


@dataclass
class UwgnnPolicy:
    model: UwgnnModel
    name: str = "uwgnn"

    def powers(self, instances: Sequence[NetworkInstance]) -> List[np.ndarray]:
        return predict_powers(self.model.cfg, self.model.params, instances)


@dataclass
class WmmsePolicy:
    """Single-run WMMSE posing as a model; its ratio against the baseline is exactly 1"""
    threads: int = 1
    name: str = "wmmse"

    def powers(self, instances: Sequence[NetworkInstance]) -> List[np.ndarray]:
        return single_run_powers(instances, threads=self.threads)


@dataclass
class InstanceResult:
    instance_id: int
    n_users: int
    model_rate: float
    wmmse_rate: float
    best_rate: Optional[float] = None

    @property
    def ratio(self) -> float:
        return self.model_rate / self.wmmse_rate if self.wmmse_rate > 0 else float("nan")

    def to_row(self) -> Dict:
        return {
            "instance_id": self.instance_id,
            "n_users": self.n_users,
            "model_rate": self.model_rate,
            "wmmse_rate": self.wmmse_rate,
            "best_rate": "" if self.best_rate is None else self.best_rate,
            "ratio": self.ratio,
        }


@dataclass
class ExperimentReport:
    name: str
    per_instance: List[InstanceResult]
    summary: Dict = field(default_factory=dict)

    @property
    def mean_ratio(self) -> float:
        return self.summary["mean_ratio"]

    @staticmethod
    def build(name: str, instances: Sequence[NetworkInstance], model_rates: np.ndarray,
              wmmse_rates: np.ndarray, best_rates: Optional[np.ndarray] = None,
              seed: int = 0, config_digest: str = "", extra: Optional[Dict] = None) -> 'ExperimentReport':
        results = [
            InstanceResult(instance_id=i, n_users=inst.n_users, model_rate=float(model_rates[i]),
                           wmmse_rate=float(wmmse_rates[i]),
                           best_rate=None if best_rates is None else float(best_rates[i]))
            for i, inst in enumerate(instances)
        ]
        keep = wmmse_rates > 0
        ratios = model_rates[keep] / wmmse_rates[keep]
        skipped = int((~keep).sum())
        if skipped:
            logger.warning(f"{name}: {skipped} instances with zero baseline rate left out of the ratio")
        sizes = sorted({inst.n_users for inst in instances})
        summary = {
            "mean_ratio": float(ratios.mean()) if ratios.size else float("nan"),
            "std": float(ratios.std()) if ratios.size else float("nan"),
            "n_users": sizes[0] if len(sizes) == 1 else sizes,
            "count": len(instances),
            "skipped": skipped,
            "config_digest": config_digest,
            "seed": seed,
        }
        if best_rates is not None:
            summary["mean_best_ratio"] = float(np.mean(best_rates[keep] / wmmse_rates[keep])) \
                if ratios.size else float("nan")
        summary.update(extra or {})
        return ExperimentReport(name=name, per_instance=results, summary=summary)


@dataclass
class CurvePoint:
    x: float
    mean: float
    std: float


@dataclass
class CurveReport:
    name: str
    x_label: str
    points: List[CurvePoint] = field(default_factory=list)
    summary: Dict = field(default_factory=dict)

    def rows(self) -> List[Dict]:
        return [{"x": p.x, "mean": p.mean, "std": p.std} for p in self.points]


def _rates(instances: Sequence[NetworkInstance], powers: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([sum_rate(inst, p) for inst, p in zip(instances, powers)])


def _derived_seeds(seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def held_out_seed(seed: int, purpose: str = "test") -> List[int]:
    """SeedSequence entropy for a held-out set, disjoint from generate_dataset(count, n, seed)"""
    if purpose not in TEST_SET_TAGS:
        raise ExperimentError(f"unknown test set purpose '{purpose}', expected one of {list(TEST_SET_TAGS)}")
    return [seed, TEST_SET_TAGS[purpose]]


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def evaluate(policy: Policy, instances: Sequence[NetworkInstance], name: str, seed: int = 0,
             config_digest: str = "", restarts_for_upper: int = 0, threads: int = 1,
             extra: Optional[Dict] = None) -> ExperimentReport:
    """Rate of the policy against single-run WMMSE (and optionally best-of-restarts) per instance"""
    if not instances:
        raise ExperimentError(f"{name}: empty test set")
    model_rates = _rates(instances, policy.powers(instances))
    wmmse_rates = _rates(instances, single_run_powers(instances, threads=threads))
    best_rates = None
    if restarts_for_upper > 0:
        restart_seeds = _derived_seeds(seed, len(instances))

        def _best(index: int) -> float:
            return solve_best_of(instances[index], restarts_for_upper, seed=restart_seeds[index])[1]

        best_rates = np.array(ordered_parallel_map(_best, list(range(len(instances))), threads))
        # the first restart is the single run, up to batch rounding
        best_rates = np.maximum(best_rates, wmmse_rates)
    report = ExperimentReport.build(name, instances, model_rates, wmmse_rates, best_rates,
                                   seed=seed, config_digest=config_digest, extra=extra)
    logger.info(f"{name}: {policy.name} mean ratio {report.mean_ratio:.4f} "
                f"over {len(instances)} instances")
    return report


def ratio_table(model: Policy, test_set: Sequence[NetworkInstance], restarts_for_upper: int = 0,
                seed: int = 0, config_digest: str = "", threads: int = 1) -> ExperimentReport:
    return evaluate(model, test_set, "ratio_table", seed=seed, config_digest=config_digest,
                    restarts_for_upper=restarts_for_upper, threads=threads)


def scalability_suite(model: Policy, test_sizes: Sequence[int], count: int = DEFAULT_TEST_COUNT,
                      seed: int = 0, config: Optional[ChannelConfig] = None,
                      dist: Optional[ChannelDistribution] = None, config_digest: str = "",
                      threads: int = 1, progress: bool = False) -> List[ExperimentReport]:
    """Evaluate one fixed model at every test size"""
    reports = []
    for n, size_seed in tqdm(list(zip(test_sizes, _derived_seeds(seed, len(test_sizes)))),
                             desc="Scalability", disable=not progress):
        test_set = generate_dataset(count, n, size_seed, dist=dist, config=config)
        reports.append(evaluate(model, test_set, f"scalability_n{n}", seed=seed,
                                config_digest=config_digest, threads=threads, extra={"test_n": n}))
    return reports


def default_shift_grid() -> List[ChannelDistribution]:
    """Rayleigh variance sweep, Rician (mean 1) variance sweep and line-of-sight strength sweep"""
    grid = [ChannelDistribution("rayleigh", 0.0, std) for std in (0.5, 1.0, 2.0, 3.0)]
    grid += [ChannelDistribution("rician", 1.0, std) for std in (0.5, 1.0, 2.0)]
    grid += [ChannelDistribution("rician", 1.0, 1.0, los) for los in (0.5, 2.0, 4.0)]
    return grid


def distribution_shift_suite(model: Policy, shift: ChannelDistribution, n: int = 10,
                             count: int = DEFAULT_TEST_COUNT, seed: int = 0,
                             config: Optional[ChannelConfig] = None, config_digest: str = "",
                             threads: int = 1) -> ExperimentReport:
    test_set = generate_dataset(count, n, held_out_seed(seed, "shift"), dist=shift, config=config)
    return evaluate(model, test_set, f"shift_{shift.label()}", seed=seed, config_digest=config_digest,
                    threads=threads, extra={"family": shift.family, "mean": shift.mean,
                                            "std_dev": shift.std, "los_strength": shift.los_strength})


def topology_grid(direction: str) -> List[float]:
    if direction not in TOPOLOGY_DIRECTIONS:
        raise ExperimentError(f"unknown topology direction '{direction}', expected one of {TOPOLOGY_DIRECTIONS}")
    grid = list(DENSE_TO_SPARSE_ETAS)
    return grid if direction == "dense_to_sparse" else grid[::-1]


def topology_suite(model: Policy, direction: str, eta_grid: Optional[Sequence[float]] = None,
                   n: int = 10, count: int = DEFAULT_TEST_COUNT, seed: int = 0,
                   config: Optional[ChannelConfig] = None, config_digest: str = "",
                   threads: int = 1, progress: bool = False) -> List[ExperimentReport]:
    """Masked copies of one test set per eta; the channels and mask scores are shared across etas"""
    default_grid = topology_grid(direction)
    reports = []
    for eta in tqdm(list(eta_grid if eta_grid is not None else default_grid), desc="Topology",
                    disable=not progress):
        test_set = generate_dataset(count, n, held_out_seed(seed, "topology"), config=config, eta_lc=eta)
        reports.append(evaluate(model, test_set, f"topology_{direction}_eta{eta:g}", seed=seed,
                                config_digest=config_digest, threads=threads,
                                extra={"direction": direction, "eta_lc": eta}))
    return reports


def surviving_edges(inst: NetworkInstance) -> int:
    off_diagonal = ~np.eye(inst.n_users, dtype=bool)
    return int(np.count_nonzero(inst.H[off_diagonal]))


def mobility_suite(model: Policy, speeds: Sequence[float], horizon: int, n: int = 10,
                   count: int = 200, seed: int = 0, config: Optional[ChannelConfig] = None,
                   config_digest: str = "", threads: int = 1, progress: bool = False) -> List[CurveReport]:
    """Per-step ratio curve for each speed; scenario and movement draws are shared across speeds"""
    if horizon < 0:
        raise ExperimentError(f"horizon must be >= 0, got {horizon}")
    scenario_seeds = _derived_seeds(seed, count)
    curves = []
    for speed in speeds:
        scenarios = [generate_mobility_scenario(n, s, speed, config) for s in scenario_seeds]
        geos = [geo for geo, _ in scenarios]
        instances = [inst for _, inst in scenarios]
        curve = CurveReport(name=f"mobility_speed{speed:g}", x_label="step",
                            summary={"speed": speed, "horizon": horizon, "n_users": n, "count": count,
                                     "seed": seed, "config_digest": config_digest})
        edges = []
        for step in tqdm(range(horizon + 1), desc=f"Mobility S={speed:g}", disable=not progress):
            if step > 0:
                moved = [step_mobility(geo, inst, np.random.SeedSequence([s, step]), config)
                         for geo, inst, s in zip(geos, instances, scenario_seeds)]
                geos = [geo for geo, _ in moved]
                instances = [inst for _, inst in moved]
            report = evaluate(model, instances, f"{curve.name}_step{step}", seed=seed,
                              config_digest=config_digest, threads=threads)
            curve.points.append(CurvePoint(x=step, mean=report.summary["mean_ratio"],
                                           std=report.summary["std"]))
            edges.append(sum(surviving_edges(inst) for inst in instances))
        curve.summary["surviving_edges"] = edges
        curve.summary["min_ratio"] = float(min(p.mean for p in curve.points))
        logger.info(f"Mobility S={speed:g}: min ratio {curve.summary['min_ratio']:.4f}, "
                    f"{edges[-1]} edges left at step {horizon}")
        curves.append(curve)
    return curves


def dataset_digest(instances: Sequence[NetworkInstance]) -> str:
    return digest_of([inst.to_record() for inst in instances])


def sample_complexity_suite(cfg: UwgnnConfig, train_sizes: Sequence[int],
                            test_set: Sequence[NetworkInstance], epochs: int, n_train: int = 10,
                            repeats: int = 3, batch_size: int = 64, lr: float = 1e-3, seed: int = 0,
                            config: Optional[ChannelConfig] = None, config_digest: str = "",
                            progress: bool = False) -> CurveReport:
    """Final ratio against training-set size; training sets are nested prefixes per repeat"""
    if not train_sizes or min(train_sizes) < 1:
        raise ExperimentError("train_sizes must be a nonempty list of positive sizes")
    reference = _rates(test_set, single_run_powers(test_set))
    repeat_seeds = _derived_seeds(seed, repeats)
    pools = [generate_dataset(max(train_sizes), n_train, s, config=config) for s in repeat_seeds]
    curve = CurveReport(name="sample_complexity", x_label="train_size",
                        summary={"repeats": repeats, "epochs": epochs, "n_train": n_train,
                                 "seed": seed, "config_digest": config_digest})
    xs, ys, digests = [], [], []
    for size in tqdm(list(train_sizes), desc="Sample complexity", disable=not progress):
        digests.append(dataset_digest(test_set))
        ratios = []
        for pool, s in zip(pools, repeat_seeds):
            params, _ = train(cfg, pool[:size], epochs, batch_size=batch_size, seed=s, lr=lr,
                              val_set=test_set[:min(len(test_set), 200)])
            rates = _rates(test_set, predict_powers(cfg, params, test_set))
            ratios.append(ratio_of_means(rates, reference))
            xs.append(size)
            ys.append(ratios[-1])
        curve.points.append(CurvePoint(x=size, mean=float(np.mean(ratios)), std=float(np.std(ratios))))
        logger.info(f"Sample complexity: {size} training instances -> ratio {np.mean(ratios):.4f}")
    rho = spearmanr(xs, ys).correlation if len(set(xs)) > 1 else float("nan")
    curve.summary["spearman"] = float(rho)
    curve.summary["test_digests"] = digests
    return curve


def config_sweep(variants: Dict[str, UwgnnConfig], train_set: Sequence[NetworkInstance],
                 test_set: Sequence[NetworkInstance], epochs: int, batch_size: int = 64,
                 lr: float = 1e-3, seed: int = 0, progress: bool = False) -> List[Dict]:
    """Train one model per labelled configuration and report its test ratio"""
    reference = _rates(test_set, single_run_powers(test_set))
    rows = []
    for label, cfg in tqdm(list(variants.items()), desc="Sweep", disable=not progress):
        params, curve = train(cfg, train_set, epochs, batch_size=batch_size, seed=seed, lr=lr,
                              val_set=test_set[:min(len(test_set), 200)])
        rates = _rates(test_set, predict_powers(cfg, params, test_set))
        model = UwgnnModel(cfg, params)
        rows.append({"label": label, "ratio": ratio_of_means(rates, reference),
                     "n_parameters": model.n_parameters, "final_val_ratio": curve.final_ratio})
        logger.info(f"Sweep {label}: ratio {rows[-1]['ratio']:.4f} with {model.n_parameters} parameters")
    return rows


def width_sweep_suite(base: UwgnnConfig, msg_widths: Sequence[int], var_widths: Sequence[int],
                      train_set: Sequence[NetworkInstance], test_set: Sequence[NetworkInstance],
                      epochs: int, seed: int = 0, config_digest: str = "",
                      progress: bool = False) -> List[CurveReport]:
    """Message width d_msg and variable width d_u = d_w varied one at a time"""
    curves = []
    for kind, widths, make in (
            ("message_width", msg_widths, lambda d: replace(base, d_msg=d)),
            ("variable_width", var_widths, lambda d: replace(base, d_u=d, d_w=d))):
        if not widths:
            continue
        variants = {f"{kind}={d}": make(d) for d in widths}
        rows = config_sweep(variants, train_set, test_set, epochs, seed=seed, progress=progress)
        curves.append(CurveReport(
            name=f"width_{kind}", x_label=kind,
            points=[CurvePoint(x=d, mean=row["ratio"], std=0.0) for d, row in zip(widths, rows)],
            summary={"n_parameters": [row["n_parameters"] for row in rows], "epochs": epochs, "seed": seed,
                     "config_digest": config_digest}))
    return curves


def aggregation_suite(base: UwgnnConfig, train_set: Sequence[NetworkInstance],
                      test_set: Sequence[NetworkInstance], epochs: int, seed: int = 0,
                      aggregations: Sequence[str] = ("max", "mean", "sum"),
                      progress: bool = False) -> List[Dict]:
    variants = {agg: replace(base, aggregation=agg) for agg in aggregations}
    return config_sweep(variants, train_set, test_set, epochs, seed=seed, progress=progress)


# ---------------------------------------------------------------------------
# Feature correlation
# ---------------------------------------------------------------------------

def corr_metric(X) -> float:
    """Mean absolute Pearson correlation over all ordered pairs of distinct columns.

    Constant columns correlate 0 with everything.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ExperimentError(f"corr_metric needs a 2-D matrix with >= 2 columns, got shape {X.shape}")
    d = X.shape[1]
    columns = []
    for j in range(d):
        col = X[:, j]
        columns.append(None if np.ptp(col) == 0 else col - col.mean())
    pair_values = []
    for i in range(d):
        for j in range(i + 1, d):
            a, b = columns[i], columns[j]
            if a is None or b is None:
                pair_values.append(0.0)
                continue
            r = np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b))
            pair_values.append(min(abs(float(r)), 1.0))
    return math.fsum(pair_values) / (d * (d - 1) / 2)


def node_feature_matrix(inst: NetworkInstance, v: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """[lambda, h_ii, v, u, w] per node"""
    return np.column_stack([inst.lam, inst.direct, v, u, w])


def feature_correlation_trace(model: UwgnnModel, instances: Sequence[NetworkInstance], seed: int = 0,
                              config_digest: str = "") -> CurveReport:
    """Corr of the node features after each unrolled layer, averaged over instances"""
    per_layer: List[List[float]] = [[] for _ in range(model.cfg.K)]
    for inst in instances:
        graph = to_graph(inst, model.cfg.d_u, model.cfg.d_w)
        _, trace = forward(model.cfg, model.params, graph)
        for k, state in enumerate(trace):
            per_layer[k].append(corr_metric(node_feature_matrix(inst, state.v, state.u, state.w)))
    points = [CurvePoint(x=k + 1, mean=float(np.mean(vals)), std=float(np.std(vals)))
              for k, vals in enumerate(per_layer)]
    return CurveReport(name="feature_correlation", x_label="layer", points=points,
                       summary={"count": len(instances), "seed": seed, "config_digest": config_digest})
