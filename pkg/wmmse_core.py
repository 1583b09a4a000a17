"""
WMMSE power control for single-antenna interference networks
Sum-rate and MSE evaluators, the three block updates, the iterative solver
(single instance with cost trace, or a vectorised batch) and restart/grid baselines.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from channel_sim import NetworkInstance
from shared_utils import chunked, ordered_parallel_map

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-12
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-5


class WmmseError(Exception):
    """Base error for the WMMSE solver"""


class ContractViolationError(WmmseError):
    """An input violates the documented preconditions"""


class SolverError(WmmseError):
    """The iteration produced a non-finite value"""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class WmmseState:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    k: int = 0
    cost_trace: List[float] = field(default_factory=list)
    clip_events: int = 0


# ---------------------------------------------------------------------------
# Array kernels; H is (..., n, n), vectors are (..., n), scalars broadcast as (...,)
# ---------------------------------------------------------------------------

def _diag(H: np.ndarray) -> np.ndarray:
    return np.diagonal(H, axis1=-2, axis2=-1)


def _received_power(H2: np.ndarray, p: np.ndarray) -> np.ndarray:
    """sum_j h_ij^2 p_j for every receiver i (desired signal included)"""
    return np.einsum('...ij,...j->...i', H2, p)


def sum_rates(H: np.ndarray, lam: np.ndarray, sigma2, p: np.ndarray) -> np.ndarray:
    """Weighted sum rate of every instance in a batch, in bits per channel use"""
    H2 = H * H
    signal = _diag(H2) * p
    interference = _received_power(H2, p) - signal + np.asarray(sigma2)[..., None]
    return np.sum(lam * np.log2(1.0 + signal / interference), axis=-1)


def _u_kernel(H, v, sigma2):
    denom = _received_power(H * H, v * v) + np.asarray(sigma2)[..., None]
    return _diag(H) * v / np.maximum(denom, DENOMINATOR_FLOOR)


def _w_kernel(H, u, v):
    return 1.0 / np.maximum(1.0 - u * _diag(H) * v, DENOMINATOR_FLOOR)


def _v_raw_kernel(H, lam, u, w):
    # sum_j lam_j h_ji^2 u_j^2 w_j: transmitter i's weighted leakage, own link included
    denom = np.einsum('...ji,...j->...i', H * H, lam * u * u * w)
    return lam * u * _diag(H) * w / np.maximum(denom, DENOMINATOR_FLOOR)


def _mse_kernel(H, sigma2, u, v):
    # e_i = (1 - u_i h_ii v_i)^2 + sum_{j != i} (u_i h_ij v_j)^2 + sigma^2 u_i^2
    direct = _diag(H) * v
    cross = _received_power(H * H, v * v) - direct * direct
    return (1.0 - u * direct) ** 2 + u * u * cross + np.asarray(sigma2)[..., None] * u * u


def _cost_kernel(H, lam, sigma2, u, v, w):
    e = _mse_kernel(H, sigma2, u, v)
    return np.sum(lam * (w * e - np.log(w)), axis=-1)


def power_from_v(v: np.ndarray, p_max) -> np.ndarray:
    """p = v^2, returning p_max exactly where v sits on the upper bound"""
    p_max = np.asarray(p_max, dtype=np.float64)
    sqrt_p = np.sqrt(p_max)
    if p_max.ndim:
        p_max = p_max[..., None]
        sqrt_p = sqrt_p[..., None]
    return np.where(v >= sqrt_p, p_max, np.minimum(v * v, p_max))


# ---------------------------------------------------------------------------
# Single-instance API
# ---------------------------------------------------------------------------

def sum_rate(inst: NetworkInstance, p) -> float:
    """sum_i lambda_i log2(1 + h_ii^2 p_i / (sum_{j != i} h_ij^2 p_j + sigma^2))"""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (inst.n_users,):
        raise ContractViolationError(f"power vector must have length {inst.n_users}, got shape {p.shape}")
    if np.any(p < 0):
        raise ContractViolationError(f"negative transmit power: {p.min()}")
    return float(sum_rates(inst.H, inst.lam, inst.sigma2, p))


def mse_e(inst: NetworkInstance, u, v) -> np.ndarray:
    return _mse_kernel(inst.H, inst.sigma2, np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))


def update_u(inst: NetworkInstance, state: WmmseState) -> np.ndarray:
    """u_i = h_ii v_i / (sum_j h_ij^2 v_j^2 + sigma^2)"""
    return _u_kernel(inst.H, state.v, inst.sigma2)


def update_w(inst: NetworkInstance, state: WmmseState) -> np.ndarray:
    """w_i = 1 / (1 - u_i h_ii v_i)"""
    return _w_kernel(inst.H, state.u, state.v)


def update_v(inst: NetworkInstance, state: WmmseState, clip: bool = True) -> np.ndarray:
    """v_i = lambda_i u_i h_ii w_i / sum_j lambda_j h_ji^2 u_j^2 w_j, projected on [0, sqrt(p_max)]"""
    raw = _v_raw_kernel(inst.H, inst.lam, state.u, state.w)
    if not clip:
        return raw
    return np.clip(raw, 0.0, math.sqrt(inst.p_max))


def wmmse_cost(inst: NetworkInstance, state: WmmseState) -> float:
    """Weighted sum-MSE objective sum_i lambda_i (w_i e_i - log w_i)"""
    return float(_cost_kernel(inst.H, inst.lam, inst.sigma2, state.u, state.v, state.w))


def _iterate(H, lam, sigma2, p_max, v0, max_iter: int, tol: float, record: bool = False):
    """Run u/w/v rounds on a batch until every instance meets tol or max_iter.

    Converged instances are frozen. Returns (u, v, w, iterations, traces, clip_events).
    """
    batch = H.shape[0]
    sqrt_p = np.sqrt(p_max)[:, None]
    v = np.array(v0, dtype=np.float64)
    u = np.zeros_like(v)
    w = np.ones_like(v)
    active = np.ones(batch, dtype=bool)
    previous = np.full(batch, np.nan)
    iterations = np.zeros(batch, dtype=int)
    clip_events = np.zeros(batch, dtype=int)
    traces: List[List[float]] = [[] for _ in range(batch)] if record else []
    for k in range(1, max_iter + 1):
        u_new = _u_kernel(H, v, sigma2)
        w_new = _w_kernel(H, u_new, v)
        raw = _v_raw_kernel(H, lam, u_new, w_new)
        v_new = np.clip(raw, 0.0, sqrt_p)
        cost = _cost_kernel(H, lam, sigma2, u_new, v_new, w_new)
        if not (np.all(np.isfinite(u_new[active])) and np.all(np.isfinite(v_new[active]))
                and np.all(np.isfinite(w_new[active])) and np.all(np.isfinite(cost[active]))):
            raise SolverError("non-finite WMMSE iterate", k)
        mask = active[:, None]
        u = np.where(mask, u_new, u)
        w = np.where(mask, w_new, w)
        v = np.where(mask, v_new, v)
        clip_events += (active & np.any(raw > sqrt_p, axis=-1)).astype(int)
        iterations[active] = k
        if record:
            for b in np.flatnonzero(active):
                traces[b].append(float(cost[b]))
        converged = active & (np.abs(cost - previous) <= tol)
        previous = np.where(active, cost, previous)
        active = active & ~converged
        if not active.any():
            break
    return u, v, w, iterations, traces, clip_events


def solve(inst: NetworkInstance, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
          v0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, WmmseState]:
    """Algorithm-1 WMMSE from v0 (default full power); returns (p, final state)"""
    if max_iter < 1:
        raise ContractViolationError(f"max_iter must be >= 1, got {max_iter}")
    sqrt_p = math.sqrt(inst.p_max)
    v0 = np.full(inst.n_users, sqrt_p) if v0 is None else np.asarray(v0, dtype=np.float64)
    if v0.shape != (inst.n_users,) or np.any(v0 < 0) or np.any(v0 > sqrt_p):
        raise ContractViolationError("v0 must be a feasible vector in [0, sqrt(p_max)]^n")
    u, v, w, iterations, traces, clips = _iterate(
        inst.H[None], inst.lam[None], np.array([inst.sigma2]), np.array([inst.p_max]),
        v0[None], max_iter, tol, record=True)
    state = WmmseState(u=u[0], v=v[0], w=w[0], k=int(iterations[0]),
                       cost_trace=traces[0], clip_events=int(clips[0]))
    logger.debug(f"WMMSE finished after {state.k} iterations, cost {state.cost_trace[-1]:.6f}, "
                 f"{state.clip_events} clipped rounds")
    return power_from_v(state.v, inst.p_max), state


def solve_batch(instances: Sequence[NetworkInstance], max_iter: int = DEFAULT_MAX_ITER,
                tol: float = DEFAULT_TOL, v0: Optional[np.ndarray] = None) -> np.ndarray:
    """Vectorised solve over instances sharing one user count; returns (B, n) powers"""
    if not instances:
        return np.zeros((0, 0))
    n = instances[0].n_users
    if any(inst.n_users != n for inst in instances):
        raise ContractViolationError("solve_batch needs instances with a common user count")
    H = np.stack([inst.H for inst in instances])
    lam = np.stack([inst.lam for inst in instances])
    sigma2 = np.array([inst.sigma2 for inst in instances])
    p_max = np.array([inst.p_max for inst in instances])
    if v0 is None:
        v0 = np.repeat(np.sqrt(p_max)[:, None], n, axis=1)
    _, v, _, _, _, _ = _iterate(H, lam, sigma2, p_max, v0, max_iter, tol)
    return power_from_v(v, p_max)


def solve_best_of(inst: NetworkInstance, restarts: int, seed: int = 0,
                  max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> Tuple[np.ndarray, float]:
    """Best sum rate over restarts; restart 0 is full power, the rest draw p_i ~ U(0, p_max)"""
    if restarts < 1:
        raise ContractViolationError(f"restarts must be >= 1, got {restarts}")
    n = inst.n_users
    rng = np.random.default_rng(seed)
    v0 = np.empty((restarts, n))
    v0[0] = math.sqrt(inst.p_max)
    for r in range(1, restarts):
        v0[r] = np.sqrt(inst.p_max * rng.random(n))
    powers = solve_batch([inst] * restarts, max_iter, tol, v0=v0)
    rates = sum_rates(inst.H, inst.lam, inst.sigma2, powers)
    best = int(np.argmax(rates))
    return powers[best], float(rates[best])


def grid_search_max(inst: NetworkInstance, steps: int = 101) -> Tuple[np.ndarray, float]:
    """Brute-force maximiser over p in {0, p_max/(steps-1), ..., p_max}^n (small n only)"""
    n = inst.n_users
    if n > 3:
        raise ContractViolationError(f"grid search is limited to n <= 3, got {n}")
    axis = np.linspace(0.0, inst.p_max, steps)
    grids = np.meshgrid(*([axis] * n), indexing='ij')
    P = np.stack([g.ravel() for g in grids], axis=-1)
    rates = sum_rates(inst.H[None], inst.lam[None], np.array([inst.sigma2]), P)
    best = int(np.argmax(rates))  # first maximiser in lexicographic order
    return P[best], float(rates[best])



def single_run_powers(instances: Sequence[NetworkInstance], max_iter: int = DEFAULT_MAX_ITER,
                      tol: float = DEFAULT_TOL, threads: int = 1, chunk_size: int = 256) -> List[np.ndarray]:
    """Full-power-initialised WMMSE powers for every instance, in input order.

    Instances are grouped by user count and solved in vectorised chunks.
    """
    by_size = {}
    for index, inst in enumerate(instances):
        by_size.setdefault(inst.n_users, []).append(index)
    jobs = [chunk for indices in by_size.values() for chunk in chunked(indices, chunk_size)]

    def _run(chunk: List[int]) -> np.ndarray:
        return solve_batch([instances[i] for i in chunk], max_iter, tol)

    powers: List[Optional[np.ndarray]] = [None] * len(instances)
    for chunk, chunk_powers in zip(jobs, ordered_parallel_map(_run, jobs, threads)):
        for i, p in zip(chunk, chunk_powers):
            powers[i] = p
    logger.debug(f"Single-run WMMSE for {len(instances)} instances in {len(jobs)} chunks")
    return powers


def single_run_rates(instances: Sequence[NetworkInstance], max_iter: int = DEFAULT_MAX_ITER,
                     tol: float = DEFAULT_TOL, threads: int = 1) -> np.ndarray:
    powers = single_run_powers(instances, max_iter, tol, threads)
    return np.array([sum_rate(inst, p) for inst, p in zip(instances, powers)])
