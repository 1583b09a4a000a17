#!/usr/bin/env python3
"""
Channel simulator tests

Generation determinism and statistics, graph conversion, topology masks,
mobility and the JSON-lines dataset format.
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import json
import math

import numpy as np
import pytest

from channel_sim import (ChannelConfig, ChannelDistribution, ChannelSimError, DatasetFormatError,
                         DatasetVersionError, GeometryState, InvalidInstanceError, NetworkInstance,
                         generate_dataset, generate_geometry, generate_mobility_scenario, generate_rayleigh,
                         instance_from_graph, load_dataset, load_dataset_with_header, mask_topology,
                         _reflect_into_area, rescale_channels, save_dataset, step_mobility, to_graph)


# --- generation -------------------------------------------------------------

def test_same_seed_gives_identical_channels():
    a = generate_rayleigh(2, mean=0.0, std=1.0, seed=7)
    b = generate_rayleigh(2, mean=0.0, std=1.0, seed=7)
    assert a.H.shape == (2, 2)
    assert np.all(np.isfinite(a.H)) and np.all(a.H >= 0)
    assert np.array_equal(a.H, b.H)
    assert np.array_equal(a.lam, np.ones(2))


def test_different_seeds_differ():
    assert not np.array_equal(generate_rayleigh(4, seed=1).H, generate_rayleigh(4, seed=2).H)


def test_rayleigh_power_mean_is_two():
    # 10^5 draws of |x + jy|^2 with unit-variance components
    draws = np.concatenate([generate_rayleigh(10, seed=s).H.ravel() ** 2 for s in range(1000)])
    assert draws.size == 100000
    assert abs(draws.mean() - 2.0) / 2.0 < 0.02


def test_rician_magnitudes_exceed_rayleigh():
    rayleigh = np.concatenate([generate_rayleigh(10, 0.0, 1.0, seed=s).H.ravel() for s in range(200)])
    rician = np.concatenate([generate_rayleigh(10, 1.0, 1.0, seed=s).H.ravel() for s in range(200)])
    assert rician.mean() > rayleigh.mean()


@pytest.mark.parametrize("n,std", [(0, 1.0), (3, 0.0), (3, -1.0)])
def test_generate_rejects_bad_arguments(n, std):
    with pytest.raises(ChannelSimError):
        generate_rayleigh(n, std=std, seed=0)


def test_config_carries_noise_and_power():
    config = ChannelConfig.from_noise_db(10.0, p_max=2.0)
    inst = generate_rayleigh(3, seed=0, config=config)
    assert inst.sigma2 == pytest.approx(10.0)
    assert inst.p_max == 2.0


def test_weighted_config_draws_weights_in_unit_interval():
    samples = generate_dataset(50, 5, seed=3, config=ChannelConfig(weighted=True))
    lam = np.concatenate([s.lam for s in samples])
    assert np.all(lam > 0) and np.all(lam <= 1)
    assert lam.std() > 0.1


def test_distribution_los_strength_scales_component_mean():
    assert ChannelDistribution("rayleigh", mean=5.0).component_mean == 0.0
    assert ChannelDistribution("rician", mean=1.0, los_strength=3.0).component_mean == 3.0
    with pytest.raises(ChannelSimError):
        ChannelDistribution("nakagami")


def test_generate_dataset_is_deterministic_and_independent():
    a = generate_dataset(5, 4, seed=11)
    b = generate_dataset(5, 4, seed=11)
    assert a == b
    assert not np.array_equal(a[0].H, a[1].H)


# --- instance invariants ----------------------------------------------------

def test_instance_rejects_invalid_fields():
    with pytest.raises(InvalidInstanceError):
        NetworkInstance([[1.0, -0.1], [0.2, 1.0]], [1, 1], 1.0, 1.0)
    with pytest.raises(InvalidInstanceError):
        NetworkInstance([[1.0]], [0.0], 1.0, 1.0)
    with pytest.raises(InvalidInstanceError):
        NetworkInstance([[1.0]], [1.0], 0.0, 1.0)
    with pytest.raises(InvalidInstanceError):
        NetworkInstance([[1.0, 2.0]], [1.0], 1.0, 1.0)


def test_instance_arrays_are_read_only():
    inst = generate_rayleigh(3, seed=0)
    with pytest.raises(ValueError):
        inst.H[0, 0] = 5.0


def test_permuted_relabels_users():
    inst = generate_rayleigh(4, seed=5)
    perm = [2, 0, 3, 1]
    moved = inst.permuted(perm)
    for a in range(4):
        for b in range(4):
            assert moved.H[a, b] == inst.H[perm[a], perm[b]]


# --- graph view -------------------------------------------------------------

def test_single_user_graph():
    graph = to_graph(generate_rayleigh(1, seed=0))
    assert np.array_equal(graph.A, np.zeros((1, 1)))
    assert graph.Z.shape == (1, 3 + 4 + 4)
    assert graph.neighbors[0].size == 0


def test_full_interference_graph_has_complete_neighbourhoods():
    graph = to_graph(generate_rayleigh(3, seed=1), d_u=2, d_w=3)
    assert graph.Z.shape == (3, 8)
    assert all(len(nbrs) == 2 for nbrs in graph.neighbors)
    assert np.all(np.diag(graph.A) == 0)


def test_graph_features_and_round_trip():
    inst = generate_rayleigh(5, seed=2, config=ChannelConfig(weighted=True))
    graph = to_graph(inst)
    assert np.array_equal(graph.lam, inst.lam)
    assert np.array_equal(graph.direct, inst.direct)
    assert np.all(graph.v == 1.0)
    assert np.all(graph.Z[:, 3:] == 0)
    assert instance_from_graph(graph) == inst


def test_edge_index_is_row_major():
    graph = to_graph(generate_rayleigh(3, seed=4))
    dst, src, h = graph.edge_index()
    assert list(zip(dst, src)) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    assert np.array_equal(h, graph.A[dst, src])


def test_v_init_validation():
    inst = generate_rayleigh(3, seed=0)
    with pytest.raises(InvalidInstanceError):
        to_graph(inst, v_init=np.ones(2))
    with pytest.raises(InvalidInstanceError):
        to_graph(inst, v_init=np.full(3, 1.5))


# --- topology masks ---------------------------------------------------------

def test_mask_extremes():
    inst = generate_rayleigh(6, seed=3)
    assert mask_topology(inst, -1e6, seed=1) == inst
    cut = mask_topology(inst, 1e6, seed=1)
    assert np.array_equal(np.diag(cut.H), inst.direct)
    assert np.count_nonzero(cut.H - np.diag(np.diag(cut.H))) == 0


def test_mask_survival_fraction_at_zero():
    inst = generate_rayleigh(101, seed=0)  # 10100 off-diagonal edges
    cut = mask_topology(inst, 0.0, seed=9)
    off = ~np.eye(101, dtype=bool)
    fraction = np.count_nonzero(cut.H[off]) / off.sum()
    assert abs(fraction - 0.5) < 0.02


def test_masked_fraction_is_monotone_in_eta():
    inst = generate_rayleigh(30, seed=1)
    off = ~np.eye(30, dtype=bool)
    survivors = [np.count_nonzero(mask_topology(inst, eta, seed=4).H[off]) for eta in (-2, -1, 0, 0.5, 1, 2)]
    assert survivors == sorted(survivors, reverse=True)


def test_masked_entries_are_exact_zeros_and_others_untouched():
    inst = generate_rayleigh(8, seed=6)
    cut = mask_topology(inst, 0.3, seed=2)
    changed = cut.H != inst.H
    assert np.all(cut.H[changed] == 0.0)
    assert not np.any(np.diag(changed))


# --- mobility ---------------------------------------------------------------

def test_geometry_distances_within_drawn_range():
    geo = generate_geometry(200, seed=0)
    direct = np.diag(geo.distances())
    assert np.all(direct >= 30.0 - 1e-9) and np.all(direct <= 90.0 + 1e-9)
    assert np.all(geo.tx_pos >= 0) and np.all(geo.tx_pos <= 1000)


def test_zero_speed_is_identity():
    geo, inst = generate_mobility_scenario(5, seed=1, speed=0.0)
    new_geo, new_inst = step_mobility(geo, inst, seed=3)
    assert new_geo is geo
    assert new_inst == inst


def test_pair_beyond_coverage_is_cut():
    tx = np.array([[0.0, 0.0], [100.0, 0.0]])
    old = GeometryState(tx_pos=tx, rx_pos=np.array([[50.0, 0.0], [150.0, 0.0]]))
    new = GeometryState(tx_pos=tx, rx_pos=np.array([[50.0, 0.0], [1600.0, 0.0]]))  # rx 1 now 1500 m from tx 1
    inst = NetworkInstance(np.ones((2, 2)), np.ones(2), 1.0, 1.0)
    moved = rescale_channels(old, new, inst)
    assert moved.H[1, 1] == 0.0
    assert moved.H[1, 0] == 0.0  # 1600 m from tx 0
    assert moved.H[0, 0] == 1.0


def test_doubling_distance_scales_gain_by_pathloss():
    tx = np.array([[0.0, 0.0]])
    old = GeometryState(tx_pos=tx, rx_pos=np.array([[100.0, 0.0]]))
    new = GeometryState(tx_pos=tx, rx_pos=np.array([[200.0, 0.0]]))
    inst = NetworkInstance([[0.8]], [1.0], 1.0, 1.0)
    for alpha in (2.0, 3.0):
        moved = rescale_channels(old, new, inst, ChannelConfig(pathloss_exponent=alpha))
        assert moved.H[0, 0] == pytest.approx(0.8 * 2.0 ** (-alpha / 2.0), rel=1e-12)


def test_scenario_starts_with_far_pairs_cut():
    geo, inst = generate_mobility_scenario(30, seed=4, speed=0.0)
    far = geo.distances() > 1000.0
    assert far.any()
    assert np.all(inst.H[far] == 0.0)
    assert np.all(inst.H[~far] > 0.0)


def test_receivers_stay_inside_area():
    geo, inst = generate_mobility_scenario(20, seed=5, speed=200.0)
    for step in range(10):
        geo, inst = step_mobility(geo, inst, seed=100 + step)
        assert np.all(geo.rx_pos >= 0.0) and np.all(geo.rx_pos <= 1000.0)
    folded = _reflect_into_area(np.array([-10.0, 1010.0, 2500.0, 500.0]), 1000.0)
    assert folded.tolist() == [10.0, 990.0, 500.0, 500.0]


def test_mobility_step_is_seeded():
    geo, inst = generate_mobility_scenario(4, seed=2, speed=50.0)
    a = step_mobility(geo, inst, seed=8)
    b = step_mobility(geo, inst, seed=8)
    assert np.array_equal(a[0].rx_pos, b[0].rx_pos)
    assert a[1] == b[1]
    assert np.array_equal(a[0].tx_pos, geo.tx_pos)


# --- persistence ------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    samples = generate_dataset(64, 10, seed=5, config=ChannelConfig(weighted=True, sigma2=0.5))
    path = str(tmp_path / "train.jsonl")
    save_dataset(samples, path, seed=5, config_digest="abc123")
    header, loaded = load_dataset_with_header(path)
    assert header == {"format": "d2d-dataset", "version": 1, "seed": 5, "config_digest": "abc123"}
    assert loaded == samples


def test_empty_dataset_round_trip(tmp_path):
    path = str(tmp_path / "empty.jsonl")
    save_dataset([], path, seed=1)
    with open(path) as f:
        assert len(f.read().splitlines()) == 1
    assert load_dataset(path) == []


def test_truncated_record_names_line(tmp_path):
    path = str(tmp_path / "bad.jsonl")
    save_dataset(generate_dataset(3, 2, seed=0), path)
    with open(path) as f:
        lines = f.read().splitlines()
    lines[2] = lines[2][:len(lines[2]) // 2]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as info:
        load_dataset(path)
    assert info.value.line_number == 3


def test_version_mismatch_is_explicit(tmp_path):
    path = str(tmp_path / "v2.jsonl")
    with open(path, "w") as f:
        f.write(json.dumps({"format": "d2d-dataset", "version": 2, "seed": 0}) + "\n")
    with pytest.raises(DatasetVersionError):
        load_dataset(path)


def test_schema_violations_are_format_errors(tmp_path):
    path = str(tmp_path / "schema.jsonl")
    records = [
        {"format": "d2d-dataset", "version": 1, "seed": 0},
        {"n": 2, "h": [[1, 0.5], [0.5]], "lambda": [1, 1], "sigma2": 1.0, "p_max": 1.0},
    ]
    with open(path, "w") as f:
        f.write("\n".join(json.dumps(r) for r in records) + "\n")
    with pytest.raises(DatasetFormatError) as info:
        load_dataset(path)
    assert info.value.line_number == 2

    records[1] = {"n": 1, "h": [[1.0]], "lambda": [1.0], "sigma2": -1.0, "p_max": 1.0}
    with open(path, "w") as f:
        f.write("\n".join(json.dumps(r) for r in records) + "\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_missing_header_is_rejected(tmp_path):
    path = str(tmp_path / "none.jsonl")
    with open(path, "w") as f:
        f.write("\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_saved_floats_round_trip_bit_exact(tmp_path):
    H = np.array([[math.pi, 1e-300], [1.0 / 3.0, 2.0 ** 0.5]])
    inst = NetworkInstance(H, [0.1, 0.7], 0.3, 1.7)
    path = str(tmp_path / "exact.jsonl")
    save_dataset([inst], path)
    assert load_dataset(path)[0] == inst
