import numpy as np
import pytest
from hypothesis import given, strategies as st

from echoslam.exceptions import ArgumentError, ShapeError
from echoslam.localize import (Localizer, Query, error_stats, one_shot_localize, procrustes_2d,
                               trajectory_localize)
from echoslam.mapping import FloorMap, TrajectoryMap
from echoslam.motion import edges_from_deltas, relative


def _unit(rng, n, d=16):
    F = rng.standard_normal((n, d))
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def _map(nodes, elfs_per_step):
    steps = np.concatenate([[k] * len(e) for k, e in enumerate(elfs_per_step)])
    E = np.concatenate(elfs_per_step)
    return TrajectoryMap(nodes, np.zeros((len(E), 12, 48), np.float32), steps, E, "v", nodes[0])


def _line_nodes(n, heading=0.0, start=(0.0, 0.0), stride=0.5):
    d = np.array([np.cos(heading), np.sin(heading)])
    xy = np.asarray(start) + stride * np.arange(n)[:, None] * d
    return np.column_stack([xy, np.full(n, heading)])


def test_one_shot_own_elfs(rng):
    nodes = _line_nodes(11)
    per = [_unit(rng, 3) for _ in range(10)]
    m = _map(nodes, per)
    for k in (0, 4, 9):
        res = one_shot_localize(Query(per[k]), m)
        assert res.index == k
        np.testing.assert_allclose(res.position, m.step_positions[k])


def test_one_shot_orthogonal_tie_break():
    spots = np.eye(4)[:3]
    fm = FloorMap(np.array([[0, 0], [1, 0], [2, 0]], float), spots, np.ones(3), "v")
    res = one_shot_localize(Query(np.eye(4)[3:]), fm)
    assert res.index == 0 and res.low_confidence
    np.testing.assert_array_equal(res.position, [0, 0])


def test_one_shot_empty_map():
    with pytest.raises(ArgumentError):
        one_shot_localize(Query(np.eye(2)[:1]), FloorMap(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), "v"))


@given(st.integers(0, 1000), st.integers(1, 4))
def test_one_shot_invariant_to_duplicated_entry_features(seed, reps):
    rng = np.random.default_rng(seed)
    per = [_unit(rng, 2) for _ in range(6)]
    q = Query(_unit(rng, 3))
    a = one_shot_localize(q, _map(_line_nodes(7), per)).index
    dup = [np.repeat(e, reps, axis=0) for e in per]
    assert one_shot_localize(q, _map(_line_nodes(7), dup)).index == a


def _sweep_rmsd(A, B):
    ca, cb = A.mean(0), B.mean(0)
    best = np.inf
    for deg in np.arange(0, 360, 1.0):
        t = np.deg2rad(deg)
        R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        best = min(best, np.sqrt(np.mean(np.sum(((A - ca) @ R.T - (B - cb)) ** 2, axis=1))))
    return best


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_procrustes_global_optimum(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-3, 3, (n, 2))
    B = rng.uniform(-3, 3, (n, 2))
    R, t, rmsd = procrustes_2d(A, B)
    assert rmsd <= _sweep_rmsd(A, B) + 1e-6
    np.testing.assert_allclose(R @ R.T, np.eye(2), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_procrustes_recovers_rigid_motion(rng):
    A = rng.uniform(-2, 2, (8, 2))
    th = 1.1
    R0 = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    B = A @ R0.T + [3.0, -1.0]
    R, t, rmsd = procrustes_2d(A, B)
    np.testing.assert_allclose(R, R0, atol=1e-12)
    np.testing.assert_allclose(t, [3.0, -1.0], atol=1e-12)
    assert rmsd < 1e-12
    with pytest.raises(ShapeError):
        procrustes_2d(A, B[:5])


def _query_from_map(m, start, L):
    nodes = m.nodes[start:start + L + 1]
    deltas = relative(nodes[:-1], nodes[1:])
    per = m.per_step_elfs[start:start + L]
    steps = np.concatenate([[k] * len(e) for k, e in enumerate(per)])
    return Query(np.concatenate(per), edges_from_deltas(deltas), steps)


def test_trajectory_verbatim_query(rng):
    t = np.linspace(0, 2 * np.pi, 41)
    xy = np.column_stack([3 * np.cos(t) + 0.5 * np.cos(3 * t), 2 * np.sin(t)])
    d = np.diff(xy, axis=0)
    nodes = np.column_stack([xy, np.append(np.arctan2(d[:, 1], d[:, 0]), 0.0)])
    m = _map(nodes, [_unit(rng, 3) for _ in range(40)])
    for start in (0, 13, 30):
        res = trajectory_localize(_query_from_map(m, start, 8), m)
        assert res.mode == "trajectory" and res.index == start + 7
        np.testing.assert_allclose(res.position, m.step_positions[start + 7], atol=1e-12)


def test_trajectory_rmsd_gate_beats_ess(rng):
    # map: 10 straight steps, then two laps of a hexagon with the same stride;
    # the hexagon carries the query's ELFs
    straight = _line_nodes(11, stride=0.5)
    ang = np.linspace(0, 4 * np.pi, 13)[1:]
    arc = np.column_stack([5 + 0.5 * np.sin(ang), 0.5 * (1 - np.cos(ang)), ang])
    nodes = np.vstack([straight, arc])
    q_elfs = [_unit(rng, 2) for _ in range(6)]
    per = [_unit(rng, 2) for _ in range(10)] + [q_elfs[k % 6] for k in range(12)]
    m = _map(nodes, per)
    steps = np.repeat(np.arange(6), 2)
    q = Query(np.concatenate(q_elfs), edges_from_deltas([[0.5, 0, 0]] * 6), steps)
    res = trajectory_localize(q, m)
    assert res.mode == "trajectory"
    assert res.index <= 9            # an all-straight window, despite lower ESS
    all_in_arc = one_shot_localize(q, m).index
    assert all_in_arc >= 10


def test_trajectory_fallback_and_errors(rng):
    m = _map(_line_nodes(11), [_unit(rng, 2) for _ in range(10)])
    zigzag = edges_from_deltas([[0.5, 0, 1.5], [0.5, 0, -1.5]] * 3)
    q = Query(_unit(rng, 6), zigzag, np.arange(6))
    assert trajectory_localize(q, m, curve_tol=0.01).mode == "fallback"
    with pytest.raises(ArgumentError):
        trajectory_localize(Query(_unit(rng, 2)), m)
    with pytest.raises(ArgumentError):
        trajectory_localize(Query(_unit(rng, 1), edges_from_deltas([[1, 0, 0]]), [0]), m)


def test_trajectory_on_floor_map_tracks(rng):
    pos = np.column_stack([0.25 * np.arange(20), np.zeros(20)])
    elfs = _unit(rng, 20)
    fm = FloorMap(pos, elfs, np.ones(20), "v", tracks=[(pos, np.arange(20))])
    steps = np.arange(8)
    q = Query(elfs[5:13], edges_from_deltas([[0.25, 0, 0]] * 8), steps)
    res = trajectory_localize(q, fm)
    assert res.mode == "trajectory"
    np.testing.assert_allclose(res.position, pos[12])


def test_error_stats_examples():
    truth = np.zeros((4, 2))
    s = error_stats(np.array([[1, 0], [0, 2], [3, 0], [0, 4]], float), truth)
    assert (s.median, s.mean, s.q3) == pytest.approx((2.5, 2.5, 3.25))
    z = error_stats(truth, truth)
    assert z.median == z.mean == z.q3 == 0
    one = error_stats([[3, 4]], [[0, 0]])
    assert one.median == one.mean == one.q3 == 5
    with pytest.raises(ShapeError):
        error_stats(truth, truth[:2])


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=30), st.integers(0, 99))
def test_error_stats_permutation_invariant(pts, seed):
    est = np.array(pts)
    truth = np.zeros_like(est)
    perm = np.random.default_rng(seed).permutation(len(est))
    a, b = error_stats(est, truth), error_stats(est[perm], truth)
    assert (a.median, a.mean, a.q3) == pytest.approx((b.median, b.mean, b.q3))
    assert 0 <= a.median <= a.q3 + 1e-12


def test_localizer_estimator(rng):
    per = [_unit(rng, 3) for _ in range(10)]
    m = _map(_line_nodes(11), per)
    loc = Localizer().fit(m)
    out = loc.predict([Query(per[k]) for k in range(10)])
    np.testing.assert_allclose(out, m.step_positions)
    assert loc.score([Query(per[k]) for k in range(10)], m.step_positions) == 0.0
    with pytest.raises(ArgumentError):
        Localizer(mode="nearest").fit(m)
