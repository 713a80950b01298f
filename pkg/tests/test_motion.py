import numpy as np
import pytest
from hypothesis import given, strategies as st

from echoslam import motion
from echoslam.exceptions import ConfigurationError, SequenceError

angles = st.floats(-10, 10, allow_nan=False)
poses = st.tuples(st.floats(-50, 50), st.floats(-50, 50), angles).map(np.array)


def test_straight_noiseless_line():
    w = motion.simulate_walk(motion.WalkConfig.noiseless([[0, 0], [7, 0]]), rounds=1)
    assert len(w.odometry) == 10
    np.testing.assert_allclose(w.ground_truth[:, :2], np.column_stack([0.7 * np.arange(11), np.zeros(11)]),
                               atol=1e-12)


def test_rectangle_58_steps_per_round():
    wp = motion.rectangle_waypoints(0, 0, 12.3, 8.0)
    assert motion.path_length(wp) == pytest.approx(40.6)
    w = motion.simulate_walk(motion.WalkConfig(wp), rounds=1, seed=0)
    assert len(w.odometry) == 58
    w3 = motion.simulate_walk(motion.WalkConfig(wp), rounds=3, seed=0)
    assert len(w3.odometry) == 174
    assert len(w3.echo_poses) == 174 * 6


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_dead_reckoning_exact(seed):
    wp = motion.rectangle_waypoints(0.4, 0.4, 7.0, 5.0)
    w = motion.simulate_walk(motion.WalkConfig.noiseless(wp, stride_m=0.386), rounds=3, seed=seed)
    true = motion.relative(w.ground_truth[:-1], w.ground_truth[1:])
    assert w.deltas.tobytes() == true.tobytes()
    np.testing.assert_allclose(motion.dead_reckon(w.odometry, w.ground_truth[0]), w.ground_truth, atol=1e-9)


def test_dead_reckon_examples():
    start = motion.Pose2(1.0, 2.0, 0.3)
    np.testing.assert_array_equal(motion.dead_reckon([], start), [start.as_array()])
    edges = motion.edges_from_deltas([[1, 0, np.pi / 2]] * 4)
    out = motion.dead_reckon(edges)
    np.testing.assert_allclose(out[[1, 2, 3]], [[1, 0, np.pi / 2], [1, 1, np.pi], [0, 1, -np.pi / 2]], atol=1e-12)
    np.testing.assert_allclose(out[-1], [0, 0, 0], atol=1e-12)


def test_dead_reckon_index_gap():
    edges = [motion.OdometryEdge(0, 1, [1, 0, 0]), motion.OdometryEdge(2, 3, [1, 0, 0])]
    with pytest.raises(SequenceError):
        motion.dead_reckon(edges)


def test_drift_demonstrated():
    wp = motion.rectangle_waypoints(0, 0, 12.3, 8.0)
    errs = []
    for seed in range(50):
        w = motion.simulate_walk(motion.WalkConfig(wp), rounds=3, seed=seed)
        dr = motion.dead_reckon(w.odometry, w.ground_truth[0])
        errs.append(np.linalg.norm(dr[-1, :2] - w.ground_truth[-1, :2]))
    assert np.median(errs) > 1.0


def test_walk_config_validation():
    with pytest.raises(ConfigurationError):
        motion.WalkConfig([[0, 0]])
    with pytest.raises(ConfigurationError):
        motion.WalkConfig([[0, 0], [1, 0]], stride_m=0)
    with pytest.raises(ConfigurationError):
        motion.simulate_walk(motion.WalkConfig([[0, 0], [0.1, 0]]))


def test_echo_headings_follow_walking_direction():
    w = motion.simulate_walk(motion.WalkConfig.noiseless(motion.rectangle_waypoints(0, 0, 4, 3), stride_m=0.5))
    d = np.diff(w.ground_truth[:, :2], axis=0)
    np.testing.assert_allclose(w.echo_poses[::6, 2], np.arctan2(d[:, 1], d[:, 0]))
    np.testing.assert_allclose(w.echo_poses[::6, :2], w.ground_truth[:-1, :2])


def test_compose_matches_matrix_product(rng):
    for _ in range(20):
        a, b = rng.uniform(-5, 5, 3), rng.uniform(-5, 5, 3)
        oracle = motion.from_matrix(motion.to_matrix(a) @ motion.to_matrix(b))
        np.testing.assert_allclose(motion.compose(a, b), oracle, atol=1e-12)


@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    left = motion.compose(motion.compose(a, b), c)
    right = motion.compose(a, motion.compose(b, c))
    np.testing.assert_allclose(left[:2], right[:2], atol=1e-8)
    assert abs(motion.wrap_angle(left[2] - right[2])) < 1e-9


@given(poses, st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2), angles), min_size=0, max_size=8))
def test_dead_reckon_start_equivariance(start, deltas):
    edges = motion.edges_from_deltas(np.array(deltas).reshape(-1, 3))
    a = motion.dead_reckon(edges, start)
    b = motion.compose(start, motion.dead_reckon(edges))
    np.testing.assert_allclose(a[:, :2], b[:, :2], atol=1e-8)
    assert np.all(np.abs(motion.wrap_angle(a[:, 2] - b[:, 2])) < 1e-9)
    assert np.all(a[:, 2] > -np.pi) and np.all(a[:, 2] <= np.pi)


@given(st.floats(-1e3, 1e3))
def test_wrap_range(a):
    w = motion.wrap_angle(a)
    assert -np.pi < w <= np.pi
    assert abs(np.sin(w) - np.sin(a)) < 1e-6 and abs(np.cos(w) - np.cos(a)) < 1e-6


def test_pose2_wraps_and_composes():
    p = motion.Pose2(0, 0, 3 * np.pi)
    assert p.theta == pytest.approx(np.pi)
    q = motion.Pose2(0, 0, np.pi / 2) @ motion.Pose2(1, 0, 0)
    assert (q.x, q.y) == pytest.approx((0, 1))
