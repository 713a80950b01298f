import numpy as np
import pytest
from hypothesis import given, strategies as st

from echoslam.exceptions import ArgumentError
from echoslam.loop_closure import (CurationConfig, LoopClosureDetector, binarize, build_ess_matrix, curate,
                                   ess, fit_line_ransac)


def _unit(rng, n, d=8):
    F = rng.standard_normal((n, d))
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def _line_matrix(n=174, offset=58, mirror=True):
    B = np.zeros((n, n), bool)
    i = np.arange(n - offset)
    B[i, i + offset] = True
    if mirror:
        B[i + offset, i] = True
    return B


def test_ess_examples():
    u = np.array([1.0, 0.0])
    v = np.array([0.5, np.sqrt(0.75)])
    assert ess([u], [u]) == pytest.approx(1.0)
    assert ess([u], [[0.0, 1.0]]) == pytest.approx(0.0)
    assert ess([u, v], [u]) == pytest.approx(0.75)
    with pytest.raises(ArgumentError):
        ess([], [u])


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_ess_symmetric_and_permutation_invariant(ka, kb, seed):
    rng = np.random.default_rng(seed)
    A, B = _unit(rng, ka), _unit(rng, kb)
    assert ess(A, B) == pytest.approx(ess(B, A), abs=1e-12)
    assert ess(A[rng.permutation(ka)], B[rng.permutation(kb)]) == pytest.approx(ess(A, B), abs=1e-12)
    assert -1.0 <= ess(A, B) <= 1.0


def test_ess_matrix_examples(rng):
    u = _unit(rng, 1)[0]
    np.testing.assert_allclose(build_ess_matrix([[u, u], [u], [u, u, u]]), np.ones((3, 3)))
    np.testing.assert_allclose(build_ess_matrix([[e] for e in np.eye(3)]), np.eye(3))
    with pytest.raises(ArgumentError):
        build_ess_matrix([[u], []])


def test_ess_matrix_brute_force(rng):
    steps = [_unit(rng, int(k)) for k in rng.integers(1, 7, 30)]
    M = build_ess_matrix(steps)
    oracle = np.zeros((30, 30))
    for i, a in enumerate(steps):
        for j, b in enumerate(steps):
            oracle[i, j] = np.mean([[x @ y for y in b] for x in a])
    np.testing.assert_allclose(M, oracle, atol=1e-9)
    assert np.array_equal(M, M.T)


def test_binarize_examples():
    m = np.zeros((60, 60))
    m[0, 30] = 0.41
    m[10, 15] = 0.9
    B = binarize(m)
    assert B[0, 30] and not B[10, 15]
    assert not binarize(np.full((60, 60), 0.39)).any()
    assert not np.diag(binarize(np.ones((30, 30)))).any()


def test_curate_pure_line():
    out = curate(_line_matrix())
    assert out == [(i, i + 58) for i in range(116)]


def test_curate_rejects_asymmetric_line():
    assert curate(_line_matrix(mirror=False)) == []


def test_curate_with_noise(rng):
    B = _line_matrix()
    n = len(B)
    iu = np.triu_indices(n, 1)
    noise = np.zeros_like(B)
    noise[iu] = rng.random(len(iu[0])) < 0.05
    noise |= noise.T
    noise &= ~B
    i, j = np.indices(B.shape)
    noise &= np.abs(i - j) >= 20
    out = set(curate(B | noise))
    true = {(a, a + 58) for a in range(116)}
    false = set(zip(*np.nonzero(np.triu(noise, 1))))
    assert len(out & true) >= 0.9 * len(true)
    assert len(out & false) <= 0.05 * len(false)


@st.composite
def noisy_binary(draw):
    n = draw(st.integers(40, 120))
    seed = draw(st.integers(0, 10_000))
    rng = np.random.default_rng(seed)
    B = rng.random((n, n)) < draw(st.floats(0.0, 0.1))
    for off in draw(st.lists(st.integers(20, n - 10), max_size=2)):
        i = np.arange(n - off)
        B[i, i + off] = True
    return B | B.T if draw(st.booleans()) else B


@given(noisy_binary())
def test_curate_invariants(B):
    cfg = CurationConfig()
    out = curate(B, cfg)
    for i, j in out:
        assert i < j and j - i >= cfg.min_separation
        assert B[i, j] and B[j, i]


@given(st.integers(0, 10_000))
def test_isolated_positives_never_add_pairs(seed):
    rng = np.random.default_rng(seed)
    B = _line_matrix(120, 40)
    base = set(curate(B))
    occupied = np.argwhere(B)
    extra = []
    for _ in range(200):
        c = rng.integers(0, 120, 2)
        pts = np.vstack([occupied] + ([np.array(extra)] if extra else []))
        if np.min(np.abs(pts - c).max(axis=1)) > 4:
            extra.append(c)
    noisy = B.copy()
    for a, b in extra:
        noisy[a, b] = noisy[b, a] = True
    assert set(curate(noisy)) <= base


def test_ransac_line(rng):
    x = np.arange(30.0)
    P = np.column_stack([x, 2 * x + 1])
    P = np.vstack([P, rng.uniform(0, 60, (10, 2))])
    mask = fit_line_ransac(P, rng=0)
    assert mask[:30].all()
    assert fit_line_ransac(P[:3], min_inliers=6) is None


def test_detector_estimator(rng):
    steps = [_unit(rng, 3) for _ in range(40)]
    det = LoopClosureDetector(random_state=1)
    pairs = det.fit(steps).pairs_
    assert det.ess_.shape == (40, 40) and det.binary_.dtype == bool
    assert det.predict(steps) == pairs
    assert det.config.seed == 1


def test_config_validation():
    with pytest.raises(ArgumentError):
        CurationConfig(ess_threshold=1.0)
    with pytest.raises(ArgumentError):
        CurationConfig(slice_width=0)
