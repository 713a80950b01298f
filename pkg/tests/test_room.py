import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st
from shapely.geometry import LineString, Point, Polygon

from echoslam import dsp, room
from echoslam.exceptions import ConfigurationError, GeometryError

L_VERTS = np.array([[0, 0], [6, 0], [6, 3], [3.5, 3], [3.5, 7], [0, 7]], float)


def _mirror(p, a, b):
    d = (b - a) / np.linalg.norm(b - a)
    v = p - a
    return a + 2 * np.dot(v, d) * d - v


def brute_force_images(rm, src, rcv, order):
    """Every wall sequence, unfolded and ray-cast against the polygon with shapely."""
    poly = Polygon(rm.vertices)
    inside = poly.buffer(1e-9)
    walls = rm.walls
    found = set()
    for k in range(order + 1):
        for seq in itertools.product(range(rm.n_walls), repeat=k):
            if any(seq[i] == seq[i + 1] for i in range(k - 1)):
                continue
            chain = [np.asarray(src, float)]
            for w in seq:
                chain.append(_mirror(chain[-1], *walls[w]))
            pts = [np.asarray(rcv, float)]
            ok = True
            for i in range(k - 1, -1, -1):
                wall = LineString(walls[seq[i]])
                hit = LineString([pts[-1], chain[i + 1]]).intersection(wall)
                if hit.is_empty or hit.geom_type != "Point":
                    ok = False
                    break
                h = np.array(hit.coords[0])
                if min(np.linalg.norm(h - walls[seq[i]][0]), np.linalg.norm(h - walls[seq[i]][1])) < 1e-9:
                    ok = False
                    break
                pts.append(h)
            if not ok:
                continue
            pts.append(np.asarray(src, float))
            if all(inside.covers(LineString([pts[i], pts[i + 1]])) for i in range(len(pts) - 1)):
                found.add(tuple(seq))
    return found


def test_rectangle_order1_four_images():
    rm = room.Room.rectangle(8, 6)
    src = np.array([4.0, 3.0])
    imgs = [i for i in room.compute_image_sources(rm, src, order=1) if i.order == 1]
    assert len(imgs) == 4
    d = sorted(np.linalg.norm(i.point - src) for i in imgs)
    np.testing.assert_allclose(d, [6, 6, 8, 8])
    for i in imgs:
        a, b = rm.walls[i.walls[0]]
        np.testing.assert_allclose(i.point, _mirror(src, a, b))
        assert i.gain == pytest.approx(0.7)


@pytest.mark.parametrize("seed", range(5))
def test_l_room_images_match_brute_force(seed):
    rm = room.Room(L_VERTS, max_order=2)
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < 2:
        p = rng.uniform([0, 0], [6, 7])
        if rm.contains(p, margin=0.1)[0]:
            pts.append(p)
    src, rcv = pts
    ours = {i.walls for i in room.compute_image_sources(rm, src, 2, receiver=rcv)}
    assert ours == brute_force_images(rm, src, rcv, 2)


def test_source_outside_raises():
    with pytest.raises(GeometryError):
        room.compute_image_sources(room.Room(L_VERTS), np.array([5.0, 5.0]))


def test_room_validation():
    with pytest.raises(GeometryError):
        room.Room(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float))
    with pytest.raises(ConfigurationError):
        room.Room.rectangle(2, 2, reflection_coeff=1.0)


def test_direct_path_delay_example():
    rm = room.Room.rectangle(8, 6)
    dev = room.Device([4, 3], 0.0, speaker_offset_m=1.715, mic_offset_m=1.715)
    ir = room.render_impulse_response(rm, dev)
    assert ir.delays[ir.orders == 0][0] == pytest.approx(441.0)


def test_direct_path_delays_random_geometries():
    rng = np.random.default_rng(0)
    done = 0
    while done < 100:
        w, h = rng.uniform(2, 10, 2)
        rm = room.Room.rectangle(w, h, max_order=1) if done % 2 else room.Room(L_VERTS * rng.uniform(0.5, 1.5),
                                                                                 max_order=1)
        pos = rng.uniform(rm.vertices.min(0), rm.vertices.max(0))
        dev = room.Device(pos, rng.uniform(-np.pi, np.pi), rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3))
        if not rm.contains(np.stack([dev.speaker, dev.mic, pos])).all():
            continue
        if not Polygon(rm.vertices).contains(LineString([dev.speaker, dev.mic])):
            continue
        ir = room.render_impulse_response(rm, dev)
        analytic = np.linalg.norm(dev.speaker - dev.mic) / 343.0 * 44100
        direct = ir.delays[ir.orders == 0]
        assert len(direct) == 1 and abs(direct[0] - analytic) < 1.0
        assert np.all(ir.delays >= direct[0] - 1e-9)
        done += 1


def test_omnidirectional_ignores_heading():
    rm = room.Room.rectangle(8, 6)
    a = room.render_impulse_response(rm, room.Device([3, 2], 0.3, 0, 0, directivity_alpha=0.0))
    b = room.render_impulse_response(rm, room.Device([3, 2], 2.1, 0, 0, directivity_alpha=0.0))
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)


def test_rotation_180_changes_amplitudes_not_delays():
    rm = room.Room.rectangle(8, 6)
    a = room.render_impulse_response(rm, room.Device([3, 2], 0.4))
    b = room.render_impulse_response(rm, room.Device([3, 2], 0.4 + np.pi))
    # speaker and mic swap places; reciprocity keeps the delay set
    np.testing.assert_allclose(np.sort(a.delays), np.sort(b.delays), atol=1e-9)
    fa = np.sort(a.amplitudes[a.orders == 1])
    fb = np.sort(b.amplitudes[b.orders == 1])
    assert not np.allclose(fa, fb)


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_heading_never_changes_delays_without_offsets(h1, h2):
    rm = room.Room.rectangle(8, 6)
    a = room.render_impulse_response(rm, room.Device([2.5, 4.0], h1, 0.0, 0.0))
    b = room.render_impulse_response(rm, room.Device([2.5, 4.0], h2, 0.0, 0.0))
    np.testing.assert_array_equal(a.delays, b.delays)


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_heading_delay_change_bounded_with_offsets(h1, h2):
    rm = room.Room.rectangle(8, 6)
    da, db = room.Device([2.5, 4.0], h1), room.Device([2.5, 4.0], h2)
    ia = {i.walls: np.linalg.norm(i.point - da.mic) for i in
          room.compute_image_sources(rm, da.speaker, receiver=da.mic)}
    ib = {i.walls: np.linalg.norm(i.point - db.mic) for i in
          room.compute_image_sources(rm, db.speaker, receiver=db.mic)}
    assert ia[()] == pytest.approx(ib[()]) == pytest.approx(0.15)
    # triangle inequality: speaker and mic each move by 2 r |sin(dh / 2)|
    moved = np.linalg.norm(da.speaker - db.speaker) + np.linalg.norm(da.mic - db.mic)
    assert moved <= 0.3 + 1e-12
    for key in ia.keys() & ib.keys():
        assert abs(ia[key] - ib[key]) <= moved + 1e-9


def test_repeated_reflections_decrease_amplitude():
    rm = room.Room.rectangle(8, 6)
    dev = room.Device([3, 2], 0.0, directivity_alpha=0.0)
    imgs = room.compute_image_sources(rm, dev.speaker, receiver=dev.mic)
    ir = room.render_impulse_response(rm, dev)
    amp = {i.walls: a for i, a in zip(imgs, ir.amplitudes)}
    for a, b in [(0, 2), (1, 3)]:
        chain = [(a,), (a, b), (a, b, a)]
        vals = [amp[c] for c in chain if c in amp]
        assert len(vals) == 3 and vals[0] > vals[1] > vals[2]


def test_single_tap_convolution_identity():
    chirp = dsp.generate_chirp()
    ir = room.ImpulseResponse(np.array([500.0]), np.array([1.0]), np.array([0]))
    out = room.render_window(ir, chirp, 485, 2352)
    expect = np.zeros(2352)
    expect[15:15 + 441] = chirp.samples
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_simulate_echo_deterministic():
    rm = room.Room.rectangle(8, 6)
    quiet = room.Device([3, 2], 0.5, snr_db=np.inf)
    np.testing.assert_array_equal(room.simulate_echo(rm, quiet, seed=1), room.simulate_echo(rm, quiet, seed=2))
    dev = room.Device([3, 2], 0.5)
    a, b = room.simulate_echo(rm, dev, seed=9), room.simulate_echo(rm, dev, seed=9)
    assert a.tobytes() == b.tobytes()
    assert len(a) == 2352 and np.max(np.abs(a)) <= 1


def _cos(a, b):
    return float(np.dot(a.ravel(), b.ravel()) / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_far_devices_less_similar_than_repeats():
    rm = room.Room.rectangle(8, 6)
    chirp = dsp.generate_chirp()
    same, far = [], []
    for s in range(50):
        p = np.array([2.0, 2.0])
        a = dsp.compute_spectrogram(room.simulate_echo(rm, room.Device(p, 0.0), chirp, seed=2 * s))
        b = dsp.compute_spectrogram(room.simulate_echo(rm, room.Device(p, 0.0), chirp, seed=2 * s + 1))
        c = dsp.compute_spectrogram(room.simulate_echo(rm, room.Device(p + [2.0, 0.0], 0.0), chirp, seed=s))
        same.append(_cos(a, b))
        far.append(_cos(a, c))
    assert np.mean(far) < np.mean(same)


def test_tiny_grid():
    ds = room.synth_grid_dataset(room.Room.rectangle(1, 1), 0.5, [0.0], 1)
    assert len(ds) == 1
    np.testing.assert_allclose(ds.positions[0], [0.5, 0.5])


def _flood_fill_count(poly, lo, spacing, shape):
    inside = poly.buffer(-1e-9)
    start = next((i, j) for i in range(shape[0]) for j in range(shape[1])
                 if inside.contains(Point(lo + spacing * np.array([i, j]))))
    seen, queue = {start}, deque([start])
    while queue:
        i, j = queue.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (i + di, j + dj)
            if n in seen or not (0 <= n[0] < shape[0] and 0 <= n[1] < shape[1]):
                continue
            if inside.contains(Point(lo + spacing * np.array(n))):
                seen.add(n)
                queue.append(n)
    return len(seen)


@pytest.mark.parametrize("verts", [np.array([[0, 0], [8, 0], [8, 6], [0, 6]], float), L_VERTS])
def test_interior_grid_matches_flood_fill(verts):
    rm = room.Room(verts)
    pts = room.interior_grid(rm, 0.25)
    lo = verts.min(0)
    shape = tuple(int(v) for v in np.floor((verts.max(0) - lo) / 0.25) + 1)
    assert len(pts) == _flood_fill_count(Polygon(verts), lo, 0.25, shape)
    if verts.shape[0] == 4:
        assert len(pts) == 31 * 23


def test_grid_dataset_size_product():
    ds = room.synth_grid_dataset(room.Room.rectangle(1, 1), 0.5, [0, np.pi / 2, np.pi, -np.pi / 2], 100)
    assert len(ds) == 1 * 400
    assert set(ds.orientation_ids.tolist()) == {0, 1, 2, 3}
    jitter = np.abs(np.angle(np.exp(1j * (ds.headings - np.repeat([0, np.pi / 2, np.pi, -np.pi / 2], 100)))))
    assert jitter.max() <= np.deg2rad(5.0) + 1e-12


def test_grid_dataset_order_independent_seeds():
    rm = room.Room.rectangle(2, 2)
    a = room.synth_grid_dataset(rm, 0.5, [0.0, 1.0], 2, seed=3)
    b = room.synth_grid_dataset(rm, 0.5, [0.0], 2, seed=3)
    # the first orientation's traces do not depend on how many orientations follow
    np.testing.assert_array_equal(a.traces[a.orientation_ids == 0], b.traces)


def test_empty_grid_raises():
    with pytest.raises(ConfigurationError):
        room.synth_grid_dataset(room.Room.rectangle(0.1, 0.1), 0.5, [0.0], 1)
