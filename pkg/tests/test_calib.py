import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shockev import synth
from shockev.calib import (CameraModel, Correspondence, MarkerSpec, TriggerMatrices,
                           accumulate_trigger_matrices, detect_markers, dlt, estimate_projection,
                           led_coarse, led_refine, read_camera, read_markers,
                           reprojection_error, write_camera, write_markers)
from shockev.errors import DetectionError, EstimationError, ParseError, ValidationError
from shockev.evcore import EventStream
from shockev.geom import project_point, viewing_ray

CAM = CameraModel.look_at((3.0, -20.0, 2.0), (0.0, 0.0, 1.5), 855.27, (631.90, 364.76))


def matrices(pos, neg, shape=(32, 32)):
    D_pos = np.zeros(shape, dtype=np.int64)
    D_neg = np.zeros(shape, dtype=np.int64)
    for (x, y), k in pos.items():
        D_pos[y, x] = k
    for (x, y), k in neg.items():
        D_neg[y, x] = k
    return TriggerMatrices(D_pos + D_neg, D_pos, D_neg, (0, 1))


def blink_scene(center, sigma=1.5, period=500.0):
    """LED-only scene whose marker projects exactly onto ``center`` in CAM."""
    C, d = viewing_ray(CAM, center)
    world = tuple(C + 15.0 * d)
    led = synth.LedMarkerSpec("A", world, period, sigma_px=sigma)
    scene = synth.BlastScene(t0=3000.0, duration=1.0, clutter=synth.ClutterSpec.off(), leds=(led,))
    out = synth.simulate_camera(scene, synth.SimCamera(CAM), 0, seed=0)
    return out.stream.time_window(0, 3000), led


# -- trigger matrices -------------------------------------------------------

def test_trigger_counts_per_polarity():
    s = EventStream.from_arrays([1, 2, 3], [4, 4, 4], [6, 6, 6], [1, 1, -1], 10, 10)
    m = accumulate_trigger_matrices(s, (0, 10))
    assert (m.D[6, 4], m.D_pos[6, 4], m.D_neg[6, 4]) == (3, 2, 1)
    assert m.D.sum() == 3


def test_empty_window_zero_matrices():
    s = EventStream.from_arrays([1], [4], [6], [1], 10, 10)
    m = accumulate_trigger_matrices(s, (100, 200))
    assert m.D.sum() == 0 and m.D.shape == (10, 10)


def test_blink_cloud_matches_brute_force():
    stream, led = blink_scene((100.0, 80.0))
    m = accumulate_trigger_matrices(stream, (0, 500))
    brute_p = np.zeros_like(m.D_pos)
    brute_n = np.zeros_like(m.D_neg)
    for e in (stream[i] for i in range(len(stream))):
        if 0 <= e.t < 500:
            (brute_p if e.p > 0 else brute_n)[e.y, e.x] += 1
    np.testing.assert_array_equal(m.D_pos, brute_p)
    np.testing.assert_array_equal(m.D_neg, brute_n)
    np.testing.assert_array_equal(m.D, m.D_pos + m.D_neg)


# -- coarse and refined position -------------------------------------------

def test_coarse_single_pixel_and_max():
    assert led_coarse(matrices({(3, 9): 1}, {})) == (3, 9)
    assert led_coarse(matrices({(5, 5): 9, (7, 7): 5}, {})) == (5, 5)


def test_coarse_tie_breaks_on_smallest_y_then_x():
    assert led_coarse(matrices({(9, 2): 4, (1, 7): 4, (3, 2): 4}, {})) == (3, 2)


def test_coarse_all_zero_raises():
    with pytest.raises(DetectionError):
        led_coarse(matrices({}, {}))


def test_refine_symmetric_plateau_is_exact():
    pos = {(10 + dx, 12 + dy): 4 for dx in (-1, 0, 1) for dy in (-1, 0, 1)}
    assert led_refine(matrices(pos, pos), (10, 12), q=3) == (10.0, 12.0)


def test_refine_single_weighted_pixel():
    assert led_refine(matrices({(10, 10): 4}, {(10, 10): 2}), (10, 10)) == (10.0, 10.0)


def test_refine_requires_balanced_support():
    with pytest.raises(DetectionError):
        led_refine(matrices({(10, 10): 4}, {}), (10, 10))


def test_refine_ignores_unbalanced_excess():
    base = matrices({(10, 10): 3, (11, 10): 2}, {(10, 10): 3, (11, 10): 2})
    doubled = matrices({(10, 10): 6, (11, 10): 4}, {(10, 10): 3, (11, 10): 2})
    assert led_refine(base, (10, 10)) == led_refine(doubled, (10, 10))


@settings(max_examples=40, deadline=None)
@given(st.integers(-5, 5), st.integers(-5, 5), st.lists(st.integers(0, 6), min_size=25, max_size=25))
def test_refine_translation_equivariant(dx, dy, weights):
    pos = {(12 + i % 5, 12 + i // 5): w for i, w in enumerate(weights)}
    if not any(weights):
        return
    a = led_refine(matrices(pos, pos), (14, 14), q=3)
    moved = {(x + dx, y + dy): w for (x, y), w in pos.items()}
    b = led_refine(matrices(moved, moved), (14 + dx, 14 + dy), q=3)
    assert b[0] == pytest.approx(a[0] + dx, abs=1e-12)
    assert b[1] == pytest.approx(a[1] + dy, abs=1e-12)


def test_blink_cloud_detection_accuracy():
    stream, led = blink_scene((100.0, 80.0))
    m = accumulate_trigger_matrices(stream, (0, int(led.period_us)))
    cx, cy = led_coarse(m)
    assert math.hypot(cx - 100.0, cy - 80.0) <= 2.0
    rx, ry = led_refine(m, (cx, cy), q=5)
    assert math.hypot(rx - 100.0, ry - 80.0) <= 0.5
    assert max(abs(rx - cx), abs(ry - cy)) <= 5


def test_detect_markers_matches_ids_by_period():
    spots = [(200.4, 150.2, 400.0), (900.7, 500.1, 650.0), (640.3, 300.8, 900.0)]
    leds = []
    for k, (x, y, period) in enumerate(spots):
        C, d = viewing_ray(CAM, (x, y))
        leds.append(synth.LedMarkerSpec(f"L{k}", tuple(C + 12.0 * d), period))
    scene = synth.BlastScene(t0=4000.0, duration=1.0, clutter=synth.ClutterSpec.off(),
                             leds=tuple(leds))
    stream = synth.simulate_camera(scene, synth.SimCamera(CAM), 0, seed=1).stream
    dets = detect_markers(stream.time_window(0, 4000), [led.as_marker() for led in leds[::-1]])
    got = {d.marker_id: d.refined for d in dets}
    for k, (x, y, _) in enumerate(spots):
        gx, gy = got[f"L{k}"]
        assert math.hypot(gx - x, gy - y) <= 0.5


# -- projection estimation --------------------------------------------------

def world_points(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(-6, 6, n), rng.uniform(-6, 6, n), rng.uniform(0, 4, n)])


def correspondences(model, pts, noise=0.0, seed=0):
    img = project_point(model.gamma, pts)
    img = img + np.random.default_rng(seed).normal(0, noise, img.shape) if noise else img
    return [Correspondence(tuple(a), tuple(b)) for a, b in zip(img, pts)]


def test_noiseless_dlt_recovers_model():
    corr = correspondences(CAM, world_points(8))
    est = estimate_projection(corr)
    assert est.reproj_error < 1e-6
    G_true, G_est = CAM.gamma, est.gamma
    scale = (G_true.ravel() @ G_est.ravel()) / (G_est.ravel() @ G_est.ravel())
    np.testing.assert_allclose(scale * G_est, G_true, rtol=1e-6, atol=1e-6 * np.abs(G_true).max())
    assert est.f == pytest.approx(CAM.f, rel=1e-6)
    np.testing.assert_allclose(est.optical_center, CAM.optical_center, atol=1e-6)


def test_coplanar_points_degenerate():
    pts = world_points(10)
    pts[:, 2] = 1.0
    with pytest.raises(EstimationError, match="coplanar"):
        estimate_projection(correspondences(CAM, pts))


def test_too_few_correspondences():
    with pytest.raises(EstimationError):
        estimate_projection(correspondences(CAM, world_points(5)))


def test_noisy_reprojection_within_table_order():
    # field calibrations report 0.34-0.38 px
    corr = correspondences(CAM, world_points(12, seed=3), noise=0.3, seed=4)
    est = estimate_projection(corr)
    assert est.reproj_error <= 0.5


def test_normalized_and_plain_dlt_agree_on_clean_data():
    pts = world_points(10, seed=6)
    img = project_point(CAM.gamma, pts)
    for P in (dlt(img, pts, True), dlt(img, pts, False)):
        np.testing.assert_allclose(project_point(P, pts), img, atol=1e-6)


def test_reprojection_error_closed_form():
    pts = world_points(9, seed=8)
    corr = correspondences(CAM, pts)
    assert reprojection_error(CAM, corr) == pytest.approx(0.0, abs=1e-9)
    x, y = corr[0].image
    corr[0] = Correspondence((x + 1.0, y), corr[0].world)
    assert reprojection_error(CAM, corr) == pytest.approx(1 / math.sqrt(9), rel=1e-9)


def test_reprojection_error_independent_path():
    corr = correspondences(CAM, world_points(12, seed=9), noise=0.3, seed=10)
    est = estimate_projection(corr)
    res = []
    for c in corr:
        Xc = est.rotation @ np.asarray(c.world) + est.translation
        u = est.f * Xc[0] / Xc[2] + est.principal[0]
        v = est.f * Xc[1] / Xc[2] + est.principal[1]
        res.append((u - c.image[0]) ** 2 + (v - c.image[1]) ** 2)
    assert est.reproj_error == pytest.approx(math.sqrt(np.mean(res)), rel=1e-9)


def test_camera_invariants():
    R = CAM.rotation
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(CAM.optical_center, -R.T @ CAM.translation, atol=1e-12)
    for k in (0.5, 3.0, 40.0):
        X = CAM.optical_center + k * CAM.principal_axis
        np.testing.assert_allclose(project_point(CAM.gamma, X), CAM.principal, atol=1e-6)
    # unit depth -> homogeneous scale 1
    X = CAM.optical_center + CAM.principal_axis
    assert (CAM.gamma @ np.append(X, 1.0))[2] == pytest.approx(1.0, abs=1e-12)


def test_non_orthonormal_rotation_rejected():
    with pytest.raises(ValidationError):
        CameraModel(800.0, (1, 1), np.diag([1.0, 2.0, 1.0]), np.zeros(3))


# -- files ------------------------------------------------------------------

def test_camera_file_round_trip(tmp_path):
    path = tmp_path / "c.cam"
    write_camera(path, CAM)
    back = read_camera(path)
    np.testing.assert_array_equal(back.gamma, CAM.gamma)
    assert back.f == CAM.f and back.principal == CAM.principal


def test_camera_file_missing_key(tmp_path):
    path = tmp_path / "c.cam"
    path.write_text("[camera]\nf = 800\n")
    with pytest.raises(ParseError):
        read_camera(path)


def test_marker_file_round_trip(tmp_path):
    markers = [MarkerSpec("M1", (1.0, 2.0, 3.0), 400.0), MarkerSpec("M2", (-1.5, 0.0, 2.0), 490.0)]
    path = tmp_path / "m.txt"
    write_markers(path, markers)
    assert read_markers(path) == markers


def test_marker_file_errors(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("M1, 1, 2, 3\n")
    with pytest.raises(ParseError) as info:
        read_markers(path)
    assert info.value.line == 1
    path.write_text("M1, 1, 2, 3, 1\n")
    with pytest.raises(ValidationError):
        read_markers(path)
