import numpy as np
import pytest

from surgsim.envs.spline import sample_spline_waypoints, tabulate, waypoints_batch


def line(c=(1.0, 0.0, 0.0), d=(0.0, 0.0, 0.0)):
    return np.array([[0, 0, 0], [0, 0, 0], c, d], dtype=float)


def test_straight_line_quarters():
    wp = sample_spline_waypoints(line(), [0.0, 1.0], 0.25)
    np.testing.assert_allclose(wp[:, 0], [0, 0.25, 0.5, 0.75, 1.0], atol=1e-12)
    assert np.all(wp[:, 1:] == 0)


def test_constant_spline_single_point():
    wp = sample_spline_waypoints(line(c=(0, 0, 0), d=(0.1, 0.2, 0.3)), [0.0, 1.0], 0.01)
    assert wp.tolist() == [[0.1, 0.2, 0.3]]


def test_endpoints_included_when_not_a_multiple():
    wp = sample_spline_waypoints(line(), [0.0, 1.0], 0.3)
    np.testing.assert_allclose(wp[:, 0], [0, 0.3, 0.6, 0.9, 1.0], atol=1e-12)


def test_bad_spacing():
    with pytest.raises(ValueError):
        sample_spline_waypoints(line(), [0, 1], 0.0)
    with pytest.raises(ValueError):
        sample_spline_waypoints(line(c=(np.nan, 0, 0)), [0, 1], 0.1)


def dense_arc(coeffs, t0, t1, n=200_000):
    t = np.linspace(0, t1 - t0, n + 1)[:, None]
    a, b, c, d = coeffs
    p = ((a * t + b) * t + c) * t + d
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))]), p


@pytest.mark.parametrize("seed", range(5))
def test_random_cubic_gaps_within_one_percent(seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(-0.5, 0.5, (4, 3))
    spacing = 0.02
    wp = sample_spline_waypoints(coeffs, [0.0, 1.0], spacing)
    # arc length between consecutive waypoints measured on a much denser oracle curve
    arc, pts = dense_arc(coeffs, 0.0, 1.0)
    idx = [int(np.argmin(np.linalg.norm(pts - w, axis=1))) for w in wp]
    gaps = np.diff(arc[idx])
    assert np.all(np.abs(gaps[:-1] - spacing) <= 0.01 * spacing)
    assert 0 < gaps[-1] <= spacing * 1.01


def test_multi_segment_continuous_arc():
    seg = line()
    seg2 = np.array([[0, 0, 0], [0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]])
    pts, arc = tabulate(np.stack([seg, seg2]), [0.0, 1.0, 1.5])
    assert arc[-1] == pytest.approx(1.5, abs=1e-12)
    wp = sample_spline_waypoints(np.stack([seg, seg2]), [0.0, 1.0, 1.5], 0.5)
    np.testing.assert_allclose(wp, [[0, 0, 0], [0.5, 0, 0], [1, 0, 0], [1, 0.5, 0]], atol=1e-12)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    coeffs = rng.uniform(-0.1, 0.1, (6, 4, 3))
    wp, count = waypoints_batch(coeffs, 1.0, 0.01, 512)
    for i in range(6):
        single = sample_spline_waypoints(coeffs[i], [0.0, 1.0], 0.01)
        assert count[i] == len(single)
        np.testing.assert_array_equal(wp[i, : count[i]], single)
        assert (wp[i, count[i] :] == single[-1]).all()
