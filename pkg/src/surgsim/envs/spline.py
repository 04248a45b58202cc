"""Piecewise cubic paths and equal-arc-length waypoint sampling.

Segment i covers [t_i, t_{i+1}] and evaluates
``a (t - t_i)^3 + b (t - t_i)^2 + c (t - t_i) + d``.
"""

from __future__ import annotations

import numpy as np

SUBDIVISIONS = 1000


def eval_segment(coeffs: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Evaluate one segment. coeffs (..., 4, 3) rows a,b,c,d; tau (..., K) local time."""
    a, b, c, d = (coeffs[..., i, None, :] for i in range(4))
    t = tau[..., None]
    return ((a * t + b) * t + c) * t + d


def tabulate(coeffs: np.ndarray, knots: np.ndarray, subdivisions: int = SUBDIVISIONS):
    """Dense points and cumulative chord length.

    coeffs (S, 4, 3), knots (S+1,). Returns points (S*sub+1, 3) and arc (S*sub+1,).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1, 4, 3)
    knots = np.asarray(knots, dtype=np.float64)
    if len(knots) != len(coeffs) + 1:
        raise ValueError(f"need {len(coeffs) + 1} knots for {len(coeffs)} segments, got {len(knots)}")
    pieces = []
    for i, seg in enumerate(coeffs):
        tau = np.linspace(0.0, knots[i + 1] - knots[i], subdivisions + 1)
        pts = eval_segment(seg, tau)
        pieces.append(pts if i == 0 else pts[1:])
    pts = np.concatenate(pieces)
    chords = np.sqrt(np.sum(np.diff(pts, axis=0) ** 2, axis=1))
    return pts, np.concatenate([[0.0], np.cumsum(chords)])


def sample_spline_waypoints(coeffs, knots, spacing: float) -> np.ndarray:
    """Waypoints every ``spacing`` metres of arc length, both endpoints included.

    Returns an (K, 3) array. A zero-length path yields just its start point.
    """
    if not spacing > 0:
        raise ValueError("spacing must be > 0")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("spline coefficients must be finite")
    pts, arc = tabulate(coeffs, knots)
    return _equal_arc(pts, arc, spacing)


def _equal_arc(pts: np.ndarray, arc: np.ndarray, spacing: float) -> np.ndarray:
    total = arc[-1]
    if total <= 0.0:
        return pts[:1].copy()
    count = int(np.floor(total / spacing + 1e-9))
    targets = spacing * np.arange(count + 1)
    if total - targets[-1] > 1e-9 * max(1.0, total):
        targets = np.append(targets, total)
    else:
        targets[-1] = total
    out = np.empty((len(targets), 3))
    for k in range(3):
        out[:, k] = np.interp(targets, arc, pts[:, k])
    return out


def tabulate_batch(coeffs: np.ndarray, span: float, subdivisions: int = SUBDIVISIONS):
    """Single-segment tabulation for many paths at once: coeffs (R, 4, 3)."""
    tau = np.linspace(0.0, span, subdivisions + 1)
    pts = eval_segment(coeffs, np.broadcast_to(tau, (len(coeffs), len(tau))))
    chords = np.sqrt(np.sum(np.diff(pts, axis=1) ** 2, axis=2))
    arc = np.concatenate([np.zeros((len(coeffs), 1)), np.cumsum(chords, axis=1)], axis=1)
    return pts, arc


def waypoints_batch(coeffs: np.ndarray, span: float, spacing: float, max_points: int):
    """Padded equal-spacing waypoints for many single-segment paths.

    Returns (R, max_points, 3) waypoints (padded with the final point) and the
    per-path count. Paths needing more than ``max_points`` are truncated.
    """
    pts, arc = tabulate_batch(coeffs, span)
    r = len(coeffs)
    out = np.empty((r, max_points, 3))
    counts = np.empty(r, dtype=np.int64)
    for i in range(r):
        wp = _equal_arc(pts[i], arc[i], spacing)[:max_points]
        k = len(wp)
        out[i, :k] = wp
        out[i, k:] = wp[-1]
        counts[i] = k
    return out, counts
