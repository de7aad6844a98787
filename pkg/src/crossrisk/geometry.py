"""Camera-to-ground calibration and pixel/frame to meter/second conversion.

The oblique camera view is rectified with a planar homography fitted from
pixel<->world point correspondences (crosswalk corners measured in the
field). A scalar pixels-per-meter constant is kept alongside for spots that
are configured without a full calibration and for compatibility with the
plain distance/speed formulas; both routes agree on a fronto-parallel view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCalibration,
    NonPositiveLength,
    NonPositiveRate,
    PointAtInfinity,
)

# Relative tolerance on the homogeneous divide term before a point counts
# as being on the vanishing line.
_W_EPS = 1e-12


@dataclass(frozen=True)
class WorldPoint:
    """A position on the ground plane in meters with its timestamp."""

    x: float
    y: float
    t: float


@dataclass(frozen=True)
class Calibration:
    """Immutable conversion bundle for one camera spot.

    homography maps pixel coordinates to world meters (ground plane); it may
    be None for scalar-only spots, in which case world coordinates are
    pixel coordinates divided by pixels_per_meter.
    """

    pixels_per_meter: float
    seconds_per_step: float
    homography: np.ndarray | None = None

    def __post_init__(self):
        if self.pixels_per_meter <= 0:
            raise NonPositiveLength("pixels_per_meter must be > 0")
        if self.seconds_per_step <= 0:
            raise NonPositiveRate("seconds_per_step must be > 0")
        if self.homography is not None:
            h = np.asarray(self.homography, dtype=float)
            if h.shape != (3, 3) or abs(np.linalg.det(h)) < 1e-15:
                raise DegenerateCalibration("homography must be an invertible 3x3 matrix")
            object.__setattr__(self, "homography", h)

    def to_world_xy(self, point_px) -> tuple[float, float]:
        """Convert one pixel point to ground-plane meters."""
        if self.homography is None:
            return (point_px[0] / self.pixels_per_meter,
                    point_px[1] / self.pixels_per_meter)
        return apply_homography(self.homography, point_px)

    def to_world_many(self, points_px: np.ndarray) -> np.ndarray:
        """Vectorized pixel->world conversion for an (n, 2) array."""
        pts = np.asarray(points_px, dtype=float)
        if self.homography is None:
            return pts / self.pixels_per_meter
        ones = np.ones((pts.shape[0], 1))
        homog = np.hstack([pts, ones]) @ self.homography.T
        w = homog[:, 2]
        if np.any(np.abs(w) < _W_EPS * np.abs(homog[:, :2]).max(initial=1.0)):
            raise PointAtInfinity("a point lies on the vanishing line")
        return homog[:, :2] / w[:, None]

    def to_pixel_xy(self, point_world) -> tuple[float, float]:
        """Inverse conversion, world meters to pixels."""
        if self.homography is None:
            return (point_world[0] * self.pixels_per_meter,
                    point_world[1] * self.pixels_per_meter)
        return apply_homography(np.linalg.inv(self.homography), point_world)


def pixels_per_meter(l_pixel: float, l_world: float) -> float:
    """Scale constant from a known length seen in pixels and in meters."""
    if l_pixel <= 0 or l_world <= 0:
        raise NonPositiveLength(
            f"lengths must be positive (got {l_pixel} px, {l_world} m)")
    return l_pixel / l_world


def seconds_per_step(frame_skip: int, fps: float) -> float:
    """Seconds elapsed between two consecutive sampled frames."""
    if frame_skip <= 0 or fps <= 0:
        raise NonPositiveRate(
            f"frame_skip and fps must be positive (got {frame_skip}, {fps})")
    return frame_skip / fps


def apply_homography(h: np.ndarray, point) -> tuple[float, float]:
    """Apply a 3x3 projective transform to one 2-D point."""
    x, y = float(point[0]), float(point[1])
    hx = h[0, 0] * x + h[0, 1] * y + h[0, 2]
    hy = h[1, 0] * x + h[1, 1] * y + h[1, 2]
    hw = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    scale = max(abs(hx), abs(hy), 1.0)
    if abs(hw) < _W_EPS * scale:
        raise PointAtInfinity(f"point ({x}, {y}) lies on the vanishing line")
    return (hx / hw, hy / hw)


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid at origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegenerateCalibration("correspondence points are coincident")
    s = math.sqrt(2.0) / d
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    ones = np.ones((pts.shape[0], 1))
    normed = (np.hstack([pts, ones]) @ t.T)[:, :2]
    return normed, t


def _collinear(a, b, c, tol: float = 1e-9) -> bool:
    """True when the triangle abc has (relative) zero area."""
    area2 = abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    scale = max(abs(b[0] - a[0]), abs(b[1] - a[1]),
                abs(c[0] - a[0]), abs(c[1] - a[1]), 1.0)
    return area2 <= tol * scale * scale


def has_collinear_triple(points) -> bool:
    """Check every triple of a small point set for collinearity."""
    pts = [tuple(map(float, p)) for p in points]
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if _collinear(pts[i], pts[j], pts[k]):
                    return True
    return False


def fit_homography(correspondences) -> tuple[np.ndarray, float]:
    """Least-squares projective fit from pixel->world correspondences.

    correspondences: sequence of ((px, py), (wx, wy)) pairs, at least 4.
    Returns (3x3 matrix normalized to h22 = 1, max reprojection error in
    world units). Raises DegenerateCalibration when the configuration
    cannot pin down a homography (e.g. 3 collinear world points among a
    minimal set of 4).
    """
    pairs = list(correspondences)
    if len(pairs) < 4:
        raise DegenerateCalibration(
            f"need at least 4 correspondences, got {len(pairs)}")
    src = np.array([p[0] for p in pairs], dtype=float)
    dst = np.array([p[1] for p in pairs], dtype=float)
    if len(pairs) == 4 and (has_collinear_triple(dst) or has_collinear_triple(src)):
        raise DegenerateCalibration("3 collinear points among a minimal set of 4")

    src_n, t_src = _normalize_points(src)
    dst_n, t_dst = _normalize_points(dst)

    a = np.zeros((2 * len(pairs), 9))
    for i, ((x, y), (u, v)) in enumerate(zip(src_n, dst_n)):
        a[2 * i] = [-x, -y, -1, 0, 0, 0, u * x, u * y, u]
        a[2 * i + 1] = [0, 0, 0, -x, -y, -1, v * x, v * y, v]
    _, sing, vt = np.linalg.svd(a)
    # Rank < 8 means the correspondences leave the fit underdetermined.
    if sing[7] < 1e-9 * sing[0]:
        raise DegenerateCalibration("correspondences are rank deficient")
    h_n = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_n @ t_src
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateCalibration("fit produced a singular homography")
    h = h / h[2, 2]

    err = 0.0
    for (px, py), (wx, wy) in pairs:
        rx, ry = apply_homography(h, (px, py))
        err = max(err, math.hypot(rx - wx, ry - wy))
    return h, err


def scale_from_correspondences(correspondences) -> float:
    """Mean pixel-distance / world-distance ratio over correspondence pairs.

    Used as the scalar pixels-per-meter fallback; equals the exact scale on
    a fronto-parallel view.
    """
    pairs = list(correspondences)
    ratios = []
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            dpx = math.dist(pairs[i][0], pairs[j][0])
            dw = math.dist(pairs[i][1], pairs[j][1])
            if dw > 1e-12:
                ratios.append(dpx / dw)
    if not ratios:
        raise DegenerateCalibration("no usable correspondence pair for scale")
    return sum(ratios) / len(ratios)
