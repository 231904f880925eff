"""Constant time-of-flight ellipsoids and ray intersection math.

A two-way travel time t pins scatterers to the ellipsoid with foci at
the transmitter and receiver and semi-major axis r = c*t/2. Everything
here works in the ellipsoid frame: origin at the baseline midpoint,
x-axis along the transmitter-to-receiver baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEllipsoid, NoIntersection, NonMonotoneDepths

_TINY = 1e-30


@dataclass(frozen=True)
class EllipsoidFrame:
    """Local frame of the (tx, rx) pair; rows of axes are unit vectors."""

    center: np.ndarray  # (3,) world
    axes: np.ndarray    # (3, 3) rows = frame x/y/z directions in world
    d: float            # baseline length |o_T - o_R|

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.axes.T

    def from_frame(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=float) @ self.axes + self.center

    def rotate_to_frame(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.axes.T


def make_frame(o_t: np.ndarray, o_r: np.ndarray) -> EllipsoidFrame:
    """Frame centered between the foci, x along the baseline.

    Collocated pairs (d=0) get the world-aligned identity frame.
    """
    o_t = np.asarray(o_t, dtype=float)
    o_r = np.asarray(o_r, dtype=float)
    center = 0.5 * (o_t + o_r)
    base = o_r - o_t
    d = float(np.linalg.norm(base))
    if d < 1e-12:
        return EllipsoidFrame(center=center, axes=np.eye(3), d=0.0)
    ux = base / d
    helper = np.array([1.0, 0.0, 0.0])
    if abs(ux @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    uy = np.cross(ux, helper)
    uy /= np.linalg.norm(uy)
    uz = np.cross(ux, uy)
    return EllipsoidFrame(center=center, axes=np.stack([ux, uy, uz]), d=d)


def semi_axes(r, d: float):
    """Semi-axes (a, b, c) of the ellipsoid at semi-major radius r."""
    r = np.asarray(r, dtype=float)
    s = r * r - 0.25 * d * d
    if np.any(r <= 0.5 * d) or np.any(s <= 0):
        raise DegenerateEllipsoid(f"need r > d/2 = {0.5 * d}")
    b = np.sqrt(s)
    return r, b, b.copy() if b.ndim else b


def implicit_value(coords: np.ndarray, r, d: float) -> np.ndarray:
    """x^2/a^2 + y^2/b^2 + z^2/b^2 - 1 at frame coords."""
    a, b, _ = semi_axes(r, d)
    coords = np.asarray(coords, dtype=float)
    return (coords[..., 0] ** 2 / (a * a)
            + (coords[..., 1] ** 2 + coords[..., 2] ** 2) / (b * b) - 1.0)


def ray_ellipsoid_roots(origin, direction, r, d: float):
    """Both roots of the ray/ellipsoid quadratic, numerically stable.

    origin/direction are frame coordinates broadcastable against r.
    Returns (l_neg, l_pos, valid) where valid marks a real intersection.
    """
    a, b, _ = semi_axes(r, d)
    inv_a2 = 1.0 / (a * a)
    inv_b2 = 1.0 / (b * b)
    o = np.asarray(origin, dtype=float)
    v = np.asarray(direction, dtype=float)
    qa = v[..., 0] ** 2 * inv_a2 + (v[..., 1] ** 2 + v[..., 2] ** 2) * inv_b2
    qb = 2.0 * (o[..., 0] * v[..., 0] * inv_a2
                + (o[..., 1] * v[..., 1] + o[..., 2] * v[..., 2]) * inv_b2)
    qc = (o[..., 0] ** 2 * inv_a2
          + (o[..., 1] ** 2 + o[..., 2] ** 2) * inv_b2 - 1.0)
    disc = qb * qb - 4.0 * qa * qc
    valid = disc >= 0.0
    sqrt_disc = np.sqrt(np.where(valid, disc, 0.0))
    # q-form avoids cancellation between -qb and the discriminant root
    q = -0.5 * (qb + np.where(qb >= 0, sqrt_disc, -sqrt_disc))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = q / qa
        r2 = np.where(np.abs(q) > _TINY, qc / q, r1)
    l_neg = np.minimum(r1, r2)
    l_pos = np.maximum(r1, r2)
    return l_neg, l_pos, valid


def ray_ellipsoid_depth(origin, direction, r: float, d: float,
                        root: str = "positive") -> float:
    """Depth along a unit ray to the ellipsoid surface (scalar op).

    root="positive" returns the forward intersection; root="negative"
    the other quadratic root (used when marching a return ray).
    """
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be unit length")
    l_neg, l_pos, valid = ray_ellipsoid_roots(origin, direction, r, d)
    if not np.all(valid):
        raise NoIntersection("discriminant < 0")
    if root == "negative":
        return float(l_neg)
    if l_pos <= 0:
        raise NoIntersection("no positive root along the ray")
    return float(l_pos)


def transmittance(magnitudes: np.ndarray, depths: np.ndarray,
                  zeta: float) -> np.ndarray:
    """Per-sample transmission along a ray ordered by depth.

    T_i = prod_{k<i} exp(-|sigma_k| * (l_{k+1} - l_k) * zeta); T_0 = 1.
    Works on (..., D) stacks; depths must be non-decreasing along the
    last axis (strictly increasing except for repeated sampled ranges).
    """
    m = np.asarray(magnitudes, dtype=float)
    l = np.asarray(depths, dtype=float)
    dl = np.diff(l, axis=-1)
    if np.any(dl < -1e-12):
        raise NonMonotoneDepths("depths must be sorted ascending")
    seg = m[..., :-1] * np.maximum(dl, 0.0)
    s = np.zeros_like(m)
    np.cumsum(seg, axis=-1, out=s[..., 1:])
    return np.exp(-zeta * s)


def expected_point(sigma: np.ndarray, trans: np.ndarray,
                   points: np.ndarray):
    """Transmittance-weighted expected scatter location along a ray.

    Weights are |sigma_i * T_i|. All-zero weights fall back to the
    mid-ray sample and set the flag False.
    """
    w = np.abs(np.asarray(sigma)) * np.asarray(trans, dtype=float)
    total = w.sum()
    points = np.asarray(points, dtype=float)
    if total <= _TINY:
        return points[len(points) // 2].copy(), False
    return (points * (w / total)[:, None]).sum(axis=0), True
