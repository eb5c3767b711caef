"""Polyline and point-cloud geometry helpers."""

from __future__ import annotations

import numpy as np


def polyline_length(pts):
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def arclengths(pts):
    """Cumulative arclength per vertex, starting at 0."""
    pts = np.asarray(pts, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(pts, spacing):
    """Uniform arclength resampling (keeps both end vertices)."""
    pts = np.asarray(pts, dtype=float)
    s = arclengths(pts)
    total = s[-1]
    if total == 0.0 or len(pts) < 2:
        return pts.copy()
    m = max(2, int(np.ceil(total / spacing)) + 1)
    su = np.linspace(0.0, total, m)
    out = np.empty((m, pts.shape[1]))
    for d in range(pts.shape[1]):
        out[:, d] = np.interp(su, s, pts[:, d])
    return out


def decimate_polyline(pts, max_vertices):
    pts = np.asarray(pts, dtype=float)
    if len(pts) <= max_vertices:
        return pts
    idx = np.linspace(0, len(pts) - 1, max_vertices).round().astype(int)
    return pts[np.unique(idx)]


def point_segment_distance(P, A, B):
    """Distances from points P (m, d) to segments A->B (s, d), as (m, s)."""
    P = np.asarray(P, dtype=float)
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    AB = B - A                                   # (s, d)
    denom = np.maximum(np.sum(AB * AB, axis=1), 1e-300)
    AP = P[:, None, :] - A[None, :, :]           # (m, s, d)
    t = np.clip(np.einsum("msd,sd->ms", AP, AB) / denom, 0.0, 1.0)
    proj = A[None, :, :] + t[..., None] * AB[None, :, :]
    return np.linalg.norm(P[:, None, :] - proj, axis=2)


def point_polyline_distance(P, poly):
    """Distance from each point to a polyline (exact, per-segment)."""
    poly = np.asarray(poly, dtype=float)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if len(poly) == 1:
        return np.linalg.norm(P - poly[0], axis=1)
    # chunk the segment axis to bound memory on long polylines
    best = np.full(P.shape[0], np.inf)
    step = max(1, int(4_000_000 / max(P.shape[0], 1)))
    for s0 in range(0, len(poly) - 1, step):
        s1 = min(len(poly) - 1, s0 + step)
        d = point_segment_distance(P, poly[s0:s1], poly[s0 + 1:s1 + 1])
        best = np.minimum(best, d.min(axis=1))
    return best


def directed_hausdorff(pts_a, poly_b):
    """max over vertices of A of the distance to polyline B."""
    return float(point_polyline_distance(pts_a, poly_b).max())


def hausdorff(poly_a, poly_b):
    """Symmetric Hausdorff distance between two polylines (vertexwise against
    the other's segments)."""
    return max(directed_hausdorff(poly_a, poly_b),
               directed_hausdorff(poly_b, poly_a))


def clip_to_ball(pts, center, radius):
    """Vertices of a polyline inside a ball, split into contiguous runs."""
    pts = np.asarray(pts, dtype=float)
    inside = np.linalg.norm(pts - np.asarray(center, dtype=float), axis=1) <= radius
    runs = []
    start = None
    for i, flag in enumerate(inside):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append(pts[start:i])
            start = None
    if start is not None:
        runs.append(pts[start:])
    return [r for r in runs if len(r) >= 2]


def principal_axes(points):
    """Second-moment principal directions of a point cloud.

    Returns (eigvals ascending, axes) where axes[k] is the unit direction
    of eigenvalue k: axes[-1] is the elongation direction, axes[0] the
    flattest direction.
    """
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    d = pts - c
    M = d.T @ d / len(pts)
    w, V = np.linalg.eigh(M)
    return w, V.T


def tangents(pts):
    """Unit tangents per vertex (central differences, one-sided at ends)."""
    pts = np.asarray(pts, dtype=float)
    t = np.empty_like(pts)
    t[1:-1] = pts[2:] - pts[:-2]
    t[0] = pts[1] - pts[0]
    t[-1] = pts[-1] - pts[-2]
    nrm = np.linalg.norm(t, axis=1, keepdims=True)
    return t / np.maximum(nrm, 1e-300)


def angle_between(u, v):
    """Unsigned angle between two direction vectors, folded to [0, pi/2]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = abs(float(np.dot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return float(np.arccos(np.clip(c, 0.0, 1.0)))
