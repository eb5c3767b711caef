"""Cauchy-Green strain tensor fields: construction, eigen-analysis, FTLE.

The tensor C = (grad F)^T (grad F) is symmetric positive definite wherever
the flow map is well resolved. Eigen-decompositions use closed forms (2x2
half-angle, 3x3 trigonometric) rather than an iterative solver so that line
tracing sees a deterministic, reproducible eigenvector field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels_py, backend
from .errors import (DegenerateRegionError, FormatError, OutOfDomainError,
                     PartialDataError, ValidationError)
from .flowfield import VelocityField
from .flowmap import (STATUS_OK, FlowMapGrid, IntegratorParams,
                      aux_start_points, flow_gradients, integrate_batch)

CGF_MAGIC = "CGF1"
DEFAULT_EPS_DEG = 1e-4


# ---------------------------------------------------------------------------
# closed-form symmetric eigen-decomposition
# ---------------------------------------------------------------------------

def _sign_convention(xi):
    """Flip eigenvectors so their first nonzero component is positive."""
    n = xi.shape[-1]
    s = np.sign(xi[..., 0])
    for k in range(1, n):
        s = np.where(s == 0.0, np.sign(xi[..., k]), s)
    s = np.where(s == 0.0, 1.0, s)
    return xi * s[..., None]


def _eig2_batch(C):
    """Half-angle eigen-decomposition of symmetric 2x2 matrices."""
    a = C[..., 0, 0]
    b = 0.5 * (C[..., 0, 1] + C[..., 1, 0])
    c = C[..., 1, 1]
    mid = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lam = np.stack([mid - rad, mid + rad], axis=-1)
    th = 0.5 * np.arctan2(2.0 * b, a - c)
    ct, st = np.cos(th), np.sin(th)
    xi = np.empty(C.shape[:-2] + (2, 2))
    xi[..., 0, 0] = -st      # eigenvector of the smaller eigenvalue
    xi[..., 0, 1] = ct
    xi[..., 1, 0] = ct       # eigenvector of the larger eigenvalue
    xi[..., 1, 1] = st
    return lam, _sign_convention(xi)


def _perp_unit(u):
    """A deterministic unit vector orthogonal to unit 3-vectors u."""
    k = np.argmin(np.abs(u), axis=-1)
    e = np.zeros_like(u)
    np.put_along_axis(e, k[..., None], 1.0, axis=-1)
    p = np.cross(u, e)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def _nullvec(C, lam):
    """Best cross-product estimate of the eigenvector of C for eigenvalue lam.

    Returns (v, relnorm): the largest cross product of rows of (C - lam I),
    normalized, plus its norm relative to the matrix scale squared.
    """
    M = C - lam[..., None, None] * np.eye(3)
    r0, r1, r2 = M[..., 0, :], M[..., 1, :], M[..., 2, :]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)],
                     axis=-2)
    norms = np.linalg.norm(cands, axis=-1)
    best = np.argmax(norms, axis=-1)
    v = np.take_along_axis(cands, best[..., None, None], axis=-2)[..., 0, :]
    nrm = np.take_along_axis(norms, best[..., None], axis=-1)[..., 0]
    scale = np.linalg.norm(M, axis=(-2, -1)) ** 2 + 1e-300
    v = v / np.maximum(nrm, 1e-300)[..., None]
    return v, nrm / scale


def _eig3_batch(C):
    """Trigonometric (Cardano) eigen-decomposition of symmetric 3x3 matrices.

    Eigenvectors come from row cross products of C - lam I, starting with the
    best-isolated extreme eigenvalue; the basis is explicitly orthogonalized
    and eigenvalues are polished with Rayleigh quotients. Near-repeated
    eigenvalues get a deterministic orthonormal completion (callers flag
    those nodes as degenerate).
    """
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    q = np.trace(C, axis1=-2, axis2=-1) / 3.0
    B = C - q[..., None, None] * np.eye(3)
    p2 = np.sum(B * B, axis=(-2, -1))
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
    psafe = np.where(p > 0.0, p, 1.0)
    Bn = B / psafe[..., None, None]
    r = 0.5 * np.linalg.det(Bn)
    r = np.clip(r, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    l3 = q + 2.0 * p * np.cos(phi)
    l1 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    lam = np.stack([l1, l2, l3], axis=-1)

    # primary = the extreme eigenvalue with the larger gap to the middle one
    low_isolated = (l2 - l1) >= (l3 - l2)
    lam_primary = np.where(low_isolated, l1, l3)
    lam_secondary = np.where(low_isolated, l3, l1)
    vp, relp = _nullvec(C, lam_primary)
    vs, rels = _nullvec(C, lam_secondary)

    # fully isotropic nodes: arbitrary but fixed basis
    iso = p <= 1e-14 * np.maximum(np.abs(q), 1.0)
    vp = np.where(iso[..., None] | (relp[..., None] < 1e-12),
                  _fallback_basis(C, 0), vp)
    vp = vp / np.linalg.norm(vp, axis=-1, keepdims=True)

    # orthogonalize the secondary vector; replace when unreliable
    vs = vs - np.sum(vs * vp, axis=-1, keepdims=True) * vp
    ns = np.linalg.norm(vs, axis=-1)
    bad_s = iso | (rels < 1e-12) | (ns < 1e-8)
    vs = np.where(bad_s[..., None], _perp_unit(vp), vs / np.maximum(ns, 1e-300)[..., None])

    vm = np.cross(vp, vs)
    vm = vm / np.linalg.norm(vm, axis=-1, keepdims=True)

    xi = np.empty(C.shape[:-2] + (3, 3))
    xi[..., 1, :] = vm
    lowm = low_isolated[..., None]
    xi[..., 0, :] = np.where(lowm, vp, vs)
    xi[..., 2, :] = np.where(lowm, vs, vp)

    # Rayleigh polish and a stable re-sort
    lam_r = np.einsum("...ki,...ij,...kj->...k", xi, C, xi)
    order = np.argsort(lam_r, axis=-1, kind="stable")
    lam_r = np.take_along_axis(lam_r, order, axis=-1)
    xi = np.take_along_axis(xi, order[..., None], axis=-2)
    return lam_r, _sign_convention(xi)


def _fallback_basis(C, k):
    """Deterministic unit vector used when cross products vanish."""
    shape = C.shape[:-2] + (3,)
    e = np.zeros(shape)
    e[..., k] = 1.0
    return e


def eig_sym(C):
    """Sorted eigen-system of one symmetric 2x2 or 3x3 matrix.

    Returns (lambdas, xis) with lambdas ascending and xis[k] the unit
    eigenvector of lambdas[k], signed so its first nonzero component is
    positive. Repeated eigenvalues yield a valid orthonormal basis.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[-1]
    if C.shape != (n, n) or n not in (2, 3):
        raise ValidationError("eig_sym expects one 2x2 or 3x3 matrix")
    if n == 2:
        lam, xi = _eig2_batch(C[None])
    else:
        lam, xi = _eig3_batch(C[None])
    return lam[0], xi[0]


def _eig_batch(C):
    return _eig2_batch(C) if C.shape[-1] == 2 else _eig3_batch(C)


def _adjacent_gap(lam):
    """Smallest relative gap between adjacent eigenvalues."""
    lmax = np.maximum(np.abs(lam[..., -1]), 1e-300)
    gaps = np.diff(lam, axis=-1) / lmax[..., None]
    return gaps.min(axis=-1)


# ---------------------------------------------------------------------------
# field containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CGField:
    """Per-node Cauchy-Green tensors with sorted eigen-systems.

    ``xis[..., k, :]`` is the unit eigenvector of ``lambdas[..., k]``. The
    same container holds forward fields (b > a) and backward fields (b < a).
    """

    a: float
    b: float
    grid_shape: tuple
    lower: tuple
    upper: tuple
    eps_deg: float
    C: np.ndarray
    lambdas: np.ndarray
    xis: np.ndarray
    valid: np.ndarray
    degenerate: np.ndarray

    @property
    def n(self):
        return len(self.grid_shape)

    @property
    def spacing(self):
        return tuple((u - l) / (s - 1) for l, u, s in
                     zip(self.lower, self.upper, self.grid_shape))

    @property
    def ok(self):
        """Nodes usable for eigenvector interpolation."""
        return self.valid & ~self.degenerate

    def node_axes(self):
        return [np.linspace(self.lower[i], self.upper[i], self.grid_shape[i])
                for i in range(self.n)]

    def cell_diagonal(self):
        return float(np.sqrt(sum(s * s for s in self.spacing)))

    def tensor_components(self):
        """(c11, c12, c22) stacked for the 2-D tensor-interpolation mode."""
        if self.n != 2:
            raise ValidationError("tensor components are 2-D only")
        return np.ascontiguousarray(
            np.stack([self.C[..., 0, 0], self.C[..., 0, 1],
                      self.C[..., 1, 1]], axis=-1))


@dataclass(frozen=True)
class PointCG:
    """Cauchy-Green data at scattered points (no grid interpolation).

    ``finals`` are the advected point positions F_a^b(x), kept because
    reciprocity checks need the exact partner positions.
    """

    a: float
    b: float
    aux_offset: float
    positions: np.ndarray
    finals: np.ndarray
    C: np.ndarray
    lambdas: np.ndarray
    xis: np.ndarray
    valid: np.ndarray
    degenerate: np.ndarray

    @property
    def n(self):
        return self.positions.shape[-1]


@dataclass(frozen=True)
class SingularitySet:
    """Near-isotropic points of a 2-D tensor field."""

    points: np.ndarray   # (s, 2)
    threshold: float

    def __len__(self):
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _det_squared(G):
    """det(G)^2 per node, the numerically stable value of det(C).

    Forming det(C) directly cancels catastrophically once the eigenvalue
    spread approaches 1/sqrt(machine eps); det(G) does not.
    """
    if G.shape[-1] == 2:
        d = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    else:
        d = (G[..., 0, 0] * (G[..., 1, 1] * G[..., 2, 2]
                             - G[..., 1, 2] * G[..., 2, 1])
             - G[..., 0, 1] * (G[..., 1, 0] * G[..., 2, 2]
                               - G[..., 1, 2] * G[..., 2, 0])
             + G[..., 0, 2] * (G[..., 1, 0] * G[..., 2, 1]
                               - G[..., 1, 1] * G[..., 2, 0]))
    return d * d


def _finish_eig(C, valid, eps_deg, det2=None):
    """Eigen-decompose valid nodes, scattering NaN elsewhere.

    When ``det2 = det(C)`` is supplied the smallest eigenvalue is recomputed
    from the eigenvalue-product identity, which stays accurate where the
    closed form loses it to cancellation.
    """
    n = C.shape[-1]
    shape = C.shape[:-2]
    lam = np.full(shape + (n,), np.nan)
    xi = np.full(shape + (n, n), np.nan)
    degenerate = np.zeros(shape, dtype=bool)
    idx = np.nonzero(valid)
    if idx[0].size:
        lam_v, xi_v = _eig_batch(C[idx])
        if det2 is not None:
            rest = np.prod(lam_v[..., 1:], axis=-1)
            good = rest > 0
            lam_v[..., 0] = np.where(good, det2[idx] / np.where(good, rest, 1.0),
                                     lam_v[..., 0])
        lam[idx] = lam_v
        xi[idx] = xi_v
        spd = lam_v[..., 0] > 0.0
        if not spd.all():
            bad = tuple(ax[~spd] for ax in idx)
            valid = valid.copy()
            valid[bad] = False
            lam[bad] = np.nan
            xi[bad] = np.nan
        deg = _adjacent_gap(lam_v) < eps_deg
        degenerate[idx] = deg & spd
    return lam, xi, valid, degenerate


def cauchy_green(fm: FlowMapGrid, eps_deg: float = DEFAULT_EPS_DEG) -> CGField:
    """Build C = G^T G per node of a flow-map grid and eigen-decompose it.

    Nodes whose seed or auxiliary trajectories failed are marked invalid and
    excluded from downstream tracing; identical for backward grids (b < a).
    """
    G = flow_gradients(fm)
    C = np.einsum("...ki,...kj->...ij", G, G)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    valid = (fm.status == STATUS_OK) & np.isfinite(C).all(axis=(-2, -1))
    lam, xi, valid, degenerate = _finish_eig(C, valid, eps_deg,
                                             det2=_det_squared(G))
    return CGField(a=fm.a, b=fm.b, grid_shape=fm.grid_shape, lower=fm.lower,
                   upper=fm.upper, eps_deg=eps_deg, C=C, lambdas=lam, xis=xi,
                   valid=valid, degenerate=degenerate)


def cauchy_green_at_points(field: VelocityField, pts, a, b,
                           aux_offset: float = 1e-6,
                           p: IntegratorParams | None = None,
                           eps_deg: float = DEFAULT_EPS_DEG,
                           threads: int = 1) -> PointCG:
    """Per-point Cauchy-Green tensors from dedicated auxiliary trajectories.

    Used where grid interpolation would blur the answer (reciprocity checks,
    local stretch-planes in 3-D).
    """
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
    m, n = pts.shape
    aux0 = aux_start_points(pts, aux_offset, field)
    big = np.concatenate([pts, aux0.reshape(-1, n)], axis=0)
    X1, status, _ = integrate_batch(field, big, a, b, p, threads=threads)
    finals = X1[:m]
    aux = X1[m:].reshape(m, n, 2, n)
    st = status[:m].copy()
    st_aux = status[m:].reshape(m, 2 * n)
    for col in range(2 * n):
        st = np.where(st == STATUS_OK, st_aux[:, col], st)
    G = np.swapaxes((aux[:, :, 0, :] - aux[:, :, 1, :]) / (2.0 * aux_offset),
                    -1, -2)
    C = np.einsum("...ki,...kj->...ij", G, G)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    valid = (st == STATUS_OK) & np.isfinite(C).all(axis=(-2, -1))
    lam, xi, valid, degenerate = _finish_eig(C, valid, eps_deg,
                                             det2=_det_squared(G))
    return PointCG(a=float(a), b=float(b), aux_offset=float(aux_offset),
                   positions=pts, finals=finals, C=C, lambdas=lam, xis=xi,
                   valid=valid, degenerate=degenerate)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def _grid_arrays(cg: CGField):
    lower = np.asarray(cg.lower)
    dx = np.asarray(cg.spacing)
    return lower, dx


def interpolate_eigvec(cg: CGField, x, k: int, ref_dir=None, mode="vector"):
    """Orientation-consistent eigenvector of the node field at position x.

    The 2^n surrounding node vectors are sign-aligned against ``ref_dir``
    (or against the first corner when ``ref_dir`` is None), multilinearly
    blended and renormalized. ``mode="tensor"`` interpolates the tensor
    components instead and eigen-decomposes at the query point, which
    tolerates degenerate nodes.
    """
    if cg.n != 2:
        raise ValidationError("eigenvector interpolation is 2-D only")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    ref = None
    if ref_dir is not None:
        ref = np.broadcast_to(np.asarray(ref_dir, dtype=float), X.shape)
        if not np.all(np.linalg.norm(ref, axis=-1) > 0):
            raise ValidationError("ref_dir must be nonzero")
    v, code = _fetch_batch(cg, X, k, ref, mode)
    if (code == 1).any():
        raise OutOfDomainError("query outside the tensor grid")
    if (code == 2).any():
        raise DegenerateRegionError(
            "a surrounding node is degenerate or invalid")
    return v[0] if np.asarray(x).ndim == 1 else v


def _fetch_batch(cg: CGField, X, k, ref, mode="vector"):
    """Batched fetch; returns (v, code) without raising. Python kernels only,
    so tests exercising this stay independent of the compiled tracer."""
    lower, dx = _grid_arrays(cg)
    if mode == "vector":
        okmask = np.ascontiguousarray(cg.ok, dtype=np.uint8)
        xi = np.ascontiguousarray(cg.xis[..., k, :])
        return _kernels_py._fetch_dir(
            _kernels_py.FETCH_VECTOR, xi, None, k, okmask, lower, dx, X, ref,
            cg.eps_deg)
    okmask = np.ascontiguousarray(cg.valid, dtype=np.uint8)
    cg3 = cg.tensor_components()
    return _kernels_py._fetch_dir(
        _kernels_py.FETCH_TENSOR, None, cg3, k, okmask, lower, dx, X, ref,
        cg.eps_deg)


def _interp_node_scalar(cg: CGField, values, X):
    """Bilinear interpolation of a per-node scalar; ok requires valid corners."""
    lower, dx = _grid_arrays(cg)
    n0, n1 = cg.grid_shape
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r0 = (X[:, 0] - lower[0]) / dx[0]
    r1 = (X[:, 1] - lower[1]) / dx[1]
    ok = ((r0 >= -1e-9) & (r0 <= n0 - 1 + 1e-9)
          & (r1 >= -1e-9) & (r1 <= n1 - 1 + 1e-9))
    i = np.clip(np.floor(np.where(ok, r0, 0.0)), 0, n0 - 2).astype(np.int64)
    j = np.clip(np.floor(np.where(ok, r1, 0.0)), 0, n1 - 2).astype(np.int64)
    w0 = np.clip(r0 - i, 0.0, 1.0)
    w1 = np.clip(r1 - j, 0.0, 1.0)
    ok &= (cg.valid[i, j] & cg.valid[i, j + 1]
           & cg.valid[i + 1, j] & cg.valid[i + 1, j + 1])
    vals = ((1.0 - w0) * (1.0 - w1) * values[i, j]
            + (1.0 - w0) * w1 * values[i, j + 1]
            + w0 * (1.0 - w1) * values[i + 1, j]
            + w0 * w1 * values[i + 1, j + 1])
    return vals, ok


def interpolate_eigval(cg: CGField, x, k: int):
    """Bilinear eigenvalue lambda_k at position(s) x (2-D fields)."""
    if cg.n != 2:
        raise ValidationError("eigenvalue interpolation is 2-D only")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    vals, ok = _interp_node_scalar(cg, cg.lambdas[..., k], X)
    if not ok.all():
        raise PartialDataError("invalid nodes under the queried positions",
                               gaps=np.nonzero(~ok)[0].tolist())
    return float(vals[0]) if np.asarray(x).ndim == 1 else vals


def eigenvalue_gap(cg: CGField, x):
    """(lambda_n - lambda_1) / lambda_n from interpolated eigenvalues."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    lo, ok1 = _interp_node_scalar(cg, cg.lambdas[..., 0], X)
    hi, ok2 = _interp_node_scalar(cg, cg.lambdas[..., -1], X)
    ok = ok1 & ok2 & (hi > 0)
    gap = np.where(ok, (hi - lo) / np.where(hi > 0, hi, 1.0), np.nan)
    return (float(gap[0]) if np.asarray(x).ndim == 1 else gap), ok


# ---------------------------------------------------------------------------
# singularities and FTLE
# ---------------------------------------------------------------------------

def detect_singularities(cg: CGField, threshold: float = 1e-2) -> SingularitySet:
    """Locate near-isotropic points of a 2-D tensor field.

    Nodes that locally minimize the relative eigenvalue gap are refined to
    sub-grid positions with a least-squares quadratic over their 3x3
    neighborhood; a point is kept only if the gap interpolated at the final
    position is below ``threshold``.
    """
    if cg.n != 2:
        raise ValidationError("singularity detection is 2-D only")
    n0, n1 = cg.grid_shape
    lam = cg.lambdas
    with np.errstate(invalid="ignore", divide="ignore"):
        g = (lam[..., 1] - lam[..., 0]) / lam[..., 1]
    g = np.where(cg.valid & np.isfinite(g), g, np.inf)

    lower, dx = _grid_arrays(cg)
    pts = []
    scores = []
    coarse = 4.0 * threshold
    for i in range(1, n0 - 1):
        for j in range(1, n1 - 1):
            gij = g[i, j]
            if not gij < coarse:
                continue
            block = g[i - 1:i + 2, j - 1:j + 2]
            if gij > block.min():
                continue
            cand = _refine_minimum(block, (i, j), lower, dx)
            val, ok = eigenvalue_gap(cg, cand)
            if ok and val < threshold:
                pts.append(cand)
                scores.append(val)
            elif gij < threshold:
                pts.append((lower[0] + i * dx[0], lower[1] + j * dx[1]))
                scores.append(gij)
    if not pts:
        return SingularitySet(points=np.empty((0, 2)), threshold=threshold)
    pts = np.asarray(pts, dtype=float)
    scores = np.asarray(scores)
    order = np.lexsort((pts[:, 1], pts[:, 0], scores))
    pts = pts[order]
    keep = []
    min_sep2 = 0.25 * (dx[0] ** 2 + dx[1] ** 2)
    for pt in pts:
        if all((pt[0] - q[0]) ** 2 + (pt[1] - q[1]) ** 2 >= min_sep2
               for q in keep):
            keep.append(pt)
    keep = np.asarray(keep)
    order = np.lexsort((keep[:, 1], keep[:, 0]))
    return SingularitySet(points=keep[order], threshold=threshold)


def _refine_minimum(block, node_ij, lower, dx):
    """Sub-grid minimum of a 3x3 scalar block via a least-squares quadratic."""
    i, j = node_ij
    uu, vv = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], indexing="ij")
    u = uu.reshape(-1)
    v = vv.reshape(-1)
    f = block.reshape(-1)
    good = np.isfinite(f)
    if good.sum() < 6:
        return (lower[0] + i * dx[0], lower[1] + j * dx[1])
    A = np.stack([np.ones_like(u), u, v, u * u, u * v, v * v], axis=1)[good]
    coef, *_ = np.linalg.lstsq(A, f[good], rcond=None)
    H = np.array([[2.0 * coef[3], coef[4]], [coef[4], 2.0 * coef[5]]])
    rhs = -np.array([coef[1], coef[2]])
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    if det <= 0:
        du = dv = 0.0
    else:
        du = (H[1, 1] * rhs[0] - H[0, 1] * rhs[1]) / det
        dv = (H[0, 0] * rhs[1] - H[1, 0] * rhs[0]) / det
        if abs(du) > 1.0 or abs(dv) > 1.0:
            du = dv = 0.0
    return (lower[0] + (i + du) * dx[0], lower[1] + (j + dv) * dx[1])


def ftle(cg: CGField):
    """Finite-time Lyapunov exponent ln(lambda_n) / (2 |b - a|) per node."""
    T = abs(cg.b - cg.a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(cg.lambdas[..., -1]) / (2.0 * T)
    return np.where(cg.valid, out, np.nan)


# ---------------------------------------------------------------------------
# CGF1 serialization
# ---------------------------------------------------------------------------

def save_cgfield(cg: CGField, path):
    """Write CGF1: JSON header line, float64 blocks (C upper triangles,
    lambdas, eigenvectors), then little-endian packed validity/degeneracy
    bitmaps (C-order nodes)."""
    n = cg.n
    iu = np.triu_indices(n)
    ut = cg.C[..., iu[0], iu[1]]
    header = {
        "magic": CGF_MAGIC,
        "n": n,
        "grid_shape": list(cg.grid_shape),
        "a": cg.a,
        "b": cg.b,
        "lower": list(cg.lower),
        "upper": list(cg.upper),
        "eps_deg": cg.eps_deg,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(ut, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cg.lambdas, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cg.xis, dtype="<f8").tobytes())
        fh.write(np.packbits(cg.valid.reshape(-1), bitorder="little").tobytes())
        fh.write(np.packbits(cg.degenerate.reshape(-1),
                             bitorder="little").tobytes())


def load_cgfield(path) -> CGField:
    with open(path, "rb") as fh:
        line = fh.readline(1 << 20)
        if not line.endswith(b"\n"):
            raise FormatError("missing newline-terminated header")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad CGF1 header: {exc}") from None
        if header.get("magic") != CGF_MAGIC:
            raise FormatError(
                f"bad magic {header.get('magic')!r}; want {CGF_MAGIC}")
        payload = fh.read()
    n = int(header["n"])
    shape = tuple(int(s) for s in header["grid_shape"])
    m = int(np.prod(shape))
    nut = n * (n + 1) // 2
    nbit = (m + 7) // 8
    sizes = [m * nut * 8, m * n * 8, m * n * n * 8, nbit, nbit]
    if len(payload) != sum(sizes):
        raise FormatError(f"payload is {len(payload)} bytes; "
                          f"expected {sum(sizes)}")
    off = 0
    ut = np.frombuffer(payload, dtype="<f8", count=m * nut, offset=off)
    off += sizes[0]
    lam = np.frombuffer(payload, dtype="<f8", count=m * n, offset=off)
    off += sizes[1]
    xi = np.frombuffer(payload, dtype="<f8", count=m * n * n, offset=off)
    off += sizes[2]
    valid = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, count=nbit,
                                        offset=off), bitorder="little")[:m]
    off += sizes[3]
    degen = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, count=nbit,
                                        offset=off), bitorder="little")[:m]
    C = np.zeros((m, n, n))
    iu = np.triu_indices(n)
    C[:, iu[0], iu[1]] = ut.reshape(m, nut)
    C = C + np.swapaxes(np.triu(C, 1), -1, -2)  # mirror the upper triangle
    return CGField(a=float(header["a"]), b=float(header["b"]),
                   grid_shape=shape, lower=tuple(header["lower"]),
                   upper=tuple(header["upper"]),
                   eps_deg=float(header["eps_deg"]),
                   C=C.reshape(*shape, n, n),
                   lambdas=lam.reshape(*shape, n).copy(),
                   xis=xi.reshape(*shape, n, n).copy(),
                   valid=valid.reshape(shape).astype(bool),
                   degenerate=degen.reshape(shape).astype(bool))
