"""Strainline and stretchline tracing along Cauchy-Green eigenvector fields.

Strainlines follow the weakest eigenvector xi_1 (they are normal to the
dominant one); stretchlines follow the dominant eigenvector xi_n. Both are
integrated with fixed-step RK4 in arclength on the sign-aligned interpolated
eigenvector field, in both directions from the seed.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import backend
from .cgtensor import CGField, SingularitySet, _interp_node_scalar
from .errors import (DegenerateRegionError, EmptyLineError, EscapeError,
                     OutOfDomainError, PartialDataError, ValidationError)
from .flowfield import VelocityField
from .flowmap import IntegratorParams, integrate_batch
from .geometry import arclengths, polyline_length

KIND_STRAIN = "strainline"
KIND_STRETCH = "stretchline"

_STOP_NAMES = {
    backend.STOP_BOUNDARY: "boundary",
    backend.STOP_SINGULARITY: "singularity",
    backend.STOP_DEGENERATE: "degenerate",
    backend.STOP_MAX_LENGTH: "max_length",
    backend.STOP_CLOSED: "closed",
    backend.STOP_NONE: "none",
}


@dataclass
class TraceConfig:
    """Stopping and stepping configuration for line tracing.

    ``h`` defaults to half the tensor-grid spacing; ``max_length`` to
    20 x the grid diameter; ``singularity_radius`` to one cell diagonal.
    ``singularities`` may be None to disable proximity stopping.
    """

    h: float | None = None
    max_length: float | None = None
    singularities: SingularitySet | None = None
    singularity_radius: float | None = None
    tensor_interp: bool = False

    def resolved(self, cg: CGField):
        h = self.h if self.h is not None else 0.5 * min(cg.spacing)
        diam = float(np.sqrt(sum((u - l) ** 2 for l, u in
                                 zip(cg.lower, cg.upper))))
        lmax = self.max_length if self.max_length is not None else 20.0 * diam
        r_sing = (self.singularity_radius if self.singularity_radius is not None
                  else cg.cell_diagonal())
        sing_pts = (self.singularities.points
                    if self.singularities is not None else None)
        if not h > 0:
            raise ValidationError("h must be positive")
        return h, lmax, sing_pts, r_sing


@dataclass
class EigenLine:
    """Arclength-parametrized polyline traced along an eigenvector field.

    ``points`` run from the bwd end to the fwd end; orientation is
    canonicalized (first point lexicographically <= last) so that output does
    not depend on arbitrary eigenvector signs. ``q`` is filled by
    ``relative_stretching``.
    """

    points: np.ndarray
    kind: str
    seed: np.ndarray
    h: float
    stop_reason_fwd: str
    stop_reason_bwd: str
    q: float | None = None

    @property
    def length(self):
        return polyline_length(self.points)


def _canonicalize(points, stop_fwd, stop_bwd):
    first, last = points[0], points[-1]
    for a, b in zip(first, last):
        if a < b:
            return points, stop_fwd, stop_bwd
        if a > b:
            return points[::-1].copy(), stop_bwd, stop_fwd
    return points, stop_fwd, stop_bwd


def _trace_batch(cg: CGField, seeds, kind, config: TraceConfig):
    """Kernel-backed tracing of many seeds; returns per-seed results or None
    for seeds whose starting cell is unusable."""
    if cg.n != 2:
        raise ValidationError("line tracing is 2-D only")
    if kind not in (KIND_STRAIN, KIND_STRETCH):
        raise ValidationError(f"unknown line kind {kind!r}")
    h, lmax, sing_pts, r_sing = config.resolved(cg)
    k = 0 if kind == KIND_STRAIN else cg.n - 1
    seeds = np.ascontiguousarray(np.atleast_2d(seeds), dtype=float)
    lower = np.asarray(cg.lower)
    dx = np.asarray(cg.spacing)
    if config.tensor_interp:
        mode = backend.FETCH_TENSOR
        xi = np.zeros((1, 1, 2))
        cg3 = cg.tensor_components()
        okmask = np.ascontiguousarray(cg.valid, dtype=np.uint8)
    else:
        mode = backend.FETCH_VECTOR
        xi = np.ascontiguousarray(cg.xis[..., k, :])
        cg3 = np.zeros((1, 1, 3))
        okmask = np.ascontiguousarray(cg.ok, dtype=np.uint8)
    raw = backend.trace_lines(mode, xi, cg3, k, okmask, lower, dx, seeds,
                              float(h), 0.5 * float(lmax), sing_pts,
                              float(r_sing), float(cg.eps_deg))
    out = []
    for seed, (pos, sf, neg, sb) in zip(seeds, raw):
        if len(pos) == 0 and len(neg) == 0:
            out.append((None, sf, sb))
            continue
        if sf == backend.STOP_CLOSED:
            pts = np.concatenate([seed[None, :], pos])
            sf_eff = sb_eff = backend.STOP_CLOSED
        elif sb == backend.STOP_CLOSED:
            pts = np.concatenate([seed[None, :], neg])
            sf_eff = sb_eff = backend.STOP_CLOSED
        else:
            pts = np.concatenate([neg[::-1], seed[None, :], pos])
            sf_eff, sb_eff = sf, sb
        pts, sfc, sbc = _canonicalize(pts, sf_eff, sb_eff)
        line = EigenLine(points=pts, kind=kind, seed=seed.copy(), h=h,
                         stop_reason_fwd=_STOP_NAMES[sfc],
                         stop_reason_bwd=_STOP_NAMES[sbc])
        out.append((line, sf, sb))
    return out


def trace_eigenline(cg: CGField, seed, kind, config: TraceConfig | None = None
                    ) -> EigenLine:
    """Trace one strainline or stretchline through ``seed``.

    Raises DegenerateRegionError if the seed cell is degenerate/invalid,
    OutOfDomainError if the seed is off the grid, and EmptyLineError when
    no step could be taken in either direction.
    """
    config = config or TraceConfig()
    (res,) = _trace_batch(cg, np.asarray(seed, dtype=float)[None, :], kind,
                          config)
    line, sf, sb = res
    if line is None:
        if sf == backend.STOP_BOUNDARY and sb == backend.STOP_BOUNDARY:
            raise OutOfDomainError("seed outside the tensor grid")
        if sf == backend.STOP_DEGENERATE and sb == backend.STOP_DEGENERATE:
            raise DegenerateRegionError("seed cell is degenerate or invalid")
        raise EmptyLineError(
            f"tracing stopped at step 0 (fwd={_STOP_NAMES[sf]}, "
            f"bwd={_STOP_NAMES[sb]})")
    return line


def trace_eigenlines(cg: CGField, seeds, kind,
                     config: TraceConfig | None = None):
    """Batch variant of ``trace_eigenline``; failed seeds yield None."""
    config = config or TraceConfig()
    return [line for line, _, _ in _trace_batch(cg, seeds, kind, config)]


# ---------------------------------------------------------------------------
# stretching functionals
# ---------------------------------------------------------------------------

def relative_stretching(line: EigenLine, cg: CGField) -> float:
    """Arclength average of sqrt(lambda) along the line.

    Stretchlines average sqrt(lambda_n), which equals the ratio of advected
    to initial length; strainlines average sqrt(lambda_1), the analogous
    compression ratio used to rank repelling candidates.
    """
    if len(line.points) < 2:
        raise EmptyLineError("line has fewer than 2 vertices")
    k = 0 if line.kind == KIND_STRAIN else cg.n - 1
    lam, ok = _interp_node_scalar(cg, cg.lambdas[..., k], line.points)
    if not ok.all():
        raise PartialDataError("invalid nodes under the line",
                               gaps=np.nonzero(~ok)[0].tolist())
    s = arclengths(line.points)
    val = float(np.trapezoid(np.sqrt(lam), s) / s[-1])
    return val


def advected_length_ratio(line, field: VelocityField, a, b,
                          p: IntegratorParams | None = None,
                          threads: int = 1) -> float:
    """Length ratio of the advected polyline: the direct advection oracle.

    Every vertex is integrated from a to b and the polygonal lengths are
    compared. Independent of the eigenvalue quadrature in
    ``relative_stretching`` by construction.
    """
    pts = np.asarray(getattr(line, "points", line), dtype=float)
    if len(pts) < 2:
        raise EmptyLineError("line has fewer than 2 vertices")
    X1, status, t_exit = integrate_batch(field, pts, a, b, p, threads=threads)
    bad = status != backend.STATUS_OK
    if bad.any():
        raise EscapeError("vertices escaped during advection",
                          exit_time=float(t_exit[bad].min()),
                          indices=np.nonzero(bad)[0].tolist())
    return polyline_length(X1) / polyline_length(pts)


# ---------------------------------------------------------------------------
# output formats
# ---------------------------------------------------------------------------

def lines_to_csv(lines) -> str:
    """One vertex per row: line_id, s, x1..xn."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    ndim = lines[0].points.shape[1] if lines else 2
    writer.writerow(["line_id", "s"] + [f"x{i + 1}" for i in range(ndim)])
    for lid, line in enumerate(lines):
        s = arclengths(line.points)
        for si, pt in zip(s, line.points):
            writer.writerow([lid, f"{si:.9g}"] + [f"{c:.17g}" for c in pt])
    return buf.getvalue()


def line_to_dict(line: EigenLine, line_id=None):
    d = {
        "kind": line.kind,
        "seed": [float(c) for c in line.seed],
        "h": line.h,
        "stop_reason_fwd": line.stop_reason_fwd,
        "stop_reason_bwd": line.stop_reason_bwd,
        "length": line.length,
        "q": line.q,
        "vertices": [[float(c) for c in pt] for pt in line.points],
    }
    if line_id is not None:
        d = {"id": line_id, **d}
    return d


def lines_to_json(lines, meta=None) -> str:
    payload = {
        "meta": dict(meta or {}),
        "lines": [line_to_dict(line, i) for i, line in enumerate(lines)],
    }
    return json.dumps(payload, indent=1)
