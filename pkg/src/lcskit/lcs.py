"""LCS selection, curve advection, and numerical checks of the duality results.

Attracting LCSs are stretchlines with locally maximal relative stretching;
repelling LCSs are strainlines with locally minimal relative compression.
Both come from the forward tensor field alone. The verification harnesses
check, numerically, that advected forward strainlines end up orthogonal to
the backward field's weakest eigenvector (and the stretchline mirror image),
and that the forward/backward eigenvalue reciprocity holds.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend
from .cgtensor import (CGField, PointCG, SingularitySet, _fetch_batch,
                       cauchy_green, cauchy_green_at_points,
                       detect_singularities, _interp_node_scalar)
from .eigenlines import (KIND_STRAIN, KIND_STRETCH, EigenLine, TraceConfig,
                         line_to_dict, relative_stretching, trace_eigenlines)
from .errors import (DegenerateRegionError, EmptyFieldError, ValidationError)
from .flowfield import Domain, VelocityField
from .flowmap import IntegratorParams, compute_flow_map, integrate_batch
from .geometry import (angle_between, decimate_polyline, hausdorff,
                       polyline_length, principal_axes, resample_polyline,
                       tangents)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

@dataclass
class SelectionParams:
    """Knobs for LCS extraction.

    ``neighborhood_radius`` defaults to twice the seed spacing,
    ``dedupe_tol`` to one tensor-grid cell diagonal. ``tie_rel`` is the
    relative slack when comparing stretching values, so exact ties (e.g. a
    translation-invariant field) do not annihilate every candidate.
    """

    seeds_shape: tuple = (30, 30)
    neighborhood_radius: float | None = None
    dedupe_tol: float | None = None
    tie_rel: float = 1e-9
    margin_cells: float = 1.0
    sing_threshold: float = 1e-2
    trace: TraceConfig | None = None
    keep_lines: bool = False     # retain decimated candidate geometry
    threads: int = 1


@dataclass
class LCSSet:
    """Selected LCS curves plus the candidate metadata used to rank them."""

    kind: str                      # "attracting" | "repelling"
    lines: list
    neighborhood_radius: float
    dedupe_tol: float
    candidates: list               # dicts: seed, q, status
    candidate_lines: list | None = None   # decimated geometry, if kept

    @property
    def q_values(self):
        return [line.q for line in self.lines]


def _seed_grid(cg: CGField, shape, margin_cells):
    axes = [np.linspace(cg.lower[i] + margin_cells * cg.spacing[i],
                        cg.upper[i] - margin_cells * cg.spacing[i],
                        int(shape[i])) for i in range(cg.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _trace_candidates(cg, seeds, kind, config, threads):
    if threads <= 1 or len(seeds) < 64:
        return trace_eigenlines(cg, seeds, kind, config)
    chunks = np.array_split(np.arange(len(seeds)), threads * 2)
    chunks = [c for c in chunks if c.size]
    out = [None] * len(seeds)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = [(c, pool.submit(trace_eigenlines, cg, seeds[c], kind, config))
                for c in chunks]
        for c, fut in futs:
            for idx, line in zip(c, fut.result()):
                out[idx] = line
    return out


def extract_lcs(cg: CGField, kind: str = "attracting",
                params: SelectionParams | None = None) -> LCSSet:
    """Trace a seed grid of eigenvector lines and keep the local extrema.

    Attracting LCSs maximize the relative stretching q among candidates whose
    seeds fall within ``neighborhood_radius``; repelling LCSs minimize the
    compression functional. Survivors are deduplicated by Hausdorff distance,
    keeping the extremal representative.
    """
    if cg.n != 2:
        raise ValidationError("LCS extraction is 2-D only")
    if kind not in ("attracting", "repelling"):
        raise ValidationError(f"unknown LCS kind {kind!r}")
    params = params or SelectionParams()
    line_kind = KIND_STRETCH if kind == "attracting" else KIND_STRAIN

    seeds = _seed_grid(cg, params.seeds_shape, params.margin_cells)
    spacing = [(cg.upper[i] - cg.lower[i] - 2 * params.margin_cells
                * cg.spacing[i]) / (params.seeds_shape[i] - 1)
               for i in range(2)]
    radius = (params.neighborhood_radius if params.neighborhood_radius
              is not None else 2.0 * max(spacing))
    dedupe_tol = (params.dedupe_tol if params.dedupe_tol is not None
                  else cg.cell_diagonal())

    config = params.trace or TraceConfig(
        singularities=detect_singularities(cg, params.sing_threshold))
    lines = _trace_candidates(cg, seeds, line_kind, config, params.threads)

    cand_idx = []
    values = []
    for i, line in enumerate(lines):
        if line is None:
            continue
        try:
            line.q = relative_stretching(line, cg)
        except Exception:
            lines[i] = None
            continue
        cand_idx.append(i)
        values.append(line.q)
    if not cand_idx:
        raise EmptyFieldError("every seed fell in a degenerate/invalid cell")
    cand_idx = np.asarray(cand_idx)
    values = np.asarray(values)
    cseeds = seeds[cand_idx]

    tie = params.tie_rel * max(float(np.median(np.abs(values))), 1e-300)
    sign = 1.0 if kind == "attracting" else -1.0
    ranked = sign * values

    if ranked.max() - ranked.min() <= tie:
        # flat landscape (e.g. translation-invariant flow): all candidates are
        # equivalent, keep one representative
        winners = [int(np.argmax(ranked))]
    else:
        winners = []
        for ci in range(len(cand_idx)):
            d2 = np.sum((cseeds - cseeds[ci]) ** 2, axis=1)
            nbr = d2 <= radius * radius
            if ranked[ci] >= ranked[nbr].max() - tie:
                winners.append(ci)

    order = sorted(winners, key=lambda ci: (-ranked[ci], ci))
    kept = []
    kept_dec = []
    for ci in order:
        line = lines[cand_idx[ci]]
        dec = decimate_polyline(line.points, 300)
        if any(hausdorff(dec, kd) < dedupe_tol for kd in kept_dec):
            continue
        kept.append((ci, line))
        kept_dec.append(dec)

    selected = {cand_idx[ci] for ci, _ in kept}
    candidates = []
    for i, line in enumerate(lines):
        if line is None:
            candidates.append({"seed": [float(c) for c in seeds[i]],
                               "q": None, "status": "failed"})
        else:
            candidates.append({"seed": [float(c) for c in seeds[i]],
                               "q": float(line.q),
                               "status": "selected" if i in selected
                               else "candidate"})
    cand_lines = None
    if params.keep_lines:
        cand_lines = [None if line is None else decimate_polyline(line.points, 300)
                      for line in lines]
    return LCSSet(kind=kind, lines=[line for _, line in kept],
                  neighborhood_radius=float(radius),
                  dedupe_tol=float(dedupe_tol), candidates=candidates,
                  candidate_lines=cand_lines)


def lcsset_to_json(s: LCSSet, meta=None) -> str:
    payload = {
        "meta": dict(meta or {}),
        "kind": s.kind,
        "neighborhood_radius": s.neighborhood_radius,
        "dedupe_tol": s.dedupe_tol,
        "q_values": [float(q) for q in s.q_values],
        "lines": [line_to_dict(line, i) for i, line in enumerate(s.lines)],
        "candidates": s.candidates,
    }
    return json.dumps(payload, indent=1)


# ---------------------------------------------------------------------------
# curve advection
# ---------------------------------------------------------------------------

@dataclass
class AdvectedCurve:
    """Advected polyline with its (possibly refined) source vertices."""

    points: np.ndarray     # (m, n) at t1
    sources: np.ndarray    # (m, n) at t0
    ok: np.ndarray         # (m,) vertex success mask
    saturated: bool        # depth limit hit with unresolved stretching
    t0: float
    t1: float


def advect_points(field: VelocityField, pts, t0, t1,
                  p: IntegratorParams | None = None, threads: int = 1):
    """Advect a point cloud; returns (positions, ok mask)."""
    X1, status, _ = integrate_batch(field, np.atleast_2d(pts), t0, t1, p,
                                    threads=threads)
    return X1, status == backend.STATUS_OK


def advect_curve(line_pts, field: VelocityField, t0, t1,
                 p: IntegratorParams | None = None, *,
                 refine_factor: float = 2.0, max_seg_length: float | None = None,
                 max_depth: int = 10, refine: bool = True,
                 threads: int = 1) -> AdvectedCurve:
    """Advect a polyline vertexwise with adaptive midpoint refinement.

    A segment is split (midpoint inserted at t0, then advected) while its
    advected length exceeds ``refine_factor`` times its source length and is
    still longer than ``max_seg_length`` (default: the median source
    spacing). The absolute floor makes refinement terminate under uniform
    exponential stretching. Escaped vertices are kept with ``ok=False``.
    """
    src = np.atleast_2d(np.asarray(line_pts, dtype=float)).copy()
    if len(src) < 2:
        raise ValidationError("advect_curve needs at least 2 vertices")
    seg0 = np.linalg.norm(np.diff(src, axis=0), axis=1)
    if max_seg_length is None:
        max_seg_length = float(np.median(seg0[seg0 > 0])) if (seg0 > 0).any() else 1.0
    dst, ok = advect_points(field, src, t0, t1, p, threads=threads)

    saturated = False
    if refine:
        for _ in range(max_depth):
            seg_ok = ok[:-1] & ok[1:]
            orig = np.linalg.norm(np.diff(src, axis=0), axis=1)
            adv = np.linalg.norm(np.diff(dst, axis=0), axis=1)
            viol = seg_ok & (adv > refine_factor * orig) & (adv > max_seg_length)
            if not viol.any():
                break
            where = np.nonzero(viol)[0]
            mids = 0.5 * (src[where] + src[where + 1])
            mdst, mok = advect_points(field, mids, t0, t1, p, threads=threads)
            src = np.insert(src, where + 1, mids, axis=0)
            dst = np.insert(dst, where + 1, mdst, axis=0)
            ok = np.insert(ok, where + 1, mok)
        else:
            saturated = True
    return AdvectedCurve(points=dst, sources=src, ok=ok, saturated=saturated,
                         t0=float(t0), t1=float(t1))


def material_tangents(field: VelocityField, pts, dirs, t0, t1,
                      delta: float = 1e-4, p: IntegratorParams | None = None,
                      threads: int = 1):
    """Advected unit tangents via central differences of paired trajectories.

    For each point x with unit tangent d, integrates x +/- delta*d and
    normalizes the difference, i.e. the image of the tangent under the flow
    gradient without forming the full gradient.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    pair = np.concatenate([pts + delta * dirs, pts - delta * dirs], axis=0)
    X1, status, _ = integrate_batch(field, pair, t0, t1, p, threads=threads)
    m = len(pts)
    ok = (status[:m] == backend.STATUS_OK) & (status[m:] == backend.STATUS_OK)
    diff = X1[:m] - X1[m:]
    nrm = np.linalg.norm(diff, axis=1, keepdims=True)
    ok &= nrm[:, 0] > 0
    return diff / np.maximum(nrm, 1e-300), ok


# ---------------------------------------------------------------------------
# verification harnesses
# ---------------------------------------------------------------------------

def _pick_seeds(rng, cg: CGField, count, inset_cells=2.0, max_tries=50):
    """Random seeds inside the grid whose cells are traceable."""
    lo = np.asarray(cg.lower) + inset_cells * np.asarray(cg.spacing)
    hi = np.asarray(cg.upper) - inset_cells * np.asarray(cg.spacing)
    picked = []
    for _ in range(max_tries):
        need = count - len(picked)
        if need <= 0:
            break
        cand = rng.uniform(lo, hi, size=(4 * need, cg.n))
        _, code = _fetch_batch(cg, cand, cg.n - 1, None)
        for x in cand[code == 0][:need]:
            picked.append(x)
    if len(picked) < count:
        raise EmptyFieldError(
            f"could not find {count} non-degenerate seeds")
    return np.asarray(picked)


def _sample_on_advected(cg_f, line_pts, k, count):
    """Sample points uniform in the arclength of the advected line.

    The advected length element of an eigenvector line is sqrt(lambda_k) ds
    (the same identity behind the stretching quadrature), so uniform samples
    of the image curve are drawn from that measure along the traced line.
    Computing the measure by quadrature keeps it clean where vertexwise
    numerical advection would be swamped by amplified tangent error.
    """
    lam, ok = _interp_node_scalar(cg_f, cg_f.lambdas[..., k], line_pts)
    w = np.sqrt(np.where(ok & (lam > 0), lam, 0.0))
    seg = np.linalg.norm(np.diff(line_pts, axis=0), axis=1)
    wseg = 0.5 * (w[:-1] + w[1:]) * seg
    s = np.concatenate([[0.0], np.cumsum(wseg)])
    if s[-1] <= 0:
        return np.empty((0, line_pts.shape[1]))
    targets = np.linspace(0.0, s[-1], count + 2)[1:-1]
    idx = np.clip(np.searchsorted(s, targets) - 1, 0, len(seg) - 1)
    frac = (targets - s[idx]) / np.maximum(wseg[idx], 1e-300)
    return ((1.0 - frac)[:, None] * line_pts[idx]
            + frac[:, None] * line_pts[idx + 1])


def verify_theorem1(field: VelocityField, a, b, n_lines: int = 20,
                    tol: float = 0.05, *, grid_shape=(201, 201),
                    domain: Domain | None = None,
                    backward_domain: Domain | None = None,
                    p: IntegratorParams | None = None,
                    tangent_p: IntegratorParams | None = None,
                    samples_per_line: int = 40, tangent_delta: float = 1e-4,
                    aux_offset: float = 1e-6,
                    sing_threshold: float = 1e-2, seed: int = 0,
                    threads: int = 1) -> dict:
    """Check that advected forward strainlines are orthogonal to the backward
    field's weakest eigenvector, and forward stretchlines to its strongest.

    Sample points are uniform in the arclength of the advected line (that is
    where the orthogonality statement lives; it also weights the curve by
    how much of it survives advection). At each sample the surface tangent
    comes from a dedicated per-point tensor (auxiliary differences, tight
    tolerances) rather than from the grid: transverse tangent errors grow
    like lambda_n under forward advection, so grid-level accuracy would
    swamp the strain side. The advected tangent itself comes from a central
    pair of trajectories ``x +/- delta * t`` and the backward eigenvector
    from a per-point backward tensor at the image position.

    Excluded sample points: advection/tangent-pair escapes, points whose
    local forward/backward tensor is degenerate (the duality proof assumes
    distinct eigenvalues), and points landing within one cell diagonal of a
    backward-field degeneracy. ``pass`` means both sides reach a 0.95 pass
    fraction.
    """
    p = p or IntegratorParams()
    tangent_p = tangent_p or IntegratorParams(rel_tol=1e-12, abs_tol=1e-14)
    dom = domain or field.domain
    bdom = backward_domain or dom
    rng = np.random.default_rng(seed)

    fm_f = compute_flow_map(field, grid_shape, a, b, p=p, domain=dom,
                            threads=threads)
    cg_f = cauchy_green(fm_f)
    sing_f = detect_singularities(cg_f, sing_threshold)
    fm_b = compute_flow_map(field, grid_shape, b, a, p=p, domain=bdom,
                            threads=threads)
    cg_b = cauchy_green(fm_b)
    sing_b = detect_singularities(cg_b, sing_threshold)
    r_excl = cg_b.cell_diagonal()

    report = {
        "check": "theorem1",
        "flow": field.name,
        "a": float(a), "b": float(b),
        "n_lines": n_lines,
        "tol": tol,
        "grid_shape": list(grid_shape),
        "seed": seed,
    }
    try:
        seeds = _pick_seeds(rng, cg_f, n_lines)
    except EmptyFieldError:
        # wholly degenerate field (e.g. the identity flow): nothing to check
        empty = {"n_lines": 0, "n_points": 0, "n_excluded": 0,
                 "n_checked": 0, "n_pass": 0, "pass_fraction": 1.0,
                 "mean_abs_cos": None, "max_abs_cos": None}
        report["strain_vs_xi1b"] = dict(empty)
        report["stretch_vs_xinb"] = dict(empty)
        report["vacuous"] = True
        report["pass"] = True
        return report
    config = TraceConfig(singularities=sing_f)
    sides = {}
    for label, kind, k_fwd, k_back in (("strain", KIND_STRAIN, 0, 0),
                                       ("stretch", KIND_STRETCH, 1, cg_b.n - 1)):
        lines = [ln for ln in trace_eigenlines(cg_f, seeds, kind, config)
                 if ln is not None and len(ln.points) >= 5]
        pts = [_sample_on_advected(cg_f, line.points, k_fwd, samples_per_line)
               for line in lines]
        pts = np.concatenate(pts) if pts else np.empty((0, 2))

        # per-point tensors: accurate local tangent, advected position, and
        # backward eigenvector at the image point
        pcg = cauchy_green_at_points(field, pts, a, b, aux_offset=aux_offset,
                                     p=tangent_p, threads=threads)
        dirs = pcg.xis[:, k_fwd, :]
        ok_pt = pcg.valid & ~pcg.degenerate
        xb = pcg.finals
        tb, ok_tan = material_tangents(field, pts, np.where(ok_pt[:, None],
                                                            dirs, 1.0),
                                       a, b, delta=tangent_delta, p=tangent_p,
                                       threads=threads)
        pcg_b = cauchy_green_at_points(field, xb, b, a,
                                       aux_offset=aux_offset, p=tangent_p,
                                       threads=threads)
        xi_b = pcg_b.xis[:, k_back, :]
        ok_b = pcg_b.valid & ~pcg_b.degenerate
        # grid fetch restricts samples to usable backward-grid cells
        _, code = _fetch_batch(cg_b, xb, k_back, None)
        usable = ok_pt & ok_tan & ok_b & (code == 0)
        if len(sing_b) and usable.any():
            d2 = ((xb[:, 0][:, None] - sing_b.points[None, :, 0]) ** 2
                  + (xb[:, 1][:, None] - sing_b.points[None, :, 1]) ** 2)
            usable &= d2.min(axis=1) >= r_excl * r_excl
        cosines = np.abs(np.sum(tb * xi_b, axis=1))[usable]
        n_pass = int((cosines < tol).sum())
        sides[label] = {
            "n_lines": len(lines),
            "n_points": int(len(pts)),
            "n_excluded": int(len(pts) - usable.sum()),
            "n_checked": int(usable.sum()),
            "n_pass": n_pass,
            "pass_fraction": float(n_pass / max(usable.sum(), 1)),
            "mean_abs_cos": float(cosines.mean()) if cosines.size else None,
            "max_abs_cos": float(cosines.max()) if cosines.size else None,
        }
    report["strain_vs_xi1b"] = sides["strain"]
    report["stretch_vs_xinb"] = sides["stretch"]
    report["pass"] = bool(sides["strain"]["pass_fraction"] >= 0.95
                          and sides["stretch"]["pass_fraction"] >= 0.95)
    return report


def verify_lemma1(field: VelocityField, a, b, n_seeds: int = 50, *,
                  aux_offset: float = 1e-6,
                  p: IntegratorParams | None = None,
                  domain: Domain | None = None, seed: int = 0,
                  tol: float = 1e-3, threads: int = 1) -> dict:
    """Reciprocity of extreme eigenvalues between forward/backward tensors.

    Both tensors are built from per-seed auxiliary gradients: the forward one
    at random seeds x_a, the backward one at their exact advected positions
    x_b. Reports the worst deviation of lambda_n^f * lambda_1^b and
    lambda_1^f * lambda_n^b from 1.
    """
    p = p or IntegratorParams(rel_tol=1e-11, abs_tol=1e-13)
    dom = domain or field.domain
    rng = np.random.default_rng(seed)
    lo = np.asarray(dom.lower)
    hi = np.asarray(dom.upper)
    inset = 0.05 * (hi - lo)
    seeds = rng.uniform(lo + inset, hi - inset, size=(n_seeds, dom.n))

    fwd = cauchy_green_at_points(field, seeds, a, b, aux_offset=aux_offset,
                                 p=p, threads=threads)
    bwd = cauchy_green_at_points(field, fwd.finals, b, a,
                                 aux_offset=aux_offset, p=p, threads=threads)
    use = fwd.valid & bwd.valid
    prod_hi = fwd.lambdas[use, -1] * bwd.lambdas[use, 0]
    prod_lo = fwd.lambdas[use, 0] * bwd.lambdas[use, -1]
    err_hi = np.abs(prod_hi - 1.0)
    err_lo = np.abs(prod_lo - 1.0)
    max_err = float(max(err_hi.max(), err_lo.max())) if use.any() else math.inf
    return {
        "check": "lemma1",
        "flow": field.name,
        "a": float(a), "b": float(b),
        "n_seeds": n_seeds,
        "n_used": int(use.sum()),
        "aux_offset": aux_offset,
        "seed": seed,
        "tol": tol,
        "max_err_high": float(err_hi.max()) if use.any() else None,
        "max_err_low": float(err_lo.max()) if use.any() else None,
        "mean_err": float(np.mean(np.concatenate([err_hi, err_lo])))
        if use.any() else None,
        "pass": bool(use.any() and max_err < tol),
    }


def verify_reciprocity_interpolated(field: VelocityField, a, b,
                                    n_seeds: int = 100, *,
                                    grid_shape=(201, 201),
                                    domain: Domain | None = None,
                                    backward_domain: Domain | None = None,
                                    p: IntegratorParams | None = None,
                                    aux_offset: float = 1e-6,
                                    seed: int = 0,
                                    threads: int = 1) -> dict:
    """Diagnostic: reciprocity through grid-interpolated backward eigenvalues.

    The exact per-seed forward eigenvalues are multiplied with backward
    eigenvalues interpolated at the advected positions, so the reported
    deviation from 1 is the relative interpolation error of the backward
    grid there. Advected seeds concentrate on the backward field's sharpest
    ridges, which no affordable grid resolves, so this check reports error
    quantiles instead of gating; the strict reciprocity bound is enforced by
    ``verify_lemma1`` (per-seed gradients on both sides).
    """
    p = p or IntegratorParams(rel_tol=1e-10, abs_tol=1e-12)
    tp = IntegratorParams(rel_tol=1e-12, abs_tol=1e-14)
    dom = domain or field.domain
    bdom = backward_domain or dom
    rng = np.random.default_rng(seed)

    fm_b = compute_flow_map(field, grid_shape, b, a, aux_offset=aux_offset,
                            p=p, domain=bdom, threads=threads)
    cg_b = cauchy_green(fm_b)
    lo = np.asarray(dom.lower)
    hi = np.asarray(dom.upper)
    inset = 0.05 * (hi - lo)
    seeds = rng.uniform(lo + inset, hi - inset, size=(n_seeds, dom.n))
    pf = cauchy_green_at_points(field, seeds, a, b, aux_offset=aux_offset,
                                p=tp, threads=threads)
    xb = pf.finals
    lam_b_hi, ok1 = _interp_node_scalar(cg_b, cg_b.lambdas[..., -1], xb)
    lam_b_lo, ok2 = _interp_node_scalar(cg_b, cg_b.lambdas[..., 0], xb)
    use = pf.valid & ok1 & ok2
    errs = np.maximum(np.abs(pf.lambdas[use, -1] * lam_b_lo[use] - 1.0),
                      np.abs(pf.lambdas[use, 0] * lam_b_hi[use] - 1.0))
    qs = (np.quantile(errs, [0.5, 0.9, 1.0]) if use.any()
          else np.full(3, math.inf))
    return {
        "check": "reciprocity",
        "flow": field.name,
        "a": float(a), "b": float(b),
        "n_seeds": n_seeds,
        "n_used": int(use.sum()),
        "seed": seed,
        "median_err": float(qs[0]),
        "p90_err": float(qs[1]),
        "max_err": float(qs[2]),
    }


def verify_appendix_b(field: VelocityField, a, b, n_lines: int = 20, *,
                      grid_shape=(201, 201), domain: Domain | None = None,
                      p: IntegratorParams | None = None, seed: int = 0,
                      tol: float = 0.01, resample_spacing: float | None = None,
                      threads: int = 1) -> dict:
    """Eigenvalue quadrature vs direct advection for stretchline stretching.

    Traces random stretchlines, computes q by the sqrt(lambda_n) quadrature,
    then re-measures it by densely advecting the line and taking the length
    ratio. Reports the largest relative disagreement.
    """
    p = p or IntegratorParams()
    dom = domain or field.domain
    rng = np.random.default_rng(seed)
    fm = compute_flow_map(field, grid_shape, a, b, p=p, domain=dom,
                          threads=threads)
    cg = cauchy_green(fm)
    sing = detect_singularities(cg)
    config = TraceConfig(singularities=sing)
    seeds = _pick_seeds(rng, cg, 3 * n_lines)

    from .eigenlines import advected_length_ratio  # local to avoid cycle
    rel = []
    per_line = []
    h = 0.5 * min(cg.spacing)
    spacing = resample_spacing if resample_spacing is not None else h / 8.0
    for line in trace_eigenlines(cg, seeds, KIND_STRETCH, config):
        if len(rel) >= n_lines:
            break
        if line is None or len(line.points) < 20:
            continue
        q_int = relative_stretching(line, cg)
        dense = resample_polyline(line.points, spacing)
        try:
            q_adv = advected_length_ratio(dense, field, a, b, p,
                                          threads=threads)
        except Exception:
            continue
        r = abs(q_int - q_adv) / q_adv
        rel.append(r)
        per_line.append({"seed": [float(c) for c in line.seed],
                         "q_integral": float(q_int),
                         "q_advected": float(q_adv),
                         "rel_diff": float(r)})
    return {
        "check": "appendixb",
        "flow": field.name,
        "a": float(a), "b": float(b),
        "n_lines": len(rel),
        "seed": seed,
        "tol": tol,
        "max_rel_diff": float(max(rel)) if rel else None,
        "lines": per_line,
        "pass": bool(rel and max(rel) < tol and len(rel) >= n_lines),
    }


def backward_instability_demo(field: VelocityField, a, b, line_pts, *,
                              p: IntegratorParams | None = None,
                              threads: int = 1) -> dict:
    """Reproduce the backward-advection failure mode for an attracting LCS.

    The stretchline is advected forward (refined); integrating those exact
    vertices back isolates the integration round-trip error. Re-advecting a
    fresh uniform resampling of the advected curve backward, with refinement
    disabled, injects small off-material offsets that grow exponentially in
    backward time. The ratio of the two deviations is the reported failure
    magnitude (expected well above 10).
    """
    p = p or IntegratorParams()
    pts = np.asarray(line_pts, dtype=float)
    fwd = advect_curve(pts, field, a, b, p, refine=True, threads=threads)
    good = fwd.ok
    adv = fwd.points[good]
    src = fwd.sources[good]

    # round trip with the same material points: integration error only
    back, ok_rt = advect_points(field, adv, b, a, p, threads=threads)
    e_fwd = hausdorff(back[ok_rt], pts)

    # fresh vertices on the advected curve, no refinement on the way back
    spacing = polyline_length(adv) / max(len(adv) - 1, 1)
    fresh = resample_polyline(adv, spacing)
    bw, ok_bw = advect_points(field, fresh, b, a, p, threads=threads)
    d_unstable = hausdorff(bw[ok_bw], pts)
    ratio = d_unstable / max(e_fwd, 1e-300)
    return {
        "check": "instability",
        "flow": field.name,
        "a": float(a), "b": float(b),
        "n_vertices": int(len(src)),
        "roundtrip_error": float(e_fwd),
        "unstable_deviation": float(d_unstable),
        "ratio": float(ratio),
        "reproduced": bool(ratio > 10.0),
        "advected": adv,
        "backward": bw[ok_bw],
    }


def disk_points(center, radius, rings: int = 6, per_ring: int = 24):
    """Deterministic filled-disk sample (area-uniform rings)."""
    center = np.asarray(center, dtype=float)
    pts = [center[None, :]]
    for i in range(rings):
        r = radius * math.sqrt((i + 0.5) / rings)
        th = 2.0 * math.pi * np.arange(per_ring) / per_ring
        ring = center[None, :] + r * np.stack([np.cos(th), np.sin(th)], axis=1)
        pts.append(ring)
    return np.concatenate(pts)


def tracer_blob_demo(field: VelocityField, line: EigenLine, center, radii,
                     times, *, a: float = 0.0,
                     p: IntegratorParams | None = None,
                     tangent_delta: float = 1e-4, threads: int = 1) -> dict:
    """Advect tracer disks and compare their elongation axis with the
    advected stretchline tangent at the center's image.

    For each requested time and disk radius, the advected cloud's dominant
    second-moment direction is measured against the material tangent of the
    line at the center. Returns per-time angles (degrees) plus the advected
    geometries for plotting.
    """
    p = p or IntegratorParams()
    center = np.asarray(center, dtype=float)
    i0 = int(np.argmin(np.linalg.norm(line.points - center, axis=1)))
    i_lo = max(i0 - 1, 0)
    i_hi = min(i0 + 1, len(line.points) - 1)
    t_dir = line.points[i_hi] - line.points[i_lo]
    t_dir = t_dir / np.linalg.norm(t_dir)

    entries = []
    for t1 in times:
        tb, _ = material_tangents(field, center[None, :], t_dir[None, :],
                                  a, t1, delta=tangent_delta, p=p)
        curve = advect_curve(line.points, field, a, t1, p, threads=threads)
        row = {"t": float(t1), "tangent": tb[0].tolist(),
               "line": curve.points[curve.ok], "blobs": []}
        for r in radii:
            cloud = disk_points(center, r)
            adv, ok = advect_points(field, cloud, a, t1, p, threads=threads)
            w, axes = principal_axes(adv[ok])
            angle = math.degrees(angle_between(axes[-1], tb[0]))
            row["blobs"].append({"radius": float(r), "angle_deg": angle,
                                 "points": adv[ok]})
        entries.append(row)
    return {
        "check": "tracer_blobs",
        "flow": field.name,
        "center": center.tolist(),
        "radii": [float(r) for r in radii],
        "times": [float(t) for t in times],
        "entries": entries,
        "max_angle_deg": max(b["angle_deg"] for e in entries
                             for b in e["blobs"]),
    }


# ---------------------------------------------------------------------------
# local stretch-planes (3-D)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StretchPlane:
    """Local approximation of a stretch-surface: the plane normal to xi_1."""

    center: np.ndarray
    normal: np.ndarray      # xi_1 at the center
    e2: np.ndarray          # xi_2, spanning direction
    e3: np.ndarray          # xi_3, spanning direction
    half_extent: float

    def grid(self, m: int = 9):
        """(m*m, 3) vertex grid spanning the plane patch."""
        u = np.linspace(-self.half_extent, self.half_extent, m)
        uu, vv = np.meshgrid(u, u, indexing="ij")
        return (self.center[None, :]
                + uu.reshape(-1, 1) * self.e2[None, :]
                + vv.reshape(-1, 1) * self.e3[None, :])


def local_stretch_plane(pcg: PointCG, index: int = 0,
                        half_extent: float = 0.1,
                        eps_deg: float = 1e-4) -> StretchPlane:
    """Plane through a point, normal to the weakest eigenvector there.

    Only the bottom eigenvalue needs to be isolated: a repeated top pair
    (e.g. an axisymmetric saddle) still has a well-defined plane since any
    orthonormal pair spans it. Raises DegenerateRegionError when
    lambda_1 ~ lambda_2, where the normal itself is undefined.
    """
    if pcg.n != 3:
        raise ValidationError("stretch-planes are 3-D only")
    lam = pcg.lambdas[index]
    if not pcg.valid[index]:
        raise DegenerateRegionError("tensor at the requested point is invalid")
    if (lam[1] - lam[0]) / max(lam[-1], 1e-300) < eps_deg:
        raise DegenerateRegionError(
            "weakest eigenvalue is (near-)repeated; plane normal undefined")
    return StretchPlane(center=pcg.positions[index].copy(),
                        normal=pcg.xis[index, 0].copy(),
                        e2=pcg.xis[index, 1].copy(),
                        e3=pcg.xis[index, 2].copy(),
                        half_extent=float(half_extent))


def fibonacci_sphere(center, radius, count=400):
    """Deterministic, nearly uniform sample of a sphere surface."""
    i = np.arange(count, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    th = golden * i
    pts = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    return np.asarray(center, dtype=float)[None, :] + radius * pts


def stretch_plane_demo(field: VelocityField, center, a, b, *,
                       radius: float = 0.1, aux_offset: float = 1e-5,
                       p: IntegratorParams | None = None,
                       sphere_count: int = 400, tangent_delta: float = 1e-4,
                       threads: int = 1) -> dict:
    """Advect a tracer sphere and the local stretch-plane through its center.

    The sphere's flattest advected direction (smallest second-moment
    eigenvalue) is compared with the advected plane normal.
    """
    p = p or IntegratorParams(rel_tol=1e-10, abs_tol=1e-12)
    center = np.asarray(center, dtype=float)
    pcg = cauchy_green_at_points(field, center[None, :], a, b,
                                 aux_offset=aux_offset, p=p, threads=threads)
    plane = local_stretch_plane(pcg, 0, half_extent=radius)
    C = pcg.C[0]
    lam1 = pcg.lambdas[0, 0]
    residual = float(np.linalg.norm(C @ plane.normal - lam1 * plane.normal))

    sphere = fibonacci_sphere(center, radius, sphere_count)
    sphere_adv, ok = advect_points(field, sphere, a, b, p, threads=threads)
    w, axes = principal_axes(sphere_adv[ok])
    flattest = axes[0]

    # advected plane normal from material tangents of the spanning directions
    t2, _ = material_tangents(field, center[None, :], plane.e2[None, :], a, b,
                              delta=tangent_delta, p=p)
    t3, _ = material_tangents(field, center[None, :], plane.e3[None, :], a, b,
                              delta=tangent_delta, p=p)
    normal_adv = np.cross(t2[0], t3[0])
    normal_adv /= np.linalg.norm(normal_adv)

    plane_grid = plane.grid(9)
    plane_adv, plane_ok = advect_points(field, plane_grid, a, b, p,
                                        threads=threads)
    return {
        "check": "stretch_plane",
        "flow": field.name,
        "a": float(a), "b": float(b),
        "center": center.tolist(),
        "radius": radius,
        "normal": plane.normal.tolist(),
        "eigen_residual": residual,
        "lambda": pcg.lambdas[0].tolist(),
        "angle_deg": math.degrees(angle_between(flattest, normal_adv)),
        "moment_eigvals": w.tolist(),
        "sphere_advected": sphere_adv[ok],
        "plane_advected": plane_adv[plane_ok],
        "normal_advected": normal_adv.tolist(),
    }
