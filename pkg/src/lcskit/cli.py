"""Command-line pipeline: flowmap -> cg -> lines/lcs -> advect, plus verify.

Stages are content-addressed: each output carries a ``.prov.json`` sidecar
with a hash of the effective configuration and input files, and a rerun with
an unchanged hash is a no-op unless --force. Output directories are guarded
by a lock file so concurrent invocations cannot interleave.

Exit codes: 0 success / verification passed, 1 verification invariant
failed, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__, backend, svgplot
from .cgtensor import (cauchy_green, detect_singularities, ftle, load_cgfield,
                       save_cgfield)
from .eigenlines import (EigenLine, TraceConfig, lines_to_csv, lines_to_json,
                         relative_stretching, trace_eigenline,
                         trace_eigenlines)
from .errors import (FormatError, LcsKitError, OutOfDomainError,
                     ValidationError)
from .flowfield import Domain, load_gridded, make_builtin
from .flowmap import (IntegratorParams, compute_flow_map, load_flowmap,
                      save_flowmap)
from .lcs import (SelectionParams, advect_curve, backward_instability_demo,
                  extract_lcs, lcsset_to_json, stretch_plane_demo,
                  tracer_blob_demo, verify_appendix_b, verify_lemma1,
                  verify_reciprocity_interpolated, verify_theorem1)

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


# ---------------------------------------------------------------------------
# option plumbing
# ---------------------------------------------------------------------------

def _parse_pairs(text, n_expected=None):
    vals = [float(v) for v in text.split(",")]
    if len(vals) % 2 or (n_expected and len(vals) != 2 * n_expected):
        raise ValidationError(f"bad domain spec {text!r}")
    lower = vals[0::2]
    upper = vals[1::2]
    return lower, upper


def _parse_grid(text):
    return tuple(int(v) for v in text.lower().split("x"))


def _parse_params(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValidationError(f"--param expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = float(val)
    return out


def build_field(args, cfg):
    name = _opt(args, cfg, "flow")
    data = _opt(args, cfg, "data")
    if data:
        return load_gridded(data).field(), {"data": str(data)}
    if not name:
        raise ValidationError("specify --flow NAME or --data FILE")
    params = _parse_params(getattr(args, "param", None) or cfg.get("param"))
    return make_builtin(name, params), {"flow": name, "params": params}


def _opt(args, cfg, key, default=None):
    val = getattr(args, key, None)
    if val is not None:
        return val
    return cfg.get(key, default)


def integrator_from(args, cfg):
    return IntegratorParams(
        method=_opt(args, cfg, "method", "rk45_adaptive"),
        step=float(_opt(args, cfg, "step", 1e-2)),
        rel_tol=float(_opt(args, cfg, "rtol", 1e-8)),
        abs_tol=float(_opt(args, cfg, "atol", 1e-10)),
        max_steps=int(_opt(args, cfg, "max_steps", 1_000_000)))


def _default_grid(domain: Domain):
    ext = domain.extent
    top = max(ext)
    return tuple(max(41, 1 + round(200 * e / top)) for e in ext)


def _flow_domains(field):
    """Per-flow compute/backward domains for analysis stages."""
    if field.name == "duffing":
        return (Domain((-3.0, -3.0), (3.0, 3.0), (False, False)),
                Domain((-3.5, -5.0), (3.5, 5.0), (False, False)))
    return field.domain, field.domain


# ---------------------------------------------------------------------------
# provenance and staging
# ---------------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _config_hash(stage, settings, inputs):
    payload = {"stage": stage, "settings": settings,
               "inputs": {str(p): _sha256(p) for p in inputs}}
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest(), payload


def _stage_is_fresh(out_path: Path, chash: str, force: bool):
    prov = out_path.with_suffix(out_path.suffix + ".prov.json")
    if force or not out_path.exists() or not prov.exists():
        return False
    try:
        return json.loads(prov.read_text()).get("config_hash") == chash
    except (OSError, json.JSONDecodeError):
        return False


def _write_prov(out_path: Path, chash: str, payload: dict, t0: float):
    prov = out_path.with_suffix(out_path.suffix + ".prov.json")
    doc = {
        "tool": "lcskit",
        "version": __version__,
        "config_hash": chash,
        "stage": payload["stage"],
        "settings": payload["settings"],
        "inputs": payload["inputs"],
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    prov.write_text(json.dumps(doc, indent=1) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_flowmap(args, cfg, outdir: Path) -> int:
    field, fdesc = build_field(args, cfg)
    a = float(_opt(args, cfg, "a"))
    b = float(_opt(args, cfg, "b"))
    dom = field.domain
    dspec = _opt(args, cfg, "domain")
    if dspec:
        lower, upper = _parse_pairs(dspec, field.n)
        dom = Domain(lower, upper, field.domain.periodic)
    grid = _parse_grid(_opt(args, cfg, "grid")) if _opt(args, cfg, "grid") \
        else _default_grid(dom)
    aux = _opt(args, cfg, "aux_offset")
    p = integrator_from(args, cfg)

    out = outdir / "flowmap.fmg1"
    settings = {"field": fdesc, "a": a, "b": b, "grid": list(grid),
                "domain": [list(dom.lower), list(dom.upper)],
                "aux_offset": aux, "integrator": vars(p) | {}}
    inputs = [Path(fdesc["data"])] if "data" in fdesc else []
    chash, payload = _config_hash("flowmap", settings, inputs)
    if _stage_is_fresh(out, chash, args.force):
        print(f"{out} up to date")
        return EXIT_OK
    t0 = time.perf_counter()
    fm = compute_flow_map(field, grid, a, b,
                          aux_offset=None if aux is None else float(aux),
                          p=p, domain=dom, threads=args.threads)
    save_flowmap(fm, out)
    _write_prov(out, chash, payload, t0)
    n_bad = int((fm.status != 0).sum())
    print(f"wrote {out} ({'all seeds ok' if not n_bad else f'{n_bad} failed seeds'})")
    return EXIT_OK


def cmd_cg(args, cfg, outdir: Path) -> int:
    fm_path = Path(_opt(args, cfg, "fm") or outdir / "flowmap.fmg1")
    eps_deg = float(_opt(args, cfg, "eps_deg", 1e-4))
    out = outdir / "cg.cgf1"
    chash, payload = _config_hash("cg", {"eps_deg": eps_deg}, [fm_path])
    if _stage_is_fresh(out, chash, args.force):
        print(f"{out} up to date")
        return EXIT_OK
    t0 = time.perf_counter()
    fm = load_flowmap(fm_path)
    cg = cauchy_green(fm, eps_deg=eps_deg)
    save_cgfield(cg, out)
    _write_prov(out, chash, payload, t0)

    # FTLE diagnostic alongside the tensor field
    f = ftle(cg)
    axes = cg.node_axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    rows = [",".join([f"x{i + 1}" for i in range(cg.n)] + ["ftle"])]
    flat = [m.reshape(-1) for m in mesh] + [f.reshape(-1)]
    for vals in zip(*flat):
        rows.append(",".join(f"{v:.17g}" for v in vals))
    (outdir / "ftle.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {out} and ftle.csv "
          f"({int(cg.valid.sum())}/{cg.valid.size} valid nodes)")
    return EXIT_OK


def _trace_config(args, cfg, cg):
    sing = None
    if not _opt(args, cfg, "no_sing_stop", False):
        sing = detect_singularities(
            cg, float(_opt(args, cfg, "sing_threshold", 1e-2)))
    h = _opt(args, cfg, "h")
    lmax = _opt(args, cfg, "lmax")
    rs = _opt(args, cfg, "sing_radius")
    return TraceConfig(
        h=None if h is None else float(h),
        max_length=None if lmax is None else float(lmax),
        singularities=sing,
        singularity_radius=None if rs is None else float(rs),
        tensor_interp=bool(_opt(args, cfg, "tensor_interp", False)))


def cmd_lines(args, cfg, outdir: Path) -> int:
    cg_path = Path(_opt(args, cfg, "cg") or outdir / "cg.cgf1")
    kind = {"strain": "strainline", "stretch": "stretchline"}[
        _opt(args, cfg, "kind", "stretch")]
    out = outdir / "lines.json"
    settings = {k: _opt(args, cfg, k) for k in
                ("kind", "seeds", "seed_at", "h", "lmax", "sing_radius",
                 "sing_threshold", "tensor_interp", "no_sing_stop")}
    chash, payload = _config_hash("lines", settings, [cg_path])
    if _stage_is_fresh(out, chash, args.force):
        print(f"{out} up to date")
        return EXIT_OK
    t0 = time.perf_counter()
    cg = load_cgfield(cg_path)
    config = _trace_config(args, cfg, cg)

    seed_at = getattr(args, "seed_at", None) or cfg.get("seed_at")
    if seed_at:
        seeds = np.asarray([[float(v) for v in s.split(",")]
                            for s in seed_at])
    else:
        shape = _parse_grid(_opt(args, cfg, "seeds", "30x30"))
        axes = [np.linspace(cg.lower[i] + cg.spacing[i],
                            cg.upper[i] - cg.spacing[i], shape[i])
                for i in range(2)]
        mesh = np.meshgrid(*axes, indexing="ij")
        seeds = np.stack([m.reshape(-1) for m in mesh], axis=1)

    lines = [ln for ln in trace_eigenlines(cg, seeds, kind, config)
             if ln is not None]
    for line in lines:
        line.q = relative_stretching(line, cg)
    (outdir / "lines.csv").write_text(lines_to_csv(lines))
    out.write_text(lines_to_json(
        lines, meta={"kind": kind, "cg": cg_path.name,
                     "n_seeds": int(len(seeds))}))
    _write_prov(out, chash, payload, t0)
    print(f"wrote {out} ({len(lines)} lines from {len(seeds)} seeds)")
    return EXIT_OK


def cmd_lcs(args, cfg, outdir: Path) -> int:
    cg_path = Path(_opt(args, cfg, "cg") or outdir / "cg.cgf1")
    kind = _opt(args, cfg, "kind", "attracting")
    out = outdir / "lcs.json"
    settings = {k: _opt(args, cfg, k) for k in
                ("kind", "seeds", "radius", "dedupe_tol", "sing_threshold",
                 "h", "lmax", "tensor_interp")}
    chash, payload = _config_hash("lcs", settings, [cg_path])
    if _stage_is_fresh(out, chash, args.force):
        print(f"{out} up to date")
        return EXIT_OK
    t0 = time.perf_counter()
    cg = load_cgfield(cg_path)
    radius = _opt(args, cfg, "radius")
    dedupe = _opt(args, cfg, "dedupe_tol")
    params = SelectionParams(
        seeds_shape=_parse_grid(_opt(args, cfg, "seeds", "30x30")),
        neighborhood_radius=None if radius is None else float(radius),
        dedupe_tol=None if dedupe is None else float(dedupe),
        sing_threshold=float(_opt(args, cfg, "sing_threshold", 1e-2)),
        keep_lines=True,
        threads=args.threads)
    lset = extract_lcs(cg, kind, params)
    out.write_text(lcsset_to_json(lset, meta={"cg": cg_path.name}))
    _write_svg_lcs(outdir / "lcs.svg", cg, lset, params)
    _write_prov(out, chash, payload, t0)
    print(f"wrote {out} ({len(lset.lines)} {kind} LCS)")
    return EXIT_OK


def _write_svg_lcs(path, cg, lset, params):
    fig = svgplot.Figure(1, (cg.lower[0], cg.upper[0], cg.lower[1],
                             cg.upper[1]), panel_px=640)
    panel = fig.panels[0]
    panel.frame(label=f"{lset.kind} LCS (lines colored by q)")
    qs = [c["q"] for c in lset.candidates if c["q"] is not None]
    qlo, qhi = (min(qs), max(qs)) if qs else (0.0, 1.0)
    span = (qhi - qlo) or 1.0
    if lset.candidate_lines is not None:
        for cand, pts in zip(lset.candidates, lset.candidate_lines):
            if pts is None or cand["q"] is None:
                continue
            panel.polyline(pts, color=svgplot.colormap(
                (cand["q"] - qlo) / span), width=0.7, opacity=0.75)
    for line in lset.lines:
        panel.polyline(line.points, color="#d62728", width=2.4)
    sing = detect_singularities(cg, params.sing_threshold)
    if len(sing):
        panel.markers(sing.points, color="#ffffff", r=3.0, stroke="#000000")
    fig.save(path)


def cmd_advect(args, cfg, outdir: Path) -> int:
    if _opt(args, cfg, "demo"):
        return cmd_demo(args, cfg, outdir, name=_opt(args, cfg, "demo"))
    lines_path = Path(_opt(args, cfg, "lines") or outdir / "lines.json")
    field, fdesc = build_field(args, cfg)
    a = float(_opt(args, cfg, "a"))
    times = [float(v) for v in str(_opt(args, cfg, "times")).split(",")]
    refine = not _opt(args, cfg, "no_refine", False)
    p = integrator_from(args, cfg)
    out = outdir / "advected.json"
    settings = {"field": fdesc, "a": a, "times": times, "refine": refine}
    chash, payload = _config_hash("advect", settings, [lines_path])
    if _stage_is_fresh(out, chash, args.force):
        print(f"{out} up to date")
        return EXIT_OK
    t0 = time.perf_counter()
    doc = json.loads(lines_path.read_text())
    results = []
    for entry in doc["lines"]:
        pts = np.asarray(entry["vertices"], dtype=float)
        for t1 in times:
            curve = advect_curve(pts, field, a, t1, p, refine=refine,
                                 threads=args.threads)
            results.append({
                "line_id": entry.get("id"),
                "t": t1,
                "saturated": curve.saturated,
                "n_escaped": int((~curve.ok).sum()),
                "vertices": curve.points[curve.ok].tolist(),
            })
    out.write_text(json.dumps({"meta": settings, "curves": results},
                              indent=1))
    _write_prov(out, chash, payload, t0)
    print(f"wrote {out} ({len(results)} advected curves)")
    return EXIT_OK


_HARD_CHECKS = ("theorem1", "lemma1", "appendixb")


def cmd_verify(args, cfg, outdir: Path) -> int:
    field, fdesc = build_field(args, cfg)
    a = float(_opt(args, cfg, "a"))
    b = float(_opt(args, cfg, "b"))
    which = _opt(args, cfg, "check", "all")
    names = (list(_HARD_CHECKS) + ["reciprocity", "instability"]
             if which == "all" else [which])
    p = integrator_from(args, cfg)
    dom, bdom = _flow_domains(field)
    grid = _parse_grid(_opt(args, cfg, "grid")) if _opt(args, cfg, "grid") \
        else _default_grid(dom)
    n_lines = int(_opt(args, cfg, "n_lines", 20))
    n_seeds = int(_opt(args, cfg, "n_seeds", 50))
    seed = args.seed

    reports = []
    for name in names:
        if name == "theorem1":
            if field.n != 2:
                raise ValidationError("theorem1 check is 2-D only")
            reports.append(verify_theorem1(
                field, a, b, n_lines=n_lines, grid_shape=grid, domain=dom,
                backward_domain=bdom, p=p, seed=seed, threads=args.threads))
        elif name == "lemma1":
            ldom = Domain((-2.0, -2.0), (2.0, 2.0), (False, False)) \
                if field.name == "duffing" else field.domain
            reports.append(verify_lemma1(field, a, b, n_seeds=n_seeds,
                                         domain=ldom, seed=seed,
                                         threads=args.threads))
        elif name == "reciprocity":
            if field.n != 2:
                raise ValidationError("reciprocity check is 2-D only")
            reports.append(verify_reciprocity_interpolated(
                field, a, b, n_seeds=max(n_seeds, 100), grid_shape=grid,
                domain=dom, backward_domain=bdom, seed=seed,
                threads=args.threads))
        elif name == "appendixb":
            if field.n != 2:
                raise ValidationError("appendixb check is 2-D only")
            reports.append(verify_appendix_b(
                field, a, b, n_lines=n_lines, grid_shape=grid, domain=dom,
                p=p, seed=seed, threads=args.threads))
        elif name == "instability":
            if field.n != 2:
                raise ValidationError("instability demo is 2-D only")
            fm = compute_flow_map(field, grid, a, b, aux_offset=1e-6, p=p,
                                  domain=dom, threads=args.threads)
            cg = cauchy_green(fm)
            lset = extract_lcs(cg, "attracting",
                               SelectionParams(threads=args.threads))
            rep = backward_instability_demo(field, a, b,
                                            lset.lines[0].points, p=p,
                                            threads=args.threads)
            rep.pop("advected", None)
            rep.pop("backward", None)
            reports.append(rep)
        else:
            raise ValidationError(f"unknown check {name!r}")

    hard = [r for r in reports if r["check"] in _HARD_CHECKS]
    ok = all(r["pass"] for r in hard)
    doc = {"flow": fdesc, "a": a, "b": b, "seed": seed,
           "checks": reports, "pass": bool(ok)}
    out = outdir / "verify.json"
    out.write_text(json.dumps(doc, indent=1))
    for r in reports:
        verdict = r.get("pass")
        if r["check"] == "instability":
            verdict = f"reproduced={r['reproduced']} ratio={r['ratio']:.1f}"
        elif r["check"] == "reciprocity":
            verdict = (f"median_err={r['median_err']:.2e} "
                       f"max_err={r['max_err']:.2e}")
        print(f"  {r['check']}: {verdict}")
    print(f"wrote {out}")
    return EXIT_OK if ok else EXIT_VERIFY_FAIL


# ---------------------------------------------------------------------------
# demos
# ---------------------------------------------------------------------------

def _duffing_h0_branch(sign, n=1200):
    x1max = 2.0 * math.sqrt(2.0)
    x1 = np.linspace(-x1max, x1max, n)
    x2 = sign * x1 * np.sqrt(np.maximum(4.0 - 0.5 * x1 * x1, 0.0))
    return np.stack([x1, x2], axis=1)


def _demo_duffing_lines(args, p, threads):
    field = make_builtin("duffing")
    dom = Domain((-3.0, -3.0), (3.0, 3.0), (False, False))
    fm = compute_flow_map(field, (181, 181), 0.0, 2.0, aux_offset=1e-6, p=p,
                          domain=dom, threads=threads)
    cg = cauchy_green(fm)
    config = TraceConfig(max_length=6.0)
    strain = trace_eigenline(cg, (0.0, 0.0), "strainline", config)
    stretch = trace_eigenline(cg, (0.0, 0.0), "stretchline", config)
    return field, strain, stretch


def cmd_demo(args, cfg, outdir: Path, name=None) -> int:
    name = name or _opt(args, cfg, "name")
    p = integrator_from(args, cfg)
    t0 = time.perf_counter()
    if name == "duffing-manifolds":
        _, strain, stretch = _demo_duffing_lines(args, p, args.threads)
        fig = svgplot.Figure(1, (-3, 3, -3, 3), panel_px=520)
        panel = fig.panels[0]
        panel.frame(label="duffing: strainline (red), stretchline (blue), "
                    "homoclinic orbit (gray)")
        for sign in (-1.0, 1.0):
            panel.polyline(_duffing_h0_branch(sign), color="#999999",
                           width=1.0)
        panel.polyline(strain.points, color="#d62728", width=2.0)
        panel.polyline(stretch.points, color="#1f77b4", width=2.0)
        fig.save(outdir / "duffing-manifolds.svg")
        doc = {"strainline": strain.points.tolist(),
               "stretchline": stretch.points.tolist()}
        (outdir / "duffing-manifolds.json").write_text(
            json.dumps(doc, indent=1))
    elif name == "duffing-blobs":
        field, _, stretch = _demo_duffing_lines(args, p, args.threads)
        radii = (1e-3, 5e-3, 1e-2)
        times = (0.0, 0.1, 0.2, 0.4)
        rep = tracer_blob_demo(field, stretch, (0.0, 0.0), radii,
                               times[1:], p=p, threads=args.threads)
        fig = svgplot.Figure(4, (-0.12, 0.12, -0.12, 0.12), panel_px=260)
        colors = ("#1f77b4", "#d6b800", "#d62728")
        panel = fig.panels[0]
        panel.frame(label="t=0")
        panel.polyline(stretch.points, color="#bb00bb", width=1.6)
        from .lcs import disk_points
        for r, color in zip(radii, colors):
            panel.markers(disk_points((0, 0), r), color=color, r=1.2)
        for i, entry in enumerate(rep["entries"], start=1):
            panel = fig.panels[i]
            panel.frame(label=f"t={entry['t']:g}")
            panel.polyline(entry["line"], color="#bb00bb", width=1.6)
            for blob, color in zip(entry["blobs"], colors):
                panel.markers(blob["points"], color=color, r=1.2)
        fig.save(outdir / "duffing-blobs.svg")
        for e in rep["entries"]:
            e["line"] = e["line"].tolist()
            for blob in e["blobs"]:
                blob["points"] = blob["points"].tolist()
        (outdir / "duffing-blobs.json").write_text(json.dumps(rep, indent=1))
    elif name == "abc-plane":
        field = make_builtin("abc")
        rep = stretch_plane_demo(field, (math.pi, math.pi, math.pi), 0.0, 4.0,
                                 radius=0.1, p=p, threads=args.threads)
        sph = rep.pop("sphere_advected")
        pla = rep.pop("plane_advected")
        fig = svgplot.Figure(2, (0, 2 * math.pi, 0, 2 * math.pi),
                             panel_px=320)
        for k, (i, j) in enumerate(((0, 1), (0, 2))):
            panel = fig.panels[k]
            panel.frame(label=f"advected sphere/plane (x{i + 1}, x{j + 1})")
            wrap = lambda v: np.mod(v, 2 * math.pi)
            panel.markers(np.stack([wrap(sph[:, i]), wrap(sph[:, j])], 1),
                          color="#1f77b4", r=1.2)
            panel.markers(np.stack([wrap(pla[:, i]), wrap(pla[:, j])], 1),
                          color="#d62728", r=1.5)
        fig.save(outdir / "abc-plane.svg")
        rep["sphere_advected"] = sph.tolist()
        rep["plane_advected"] = pla.tolist()
        (outdir / "abc-plane.json").write_text(json.dumps(rep, indent=1))
    elif name == "backward-instability":
        field = make_builtin("double-gyre")
        dom = field.domain
        fm = compute_flow_map(field, (201, 101), 0.0, 10.0, aux_offset=1e-6,
                              p=p, threads=args.threads)
        cg = cauchy_green(fm)
        lset = extract_lcs(cg, "attracting",
                           SelectionParams(threads=args.threads))
        rep = backward_instability_demo(field, 0.0, 10.0,
                                        lset.lines[0].points, p=p,
                                        threads=args.threads)
        fig = svgplot.Figure(1, (0, 2, 0, 1), panel_px=640)
        panel = fig.panels[0]
        panel.frame(label=f"stretchline (blue) vs refinement-free backward "
                    f"advection (red); ratio={rep['ratio']:.0f}")
        panel.polyline(lset.lines[0].points, color="#1f77b4", width=2.0)
        panel.polyline(rep.pop("backward"), color="#d62728", width=1.2)
        rep.pop("advected")
        fig.save(outdir / "backward-instability.svg")
        (outdir / "backward-instability.json").write_text(
            json.dumps(rep, indent=1))
    else:
        raise ValidationError(f"unknown demo {name!r}")
    print(f"demo {name}: wrote {outdir} ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_flow_opts(sp):
    sp.add_argument("--flow", help="builtin flow: duffing, abc, double-gyre")
    sp.add_argument("--data", help="VGF1 gridded-velocity file")
    sp.add_argument("--param", action="append",
                    help="flow parameter key=value (repeatable)")
    sp.add_argument("--a", type=float, help="interval start time")
    sp.add_argument("--b", type=float, help="interval end time")
    sp.add_argument("--method", choices=("rk45_adaptive", "rk4_fixed"))
    sp.add_argument("--step", type=float, help="fixed-step size")
    sp.add_argument("--rtol", type=float, help="adaptive relative tolerance")
    sp.add_argument("--atol", type=float, help="adaptive absolute tolerance")
    sp.add_argument("--max-steps", dest="max_steps", type=int)


def make_parser():
    ap = argparse.ArgumentParser(
        prog="lcskit",
        description="Attracting and repelling LCS from one forward "
        "flow-map computation")
    ap.add_argument("--config", help="JSON config file (flags win)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--force", action="store_true",
                    help="recompute even when the stage hash matches")
    ap.add_argument("--seed", type=int, default=0,
                    help="RNG seed for randomized sampling")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("flowmap", help="integrate a seed grid")
    _add_flow_opts(sp)
    sp.add_argument("--grid", help="nodes per axis, e.g. 201x101")
    sp.add_argument("--domain", help="lo0,hi0,lo1,hi1[,lo2,hi2]")
    sp.add_argument("--aux-offset", dest="aux_offset", type=float)
    sp.set_defaults(run=cmd_flowmap)

    sp = sub.add_parser("cg", help="Cauchy-Green tensor field from a flowmap")
    sp.add_argument("--fm", help="FMG1 input (default: OUT/flowmap.fmg1)")
    sp.add_argument("--eps-deg", dest="eps_deg", type=float)
    sp.set_defaults(run=cmd_cg)

    sp = sub.add_parser("lines", help="trace strainlines/stretchlines")
    sp.add_argument("--cg", help="CGF1 input (default: OUT/cg.cgf1)")
    sp.add_argument("--kind", choices=("strain", "stretch"))
    sp.add_argument("--seeds", help="seed grid, e.g. 30x30")
    sp.add_argument("--seed-at", dest="seed_at", action="append",
                    help="explicit seed 'x,y' (repeatable)")
    sp.add_argument("--h", type=float, help="arclength step")
    sp.add_argument("--lmax", type=float, help="max line length")
    sp.add_argument("--sing-radius", dest="sing_radius", type=float)
    sp.add_argument("--sing-threshold", dest="sing_threshold", type=float)
    sp.add_argument("--no-sing-stop", dest="no_sing_stop",
                    action="store_true")
    sp.add_argument("--tensor-interp", dest="tensor_interp",
                    action="store_true")
    sp.set_defaults(run=cmd_lines)

    sp = sub.add_parser("lcs", help="select locally most stretching lines")
    sp.add_argument("--cg", help="CGF1 input (default: OUT/cg.cgf1)")
    sp.add_argument("--kind", choices=("attracting", "repelling"))
    sp.add_argument("--seeds", help="seed grid, e.g. 30x30")
    sp.add_argument("--radius", type=float, help="neighborhood radius")
    sp.add_argument("--dedupe-tol", dest="dedupe_tol", type=float)
    sp.add_argument("--sing-threshold", dest="sing_threshold", type=float)
    sp.add_argument("--h", type=float)
    sp.add_argument("--lmax", type=float)
    sp.add_argument("--tensor-interp", dest="tensor_interp",
                    action="store_true")
    sp.set_defaults(run=cmd_lcs)

    sp = sub.add_parser("advect", help="advect polylines (or run a demo)")
    _add_flow_opts(sp)
    sp.add_argument("--lines", help="lines.json input")
    sp.add_argument("--times", help="comma-separated target times")
    sp.add_argument("--no-refine", dest="no_refine", action="store_true")
    sp.add_argument("--demo", help="named demo, e.g. duffing-blobs")
    sp.set_defaults(run=cmd_advect)

    sp = sub.add_parser("verify", help="run numerical checks of the theory")
    _add_flow_opts(sp)
    sp.add_argument("--check", choices=("theorem1", "lemma1", "reciprocity",
                                        "appendixb", "instability", "all"))
    sp.add_argument("--grid")
    sp.add_argument("--n-lines", dest="n_lines", type=int)
    sp.add_argument("--n-seeds", dest="n_seeds", type=int)
    sp.set_defaults(run=cmd_verify)

    sp = sub.add_parser("demo", help="run a named demonstration")
    _add_flow_opts(sp)
    sp.add_argument("--name", required=True,
                    choices=("duffing-manifolds", "duffing-blobs",
                             "abc-plane", "backward-instability"))
    sp.set_defaults(run=cmd_demo)
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_USAGE
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(outdir / ".lcskit.lock")
    try:
        with lock.acquire(timeout=0.5):
            return args.run(args, cfg, outdir)
    except Timeout:
        print(f"error: output directory {outdir} is locked by another "
              "lcskit run", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, FormatError, OutOfDomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LcsKitError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
