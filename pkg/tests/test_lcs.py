import numpy as np
import pytest

import lcskit
from lcskit import (DegenerateRegionError, Domain, EmptyFieldError,
                    IntegratorParams)
from lcskit.cgtensor import cauchy_green_at_points
from lcskit.eigenlines import TraceConfig, trace_eigenline
from lcskit.geometry import hausdorff
from lcskit.lcs import (SelectionParams, advect_curve, advect_points,
                        backward_instability_demo, extract_lcs,
                        local_stretch_plane, material_tangents,
                        stretch_plane_demo, tracer_blob_demo)

from oracles import (ball_clip_hausdorff, duffing_h0_branch, expm_ss,
                     locally_extremal_bruteforce)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def test_saddle_selection_collapses_to_one(saddle_cg):
    lset = extract_lcs(saddle_cg, "attracting",
                       SelectionParams(seeds_shape=(8, 8)))
    assert len(lset.lines) == 1
    line = lset.lines[0]
    assert np.abs(np.diff(line.points[:, 1])).max() < 1e-9  # horizontal
    assert line.q == pytest.approx(np.e, abs=1e-6)


def test_selection_members_locally_extremal(dgyre_cg):
    lset = extract_lcs(dgyre_cg, "attracting",
                       SelectionParams(seeds_shape=(20, 20)))
    assert lset.lines
    seeds = np.asarray([c["seed"] for c in lset.candidates])
    values = np.asarray([c["q"] if c["q"] is not None else np.nan
                         for c in lset.candidates])
    ok_idx = np.flatnonzero(~np.isnan(values))
    sub = {int(g): k for k, g in enumerate(ok_idx)}
    tie = 1e-9 * np.nanmedian(np.abs(values))
    for i, cand in enumerate(lset.candidates):
        if cand["status"] != "selected":
            continue
        assert locally_extremal_bruteforce(
            values[ok_idx], seeds[ok_idx], sub[i],
            lset.neighborhood_radius, maximize=True, tie_abs=tie)


def test_selection_dedupes(dgyre_cg):
    lset = extract_lcs(dgyre_cg, "attracting",
                       SelectionParams(seeds_shape=(15, 15)))
    for i in range(len(lset.lines)):
        for j in range(i + 1, len(lset.lines)):
            assert hausdorff(lset.lines[i].points,
                             lset.lines[j].points) >= lset.dedupe_tol


def test_repelling_selection_minimizes_compression(dgyre_cg):
    lset = extract_lcs(dgyre_cg, "repelling",
                       SelectionParams(seeds_shape=(12, 12)))
    assert lset.lines
    for line in lset.lines:
        assert line.kind == "strainline"
        assert line.q <= 1.0


def test_duffing_repelling_contains_stable_manifold(duffing_cg):
    lset = extract_lcs(duffing_cg, "repelling",
                       SelectionParams(seeds_shape=(30, 30)))
    stable = duffing_h0_branch(-1.0)
    best = min(ball_clip_hausdorff(line.points, stable, (0.0, 0.0), 1.0)
               for line in lset.lines
               if np.linalg.norm(line.points, axis=1).min() < 0.9)
    assert best < 0.05


def test_empty_field_error():
    f = lcskit.zero_field(2)
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    fm = lcskit.compute_flow_map(f, (8, 8), 0.0, 1.0, aux_offset=1e-4,
                                 domain=dom)
    cg = lcskit.cauchy_green(fm)
    with pytest.raises(EmptyFieldError):
        extract_lcs(cg, "attracting", SelectionParams(seeds_shape=(5, 5)))


# ---------------------------------------------------------------------------
# advection
# ---------------------------------------------------------------------------

def test_advect_identity():
    f = lcskit.zero_field(2)
    pts = np.stack([np.linspace(0, 1, 12), np.linspace(0, 0.5, 12)], axis=1)
    curve = advect_curve(pts, f, 0.0, 2.0)
    assert np.array_equal(curve.points, curve.sources)
    assert curve.ok.all() and not curve.saturated


def test_advect_rigid_rotation():
    f = lcskit.linear_field([[0.0, -1.0], [1.0, 0.0]])
    pts = np.stack([np.linspace(0.1, 0.9, 15), np.zeros(15)], axis=1)
    curve = advect_curve(pts, f, 0.0, np.pi / 2, IntegratorParams(
        rel_tol=1e-11, abs_tol=1e-13))
    want = np.stack([-pts[:, 1], pts[:, 0]], axis=1)
    keep = [np.argmin(np.linalg.norm(curve.sources - p, axis=1))
            for p in pts]
    assert np.abs(curve.points[keep] - want).max() < 1e-6


def test_advect_refinement_consistency(dgyre_field):
    p = IntegratorParams(rel_tol=1e-10, abs_tol=1e-12)
    pts = np.stack([np.linspace(0.3, 1.7, 60), np.full(60, 0.4)], axis=1)
    c1 = advect_curve(pts, dgyre_field, 0.0, 5.0, p, refine_factor=1.5)
    c2 = advect_curve(pts, dgyre_field, 0.0, 5.0, p, refine_factor=3.0)
    assert not c1.saturated and not c2.saturated
    # both vertex sets are exact material points of the same curve; they can
    # only differ by the polygonal shortcut of the coarser resolution
    seg = np.linalg.norm(np.diff(c2.points, axis=0), axis=1).max()
    assert hausdorff(c1.points, c2.points) < 0.25 * seg


def test_advect_saturation_flag(dgyre_field):
    pts = np.stack([np.linspace(0.3, 1.7, 20), np.full(20, 0.4)], axis=1)
    curve = advect_curve(pts, dgyre_field, 0.0, 10.0, max_depth=1,
                         refine_factor=1.2)
    assert curve.saturated


def test_advect_escape_mask():
    f = lcskit.linear_field([[1.0, 0.0], [0.0, 1.0]],
                            Domain((-2.0, -2.0), (2.0, 2.0), (False, False)))
    pts = np.stack([np.linspace(0.1, 1.5, 10), np.zeros(10)], axis=1)
    curve = advect_curve(pts, f, 0.0, 1.5, refine=False)
    assert (~curve.ok).any() and curve.ok.any()


def test_material_tangents_match_expm():
    rng = np.random.default_rng(6)
    M = rng.uniform(-1, 1, (2, 2))
    f = lcskit.linear_field(M)
    x = np.array([[0.2, -0.1]])
    d = np.array([[0.6, 0.8]])
    tb, ok = material_tangents(f, x, d, 0.0, 1.0,
                               p=IntegratorParams(rel_tol=1e-11,
                                                  abs_tol=1e-13))
    want = expm_ss(M) @ d[0]
    want /= np.linalg.norm(want)
    assert ok.all()
    assert np.abs(tb[0] - want).max() < 1e-7


# ---------------------------------------------------------------------------
# verification harnesses
# ---------------------------------------------------------------------------

def test_theorem1_linear_saddle_exact():
    sad = lcskit.linear_field([[1.0, 0.0], [0.0, -1.0]])
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    bdom = Domain((-3.0, -3.0), (3.0, 3.0), (False, False))
    rep = lcskit.verify_theorem1(sad, 0.0, 1.0, n_lines=5,
                                 grid_shape=(41, 41), domain=dom,
                                 backward_domain=bdom, seed=1)
    assert rep["pass"]
    assert rep["strain_vs_xi1b"]["pass_fraction"] == 1.0
    assert rep["strain_vs_xi1b"]["max_abs_cos"] < 1e-7
    assert rep["stretch_vs_xinb"]["max_abs_cos"] < 1e-7


def test_theorem1_identity_flow_vacuous():
    f = lcskit.zero_field(2)
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    rep = lcskit.verify_theorem1(f, 0.0, 1.0, n_lines=3, grid_shape=(21, 21),
                                 domain=dom, seed=0)
    # wholly degenerate: no traceable lines, nothing checked, vacuous pass
    assert rep["strain_vs_xi1b"]["n_checked"] == 0
    assert rep.get("vacuous") and rep["pass"]


def test_lemma1_identity_flow_exact():
    f = lcskit.zero_field(2)
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    rep = lcskit.verify_lemma1(f, 0.0, 1.0, n_seeds=10, domain=dom, seed=0)
    assert rep["pass"]
    # floor set by rounding of the x +/- offset stencil, not integration
    assert rep["max_err_high"] < 1e-9


def test_lemma1_linear_saddle():
    sad = lcskit.linear_field([[1.0, 0.0], [0.0, -1.0]])
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    rep = lcskit.verify_lemma1(sad, 0.0, 1.0, n_seeds=10, domain=dom, seed=0)
    assert rep["pass"]
    assert max(rep["max_err_high"], rep["max_err_low"]) < 1e-8


def test_lemma1_abc_quick():
    rep = lcskit.verify_lemma1(lcskit.make_abc(), 0.0, 4.0, n_seeds=10,
                               seed=0)
    assert rep["pass"]
    assert max(rep["max_err_high"], rep["max_err_low"]) < 1e-3


def test_backward_instability_reproduced(dgyre_field, dgyre_cg):
    lset = extract_lcs(dgyre_cg, "attracting",
                       SelectionParams(seeds_shape=(15, 15)))
    rep = backward_instability_demo(dgyre_field, 0.0, 10.0,
                                    lset.lines[0].points)
    assert rep["reproduced"]
    assert rep["ratio"] > 10.0


# ---------------------------------------------------------------------------
# blobs and stretch-planes
# ---------------------------------------------------------------------------

def test_tracer_blob_alignment(duffing_field, duffing_cg):
    line = trace_eigenline(duffing_cg, (0.0, 0.0), "stretchline",
                           TraceConfig(max_length=6.0))
    rep = tracer_blob_demo(duffing_field, line, (0.0, 0.0),
                           (1e-3, 5e-3, 1e-2), (0.4,))
    for blob in rep["entries"][0]["blobs"]:
        assert blob["angle_deg"] < 5.0


def test_local_stretch_plane_3d_saddle():
    f = lcskit.linear_field(np.diag([1.0, 1.0, -2.0]))
    pcg = cauchy_green_at_points(f, np.array([[0.1, 0.1, 0.1]]), 0.0, 1.0,
                                 aux_offset=1e-6)
    plane = local_stretch_plane(pcg, 0, half_extent=0.2)
    assert np.allclose(np.abs(plane.normal), (0.0, 0.0, 1.0), atol=1e-6)
    grid = plane.grid(5)
    assert grid.shape == (25, 3)
    assert np.abs(grid[:, 2] - 0.1).max() < 1e-9


def test_local_stretch_plane_isotropic_degenerate():
    f = lcskit.linear_field(np.eye(3))
    pcg = cauchy_green_at_points(f, np.array([[0.1, 0.2, 0.3]]), 0.0, 1.0,
                                 aux_offset=1e-6)
    with pytest.raises(DegenerateRegionError):
        local_stretch_plane(pcg, 0)


def test_abc_plane_residual_and_alignment():
    f = lcskit.make_abc()
    rep = stretch_plane_demo(f, (np.pi, np.pi, np.pi), 0.0, 4.0, radius=0.1)
    assert rep["eigen_residual"] < 1e-8
    assert rep["angle_deg"] < 15.0
