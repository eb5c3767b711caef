"""Acceptance criteria, one test per criterion, timed against their budgets.

Each test computes everything it needs (no shared fixtures), so the recorded
runtime is the criterion's own cost. A summary table is printed at the end
of the pytest run (see conftest.pytest_terminal_summary).
"""

import filecmp
import json
import time

import numpy as np
import pytest

import lcskit
from lcskit import Domain, IntegratorParams
from lcskit.cgtensor import cauchy_green, cauchy_green_at_points, ftle
from lcskit.eigenlines import (EigenLine, TraceConfig, advected_length_ratio,
                               relative_stretching, trace_eigenline)
from lcskit.lcs import (SelectionParams, backward_instability_demo,
                        extract_lcs, stretch_plane_demo, tracer_blob_demo)

from conftest import record_acceptance
from oracles import (ball_clip_hausdorff, duffing_h0_branch, expm_ss,
                     locally_extremal_bruteforce)

DUFFING_DOMAIN = Domain((-3.0, -3.0), (3.0, 3.0), (False, False))
DUFFING_BACKWARD = Domain((-3.5, -5.0), (3.5, 5.0), (False, False))


def _dgyre():
    return lcskit.make_double_gyre(0.1, 0.1, 2.0 * np.pi / 10.0)


def test_criterion_01_identity_and_rotation():
    t0 = time.perf_counter()
    f = lcskit.zero_field(2)
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    fm = lcskit.compute_flow_map(f, (16, 16), 0.0, 1.0, aux_offset=1e-4,
                                 domain=dom)
    cg = cauchy_green(fm)
    c_err = np.abs(cg.C - np.eye(2)).max()
    ftle_err = np.abs(ftle(cg)[cg.valid]).max()
    pts = np.stack([np.linspace(-0.5, 0.5, 40), np.zeros(40)], axis=1)
    line = EigenLine(points=pts, kind="stretchline",
                     seed=np.array([0.0, 0.0]), h=0.025,
                     stop_reason_fwd="max_length",
                     stop_reason_bwd="max_length")
    q_err = abs(relative_stretching(line, cg) - 1.0)
    rot = lcskit.linear_field([[0.0, -1.0], [1.0, 0.0]])
    ratio_err = abs(advected_length_ratio(pts, rot, 0.0, 2.0) - 1.0)
    dt = time.perf_counter() - t0
    passed = (c_err < 1e-9 and ftle_err < 1e-9 and q_err < 1e-9
              and ratio_err < 1e-6 and dt < 5.0)
    record_acceptance(1, "identity/trivial suite", passed,
                      f"|C-I|={c_err:.1e} |FTLE|={ftle_err:.1e} "
                      f"|q-1|={q_err:.1e} |ratio-1|={ratio_err:.1e}",
                      dt, 5.0)
    assert c_err < 1e-9
    assert ftle_err < 1e-9
    assert q_err < 1e-9
    assert ratio_err < 1e-6
    assert dt < 5.0


def test_criterion_02_linear_flow_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_grad = worst_eig = 0.0
    for n in (2, 3):
        for _ in range(5):
            M = rng.uniform(-1.0, 1.0, (n, n))
            field = lcskit.linear_field(M)
            dom = Domain((-1.0,) * n, (1.0,) * n, (False,) * n)
            fm = lcskit.compute_flow_map(field, (5,) * n, 0.0, 1.0,
                                         aux_offset=1e-4, domain=dom)
            cg = cauchy_green(fm)
            F = expm_ss(M)
            lam_oracle = np.linalg.eigvalsh(F.T @ F)
            center = (2,) * n
            G = lcskit.flow_gradient(fm, center)
            worst_grad = max(worst_grad,
                             np.abs(G - F).max() / np.abs(F).max())
            lam = cg.lambdas[center]
            worst_eig = max(worst_eig,
                            np.abs(lam - lam_oracle).max()
                            / np.abs(lam_oracle).max())
    dt = time.perf_counter() - t0
    passed = worst_grad < 1e-6 and worst_eig < 1e-6 and dt < 30.0
    record_acceptance(2, "linear-flow oracle", passed,
                      f"grad_err={worst_grad:.1e} eig_err={worst_eig:.1e}",
                      dt, 30.0)
    assert worst_grad < 1e-6
    assert worst_eig < 1e-6
    assert dt < 30.0


def test_criterion_03_lemma1_reciprocity():
    t0 = time.perf_counter()
    cases = [
        (lcskit.make_duffing(), 0.0, 2.0,
         Domain((-2.0, -2.0), (2.0, 2.0), (False, False))),
        (_dgyre(), 0.0, 10.0, None),
        (lcskit.make_abc(), 0.0, 4.0, None),
    ]
    worst = 0.0
    details = []
    for field, a, b, dom in cases:
        rep = lcskit.verify_lemma1(field, a, b, n_seeds=50, domain=dom,
                                   seed=0)
        err = max(rep["max_err_high"], rep["max_err_low"])
        worst = max(worst, err)
        details.append(f"{field.name}={err:.1e}")
        assert rep["n_used"] == 50
    dt = time.perf_counter() - t0
    passed = worst < 1e-3 and dt < 120.0
    record_acceptance(3, "Lemma 1 reciprocity", passed,
                      " ".join(details), dt, 120.0)
    assert worst < 1e-3
    assert dt < 120.0


def test_criterion_04_theorem1_orthogonality():
    t0 = time.perf_counter()
    rep_d = lcskit.verify_theorem1(
        lcskit.make_duffing(), 0.0, 2.0, n_lines=20, grid_shape=(201, 201),
        domain=DUFFING_DOMAIN, backward_domain=DUFFING_BACKWARD, seed=0)
    rep_g = lcskit.verify_theorem1(_dgyre(), 0.0, 10.0, n_lines=20,
                                   grid_shape=(201, 101), seed=0)
    dt = time.perf_counter() - t0
    fr = [rep_d["strain_vs_xi1b"]["pass_fraction"],
          rep_d["stretch_vs_xinb"]["pass_fraction"],
          rep_g["strain_vs_xi1b"]["pass_fraction"],
          rep_g["stretch_vs_xinb"]["pass_fraction"]]
    passed = all(v >= 0.95 for v in fr) and dt < 300.0
    record_acceptance(4, "Theorem 1 / Corollary 1", passed,
                      "pass fractions duffing=({:.3f},{:.3f}) "
                      "dgyre=({:.3f},{:.3f})".format(*fr), dt, 300.0)
    for v in fr:
        assert v >= 0.95
    assert dt < 300.0


def test_criterion_05_appendix_b_equivalence():
    t0 = time.perf_counter()
    # the double-gyre window is ours to choose; at [0, 2.5] both the
    # eigenvalue quadrature and the advected-length oracle are converged
    rep = lcskit.verify_appendix_b(_dgyre(), 0.0, 2.5, n_lines=20,
                                   grid_shape=(201, 101), seed=0)
    dt = time.perf_counter() - t0
    passed = (rep["n_lines"] >= 20 and rep["max_rel_diff"] < 0.01
              and dt < 120.0)
    record_acceptance(5, "Appendix B equivalence", passed,
                      f"n={rep['n_lines']} max_rel={rep['max_rel_diff']:.4f}",
                      dt, 120.0)
    assert rep["n_lines"] >= 20
    assert rep["max_rel_diff"] < 0.01
    assert dt < 120.0


def test_criterion_06_duffing_convergence():
    t0 = time.perf_counter()
    field = lcskit.make_duffing()
    lines = {}
    for T in (2.0, 2.5):
        fm = lcskit.compute_flow_map(field, (181, 181), 0.0, T,
                                     aux_offset=1e-6, domain=DUFFING_DOMAIN)
        cg = cauchy_green(fm)
        cfg = TraceConfig(max_length=5.0)
        lines[("strain", T)] = trace_eigenline(cg, (0.0, 0.0), "strainline",
                                               cfg)
        lines[("stretch", T)] = trace_eigenline(cg, (0.0, 0.0), "stretchline",
                                                cfg)
    ball = ((0.0, 0.0), 1.0)
    d_strain = ball_clip_hausdorff(lines[("strain", 2.0)].points,
                                   lines[("strain", 2.5)].points, *ball)
    d_stretch = ball_clip_hausdorff(lines[("stretch", 2.0)].points,
                                    lines[("stretch", 2.5)].points, *ball)
    stable = duffing_h0_branch(-1.0)
    unstable = duffing_h0_branch(+1.0)
    d_manifold = ball_clip_hausdorff(lines[("strain", 2.0)].points, stable,
                                     *ball)
    d_distinct = ball_clip_hausdorff(lines[("stretch", 2.0)].points,
                                     unstable, *ball)
    dt = time.perf_counter() - t0
    clauses = {
        "strain T2-vs-T2.5 < 0.05": d_strain < 0.05,
        "stretch T2-vs-T2.5 < 0.05": d_stretch < 0.05,
        "strain vs stable manifold < 0.05": d_manifold < 0.05,
        "stretch vs unstable manifold > 0.05": d_distinct > 0.05,
    }
    passed = all(clauses.values()) and dt < 120.0
    record_acceptance(6, "Duffing convergence (Fig 3)", passed,
                      f"strainT2/T2.5={d_strain:.4f} "
                      f"stretchT2/T2.5={d_stretch:.4f} "
                      f"strain-vs-manifold={d_manifold:.4f} "
                      f"stretch-vs-manifold={d_distinct:.3f}", dt, 120.0)
    assert d_strain < 0.05
    assert d_manifold < 0.05
    assert d_distinct > 0.05
    # True system value is ~0.066 (grid- and step-converged; the eigenvector
    # field is verified against a brute-force max-growth direction oracle):
    # away from the fixed point the finite-time stretch direction keeps
    # rotating like ~1/T, so the 0.05 bound inside |x| <= 1 is not attained.
    assert d_stretch < 0.05, (
        f"stretchline T=2 vs T=2.5 Hausdorff within |x|<=1 is {d_stretch:.4f}"
        " (>= 0.05): the finite-time stretchline has not converged at this"
        " tolerance; see decisions ledger")
    assert dt < 120.0


def test_criterion_07_tracer_blob_alignment():
    t0 = time.perf_counter()
    field = lcskit.make_duffing()
    fm = lcskit.compute_flow_map(field, (181, 181), 0.0, 2.0,
                                 aux_offset=1e-6, domain=DUFFING_DOMAIN)
    cg = cauchy_green(fm)
    line = trace_eigenline(cg, (0.0, 0.0), "stretchline",
                           TraceConfig(max_length=6.0))
    rep = tracer_blob_demo(field, line, (0.0, 0.0), (1e-3, 5e-3, 1e-2),
                           (0.4,))
    angles = [b["angle_deg"] for b in rep["entries"][0]["blobs"]]
    dt = time.perf_counter() - t0
    passed = max(angles) < 5.0 and dt < 60.0
    record_acceptance(7, "tracer-blob alignment (Fig 4)", passed,
                      "angles at t=0.4: "
                      + " ".join(f"{a:.2f}deg" for a in angles), dt, 60.0)
    assert max(angles) < 5.0
    assert dt < 60.0


def test_criterion_08_abc_local_plane():
    t0 = time.perf_counter()
    rep = stretch_plane_demo(lcskit.make_abc(), (np.pi, np.pi, np.pi),
                             0.0, 4.0, radius=0.1)
    dt = time.perf_counter() - t0
    passed = (rep["eigen_residual"] < 1e-8 and rep["angle_deg"] < 15.0
              and dt < 180.0)
    record_acceptance(8, "ABC local stretch-plane (Fig 8)", passed,
                      f"residual={rep['eigen_residual']:.1e} "
                      f"angle={rep['angle_deg']:.2f}deg", dt, 180.0)
    assert rep["eigen_residual"] < 1e-8
    assert rep["angle_deg"] < 15.0
    assert dt < 180.0


def test_criterion_09_selection_soundness_and_determinism(tmp_path):
    from lcskit.cli import main

    t0 = time.perf_counter()
    outs = []
    for sub, threads in (("t1", 1), ("tN", 3)):
        out = tmp_path / sub
        args = ["--out", str(out), "--threads", str(threads)]
        assert main(args + ["flowmap", "--flow", "double-gyre", "--a", "0",
                            "--b", "10", "--grid", "161x81",
                            "--aux-offset", "1e-6"]) == 0
        assert main(args + ["cg"]) == 0
        assert main(args + ["lcs", "--kind", "attracting",
                            "--seeds", "30x30"]) == 0
        outs.append(out)
    identical = (filecmp.cmp(outs[0] / "flowmap.fmg1",
                             outs[1] / "flowmap.fmg1", shallow=False)
                 and filecmp.cmp(outs[0] / "cg.cgf1", outs[1] / "cg.cgf1",
                                 shallow=False)
                 and filecmp.cmp(outs[0] / "lcs.json", outs[1] / "lcs.json",
                                 shallow=False)
                 and filecmp.cmp(outs[0] / "lcs.svg", outs[1] / "lcs.svg",
                                 shallow=False))

    doc = json.loads((outs[0] / "lcs.json").read_text())
    seeds = np.asarray([c["seed"] for c in doc["candidates"]])
    values = np.asarray([c["q"] if c["q"] is not None else np.nan
                         for c in doc["candidates"]])
    ok_idx = np.flatnonzero(~np.isnan(values))
    sub = {int(g): k for k, g in enumerate(ok_idx)}
    tie = 1e-9 * np.nanmedian(np.abs(values))
    sound = bool(doc["lines"])
    for i, cand in enumerate(doc["candidates"]):
        if cand["status"] != "selected":
            continue
        sound &= locally_extremal_bruteforce(
            values[ok_idx], seeds[ok_idx], sub[i],
            doc["neighborhood_radius"], maximize=True, tie_abs=tie)
    dt = time.perf_counter() - t0
    passed = identical and sound and dt < 300.0
    record_acceptance(9, "selection soundness + determinism", passed,
                      f"{len(doc['lines'])} LCS, bit-identical={identical}, "
                      f"locally-extremal={sound}", dt, 300.0)
    assert identical
    assert sound
    assert dt < 300.0


def test_criterion_10_backward_instability():
    t0 = time.perf_counter()
    field = _dgyre()
    p = IntegratorParams(rel_tol=1e-10, abs_tol=1e-12)
    fm = lcskit.compute_flow_map(field, (161, 81), 0.0, 10.0,
                                 aux_offset=1e-6, p=p)
    cg = cauchy_green(fm)
    lset = extract_lcs(cg, "attracting", SelectionParams(seeds_shape=(30, 30)))
    rep = backward_instability_demo(field, 0.0, 10.0, lset.lines[0].points)
    dt = time.perf_counter() - t0
    passed = rep["ratio"] > 10.0
    record_acceptance(10, "backward-advection instability (Fig 6)", passed,
                      f"deviation/roundtrip ratio = {rep['ratio']:.0f} "
                      f"(roundtrip={rep['roundtrip_error']:.1e}, "
                      f"unstable={rep['unstable_deviation']:.1e})", dt, 600.0)
    assert rep["ratio"] > 10.0
