import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lcskit
from lcskit import (DegenerateRegionError, Domain, IntegratorParams,
                    OutOfDomainError, PartialDataError)
from lcskit.cgtensor import (cauchy_green, cauchy_green_at_points,
                             detect_singularities, eig_sym, eigenvalue_gap,
                             ftle, interpolate_eigval, interpolate_eigvec,
                             load_cgfield, save_cgfield)

from oracles import expm_ss


# ---------------------------------------------------------------------------
# closed-form eigen-decomposition
# ---------------------------------------------------------------------------

def test_eig_identity_is_degenerate_flagged_by_field():
    lam, xi = eig_sym(np.eye(2))
    assert np.allclose(lam, (1.0, 1.0))
    assert np.allclose(xi @ xi.T, np.eye(2), atol=1e-14)


def test_eig_diagonal():
    lam, xi = eig_sym(np.diag([1.0, 4.0]))
    assert np.allclose(lam, (1.0, 4.0))
    assert np.allclose(np.abs(xi[0]), (1.0, 0.0), atol=1e-12)
    assert np.allclose(np.abs(xi[1]), (0.0, 1.0), atol=1e-12)
    # sign convention: first nonzero component positive
    assert xi[0][np.nonzero(np.round(xi[0], 6))[0][0]] > 0


def test_eig_reconstruction_random_spd_3x3():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        A = rng.normal(size=(3, 3))
        C = A.T @ A
        lam, xi = eig_sym(C)
        R = sum(lam[k] * np.outer(xi[k], xi[k]) for k in range(3))
        worst = max(worst, np.abs(R - C).max())
        assert lam[0] <= lam[1] <= lam[2]
    assert worst < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_eig3_properties(vals):
    C = np.array([[vals[0], vals[3], vals[4]],
                  [vals[3], vals[1], vals[5]],
                  [vals[4], vals[5], vals[2]]])
    lam, xi = eig_sym(C)
    assert lam[0] <= lam[1] <= lam[2]
    assert np.allclose(xi @ xi.T, np.eye(3), atol=1e-8)
    # agree with LAPACK eigenvalues
    ref = np.linalg.eigvalsh(C)
    assert np.allclose(lam, ref, atol=1e-8 * max(1.0, np.abs(ref).max()))


@settings(max_examples=60, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-4, 4))
def test_eig2_properties(a, b, c):
    C = np.array([[a, b], [b, c]])
    lam, xi = eig_sym(C)
    assert lam[0] <= lam[1]
    ref = np.linalg.eigvalsh(C)
    assert np.allclose(lam, ref, atol=1e-10 * max(1.0, np.abs(ref).max()))
    R = lam[0] * np.outer(xi[0], xi[0]) + lam[1] * np.outer(xi[1], xi[1])
    assert np.abs(R - C).max() < 1e-10 * max(1.0, np.abs(C).max())


def test_eig_repeated_eigenvalues_return_orthonormal_basis():
    lam, xi = eig_sym(np.diag([2.0, 2.0, 5.0]))
    assert np.allclose(lam, (2.0, 2.0, 5.0))
    assert np.allclose(xi @ xi.T, np.eye(3), atol=1e-12)


# ---------------------------------------------------------------------------
# field construction
# ---------------------------------------------------------------------------

def test_identity_flow_tensor(saddle_cg):
    f = lcskit.zero_field(2)
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    fm = lcskit.compute_flow_map(f, (8, 8), 0.0, 1.0, aux_offset=1e-4,
                                 domain=dom)
    cg = cauchy_green(fm)
    assert np.abs(cg.C - np.eye(2)).max() < 1e-9
    assert cg.degenerate.all()
    assert np.nanmax(np.abs(ftle(cg))) < 1e-9


def test_linear_saddle_eigensystem(saddle_cg):
    lam = saddle_cg.lambdas[10, 10]
    assert np.allclose(lam, (np.exp(-2.0), np.exp(2.0)), rtol=1e-6)
    xi2 = saddle_cg.xis[10, 10, 1]
    assert abs(abs(xi2 @ np.array([1.0, 0.0])) - 1.0) < 1e-9
    assert not saddle_cg.degenerate.any()
    assert saddle_cg.valid.all()


def test_duffing_origin_against_linearized_flow(duffing_cg):
    # oracle: exact linearized flow exp(2A), A = [[0,1],[4,0]]
    A = np.array([[0.0, 1.0], [4.0, 0.0]])
    F = expm_ss(2.0 * A)
    lam_exact = np.linalg.eigvalsh(F.T @ F)
    i = duffing_cg.grid_shape[0] // 2
    lam = duffing_cg.lambdas[i, i]
    assert duffing_cg.node_axes()[0][i] == 0.0
    assert np.exp(8.0) * 0.5 <= lam[1] <= np.exp(8.0) * 2.0
    assert abs(lam[0] * lam[1] - 1.0) < 1e-3
    assert np.allclose(lam, lam_exact, rtol=1e-4)


def test_incompressibility_duffing(duffing_cg):
    lam = duffing_cg.lambdas[1:-1, 1:-1]
    prod = lam[..., 0] * lam[..., 1]
    assert np.nanmax(np.abs(prod - 1.0)) < 1e-3


def test_incompressibility_double_gyre(dgyre_field):
    # resolving the sharpest T=10 ridge nodes needs a very small stencil
    p = IntegratorParams(rel_tol=1e-12, abs_tol=1e-14)
    fm = lcskit.compute_flow_map(dgyre_field, (81, 41), 0.0, 10.0,
                                 aux_offset=5e-8, p=p)
    cg = lcskit.cauchy_green(fm)
    lam = cg.lambdas[1:-1, 1:-1]
    prod = lam[..., 0] * lam[..., 1]
    assert np.nanmax(np.abs(prod - 1.0)) < 1e-3


def test_eigen_reconstruction_on_field(dgyre_cg):
    cg = dgyre_cg
    lam = cg.lambdas[cg.valid]
    xi = cg.xis[cg.valid]
    C = cg.C[cg.valid]
    R = np.einsum("mk,mki,mkj->mij", lam, xi, xi)
    scale = np.abs(C).max(axis=(1, 2))
    assert (np.abs(R - C).max(axis=(1, 2)) / scale).max() < 1e-10


def test_symmetry_residual(duffing_cg):
    resid = np.abs(duffing_cg.C - np.swapaxes(duffing_cg.C, -1, -2))
    assert np.nanmax(resid / np.abs(duffing_cg.C).max()) < 1e-12


def test_reciprocity_strict_per_seed_route(duffing_field, dgyre_field):
    # the 1e-3 reciprocity bound holds through per-seed gradients
    rep = lcskit.verify_lemma1(
        duffing_field, 0.0, 2.0, n_seeds=100,
        domain=Domain((-2.0, -2.0), (2.0, 2.0), (False, False)), seed=0)
    assert rep["pass"] and max(rep["max_err_high"], rep["max_err_low"]) < 1e-3
    rep = lcskit.verify_lemma1(dgyre_field, 0.0, 10.0, n_seeds=100, seed=0)
    assert rep["pass"] and max(rep["max_err_high"], rep["max_err_low"]) < 1e-3


def test_reciprocity_interpolated_diagnostic(duffing_field):
    # grid-interpolated route: the product deviation equals the relative
    # interpolation error of the backward eigenvalues; typical seeds stay
    # within a few percent (ridge-adjacent images cannot be resolved)
    rep = lcskit.verify_reciprocity_interpolated(
        duffing_field, 0.0, 2.0, n_seeds=100, grid_shape=(161, 161),
        domain=Domain((-2.0, -2.0), (2.0, 2.0), (False, False)),
        backward_domain=Domain((-3.5, -5.0), (3.5, 5.0), (False, False)),
        seed=0)
    assert rep["n_used"] >= 95
    assert rep["median_err"] < 0.05


def test_backward_field_same_machinery(duffing_field):
    dom = Domain((-2.0, -2.0), (2.0, 2.0), (False, False))
    fm = lcskit.compute_flow_map(duffing_field, (41, 41), 2.0, 0.0,
                                 aux_offset=1e-5, domain=dom)
    cg = cauchy_green(fm)
    assert cg.a == 2.0 and cg.b == 0.0
    assert cg.valid.all()
    assert (cg.lambdas[cg.valid][:, 0] > 0).all()


# ---------------------------------------------------------------------------
# eigenvector interpolation
# ---------------------------------------------------------------------------

def _constant_cg(vec=(1.0, 0.0)):
    # synthetic exactly-constant eigenvector field
    import dataclasses
    shape = (6, 6)
    v2 = np.asarray(vec) / np.linalg.norm(vec)
    v1 = np.array([-v2[1], v2[0]])
    lam = np.broadcast_to(np.array([0.25, 4.0]), shape + (2,)).copy()
    xis = np.empty(shape + (2, 2))
    xis[..., 0, :] = v1
    xis[..., 1, :] = v2
    C = (lam[..., 0, None, None] * np.einsum("i,j->ij", v1, v1)
         + lam[..., 1, None, None] * np.einsum("i,j->ij", v2, v2))
    return lcskit.CGField(a=0.0, b=1.0, grid_shape=shape,
                          lower=(-1.0, -1.0), upper=(1.0, 1.0),
                          eps_deg=1e-4, C=C, lambdas=lam, xis=xis,
                          valid=np.ones(shape, bool),
                          degenerate=np.zeros(shape, bool))


def test_interpolate_constant_field():
    cg = _constant_cg((0.6, 0.8))
    v = interpolate_eigvec(cg, (0.31, -0.47), 1, ref_dir=(1.0, 0.0))
    assert np.allclose(v, (0.6, 0.8), atol=1e-15)


def test_interpolate_alternating_signs_returns_vector():
    # nodes alternating +/- v must interpolate to v, not cancel to 0
    import dataclasses
    cg = _constant_cg((0.0, 1.0))
    flips = (-1.0) ** (np.add.outer(np.arange(6), np.arange(6)))
    cg = dataclasses.replace(cg, xis=cg.xis * flips[..., None, None])
    v = interpolate_eigvec(cg, (0.17, 0.23), 1, ref_dir=(0.0, 1.0))
    assert np.allclose(v, (0.0, 1.0), atol=1e-15)


def test_interpolation_absorbs_sign_flips(saddle_cg):
    import dataclasses

    rng = np.random.default_rng(4)
    flips = np.where(rng.random(saddle_cg.grid_shape) < 0.5, -1.0, 1.0)
    flipped = dataclasses.replace(saddle_cg,
                                  xis=saddle_cg.xis * flips[..., None, None])
    a = interpolate_eigvec(saddle_cg, (0.13, 0.57), 1, ref_dir=(1.0, 0.0))
    b = interpolate_eigvec(flipped, (0.13, 0.57), 1, ref_dir=(1.0, 0.0))
    assert np.array_equal(a, b)


def test_interpolate_linear_saddle_analytic_direction(saddle_cg):
    # oracle: the saddle's eigenvectors are exactly the coordinate axes
    rng = np.random.default_rng(9)
    for pt in rng.uniform(-0.9, 0.9, size=(12, 2)):
        v = interpolate_eigvec(saddle_cg, pt, 1, ref_dir=(1.0, 0.0))
        assert np.arccos(min(1.0, abs(float(v @ np.array([1.0, 0.0]))))) < 1e-3


def test_interpolate_saddle_direction_accuracy(duffing_cg):
    # smooth region: interpolated direction within 1e-3 rad of pointwise
    p = IntegratorParams(rel_tol=1e-11, abs_tol=1e-13)
    pts = np.array([[0.53, 0.74], [-1.21, 0.33], [0.87, -0.51]])
    pcg = cauchy_green_at_points(lcskit.make_duffing(), pts, 0.0, 2.0,
                                 aux_offset=1e-6, p=p)
    for i, pt in enumerate(pts):
        v = interpolate_eigvec(duffing_cg, pt, 1)
        want = pcg.xis[i, 1]
        ang = np.arccos(min(1.0, abs(float(v @ want))))
        assert ang < 5e-3


def test_interpolate_rejects_degenerate_region():
    f = lcskit.zero_field(2)
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    fm = lcskit.compute_flow_map(f, (8, 8), 0.0, 1.0, aux_offset=1e-4,
                                 domain=dom)
    cg = cauchy_green(fm)
    with pytest.raises(DegenerateRegionError):
        interpolate_eigvec(cg, (0.0, 0.0), 1)


def test_interpolate_out_of_domain(saddle_cg):
    with pytest.raises(OutOfDomainError):
        interpolate_eigvec(saddle_cg, (5.0, 0.0), 1)


def test_tensor_mode_matches_vector_mode_in_smooth_region(duffing_cg):
    pt = (0.53, 0.74)
    a = interpolate_eigvec(duffing_cg, pt, 1, ref_dir=(1.0, 0.0))
    b = interpolate_eigvec(duffing_cg, pt, 1, ref_dir=(1.0, 0.0),
                           mode="tensor")
    assert np.arccos(min(1.0, abs(float(a @ b)))) < 1e-3


def test_interpolate_eigval_partial_data(duffing_cg):
    import dataclasses

    broken = dataclasses.replace(duffing_cg,
                                 valid=duffing_cg.valid.copy())
    broken.valid[90:92, 90:92] = False
    x_bad = (broken.node_axes()[0][90] + 0.001,
             broken.node_axes()[1][90] + 0.001)
    with pytest.raises(PartialDataError) as err:
        interpolate_eigval(broken, np.array([x_bad, (0.5, 0.5)]), 1)
    assert err.value.gaps == [0]


# ---------------------------------------------------------------------------
# singularities and FTLE
# ---------------------------------------------------------------------------

def test_identity_flow_singular_everywhere():
    f = lcskit.zero_field(2)
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    fm = lcskit.compute_flow_map(f, (10, 10), 0.0, 1.0, aux_offset=1e-4,
                                 domain=dom)
    cg = cauchy_green(fm)
    sing = detect_singularities(cg, 1e-2)
    assert len(sing) > 10  # flagged wholesale


def test_saddle_has_no_singularities(saddle_cg):
    assert len(detect_singularities(saddle_cg, 1e-2)) == 0


def test_double_gyre_singularities_satisfy_criterion(dgyre_cg):
    sing = detect_singularities(dgyre_cg, 2e-2)
    assert len(sing) >= 1
    for pt in sing.points:
        # oracle: evaluate the criterion from interpolated eigenvalues
        lo = interpolate_eigval(dgyre_cg, pt, 0)
        hi = interpolate_eigval(dgyre_cg, pt, 1)
        assert (hi - lo) / hi < 2e-2
        gap, ok = eigenvalue_gap(dgyre_cg, pt)
        assert ok and gap < 2e-2


def test_ftle_saddle_is_one(saddle_cg):
    f = ftle(saddle_cg)
    assert np.allclose(f[saddle_cg.valid], 1.0, atol=1e-6)


def test_ftle_duffing_ridge(duffing_cg):
    f = ftle(duffing_cg)
    i = duffing_cg.grid_shape[0] // 2
    assert f[i, i] > 0.0
    # ridge: FTLE near the origin exceeds FTLE off the homoclinic set
    from lcskit.eigenlines import TraceConfig, trace_eigenline

    line = trace_eigenline(duffing_cg, (0.0, 0.0), "strainline",
                           TraceConfig(max_length=2.0))
    on_ridge = [interpolate_eigval(duffing_cg, pt, 1)
                for pt in line.points[::8]]
    on_ridge = np.log(np.asarray(on_ridge)) / 4.0
    off = []
    for pt in line.points[::8]:
        n = np.array([-pt[1], pt[0]])
        n = n / max(np.linalg.norm(n), 1e-9) if np.linalg.norm(n) else np.array([0.0, 1.0])
        q = pt + 0.45 * n
        if np.abs(q).max() < 2.8:
            off.append(np.log(interpolate_eigval(duffing_cg, q, 1)) / 4.0)
    assert np.mean(on_ridge) > np.mean(off)


def test_cgf_round_trip(tmp_path, duffing_cg):
    path = tmp_path / "cg.cgf1"
    save_cgfield(duffing_cg, path)
    cg2 = load_cgfield(path)
    assert np.array_equal(duffing_cg.C, cg2.C)
    assert np.array_equal(duffing_cg.lambdas[duffing_cg.valid],
                          cg2.lambdas[cg2.valid])
    assert np.array_equal(duffing_cg.xis[duffing_cg.valid],
                          cg2.xis[cg2.valid])
    assert np.array_equal(duffing_cg.valid, cg2.valid)
    assert np.array_equal(duffing_cg.degenerate, cg2.degenerate)
    assert cg2.eps_deg == duffing_cg.eps_deg


def test_pointwise_cg_matches_grid(duffing_field, duffing_cg):
    pts = np.array([[0.5, 0.5], [-1.0, 0.25]])
    pcg = cauchy_green_at_points(duffing_field, pts, 0.0, 2.0,
                                 aux_offset=1e-6)
    for i, pt in enumerate(pts):
        lam_grid = interpolate_eigval(duffing_cg, pt, 1)
        assert abs(lam_grid - pcg.lambdas[i, 1]) / pcg.lambdas[i, 1] < 0.05
