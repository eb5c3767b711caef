"""Parity between the compiled core and the pure-NumPy kernels."""

import numpy as np
import pytest

import lcskit
from lcskit import Domain, IntegratorParams, backend
from lcskit.eigenlines import TraceConfig, trace_eigenlines

needs_compiled = pytest.mark.skipif(
    "compiled" not in backend.available_backends(),
    reason="compiled core not built")


@pytest.fixture
def both_backends():
    yield
    backend.set_backend("auto")


def _fields():
    rng = np.random.default_rng(0)
    duf = lcskit.make_duffing()
    dg = lcskit.make_double_gyre(0.1, 0.1, 2 * np.pi / 10)
    abc = lcskit.make_abc()
    lin = lcskit.linear_field(rng.uniform(-1, 1, (3, 3)))
    return [(duf, 0.0, 2.0, (-2, 2)), (dg, 0.0, 10.0, (0.1, 0.9)),
            (abc, 0.0, 4.0, (0.5, 5.5)), (lin, 0.0, 1.0, (-0.5, 0.5))]


@needs_compiled
@pytest.mark.parametrize("method", ["rk45_adaptive", "rk4_fixed"])
def test_integration_parity(both_backends, method):
    rng = np.random.default_rng(42)
    p = IntegratorParams(method=method, step=5e-3)
    for field, a, b, (lo, hi) in _fields():
        X0 = rng.uniform(lo, hi, size=(100, field.n))
        out = {}
        for name in ("python", "compiled"):
            backend.set_backend(name)
            out[name] = lcskit.flowmap.integrate_batch(field, X0, a, b, p)
        dx = np.abs(out["python"][0] - out["compiled"][0]).max()
        assert dx < 1e-9, field.name
        assert np.array_equal(out["python"][1], out["compiled"][1])


@needs_compiled
def test_trace_parity(both_backends, dgyre_cg):
    seeds = np.stack(np.meshgrid(np.linspace(0.2, 1.8, 8),
                                 np.linspace(0.15, 0.85, 4),
                                 indexing="ij"), -1).reshape(-1, 2)
    sing = lcskit.detect_singularities(dgyre_cg, 2e-2)
    out = {}
    for name in ("python", "compiled"):
        backend.set_backend(name)
        out[name] = trace_eigenlines(dgyre_cg, seeds, "stretchline",
                                     TraceConfig(singularities=sing))
    for a, b in zip(out["python"], out["compiled"]):
        assert (a is None) == (b is None)
        if a is None:
            continue
        assert a.stop_reason_fwd == b.stop_reason_fwd
        assert a.stop_reason_bwd == b.stop_reason_bwd
        assert len(a.points) == len(b.points)
        assert np.abs(a.points - b.points).max() < 1e-9


@needs_compiled
def test_trace_parity_tensor_mode(both_backends, duffing_cg):
    seeds = np.array([[0.5, 0.5], [-1.0, 0.8], [1.2, -0.3]])
    out = {}
    for name in ("python", "compiled"):
        backend.set_backend(name)
        out[name] = trace_eigenlines(
            duffing_cg, seeds, "stretchline",
            TraceConfig(max_length=2.0, tensor_interp=True))
    for a, b in zip(out["python"], out["compiled"]):
        assert len(a.points) == len(b.points)
        assert np.abs(a.points - b.points).max() < 1e-9


@needs_compiled
def test_gridded_parity(both_backends):
    dg = lcskit.make_double_gyre(0.1, 0.25, 2 * np.pi / 10)
    g = lcskit.sample_to_grid(dg, (32, 16), np.linspace(0, 4, 5)).field()
    rng = np.random.default_rng(3)
    X0 = rng.uniform((0.1, 0.1), (1.9, 0.9), size=(50, 2))
    out = {}
    # fixed step: identical arithmetic end to end
    p_fix = IntegratorParams(method="rk4_fixed", step=5e-3)
    for name in ("python", "compiled"):
        backend.set_backend(name)
        out[name] = lcskit.flowmap.integrate_batch(g, X0, 0.2, 3.7, p_fix)
    assert np.abs(out["python"][0] - out["compiled"][0]).max() < 1e-12
    assert np.array_equal(out["python"][1], out["compiled"][1])
    # adaptive: the interpolated field is only C0, so accept/reject flips on
    # 1-ulp differences are possible; both answers stay within the error
    # budget of the tolerances
    p_ad = IntegratorParams()
    for name in ("python", "compiled"):
        backend.set_backend(name)
        out[name] = lcskit.flowmap.integrate_batch(g, X0, 0.2, 3.7, p_ad)
    assert np.abs(out["python"][0] - out["compiled"][0]).max() < 5e-5
    assert np.array_equal(out["python"][1], out["compiled"][1])


def test_python_backend_selectable(both_backends):
    backend.set_backend("python")
    assert backend.active_backend_name() == "python"
    f = lcskit.make_duffing()
    x = lcskit.integrate_trajectory(f, np.array([0.1, 0.0]), 0.0, 1.0)
    assert np.isfinite(x).all()


def test_callable_field_routes_to_python(both_backends):
    # callable fields integrate through the NumPy kernels on any backend
    def fn(X, T):
        return np.stack([X[:, 1], -X[:, 0]], axis=1)

    dom = Domain((-5.0, -5.0), (5.0, 5.0), (False, False))
    f = lcskit.from_callable(fn, dom)
    x1 = lcskit.integrate_trajectory(f, np.array([1.0, 0.0]), 0.0, np.pi,
                                     IntegratorParams(rel_tol=1e-10,
                                                      abs_tol=1e-12))
    assert np.allclose(x1, (-1.0, 0.0), atol=1e-8)
