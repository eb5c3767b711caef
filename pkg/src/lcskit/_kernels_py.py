"""Pure-NumPy compute kernels: batch trajectory integration and line tracing.

This module is the fallback twin of the compiled extension ``lcskit._core``;
``lcskit.backend`` picks one of the two at import time. Both expose
``integrate_batch`` and ``trace_lines`` with identical semantics, and the
arithmetic here is written stage-by-stage in the same operation order as the
C loops so the two backends agree to rounding.

All per-trajectory work is elementwise over the batch, so results are
independent of how a batch is split across calls or worker threads.
"""

from __future__ import annotations

import numpy as np

IS_COMPILED = False

# field codes (shared with the compiled core)
CODE_ZERO = 0
CODE_LINEAR = 1
CODE_DUFFING = 2
CODE_ABC = 3
CODE_DOUBLE_GYRE = 4
CODE_GRIDDED = 5
CODE_CALLABLE = -1  # python-only; never routed to the compiled core

METHOD_RK4_FIXED = 0
METHOD_RK45 = 1

STATUS_OK = 0
STATUS_ESCAPED = 1
STATUS_DIVERGED = 2

STOP_BOUNDARY = 0
STOP_SINGULARITY = 1
STOP_DEGENERATE = 2
STOP_MAX_LENGTH = 3
STOP_CLOSED = 4
STOP_NONE = 255

FETCH_VECTOR = 0
FETCH_TENSOR = 1

_PI = float(np.pi)

# Dormand-Prince 5(4) tableau (the ode45 pair), FSAL.
_DP_C = (0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0)
_DP_A21 = 0.2
_DP_A31, _DP_A32 = 3.0 / 40.0, 9.0 / 40.0
_DP_A41, _DP_A42, _DP_A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_DP_A51, _DP_A52, _DP_A53, _DP_A54 = (19372.0 / 6561.0, -25360.0 / 2187.0,
                                      64448.0 / 6561.0, -212.0 / 729.0)
_DP_A61, _DP_A62, _DP_A63, _DP_A64, _DP_A65 = (9017.0 / 3168.0, -355.0 / 33.0,
                                               46732.0 / 5247.0, 49.0 / 176.0,
                                               -5103.0 / 18656.0)
_DP_B1, _DP_B3, _DP_B4, _DP_B5, _DP_B6 = (35.0 / 384.0, 500.0 / 1113.0,
                                          125.0 / 192.0, -2187.0 / 6784.0,
                                          11.0 / 84.0)
_DP_E1, _DP_E3, _DP_E4, _DP_E5, _DP_E6, _DP_E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0,
    22.0 / 525.0, -1.0 / 40.0)

# Hairer DOPRI5 step controller: hnew = h / fac, fac in [1/10, 5].
_SAFE = 0.9
_BETA = 0.04
_EXPO1 = 0.2 - _BETA * 0.75
_FAC_LO = 0.1   # lower clamp on the divisor (growth at most 10x)
_FAC_HI = 5.0   # upper clamp on the divisor (shrink at least 5x)
_CELL_TOL = 1e-9  # cell-unit slack before a query counts as out of grid


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------

def make_grid_pack(times, samples, shape, lower, dx, periodic):
    """Bundle gridded-velocity arrays in the layout the kernels expect.

    ``samples`` must be (nt, n_nodes, n) with the spatial axes flattened in
    C order; ``shape`` is the per-axis node count.
    """
    return (np.ascontiguousarray(times, dtype=np.float64),
            np.ascontiguousarray(samples, dtype=np.float64),
            np.ascontiguousarray(shape, dtype=np.int64),
            np.ascontiguousarray(lower, dtype=np.float64),
            np.ascontiguousarray(dx, dtype=np.float64),
            np.ascontiguousarray(periodic, dtype=np.uint8))


def eval_field(pack, X, T):
    """Evaluate a velocity field on a batch of positions.

    Parameters
    ----------
    pack : (code, params, grid_pack_or_none); for CODE_CALLABLE the params
        slot holds a vectorized ``f(X, T) -> V`` callable.
    X : (m, n) positions
    T : (m,) times, one per row

    Returns
    -------
    V : (m, n) velocities (NaN where evaluation failed)
    ok : (m,) bool, False only for gridded fields queried out of
        domain/range or on non-finite input.
    """
    code, params, grid = pack
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    m = X.shape[0]
    ok = np.ones(m, dtype=bool)

    if code == CODE_ZERO:
        return np.zeros_like(X), ok
    if code == CODE_LINEAR:
        n = X.shape[1]
        M = np.asarray(params, dtype=np.float64).reshape(n, n)
        return X @ M.T, ok
    if code == CODE_DUFFING:
        x0 = X[:, 0]
        V = np.empty_like(X)
        V[:, 0] = X[:, 1]
        V[:, 1] = 4.0 * x0 - x0 * x0 * x0
        return V, ok
    if code == CODE_ABC:
        A, B, C = params[0], params[1], params[2]
        V = np.empty_like(X)
        V[:, 0] = A * np.sin(X[:, 2]) + C * np.cos(X[:, 1])
        V[:, 1] = B * np.sin(X[:, 0]) + A * np.cos(X[:, 2])
        V[:, 2] = C * np.sin(X[:, 1]) + B * np.cos(X[:, 0])
        return V, ok
    if code == CODE_DOUBLE_GYRE:
        A, eps, om = params[0], params[1], params[2]
        x, y = X[:, 0], X[:, 1]
        st = np.sin(om * T)
        f = eps * st * x * x + (1.0 - 2.0 * eps * st) * x
        dfdx = 2.0 * eps * st * x + 1.0 - 2.0 * eps * st
        V = np.empty_like(X)
        V[:, 0] = -_PI * A * np.sin(_PI * f) * np.cos(_PI * y)
        V[:, 1] = _PI * A * np.cos(_PI * f) * np.sin(_PI * y) * dfdx
        return V, ok
    if code == CODE_GRIDDED:
        return _eval_gridded(grid, X, T)
    if code == CODE_CALLABLE:
        V = np.asarray(params(X, T), dtype=np.float64)
        return V, ok
    raise ValueError(f"unknown field code {code}")


def _eval_gridded(grid, X, T):
    """Multilinear-in-space, linear-in-time interpolation of gridded samples."""
    times, samples, shape, lower, dx, periodic = grid
    m, n = X.shape
    nt = times.shape[0]
    ok = np.isfinite(T)
    T = np.where(ok, T, times[0])

    tspan = times[-1] - times[0]
    ttol = 1e-12 * max(abs(tspan), 1.0)
    ok &= (T >= times[0] - ttol) & (T <= times[-1] + ttol)
    if nt > 1:
        j = np.clip(np.searchsorted(times, T, side="right") - 1, 0, nt - 2)
        wt = np.clip((T - times[j]) / (times[j + 1] - times[j]), 0.0, 1.0)
    else:
        j = np.zeros(m, dtype=np.int64)
        wt = np.zeros(m)

    cells = np.empty((m, n), dtype=np.int64)
    w = np.empty((m, n))
    for i in range(n):
        xi = X[:, i]
        fin = np.isfinite(xi)
        ok &= fin
        xi = np.where(fin, xi, lower[i])
        ki = int(shape[i])
        if periodic[i]:
            span = dx[i] * (ki - 1)
            rel = (xi - lower[i]) / span
            rel = (rel - np.floor(rel)) * (ki - 1)
        else:
            rel = (xi - lower[i]) / dx[i]
            ok &= (rel >= -_CELL_TOL) & (rel <= (ki - 1) + _CELL_TOL)
        ci = np.clip(np.floor(rel), 0, ki - 2).astype(np.int64)
        cells[:, i] = ci
        w[:, i] = np.clip(rel - ci, 0.0, 1.0)

    strides = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        strides[i] = strides[i + 1] * int(shape[i + 1])

    base = cells @ strides
    Vlo = np.zeros((m, n))
    Vhi = np.zeros((m, n))
    jhi = np.minimum(j + 1, nt - 1)
    # corner order: lexicographic over (b0, b1[, b2]); keep in sync with _core
    for corner in range(1 << n):
        offs = 0
        wgt = np.ones(m)
        for i in range(n):
            bit = (corner >> (n - 1 - i)) & 1
            offs = offs + bit * strides[i]
            wgt = wgt * (w[:, i] if bit else (1.0 - w[:, i]))
        idx = base + offs
        Vlo += wgt[:, None] * samples[j, idx]
        Vhi += wgt[:, None] * samples[jhi, idx]
    V = (1.0 - wt)[:, None] * Vlo + wt[:, None] * Vhi
    V[~ok] = np.nan
    return V, ok


# ---------------------------------------------------------------------------
# batch trajectory integration
# ---------------------------------------------------------------------------

def integrate_batch(pack, X0, t0, t1, method, step, rel_tol, abs_tol,
                    max_steps, chk_lo, chk_hi, chk_mask):
    """Integrate a batch of trajectories of ``xdot = u(x, t)`` from t0 to t1.

    Each row of ``X0`` advances with its own step sequence, so a trajectory's
    result does not depend on its batch mates. Backward runs (t1 < t0) are
    supported.

    ``chk_lo``/``chk_hi``/``chk_mask`` give per-axis escape bounds; axes with
    ``chk_mask == 0`` (periodic axes) are never escape-checked.

    Returns ``(X1, status, t_exit)``: final positions (last computed position
    on failure), STATUS_* codes, and the time reached.
    """
    X0 = np.ascontiguousarray(X0, dtype=np.float64)
    m = X0.shape[0]
    chk_lo = np.asarray(chk_lo, dtype=np.float64)
    chk_hi = np.asarray(chk_hi, dtype=np.float64)
    chk_mask = np.asarray(chk_mask, dtype=np.uint8)
    if t1 == t0 or m == 0:
        return X0.copy(), np.zeros(m, dtype=np.uint8), np.full(m, float(t1))
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        if method == METHOD_RK4_FIXED:
            return _integrate_rk4(pack, X0, float(t0), float(t1), float(step),
                                  int(max_steps), chk_lo, chk_hi, chk_mask)
        return _integrate_dp45(pack, X0, float(t0), float(t1), float(rel_tol),
                               float(abs_tol), int(max_steps),
                               chk_lo, chk_hi, chk_mask)


def _escaped(X, chk_lo, chk_hi, chk_mask):
    out = np.zeros(X.shape[0], dtype=bool)
    for i in range(X.shape[1]):
        if chk_mask[i]:
            tolb = 1e-12 * (chk_hi[i] - chk_lo[i])
            out |= (X[:, i] < chk_lo[i] - tolb) | (X[:, i] > chk_hi[i] + tolb)
    return out


def _integrate_rk4(pack, X0, t0, t1, step, max_steps, chk_lo, chk_hi, chk_mask):
    m = X0.shape[0]
    span = t1 - t0
    nsteps = max(1, int(np.ceil(abs(span) / step)))
    if nsteps > max_steps:
        return (X0.copy(), np.full(m, STATUS_DIVERGED, dtype=np.uint8),
                np.full(m, t0))
    h = span / nsteps

    Xout = X0.copy()
    status = np.zeros(m, dtype=np.uint8)
    t_exit = np.full(m, t1)
    ids = np.arange(m)
    X = X0.copy()

    for kstep in range(nsteps):
        if ids.size == 0:
            break
        t = t0 + kstep * h
        T = np.full(X.shape[0], t)
        fail = np.zeros(X.shape[0], dtype=bool)

        k1, okv = eval_field(pack, X, T)
        fail |= ~okv
        k2, okv = eval_field(pack, X + (0.5 * h) * k1, T + 0.5 * h)
        fail |= ~okv
        k3, okv = eval_field(pack, X + (0.5 * h) * k2, T + 0.5 * h)
        fail |= ~okv
        k4, okv = eval_field(pack, X + h * k3, T + h)
        fail |= ~okv

        Xn = np.where(fail[:, None], X,
                      X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        tn = t1 if kstep == nsteps - 1 else t0 + (kstep + 1) * h
        esc = ~fail & _escaped(Xn, chk_lo, chk_hi, chk_mask)
        dead = fail | esc
        X = Xn
        if dead.any():
            status[ids[dead]] = STATUS_ESCAPED
            t_exit[ids[dead]] = np.where(fail[dead], t, tn)
            Xout[ids[dead]] = X[dead]
            keep = ~dead
            X, ids = X[keep], ids[keep]
    Xout[ids] = X
    return Xout, status, t_exit


def _rms(E, sc):
    r = E / sc
    return np.sqrt(np.mean(r * r, axis=1))


def _integrate_dp45(pack, X0, t0, t1, rtol, atol, max_steps,
                    chk_lo, chk_hi, chk_mask):
    m = X0.shape[0]
    dirn = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)

    Xout = X0.copy()
    status = np.zeros(m, dtype=np.uint8)
    t_exit = np.full(m, t1)

    ids = np.arange(m)
    X = X0.copy()
    t = np.full(m, t0)
    K1, ok0 = eval_field(pack, X, t)
    if not ok0.all():
        bad = ~ok0
        status[ids[bad]] = STATUS_ESCAPED
        t_exit[ids[bad]] = t0
        X, t, K1, ids = X[ok0], t[ok0], K1[ok0], ids[ok0]

    # Hairer-style initial step selection (one extra evaluation).
    sc = atol + rtol * np.abs(X)
    d0 = _rms(X, sc)
    d1 = _rms(K1, sc)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6,
                  0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = np.minimum(h0, span)
    f1, ok1 = eval_field(pack, X + (h0 * dirn)[:, None] * K1, t + h0 * dirn)
    f1 = np.where(ok1[:, None], f1, K1)
    d2 = _rms(f1 - K1, sc) / np.maximum(h0, 1e-300)
    dmax = np.maximum(d1, d2)
    h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3),
                  (0.01 / np.maximum(dmax, 1e-300)) ** 0.2)
    h = dirn * np.minimum(np.minimum(100.0 * h0, h1), span)

    facold = np.full(X.shape[0], 1e-4)
    rejected = np.zeros(X.shape[0], dtype=bool)
    nstep = np.zeros(X.shape[0], dtype=np.int64)

    while ids.size:
        nstep += 1
        land = (t + h - t1) * dirn >= 0.0
        h = np.where(land, t1 - t, h)

        failed = np.zeros(ids.size, dtype=bool)

        def ev(Y, frac):
            nonlocal failed
            V, okv = eval_field(pack, Y, t + frac * h)
            failed |= ~okv
            return V

        K2 = ev(X + (h * _DP_A21)[:, None] * K1, _DP_C[0])
        K3 = ev(X + h[:, None] * (_DP_A31 * K1 + _DP_A32 * K2), _DP_C[1])
        K4 = ev(X + h[:, None] * (_DP_A41 * K1 + _DP_A42 * K2 + _DP_A43 * K3),
                _DP_C[2])
        K5 = ev(X + h[:, None] * (_DP_A51 * K1 + _DP_A52 * K2 + _DP_A53 * K3
                                  + _DP_A54 * K4), _DP_C[3])
        K6 = ev(X + h[:, None] * (_DP_A61 * K1 + _DP_A62 * K2 + _DP_A63 * K3
                                  + _DP_A64 * K4 + _DP_A65 * K5), _DP_C[4])
        Y5 = X + h[:, None] * (_DP_B1 * K1 + _DP_B3 * K3 + _DP_B4 * K4
                               + _DP_B5 * K5 + _DP_B6 * K6)
        K7 = ev(Y5, _DP_C[5])

        E = h[:, None] * (_DP_E1 * K1 + _DP_E3 * K3 + _DP_E4 * K4
                          + _DP_E5 * K5 + _DP_E6 * K6 + _DP_E7 * K7)
        sc = atol + rtol * np.maximum(np.abs(X), np.abs(Y5))
        err = _rms(E, sc)
        err = np.where(failed, np.inf, err)

        done = np.zeros(ids.size, dtype=bool)
        if failed.any():
            # left a gridded domain mid-step
            status[ids[failed]] = STATUS_ESCAPED
            t_exit[ids[failed]] = t[failed]
            Xout[ids[failed]] = X[failed]
            done |= failed

        accept = ~done & (err <= 1.0)
        if accept.any():
            tn = np.where(land, t1, t + h)
            esc = accept & _escaped(Y5, chk_lo, chk_hi, chk_mask)
            if esc.any():
                status[ids[esc]] = STATUS_ESCAPED
                t_exit[ids[esc]] = tn[esc]
                Xout[ids[esc]] = Y5[esc]
                done |= esc
                accept &= ~esc
            arrived = accept & land
            if arrived.any():
                Xout[ids[arrived]] = Y5[arrived]
                done |= arrived
                accept &= ~arrived
            X = np.where(accept[:, None], Y5, X)
            t = np.where(accept, tn, t)
            K1 = np.where(accept[:, None], K7, K1)

        # Hairer DOPRI5 controller
        fac11 = err ** _EXPO1
        fac = np.maximum(_FAC_LO, np.minimum(_FAC_HI, (fac11 / (facold ** _BETA)) / _SAFE))
        ok_step = err <= 1.0
        hnew = np.where(ok_step & rejected,
                        dirn * np.minimum(np.abs(h / fac), np.abs(h)), h / fac)
        hrej = h / np.minimum(_FAC_HI, fac11 / _SAFE)
        hnew = np.where(ok_step, hnew, hrej)
        facold = np.where(ok_step, np.maximum(err, 1e-4), facold)
        rejected = ~ok_step
        h = hnew

        tiny = ~done & (np.abs(h) < 2.3e-13 * np.maximum(1.0, np.abs(t)))
        give_up = tiny | (~done & (nstep >= max_steps))
        if give_up.any():
            status[ids[give_up]] = STATUS_DIVERGED
            t_exit[ids[give_up]] = t[give_up]
            Xout[ids[give_up]] = X[give_up]
            done |= give_up

        if done.any():
            keep = ~done
            X, t, h, K1 = X[keep], t[keep], h[keep], K1[keep]
            facold, rejected, nstep, ids = (facold[keep], rejected[keep],
                                            nstep[keep], ids[keep])
    return Xout, status, t_exit


# ---------------------------------------------------------------------------
# eigenvector-line tracing (2-D)
# ---------------------------------------------------------------------------

def _fetch_dir(mode, xi, cg3, k, okmask, lower, dx, P, ref, eps_deg):
    """Sign-aligned unit direction of the designated eigenvector field at P.

    ``ref`` is the (J, 2) array of reference directions, or None to align
    every corner to the first corner's node vector. Returns ``(v, code)``
    with code 0 ok, 1 out of grid, 2 degenerate/invalid.
    """
    n0, n1 = okmask.shape
    J = P.shape[0]
    code = np.zeros(J, dtype=np.uint8)
    r0 = (P[:, 0] - lower[0]) / dx[0]
    r1 = (P[:, 1] - lower[1]) / dx[1]
    nf = ~(np.isfinite(r0) & np.isfinite(r1))
    if nf.any():
        r0 = np.where(nf, -1.0, r0)
        r1 = np.where(nf, -1.0, r1)
    out = ((r0 < -_CELL_TOL) | (r0 > (n0 - 1) + _CELL_TOL)
           | (r1 < -_CELL_TOL) | (r1 > (n1 - 1) + _CELL_TOL))
    code[out] = 1
    i = np.clip(np.floor(r0), 0, n0 - 2).astype(np.int64)
    j = np.clip(np.floor(r1), 0, n1 - 2).astype(np.int64)
    w0 = np.clip(r0 - i, 0.0, 1.0)
    w1 = np.clip(r1 - j, 0.0, 1.0)

    good = (okmask[i, j] & okmask[i, j + 1]
            & okmask[i + 1, j] & okmask[i + 1, j + 1])
    code[(code == 0) & ~good.astype(bool)] = 2

    if mode == FETCH_VECTOR:
        v00 = xi[i, j]
        v01 = xi[i, j + 1]
        v10 = xi[i + 1, j]
        v11 = xi[i + 1, j + 1]
        rv = v00 if ref is None else ref

        def aligned(vc):
            s = vc[:, 0] * rv[:, 0] + vc[:, 1] * rv[:, 1]
            return np.where((s < 0.0)[:, None], -vc, vc)

        v = ((1.0 - w0) * (1.0 - w1))[:, None] * aligned(v00) \
            + ((1.0 - w0) * w1)[:, None] * aligned(v01) \
            + (w0 * (1.0 - w1))[:, None] * aligned(v10) \
            + (w0 * w1)[:, None] * aligned(v11)
        nrm = np.sqrt(v[:, 0] * v[:, 0] + v[:, 1] * v[:, 1])
        code[(code == 0) & ~(nrm > 1e-12)] = 2
        return v / np.maximum(nrm, 1e-300)[:, None], code

    # tensor mode: interpolate the tensor, then eigen-decompose at the query
    c00 = cg3[i, j]
    c01 = cg3[i, j + 1]
    c10 = cg3[i + 1, j]
    c11 = cg3[i + 1, j + 1]
    cq = ((1.0 - w0) * (1.0 - w1))[:, None] * c00 \
        + ((1.0 - w0) * w1)[:, None] * c01 \
        + (w0 * (1.0 - w1))[:, None] * c10 \
        + (w0 * w1)[:, None] * c11
    a, b, c = cq[:, 0], cq[:, 1], cq[:, 2]
    mid = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lam2 = mid + rad
    gap = (2.0 * rad) / np.maximum(lam2, 1e-300)
    code[(code == 0) & ~((lam2 > 0.0) & (gap >= eps_deg))] = 2
    th = 0.5 * np.arctan2(2.0 * b, a - c)
    if k == 1:
        v = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        v = np.stack([-np.sin(th), np.cos(th)], axis=1)
    if ref is not None:
        s = v[:, 0] * ref[:, 0] + v[:, 1] * ref[:, 1]
        v = np.where((s < 0.0)[:, None], -v, v)
    return v, code


def trace_lines(mode, xi, cg3, k, okmask, lower, dx, seeds, h, lmax_half,
                sing, r_sing, eps_deg):
    """Trace eigenvector lines from each seed in both arclength directions.

    Fixed-step RK4 in arclength; at every stage the direction comes from
    ``_fetch_dir`` with the previous stage's direction as sign reference.
    A step shorter than ``0.5 * h`` (direction rotating too fast to follow)
    stops the half-line as degenerate, which also bounds the vertex spacing
    to [0.5 h, 1.5 h].

    Returns one tuple per seed: ``(pos_pts, pos_stop, neg_pts, neg_stop)``,
    halves excluding the seed vertex, stops being STOP_* codes.
    """
    seeds = np.ascontiguousarray(seeds, dtype=np.float64)
    okmask = np.ascontiguousarray(okmask, dtype=np.uint8)
    lower = np.asarray(lower, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    m = seeds.shape[0]
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        v0, code0 = _fetch_dir(mode, xi, cg3, k, okmask, lower, dx, seeds,
                               None, eps_deg)

        J = 2 * m
        seed_of_job = np.repeat(seeds, 2, axis=0)
        d_init = np.repeat(v0, 2, axis=0)
        d_init[1::2] *= -1.0
        seed_codes = np.repeat(code0, 2)
        jstop = np.full(J, STOP_NONE, dtype=np.uint8)
        bad0 = seed_codes != 0
        jstop[bad0] = np.where(seed_codes[bad0] == 1, STOP_BOUNDARY,
                               STOP_DEGENERATE)

        have_sing = sing is not None and len(sing) > 0
        if have_sing:
            sing = np.ascontiguousarray(sing, dtype=np.float64)
            r2 = r_sing * r_sing

        ids = np.flatnonzero(~bad0)
        X = seed_of_job[ids].copy()
        D = d_init[ids].copy()
        D0 = d_init[ids].copy()
        SEED = seed_of_job[ids].copy()
        S = np.zeros(ids.size)
        buffers: list[list[np.ndarray]] = [[] for _ in range(J)]

        epoch = 256
        while ids.size:
            blk = np.empty((ids.size, epoch, 2))
            cnt = np.zeros(ids.size, dtype=np.int64)
            row_alive = np.ones(ids.size, dtype=bool)
            for step_i in range(epoch):
                rows = np.flatnonzero(row_alive)
                if rows.size == 0:
                    break
                x = X[rows]

                k1, c1 = _fetch_dir(mode, xi, cg3, k, okmask, lower, dx, x,
                                    D[rows], eps_deg)
                bad = c1 != 0
                if bad.any():
                    rr = rows[bad]
                    jstop[ids[rr]] = np.where(c1[bad] == 1, STOP_BOUNDARY,
                                              STOP_DEGENERATE)
                    row_alive[rr] = False
                    rows, x, k1 = rows[~bad], x[~bad], k1[~bad]
                if rows.size == 0:
                    continue
                k2, c2 = _fetch_dir(mode, xi, cg3, k, okmask, lower, dx,
                                    x + (0.5 * h) * k1, k1, eps_deg)
                k3, c3 = _fetch_dir(mode, xi, cg3, k, okmask, lower, dx,
                                    x + (0.5 * h) * k2, k2, eps_deg)
                k4, c4 = _fetch_dir(mode, xi, cg3, k, okmask, lower, dx,
                                    x + h * k3, k3, eps_deg)
                cbad = np.maximum(np.maximum(c2, c3), c4)
                bad = cbad != 0
                if bad.any():
                    rr = rows[bad]
                    jstop[ids[rr]] = np.where(cbad[bad] == 1, STOP_BOUNDARY,
                                              STOP_DEGENERATE)
                    row_alive[rr] = False
                    rows, x = rows[~bad], x[~bad]
                    k1, k2, k3, k4 = k1[~bad], k2[~bad], k3[~bad], k4[~bad]
                if rows.size == 0:
                    continue

                delta = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                dl = np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2)
                short = dl < 0.5 * h
                if short.any():
                    rr = rows[short]
                    jstop[ids[rr]] = STOP_DEGENERATE
                    row_alive[rr] = False
                    rows, x = rows[~short], x[~short]
                    delta, dl = delta[~short], dl[~short]
                if rows.size == 0:
                    continue

                xn = x + delta
                tn = delta / dl[:, None]
                X[rows] = xn
                D[rows] = tn
                S[rows] += dl
                blk[rows, step_i] = xn
                cnt[rows] += 1

                if have_sing:
                    d2 = ((xn[:, 0][:, None] - sing[None, :, 0]) ** 2
                          + (xn[:, 1][:, None] - sing[None, :, 1]) ** 2)
                    hit = d2.min(axis=1) < r2
                    if hit.any():
                        rr = rows[hit]
                        jstop[ids[rr]] = STOP_SINGULARITY
                        row_alive[rr] = False
                        rows, xn, tn = rows[~hit], xn[~hit], tn[~hit]
                if rows.size == 0:
                    continue

                dseed = np.sqrt((xn[:, 0] - SEED[rows, 0]) ** 2
                                + (xn[:, 1] - SEED[rows, 1]) ** 2)
                closed = ((S[rows] > 2.0 * h) & (dseed < 0.5 * h)
                          & (tn[:, 0] * D0[rows, 0]
                             + tn[:, 1] * D0[rows, 1] > 0.0))
                if closed.any():
                    rr = rows[closed]
                    jstop[ids[rr]] = STOP_CLOSED
                    row_alive[rr] = False
                    rows = rows[~closed]
                if rows.size == 0:
                    continue

                over = S[rows] >= lmax_half
                if over.any():
                    rr = rows[over]
                    jstop[ids[rr]] = STOP_MAX_LENGTH
                    row_alive[rr] = False

            for r in range(ids.size):
                if cnt[r]:
                    buffers[ids[r]].append(blk[r, :cnt[r]].copy())
            keep = row_alive
            X, D, D0, SEED, S, ids = (X[keep], D[keep], D0[keep], SEED[keep],
                                      S[keep], ids[keep])

    out = []
    empty = np.empty((0, 2))
    for si in range(m):
        jp, jn = 2 * si, 2 * si + 1
        pp = np.concatenate(buffers[jp]) if buffers[jp] else empty
        pn = np.concatenate(buffers[jn]) if buffers[jn] else empty
        out.append((pp, int(jstop[jp]), pn, int(jstop[jn])))
    return out
