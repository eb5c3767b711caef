# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled compute kernels: batch trajectory integration and line tracing.

Scalar per-trajectory twin of ``lcskit._kernels_py``. The arithmetic is
written in the same operation order as the NumPy code so both backends agree
to rounding; keep the two files in sync when changing either.
"""

import numpy as np

from libc.math cimport (atan2, ceil, cos, fabs, floor, fmax, fmin, hypot,
                        isfinite, pow, sin, sqrt)

IS_COMPILED = True

CODE_ZERO = 0
CODE_LINEAR = 1
CODE_DUFFING = 2
CODE_ABC = 3
CODE_DOUBLE_GYRE = 4
CODE_GRIDDED = 5
CODE_CALLABLE = -1

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

cdef enum:
    F_ZERO = 0
    F_LINEAR = 1
    F_DUFFING = 2
    F_ABC = 3
    F_DGYRE = 4
    F_GRIDDED = 5

cdef enum:
    ST_OK = 0
    ST_ESCAPED = 1
    ST_DIVERGED = 2

cdef enum:
    SR_BOUNDARY = 0
    SR_SINGULARITY = 1
    SR_DEGENERATE = 2
    SR_MAX_LENGTH = 3
    SR_CLOSED = 4

cdef enum:
    FM_VECTOR = 0
    FM_TENSOR = 1

cdef enum:
    M_RK4 = 0
    M_RK45 = 1

cdef double PI = 3.141592653589793
cdef double CELL_TOL = 1e-9
cdef double NAN_ = float("nan")
cdef double INF_ = float("inf")

# Dormand-Prince 5(4) tableau, FSAL
cdef double C2 = 0.2, C3 = 0.3, C4 = 0.8, C5 = 8.0 / 9.0
cdef double A21 = 0.2
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0
cdef double A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0
cdef double A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0

cdef double SAFE = 0.9
cdef double BETA = 0.04
cdef double EXPO1 = 0.2 - 0.04 * 0.75


cdef struct CField:
    int code
    int n
    double p0
    double p1
    double p2
    const double* M
    # gridded data
    const double* times
    const double* samples
    long nt
    long k0
    long k1
    long k2
    long s0
    long s1
    long s2
    double glo0
    double glo1
    double glo2
    double gdx0
    double gdx1
    double gdx2
    int per0
    int per1
    int per2


cdef struct Bounds:
    int n
    double lo0
    double lo1
    double lo2
    double hi0
    double hi1
    double hi2
    double tol0
    double tol1
    double tol2
    int m0
    int m1
    int m2


cdef inline bint axis_rel(const CField* f, int axis, double x, double* rel) nogil:
    """Cell-unit coordinate of x on a gridded axis; False when out of range."""
    cdef double lo, dx
    cdef long kk
    cdef int per
    cdef double span, r
    if axis == 0:
        lo = f.glo0; dx = f.gdx0; kk = f.k0; per = f.per0
    elif axis == 1:
        lo = f.glo1; dx = f.gdx1; kk = f.k1; per = f.per1
    else:
        lo = f.glo2; dx = f.gdx2; kk = f.k2; per = f.per2
    if not isfinite(x):
        rel[0] = 0.0
        return False
    if per:
        span = dx * (kk - 1)
        r = (x - lo) / span
        r = (r - floor(r)) * (kk - 1)
    else:
        r = (x - lo) / dx
        if r < -CELL_TOL or r > (kk - 1) + CELL_TOL:
            rel[0] = r
            return False
    rel[0] = r
    return True


cdef bint eval_gridded_c(const CField* f, const double* x, double t,
                         double* out) nogil:
    cdef bint ok = True
    cdef double tspan, ttol, wt
    cdef long j, jhi, ci
    cdef double rel
    cdef long cell[3]
    cdef double w[3]
    cdef int i, comp, n = f.n
    cdef long kk, base, offs, idx
    cdef int corner, bit
    cdef double wgt, vlo, vhi
    cdef long stride[3]
    cdef long lo_off, hi_off

    if not isfinite(t):
        ok = False
        t = f.times[0]
    tspan = f.times[f.nt - 1] - f.times[0]
    ttol = 1e-12 * fmax(fabs(tspan), 1.0)
    if t < f.times[0] - ttol or t > f.times[f.nt - 1] + ttol:
        ok = False
    if f.nt > 1:
        # upper-bound binary search, then clamp
        j = 0
        kk = f.nt
        while kk > j + 1:
            ci = (j + kk) // 2
            if f.times[ci] <= t:
                j = ci
            else:
                kk = ci
        if t < f.times[0]:
            j = 0
        if j > f.nt - 2:
            j = f.nt - 2
        wt = (t - f.times[j]) / (f.times[j + 1] - f.times[j])
        if wt < 0.0:
            wt = 0.0
        elif wt > 1.0:
            wt = 1.0
    else:
        j = 0
        wt = 0.0

    for i in range(n):
        if not axis_rel(f, i, x[i], &rel):
            ok = False
            if not isfinite(rel):
                rel = 0.0
        kk = f.k0 if i == 0 else (f.k1 if i == 1 else f.k2)
        ci = <long>floor(rel)
        if ci < 0:
            ci = 0
        if ci > kk - 2:
            ci = kk - 2
        cell[i] = ci
        w[i] = rel - ci
        if w[i] < 0.0:
            w[i] = 0.0
        elif w[i] > 1.0:
            w[i] = 1.0

    stride[0] = f.s0
    stride[1] = f.s1
    stride[2] = f.s2
    base = 0
    for i in range(n):
        base += cell[i] * stride[i]
    jhi = j + 1
    if jhi > f.nt - 1:
        jhi = f.nt - 1
    lo_off = j * (f.s0 * (f.k0 if n >= 1 else 1))
    # node block size = total nodes * n components
    cdef long nodes = 1
    if n == 2:
        nodes = f.k0 * f.k1
    else:
        nodes = f.k0 * f.k1 * f.k2
    lo_off = j * nodes * n
    hi_off = jhi * nodes * n

    for comp in range(n):
        out[comp] = 0.0
    for corner in range(1 << n):
        offs = 0
        wgt = 1.0
        for i in range(n):
            bit = (corner >> (n - 1 - i)) & 1
            offs += bit * stride[i]
            wgt = wgt * (w[i] if bit else (1.0 - w[i]))
        idx = (base + offs) * n
        for comp in range(n):
            out[comp] += wgt * ((1.0 - wt) * f.samples[lo_off + idx + comp]
                                + wt * f.samples[hi_off + idx + comp])
    if not ok:
        for comp in range(n):
            out[comp] = NAN_
    return ok


cdef inline bint f_eval(const CField* f, const double* x, double t,
                        double* out) nogil:
    cdef double x0, st, fx, dfdx
    cdef int i, jj
    cdef double acc
    if f.code == F_ZERO:
        for i in range(f.n):
            out[i] = 0.0
        return True
    if f.code == F_LINEAR:
        for i in range(f.n):
            acc = 0.0
            for jj in range(f.n):
                acc += f.M[i * f.n + jj] * x[jj]
            out[i] = acc
        return True
    if f.code == F_DUFFING:
        x0 = x[0]
        out[0] = x[1]
        out[1] = 4.0 * x0 - x0 * x0 * x0
        return True
    if f.code == F_ABC:
        out[0] = f.p0 * sin(x[2]) + f.p2 * cos(x[1])
        out[1] = f.p1 * sin(x[0]) + f.p0 * cos(x[2])
        out[2] = f.p2 * sin(x[1]) + f.p1 * cos(x[0])
        return True
    if f.code == F_DGYRE:
        st = sin(f.p2 * t)
        x0 = x[0]
        fx = f.p1 * st * x0 * x0 + (1.0 - 2.0 * f.p1 * st) * x0
        dfdx = 2.0 * f.p1 * st * x0 + 1.0 - 2.0 * f.p1 * st
        out[0] = -PI * f.p0 * sin(PI * fx) * cos(PI * x[1])
        out[1] = PI * f.p0 * cos(PI * fx) * sin(PI * x[1]) * dfdx
        return True
    return eval_gridded_c(f, x, t, out)


cdef inline bint escaped_c(const Bounds* b, const double* x) nogil:
    if b.m0 and (x[0] < b.lo0 - b.tol0 or x[0] > b.hi0 + b.tol0):
        return True
    if b.m1 and (x[1] < b.lo1 - b.tol1 or x[1] > b.hi1 + b.tol1):
        return True
    if b.n > 2 and b.m2 and (x[2] < b.lo2 - b.tol2 or x[2] > b.hi2 + b.tol2):
        return True
    return False


cdef inline double rms_c(const double* v, const double* sc, int n) nogil:
    cdef double acc = 0.0
    cdef double r
    cdef int i
    for i in range(n):
        r = v[i] / sc[i]
        acc += r * r
    return sqrt(acc / n)


cdef int dp45_one(const CField* f, const Bounds* bnd, double* x, double t0,
                  double t1, double rtol, double atol, long max_steps,
                  double* t_reached) nogil:
    cdef int n = f.n
    cdef double dirn = 1.0 if t1 > t0 else -1.0
    cdef double span = fabs(t1 - t0)
    cdef double K1[3]
    cdef double K2[3]
    cdef double K3[3]
    cdef double K4[3]
    cdef double K5[3]
    cdef double K6[3]
    cdef double K7[3]
    cdef double Y[3]
    cdef double Y5[3]
    cdef double E[3]
    cdef double sc[3]
    cdef double f1[3]
    cdef double d[3]
    cdef double t = t0
    cdef double h, h0, h1, d0n, d1n, d2n, dmaxn
    cdef double err, fac11, fac, hnew, tn, facold
    cdef bint rejected = False, land, okstage
    cdef long nstep = 0
    cdef int i

    if not f_eval(f, x, t0, K1):
        t_reached[0] = t0
        return ST_ESCAPED

    for i in range(n):
        sc[i] = atol + rtol * fabs(x[i])
    d0n = rms_c(x, sc, n)
    d1n = rms_c(K1, sc, n)
    if d0n < 1e-5 or d1n < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0n / fmax(d1n, 1e-300)
    h0 = fmin(h0, span)
    for i in range(n):
        Y[i] = x[i] + h0 * dirn * K1[i]
    if not f_eval(f, Y, t0 + h0 * dirn, f1):
        for i in range(n):
            f1[i] = K1[i]
    for i in range(n):
        d[i] = f1[i] - K1[i]
    d2n = rms_c(d, sc, n) / fmax(h0, 1e-300)
    dmaxn = fmax(d1n, d2n)
    if dmaxn <= 1e-15:
        h1 = fmax(1e-6, h0 * 1e-3)
    else:
        h1 = pow(0.01 / fmax(dmaxn, 1e-300), 0.2)
    h = dirn * fmin(fmin(100.0 * h0, h1), span)
    facold = 1e-4

    while True:
        nstep += 1
        land = (t + h - t1) * dirn >= 0.0
        if land:
            h = t1 - t

        okstage = True
        for i in range(n):
            Y[i] = x[i] + h * A21 * K1[i]
        okstage = f_eval(f, Y, t + C2 * h, K2) and okstage
        for i in range(n):
            Y[i] = x[i] + h * (A31 * K1[i] + A32 * K2[i])
        okstage = f_eval(f, Y, t + C3 * h, K3) and okstage
        for i in range(n):
            Y[i] = x[i] + h * (A41 * K1[i] + A42 * K2[i] + A43 * K3[i])
        okstage = f_eval(f, Y, t + C4 * h, K4) and okstage
        for i in range(n):
            Y[i] = x[i] + h * (A51 * K1[i] + A52 * K2[i] + A53 * K3[i]
                               + A54 * K4[i])
        okstage = f_eval(f, Y, t + C5 * h, K5) and okstage
        for i in range(n):
            Y[i] = x[i] + h * (A61 * K1[i] + A62 * K2[i] + A63 * K3[i]
                               + A64 * K4[i] + A65 * K5[i])
        okstage = f_eval(f, Y, t + h, K6) and okstage
        for i in range(n):
            Y5[i] = x[i] + h * (B1 * K1[i] + B3 * K3[i] + B4 * K4[i]
                                + B5 * K5[i] + B6 * K6[i])
        okstage = f_eval(f, Y5, t + h, K7) and okstage

        if not okstage:
            t_reached[0] = t
            return ST_ESCAPED

        for i in range(n):
            E[i] = h * (E1 * K1[i] + E3 * K3[i] + E4 * K4[i] + E5 * K5[i]
                        + E6 * K6[i] + E7 * K7[i])
            sc[i] = atol + rtol * fmax(fabs(x[i]), fabs(Y5[i]))
        err = rms_c(E, sc, n)

        if err <= 1.0:
            tn = t1 if land else t + h
            if escaped_c(bnd, Y5):
                for i in range(n):
                    x[i] = Y5[i]
                t_reached[0] = tn
                return ST_ESCAPED
            if land:
                for i in range(n):
                    x[i] = Y5[i]
                t_reached[0] = t1
                return ST_OK
            for i in range(n):
                x[i] = Y5[i]
                K1[i] = K7[i]
            t = tn

        fac11 = pow(err, EXPO1)
        fac = fmax(0.1, fmin(5.0, (fac11 / pow(facold, BETA)) / SAFE))
        if err <= 1.0:
            hnew = h / fac
            if rejected:
                hnew = dirn * fmin(fabs(hnew), fabs(h))
            facold = fmax(err, 1e-4)
            rejected = False
        else:
            hnew = h / fmin(5.0, fac11 / SAFE)
            rejected = True
        h = hnew

        if fabs(h) < 2.3e-13 * fmax(1.0, fabs(t)) or nstep >= max_steps:
            t_reached[0] = t
            return ST_DIVERGED


cdef int rk4_one(const CField* f, const Bounds* bnd, double* x, double t0,
                 double t1, long nsteps, double* t_reached) nogil:
    cdef int n = f.n
    cdef double h = (t1 - t0) / nsteps
    cdef double K1[3]
    cdef double K2[3]
    cdef double K3[3]
    cdef double K4[3]
    cdef double Y[3]
    cdef double Xn[3]
    cdef double t, tn
    cdef long k
    cdef int i
    cdef bint okstage

    for k in range(nsteps):
        t = t0 + k * h
        okstage = f_eval(f, x, t, K1)
        for i in range(n):
            Y[i] = x[i] + (0.5 * h) * K1[i]
        okstage = f_eval(f, Y, t + 0.5 * h, K2) and okstage
        for i in range(n):
            Y[i] = x[i] + (0.5 * h) * K2[i]
        okstage = f_eval(f, Y, t + 0.5 * h, K3) and okstage
        for i in range(n):
            Y[i] = x[i] + h * K3[i]
        okstage = f_eval(f, Y, t + h, K4) and okstage
        if not okstage:
            t_reached[0] = t
            return ST_ESCAPED
        for i in range(n):
            Xn[i] = x[i] + (h / 6.0) * (K1[i] + 2.0 * K2[i] + 2.0 * K3[i]
                                        + K4[i])
        tn = t1 if k == nsteps - 1 else t0 + (k + 1) * h
        for i in range(n):
            x[i] = Xn[i]
        if escaped_c(bnd, x):
            t_reached[0] = tn
            return ST_ESCAPED
    t_reached[0] = t1
    return ST_OK


cdef void unpack_field(pack, CField* f, list keep):
    """Fill a CField from the shared pack tuple; ``keep`` pins array refs."""
    cdef int code = pack[0]
    f.code = code
    f.M = NULL
    f.times = NULL
    f.samples = NULL
    f.p0 = f.p1 = f.p2 = 0.0
    cdef const double[::1] pars
    cdef const double[::1] times
    cdef const double[:, :, ::1] samples
    cdef const long[::1] shape
    cdef const double[::1] lower
    cdef const double[::1] dx
    cdef const unsigned char[::1] per
    if code == F_LINEAR:
        pars = pack[1]
        keep.append(pars)
        f.M = &pars[0]
    elif code in (F_ABC, F_DGYRE):
        pars = pack[1]
        keep.append(pars)
        f.p0 = pars[0]
        f.p1 = pars[1]
        f.p2 = pars[2]
    elif code == F_GRIDDED:
        times, samples, shape, lower, dx, per = pack[2]
        keep.append(times)
        keep.append(samples)
        f.times = &times[0]
        f.samples = &samples[0, 0, 0]
        f.nt = times.shape[0]
        f.k0 = shape[0]
        f.k1 = shape[1] if shape.shape[0] > 1 else 1
        f.k2 = shape[2] if shape.shape[0] > 2 else 1
        f.glo0 = lower[0]
        f.glo1 = lower[1] if lower.shape[0] > 1 else 0.0
        f.glo2 = lower[2] if lower.shape[0] > 2 else 0.0
        f.gdx0 = dx[0]
        f.gdx1 = dx[1] if dx.shape[0] > 1 else 1.0
        f.gdx2 = dx[2] if dx.shape[0] > 2 else 1.0
        f.per0 = per[0]
        f.per1 = per[1] if per.shape[0] > 1 else 0
        f.per2 = per[2] if per.shape[0] > 2 else 0
        if shape.shape[0] == 2:
            f.s0 = f.k1
            f.s1 = 1
            f.s2 = 0
        else:
            f.s0 = f.k1 * f.k2
            f.s1 = f.k2
            f.s2 = 1


def integrate_batch(pack, X0, t0, t1, method, step, rel_tol, abs_tol,
                    max_steps, chk_lo, chk_hi, chk_mask):
    """Compiled twin of ``_kernels_py.integrate_batch``."""
    X0 = np.ascontiguousarray(X0, dtype=np.float64)
    cdef long m = X0.shape[0]
    cdef int n = X0.shape[1]
    if t1 == t0 or m == 0:
        return (X0.copy(), np.zeros(m, dtype=np.uint8),
                np.full(m, float(t1)))

    out = X0.copy()
    status_arr = np.zeros(m, dtype=np.uint8)
    t_exit_arr = np.full(m, float(t1))
    cdef double[:, ::1] X = out
    cdef unsigned char[::1] status = status_arr
    cdef double[::1] t_exit = t_exit_arr

    keep = []
    cdef CField fld
    unpack_field(pack, &fld, keep)
    fld.n = n

    lo = np.ascontiguousarray(chk_lo, dtype=np.float64)
    hi = np.ascontiguousarray(chk_hi, dtype=np.float64)
    mk = np.ascontiguousarray(chk_mask, dtype=np.uint8)
    cdef Bounds bnd
    bnd.n = n
    bnd.lo0 = lo[0]; bnd.hi0 = hi[0]; bnd.m0 = mk[0]
    bnd.lo1 = lo[1]; bnd.hi1 = hi[1]; bnd.m1 = mk[1]
    bnd.tol0 = 1e-12 * (bnd.hi0 - bnd.lo0)
    bnd.tol1 = 1e-12 * (bnd.hi1 - bnd.lo1)
    if n > 2:
        bnd.lo2 = lo[2]; bnd.hi2 = hi[2]; bnd.m2 = mk[2]
        bnd.tol2 = 1e-12 * (bnd.hi2 - bnd.lo2)
    else:
        bnd.lo2 = 0.0; bnd.hi2 = 0.0; bnd.m2 = 0; bnd.tol2 = 0.0

    cdef double tt0 = float(t0), tt1 = float(t1)
    cdef double rtol = float(rel_tol), atol = float(abs_tol)
    cdef double hstep = float(step)
    cdef long msteps = int(max_steps)
    cdef int meth = int(method)
    cdef long i
    cdef long nsteps
    cdef double texit
    cdef double xbuf[3]
    cdef int j

    if meth == M_RK4:
        nsteps = <long>ceil(fabs(tt1 - tt0) / hstep)
        if nsteps < 1:
            nsteps = 1
        if nsteps > msteps:
            return (X0.copy(), np.full(m, ST_DIVERGED, dtype=np.uint8),
                    np.full(m, float(t0)))

    with nogil:
        for i in range(m):
            for j in range(n):
                xbuf[j] = X[i, j]
            if meth == M_RK4:
                status[i] = <unsigned char>rk4_one(&fld, &bnd, xbuf, tt0, tt1,
                                                   nsteps, &texit)
            else:
                status[i] = <unsigned char>dp45_one(&fld, &bnd, xbuf, tt0,
                                                    tt1, rtol, atol, msteps,
                                                    &texit)
            t_exit[i] = texit
            for j in range(n):
                X[i, j] = xbuf[j]
    return out, status_arr, t_exit_arr


# ---------------------------------------------------------------------------
# eigenvector-line tracing
# ---------------------------------------------------------------------------

cdef int c_fetch(int mode, const double[:, :, ::1] xi,
                 const double[:, :, ::1] cg3, int k,
                 const unsigned char[:, ::1] okm, double lo0, double lo1,
                 double dx0, double dx1, double px, double py, double rx,
                 double ry, bint have_ref, double eps_deg, double* ox,
                 double* oy) nogil:
    cdef long n0 = okm.shape[0], n1 = okm.shape[1]
    cdef double r0, r1, w0, w1
    cdef long i, j
    cdef int code = 0
    cdef double v00x, v00y, v01x, v01y, v10x, v10y, v11x, v11y
    cdef double rvx, rvy, s, vx, vy, nrm
    cdef double a, b, c, mid, rad, lam2, gap, th
    cdef double w00, w01, w10, w11

    if not (isfinite(px) and isfinite(py)):
        r0 = -1.0
        r1 = -1.0
    else:
        r0 = (px - lo0) / dx0
        r1 = (py - lo1) / dx1
    if (r0 < -CELL_TOL or r0 > (n0 - 1) + CELL_TOL
            or r1 < -CELL_TOL or r1 > (n1 - 1) + CELL_TOL):
        code = 1
    i = <long>floor(r0)
    if i < 0:
        i = 0
    if i > n0 - 2:
        i = n0 - 2
    j = <long>floor(r1)
    if j < 0:
        j = 0
    if j > n1 - 2:
        j = n1 - 2
    w0 = r0 - i
    if w0 < 0.0:
        w0 = 0.0
    elif w0 > 1.0:
        w0 = 1.0
    w1 = r1 - j
    if w1 < 0.0:
        w1 = 0.0
    elif w1 > 1.0:
        w1 = 1.0

    if code == 0 and not (okm[i, j] and okm[i, j + 1] and okm[i + 1, j]
                          and okm[i + 1, j + 1]):
        code = 2

    w00 = (1.0 - w0) * (1.0 - w1)
    w01 = (1.0 - w0) * w1
    w10 = w0 * (1.0 - w1)
    w11 = w0 * w1

    if mode == FM_VECTOR:
        v00x = xi[i, j, 0]; v00y = xi[i, j, 1]
        v01x = xi[i, j + 1, 0]; v01y = xi[i, j + 1, 1]
        v10x = xi[i + 1, j, 0]; v10y = xi[i + 1, j, 1]
        v11x = xi[i + 1, j + 1, 0]; v11y = xi[i + 1, j + 1, 1]
        if have_ref:
            rvx = rx; rvy = ry
        else:
            rvx = v00x; rvy = v00y
        s = v00x * rvx + v00y * rvy
        if s < 0.0:
            v00x = -v00x; v00y = -v00y
        s = v01x * rvx + v01y * rvy
        if s < 0.0:
            v01x = -v01x; v01y = -v01y
        s = v10x * rvx + v10y * rvy
        if s < 0.0:
            v10x = -v10x; v10y = -v10y
        s = v11x * rvx + v11y * rvy
        if s < 0.0:
            v11x = -v11x; v11y = -v11y
        vx = w00 * v00x + w01 * v01x + w10 * v10x + w11 * v11x
        vy = w00 * v00y + w01 * v01y + w10 * v10y + w11 * v11y
        nrm = sqrt(vx * vx + vy * vy)
        if code == 0 and not (nrm > 1e-12):
            code = 2
        nrm = fmax(nrm, 1e-300)
        ox[0] = vx / nrm
        oy[0] = vy / nrm
        return code

    a = (w00 * cg3[i, j, 0] + w01 * cg3[i, j + 1, 0]
         + w10 * cg3[i + 1, j, 0] + w11 * cg3[i + 1, j + 1, 0])
    b = (w00 * cg3[i, j, 1] + w01 * cg3[i, j + 1, 1]
         + w10 * cg3[i + 1, j, 1] + w11 * cg3[i + 1, j + 1, 1])
    c = (w00 * cg3[i, j, 2] + w01 * cg3[i, j + 1, 2]
         + w10 * cg3[i + 1, j, 2] + w11 * cg3[i + 1, j + 1, 2])
    mid = 0.5 * (a + c)
    rad = hypot(0.5 * (a - c), b)
    lam2 = mid + rad
    gap = (2.0 * rad) / fmax(lam2, 1e-300)
    if code == 0 and not (lam2 > 0.0 and gap >= eps_deg):
        code = 2
    th = 0.5 * atan2(2.0 * b, a - c)
    if k == 1:
        vx = cos(th); vy = sin(th)
    else:
        vx = -sin(th); vy = cos(th)
    if have_ref:
        s = vx * rx + vy * ry
        if s < 0.0:
            vx = -vx; vy = -vy
    ox[0] = vx
    oy[0] = vy
    return code


cdef int trace_half(int mode, const double[:, :, ::1] xi,
                    const double[:, :, ::1] cg3, int k,
                    const unsigned char[:, ::1] okm, double lo0, double lo1,
                    double dx0, double dx1, double sx, double sy, double d0x,
                    double d0y, double h, double lmax_half,
                    const double[:, ::1] sing, long ns, double r_sing,
                    double eps_deg, double[:, ::1] buf, long maxp,
                    long* count) nogil:
    cdef double x0 = sx, x1 = sy
    cdef double dx_ = d0x, dy_ = d0y
    cdef double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y
    cdef double deltax, deltay, dl, xnx, xny, tnx, tny, s = 0.0
    cdef double dseed, r2 = r_sing * r_sing, d2, d2min
    cdef int c1, c2, c3, c4, cbad
    cdef long it, q
    count[0] = 0

    for it in range(maxp):
        c1 = c_fetch(mode, xi, cg3, k, okm, lo0, lo1, dx0, dx1, x0, x1,
                     dx_, dy_, True, eps_deg, &k1x, &k1y)
        if c1 != 0:
            return SR_BOUNDARY if c1 == 1 else SR_DEGENERATE
        c2 = c_fetch(mode, xi, cg3, k, okm, lo0, lo1, dx0, dx1,
                     x0 + 0.5 * h * k1x, x1 + 0.5 * h * k1y, k1x, k1y, True,
                     eps_deg, &k2x, &k2y)
        c3 = c_fetch(mode, xi, cg3, k, okm, lo0, lo1, dx0, dx1,
                     x0 + 0.5 * h * k2x, x1 + 0.5 * h * k2y, k2x, k2y, True,
                     eps_deg, &k3x, &k3y)
        c4 = c_fetch(mode, xi, cg3, k, okm, lo0, lo1, dx0, dx1,
                     x0 + h * k3x, x1 + h * k3y, k3x, k3y, True, eps_deg,
                     &k4x, &k4y)
        cbad = c2
        if c3 > cbad:
            cbad = c3
        if c4 > cbad:
            cbad = c4
        if cbad != 0:
            return SR_BOUNDARY if cbad == 1 else SR_DEGENERATE

        deltax = (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        deltay = (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        dl = sqrt(deltax * deltax + deltay * deltay)
        if dl < 0.5 * h:
            return SR_DEGENERATE

        xnx = x0 + deltax
        xny = x1 + deltay
        tnx = deltax / dl
        tny = deltay / dl
        buf[count[0], 0] = xnx
        buf[count[0], 1] = xny
        count[0] += 1
        s += dl
        x0 = xnx
        x1 = xny
        dx_ = tnx
        dy_ = tny

        if ns > 0:
            d2min = INF_
            for q in range(ns):
                d2 = ((xnx - sing[q, 0]) * (xnx - sing[q, 0])
                      + (xny - sing[q, 1]) * (xny - sing[q, 1]))
                if d2 < d2min:
                    d2min = d2
            if d2min < r2:
                return SR_SINGULARITY

        dseed = sqrt((xnx - sx) * (xnx - sx) + (xny - sy) * (xny - sy))
        if s > 2.0 * h and dseed < 0.5 * h and (tnx * d0x + tny * d0y) > 0.0:
            return SR_CLOSED
        if s >= lmax_half:
            return SR_MAX_LENGTH
    return SR_MAX_LENGTH


def trace_lines(mode, xi, cg3, k, okmask, lower, dx, seeds, h, lmax_half,
                sing, r_sing, eps_deg):
    """Compiled twin of ``_kernels_py.trace_lines``."""
    cdef double[:, :, ::1] xi_v = np.ascontiguousarray(xi, dtype=np.float64)
    cdef double[:, :, ::1] cg3_v = np.ascontiguousarray(cg3, dtype=np.float64)
    cdef unsigned char[:, ::1] ok_v = np.ascontiguousarray(okmask,
                                                           dtype=np.uint8)
    seeds_arr = np.ascontiguousarray(seeds, dtype=np.float64)
    cdef double[:, ::1] seeds_v = seeds_arr
    cdef double lo0 = lower[0], lo1 = lower[1]
    cdef double ddx0 = dx[0], ddx1 = dx[1]
    cdef double hh = float(h), lmaxh = float(lmax_half)
    cdef double rs = float(r_sing), ed = float(eps_deg)
    cdef int kk = int(k), md = int(mode)
    cdef long m = seeds_arr.shape[0]

    if sing is None or len(sing) == 0:
        sing_arr = np.zeros((1, 2))
        ns = 0
    else:
        sing_arr = np.ascontiguousarray(sing, dtype=np.float64)
        ns = sing_arr.shape[0]
    cdef double[:, ::1] sing_v = sing_arr
    cdef long ns_c = ns

    cdef long maxp = <long>(lmaxh / (0.5 * hh)) + 8
    buf_pos = np.empty((maxp, 2))
    buf_neg = np.empty((maxp, 2))
    cdef double[:, ::1] bp = buf_pos
    cdef double[:, ::1] bn = buf_neg

    out = []
    empty = np.empty((0, 2))
    cdef double v0x, v0y, sx, sy
    cdef long cp, cn
    cdef int c0, stop_p, stop_n
    cdef long si
    for si in range(m):
        sx = seeds_v[si, 0]
        sy = seeds_v[si, 1]
        with nogil:
            c0 = c_fetch(md, xi_v, cg3_v, kk, ok_v, lo0, lo1, ddx0, ddx1,
                         sx, sy, 0.0, 0.0, False, ed, &v0x, &v0y)
        if c0 != 0:
            stop_p = SR_BOUNDARY if c0 == 1 else SR_DEGENERATE
            out.append((empty, stop_p, empty, stop_p))
            continue
        with nogil:
            stop_p = trace_half(md, xi_v, cg3_v, kk, ok_v, lo0, lo1, ddx0,
                                ddx1, sx, sy, v0x, v0y, hh, lmaxh, sing_v,
                                ns_c, rs, ed, bp, maxp, &cp)
            stop_n = trace_half(md, xi_v, cg3_v, kk, ok_v, lo0, lo1, ddx0,
                                ddx1, sx, sy, -v0x, -v0y, hh, lmaxh, sing_v,
                                ns_c, rs, ed, bn, maxp, &cn)
        out.append((buf_pos[:cp].copy(), stop_p, buf_neg[:cn].copy(), stop_n))
    return out
