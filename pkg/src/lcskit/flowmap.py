"""Flow-map computation: trajectory grids and finite-difference gradients.

The flow map F_a^b sends an initial condition at time a to its position at
time b. Its spatial gradient is estimated per seed from 2n auxiliary
trajectories started at x0 +/- aux_offset * e_i, which stays accurate long
after neighboring main-grid seeds have separated exponentially.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import json

import numpy as np

from . import backend
from .errors import (DivergenceError, EscapeError, FormatError,
                     UnavailableError, ValidationError)
from .flowfield import Domain, VelocityField

FMG_MAGIC = "FMG1"

STATUS_OK = backend.STATUS_OK
STATUS_ESCAPED = backend.STATUS_ESCAPED
STATUS_DIVERGED = backend.STATUS_DIVERGED


@dataclass(frozen=True)
class IntegratorParams:
    """Time-stepping configuration for trajectory integration."""

    method: str = "rk45_adaptive"   # or "rk4_fixed"
    step: float = 1e-2              # fixed-step size
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.method not in ("rk45_adaptive", "rk4_fixed"):
            raise ValidationError(f"unknown method {self.method!r}")
        if not (self.step > 0 and self.rel_tol > 0 and self.abs_tol > 0):
            raise ValidationError("step and tolerances must be positive")
        if self.max_steps <= 0:
            raise ValidationError("max_steps must be positive")

    @property
    def method_code(self):
        return (backend.METHOD_RK4_FIXED if self.method == "rk4_fixed"
                else backend.METHOD_RK45)


@dataclass(frozen=True)
class FlowMapGrid:
    """Final positions of a seed grid and its auxiliary points over [a, b].

    ``aux_finals[..., i, 0, :]`` is the final position of the seed offset by
    ``+aux_offset`` along axis i, ``[..., i, 1, :]`` the ``-aux_offset`` one.
    Positions are stored unwrapped even on periodic domains so that the
    gradient differences stay meaningful.
    """

    a: float
    b: float
    grid_shape: tuple
    lower: tuple
    upper: tuple
    aux_offset: float
    seeds: np.ndarray        # (*grid_shape, n)
    finals: np.ndarray       # (*grid_shape, n)
    aux_finals: np.ndarray   # (*grid_shape, n, 2, n)
    status: np.ndarray       # (*grid_shape,) uint8

    @property
    def n(self):
        return len(self.grid_shape)

    @property
    def spacing(self):
        return tuple((u - l) / (s - 1) for l, u, s in
                     zip(self.lower, self.upper, self.grid_shape))

    def node_axes(self):
        return [np.linspace(self.lower[i], self.upper[i], self.grid_shape[i])
                for i in range(self.n)]


def _check_time_range(field: VelocityField, t0, t1):
    lo, hi = field.time_range
    tol = 1e-12 * max(abs(hi - lo), 1.0) if np.isfinite(hi - lo) else 0.0
    if min(t0, t1) < lo - tol or max(t0, t1) > hi + tol:
        raise ValidationError(
            f"[{min(t0, t1)}, {max(t0, t1)}] outside field time range [{lo}, {hi}]")


def integrate_batch(field: VelocityField, X0, t0, t1,
                    p: IntegratorParams | None = None, threads: int = 1):
    """Advance (m, n) initial conditions from t0 to t1.

    Returns (X1, status, t_exit); per-trajectory results are independent of
    ``threads``, which only splits the batch across workers.
    """
    p = p or IntegratorParams()
    _check_time_range(field, t0, t1)
    X0 = np.ascontiguousarray(X0, dtype=float)
    lo, hi, mask = field.escape_bounds()
    args = (float(t0), float(t1), p.method_code, p.step, p.rel_tol, p.abs_tol,
            p.max_steps, lo, hi, mask)
    m = X0.shape[0]
    if threads <= 1 or m < 256:
        return backend.integrate_batch(field.pack, X0, *args)
    X1 = np.empty_like(X0)
    status = np.empty(m, dtype=np.uint8)
    t_exit = np.empty(m)
    bounds = np.linspace(0, m, threads + 1).astype(int)
    slices = [slice(bounds[i], bounds[i + 1]) for i in range(threads)
              if bounds[i + 1] > bounds[i]]
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        futs = [(sl, pool.submit(backend.integrate_batch, field.pack,
                                 X0[sl], *args)) for sl in slices]
        for sl, fut in futs:
            X1[sl], status[sl], t_exit[sl] = fut.result()
    return X1, status, t_exit


def integrate_trajectory(field: VelocityField, x0, t0, t1,
                         p: IntegratorParams | None = None):
    """Position x(t1; t0, x0); supports backward runs (t1 < t0).

    Raises EscapeError (with the exit time) if the trajectory leaves a
    non-periodic domain, DivergenceError if the step budget is exhausted.
    """
    X0 = np.asarray(x0, dtype=float)[None, :]
    X1, status, t_exit = integrate_batch(field, X0, t0, t1, p)
    if status[0] == STATUS_ESCAPED:
        raise EscapeError(f"trajectory left the domain at t={t_exit[0]:.6g}",
                          exit_time=float(t_exit[0]))
    if status[0] == STATUS_DIVERGED:
        raise DivergenceError(
            f"integration exceeded max_steps near t={t_exit[0]:.6g}")
    return X1[0]


def aux_start_points(pts, aux_offset, field: VelocityField):
    """Auxiliary start positions x +/- aux_offset * e_i, shape (m, n, 2, n).

    At non-periodic field boundaries the pair is shifted inward so both
    members stay in the domain; the differenced span remains 2 * aux_offset,
    the gradient is then sampled aux_offset inside the boundary.
    """
    pts = np.asarray(pts, dtype=float)
    m, n = pts.shape
    lo, hi, mask = field.escape_bounds()
    aux = np.repeat(pts, 2 * n, axis=0).reshape(m, n, 2, n)
    for i in range(n):
        aux[:, i, 0, i] += aux_offset
        aux[:, i, 1, i] -= aux_offset
        if mask[i]:
            over = aux[:, i, 0, i] > hi[i]
            aux[over, i, 0, i] = hi[i]
            aux[over, i, 1, i] = hi[i] - 2.0 * aux_offset
            under = aux[:, i, 1, i] < lo[i]
            aux[under, i, 1, i] = lo[i]
            aux[under, i, 0, i] = lo[i] + 2.0 * aux_offset
    return aux


def compute_flow_map(field: VelocityField, grid_shape, a, b,
                     aux_offset: float | None = None,
                     p: IntegratorParams | None = None, *,
                     domain: Domain | None = None,
                     threads: int = 1) -> FlowMapGrid:
    """Integrate a uniform seed grid plus auxiliary points over [a, b].

    Escapes and divergences are recorded in the per-seed status mask instead
    of aborting the grid. Output is deterministic and independent of
    ``threads``.
    """
    if a == b:
        raise ValidationError("flow map requires a != b")
    p = p or IntegratorParams()
    dom = domain or field.domain
    n = dom.n
    grid_shape = tuple(int(s) for s in grid_shape)
    if len(grid_shape) != n:
        raise ValidationError(f"grid_shape must have {n} entries")
    if any(s < 3 for s in grid_shape):
        raise ValidationError("need at least 3 grid nodes per axis")
    spacing = [(dom.upper[i] - dom.lower[i]) / (grid_shape[i] - 1)
               for i in range(n)]
    if aux_offset is None:
        aux_offset = 1e-4 * min(dom.extent)
    if not 0 < aux_offset < 0.5 * min(spacing):
        raise ValidationError(
            f"aux_offset must lie in (0, {0.5 * min(spacing):.3g})")

    axes = [np.linspace(dom.lower[i], dom.upper[i], grid_shape[i])
            for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    seeds = np.stack(mesh, axis=-1)                  # (*grid, n)
    flat_seeds = seeds.reshape(-1, n)
    m = flat_seeds.shape[0]

    # batch layout: seeds, then aux points grouped (axis, +/-)
    aux0 = aux_start_points(flat_seeds, aux_offset, field)
    big = np.concatenate([flat_seeds, aux0.reshape(-1, n)], axis=0)

    X1, status, _ = integrate_batch(field, big, a, b, p, threads=threads)

    finals = X1[:m].reshape(*grid_shape, n)
    aux_finals = X1[m:].reshape(*grid_shape, n, 2, n)
    st_seed = status[:m].reshape(m)
    st_aux = status[m:].reshape(m, 2 * n)
    node_status = st_seed.copy()
    for col in range(2 * n):    # first failure wins, in (axis, +/-) order
        node_status = np.where(node_status == STATUS_OK, st_aux[:, col],
                               node_status)
    return FlowMapGrid(a=float(a), b=float(b), grid_shape=grid_shape,
                       lower=tuple(dom.lower), upper=tuple(dom.upper),
                       aux_offset=float(aux_offset), seeds=seeds,
                       finals=finals, aux_finals=aux_finals,
                       status=node_status.reshape(grid_shape))


def flow_gradient(fm: FlowMapGrid, seed_index):
    """Central-difference flow gradient at one seed; column i differences the
    +/- auxiliary trajectories along axis i."""
    idx = tuple(np.atleast_1d(seed_index).astype(int))
    if fm.status[idx] != STATUS_OK:
        raise UnavailableError(f"seed {idx} has status {int(fm.status[idx])}")
    aux = fm.aux_finals[idx]          # (n, 2, n)
    G = (aux[:, 0, :] - aux[:, 1, :]).T / (2.0 * fm.aux_offset)
    return G


def flow_gradients(fm: FlowMapGrid):
    """All per-node gradients as (*grid_shape, n, n); NaN at failed seeds."""
    d = (fm.aux_finals[..., 0, :] - fm.aux_finals[..., 1, :]) / (2.0 * fm.aux_offset)
    G = np.swapaxes(d, -1, -2).copy()
    G[fm.status != STATUS_OK] = np.nan
    return G


# ---------------------------------------------------------------------------
# FMG1 serialization
# ---------------------------------------------------------------------------

def save_flowmap(fm: FlowMapGrid, path):
    """Write FMG1: one JSON header line + float64 blocks + status bytes."""
    header = {
        "magic": FMG_MAGIC,
        "n": fm.n,
        "grid_shape": list(fm.grid_shape),
        "a": fm.a,
        "b": fm.b,
        "aux_offset": fm.aux_offset,
        "lower": list(fm.lower),
        "upper": list(fm.upper),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(fm.seeds, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(fm.finals, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(fm.aux_finals, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(fm.status, dtype=np.uint8).tobytes())


def load_flowmap(path) -> FlowMapGrid:
    with open(path, "rb") as fh:
        line = fh.readline(1 << 20)
        if not line.endswith(b"\n"):
            raise FormatError("missing newline-terminated header")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad FMG1 header: {exc}") from None
        if header.get("magic") != FMG_MAGIC:
            raise FormatError(
                f"bad magic {header.get('magic')!r}; want {FMG_MAGIC}")
        payload = fh.read()
    n = int(header["n"])
    shape = tuple(int(s) for s in header["grid_shape"])
    m = int(np.prod(shape))
    sizes = [m * n * 8, m * n * 8, m * n * 2 * n * 8, m]
    if len(payload) != sum(sizes):
        raise FormatError(f"payload is {len(payload)} bytes; "
                          f"expected {sum(sizes)}")
    off = 0
    blocks = []
    for sz in sizes[:3]:
        blocks.append(np.frombuffer(payload, dtype="<f8", count=sz // 8,
                                    offset=off).copy())
        off += sz
    status = np.frombuffer(payload, dtype=np.uint8, count=m, offset=off).copy()
    return FlowMapGrid(
        a=float(header["a"]), b=float(header["b"]), grid_shape=shape,
        lower=tuple(header["lower"]), upper=tuple(header["upper"]),
        aux_offset=float(header["aux_offset"]),
        seeds=blocks[0].reshape(*shape, n),
        finals=blocks[1].reshape(*shape, n),
        aux_finals=blocks[2].reshape(*shape, n, 2, n),
        status=status.reshape(shape))
