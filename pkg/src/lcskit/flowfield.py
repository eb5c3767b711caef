"""Velocity-field abstraction: built-in analytic flows and gridded data.

Built-in fields evaluate closed-form formulas; gridded fields interpolate
multilinearly in space and linearly in time. All field objects are immutable
after construction and safe to evaluate concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import backend
from .errors import (DataError, FormatError, OutOfDomainError,
                     OutOfRangeError, ValidationError)

VGF_MAGIC = "VGF1"


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box, optionally periodic per axis."""

    lower: tuple
    upper: tuple
    periodic: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        per = tuple(bool(v) for v in self.periodic)
        if not (len(lo) == len(hi) == len(per)):
            raise ValidationError("domain lower/upper/periodic length mismatch")
        if len(lo) not in (2, 3):
            raise ValidationError("dimension must be 2 or 3")
        for a, b in zip(lo, hi):
            if not a < b:
                raise ValidationError(f"domain requires lower < upper, got {a} >= {b}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "periodic", per)

    @property
    def n(self):
        return len(self.lower)

    @property
    def extent(self):
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    @property
    def diameter(self):
        return math.sqrt(sum(e * e for e in self.extent))

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        for i in range(self.n):
            if self.periodic[i]:
                continue
            pad = tol * (self.upper[i] - self.lower[i])
            if x[..., i].min() < self.lower[i] - pad or x[..., i].max() > self.upper[i] + pad:
                return False
        return True

    def wrap(self, x):
        """Wrap periodic coordinates into [lower, upper); pure query helper."""
        x = np.array(x, dtype=float, copy=True)
        for i in range(self.n):
            if self.periodic[i]:
                span = self.upper[i] - self.lower[i]
                x[..., i] = self.lower[i] + np.mod(x[..., i] - self.lower[i], span)
        return x


@dataclass(frozen=True)
class VelocityField:
    """Evaluatable velocity field u(x, t).

    ``pack`` is the kernel-level descriptor consumed by the integration
    backends; callable fields always run through the NumPy kernels.
    """

    domain: Domain
    kind: str                    # "analytic" | "gridded"
    name: str
    pack: tuple
    time_range: tuple = (-math.inf, math.inf)

    @property
    def n(self):
        return self.domain.n

    def eval(self, x, t):
        """Velocity at a single position and time."""
        v = self.eval_batch(np.asarray(x, dtype=float)[None, :], float(t))
        return v[0]

    def eval_batch(self, X, t):
        """Velocity at (m, n) positions; ``t`` scalar or (m,) array."""
        X = np.asarray(X, dtype=float)
        T = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
        if self.kind == "gridded":
            tlo, thi = self.time_range
            ttol = 1e-12 * max(abs(thi - tlo), 1.0)
            if np.any(T < tlo - ttol) or np.any(T > thi + ttol):
                raise OutOfRangeError(
                    f"time outside sampled range [{tlo}, {thi}]")
        V, ok = backend.eval_field(self.pack, X, T)
        if not ok.all():
            raise OutOfDomainError("query outside non-periodic domain")
        return V

    def escape_bounds(self):
        """(lower, upper, mask) arrays for per-axis escape checking."""
        lo = np.asarray(self.domain.lower, dtype=float)
        hi = np.asarray(self.domain.upper, dtype=float)
        mask = np.asarray([0 if p else 1 for p in self.domain.periodic],
                          dtype=np.uint8)
        return lo, hi, mask


@dataclass(frozen=True)
class GriddedVelocity:
    """Dense velocity samples on a uniform space-time grid.

    ``samples`` has shape (nt, *space_shape, n). On periodic axes the node
    grid spans the full period including the seam node at ``upper``.
    """

    domain: Domain
    space_shape: tuple
    times: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        samples = np.asarray(self.samples, dtype=float)
        shape = tuple(int(s) for s in self.space_shape)
        if any(s < 2 for s in shape):
            raise ValidationError("need at least 2 nodes per axis")
        if times.ndim != 1 or times.size < 1:
            raise ValidationError("times must be a non-empty 1-D array")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValidationError("times must be strictly increasing")
        want = (times.size, *shape, self.domain.n)
        if samples.shape != want:
            raise ValidationError(
                f"samples shape {samples.shape} != expected {want}")
        if not np.isfinite(samples).all():
            raise DataError("samples contain NaN/Inf")
        object.__setattr__(self, "space_shape", shape)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "samples", samples)

    @property
    def spacing(self):
        return tuple((b - a) / (s - 1) for a, b, s in
                     zip(self.domain.lower, self.domain.upper, self.space_shape))

    def field(self) -> VelocityField:
        """Wrap the samples as an interpolating VelocityField."""
        n = self.domain.n
        nnodes = int(np.prod(self.space_shape))
        flat = np.ascontiguousarray(
            self.samples.reshape(len(self.times), nnodes, n))
        grid = backend.make_grid_pack(
            self.times, flat, self.space_shape,
            self.domain.lower, self.spacing,
            [1 if p else 0 for p in self.domain.periodic])
        pack = (backend.CODE_GRIDDED, np.zeros(0), grid)
        return VelocityField(domain=self.domain, kind="gridded",
                             name="gridded", pack=pack,
                             time_range=(float(self.times[0]),
                                         float(self.times[-1])))


# ---------------------------------------------------------------------------
# built-in analytic flows
# ---------------------------------------------------------------------------

def make_duffing() -> VelocityField:
    """Unforced, undamped Duffing oscillator (x1dot, x2dot) = (x2, 4 x1 - x1^3).

    Autonomous 2-D flow. The declared domain is generous so that trajectories
    started anywhere in [-3, 3]^2 never trip the escape check (the level sets
    of H = x1^4/2 - 4 x1^2 + x2^2 are bounded).
    """
    dom = Domain(lower=(-10.0, -10.0), upper=(10.0, 10.0),
                 periodic=(False, False))
    pack = (backend.CODE_DUFFING, np.zeros(0), None)
    return VelocityField(domain=dom, kind="analytic", name="duffing", pack=pack)


def make_abc(A=1.0, B=math.sqrt(2.0 / 3.0), C=math.sqrt(1.0 / 3.0)) -> VelocityField:
    """Steady ABC flow on the triply periodic cube [0, 2*pi]^3."""
    dom = Domain(lower=(0.0, 0.0, 0.0),
                 upper=(2.0 * math.pi, 2.0 * math.pi, 2.0 * math.pi),
                 periodic=(True, True, True))
    pack = (backend.CODE_ABC, np.asarray([A, B, C], dtype=float), None)
    return VelocityField(domain=dom, kind="analytic", name="abc", pack=pack)


def make_double_gyre(A: float, eps: float, omega: float) -> VelocityField:
    """Time-periodic double gyre on [0, 2] x [0, 1].

    Stream function psi = A sin(pi f(x, t)) sin(pi y) with
    f = eps sin(omega t) x^2 + (1 - 2 eps sin(omega t)) x. The boundary is
    invariant, so trajectories seeded inside never escape.
    """
    if not A > 0:
        raise ValidationError("double gyre requires A > 0")
    dom = Domain(lower=(0.0, 0.0), upper=(2.0, 1.0), periodic=(False, False))
    pack = (backend.CODE_DOUBLE_GYRE, np.asarray([A, eps, omega], dtype=float),
            None)
    return VelocityField(domain=dom, kind="analytic", name="double-gyre",
                         pack=pack)


def linear_field(M, domain=None) -> VelocityField:
    """u = M x for a constant n x n matrix; exact flow map is expm(M t)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n) or n not in (2, 3):
        raise ValidationError("M must be 2x2 or 3x3")
    if domain is None:
        domain = Domain(lower=(-50.0,) * n, upper=(50.0,) * n,
                        periodic=(False,) * n)
    pack = (backend.CODE_LINEAR, np.ascontiguousarray(M.reshape(-1)), None)
    return VelocityField(domain=domain, kind="analytic", name="linear",
                         pack=pack)


def zero_field(n=2, domain=None) -> VelocityField:
    """The identity flow u = 0."""
    if domain is None:
        domain = Domain(lower=(-50.0,) * n, upper=(50.0,) * n,
                        periodic=(False,) * n)
    pack = (backend.CODE_ZERO, np.zeros(0), None)
    return VelocityField(domain=domain, kind="analytic", name="zero", pack=pack)


def from_callable(func, domain: Domain, name="callable") -> VelocityField:
    """Wrap a vectorized ``f(X, T) -> V`` callable (integrated in NumPy)."""
    pack = (backend.CODE_CALLABLE, func, None)
    return VelocityField(domain=domain, kind="analytic", name=name, pack=pack)


_BUILTINS = {
    "duffing": lambda params: make_duffing(),
    "abc": lambda params: make_abc(**params),
    "double-gyre": lambda params: make_double_gyre(
        A=params.get("A", 0.1), eps=params.get("eps", 0.1),
        omega=params.get("omega", 2.0 * math.pi / 10.0)),
}


def make_builtin(name: str, params: dict | None = None) -> VelocityField:
    """Construct a built-in flow by CLI name."""
    params = dict(params or {})
    try:
        ctor = _BUILTINS[name]
    except KeyError:
        raise ValidationError(
            f"unknown flow {name!r}; builtins: {sorted(_BUILTINS)}") from None
    return ctor(params)


# ---------------------------------------------------------------------------
# gridded-data operations
# ---------------------------------------------------------------------------

def eval_gridded(g: GriddedVelocity, x, t):
    """Interpolated velocity of a gridded field at one position and time."""
    return g.field().eval(x, t)


def sample_to_grid(field: VelocityField, space_shape, times) -> GriddedVelocity:
    """Sample an analytic field onto a uniform grid (VGF1-compatible data)."""
    dom = field.domain
    n = dom.n
    space_shape = tuple(int(s) for s in space_shape)
    times = np.asarray(times, dtype=float)
    axes = [np.linspace(dom.lower[i], dom.upper[i], space_shape[i])
            for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    out = np.empty((times.size, *space_shape, n))
    for k, t in enumerate(times):
        out[k] = field.eval_batch(pts, float(t)).reshape(*space_shape, n)
    return GriddedVelocity(domain=dom, space_shape=space_shape, times=times,
                           samples=out)


def save_gridded(g: GriddedVelocity, path):
    """Write a GriddedVelocity in the VGF1 format.

    Layout: one UTF-8 JSON header line ending in a newline, then raw
    little-endian float64 samples in C order, indexed
    (time, node_axis0, ..., node_axis(n-1), component).
    """
    header = {
        "magic": VGF_MAGIC,
        "n": g.domain.n,
        "space_shape": list(g.space_shape),
        "lower": list(g.domain.lower),
        "upper": list(g.domain.upper),
        "periodic": list(g.domain.periodic),
        "times": [float(t) for t in g.times],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(g.samples, dtype="<f8").tobytes())


def load_gridded(path) -> GriddedVelocity:
    """Read a VGF1 file; validates the header, payload size and sample values."""
    with open(path, "rb") as fh:
        line = fh.readline(1 << 20)
        if not line.endswith(b"\n"):
            raise FormatError("missing newline-terminated header")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad VGF1 header: {exc}") from None
        if header.get("magic") != VGF_MAGIC:
            raise FormatError(f"bad magic {header.get('magic')!r}; want {VGF_MAGIC}")
        for key in ("n", "space_shape", "lower", "upper", "periodic", "times"):
            if key not in header:
                raise FormatError(f"header missing key {key!r}")
        n = int(header["n"])
        shape = tuple(int(s) for s in header["space_shape"])
        times = np.asarray(header["times"], dtype=float)
        if len(shape) != n:
            raise FormatError("space_shape length != n")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValidationError("times must be strictly increasing")
        payload = fh.read()
    count = times.size * int(np.prod(shape)) * n
    if len(payload) != 8 * count:
        raise FormatError(
            f"payload is {len(payload)} bytes; expected {8 * count}")
    samples = np.frombuffer(payload, dtype="<f8").reshape(times.size, *shape, n)
    dom = Domain(lower=header["lower"], upper=header["upper"],
                 periodic=header["periodic"])
    return GriddedVelocity(domain=dom, space_shape=shape, times=times,
                           samples=samples.copy())
