"""Independent oracle implementations used by the tests.

These deliberately avoid the library's integration/eigen code paths so that
agreement between a test subject and its oracle is meaningful.
"""

import numpy as np


def expm_ss(M, squarings=8, terms=30):
    """Matrix exponential by scaling-and-squaring of a Taylor series."""
    M = np.asarray(M, dtype=float)
    A = M / (2.0 ** squarings)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def duffing_hamiltonian(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * x[..., 0] ** 4 - 4.0 * x[..., 0] ** 2 + x[..., 1] ** 2


def duffing_h0_branch(sign, n=4000):
    """The H = 0 homoclinic branch through the origin with slope 2*sign.

    sign=-1 is the stable-manifold branch, sign=+1 the unstable one.
    """
    x1max = 2.0 * np.sqrt(2.0)
    x1 = np.linspace(-x1max, x1max, n)
    x2 = sign * x1 * np.sqrt(np.maximum(4.0 - 0.5 * x1 * x1, 0.0))
    return np.stack([x1, x2], axis=1)


def central_difference_divergence(field, x, t, h=1e-5):
    """Pointwise divergence of a velocity field by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    div = 0.0
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        vp = field.eval(x + e, t)
        vm = field.eval(x - e, t)
        div += (vp[i] - vm[i]) / (2.0 * h)
    return div


def ball_clip_hausdorff(A, B, center, radius):
    """Symmetric Hausdorff distance between the parts of two polylines
    inside a ball (vertices against the other full clipped set)."""
    from lcskit.geometry import clip_to_ball, hausdorff

    ra = np.concatenate(clip_to_ball(A, center, radius))
    rb = np.concatenate(clip_to_ball(B, center, radius))
    return hausdorff(ra, rb)


def locally_extremal_bruteforce(values, seeds, index, radius, maximize,
                                tie_abs):
    """Direct double-loop re-evaluation of the local-extremality predicate."""
    vi = values[index]
    for j in range(len(values)):
        if j == index:
            continue
        d2 = float(np.sum((seeds[j] - seeds[index]) ** 2))
        if d2 > radius * radius:
            continue
        if maximize and values[j] > vi + tie_abs:
            return False
        if not maximize and values[j] < vi - tie_abs:
            return False
    return True
