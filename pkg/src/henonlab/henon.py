"""Strongly dissipative Hénon-like maps in m+2 dimensions.

A map in this family has the form

    F(x, y, z) = (f(x) - eps(x, y, z), x, delta(x, y, z)),

with ``f`` unimodal, ``eps`` scalar and small, and ``delta`` an m-vector of
small analytic functions.  The second coordinate of the image is always the
input ``x``, so planes ``{x = C}`` map into planes ``{y = C}`` exactly; all
the renormalization structure downstream leans on that.

A *toy model* is the special case where ``eps`` does not depend on ``z``.
The projection to the (x, y)-plane of a toy model is then itself a
two-dimensional Hénon-like map, which we represent as the ``m = 0`` case of
the same class rather than as separate code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chebyshev import Box, TensorPoly
from .errors import NonpositiveJacobian, NormBoundExceeded, WrongCount
from .solvers import newton_nd
from .unimodal import UnimodalMap

__all__ = [
    "HenonMap",
    "FixedPointPair",
    "find_fixed_points",
    "make_toy_model",
    "make_perturbation",
    "default_family",
    "inverse_point",
    "orientation_check",
]


def _lift_xy(poly: TensorPoly, box: Box) -> TensorPoly:
    """Embed a polynomial in (x, y) into a higher-dimensional box.

    The extra axes get degree 0, so the result is *exactly* constant in the
    z-variables (no refit, no new coefficients).
    """
    m_extra = box.dim - poly.box.dim
    if m_extra < 0:
        raise ValueError("target box has fewer dimensions than the polynomial")
    if not np.allclose(poly.box.intervals, box.intervals[: poly.box.dim]):
        raise ValueError("xy-intervals of the target box do not match")
    coeffs = poly.coeffs.reshape(poly.coeffs.shape + (1,) * m_extra)
    return TensorPoly(box, coeffs)


class HenonMap:
    """An (m+2)-dimensional Hénon-like map on a box.

    Parameters
    ----------
    f : UnimodalMap
        The unimodal core; its interval must match the x-interval of ``box``.
    eps : TensorPoly
        Scalar perturbation on ``box``.
    delta : sequence of TensorPoly
        The m components of the z-image, each on ``box``.  May be empty
        (m = 0, the plain 2D Hénon-like case).
    box : Box
        Domain, ``I^x × I^y × [-c, c]^m``.

    Notes
    -----
    The map object is immutable; evaluation and derivatives are vectorized
    over point batches of shape ``(P, m+2)``.
    """

    def __init__(self, f, eps, delta, box):
        self.f = f
        self.eps = eps
        self.delta = tuple(delta)
        self.box = box
        self.m = box.dim - 2
        if len(self.delta) != self.m:
            raise ValueError(f"expected {self.m} delta components, got {len(self.delta)}")
        if not np.allclose(f.poly.box.intervals[0], box.intervals[0]):
            raise ValueError("f's interval must equal the x-interval of the box")
        for p in (eps, *self.delta):
            if p.box.dim != box.dim:
                raise ValueError("eps/delta must live on the full box")
        self._grad_eps = None
        self._grad_delta = None

    # -- basic queries --------------------------------------------------

    @property
    def dim(self):
        return self.m + 2

    def is_toy(self, tol=0.0):
        """True if eps is independent of every z-variable (up to ``tol``)."""
        if self.m == 0:
            return True
        for axis in range(2, self.dim):
            if self.eps.coeffs.shape[axis] == 1:
                continue
            tail = np.abs(self.eps.coeffs).sum() - np.abs(
                self.eps.coeffs.take([0], axis=axis)
            ).sum()
            if tail > tol:
                return False
        return True

    # -- evaluation ------------------------------------------------------

    def __call__(self, w):
        """Apply F to a batch of points ``(P, m+2)`` (or a single point)."""
        w = np.asarray(w, dtype=float)
        single = w.ndim == 1
        pts = np.atleast_2d(w)
        out = np.empty_like(pts)
        x = pts[:, 0]
        out[:, 0] = self.f(x) - self.eps(pts)
        out[:, 1] = x
        for j, dj in enumerate(self.delta):
            out[:, 2 + j] = dj(pts)
        return out[0] if single else out

    def iterate(self, w, n):
        for _ in range(n):
            w = self(w)
        return w

    def _gradients(self):
        if self._grad_eps is None:
            self._grad_eps = [self.eps.diff(axis) for axis in range(self.dim)]
            self._grad_delta = [
                [dj.diff(axis) for axis in range(self.dim)] for dj in self.delta
            ]
        return self._grad_eps, self._grad_delta

    def df(self, w):
        """Batched derivative matrices, shape ``(P, m+2, m+2)``."""
        w = np.asarray(w, dtype=float)
        single = w.ndim == 1
        pts = np.atleast_2d(w)
        n = pts.shape[0]
        grad_eps, grad_delta = self._gradients()
        out = np.zeros((n, self.dim, self.dim))
        out[:, 0, 0] = self.f.deriv(pts[:, 0])
        for axis in range(self.dim):
            out[:, 0, axis] -= grad_eps[axis](pts)
        out[:, 1, 0] = 1.0
        for j in range(self.m):
            for axis in range(self.dim):
                out[:, 2 + j, axis] = grad_delta[j][axis](pts)
        return out[0] if single else out

    def jacobian_det(self, w):
        d = self.df(w)
        if d.ndim == 2:
            return float(np.linalg.det(d))
        return np.linalg.det(d)

    # -- serialization ---------------------------------------------------

    def to_json(self):
        return {
            "schema": "henonlab/map-v1",
            "m": self.m,
            "f": self.f.to_json(),
            "eps": self.eps.to_json(),
            "delta": [d.to_json() for d in self.delta],
            "box": self.box.to_json(),
        }

    @classmethod
    def from_json(cls, data):
        if data.get("schema") != "henonlab/map-v1":
            raise ValueError(f"unknown schema {data.get('schema')!r}")
        return cls(
            UnimodalMap.from_json(data["f"]),
            TensorPoly.from_json(data["eps"]),
            [TensorPoly.from_json(d) for d in data["delta"]],
            Box.from_json(data["box"]),
        )

    def __repr__(self):
        return (
            f"HenonMap(m={self.m}, deg eps={self.eps.degrees}, "
            f"deg delta={[d.degrees for d in self.delta]})"
        )


@dataclass
class FixedPointPair:
    """The two fixed points of a Hénon-like map with their linearizations.

    ``beta0`` is the fixed point whose derivative spectrum is entirely
    positive (the orientation-regular one); ``beta1`` is the other.  Each
    carries eigenvalues sorted by decreasing modulus, a residual, and the
    dissipativity flags.
    """

    beta0: np.ndarray
    beta1: np.ndarray
    eigen0: np.ndarray
    eigen1: np.ndarray
    residuals: tuple
    in_box: tuple
    positive0: bool
    sectional: tuple
    unstable_counts: tuple


def _eigen_flags(eigvals):
    mods = np.abs(eigvals)
    positive = bool(np.all(eigvals.real > 0) and np.all(np.abs(eigvals.imag) < 1e-9))
    # sectional dissipativity: every 2-plane contracts area, i.e. all
    # pairwise products of eigenvalue moduli are < 1
    pair_ok = True
    for i in range(len(mods)):
        for j in range(i + 1, len(mods)):
            if mods[i] * mods[j] >= 1.0:
                pair_ok = False
    unstable = int(np.sum(mods > 1.0))
    return positive, pair_ok, unstable


def find_fixed_points(F, tol=1e-12):
    """Locate both fixed points of ``F`` by Newton from the 1D seeds.

    The fixed points of the degenerate map are ``(x_f, x_f, 0)`` with
    ``f(x_f) = x_f`` — including the orientation-regular one, which for the
    standard family sits slightly *outside* the box in x.  Seeds therefore
    come from the polynomial ``f`` without clipping to its interval, and the
    ``in_box`` flags report membership.

    Raises
    ------
    WrongCount
        If the number of distinct Newton limits is not exactly 2.
    """
    f = F.f
    lo, hi = f.poly.box.intervals[0]
    pad = 0.6 * (hi - lo)
    # real roots of f(x) - x in a widened window
    cheb_x = np.polynomial.chebyshev.Chebyshev(
        _coeffs_1d(f.poly), domain=[lo, hi]
    ) - np.polynomial.chebyshev.Chebyshev([0.0, 1.0], domain=[-1.0, 1.0]).convert(
        domain=[lo, hi]
    )
    roots = cheb_x.roots()
    seeds = sorted(
        float(r.real)
        for r in roots
        if abs(r.imag) < 1e-10 and lo - pad <= r.real <= hi + pad
    )
    if len(seeds) != 2:
        raise WrongCount(f"expected 2 one-dimensional fixed points, found {len(seeds)}")

    eye = np.eye(F.dim)
    sols = []
    for x_f in seeds:
        w0 = np.zeros(F.dim)
        w0[0] = x_f
        w0[1] = x_f
        sol = newton_nd(
            lambda w: F(w) - w,
            w0[None, :],
            jac=lambda w: F.df(w) - eye,
            tol=tol,
        )[0]
        sols.append(sol)
    if np.linalg.norm(sols[0] - sols[1]) < 1e-8:
        raise WrongCount("Newton collapsed both seeds to one fixed point")

    data = []
    for sol in sols:
        eig = np.linalg.eigvals(F.df(sol[None, :])[0])
        eig = eig[np.argsort(-np.abs(eig))]
        resid = float(np.max(np.abs(F(sol[None, :])[0] - sol)))
        inb = bool(F.box.contains(sol[None, :], tol=1e-9)[0])
        data.append((sol, eig, resid, inb, *_eigen_flags(eig)))

    # beta0 = the all-positive-spectrum point; fall back to the more
    # expanding one if neither (or both) qualifies
    pos = [d[4] for d in data]
    if pos[0] == pos[1]:
        order = (0, 1) if abs(data[0][1][0]) >= abs(data[1][1][0]) else (1, 0)
    else:
        order = (0, 1) if pos[0] else (1, 0)
    a, b = data[order[0]], data[order[1]]
    return FixedPointPair(
        beta0=a[0],
        beta1=b[0],
        eigen0=a[1],
        eigen1=b[1],
        residuals=(a[2], b[2]),
        in_box=(a[3], b[3]),
        positive0=a[4],
        sectional=(a[5], b[5]),
        unstable_counts=(a[6], b[6]),
    )


def _coeffs_1d(poly):
    return poly.coeffs.reshape(-1)


def make_toy_model(f, eps_2d, delta_list, box):
    """Build a toy model: ``eps`` independent of z by construction.

    ``eps_2d`` must be a 2D polynomial on the xy-part of ``box``; it is
    lifted with degree 0 along every z-axis, so ``d eps / d z_j`` is the zero
    polynomial identically.
    """
    eps = _lift_xy(eps_2d, box)
    return HenonMap(f, eps, delta_list, box)


def make_perturbation(toy, eps_tilde, bound=0.2):
    """Add a z-dependent term to a toy model's eps.

    Raises
    ------
    NormBoundExceeded
        If the sup-norm bound of ``eps_tilde`` exceeds ``bound``.
    """
    grid_max, coeff_bound = eps_tilde.sup_norm()
    if min(grid_max, coeff_bound) > bound:
        raise NormBoundExceeded(
            f"perturbation norm ~{grid_max:.3g} exceeds budget {bound:.3g}"
        )
    return HenonMap(toy.f, toy.eps + eps_tilde, toy.delta, toy.box)


def default_family(
    mu=1.4011551890,
    b1=0.1,
    dz=0.05,
    m=1,
    extra=0.0,
    z_half_width=1.0,
    degrees=(8, 8, 6),
):
    """The standing test family.

    ``f(x) = 1 - mu x^2`` on ``[-1, 1]``; ``eps = b1·y·(1 + extra·(x/3 + y/5))``
    (z-independent, so the result is a toy model); ``delta^j`` linear in
    ``z_j`` with a small quadratic term scaled by ``extra``.  The average
    Jacobian dial is ``b1·dz^m`` at ``extra = 0``.

    For ``m = 0`` this produces the plain 2D family ``(f(x) - b1 y, x)``.
    """
    intervals = [[-1.0, 1.0], [-1.0, 1.0]] + [[-z_half_width, z_half_width]] * m
    box = Box(intervals)
    f = UnimodalMap.quadratic(mu)
    xy_box = Box(intervals[:2])

    def eps_fn(p):
        x, y = p[:, 0], p[:, 1]
        return b1 * y * (1.0 + extra * (x / 3.0 + y / 5.0))

    eps_2d = TensorPoly.from_callable(eps_fn, xy_box, degrees[:2])
    deltas = []
    for j in range(m):

        def dj_fn(p, j=j):
            zj = p[:, 2 + j]
            return dz * zj * (1.0 + extra * p[:, 0] / 4.0) + extra * 0.02 * p[:, 1] ** 2

        deltas.append(TensorPoly.from_callable(dj_fn, box, _family_degrees(degrees, m)))
    if m == 0:
        return HenonMap(f, _lift_xy(eps_2d, box), [], box)
    return make_toy_model(f, eps_2d, deltas, box)


def _family_degrees(degrees, m):
    return tuple(degrees[:2]) + (degrees[2],) * m


def inverse_point(F, w, seed=None, tol=1e-12):
    """Preimage of a single point ``w`` under F.

    The structure gives the x-coordinate of the preimage for free: since
    ``pi_y F(p) = p_x``, the preimage has ``p_x = w_y`` exactly.  Only the
    remaining m+1 coordinates ``(p_y, p_z)`` need a Newton solve, on

        f(p_x) - eps(p) = w_x,    delta(p) = w_z.
    """
    w = np.asarray(w, dtype=float)
    px = w[1]
    if seed is None:
        seed = np.zeros(F.dim - 1)
    seed = np.asarray(seed, dtype=float)

    def assemble(rest):
        p = np.empty((rest.shape[0], F.dim))
        p[:, 0] = px
        p[:, 1] = rest[:, 0]
        p[:, 2:] = rest[:, 1:]
        return p

    def fun(rest):
        p = assemble(rest)
        out = np.empty_like(rest)
        out[:, 0] = F.f(p[:, 0]) - F.eps(p) - w[0]
        for j, dj in enumerate(F.delta):
            out[:, 1 + j] = dj(p) - w[2 + j]
        return out

    def jac(rest):
        p = assemble(rest)
        grad_eps, grad_delta = F._gradients()
        n = rest.shape[0]
        out = np.zeros((n, F.dim - 1, F.dim - 1))
        for col in range(F.dim - 1):
            out[:, 0, col] = -grad_eps[col + 1](p)
            for j in range(F.m):
                out[:, 1 + j, col] = grad_delta[j][col + 1](p)
        return out

    rest = newton_nd(fun, seed[None, :], jac=jac, tol=tol)[0]
    return assemble(rest[None, :])[0]


def orientation_check(F, points_per_axis=None):
    """Min/max Jacobian determinant on a uniform grid (sign spot-check).

    Raises
    ------
    NonpositiveJacobian
        If the determinant is not strictly positive on the whole grid.
    """
    if points_per_axis is None:
        points_per_axis = {2: 100, 3: 22, 4: 10}.get(F.dim, 8)
    grid = F.box.uniform_grid((points_per_axis,) * F.dim)
    det = F.jacobian_det(grid)
    lo, hi = float(det.min()), float(det.max())
    if lo <= 0.0:
        raise NonpositiveJacobian(f"Jac F in [{lo:.3e}, {hi:.3e}] on the check grid")
    return lo, hi
