"""Tensor-product Chebyshev approximation on boxes.

Every smooth object in this package (unimodal maps, perturbation terms,
renormalized return maps, invariant surfaces) is stored as a polynomial in a
tensor Chebyshev basis on an axis-aligned box.  Fitting happens by collocation
at Chebyshev-Gauss-Lobatto (CGL) nodes, which makes refitting a composed map as
cheap as evaluating it on a structured grid, and keeps all downstream calculus
(differentiation, products, norms) exact up to roundoff for polynomial data.

Conventions
-----------
* A degree-``n`` axis carries ``n + 1`` CGL nodes, stored in ascending order.
* Coefficient tensors have shape ``(n0 + 1, ..., nd + 1)`` with coefficient
  ``c[k0, ..., kd]`` multiplying ``T_k0(u0) * ... * T_kd(ud)`` in the variables
  ``u`` rescaled to ``[-1, 1]`` on each axis.
* Evaluation outside the box is permitted (the basis extends analytically) but
  is the caller's responsibility; :meth:`Box.contains` and
  :meth:`TensorPoly.eval_checked` exist to keep that explicit.
"""

from __future__ import annotations

import json
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as _cheb

__all__ = [
    "Box",
    "TensorPoly",
    "cheb_points",
    "vals2coeffs",
    "fit_callable",
    "poly_product",
]


def cheb_points(n):
    """Return the ``n + 1`` Chebyshev-Gauss-Lobatto points of degree ``n``.

    Points are ascending in ``[-1, 1]``; ``n = 0`` gives the single point 0.
    """
    if n == 0:
        return np.zeros(1)
    j = np.arange(n + 1)
    return -np.cos(np.pi * j / n)


@lru_cache(maxsize=64)
def _fit_matrix(n):
    # Discrete cosine transform written as a dense matrix: maps values at the
    # ascending CGL nodes to Chebyshev coefficients.  Degrees stay modest
    # (<= ~128) so the O(n^2) apply is not worth replacing with an FFT.
    if n == 0:
        return np.ones((1, 1))
    j = np.arange(n + 1)
    theta = np.pi * j / n
    M = np.cos(np.outer(j, theta))  # T_k at the *descending* nodes
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    A = (2.0 / n) * (w[:, None] * M * w[None, :])
    return A[:, ::-1].copy()  # account for ascending node storage


def vals2coeffs(values, axis=0):
    """Chebyshev coefficients from CGL samples along one axis of a tensor."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis] - 1
    out = np.tensordot(_fit_matrix(n), values, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


class Box:
    """Axis-aligned box ``[lo_0, hi_0] x ... x [lo_{d-1}, hi_{d-1}]``."""

    def __init__(self, intervals):
        iv = np.atleast_2d(np.asarray(intervals, dtype=float))
        if iv.shape[1] != 2 or np.any(iv[:, 1] <= iv[:, 0]):
            raise ValueError("intervals must be rows [lo, hi] with lo < hi")
        self.intervals = iv

    @property
    def dim(self):
        return self.intervals.shape[0]

    @property
    def lo(self):
        return self.intervals[:, 0]

    @property
    def hi(self):
        return self.intervals[:, 1]

    @property
    def widths(self):
        return self.intervals[:, 1] - self.intervals[:, 0]

    @property
    def midpoint(self):
        return 0.5 * (self.intervals[:, 0] + self.intervals[:, 1])

    def contains(self, points, tol=1e-12):
        """Boolean mask of points inside the box (within ``tol``)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=1)
        return ok if p.ndim == 2 else ok[0]

    def to_unit(self, points):
        """Affine map of points into the reference cube ``[-1, 1]^d``."""
        p = np.asarray(points, dtype=float)
        return (2.0 * p - (self.lo + self.hi)) / self.widths

    def from_unit(self, points):
        p = np.asarray(points, dtype=float)
        return 0.5 * (self.widths * p + self.lo + self.hi)

    def node_axes(self, degrees):
        """Per-axis CGL node arrays mapped into the box."""
        degrees = _as_degrees(degrees, self.dim)
        axes = []
        for k in range(self.dim):
            lo, hi = self.intervals[k]
            axes.append(0.5 * ((hi - lo) * cheb_points(degrees[k]) + lo + hi))
        return axes

    def node_grid(self, degrees):
        """Full tensor grid of CGL nodes, shape ``(prod(n_i + 1), d)``."""
        axes = self.node_axes(degrees)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def uniform_grid(self, counts):
        counts = _as_degrees(counts, self.dim)
        axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(self.intervals, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def __eq__(self, other):
        return isinstance(other, Box) and np.array_equal(self.intervals, other.intervals)

    def __repr__(self):
        rows = ", ".join(f"[{lo:g}, {hi:g}]" for lo, hi in self.intervals)
        return f"Box({rows})"

    def to_json(self):
        return self.intervals.tolist()

    @classmethod
    def from_json(cls, data):
        return cls(data)


def _as_degrees(degrees, dim):
    if np.isscalar(degrees):
        return (int(degrees),) * dim
    degrees = tuple(int(n) for n in degrees)
    if len(degrees) != dim:
        raise ValueError(f"expected {dim} degrees, got {len(degrees)}")
    return degrees


class TensorPoly:
    """Polynomial in a tensor Chebyshev basis on a :class:`Box`.

    Parameters
    ----------
    box : Box
        Domain of definition.
    coeffs : ndarray
        Coefficient tensor, one axis per box dimension; axis ``i`` has length
        ``degree_i + 1``.
    """

    def __init__(self, box, coeffs):
        self.box = box
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim != box.dim:
            raise ValueError("coefficient tensor rank must equal box dimension")

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def fit(cls, values, box, degrees=None):
        """Fit from samples on the CGL tensor grid of the box.

        ``values`` must be shaped ``(n0 + 1, ..., nd + 1)`` matching the
        ascending node axes of :meth:`Box.node_axes`.
        """
        values = np.asarray(values, dtype=float)
        if degrees is not None:
            want = tuple(n + 1 for n in _as_degrees(degrees, box.dim))
            if values.shape != want:
                raise ValueError(f"value grid shape {values.shape} != {want}")
        c = values
        for axis in range(values.ndim):
            c = vals2coeffs(c, axis=axis)
        return cls(box, c)

    @classmethod
    def from_callable(cls, fn, box, degrees):
        """Collocate ``fn`` (vectorized over an ``(P, d)`` batch) on the box."""
        degrees = _as_degrees(degrees, box.dim)
        grid = box.node_grid(degrees)
        vals = np.asarray(fn(grid), dtype=float).reshape([n + 1 for n in degrees])
        return cls.fit(vals, box)

    @classmethod
    def constant(cls, box, value):
        return cls(box, np.full((1,) * box.dim, float(value)))

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    @property
    def degrees(self):
        return tuple(n - 1 for n in self.coeffs.shape)

    def __call__(self, points):
        """Evaluate at scattered points, shape ``(P, d)`` or ``(d,)``."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        u = self.box.to_unit(np.atleast_2d(p))
        work = self.coeffs
        # Contract one axis at a time against per-point Vandermonde rows.
        work = np.tensordot(_cheb.chebvander(u[:, 0], work.shape[0] - 1), work, axes=(1, 0))
        for axis in range(1, self.box.dim):
            V = _cheb.chebvander(u[:, axis], work.shape[1] - 1)
            work = np.einsum("pk,pk...->p...", V, work)
        return work[0] if single else work

    def eval_checked(self, points, tol=1e-12):
        """Evaluate and also return the inside-the-box mask."""
        return self(points), self.box.contains(points, tol=tol)

    def eval_grid(self, axes):
        """Evaluate on a tensor grid given as per-axis 1D coordinate arrays."""
        work = self.coeffs
        for axis, pts in enumerate(axes):
            lo, hi = self.box.intervals[axis]
            u = (2.0 * np.asarray(pts, dtype=float) - lo - hi) / (hi - lo)
            V = _cheb.chebvander(u, work.shape[axis] - 1)
            work = np.moveaxis(np.tensordot(V, work, axes=(1, axis)), 0, axis)
        return work

    # ------------------------------------------------------------------
    # calculus and algebra
    # ------------------------------------------------------------------

    def diff(self, axis=0, order=1):
        """Partial derivative along ``axis`` (with the box chain-rule factor)."""
        lo, hi = self.box.intervals[axis]
        c = _cheb.chebder(self.coeffs, m=order, scl=2.0 / (hi - lo), axis=axis)
        if c.shape[axis] == 0:  # derivative of a constant axis
            shape = list(c.shape)
            shape[axis] = 1
            c = np.zeros(shape)
        return TensorPoly(self.box, c)

    def _aligned(self, other):
        if self.box != other.box:
            raise ValueError("operands live on different boxes")
        shape = np.maximum(self.coeffs.shape, other.coeffs.shape)
        a = np.zeros(shape)
        b = np.zeros(shape)
        a[tuple(slice(0, n) for n in self.coeffs.shape)] = self.coeffs
        b[tuple(slice(0, n) for n in other.coeffs.shape)] = other.coeffs
        return a, b

    def __add__(self, other):
        if np.isscalar(other):
            c = self.coeffs.copy()
            c[(0,) * c.ndim] += other
            return TensorPoly(self.box, c)
        a, b = self._aligned(other)
        return TensorPoly(self.box, a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return TensorPoly(self.box, -self.coeffs)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return TensorPoly(self.box, self.coeffs * scalar)

    __rmul__ = __mul__

    def sup_norm(self, counts=None):
        """Sup-norm estimate ``(grid_max, coeff_bound)``.

        ``grid_max`` is the max of ``|p|`` on a refined tensor grid,
        ``coeff_bound`` is the rigorous upper bound ``sum |c_k|``; the pair
        brackets the true sup norm.
        """
        if counts is None:
            counts = _norm_grid_counts(self.degrees)
        axes = [
            np.linspace(lo, hi, c)
            for (lo, hi), c in zip(self.box.intervals, counts)
        ]
        grid_max = float(np.max(np.abs(self.eval_grid(axes))))
        coeff_bound = float(np.sum(np.abs(self.coeffs)))
        return grid_max, coeff_bound

    def truncate(self, rel_tol=1e-14):
        """Zero coefficients below ``rel_tol`` (relative to the largest).

        Returns ``(truncated_poly, dropped_mass)`` where ``dropped_mass`` is
        the l1 mass of the removed coefficients -- a bound for the incurred
        sup-norm error.
        """
        scale = np.max(np.abs(self.coeffs))
        if scale == 0.0:
            return TensorPoly(self.box, self.coeffs.copy()), 0.0
        keep = np.abs(self.coeffs) >= rel_tol * scale
        dropped = float(np.sum(np.abs(self.coeffs[~keep])))
        c = np.where(keep, self.coeffs, 0.0)
        # trim trailing all-zero slices so degrees reflect content
        for axis in range(c.ndim):
            n = c.shape[axis]
            while n > 1:
                idx = [slice(None)] * c.ndim
                idx[axis] = n - 1
                if np.any(c[tuple(idx)] != 0.0):
                    break
                n -= 1
            sl = [slice(None)] * c.ndim
            sl[axis] = slice(0, n)
            c = c[tuple(sl)]
        return TensorPoly(self.box, c), dropped

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_json(self):
        return {
            "schema": "henonlab/poly-v1",
            "box": self.box.to_json(),
            "degrees": list(self.degrees),
            "coeffs": self.coeffs.ravel(order="C").tolist(),
        }

    @classmethod
    def from_json(cls, data):
        if data.get("schema") != "henonlab/poly-v1":
            raise ValueError(f"unknown schema {data.get('schema')!r}")
        box = Box.from_json(data["box"])
        shape = tuple(n + 1 for n in data["degrees"])
        coeffs = np.asarray(data["coeffs"], dtype=float).reshape(shape, order="C")
        return cls(box, coeffs)

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text):
        return cls.from_json(json.loads(text))

    def __repr__(self):
        return f"TensorPoly(degrees={self.degrees}, box={self.box!r})"


def _norm_grid_counts(degrees, cap=200_000):
    counts = [max(2 * n + 1, 9) for n in degrees]
    while np.prod(counts) > cap:
        k = int(np.argmax(counts))
        counts[k] = max(9, counts[k] // 2 + 1)
        if all(c == 9 for c in counts):
            break
    return counts


def fit_callable(fn, box, degrees):
    """Alias of :meth:`TensorPoly.from_callable` for functional style."""
    return TensorPoly.from_callable(fn, box, degrees)


def poly_product(p, q):
    """Exact product of two tensor polynomials (degree-sum collocation)."""
    if p.box != q.box:
        raise ValueError("operands live on different boxes")
    degrees = tuple(np.add(p.degrees, q.degrees))
    axes = p.box.node_axes(degrees)
    vals = p.eval_grid(axes) * q.eval_grid(axes)
    return TensorPoly.fit(vals, p.box)
