"""One-dimensional period-doubling renormalization.

This module owns the 1D backbone that the higher-dimensional machinery leans
on: the doubling operator ``R f = s o f^2 o s^{-1}``, its fixed point ``f_*``,
the scaling constant ``sigma``, and the universal functions ``g_*`` (the
presentation branch), ``u_*`` (rescaled limit of its iterates), ``v_*`` and
the Jacobian profile ``a(x)`` built from them.

Normalization.  The operator is implemented with ``J_c`` the *minimal*
``f^2``-invariant interval around the critical point (endpoints on the
critical orbit: ``J_c = [f^2(c), f^4(c)]``) and ``s`` the orientation-reversing
affine map onto ``I = [-1, 1]``.  Output maps are therefore "core normalized":
``Rf(c') = 1`` and ``(Rf)^2(c') = -1`` hold identically, and at the fixed point
``|J_c| / |I|`` equals the scaling constant exactly.  The fixed-point solver
itself runs Newton in the conjugate *even* frame (even Chebyshev coefficients,
``f(0) = 1`` pinned) where the search space is half as large, and converts the
solution to the core frame afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as _cheb

from .chebyshev import Box, TensorPoly, cheb_points
from .errors import NoConvergence, NotRenormalizable
from .solvers import bracketed_newton

__all__ = [
    "UnimodalMap",
    "FixedPointData",
    "UniversalData",
    "renorm_1d",
    "doubling_interval",
    "solve_fixed_point",
    "universal_functions",
]


class UnimodalMap:
    """Polynomial unimodal map of an interval with one interior critical point.

    Parameters
    ----------
    poly : TensorPoly
        One-dimensional polynomial; its box is the dynamical interval.
    check : bool
        Validate unimodality and invariance of the interval on a grid.
    """

    def __init__(self, poly, check=True):
        if poly.box.dim != 1:
            raise ValueError("UnimodalMap expects a 1D polynomial")
        self.poly = poly
        self.dpoly = poly.diff(0)
        self.interval = tuple(poly.box.intervals[0])
        self.critical_point = self._locate_critical_point()
        if check:
            self._validate()

    # -- evaluation --------------------------------------------------------

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        vals = self.poly(flat[:, None])
        return vals.reshape(x.shape) if x.shape else float(vals[0])

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        vals = self.dpoly(flat[:, None])
        return vals.reshape(x.shape) if x.shape else float(vals[0])

    def iterate(self, x, n):
        y = np.asarray(x, dtype=float)
        for _ in range(n):
            y = self(y)
        return y

    # -- structure ---------------------------------------------------------

    def _locate_critical_point(self):
        lo, hi = self.interval
        grid = np.linspace(lo, hi, 2001)
        dv = self.deriv(grid)
        # sign changes of f'; an exact zero at a grid point counts once
        exact = np.nonzero(dv[1:-1] == 0.0)[0] + 1
        flips = np.nonzero(dv[:-1] * dv[1:] < 0.0)[0]
        if len(exact) + len(flips) != 1:
            raise ValueError(
                "expected exactly one interior critical point, "
                f"found {len(exact) + len(flips)}"
            )
        if len(exact):
            return float(grid[exact[0]])
        i = flips[0]
        root = bracketed_newton(
            lambda t: self.deriv(t),
            lambda t: self.poly.diff(0, order=2)(np.atleast_1d(t)[:, None]),
            np.array([grid[i]]),
            np.array([grid[i + 1]]),
        )
        return float(root[0])

    def _validate(self):
        lo, hi = self.interval
        grid = np.linspace(lo, hi, 512)
        vals = self(grid)
        if vals.min() < lo - 1e-8 or vals.max() > hi + 1e-8:
            raise ValueError("map does not send its interval into itself")

    def inverse_branch(self, y, side):
        """Solve ``f(x) = y`` on the monotone branch left/right of ``c``."""
        lo, hi = self.interval
        c = self.critical_point
        a, b = (lo, c) if side == "left" else (c, hi)
        y = np.asarray(y, dtype=float)
        flat = np.atleast_1d(y).ravel()
        x = bracketed_newton(
            lambda t: self(t) - flat,
            lambda t: self.deriv(t),
            np.full(flat.shape, a),
            np.full(flat.shape, b),
        )
        return x.reshape(y.shape) if y.shape else float(x[0])

    def fixed_points(self):
        """Real fixed points inside the interval."""
        lo, hi = self.interval
        grid = np.linspace(lo, hi, 2001)
        res = self(grid) - grid
        flips = np.nonzero(np.sign(res[:-1]) * np.sign(res[1:]) < 0)[0]
        out = []
        for i in flips:
            r = bracketed_newton(
                lambda t: self(t) - t,
                lambda t: self.deriv(t) - 1.0,
                np.array([grid[i]]),
                np.array([grid[i + 1]]),
            )
            out.append(float(r[0]))
        return out

    def to_json(self):
        return {"schema": "henonlab/unimodal-v1", "poly": self.poly.to_json()}

    @classmethod
    def from_json(cls, data):
        if data.get("schema") != "henonlab/unimodal-v1":
            raise ValueError(f"unknown schema {data.get('schema')!r}")
        return cls(TensorPoly.from_json(data["poly"]), check=False)

    @classmethod
    def from_coeffs(cls, coeffs, interval=(-1.0, 1.0), check=True):
        poly = TensorPoly(Box([interval]), np.asarray(coeffs, dtype=float))
        return cls(poly, check=check)

    @classmethod
    def quadratic(cls, mu, interval=(-1.0, 1.0)):
        """The family ``x -> 1 - mu x^2`` as a degree-2 map."""
        coeffs = _cheb.poly2cheb([1.0, 0.0, -mu])
        return cls.from_coeffs(coeffs, interval)

    def __repr__(self):
        lo, hi = self.interval
        return f"UnimodalMap(degree={self.poly.degrees[0]}, interval=[{lo:g},{hi:g}])"


# ---------------------------------------------------------------------------
# doubling operator
# ---------------------------------------------------------------------------


def doubling_interval(f, degenerate_tol=1e-8):
    """Return the doubling interval ``J_c`` of ``f``.

    The primary choice is the minimal ``f^2``-invariant interval around the
    critical point, with endpoints on the critical orbit:
    ``[f^2(c), f^4(c)]``.  When the critical orbit is (numerically) periodic
    of period two this degenerates to a point; the classical restrictive
    interval built from the orientation-reversing fixed point is used instead.
    """
    c = f.critical_point
    v2 = f.iterate(c, 2)
    v4 = f.iterate(c, 4)
    if v2 < c < v4 and (v4 - v2) > degenerate_tol:
        lo, hi = float(v2), float(v4)
    else:
        lo, hi = _restrictive_interval(f)
    _check_doubling_interval(f, lo, hi)
    return lo, hi


def _restrictive_interval(f):
    # [beta_hat, beta] with beta the orientation-reversing fixed point and
    # beta_hat its preimage on the other side of the critical point.
    c = f.critical_point
    cands = [p for p in f.fixed_points() if f.deriv(p) < 0]
    if not cands:
        raise NotRenormalizable("no orientation-reversing fixed point")
    beta = cands[-1]
    side = "left" if beta > c else "right"
    beta_hat = f.inverse_branch(beta, side)
    lo, hi = sorted((float(beta), float(beta_hat)))
    return lo, hi


def _check_doubling_interval(f, lo, hi, tol=1e-7):
    c = f.critical_point
    if not (lo - tol <= c <= hi + tol):
        raise NotRenormalizable("critical point escapes the candidate interval")
    grid = np.linspace(lo, hi, 512)
    vals = f(f(grid))
    if vals.min() < lo - tol or vals.max() > hi + tol:
        raise NotRenormalizable(
            f"f^2 does not keep [{lo:.6f}, {hi:.6f}] invariant "
            f"(image [{vals.min():.6f}, {vals.max():.6f}])"
        )


def _reversing_affine(lo, hi):
    """Orientation-reversing affine ``s``: ``[lo, hi] -> [-1, 1]`` and inverse."""

    def s(x):
        return ((hi + lo) - 2.0 * np.asarray(x, dtype=float)) / (hi - lo)

    def s_inv(u):
        return 0.5 * ((hi + lo) - (hi - lo) * np.asarray(u, dtype=float))

    return s, s_inv


def renorm_1d(f, degree=None):
    """One step of period doubling: ``R f = s o f^2 o s^{-1}`` on ``[-1, 1]``.

    Raises
    ------
    NotRenormalizable
        If no doubling interval exists.
    """
    lo, hi = doubling_interval(f)
    s, s_inv = _reversing_affine(lo, hi)
    degree = degree if degree is not None else max(f.poly.degrees[0], 8)
    box = Box([[-1.0, 1.0]])
    poly = TensorPoly.from_callable(
        lambda p: s(f(f(s_inv(p[:, 0])))), box, (2 * degree,)
    )
    poly, _ = poly.truncate(1e-14)
    return UnimodalMap(poly)


# ---------------------------------------------------------------------------
# fixed point of the operator
# ---------------------------------------------------------------------------


@dataclass
class FixedPointData:
    """Solution bundle for the doubling fixed point (core normalization)."""

    f_star: UnimodalMap
    sigma: float
    J_c: tuple
    J_v: tuple
    residual: float
    newton_residual: float
    sigma_even_frame: float
    even_coeffs: np.ndarray = field(repr=False)

    @property
    def critical_point(self):
        return self.f_star.critical_point


def _even_poly(a):
    """Full Chebyshev coefficient vector from even-index coefficients."""
    c = np.zeros(2 * len(a) - 1)
    c[::2] = a
    return c


def _even_apply(a, x):
    return _cheb.chebval(np.asarray(x, dtype=float), _even_poly(a))


def _even_operator(a, x):
    # R_even f (x) = -(1/lam) f(f(lam x)),   lam = -f(1)  (f(0) = 1 pinned)
    lam = -_even_apply(a, 1.0)
    return -_even_apply(a, _even_apply(a, lam * x)) / lam


def solve_fixed_point(degree=40, tol=1e-11, max_newton=40):
    """Solve ``R f = f`` and return core-normalized :class:`FixedPointData`.

    Parameters
    ----------
    degree : int
        Polynomial degree of the representation (must be even).
    tol : float
        Sup-norm residual target for the Newton stage.
    """
    if degree % 2:
        raise ValueError("degree must be even")
    K = degree // 2
    # unknowns: even coefficients a_1..a_K; a_0 pinned by f(0) = 1
    signs = (-1.0) ** np.arange(K + 1)

    def full_coeffs(free):
        a = np.empty(K + 1)
        a[1:] = free
        a[0] = 1.0 - np.dot(signs[1:], free)
        return a

    # collocation at the positive CGL nodes (even symmetry already encoded)
    nodes = cheb_points(2 * K)
    nodes = nodes[nodes > 1e-12]

    def residual(free):
        a = full_coeffs(free)
        return _even_operator(a, nodes) - _even_apply(a, nodes)

    # classic quartic seed
    seed = _cheb.poly2cheb([1.0, 0.0, -1.528, 0.0, 0.105])
    free = np.zeros(K)
    free[: (len(seed) + 1) // 2 - 1] = seed[2::2]

    newton_resid = np.inf
    for _ in range(max_newton):
        r = residual(free)
        newton_resid = float(np.max(np.abs(r)))
        if newton_resid < tol:
            break
        J = np.empty((len(nodes), K))
        h = 1e-7
        for j in range(K):
            e = np.zeros(K)
            e[j] = h
            J[:, j] = (residual(free + e) - residual(free - e)) / (2 * h)
        free = free - np.linalg.lstsq(J, r, rcond=None)[0]
    else:
        raise NoConvergence(f"fixed-point Newton stalled at {newton_resid:.2e}")

    a = full_coeffs(free)
    lam = float(-_even_apply(a, 1.0))

    # change of frame: h maps the core [-lam, 1] onto [-1, 1], f* = h o g o h^{-1}
    def h(x):
        return (2.0 * np.asarray(x, dtype=float) + lam - 1.0) / (1.0 + lam)

    def h_inv(u):
        return 0.5 * ((1.0 + lam) * np.asarray(u, dtype=float) - lam + 1.0)

    box = Box([[-1.0, 1.0]])
    poly = TensorPoly.from_callable(
        lambda p: h(_even_apply(a, h_inv(p[:, 0]))), box, (degree,)
    )
    f_star = UnimodalMap(poly)

    c = f_star.critical_point
    v = [c]
    for _ in range(4):
        v.append(float(f_star(v[-1])))
    J_c = (v[2], v[4])
    J_v = (v[3], v[1])
    sigma = 0.5 * (J_c[1] - J_c[0])

    # end-to-end residual through the actual operator implementation
    rf = renorm_1d(f_star)
    grid = np.linspace(-1.0, 1.0, 801)
    residual_sup = float(np.max(np.abs(rf(grid) - f_star(grid))))

    return FixedPointData(
        f_star=f_star,
        sigma=float(sigma),
        J_c=J_c,
        J_v=J_v,
        residual=residual_sup,
        newton_residual=newton_resid,
        sigma_even_frame=lam,
        even_coeffs=a,
    )


# ---------------------------------------------------------------------------
# universal functions
# ---------------------------------------------------------------------------


@dataclass
class UniversalData:
    """Universal 1D limit functions and diagnostics.

    Attributes
    ----------
    g_star : TensorPoly
        Presentation branch on ``[-1, 1]`` (fixed point at 1).
    u_star : TensorPoly
        Limit of affinely rescaled ``g_*^n``, on an extended domain.
    v_star : TensorPoly
        Recentered version, ``v(0) = 0``, ``v'(0) = 1``, on ``[-2, 1.5]``.
    a : TensorPoly
        Jacobian profile ``a(x)`` on ``[-1, 1]``.
    """

    g_star: TensorPoly
    u_star: TensorPoly
    v_star: TensorPoly
    a: TensorPoly
    a_alt: TensorPoly
    u_prime_at_one: float
    diagnostics: dict


def _extended_fstar(fp):
    """Evaluators for ``f_*`` analytically continued past ``[-1, 1]``.

    The continuation bootstraps the fixed-point equation
    ``f_* = s o f_*^2 o s^{-1}``: for arguments left of -1 the right-hand side
    only needs base-domain evaluations, and for arguments right of +1 it only
    needs the left extension.  No Chebyshev extrapolation is involved.
    """
    f = fp.f_star
    lo, hi = fp.J_c
    s, s_inv = _reversing_affine(lo, hi)

    def f2(x):
        return f(f(x))

    def df2(x):
        fx = f(x)
        return f.deriv(fx) * f.deriv(x)

    def left_val(x):  # x <= -1  (valid down to s(1) = 1 - 2/sigma)
        return s(f2(s_inv(x)))

    def left_der(x):
        return df2(s_inv(x))  # slopes of s and s^{-1} cancel

    def value(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        base = (x >= -1.0) & (x <= 1.0)
        left = x < -1.0
        right = x > 1.0
        if np.any(base):
            out[base] = f(x[base])
        if np.any(left):
            out[left] = left_val(x[left])
        if np.any(right):
            u = s_inv(x[right])  # lands left of -1
            out[right] = s(f(left_val(u)))
        return out

    def deriv(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        base = (x >= -1.0) & (x <= 1.0)
        left = x < -1.0
        right = x > 1.0
        if np.any(base):
            out[base] = f.deriv(x[base])
        if np.any(left):
            out[left] = left_der(x[left])
        if np.any(right):
            u = s_inv(x[right])
            out[right] = f.deriv(left_val(u)) * left_der(u)
        return out

    return value, deriv


def universal_functions(fp, degree=80, u_hi=2.43, a_degree=64):
    """Compute ``g_*``, ``u_*``, ``v_*`` and the profile ``a(x)``.

    ``u_*`` is the limit of the affinely rescaled compositions ``g_*^n``.
    Because ``g_*`` contracts toward its fixed point at 1 with multiplier
    ``mu = g_*'(1)``, that limit is (up to endpoint normalization) the
    linearizer of ``g_*``: the solution of

        ``phi(g_*(x)) = mu * phi(x)``,  ``phi(1) = 0``,  ``phi'(1) = 1``.

    Iterating ``g_*`` directly loses one digit per ~1.2 steps to cancellation —
    ``g_*^n(x) - 1`` shrinks like ``mu^n`` while the rescale grows like
    ``mu^-n`` — so instead we substitute ``phi(x) = (x-1) + (x-1)^2 q(x)``
    (which pins the normalization exactly) and solve the resulting *linear*
    collocation system for the Chebyshev coefficients of ``q``.  Then

        ``u_*(x) = 1 - 2 phi(x) / phi(-1)``,  ``v_*(x) = phi(x + 1)``,

    the latter because the ``1/u_*'(1)`` recentering cancels the endpoint
    normalization.  Direct rescaled iterates for small ``n`` are kept as an
    independent cross-check (``iterate_dists`` diagnostic).

    Parameters
    ----------
    fp : FixedPointData
    degree : int
        Chebyshev degree for ``q`` (``phi`` has degree ``degree + 2``).
    u_hi : float
        Right end of the extended domain of ``phi``; must be at least
        ``2 - critical point`` so ``a(x)`` can be formed, and below ~2.8
        (limit of the continued ``f_*``).
    a_degree : int
        Fit degree for the Jacobian profile ``a`` (a ratio, not a polynomial).

    Raises
    ------
    NoConvergence
        If the functional-equation residual of ``phi`` exceeds 1e-8.
    """
    f = fp.f_star
    c = f.critical_point
    lo, hi = fp.J_c
    s, s_inv = _reversing_affine(lo, hi)
    fe_val, fe_der = _extended_fstar(fp)

    # g_* = f_*^{-1} o s^{-1} on the decreasing branch through [c, 1] and its
    # analytic continuation right of 1.
    right_cap = 1.30

    def g_star(y):
        y = np.asarray(y, dtype=float)
        target = s_inv(y)
        flat = np.atleast_1d(target).ravel()
        x = bracketed_newton(
            lambda t: fe_val(t) - flat,
            fe_der,
            np.full(flat.shape, c + 1e-9),
            np.full(flat.shape, right_cap),
        )
        x = x.reshape(target.shape) if target.shape else float(x)
        return x

    # multiplier at the fixed point: g_*'(1) = sigma / |f_*'(1)|
    alpha = -float(f.deriv(np.array([1.0]))[0])
    mult = fp.sigma / alpha

    dom = Box([[-1.0, u_hi]])
    xs = dom.node_axes((degree + 16,))[0]
    gx = g_star(xs)
    tx = dom.to_unit(xs[:, None])[:, 0]
    tg = dom.to_unit(gx[:, None])[:, 0]
    vander_x = np.polynomial.chebyshev.chebvander(tx, degree)
    vander_g = np.polynomial.chebyshev.chebvander(tg, degree)
    lhs = (gx - 1.0)[:, None] ** 2 * vander_g - mult * (xs - 1.0)[:, None] ** 2 * vander_x
    rhs = mult * (xs - 1.0) - (gx - 1.0)
    q_coeffs, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    q = TensorPoly(dom, q_coeffs)

    def phi_vals(x):
        return (x - 1.0) + (x - 1.0) ** 2 * q(x[:, None])

    phi = TensorPoly.from_callable(lambda p: phi_vals(p[:, 0]), dom, (degree + 2,))

    fine = np.linspace(-1.0, u_hi, 2001)
    lin_resid = float(np.max(np.abs(phi_vals(g_star(fine)) - mult * phi_vals(fine))))
    if lin_resid > 1e-8:
        raise NoConvergence(
            f"linearizer residual {lin_resid:.2e} (degree {degree} insufficient?)"
        )

    k_norm = -2.0 / float(phi_vals(np.array([-1.0]))[0])
    u_star = TensorPoly.from_callable(
        lambda p: 1.0 + k_norm * phi_vals(p[:, 0]), dom, (degree + 2,)
    )
    v_box = Box([[-2.0, u_hi - 1.0]])
    v_star = TensorPoly.from_callable(
        lambda p: phi_vals(p[:, 0] + 1.0), v_box, (degree + 2,)
    )
    dv = v_star.diff(0)

    a_box = Box([[-1.0, 1.0]])

    def a_fn(p):
        x = p[:, 0]
        return dv((x - 1.0)[:, None]) / dv((f(x) - c)[:, None])

    def a_alt_fn(p):
        x = p[:, 0]
        return dv((x - c)[:, None]) / dv((f(x) - 1.0)[:, None])

    a = TensorPoly.from_callable(a_fn, a_box, (a_degree,))
    a_alt = TensorPoly.from_callable(a_alt_fn, a_box, (a_degree,))

    g_poly = TensorPoly.from_callable(lambda p: g_star(p[:, 0]), dom, (a_degree,))

    # direct rescaled iterates u_n for small n: independent of the linear
    # solve, they should approach u_* at rate ~mult per step
    probe = np.linspace(-1.0, 1.0, 101)
    u_ref = u_star(probe[:, None])
    iterate_dists = []
    j_v_lengths = []
    vals = probe.copy()
    end = np.array([-1.0])
    for _ in range(8):
        vals = g_star(vals)
        end = g_star(end)
        j_v_lengths.append(1.0 - end[0])
        u_n = 1.0 + (vals - 1.0) * (2.0 / (1.0 - end[0]))
        iterate_dists.append(float(np.max(np.abs(u_n - u_ref))))
    ratios = [j_v_lengths[i + 1] / j_v_lengths[i] for i in range(len(j_v_lengths) - 1)]

    # u_* conjugates f_* to the universal map of critical-value
    # renormalization: the affine rescalings of f_*^{2^n} restricted to the
    # n-th interval around the critical value must converge to u_ f_ u_^{-1}.
    ys = np.linspace(-1.0, 1.0, 301)

    def u_inv(y):
        return bracketed_newton(
            lambda x: u_star(x[:, None]) - y,
            lambda x: u_star.diff(0)(x[:, None]),
            np.full(y.shape, -1.0),
            np.full(y.shape, 1.0),
        )

    f_cv = u_star(f(u_inv(ys))[:, None])
    # endpoints of the critical-value intervals: e_n = g_*^n(-1)
    rv_dists = []
    e_n = np.array([-1.0])
    for n_lvl in range(1, 6):
        e_n = g_star(e_n)
        half = (1.0 - e_n[0]) / 2.0
        pre = e_n[0] + (ys + 1.0) * half  # A^{-1}(ys), onto [e_n, 1]
        img = f.iterate(pre, 2**n_lvl)
        rv = -1.0 + (img - e_n[0]) / half
        rv_dists.append(float(np.max(np.abs(rv - f_cv))))

    yv = np.linspace(fp.J_v[0], fp.J_v[1], 301)
    g_inv = lambda y: s(f(y))  # noqa: E731 - inverse branch of g_*
    conjugacy = float(np.max(np.abs(f(f(yv)) - g_star(f(g_inv(yv))))))
    xs_i = np.linspace(-1.0, 1.0, 301)[:, None]
    a_gap = float(np.max(np.abs(a(xs_i) - a_alt(xs_i))))

    diagnostics = {
        "multiplier": mult,
        "multiplier_vs_sigma_sq": abs(mult - fp.sigma**2),
        "linearization_residual": lin_resid,
        "iterate_dists": iterate_dists,
        "iterate_ratio_tail": (
            iterate_dists[-1] / iterate_dists[-2] if iterate_dists[-2] else np.nan
        ),
        "jv_ratio_tail": ratios[-1] if ratios else np.nan,
        "critical_value_renorm_dists": rv_dists,
        "conjugacy_sup": conjugacy,
        "a_form_discrepancy": a_gap,
        "a_min_on_I": float(np.min(a(xs_i))),
        "v_at_0": float(v_star(np.array([[0.0]]))[0]),
        "dv_at_0": float(dv(np.array([[0.0]]))[0]),
    }
    return UniversalData(
        g_star=g_poly,
        u_star=u_star,
        v_star=v_star,
        a=a,
        a_alt=a_alt,
        u_prime_at_one=k_norm,
        diagnostics=diagnostics,
    )
