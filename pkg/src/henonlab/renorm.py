"""Period-doubling renormalization of Hénon-like maps.

One renormalization step is the composition

    RF = Lambda o H o F^2 o H^{-1} o Lambda^{-1},

where H is the horizontal-like change of variables

    H(x, y, z) = (f(x) - eps(x, y, z),  y,  z - delta(y, f^{-1}(y), 0)),

Lambda is the orientation-reversing affine rescaling built from the invariant
interval V of the once-straightened return map G = H o F^2 o H^{-1}, and
``f^{-1}`` denotes the monotone branch of f on the critical-value side.

H has no closed-form inverse; its first coordinate phi^{-1} is obtained by a
safeguarded Newton solve of

    f(phi^{-1}(w)) - eps(phi^{-1}(w), y, z + delta(y, f^{-1}(y), 0)) = x,

whose residual doubles as the validity check for Dom(H) (we never construct
that region geometrically).

The rescaling Lambda applies the affine map s: V -> I^x to both x and y, and
its *slope* to z.  With that choice the derivative of the level scope map
psi_v = H^{-1} o Lambda^{-1} has the same factor 1/s' on the y-coordinate and
on the z-block, which is the normal form the tip asymptotics are written in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .chebyshev import Box, TensorPoly
from .errors import (
    BranchUndefined,
    NewtonDiverged,
    NoInvariantInterval,
    NotHenonLike,
)
from .henon import HenonMap
from .solvers import bracketed_newton
from .unimodal import UnimodalMap, _reversing_affine

__all__ = [
    "apply_H",
    "invert_H_point",
    "dphi_inv_dx",
    "find_invariant_V",
    "renormalize",
    "renormalize_n",
    "tune_doubling_parameter",
    "RenormStep",
    "RenormChain",
]


# ---------------------------------------------------------------------------
# the H coordinate change
# ---------------------------------------------------------------------------

def _branch_bracket(f, extend=0.08):
    """Newton bracket for the f^{-1} branch on the critical-value side."""
    lo, hi = f.interval
    c = f.critical_point
    if f(c) > c:
        return c, hi + extend * (hi - c)
    return lo - extend * (c - lo), c


def _f_inverse(f, targets):
    a, b = _branch_bracket(f)
    t = np.asarray(targets, dtype=float).ravel()
    fa, fb = f(a), f(b)
    lo_val, hi_val = min(fa, fb), max(fa, fb)
    if t.min() < lo_val - 1e-9 or t.max() > hi_val + 1e-9:
        raise BranchUndefined(
            f"f^-1 target range [{t.min():.4g}, {t.max():.4g}] outside branch "
            f"image [{lo_val:.4g}, {hi_val:.4g}]"
        )
    x = bracketed_newton(
        lambda s: f(s) - t,
        lambda s: f.deriv(s),
        np.full(t.shape, a),
        np.full(t.shape, b),
    )
    return x.reshape(np.shape(targets))


def _delta_shift(F, y):
    """The vector delta(y, f^{-1}(y), 0), shape (P, m)."""
    y = np.asarray(y, dtype=float)
    if F.m == 0:
        return np.zeros(y.shape + (0,))
    fy = _f_inverse(F.f, y)
    pts = np.zeros(y.shape + (F.dim,))
    pts[..., 0] = y
    pts[..., 1] = fy
    out = np.stack([dj(pts) for dj in F.delta], axis=-1)
    return out


def apply_H(F, w):
    """H(x,y,z) = (f(x) - eps(w), y, z - delta(y, f^{-1}(y), 0))."""
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    pts = np.atleast_2d(w)
    out = pts.copy()
    out[:, 0] = F.f(pts[:, 0]) - F.eps(pts)
    out[:, 2:] = pts[:, 2:] - _delta_shift(F, pts[:, 1])
    return out[0] if single else out


def invert_H_point(F, w):
    """H^{-1}(x,y,z) = (phi^{-1}(w), y, z + delta(y, f^{-1}(y), 0)).

    phi^{-1} is solved per point by a safeguarded Newton on the branch
    bracket; the defining residual f o phi^{-1} - eps o H^{-1} - x is policed
    by the solver (raises NewtonDiverged beyond 1e-9, typically ~1e-14).
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    pts = np.atleast_2d(w)
    out = pts.copy()
    out[:, 2:] = pts[:, 2:] + _delta_shift(F, pts[:, 1])
    x, y = pts[:, 0], pts[:, 1]
    zp = out[:, 2:]
    a, b = _branch_bracket(F.f)
    grad_eps = F._gradients()[0]

    def assemble(t):
        q = np.empty((t.shape[0], F.dim))
        q[:, 0] = t
        q[:, 1] = y
        q[:, 2:] = zp
        return q

    t = bracketed_newton(
        lambda t: F.f(t) - F.eps(assemble(t)) - x,
        lambda t: F.f.deriv(t) - grad_eps[0](assemble(t)),
        np.full(x.shape, a),
        np.full(x.shape, b),
    )
    out[:, 0] = t
    return out[0] if single else out


def dphi_inv_dx(F, w):
    """Closed form for the x-derivative of phi^{-1} at w.

    (f^{-1})'(x + eps o H^{-1}) / (1 - (f^{-1})' . d_x eps o H^{-1});
    the finite-difference comparison of this display lives in the tests.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    hinv = np.atleast_2d(invert_H_point(F, w))
    eps_h = F.eps(hinv)
    t = _f_inverse(F.f, w[:, 0] + eps_h)
    finv_prime = 1.0 / F.f.deriv(t)
    deps_x = F._gradients()[0][0](hinv)
    return finv_prime / (1.0 - finv_prime * deps_x)


def _g_eval(F, w):
    """G = H o F^2 o H^{-1}, vectorized."""
    return apply_H(F, F(F(invert_H_point(F, w))))


# ---------------------------------------------------------------------------
# invariant interval
# ---------------------------------------------------------------------------

def _cross_section(box, v, y_grid, z_grid):
    """(y, z) section grid: y over V itself, z over the full z-box.

    The rescaling sends the y-domain of the child into V, so H^{-1} (whose
    shift needs f^{-1}(y)) is only ever evaluated with y in V; the full
    y-interval would leave the domain of the inverse branch.
    """
    axes = [np.linspace(v[0], v[1], y_grid)]
    axes += [np.linspace(lo, hi, z_grid) for (lo, hi) in box.intervals[2:]]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _assemble(xs, cross, dim):
    n_x, n_c = xs.shape[0], cross.shape[0]
    pts = np.empty((n_x * n_c, dim))
    pts[:, 0] = np.repeat(xs, n_c)
    pts[:, 1:] = np.tile(cross, (n_x, 1))
    return pts


def find_invariant_V(
    F,
    pad=1e-10,
    x_grid=257,
    y_grid=17,
    z_grid=5,
    seed_halfwidth=1e-3,
    maxit=200,
):
    """Minimal interval V with pi_x G(V x S) in V, G = H o F^2 o H^{-1},
    where the section S runs over y in V and z in the full z-box.

    Deterministic construction: locate the critical point of the 1D proxy
    x -> pi_x G(x, y_mid, 0) near f's critical point (the proxy is a small
    perturbation of f^2 there, with a local minimum), then grow the hull of
    forward x-images of V x (cross-section grid) from a tiny seed interval
    until it stabilizes.  The two extrema are polished with a bounded
    quasi-Newton pass before padding, and invariance is re-verified on an
    independent coarse grid.

    Failures are classified on ``NoInvariantInterval.side`` for parameter
    tuning: a hull that escapes the box means the parameter is beyond the
    doubling accumulation ("high"); a collapsed or mis-ordered critical
    orbit of the proxy (no room for a unimodal child) means it is below
    ("low").

    Raises
    ------
    NoInvariantInterval
        If the hull escapes the box, never settles, the doubling order of
        the proxy critical orbit is violated, or the final verification
        finds an image point outside V.
    """
    box = F.box
    x_lo, x_hi = box.intervals[0]
    y_mid = float(np.mean(box.intervals[1]))
    c = F.f.critical_point

    def proxy(x):
        pts = np.zeros((np.size(x), F.dim))
        pts[:, 0] = np.ravel(x)
        pts[:, 1] = y_mid
        return _g_eval(F, pts)[:, 0]

    # the proxy is only solvable where f(t) - eps = x has a root on the
    # branch bracket; clip the critical-point search window accordingly
    eps_bar = F.eps.sup_norm()[0]
    a_br, b_br = _branch_bracket(F.f)
    f_ends = sorted((float(F.f(b_br)), float(F.f(F.f.critical_point))))
    margin = eps_bar + 1e-2
    solv_lo, solv_hi = f_ends[0] + margin, f_ends[1] - margin
    half = 0.25 * (x_hi - x_lo) / 2.0
    win_lo = max(c - half, solv_lo, x_lo)
    win_hi = min(c + half, solv_hi, x_hi)
    if not (win_lo < c < win_hi):
        raise NoInvariantInterval(
            "critical point outside the solvable proxy window "
            f"[{win_lo:.4g}, {win_hi:.4g}] (collapsed regime)",
            side="low",
        )
    res = optimize.minimize_scalar(
        lambda t: float(proxy([t])[0]),
        bounds=(win_lo, win_hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    c_g = float(res.x)

    # kneading classification on the 1D proxy before growing the hull.  In
    # the doubling window the critical orbit surrounds c and the proxy folds
    # exactly once on its hull.  An orbit trapped on one side of c means an
    # attracting low-period regime (parameter below the window); a second
    # fold inside the orbit hull means the chaotic band has merged through
    # the doubling structure (parameter beyond it).
    p1 = float(proxy([c_g])[0])
    if p1 >= c_g - 1e-6 * (x_hi - x_lo):
        raise NoInvariantInterval(
            f"proxy critical value p(c)={p1:.4g} not below c={c_g:.4g}",
            side="low",
        )
    orbit = []
    pt = p1
    for _ in range(40):
        if not (solv_lo <= pt <= solv_hi) or not np.isfinite(pt):
            raise NoInvariantInterval(
                f"proxy critical orbit left the solvable range at {pt:.4g}",
                side="high",
            )
        orbit.append(pt)
        pt = float(proxy([pt])[0])
    orbit.append(pt)
    o = np.asarray(orbit)
    if not (o.min() <= c_g <= o.max()):
        raise NoInvariantInterval(
            "proxy critical orbit trapped on one side of c "
            f"(hull [{o.min():.4g}, {o.max():.4g}], c={c_g:.4g})",
            side="low",
        )
    fold_grid = np.linspace(o.min(), o.max(), 241)
    dp = np.diff(proxy(fold_grid))
    folds = int(np.count_nonzero(dp[:-1] * dp[1:] < 0.0))
    if folds > 1:
        raise NoInvariantInterval(
            f"proxy folds {folds} times on the critical orbit hull "
            "(band beyond the doubling window)",
            side="high",
        )

    v_lo, v_hi = c_g - seed_halfwidth, c_g + seed_halfwidth
    width_cap = 1.2 * (x_hi - x_lo)

    def hull_pass(v_lo, v_hi):
        settled = False
        for _ in range(maxit):
            xs = np.linspace(v_lo, v_hi, x_grid)
            cross = _cross_section(box, (v_lo, v_hi), y_grid, z_grid)
            pts = _assemble(xs, cross, F.dim)
            try:
                img = _g_eval(F, pts)[:, 0]
            except (NewtonDiverged, BranchUndefined) as exc:
                raise NoInvariantInterval(
                    f"hull left the solvable region: {exc}", side="high"
                ) from exc
            mn, mx = float(img.min()), float(img.max())
            new_lo, new_hi = min(v_lo, mn), max(v_hi, mx)
            growth = max(v_lo - new_lo, new_hi - v_hi)
            if (new_hi - new_lo > width_cap or new_lo < x_lo - 0.1
                    or new_hi > x_hi + 0.1):
                raise NoInvariantInterval(
                    f"hull escaped: [{new_lo:.4g}, {new_hi:.4g}] (not "
                    "renormalizable, operational test)",
                    side="high",
                )
            v_lo, v_hi = new_lo, new_hi
            if growth <= 1e-12:
                settled = True
                break
        if not settled:
            raise NoInvariantInterval("forward hull failed to settle")
        return v_lo, v_hi, pts, img

    # alternate grid hulls with continuum polish of the extrema until the
    # polish stops finding anything the grid missed (interior quadratic
    # extrema sit between grid points; an improved endpoint feeds back into
    # the hull because the endpoints map onto each other with slope > 1)
    for _ in range(5):
        v_lo, v_hi, pts, img = hull_pass(v_lo, v_hi)
        bounds = [(v_lo, v_hi), (v_lo, v_hi)] + [
            tuple(iv) for iv in box.intervals[2:]
        ]

        def polish(idx, sign):
            r = optimize.minimize(
                lambda v: sign * float(_g_eval(F, v[None, :])[0, 0]),
                pts[idx],
                bounds=bounds,
                method="L-BFGS-B",
                options={"ftol": 1e-16, "gtol": 1e-12},
            )
            return sign * float(r.fun)

        mx = max(polish(int(np.argmax(img)), -1.0), float(img.max()))
        mn = min(polish(int(np.argmin(img)), 1.0), float(img.min()))
        improvement = max(v_lo - mn, mx - v_hi)
        v_lo, v_hi = min(v_lo, mn), max(v_hi, mx)
        if improvement <= 10 * pad:
            break
    v_lo, v_hi = v_lo - pad, v_hi + pad

    # independent verification sweep; the endpoint that maps onto the other
    # endpoint does so with slope > 1, so a one-shot symmetric pad is not
    # invariant -- expand to the verified image hull until it closes up
    for _ in range(8):
        ver_axes = [np.linspace(v_lo, v_hi, 30), np.linspace(v_lo, v_hi, 30)] + [
            np.linspace(lo, hi, 30) for (lo, hi) in box.intervals[2:]
        ]
        mesh = np.meshgrid(*ver_axes, indexing="ij")
        ver = np.stack([m.ravel() for m in mesh], axis=-1)
        vimg = _g_eval(F, ver)[:, 0]
        overshoot = max(v_lo - vimg.min(), vimg.max() - v_hi)
        if overshoot <= 0.0:
            return (v_lo, v_hi)
        v_lo = min(v_lo, float(vimg.min()) - pad)
        v_hi = max(v_hi, float(vimg.max()) + pad)
    raise NoInvariantInterval(
        f"verification overshoot: images span [{vimg.min():.6g}, "
        f"{vimg.max():.6g}] vs V = [{v_lo:.6g}, {v_hi:.6g}]"
    )


# ---------------------------------------------------------------------------
# the renormalization step
# ---------------------------------------------------------------------------

def _lambda_maps(V):
    lo, hi = V
    s, s_inv = _reversing_affine(lo, hi)
    slope = -2.0 / (hi - lo)

    def lam(w):
        out = np.array(w, dtype=float, copy=True)
        out[..., 0] = s(w[..., 0])
        out[..., 1] = s(w[..., 1])
        out[..., 2:] = slope * w[..., 2:]
        return out

    def lam_inv(w):
        out = np.array(w, dtype=float, copy=True)
        out[..., 0] = s_inv(w[..., 0])
        out[..., 1] = s_inv(w[..., 1])
        out[..., 2:] = w[..., 2:] / slope
        return out

    return lam, lam_inv, slope


@dataclass
class RenormStep:
    """One renormalization level: parent map, rescaling data, child map.

    ``s_slope`` is the (negative) slope of the affine s: V -> I^x; the
    contraction of the level scope map psi_v is its reciprocal, exposed as
    ``scale`` (signed) and ``sigma`` (magnitude, the number that plays the
    role of the universal scaling ratio).
    """

    parent: HenonMap
    child: HenonMap
    V: tuple
    s_slope: float
    y_mid: float
    norms: dict
    K: float
    cross_check: dict
    residuals: dict

    @property
    def scale(self):
        return 1.0 / self.s_slope

    @property
    def sigma(self):
        return abs(self.scale)

    # -- maps attached to the level --------------------------------------

    def g(self, w):
        """The un-rescaled return map H o F^2 o H^{-1}."""
        return _g_eval(self.parent, w)

    def rf(self, w):
        """Direct pointwise RF = Lambda o G o Lambda^{-1} (no refit)."""
        lam, lam_inv, _ = _lambda_maps(self.V)
        return lam(_g_eval(self.parent, lam_inv(np.asarray(w, dtype=float))))

    def scope_v(self, w):
        """psi_v = H^{-1} o Lambda^{-1}: B -> B^1_v."""
        _, lam_inv, _ = _lambda_maps(self.V)
        return invert_H_point(self.parent, lam_inv(np.asarray(w, dtype=float)))

    def scope_c(self, w):
        """psi_c = F o psi_v: B -> B^1_c."""
        return self.parent(self.scope_v(w))


def _child_degrees(F, f1_degree, eps_degrees, delta_degrees):
    if f1_degree is None:
        f1_degree = max(24, F.f.poly.degrees[0])
    if eps_degrees is None:
        ed = F.eps.degrees
        eps_degrees = (f1_degree, max(12, ed[1])) + tuple(
            0 if d == 0 else max(8, d) for d in ed[2:]
        )
    if delta_degrees is None:
        out = []
        for dj in F.delta:
            dd = dj.degrees
            out.append(
                (f1_degree, max(12, dd[1]))
                + tuple(0 if d == 0 else max(8, d) for d in dd[2:])
            )
        delta_degrees = tuple(out)
    return f1_degree, tuple(eps_degrees), tuple(delta_degrees)


def renormalize(F, f1_degree=None, eps_degrees=None, delta_degrees=None, v_kwargs=None):
    """One period-doubling step: find V, evaluate RF at nodes, refit.

    The child components are split by the slice rule: ``f1(x)`` is the first
    coordinate of RF along the line (x, y_mid, 0); ``eps1`` is the remainder
    ``f1(x) - pi_x RF`` and ``delta1`` the z-coordinates, each refit as
    polynomials on the parent box.  The Prop-style closed form for f1 (in
    both published sign variants) is recorded as a cross-check, not used for
    extraction.

    Raises
    ------
    NoInvariantInterval
        If the operational renormalizability test fails.
    NotHenonLike
        If pi_y RF deviates from x beyond 1e-9 at the fit nodes (a bug trap:
        the identity is structural).
    """
    V = find_invariant_V(F, **(v_kwargs or {}))
    lam, lam_inv, slope = _lambda_maps(V)
    y_mid = float(np.mean(F.box.intervals[1]))

    def rf(w):
        return lam(_g_eval(F, lam_inv(np.asarray(w, dtype=float))))

    f1_deg, eps_deg, delta_degs = _child_degrees(F, f1_degree, eps_degrees, delta_degrees)

    # pointwise identity check + child f on a 1D slice
    x_nodes = Box([F.box.intervals[0]]).node_axes((f1_deg,))[0]
    slice_pts = np.zeros((x_nodes.size, F.dim))
    slice_pts[:, 0] = x_nodes
    slice_pts[:, 1] = y_mid
    f1_vals = rf(slice_pts)[:, 0]
    f1_poly = TensorPoly.fit(f1_vals, Box([F.box.intervals[0]]), (f1_deg,))
    f1 = UnimodalMap(f1_poly, check=False)

    grid_deg = tuple(
        max(eps_deg[i], max((dd[i] for dd in delta_degs), default=0))
        for i in range(F.dim)
    )
    nodes = F.box.node_grid(grid_deg)
    img = rf(nodes)
    y_dev = float(np.max(np.abs(img[:, 1] - nodes[:, 0])))
    if y_dev > 1e-9:
        raise NotHenonLike(f"pi_y RF deviates from x by {y_dev:.2e}")

    shape = tuple(d + 1 for d in grid_deg)
    eps1_vals = f1(nodes[:, 0]) - img[:, 0]
    eps1 = TensorPoly.fit(eps1_vals.reshape(shape), F.box, grid_deg)
    eps1, _ = eps1.truncate(1e-14)
    deltas1 = []
    for j in range(F.m):
        dj = TensorPoly.fit(img[:, 2 + j].reshape(shape), F.box, grid_deg)
        deltas1.append(dj.truncate(1e-14)[0])
    child = HenonMap(f1, eps1, deltas1, F.box)

    # refit fidelity at off-node points
    rng = np.random.default_rng(20)
    probe = np.column_stack(
        [rng.uniform(lo, hi, 200) for (lo, hi) in F.box.intervals]
    )
    direct = rf(probe)
    refit = child(probe)
    fidelity = float(np.max(np.abs(direct - refit)))

    # norms and the Prop-style bound constant
    eps_bar = F.eps.sup_norm()[0]
    delta_bar = max((d.sup_norm()[0] for d in F.delta), default=0.0)
    eps1_norm = eps1.sup_norm()[0]
    delta1_norm = max((d.sup_norm()[0] for d in deltas1), default=0.0)
    den_eps = eps_bar**2 + eps_bar * delta_bar
    den_delta = eps_bar * delta_bar + delta_bar**2
    if eps1_norm < 1e-13 and delta1_norm < 1e-13:
        K = 0.0
    else:
        K_eps = eps1_norm / den_eps if den_eps > 0 else np.inf
        K_delta = delta1_norm / den_delta if den_delta > 0 else np.inf
        K = float(max(K_eps, K_delta if F.m else 0.0))

    cross = _prop_cross_check(F, f1, V)

    norms = {
        "eps1": eps1_norm,
        "delta1": delta1_norm,
        "eps_parent": eps_bar,
        "delta_parent": delta_bar,
    }
    residuals = {"y_identity": y_dev, "refit_fidelity": fidelity}
    return RenormStep(
        parent=F,
        child=child,
        V=V,
        s_slope=slope,
        y_mid=y_mid,
        norms=norms,
        K=K,
        cross_check=cross,
        residuals=residuals,
    )


def _prop_cross_check(F, f1, V):
    """Compare extracted f1 with the closed two-step form, both sign variants.

    v(x) = eps(x, f^{-1}(x), 0); the candidate pre-rescaling maps are

        minus: f^2 - v o f - [f'(f(x)) - d_x eps(f(x), x, 0)] . v
        plus:  f^2 + v o f + f'(f(x)) . v

    (the two variants appear in different displays of the same derivation;
    the recorded sup-gaps let the data decide).
    """
    f = F.f
    s, s_inv = _reversing_affine(*V)
    xt = np.linspace(-1.0, 1.0, 201)
    x = s_inv(xt)
    fx = f(x)
    vx = _v_slice(F, x)
    pts_mid = np.zeros((x.size, F.dim))
    pts_mid[:, 0] = fx
    pts_mid[:, 1] = x
    # v o f means eps(f(x), x, 0): the second slot is the actual preimage x,
    # which a one-sided branch inverse would fold to |x| on half of V
    vfx = F.eps(pts_mid)
    deps_x = F._gradients()[0][0](pts_mid)
    f2 = f(fx)
    prop_minus = f2 - vfx - (f.deriv(fx) - deps_x) * vx
    prop_plus = f2 + vfx + f.deriv(fx) * vx
    extracted = f1(xt)
    gap_minus = float(np.max(np.abs(extracted - s(prop_minus))))
    gap_plus = float(np.max(np.abs(extracted - s(prop_plus))))
    best = "minus" if gap_minus <= gap_plus else "plus"
    return {"minus": gap_minus, "plus": gap_plus, "best": best,
            "gap": min(gap_minus, gap_plus)}


def _v_slice(F, x):
    """v(x) = eps(x, f^{-1}(x), 0)."""
    pts = np.zeros((np.size(x), F.dim))
    pts[:, 0] = x
    pts[:, 1] = _f_inverse(F.f, x)
    return F.eps(pts)


class RenormChain:
    """A chain of renormalization steps with an optional early-stop report."""

    def __init__(self, root, steps, failure=None):
        self.root = root
        self.steps = steps
        self.failure = failure

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, k):
        return self.steps[k]

    def __iter__(self):
        return iter(self.steps)

    @property
    def maps(self):
        """[F, RF, R^2F, ...] — one more entry than there are steps."""
        return [self.root] + [s.child for s in self.steps]


def renormalize_n(F, n, on_failure="raise", **kwargs):
    """Chain n renormalization steps (n=0 gives a chain holding only F).

    ``on_failure="raise"`` propagates the first error; ``"partial"`` returns
    the completed prefix with a failure record on the chain.
    """
    steps = []
    current = F
    for level in range(n):
        try:
            step = renormalize(current, **kwargs)
        except Exception as exc:
            if on_failure == "raise":
                raise
            return RenormChain(
                F,
                steps,
                failure={"level": level, "error": type(exc).__name__,
                         "message": str(exc),
                         "side": getattr(exc, "side", None)},
            )
        steps.append(step)
        current = step.child
    return RenormChain(F, steps)


def tune_doubling_parameter(family, lo, hi, levels=8, tol=1e-10, **kwargs):
    """Bisect a family parameter onto its period-doubling accumulation.

    ``family`` maps a real parameter to a HenonMap.  A parameter is
    classified by running the renormalization cascade until it fails and
    reading the failure side: collapsed/mis-ordered critical orbit means the
    parameter is below the accumulation, an escaping hull means above.  A
    parameter whose cascade survives ``levels`` steps is returned
    immediately; otherwise bisection proceeds to width ``tol``.

    Perturbing a family shifts its accumulation away from the unperturbed
    one at first order, and the distance from the accumulation roughly
    quadruples per level, so any chain deeper than two or three levels
    needs this tuning first.

    Extra keyword arguments are forwarded to :func:`renormalize`.
    """

    def classify(mu):
        try:
            F = family(mu)
        except ValueError:
            # family constructor itself rejected the parameter (e.g. the
            # unimodal interval condition breaks for large mu)
            return "high"
        chain = renormalize_n(F, levels, on_failure="partial", **kwargs)
        if chain.failure is None:
            return "done"
        side = chain.failure["side"]
        if side is None:
            raise NoInvariantInterval(
                f"unclassified cascade failure at parameter {mu}: "
                f"{chain.failure}"
            )
        return side

    side_lo = classify(lo)
    if side_lo == "done":
        return lo
    side_hi = classify(hi)
    if side_hi == "done":
        return hi
    if side_lo != "low" or side_hi != "high":
        raise ValueError(
            f"bracket [{lo}, {hi}] does not straddle the accumulation: "
            f"sides ({side_lo}, {side_hi})"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        side = classify(mid)
        if side == "done":
            return mid
        if side == "low":
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
