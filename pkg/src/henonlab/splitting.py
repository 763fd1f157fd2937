"""Dominated-splitting diagnostics: block structure of DF, cone fields,
and stable/unstable plane fields along orbits.

The derivative of a map (x, y, z) -> (f(x) - eps(w), x, delta(w)) splits
into blocks

    DF = | A  B |      A: 2x2 on the (x, y) plane,   B: 2xm,
         | C  D |      C: mx2,                       D: mxm on the fibres,

with B = 0 exactly when eps has no z-dependence.  Domination means the
fibre block is uniformly weaker than the planar one (||D|| small against
the minimum expansion m(A)), in which case DF^{-1} contracts the vertical
cone ||u|| <= gamma ||v|| and the orbit closure carries a continuous
splitting into a strong-stable fibre field and a dominating plane field.

Everything here is a finite check along supplied orbits or point sets:
sup-ratios against the thresholds 1/2 and kappa*gamma/2, measured cone
contraction factors, and power-iteration estimates of the two invariant
subbundles.  Passing is evidence, not proof.

Note on the cone orientation: the inequality ||u|| <= gamma ||v|| (u the
planar part, v the fibre part) is the cone that DF^{-1} contracts, and is
what this module implements throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .errors import NewtonDiverged, OrbitEscaped, PreimageNewtonFailed, WrongCount
from .henon import inverse_point

__all__ = [
    "BlockDecomp",
    "block_decompose",
    "min_expansion",
    "kappa_bound",
    "cn_an_direct",
    "DominationReport",
    "domination_check",
    "ConeParams",
    "ConeReport",
    "cone_invariance_test",
    "periodic_orbit",
    "GammaSample",
    "gamma_sample",
    "PlaneFieldPoint",
    "invariant_plane_field",
    "plane_field_along_orbit",
    "plane_field_invariance",
]


# -- block decomposition --------------------------------------------------


@dataclass(frozen=True)
class BlockDecomp:
    """The four blocks of DF at one point, planar block first."""

    point: np.ndarray
    A: np.ndarray  # 2 x 2
    B: np.ndarray  # 2 x m
    C: np.ndarray  # m x 2
    D: np.ndarray  # m x m

    def matrix(self):
        """Reassemble the full (m+2) x (m+2) derivative."""
        top = np.hstack([self.A, self.B])
        bottom = np.hstack([self.C, self.D])
        return np.vstack([top, bottom])


def block_decompose(F, w):
    """Partition ``DF(w)`` into planar/fibre blocks."""
    w = np.asarray(w, dtype=float)
    d = F.df(w)
    return BlockDecomp(point=w, A=d[:2, :2].copy(), B=d[:2, 2:].copy(),
                       C=d[2:, :2].copy(), D=d[2:, 2:].copy())


def min_expansion(M):
    """Minimum expansion rate m(M): the smallest singular value.

    Satisfies ``||M^{-1}|| = 1/m(M)`` for invertible M and equals 0 for
    singular M.  The empty (0 x 0) block expands everything vacuously.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.inf
    return float(np.linalg.svd(M, compute_uv=False)[-1])


# -- domination -----------------------------------------------------------


def kappa_bound(c1, a1, d1, tight=False):
    """Uniform bound on ``||C_N A_N^{-1}||`` from one-step block norms.

    The default is kappa = ||C1|| m(A1) / (m(A1) - ||D1||), the constant
    the cone thresholds are quoted against.  Expanding C_N A_N^{-1} into
    the series sum_i D_i C1 A_{i+1}^{-1} shows each term carries i+1
    factors of A^{-1}, so the bound that the direct products actually
    respect is ||C1|| / (m(A1) - ||D1||) — the same expression divided
    by m(A1).  The two agree when m(A1) = 1 and the default understates
    the series whenever m(A1) < 1; pass ``tight=True`` to get the bound
    suitable for comparing against measured ``cn_an_direct`` values.

    Returns ``inf`` when ``||D1|| >= m(A1)``.
    """
    if d1 >= a1:
        return np.inf
    return c1 / (a1 - d1) if tight else c1 * a1 / (a1 - d1)


def cn_an_direct(F, orbit, n_max):
    """``||C_N A_N^{-1}||`` for N = 1..n_max along a toy-model orbit.

    Composes DF along the orbit and reads the blocks off the product.
    Only meaningful when B = 0 (otherwise the blocks of DF^N are not
    products of the pointwise blocks).
    """
    if F.m == 0:
        raise ValueError("no fibre block when m = 0")
    orbit = np.atleast_2d(np.asarray(orbit, dtype=float))
    if len(orbit) < n_max:
        raise ValueError("orbit shorter than n_max")
    M = np.eye(F.dim)
    out = np.empty(n_max)
    for k in range(n_max):
        M = F.df(orbit[k]) @ M
        out[k] = np.linalg.norm(M[2:, :2] @ np.linalg.inv(M[:2, :2]), 2)
    return out


@dataclass
class DominationReport:
    """Sup-ratios of the splitting hypotheses over a point sample."""

    n_points: int
    excluded: list  # indices where m(A) degenerated
    ratio_d: np.ndarray  # ||D|| / m(A) per point
    ratio_bc: np.ndarray  # ||B|| ||C|| / (m(A) m(D)) per point
    kappa: float
    gamma: float
    sup_ratio_d: float
    sup_ratio_bc: float
    c_sup: float = 0.0
    a_min: float = np.inf
    d_sup: float = 0.0
    threshold_d: float = 0.5
    pass_d: bool = False
    pass_bc: bool = False

    @property
    def threshold_bc(self):
        return 0.5 * self.kappa * self.gamma

    @property
    def passed(self):
        return self.pass_d and self.pass_bc and not self.excluded


_MA_FLOOR = 1e-12


def domination_check(F, points, gamma=0.1):
    """Check the domination hypotheses over a sample of points.

    Measures ``||D||/m(A)`` against 1/2 and ``||B|| ||C||/(m(A) m(D))``
    against kappa*gamma/2, with kappa computed from the worst single-step
    blocks of the sample itself.  Points where m(A) collapses below
    ~1e-12 cannot be judged; they are excluded and reported.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    ratio_d = np.zeros(n)
    ratio_bc = np.zeros(n)
    excluded = []
    c_sup, a_min, d_sup = 0.0, np.inf, 0.0
    for i, w in enumerate(points):
        blk = block_decompose(F, w)
        ma = min_expansion(blk.A)
        if ma < _MA_FLOOR:
            excluded.append(i)
            ratio_d[i] = np.nan
            ratio_bc[i] = np.nan
            continue
        if F.m == 0:
            continue  # no fibre block, both ratios vacuously 0
        nd = np.linalg.norm(blk.D, 2)
        nb = np.linalg.norm(blk.B, 2)
        nc = np.linalg.norm(blk.C, 2)
        md = min_expansion(blk.D)
        ratio_d[i] = nd / ma
        bc = nb * nc
        # 0/0 is a genuinely decoupled point, not a failure.
        ratio_bc[i] = 0.0 if bc == 0.0 else bc / (ma * md)
        c_sup = max(c_sup, nc)
        a_min = min(a_min, ma)
        d_sup = max(d_sup, nd)
    if F.m == 0 or a_min == np.inf:
        kappa = 0.0
    else:
        kappa = kappa_bound(c_sup, a_min, d_sup)
    good = [i for i in range(n) if i not in excluded]
    sup_d = float(np.max(ratio_d[good])) if good else np.nan
    sup_bc = float(np.max(ratio_bc[good])) if good else np.nan
    rep = DominationReport(n_points=n, excluded=excluded, ratio_d=ratio_d,
                           ratio_bc=ratio_bc, kappa=kappa, gamma=gamma,
                           sup_ratio_d=sup_d, sup_ratio_bc=sup_bc,
                           c_sup=c_sup, a_min=a_min, d_sup=d_sup)
    rep.pass_d = bool(good) and sup_d <= rep.threshold_d
    rep.pass_bc = bool(good) and sup_bc <= rep.threshold_bc
    return rep


# -- cone fields ----------------------------------------------------------


@dataclass(frozen=True)
class ConeParams:
    """Aperture of the vertical cone ||u|| <= gamma ||v||."""

    gamma: float
    orientation: str = "vertical"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("cone aperture gamma must be positive")
        if self.orientation != "vertical":
            raise ValueError("only the vertical cone is supported")


def _boundary_sample(m, gamma, n_angles):
    """Vectors on the cone boundary: ||u|| = gamma, ||v|| = 1."""
    thetas = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    us = gamma * np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    vs = []
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        vs.extend([e, -e])
    if m > 1:
        ones = np.ones(m) / np.sqrt(m)
        vs.extend([ones, -ones])
    return us, np.asarray(vs)


def _pullback(blk, u, v, toy):
    """Solve DF (u', v') = (u, v) blockwise for toys, whole otherwise.

    The blockwise route keeps u' = 0 exact when u = 0 and B = 0, which
    is the invariance of the fibre direction that toys satisfy on the
    nose.
    """
    if toy:
        up = np.linalg.solve(blk.A, u)
        vp = np.linalg.solve(blk.D, v - blk.C @ up) if blk.D.size else v[:0]
        return up, vp
    full = np.linalg.solve(blk.matrix(), np.concatenate([u, v]))
    return full[:2], full[2:]


@dataclass
class ConeReport:
    """Worst-case pullback of cone-boundary vectors along an orbit."""

    gamma: float
    n_steps: int
    factors: np.ndarray  # per-step worst (||u'||/||v'||) / gamma
    worst_factor: float
    worst_ratio: float
    vertical_residual: float  # sup ||u'|| over pulled-back (0, v) vectors

    @property
    def passed(self):
        return self.worst_factor < 1.0


def cone_invariance_test(F, gamma, orbit, n_steps=None, n_angles=16):
    """Pull cone-boundary vectors back through DF^{-1} along an orbit.

    At each orbit point every sampled boundary vector (||u|| = gamma,
    ||v|| = 1) is pulled back and the ratio ||u'||/||v'|| measured; the
    per-step factor is the worst ratio relative to gamma.  Factors < 1
    uniformly mean the cone field is strictly invariant along the orbit.
    Purely vertical vectors (0, v) are pulled back too; their image
    u'-norm is reported separately (exactly 0 for toy models).

    Raises ``numpy.linalg.LinAlgError`` where DF is singular.
    """
    params = gamma if isinstance(gamma, ConeParams) else ConeParams(float(gamma))
    if F.m == 0:
        raise ValueError("no fibre directions to build a cone around when m = 0")
    orbit = np.atleast_2d(np.asarray(orbit, dtype=float))
    if n_steps is not None:
        orbit = orbit[:n_steps]
    toy = F.is_toy(0.0)
    us0, vs0 = _boundary_sample(F.m, params.gamma, n_angles)
    factors = np.empty(len(orbit))
    vert = 0.0
    for k, w in enumerate(orbit):
        blk = block_decompose(F, w)
        # The angle lattice alone can straddle the extremal directions, so
        # add the singular directions that realize 1/m(A) and 1/||D||.
        ua, _, _ = np.linalg.svd(blk.A)
        ud, _, _ = np.linalg.svd(blk.D) if blk.D.size else (np.zeros((F.m, 0)),) * 3
        us = np.vstack([us0, params.gamma * ua[:, -1], -params.gamma * ua[:, -1]])
        vs = vs0 if ud.size == 0 else np.vstack([vs0, ud[:, 0], -ud[:, 0]])
        worst = 0.0
        for v in vs:
            for u in us:
                up, vp = _pullback(blk, u, v, toy)
                nv = np.linalg.norm(vp)
                worst = np.inf if nv == 0.0 else max(worst, np.linalg.norm(up) / nv)
            up, vp = _pullback(blk, np.zeros(2), v, toy)
            vert = max(vert, float(np.linalg.norm(up)))
        factors[k] = worst / params.gamma
    wf = float(np.max(factors))
    return ConeReport(gamma=params.gamma, n_steps=len(orbit), factors=factors,
                      worst_factor=wf, worst_ratio=wf * params.gamma,
                      vertical_residual=vert)


# -- sample set Gamma -----------------------------------------------------


def periodic_orbit(F, period, seed, tol=1e-12, max_iter=60):
    """Newton-refine a periodic orbit of the given (minimal) period.

    Solves F^p(w) = w for the orbit through ``seed`` and returns the full
    cycle, shape ``(period, dim)``.  Raises ``NewtonDiverged`` if Newton
    stalls and ``WrongCount`` if the limit has a smaller period (the seed
    fell into the basin of a shorter cycle).
    """
    w = np.asarray(seed, dtype=float).copy()
    eye = np.eye(F.dim)
    for _ in range(max_iter):
        pts = [w]
        for _ in range(period - 1):
            pts.append(F(pts[-1]))
        jac = eye.copy()
        for p in pts:
            jac = F.df(p) @ jac
        g = F(pts[-1]) - w
        if np.linalg.norm(g) < tol:
            orbit = np.asarray(pts)
            for q in range(1, period):
                if period % q == 0 and np.linalg.norm(orbit[q] - w) < 1e-8:
                    raise WrongCount(f"period-{period} seed converged to a "
                                     f"period-{q} orbit")
            return orbit
        try:
            step = np.linalg.solve(jac - eye, g)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged("singular Newton system for periodic orbit") from exc
        w = w - step
        if not np.all(np.isfinite(w)):
            raise NewtonDiverged("periodic-orbit Newton left the finite plane")
    raise NewtonDiverged(f"no period-{period} orbit within {max_iter} Newton steps")


@dataclass
class GammaSample:
    """Computable skeleton of the orbit-closure sample set."""

    tip: np.ndarray
    cycles: list = field(default_factory=list)  # one (2^k, dim) array per k

    @property
    def points(self):
        return np.vstack([self.tip] + list(self.cycles))


def gamma_sample(F, tree, max_period_pow=4, tip_count=64):
    """Tip orbit plus Newton-refined cycles of periods 2^0 .. 2^max.

    Cycle k is seeded from centers of the level-k pieces of ``tree``;
    seeds that collapse onto a shorter cycle are retried from the next
    piece before giving up on that period.
    """
    from .cantor import tip_orbit

    tip = tip_orbit(F, tree, tip_count)
    cycles = []
    for k in range(max_period_pow + 1):
        period = 1 << k
        last = None
        for word in range(min(period, 4)):
            seed = (tree.levels[k][word][tree.center_index]
                    if k <= tree.N else tip[0])
            try:
                cycles.append(periodic_orbit(F, period, seed))
                last = None
                break
            except (WrongCount, NewtonDiverged) as exc:
                last = exc
        if last is not None:
            raise last
    return GammaSample(tip=tip, cycles=cycles)


# -- invariant plane fields -----------------------------------------------


@dataclass
class PlaneFieldPoint:
    """Power-iteration estimates of the two invariant subspaces at a point."""

    point: np.ndarray
    E_ss: np.ndarray | None  # (dim, m) orthonormal, fibre field
    E_pu: np.ndarray | None  # (dim, 2) orthonormal, dominating plane
    min_angle: float | None  # smallest principal angle between them
    pu_rank: int = 2
    ss_ok: bool = True
    pu_ok: bool = True
    note: str = ""


def _orthonormalize(frame):
    q, r = np.linalg.qr(frame)
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r[0, 0]))))
    return q, rank


def _pullback_vertical(F, forward_pts, toy):
    """E^ss candidate: vertical frame at the orbit end pulled back to w.

    For toys the blockwise solve keeps the planar components exactly
    zero, so the fibre field comes out vertical on the nose.
    """
    frame = np.eye(F.dim)[:, 2:]
    for w in reversed(forward_pts[:-1]):
        if toy:
            blk = block_decompose(F, w)
            upper = np.linalg.solve(blk.A, frame[:2])
            lower = np.linalg.solve(blk.D, frame[2:] - blk.C @ upper)
            if np.all(upper == 0.0):
                # Vertical stays vertical: orthonormalize within the fibre
                # so the zero planar block survives bit-for-bit.
                q, _ = _orthonormalize(lower)
                frame = np.vstack([upper, q])
                continue
            frame = np.vstack([upper, lower])
        else:
            frame = np.linalg.solve(F.df(w), frame)
        frame, _ = _orthonormalize(frame)
    return frame


def _pushforward_horizontal(F, backward_pts):
    """E^pu candidate: planar frame at F^{-N}(w) pushed forward to w."""
    frame = np.eye(F.dim)[:, :2]
    rank = 2
    for w in backward_pts[:0:-1]:
        frame = F.df(w) @ frame
        frame, rank = _orthonormalize(frame)
    return frame, rank


def _backward_orbit(F, w, n):
    """w, F^{-1}(w), ..., F^{-n}(w) by pointwise Newton inversion."""
    pts = [np.asarray(w, dtype=float)]
    margin = 0.5 * F.box.widths
    lo = F.box.lo - margin
    hi = F.box.hi + margin
    for _ in range(n):
        prev = pts[-1]
        seed = np.concatenate([prev[1:2], prev[2:]])
        pre = inverse_point(F, prev, seed=seed)
        if np.any(pre < lo) or np.any(pre > hi):
            raise OrbitEscaped("backward orbit left the inflated domain")
        pts.append(pre)
    return pts


def _plane_record(F, w, forward_pts, backward_pts):
    rec = PlaneFieldPoint(point=np.asarray(w, dtype=float), E_ss=None,
                          E_pu=None, min_angle=None)
    if F.m == 0:
        rec.ss_ok = False
        rec.note = "no fibre directions (m = 0)"
    else:
        try:
            rec.E_ss = _pullback_vertical(F, forward_pts, F.is_toy(0.0))
        except np.linalg.LinAlgError:
            rec.ss_ok = False
            rec.note = "DF singular along forward orbit"
    if backward_pts is None:
        rec.pu_ok = False
        rec.note = (rec.note + "; " if rec.note else "") + "no backward orbit"
    else:
        rec.E_pu, rec.pu_rank = _pushforward_horizontal(F, backward_pts)
    if rec.E_ss is not None and rec.E_pu is not None:
        rec.min_angle = float(subspace_angles(rec.E_pu, rec.E_ss).min())
    return rec


def invariant_plane_field(F, points, N):
    """Estimate E^ss and E^pu at each point by N-step power iteration.

    E^ss(w) is the DF^{-N} pullback of the vertical subspace at F^N(w);
    E^pu(w) the DF^N pushforward of the planar subspace at F^{-N}(w),
    with the backward orbit found by pointwise Newton inversion.  Points
    whose inversion fails or escapes keep a record with ``pu_ok=False``
    instead of aborting the batch.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    records = []
    for w in points:
        forward = [w]
        for _ in range(N):
            forward.append(F(forward[-1]))
        try:
            backward = _backward_orbit(F, w, N)
            note = ""
        except (PreimageNewtonFailed, NewtonDiverged, OrbitEscaped,
                np.linalg.LinAlgError) as exc:
            backward, note = None, str(exc)
        rec = _plane_record(F, w, forward, backward)
        if note:
            rec.note = (rec.note + "; " if rec.note else "") + note
        records.append(rec)
    return records


def plane_field_along_orbit(F, orbit, N):
    """Plane fields at orbit[N:], using the orbit itself as history.

    The first N points serve as the backward history of their successors,
    so no Newton inversion is needed — this is the route that still works
    for non-invertible (degenerate) maps, whose E^pu is meaningful even
    though DF has no inverse.  Returns records aligned with orbit[N:].
    """
    orbit = np.atleast_2d(np.asarray(orbit, dtype=float))
    if len(orbit) <= N:
        raise ValueError("orbit too short for the requested history depth")
    records = []
    for k in range(N, len(orbit)):
        w = orbit[k]
        forward = [w]
        for _ in range(N):
            forward.append(F(forward[-1]))
        backward = [orbit[k - j] for j in range(N + 1)]
        records.append(_plane_record(F, w, forward, backward))
    return records


def plane_field_invariance(F, orbit, N):
    """Worst principal-angle defect of DF E(w) against E(F(w)).

    Returns ``(pu_defect, ss_defect)`` in radians over consecutive orbit
    points; both should sit at the power-iteration convergence level for
    a genuinely invariant pair of fields.
    """
    records = plane_field_along_orbit(F, orbit, N)
    pu_defect = 0.0
    ss_defect = 0.0
    for a, b in zip(records[:-1], records[1:]):
        d = F.df(a.point)
        if a.E_pu is not None and b.E_pu is not None:
            pushed, rank = _orthonormalize(d @ a.E_pu)
            if rank == a.E_pu.shape[1]:
                pu_defect = max(pu_defect, float(subspace_angles(pushed, b.E_pu).max()))
        if a.E_ss is not None and b.E_ss is not None:
            pushed, rank = _orthonormalize(d @ a.E_ss)
            if rank == a.E_ss.shape[1]:
                ss_defect = max(ss_defect, float(subspace_angles(pushed, b.E_ss).max()))
    return pu_defect, ss_defect
