"""Words, scope maps, pieces of the critical Cantor set, and its ergodic
diagnostics.

The n-th level pieces are B^n_w = Psi^n_w(B) with

    Psi^n_w = psi^1_{w_1} o psi^2_{w_2} o ... o psi^n_{w_n},

where each level map psi^k comes in two flavours built from step k of a
renormalization chain: psi_v = H^{-1} o Lambda^{-1} and psi_c = F o psi_v.
Words over {v, c} are identified with integers little-endian (v = 0, c = 1),
under which the dynamics acts as the dyadic adding machine: F moves the
piece of word w onto the piece of word w + 1.

Pieces are represented by image clouds of one fixed sample lattice of B
(corners, face grids and the center are all lattice points), not by exact
regions; diameters and distances are cloud statistics.  The tip — the
intersection point of the nested v^n pieces — anchors the Cantor set: its
forward orbit visits every piece in adding-machine order, which is what the
average-Jacobian and distortion diagnostics sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import NonpositiveJacobian, OrbitEscaped

__all__ = [
    "Word",
    "word_add",
    "scope_map",
    "PieceTree",
    "build_pieces",
    "adding_machine_check",
    "AddingMachineReport",
    "average_jacobian",
    "tip_orbit",
    "distortion_check",
    "DistortionReport",
    "lyapunov_max",
    "nesting_report",
]

_LETTERS = ("v", "c")


@dataclass(frozen=True)
class Word:
    """A word over {v, c}; arithmetic is little-endian base 2, v=0, c=1."""

    letters: tuple

    def __post_init__(self):
        if any(l not in _LETTERS for l in self.letters):
            raise ValueError(f"letters must be 'v'/'c', got {self.letters!r}")

    @classmethod
    def from_int(cls, k, n):
        if not 0 <= k < 2**n:
            raise ValueError(f"{k} not representable in {n} letters")
        return cls(tuple(_LETTERS[(k >> i) & 1] for i in range(n)))

    def to_int(self):
        return sum(1 << i for i, l in enumerate(self.letters) if l == "c")

    def __len__(self):
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def __str__(self):
        return "".join(self.letters)

    def __add__(self, k):
        return word_add(self, k)


def word_add(w, k):
    """w + k modulo 2^|w| in the little-endian identification."""
    n = len(w)
    return Word.from_int((w.to_int() + int(k)) % (1 << n), n)


def scope_map(step, letter):
    """The level scope map of a renormalization step: psi_v or psi_c."""
    if letter == "v":
        return step.scope_v
    if letter == "c":
        return step.scope_c
    raise ValueError(f"letter must be 'v' or 'c', got {letter!r}")


def _base_sample(box):
    """Fixed sample lattice of B: an odd per-axis grid (its boundary carries
    the corners and face grids, its middle point is the center)."""
    counts = (5,) * box.dim if box.dim <= 3 else (5, 5) + (3,) * (box.dim - 2)
    pts = box.uniform_grid(counts)
    center_idx = int(np.argmin(np.sum((pts - box.midpoint) ** 2, axis=1)))
    return pts, center_idx


@dataclass
class PieceTree:
    """Sampled piece clouds of every word up to level N, plus tip data.

    ``levels[n]`` has shape (2^n, P, d): cloud of the word with integer j is
    ``levels[n][j]``.  ``level_tips[k]`` is the tip of the k-times
    renormalized map (``level_tips[0]`` = the tip of F itself), obtained by
    pushing the fixed point of the deepest v-scope map down the chain.
    """

    steps: list
    N: int
    sample: np.ndarray
    center_index: int
    levels: list
    tip: np.ndarray
    level_tips: list
    tip_deltas: list

    def words(self, n):
        return [Word.from_int(j, n) for j in range(1 << n)]

    def cloud(self, n, w):
        j = w.to_int() if isinstance(w, Word) else int(w)
        return self.levels[n][j]

    def diam(self, n, w):
        return float(np.max(pdist(self.cloud(n, w))))

    def diams(self, n):
        return np.array([
            np.max(pdist(c)) for c in self.levels[n]
        ])


def build_pieces(steps, N):
    """Image clouds of the base sample under Psi^n_w for every |w| = n <= N.

    The suffix compositions are shared across words (memoized on the chain
    level and remaining letters), so the whole tree costs O(2^N) scope-map
    applications rather than O(N 2^N).

    The tip is computed as the fixed point of the deepest available v-scope
    map (the chain is essentially self-similar once the perturbation norms
    hit their floor) and pushed down: tau_k = psi^{k+1}_v(tau_{k+1}).  The
    per-level Cauchy increments of the direct estimates Psi^n_{v^n}(center)
    are recorded as a convergence diagnostic.
    """
    steps = list(steps)
    if N > len(steps):
        raise ValueError(f"N={N} exceeds available depth {len(steps)}")
    if not steps:
        raise ValueError("need at least one renormalization step")
    box = steps[0].parent.box
    sample, center_idx = _base_sample(box)

    memo = {}

    def cloud(k, letters):
        if not letters:
            return sample
        key = (k, letters)
        got = memo.get(key)
        if got is None:
            inner = cloud(k + 1, letters[1:])
            got = memo[key] = scope_map(steps[k], letters[0])(inner)
        return got

    levels = []
    for n in range(N + 1):
        arr = np.empty((1 << n, sample.shape[0], box.dim))
        for j in range(1 << n):
            arr[j] = cloud(0, Word.from_int(j, n).letters)
        levels.append(arr)

    # tip: fixed point of the deepest v-scope, pushed down the chain
    tau = box.midpoint.copy()
    deepest = steps[-1].scope_v
    for _ in range(300):
        new = deepest(tau)
        if float(np.max(np.abs(new - tau))) < 1e-13:
            tau = new
            break
        tau = new
    level_tips = [None] * (len(steps) + 1)
    level_tips[len(steps)] = tau
    for k in range(len(steps) - 1, -1, -1):
        level_tips[k] = steps[k].scope_v(level_tips[k + 1])

    ests = [levels[n][0][center_idx] for n in range(N + 1)]
    tip_deltas = [
        float(np.max(np.abs(ests[n] - ests[n - 1]))) for n in range(1, N + 1)
    ]

    return PieceTree(
        steps=steps,
        N=N,
        sample=sample,
        center_index=center_idx,
        levels=levels,
        tip=level_tips[0],
        level_tips=level_tips,
        tip_deltas=tip_deltas,
    )


@dataclass
class AddingMachineReport:
    n: int
    checked: int
    violations: list

    @property
    def passed(self):
        return not self.violations


def adding_machine_check(tree, n):
    """Verify F(B^n_w) lands in B^n_{w+1} by nearest-piece classification.

    One representative per piece (the center image) is pushed forward by F
    and classified to the piece whose cloud it is closest to; the report
    lists words whose image classifies to anything but w + 1.
    """
    if n == 0:
        return AddingMachineReport(n=0, checked=0, violations=[])
    if n > tree.N:
        raise ValueError(f"tree built to level {tree.N} < {n}")
    F = tree.steps[0].parent
    clouds = tree.levels[n]
    reps = clouds[:, tree.center_index, :]
    imgs = F(reps)
    count = 1 << n
    violations = []
    for j in range(count):
        d2 = np.min(np.sum((clouds - imgs[j]) ** 2, axis=2), axis=1)
        if int(np.argmin(d2)) != (j + 1) % count:
            violations.append(j)
    return AddingMachineReport(n=n, checked=count, violations=violations)


def tip_orbit(F, tree, count):
    """First ``count`` forward F-images of the tip, shape (count, d).

    Orbit point k sits in the level-n piece of word k mod 2^n for every n:
    these are the canonical Cantor-set representatives, weighted 2^{-n}
    apiece by the unique invariant measure.
    """
    out = np.empty((count, F.dim))
    pt = tree.tip.copy()
    for k in range(count):
        out[k] = pt
        pt = F(pt)
    return out


def average_jacobian(F, tree, n):
    """b_n = exp(2^{-n} sum over level-n words of log Jac F at orbit reps)."""
    reps = tip_orbit(F, tree, 1 << n)
    jacs = F.jacobian_det(reps) if n else np.array([F.jacobian_det(reps[0])])
    if np.any(~np.isfinite(jacs)) or np.any(jacs <= 0.0):
        bad = float(np.min(jacs))
        raise NonpositiveJacobian(
            f"Jac F = {bad:.3e} on the tip orbit; average undefined in log space"
        )
    return float(np.exp(np.mean(np.log(jacs))))


@dataclass
class DistortionReport:
    max_by_level: dict
    fitted_ratio: float


def distortion_check(F, tree, n):
    """Max over pieces of the log-Jacobian spread of F^{2^k} within a piece.

    For each level k <= n a handful of points per piece flow 2^k steps; the
    spread max |log Jac F^{2^k}(y) - log Jac F^{2^k}(z)| over same-piece
    pairs is reported per level together with a fitted geometric decay
    ratio (the theory's rate is not quantified, so only decay is asserted
    by callers).
    """
    P = tree.sample.shape[0]
    idx = sorted({0, P - 1, tree.center_index, P // 3, (2 * P) // 3})
    max_by_level = {}
    for lev in range(1, n + 1):
        pts = tree.levels[lev][:, idx, :].reshape(-1, F.dim)
        logj = np.zeros(pts.shape[0])
        cur = pts
        for _ in range(1 << lev):
            jacs = F.jacobian_det(cur)
            if np.any(jacs <= 0.0) or np.any(~np.isfinite(jacs)):
                raise NonpositiveJacobian(
                    "nonpositive Jacobian along distortion orbits"
                )
            logj += np.log(jacs)
            cur = F(cur)
        per_piece = logj.reshape(1 << lev, len(idx))
        spread = per_piece.max(axis=1) - per_piece.min(axis=1)
        max_by_level[lev] = float(spread.max())
    vals = np.array([max_by_level[k] for k in sorted(max_by_level)])
    if vals.size >= 2 and np.all(vals > 1e-14):
        slope = np.polyfit(np.arange(1, n + 1), np.log(vals), 1)[0]
        ratio = float(np.exp(slope))
    else:
        ratio = 0.0
    return DistortionReport(max_by_level=max_by_level, fitted_ratio=ratio)


def lyapunov_max(F, w0, N, burn_in=0):
    """Top Lyapunov exponent along N iterates from w0, by QR updates.

    ``burn_in`` iterates are run first without accumulating, letting the
    orthonormal frame align with the dominant directions (the alignment
    transient otherwise contributes an O(1/N) bias).
    """
    pt = np.asarray(w0, dtype=float).copy()
    Q = np.eye(F.dim)
    lo = F.box.lo - 0.05 * F.box.widths
    hi = F.box.hi + 0.05 * F.box.widths
    total = 0.0
    for k in range(burn_in + N):
        Q, R = np.linalg.qr(F.df(pt) @ Q)
        if k >= burn_in:
            total += np.log(np.abs(R[0, 0]))
        pt = F(pt)
        if np.any(pt < lo) or np.any(pt > hi):
            raise OrbitEscaped(f"orbit left the box at iterate {k + 1}: {pt}")
    return total / N


def nesting_report(tree):
    """Max per level of how far child-cloud points poke outside the parent
    cloud's bounding box (child of word w at level n has parent w mod
    2^{n-1}).  Exact nesting holds at region level by construction; the
    sampled number is a bug-catcher, limited by the lattice resolution of
    the parent's boundary."""
    out = {}
    for n in range(1, tree.N + 1):
        parents = tree.levels[n - 1]
        children = tree.levels[n]
        half = 1 << (n - 1)
        worst = 0.0
        for j in range(1 << n):
            parent = parents[j % half]
            lo = parent.min(axis=0)
            hi = parent.max(axis=0)
            child = children[j]
            over = np.maximum(lo - child, child - hi)
            worst = max(worst, float(over.max()))
        out[n] = worst
    return out
