"""Small vectorized root-finding utilities used throughout the package.

Everything here operates on batches: a "point" argument has shape ``(P,)`` or
``(P, d)`` and all iterations advance the whole batch at once, which is what
keeps the renormalization pipeline (thousands of collocation nodes per refit)
fast in pure numpy.
"""

from __future__ import annotations

import numpy as np

from .errors import NewtonDiverged

__all__ = ["bracketed_newton", "newton_nd", "fixed_point_iteration"]


def bracketed_newton(fun, dfun, lo, hi, tol=1e-14, maxit=100):
    """Solve ``fun(x) = 0`` per batch entry inside brackets ``[lo, hi]``.

    ``fun(lo)`` and ``fun(hi)`` must have opposite signs entrywise.  Newton
    steps are taken from the current iterate and fall back to bisection
    whenever they leave the bracket, so convergence is guaranteed for
    continuous monotone residuals and quadratic near the root.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    flo = np.asarray(fun(lo), dtype=float)
    fhi = np.asarray(fun(hi), dtype=float)
    bad = flo * fhi > 0
    if np.any(bad):
        worst = float(np.max(np.minimum(np.abs(flo[bad]), np.abs(fhi[bad]))))
        if worst > 1e-11:
            raise NewtonDiverged(
                f"no sign change in {int(np.sum(bad))} brackets (min residual {worst:.2e})"
            )
        # endpoint sits on the root to within roundoff; collapse the bracket
        pick_lo = np.abs(flo) <= np.abs(fhi)
        hi = np.where(bad & pick_lo, lo, hi)
        lo = np.where(bad & ~pick_lo, hi, lo)
    x = 0.5 * (lo + hi)
    for _ in range(maxit):
        f = np.asarray(fun(x), dtype=float)
        d = np.asarray(dfun(x), dtype=float)
        # keep the bracket consistent with the sign at lo
        move_lo = (f * flo) > 0
        lo = np.where(move_lo, x, lo)
        flo = np.where(move_lo, f, flo)
        hi = np.where(move_lo, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / d
        x_new = x - step
        outside = ~np.isfinite(x_new) | (x_new < np.minimum(lo, hi)) | (
            x_new > np.maximum(lo, hi)
        )
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        done = np.abs(x_new - x) <= tol * (1.0 + np.abs(x_new))
        x = x_new
        if np.all(done) and np.max(np.abs(f)) < 1e-10:
            break
    resid = np.max(np.abs(np.asarray(fun(x))))
    if resid > 1e-9:
        raise NewtonDiverged(f"bracketed Newton stalled at residual {resid:.2e}")
    return x


def newton_nd(fun, x0, jac=None, tol=1e-13, maxit=60, fd_step=1e-7, damping=None):
    """Batched Newton in low dimension: ``x0`` has shape ``(P, d)``.

    ``fun`` maps ``(P, d) -> (P, d)``; ``jac`` maps ``(P, d) -> (P, d, d)`` or
    is ``None`` for central finite differences.  Returns the refined batch;
    raises :class:`NewtonDiverged` if residuals fail to reach ``1e-9``.
    """
    x = np.array(np.atleast_2d(x0), dtype=float)
    P, d = x.shape

    def _jac(xc):
        if jac is not None:
            return np.asarray(jac(xc), dtype=float)
        J = np.empty((xc.shape[0], d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = fd_step
            J[:, :, k] = (fun(xc + e) - fun(xc - e)) / (2.0 * fd_step)
        return J

    for it in range(maxit):
        r = np.asarray(fun(x), dtype=float)
        if np.max(np.abs(r)) < tol:
            break
        J = _jac(x)
        try:
            step = np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f"singular Jacobian in batched Newton: {exc}") from exc
        if damping is not None:
            nrm = np.linalg.norm(step, axis=-1, keepdims=True)
            step = np.where(nrm > damping, step * (damping / nrm), step)
        x = x - step
    resid = float(np.max(np.abs(np.asarray(fun(x)))))
    if resid > 1e-9:
        raise NewtonDiverged(f"batched Newton stalled at residual {resid:.2e}")
    return x if np.ndim(x0) == 2 else x[0]


def fixed_point_iteration(fn, x0, tol=1e-13, maxit=500):
    """Iterate ``x <- fn(x)`` until the step is below ``tol``.

    Returns ``(x, history)`` with the per-iteration step sizes; raises
    :class:`NewtonDiverged` when the budget runs out.
    """
    x = np.asarray(x0, dtype=float)
    history = []
    for _ in range(maxit):
        x_new = np.asarray(fn(x), dtype=float)
        step = float(np.max(np.abs(x_new - x)))
        history.append(step)
        x = x_new
        if step < tol:
            return x, history
    raise NewtonDiverged(f"fixed-point iteration stalled at step {history[-1]:.2e}")
