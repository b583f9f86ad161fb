"""Small Levenberg-Marquardt least-squares solver.

Residuals handed to :func:`levmar` are expected to be already weighted, so
the objective is simply ``sum(r**2)``.  Only accepted steps change the
iterate, which makes the objective non-increasing over the run.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FitError(RuntimeError):
    """A fit failed to converge or landed on a degenerate solution."""

    def __init__(self, message, params=None, residual_norm=None):
        super().__init__(message)
        self.params = None if params is None else np.asarray(params, dtype=float)
        self.residual_norm = residual_norm


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    jac: np.ndarray
    n_iter: int
    converged: bool
    message: str
    costs: list = field(default_factory=list)

    @property
    def residual_norm(self):
        return float(np.sqrt(self.cost))

    def covariance(self, scale=1.0):
        """``scale * (J^T J)^-1`` at the solution (pseudo-inverse if singular)."""
        jtj = self.jac.T @ self.jac
        try:
            cov = np.linalg.inv(jtj)
        except np.linalg.LinAlgError:
            cov = np.linalg.pinv(jtj)
        return cov * scale


def numerical_jacobian(fun, x, rel_step=1e-7):
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(abs(x[j]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (fun(xp) - fun(xm)) / (2 * h)
    return jac


def levmar(fun, x0, jac=None, *, max_iter=500, xtol=1e-9, ftol=1e-12,
           lam0=1e-3, project=None):
    """Minimize ``sum(fun(x)**2)`` starting from ``x0``.

    Parameters
    ----------
    fun : callable
        Weighted residual vector as a function of the parameter vector.
    jac : callable, optional
        Jacobian of ``fun``; central differences are used when omitted.
    xtol, ftol : float
        Stop when the relative parameter step falls below ``xtol`` or the
        relative drop in the objective on an accepted step falls below
        ``ftol``.
    project : callable, optional
        Maps a trial point back into the feasible region (e.g. clips widths
        to positive values) before it is evaluated.

    Raises
    ------
    FitError
        If neither criterion is met within ``max_iter`` iterations.
    """
    if jac is None:
        jac = lambda p: numerical_jacobian(fun, p)  # noqa: E731
    x = np.asarray(x0, dtype=float).copy()
    if project is not None:
        x = project(x)
    r = fun(x)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise FitError("non-finite residuals at the starting point", x, np.inf)
    J = jac(x)
    lam = lam0
    costs = [cost]

    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return LMResult(x, cost, J, it - 1, True, "exact fit", costs)
        jtj_diag = np.einsum("ij,ij->j", J, J)
        floor = 1e-12 * max(jtj_diag.max(), 1e-300)
        scale = np.sqrt(np.maximum(jtj_diag, floor))
        accepted = False
        while lam < 1e16:
            # Damped normal equations, solved as an augmented least-squares
            # problem so a rank-deficient J does not blow up.
            A = np.vstack([J, np.sqrt(lam) * np.diag(scale)])
            b = np.concatenate([-r, np.zeros(x.size)])
            step = np.linalg.lstsq(A, b, rcond=None)[0]
            x_new = x + step
            if project is not None:
                x_new = project(x_new)
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        rel_step = np.linalg.norm(x_new - x) / (np.linalg.norm(x) + xtol)
        if not accepted:
            # Damping saturated without any decrease: x is a local minimum to
            # working precision.
            return LMResult(x, cost, J, it, True, "no further decrease possible", costs)
        rel_drop = (cost - cost_new) / cost
        x, r, cost = x_new, r_new, cost_new
        J = jac(x)
        costs.append(cost)
        lam = max(lam / 10.0, 1e-12)
        if rel_step < xtol:
            return LMResult(x, cost, J, it, True, "relative step below xtol", costs)
        if rel_drop < ftol:
            return LMResult(x, cost, J, it, True, "relative cost change below ftol", costs)

    raise FitError(f"no convergence after {max_iter} iterations", x, float(np.sqrt(cost)))
