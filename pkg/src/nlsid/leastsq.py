"""Damped Gauss-Newton (Levenberg-Marquardt) with a validation hook.

The generic scipy least-squares drivers do not expose the three behaviours
the frequency-domain fits here rely on: an unstable trial point must count
as a rejected step (not abort the solve), accepted costs must be recorded
monotonically for later audit, and an independent validation cost must be
tracked per accepted iterate so the best-validated parameter vector can be
returned instead of the last one.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InstabilityError


@dataclass
class LmIteration:
    index: int
    lam: float
    cost: float
    val_cost: float | None = None


@dataclass
class LmResult:
    theta: np.ndarray
    cost: float
    cost0: float
    status: str
    n_iter: int
    iterations: list[LmIteration] = field(default_factory=list)
    best_val_theta: np.ndarray | None = None
    best_val_cost: float | None = None

    @property
    def accepted_costs(self):
        return [it.cost for it in self.iterations]


def _try_cost(fun, theta):
    try:
        r = fun(theta)
    except InstabilityError:
        return None, np.inf
    c = float(r @ r)
    if not np.isfinite(c):
        return None, np.inf
    return r, c


def levenberg_marquardt(
    fun,
    jac,
    theta0,
    max_iter=100,
    lam0=1e-3,
    lam_up=10.0,
    lam_down=0.1,
    lam_max=1e14,
    cost_tol=1e-10,
    gtol=1e-14,
    validate=None,
):
    """Minimize sum(fun(theta)**2) for a real residual vector.

    fun may raise InstabilityError to veto a trial point; the step is then
    rejected and the damping increased, exactly as for a cost increase.
    `validate(theta)` is evaluated after every accepted step and the best
    iterate under it kept. Returns an LmResult whose accepted costs are
    non-increasing by construction.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    r, cost = _try_cost(fun, theta)
    if r is None:
        raise InstabilityError("fit", "initial parameter vector is unstable")
    cost0 = cost

    result = LmResult(theta=theta, cost=cost, cost0=cost0, status="max_iter", n_iter=0)
    if validate is not None:
        v = float(validate(theta))
        result.best_val_theta = theta.copy()
        result.best_val_cost = v
        result.iterations.append(LmIteration(0, lam0, cost, v))
    else:
        result.iterations.append(LmIteration(0, lam0, cost))

    lam = lam0
    for it in range(1, max_iter + 1):
        J = jac(theta)
        scale = np.linalg.norm(J, axis=0)
        scale[scale == 0.0] = 1.0
        Js = J / scale
        grad = Js.T @ r
        if np.max(np.abs(grad)) <= gtol * max(1.0, cost):
            result.status = "converged"
            break
        U, s, Vt = np.linalg.svd(Js, full_matrices=False)
        Utr = U.T @ r

        accepted = False
        while lam <= lam_max:
            step = -(Vt.T @ (s / (s**2 + lam) * Utr)) / scale
            r_new, cost_new = _try_cost(fun, theta + step)
            if cost_new < cost:
                accepted = True
                break
            lam *= lam_up
        if not accepted:
            result.status = "damping_limit"
            break

        theta = theta + step
        prev = cost
        r, cost = r_new, cost_new
        lam = max(lam * lam_down, 1e-16)
        row = LmIteration(it, lam, cost)
        if validate is not None:
            row.val_cost = float(validate(theta))
            if row.val_cost < result.best_val_cost:
                result.best_val_cost = row.val_cost
                result.best_val_theta = theta.copy()
        result.iterations.append(row)
        result.theta = theta
        result.cost = cost
        result.n_iter = it
        if prev - cost <= cost_tol * max(prev, 1e-300):
            result.status = "converged"
            break

    return result
