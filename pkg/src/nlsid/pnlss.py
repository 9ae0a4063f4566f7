"""Polynomial nonlinear state-space models.

    x(t+1) = A x(t) + B u(t) + E zeta(x, u)
    y(t)   = C x(t) + D u(t) + F eta(x, u)

zeta and eta collect monomials of the states and inputs of selected total
degrees. Estimation minimizes a weighted frequency-domain cost between the
steady-state model spectrum and the measured one on selected bins, using
analytic Jacobians from a sensitivity recursion and the shared damped
Gauss-Newton engine. States, inputs and outputs are scaled to unit rms
internally so that the monomial powers stay numerically balanced.
"""

import csv
import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, InstabilityError
from .leastsq import levenberg_marquardt
from .util import rfft_norm

X_NORM_LIMIT = 1e6  # normalized state magnitude treated as divergence


def _monomial_exponents(n_var, degrees):
    rows = []
    for d in sorted(degrees):
        for combo in itertools.combinations_with_replacement(range(n_var), d):
            e = np.zeros(n_var, dtype=int)
            for v in combo:
                e[v] += 1
            rows.append(e)
    if not rows:
        return np.zeros((0, n_var), dtype=int)
    return np.array(rows, dtype=int)


@dataclass(frozen=True)
class MonomialBasis:
    """Monomials of total degree in `degrees` over n_x states and n_u inputs.

    Ordering is graded lexicographic (degree first, then index order), which
    fixes the meaning of the E and F columns. For each degree d there are
    C(n_x + n_u + d - 1, d) terms.
    """

    n_x: int
    n_u: int
    degrees: tuple
    exponents: np.ndarray

    @property
    def n_terms(self):
        return self.exponents.shape[0]

    def evaluate(self, xu):
        """xu shape (..., n_x + n_u) -> monomial values (..., n_terms)."""
        xu = np.asarray(xu, dtype=float)
        return np.prod(xu[..., None, :] ** self.exponents[None], axis=-1)

    def deriv_states(self, xu):
        """Derivatives w.r.t. the state variables: (..., n_terms, n_x)."""
        xu = np.asarray(xu, dtype=float)
        out = np.zeros(xu.shape[:-1] + (self.n_terms, self.n_x))
        for j in range(self.n_x):
            ex = self.exponents.copy()
            fac = ex[:, j].astype(float)
            ex[:, j] = np.maximum(ex[:, j] - 1, 0)
            out[..., j] = fac * np.prod(xu[..., None, :] ** ex[None], axis=-1)
        return out


def build_basis(n_x, n_u, degrees=(2, 3)):
    degrees = tuple(sorted(int(d) for d in degrees))
    if any(d < 1 for d in degrees):
        raise FormatError("monomial degrees must be positive integers")
    return MonomialBasis(n_x, n_u, degrees, _monomial_exponents(n_x + n_u, degrees))


def expected_terms(n_var, degrees):
    return sum(math.comb(n_var + d - 1, d) for d in degrees)


@dataclass(frozen=True)
class PnlssModel:
    """State-space matrices in normalized coordinates plus the scalings.

    A..F act on x/x_scale, u/u_scale and produce y/y_scale; simulate() takes
    and returns physical units. x_scale et al. come from the linear
    initialization and stay fixed during fitting.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    basis_state: MonomialBasis
    basis_out: MonomialBasis
    x_scale: np.ndarray
    u_scale: np.ndarray
    y_scale: np.ndarray
    fs: float | None = None

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    def simulate(self, u, x0=None):
        """Response to physical input u; returns (y, X_normalized).

        The state recursion raises InstabilityError with the failing step
        index as soon as the normalized state leaves a large safety box.
        """
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        T = u.shape[0]
        un = u / self.u_scale
        ex = self.basis_state.exponents
        x = np.zeros(self.n_x) if x0 is None else np.asarray(x0, float).copy()
        X = np.empty((T, self.n_x))
        A, B, E = self.A, self.B, self.E
        for t in range(T):
            X[t] = x
            xu = np.concatenate([x, un[t]])
            zeta = np.prod(xu**ex, axis=1)
            x = A @ x + B @ un[t] + E @ zeta
            if np.max(np.abs(x)) > X_NORM_LIMIT or not np.isfinite(x).all():
                raise InstabilityError(t, f"state diverged at step {t}")
        XU = np.hstack([X, un])
        eta = self.basis_out.evaluate(XU)
        yn = X @ self.C.T + un @ self.D.T + eta @ self.F.T
        y = yn * self.y_scale
        return (y[:, 0], X) if self.n_y == 1 else (y, X)


def _param_layout(model):
    """Column permutation from recursion order to [A B C D E F] ravel order."""
    n_x, n_u, n_y = model.n_x, model.n_u, model.n_y
    nz = model.basis_state.n_terms
    nh = model.basis_out.n_terms
    sizes = [n_x * n_x, n_x * n_u, n_y * n_x, n_y * n_u, n_x * nz, n_y * nh]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    n_theta = int(offs[-1])

    nw = n_x + n_u + nz
    perm_state = np.empty(n_x * nw, dtype=int)
    for i in range(n_x):
        base = i * nw
        perm_state[base : base + n_x] = offs[0] + i * n_x + np.arange(n_x)
        perm_state[base + n_x : base + n_x + n_u] = offs[1] + i * n_u + np.arange(n_u)
        perm_state[base + n_x + n_u : base + nw] = offs[4] + i * nz + np.arange(nz)

    direct_cols = []
    for i in range(n_y):
        cols = np.concatenate(
            [
                offs[2] + i * n_x + np.arange(n_x),
                offs[3] + i * n_u + np.arange(n_u),
                offs[5] + i * nh + np.arange(nh),
            ]
        )
        direct_cols.append(cols)
    return n_theta, nw, perm_state, direct_cols


def _pack(model):
    return np.concatenate(
        [m.ravel() for m in (model.A, model.B, model.C, model.D, model.E, model.F)]
    )


def _unpack(model, theta):
    n_x, n_u, n_y = model.n_x, model.n_u, model.n_y
    nz = model.basis_state.n_terms
    nh = model.basis_out.n_terms
    shapes = [(n_x, n_x), (n_x, n_u), (n_y, n_x), (n_y, n_u), (n_x, nz), (n_y, nh)]
    parts = []
    ofs = 0
    for r, c in shapes:
        parts.append(theta[ofs : ofs + r * c].reshape(r, c))
        ofs += r * c
    return replace(
        model, A=parts[0], B=parts[1], C=parts[2], D=parts[3], E=parts[4], F=parts[5]
    )


def jacobian(model, u, X):
    """d y_normalized / d theta along a simulated trajectory.

    X is the normalized state trajectory returned by simulate() for the same
    input. Sensitivities of the states w.r.t. the A, B, E entries follow the
    recursion S(t+1) = (A + E dzeta/dx) S(t) + [rows of (x, u, zeta)]; the
    C, D, F entries enter the output directly. Returns (T, n_y, n_theta).
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    un = u / model.u_scale
    T = un.shape[0]
    n_x, n_y = model.n_x, model.n_y
    n_theta, nw, perm_state, direct_cols = _param_layout(model)

    XU = np.hstack([X, un])
    Z = model.basis_state.evaluate(XU)
    dZ = model.basis_state.deriv_states(XU)
    H = model.basis_out.evaluate(XU)
    dH = model.basis_out.deriv_states(XU)

    Jx = model.A[None] + np.einsum("ij,tjk->tik", model.E, dZ)
    Cx = model.C[None] + np.einsum("ij,tjk->tik", model.F, dH)
    W = np.hstack([X, un, Z])
    direct = np.hstack([X, un, H])

    J = np.zeros((T, n_y, n_theta))
    S = np.zeros((n_x, n_x * nw))
    for t in range(T):
        J[t][:, perm_state] = Cx[t] @ S
        for i in range(n_y):
            J[t, i, direct_cols[i]] = direct[t]
        S = Jx[t] @ S
        for i in range(n_x):
            S[i, i * nw : (i + 1) * nw] += W[t]
    return J


def init_from_linear(ss, degrees, rec):
    """Zero-nonlinearity model around a linear state space.

    Scales are taken from the estimation record: input and output rms, and
    the rms of each simulated linear state. The linear matrices are
    similarity-scaled accordingly; E and F start at zero so the first
    iteration reproduces the linear model exactly.
    """
    R, P, N = rec.u.shape
    u_flat = rec.u.reshape(R, P * N)
    states = []
    for r in range(R):
        _, X = ss.simulate(u_flat[r])
        states.append(X)
    X_all = np.concatenate(states, axis=0)
    x_scale = np.sqrt(np.mean(X_all**2, axis=0))
    x_scale[x_scale == 0.0] = 1.0
    u_scale = np.atleast_1d(np.sqrt(np.mean(rec.u**2)))
    u_scale[u_scale == 0.0] = 1.0
    y_scale = np.atleast_1d(np.sqrt(np.mean(rec.y**2)))
    y_scale[y_scale == 0.0] = 1.0

    n_x = ss.n_x
    n_u = ss.B.shape[1]
    n_y = ss.C.shape[0]
    bs = build_basis(n_x, n_u, degrees)
    bo = build_basis(n_x, n_u, degrees)
    Dx = np.diag(x_scale)
    Dxi = np.diag(1.0 / x_scale)
    Du = np.diag(u_scale)
    Dyi = np.diag(1.0 / y_scale)
    return PnlssModel(
        A=Dxi @ ss.A @ Dx,
        B=Dxi @ ss.B @ Du,
        C=Dyi @ ss.C @ Dx,
        D=Dyi @ ss.D @ Du,
        E=np.zeros((n_x, bs.n_terms)),
        F=np.zeros((n_y, bo.n_terms)),
        basis_state=bs,
        basis_out=bo,
        x_scale=x_scale,
        u_scale=u_scale,
        y_scale=np.atleast_1d(y_scale),
        fs=rec.fs,
    )


@dataclass
class FitOptions:
    max_iter: int = 100
    lam0: float = 1e-3
    lam_up: float = 10.0
    lam_down: float = 0.1
    cost_tol: float = 1e-10
    transient_periods: int = 1
    bins: np.ndarray | None = None  # default: all in-band lines of the grid
    weights: np.ndarray | None = None  # per-bin W(k), cost divides by it


@dataclass
class FitReport:
    bins: np.ndarray
    cost0: float
    cost: float
    status: str
    n_iter: int
    iterations: list = field(default_factory=list)
    used_validation: bool = False

    @property
    def accepted_costs(self):
        return [it.cost for it in self.iterations]


def _mean_period_spectra(rec, bins):
    """Per-realization period-averaged input/output spectra on the bins."""
    R, P, N = rec.u.shape
    u_mean = rec.u.mean(axis=1)
    y_mean = rec.y.mean(axis=1)
    Y = rfft_norm(y_mean)[:, bins]
    return u_mean, Y


def _steady_spectrum(model, u_period, n_transient, bins):
    tiled = np.tile(u_period, n_transient + 1)
    y, _ = model.simulate(tiled)
    N = len(u_period)
    return rfft_norm(y[-N:])[bins]


def fit(model, rec, grid, opts=None, val_rec=None):
    """Weighted frequency-domain fit of all model matrices.

    The cost is sum over realizations and selected bins of
    |Y_model(k) - Y(k)|^2 / W(k), with Y the period-averaged measured
    spectrum and Y_model the DFT of one steady-state period reached by
    simulating transient_periods extra periods. Unstable trial steps are
    rejected inside the optimizer. When val_rec is given, the same cost on
    that record is tracked per accepted iterate and the best iterate is
    returned; the final estimation cost never exceeds the initial one.
    """
    opts = opts or FitOptions()
    bins = np.asarray(opts.bins if opts.bins is not None else grid.all_inband())
    w = np.ones(len(bins)) if opts.weights is None else 1.0 / np.asarray(opts.weights, float)
    sw = np.sqrt(w)
    R = rec.u.shape[0]
    N = rec.u.shape[2]

    u_periods, Y = _mean_period_spectra(rec, bins)

    def resid(theta):
        m = _unpack(model, theta)
        rows = []
        for r in range(R):
            e = (_steady_spectrum(m, u_periods[r], opts.transient_periods, bins) - Y[r]) * sw
            rows.append(np.concatenate([e.real, e.imag]))
        return np.concatenate(rows)

    def jac(theta):
        m = _unpack(model, theta)
        rows = []
        for r in range(R):
            tiled = np.tile(u_periods[r], opts.transient_periods + 1)
            _, X = m.simulate(tiled)
            Jt = jacobian(m, tiled, X)[-N:, 0, :] * m.y_scale[0]
            Jf = rfft_norm(Jt, axis=0)[bins] * sw[:, None]
            rows.append(np.vstack([Jf.real, Jf.imag]))
        return np.vstack(rows)

    validate = None
    if val_rec is not None:
        uv_periods, Yv = _mean_period_spectra(val_rec, bins)
        Rv = val_rec.u.shape[0]

        def validate(theta):
            m = _unpack(model, theta)
            tot = 0.0
            for r in range(Rv):
                try:
                    Ym = _steady_spectrum(m, uv_periods[r], opts.transient_periods, bins)
                except InstabilityError:
                    return np.inf
                tot += float(np.sum(np.abs(Ym - Yv[r]) ** 2 * w))
            return tot

    res = levenberg_marquardt(
        resid,
        jac,
        _pack(model),
        max_iter=opts.max_iter,
        lam0=opts.lam0,
        lam_up=opts.lam_up,
        lam_down=opts.lam_down,
        cost_tol=opts.cost_tol,
        validate=validate,
    )
    theta_out = res.theta
    used_val = False
    if val_rec is not None and res.best_val_theta is not None:
        theta_out = res.best_val_theta
        used_val = True
    report = FitReport(
        bins=bins,
        cost0=res.cost0,
        cost=res.cost,
        status=res.status,
        n_iter=res.n_iter,
        iterations=res.iterations,
        used_validation=used_val,
    )
    return _unpack(model, theta_out), report


def rmse(model, rec, transient_periods=1):
    """Root-mean-square steady-state output error against a periodic record.

    The input and output of each realization are period-averaged; the model
    is simulated through transient_periods extra periods and its final
    period compared sample by sample.
    """
    R, P, N = rec.u.shape
    u_mean = rec.u.mean(axis=1)
    y_mean = rec.y.mean(axis=1)
    total = 0.0
    for r in range(R):
        tiled = np.tile(u_mean[r], transient_periods + 1)
        y, _ = model.simulate(tiled)
        err = y[-N:] - y_mean[r]
        total += float(err @ err)
    return math.sqrt(total / (R * N))


def export_model_json(model, path, provenance=None):
    payload = {
        "kind": "pnlss",
        "n_x": model.n_x,
        "n_u": model.n_u,
        "n_y": model.n_y,
        "degrees": list(model.basis_state.degrees),
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
        "E": model.E.tolist(),
        "F": model.F.tolist(),
        "x_scale": model.x_scale.tolist(),
        "u_scale": model.u_scale.tolist(),
        "y_scale": model.y_scale.tolist(),
        "fs": model.fs,
        "provenance": provenance or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_model_json(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "pnlss":
        raise FormatError(f"expected a pnlss model file, got {payload.get('kind')!r}")
    bs = build_basis(payload["n_x"], payload["n_u"], payload["degrees"])
    bo = build_basis(payload["n_x"], payload["n_u"], payload["degrees"])
    return PnlssModel(
        A=np.array(payload["A"]),
        B=np.array(payload["B"]),
        C=np.array(payload["C"]),
        D=np.array(payload["D"]),
        E=np.array(payload["E"]),
        F=np.array(payload["F"]),
        basis_state=bs,
        basis_out=bo,
        x_scale=np.array(payload["x_scale"]),
        u_scale=np.array(payload["u_scale"]),
        y_scale=np.array(payload["y_scale"]),
        fs=payload.get("fs"),
    )


def export_fit_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lambda", "est_cost", "val_cost"])
        for it in report.iterations:
            writer.writerow(
                [
                    it.index,
                    repr(float(it.lam)),
                    repr(float(it.cost)),
                    "" if it.val_cost is None else repr(float(it.val_cost)),
                ]
            )
