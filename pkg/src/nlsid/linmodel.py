"""Parametric linear models fitted to a nonparametric FRF.

The flow is: weighted rational fit in z^-1 (linearized LS start, optional
iterative reweighting, then true-residual Gauss-Newton), information-criterion
order selection, conversion to a balanced state-space realization with
unstable modes discarded, and a final maximum-likelihood polish of the
state-space matrices against the FRF and its variance.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import FormatError, NumericalError
from .leastsq import levenberg_marquardt


@dataclass(frozen=True)
class RationalModel:
    """G(z) = (b0 + b1 z^-1 + ...) / (1 + a1 z^-1 + ...), a0 fixed to 1."""

    b: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, float)))
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, float)))
        if abs(self.a[0] - 1.0) > 1e-12:
            raise FormatError("denominator must be normalized to a0 = 1")

    @property
    def n_b(self):
        return len(self.b) - 1

    @property
    def n_a(self):
        return len(self.a) - 1

    def eval(self, z):
        zi = 1.0 / np.asarray(z, dtype=complex)
        num = np.polynomial.polynomial.polyval(zi, self.b)
        den = np.polynomial.polynomial.polyval(zi, self.a)
        return num / den

    def eval_bins(self, bins, N):
        return self.eval(np.exp(2j * np.pi * np.asarray(bins) / N))


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    fs: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, float)))
        object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, float)))
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, float)))
        object.__setattr__(self, "D", np.atleast_2d(np.asarray(self.D, float)))

    @property
    def n_x(self):
        return self.A.shape[0]

    def frf(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        I = np.eye(self.n_x)
        out = np.empty(z.shape, dtype=complex)
        for i, zk in enumerate(z):
            out[i] = (self.C @ np.linalg.solve(zk * I - self.A, self.B) + self.D)[0, 0]
        return out

    def frf_bins(self, bins, N):
        return self.frf(np.exp(2j * np.pi * np.asarray(bins) / N))

    def simulate(self, u, x0=None):
        """Time response to input u (shape (T,) or (T, n_u)); returns (y, X)."""
        u = np.atleast_2d(np.asarray(u, float).T).T
        T = u.shape[0]
        x = np.zeros(self.n_x) if x0 is None else np.asarray(x0, float).copy()
        X = np.empty((T, self.n_x))
        for t in range(T):
            X[t] = x
            x = self.A @ x + self.B @ u[t]
        Y = X @ self.C.T + u @ self.D.T
        return Y[:, 0] if Y.shape[1] == 1 else Y, X


def _weights(bla, mask):
    """Inverse-variance weights, floored so noiseless FRFs stay usable."""
    v = np.asarray(bla.var_total, float)[mask]
    good = np.isfinite(v) & (v > 0)
    if not np.any(good):
        return np.ones(v.shape)
    floor = np.max(v[good]) * 1e-14
    return 1.0 / np.clip(np.where(good, v, floor), floor, None)


def _levi_fit(G, zi, w, n_b, n_a, sk_iter):
    """Linearized weighted LS: minimize sum w |B(zi) - G A(zi)|^2.

    Optional iterations reweight by the previous |A| to undo the linearization
    bias before the Gauss-Newton stage takes over.
    """
    pow_b = zi[:, None] ** np.arange(n_b + 1)[None, :]
    pow_a = zi[:, None] ** np.arange(1, n_a + 1)[None, :]
    sw = np.sqrt(w)
    extra = np.ones(len(G))
    theta = None
    for _ in range(max(1, sk_iter)):
        lhs = np.hstack([pow_b, -G[:, None] * pow_a]) * (sw * extra)[:, None]
        rhs = G * sw * extra
        K = np.vstack([lhs.real, lhs.imag])
        y = np.concatenate([rhs.real, rhs.imag])
        theta, _, rank, _ = np.linalg.lstsq(K, y, rcond=None)
        if rank < K.shape[1]:
            warnings.warn("rational fit regressor is rank deficient")
        if sk_iter <= 1:
            break
        a = np.concatenate([[1.0], theta[n_b + 1 :]])
        Aval = np.polynomial.polynomial.polyval(zi, a)
        extra = 1.0 / np.maximum(np.abs(Aval), 1e-12)
    return theta


def _stabilize_denominator(a):
    """Reflect poles outside the unit circle to their conjugate reciprocals.

    The reflection keeps |A(e^{jw})| the same up to a constant factor, so a
    numerator refit restores the fit quality while the model becomes stable.
    """
    if len(a) == 1:
        return a, False
    p = np.roots(a)
    outside = np.abs(p) > 1.0
    if not np.any(outside):
        return a, False
    p = np.where(outside, 1.0 / np.conj(p), p)
    return np.real(np.poly(p)), True


def _refit_numerator(G, zi, w, a, n_b):
    # weighted LS for b with the denominator held fixed
    Aval = np.polynomial.polynomial.polyval(zi, a)
    lhs = (zi[:, None] ** np.arange(n_b + 1)[None, :]) / Aval[:, None]
    lhs = lhs * np.sqrt(w)[:, None]
    rhs = G * np.sqrt(w)
    K = np.vstack([lhs.real, lhs.imag])
    y = np.concatenate([rhs.real, rhs.imag])
    b, *_ = np.linalg.lstsq(K, y, rcond=None)
    return b


def fit_rational(bla, n_b, n_a, sk_iter=3, refine=True, max_iter=100):
    """Weighted rational FRF fit on the estimable bins of a BLA.

    The returned denominator is always stable: poles that land outside the
    unit circle are reflected inside and the numerator refit.
    """
    mask = np.asarray(bla.estimable)
    G = np.asarray(bla.G)[mask]
    bins = np.asarray(bla.bins)[mask]
    zi = np.exp(-2j * np.pi * bins / bla.N)
    w = _weights(bla, mask)
    sw = np.sqrt(w)

    theta0 = _levi_fit(G, zi, w, n_b, n_a, sk_iter)
    a0, changed = _stabilize_denominator(np.concatenate([[1.0], theta0[n_b + 1 :]]))
    if changed:
        theta0 = np.concatenate([_refit_numerator(G, zi, w, a0, n_b), a0[1:]])
    if not refine:
        return RationalModel(theta0[: n_b + 1], np.concatenate([[1.0], theta0[n_b + 1 :]]))

    pow_b = zi[:, None] ** np.arange(n_b + 1)[None, :]
    pow_a = zi[:, None] ** np.arange(1, n_a + 1)[None, :]

    def split(th):
        return th[: n_b + 1], np.concatenate([[1.0], th[n_b + 1 :]])

    def resid(th):
        b, a = split(th)
        e = sw * (pow_b @ b / (pow_a @ a[1:] + 1.0) - G)
        return np.concatenate([e.real, e.imag])

    def jac(th):
        b, a = split(th)
        Aval = pow_a @ a[1:] + 1.0
        Bval = pow_b @ b
        Jb = pow_b / Aval[:, None]
        Ja = -(Bval / Aval**2)[:, None] * pow_a
        Jc = np.hstack([Jb, Ja]) * sw[:, None]
        return np.vstack([Jc.real, Jc.imag])

    res = levenberg_marquardt(resid, jac, theta0, max_iter=max_iter)
    b, a = split(res.theta)
    a, changed = _stabilize_denominator(a)
    if changed:
        b = _refit_numerator(G, zi, w, a, n_b)
    return RationalModel(b, a)


def _fit_cost(rat, bla):
    mask = np.asarray(bla.estimable)
    G = np.asarray(bla.G)[mask]
    w = _weights(bla, mask)
    Gm = rat.eval_bins(np.asarray(bla.bins)[mask], bla.N)
    return float(np.sum(w * np.abs(Gm - G) ** 2))


def mdl_select(bla, max_order=4, full=False):
    """Scan (n_b, n_a) pairs and keep the minimum-description-length one.

    Score: F ln(V/F) + n_theta ln F with F fitted bins and
    n_theta = n_b + n_a + 1 free coefficients. The fit cost is floored so a
    numerically zero residual cannot dominate through log of zero.
    """
    F = int(np.sum(bla.estimable))
    table = []
    best = None
    for n_a in range(max_order + 1):
        for n_b in range(max_order + 1):
            if n_b + n_a + 1 >= 2 * F:
                continue
            try:
                rat = fit_rational(bla, n_b, n_a, max_iter=40)
            except (np.linalg.LinAlgError, NumericalError):
                continue
            V = _fit_cost(rat, bla)
            n_theta = n_b + n_a + 1
            score = F * np.log(max(V / F, 1e-300)) + n_theta * np.log(F)
            table.append((n_b, n_a, V, score))
            if best is None or score < best[1]:
                best = ((n_b, n_a), score)
    if best is None:
        raise NumericalError("no model order produced a usable fit")
    if full:
        return best[0], table
    return best[0]


def _sqrt_factor(W):
    s, V = np.linalg.eigh((W + W.T) / 2.0)
    s = np.clip(s, 0.0, None)
    return V * np.sqrt(s)


def _stable_part(A, B, C):
    """Similarity-transformed stable subsystem via an ordered real Schur form."""
    T, Z, sdim = scipy.linalg.schur(A, output="real", sort="iuc")
    n = A.shape[0]
    if sdim == 0:
        raise NumericalError("model has no stable dynamics to realize")
    if sdim == n:
        return A, B, C, 0
    T11, T12, T22 = T[:sdim, :sdim], T[:sdim, sdim:], T[sdim:, sdim:]
    X = scipy.linalg.solve_sylvester(T11, -T22, -T12)
    Bt = Z.T @ B
    Bs = Bt[:sdim] - X @ Bt[sdim:]
    Cs = (C @ Z)[:, :sdim]
    return T11, Bs, Cs, n - sdim


def balanced_realization(rat, fs=None):
    """Minimal-style balanced state space for the stable part of a rational model.

    Unstable poles are dropped with a warning: the remaining response is the
    sum of the stable partial fractions plus the direct term. Controllability
    and observability Gramians of the result are equal and diagonal.
    """
    L = max(len(rat.b), len(rat.a))
    bp = np.concatenate([rat.b, np.zeros(L - len(rat.b))])
    ap = np.concatenate([rat.a, np.zeros(L - len(rat.a))])
    A, B, C, D = scipy.signal.tf2ss(bp, ap)
    if A.size == 0:
        raise NumericalError("static model has no state to realize")

    A, B, C, dropped = _stable_part(A, B, C)
    if dropped:
        warnings.warn(f"discarding {dropped} unstable mode(s) from the realization")

    Wc = scipy.linalg.solve_discrete_lyapunov(A, B @ B.T)
    Wo = scipy.linalg.solve_discrete_lyapunov(A.T, C.T @ C)
    Lc = _sqrt_factor(Wc)
    Lo = _sqrt_factor(Wo)
    U, s, Vt = np.linalg.svd(Lo.T @ Lc)
    if s[-1] <= s[0] * 1e-13:
        raise NumericalError(
            "near-singular Hankel spectrum: realization is not minimal"
        )
    sq = 1.0 / np.sqrt(s)
    Tm = Lc @ Vt.T * sq[None, :]
    Tinv = (U * sq[None, :]).T @ Lo.T
    return StateSpaceModel(Tinv @ A @ Tm, Tinv @ B, C @ Tm, D, fs=fs)


def gramians(ss):
    Wc = scipy.linalg.solve_discrete_lyapunov(ss.A, ss.B @ ss.B.T)
    Wo = scipy.linalg.solve_discrete_lyapunov(ss.A.T, ss.C.T @ ss.C)
    return Wc, Wo


def ml_refine(ss, bla, max_iter=100, weights=None):
    """Gauss-Newton polish of (A, B, C, D) against the FRF and its variance.

    Cost: sum_k |Ghat(k) - G_model(z_k)|^2 / sigma^2(k) over the estimable
    bins, z_k on the unit circle at the bin frequencies. Accepted costs are
    monotone; hitting the damping cap returns the best iterate found, with
    the status recorded on the result.
    """
    mask = np.asarray(bla.estimable)
    G = np.asarray(bla.G)[mask]
    bins = np.asarray(bla.bins)[mask]
    z = np.exp(2j * np.pi * bins / bla.N)
    w = _weights(bla, mask) if weights is None else np.asarray(weights, float)[mask]
    sw = np.sqrt(w)
    n = ss.n_x
    shapes = [(n, n), (n, 1), (1, n), (1, 1)]

    def unpack(th):
        parts = []
        ofs = 0
        for r, c in shapes:
            parts.append(th[ofs : ofs + r * c].reshape(r, c))
            ofs += r * c
        return parts

    def model(th):
        A, B, C, D = unpack(th)
        return StateSpaceModel(A, B, C, D, fs=ss.fs)

    def resid(th):
        e = sw * (model(th).frf(z) - G)
        return np.concatenate([e.real, e.imag])

    def jac(th):
        A, B, C, D = unpack(th)
        I = np.eye(n)
        rows = np.empty((len(z), n * n + 2 * n + 1), dtype=complex)
        for i, zk in enumerate(z):
            M = np.linalg.inv(zk * I - A)
            lam = (C @ M)[0]
            gam = (M @ B)[:, 0]
            rows[i] = np.concatenate([np.outer(lam, gam).ravel(), lam, gam, [1.0]])
        rows *= sw[:, None]
        return np.vstack([rows.real, rows.imag])

    theta0 = np.concatenate([ss.A.ravel(), ss.B.ravel(), ss.C.ravel(), ss.D.ravel()])
    res = levenberg_marquardt(resid, jac, theta0, max_iter=max_iter)
    return model(res.theta), res


def export_model_json(ss, path, provenance=None):
    payload = {
        "kind": "state_space",
        "n_x": ss.n_x,
        "A": ss.A.tolist(),
        "B": ss.B.tolist(),
        "C": ss.C.tolist(),
        "D": ss.D.tolist(),
        "fs": ss.fs,
        "provenance": provenance or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_model_json(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "state_space":
        raise FormatError(f"expected a state_space model file, got {payload.get('kind')!r}")
    return StateSpaceModel(
        np.array(payload["A"]),
        np.array(payload["B"]),
        np.array(payload["C"]),
        np.array(payload["D"]),
        fs=payload.get("fs"),
    )
