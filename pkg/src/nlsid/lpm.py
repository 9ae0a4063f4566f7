"""Local polynomial FRF estimation.

Around every excited bin, the frequency response and the generalized
transient term (plant plus noise leakage) are both smooth in frequency, so a
short window of neighbouring excited lines supports a joint low-order
polynomial fit. Solving the window in least squares and keeping the constant
terms yields the FRF and transient at the centre bin; the window then slides
one excited line at a time across the band.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError


@dataclass(frozen=True)
class LpmConfig:
    """Window shape of the local solves.

    R is the local polynomial order; n the half-window width counted in
    excited lines (2n+1 regression rows per solve). A full-rank window needs
    n >= R + 1; the default adds `dof_extra` lines so the residual carries
    degrees of freedom for a variance estimate.
    """

    R: int = 2
    n: int | None = None
    dof_extra: int = 1
    widen_cap: int = 4  # extra lines allowed when a window is rank deficient

    def __post_init__(self):
        if self.R < 0:
            raise ConfigError("polynomial order R must be >= 0")
        if self.n is None:
            object.__setattr__(self, "n", self.R + 1 + self.dof_extra)
        if self.n < self.R + 1:
            raise ConfigError(f"need n >= R + 1, got n={self.n}, R={self.R}")

    @property
    def n_param(self):
        # constant + R polynomial terms, for G and for T
        return 2 * (self.R + 1)


@dataclass(frozen=True)
class BlaEstimate:
    """Nonparametric FRF on the excited bins with variance information.

    var_total follows realization-to-realization scatter when several phase
    realizations are available (noise plus stochastic nonlinear distortion);
    var_noise follows period-to-period variation only. `var_total_source`
    records which estimator filled var_total.
    """

    bins: np.ndarray
    freq_hz: np.ndarray
    G: np.ndarray
    var_total: np.ndarray
    var_noise: np.ndarray | None
    T: np.ndarray
    fs: float
    N: int
    var_total_source: str = "lpm_residual"

    def __len__(self):
        return len(self.bins)

    @property
    def estimable(self):
        return np.isfinite(self.G)


def _window_indices(n_lines, center, half):
    """2*half+1 consecutive line positions nearest `center`, clipped in range."""
    width = min(2 * half + 1, n_lines)
    lo = int(np.clip(center - half, 0, n_lines - width))
    return np.arange(lo, lo + width)


def _local_solve(U, Y, bins, center_idx, cfg):
    """LS solve of one window; returns (G, T, var_G, rank_ok).

    Rows are the excited lines in the window; columns are U-weighted powers
    of the bin offset for the FRF part and plain powers for the transient
    part. Offsets are scaled to [-1, 1] to condition the Vandermonde blocks.
    """
    n_lines = len(bins)
    half = cfg.n
    while True:
        idx = _window_indices(n_lines, center_idx, half)
        r = (bins[idx] - bins[center_idx]).astype(float)
        scale = max(np.max(np.abs(r)), 1.0)
        rn = r / scale
        powers = rn[:, None] ** np.arange(cfg.R + 1)[None, :]
        K = np.hstack([U[idx, None] * powers, powers.astype(complex)])
        theta, _, rank, _ = np.linalg.lstsq(K, Y[idx], rcond=None)
        if rank == K.shape[1] or half >= cfg.n + cfg.widen_cap or len(idx) >= n_lines:
            break
        half += 1

    if rank < K.shape[1]:
        return np.nan + 0j, np.nan + 0j, np.nan

    G = theta[0]
    T = theta[cfg.R + 1]
    dof = len(idx) - K.shape[1]
    if dof > 0:
        resid = Y[idx] - K @ theta
        s2 = np.sum(np.abs(resid) ** 2) / dof
        # var(G-hat) = s2 * [(K^H K)^-1]_00 via the R factor of a QR
        Rfac = np.linalg.qr(K, mode="r")
        w = np.linalg.solve(Rfac.conj().T, np.eye(K.shape[1], 1)[:, 0])
        var_G = s2 * float(np.sum(np.abs(w) ** 2))
    else:
        var_G = 0.0
    return G, T, var_G


def _smooth(v, width):
    """Moving average with edge renormalization."""
    if width <= 1 or len(v) < 2:
        return v
    kern = np.ones(min(width, len(v)))
    norm = np.convolve(np.ones(len(v)), kern, "same")
    return np.convolve(v, kern, "same") / norm


def _lpm_single(U, Y, bins, cfg):
    """Sweep the window across one averaged spectrum pair (full-length spectra)."""
    Ue = U[bins]
    Ye = Y[bins]
    G = np.empty(len(bins), dtype=complex)
    T = np.empty(len(bins), dtype=complex)
    var_G = np.empty(len(bins))
    for i in range(len(bins)):
        G[i], T[i], var_G[i] = _local_solve(Ue, Ye, bins, i, cfg)
    return G, T, var_G


def lpm_frf(spec, cfg=None):
    """FRF over the excited bins of a spectral record.

    Period-averaged spectra of each realization are solved independently and
    the per-realization estimates averaged; var_total comes from the local
    LS residuals (noise and any model mismatch inside the window).
    """
    cfg = cfg or LpmConfig()
    grid = spec.grid
    bins = np.asarray(grid.excited, dtype=int)
    if len(bins) < cfg.n_param:
        raise InsufficientDataError(
            f"{len(bins)} excited lines cannot support {cfg.n_param} local parameters"
        )
    Ubar, Ybar = spec.mean_over_periods()
    if np.any(np.abs(Ubar[:, bins]) == 0.0):
        raise ConfigError("input spectrum is zero on an excited bin")

    G = np.zeros(len(bins), dtype=complex)
    T = np.zeros(len(bins), dtype=complex)
    var = np.zeros(len(bins))
    for r in range(spec.R):
        Gr, Tr, vr = _lpm_single(Ubar[r], Ybar[r], bins, cfg)
        G += Gr
        T += Tr
        var += vr
    R = spec.R
    if np.any(~np.isfinite(G)):
        warnings.warn("some bins were rank deficient and flagged unestimable")
    return BlaEstimate(
        bins=bins,
        freq_hz=bins * spec.fs / spec.N,
        G=G / R,
        var_total=var / R**2,  # variance of the realization mean
        var_noise=None,
        T=T / R,
        fs=spec.fs,
        N=spec.N,
        var_total_source="lpm_residual",
    )


def bla_robust(spec, cfg=None):
    """Robust BLA: periods give the noise level, realizations the total one.

    Per realization, the period-averaged spectra are LPM-solved for the FRF.
    The period-to-period variance of Y maps onto the FRF through |U|^2 and
    becomes var_noise. With two or more realizations, the scatter of the
    per-realization FRFs gives var_total, which then also carries the
    stochastic nonlinear contributions; with a single realization var_total
    falls back to the LPM residual variance and is flagged as such.
    """
    cfg = cfg or LpmConfig()
    grid = spec.grid
    bins = np.asarray(grid.excited, dtype=int)
    Ubar, Ybar = spec.mean_over_periods()
    if np.any(np.abs(Ubar[:, bins]) == 0.0):
        raise ConfigError("input spectrum is zero on an excited bin")

    per_real = [_lpm_single(Ubar[r], Ybar[r], bins, cfg) for r in range(spec.R)]
    G_all = np.stack([g for g, _, _ in per_real])
    T_all = np.stack([t for _, t, _ in per_real])
    var_resid = np.stack([v for _, _, v in per_real])

    G = G_all.mean(axis=0)
    R = spec.R

    var_noise = None
    if spec.P >= 2:
        # per-realization variance of the period-averaged Y, mapped to G
        Ymean = spec.Y.mean(axis=1, keepdims=True)
        vY = np.sum(np.abs(spec.Y - Ymean) ** 2, axis=1) / (spec.P - 1) / spec.P
        vG = vY[:, bins] / np.abs(Ubar[:, bins]) ** 2
        var_noise = vG.sum(axis=0) / R**2

    if R >= 2:
        scatter = np.sum(np.abs(G_all - G) ** 2, axis=0) / (R - 1) / R
        # R-1 degrees of freedom per bin is too few to weight fits with (the
        # reciprocal of a low-dof variance estimate has a heavy tail), and
        # the distortion variance is smooth in frequency, so pool the scatter
        # over enough neighbours to reach ~8 dof
        if R - 1 >= 8:
            width = 1
        else:
            width = 2 * int(np.ceil(4.0 / (R - 1))) + 1
        var_total = _smooth(scatter, width)
        source = "realizations"
    else:
        var_total = var_resid[0]
        source = "lpm_residual"
        warnings.warn(
            "single realization: var_total falls back to the LPM residual variance"
        )

    return BlaEstimate(
        bins=bins,
        freq_hz=bins * spec.fs / spec.N,
        G=G,
        var_total=var_total,
        var_noise=var_noise,
        T=T_all.mean(axis=0),
        fs=spec.fs,
        N=spec.N,
        var_total_source=source,
    )


def export_bla_csv(bla, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "freq_hz", "re_g", "im_g", "var_noise", "var_total"])
        vn = bla.var_noise if bla.var_noise is not None else np.full(len(bla), np.nan)
        for i in range(len(bla)):
            writer.writerow(
                [
                    int(bla.bins[i]),
                    float(bla.freq_hz[i]),
                    repr(float(bla.G[i].real)),
                    repr(float(bla.G[i].imag)),
                    repr(float(vn[i])),
                    repr(float(bla.var_total[i])),
                ]
            )
