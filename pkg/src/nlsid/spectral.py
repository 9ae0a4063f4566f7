"""Period/realization-resolved spectra and detection-line distortion analysis.

The output spectrum of a weakly nonlinear PISPO system under an odd-random
multisine splits by line class: excited odd bins carry the linear response,
even bins collect even-order distortion, unexcited odd bins collect odd-order
distortion, and every bin carries noise that period averaging beats down.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InsufficientDataError
from .util import pow_db, rfft_norm


@dataclass(frozen=True)
class TimeRecord:
    """Multi-period, multi-realization input/output samples.

    u and y are shaped (R, P, N): realization, period, sample within period.
    """

    u: np.ndarray
    y: np.ndarray
    fs: float

    def __post_init__(self):
        if self.u.ndim != 3 or self.u.shape != self.y.shape:
            raise FormatError(
                f"u and y must share shape (R, P, N), got {self.u.shape} "
                f"and {self.y.shape}"
            )

    @property
    def R(self):
        return self.u.shape[0]

    @property
    def P(self):
        return self.u.shape[1]

    @property
    def N(self):
        return self.u.shape[2]

    def discard_periods(self, skip):
        """Drop `skip` leading periods per realization (transient removal)."""
        if skip == 0:
            return self
        if skip < 0 or skip >= self.P:
            raise FormatError(f"cannot discard {skip} of {self.P} periods")
        return TimeRecord(u=self.u[:, skip:], y=self.y[:, skip:], fs=self.fs)


def record_from_flat(u, y, fs, N, P, R=1):
    """Reshape flat sample streams into a (R, P, N) record."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.size != R * P * N or y.size != R * P * N:
        raise FormatError(
            f"expected {R * P * N} samples (R={R}, P={P}, N={N}), "
            f"got u: {u.size}, y: {y.size}"
        )
    return TimeRecord(u=u.reshape(R, P, N), y=y.reshape(R, P, N), fs=fs)


@dataclass(frozen=True)
class SpectralRecord:
    """One-sided per-period DFT spectra, 1/sqrt(N) normalization.

    U and Y are shaped (R, P, N//2 + 1); bin k sits at frequency k*fs/N.
    """

    U: np.ndarray
    Y: np.ndarray
    grid: object
    fs: float
    N: int
    transient_skip: int = 0

    @property
    def R(self):
        return self.U.shape[0]

    @property
    def P(self):
        return self.U.shape[1]

    @property
    def freq(self):
        return np.arange(self.N // 2 + 1) * self.fs / self.N

    def mean_over_periods(self):
        """Period-averaged spectra, shape (R, nbins)."""
        return self.U.mean(axis=1), self.Y.mean(axis=1)


def to_spectra(rec, grid, transient_skip=0):
    """Per-period DFT of a record after discarding leading transient periods."""
    rec = rec.discard_periods(transient_skip)
    U = rfft_norm(rec.u, axis=-1)
    Y = rfft_norm(rec.y, axis=-1)
    return SpectralRecord(
        U=U, Y=Y, grid=grid, fs=rec.fs, N=rec.N, transient_skip=transient_skip
    )


def noise_variance(spec):
    """Per-bin variance of the period-averaged output spectrum.

    The sample variance of Y over periods estimates the per-period noise
    variance; dividing by P gives the variance of the period mean. Computed
    per realization, then pooled by averaging over realizations.

    Returns an array of shape (nbins,). Raises when fewer than two periods
    are available.
    """
    if spec.P < 2:
        raise InsufficientDataError(
            f"noise variance needs at least 2 periods, got P={spec.P}"
        )
    Ymean = spec.Y.mean(axis=1, keepdims=True)
    per_period = np.sum(np.abs(spec.Y - Ymean) ** 2, axis=1) / (spec.P - 1)
    return np.mean(per_period / spec.P, axis=0)


VERDICTS = (
    "linear",
    "even",
    "odd",
    "even+odd, even dominant",
    "even+odd, odd dominant",
)


@dataclass(frozen=True)
class DistortionReport:
    """Line-class power levels of one analysis run.

    Per-bin powers are |mean spectrum|^2 of the class bins; noise_power is
    the variance of that mean, so a class sitting at the noise floor reads
    comparable power and noise levels.
    """

    grid: object
    fs: float
    N: int
    mean_spectrum: np.ndarray  # pooled over realizations, shape (nbins,)
    noise_power: np.ndarray  # variance of the period mean, shape (nbins,)
    linear_power: np.ndarray  # on grid.excited
    even_nl_power: np.ndarray  # on grid.even_detect
    odd_nl_power: np.ndarray  # on grid.odd_detect
    per_realization: tuple  # one dict of class-power arrays per realization
    margin_db: float
    transient_skip: int

    def band_level_db(self, which):
        """Band-averaged level of one class in dB."""
        arr = {
            "linear": self.linear_power,
            "even": self.even_nl_power,
            "odd": self.odd_nl_power,
            "noise": self.noise_power[self.grid.all_inband()],
        }[which]
        if len(arr) == 0:
            return float("-inf")
        return float(pow_db(np.mean(arr)))

    @property
    def even_significant(self):
        return self._significant(self.even_nl_power, self.grid.even_detect)

    @property
    def odd_significant(self):
        return self._significant(self.odd_nl_power, self.grid.odd_detect)

    def _significant(self, power, bins):
        if len(bins) == 0:
            return False
        floor = np.mean(self.noise_power[bins])
        return bool(np.mean(power) > floor * 10.0 ** (self.margin_db / 10.0))

    @property
    def verdict(self):
        even, odd = self.even_significant, self.odd_significant
        if not even and not odd:
            return "linear"
        if even and not odd:
            return "even"
        if odd and not even:
            return "odd"
        if self.band_level_db("even") >= self.band_level_db("odd"):
            return "even+odd, even dominant"
        return "even+odd, odd dominant"

    def summary(self):
        return {
            "verdict": self.verdict,
            "linear_db": self.band_level_db("linear"),
            "even_nl_db": self.band_level_db("even"),
            "odd_nl_db": self.band_level_db("odd"),
            "noise_db": self.band_level_db("noise"),
            "even_significant": self.even_significant,
            "odd_significant": self.odd_significant,
            "margin_db": self.margin_db,
            "transient_skip": self.transient_skip,
        }


def distortion_analysis(spec, margin_db=6.0):
    """Quantify linear, even-NL, and odd-NL power on their line classes.

    Class powers come from the period-averaged spectrum, pooled over
    realizations; a class counts as significant when its band-mean power
    exceeds the noise level by `margin_db`.
    """
    grid = spec.grid
    _, Ybar = spec.mean_over_periods()  # (R, nbins)
    noise = noise_variance(spec) if spec.P >= 2 else np.zeros(spec.Y.shape[-1])

    power = np.abs(Ybar) ** 2  # per realization
    pooled = power.mean(axis=0)

    per_real = tuple(
        {
            "linear_power": power[r, grid.excited],
            "even_nl_power": power[r, grid.even_detect],
            "odd_nl_power": power[r, grid.odd_detect],
        }
        for r in range(spec.R)
    )

    return DistortionReport(
        grid=grid,
        fs=spec.fs,
        N=spec.N,
        mean_spectrum=Ybar.mean(axis=0),
        noise_power=noise,
        linear_power=pooled[grid.excited],
        even_nl_power=pooled[grid.even_detect],
        odd_nl_power=pooled[grid.odd_detect],
        per_realization=per_real,
        margin_db=margin_db,
        transient_skip=spec.transient_skip,
    )


def export_report_json(report, path):
    payload = report.summary()
    payload["per_realization"] = [
        {k: pow_db(v).tolist() for k, v in d.items()} for d in report.per_realization
    ]
    for name, bins, power in (
        ("linear", report.grid.excited, report.linear_power),
        ("even_nl", report.grid.even_detect, report.even_nl_power),
        ("odd_nl", report.grid.odd_detect, report.odd_nl_power),
    ):
        payload[name] = {
            "bins": [int(b) for b in bins],
            "power_db": pow_db(power).tolist(),
            "noise_db": pow_db(report.noise_power[bins]).tolist(),
        }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def export_report_csv(report, path):
    """Per-bin class/power rows, ready for spectrum plots."""
    f0 = report.fs / report.N
    rows = []
    for name, bins, power in (
        ("excited", report.grid.excited, report.linear_power),
        ("even_detect", report.grid.even_detect, report.even_nl_power),
        ("odd_detect", report.grid.odd_detect, report.odd_nl_power),
    ):
        noise_db = pow_db(report.noise_power[bins])
        for b, p, nd in zip(bins, pow_db(power), noise_db):
            rows.append((int(b), b * f0, name, float(p), float(nd)))
    rows.sort()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "freq_hz", "class", "power_db", "noise_db"])
        writer.writerows(rows)
