"""Odd-random-phase multisine design.

A multisine is a periodic sum of cosines on selected DFT bins. Exciting only
odd in-band bins, and randomly omitting some of them per group of consecutive
odd bins, leaves two families of detection lines: the omitted odd bins (odd
nonlinear distortion shows up there) and the even bins (even distortion).
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .util import rms

GRID_KINDS = ("full-odd", "odd-random")

# SeedSequence spawn keys: keeps the grid draw and every realization's phase
# draw on independent, reproducible streams.
_GRID_KEY = 0
_PHASE_KEY = 1


@dataclass(frozen=True)
class MultisineSpec:
    """Design parameters of an odd (random) multisine.

    Parameters
    ----------
    fs : float
        Sample frequency in Hz.
    N : int
        Samples per period. The frequency resolution is fs/N.
    band : tuple of float
        Excitation band (f_lo, f_hi) in Hz; only odd bins inside it are
        candidates for excitation.
    grid_kind : str
        'full-odd' excites every in-band odd bin; 'odd-random' omits
        `omit_per_group` bins from each group of `group_size` consecutive
        in-band odd bins, uniformly at random.
    group_size, omit_per_group : int
        Random-omission grouping for 'odd-random' grids.
    amplitude_profile : callable or None
        A(k) per excited bin index; None means flat A(k) = 1.
    target_rms : float or None
        Scale the synthesized period to this time-domain rms; None leaves
        the raw cosine sum unscaled.
    seed : int
        Seeds both the grid omission draw and the phase draws.
    """

    fs: float
    N: int
    band: tuple = (1.0, 5.0)
    grid_kind: str = "odd-random"
    group_size: int = 4
    omit_per_group: int = 1
    amplitude_profile: object = field(default=None, compare=False)
    target_rms: float | None = None
    seed: int = 0

    def __post_init__(self):
        f_lo, f_hi = self.band
        if not (0.0 < f_lo < f_hi):
            raise ConfigError(f"band must satisfy 0 < f_lo < f_hi, got {self.band}")
        if f_hi >= self.fs / 2:
            raise ConfigError(
                f"f_hi = {f_hi} must lie below the Nyquist frequency {self.fs / 2}"
            )
        if self.N < 2:
            raise ConfigError("N must be at least 2")
        if self.grid_kind not in GRID_KINDS:
            raise ConfigError(f"grid_kind must be one of {GRID_KINDS}")
        if self.grid_kind == "odd-random":
            if self.group_size < 1:
                raise ConfigError("group_size must be >= 1")
            if not 0 <= self.omit_per_group < self.group_size:
                raise ConfigError("omit_per_group must satisfy 0 <= omit < group_size")

    @property
    def f0(self):
        """Frequency resolution fs/N in Hz."""
        return self.fs / self.N

    def amplitude(self, bins):
        """Evaluate the amplitude profile on an array of bin indices."""
        if self.amplitude_profile is None:
            return np.ones(len(bins))
        return np.asarray([float(self.amplitude_profile(int(k))) for k in bins])


@dataclass(frozen=True)
class HarmonicGrid:
    """Partition of the in-band bins into line classes.

    `excited` and `odd_detect` partition the in-band odd bins; `even_detect`
    holds the in-band even bins (DC is never in band since f_lo > 0).
    """

    excited: np.ndarray
    odd_detect: np.ndarray
    even_detect: np.ndarray

    @property
    def n_k(self):
        return len(self.excited)

    def all_inband(self):
        """All in-band bins of every class, sorted."""
        return np.sort(
            np.concatenate([self.excited, self.odd_detect, self.even_detect])
        )


@dataclass(frozen=True)
class ExcitationSignal:
    """One realized multisine period.

    `samples` holds exactly one period; tiling it gives the periodic signal.
    """

    spec: MultisineSpec
    grid: HarmonicGrid
    phases: np.ndarray
    samples: np.ndarray
    realized_rms: float


def inband_bins(spec):
    """In-band (odd, even) bin indices for a spec; bounds are inclusive."""
    f_lo, f_hi = spec.band
    k_lo = int(np.ceil(f_lo / spec.f0 - 1e-12))
    k_hi = int(np.floor(f_hi / spec.f0 + 1e-12))
    k = np.arange(max(k_lo, 1), k_hi + 1)
    return k[k % 2 == 1], k[k % 2 == 0]


def build_grid(spec):
    """Pick excited and detection lines for a spec.

    For 'odd-random' grids, consecutive in-band odd bins are grouped in
    groups of `group_size` and `omit_per_group` members of each group are
    moved to the odd detection class, chosen uniformly at random from the
    seeded stream. A trailing partial group keeps the same omission count
    when it is large enough, else it is left fully excited.
    """
    odd, even = inband_bins(spec)
    if len(odd) == 0:
        raise ConfigError(
            f"no odd bins between {spec.band[0]} Hz and {spec.band[1]} Hz "
            f"at resolution {spec.f0} Hz"
        )

    if spec.grid_kind == "full-odd" or spec.omit_per_group == 0:
        excited = odd.copy()
        odd_detect = np.array([], dtype=int)
    else:
        rng = np.random.default_rng(
            np.random.SeedSequence(spec.seed, spawn_key=(_GRID_KEY,))
        )
        omit = []
        for start in range(0, len(odd), spec.group_size):
            group = odd[start : start + spec.group_size]
            if len(group) > spec.omit_per_group:
                omit.extend(rng.choice(group, spec.omit_per_group, replace=False))
        omit = np.sort(np.asarray(omit, dtype=int))
        excited = np.setdiff1d(odd, omit)
        odd_detect = omit

    return HarmonicGrid(excited=excited, odd_detect=odd_detect, even_detect=even)


def synthesize(spec, grid=None, realization=0):
    """Realize one period of the multisine.

    samples(t) = sum_k A(k) cos(2 pi k t / N + phi_k) over the excited bins,
    with phases drawn uniformly on [0, 2pi) from the seeded stream, then
    scaled to `target_rms` when one is requested. The sum is evaluated
    through an inverse DFT, so the spectrum is exact by construction.
    """
    if grid is None:
        grid = build_grid(spec)
    rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed, spawn_key=(_PHASE_KEY, realization))
    )
    phases = rng.uniform(0.0, 2.0 * np.pi, size=grid.n_k)
    amp = spec.amplitude(grid.excited)

    # One cosine of amplitude A at bin k maps to a one-sided coefficient
    # (N/2) A e^{j phi}.
    spectrum = np.zeros(spec.N // 2 + 1, dtype=complex)
    spectrum[grid.excited] = 0.5 * spec.N * amp * np.exp(1j * phases)
    samples = np.fft.irfft(spectrum, n=spec.N)

    if spec.target_rms is not None:
        r = rms(samples)
        if r == 0.0:
            raise ConfigError("cannot scale an all-zero signal to a target rms")
        samples = samples * (spec.target_rms / r)

    return ExcitationSignal(
        spec=spec,
        grid=grid,
        phases=phases,
        samples=samples,
        realized_rms=rms(samples),
    )


def realizations(spec, count):
    """`count` phase realizations sharing a single harmonic grid."""
    if count < 1:
        raise ConfigError("realization count must be >= 1")
    grid = build_grid(spec)
    return [synthesize(spec, grid, realization=r) for r in range(count)]


def export_signal_csv(sig, path):
    """Write the period as (sample_index, value) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "value"])
        for i, v in enumerate(sig.samples):
            writer.writerow([i, repr(float(v))])


def export_grid_json(sig, path):
    """Write the line classes plus per-line amplitude and phase."""
    spec = sig.spec
    payload = {
        "fs": spec.fs,
        "N": spec.N,
        "band": list(spec.band),
        "excited": [int(k) for k in sig.grid.excited],
        "odd_detect": [int(k) for k in sig.grid.odd_detect],
        "even_detect": [int(k) for k in sig.grid.even_detect],
        "amplitude": [float(a) for a in spec.amplitude(sig.grid.excited)],
        "phase": [float(p) for p in sig.phases],
        "realized_rms": sig.realized_rms,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_grid_json(path):
    """Read a grid export back into a :class:`HarmonicGrid`."""
    with open(path) as fh:
        payload = json.load(fh)
    return HarmonicGrid(
        excited=np.asarray(payload["excited"], dtype=int),
        odd_detect=np.asarray(payload["odd_detect"], dtype=int),
        even_detect=np.asarray(payload["even_detect"], dtype=int),
    )
