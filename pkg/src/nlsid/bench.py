"""Synthetic battery-like benchmark systems and record file handling.

The synthetic cell is a stable second-order linear core followed by a static
polynomial nonlinearity, plus a slow output ramp standing in for
state-of-charge drift and additive measurement noise:

    y = g + nl_even * g^2 + nl_odd * g^3 + drift_rate * t + noise,
    g = linear_core(u)

A static polynomial after a linear block is exactly representable by a
degree-{2,3} polynomial state-space model, so recovery can be checked against
ground truth. Record CSV import applies the validation rules for measured
data (uniform time base, declared layout versus row count).
"""

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from .errors import ConfigError, FormatError
from .linmodel import StateSpaceModel
from .spectral import TimeRecord

# Second-order resonant core used by the presets: pole radius 0.9 at 2.5 Hz
# for a 50 Hz rate (denominator 1 - 2 r cos(2 pi 2.5/50) z^-1 + r^2 z^-2),
# numerator (1 + z^-1) scaled for an in-band rms gain of 0.035 so a 20 A rms
# excitation yields roughly 0.8 V rms of linear response.
_CORE_B = (0.0015034727032994915, 0.0015034727032994915)
_CORE_A = (1.0, -1.7119017293312766, 0.81)


def _core_ss(fs):
    # z^-1 polynomials map to descending-z ones after padding to equal length
    b = np.array([*_CORE_B, 0.0])
    a = np.array(_CORE_A)
    A, B, C, D = scipy.signal.tf2ss(b, a)
    return StateSpaceModel(A, B, C, D, fs=fs)


@dataclass(frozen=True)
class SyntheticCell:
    ss: StateSpaceModel
    nl_even: float = 0.0
    nl_odd: float = 0.0
    drift_rate: float = 0.0
    noise_std: float = 0.0
    label: str = "custom"


def cell_preset(name, fs=50.0):
    """Preset operating points.

    soc90 behaves linearly; soc10 adds even-dominant distortion strong
    enough to stand well clear of the preset noise floor.
    """
    if name == "soc90":
        return SyntheticCell(
            ss=_core_ss(fs),
            nl_even=0.0,
            nl_odd=0.0,
            drift_rate=2e-6,
            noise_std=5e-4,
            label="soc90",
        )
    if name == "soc10":
        return SyntheticCell(
            ss=_core_ss(fs),
            nl_even=0.08,
            nl_odd=0.025,
            drift_rate=2e-6,
            noise_std=5e-4,
            label="soc10",
        )
    raise ConfigError(f"unknown cell preset {name!r}")


def simulate_cell(cell, signals, periods, seed=0):
    """Measurement of a cell under one or more excitation realizations.

    Each realization starts from zero initial state, so its first period
    carries the startup transient exactly as a cold measurement would; the
    analysis side deals with that via its transient skip. Noise draws are
    deterministic in (seed, realization index).
    """
    if not isinstance(signals, (list, tuple)):
        signals = [signals]
    if periods < 1:
        raise ConfigError("need at least one period")
    N = len(signals[0].samples)
    fs = signals[0].spec.fs
    R = len(signals)
    u = np.empty((R, periods, N))
    y = np.empty((R, periods, N))
    for r, sig in enumerate(signals):
        if len(sig.samples) != N:
            raise ConfigError("all realizations must share the same period length")
        u_full = np.tile(sig.samples, periods)
        g, _ = cell.ss.simulate(u_full)
        out = g + cell.nl_even * g**2 + cell.nl_odd * g**3
        if cell.drift_rate:
            out = out + cell.drift_rate * np.arange(len(u_full))
        if cell.noise_std:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, r)))
            out = out + cell.noise_std * rng.standard_normal(len(u_full))
        u[r] = u_full.reshape(periods, N)
        y[r] = out.reshape(periods, N)
    return TimeRecord(u, y, fs)


@dataclass(frozen=True)
class MeasuredRecord:
    rec: TimeRecord
    meta: dict


def export_record_csv(rec, path, extra_meta=None):
    """Write a record as t,current,voltage plus a .meta.json sidecar."""
    path = Path(path)
    R, P, N = rec.u.shape
    u = rec.u.reshape(-1)
    y = rec.y.reshape(-1)
    fs = float(rec.fs)  # numpy scalars repr as np.float64(...) and would not re-parse
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "current", "voltage"])
        for i in range(len(u)):
            writer.writerow([repr(i / fs), repr(float(u[i])), repr(float(y[i]))])
    meta = {"fs": rec.fs, "N": N, "P": P, "R": R}
    if extra_meta:
        meta.update(extra_meta)
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2)
    return path


def _sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def ingest_csv(path, meta_path=None, N=None, P=None, R=None, fs=None, jitter_tol=1e-6):
    """Read and validate a t,current,voltage CSV into a periodic record.

    Layout comes from explicit arguments, else the sidecar, else inference
    (fs from the time base; one realization, one period). The time base must
    be uniform within jitter_tol (relative): a skipped sample is reported
    with its row number. If the declared layout does not divide the record,
    trailing samples are dropped with a warning.
    """
    path = Path(path)
    meta = {}
    sidecar = Path(meta_path) if meta_path else _sidecar_path(path)
    if sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
    N = N if N is not None else meta.get("N")
    P = P if P is not None else meta.get("P")
    R = R if R is not None else meta.get("R", 1)
    fs = fs if fs is not None else meta.get("fs")

    t, cur, vol = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path} is empty")
        header = [h.strip().lower() for h in header]
        try:
            it, ic, iv = header.index("t"), header.index("current"), header.index("voltage")
        except ValueError as exc:
            raise FormatError(f"{path} must have t,current,voltage columns: {exc}") from exc
        for row_no, row in enumerate(reader, start=2):
            if len(row) <= max(it, ic, iv):
                raise FormatError(f"{path} row {row_no}: expected 3 columns, got {len(row)}")
            try:
                t.append(float(row[it]))
                cur.append(float(row[ic]))
                vol.append(float(row[iv]))
            except ValueError as exc:
                raise FormatError(f"{path} row {row_no}: {exc}") from exc
    if len(t) < 2:
        raise FormatError(f"{path} holds fewer than two samples")

    t = np.asarray(t)
    dt = np.diff(t)
    dt_ref = np.median(dt)
    if dt_ref <= 0:
        raise FormatError(f"{path}: time base is not increasing")
    bad = np.flatnonzero(np.abs(dt - dt_ref) > jitter_tol * dt_ref)
    if len(bad):
        raise FormatError(
            f"{path} row {bad[0] + 2}: time step {dt[bad[0]]:.6g} deviates from "
            f"{dt_ref:.6g} (missing or shifted sample)"
        )
    fs_file = float(1.0 / dt_ref)
    if fs is None:
        fs = fs_file
    elif abs(fs - fs_file) > jitter_tol * fs * 10:
        raise FormatError(f"{path}: declared rate {fs} disagrees with time base {fs_file:.6g}")

    n_rows = len(t)
    if N is None:
        N, P, R = n_rows, 1, 1
    else:
        if P is None:
            P = n_rows // (R * N)
            if P < 1:
                raise FormatError(f"{path}: {n_rows} rows cannot hold even one period of {N}")
        need = R * P * N
        if n_rows < need:
            raise FormatError(f"{path}: {n_rows} rows but layout needs {need}")
        if n_rows > need:
            warnings.warn(f"dropping {n_rows - need} trailing samples beyond {R}x{P}x{N}")
    need = R * P * N
    u = np.asarray(cur)[:need].reshape(R, P, N)
    y = np.asarray(vol)[:need].reshape(R, P, N)
    meta_out = dict(meta)
    meta_out.update({"fs": fs, "N": N, "P": P, "R": R, "source": str(path)})
    return MeasuredRecord(TimeRecord(u, y, fs), meta_out)
