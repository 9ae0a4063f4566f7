"""Report figures rendered next to the delimited outputs.

Everything draws through the Agg backend so the command line works headless.
Each helper takes the analysis objects, writes one PNG, and returns the path.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .util import pow_db


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_signal_figure(sig, path):
    spec = sig.spec
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6))
    n_show = min(int(2 * spec.fs), spec.N)
    t = np.arange(n_show) / spec.fs
    ax1.plot(t, sig.samples[:n_show], lw=0.8)
    ax1.set_xlabel("time [s]")
    ax1.set_ylabel("amplitude")
    ax1.set_title(f"multisine, rms {sig.realized_rms:.3g}")

    X = np.fft.rfft(sig.samples) / np.sqrt(spec.N)
    f = np.arange(len(X)) * spec.fs / spec.N
    p = pow_db(np.abs(X) ** 2)
    ax2.plot(f, p, color="0.8", lw=0.5)
    ax2.plot(f[sig.grid.excited], p[sig.grid.excited], ".", ms=3, label="excited")
    ax2.set_xlim(0, 2 * spec.band[1])
    ax2.set_xlabel("frequency [Hz]")
    ax2.set_ylabel("power [dB]")
    ax2.legend(loc="upper right", fontsize=8)
    return _finish(fig, path)


def save_distortion_figure(report, path):
    g = report.grid
    f = np.arange(len(report.mean_spectrum)) * report.fs / report.N
    fig, ax = plt.subplots(figsize=(8, 5))
    groups = [
        (g.excited, report.linear_power, "excited", "tab:blue"),
        (g.even_detect, report.even_nl_power, "even detect", "tab:orange"),
        (g.odd_detect, report.odd_nl_power, "odd detect", "tab:red"),
    ]
    for bins, power, label, color in groups:
        if len(bins):
            ax.plot(f[bins], pow_db(power), ".", ms=3, label=label, color=color)
    if report.noise_power is not None:
        ax.plot(
            f[g.all_inband()],
            pow_db(report.noise_power[g.all_inband()]),
            ",",
            color="0.6",
            label="noise",
        )
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("power [dB]")
    ax.set_title(f"distortion classes ({report.verdict})")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_bla_figure(bla, path):
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(bla.freq_hz, pow_db(np.abs(bla.G) ** 2), "-", lw=1, label="|G| BLA")
    ax.plot(bla.freq_hz, pow_db(bla.var_total), "--", lw=1, label="total var")
    if bla.var_noise is not None:
        ax.plot(bla.freq_hz, pow_db(bla.var_noise), ":", lw=1, label="noise var")
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("power [dB]")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_fit_figure(report, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    its = [row.index for row in report.iterations]
    ax.semilogy(its, [row.cost for row in report.iterations], "o-", ms=3, label="estimation")
    val = [(row.index, row.val_cost) for row in report.iterations if row.val_cost is not None]
    if val:
        ax.semilogy(*zip(*val), "s--", ms=3, label="validation")
    ax.set_xlabel("accepted iteration")
    ax.set_ylabel("cost")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_error_spectra_figure(freq, Y, err_lin, err_nl, path):
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(freq, pow_db(np.abs(Y) ** 2), ".", ms=3, label="output")
    ax.plot(freq, pow_db(np.abs(err_lin) ** 2), ".", ms=3, label="linear residual")
    ax.plot(freq, pow_db(np.abs(err_nl) ** 2), ".", ms=3, label="nonlinear residual")
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("power [dB]")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_trend_figure(y, result, path, fs=1.0):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    t = np.arange(len(y)) / fs
    ax1.plot(t, y, lw=0.4, color="0.7", label="record")
    ax1.plot(t, result.trend, lw=1.2, color="tab:red", label="trend")
    ax1.legend(fontsize=8)
    ax2.plot(t, result.detrended, lw=0.4)
    ax2.set_xlabel("time [s]")
    ax1.set_ylabel("output")
    ax2.set_ylabel("detrended")
    return _finish(fig, path)
