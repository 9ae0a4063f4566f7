"""Small shared numerics and file helpers."""

import hashlib
import json

import numpy as np


def rms(x):
    """Root-mean-square of an array."""
    x = np.asarray(x)
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def db(x, ref=1.0):
    """Power in dB of a (possibly complex) amplitude quantity: 20*log10(|x|/ref)."""
    mag = np.abs(np.asarray(x, dtype=complex))
    return 20.0 * np.log10(np.maximum(mag, np.finfo(float).tiny) / ref)


def pow_db(p):
    """Power quantity in dB: 10*log10(p), with a floor to keep zeros finite."""
    p = np.asarray(p, dtype=float)
    return 10.0 * np.log10(np.maximum(p, np.finfo(float).tiny))


def rfft_norm(x, axis=-1):
    """One-sided DFT with 1/sqrt(N) scaling along `axis`."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    return np.fft.rfft(x, axis=axis) / np.sqrt(n)


def irfft_norm(X, n, axis=-1):
    """Inverse of :func:`rfft_norm` for a length-n real signal."""
    return np.fft.irfft(X, n=n, axis=axis) * np.sqrt(n)


def spectrum_power(X, n):
    """Total signal power sum(x**2) recovered from a one-sided 1/sqrt(N) spectrum.

    Interior bins count twice; bin 0 and (for even n) the Nyquist bin once.
    """
    X = np.asarray(X)
    w = np.full(X.shape[-1], 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return np.sum(w * np.abs(X) ** 2, axis=-1)


def config_hash(obj):
    """Stable sha256 over a JSON-serializable configuration object."""
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()


def file_digest(path):
    """sha256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
