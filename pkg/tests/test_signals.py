"""Multisine design: grids, synthesis, realizations, exports."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsid import signals
from nlsid.errors import ConfigError
from nlsid.util import rms

# the protocol-shaped default used throughout: 0.01 Hz resolution, 1-5 Hz band
SPEC = signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), seed=0)


def test_inband_odd_bins_are_101_to_499():
    odd, even = signals.inband_bins(SPEC)
    assert odd[0] == 101 and odd[-1] == 499
    assert np.array_equal(odd, np.arange(101, 500, 2))
    # even class excludes DC by construction (band starts above 0)
    assert even[0] == 100 and even[-1] == 500
    assert np.all(even % 2 == 0)


def test_full_odd_grid_excites_every_inband_odd_bin():
    spec = signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), grid_kind="full-odd")
    grid = signals.build_grid(spec)
    assert np.array_equal(grid.excited, np.arange(101, 500, 2))
    assert len(grid.odd_detect) == 0


def test_no_omission_leaves_odd_detect_empty():
    spec = signals.MultisineSpec(
        fs=50.0, N=5000, band=(1.0, 5.0), group_size=1, omit_per_group=0
    )
    grid = signals.build_grid(spec)
    assert len(grid.odd_detect) == 0
    assert len(grid.excited) == 200


def test_default_grid_counts():
    # 200 in-band odd bins in groups of 4, one omitted per group
    grid = signals.build_grid(SPEC)
    assert len(grid.excited) == 150
    assert len(grid.odd_detect) == 50


def test_grid_partition_invariants():
    grid = signals.build_grid(SPEC)
    odd, even = signals.inband_bins(SPEC)
    assert np.array_equal(np.sort(np.concatenate([grid.excited, grid.odd_detect])), odd)
    assert len(np.intersect1d(grid.excited, grid.odd_detect)) == 0
    assert np.all(grid.excited % 2 == 1)
    assert np.array_equal(grid.even_detect, even)


@settings(max_examples=40, deadline=None)
@given(
    group_size=st.integers(min_value=1, max_value=8),
    omit=st.integers(min_value=0, max_value=7),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_grid_partition_holds_for_any_grouping(group_size, omit, seed):
    if omit >= group_size:
        omit = group_size - 1
    spec = signals.MultisineSpec(
        fs=50.0, N=1000, band=(1.0, 5.0), group_size=group_size,
        omit_per_group=omit, seed=seed,
    )
    grid = signals.build_grid(spec)
    odd, _ = signals.inband_bins(spec)
    both = np.concatenate([grid.excited, grid.odd_detect])
    assert np.array_equal(np.sort(both), odd)
    assert len(both) == len(np.unique(both))
    assert np.all(grid.excited % 2 == 1)


def test_empty_band_is_a_config_error():
    spec = signals.MultisineSpec(fs=50.0, N=100, band=(0.9, 0.99))
    with pytest.raises(ConfigError):
        signals.build_grid(spec)


def test_spec_validation():
    with pytest.raises(ConfigError):
        signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 30.0))  # above Nyquist
    with pytest.raises(ConfigError):
        signals.MultisineSpec(fs=50.0, N=5000, band=(5.0, 1.0))
    with pytest.raises(ConfigError):
        signals.MultisineSpec(fs=50.0, N=5000, grid_kind="uniform")
    with pytest.raises(ConfigError):
        signals.MultisineSpec(fs=50.0, N=5000, group_size=2, omit_per_group=2)


def test_synthesis_is_the_cosine_sum():
    """samples(t) must equal sum_k A cos(2 pi k t / N + phi_k) exactly."""
    spec = signals.MultisineSpec(fs=50.0, N=500, band=(1.0, 5.0), seed=3)
    sig = signals.synthesize(spec)
    t = np.arange(spec.N)
    ref = np.zeros(spec.N)
    for k, phi in zip(sig.grid.excited, sig.phases):
        ref += np.cos(2 * np.pi * k * t / spec.N + phi)
    assert np.max(np.abs(sig.samples - ref)) < 1e-9


def test_single_tone_identity():
    # one excited line at k=1, amplitude 1: a pure cosine of that phase
    spec = signals.MultisineSpec(fs=50.0, N=200, band=(0.2, 0.3), group_size=1,
                                 omit_per_group=0)
    sig = signals.synthesize(spec)
    assert list(sig.grid.excited) == [1]
    t = np.arange(spec.N)
    ref = np.cos(2 * np.pi * t / spec.N + sig.phases[0])
    assert np.max(np.abs(sig.samples - ref)) < 1e-12


def test_target_rms_reached():
    spec = signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0),
                                 grid_kind="full-odd", target_rms=20.0)
    sig = signals.synthesize(spec)
    assert abs(sig.realized_rms - 20.0) / 20.0 < 1e-9
    assert abs(rms(sig.samples) - 20.0) / 20.0 < 1e-9


def test_zero_mean():
    sig = signals.synthesize(SPEC)
    assert abs(np.mean(sig.samples)) < 1e-12 * max(1.0, np.max(np.abs(sig.samples)))


def test_spectrum_clean_on_detection_lines():
    """Synthesis leaves even bins and omitted odd bins 200 dB down."""
    spec = signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), target_rms=20.0,
                                 seed=1)
    sig = signals.synthesize(spec)
    X = np.fft.rfft(sig.samples) / np.sqrt(spec.N)
    p = np.abs(X) ** 2
    excited_level = np.min(p[sig.grid.excited])
    quiet = np.concatenate([sig.grid.even_detect, sig.grid.odd_detect, [0]])
    assert np.max(p[quiet]) < excited_level * 10 ** (-200 / 10)


def test_amplitude_profile_hook():
    spec = signals.MultisineSpec(
        fs=50.0, N=2000, band=(1.0, 5.0),
        amplitude_profile=lambda k: 2.0 if k < 120 else 1.0,
    )
    sig = signals.synthesize(spec)
    X = np.abs(np.fft.rfft(sig.samples)) / (spec.N / 2)
    low = sig.grid.excited[sig.grid.excited < 120]
    high = sig.grid.excited[sig.grid.excited >= 120]
    assert np.allclose(X[low], 2.0, rtol=1e-9)
    assert np.allclose(X[high], 1.0, rtol=1e-9)


def test_periodicity_under_tiling():
    # P tiled periods concentrate energy at P * excited in the long DFT
    sig = signals.synthesize(signals.MultisineSpec(fs=50.0, N=1000, band=(1.0, 5.0)))
    P = 4
    long = np.tile(sig.samples, P)
    X = np.abs(np.fft.rfft(long)) ** 2
    on = X[sig.grid.excited * P]
    mask = np.ones(len(X), bool)
    mask[sig.grid.excited * P] = False
    assert np.max(X[mask]) < np.min(on) * 1e-20


def test_realizations_share_grid_but_not_phases():
    sigs = signals.realizations(SPEC, 2)
    assert np.array_equal(sigs[0].grid.excited, sigs[1].grid.excited)
    assert not np.allclose(sigs[0].phases, sigs[1].phases)
    assert not np.allclose(sigs[0].samples, sigs[1].samples)


def test_single_realization_equals_synthesize():
    sigs = signals.realizations(SPEC, 1)
    direct = signals.synthesize(SPEC, realization=0)
    assert np.array_equal(sigs[0].samples, direct.samples)


def test_phase_draws_uncorrelated_across_realizations():
    sigs = signals.realizations(SPEC, 10)
    centered = np.stack([s.phases - np.pi for s in sigs])
    corr = np.corrcoef(centered)
    off = corr[~np.eye(10, dtype=bool)]
    # 150 iid uniform phases per draw: sample correlations are ~1/sqrt(150)
    assert np.max(np.abs(off)) < 0.3


def test_riemann_flat_subband_power():
    """Disjoint in-band windows carry the same average line power."""
    spec = signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), target_rms=20.0)
    sig = signals.synthesize(spec)
    p = np.abs(np.fft.rfft(sig.samples) / np.sqrt(spec.N)) ** 2
    odd, _ = signals.inband_bins(spec)
    lo = odd[odd * spec.f0 < 3.0]
    hi = odd[odd * spec.f0 >= 3.0]
    mean_lo = np.mean(p[lo])
    mean_hi = np.mean(p[hi])
    assert abs(mean_lo - mean_hi) / mean_hi < 0.01


def test_determinism_bit_identical():
    a = signals.synthesize(signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), seed=7))
    b = signals.synthesize(signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), seed=7))
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.phases, b.phases)
    assert np.array_equal(a.grid.excited, b.grid.excited)
    c = signals.synthesize(signals.MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), seed=8))
    assert not np.array_equal(a.samples, c.samples)


def test_f0_property():
    assert SPEC.f0 == pytest.approx(0.01)


def test_signal_csv_roundtrip(tmp_path):
    sig = signals.synthesize(signals.MultisineSpec(fs=50.0, N=300, band=(1.0, 5.0)))
    path = tmp_path / "sig.csv"
    signals.export_signal_csv(sig, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sample_index", "value"]
    values = np.array([float(r[1]) for r in rows[1:]])
    assert np.array_equal(values, sig.samples)  # repr round-trips exactly


def test_grid_json_roundtrip(tmp_path):
    sig = signals.synthesize(SPEC)
    path = tmp_path / "grid.json"
    signals.export_grid_json(sig, path)
    grid = signals.load_grid_json(path)
    assert np.array_equal(grid.excited, sig.grid.excited)
    assert np.array_equal(grid.odd_detect, sig.grid.odd_detect)
    assert np.array_equal(grid.even_detect, sig.grid.even_detect)
