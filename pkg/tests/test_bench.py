"""Synthetic cell behaviour and record CSV import/export."""

import numpy as np
import pytest

from nlsid import bench, spectral, trend
from nlsid.errors import ConfigError, FormatError
from nlsid.signals import MultisineSpec, build_grid, realizations

SPEC = MultisineSpec(fs=50.0, N=5000, band=(1.0, 5.0), target_rms=20.0, seed=0)


@pytest.fixture(scope="module")
def sigs():
    return realizations(SPEC, 2)


def small_sig():
    spec = MultisineSpec(fs=50.0, N=500, band=(1.0, 5.0), target_rms=20.0, seed=3)
    return realizations(spec, 1)[0]


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError):
        bench.cell_preset("soc55")


def test_degenerate_cell_is_the_linear_core():
    """With every extra term switched off the cell IS its linear core."""
    sig = small_sig()
    cell = bench.SyntheticCell(ss=bench._core_ss(50.0))
    rec = bench.simulate_cell(cell, sig, periods=3)
    g, _ = cell.ss.simulate(np.tile(sig.samples, 3))
    assert np.array_equal(rec.y[0].reshape(-1), g)
    assert np.array_equal(rec.u[0].reshape(-1), np.tile(sig.samples, 3))


def test_polynomial_map_applied_exactly():
    sig = small_sig()
    core = bench._core_ss(50.0)
    cell = bench.SyntheticCell(ss=core, nl_even=0.08, nl_odd=0.025)
    rec = bench.simulate_cell(cell, sig, periods=2)
    g, _ = core.simulate(np.tile(sig.samples, 2))
    want = g + 0.08 * g**2 + 0.025 * g**3
    assert np.array_equal(rec.y[0].reshape(-1), want)


def test_noise_deterministic_in_seed():
    sig = small_sig()
    cell = bench.cell_preset("soc10")
    a = bench.simulate_cell(cell, sig, periods=2, seed=5)
    b = bench.simulate_cell(cell, sig, periods=2, seed=5)
    c = bench.simulate_cell(cell, sig, periods=2, seed=6)
    assert np.array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)


def test_simulate_cell_argument_checks():
    sig = small_sig()
    cell = bench.cell_preset("soc90")
    with pytest.raises(ConfigError):
        bench.simulate_cell(cell, sig, periods=0)
    other = realizations(SPEC, 1)[0]  # different N
    with pytest.raises(ConfigError):
        bench.simulate_cell(cell, [sig, other], periods=2)


def _analyze(cell, sigs, seed):
    # same chain the report pipeline runs: skip one period, detrend, classify
    rec = bench.simulate_cell(cell, list(sigs), periods=4, seed=seed)
    rec = rec.discard_periods(1)
    rec, _ = trend.detrend_record(rec, lam_frac=0.1, tol=1e-8)
    sp = spectral.to_spectra(rec, build_grid(SPEC))
    return spectral.distortion_analysis(sp, margin_db=6.0)


def test_soc90_reads_linear(sigs):
    rep = _analyze(bench.cell_preset("soc90"), sigs, seed=11)
    assert rep.verdict == "linear"
    assert not rep.even_significant and not rep.odd_significant
    noise = rep.band_level_db("noise")
    assert rep.band_level_db("even") - noise < 6.0
    assert rep.band_level_db("odd") - noise < 6.0


def test_soc10_reads_even_dominant(sigs):
    rep = _analyze(bench.cell_preset("soc10"), sigs, seed=11)
    assert rep.verdict == "even+odd, even dominant"
    assert rep.even_significant and rep.odd_significant
    noise = rep.band_level_db("noise")
    # probed at +49.0 / +41.3 dB over the noise floor
    assert rep.band_level_db("even") - noise > 30.0
    assert rep.band_level_db("odd") - noise > 20.0


def test_detrend_tracks_the_drift_ramp(sigs):
    cell = bench.cell_preset("soc90")
    rec = bench.simulate_cell(cell, list(sigs), periods=4, seed=11).discard_periods(1)
    out, trends = trend.detrend_record(rec, lam_frac=0.1, tol=1e-8)
    n = trends.shape[1]
    for r in range(2):
        slope = np.polyfit(np.arange(n), trends[r], 1)[0]
        assert abs(slope - cell.drift_rate) < 0.35 * cell.drift_rate

    def spread(r):
        return float(np.sqrt(np.mean((r.y[:, -1] - r.y[:, 0]) ** 2)))

    assert spread(out) < spread(rec) * 10 ** (-10.0 / 20.0)


def test_noise_free_cell_is_periodic_in_steady_state(sigs):
    """Polynomial-after-linear keeps period-in period-out behaviour."""
    base = bench.cell_preset("soc10")
    clean = bench.SyntheticCell(ss=base.ss, nl_even=0.08, nl_odd=0.025)
    rec = bench.simulate_cell(clean, sigs[0], periods=3)
    diff = rec.y[0, 2] - rec.y[0, 1]
    assert np.sqrt(np.mean(diff**2)) < 1e-12


def test_record_csv_roundtrip_bit_identical(tmp_path, sigs):
    cell = bench.cell_preset("soc10")
    rec = bench.simulate_cell(cell, list(sigs), periods=2, seed=7)
    path = tmp_path / "record.csv"
    bench.export_record_csv(rec, path, extra_meta={"label": "soc10"})
    got = bench.ingest_csv(path)
    assert np.array_equal(got.rec.u, rec.u)
    assert np.array_equal(got.rec.y, rec.y)
    assert got.rec.fs == rec.fs
    assert got.meta["label"] == "soc10"
    assert (got.meta["N"], got.meta["P"], got.meta["R"]) == (5000, 2, 2)


def _write_rows(path, rows, header=("t", "current", "voltage")):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def test_ingest_infers_one_block(tmp_path):
    path = tmp_path / "flat.csv"
    _write_rows(path, [(i / 50.0, 0.1 * i, 0.2 * i) for i in range(10)])
    got = bench.ingest_csv(path)
    assert got.rec.u.shape == (1, 1, 10)
    assert got.meta["fs"] == pytest.approx(50.0)


def test_ingest_reports_bad_value_row(tmp_path):
    path = tmp_path / "bad.csv"
    rows = [(i / 50.0, 1.0, 2.0) for i in range(6)]
    rows[3] = (rows[3][0], "oops", 2.0)
    _write_rows(path, rows)
    with pytest.raises(FormatError, match="row 5"):
        bench.ingest_csv(path)


def test_ingest_requires_named_columns(tmp_path):
    path = tmp_path / "cols.csv"
    _write_rows(path, [(0.0, 1.0, 2.0)], header=("time", "current", "voltage"))
    with pytest.raises(FormatError, match="t,current,voltage"):
        bench.ingest_csv(path)


def test_ingest_reports_skipped_sample(tmp_path):
    path = tmp_path / "gap.csv"
    rows = [(i / 50.0, 1.0, 2.0) for i in range(10) if i != 4]
    _write_rows(path, rows)
    with pytest.raises(FormatError, match="row 5"):
        bench.ingest_csv(path)


def test_ingest_checks_declared_rate(tmp_path):
    path = tmp_path / "rate.csv"
    _write_rows(path, [(i / 50.0, 1.0, 2.0) for i in range(10)])
    with pytest.raises(FormatError, match="disagrees"):
        bench.ingest_csv(path, fs=60.0)


def test_ingest_rejects_short_layout(tmp_path):
    path = tmp_path / "short.csv"
    _write_rows(path, [(i / 50.0, 1.0, 2.0) for i in range(10)])
    with pytest.raises(FormatError, match="layout needs"):
        bench.ingest_csv(path, N=8, P=2, R=1)


def test_ingest_drops_trailing_samples_with_warning(tmp_path):
    path = tmp_path / "extra.csv"
    _write_rows(path, [(i / 50.0, float(i), 2.0) for i in range(11)])
    with pytest.warns(UserWarning, match="trailing"):
        got = bench.ingest_csv(path, N=4, P=2, R=1)
    assert got.rec.u.shape == (1, 2, 4)
    assert got.rec.u[0, 1, 3] == 7.0
