"""Rational fitting, order selection, balanced realization, ML refinement."""

import json

import numpy as np
import pytest
import scipy.signal

from nlsid.errors import FormatError, NumericalError
from nlsid.linmodel import (
    RationalModel,
    StateSpaceModel,
    balanced_realization,
    export_model_json,
    fit_rational,
    gramians,
    load_model_json,
    mdl_select,
    ml_refine,
    _fit_cost,
)
from nlsid.lpm import BlaEstimate

BINS = np.arange(41, 820, 2)
B0 = [0.2, 0.1, 0.05]
A0 = [1.0, -1.2, 0.52]


def make_bla(b, a, bins=BINS, N=4096, fs=1.0, var=1e-6, noise_seed=None):
    w = 2 * np.pi * np.asarray(bins) / N
    G = scipy.signal.freqz(b, a, worN=w)[1]
    var = np.full(len(bins), var)
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        G = G + np.sqrt(var / 2) * (
            rng.standard_normal(len(bins)) + 1j * rng.standard_normal(len(bins))
        )
    return BlaEstimate(
        bins=np.asarray(bins),
        freq_hz=np.asarray(bins) * fs / N,
        G=G,
        var_total=var,
        var_noise=None,
        T=np.zeros(len(bins)),
        fs=fs,
        N=N,
        var_total_source="synthetic",
    )


def test_rational_model_requires_normalized_denominator():
    with pytest.raises(FormatError):
        RationalModel(b=(0.5,), a=(2.0, 1.0))
    with pytest.raises(FormatError):
        RationalModel(b=(1.0,), a=(0.0, 1.0))
    m = RationalModel(b=(0.5,), a=(1.0, -0.3))
    assert m.n_b == 0 and m.n_a == 1


def test_noiseless_fit_recovers_coefficients():
    m = fit_rational(make_bla(B0, A0), 2, 2)
    assert np.max(np.abs(np.asarray(m.b) - B0)) < 1e-12
    assert np.max(np.abs(np.asarray(m.a) - A0)) < 1e-12


def test_fit_cost_is_chi_square_scale():
    bla = make_bla(B0, A0, var=1e-4, noise_seed=7)
    m = fit_rational(bla, 2, 2)
    V = _fit_cost(m, bla)
    F = len(bla.bins)
    assert 0.75 * F < V < 1.25 * F
    # fitted poles never leave the closed unit disk
    assert np.max(np.abs(np.roots(m.a))) <= 1.0 + 1e-9


def test_mdl_picks_true_order():
    bla = make_bla(B0, A0, var=1e-4, noise_seed=7)
    assert mdl_select(bla, max_order=4) == (2, 2)


def test_mdl_static_gain():
    bla = make_bla([2.0], [1.0], var=1e-4, noise_seed=8)
    assert mdl_select(bla, max_order=3) == (0, 0)


def test_mdl_full_table():
    bla = make_bla(B0, A0, var=1e-4, noise_seed=7)
    sel, table = mdl_select(bla, max_order=2, full=True)
    assert sel == (2, 2)
    assert len(table) == 9
    scores = {(r[0], r[1]): r[3] for r in table}
    assert min(scores, key=scores.get) == (2, 2)


class TestBalancedRealization:
    def test_gramians_balanced(self):
        ss = balanced_realization(RationalModel(B0, A0))
        Wc, Wo = gramians(ss)
        assert np.max(np.abs(Wc - Wo)) < 1e-10
        assert np.max(np.abs(Wc - np.diag(np.diag(Wc)))) < 1e-10
        # Hankel singular values come out sorted
        sv = np.diag(Wc)
        assert np.all(np.diff(sv) <= 1e-12)

    def test_frf_matches_rational(self):
        m = RationalModel(B0, A0)
        ss = balanced_realization(m)
        k = np.arange(11, 400, 3)
        G_ss = ss.frf_bins(k, 4096)
        G_m = m.eval_bins(k, 4096)
        assert np.max(np.abs(G_ss - G_m)) < 1e-12

    def test_unstable_mode_discarded(self):
        # poles at 0.5 and 1.05: one survives
        a = np.poly([0.5, 1.05])
        with pytest.warns(UserWarning, match="unstable"):
            ss = balanced_realization(RationalModel([1.0, 0.2], a))
        assert ss.A.shape == (1, 1)
        assert np.abs(ss.A[0, 0]) < 1.0

    def test_all_unstable_raises(self):
        with pytest.raises(NumericalError):
            balanced_realization(RationalModel([1.0], [1.0, -1.5]))

    def test_simulate_matches_lfilter(self):
        ss = balanced_realization(RationalModel(B0, A0))
        rng = np.random.default_rng(0)
        u = rng.standard_normal(500)
        y, _ = ss.simulate(u)
        y_ref = scipy.signal.lfilter(B0, A0, u)
        assert np.max(np.abs(y - y_ref)) < 1e-10

    @pytest.mark.filterwarnings("ignore::scipy.signal.BadCoefficients")
    def test_pure_delay(self):
        m = RationalModel([0.0, 0.0, 1.0], [1.0])
        ss = balanced_realization(m)
        y, _ = ss.simulate(np.array([1.0, 0.0, 0.0, 0.0, 0.0]))
        assert np.argmax(np.abs(y)) == 2
        assert abs(y[2] - 1.0) < 1e-12


class TestMlRefine:
    def test_at_truth_stays_at_machine_floor(self):
        bla = make_bla(B0, A0)
        ss = balanced_realization(RationalModel(B0, A0))
        refined, rep = ml_refine(ss, bla)
        assert rep.cost <= rep.cost0
        assert rep.cost < 1e-16

    def test_perturbed_start_recovers(self):
        bla = make_bla(B0, A0)
        ss = balanced_realization(RationalModel(B0, A0))
        pert = StateSpaceModel(ss.A * 1.05, ss.B, ss.C, ss.D, ss.fs)
        refined, rep = ml_refine(pert, bla)
        assert rep.cost0 / max(rep.cost, 1e-300) > 1e6
        G = refined.frf_bins(bla.bins, bla.N)
        assert np.max(np.abs(G - bla.G)) < 1e-8

    def test_refinement_is_basis_invariant(self):
        """Two similarity-transformed starts land on the same cost."""
        bla = make_bla(B0, A0, var=1e-4, noise_seed=11)
        ss = balanced_realization(fit_rational(bla, 2, 2))
        T = np.array([[1.0, 0.3], [-0.2, 0.9]])
        Ti = np.linalg.inv(T)
        alt = StateSpaceModel(Ti @ ss.A @ T, Ti @ ss.B, ss.C @ T, ss.D, ss.fs)
        _, rep_a = ml_refine(ss, bla)
        _, rep_b = ml_refine(alt, bla)
        assert rep_b.cost0 == pytest.approx(rep_a.cost0, rel=1e-8)
        assert rep_b.cost == pytest.approx(rep_a.cost, rel=1e-4)


def test_fourth_order_roundtrip():
    b, a = scipy.signal.butter(4, 0.3)
    bla = make_bla(b, a)
    m = fit_rational(bla, 4, 4)
    ss = balanced_realization(m)
    G = ss.frf_bins(bla.bins, bla.N)
    assert np.max(np.abs(G - bla.G)) < 1e-9


def test_model_json_roundtrip(tmp_path):
    ss = balanced_realization(RationalModel(B0, A0), fs=50.0)
    path = tmp_path / "model.json"
    export_model_json(ss, path)
    data = json.loads(path.read_text())
    assert data["kind"] == "state_space"
    back = load_model_json(path)
    assert back.fs == ss.fs
    assert np.allclose(back.A, ss.A, atol=1e-14)
    k = np.arange(5, 50)
    assert np.allclose(back.frf_bins(k, 1024), ss.frf_bins(k, 1024), atol=1e-12)
