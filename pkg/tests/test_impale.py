import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from helpers import two_regime_levels
from oracles import dtw_bruteforce

from ssnanomaly import hmm
from ssnanomaly.errors import DataError, EmptySeries, InsufficientData
from ssnanomaly.impale import (
    cluster_sites,
    detect_events_mhmm,
    dtw_distance,
    dtw_matrix,
    impute_multivariate,
)
from ssnanomaly.simulate import SimConfig, simulate_dataset


class TestImpute:
    def test_no_missing_unchanged(self, rng):
        Y = rng.normal(size=(3, 20))
        assert np.array_equal(impute_multivariate(Y), Y)

    def test_perfectly_correlated_sites(self, rng):
        a = rng.normal(5, 2, 50)
        Y = np.vstack([a, 3 * a + 1])
        Y[1, 17] = np.nan
        out = impute_multivariate(Y, blend=1.0)
        # standardized value of site 0 mapped back onto site 1's scale
        assert out[1, 17] == pytest.approx(3 * a[17] + 1, abs=1e-6)

    def test_blend_zero_is_spline_trend(self, rng):
        Y = rng.normal(size=(2, 30))
        Y[0, 10] = np.nan
        out = impute_multivariate(Y, blend=0.0)
        from scipy.interpolate import make_smoothing_spline
        t = np.arange(30.0)
        ok = ~np.isnan(Y[0])
        assert out[0, 10] == pytest.approx(make_smoothing_spline(t[ok], Y[0, ok])(10.0))

    def test_idempotent(self, rng):
        Y = rng.normal(size=(4, 40))
        Y[rng.random(Y.shape) < 0.1] = np.nan
        once = impute_multivariate(Y)
        assert np.array_equal(impute_multivariate(once), once)
        assert not np.isnan(once).any()
        obs = ~np.isnan(Y)
        assert np.array_equal(once[obs], Y[obs])

    def test_all_sites_missing_at_once(self, rng):
        Y = rng.normal(size=(3, 10))
        Y[:, 4] = np.nan
        out = impute_multivariate(Y)
        np.testing.assert_allclose(out[:, 4], 0.5 * (Y[:, 3] + Y[:, 5]))

    def test_insufficient(self):
        Y = np.array([[1.0, np.nan, np.nan], [1.0, 2.0, 3.0]])
        with pytest.raises(InsufficientData):
            impute_multivariate(Y)

    def test_beats_linear_interpolation(self):
        wins = 0
        for seed in range(20):
            ds = simulate_dataset(SimConfig(n_sites=10, n_segments=40, T=120, q_ini=0.0, seed=seed))
            Y = np.array(ds.obs.y)
            rng = np.random.default_rng(seed)
            mask = rng.random(Y.shape) < 0.1
            mask[:, [0, -1]] = False
            Ym = np.where(mask, np.nan, Y)
            out = impute_multivariate(Ym)
            t = np.arange(Y.shape[1])
            lin = np.vstack([np.interp(t, t[~m], row[~m]) for row, m in zip(Y, mask)])
            rmse = np.sqrt(np.mean((out[mask] - Y[mask]) ** 2))
            rmse_lin = np.sqrt(np.mean((lin[mask] - Y[mask]) ** 2))
            wins += rmse < rmse_lin
        assert wins >= 16


class TestDTW:
    def test_identity(self):
        a = np.array([1.0, 3.0, 2.0])
        assert dtw_distance(a, a) == 0.0

    def test_repeat_absorbed(self):
        assert dtw_distance([1, 2, 3], [1, 2, 2, 3]) == 0.0

    def test_hand_value(self):
        # the cheapest alignment matches 0 with 0 and both 2s with 1: cost 2
        assert dtw_distance([0, 2, 2], [0, 1]) == 2.0

    def test_empty(self):
        with pytest.raises(EmptySeries):
            dtw_distance([], [1.0])

    def test_window(self):
        a = np.array([0, 5.0, 0, 0, 0])
        b = np.array([0, 0, 0, 5.0, 0])
        assert dtw_distance(a, b, window=0) == np.abs(a - b).sum()
        assert dtw_distance(a, b, window=1) > 0
        assert dtw_distance(a, b) == 0.0
        # a band narrower than the length gap is widened to stay feasible
        assert np.isfinite(dtw_distance([1, 2, 3, 4, 5], [1, 5], window=0))

    def test_matrix_symmetric(self, rng):
        D = dtw_matrix(rng.normal(size=(4, 12)))
        assert np.array_equal(D, D.T)
        assert np.all(np.diag(D) == 0)


_series = st.lists(st.integers(-5, 5), min_size=1, max_size=6)


@given(_series, _series)
def test_dtw_matches_bruteforce(a, b):
    a, b = np.array(a, float), np.array(b, float)
    assert dtw_distance(a, b) == dtw_bruteforce(a, b)
    assert dtw_distance(a, b) == dtw_distance(b, a)
    if np.array_equal(a, b):
        assert dtw_distance(a, b) == 0


class TestCluster:
    def test_k_equals_S(self, rng):
        cl = cluster_sites(rng.normal(size=(4, 30)), k=4)
        assert sorted(cl.labels) == [0, 1, 2, 3]

    def test_k_one(self, rng):
        cl = cluster_sites(rng.normal(size=(4, 30)), k=1)
        assert np.all(cl.labels == 0)

    def test_sinusoids_vs_noise(self, rng):
        t = np.linspace(0, 6 * np.pi, 120)
        waves = [np.sin(t + ph) + 0.05 * rng.normal(size=t.size) for ph in (0.0, 0.3, 0.6, 0.9)]
        noise = [rng.normal(size=t.size) for _ in range(3)]
        cl = cluster_sites(np.vstack(waves + noise), k=2, window=20)
        np.testing.assert_array_equal(cl.labels, [0, 0, 0, 0, 1, 1, 1])
        np.testing.assert_array_equal(cl.members(1), [4, 5, 6])

    def test_bad_input(self, rng):
        with pytest.raises(DataError):
            cluster_sites(rng.normal(size=(3, 10)), k=4)
        Y = rng.normal(size=(3, 10))
        Y[0, 0] = np.nan
        with pytest.raises(DataError):
            cluster_sites(Y, k=2)


class TestEvents:
    def test_two_regime(self):
        Y, z = two_regime_levels(0)
        ev, model = detect_events_mhmm(Y)
        assert np.mean(ev.is_event == z) >= 0.9
        assert model is not None

    def test_constant(self):
        ev, model = detect_events_mhmm(np.ones((3, 40)))
        assert np.all(ev.state == "ambient")
        assert model is None

    def test_probabilities(self):
        Y, _ = two_regime_levels(1)
        ev, model = detect_events_mhmm(Y)
        g = hmm.posteriors(model, Y.T)[0]
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((ev.probability >= 0) & (ev.probability <= 1))
        assert np.array_equal(ev.is_event, ev.probability >= 0.5)

    def test_rejects_missing(self):
        Y = np.ones((2, 5))
        Y[0, 0] = np.nan
        with pytest.raises(DataError):
            detect_events_mhmm(Y)
