import numpy as np
import pytest

from ssnanomaly.errors import InvalidConfig
from ssnanomaly.simulate import ANOMALY_TYPES, SimConfig, simulate_dataset


def test_published_defaults():
    cfg = SimConfig()
    assert (cfg.n_segments, cfg.n_sites, cfg.T) == (150, 30, 120)
    assert cfg.beta == (10.0, 1.0, 0.0, -1.0)
    assert (cfg.spatial.sigma2_d, cfg.spatial.alpha_d, cfg.spatial.sigma2_0) == (3.0, 10.0, 0.1)
    assert (cfg.phi, cfg.q_ini, cfg.lam) == (0.8, 0.05, 0.8)
    ds = simulate_dataset(cfg)
    assert ds.obs.y.shape == (30, 120)
    assert ds.obs.p == 4
    assert set(np.unique(ds.truth)) <= {"none", *ANOMALY_TYPES}
    assert 0.03 < ds.starts.mean() < 0.07


def test_no_anomalies():
    ds = simulate_dataset(SimConfig(n_sites=8, n_segments=30, T=40, q_ini=0.0, seed=3))
    assert np.array_equal(ds.obs.y, ds.y_clean)
    assert np.all(ds.truth == "none")


def test_start_frequency():
    freq = np.mean([simulate_dataset(SimConfig(seed=s)).starts.mean() for s in range(50)])
    assert abs(freq - 0.05) <= 0.005


def test_deterministic():
    a = simulate_dataset(SimConfig(n_sites=6, n_segments=20, T=30, seed=11))
    b = simulate_dataset(SimConfig(n_sites=6, n_segments=20, T=30, seed=11))
    assert np.array_equal(a.obs.y, b.obs.y)
    assert np.array_equal(a.truth, b.truth)
    assert np.array_equal(a.network.D_stream, b.network.D_stream)


def test_spike_is_single_cell_and_labels_match_offsets():
    ds = simulate_dataset(SimConfig(q_ini=0.1, seed=4))
    off = ds.obs.y - ds.y_clean
    assert np.all(off[ds.truth == "none"] == 0)
    assert np.all(off[ds.truth != "none"] != 0)
    spikes = ds.truth == "spike"
    # a spike never extends past its start cell
    assert np.all(ds.starts[spikes])


def test_drift_monotone():
    n = 0
    for seed in range(10):
        ds = simulate_dataset(SimConfig(q_ini=0.1, lam=3.0, seed=seed))
        off = ds.obs.y - ds.y_clean
        for w in ds.windows:
            np.testing.assert_allclose(off[w.site, list(w.cells)], w.offsets)
            assert np.all(ds.truth[w.site, list(w.cells)] == w.kind)
            if w.kind == "drift":
                assert np.all(np.diff(w.offsets) >= 0)
                n += 1
    assert n > 50


def test_ar1_component_autocorrelation():
    ds = simulate_dataset(SimConfig(seed=1))
    a = ds.temporal
    ac = np.array([np.corrcoef(row[:-1], row[1:])[0, 1] for row in a])
    assert np.mean((ac >= 0.6) & (ac <= 0.95)) >= 0.9


def test_high_var_windows_inflate_variance():
    beta = np.asarray(SimConfig().beta)
    ratios = []
    for seed in range(20):
        ds = simulate_dataset(SimConfig(q_ini=0.1, seed=seed))
        # remove the mean structure and the per-site spatial level
        clean = ds.y_clean - ds.obs.x @ beta
        level = clean.mean(axis=1, keepdims=True)
        obs = ds.obs.y - ds.obs.x @ beta - level
        hv = ds.truth == "high_var"
        if hv.sum() >= 3:
            ratios.append(obs[hv].var() / (clean - level).var())
    assert np.median(ratios) > 2


def test_config_round_trip():
    cfg = SimConfig(n_sites=5, n_segments=12, T=20, q_ini=0.02, seed=7)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("kw", [dict(q_ini=1.0), dict(phi=1.0), dict(T=1), dict(n_sites=20, n_segments=10),
                                dict(anomaly_types=("spike", "bogus"))])
def test_invalid(kw):
    with pytest.raises(InvalidConfig):
        SimConfig(**kw).validate()


def test_from_dict_unknown_key():
    with pytest.raises(InvalidConfig):
        SimConfig.from_dict({"sites": 3})
