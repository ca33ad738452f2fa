import numpy as np
import pytest

from ssnanomaly import io
from ssnanomaly.detectors import AnomalyLabels
from ssnanomaly.errors import DataError
from ssnanomaly.impale import EventLabels
from ssnanomaly.model import ObservationSet
from ssnanomaly.network import generate_random_network


def test_network_round_trip(tmp_path):
    net = generate_random_network(20, 6, seed=2)
    io.write_network(net, tmp_path / "n.csv", tmp_path / "s.csv")
    back = io.read_network(tmp_path / "n.csv", tmp_path / "s.csv")
    assert back.segments == net.segments
    assert back.sites == net.sites
    for attr in ("D_stream", "D_a", "D_b", "W", "D_euclid"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(net, attr))


def test_observations_round_trip_exact(tmp_path, rng):
    x = np.ones((3, 5, 2))
    x[:, :, 1] = rng.normal(size=(3, 5))
    y = rng.normal(size=(3, 5)) * 1e3
    y[1, 2] = np.nan
    obs = ObservationSet(y, x, ("a", "b", "c"), np.arange(10, 15))
    io.write_observations(obs, tmp_path / "o.csv", ["intercept", "x1"])
    back, names = io.read_observations(tmp_path / "o.csv")
    assert names == ["intercept", "x1"]
    assert back.site_order == obs.site_order
    np.testing.assert_array_equal(back.time_index, obs.time_index)
    np.testing.assert_array_equal(back.y, obs.y)
    np.testing.assert_array_equal(back.x, obs.x)


def test_observations_intercept_added_and_gaps(tmp_path):
    (tmp_path / "o.csv").write_text(
        "site_id,time,value,flow\n"
        "a,2020-01-01,1.5,3\n"
        "a,2020-01-03,2.5,4\n"
        "b,2020-01-02,,5\n"
    )
    obs, names = io.read_observations(tmp_path / "o.csv", site_order=["b", "a"])
    assert names == ["intercept", "flow"]
    assert obs.time_index.dtype.kind == "M"
    assert obs.site_order == ("b", "a")
    # absent rows are missing responses; their covariates come from the nearest row
    np.testing.assert_array_equal(np.isnan(obs.y), [[True, True, True], [False, True, False]])
    np.testing.assert_array_equal(obs.x[1, :, 1], [3, 3, 4])
    np.testing.assert_array_equal(obs.x[:, :, 0], 1.0)


@pytest.mark.parametrize("body, match", [
    ("site_id,time\na,1\n", "missing columns"),
    ("site_id,time,value\n", "no observations"),
    ("site_id,time,value\na,1,2\na,1,3\n", "duplicate"),
    ("site_id,time,value\na,1,abc\n", "bad number"),
    ("site_id,time,value\na,yesterday,1\n", "numeric or ISO"),
])
def test_observation_errors(tmp_path, body, match):
    (tmp_path / "o.csv").write_text(body)
    with pytest.raises(DataError, match=match):
        io.read_observations(tmp_path / "o.csv")


def test_unknown_site_and_missing_file(tmp_path):
    (tmp_path / "o.csv").write_text("site_id,time,value\nz,1,2\n")
    with pytest.raises(DataError, match="not in the network"):
        io.read_observations(tmp_path / "o.csv", site_order=["a"])
    with pytest.raises(DataError, match="no such file"):
        io.read_observations(tmp_path / "nope.csv")


def test_truth_and_labels_round_trip(tmp_path, rng):
    truth = np.array([["none", "spike"], ["drift", "none"]])
    io.write_truth(truth, ["a", "b"], [0, 1], tmp_path / "t.csv")
    back, sites, times = io.read_truth(tmp_path / "t.csv")
    np.testing.assert_array_equal(back, truth)
    assert sites == ["a", "b"]

    lab = AnomalyLabels(np.array([[1, 0], [-1, 0]], dtype=np.int8),
                        np.array([[0.97, 0.1], [np.nan, rng.random()]]), "hmm")
    io.write_labels(lab, ["a", "b"], [0, 1], tmp_path / "l.csv")
    got, _, _ = io.read_labels(tmp_path / "l.csv")
    np.testing.assert_array_equal(got.flag, lab.flag)
    np.testing.assert_array_equal(got.score, lab.score)
    assert got.method == "hmm"


def test_labels_outside_grid_and_bad_flag(tmp_path):
    (tmp_path / "l.csv").write_text("site_id,time,flag,score,method\na,5,1,0.9,ppd\n")
    with pytest.raises(DataError, match="outside the grid"):
        io.read_labels(tmp_path / "l.csv", site_order=["a"], times=np.array([0, 1]))
    (tmp_path / "l.csv").write_text("site_id,time,flag,score,method\na,0,2,0.9,ppd\n")
    with pytest.raises(DataError, match="flag"):
        io.read_labels(tmp_path / "l.csv")


def test_events_round_trip(tmp_path):
    ev = EventLabels(np.array(["ambient", "event", "event"]), np.array([0.01, 0.7, 0.99]))
    io.write_events(ev, np.arange(3), tmp_path / "e.csv")
    back, times = io.read_events(tmp_path / "e.csv")
    np.testing.assert_array_equal(back.state, ev.state)
    np.testing.assert_array_equal(back.probability, ev.probability)
    np.testing.assert_array_equal(times, [0, 1, 2])
