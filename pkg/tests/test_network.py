import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssnanomaly.errors import (
    CycleDetected,
    DanglingDownstreamId,
    DataError,
    MultipleOutlets,
    SiteOffsetOutOfRange,
    TooManySites,
)
from ssnanomaly.network import Segment, SitePlacement, build_network, generate_random_network


class TestBuildNetwork:
    def test_two_segment_line(self, line_net):
        np.testing.assert_allclose(line_net.D_stream, [[0, 1], [1, 0]])
        assert line_net.connected.all()
        assert line_net.W[0, 1] == pytest.approx(np.sqrt(0.5), abs=1e-12)
        assert line_net.W[0, 1] == pytest.approx(0.7071, abs=1e-4)

    def test_single_site(self):
        net = build_network([Segment("A", None, 1.0, 1.0)], [SitePlacement("a", "A", 0.3)])
        assert net.D_stream.shape == (1, 1)
        assert net.D_stream[0, 0] == 0
        assert net.connected[0, 0]
        assert net.W[0, 0] == 1.0

    def test_y_shape_headwaters_unconnected(self, y_net):
        # distances to the junction: 0.5 on L, 1.0 on R
        assert not y_net.connected[0, 1]
        assert y_net.W[0, 1] == 0.0
        assert y_net.D_a[0, 1] == pytest.approx(0.5)
        assert y_net.D_b[0, 1] == pytest.approx(1.0)
        assert y_net.D_stream[0, 1] == pytest.approx(1.5)

    def test_y_shape_connected_to_outlet(self, y_net):
        # l sits 1.5 upstream of the junction, o sits 0.25 upstream of the outlet
        assert y_net.connected[0, 2]
        assert y_net.D_stream[0, 2] == pytest.approx(0.5 + 1.0 - 0.25)
        assert y_net.W[0, 2] == pytest.approx(np.sqrt(1 / 2))

    def test_cycle(self):
        segs = [Segment("A", "B", 1, 1), Segment("B", "A", 1, 1), Segment("C", None, 1, 1)]
        with pytest.raises(CycleDetected):
            build_network(segs, [])

    def test_cycle_without_outlet(self):
        with pytest.raises(CycleDetected):
            build_network([Segment("A", "B", 1, 1), Segment("B", "A", 1, 1)], [])

    def test_multiple_outlets(self):
        with pytest.raises(MultipleOutlets):
            build_network([Segment("A", None, 1, 1), Segment("B", None, 1, 1)], [])

    def test_dangling(self):
        with pytest.raises(DanglingDownstreamId):
            build_network([Segment("A", "Z", 1, 1), Segment("B", None, 1, 1)], [])

    def test_offset_out_of_range(self):
        with pytest.raises(SiteOffsetOutOfRange):
            build_network([Segment("A", None, 1, 1)], [SitePlacement("a", "A", 1.5)])

    def test_errors_are_data_errors(self):
        assert issubclass(CycleDetected, DataError)
        assert issubclass(TooManySites, DataError)

    def test_subset_reorders(self, y_net):
        sub = y_net.subset(["o", "l"])
        assert sub.site_ids == ["o", "l"]
        assert sub.D_stream[0, 1] == pytest.approx(y_net.D_stream[2, 0])


class TestRandomNetwork:
    def test_study_scale(self):
        net = generate_random_network(150, 30, seed=1)
        assert net.n_sites == 30
        assert len(net.segments) == 150
        _check_invariants(net)

    def test_single_segment(self):
        net = generate_random_network(1, 1, seed=7)
        assert len(net.segments) == 1
        assert net.n_sites == 1

    def test_deterministic(self):
        a = generate_random_network(40, 10, seed=3)
        b = generate_random_network(40, 10, seed=3)
        assert np.array_equal(a.D_stream, b.D_stream)
        assert np.array_equal(a.D_euclid, b.D_euclid)
        assert np.array_equal(a.W, b.W)

    def test_too_many_sites(self):
        with pytest.raises(TooManySites):
            generate_random_network(5, 6)


def _check_invariants(net):
    S = net.n_sites
    D, conn = net.D_stream, net.connected
    assert np.allclose(D, D.T) and np.all(np.diag(D) == 0)
    assert np.array_equal(net.W, net.W.T)
    assert np.all((net.W > 0) == conn)
    assert np.all(net.W <= 1.0)
    un = ~conn
    np.testing.assert_allclose((net.D_a + net.D_b)[un], D[un], atol=1e-12)
    assert np.all(net.D_a[un] <= net.D_b[un] + 1e-12)
    # triangle equality on flow-connected chains
    for i in range(S):
        for j in range(S):
            for k in range(S):
                if conn[i, j] and conn[j, k] and conn[i, k]:
                    assert D[i, k] <= D[i, j] + D[j, k] + 1e-9


@given(st.integers(1, 60), st.integers(0, 10_000), st.data())
def test_random_network_invariants(n_seg, seed, data):
    n_sites = data.draw(st.integers(1, min(n_seg, 12)))
    net = generate_random_network(n_seg, n_sites, seed=seed)
    assert net.n_sites == n_sites
    _check_invariants(net)
