import pytest

from cubespawn.topology import (DEFAULT_ON_CHIP_FACTOR, Hypercube, LinkClass,
                                default_chip_dims)


def test_adjacent_single_bit():
    h = Hypercube(6)
    assert h.adjacent(0b000000, 0b000001)
    assert h.adjacent(0, 32)
    assert not h.adjacent(5, 6)  # 5 ^ 6 == 3, two bits
    assert not h.adjacent(7, 7)


def test_label_range_checked():
    h = Hypercube(3)
    with pytest.raises(ValueError):
        h.adjacent(0, 8)
    with pytest.raises(ValueError):
        h.hop_distance(-1, 0)


def test_counts_d6():
    h = Hypercube(6)
    assert h.node_count == 64
    assert h.edge_count == 192
    # every node has degree d; degrees sum to 2|E|
    degrees = [sum(h.adjacent(u, v) for v in h.nodes() if v != u) for u in h.nodes()]
    assert all(deg == 6 for deg in degrees)
    assert sum(degrees) == 2 * h.edge_count


def test_degenerate_cubes():
    assert Hypercube(0).node_count == 1
    assert Hypercube(0).edge_count == 0
    assert Hypercube(1).edge_count == 1


def test_adjacency_symmetric_irreflexive():
    h = Hypercube(4)
    for u in h.nodes():
        assert not h.adjacent(u, u)
        for v in h.nodes():
            if u != v:
                assert h.adjacent(u, v) == h.adjacent(v, u)
                assert h.adjacent(u, v) == (h.hop_distance(u, v) == 1)


def test_hop_distance():
    h = Hypercube(6)
    assert h.hop_distance(0, 0) == 0
    assert h.hop_distance(0, 63) == 6
    assert h.hop_distance(8, 12) == 1


def test_link_class_mapping():
    h = Hypercube(6, chip_dims={4, 5})
    assert h.link_class(0, 32) is LinkClass.ON_CHIP
    assert h.link_class(0, 16) is LinkClass.ON_CHIP
    assert h.link_class(0, 1) is LinkClass.OFF_CHIP
    assert h.link_factor(0, 32) == DEFAULT_ON_CHIP_FACTOR
    assert h.link_factor(0, 1) == 1.0


def test_link_class_empty_mapping_all_off_chip():
    h = Hypercube(4)
    for u in h.nodes():
        for v in h.nodes():
            if h.adjacent(u, v):
                assert h.link_class(u, v) is LinkClass.OFF_CHIP


def test_link_class_requires_adjacency():
    h = Hypercube(4)
    with pytest.raises(ValueError):
        h.link_class(0, 3)


def test_chip_dims_validation():
    with pytest.raises(ValueError):
        Hypercube(3, chip_dims={3})
    with pytest.raises(ValueError):
        Hypercube(3, chip_dims={-1})
    with pytest.raises(ValueError):
        Hypercube(-1)
    with pytest.raises(ValueError):
        Hypercube(2, on_chip_factor=0)


def test_default_chip_dims():
    assert default_chip_dims(6) == {4, 5}
    assert default_chip_dims(1) == {0}
    assert default_chip_dims(0) == frozenset()


def test_route_and_path_factor():
    h = Hypercube(6, chip_dims={4, 5})
    assert h.route(5, 5) == [5]
    assert h.path_factor(5, 5) == 0.0
    assert h.path_factor(0, 1) == 1.0
    assert h.path_factor(0, 32) == DEFAULT_ON_CHIP_FACTOR
    # 0 -> 63 crosses each dimension once: four off-chip, two on-chip hops
    path = h.route(0, 63)
    assert len(path) == 7
    assert all(h.adjacent(u, v) for u, v in zip(path, path[1:]))
    assert h.path_factor(0, 63) == pytest.approx(4.0 + 2 * DEFAULT_ON_CHIP_FACTOR)
