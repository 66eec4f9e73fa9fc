import numpy as np
import pytest

from anchorgnn.graphs import (
    DatasetFormatError,
    Graph,
    batch_graphs,
    load_dataset,
    save_dataset,
)


def toy_graph(n=3, d=2, label=0, seed=0):
    rng = np.random.default_rng(seed)
    pairs = [(i, i + 1) for i in range(n - 1)]
    return Graph.from_undirected(rng.normal(size=(n, d)), pairs, label)


class TestGraph:
    def test_both_directions_stored(self):
        g = Graph.from_undirected(np.zeros((2, 1)), [(0, 1)], label=1)
        assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 0)]

    def test_duplicate_undirected_edges_collapse(self):
        g = Graph.from_undirected(np.zeros((2, 1)), [(0, 1), (1, 0)], label=0)
        assert len(g.edges) == 2
        assert g.undirected_edges() == [(0, 1)]

    def test_edge_bounds_checked(self):
        with pytest.raises(ValueError, match="out of range"):
            Graph(np.zeros((2, 1)), np.array([[0, 2]]), label=0)

    def test_permuted_preserves_structure(self):
        g = toy_graph(n=4, seed=1)
        perm = np.array([2, 0, 3, 1])
        h = g.permuted(perm)
        assert h.num_nodes == g.num_nodes
        assert sorted(h.undirected_edges()) == sorted(
            (min(perm[a], perm[b]), max(perm[a], perm[b])) for a, b in g.undirected_edges()
        )
        np.testing.assert_array_equal(h.node_features[perm[0]], g.node_features[0])

    def test_connectivity(self):
        assert toy_graph(n=5).is_connected()
        disconnected = Graph.from_undirected(np.zeros((3, 1)), [(0, 1)], label=0)
        assert not disconnected.is_connected()


class TestBatching:
    def test_single_graph_zero_offset(self):
        g = toy_graph(n=3, seed=2)
        batch = batch_graphs([g])
        np.testing.assert_array_equal(batch.node_features, g.node_features)
        np.testing.assert_array_equal(batch.edges, g.edges)
        np.testing.assert_array_equal(batch.graph_index, [0, 0, 0])

    def test_second_graph_edges_shifted(self):
        g1 = toy_graph(n=2, seed=3)
        g2 = toy_graph(n=3, seed=4)
        batch = batch_graphs([g1, g2])
        assert batch.edges[:, 0].max() >= 2  # shifted by +2
        second = batch.edges[len(g1.edges):]
        np.testing.assert_array_equal(second, g2.edges + 2)

    def test_round_trip_bijection(self):
        graphs = [toy_graph(n=n, seed=n) for n in (2, 5, 3, 7)]
        recovered = batch_graphs(graphs).to_graphs()
        assert len(recovered) == len(graphs)
        for a, b in zip(graphs, recovered):
            np.testing.assert_array_equal(a.node_features, b.node_features)
            np.testing.assert_array_equal(a.edges, b.edges)
            assert a.label == b.label

    def test_mixed_feature_dims_rejected(self):
        with pytest.raises(ValueError, match="feature dim"):
            batch_graphs([toy_graph(d=2), toy_graph(d=3)])

    def test_gcn_edges_self_loops_and_weights(self):
        g = Graph.from_undirected(np.zeros((2, 1)), [(0, 1)], label=0)
        src, dst, w = batch_graphs([g]).gcn_edges()
        assert len(src) == 4  # two directions + two self loops
        # both nodes have deg_hat = 2, so every weight is 1/2
        np.testing.assert_allclose(w, 0.5)


class TestTextFormat:
    def test_round_trip(self, tmp_path):
        graphs = [toy_graph(n=n, d=3, label=n % 2, seed=n) for n in (2, 4, 6)]
        path = str(tmp_path / "data.txt")
        save_dataset(graphs, path)
        loaded = load_dataset(path)
        assert len(loaded) == 3
        for a, b in zip(graphs, loaded):
            np.testing.assert_array_equal(a.node_features, b.node_features)
            np.testing.assert_array_equal(a.edges, b.edges)
            assert a.label == b.label

    def test_empty_file_is_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("")
        assert load_dataset(str(path)) == []

    def test_two_node_one_edge_file(self, tmp_path):
        path = tmp_path / "toy.txt"
        path.write_text("1 1 2\n2 1 1\n0.5\n-0.5\n0 1\n")
        (g,) = load_dataset(str(path))
        assert g.num_nodes == 2
        assert g.label == 1
        assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 0)]

    def test_edge_index_out_of_bounds_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 1 2\n2 1 0\n0.0\n1.0\n0 2\n")
        with pytest.raises(DatasetFormatError, match="line 5"):
            load_dataset(str(path))

    def test_malformed_feature_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 2 2\n1 0 0\n0.0 oops\n")
        with pytest.raises(DatasetFormatError, match="line 3"):
            load_dataset(str(path))

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 1 2\n3 0 0\n0.0\n")
        with pytest.raises(DatasetFormatError, match="end of file"):
            load_dataset(str(path))

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 1 2\n1 0 0\n0.0\nextra line\n")
        with pytest.raises(DatasetFormatError, match="trailing"):
            load_dataset(str(path))
