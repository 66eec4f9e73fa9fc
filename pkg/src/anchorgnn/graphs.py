"""Graph containers, block batching, and the plain-text dataset format.

A dataset file is line-oriented and bit-exact to regenerate:

    N_GRAPHS d c
    N m label        (per graph)
    <N rows of d whitespace-separated floats>
    <m edge lines "src dst", one per undirected edge>

Graphs are undirected; in memory every edge is stored in both directions,
on disk each undirected edge appears once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Graph",
    "GraphBatch",
    "DatasetFormatError",
    "batch_graphs",
    "load_dataset",
    "save_dataset",
]


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _both_directions(pairs) -> np.ndarray:
    """Canonical directed edge array holding both directions of each undirected pair."""
    seen = set()
    for s, d in pairs:
        s, d = int(s), int(d)
        seen.add((s, d))
        if s != d:
            seen.add((d, s))
    if not seen:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(seen), dtype=np.int64)


@dataclass
class Graph:
    """One labeled graph: node features, directed edge list, class label."""

    node_features: np.ndarray           # N x d
    edges: np.ndarray                   # E x 2 int, both directions present
    label: int
    edge_features: np.ndarray | None = None  # accepted, stored, unused by backbones

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.ndim != 2:
            raise ValueError(f"node_features must be 2-D, got shape {self.node_features.shape}")
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = self.num_nodes
        if n == 0:
            raise ValueError("graph must have at least one node")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            bad = self.edges[(self.edges < 0) | (self.edges >= n)].flat[0]
            raise ValueError(f"edge endpoint {bad} out of range [0, {n})")
        self.label = int(self.label)

    @classmethod
    def from_undirected(cls, node_features, edge_pairs, label, edge_features=None) -> "Graph":
        return cls(node_features, _both_directions(edge_pairs), label, edge_features)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    def undirected_edges(self) -> list[tuple[int, int]]:
        """Each undirected edge once, as sorted (src, dst) with src <= dst."""
        seen = set()
        for s, d in self.edges:
            seen.add((min(int(s), int(d)), max(int(s), int(d))))
        return sorted(seen)

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes by `perm` (node i becomes node perm[i])."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        feats = self.node_features[inv]
        edges = perm[self.edges] if self.edges.size else self.edges
        return Graph(feats, edges, self.label, self.edge_features)

    def is_connected(self) -> bool:
        n = self.num_nodes
        if n == 1:
            return True
        adj: list[list[int]] = [[] for _ in range(n)]
        for s, d in self.edges:
            adj[s].append(int(d))
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        return len(seen) == n


@dataclass
class GraphBatch:
    """Block-diagonal concatenation of graphs for a single forward pass."""

    node_features: np.ndarray        # total_nodes x d
    edges: np.ndarray                # total_edges x 2, offsets applied
    graph_index: np.ndarray          # total_nodes, node -> graph id, nondecreasing
    labels: np.ndarray               # num_graphs
    node_counts: np.ndarray          # num_graphs
    _gcn_cache: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def num_graphs(self) -> int:
        return len(self.labels)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    def gcn_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edge arrays with self-loops plus symmetric-normalization weights.

        Returns (src, dst, weights) where weights[e] = 1/sqrt(deg_hat[src] * deg_hat[dst])
        and deg_hat counts the added self-loop, so isolated nodes are safe.
        """
        if self._gcn_cache is None:
            n = self.num_nodes
            loops = np.arange(n, dtype=np.int64)
            src = np.concatenate([self.edges[:, 0], loops]) if self.edges.size else loops
            dst = np.concatenate([self.edges[:, 1], loops]) if self.edges.size else loops
            deg_hat = np.bincount(dst, minlength=n).astype(np.float64)
            weights = 1.0 / np.sqrt(deg_hat[src] * deg_hat[dst])
            self._gcn_cache = (src, dst, weights)
        return self._gcn_cache

    def to_graphs(self) -> list[Graph]:
        """Invert the batching; exact inverse of ``batch_graphs``."""
        graphs = []
        offsets = np.concatenate([[0], np.cumsum(self.node_counts)])
        for g in range(self.num_graphs):
            lo, hi = offsets[g], offsets[g + 1]
            mask = np.all((self.edges >= lo) & (self.edges < hi), axis=1) if self.edges.size else \
                np.zeros(0, dtype=bool)
            edges = self.edges[mask] - lo if self.edges.size else self.edges
            graphs.append(Graph(self.node_features[lo:hi].copy(), edges, int(self.labels[g])))
        return graphs


def batch_graphs(graphs: list[Graph]) -> GraphBatch:
    """Concatenate graphs into one block batch with offset-shifted edges."""
    if not graphs:
        raise ValueError("cannot batch an empty graph list")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ValueError(f"mixed feature dimensions in batch: {sorted(dims)}")
    feats = np.concatenate([g.node_features for g in graphs], axis=0)
    counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    edge_blocks = [g.edges + off for g, off in zip(graphs, offsets) if g.edges.size]
    edges = np.concatenate(edge_blocks, axis=0) if edge_blocks else np.zeros((0, 2), dtype=np.int64)
    graph_index = np.repeat(np.arange(len(graphs), dtype=np.int64), counts)
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    return GraphBatch(feats, edges, graph_index, labels, counts)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def _format_float(x: float) -> str:
    return repr(float(x))


def load_dataset(path: str) -> list[Graph]:
    """Parse the documented plain-text format into a list of graphs."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    # skip trailing blank lines; an entirely empty file is an empty dataset
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        return []

    def split(line_no: int) -> list[str]:
        if line_no > len(lines):
            raise DatasetFormatError("unexpected end of file", line_no)
        return lines[line_no - 1].split()

    header = split(1)
    if len(header) != 3:
        raise DatasetFormatError(f"header must be 'N_GRAPHS d c', got {lines[0]!r}", 1)
    try:
        n_graphs, dim, n_classes = (int(tok) for tok in header)
    except ValueError:
        raise DatasetFormatError(f"non-integer header field in {lines[0]!r}", 1) from None

    graphs: list[Graph] = []
    line_no = 2
    for _ in range(n_graphs):
        head = split(line_no)
        if len(head) != 3:
            raise DatasetFormatError(f"graph header must be 'N m label', got {lines[line_no - 1]!r}", line_no)
        try:
            n, m, label = (int(tok) for tok in head)
        except ValueError:
            raise DatasetFormatError(f"non-integer graph header in {lines[line_no - 1]!r}", line_no) from None
        if label < 0 or label >= n_classes:
            raise DatasetFormatError(f"label {label} out of range [0, {n_classes})", line_no)
        line_no += 1

        feats = np.empty((n, dim), dtype=np.float64)
        for i in range(n):
            row = split(line_no)
            if len(row) != dim:
                raise DatasetFormatError(f"expected {dim} features, got {len(row)}", line_no)
            try:
                feats[i] = [float(tok) for tok in row]
            except ValueError:
                raise DatasetFormatError(f"non-numeric feature in {lines[line_no - 1]!r}", line_no) from None
            line_no += 1

        pairs = []
        for _ in range(m):
            row = split(line_no)
            if len(row) != 2:
                raise DatasetFormatError(f"edge line must be 'src dst', got {lines[line_no - 1]!r}", line_no)
            try:
                s, d = int(row[0]), int(row[1])
            except ValueError:
                raise DatasetFormatError(f"non-integer edge in {lines[line_no - 1]!r}", line_no) from None
            if not (0 <= s < n and 0 <= d < n):
                raise DatasetFormatError(f"edge ({s}, {d}) out of range for {n} nodes", line_no)
            pairs.append((s, d))
            line_no += 1

        graphs.append(Graph.from_undirected(feats, pairs, label))

    if line_no - 1 != len(lines):
        raise DatasetFormatError("trailing content after last declared graph", line_no)
    return graphs


def save_dataset(graphs: list[Graph], path: str, num_classes: int | None = None) -> None:
    """Emit the plain-text format; loading the result reproduces the graphs."""
    if graphs:
        dims = {g.feature_dim for g in graphs}
        if len(dims) != 1:
            raise ValueError(f"mixed feature dimensions: {sorted(dims)}")
        dim = dims.pop()
        if num_classes is None:
            num_classes = max(g.label for g in graphs) + 1
    else:
        dim = 0
        num_classes = num_classes or 0

    out = [f"{len(graphs)} {dim} {num_classes}"]
    for g in graphs:
        undirected = g.undirected_edges()
        out.append(f"{g.num_nodes} {len(undirected)} {g.label}")
        for row in g.node_features:
            out.append(" ".join(_format_float(x) for x in row))
        for s, d in undirected:
            out.append(f"{s} {d}")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
