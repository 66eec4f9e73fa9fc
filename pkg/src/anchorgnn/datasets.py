"""Dataset splitting and synthetic shifted-graph generation.

Two shift families are supported:

* quantile splitting by graph size (train on the smallest half, report on the
  largest tenth), applied to any graph list;
* a motif-classification generator whose label is the identity of a small
  subgraph attached to a larger basis graph, with covariate shift (held-out
  basis families at test time) and concept shift (a train-only correlation
  between basis family and label).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph
from .rng import RngStream

__all__ = [
    "DatasetSplit",
    "SplitError",
    "MotifSpec",
    "size_quantile_split",
    "generate_motif_dataset",
    "gaussian_feature_shift",
]


class SplitError(ValueError):
    pass


@dataclass
class DatasetSplit:
    """Index lists into a graph store, plus a descriptor of how they were made."""

    train: list[int]
    val: list[int]
    test_id: list[int]
    test_ood: list[int]
    kind: str = "none"
    params: dict = field(default_factory=dict)

    def all_indices(self) -> list[int]:
        return self.train + self.val + self.test_id + self.test_ood

    def validate(self, store_size: int) -> None:
        """Assert disjointness and bounds; called before every experiment run."""
        pools = {
            "train": self.train,
            "val": self.val,
            "test_id": self.test_id,
            "test_ood": self.test_ood,
        }
        seen: dict[int, str] = {}
        for name, idx in pools.items():
            for i in idx:
                if not (0 <= i < store_size):
                    raise SplitError(f"{name} index {i} outside store of size {store_size}")
                if i in seen:
                    raise SplitError(f"index {i} appears in both {seen[i]} and {name}")
                seen[i] = name


def size_quantile_split(
    graphs: list[Graph],
    train_quantile: float = 0.5,
    eval_quantile: float = 0.9,
    val_fraction: float = 0.1,
) -> DatasetSplit:
    """Split by node count: train on the smallest quantile, hold out the largest.

    Graphs at or below the ``train_quantile`` size form the train pool (a
    size-stratified ``val_fraction`` of it becomes validation), graphs at or
    above the ``eval_quantile`` size are the out-of-distribution test set, and
    the middle band is kept as an in-distribution test set so ID and OOD
    metrics never share samples. Fully deterministic.
    """
    if len(graphs) < 10:
        raise SplitError(f"need at least 10 graphs to split, got {len(graphs)}")
    if not (0.0 < train_quantile < eval_quantile <= 1.0):
        raise SplitError(f"invalid quantiles ({train_quantile}, {eval_quantile})")
    sizes = np.array([g.num_nodes for g in graphs])
    if sizes.min() == sizes.max():
        raise SplitError(
            f"all graphs have {sizes[0]} nodes; a size split is degenerate "
            "(generate synthetic data with varied sizes instead)"
        )
    q_train = float(np.quantile(sizes, train_quantile))
    q_eval = float(np.quantile(sizes, eval_quantile))

    test_ood = [i for i in range(len(graphs)) if sizes[i] >= q_eval]
    ood_set = set(test_ood)
    train_pool = [i for i in range(len(graphs)) if sizes[i] <= q_train and i not in ood_set]
    test_id = [i for i in range(len(graphs)) if i not in ood_set and sizes[i] > q_train]
    if not train_pool or not test_ood:
        raise SplitError("size quantiles produced an empty train or test-ood pool")

    # size-stratified validation carve-out: sort by size, take evenly spaced ranks
    n_val = int(round(val_fraction * len(train_pool)))
    by_size = sorted(train_pool, key=lambda i: (sizes[i], i))
    if n_val > 0:
        picks = np.linspace(0, len(by_size) - 1, num=n_val, dtype=int)
        val = [by_size[p] for p in sorted(set(picks.tolist()))]
    else:
        val = []
    val_set = set(val)
    train = [i for i in train_pool if i not in val_set]

    return DatasetSplit(
        train=train,
        val=val,
        test_id=test_id,
        test_ood=test_ood,
        kind="size",
        params={
            "train_quantile": train_quantile,
            "eval_quantile": eval_quantile,
            "val_fraction": val_fraction,
            "train_size_cut": q_train,
            "eval_size_cut": q_eval,
        },
    )


# ---------------------------------------------------------------------------
# motif generator
# ---------------------------------------------------------------------------

_BASIS_BUILDERS = ("path", "cycle", "star", "tree")
_MOTIF_BUILDERS = ("triangle", "square", "house")


@dataclass
class MotifSpec:
    """Recipe for the synthetic motif-classification benchmark.

    The label is the identity of the motif attached to a basis graph, so it is
    recoverable by brute-force subgraph counting regardless of the basis. Basis
    families must be triangle- and square-free (guaranteed for cycle length
    >= 5), which ``min_basis_size`` enforces.
    """

    basis_kinds: tuple[str, ...] = ("path", "cycle", "star", "tree")
    motif_kinds: tuple[str, ...] = ("triangle", "square", "house")
    basis_size_range: tuple[int, int] = (8, 16)
    ood_basis_size_range: tuple[int, int] | None = None
    held_out_bases: tuple[str, ...] = ()
    label_basis_correlation: float = 0.0
    feature_dim: int = 2
    feature_scale: float = 0.05

    def __post_init__(self):
        if isinstance(self.basis_kinds, str):
            self.basis_kinds = tuple(k for k in self.basis_kinds.split(",") if k)
        if isinstance(self.motif_kinds, str):
            self.motif_kinds = tuple(k for k in self.motif_kinds.split(",") if k)
        if isinstance(self.held_out_bases, str):
            self.held_out_bases = tuple(k for k in self.held_out_bases.split(",") if k)
        self.basis_kinds = tuple(self.basis_kinds)
        self.motif_kinds = tuple(self.motif_kinds)
        self.held_out_bases = tuple(self.held_out_bases)
        if not self.motif_kinds:
            raise ValueError("motif_kinds must be nonempty")
        if len(set(self.motif_kinds)) != len(self.motif_kinds):
            raise ValueError("motif kinds must be distinct (labels are their indices)")
        for k in self.basis_kinds:
            if k not in _BASIS_BUILDERS:
                raise ValueError(f"unknown basis kind {k!r}; known: {_BASIS_BUILDERS}")
        for k in self.motif_kinds:
            if k not in _MOTIF_BUILDERS:
                raise ValueError(f"unknown motif kind {k!r}; known: {_MOTIF_BUILDERS}")
        for k in self.held_out_bases:
            if k not in self.basis_kinds:
                raise ValueError(f"held-out basis {k!r} not among basis kinds")
        if set(self.held_out_bases) == set(self.basis_kinds):
            raise ValueError("at least one basis kind must remain for training")
        rho = self.label_basis_correlation
        if not (0.0 <= rho <= 1.0):
            raise ValueError(f"label-basis correlation must be in [0, 1], got {rho}")
        lo, hi = self.basis_size_range
        if lo < 5 or hi < lo:
            raise ValueError(f"basis_size_range {self.basis_size_range} invalid; need 5 <= lo <= hi")
        if self.ood_basis_size_range is not None:
            lo, hi = self.ood_basis_size_range
            if lo < 5 or hi < lo:
                raise ValueError(f"ood_basis_size_range {self.ood_basis_size_range} invalid")

    @property
    def num_classes(self) -> int:
        return len(self.motif_kinds)

    def id_basis_pool(self) -> tuple[str, ...]:
        held = set(self.held_out_bases)
        return tuple(k for k in self.basis_kinds if k not in held)


def _basis_edges(kind: str, n: int, rng: RngStream) -> list[tuple[int, int]]:
    if kind == "path":
        return [(i, i + 1) for i in range(n - 1)]
    if kind == "cycle":
        return [(i, (i + 1) % n) for i in range(n)]
    if kind == "star":
        return [(0, i) for i in range(1, n)]
    if kind == "tree":
        # uniform random attachment; node i joins an earlier node
        return [(int(rng.integers(0, i)), i) for i in range(1, n)]
    raise ValueError(f"unknown basis kind {kind!r}")


_MOTIF_EDGES = {
    "triangle": (3, [(0, 1), (1, 2), (2, 0)]),
    "square": (4, [(0, 1), (1, 2), (2, 3), (3, 0)]),
    # 4-cycle plus a roof node joined to two adjacent corners
    "house": (5, [(0, 1), (1, 2), (2, 3), (3, 0), (4, 0), (4, 1)]),
}


def _make_motif_graph(
    spec: MotifSpec, basis_kind: str, motif_kind: str, basis_size: int, rng: RngStream
) -> Graph:
    basis = _basis_edges(basis_kind, basis_size, rng)
    motif_n, motif_edges = _MOTIF_EDGES[motif_kind]
    edges = list(basis)
    edges.extend((basis_size + a, basis_size + b) for a, b in motif_edges)
    attach_basis = int(rng.integers(0, basis_size))
    attach_motif = basis_size + int(rng.integers(0, motif_n))
    edges.append((attach_basis, attach_motif))
    n = basis_size + motif_n
    # continuous features: a constant channel, a degree channel (structure made
    # locally visible, independent of graph size), remaining channels noise
    degree = np.zeros(n)
    for a, b in edges:
        degree[a] += 1.0
        degree[b] += 1.0
    loc = np.zeros((n, spec.feature_dim))
    loc[:, 0] = 1.0
    if spec.feature_dim > 1:
        loc[:, 1] = 0.25 * degree
    feats = rng.normal((n, spec.feature_dim), scale=spec.feature_scale) + loc
    label = spec.motif_kinds.index(motif_kind)
    return Graph.from_undirected(feats, edges, label)


def generate_motif_dataset(
    spec: MotifSpec,
    n_graphs: int,
    rng: RngStream,
    shift: str = "none",
    fractions: tuple[float, float, float, float] = (0.6, 0.1, 0.15, 0.15),
) -> tuple[list[Graph], DatasetSplit]:
    """Generate labeled motif graphs with the requested distribution shift.

    shift = "none": every split drawn from the same distribution.
    shift = "covariate": test-ood uses only the held-out basis kinds.
    shift = "concept": in-distribution splits correlate basis kind with label
    at the spec's strength; test-ood breaks the correlation (uniform bases).
    """
    if n_graphs < 50:
        raise ValueError(f"need at least 50 graphs, got {n_graphs}")
    if shift not in ("none", "covariate", "concept"):
        raise ValueError(f"unknown shift {shift!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    if shift == "covariate" and not spec.held_out_bases:
        raise ValueError("covariate shift requires held_out_bases in the spec")

    counts = [int(math.floor(f * n_graphs)) for f in fractions]
    counts[0] += n_graphs - sum(counts)
    id_pool = spec.id_basis_pool()
    rho = spec.label_basis_correlation

    graphs: list[Graph] = []
    split_lists: list[list[int]] = [[], [], [], []]
    for group, group_count in enumerate(counts):
        is_ood = group == 3
        lo, hi = spec.basis_size_range
        if is_ood and spec.ood_basis_size_range is not None:
            lo, hi = spec.ood_basis_size_range
        for _ in range(group_count):
            label = int(rng.integers(0, spec.num_classes))
            motif_kind = spec.motif_kinds[label]
            if is_ood and shift == "covariate":
                pool = spec.held_out_bases
                basis_kind = pool[int(rng.integers(0, len(pool)))]
            elif not is_ood and shift == "concept" and float(rng.uniform(())) < rho:
                # spurious shortcut: basis family determined by the label
                basis_kind = id_pool[label % len(id_pool)]
            else:
                basis_kind = id_pool[int(rng.integers(0, len(id_pool)))]
            basis_size = int(rng.integers(lo, hi + 1))
            g = _make_motif_graph(spec, basis_kind, motif_kind, basis_size, rng)
            split_lists[group].append(len(graphs))
            graphs.append(g)

    split = DatasetSplit(
        train=split_lists[0],
        val=split_lists[1],
        test_id=split_lists[2],
        test_ood=split_lists[3],
        kind=shift,
        params={"n_graphs": n_graphs, "fractions": list(fractions)},
    )
    return graphs, split


def gaussian_feature_shift(
    graphs: list[Graph], mean_shift: float, scale: float, rng: RngStream | None = None
) -> list[Graph]:
    """Copies with features transformed as X' = scale * X + mean_shift.

    Structure and labels are untouched; the transform itself is deterministic
    (``rng`` is accepted for interface uniformity with the other generators).
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    out = []
    for g in graphs:
        out.append(Graph(scale * g.node_features + mean_shift, g.edges.copy(), g.label,
                         g.edge_features))
    return out
