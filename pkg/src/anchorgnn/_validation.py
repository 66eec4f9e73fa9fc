"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .graphs import Graph


def check_graphs(graphs, allow_empty: bool = False) -> list[Graph]:
    """Validate a graph collection: Graph instances with one feature dimension."""
    graphs = list(graphs)
    if not graphs and not allow_empty:
        raise ValueError("expected a nonempty list of graphs")
    for i, g in enumerate(graphs):
        if not isinstance(g, Graph):
            raise TypeError(f"item {i} is {type(g).__name__}, expected Graph")
    dims = {g.feature_dim for g in graphs}
    if len(dims) > 1:
        raise ValueError(f"graphs mix feature dimensions {sorted(dims)}")
    return graphs


def resolve_labels(graphs: list[Graph], y=None) -> np.ndarray:
    """Integer label vector from `y` if given, else from the graphs themselves."""
    if y is None:
        labels = np.array([g.label for g in graphs], dtype=np.int64)
    else:
        labels = np.asarray(y, dtype=np.int64)
        if labels.shape != (len(graphs),):
            raise ValueError(f"y has shape {labels.shape}, expected ({len(graphs)},)")
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be nonnegative class indices")
    return labels
