"""Graph classification backbones: stacked message-passing layers, a
permutation-invariant readout, and an MLP head.

Two layer rules are provided. The GCN rule applies symmetric degree
normalization with self-loops, X' = ReLU(D^-1/2 (A+I) D^-1/2 X W + b); the GIN
rule feeds (1+eps) * x_v + sum of neighbor features through a two-layer MLP.

``forward_logits`` accepts an optional injection hook that may replace the
representation at one of three sites ("input", after message-passing layer r,
or after "readout"); the anchoring module uses it to build query/anchor pairs
without this module knowing anything about anchors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import GraphBatch
from .rng import RngStream
from .tensor import (
    ShapeError,
    Tensor,
    add,
    constant,
    dropout_mask,
    matmul,
    neighbor_sum,
    parameter,
    relu,
    segment_pool,
)

__all__ = ["GnnConfig", "init_params", "forward_logits", "run_trunk", "gcn_layer", "gin_layer", "readout"]

_SITE_INPUT = "input"
_SITE_MPNN = "mpnn"
_SITE_READOUT = "readout"


@dataclass
class GnnConfig:
    """Backbone hyperparameters shared by every model in the package."""

    backbone: str = "gin"
    num_mp_layers: int = 3
    hidden_dim: int = 64
    readout: str = "mean"
    mlp_depth: int = 2
    gin_epsilon: float = 0.0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.backbone not in ("gcn", "gin"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.readout not in ("mean", "sum"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.num_mp_layers < 1:
            raise ValueError("num_mp_layers must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.mlp_depth < 1:
            raise ValueError("mlp_depth must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def num_dropout_sites(self) -> int:
        return self.num_mp_layers + self.mlp_depth - 1


def _glorot(rng: RngStream, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform((fan_in, fan_out), low=-limit, high=limit)


# hidden biases start slightly positive so ReLU units cannot all be born (or
# collapse) dead; the output bias stays at zero
_BIAS_INIT = 0.01


def _layer_in_dims(config: GnnConfig, in_dim: int, anchor_variant: str | None,
                   anchor_layer: int) -> tuple[list[int], int]:
    """Per-layer input widths plus the head input width for a given anchoring site.

    Only the layer consuming the query/anchor pair widens (to twice the width
    produced at the anchoring site); everything downstream keeps vanilla sizes.
    """
    L, d_h = config.num_mp_layers, config.hidden_dim
    dims = [in_dim] + [d_h] * (L - 1)
    head_in = d_h
    if anchor_variant == "input":
        dims[0] = 2 * in_dim
    elif anchor_variant == "mpnn":
        if not (1 <= anchor_layer <= L):
            raise ValueError(f"anchor layer {anchor_layer} outside [1, {L}]")
        if anchor_layer < L:
            dims[anchor_layer] = 2 * d_h
        else:
            head_in = 2 * d_h
    elif anchor_variant in ("readout", "pretrained_readout"):
        head_in = 2 * d_h
    elif anchor_variant is not None:
        raise ValueError(f"unknown anchor variant {anchor_variant!r}")
    return dims, head_in


def init_params(
    config: GnnConfig,
    in_dim: int,
    num_classes: int,
    rng: RngStream,
    anchor_variant: str | None = None,
    anchor_layer: int = 0,
) -> dict[str, Tensor]:
    """Named, ordered parameter tensors for the configured backbone."""
    dims, head_in = _layer_in_dims(config, in_dim, anchor_variant, anchor_layer)
    d_h = config.hidden_dim
    params: dict[str, Tensor] = {}
    for r in range(1, config.num_mp_layers + 1):
        d_in = dims[r - 1]
        if config.backbone == "gcn":
            params[f"mp{r}.weight"] = parameter(_glorot(rng, d_in, d_h))
            params[f"mp{r}.bias"] = parameter(np.full(d_h, _BIAS_INIT))
        else:
            params[f"mp{r}.mlp.w1"] = parameter(_glorot(rng, d_in, d_h))
            params[f"mp{r}.mlp.b1"] = parameter(np.full(d_h, _BIAS_INIT))
            params[f"mp{r}.mlp.w2"] = parameter(_glorot(rng, d_h, d_h))
            params[f"mp{r}.mlp.b2"] = parameter(np.full(d_h, _BIAS_INIT))
    params.update(init_head_params(config, head_in, num_classes, rng))
    return params


def init_head_params(config: GnnConfig, head_in: int, num_classes: int,
                     rng: RngStream) -> dict[str, Tensor]:
    d_h = config.hidden_dim
    params: dict[str, Tensor] = {}
    widths = [head_in] + [d_h] * (config.mlp_depth - 1) + [num_classes]
    for k in range(1, config.mlp_depth + 1):
        params[f"head{k}.weight"] = parameter(_glorot(rng, widths[k - 1], widths[k]))
        bias = 0.0 if k == config.mlp_depth else _BIAS_INIT
        params[f"head{k}.bias"] = parameter(np.full(widths[k], bias))
    return params


def head_param_names(config: GnnConfig) -> list[str]:
    names = []
    for k in range(1, config.mlp_depth + 1):
        names.extend([f"head{k}.weight", f"head{k}.bias"])
    return names


def gcn_layer(x: Tensor, batch: GraphBatch, weight: Tensor, bias: Tensor) -> Tensor:
    """Symmetric-normalized convolution with self-loops, ReLU activation."""
    src, dst, norm = batch.gcn_edges()
    agg = neighbor_sum(x, src, dst, weights=norm, num_rows=batch.num_nodes)
    return relu(add(matmul(agg, weight), bias))


def gin_layer(x: Tensor, batch: GraphBatch, w1: Tensor, b1: Tensor, w2: Tensor,
              b2: Tensor, epsilon: float) -> Tensor:
    """Sum aggregation with (1+eps) self-weighting, then a 2-layer MLP."""
    agg = neighbor_sum(x, batch.edges[:, 0], batch.edges[:, 1], num_rows=batch.num_nodes)
    combined = add(agg, x * (1.0 + epsilon))
    hidden = relu(add(matmul(combined, w1), b1))
    return add(matmul(hidden, w2), b2)


def readout(x: Tensor, batch: GraphBatch, mode: str) -> Tensor:
    """Permutation-invariant pooling of node rows into one vector per graph."""
    return segment_pool(x, batch.graph_index, batch.num_graphs, mode=mode)


def _mp_layer(config: GnnConfig, params: dict[str, Tensor], r: int, x: Tensor,
              batch: GraphBatch) -> Tensor:
    try:
        if config.backbone == "gcn":
            return gcn_layer(x, batch, params[f"mp{r}.weight"], params[f"mp{r}.bias"])
        return gin_layer(
            x, batch,
            params[f"mp{r}.mlp.w1"], params[f"mp{r}.mlp.b1"],
            params[f"mp{r}.mlp.w2"], params[f"mp{r}.mlp.b2"],
            config.gin_epsilon,
        )
    except ShapeError as exc:
        raise ShapeError(f"message-passing layer {r}: {exc}") from exc


def forward_logits(
    config: GnnConfig,
    params: dict[str, Tensor],
    batch: GraphBatch,
    mode: str = "eval",
    rng: RngStream | None = None,
    inject=None,
    dropout_sites: list[bool] | None = None,
) -> Tensor:
    """Run the full model; returns logits of shape (num_graphs, num_classes).

    mode="train" activates dropout (requires rng when dropout_rate > 0);
    mode="eval" is deterministic. ``dropout_sites`` overrides the per-site
    on/off flags regardless of mode (used for Monte Carlo dropout at
    inference). ``inject`` is an optional hook
    ``inject(site, layer_index, tensor) -> tensor`` called at the input, after
    every message-passing layer, and after readout.
    """
    out = _forward(config, params, batch, mode, rng, inject, dropout_sites, capture=None)
    assert isinstance(out, Tensor)
    return out


def run_trunk(
    config: GnnConfig,
    params: dict[str, Tensor],
    batch: GraphBatch,
    site: str,
    layer: int = 0,
) -> np.ndarray:
    """Deterministically evaluate the sub-network up to a site and return its rows.

    site="mpnn" returns node representations after message-passing layer
    ``layer``; site="readout" returns per-graph pooled representations. Only
    layers before the site are evaluated, so anchored models can expose their
    vanilla-width trunk.
    """
    if site == _SITE_READOUT:
        layer = config.num_mp_layers
    out = _forward(config, params, batch, "eval", None, None, None, capture=(site, layer))
    if isinstance(out, Tensor):
        raise ValueError(f"capture site ({site!r}, layer {layer}) never reached")
    return out


def _forward(config, params, batch, mode, rng, inject, dropout_sites, capture):
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    p = config.dropout_rate
    site_flags = dropout_sites
    if site_flags is not None and len(site_flags) != config.num_dropout_sites():
        raise ValueError(
            f"dropout_sites needs {config.num_dropout_sites()} flags, got {len(site_flags)}"
        )

    def maybe_dropout(x: Tensor, site_idx: int) -> Tensor:
        active = (mode == "train") if site_flags is None else site_flags[site_idx]
        if not active or p == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout requires an rng stream")
        mask = (rng.uniform(x.shape) >= p).astype(np.float64)
        return dropout_mask(x, mask, p)

    x = constant(batch.node_features)
    if inject is not None:
        x = inject(_SITE_INPUT, 0, x)
    for r in range(1, config.num_mp_layers + 1):
        x = _mp_layer(config, params, r, x, batch)
        x = maybe_dropout(x, r - 1)
        if capture == (_SITE_MPNN, r):
            return x.values
        if inject is not None:
            x = inject(_SITE_MPNN, r, x)

    g = readout(x, batch, config.readout)
    if capture == (_SITE_READOUT, config.num_mp_layers):
        return g.values
    if inject is not None:
        g = inject(_SITE_READOUT, config.num_mp_layers, g)

    h = g
    for k in range(1, config.mlp_depth + 1):
        try:
            h = add(matmul(h, params[f"head{k}.weight"]), params[f"head{k}.bias"])
        except ShapeError as exc:
            raise ShapeError(f"head layer {k}: {exc}") from exc
        if k < config.mlp_depth:
            h = relu(h)
            h = maybe_dropout(h, config.num_mp_layers + k - 1)
    return h
