"""Stochastic anchoring for graph networks.

Anchoring reparameterizes a representation x as the pair [x - c, c] (or
[x - c, x] at the input) for a random anchor c, so each anchor choice selects
a different hypothesis from a single trained network. Four injection sites
are supported, with decreasing stochasticity:

* input: per-node anchors drawn from a Gaussian fit to training node features;
* mpnn (layer r): anchors are node representations shuffled across the batch;
* readout: anchors are pooled graph representations shuffled across the batch;
* pretrained_readout: readout anchoring on a frozen pretrained trunk, training
  only a reinitialized head.

At inference a frozen set of K anchors produces K predictions per input; their
mean, per-class spread, and spread-modulated scores form the prediction
summary. The anchor branch never carries gradients: the shuffled copy is a
constant during backward.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph, GraphBatch, batch_graphs
from .models import GnnConfig, forward_logits, init_head_params, run_trunk
from .rng import RngStream
from .tensor import Tensor, concat_cols, constant, softmax_rows, sub

logger = logging.getLogger(__name__)

__all__ = [
    "AnchorDistribution",
    "AnchorConfig",
    "FixedAnchorSet",
    "PredictionSummary",
    "fit_anchor_gaussian",
    "anchor_input_train",
    "anchor_input_fixed",
    "anchor_mpnn_train",
    "anchor_readout_train",
    "anchor_hidden_fixed",
    "freeze_anchor_set",
    "infer_with_anchors",
    "summarize_anchor_probs",
    "convert_pretrained",
    "TrainAnchorInjection",
    "FixedAnchorInjection",
]

_VARIANTS = ("input", "mpnn", "readout", "pretrained_readout")
_STD_FLOOR = 1e-6


@dataclass
class AnchorDistribution:
    """Per-dimension Gaussian over node features, fit on the training split."""

    mean: np.ndarray
    std: np.ndarray
    source: str = "train node features"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise ValueError(f"mean/std shape mismatch {self.mean.shape} vs {self.std.shape}")
        if np.any(self.std < 0):
            raise ValueError("std must be nonnegative")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, n_rows: int, rng: RngStream) -> np.ndarray:
        z = rng.normal((n_rows, self.dim))
        return self.mean[None, :] + self.std[None, :] * z


def fit_anchor_gaussian(train_graphs: list[Graph]) -> AnchorDistribution:
    """Per-dimension sample mean/std over all training nodes pooled together.

    Zero-variance dimensions are floored at 1e-6 (with a warning) so the
    distribution never collapses to a point mass.
    """
    if not train_graphs:
        raise ValueError("need at least one graph to fit the anchor distribution")
    pooled = np.concatenate([g.node_features for g in train_graphs], axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0, ddof=1) if pooled.shape[0] > 1 else np.zeros(pooled.shape[1])
    flat = std < _STD_FLOOR
    if np.any(flat):
        warnings.warn(
            f"{int(flat.sum())} feature dimension(s) have (near-)zero variance; "
            f"flooring anchor std at {_STD_FLOOR}",
            stacklevel=2,
        )
        std = np.where(flat, _STD_FLOOR, std)
    return AnchorDistribution(mean, std)


# ---------------------------------------------------------------------------
# query/anchor pair construction
# ---------------------------------------------------------------------------

def anchor_input_train(x: Tensor, dist: AnchorDistribution, rng: RngStream) -> Tensor:
    """Per-node random anchors: rows become [x - c, x] with c ~ N(mean, std)."""
    n, d = x.shape
    if d != dist.dim:
        raise ValueError(f"feature dim {d} does not match anchor distribution dim {dist.dim}")
    anchors = constant(dist.sample(n, rng))
    return concat_cols(sub(x, anchors), x)


def anchor_input_fixed(x: Tensor, anchor_row: np.ndarray) -> Tensor:
    """One shared anchor broadcast over all nodes: rows become [x - c, x]."""
    c = np.broadcast_to(np.asarray(anchor_row, dtype=np.float64), x.shape)
    return concat_cols(sub(x, constant(c)), x)


def _shuffled_pair(x: Tensor, rng: RngStream | None, self_anchor: bool, what: str) -> Tensor:
    n = x.shape[0]
    if n < 2 and not self_anchor:
        warnings.warn(f"single-{what} batch: falling back to self-anchoring", stacklevel=3)
        self_anchor = True
    if self_anchor:
        # degenerate control: every row anchors on itself, [0, x]. The query
        # stays live (a detached copy would cut the only gradient path through
        # the trunk and the control would no longer train like a plain model).
        zeros = constant(np.zeros_like(x.values))
        return concat_cols(zeros, x)
    assert rng is not None
    perm = rng.permutation(n)
    anchors = constant(x.values[perm])  # constant: no gradient through the anchor branch
    return concat_cols(sub(x, anchors), anchors)


def anchor_mpnn_train(hidden: Tensor, rng: RngStream | None, self_anchor: bool = False) -> Tensor:
    """Anchor node representations with a batch-wide shuffle: [x - c, c].

    The shuffled copy is detached, so gradients reach the representations only
    through the residual slot.
    """
    return _shuffled_pair(hidden, rng, self_anchor, "node")


def anchor_readout_train(graph_reps: Tensor, rng: RngStream | None, self_anchor: bool = False) -> Tensor:
    """Anchor pooled graph representations with an in-batch shuffle: [g - c, c]."""
    return _shuffled_pair(graph_reps, rng, self_anchor, "graph")


def anchor_hidden_fixed(x: Tensor, anchor_row: np.ndarray) -> Tensor:
    """One stored hidden-row anchor for all rows: [x - c, c]."""
    c = np.broadcast_to(np.asarray(anchor_row, dtype=np.float64), x.shape)
    anchors = constant(c.copy())
    return concat_cols(sub(x, anchors), anchors)


# ---------------------------------------------------------------------------
# configuration and frozen anchor sets
# ---------------------------------------------------------------------------

@dataclass
class AnchorConfig:
    """Where anchoring is injected and how many inference anchors are used."""

    variant: str = "readout"
    k: int = 10
    layer: int = 0  # message-passing layer index, only for variant="mpnn"

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; known: {_VARIANTS}")
        if self.k < 1:
            raise ValueError(f"need at least one inference anchor, got k={self.k}")
        if self.variant == "mpnn" and self.layer < 1:
            raise ValueError("variant='mpnn' requires layer >= 1")

    def check_against(self, model_config: GnnConfig) -> None:
        if self.variant == "mpnn" and self.layer > model_config.num_mp_layers:
            raise ValueError(
                f"anchor layer {self.layer} exceeds the {model_config.num_mp_layers} "
                "message-passing layers"
            )

    @property
    def site(self) -> str:
        return {"input": "input", "mpnn": "mpnn",
                "readout": "readout", "pretrained_readout": "readout"}[self.variant]


@dataclass
class FixedAnchorSet:
    """K concrete anchors, frozen for an evaluation run."""

    variant: str
    anchors: np.ndarray  # K x dim
    seed: int
    source: str = ""

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        if self.anchors.ndim != 2 or self.anchors.shape[0] < 1:
            raise ValueError(f"anchors must be a nonempty K x dim matrix, got {self.anchors.shape}")

    @property
    def k(self) -> int:
        return self.anchors.shape[0]

    def save(self, path: str) -> None:
        payload = {
            "format": "anchorgnn-anchors",
            "version": 1,
            "variant": self.variant,
            "k": self.k,
            "seed": self.seed,
            "source": self.source,
            "anchors": self.anchors.tolist(),
        }
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(payload, fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "FixedAnchorSet":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format") != "anchorgnn-anchors":
            raise ValueError(f"{path} is not an anchor-set file")
        return cls(payload["variant"], np.asarray(payload["anchors"]),
                   payload["seed"], payload.get("source", ""))


def freeze_anchor_set(
    anchor_cfg: AnchorConfig,
    rng: RngStream,
    dist: AnchorDistribution | None = None,
    validation_graphs: list[Graph] | None = None,
    model_config: GnnConfig | None = None,
    params: dict[str, Tensor] | None = None,
) -> FixedAnchorSet:
    """Draw and freeze the K inference anchors for a trained model.

    The input variant samples from the fitted Gaussian; hidden variants run
    the deterministic sub-network on validation graphs and keep K of the
    resulting rows (node rows for "mpnn", pooled graph rows otherwise).
    """
    seed = rng.seed
    if anchor_cfg.variant == "input":
        if dist is None:
            raise ValueError("input variant needs a fitted anchor distribution")
        return FixedAnchorSet("input", dist.sample(anchor_cfg.k, rng), seed, source="gaussian fit")

    if not validation_graphs:
        raise ValueError(f"{anchor_cfg.variant} variant needs validation graphs to draw anchors")
    if model_config is None or params is None:
        raise ValueError("hidden variants need the trained model to compute representations")
    batch = batch_graphs(validation_graphs)
    rows = run_trunk(model_config, params, batch, anchor_cfg.site, anchor_cfg.layer)
    if anchor_cfg.k > rows.shape[0]:
        logger.info(
            "requested %d anchors from %d validation rows; sampling with replacement",
            anchor_cfg.k, rows.shape[0],
        )
        idx = rng.choice(rows.shape[0], size=anchor_cfg.k, replace=True)
    else:
        idx = rng.choice(rows.shape[0], size=anchor_cfg.k, replace=False)
    return FixedAnchorSet(anchor_cfg.variant, rows[idx], seed, source="validation rows")


# ---------------------------------------------------------------------------
# forward-pass injections
# ---------------------------------------------------------------------------

class TrainAnchorInjection:
    """Per-batch stochastic anchoring hook for training forwards."""

    def __init__(self, anchor_cfg: AnchorConfig, rng: RngStream,
                 dist: AnchorDistribution | None = None, self_anchor: bool = False):
        self.cfg = anchor_cfg
        self.rng = rng
        self.dist = dist
        self.self_anchor = self_anchor
        if anchor_cfg.variant == "input" and dist is None:
            raise ValueError("input anchoring needs a fitted distribution")

    def __call__(self, site: str, layer: int, x: Tensor) -> Tensor:
        cfg = self.cfg
        if site == "input" and cfg.variant == "input":
            return anchor_input_train(x, self.dist, self.rng)
        if site == "mpnn" and cfg.variant == "mpnn" and layer == cfg.layer:
            return anchor_mpnn_train(x, self.rng, self_anchor=self.self_anchor)
        if site == "readout" and cfg.variant in ("readout", "pretrained_readout"):
            return anchor_readout_train(x, self.rng, self_anchor=self.self_anchor)
        return x


class FixedAnchorInjection:
    """Deterministic hook applying one frozen anchor row everywhere."""

    def __init__(self, anchor_cfg: AnchorConfig, anchor_row: np.ndarray):
        self.cfg = anchor_cfg
        self.anchor_row = np.asarray(anchor_row, dtype=np.float64)

    def __call__(self, site: str, layer: int, x: Tensor) -> Tensor:
        cfg = self.cfg
        if site == "input" and cfg.variant == "input":
            return anchor_input_fixed(x, self.anchor_row)
        if site == "mpnn" and cfg.variant == "mpnn" and layer == cfg.layer:
            return anchor_hidden_fixed(x, self.anchor_row)
        if site == "readout" and cfg.variant in ("readout", "pretrained_readout"):
            return anchor_hidden_fixed(x, self.anchor_row)
        return x


# ---------------------------------------------------------------------------
# inference aggregation
# ---------------------------------------------------------------------------

@dataclass
class PredictionSummary:
    """Aggregated prediction over K anchored forward passes for one graph."""

    per_anchor_probs: np.ndarray      # K x c, rows sum to 1
    mean_probs: np.ndarray            # c
    std_probs: np.ndarray             # c, sample std over anchors (ddof=1)
    calibrated_scores: np.ndarray     # c, mean * (1 - std); not renormalized
    predicted_class: int
    confidence: float
    decision_rule: str = field(default="calibrated", compare=False)


def summarize_anchor_probs(per_anchor_probs: np.ndarray,
                           decision_rule: str = "calibrated") -> PredictionSummary:
    """Combine K probability rows into mean, spread, and modulated scores.

    The spread over anchors (sample std, K-1 denominator) estimates epistemic
    uncertainty; scores are tempered elementwise as mean * (1 - std) and are
    deliberately left unnormalized. ``decision_rule`` selects whether the
    predicted class and confidence come from the modulated scores
    ("calibrated") or the raw anchor mean ("mean").
    """
    probs = np.asarray(per_anchor_probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"need a K x c probability matrix, got shape {probs.shape}")
    if decision_rule not in ("calibrated", "mean"):
        raise ValueError(f"unknown decision rule {decision_rule!r}")
    k = probs.shape[0]
    mean = probs.mean(axis=0)
    if k == 1:
        logger.debug("single anchor: std defined as 0")
        std = np.zeros_like(mean)
    else:
        # center on the first row so identical rows give exactly zero spread
        std = (probs - probs[0]).std(axis=0, ddof=1)
    calibrated = mean * (1.0 - std)
    scores = calibrated if decision_rule == "calibrated" else mean
    pred = int(np.argmax(scores))
    return PredictionSummary(
        per_anchor_probs=probs,
        mean_probs=mean,
        std_probs=std,
        calibrated_scores=calibrated,
        predicted_class=pred,
        confidence=float(scores[pred]),
        decision_rule=decision_rule,
    )


def infer_with_anchors(
    model_config: GnnConfig,
    params: dict[str, Tensor],
    anchor_cfg: AnchorConfig,
    anchor_set: FixedAnchorSet,
    batch: GraphBatch,
    decision_rule: str = "calibrated",
) -> list[PredictionSummary]:
    """K anchored eval forwards per graph, aggregated into prediction summaries."""
    if anchor_set.variant != anchor_cfg.variant:
        raise ValueError(
            f"anchor set variant {anchor_set.variant!r} does not match config "
            f"{anchor_cfg.variant!r}"
        )
    stacks = []
    for k in range(anchor_set.k):
        inject = FixedAnchorInjection(anchor_cfg, anchor_set.anchors[k])
        logits = forward_logits(model_config, params, batch, mode="eval", inject=inject)
        stacks.append(softmax_rows(logits.values))
    all_probs = np.stack(stacks, axis=0)  # K x B x c
    return [
        summarize_anchor_probs(all_probs[:, b, :], decision_rule=decision_rule)
        for b in range(batch.num_graphs)
    ]


# ---------------------------------------------------------------------------
# pretrained conversion
# ---------------------------------------------------------------------------

def convert_pretrained(
    model_config: GnnConfig,
    trained_params: dict[str, Tensor],
    num_classes: int,
    rng: RngStream,
) -> tuple[dict[str, Tensor], list[str]]:
    """Freeze a trained trunk and attach a fresh head sized for anchor pairs.

    Returns the new parameter dict (trunk tensors copied with gradients
    disabled, head reinitialized at twice the readout width) and the list of
    names that remain trainable.
    """
    new_params: dict[str, Tensor] = {}
    for name, tensor in trained_params.items():
        if name.startswith("head"):
            continue
        frozen = Tensor(tensor.values.copy(), requires_grad=False)
        new_params[name] = frozen
    head = init_head_params(model_config, 2 * model_config.hidden_dim, num_classes, rng)
    new_params.update(head)
    return new_params, list(head.keys())
