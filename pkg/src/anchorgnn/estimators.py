"""Scikit-learn style graph classifiers.

All estimators take a list of ``Graph`` objects as X. Labels come from the
graphs themselves unless ``y`` is passed explicitly. Training is fully
deterministic given the ``seed`` parameter; every source of randomness
(initialization, minibatch order, dropout, anchor draws) runs on its own
derived stream.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_graphs, resolve_labels
from .anchoring import (
    AnchorConfig,
    PredictionSummary,
    TrainAnchorInjection,
    convert_pretrained,
    fit_anchor_gaussian,
    freeze_anchor_set,
    infer_with_anchors,
    summarize_anchor_probs,
)
from .graphs import Graph, batch_graphs
from .models import GnnConfig, forward_logits, init_params
from .rng import RngStream
from .tensor import (
    Tensor,
    adam_init,
    adam_step,
    backward,
    softmax_cross_entropy,
    softmax_rows,
    zero_grads,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TrainingDivergedError",
    "GnnGraphClassifier",
    "AnchoredGnnClassifier",
    "PretrainedAnchoredGnnClassifier",
    "train_parameters",
]


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


def train_parameters(
    config: GnnConfig,
    params: dict[str, Tensor],
    graphs: list[Graph],
    labels: np.ndarray,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    order_rng: RngStream,
    dropout_rng: RngStream,
    inject=None,
    trainable: list[str] | None = None,
) -> list[float]:
    """Minibatch Adam training loop; returns per-epoch mean losses."""
    if trainable is None:
        trainable_params = {k: v for k, v in params.items() if v.requires_grad}
    else:
        trainable_params = {k: params[k] for k in trainable}
    state = adam_init(trainable_params, lr=learning_rate)
    n = len(graphs)
    history = []
    for _ in range(epochs):
        order = order_rng.permutation(n)
        epoch_loss = 0.0
        steps = 0
        starts = list(range(0, n, batch_size))
        # merge a trailing singleton into the previous batch: in-batch shuffling
        # needs at least two rows to pair
        if len(starts) > 1 and n - starts[-1] == 1:
            starts.pop()
        for i, start in enumerate(starts):
            stop = starts[i + 1] if i + 1 < len(starts) else n
            idx = order[start:stop]
            batch = batch_graphs([graphs[i] for i in idx])
            batch.labels = labels[idx]
            try:
                logits = forward_logits(config, params, batch, mode="train",
                                        rng=dropout_rng, inject=inject)
                loss, _ = softmax_cross_entropy(logits, batch.labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergedError(f"loss became {value}")
                zero_grads(trainable_params.values())
                backward(loss)
                adam_step(trainable_params, state)
            except FloatingPointError as exc:
                # non-finite activations or gradients mid-step are divergence
                raise TrainingDivergedError(str(exc)) from exc
            epoch_loss += value
            steps += 1
        history.append(epoch_loss / max(steps, 1))
    return history


class _GnnBase(BaseEstimator, ClassifierMixin):
    """Shared config plumbing for the GNN estimators."""

    def _gnn_config(self) -> GnnConfig:
        return GnnConfig(
            backbone=self.backbone,
            num_mp_layers=self.num_mp_layers,
            hidden_dim=self.hidden_dim,
            readout=self.readout,
            mlp_depth=self.mlp_depth,
            gin_epsilon=self.gin_epsilon,
            dropout_rate=self.dropout_rate,
        )

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, graphs):
        proba = self.predict_proba(graphs)
        return np.argmax(proba, axis=1)

    def score(self, graphs, y=None):
        graphs = check_graphs(graphs)
        labels = resolve_labels(graphs, y)
        return float(np.mean(self.predict(graphs) == labels))


class GnnGraphClassifier(_GnnBase):
    """Plain (non-anchored) graph classifier; also the trunk for the baselines."""

    def __init__(self, backbone="gin", num_mp_layers=3, hidden_dim=64, readout="mean",
                 mlp_depth=2, gin_epsilon=0.0, dropout_rate=0.0, epochs=100,
                 learning_rate=1e-3, batch_size=32, seed=0):
        self.backbone = backbone
        self.num_mp_layers = num_mp_layers
        self.hidden_dim = hidden_dim
        self.readout = readout
        self.mlp_depth = mlp_depth
        self.gin_epsilon = gin_epsilon
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, graphs, y=None):
        graphs = check_graphs(graphs)
        labels = resolve_labels(graphs, y)
        config = self._gnn_config()
        root = RngStream(self.seed)
        init_rng, order_rng, dropout_rng = root.split(), root.split(), root.split()
        n_classes = int(labels.max()) + 1
        params = init_params(config, graphs[0].feature_dim, n_classes, init_rng)
        self.loss_history_ = train_parameters(
            config, params, graphs, labels,
            epochs=self.epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, order_rng=order_rng, dropout_rng=dropout_rng,
        )
        self.params_ = params
        self.config_ = config
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = graphs[0].feature_dim
        return self

    def decision_function(self, graphs) -> np.ndarray:
        self._check_fitted()
        graphs = check_graphs(graphs)
        batch = batch_graphs(graphs)
        return forward_logits(self.config_, self.params_, batch, mode="eval").values

    def predict_proba(self, graphs) -> np.ndarray:
        return softmax_rows(self.decision_function(graphs))

    def confidence_scores(self, graphs) -> np.ndarray:
        """Maximum softmax probability per graph."""
        return self.predict_proba(graphs).max(axis=1)


class AnchoredGnnClassifier(_GnnBase):
    """Graph classifier trained with stochastic anchoring.

    ``variant`` selects the injection site ("input", "mpnn", "readout");
    training draws a fresh anchor assignment per batch, inference aggregates
    ``n_anchors`` frozen anchors into mean/spread/modulated-score summaries.
    The anchored layer's input width is doubled; all other widths match the
    plain model. ``extra_epochs`` extends training relative to the plain
    model, since the stochastic pairs converge more slowly.

    ``decision_rule`` picks whether predictions and confidences come from the
    spread-modulated scores ("calibrated", default) or the raw anchor mean
    ("mean"). ``anchor_mode="self"`` is a diagnostic mode where every row
    anchors on itself (pairs become [0, x]), making training deterministic.
    """

    def __init__(self, variant="readout", anchor_layer=1, n_anchors=10,
                 decision_rule="calibrated", anchor_mode="shuffle",
                 backbone="gin", num_mp_layers=3, hidden_dim=64, readout="mean",
                 mlp_depth=2, gin_epsilon=0.0, dropout_rate=0.0, epochs=100,
                 extra_epochs=50, learning_rate=1e-3, batch_size=32, seed=0):
        self.variant = variant
        self.anchor_layer = anchor_layer
        self.n_anchors = n_anchors
        self.decision_rule = decision_rule
        self.anchor_mode = anchor_mode
        self.backbone = backbone
        self.num_mp_layers = num_mp_layers
        self.hidden_dim = hidden_dim
        self.readout = readout
        self.mlp_depth = mlp_depth
        self.gin_epsilon = gin_epsilon
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.extra_epochs = extra_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def _anchor_config(self) -> AnchorConfig:
        return AnchorConfig(variant=self.variant, k=self.n_anchors, layer=self.anchor_layer)

    def fit(self, graphs, y=None, validation_graphs=None):
        """Train with per-batch stochastic anchors, then freeze inference anchors.

        Hidden variants draw their frozen anchors from ``validation_graphs``;
        when none are supplied the training graphs are used instead (logged).
        """
        if self.anchor_mode not in ("shuffle", "self"):
            raise ValueError(f"unknown anchor_mode {self.anchor_mode!r}")
        if self.anchor_mode == "self" and self.variant == "input":
            raise ValueError("self-anchoring is a hidden-variant diagnostic (mpnn/readout)")
        graphs = check_graphs(graphs)
        labels = resolve_labels(graphs, y)
        config = self._gnn_config()
        anchor_cfg = self._anchor_config()
        anchor_cfg.check_against(config)
        if anchor_cfg.variant == "pretrained_readout":
            raise ValueError("use PretrainedAnchoredGnnClassifier for the pretrained variant")

        root = RngStream(self.seed)
        init_rng, order_rng, dropout_rng = root.split(), root.split(), root.split()
        train_anchor_rng, freeze_rng = root.split(), root.split()

        n_classes = int(labels.max()) + 1
        params = init_params(config, graphs[0].feature_dim, n_classes, init_rng,
                             anchor_variant=anchor_cfg.variant, anchor_layer=anchor_cfg.layer)

        dist = None
        if anchor_cfg.variant == "input":
            dist = fit_anchor_gaussian(graphs)
        inject = TrainAnchorInjection(anchor_cfg, train_anchor_rng, dist=dist,
                                      self_anchor=self.anchor_mode == "self")
        self.loss_history_ = train_parameters(
            config, params, graphs, labels,
            epochs=self.epochs + self.extra_epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, order_rng=order_rng, dropout_rng=dropout_rng,
            inject=inject,
        )

        if self.anchor_mode == "self":
            # self-anchored diagnostics predict with C = x as well; there is no
            # frozen anchor set to draw
            self.anchor_set_ = None
        else:
            anchor_source = validation_graphs
            if anchor_cfg.variant != "input" and not validation_graphs:
                logger.info("no validation graphs supplied; drawing anchors from training graphs")
                anchor_source = graphs
            self.anchor_set_ = freeze_anchor_set(
                anchor_cfg, freeze_rng, dist=dist, validation_graphs=anchor_source,
                model_config=config, params=params,
            )
        self.params_ = params
        self.config_ = config
        self.anchor_config_ = anchor_cfg
        self.anchor_distribution_ = dist
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = graphs[0].feature_dim
        return self

    def predict_summaries(self, graphs) -> list[PredictionSummary]:
        self._check_fitted()
        graphs = check_graphs(graphs)
        batch = batch_graphs(graphs)
        if self.anchor_mode == "self":
            inject = TrainAnchorInjection(self.anchor_config_, rng=None,
                                          dist=self.anchor_distribution_, self_anchor=True)
            logits = forward_logits(self.config_, self.params_, batch, mode="eval",
                                    inject=inject)
            probs = softmax_rows(logits.values)
            return [summarize_anchor_probs(probs[b:b + 1], decision_rule=self.decision_rule)
                    for b in range(batch.num_graphs)]
        return infer_with_anchors(self.config_, self.params_, self.anchor_config_,
                                  self.anchor_set_, batch, decision_rule=self.decision_rule)

    def predict_proba(self, graphs) -> np.ndarray:
        """Anchor-mean probabilities (valid probability rows)."""
        return np.stack([s.mean_probs for s in self.predict_summaries(graphs)])

    def predict(self, graphs) -> np.ndarray:
        return np.array([s.predicted_class for s in self.predict_summaries(graphs)])

    def confidence_scores(self, graphs) -> np.ndarray:
        """Confidence under the configured decision rule (modulated by default)."""
        return np.array([s.confidence for s in self.predict_summaries(graphs)])


class PretrainedAnchoredGnnClassifier(_GnnBase):
    """Readout anchoring on a frozen pretrained trunk; only the head is trained.

    ``base`` is a fitted ``GnnGraphClassifier`` whose message-passing and
    readout parameters are frozen; its head is discarded and a fresh one sized
    for query/anchor pairs is trained for ``head_epochs``.
    """

    def __init__(self, base=None, n_anchors=10, decision_rule="calibrated",
                 head_epochs=150, learning_rate=1e-3, batch_size=32, seed=0):
        self.base = base
        self.n_anchors = n_anchors
        self.decision_rule = decision_rule
        self.head_epochs = head_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, graphs, y=None, validation_graphs=None):
        if self.base is None or not hasattr(self.base, "params_"):
            raise ValueError("base must be a fitted GnnGraphClassifier")
        graphs = check_graphs(graphs)
        labels = resolve_labels(graphs, y)
        config = self.base.config_
        n_classes = len(self.base.classes_)
        anchor_cfg = AnchorConfig(variant="pretrained_readout", k=self.n_anchors)

        root = RngStream(self.seed)
        head_rng, order_rng, dropout_rng = root.split(), root.split(), root.split()
        train_anchor_rng, freeze_rng = root.split(), root.split()

        params, trainable = convert_pretrained(config, self.base.params_, n_classes, head_rng)
        inject = TrainAnchorInjection(anchor_cfg, train_anchor_rng)
        self.loss_history_ = train_parameters(
            config, params, graphs, labels,
            epochs=self.head_epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, order_rng=order_rng, dropout_rng=dropout_rng,
            inject=inject, trainable=trainable,
        )

        anchor_source = validation_graphs if validation_graphs else graphs
        self.anchor_set_ = freeze_anchor_set(
            anchor_cfg, freeze_rng, validation_graphs=anchor_source,
            model_config=config, params=params,
        )
        self.params_ = params
        self.config_ = config
        self.anchor_config_ = anchor_cfg
        self.trainable_names_ = trainable
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = graphs[0].feature_dim
        return self

    def predict_summaries(self, graphs) -> list[PredictionSummary]:
        self._check_fitted()
        graphs = check_graphs(graphs)
        batch = batch_graphs(graphs)
        return infer_with_anchors(self.config_, self.params_, self.anchor_config_,
                                  self.anchor_set_, batch, decision_rule=self.decision_rule)

    def predict_proba(self, graphs) -> np.ndarray:
        return np.stack([s.mean_probs for s in self.predict_summaries(graphs)])

    def predict(self, graphs) -> np.ndarray:
        return np.array([s.predicted_class for s in self.predict_summaries(graphs)])

    def confidence_scores(self, graphs) -> np.ndarray:
        return np.array([s.confidence for s in self.predict_summaries(graphs)])
