"""Configuration-driven experiment runner.

A config file is flat ``key = value`` text: keys before any section header
describe the model/method/training grid, and ``[data]``, ``[anchor]``,
``[mcd]``, ``[ensemble]`` sections hold the corresponding parameters. ``#``
starts a comment. Every run is a pure function of (config, seed): datasets,
training, anchor draws, and reports are all derived from explicit streams, so
re-running a config reproduces its CSV outputs byte for byte.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .anchoring import AnchorConfig, FixedAnchorSet
from .baselines import (
    DeepEnsembleClassifier,
    MCDropoutClassifier,
    TemperatureScaledClassifier,
    TempScaleState,
)
from .datasets import (
    DatasetSplit,
    MotifSpec,
    gaussian_feature_shift,
    generate_motif_dataset,
    size_quantile_split,
)
from .estimators import (
    AnchoredGnnClassifier,
    GnnGraphClassifier,
    PretrainedAnchoredGnnClassifier,
    TrainingDivergedError,
)
from .graphs import Graph, load_dataset
from .metrics import (
    EvalRecord,
    accuracy,
    auroc,
    ece,
    fit_gep_threshold,
    gep_error,
    records_to_csv,
)
from .models import GnnConfig
from .rng import RngStream
from .tensor import params_from_records, params_to_records

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "MetricsReport",
    "RunRecord",
    "parse_config",
    "load_config",
    "build_dataset",
    "run_experiment",
    "emit_report",
    "compare_methods",
    "evaluate_checkpoint",
    "OUTPUT_ROOT_ENV",
]

OUTPUT_ROOT_ENV = "ANCHORGNN_OUTPUT_ROOT"

METHODS = (
    "vanilla", "temp", "mcd", "deep_ens",
    "anchor_input", "anchor_mpnn", "anchor_readout", "anchor_pretrained",
)

_MAIN_SCHEMA = {
    "method": (str, "vanilla"),
    "backbone": (str, "gin"),
    "num_mp_layers": (int, 3),
    "hidden_dim": (int, 64),
    "readout": (str, "mean"),
    "mlp_depth": (int, 2),
    "gin_epsilon": (float, 0.0),
    "dropout_rate": (float, 0.0),
    "epochs": (int, 100),
    "learning_rate": (float, 1e-3),
    "batch_size": (int, 32),
    "seeds": ("intlist", [0, 1, 2]),
    "output_dir": (str, "runs/experiment"),
}

_DATA_SCHEMA = {
    "source": (str, "motif"),
    "path": (str, ""),
    "n_graphs": (int, 400),
    "shift": (str, "none"),
    "bases": (str, "path,cycle,star,tree"),
    "motifs": (str, "triangle,square,house"),
    "basis_size_min": (int, 8),
    "basis_size_max": (int, 16),
    "ood_basis_size_min": (int, 0),
    "ood_basis_size_max": (int, 0),
    "held_out_bases": (str, ""),
    "rho": (float, 0.0),
    "feature_dim": (int, 2),
    "feature_scale": (float, 0.05),
    "data_seed": (int, 7),
    "val_fraction": (float, 0.1),
    "train_quantile": (float, 0.5),
    "eval_quantile": (float, 0.9),
    "feature_shift_delta": (float, 0.0),
    "feature_shift_scale": (float, 1.0),
}

_ANCHOR_SCHEMA = {
    "k": (int, 10),
    "layer": (int, 1),
    "extra_epochs": (int, 50),
    "decision_rule": (str, "calibrated"),
}

_MCD_SCHEMA = {
    "samples": (int, 10),
    "active_sites": (str, ""),
}

_ENSEMBLE_SCHEMA = {
    "members": (int, 5),
}

_SECTION_SCHEMAS = {
    "main": _MAIN_SCHEMA,
    "data": _DATA_SCHEMA,
    "anchor": _ANCHOR_SCHEMA,
    "mcd": _MCD_SCHEMA,
    "ensemble": _ENSEMBLE_SCHEMA,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Parsed, default-filled experiment description."""

    main: dict
    data: dict
    anchor: dict
    mcd: dict
    ensemble: dict

    @property
    def method(self) -> str:
        return self.main["method"]

    @property
    def seeds(self) -> list[int]:
        return self.main["seeds"]

    def gnn_config(self) -> GnnConfig:
        m = self.main
        return GnnConfig(
            backbone=m["backbone"], num_mp_layers=m["num_mp_layers"],
            hidden_dim=m["hidden_dim"], readout=m["readout"], mlp_depth=m["mlp_depth"],
            gin_epsilon=m["gin_epsilon"], dropout_rate=m["dropout_rate"],
        )

    def canonical_text(self) -> str:
        """Default-filled key=value rendering, stable under input reordering."""
        chunks = []
        for section in ("main", "data", "anchor", "mcd", "ensemble"):
            values = getattr(self, section)
            for key in sorted(values):
                v = values[key]
                if isinstance(v, list):
                    v = ",".join(str(x) for x in v)
                chunks.append(f"{section}.{key}={v}")
        return "\n".join(chunks) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def _coerce(section: str, key: str, raw: str):
    schema = _SECTION_SCHEMAS[section]
    if key not in schema:
        raise ConfigError(f"unknown key {key!r} in [{section}] section")
    kind, _ = schema[key]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "intlist":
            return [int(tok) for tok in raw.split(",") if tok.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {section}.{key} value {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    # strict=False merges repeated sections (later keys win)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), strict=False)
    parser.optionxform = str.lower
    try:
        parser.read_string("[main]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    sections = {}
    for name, schema in _SECTION_SCHEMAS.items():
        sections[name] = {key: default for key, (_, default) in schema.items()}
    for section in parser.sections():
        if section not in _SECTION_SCHEMAS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            sections[section][key] = _coerce(section, key, raw)

    cfg = ExperimentConfig(
        main=sections["main"], data=sections["data"], anchor=sections["anchor"],
        mcd=sections["mcd"], ensemble=sections["ensemble"],
    )
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; known: {METHODS}")
    if not cfg.seeds:
        raise ConfigError("seeds must be nonempty")
    if cfg.method == "anchor_mpnn" and not (1 <= cfg.anchor["layer"] <= cfg.main["num_mp_layers"]):
        raise ConfigError(
            f"anchor layer {cfg.anchor['layer']} invalid for "
            f"{cfg.main['num_mp_layers']} message-passing layers"
        )
    if cfg.method == "mcd" and cfg.main["dropout_rate"] <= 0.0:
        raise ConfigError("method=mcd requires dropout_rate > 0")
    cfg.gnn_config()  # validates backbone fields
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# dataset construction
# ---------------------------------------------------------------------------

def _motif_spec(data: dict) -> MotifSpec:
    ood_range = None
    if data["ood_basis_size_min"] and data["ood_basis_size_max"]:
        ood_range = (data["ood_basis_size_min"], data["ood_basis_size_max"])
    return MotifSpec(
        basis_kinds=data["bases"],
        motif_kinds=data["motifs"],
        basis_size_range=(data["basis_size_min"], data["basis_size_max"]),
        ood_basis_size_range=ood_range,
        held_out_bases=data["held_out_bases"],
        label_basis_correlation=data["rho"],
        feature_dim=data["feature_dim"],
        feature_scale=data["feature_scale"],
    )


def _index_split(n: int, val_fraction: float) -> DatasetSplit:
    # deterministic round-robin split for file datasets without a size shift
    test_ood = [i for i in range(n) if i % 10 == 9]
    test_id = [i for i in range(n) if i % 10 == 8]
    rest = [i for i in range(n) if i % 10 < 8]
    n_val = int(round(val_fraction * len(rest)))
    val = rest[:n_val]
    train = rest[n_val:]
    return DatasetSplit(train, val, test_id, test_ood, kind="index",
                        params={"val_fraction": val_fraction})


def build_dataset(cfg: ExperimentConfig) -> tuple[list[Graph], DatasetSplit, str]:
    """Materialize the graph store and split; returns (graphs, split, dataset_hash)."""
    data = cfg.data
    shift = data["shift"]
    if data["source"] == "motif":
        spec = _motif_spec(data)
        rng = RngStream(data["data_seed"])
        if shift == "size":
            graphs, _ = generate_motif_dataset(spec, data["n_graphs"], rng, shift="none")
            split = size_quantile_split(
                graphs, data["train_quantile"], data["eval_quantile"], data["val_fraction"]
            )
        else:
            graphs, split = generate_motif_dataset(spec, data["n_graphs"], rng, shift=shift)
    elif data["source"] == "file":
        if not data["path"]:
            raise ConfigError("data.source=file requires data.path")
        graphs = load_dataset(data["path"])
        if shift == "size":
            split = size_quantile_split(
                graphs, data["train_quantile"], data["eval_quantile"], data["val_fraction"]
            )
        elif shift == "none":
            split = _index_split(len(graphs), data["val_fraction"])
        else:
            raise ConfigError(f"file datasets support shift in ('none', 'size'), got {shift!r}")
    else:
        raise ConfigError(f"unknown data source {data['source']!r}")

    delta, scale = data["feature_shift_delta"], data["feature_shift_scale"]
    if delta != 0.0 or scale != 1.0:
        ood_graphs = gaussian_feature_shift(
            [graphs[i] for i in split.test_ood], delta, scale
        )
        graphs = list(graphs)
        for i, g in zip(split.test_ood, ood_graphs):
            graphs[i] = g

    split.validate(len(graphs))
    digest = hashlib.sha256()
    buf = io.StringIO()
    _write_dataset_to(buf, graphs)
    digest.update(buf.getvalue().encode())
    digest.update(json.dumps({
        "train": split.train, "val": split.val,
        "test_id": split.test_id, "test_ood": split.test_ood,
    }).encode())
    return graphs, split, digest.hexdigest()[:16]


def _write_dataset_to(buf: io.StringIO, graphs: list[Graph]) -> None:
    # mirrors graphs.save_dataset without touching the filesystem
    if graphs:
        num_classes = max(g.label for g in graphs) + 1
        buf.write(f"{len(graphs)} {graphs[0].feature_dim} {num_classes}\n")
        for g in graphs:
            undirected = g.undirected_edges()
            buf.write(f"{g.num_nodes} {len(undirected)} {g.label}\n")
            for row in g.node_features:
                buf.write(" ".join(repr(float(x)) for x in row) + "\n")
            for s, d in undirected:
                buf.write(f"{s} {d}\n")
    else:
        buf.write("0 0 0\n")


# ---------------------------------------------------------------------------
# per-run training and evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """The per-split safety metrics reported for every run."""

    id_accuracy: float
    ood_accuracy: float
    id_ece: float
    ood_ece: float
    ood_auroc: float
    id_gep_mae: float
    ood_gep_mae: float

    FIELDS = ("id_accuracy", "ood_accuracy", "id_ece", "ood_ece",
              "ood_auroc", "id_gep_mae", "ood_gep_mae")

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


@dataclass
class RunRecord:
    """Outcome of one (config, seed) execution; wall time excluded from equality."""

    method: str
    seed: int
    config_hash: str
    dataset_hash: str
    report: MetricsReport
    checkpoint_path: str
    wall_time: float = field(default=0.0, compare=False)


def _base_kwargs(cfg: ExperimentConfig, seed: int) -> dict:
    m = cfg.main
    return dict(
        backbone=m["backbone"], num_mp_layers=m["num_mp_layers"],
        hidden_dim=m["hidden_dim"], readout=m["readout"], mlp_depth=m["mlp_depth"],
        gin_epsilon=m["gin_epsilon"], dropout_rate=m["dropout_rate"],
        epochs=m["epochs"], learning_rate=m["learning_rate"],
        batch_size=m["batch_size"], seed=seed,
    )


def _fit_method(cfg: ExperimentConfig, seed: int, train_graphs, val_graphs):
    method = cfg.method
    base_kwargs = _base_kwargs(cfg, seed)
    if method == "vanilla":
        return GnnGraphClassifier(**base_kwargs).fit(train_graphs)
    if method == "temp":
        return TemperatureScaledClassifier(GnnGraphClassifier(**base_kwargs)).fit(
            train_graphs, validation_graphs=val_graphs
        )
    if method == "mcd":
        active = cfg.mcd["active_sites"]
        sites = [tok == "1" for tok in active.split(",")] if active else None
        return MCDropoutClassifier(
            n_samples=cfg.mcd["samples"], sample_seed=seed, active_sites=sites,
            **base_kwargs,
        ).fit(train_graphs)
    if method == "deep_ens":
        return DeepEnsembleClassifier(n_members=cfg.ensemble["members"], **base_kwargs).fit(
            train_graphs
        )
    if method in ("anchor_input", "anchor_mpnn", "anchor_readout"):
        variant = method.removeprefix("anchor_")
        return AnchoredGnnClassifier(
            variant=variant, anchor_layer=cfg.anchor["layer"], n_anchors=cfg.anchor["k"],
            decision_rule=cfg.anchor["decision_rule"], extra_epochs=cfg.anchor["extra_epochs"],
            **base_kwargs,
        ).fit(train_graphs, validation_graphs=val_graphs)
    if method == "anchor_pretrained":
        base = GnnGraphClassifier(**base_kwargs).fit(train_graphs)
        return PretrainedAnchoredGnnClassifier(
            base=base, n_anchors=cfg.anchor["k"], decision_rule=cfg.anchor["decision_rule"],
            head_epochs=cfg.main["epochs"] + cfg.anchor["extra_epochs"],
            learning_rate=cfg.main["learning_rate"], batch_size=cfg.main["batch_size"],
            seed=seed,
        ).fit(train_graphs, validation_graphs=val_graphs)
    raise ConfigError(f"unknown method {method!r}")


def _score_split(estimator, graphs, tag: str) -> list[EvalRecord]:
    conf = estimator.confidence_scores(graphs)
    pred = estimator.predict(graphs)
    return [
        EvalRecord(float(c), int(p), g.label, tag)
        for c, p, g in zip(conf, pred, graphs)
    ]


def _compute_report(val_records, id_records, ood_records) -> MetricsReport:
    threshold = fit_gep_threshold(val_records)
    id_acc = accuracy(id_records)
    ood_acc = accuracy(ood_records)
    return MetricsReport(
        id_accuracy=id_acc,
        ood_accuracy=ood_acc,
        id_ece=ece(id_records),
        ood_ece=ece(ood_records),
        ood_auroc=auroc([r.confidence for r in id_records],
                        [r.confidence for r in ood_records]),
        id_gep_mae=gep_error(id_records, id_acc, threshold.tau),
        ood_gep_mae=gep_error(ood_records, ood_acc, threshold.tau),
    )


def _checkpoint_records(estimator) -> tuple[list[dict], dict]:
    """Flatten any fitted estimator into (name, shape, values) records + metadata."""
    extra: dict = {}
    if isinstance(estimator, DeepEnsembleClassifier):
        records = []
        for i, member in enumerate(estimator.members_):
            for rec in params_to_records(member.params_):
                records.append({**rec, "name": f"member{i}/{rec['name']}"})
        extra["n_members"] = len(estimator.members_)
        return records, extra
    if isinstance(estimator, TemperatureScaledClassifier):
        extra["temperature"] = estimator.state_.temperature
        extra["val_nll_before"] = estimator.state_.val_nll_before
        extra["val_nll_after"] = estimator.state_.val_nll_after
        return params_to_records(estimator.base.params_), extra
    return params_to_records(estimator.params_), extra


def resolve_output_dir(cfg: ExperimentConfig) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    out = cfg.main["output_dir"]
    return os.path.join(root, out) if root else out


def run_experiment(cfg: ExperimentConfig, output_dir: str | None = None) -> list[RunRecord]:
    """Train and evaluate the configured method once per seed; persist artifacts.

    Per seed: build the (seed-independent) dataset and split, assert split
    disjointness, train per the method recipe, tune the coverage threshold on
    validation only, evaluate all safety metrics on test-id and test-ood, and
    write the eval records, metrics row, and checkpoint.
    """
    output_dir = output_dir or resolve_output_dir(cfg)
    os.makedirs(output_dir, exist_ok=True)
    graphs, split, dataset_hash = build_dataset(cfg)
    split.validate(len(graphs))

    with open(os.path.join(output_dir, "config_canonical.txt"), "w") as fh:
        fh.write(cfg.canonical_text())

    train_graphs = [graphs[i] for i in split.train]
    val_graphs = [graphs[i] for i in split.val]
    id_graphs = [graphs[i] for i in split.test_id]
    ood_graphs = [graphs[i] for i in split.test_ood]
    if not val_graphs or not id_graphs or not ood_graphs:
        raise ConfigError(
            f"split produced an empty pool (val={len(val_graphs)}, "
            f"id={len(id_graphs)}, ood={len(ood_graphs)})"
        )

    runs = []
    failed: dict[str, str] = {}
    for seed in cfg.seeds:
        started = time.perf_counter()
        try:
            estimator = _fit_method(cfg, seed, train_graphs, val_graphs)
        except TrainingDivergedError as exc:
            # the seed is recorded as failed and the remaining seeds still run
            logger.warning("seed %d diverged: %s", seed, exc)
            failed[str(seed)] = str(exc)
            continue
        val_records = _score_split(estimator, val_graphs, "val")
        id_records = _score_split(estimator, id_graphs, "id")
        ood_records = _score_split(estimator, ood_graphs, "ood")
        report = _compute_report(val_records, id_records, ood_records)
        wall = time.perf_counter() - started

        records_to_csv(val_records + id_records + ood_records,
                       os.path.join(output_dir, f"records_seed{seed}.csv"))
        ckpt_name = f"checkpoint_seed{seed}.json"
        records, extra = _checkpoint_records(estimator)
        extra.update({
            "method": cfg.method,
            "seed": seed,
            "config_hash": cfg.config_hash(),
            "config": {s: getattr(cfg, s) for s in ("main", "data", "anchor", "mcd", "ensemble")},
            "n_classes": int(len(estimator.classes_)),
        })
        _write_json_atomic(os.path.join(output_dir, ckpt_name), {
            "format": "anchorgnn-params", "version": 1, "params": records, "extra": extra,
        })
        anchor_set = getattr(estimator, "anchor_set_", None)
        if anchor_set is not None:
            anchor_set.save(os.path.join(output_dir, f"anchors_seed{seed}.json"))

        runs.append(RunRecord(
            method=cfg.method, seed=seed, config_hash=cfg.config_hash(),
            dataset_hash=dataset_hash, report=report, checkpoint_path=ckpt_name,
            wall_time=wall,
        ))
    emit_report(runs, output_dir, failed_seeds=failed)
    return runs


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

_METRICS_CSV_FIELDS = ["method", "seed", "config_hash", "dataset_hash",
                       *MetricsReport.FIELDS, "checkpoint"]


def _write_json_atomic(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    os.replace(tmp, path)


def emit_report(runs: list[RunRecord], output_dir: str,
                failed_seeds: dict[str, str] | None = None) -> None:
    """One metrics CSV per run plus an aggregate JSON (atomic overwrite).

    The CSVs contain no timing information, so identical (config, seed) pairs
    reproduce them byte for byte; wall times live in the aggregate JSON only.
    """
    os.makedirs(output_dir, exist_ok=True)
    for run in runs:
        path = os.path.join(output_dir, f"metrics_seed{run.seed}.csv")
        row = [run.method, str(run.seed), run.config_hash, run.dataset_hash]
        row += [repr(getattr(run.report, f)) for f in MetricsReport.FIELDS]
        row.append(run.checkpoint_path)
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(",".join(_METRICS_CSV_FIELDS) + "\n")
            fh.write(",".join(row) + "\n")
        os.replace(tmp, path)

    aggregate = {
        "schema_version": 1,
        "method": runs[0].method if runs else "",
        "config_hash": runs[0].config_hash if runs else "",
        "dataset_hash": runs[0].dataset_hash if runs else "",
        "seeds": [r.seed for r in runs],
        "failed_seeds": failed_seeds or {},
        "per_seed": {str(r.seed): r.report.as_dict() for r in runs},
        "wall_times": {str(r.seed): r.wall_time for r in runs},
        "mean": {},
        "std": {},
    }
    for metric in MetricsReport.FIELDS:
        values = np.array([getattr(r.report, metric) for r in runs], dtype=np.float64)
        if values.size:
            aggregate["mean"][metric] = float(values.mean())
            aggregate["std"][metric] = float(values.std(ddof=1)) if values.size > 1 else 0.0
    _write_json_atomic(os.path.join(output_dir, "aggregate.json"), aggregate)


def load_run_record(path: str) -> RunRecord:
    """Inverse of the per-run metrics CSV emitted by ``emit_report``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != _METRICS_CSV_FIELDS:
            raise ValueError(f"unexpected metrics CSV header in {path}")
        row = fh.readline().strip().split(",")
    fields = dict(zip(header, row))
    report = MetricsReport(**{f: float(fields[f]) for f in MetricsReport.FIELDS})
    return RunRecord(
        method=fields["method"], seed=int(fields["seed"]),
        config_hash=fields["config_hash"], dataset_hash=fields["dataset_hash"],
        report=report, checkpoint_path=fields["checkpoint"],
    )


_HIGHER_BETTER = {"id_accuracy": True, "ood_accuracy": True, "id_ece": False,
                  "ood_ece": False, "ood_auroc": True, "id_gep_mae": False,
                  "ood_gep_mae": False}


def compare_methods(method_runs: dict[str, list[RunRecord]]) -> tuple[str, str]:
    """Aggregate runs per method into a comparison table.

    Returns (csv_text, aligned_text). All run groups must share a dataset hash;
    the best entry per metric column is flagged (ties flag every winner).
    """
    if len(method_runs) < 1:
        raise ValueError("nothing to compare")
    hashes = {r.dataset_hash for runs in method_runs.values() for r in runs}
    if len(hashes) > 1:
        raise ValueError(f"refusing to compare runs over different datasets: {sorted(hashes)}")

    stats: dict[str, dict[str, tuple[float, float]]] = {}
    for method, runs in method_runs.items():
        stats[method] = {}
        for metric in MetricsReport.FIELDS:
            values = np.array([getattr(r.report, metric) for r in runs], dtype=np.float64)
            mean = float(values.mean())
            std = float(values.std(ddof=1)) if values.size > 1 else 0.0
            stats[method][metric] = (mean, std)

    best: dict[str, set[str]] = {m: set() for m in stats}
    for metric in MetricsReport.FIELDS:
        means = {m: stats[m][metric][0] for m in stats}
        target = max(means.values()) if _HIGHER_BETTER[metric] else min(means.values())
        for m, value in means.items():
            if value == target:
                best[m].add(metric)

    csv_lines = ["method," + ",".join(
        f"{metric}_mean,{metric}_std" for metric in MetricsReport.FIELDS) + ",best"]
    for method in sorted(stats):
        cells = [method]
        for metric in MetricsReport.FIELDS:
            mean, std = stats[method][metric]
            cells += [repr(mean), repr(std)]
        cells.append(";".join(sorted(best[method])))
        csv_lines.append(",".join(cells))
    csv_text = "\n".join(csv_lines) + "\n"

    width = max(len(m) for m in stats) + 2
    header = "method".ljust(width) + "  ".join(f"{metric:>18}" for metric in MetricsReport.FIELDS)
    text_lines = [header]
    for method in sorted(stats):
        cells = []
        for metric in MetricsReport.FIELDS:
            mean, std = stats[method][metric]
            flag = "*" if metric in best[method] else " "
            cells.append(f"{mean:.4f}±{std:.4f}{flag}".rjust(18))
        text_lines.append(method.ljust(width) + "  ".join(cells))
    return csv_text, "\n".join(text_lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoint re-evaluation
# ---------------------------------------------------------------------------

def _rebuild_estimator(payload: dict, anchors_path: str | None):
    extra = payload["extra"]
    method = extra["method"]
    cfg = ExperimentConfig(**{k: extra["config"][k]
                              for k in ("main", "data", "anchor", "mcd", "ensemble")})
    seed = extra["seed"]
    base_kwargs = _base_kwargs(cfg, seed)
    n_classes = extra["n_classes"]

    if method == "deep_ens":
        est = DeepEnsembleClassifier(n_members=cfg.ensemble["members"], **base_kwargs)
        grouped: dict[int, list[dict]] = {}
        for rec in payload["params"]:
            member, name = rec["name"].split("/", 1)
            grouped.setdefault(int(member.removeprefix("member")), []).append(
                {**rec, "name": name})
        members = []
        for i in sorted(grouped):
            member = GnnGraphClassifier(**base_kwargs)
            member.params_ = params_from_records(grouped[i])
            member.config_ = cfg.gnn_config()
            member.classes_ = np.arange(n_classes)
            members.append(member)
        est.members_ = members
        est.classes_ = np.arange(n_classes)
        return est, cfg

    params = params_from_records(payload["params"])
    if method in ("vanilla", "temp", "mcd"):
        if method == "mcd":
            active = cfg.mcd["active_sites"]
            sites = [tok == "1" for tok in active.split(",")] if active else None
            est = MCDropoutClassifier(n_samples=cfg.mcd["samples"], sample_seed=seed,
                                      active_sites=sites, **base_kwargs)
        else:
            est = GnnGraphClassifier(**base_kwargs)
        est.params_ = params
        est.config_ = cfg.gnn_config()
        est.classes_ = np.arange(n_classes)
        if method == "temp":
            wrapped = TemperatureScaledClassifier(est)
            wrapped.state_ = TempScaleState(
                extra["temperature"], extra["val_nll_before"], extra["val_nll_after"])
            wrapped.classes_ = est.classes_
            return wrapped, cfg
        return est, cfg

    if method in ("anchor_input", "anchor_mpnn", "anchor_readout", "anchor_pretrained"):
        if anchors_path is None:
            raise ValueError(f"method {method!r} requires --anchors")
        anchor_set = FixedAnchorSet.load(anchors_path)
        variant = "pretrained_readout" if method == "anchor_pretrained" \
            else method.removeprefix("anchor_")
        if method == "anchor_pretrained":
            est = PretrainedAnchoredGnnClassifier(
                base=None, n_anchors=cfg.anchor["k"],
                decision_rule=cfg.anchor["decision_rule"], seed=seed)
        else:
            est = AnchoredGnnClassifier(
                variant=variant, anchor_layer=cfg.anchor["layer"], n_anchors=cfg.anchor["k"],
                decision_rule=cfg.anchor["decision_rule"], **base_kwargs)
        est.params_ = params
        est.config_ = cfg.gnn_config()
        est.anchor_config_ = AnchorConfig(variant=variant, k=cfg.anchor["k"],
                                          layer=cfg.anchor["layer"])
        est.anchor_set_ = anchor_set
        est.classes_ = np.arange(n_classes)
        return est, cfg

    raise ValueError(f"cannot rebuild method {method!r}")


def evaluate_checkpoint(checkpoint_path: str, anchors_path: str | None = None) -> MetricsReport:
    """Re-evaluate a persisted run: rebuild its dataset and model, score all splits."""
    with open(checkpoint_path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "anchorgnn-params":
        raise ValueError(f"{checkpoint_path} is not a checkpoint")
    estimator, cfg = _rebuild_estimator(payload, anchors_path)
    graphs, split, _ = build_dataset(cfg)
    split.validate(len(graphs))
    val_records = _score_split(estimator, [graphs[i] for i in split.val], "val")
    id_records = _score_split(estimator, [graphs[i] for i in split.test_id], "id")
    ood_records = _score_split(estimator, [graphs[i] for i in split.test_ood], "ood")
    return _compute_report(val_records, id_records, ood_records)
