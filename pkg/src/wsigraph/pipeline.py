"""End-to-end orchestration: tiling, synthetic slides, folds, experiment harness.

Intermediate artifacts are diffable text: point sets and feature matrices as
CSV, slide graphs as JSON-lines, reports as JSON plus an aligned text summary.
Per-slide work (featurization) runs in a worker pool; everything downstream
of a fixed (config, seed) pair is deterministic, including worker output
order.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .features import FEATURE_NAMES, patch_feature_vector
from .gcn import TrainConfig, evaluate, train
from .image_graph import ImageGraph, build_image_graph, load_image_graphs, save_image_graphs
from .points import PointSet

log = logging.getLogger("wsigraph")

NUCLEI_COUNT_FEATURE = FEATURE_NAMES.index("nn_nuclei_count")


class ValidationError(ValueError):
    """Bad inputs or configuration, reported before any heavy work starts."""


# ---------------------------------------------------------------------------
# records and configuration

@dataclass
class PatchRecord:
    row: int
    col: int
    origin_x: int
    origin_y: int
    size: int
    points: PointSet | None = None
    features: np.ndarray | None = None


@dataclass
class SlideRecord:
    slide_id: str
    label: int
    patches: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)


@dataclass
class SynthParams:
    """Class-conditional point processes for desk-scale synthetic slides.

    class 0: homogeneous Poisson scatter (regular tissue stand-in)
    class 1: Thomas-style parent/offspring clusters over a sparse background
    class 2: denser parents with two offspring scales (tight + loose), so the
             pattern is both denser and more irregular
    """

    slide_width: int = 1536
    slide_height: int = 1536
    patch_size: int = 768
    stride: int = 768
    poisson_mean: float = 220.0
    parent_mean: float = 10.0
    offspring_mean: float = 20.0
    cluster_sd: float = 40.0
    background_mean: float = 40.0
    dense_parent_mean: float = 16.0
    dense_offspring_mean: float = 13.0
    dense_sds: tuple = (12.0, 44.0)
    dense_loose_mean: float = 8.0
    dense_background_mean: float = 50.0


@dataclass
class DetectionParams:
    sigma_x: float = 8.0
    sigma_y: float = 4.0
    orientations: int = 9
    bandwidth: int = 7
    response_threshold: float | None = None
    merge_radius: float = 8.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    folds: int = 3
    slides_per_class: int = 50
    class_names: tuple = ("normal", "low_grade", "high_grade")
    d_p: float = 64.0
    theta: float = 0.8
    min_nuclei_per_patch: int = 20
    workers: int = 0           # 0 = min(4, cpu count)
    output_dir: str = "runs/experiment"
    synth: SynthParams = field(default_factory=SynthParams)
    detection: DetectionParams = field(default_factory=DetectionParams)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.folds < 2:
            raise ValidationError("folds must be >= 2")
        if self.slides_per_class < self.folds:
            raise ValidationError("need at least one slide per class per fold")
        if len(self.class_names) < 2:
            raise ValidationError("need at least two classes")
        if not (-1.0 <= self.theta < 1.0):
            raise ValidationError("theta must lie in [-1, 1)")
        if self.d_p <= 0:
            raise ValidationError("d_p must be positive")
        s = self.synth
        if s.patch_size <= 0 or s.stride <= 0:
            raise ValidationError("patch_size and stride must be positive")
        if s.patch_size > min(s.slide_width, s.slide_height):
            raise ValidationError("patch_size exceeds slide dimensions")


def _config_from_dict(cls, data: dict, path: str = ""):
    fields = {f.name: f for f in cls.__dataclass_fields__.values()}  # type: ignore
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ValidationError(f"unknown config key '{path}{key}'")
        sub = {"synth": SynthParams, "detection": DetectionParams, "train": TrainConfig}
        if key in sub and isinstance(value, dict):
            kwargs[key] = _config_from_dict(sub[key], value, path=f"{key}.")
        elif key in ("class_names", "gcn_dims", "head_dims", "dense_sds") and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"bad config for {cls.__name__}: {e}") from e


def load_experiment_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON file (documented in the README)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ValidationError("config file must contain a JSON object")
    cfg = _config_from_dict(ExperimentConfig, data)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# tiling

def tile_image(width: int, height: int, patch_size: int, stride: int) -> list:
    """Full-patch origins (x, y) in row-major order."""
    if patch_size <= 0 or stride <= 0:
        raise ValidationError("patch_size and stride must be positive")
    if patch_size > min(width, height):
        raise ValidationError(
            f"patch_size {patch_size} exceeds image bounds {width}x{height}"
        )
    xs = range(0, width - patch_size + 1, stride)
    ys = range(0, height - patch_size + 1, stride)
    return [(x, y) for y in ys for x in xs]


# ---------------------------------------------------------------------------
# synthetic slides

def _poisson_scatter(rng, mean_count, size):
    n = rng.poisson(mean_count)
    return rng.uniform(0.0, size, size=(n, 2))


def _cluster_scatter(rng, parent_mean, offspring_mean, sd, size):
    pts = []
    for _ in range(rng.poisson(parent_mean)):
        parent = rng.uniform(0.0, size, size=2)
        k = rng.poisson(offspring_mean)
        offs = parent + rng.normal(0.0, sd, size=(k, 2))
        inside = (offs >= 0.0).all(axis=1) & (offs < size).all(axis=1)
        pts.append(offs[inside])
    return np.vstack(pts) if pts else np.zeros((0, 2))


def _synth_patch_points(class_id: int, params: SynthParams, rng) -> np.ndarray:
    size = float(params.patch_size)
    if class_id == 0:
        return _poisson_scatter(rng, params.poisson_mean, size)
    if class_id == 1:
        clustered = _cluster_scatter(rng, params.parent_mean, params.offspring_mean,
                                     params.cluster_sd, size)
        bg = _poisson_scatter(rng, params.background_mean, size)
        return np.vstack([clustered, bg])
    if class_id == 2:
        tight = _cluster_scatter(rng, params.dense_parent_mean,
                                 params.dense_offspring_mean, params.dense_sds[0], size)
        loose = _cluster_scatter(rng, params.dense_parent_mean,
                                 params.dense_loose_mean, params.dense_sds[1], size)
        bg = _poisson_scatter(rng, params.dense_background_mean, size)
        return np.vstack([tight, loose, bg])
    raise ValidationError(f"unknown class id {class_id}")


def synth_slide(class_id: int, params: SynthParams, seed, slide_id: str = "") -> SlideRecord:
    """Generate one synthetic slide: a point set per patch, deterministic in seed."""
    rng = np.random.default_rng(seed)
    origins = tile_image(params.slide_width, params.slide_height,
                         params.patch_size, params.stride)
    patches = []
    for x, y in origins:
        pts = _synth_patch_points(class_id, params, rng)
        patches.append(PatchRecord(
            row=y // params.stride,
            col=x // params.stride,
            origin_x=x,
            origin_y=y,
            size=params.patch_size,
            points=PointSet(pts, params.patch_size, params.patch_size),
        ))
    return SlideRecord(
        slide_id=slide_id or f"synth-c{class_id}",
        label=int(class_id),
        patches=patches,
        provenance={"generator": "synth", "class_id": int(class_id)},
    )


def synth_dataset(config: ExperimentConfig) -> list:
    """One SlideRecord per (class, index), with per-slide derived seeds."""
    slides = []
    for c in range(len(config.class_names)):
        for i in range(config.slides_per_class):
            seed = np.random.SeedSequence([config.seed, c, i])
            slides.append(synth_slide(c, config.synth, seed, slide_id=f"synth-c{c}-{i:04d}"))
    return slides


# ---------------------------------------------------------------------------
# featurization and graph building

def _featurize_slide(args):
    slide, d_p = args
    for patch in slide.patches:
        patch.features = patch_feature_vector(patch.points, d_p=d_p)
    return slide


def featurize_slides(slides, d_p: float, workers: int = 0) -> list:
    """Fill PatchRecord.features for every patch, optionally in parallel."""
    if workers == 0:
        workers = min(4, os.cpu_count() or 1)
    jobs = [(s, d_p) for s in slides]
    if workers <= 1 or len(slides) <= 1:
        return [_featurize_slide(j) for j in jobs]
    with multiprocessing.Pool(workers) as pool:
        return pool.map(_featurize_slide, jobs, chunksize=1)


def build_slide_graph(slide: SlideRecord, theta: float,
                      min_nuclei: int = 20) -> ImageGraph:
    """Image-level graph over the slide's patches (row-major patch order).

    Patches with fewer than min_nuclei detected nuclei are dropped as
    background; if that would drop everything, the single densest patch is
    kept so the slide still has a node.
    """
    feats = []
    for patch in slide.patches:
        if patch.features is None:
            raise ValidationError(f"slide {slide.slide_id} has unfeaturized patches")
        feats.append(patch.features)
    f = np.vstack(feats)
    keep = f[:, NUCLEI_COUNT_FEATURE] >= min_nuclei
    if not keep.any():
        keep[int(np.argmax(f[:, NUCLEI_COUNT_FEATURE]))] = True
    return build_image_graph(f[keep], theta, slide_id=slide.slide_id, label=slide.label)


# ---------------------------------------------------------------------------
# folds

def stratified_folds(labels, k: int, seed) -> list:
    """Disjoint covering folds with per-class proportions within one slide.

    Returns k lists of dataset indices; deterministic in seed.
    """
    if k < 2:
        raise ValidationError("folds must be >= 2")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for c in sorted(set(labels.tolist())):
        idx = np.nonzero(labels == c)[0]
        rng.shuffle(idx)
        for pos, slide_idx in enumerate(idx):
            folds[pos % k].append(int(slide_idx))
    return [sorted(f) for f in folds]


# ---------------------------------------------------------------------------
# CSV interchange

POINTS_HEADER = ["slide_id", "patch_row", "patch_col", "x", "y"]


def export_pointsets(slides, path) -> None:
    """Write per-patch point sets as CSV (slide_id, patch_row, patch_col, x, y)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(POINTS_HEADER)
        for slide in slides:
            for patch in slide.patches:
                for x, y in patch.points.coords:
                    writer.writerow([slide.slide_id, patch.row, patch.col,
                                     repr(float(x)), repr(float(y))])


def import_pointsets(path, patch_size: int = 768, stride: int | None = None,
                     labels: dict | None = None) -> list:
    """Read a point-set CSV back into SlideRecords.

    Patch origins are reconstructed as (col*stride, row*stride); labels come
    from the optional {slide_id: label} mapping (default -1).  Malformed rows
    are rejected with their line number.
    """
    stride = stride or patch_size
    path = Path(path)
    per_patch: dict[tuple[str, int, int], list] = {}
    slide_order: list[str] = []
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            log.warning("%s: empty point-set file", path)
            return []
        if header != POINTS_HEADER:
            raise ValidationError(f"{path}:1: expected header {','.join(POINTS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValidationError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            slide_id = row[0]
            try:
                prow, pcol = int(row[1]), int(row[2])
                x, y = float(row[3]), float(row[4])
            except ValueError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from e
            if not (0 <= x < patch_size and 0 <= y < patch_size):
                raise ValidationError(
                    f"{path}:{lineno}: point ({x}, {y}) outside patch of size {patch_size}"
                )
            if prow < 0 or pcol < 0:
                raise ValidationError(f"{path}:{lineno}: negative patch index")
            if slide_id not in slide_order:
                slide_order.append(slide_id)
            per_patch.setdefault((slide_id, prow, pcol), []).append((x, y))
    if not per_patch:
        log.warning("%s: no data rows", path)
        return []
    slides = []
    for slide_id in slide_order:
        keys = sorted(k for k in per_patch if k[0] == slide_id)
        patches = [
            PatchRecord(
                row=prow,
                col=pcol,
                origin_x=pcol * stride,
                origin_y=prow * stride,
                size=patch_size,
                points=PointSet(np.array(per_patch[(sid, prow, pcol)]), patch_size, patch_size),
            )
            for sid, prow, pcol in keys
        ]
        label = -1 if labels is None else int(labels.get(slide_id, -1))
        slides.append(SlideRecord(slide_id=slide_id, label=label, patches=patches,
                                  provenance={"source": str(path)}))
    return slides


def export_features(slides, path) -> None:
    """Feature matrix CSV: id columns plus the 69 canonical feature columns."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "patch_row", "patch_col"] + FEATURE_NAMES)
        for slide in slides:
            for patch in slide.patches:
                writer.writerow([slide.slide_id, patch.row, patch.col]
                                + [repr(float(v)) for v in patch.features])


def import_features(path, labels: dict | None = None) -> list:
    """Read a feature CSV back into SlideRecords (features only, no points)."""
    path = Path(path)
    slides: dict[str, SlideRecord] = {}
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slide_id", "patch_row", "patch_col"] + FEATURE_NAMES:
            raise ValidationError(f"{path}:1: unexpected feature CSV header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + len(FEATURE_NAMES):
                raise ValidationError(f"{path}:{lineno}: wrong column count")
            slide_id = row[0]
            try:
                prow, pcol = int(row[1]), int(row[2])
                vec = np.array([float(v) for v in row[3:]])
            except ValueError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from e
            rec = slides.setdefault(slide_id, SlideRecord(
                slide_id=slide_id,
                label=-1 if labels is None else int(labels.get(slide_id, -1)),
                patches=[],
            ))
            rec.patches.append(PatchRecord(row=prow, col=pcol, origin_x=0, origin_y=0,
                                           size=0, features=vec))
    for rec in slides.values():
        rec.patches.sort(key=lambda p: (p.row, p.col))
    return list(slides.values())


def export_labels(slides, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "label"])
        for slide in slides:
            writer.writerow([slide.slide_id, slide.label])


def import_labels(path) -> dict:
    out = {}
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slide_id", "label"]:
            raise ValidationError(f"{path}:1: expected header slide_id,label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[row[0]] = int(row[1])
            except (IndexError, ValueError) as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from e
    return out


def export_graphs(slides_or_graphs, path) -> None:
    """Write slide graphs as JSON-lines (accepts ImageGraphs directly)."""
    save_image_graphs(slides_or_graphs, path)


def import_graphs(path) -> list:
    return load_image_graphs(path)


# ---------------------------------------------------------------------------
# the experiment harness

def run_experiment(config: ExperimentConfig, write_outputs: bool = True) -> dict:
    """Synthetic k-fold cross-validation experiment.

    synthesize point sets -> featurize -> build slide graphs -> stratified
    folds -> per-fold standardize/train/evaluate.  Returns the report dict;
    also writes report.json, report.txt and summary.csv under
    config.output_dir unless write_outputs is False.  Deterministic given
    (config, seed), timings excluded.
    """
    config.validate()
    t_start = time.time()

    log.info("generating %d synthetic slides", config.slides_per_class * len(config.class_names))
    slides = synth_dataset(config)

    t_feat = time.time()
    slides = featurize_slides(slides, config.d_p, workers=config.workers)
    featurize_seconds = time.time() - t_feat

    graphs = [build_slide_graph(s, config.theta, config.min_nuclei_per_patch)
              for s in slides]
    labels = [g.label for g in graphs]
    folds = stratified_folds(labels, config.folds, np.random.SeedSequence([config.seed, 7]))

    fold_reports = []
    accuracies = []
    t_train = time.time()
    for fold_idx, val_idx in enumerate(folds):
        val_set = set(val_idx)
        train_graphs = [g for i, g in enumerate(graphs) if i not in val_set]
        val_graphs = [graphs[i] for i in val_idx]
        fold_cfg = TrainConfig(
            learning_rate=config.train.learning_rate,
            batch_size=config.train.batch_size,
            epochs=config.train.epochs,
            dropout_p=config.train.dropout_p,
            seed=int(np.random.SeedSequence([config.train.seed, fold_idx]).generate_state(1)[0]),
            gcn_dims=config.train.gcn_dims,
            head_dims=config.train.head_dims,
            num_classes=len(config.class_names),
            standardize=config.train.standardize,
        )
        model, history = train(train_graphs, fold_cfg)
        result = evaluate(model, val_graphs)
        accuracies.append(result.accuracy)
        fold_reports.append({
            "fold": fold_idx,
            "val_slides": [graphs[i].slide_id for i in val_idx],
            "train_size": len(train_graphs),
            "val_size": len(val_graphs),
            "accuracy": result.accuracy,
            "confusion": result.confusion.tolist(),
            "final_train_loss": history[-1]["loss"] if history else None,
            "final_train_accuracy": history[-1]["accuracy"] if history else None,
        })
        log.info("fold %d: accuracy %.4f", fold_idx, result.accuracy)
    train_seconds = time.time() - t_train

    acc = np.array(accuracies)
    report = {
        "format_version": 1,
        "config": asdict(config),
        "num_slides": len(slides),
        "classes": list(config.class_names),
        "folds": fold_reports,
        "accuracy_mean": float(acc.mean()),
        "accuracy_sd": float(acc.std()),
        "timings": {
            "featurize_seconds": featurize_seconds,
            "train_seconds": train_seconds,
            "total_seconds": time.time() - t_start,
        },
    }
    if write_outputs:
        write_report(report, Path(config.output_dir))
    return report


def report_without_timings(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timings"}


def write_report(report: dict, outdir: Path) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    with (outdir / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "accuracy"])
        for f in report["folds"]:
            writer.writerow([f["fold"], f["accuracy"]])
        writer.writerow(["mean", report["accuracy_mean"]])
        writer.writerow(["sd", report["accuracy_sd"]])
    (outdir / "report.txt").write_text(format_report(report), encoding="utf-8")


def format_report(report: dict) -> str:
    lines = []
    lines.append("cross-validation report")
    lines.append(f"  slides: {report['num_slides']}   classes: {', '.join(report['classes'])}")
    lines.append("")
    lines.append(f"  {'fold':>4}  {'val size':>8}  {'accuracy':>9}")
    for f in report["folds"]:
        lines.append(f"  {f['fold']:>4}  {f['val_size']:>8}  {f['accuracy']:>9.4f}")
    lines.append("")
    lines.append(
        f"  accuracy {100 * report['accuracy_mean']:.2f} +/- {100 * report['accuracy_sd']:.2f} %"
    )
    t = report.get("timings", {})
    if t:
        lines.append(
            f"  timings: featurize {t['featurize_seconds']:.1f}s,"
            f" train {t['train_seconds']:.1f}s, total {t['total_seconds']:.1f}s"
        )
    lines.append("")
    return "\n".join(lines)
