"""Command-line interface.

Subcommands mirror the pipeline stages: synth, detect, featurize,
build-graph, train, eval, and run (the full cross-validation experiment).
Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import asdict
from pathlib import Path

from . import detection, gcn, pipeline
from .pipeline import ExperimentConfig, ValidationError, load_experiment_config

log = logging.getLogger("wsigraph")


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic slide dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--slides-per-class", type=int, default=10)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=768)
    p.add_argument("--slide-size", type=int, default=1536)
    p.add_argument("--render", action="store_true",
                   help="also render each patch as a PGM image")


def _add_detect(sub):
    p = sub.add_parser("detect", help="detect nuclei in PGM images")
    p.add_argument("--images", required=True,
                   help="a .pgm file or a directory of .pgm files")
    p.add_argument("--out", required=True, help="output point-set CSV")
    p.add_argument("--sigma-x", type=float, default=8.0)
    p.add_argument("--sigma-y", type=float, default=4.0)
    p.add_argument("--orientations", type=int, default=9)
    p.add_argument("--bandwidth", type=int, default=7)
    p.add_argument("--response-threshold", type=float, default=None)
    p.add_argument("--merge-radius", type=float, default=8.0)
    p.add_argument("--patch-size", type=int, default=768)
    p.add_argument("--stride", type=int, default=None)


def _add_featurize(sub):
    p = sub.add_parser("featurize", help="compute 69-dim patch features")
    p.add_argument("--points", required=True, help="point-set CSV")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.add_argument("--patch-size", type=int, default=768)
    p.add_argument("--d-p", type=float, default=64.0)
    p.add_argument("--workers", type=int, default=0)


def _add_build_graph(sub):
    p = sub.add_parser("build-graph", help="build slide-level similarity graphs")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--labels", default=None, help="labels CSV (slide_id,label)")
    p.add_argument("--out", required=True, help="output JSON-lines graph file")
    p.add_argument("--theta", type=float, default=0.8)
    p.add_argument("--min-nuclei", type=int, default=20)


def _add_train(sub):
    p = sub.add_parser("train", help="train the classifier on slide graphs")
    p.add_argument("--graphs", required=True, help="JSON-lines graph file")
    p.add_argument("--model", required=True, help="output checkpoint path")
    p.add_argument("--history", default=None, help="optional history JSON path")
    p.add_argument("--learning-rate", type=float, default=2e-4)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on slide graphs")
    p.add_argument("--graphs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="optional metrics JSON path")


def _add_run(sub):
    p = sub.add_parser("run", help="full synthetic cross-validation experiment")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--slides-per-class", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)


def _cmd_synth(args) -> int:
    if args.slides_per_class < 1 or args.classes < 1:
        raise ValidationError("need at least one class and one slide per class")
    cfg = ExperimentConfig(seed=args.seed, slides_per_class=args.slides_per_class,
                           class_names=tuple(f"class{c}" for c in range(args.classes)))
    cfg.synth.patch_size = args.patch_size
    cfg.synth.stride = args.patch_size
    cfg.synth.slide_width = cfg.synth.slide_height = args.slide_size
    slides = pipeline.synth_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.export_pointsets(slides, out / "points.csv")
    pipeline.export_labels(slides, out / "labels.csv")
    (out / "manifest.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True,
                                                  default=list), encoding="utf-8")
    if args.render:
        for slide in slides:
            for patch in slide.patches:
                img = detection.render_nuclei_image(patch.points)
                detection.write_pgm(img, out / f"{slide.slide_id}_r{patch.row}_c{patch.col}.pgm")
    log.info("wrote %d slides to %s", len(slides), out)
    return 0


_PATCH_FILE = re.compile(r"^(?P<slide>.+)_r(?P<row>\d+)_c(?P<col>\d+)$")


def _cmd_detect(args) -> int:
    src = Path(args.images)
    files = sorted(src.glob("*.pgm")) if src.is_dir() else [src]
    if not files:
        raise ValidationError(f"no .pgm files found under {src}")
    bank = detection.build_glog_bank(args.sigma_x, args.sigma_y,
                                     args.orientations, args.bandwidth)
    stride = args.stride or args.patch_size

    def run_detection(img):
        return detection.detect_nuclei(img, bank,
                                       response_threshold=args.response_threshold,
                                       merge_radius=args.merge_radius)

    # files named <slide>_r<row>_c<col>.pgm are single pre-cut patches of one
    # slide (the synth --render convention); anything else is a whole slide
    # image that gets tiled here
    slides: dict[str, pipeline.SlideRecord] = {}
    for f in files:
        img = detection.read_pgm(f)
        m = _PATCH_FILE.match(f.stem)
        if m:
            slide_id = m.group("slide")
            row, col = int(m.group("row")), int(m.group("col"))
            rec = slides.setdefault(slide_id, pipeline.SlideRecord(
                slide_id=slide_id, label=-1, patches=[],
                provenance={"source": str(f.parent)}))
            rec.patches.append(pipeline.PatchRecord(
                row=row, col=col, origin_x=col * stride, origin_y=row * stride,
                size=img.width, points=run_detection(img)))
        else:
            size = min(args.patch_size, img.width, img.height)
            patches = []
            for x, y in pipeline.tile_image(img.width, img.height, size, stride):
                tile = detection.GrayImage(img.pixels[y:y + size, x:x + size])
                patches.append(pipeline.PatchRecord(
                    row=y // stride, col=x // stride, origin_x=x, origin_y=y,
                    size=size, points=run_detection(tile)))
            slides[f.stem] = pipeline.SlideRecord(
                slide_id=f.stem, label=-1, patches=patches,
                provenance={"source": str(f)})
    for rec in slides.values():
        rec.patches.sort(key=lambda p: (p.row, p.col))
        log.info("%s: %d patches, %d nuclei", rec.slide_id, len(rec.patches),
                 sum(len(p.points) for p in rec.patches))
    pipeline.export_pointsets(slides.values(), args.out)
    return 0


def _cmd_featurize(args) -> int:
    slides = pipeline.import_pointsets(args.points, patch_size=args.patch_size)
    slides = pipeline.featurize_slides(slides, args.d_p, workers=args.workers)
    pipeline.export_features(slides, args.out)
    log.info("featurized %d slides -> %s", len(slides), args.out)
    return 0


def _cmd_build_graph(args) -> int:
    labels = pipeline.import_labels(args.labels) if args.labels else None
    slides = pipeline.import_features(args.features, labels=labels)
    graphs = [pipeline.build_slide_graph(s, args.theta, args.min_nuclei) for s in slides]
    pipeline.export_graphs(graphs, args.out)
    log.info("wrote %d slide graphs -> %s", len(graphs), args.out)
    return 0


def _cmd_train(args) -> int:
    graphs = pipeline.import_graphs(args.graphs)
    cfg = gcn.TrainConfig(learning_rate=args.learning_rate, batch_size=args.batch_size,
                          epochs=args.epochs, dropout_p=args.dropout, seed=args.seed)
    model, history = gcn.train(graphs, cfg)
    gcn.save_model(model, args.model, config=cfg)
    if args.history:
        Path(args.history).write_text(json.dumps(history), encoding="utf-8")
    log.info("final train loss %.4f accuracy %.4f", history[-1]["loss"],
             history[-1]["accuracy"])
    return 0


def _cmd_eval(args) -> int:
    graphs = pipeline.import_graphs(args.graphs)
    model = gcn.load_model(args.model)
    result = gcn.evaluate(model, graphs)
    metrics = {"accuracy": result.accuracy, "confusion": result.confusion.tolist(),
               "predictions": result.predictions.tolist()}
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    if args.out is not None:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.slides_per_class is not None:
        cfg.slides_per_class = args.slides_per_class
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.validate()
    report = pipeline.run_experiment(cfg)
    print(pipeline.format_report(report))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "detect": _cmd_detect,
    "featurize": _cmd_featurize,
    "build-graph": _cmd_build_graph,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = argparse.ArgumentParser(
        prog="wsigraph",
        description="cell-graph featurization, slide graphs and GCN grading",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_synth, _add_detect, _add_featurize, _add_build_graph,
                _add_train, _add_eval, _add_run):
        add(sub)
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError) as e:
        log.error("%s", e)
        return 1
    except Exception as e:      # runtime failure
        log.error("runtime failure: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
