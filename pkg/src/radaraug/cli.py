"""Command-line entry point: ``radaraug <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .augment import (AttenuationModel, AugmentationPlan, Sample, augment_dataset,
                      default_threshold, mean_object_power, segment_threshold)
from .detect import (CfarParams, DbscanParams, LabeledBox, NearestCentroidClassifier,
                     baseline_classifier, box_around, crop_resize, detect_pipeline)
from .errors import FormatError, RadarAugError
from .geometry import (CartesianImage, PolarImage, SensorConfig, crop, polar_to_cartesian,
                       sensor_300ghz)
from .metrics import evaluate, msad
from .sim import SimConfig, Scatterer, object_centers, patch_scatterers, render_scene

log = logging.getLogger("radaraug")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _config(args) -> dict:
    over = {k: getattr(args, k, None) for k in io.DEFAULTS}
    return io.load_config(args.config, over)


def _cartesian(img, cfg) -> CartesianImage:
    if isinstance(img, PolarImage):
        return polar_to_cartesian(img, cfg["meters_per_pixel"], "bilinear", cfg["fill_db"])
    return img


def _object_crop(img, record: io.ManifestRecord, cfg) -> CartesianImage:
    """Cartesian crop of ``crop_side`` pixels around the record's first box.

    Cartesian inputs without boxes are taken as already-cropped samples.
    """
    cart = _cartesian(img, cfg)
    if not record.boxes:
        return cart
    cx, cy = record.boxes[0].center
    side = int(cfg["crop_side"])
    return crop(cart, int(round(cx)) - side // 2, int(round(cy)) - side // 2, side, side,
                cfg["fill_db"])


def _threshold(img: CartesianImage, cfg) -> float:
    return cfg["threshold_db"] if cfg["threshold_db"] is not None else default_threshold(img)


def _cfar(cfg) -> CfarParams:
    return CfarParams(cfg["cfar_train_cells"], cfg["cfar_guard_cells"], cfg["cfar_rate"],
                      cfg["cfar_mode"])


def _scan_inputs(paths: Sequence[str]) -> list[tuple[str, Path]]:
    """(name, path) pairs from scan files and/or manifests."""
    out = []
    for p in map(Path, paths):
        if p.suffix == ".json" and not p.with_suffix(".bin").exists():
            m = io.load_manifest(p)
            out.extend((r.scan, m.path_of(r)) for r in m.records)
        else:
            out.append((p.with_suffix("").name, p))
    return out


def _load_truth(path) -> dict[str, list[LabeledBox]]:
    raw = io.read_json(Path(path))
    if isinstance(raw, dict) and "schema_version" in raw:
        m = io.load_manifest(path, check_files=False)
        return {r.scan: [LabeledBox(b.x, b.y, b.width, b.height, b.label or r.label, 1.0)
                         for b in r.boxes] for r in m.records}
    return io.load_detections(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit_attenuation(args) -> int:
    cfg = _config(args)
    m = io.load_manifest(args.manifest)
    triples = []
    for r in m.records:
        img = _object_crop(io.load_any(m.path_of(r)), r, cfg)
        mask = segment_threshold(img, _threshold(img, cfg))
        triples.append((r.label, r.range_m, mean_object_power(img, mask)))
    model = AttenuationModel.fit(triples)
    out = Path(args.output) / "attenuation.json"
    io.save_model(model, out)
    for c in model.classes:
        f = model[c]
        print(f"{c}: slope {f.slope:.6g} dB/m, intercept {f.intercept:.6g} dB, "
              f"n={f.n_points}, rmse {f.rmse:.4g} dB")
    return 0


def _plan(cfg, seed: int) -> AugmentationPlan:
    return AugmentationPlan(
        replication=cfg["replication"],
        target_range=(cfg["target_range_min"], cfg["target_range_max"]),
        sigma_sq=(cfg["sigma_sq_min"], cfg["sigma_sq_max"]),
        speckle_spread=cfg["speckle_spread"], shift_levels=tuple(cfg["shift_levels"]),
        max_translation=cfg["max_translation"], mirror=cfg["mirror"], seed=seed,
        range_stage=cfg["range_stage"], speckle_stage=cfg["speckle_stage"],
        shift_stage=cfg["shift_stage"], standard_stage=cfg["standard_stage"],
        threshold_db=cfg["threshold_db"], fill_db=cfg["fill_db"])


def cmd_augment(args) -> int:
    cfg = _config(args)
    m = io.load_manifest(args.manifest)
    if m.sensor is None:
        raise FormatError(f"{args.manifest}: augmentation needs a sensor block")
    model = io.load_model(args.model)
    plan = _plan(cfg, args.seed)
    samples = [Sample(_object_crop(io.load_any(m.path_of(r)), r, cfg), r.label, r.range_m)
               for r in m.records]
    out = Path(args.output)
    records = []

    def emit(img, label, range_m, recipe, name):
        io.save_image(img, out / "images" / name)
        records.append(io.ManifestRecord(f"images/{name}", label, range_m, recipe=recipe))

    if cfg["include_originals"]:
        for i, (s, r) in enumerate(zip(samples, m.records)):
            emit(s.image, s.label, s.range_m, None, f"orig_{i:05d}")
    for a in augment_dataset(samples, plan, model, m.sensor, jobs=args.jobs):
        rc = a.recipe
        emit(a.image, a.label, rc.target_range_m, rc.to_dict(),
             f"aug_{rc.source:05d}_{rc.replica:03d}")
    io.save_manifest(io.DatasetManifest(records, m.sensor), out / "manifest.json")
    print(f"wrote {len(records)} images to {out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    clf = NearestCentroidClassifier.load(args.classifier) if args.classifier else None
    dets = {}
    for name, path in _scan_inputs(args.scans):
        polar = io.load_scan(path)
        dets[name] = detect_pipeline(
            polar, _cfar(cfg), DbscanParams(cfg["dbscan_eps"], cfg["dbscan_min_pts"]),
            cfg["box_side"], clf, cfg["patch_side"], cfg["meters_per_pixel"])
        log.info("%s: %d detections", name, len(dets[name]))
    io.save_detections(dets, Path(args.output) / "detections.json")
    print(f"{sum(map(len, dets.values()))} detections in {len(dets)} scans")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _config(args)
    m = io.load_manifest(args.manifest)
    patches, labels = [], []
    for r in m.records:
        cart = _cartesian(io.load_any(m.path_of(r)), cfg)
        for b in r.boxes:
            patches.append(crop_resize(cart, b, cfg["patch_side"], cfg["fill_db"]))
            labels.append(b.label or r.label)
    clf = baseline_classifier(patches, labels)
    out = Path(args.output) / "classifier.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    clf.save(out)
    print(f"trained on {len(patches)} patches, classes {', '.join(clf.classes)}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    dets = io.load_detections(args.detections)
    gts = _load_truth(args.ground_truth)
    report = evaluate(dets, gts, cfg["iou_threshold"], cfg["ap_variant"])
    out = Path(args.output)
    io.save_report(report, out / "report.json", out / "report.csv")
    for c, v in report["per_class"].items():
        ap = "n/a" if v["ap"] is None else f"{v['ap']:.4f}"
        print(f"{c}: AP {ap} TP {v['tp']} FP {v['fp']} FN {v['fn']}")
    print("mAP " + ("n/a" if report["map"] is None else f"{report['map']:.4f}"))
    return 0


def _scene_scatterers(scene: dict) -> list[Scatterer]:
    """Point scatterers ``{x_m, y_m, rcs_m2, class, object}`` plus lattice
    ``targets`` ``{x_m, y_m, shape, class, rcs_m2, spacing_m}``."""
    out = []
    for i, t in enumerate(scene.get("targets", [])):
        out += patch_scatterers(float(t["x_m"]), float(t["y_m"]), t.get("shape", "disc"),
                                t["class"], float(t.get("rcs_m2", 1.0)),
                                float(t.get("spacing_m", 0.03)), t.get("object", f"t{i}"))
    for s in scene.get("scatterers", []):
        out.append(Scatterer(float(s["x_m"]), float(s["y_m"]), float(s.get("rcs_m2", 1.0)),
                             s.get("class"), s.get("object")))
    if not out:
        raise FormatError("scene has no targets or scatterers")
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    try:
        scene = json.loads(Path(args.scene).read_text())
        if isinstance(scene, list):
            scene = {"scatterers": scene}
        sensor = (SensorConfig.from_dict(scene["sensor"]) if "sensor" in scene
                  else sensor_300ghz())
        sim_cfg = SimConfig.from_dict(scene.get("sim", {}))
    except FileNotFoundError:
        raise FormatError(f"missing scene file {args.scene}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{args.scene}: malformed scene ({e})") from None
    scat = _scene_scatterers(scene)
    name = scene.get("name", "scene")
    polar = render_scene(scat, sensor, sim_cfg, np.random.default_rng(args.seed))
    out = Path(args.output)
    io.save_scan(polar, out / name)
    cart = _cartesian(polar, cfg)
    boxes = []
    for label, x, y in object_centers(scat).values():
        col, row = cart.world_to_pixel(x, y)
        b = box_around(float(col), float(row), cfg["box_side"], cart.shape)
        boxes.append(LabeledBox(b.x, b.y, b.width, b.height, label, 1.0))
    labels = sorted({b.label for b in boxes})
    rec = io.ManifestRecord(name, labels[0] if len(labels) == 1 else "scene",
                            float(np.mean([s.range for s in scat])), boxes=boxes)
    io.save_manifest(io.DatasetManifest([rec], sensor), out / "manifest.json")
    io.save_detections({name: boxes}, out / "ground_truth.json")
    print(f"simulated {len(scat)} scatterers in {len(boxes)} objects -> {out}")
    return 0


def cmd_msad(args) -> int:
    a, b = io.load_any(args.first), io.load_any(args.second)
    window = None
    if args.window:
        try:
            window = tuple(int(v) for v in args.window.split(","))
        except ValueError:
            raise UsageError(f"--window must be x,y,w,h integers, got {args.window!r}") from None
        if len(window) != 4:
            raise UsageError("--window needs exactly four values x,y,w,h")
    print(repr(msad(a, b, window)))
    return 0


def cmd_export(args) -> int:
    img = io.load_any(args.scan)
    if args.cartesian:
        img = _cartesian(img, _config(args))
    out = Path(args.output) / (Path(args.scan).with_suffix("").name + ".png")
    mapping = io.export_png(img, out)
    print(f"{out}: {mapping['min_db']:.3f} dB .. {mapping['max_db']:.3f} dB")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--config", help="TOML file of default overrides")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--output", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="radaraug", description="Radar image augmentation and detection toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("fit-attenuation", cmd_fit_attenuation, "fit per-class dB-vs-range lines")
    sp.add_argument("manifest")
    sp.add_argument("--threshold-db", dest="threshold_db", type=float)

    sp = add("augment", cmd_augment, "write an augmented dataset and its manifest")
    sp.add_argument("manifest")
    sp.add_argument("model", help="attenuation model JSON")
    sp.add_argument("--replication", type=int)
    sp.add_argument("--threshold-db", dest="threshold_db", type=float)
    sp.add_argument("--include-originals", dest="include_originals", action="store_true",
                    default=None)

    sp = add("detect", cmd_detect, "run CFAR/DBSCAN/classifier on polar scans")
    sp.add_argument("scans", nargs="+", help="scan files or manifests")
    sp.add_argument("--classifier", help="classifier .npz from train-classifier")
    sp.add_argument("--box-side", dest="box_side", type=int)

    sp = add("train-classifier", cmd_train_classifier, "fit the template classifier")
    sp.add_argument("manifest", help="manifest whose records carry labelled boxes")

    sp = add("evaluate", cmd_evaluate, "score detections against ground truth")
    sp.add_argument("detections")
    sp.add_argument("ground_truth", help="box JSON or dataset manifest")
    sp.add_argument("--iou-threshold", dest="iou_threshold", type=float)
    sp.add_argument("--ap-variant", dest="ap_variant", choices=["all_points", "eleven_point"])

    sp = add("simulate", cmd_simulate, "render a scene JSON into a polar scan")
    sp.add_argument("scene")

    sp = add("msad", cmd_msad, "mean absolute difference of two images")
    sp.add_argument("first")
    sp.add_argument("second")
    sp.add_argument("--window", help="x,y,w,h pixel window")

    sp = add("export", cmd_export, "16-bit grayscale PNG for inspection")
    sp.add_argument("scan")
    sp.add_argument("--cartesian", action="store_true", help="convert polar scans first")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (RadarAugError, OSError) as e:
        print(f"radaraug: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
