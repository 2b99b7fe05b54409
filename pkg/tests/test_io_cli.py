import json
from pathlib import Path

import numpy as np
import pytest

from radaraug import io
from radaraug.augment import AttenuationModel
from radaraug.cli import main
from radaraug.detect import LabeledBox
from radaraug.errors import FormatError
from radaraug.geometry import CartesianImage, PolarImage, SensorConfig, crop, polar_to_cartesian
from radaraug.sim import SimConfig, patch_scatterers, render_scene


def _polar(seed=0, shape=(7, 11)):
    data = np.random.default_rng(seed).normal(-40, 10, size=shape).astype(np.float32)
    return PolarImage(data, 0.0075, -0.6, 0.2)


# --- scan files -------------------------------------------------------------

def test_scan_roundtrip_is_bit_exact(tmp_path):
    img = _polar()
    payload = io.save_scan(img, tmp_path / "a")
    assert payload.stat().st_size == 4 * 7 * 11
    back = io.load_scan(tmp_path / "a.bin")
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == img.data.tobytes()
    assert (back.range_resolution, back.azimuth_start, back.azimuth_step) == (0.0075, -0.6, 0.2)
    meta = json.loads((tmp_path / "a.json").read_text())
    assert meta["unit"] == "dB" and meta["azimuth_bins"] == 7 and meta["range_bins"] == 11
    # payload is little-endian float32 in azimuth-major order
    raw = np.frombuffer(payload.read_bytes(), dtype="<f4")
    assert raw[11] == img.data[1, 0]


def test_truncated_payload_names_byte_counts(tmp_path):
    io.save_scan(_polar(), tmp_path / "a")
    p = tmp_path / "a.bin"
    p.write_bytes(p.read_bytes()[:-6])
    with pytest.raises(FormatError, match=r"expected 308 bytes.*found 302"):
        io.load_scan(p)


def test_sidecar_problems(tmp_path):
    io.save_scan(_polar(), tmp_path / "a")
    side = tmp_path / "a.json"
    meta = json.loads(side.read_text())
    side.write_text(json.dumps(dict(meta, unit="watts")))
    with pytest.raises(FormatError, match="unsupported unit 'watts'"):
        io.load_scan(tmp_path / "a")
    side.write_text("{not json")
    with pytest.raises(FormatError, match="byte offset"):
        io.load_scan(tmp_path / "a")
    side.unlink()
    with pytest.raises(FormatError, match="missing"):
        io.load_scan(tmp_path / "a")
    meta.pop("range_bins")
    side.write_text(json.dumps(meta))
    with pytest.raises(FormatError, match="range_bins"):
        io.load_scan(tmp_path / "a")


def test_cartesian_image_roundtrip_and_kind_dispatch(tmp_path):
    data = np.random.default_rng(1).normal(size=(5, 6)).astype(np.float32)
    img = CartesianImage(data, 0.01, origin=(-0.2, 3.0), sensor=(0.0, 0.0))
    io.save_image(img, tmp_path / "c")
    back = io.load_any(tmp_path / "c")
    assert isinstance(back, CartesianImage)
    assert back.data.tobytes() == data.tobytes()
    assert back.origin == img.origin and back.meters_per_pixel == 0.01
    with pytest.raises(FormatError):
        io.load_scan(tmp_path / "c")
    io.save_scan(_polar(), tmp_path / "p")
    with pytest.raises(FormatError):
        io.load_image(tmp_path / "p")


# --- manifests, models, detections -------------------------------------------

def test_manifest_roundtrip_and_validation(tmp_path):
    io.save_scan(_polar(), tmp_path / "scans" / "s0")
    sensor = SensorConfig(2e10, 1.2, 0.2, 11, 7)
    rec = io.ManifestRecord("scans/s0", "car", 4.2, 90.0, "rx1",
                            [LabeledBox(1, 2, 3, 4, "car", 1.0)])
    io.save_manifest(io.DatasetManifest([rec], sensor), tmp_path / "m.json")
    m = io.load_manifest(tmp_path / "m.json")
    assert m.records == [rec] and m.sensor == sensor
    assert m.path_of(rec) == tmp_path / "scans" / "s0"
    raw = json.loads((tmp_path / "m.json").read_text())
    assert raw["schema_version"] == 1
    assert set(raw["records"][0]) >= {"scan", "class", "range_m", "rotation_deg", "receiver",
                                      "boxes"}

    (tmp_path / "scans" / "s0.bin").unlink()
    with pytest.raises(FormatError, match="missing file"):
        io.load_manifest(tmp_path / "m.json")
    raw["schema_version"] = 99
    (tmp_path / "m2.json").write_text(json.dumps(raw))
    with pytest.raises(FormatError, match="schema_version"):
        io.load_manifest(tmp_path / "m2.json", check_files=False)
    (tmp_path / "m3.json").write_text(json.dumps({"schema_version": 1}))
    with pytest.raises(FormatError, match="malformed"):
        io.load_manifest(tmp_path / "m3.json")


def test_model_and_detection_files(tmp_path):
    model = AttenuationModel.fit([("a", 1, -1), ("a", 3, -4)])
    io.save_model(model, tmp_path / "m.json")
    assert io.load_model(tmp_path / "m.json") == model
    assert set(json.loads((tmp_path / "m.json").read_text())["a"]) == {
        "slope_db_per_m", "intercept_db", "n_points", "rmse"}
    dets = {"scan1": [LabeledBox(1, 2, 3, 4, "x", 0.25)], "scan2": []}
    io.save_detections(dets, tmp_path / "d.json")
    assert io.load_detections(tmp_path / "d.json") == dets
    (tmp_path / "bad.json").write_text(json.dumps({"s": [{"x": 1}]}))
    with pytest.raises(FormatError):
        io.load_detections(tmp_path / "bad.json")


def test_config_defaults_file_and_overrides(tmp_path):
    cfg = io.load_config()
    assert cfg["cfar_train_cells"] == 500 and cfg["cfar_rate"] == 0.22
    assert cfg["dbscan_eps"] == 0.3 and cfg["box_side"] == 275 and cfg["replication"] == 41
    f = tmp_path / "c.toml"
    f.write_text('cfar_rate = 1e-4\ncfar_mode = "pfa"\nshift_levels = [-1.0, 1.0]\n')
    cfg = io.load_config(f, {"cfar_rate": 0.5, "box_side": None})
    assert cfg["cfar_rate"] == 0.5 and cfg["cfar_mode"] == "pfa" and cfg["box_side"] == 275
    assert cfg["shift_levels"] == [-1.0, 1.0]
    f.write_text("nonsense_key = 3\n")
    with pytest.raises(FormatError, match="unknown config key"):
        io.load_config(f)
    f.write_text('box_side = "big"\n')
    with pytest.raises(FormatError, match="box_side"):
        io.load_config(f)
    f.write_text("box_side = true\n")
    with pytest.raises(FormatError, match="box_side"):
        io.load_config(f)


def test_png_export_records_mapping(tmp_path):
    from PIL import Image

    img = CartesianImage(np.array([[-80.0, -40.0], [0.0, -20.0]]), 0.01)
    mapping = io.export_png(img, tmp_path / "x.png")
    px = np.array(Image.open(tmp_path / "x.png"))
    assert px.dtype == np.uint16 and px[0, 0] == 0 and px[1, 0] == 65535
    assert px[0, 1] == round(0.5 * 65535)
    side = json.loads((tmp_path / "x.png.json").read_text())
    assert side == mapping and side["min_db"] == -80.0 and side["max_db"] == 0.0


# --- command line ------------------------------------------------------------

SCENE = {
    "name": "three",
    "sensor": {"bandwidth_hz": 2e10, "azimuth_beamwidth_deg": 1.2, "azimuth_step_deg": 0.2,
               "range_bins": 1000, "azimuth_bins": 201},
    "targets": [{"x_m": -1.0, "y_m": 4.5, "shape": "bar", "class": "bar"},
                {"x_m": 0.2, "y_m": 3.2, "shape": "column", "class": "column"},
                {"x_m": 1.5, "y_m": 6.0, "shape": "disc", "class": "disc"}],
}


def test_cli_usage_errors_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["msad", "only-one"]) == 1
    assert main(["detect", "x.bin", "--jobs", "0"]) == 1


def test_cli_data_errors_exit_2(tmp_path, capsys):
    assert main(["msad", str(tmp_path / "nope.bin"), str(tmp_path / "nope.bin")]) == 2
    assert "error" in capsys.readouterr().err
    (tmp_path / "scene.json").write_text("[]")
    assert main(["simulate", str(tmp_path / "scene.json"), "--output", str(tmp_path)]) == 2


def test_cli_simulate_detect_evaluate(tmp_path, capsys):
    (tmp_path / "scene.json").write_text(json.dumps(SCENE))
    (tmp_path / "cfg.toml").write_text('cfar_rate = 1e-4\ncfar_mode = "pfa"\n')
    sim, clf, det, ev = (str(tmp_path / d) for d in ("sim", "clf", "det", "ev"))
    assert main(["simulate", str(tmp_path / "scene.json"), "--seed", "3", "--output", sim]) == 0
    assert main(["train-classifier", f"{sim}/manifest.json", "--output", clf]) == 0
    assert main(["detect", f"{sim}/manifest.json", "--config", str(tmp_path / "cfg.toml"),
                 "--classifier", f"{clf}/classifier.npz", "--output", det]) == 0
    assert main(["evaluate", f"{det}/detections.json", f"{sim}/ground_truth.json",
                 "--output", ev]) == 0
    report = json.loads(Path(ev, "report.json").read_text())
    assert report["map"] == 1.0
    assert {c: v["tp"] for c, v in report["per_class"].items()} == {"bar": 1, "column": 1,
                                                                     "disc": 1}
    assert Path(ev, "report.csv").read_text().startswith("class,recall,precision")
    # ground truth can also come straight from the manifest
    assert main(["evaluate", f"{det}/detections.json", f"{sim}/manifest.json",
                 "--output", ev]) == 0
    assert json.loads(Path(ev, "report.json").read_text())["map"] == 1.0
    capsys.readouterr()
    assert main(["msad", f"{sim}/three.bin", f"{sim}/three.bin"]) == 0
    assert float(capsys.readouterr().out) == 0.0
    assert main(["export", f"{sim}/three.bin", "--cartesian", "--output", str(tmp_path)]) == 0
    assert (tmp_path / "three.png").exists()


def test_cli_simulate_accepts_bare_scatterer_list(tmp_path):
    scene = [{"x_m": 0.0, "y_m": 3.0, "rcs_m2": 2.0, "class": "p"}]
    (tmp_path / "s.json").write_text(json.dumps(scene))
    assert main(["simulate", str(tmp_path / "s.json"), "--output", str(tmp_path / "o")]) == 0
    assert io.load_scan(tmp_path / "o" / "scene").data.shape == (201, 2000)


def _object_dataset(root: Path):
    sensor = SensorConfig.from_resolution(0.0075, azimuth_beamwidth=1.2, azimuth_step=0.2,
                                          range_bins=1000, azimuth_bins=101)
    rng = np.random.default_rng(0)
    recs = []
    for i, (label, shape) in enumerate([("a", "disc"), ("b", "ring")] * 3):
        r = 3.0 + 0.7 * i
        pol = render_scene(patch_scatterers(0.0, r, shape, label), sensor, SimConfig(), rng)
        cart = polar_to_cartesian(pol)
        col, row = cart.world_to_pixel(0.0, r)
        c = crop(cart, int(round(float(col))) - 44, int(round(float(row))) - 44, 88, 88)
        io.save_image(c, root / "data" / f"s{i}")
        recs.append(io.ManifestRecord(f"data/s{i}", label, r))
    io.save_manifest(io.DatasetManifest(recs, sensor), root / "manifest.json")
    return root / "manifest.json"


def _tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_fit_and_augment_are_reproducible(tmp_path):
    manifest = _object_dataset(tmp_path)
    assert main(["fit-attenuation", str(manifest), "--output", str(tmp_path / "m")]) == 0
    model = io.load_model(tmp_path / "m" / "attenuation.json")
    assert set(model.classes) == {"a", "b"}
    assert all(model.slope(c) < 0 for c in model.classes)
    (tmp_path / "c.toml").write_text("replication = 3\ntarget_range_min = 2.0\n"
                                     "target_range_max = 7.0\ninclude_originals = true\n")
    args = ["augment", str(manifest), str(tmp_path / "m" / "attenuation.json"),
            "--config", str(tmp_path / "c.toml"), "--seed", "7"]
    assert main(args + ["--output", str(tmp_path / "o1")]) == 0
    assert main(args + ["--output", str(tmp_path / "o2"), "--jobs", "2"]) == 0
    t1, t2 = _tree(tmp_path / "o1"), _tree(tmp_path / "o2")
    assert t1 == t2
    out = io.load_manifest(tmp_path / "o1" / "manifest.json")
    assert len(out.records) == 6 + 6 * 3
    assert sum(r.recipe is not None for r in out.records) == 18
    assert all(r.recipe["seed"] == 7 for r in out.records if r.recipe)
    assert main(args[:-1] + ["8", "--output", str(tmp_path / "o3")]) == 0
    assert _tree(tmp_path / "o3") != t1
