import hashlib
import json

import numpy as np
import pytest

from semfuse.cli import main
from semfuse.config import RunConfig, config_from_dict, load_config, save_config
from semfuse.dataset import DatasetReader, read_frames, stem_of, write_dataset
from semfuse.errors import ConfigError, StageError
from semfuse.formats import read_labeled, read_map, read_pnm, read_score_map, write_score_map
from semfuse.pipeline import (Pipeline, emit_artifacts, probability_rasters, run_pipeline, topdown_raster,
                              write_corrected)
from semfuse.semantics import ScoreMap
from semfuse.synthetic import generate_synthetic, single_wall_scene


def _cfg(root, **kw):
    return config_from_dict({"data": str(root), **kw})


def _tree(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


# ------------------------------------------------------------ config

def test_config_roundtrip(tmp_path):
    cfg = config_from_dict({"strategy": "direct", "seed": 4, "octree": {"resolution": 0.1}, "noise": {"sigma_t": 0.001}})
    save_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back.digest() == cfg.digest()
    assert back.octree.resolution == 0.1 and back.noise.sigma_t == 0.001


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_dict({"stratgey": "direct"})
    with pytest.raises(ConfigError, match="strategy"):
        config_from_dict({"strategy": "magic"})
    with pytest.raises(ConfigError):
        config_from_dict({"octree": {"resolution": -1}})
    with pytest.raises(ConfigError):
        config_from_dict({"ut": {"alpha": 3.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"paths": {"nonsense": "x"}})
    (tmp_path / "bad.yaml").write_text("strategy: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_config_paths_and_digest(tmp_path):
    cfg = load_config_text(tmp_path, "data: ds\npaths:\n  scores: other_scores\n")
    assert cfg.path("scores") == tmp_path / "ds" / "other_scores"
    assert cfg.path("scans") == tmp_path / "ds" / "scans"
    assert cfg.path("superpixels") is None
    # the digest does not depend on where the config lives
    other = tmp_path / "sub"
    other.mkdir()
    assert load_config_text(other, "data: ds\npaths:\n  scores: other_scores\n").digest() == cfg.digest()
    assert cfg.with_(seed=1).digest() != cfg.digest()


def load_config_text(d, text):
    (d / "run.yaml").write_text(text)
    return load_config(d / "run.yaml")


def test_strategy_flags():
    assert not RunConfig(strategy="direct").corrected
    assert RunConfig(strategy="motion_corrected").corrected and not RunConfig(strategy="motion_corrected").masked
    assert RunConfig().masked


# ------------------------------------------------------------ dataset

def test_dataset_layout(two_wall_dir):
    root, ds = two_wall_dir
    frames = read_frames(root / "frames.csv")
    assert [f.stem for f in frames] == [stem_of(0)] and frames[0].t_ref == ds.frame_times[0]
    reader = DatasetReader(_cfg(root))
    assert reader.calibration.camera("front").intrinsics == ds.calibration.camera("front").intrinsics
    assert reader.scan(frames[0]).num_points == ds.scans[0].num_points
    truth = reader.truth(frames[0])
    assert np.array_equal(truth["labels"], ds.truth_labels[0])
    assert read_pnm(root / "images" / f"front_{stem_of(0)}.ppm").shape == (500, 1040, 3)


def test_max_scans(small_urban_dir):
    root, _ = small_urban_dir
    assert len(DatasetReader(_cfg(root, max_scans=2)).frames) == 2


# ------------------------------------------------------------ strategies

@pytest.fixture(scope="module")
def two_wall_runs(two_wall_dir):
    root, _ = two_wall_dir
    cache = {}
    return {s: run_pipeline(_cfg(root, strategy=s), superpixel_cache=cache)
            for s in ("direct", "motion_corrected", "motion_corrected_masked")}


def _back_wall_mislabels(run, ds):
    cfg = run.config
    truth = cfg.classes.merge_labels(ds.truth_labels[0])
    world = ds.truth_world[0]
    r = run.scans[0]
    gi = r.global_index[r.keep]
    pred = np.argmax(r.merged, axis=1)
    back = (truth[gi] == cfg.classes.eval_names.index("building")) & (world[gi, 0] > 9.9)
    return int(np.count_nonzero(pred[back] != truth[gi][back])), int(back.sum())


def test_two_wall_masking_removes_back_wall_mislabels(two_wall_runs, two_wall_dir):
    _, ds = two_wall_dir
    direct, n_direct = _back_wall_mislabels(two_wall_runs["direct"], ds)
    masked, n_masked = _back_wall_mislabels(two_wall_runs["motion_corrected_masked"], ds)
    assert direct > 50
    assert masked == 0
    assert n_masked < n_direct
    stats = two_wall_runs["motion_corrected_masked"].stats
    assert stats["masked"] > 0 and stats["labeled"] < two_wall_runs["direct"].stats["labeled"]


def test_run_result_contents(two_wall_runs):
    run = two_wall_runs["motion_corrected_masked"]
    assert run.point_report is not None and run.map_report is not None
    assert run.point_report.counts["evaluated"] == run.stats["kept"]
    r = run.scans[0]
    assert len(r.labeled) == r.stats["labeled"] and r.merged.shape == (r.stats["kept"], 7)
    assert np.allclose(r.labeled.class_probs.sum(axis=1), 1.0, atol=1e-9)
    assert run.stats["voxels_occupied"] == len(run.octree.occupied_keys()) > 0


def test_static_noiseless_direct_is_perfect(tmp_path):
    ds = generate_synthetic(single_wall_scene(), seed=0)
    write_dataset(ds, tmp_path)
    run = run_pipeline(_cfg(tmp_path, strategy="direct"))
    rep = run.point_report
    for name in ("building", "road"):
        assert rep.f1_of(name) == 1.0, (name, rep.f1_of(name))


def test_workers_do_not_change_results(small_urban_dir):
    root, _ = small_urban_dir
    cfg = _cfg(root)
    a = Pipeline(cfg).label_all(1)
    b = Pipeline(cfg).label_all(3)
    for x, y in zip(a, b):
        assert np.array_equal(x.global_index, y.global_index)
        assert np.array_equal(x.labeled.class_probs, y.labeled.class_probs)


def test_masking_reduction_band(small_urban_dir):
    root, _ = small_urban_dir
    cache = {}
    plain = run_pipeline(_cfg(root, strategy="motion_corrected"), superpixel_cache=cache).stats
    masked = run_pipeline(_cfg(root), superpixel_cache=cache).stats
    reduction = 1.0 - masked["labeled"] / plain["labeled"]
    assert 0.0 < reduction < 0.30


def test_stage_error_names_scan(tmp_path):
    ds = generate_synthetic(single_wall_scene(), seed=0)
    write_dataset(ds, tmp_path)
    bad = read_score_map(tmp_path / "scores" / f"front_{stem_of(0)}.smap")
    write_score_map(ScoreMap(bad.scores[:5]), tmp_path / "scores" / f"front_{stem_of(0)}.smap")
    with pytest.raises(StageError, match="scan=0") as err:
        run_pipeline(_cfg(tmp_path))
    assert err.value.stage == "semantic_probability"


def test_corrupt_scan_is_stage_error(tmp_path):
    ds = generate_synthetic(single_wall_scene(), seed=0)
    write_dataset(ds, tmp_path)
    p = tmp_path / "scans" / f"{stem_of(0)}.lscn"
    p.write_bytes(p.read_bytes()[:100])
    with pytest.raises(StageError, match="stage=load"):
        run_pipeline(_cfg(tmp_path))


# ------------------------------------------------------------ artifacts

def test_empty_raster():
    assert topdown_raster(np.empty((0, 3)), np.empty((0, 7)), np.zeros((7, 3))).shape == (0, 0, 3)
    assert probability_rasters(np.empty((0, 3)), np.empty((0, 7))).shape == (7, 0, 0)


def test_single_road_voxel_raster():
    pal = np.arange(21, dtype=np.uint8).reshape(7, 3)
    probs = np.zeros((1, 7))
    probs[0, 2] = 1.0
    img = topdown_raster([[4, -2, 0]], probs, pal)
    assert img.shape == (1, 1, 3) and img[0, 0].tolist() == pal[2].tolist()


def test_raster_uses_highest_voxel():
    pal = np.array([[255, 0, 0], [0, 255, 0]], np.uint8)
    keys = [[0, 0, 0], [0, 0, 5], [1, 1, 0]]
    probs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    img = topdown_raster(keys, probs, pal)
    assert img.shape == (2, 2, 3)
    assert img[1, 0].tolist() == [0, 255, 0]  # (0, 0) column, top voxel is class 1
    assert img[0, 1].tolist() == [255, 0, 0]  # +y is the top row
    assert img[0, 0].tolist() == [0, 0, 0]


def test_emit_artifacts_and_determinism(tmp_path, small_urban_dir):
    root, _ = small_urban_dir
    cfg = _cfg(root, max_scans=2)
    emit_artifacts(run_pipeline(cfg), tmp_path / "a")
    emit_artifacts(run_pipeline(cfg, workers=2), tmp_path / "b")
    ta, tb = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert ta == tb
    for name in ("map.soct", "map_topdown.ppm", "map_points.csv", "metrics.csv", "confusion_points.csv",
                 "confusion_map.csv", "histogram_points.csv", "report_points.txt", "manifest.json",
                 "prob_pole.pgm", "labeled/scan_0000.lpts"):
        assert name in ta, name
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.digest()
    assert manifest["files"]["map.soct"] == ta["map.soct"]
    rows = (tmp_path / "a" / "confusion_points.csv").read_text().splitlines()
    assert all(len(c.split(".")[-1]) == 1 for c in rows[1].split(",")[1:])
    assert len(read_map(tmp_path / "a" / "map.soct")) > 0
    assert len(read_labeled(tmp_path / "a" / "labeled" / "scan_0000.lpts")) > 0


def test_write_corrected(tmp_path, two_wall_dir):
    root, ds = two_wall_dir
    files = write_corrected(_cfg(root), tmp_path)
    assert [f.name for f in files] == ["scan_0000.lscn", "scan_0000_cov.npy"]
    cov = np.load(files[1])
    assert cov.shape == (ds.scans[0].num_points, 3, 3)


# ------------------------------------------------------------ CLI

def test_cli_end_to_end(tmp_path, capsys):
    data, out = tmp_path / "data", tmp_path / "out"
    assert main(["generate", "--fixture", "single_wall", "--scans", "2", "--out", str(data)]) == 0
    assert main(["run", "--data", str(data), "--out", str(out), "--strategy", "direct"]) == 0
    assert (out / "manifest.json").exists()
    out2 = tmp_path / "staged"
    args = ["--data", str(data), "--out", str(out2)]
    assert main(["correct"] + args) == 0
    assert main(["fuse"] + args + ["--workers", "2"]) == 0
    assert main(["map"] + args) == 0
    assert main(["eval"] + args) == 0
    assert main(["plot"] + args) == 0
    for name in ("corrected/scan_0001.lscn", "labeled/scan_0001.lpts", "map.soct", "metrics.csv",
                 "map_topdown.ppm"):
        assert (out2 / name).exists(), name
    assert "macro F1" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "bad.yaml").write_text("strategy: magic\n")
    assert main(["run", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "config error" in err and "data error" in err


def test_cli_requires_out():
    with pytest.raises(SystemExit):
        main(["run"])
