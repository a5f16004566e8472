"""Batch pipeline: label lidar scans from camera scores and build the semantic map.

Stages per scan, depending on the strategy:

    scores + superpixels -> class probability image
    (ego motion -> per-packet correction)      motion_corrected*
    projection into each camera
    (occlusion filter)                         motion_corrected_masked
    label transfer -> class merge -> octree insertion (serial, scan order)
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classes import EVAL_ABBREVIATIONS
from .config import RunConfig
from .dataset import DatasetReader, Frame
from .ego_motion import integrate_odometry, predict_ego_motion
from .errors import SemfuseError, StageError
from .evaluation import EvalReport, evaluate, evaluate_map, format_confusion, format_metrics, majority_vote_voxels
from .formats import read_labeled, read_map, write_labeled, write_map, write_pgm, write_ppm, write_scan
from .geometry import RigidTransform, project_fisheye_array
from .motion_correction import (CorrectedSigmaCloud, LidarPacket, LidarScan, correct_packet, project_corrected,
                                project_points, recover_corrected_points)
from .occlusion import LabeledPoints, compute_gaps, mask_points, transfer_labels
from .octree import SemanticOctree
from .semantics import heuristic_probabilities, slic_segment


@dataclass(eq=False)
class ScanResult:
    frame: Frame
    labeled: LabeledPoints  # classifier-class probabilities, one row per labelled point
    merged: np.ndarray  # (P', e) evaluation-class probabilities of the kept rows
    keep: np.ndarray  # rows of ``labeled`` surviving the class merge
    global_index: np.ndarray  # point index in scan packet order, per labelled row
    stats: dict = field(default_factory=dict)


@dataclass(eq=False)
class RunResult:
    config: RunConfig
    scans: list
    octree: SemanticOctree | None
    point_report: EvalReport | None = None
    map_report: EvalReport | None = None
    stats: dict = field(default_factory=dict)


class Pipeline:
    """Holds the inputs of one run; ``superpixel_cache`` may be shared between runs on the same images."""

    def __init__(self, cfg: RunConfig, superpixel_cache: dict | None = None):
        self.cfg = cfg
        self.data = DatasetReader(cfg)
        self.cameras = self.data.calibration.cameras
        self.T_veh_ld = self.data.calibration.T_veh_ld
        self.noise = cfg.noise.to_noise()
        self.superpixel_cache = {} if superpixel_cache is None else superpixel_cache

    # ------------------------------------------------------------ stage 1
    def probabilities(self, camera, frame: Frame):
        # only the superpixel map is cached: it is the expensive part and, unlike
        # the probability image, small enough to keep for every frame
        key = (str(self.cfg.path("images")), camera.name, frame.stem, self.cfg.slic)
        try:
            scores = self.data.score_map(camera.name, frame)
            sp = self.superpixel_cache.get(key) or self.data.superpixels(camera.name, frame)
            if sp is None:
                img = self.data.image(camera.name, frame)
                sp = slic_segment(img, self.cfg.slic.k, self.cfg.slic.compactness, self.cfg.slic.iterations)
            if sp.ids.shape != scores.shape:
                raise StageError("semantic_probability", f"superpixel map {sp.ids.shape} does not match score map "
                                 f"{scores.shape} for camera {camera.name}", scan=frame.scan)
            k = camera.intrinsics
            if scores.shape != (k.height, k.width):
                raise StageError("semantic_probability", f"score map {scores.shape} does not match camera "
                                 f"{camera.name} ({k.height}, {k.width})", scan=frame.scan)
            if scores.classes != self.cfg.classes.classes:
                raise StageError("semantic_probability", f"score map has {scores.classes} classes, class table "
                                 f"has {self.cfg.classes.classes}", scan=frame.scan)
            probs, _ = heuristic_probabilities(scores, sp)
        except StageError:
            raise
        except (SemfuseError, ValueError) as exc:
            raise StageError("semantic_probability", str(exc), scan=frame.scan) from exc
        self.superpixel_cache[key] = sp
        return probs

    # ------------------------------------------------------------ stage 2
    def fov_candidates(self, scan: LidarScan) -> list[np.ndarray]:
        """Rows per packet that land near any camera image (raw projection)."""
        m = self.cfg.fov_margin_px
        rows = []
        for pk in scan.packets:
            near = np.zeros(len(pk.points), dtype=bool)
            for cam in self.cameras:
                p = cam.T_cam_ld.apply(pk.points)
                front = p[:, 2] > 0
                if not np.any(front):
                    continue
                uv = project_fisheye_array(cam.intrinsics, p[front])
                k = cam.intrinsics
                inside = (uv[:, 0] > -m) & (uv[:, 0] < k.width + m) & (uv[:, 1] > -m) & (uv[:, 1] < k.height + m)
                near[np.nonzero(front)[0][inside]] = True
            rows.append(np.nonzero(near)[0])
        return rows

    def correct(self, scan: LidarScan, frame: Frame, rows=None) -> CorrectedSigmaCloud:
        try:
            poses = predict_ego_motion(frame.t_ref, scan.times, self.data.velocity, self.noise, self.cfg.ut,
                                       angular_rates=self.cfg.angular_rates)
        except (SemfuseError, ValueError) as exc:
            raise StageError("ego_motion", str(exc), scan=frame.scan) from exc
        frags = []
        for i, (pk, (_, g)) in enumerate(zip(scan.packets, poses)):
            r = None if rows is None else rows[i]
            if r is not None and len(r) == 0:
                continue
            try:
                frags.append(correct_packet(pk, g, self.T_veh_ld, self.cfg.ut, i, r))
            except (SemfuseError, ValueError) as exc:
                raise StageError("motion_correction", str(exc), scan=frame.scan, packet=i) from exc
        return CorrectedSigmaCloud(frags)

    # ------------------------------------------------------------ per scan
    def label_scan(self, frame: Frame) -> ScanResult:
        cfg = self.cfg
        try:
            scan = self.data.scan(frame)
        except SemfuseError as exc:
            raise StageError("load", str(exc), scan=frame.scan) from exc
        counts = np.array([len(p.points) for p in scan.packets])
        offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
        raw, pk_idx, pt_idx = scan.stacked()
        rows = self.fov_candidates(scan)
        corrected = None
        if cfg.corrected:
            corrected = self.correct(scan, frame, rows)
        else:
            sel = np.concatenate([offsets[i] + r for i, r in enumerate(rows)]) if rows else np.empty(0, np.int64)
            raw, pk_idx, pt_idx = raw[sel], pk_idx[sel], pt_idx[sel]
        parts, stats = [], {"points": int(scan.num_points), "projected": 0, "masked": 0, "not_visible": 0}
        for cam in self.cameras:
            probs = self.probabilities(cam, frame)
            k = cam.intrinsics
            try:
                if corrected is None:
                    proj = project_points(raw, pk_idx, pt_idx, cam.T_cam_ld, k)
                else:
                    proj = project_corrected(corrected, cam.T_cam_ld, k)
            except (SemfuseError, ValueError) as exc:
                raise StageError("projection", str(exc), scan=frame.scan) from exc
            stats["not_visible"] += proj.not_visible
            visible = None
            if cfg.masked:
                gaps = compute_gaps(k, np.radians(cfg.theta_h_deg), np.radians(cfg.theta_v_deg))
                visible = mask_points(proj, gaps, (k.height, k.width))
            lab = transfer_labels(proj, probs, visible)
            stats["projected"] += int(len(proj))
            stats["masked"] += 0 if visible is None else int(len(proj) - np.count_nonzero(visible))
            parts.append(lab)
        labeled = _fuse_cameras(parts, offsets, self.cfg.classes.classes)
        gidx = offsets[labeled.packet] + labeled.point if len(labeled) else np.empty(0, np.int64)
        merged, keep = self.cfg.classes.merge_probs(labeled.class_probs)
        stats["labeled"] = int(len(labeled))
        stats["kept"] = int(np.count_nonzero(keep))
        return ScanResult(frame, labeled, merged[keep], keep, gidx, stats)

    def label_all(self, workers: int = 1) -> list[ScanResult]:
        frames = self.data.frames
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                return list(ex.map(self.label_scan, frames))
        return [self.label_scan(f) for f in frames]

    # ------------------------------------------------------------ map
    def odometry(self) -> np.ndarray:
        """Map-from-lidar matrices at each frame time."""
        veh = integrate_odometry(self.data.velocity, [f.t_ref for f in self.data.frames], self.cfg.angular_rates)
        return veh @ self.T_veh_ld.matrix

    def build_map(self, results: list[ScanResult]) -> SemanticOctree:
        tree = SemanticOctree(len(self.cfg.classes.eval_names), self.cfg.octree)
        poses = self.odometry()
        for r, m in zip(results, poses):
            pts = r.labeled.mean_xyz[r.keep]
            if len(pts) == 0:
                continue
            T = RigidTransform(m)
            tree.insert_scan(m[:3, 3], T.apply(pts), r.merged)
        return tree

    # ------------------------------------------------------------ evaluation
    def evaluate_points(self, results: list[ScanResult]) -> EvalReport | None:
        preds, truths, have = [], [], False
        for r in results:
            t = self.data.truth(r.frame)
            if t is None:
                continue
            have = True
            truth = self.cfg.classes.merge_labels(t["labels"])
            gi = r.global_index[r.keep]
            preds.append(np.argmax(r.merged, axis=1) if len(gi) else np.empty(0, np.int64))
            truths.append(truth[gi])
        if not have:
            return None
        labeled = int(sum(len(r.labeled) for r in results))
        return evaluate(np.concatenate(preds), np.concatenate(truths), self.cfg.classes.eval_names,
                        {"labeled_points": labeled})

    def evaluate_map(self, tree: SemanticOctree) -> EvalReport | None:
        pts, labs = [], []
        for f in self.data.frames:
            t = self.data.truth(f)
            if t is None:
                return None
            pts.append(t["world"])
            labs.append(self.cfg.classes.merge_labels(t["labels"]))
        if not pts:
            return None
        tk, tl = majority_vote_voxels(np.concatenate(pts), np.concatenate(labs), tree.resolution,
                                      len(self.cfg.classes.eval_names))
        keys = tree.occupied_keys()
        _, probs, _ = tree.to_point_cloud()
        return evaluate_map(keys, probs, tk, tl, self.cfg.classes.eval_names)

    def run(self, workers: int = 1) -> RunResult:
        results = self.label_all(workers)
        tree = self.build_map(results)
        stats = {k: int(sum(r.stats[k] for r in results)) for k in results[0].stats} if results else {}
        stats["voxels_occupied"] = int(len(tree.occupied_keys()))
        return RunResult(self.cfg, results, tree, self.evaluate_points(results), self.evaluate_map(tree), stats)


def _fuse_cameras(parts, offsets, classes: int) -> LabeledPoints:
    """Concatenate per-camera labels; a point seen by two cameras yields two rows."""
    return LabeledPoints.concatenate(parts, classes)


def run_pipeline(cfg: RunConfig, workers: int = 1, superpixel_cache: dict | None = None) -> RunResult:
    return Pipeline(cfg, superpixel_cache).run(workers)


# ---------------------------------------------------------------- artifacts

def topdown_raster(keys, probs, palette) -> np.ndarray:
    """RGB image, one pixel per (x, y) column coloured by the argmax class of its highest voxel.

    Rows run from +y (top) to -y, columns from -x to +x.
    """
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if len(keys) == 0:
        return np.zeros((0, 0, 3), dtype=np.uint8)
    col = keys[:, 0] - keys[:, 0].min()
    row = keys[:, 1].max() - keys[:, 1]
    img = np.zeros((row.max() + 1, col.max() + 1, 3), dtype=np.uint8)
    order = np.lexsort((-keys[:, 2], row, col))  # highest voxel first within each column
    cell = row[order] * img.shape[1] + col[order]
    _, first = np.unique(cell, return_index=True)
    top = order[first]
    img[row[top], col[top]] = np.asarray(palette, dtype=np.uint8)[np.argmax(probs[top], axis=1)]
    return img


def probability_rasters(keys, probs) -> np.ndarray:
    """(e, H, W) uint8 layers with the maximum class probability over each column."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    e = np.asarray(probs).shape[1] if np.ndim(probs) == 2 else 0
    if len(keys) == 0:
        return np.zeros((e, 0, 0), dtype=np.uint8)
    col = keys[:, 0] - keys[:, 0].min()
    row = keys[:, 1].max() - keys[:, 1]
    out = np.zeros((e, row.max() + 1, col.max() + 1))
    for c in range(e):
        np.maximum.at(out[c], (row, col), probs[:, c])
    return np.round(out * 255).astype(np.uint8)


def colorized_points(tree: SemanticOctree, palette):
    """Occupied voxel centres with the palette colour of their most probable class."""
    centers, probs, occ = tree.to_point_cloud()
    cls = np.argmax(probs, axis=1) if len(probs) else np.empty(0, np.int64)
    return centers, np.asarray(palette, dtype=np.uint8)[cls].reshape(-1, 3), cls, occ


def write_colorized_points(tree: SemanticOctree, path: Path, class_table) -> None:
    centers, rgb, cls, occ = colorized_points(tree, class_table.eval_palette())
    with open(path, "w") as fh:
        fh.write("x,y,z,r,g,b,class,occupancy\n")
        for c, col, k, o in zip(centers, rgb, cls, occ):
            fh.write(f"{c[0]:.3f},{c[1]:.3f},{c[2]:.3f},{col[0]},{col[1]},{col[2]},"
                     f"{class_table.eval_names[k]},{o:.4f}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_report_files(report: EvalReport, out: Path, prefix: str, abbreviations=None) -> list[Path]:
    names = list(report.class_names)
    files = []
    p = out / f"confusion_{prefix}.csv"
    with open(p, "w") as fh:
        fh.write("pred\\true," + ",".join(names) + "\n")
        for i, n in enumerate(names):
            fh.write(n + "," + ",".join(f"{x:.1f}" for x in report.normalized[i]) + "\n")
    files.append(p)
    p = out / f"confusion_{prefix}_counts.csv"
    with open(p, "w") as fh:
        fh.write("pred\\true," + ",".join(names) + "\n")
        for i, n in enumerate(names):
            fh.write(n + "," + ",".join(str(int(x)) for x in report.confusion[i]) + "\n")
    files.append(p)
    p = out / f"histogram_{prefix}.csv"
    with open(p, "w") as fh:
        fh.write("class,percent\n")
        for n, x in zip(names, report.histogram):
            fh.write(f"{n},{x:.3f}\n")
    files.append(p)
    p = out / f"report_{prefix}.txt"
    p.write_text(format_metrics(report) + "\n\n" + format_confusion(report, abbreviations) + "\n")
    files.append(p)
    return files


def write_metrics_csv(reports: dict, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("scope,class,recall,precision,f1\n")
        for scope, rep in reports.items():
            if rep is None:
                continue
            for i, n in enumerate(rep.class_names):
                fh.write(f"{scope},{n},{rep.recall[i]:.6f},{rep.precision[i]:.6f},{rep.f1[i]:.6f}\n")
            fh.write(f"{scope},macro,,,{rep.macro_f1:.6f}\n")


def write_map_rasters(tree: SemanticOctree, out: Path, class_table) -> list[Path]:
    _, probs, _ = tree.to_point_cloud()
    keys = tree.occupied_keys()
    files = [out / "map_topdown.ppm", out / "map_points.csv"]
    write_ppm(topdown_raster(keys, probs, class_table.eval_palette()), files[0])
    write_colorized_points(tree, files[1], class_table)
    layers = probability_rasters(keys, probs)
    for c, name in enumerate(class_table.eval_names):
        p = out / f"prob_{name}.pgm"
        write_pgm(layers[c] if len(layers) else np.zeros((0, 0), np.uint8), p)
        files.append(p)
    return files


def write_manifest(out: Path, cfg: RunConfig, files, extra=None) -> Path:
    doc = {
        "config_hash": cfg.digest(),
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "files": {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in sorted(files)},
    }
    if extra:
        doc.update(extra)
    p = out / "manifest.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return p


def emit_artifacts(result: RunResult, out) -> list[Path]:
    """Write labelled scans, the map, metrics, rasters and a manifest under ``out``."""
    out = Path(out)
    try:
        (out / "labeled").mkdir(parents=True, exist_ok=True)
        files = []
        for r in result.scans:
            p = out / "labeled" / f"{r.frame.stem}.lpts"
            write_labeled(r.labeled, p)
            files.append(p)
        if result.octree is not None:
            p = out / "map.soct"
            write_map(result.octree, p)
            files.append(p)
            files += write_map_rasters(result.octree, out, result.config.classes)
        reports = {"points": result.point_report, "map": result.map_report}
        if any(r is not None for r in reports.values()):
            p = out / "metrics.csv"
            write_metrics_csv(reports, p)
            files.append(p)
        for scope, rep in reports.items():
            if rep is not None:
                files += write_report_files(rep, out, scope, EVAL_ABBREVIATIONS)
        extra = {"stats": result.stats,
                 "macro_f1": {k: round(v.macro_f1, 6) for k, v in reports.items() if v is not None}}
        files.append(write_manifest(out, result.config, files, extra))
    except OSError as exc:
        raise OSError(f"cannot write artifacts under {out}: {exc}") from exc
    return files


# ---------------------------------------------------------------- partial stages

def write_corrected(cfg: RunConfig, out) -> list[Path]:
    """Corrected mean positions (as scans) and covariances for every frame."""
    pipe = Pipeline(cfg)
    out = Path(out) / "corrected"
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for f in pipe.data.frames:
        scan = pipe.data.scan(f)
        cloud = pipe.correct(scan, f)
        means, covs = recover_corrected_points(cloud)
        packets, start = [], 0
        for pk in scan.packets:
            n = len(pk.points)
            packets.append(LidarPacket(pk.t, means[start:start + n], pk.ring, pk.azimuth))
            start += n
        p = out / f"{f.stem}.lscn"
        write_scan(LidarScan(tuple(packets)), p)
        q = out / f"{f.stem}_cov.npy"
        np.save(q, covs.astype(np.float32))
        files += [p, q]
    return files


def load_labeled(cfg: RunConfig, root) -> list[ScanResult]:
    """Reload labelled scans written by ``emit_artifacts`` / the ``fuse`` command."""
    pipe = Pipeline(cfg)
    results = []
    for f in pipe.data.frames:
        lab = read_labeled(Path(root) / "labeled" / f"{f.stem}.lpts")
        scan = pipe.data.scan(f)
        counts = np.array([len(p.points) for p in scan.packets])
        offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
        merged, keep = cfg.classes.merge_probs(lab.class_probs)
        gidx = offsets[lab.packet] + lab.point if len(lab) else np.empty(0, np.int64)
        results.append(ScanResult(f, lab, merged[keep], keep, gidx, {"labeled": len(lab)}))
    return results


def load_map(cfg: RunConfig, root) -> SemanticOctree:
    return read_map(Path(root) / "map.soct", cfg.octree)
