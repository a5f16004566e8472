"""Dataset directory layout shared by the generator and the pipeline.

::

    calibration.yaml            extrinsics + fisheye intrinsics
    velocity.csv                t, vx, vy, vz, wx, wy, wz (vehicle body frame)
    frames.csv                  scan, stem, t_ref
    scans/<stem>.lscn           one lidar revolution
    scores/<camera>_<stem>.smap classifier scores at t_ref
    images/<camera>_<stem>.ppm  RGB image at t_ref (for superpixels)
    truth/<stem>.npz            labels (P,), world (P, 3) in packet order
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .formats import (read_pnm, read_scan, read_score_map, read_superpixels, read_velocity_csv, write_ppm,
                      write_scan, write_score_map, write_velocity_csv)
from .geometry import load_calibration, save_calibration
from .semantics import densify
from .synthetic import stream_synthetic


@dataclass(frozen=True)
class Frame:
    scan: int
    stem: str
    t_ref: float


def read_frames(path) -> list[Frame]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    try:
        return [Frame(int(r["scan"]), r["stem"], float(r["t_ref"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad frames table ({exc})") from None


def write_frames(frames, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scan", "stem", "t_ref"])
        for f in frames:
            w.writerow([f.scan, f.stem, repr(float(f.t_ref))])


def stem_of(scan: int) -> str:
    return f"scan_{scan:04d}"


def _write_header(ds, root: Path) -> None:
    for sub in ("scans", "scores", "images", "truth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_calibration(ds.calibration, root / "calibration.yaml")
    write_velocity_csv(ds.velocity, root / "velocity.csv")


def _write_frame(root: Path, s: int, scan, labels, world, origin, pose, cameras, score_maps, images) -> Frame:
    stem = stem_of(s)
    write_scan(scan, root / "scans" / f"{stem}.lscn")
    np.savez(root / "truth" / f"{stem}.npz", labels=np.asarray(labels).astype(np.int64),
             world=np.asarray(world, dtype=np.float64), origin=origin, pose=pose)
    for cam in cameras:
        write_score_map(score_maps[cam.name], root / "scores" / f"{cam.name}_{stem}.smap")
        write_ppm(images[cam.name], root / "images" / f"{cam.name}_{stem}.ppm")
    return stem


def write_dataset(ds, root) -> Path:
    """Write a SyntheticDataset in the standard layout."""
    root = Path(root)
    _write_header(ds, root)
    frames = []
    cams = ds.calibration.cameras
    for s, scan in enumerate(ds.scans):
        stem = _write_frame(root, s, scan, ds.truth_labels[s], ds.truth_world[s], ds.origins_world[s],
                            ds.poses_ref[s], cams, {c.name: ds.score_maps[(c.name, s)] for c in cams},
                            {c.name: ds.images[(c.name, s)] for c in cams})
        frames.append(Frame(s, stem, float(ds.frame_times[s])))
    write_frames(frames, root / "frames.csv")
    return root


def write_synthetic(spec, root, seed: int = 0) -> Path:
    """Generate and write a synthetic dataset one scan at a time (bounded memory)."""
    root = Path(root)
    header, stream = stream_synthetic(spec, seed)
    _write_header(header, root)
    frames = []
    for fr in stream:
        stem = _write_frame(root, fr.index, fr.scan, fr.truth_labels, fr.truth_world, fr.origin, fr.pose,
                            header.calibration.cameras, fr.score_maps, fr.images)
        frames.append(Frame(fr.index, stem, fr.t_ref))
    write_frames(frames, root / "frames.csv")
    return root


class DatasetReader:
    """Lazy access to the files of one dataset, resolved through a RunConfig."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.calibration = load_calibration(cfg.path("calibration"))
        self.velocity = read_velocity_csv(cfg.path("velocity"))
        self.frames = read_frames(cfg.path("frames"))
        if cfg.max_scans is not None:
            self.frames = self.frames[: cfg.max_scans]

    def scan(self, f: Frame):
        return read_scan(self.cfg.path("scans") / f"{f.stem}.lscn")

    def score_map(self, camera: str, f: Frame):
        return read_score_map(self.cfg.path("scores") / f"{camera}_{f.stem}.smap")

    def image(self, camera: str, f: Frame):
        return read_pnm(self.cfg.path("images") / f"{camera}_{f.stem}.ppm")

    def superpixels(self, camera: str, f: Frame):
        root = self.cfg.path("superpixels")
        if root is None:
            return None
        sp = read_superpixels(root / f"{camera}_{f.stem}.spxm")
        return densify(sp.ids)

    def truth(self, f: Frame):
        p = self.cfg.path("truth")
        if p is None or not (p / f"{f.stem}.npz").exists():
            return None
        with np.load(p / f"{f.stem}.npz") as z:
            return {k: z[k] for k in z.files}
