"""Run configuration (YAML) and the on-disk dataset layout."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .classes import ClassTable
from .ego_motion import VelocityNoise
from .errors import ConfigError
from .octree import OctreeParams
from .unscented import UTParams

STRATEGIES = ("direct", "motion_corrected", "motion_corrected_masked")

# dataset layout, relative to the data root
LAYOUT = {
    "calibration": "calibration.yaml",
    "velocity": "velocity.csv",
    "frames": "frames.csv",
    "scans": "scans",
    "scores": "scores",
    "images": "images",
    "superpixels": None,
    "truth": "truth",
}


@dataclass(frozen=True)
class NoiseConfig:
    sigma_v: tuple = (0.05, 0.05, 0.05)  # std, m/s
    sigma_w: tuple = (0.01, 0.01, 0.01)  # std, rad/s
    sigma_t: float = 1e-4  # std, s

    def to_noise(self) -> VelocityNoise:
        return VelocityNoise(np.diag(np.square(self.sigma_v)), np.diag(np.square(self.sigma_w)), self.sigma_t)


@dataclass(frozen=True)
class SlicConfig:
    k: int = 2048
    compactness: float = 10.0
    iterations: int = 10


@dataclass(frozen=True)
class RunConfig:
    data: str = "."
    paths: dict = field(default_factory=dict)  # overrides of LAYOUT entries
    strategy: str = "motion_corrected_masked"
    seed: int = 0
    ut: UTParams = UTParams()
    noise: NoiseConfig = NoiseConfig()
    octree: OctreeParams = OctreeParams(resolution=0.2)
    classes: ClassTable = ClassTable()
    slic: SlicConfig = SlicConfig()
    theta_h_deg: float = 0.1
    theta_v_deg: float = 2.0
    angular_rates: str = "body"
    fov_margin_px: float = 20.0
    max_scans: int | None = None
    scene: dict = field(default_factory=dict)  # generator settings
    base_dir: str = "."

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.angular_rates not in ("body", "euler"):
            raise ConfigError("angular_rates must be 'body' or 'euler'")
        unknown = set(self.paths) - set(LAYOUT)
        if unknown:
            raise ConfigError(f"unknown path keys {sorted(unknown)}")

    def with_(self, **kw) -> "RunConfig":
        doc = {f: getattr(self, f) for f in self.__dataclass_fields__}
        doc.update(kw)
        return RunConfig(**doc)

    def path(self, key: str) -> Path | None:
        rel = self.paths.get(key, LAYOUT[key])
        if rel is None:
            return None
        p = Path(rel)
        if not p.is_absolute():
            p = Path(self.base_dir) / self.data / p
        return p

    @property
    def masked(self) -> bool:
        return self.strategy == "motion_corrected_masked"

    @property
    def corrected(self) -> bool:
        return self.strategy != "direct"

    def to_dict(self) -> dict:
        """Canonical, path-independent form used for hashing and the manifest."""
        return {
            "data": self.data, "paths": dict(sorted(self.paths.items())), "strategy": self.strategy,
            "seed": self.seed, "ut": asdict(self.ut),
            "noise": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.noise).items()},
            "octree": asdict(self.octree), "classes": self.classes.to_dict(), "slic": asdict(self.slic),
            "theta_h_deg": self.theta_h_deg, "theta_v_deg": self.theta_v_deg,
            "angular_rates": self.angular_rates, "fov_margin_px": self.fov_margin_px,
            "max_scans": self.max_scans, "scene": self.scene,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _sub(cls, doc, name):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})
    except TypeError as exc:
        raise ConfigError(f"bad '{name}' section: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad '{name}' section: {exc}") from None


def config_from_dict(doc: dict, base_dir=".") -> RunConfig:
    doc = dict(doc or {})
    known = set(RunConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kw = {k: doc[k] for k in ("data", "strategy", "seed", "theta_h_deg", "theta_v_deg", "angular_rates",
                              "fov_margin_px", "max_scans") if k in doc}
    kw["paths"] = dict(doc.get("paths") or {})
    kw["scene"] = dict(doc.get("scene") or {})
    kw["ut"] = _sub(UTParams, doc.get("ut"), "ut")
    kw["noise"] = _sub(NoiseConfig, doc.get("noise"), "noise")
    octree_doc = dict(doc.get("octree") or {})
    octree_doc.setdefault("resolution", 0.2)
    kw["octree"] = _sub(OctreeParams, octree_doc, "octree")
    kw["slic"] = _sub(SlicConfig, doc.get("slic"), "slic")
    kw["classes"] = ClassTable.from_dict(doc.get("classes"))
    kw["base_dir"] = str(base_dir)
    try:
        return RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(doc or {}, base_dir=path.parent)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
