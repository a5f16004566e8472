"""Class tables: classifier classes, evaluation classes and the merge between them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CNN_CLASSES = ("unlabeled", "sky", "building", "pole", "road", "undrivable_road", "vegetation",
               "sign", "fence", "vehicle", "pedestrian", "rider")
EVAL_CLASSES = ("building", "pole", "road", "undrivable_road", "vegetation", "vehicle", "pedestrian")
DEFAULT_MERGE = {
    "unlabeled": None, "sky": None,
    "building": "building", "fence": "building",
    "pole": "pole", "sign": "pole",
    "road": "road", "undrivable_road": "undrivable_road", "vegetation": "vegetation",
    "vehicle": "vehicle",
    "pedestrian": "pedestrian", "rider": "pedestrian",
}
DEFAULT_PALETTE = {
    "unlabeled": (128, 0, 128), "sky": (70, 130, 230), "building": (245, 245, 245), "pole": (0, 220, 220),
    "road": (140, 90, 50), "undrivable_road": (150, 230, 30), "vegetation": (30, 140, 30),
    "sign": (255, 150, 0), "fence": (128, 128, 128), "vehicle": (220, 20, 20),
    "pedestrian": (250, 230, 0), "rider": (220, 200, 0),
}
EVAL_ABBREVIATIONS = {"building": "B", "pole": "P", "road": "R", "undrivable_road": "U",
                      "vegetation": "V", "vehicle": "Vh", "pedestrian": "Pe"}


@dataclass(frozen=True)
class ClassTable:
    names: tuple = CNN_CLASSES
    eval_names: tuple = EVAL_CLASSES
    merge: tuple = tuple(DEFAULT_MERGE[n] for n in CNN_CLASSES)  # eval name or None per class
    palette: tuple = tuple(DEFAULT_PALETTE[n] for n in CNN_CLASSES)

    def __post_init__(self):
        if len(self.merge) != len(self.names):
            raise ConfigError("merge map must cover every classifier class")
        for target in self.merge:
            if target is not None and target not in self.eval_names:
                raise ConfigError(f"merge target {target!r} is not an evaluation class")
        if len(self.palette) != len(self.names):
            raise ConfigError("palette needs one colour per class")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "ClassTable":
        if not doc:
            return cls()
        names = tuple(doc.get("names", CNN_CLASSES))
        eval_names = tuple(doc.get("eval_names", EVAL_CLASSES))
        merge_doc = doc.get("merge", DEFAULT_MERGE if names == CNN_CLASSES else None)
        if merge_doc is None:
            merge_doc = {n: (n if n in eval_names else None) for n in names}
        missing = [n for n in names if n not in merge_doc]
        if missing:
            raise ConfigError(f"merge map is not total; missing {missing}")
        pal_doc = doc.get("palette", {})
        palette = tuple(tuple(pal_doc.get(n, DEFAULT_PALETTE.get(n, (200, 200, 200)))) for n in names)
        return cls(names, eval_names, tuple(merge_doc[n] for n in names), palette)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "eval_names": list(self.eval_names),
                "merge": {n: m for n, m in zip(self.names, self.merge)},
                "palette": {n: list(p) for n, p in zip(self.names, self.palette)}}

    @property
    def classes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def merge_index(self) -> np.ndarray:
        """Evaluation index per classifier class, -1 for discarded classes."""
        return np.array([-1 if m is None else self.eval_names.index(m) for m in self.merge], dtype=np.int64)

    def merge_labels(self, labels) -> np.ndarray:
        return self.merge_index[np.asarray(labels, dtype=np.int64)]

    def merge_probs(self, probs) -> tuple[np.ndarray, np.ndarray]:
        """Sum merged classes, drop discarded mass and renormalise.

        Returns (merged (P, e), keep mask); rows with no kept mass are dropped.
        """
        probs = np.asarray(probs, dtype=float)
        out = np.zeros(probs.shape[:-1] + (len(self.eval_names),))
        for src, dst in enumerate(self.merge_index):
            if dst >= 0:
                out[..., dst] += probs[..., src]
        total = out.sum(axis=-1)
        keep = total > 1e-12
        out[keep] /= total[keep, None]
        return out, keep

    def eval_palette(self) -> np.ndarray:
        pal = np.zeros((len(self.eval_names), 3), dtype=np.uint8)
        for e, name in enumerate(self.eval_names):
            src = self.names.index(name) if name in self.names else list(self.merge).index(name)
            pal[e] = self.palette[src]
        return pal
