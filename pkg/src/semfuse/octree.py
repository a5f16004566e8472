"""Semantic voxel map with log-odds occupancy and per-voxel class posteriors.

Voxels live in a sparse store keyed by their finest-level integer index.
Keys are packed into int64 and kept sorted so a whole scan can be merged
with array operations.  ``coarse_keys`` gives the octree parent cells for
export at coarser levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

_BITS = 21
_OFFSET = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1


def logodds(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class OctreeParams:
    resolution: float = 0.1
    depth: int = 16
    p_hit: float = 0.7
    p_miss: float = 0.4
    l_min: float = -3.5
    l_max: float = 5.0  # above logit(0.99) so well-observed voxels can exceed 0.99
    occupancy_threshold: float = 0.5
    likelihood_floor: float = 1e-3
    max_range: float | None = None

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if not (0.0 < self.p_miss < 0.5 < self.p_hit < 1.0):
            raise ValueError("need 0 < p_miss < 0.5 < p_hit < 1")
        if self.l_min >= self.l_max:
            raise ValueError("l_min must be below l_max")

    @property
    def l_hit(self) -> float:
        return logodds(self.p_hit)

    @property
    def l_miss(self) -> float:
        return logodds(self.p_miss)

    @property
    def l_threshold(self) -> float:
        return logodds(self.occupancy_threshold)


@dataclass(frozen=True)
class VoxelKey:
    ix: int
    iy: int
    iz: int

    @classmethod
    def from_point(cls, xyz, resolution: float) -> "VoxelKey":
        k = np.floor(np.asarray(xyz, dtype=float) / resolution).astype(np.int64)
        return cls(int(k[0]), int(k[1]), int(k[2]))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.ix, self.iy, self.iz)


@dataclass(frozen=True, eq=False)
class SemanticVoxel:
    log_odds: float
    class_probs: np.ndarray
    observation_count: int = 0

    @classmethod
    def fresh(cls, classes: int) -> "SemanticVoxel":
        return cls(0.0, np.full(classes, 1.0 / classes), 0)

    @property
    def occupancy(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.log_odds))


@dataclass(frozen=True)
class InsertSummary:
    points: int
    hits: int
    misses: int
    new_voxels: int


def update_occupancy(v: SemanticVoxel, hit: bool, params: OctreeParams = OctreeParams()) -> SemanticVoxel:
    step = params.l_hit if hit else params.l_miss
    lo = min(max(v.log_odds + step, params.l_min), params.l_max)
    return replace(v, log_odds=lo, observation_count=v.observation_count + 1)


def bayes_semantics(prior, likelihood, floor: float = 1e-3) -> np.ndarray:
    """Discrete Bayes update on (..., c) arrays."""
    post = np.asarray(prior, dtype=float) * np.maximum(np.asarray(likelihood, dtype=float), floor)
    return post / post.sum(axis=-1, keepdims=True)


def update_semantics(v: SemanticVoxel, l, params: OctreeParams = OctreeParams()) -> SemanticVoxel:
    return replace(v, class_probs=bayes_semantics(v.class_probs, l, params.likelihood_floor))


def pack_keys(keys) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64) + _OFFSET
    return (k[..., 0] << (2 * _BITS)) | (k[..., 1] << _BITS) | k[..., 2]


def unpack_keys(packed) -> np.ndarray:
    p = np.asarray(packed, dtype=np.int64)
    return np.stack([(p >> (2 * _BITS)) & _MASK, (p >> _BITS) & _MASK, p & _MASK], axis=-1) - _OFFSET


def traverse_rays(origins, ends, resolution: float):
    """Voxels crossed by each segment, endpoint voxel excluded.

    Integer 3D-DDA run on all rays at once.  Returns (ray index, key) pairs
    with keys as (K, 3) int64.  Each ray takes exactly as many steps as the
    Manhattan distance between its start and end voxels; an axis that has
    reached its end index is never stepped again, so every ray terminates in
    its endpoint voxel even under floating-point ties.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    e = np.atleast_2d(np.asarray(ends, dtype=float))
    o = np.broadcast_to(o, e.shape)
    start = np.floor(o / resolution).astype(np.int64)
    stop = np.floor(e / resolution).astype(np.int64)
    d = e - o
    step = np.sign(stop - start)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), np.inf)
        boundary = (start + (step > 0)) * resolution
        t_max = np.where(step != 0, (boundary - o) * inv, np.inf)
        t_delta = np.where(step != 0, resolution * np.abs(inv), np.inf)
    remaining = np.abs(stop - start)

    ray = np.arange(len(e))
    cur = start.copy()
    alive = remaining.sum(axis=1) > 0
    out_ray, out_key = [], []
    ray, cur, t_max, t_delta, remaining, step = (a[alive] for a in (ray, cur, t_max, t_delta, remaining, step))
    live = np.ones(len(ray), dtype=bool)
    while len(ray):
        out_ray.append(ray[live])
        out_key.append(cur[live])
        cand = np.where(remaining > 0, t_max, np.inf)
        axis = np.argmin(cand, axis=1)
        r = np.arange(len(ray))
        # finished rays keep stepping in place (remaining stays 0) until compaction
        moving = live.astype(np.int64)
        cur[r, axis] += step[r, axis] * moving
        t_max[r, axis] += t_delta[r, axis]
        remaining[r, axis] -= moving
        live = remaining.any(axis=1)
        if live.sum() < 0.75 * len(ray):
            ray, cur, t_max, t_delta, remaining, step = (a[live] for a in (ray, cur, t_max, t_delta, remaining, step))
            live = np.ones(len(ray), dtype=bool)
    if not out_ray:
        return np.empty(0, np.int64), np.empty((0, 3), np.int64)
    return np.concatenate(out_ray), np.concatenate(out_key)


def ray_voxels(origin, end, resolution: float) -> list[tuple[int, int, int]]:
    """Ordered voxel keys from the origin voxel up to (not including) the end voxel."""
    _, keys = traverse_rays(np.asarray(origin, dtype=float)[None], np.asarray(end, dtype=float)[None], resolution)
    return [tuple(int(x) for x in k) for k in keys]


class SemanticOctree:
    """Single-writer semantic occupancy map."""

    def __init__(self, classes: int, params: OctreeParams = OctreeParams()):
        if classes < 1:
            raise ValueError("need at least one class")
        self.classes = classes
        self.params = params
        self._keys = np.empty(0, np.int64)
        self._log_odds = np.empty(0)
        self._probs = np.empty((0, classes))
        self._count = np.empty(0, np.int64)

    @property
    def resolution(self) -> float:
        return self.params.resolution

    def __len__(self):
        return len(self._keys)

    # -- storage -------------------------------------------------------------
    def _ensure(self, packed: np.ndarray) -> tuple[np.ndarray, int]:
        """Indices of (sorted, unique) packed keys, creating missing voxels."""
        pos = np.searchsorted(self._keys, packed)
        found = np.zeros(len(packed), dtype=bool)
        inb = pos < len(self._keys)
        found[inb] = self._keys[pos[inb]] == packed[inb]
        new = packed[~found]
        if len(new):
            at = pos[~found]
            self._keys = np.insert(self._keys, at, new)
            self._log_odds = np.insert(self._log_odds, at, 0.0)
            self._probs = np.insert(self._probs, at, np.full(self.classes, 1.0 / self.classes), axis=0)
            self._count = np.insert(self._count, at, 0)
        return np.searchsorted(self._keys, packed), len(new)

    def set_voxels(self, keys, log_odds, probs, counts=None) -> None:
        """Bulk load (used when reading snapshots)."""
        packed = pack_keys(np.asarray(keys, dtype=np.int64).reshape(-1, 3))
        order = np.argsort(packed, kind="stable")
        self._keys = packed[order]
        self._log_odds = np.asarray(log_odds, dtype=float)[order]
        self._probs = np.asarray(probs, dtype=float).reshape(-1, self.classes)[order]
        self._count = (np.zeros(len(packed), np.int64) if counts is None
                       else np.asarray(counts, dtype=np.int64)[order])

    def voxel(self, key) -> SemanticVoxel | None:
        k = key.as_tuple() if isinstance(key, VoxelKey) else tuple(key)
        p = pack_keys(np.array(k))
        i = np.searchsorted(self._keys, p)
        if i < len(self._keys) and self._keys[i] == p:
            return SemanticVoxel(float(self._log_odds[i]), self._probs[i].copy(), int(self._count[i]))
        return None

    def keys(self) -> np.ndarray:
        return unpack_keys(self._keys)

    def arrays(self):
        """(keys (V, 3), log_odds (V,), probs (V, c), counts (V,)) in key order."""
        return self.keys(), self._log_odds.copy(), self._probs.copy(), self._count.copy()

    # -- updates -------------------------------------------------------------
    def insert_scan(self, origin, points, class_probs) -> InsertSummary:
        """Ray-cast one scan given in the map frame.

        Per scan each voxel gets at most one miss and at most one hit; a hit
        wins over a miss.  Endpoint voxels hit by several points get one
        semantic update with their mean class distribution.
        """
        prm = self.params
        origin = np.asarray(origin, dtype=float).reshape(3)
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        probs = np.asarray(class_probs, dtype=float).reshape(-1, self.classes)
        if len(pts) == 0:
            return InsertSummary(0, 0, 0, 0)
        ends = pts
        is_hit = np.ones(len(pts), dtype=bool)
        if prm.max_range is not None:
            d = pts - origin
            dist = np.linalg.norm(d, axis=1)
            far = dist > prm.max_range
            ends = np.where(far[:, None], origin + d * (prm.max_range / np.maximum(dist, 1e-12))[:, None], pts)
            is_hit = ~far
        _, free_keys = traverse_rays(origin, ends, prm.resolution)
        free = np.unique(pack_keys(free_keys))
        end_keys = pack_keys(np.floor(ends / prm.resolution).astype(np.int64))
        # truncated rays clear their last voxel too
        free = np.union1d(free, end_keys[~is_hit])
        hit_keys, inverse = np.unique(end_keys[is_hit], return_inverse=True)
        free = np.setdiff1d(free, hit_keys, assume_unique=True)

        # one insertion pass per scan: growing the store copies every voxel
        _, n_new = self._ensure(np.union1d(free, hit_keys))
        if len(free):
            idx = np.searchsorted(self._keys, free)
            self._log_odds[idx] = np.clip(self._log_odds[idx] + prm.l_miss, prm.l_min, prm.l_max)
            self._count[idx] += 1
        if len(hit_keys):
            sums = np.zeros((len(hit_keys), self.classes))
            np.add.at(sums, inverse, probs[is_hit])
            mean = sums / np.bincount(inverse, minlength=len(hit_keys))[:, None]
            idx = np.searchsorted(self._keys, hit_keys)
            self._log_odds[idx] = np.clip(self._log_odds[idx] + prm.l_hit, prm.l_min, prm.l_max)
            self._count[idx] += 1
            self._probs[idx] = bayes_semantics(self._probs[idx], mean, prm.likelihood_floor)
        return InsertSummary(len(pts), len(hit_keys), len(free), n_new)

    # -- export --------------------------------------------------------------
    def to_point_cloud(self):
        """Occupied voxel centres (V, 3), class probs (V, c) and occupancy (V,), key order."""
        occ = self._log_odds > self.params.l_threshold
        keys = unpack_keys(self._keys[occ])
        centers = (keys + 0.5) * self.params.resolution
        prob = 1.0 / (1.0 + np.exp(-self._log_odds[occ]))
        return centers, self._probs[occ].copy(), prob

    def occupied_keys(self) -> np.ndarray:
        return unpack_keys(self._keys[self._log_odds > self.params.l_threshold])

    def coarse_keys(self, level: int) -> np.ndarray:
        """Unique occupied parent cells ``level`` steps above the finest level."""
        if not 0 <= level <= self.params.depth:
            raise ValueError("level outside octree depth")
        return np.unique(self.occupied_keys() >> level, axis=0)
