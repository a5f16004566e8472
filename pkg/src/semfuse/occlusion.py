"""Occlusion masking of projected lidar points and label transfer.

Points are visited nearest-first; each visible point stamps a rectangle sized
by the lidar's angular resolution in pixels and later points landing on a
stamped pixel are treated as hidden from the camera.  Visible points then
collect a class distribution by weighting the probability image with their
pixel Gaussian over a 90% confidence window.  Narrow Gaussians weight each
pixel by the mean density over its cell rather than the density at its centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import FisheyeIntrinsics
from .motion_correction import ProjectedPoints

CHI2_90_2DOF = 4.605
DEGENERATE_SIGMA = 0.5
RHO_CLAMP = 0.999
# pixel weights average the pdf over ceil(SUBSAMPLE_SCALE / sigma) sub-rows and
# sub-columns of the pixel cell, capped at MAX_SUBSAMPLES; one sample (the pixel
# centre) once sigma >= SUBSAMPLE_SCALE
SUBSAMPLE_SCALE = 6.0
MAX_SUBSAMPLES = 10
_GATHER_BUDGET = 4_000_000


@dataclass(frozen=True)
class GapSpec:
    u_gap: int
    v_gap: int
    theta_h: float
    theta_v: float

    @property
    def half_extents(self) -> tuple[int, int]:
        return math.ceil(self.u_gap / 2), math.ceil(self.v_gap / 2)


@dataclass(eq=False)
class LabeledPoints:
    """Column-wise labelled points; ``class_probs`` rows are simplexes."""

    packet: np.ndarray
    point: np.ndarray
    mean_xyz: np.ndarray
    cov_xyz: np.ndarray
    class_probs: np.ndarray
    mean_uv: np.ndarray
    cov_uv: np.ndarray
    visible: np.ndarray
    dropped: int = 0

    def __len__(self):
        return len(self.packet)

    @classmethod
    def empty(cls, classes: int) -> "LabeledPoints":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 3)), np.empty((0, 3, 3)),
                   np.empty((0, classes)), np.empty((0, 2)), np.empty((0, 2, 2)), np.empty(0, bool))

    @classmethod
    def concatenate(cls, parts, classes: int) -> "LabeledPoints":
        parts = [p for p in parts if p is not None]
        if not parts:
            return cls.empty(classes)
        out = cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                    ("packet", "point", "mean_xyz", "cov_xyz", "class_probs", "mean_uv", "cov_uv", "visible")))
        out.dropped = sum(p.dropped for p in parts)
        return out

    def subset(self, idx) -> "LabeledPoints":
        return LabeledPoints(self.packet[idx], self.point[idx], self.mean_xyz[idx], self.cov_xyz[idx],
                             self.class_probs[idx], self.mean_uv[idx], self.cov_uv[idx], self.visible[idx],
                             self.dropped)


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def compute_gaps(k: FisheyeIntrinsics, theta_h: float, theta_v: float) -> GapSpec:
    """Pixel spacing of neighbouring lidar returns, taking d_t ~ z."""
    if not (theta_h > 0 and theta_v > 0):
        raise ValueError("angular resolutions must be positive")
    u_gap = max(1, int(math.floor(k.fx * math.tan(theta_h) + 0.5)))
    v_gap = max(1, int(math.floor(k.fy * math.tan(theta_v) + 0.5)))
    return GapSpec(u_gap, v_gap, theta_h, theta_v)


def sort_by_range(ranges) -> np.ndarray:
    """Stable ascending ordering; accepts ProjectedPoints or a range array."""
    r = ranges.range if isinstance(ranges, ProjectedPoints) else np.asarray(ranges, dtype=float)
    return np.argsort(r, kind="stable")


def occlusion_filter(uv_sorted, gaps: GapSpec, dims: tuple[int, int]) -> np.ndarray:
    """Visibility flags for pixel positions already ordered nearest-first.

    ``dims`` is (height, width).
    """
    h, w = dims
    pix = _round_half_up(np.asarray(uv_sorted, dtype=float).reshape(-1, 2))
    us, vs = pix[:, 0].tolist(), pix[:, 1].tolist()
    hu, hv = gaps.half_extents
    mask = np.zeros((h, w), dtype=bool)
    visible = np.zeros(len(us), dtype=bool)
    for i, (u, v) in enumerate(zip(us, vs)):
        if u < 0 or v < 0 or u >= w or v >= h or mask[v, u]:
            continue
        visible[i] = True
        mask[max(v - hv, 0):v + hv + 1, max(u - hu, 0):u + hu + 1] = True
    return visible


def mask_points(points: ProjectedPoints, gaps: GapSpec, dims: tuple[int, int]) -> np.ndarray:
    """Visibility flags in the original order of ``points``."""
    order = sort_by_range(points)
    vis_sorted = occlusion_filter(points.mean_uv[order], gaps, dims)
    visible = np.zeros(len(points), dtype=bool)
    visible[order] = vis_sorted
    return visible


def in_image(points: ProjectedPoints, dims: tuple[int, int]) -> np.ndarray:
    h, w = dims
    pix = _round_half_up(points.mean_uv)
    return (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)


def bivariate_normal_pdf(du, dv, sigma_u, sigma_v, rho):
    """Bivariate normal density at offsets (du, dv) from the mean."""
    one_m = 1.0 - rho * rho
    q = (du / sigma_u) ** 2 + (dv / sigma_v) ** 2 - 2.0 * rho * du * dv / (sigma_u * sigma_v)
    return np.exp(-0.5 * q / one_m) / (2.0 * np.pi * sigma_u * sigma_v * np.sqrt(one_m))


def transfer_labels(points: ProjectedPoints, probs, visible=None) -> LabeledPoints:
    """Class distribution per visible point by pdf-weighted window sums.

    ``probs`` is a (c, n, m) probability image (or ClassProbabilityImage).
    Points whose window misses the image entirely are dropped and counted.
    """
    p_img = getattr(probs, "probs", probs)
    c, h, w = p_img.shape
    pix_major = np.ascontiguousarray(np.moveaxis(p_img, 0, -1))  # (n, m, c)
    if visible is None:
        visible = np.ones(len(points), dtype=bool)
    sel = np.nonzero(visible)[0]
    pts = points.subset(sel)
    n = len(pts)
    out = np.zeros((n, c))
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return LabeledPoints.empty(c)

    su = np.sqrt(np.maximum(pts.cov_uv[:, 0, 0], 0.0))
    sv = np.sqrt(np.maximum(pts.cov_uv[:, 1, 1], 0.0))
    degenerate = (su < DEGENERATE_SIGMA) & (sv < DEGENERATE_SIGMA)

    dg = np.nonzero(degenerate)[0]
    if len(dg):
        pix = _round_half_up(pts.mean_uv[dg])
        ok = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
        out[dg[ok]] = pix_major[pix[ok, 1], pix[ok, 0]]
        keep[dg[ok]] = True

    nd = np.nonzero(~degenerate)[0]
    if len(nd):
        # a single collapsed axis still needs a positive width for the pdf
        su_nd = np.maximum(su[nd], 1e-3)
        sv_nd = np.maximum(sv[nd], 1e-3)
        k = math.sqrt(CHI2_90_2DOF)
        up = np.ceil(k * su_nd).astype(np.int64)
        vp = np.ceil(k * sv_nd).astype(np.int64)
        rho = np.clip(pts.cov_uv[nd, 0, 1] / (su_nd * sv_nd), -RHO_CLAMP, RHO_CLAMP)
        mu = pts.mean_uv[nd]
        sums, ok = _window_sums(pix_major, mu, su_nd, sv_nd, rho, up, vp)
        out[nd[ok]] = sums[ok]
        keep[nd[ok]] = True

    total = out.sum(axis=1)
    keep &= total > 0.0
    out[keep] /= total[keep, None]
    kept = np.nonzero(keep)[0]
    res = LabeledPoints(pts.packet[kept], pts.point[kept], pts.mean_xyz[kept], pts.cov_xyz[kept], out[kept],
                        pts.mean_uv[kept], pts.cov_uv[kept], np.ones(len(kept), dtype=bool))
    res.dropped = int(n - len(kept))
    return res


def subsample_counts(sigma) -> np.ndarray:
    """Sub-samples per pixel axis used to average the pdf over a pixel cell."""
    return np.clip(np.ceil(SUBSAMPLE_SCALE / np.asarray(sigma, dtype=float)), 1, MAX_SUBSAMPLES).astype(np.int64)


def _cell_pdf(du, dv, su, sv, rho, nu: int, nv: int):
    """Mean pdf over an nu x nv midpoint grid inside each pixel cell."""
    acc = 0.0
    for a in (np.arange(nu) + 0.5) / nu - 0.5:
        for b in (np.arange(nv) + 0.5) / nv - 0.5:
            acc = acc + bivariate_normal_pdf(du + a, dv + b, su, sv, rho)
    return acc / (nu * nv)


def _window_sums(pix_major, mu, su, sv, rho, up, vp):
    """Sum of P(u, v) * f(u, v) over each point's integer window, grouped by window size."""
    h, w, c = pix_major.shape
    n = len(mu)
    sums = np.zeros((n, c))
    ok = np.zeros(n, dtype=bool)
    nu, nv = subsample_counts(su), subsample_counts(sv)
    sizes = ((up * 100_003 + vp) * 16 + nu) * 16 + nv
    for key in np.unique(sizes):
        grp = np.nonzero(sizes == key)[0]
        gu, gv = int(up[grp[0]]), int(vp[grp[0]])
        su_n, sv_n = int(nu[grp[0]]), int(nv[grp[0]])
        du = np.arange(2 * gu + 1)
        dv = np.arange(2 * gv + 1)
        cells = len(du) * len(dv)
        chunk = max(1, _GATHER_BUDGET // (cells * (c + su_n * sv_n)))
        for s in range(0, len(grp), chunk):
            g = grp[s:s + chunk]
            u0 = np.ceil(mu[g, 0] - gu).astype(np.int64)
            v0 = np.ceil(mu[g, 1] - gv).astype(np.int64)
            uu = u0[:, None, None] + du[None, None, :]
            vv = v0[:, None, None] + dv[None, :, None]
            inside = ((uu <= mu[g, 0, None, None] + gu) & (vv <= mu[g, 1, None, None] + gv)
                      & (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h))
            f = _cell_pdf(uu - mu[g, 0, None, None], vv - mu[g, 1, None, None],
                          su[g, None, None], sv[g, None, None], rho[g, None, None], su_n, sv_n)
            f = np.where(inside, f, 0.0)
            vals = pix_major[np.clip(vv, 0, h - 1), np.clip(uu, 0, w - 1)]  # (G, V, U, c)
            sums[g] = np.einsum("gvu,gvuc->gc", f, vals)
            ok[g] = inside.reshape(len(g), -1).any(axis=1)
    return sums, ok
