"""HWV assembly, weight normalization, blending, compositing and dynamic
plane selection.

The volume layout is D×V×3×H×W: every input view backward-warped to the
target camera at each plane depth. Compositing runs back-to-front with the
over operator starting from a black background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, PlaneSet, plane_homography, warp_image

DIST_EPS = 1e-4  # meters; keeps the exact-view limit finite


class MpiError(ValueError):
    pass


@dataclass
class HWV:
    data: np.ndarray   # D×V×3×H×W in [0,1]
    masks: np.ndarray  # D×V×H×W validity
    plane_set: PlaneSet
    target_camera: Camera


@dataclass
class MpiOutput:
    alpha: np.ndarray    # D×H×W in [0,1]
    weights: np.ndarray  # D×V×H×W, sums to 1 over V after normalization
    plane_set: PlaneSet


@dataclass
class PlaneSelection:
    indices: np.ndarray   # sorted, unique, subset of [0, D)
    histogram: np.ndarray  # D bin counts, sums to H*W


def build_hwv(views, cams, target: Camera, planes: PlaneSet, indices=None) -> HWV:
    """Warp all input views to the target camera at each requested plane.

    `indices` restricts the build to a subset of planes (dynamic
    generation); each plane slice is an independent pure function of its
    own depth, so partial builds match slices of full builds bit-exactly.
    """
    if len(views) != len(cams):
        raise MpiError(f"{len(views)} views but {len(cams)} cameras")
    if len(views) < 2:
        raise MpiError("need at least two input views")
    h, w = views[0].shape[:2]
    for img in views:
        if img.shape[:2] != (h, w):
            raise MpiError("all input views must share the same dimensions")

    depth_list = planes.depths if indices is None else planes.depths[np.asarray(indices)]
    D, V = len(depth_list), len(views)
    out_h, out_w = target.height, target.width
    data = np.zeros((D, V, 3, out_h, out_w), dtype=np.float32)
    masks = np.zeros((D, V, out_h, out_w), dtype=np.float32)
    for d, z in enumerate(depth_list):
        for v, (img, cam) in enumerate(zip(views, cams)):
            Hm = plane_homography(cam, target, z)
            warped, mask = warp_image(np.asarray(img, dtype=np.float32), Hm, (out_h, out_w))
            data[d, v] = warped.transpose(2, 0, 1)
            masks[d, v] = mask
    pset = planes if indices is None else PlaneSet(depth_list, planes.d_min, planes.d_max)
    return HWV(data=data, masks=masks, plane_set=pset, target_camera=target)


def view_distances(cams, target: Camera) -> np.ndarray:
    return np.array([np.linalg.norm(cam.c - target.c) for cam in cams])


def distance_normalize(raw_weights: np.ndarray, cams, target: Camera) -> np.ndarray:
    """Scale raw blending weights by inverse view-to-target distance, then
    renormalize to sum to 1 over views at every (plane, pixel).

    A pixel whose raw weights are all zero falls back to pure
    inverse-distance weighting.
    """
    if raw_weights.shape[1] != len(cams):
        raise MpiError("weight/view count mismatch")
    inv = 1.0 / (DIST_EPS + view_distances(cams, target))
    w = raw_weights * inv[None, :, None, None]
    total = w.sum(axis=1, keepdims=True)
    fallback = inv / inv.sum()
    out = np.where(total > 0, w / np.where(total > 0, total, 1.0),
                   fallback[None, :, None, None])
    return out.astype(raw_weights.dtype, copy=False)


def blend_plane(hwv_slice: np.ndarray, weights_slice: np.ndarray) -> np.ndarray:
    """Per-pixel weighted sum of the V warped views: V×3×H×W, V×H×W -> 3×H×W."""
    return np.einsum("vchw,vhw->chw", hwv_slice, weights_slice)


def composite(plane_rgb: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Back-to-front over-compositing onto black: D×3×H×W, D×H×W -> 3×H×W.

    Planes are stored near-to-far; iteration runs far-to-near.
    """
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise MpiError("alpha values must lie in [0, 1]")
    out = np.zeros_like(plane_rgb[0])
    for d in range(plane_rgb.shape[0] - 1, -1, -1):
        a = alpha[d][None]
        out = plane_rgb[d] * a + out * (1.0 - a)
    return np.clip(out, 0.0, 1.0)


def select_planes(alpha: np.ndarray, K: int) -> PlaneSelection:
    """Histogram per-pixel argmax-alpha depth indices; keep the top-K bins.

    Ties break toward nearer planes, both in the per-pixel argmax and in
    the bin ranking.
    """
    D = alpha.shape[0]
    if not (1 <= K <= D):
        raise MpiError(f"K must be in [1, {D}], got {K}")
    # argmax returns the first maximal index; planes are stored near-to-far,
    # so ties already resolve toward the nearer plane
    idx = np.argmax(alpha, axis=0)
    histogram = np.bincount(idx.ravel(), minlength=D)
    order = np.lexsort((np.arange(D), -histogram))
    chosen = np.sort(order[:K])
    return PlaneSelection(indices=chosen, histogram=histogram)


def render_input_centered(mpi_rgb: np.ndarray, mpi_alpha: np.ndarray,
                          ref: Camera, target: Camera, planes: PlaneSet) -> np.ndarray:
    """Warp a reference-centered MPI to the target view and composite.

    Plane depths live in the reference frame; each RGBA plane is
    homography-warped (alpha alongside colors, out-of-bounds transparent)
    and the stack is composited back-to-front.
    """
    D = len(planes)
    h, w = target.height, target.width
    rgb_t = np.zeros((D, 3, h, w), dtype=mpi_rgb.dtype)
    alpha_t = np.zeros((D, h, w), dtype=mpi_alpha.dtype)
    for d, z in enumerate(planes.depths):
        # plane fronto-parallel in the reference frame: invert the map that
        # carries reference pixels to target pixels
        Hm = np.linalg.inv(plane_homography(target, ref, z))
        rgba = np.concatenate([mpi_rgb[d], mpi_alpha[d][None]], axis=0).transpose(1, 2, 0)
        warped, _ = warp_image(rgba, Hm, (h, w))
        rgb_t[d] = warped[..., :3].transpose(2, 0, 1)
        alpha_t[d] = np.clip(warped[..., 3], 0.0, 1.0)
    return composite(rgb_t, alpha_t)
