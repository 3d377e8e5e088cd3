"""Cameras, plane-induced homographies and bilinear backward warping.

Conventions, used identically everywhere (training and serving):

* pixel centers sit at integer coordinates, principal point included;
* world units are meters, disparity is inverse depth (1/m);
* camera pose is camera-to-world: ``X_world = R @ X_cam + c``;
* MPI planes are fronto-parallel to the *target* camera.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        c = np.asarray(self.c, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "c", c)
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.width < 8 or self.height < 8:
            raise GeometryError("image dims must be at least 8 pixels")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or not np.isclose(np.linalg.det(R), 1.0, atol=1e-6):
            raise GeometryError("R must be a rotation (orthonormal, det +1)")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": [float(v) for v in self.R.ravel()],
                "c": [float(v) for v in self.c]}

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                      width=int(d["width"]), height=int(d["height"]),
                      R=np.asarray(d.get("R", np.eye(3).ravel()), dtype=np.float64).reshape(3, 3),
                      c=np.asarray(d.get("c", [0, 0, 0]), dtype=np.float64))


def look_at_rotation(c, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation for a camera at `c` looking at `target`.

    Camera axes: +z forward, +x right, +y down-ish (derived from `up`).
    """
    c = np.asarray(c, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - c
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise GeometryError("look_at target coincides with camera center")
    fwd = fwd / n
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(upv, fwd)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise GeometryError("up vector parallel to view direction")
    right /= rn
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


@dataclass(frozen=True)
class PlaneSet:
    """Ordered near-to-far depths with their disparity bounds."""

    depths: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self):
        depths = np.asarray(self.depths, dtype=np.float64)
        object.__setattr__(self, "depths", depths)
        if np.any(depths <= 0):
            raise GeometryError("plane depths must be positive")
        disp = 1.0 / depths
        if len(depths) > 1 and np.any(np.diff(disp) >= 0):
            raise GeometryError("depths must be strictly near-to-far (decreasing disparity)")

    def __len__(self):
        return len(self.depths)

    def subset(self, indices) -> "PlaneSet":
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        return PlaneSet(self.depths[idx], self.d_min, self.d_max)


def equidisparity_planes(z_near: float, z_far: float, D: int) -> PlaneSet:
    """D planes with disparities linearly spaced from 1/z_near to 1/z_far.

    D=1 yields the disparity midpoint.
    """
    if not (0 < z_near < z_far):
        raise GeometryError(f"need 0 < z_near < z_far, got ({z_near}, {z_far})")
    if D < 1:
        raise GeometryError("need at least one plane")
    d_near = 1.0 / z_near
    d_far = 1.0 / z_far
    if D == 1:
        disp = np.array([(d_near + d_far) / 2.0])
    else:
        disp = np.linspace(d_near, d_far, D)
    return PlaneSet(1.0 / disp, d_min=d_far, d_max=d_near)


def plane_homography(src: Camera, tgt: Camera, z: float) -> np.ndarray:
    """Backward-warp homography for a fronto-parallel plane at depth z.

    Maps homogeneous target pixels to source pixels:
    ``H = K_src (R_rel + t_rel nᵀ / z) K_tgt⁻¹`` with (R_rel, t_rel) the
    rigid transform taking target-camera coordinates to source-camera
    coordinates and n = (0, 0, 1) in the target frame. Scale-normalized so
    H[2,2] = 1 when nonzero.
    """
    if z <= 0:
        raise GeometryError("plane depth must be positive")
    R_rel = src.R.T @ tgt.R
    t_rel = src.R.T @ (tgt.c - src.c)
    n = np.array([0.0, 0.0, 1.0])
    H = src.K @ (R_rel + np.outer(t_rel, n) / z) @ np.linalg.inv(tgt.K)
    if abs(H[2, 2]) > 1e-12:
        H = H / H[2, 2]
    return H


def warp_image(src_image: np.ndarray, H_matrix: np.ndarray, out_dims: tuple[int, int]):
    """Backward-warp with bilinear sampling.

    Output pixel p takes the bilinear sample of `src_image` at H·p;
    samples outside the source rectangle give value 0 and mask 0.
    Returns (warped H'×W'×C image, H'×W' validity mask).
    """
    H_matrix = np.asarray(H_matrix, dtype=np.float64)
    if np.linalg.matrix_rank(H_matrix) < 3:
        raise GeometryError("degenerate homography")
    out_h, out_w = out_dims
    img = np.asarray(src_image)
    src_h, src_w = img.shape[:2]

    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    denom = H_matrix[2, 0] * xs + H_matrix[2, 1] * ys + H_matrix[2, 2]
    denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    sx = (H_matrix[0, 0] * xs + H_matrix[0, 1] * ys + H_matrix[0, 2]) / denom
    sy = (H_matrix[1, 0] * xs + H_matrix[1, 1] * ys + H_matrix[1, 2]) / denom

    valid = (sx >= 0) & (sx <= src_w - 1) & (sy >= 0) & (sy <= src_h - 1)
    sxc = np.clip(sx, 0, src_w - 1)
    syc = np.clip(sy, 0, src_h - 1)
    x0 = np.floor(sxc).astype(np.int64)
    y0 = np.floor(syc).astype(np.int64)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = sxc - x0
    fy = syc - y0

    if img.ndim == 2:
        img = img[..., None]
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out = (img[y0, x0] * w00[..., None] + img[y0, x1] * w01[..., None] +
           img[y1, x0] * w10[..., None] + img[y1, x1] * w11[..., None])
    out *= valid[..., None]
    mask = valid.astype(out.dtype)
    if src_image.ndim == 2:
        out = out[..., 0]
    return out.astype(np.asarray(src_image).dtype, copy=False), mask


def warp_coords(H_matrix: np.ndarray, out_dims: tuple[int, int]):
    """Source-coordinate maps (xs, ys) for warping with `bilinear_sample`."""
    out_h, out_w = out_dims
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    denom = H_matrix[2, 0] * xs + H_matrix[2, 1] * ys + H_matrix[2, 2]
    denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    sx = (H_matrix[0, 0] * xs + H_matrix[0, 1] * ys + H_matrix[0, 2]) / denom
    sy = (H_matrix[1, 0] * xs + H_matrix[1, 1] * ys + H_matrix[1, 2]) / denom
    return sx, sy


# -- cameras.json ----------------------------------------------------------


def save_cameras(path, inputs: list[Camera], target: Camera | None = None):
    doc = {"inputs": [c.to_dict() for c in inputs]}
    if target is not None:
        doc["target"] = target.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2))


def load_cameras(path):
    doc = json.loads(Path(path).read_text())
    inputs = [Camera.from_dict(d) for d in doc["inputs"]]
    target = Camera.from_dict(doc["target"]) if "target" in doc else None
    return inputs, target
