"""Procedural scenes with an exact ground-truth renderer.

A scene is a set of textured fronto-parallel quads at known depths plus a
uniform background color. Ground truth for any camera comes from the
painter's algorithm: intersect each pixel ray with the quad planes far to
near and bilinearly sample the quad texture. Quads are axis-aligned in the
world frame (plane z = depth), so two views of one quad are related
exactly by a plane-induced homography — the oracle every geometric test
leans on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Camera


@dataclass
class Quad:
    texture: np.ndarray        # Ht×Wt×3 in [0,1]
    depth: float               # meters, world plane z = depth
    extent: float              # side length, meters
    offset: tuple[float, float] = (0.0, 0.0)  # world x, y of the quad center


@dataclass
class Scene:
    quads: list[Quad]
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    depth_range: tuple[float, float] = (2.0, 10.0)

    def quad_depths(self) -> np.ndarray:
        return np.array([q.depth for q in self.quads])


@dataclass(frozen=True)
class SceneConfig:
    z_near: float = 2.0
    z_far: float = 10.0
    min_quads: int = 1
    max_quads: int = 8
    texture_size: int = 64
    max_extent: float = 6.0
    min_extent: float = 1.5
    snap_depths: tuple[float, ...] | None = None  # force quads onto exact depths


# -- procedural textures --------------------------------------------------


def _checker_texture(rng, n):
    cell = int(rng.integers(8, 17))
    a = rng.uniform(0.1, 1.0, 3)
    b = rng.uniform(0.0, 0.9, 3)
    yy, xx = np.mgrid[0:n, 0:n]
    m = ((yy // cell + xx // cell) % 2).astype(np.float64)
    return (m[..., None] * a + (1 - m[..., None]) * b).astype(np.float32)


def _noise_texture(rng, n):
    # smooth value noise: low-res random grid blown up bilinearly
    base = int(rng.integers(4, 10))
    coarse = rng.uniform(0.0, 1.0, (base, base, 3))
    src = np.linspace(0, base - 1, n)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, base - 1)
    f = src - i0
    rows = coarse[i0] * (1 - f)[:, None, None] + coarse[i1] * f[:, None, None]
    out = rows[:, i0] * (1 - f)[None, :, None] + rows[:, i1] * f[None, :, None]
    return out.astype(np.float32)


def _gradient_texture(rng, n):
    a = rng.uniform(0.0, 1.0, 3)
    b = rng.uniform(0.0, 1.0, 3)
    t = np.linspace(0.0, 1.0, n)
    if rng.integers(2):
        ramp = t[:, None, None]
    else:
        ramp = t[None, :, None]
    return (a * (1 - ramp) + b * ramp).astype(np.float32) * np.ones((n, n, 1), np.float32)


_TEXTURES = [_checker_texture, _noise_texture, _gradient_texture]


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> Scene:
    """Deterministic scene from a seed: 1-8 textured quads with depths drawn
    uniformly in disparity across [z_near, z_far]."""
    rng = np.random.default_rng(seed)
    n_quads = int(rng.integers(config.min_quads, config.max_quads + 1))
    quads = []
    for _ in range(n_quads):
        if config.snap_depths is not None:
            depth = float(config.snap_depths[rng.integers(len(config.snap_depths))])
        else:
            disp = rng.uniform(1.0 / config.z_far, 1.0 / config.z_near)
            depth = 1.0 / disp
        tex = _TEXTURES[rng.integers(len(_TEXTURES))](rng, config.texture_size)
        extent = float(rng.uniform(config.min_extent, config.max_extent))
        # keep quads roughly in front of the rig
        span = 0.35 * depth
        offset = (float(rng.uniform(-span, span)), float(rng.uniform(-span, span)))
        quads.append(Quad(texture=tex, depth=depth, extent=extent, offset=offset))
    background = rng.uniform(0.0, 0.6, 3)
    return Scene(quads=quads, background=background,
                 depth_range=(config.z_near, config.z_far))


def render_ground_truth(scene: Scene, cam: Camera) -> np.ndarray:
    """Exact painter's-algorithm render: H×W×3 float32 in [0,1]."""
    h, w = cam.height, cam.width
    out = np.broadcast_to(scene.background.astype(np.float32), (h, w, 3)).copy()
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # pixel rays in world coordinates
    dirs_cam = np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy, np.ones_like(xs)], axis=-1)
    dirs = dirs_cam @ cam.R.T
    for quad in sorted(scene.quads, key=lambda q: -q.depth):
        dz = dirs[..., 2]
        safe_dz = np.where(np.abs(dz) < 1e-12, 1e-12, dz)
        t = (quad.depth - cam.c[2]) / safe_dz
        px = cam.c[0] + t * dirs[..., 0]
        py = cam.c[1] + t * dirs[..., 1]
        th, tw = quad.texture.shape[:2]
        u = (px - (quad.offset[0] - quad.extent / 2)) / quad.extent * (tw - 1)
        v = (py - (quad.offset[1] - quad.extent / 2)) / quad.extent * (th - 1)
        inside = (t > 0) & (u >= 0) & (u <= tw - 1) & (v >= 0) & (v <= th - 1)
        uc = np.clip(u, 0, tw - 1)
        vc = np.clip(v, 0, th - 1)
        u0 = np.floor(uc).astype(np.int64)
        v0 = np.floor(vc).astype(np.int64)
        u1 = np.minimum(u0 + 1, tw - 1)
        v1 = np.minimum(v0 + 1, th - 1)
        fu = (uc - u0)[..., None]
        fv = (vc - v0)[..., None]
        tex = quad.texture
        sample = (tex[v0, u0] * (1 - fu) * (1 - fv) + tex[v0, u1] * fu * (1 - fv) +
                  tex[v1, u0] * (1 - fu) * fv + tex[v1, u1] * fu * fv)
        out = np.where(inside[..., None], sample, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# -- camera rigs ----------------------------------------------------------


@dataclass(frozen=True)
class RigConfig:
    name: str = "cross5"
    spacing: float = 0.12          # meters between the rig center and arms
    jitter: float = 0.4            # target jitter as a fraction of spacing
    width: int = 96
    height: int = 96
    focal: float = 96.0


_RIG_OFFSETS = {
    "cross5": [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)],
    "quad4": [(0.5, 0.5), (-0.5, 0.5), (0.5, -0.5), (-0.5, -0.5)],
    "grid10": [(x, y) for y in (-0.5, 0.5) for x in (-1.0, -0.5, 0.0, 0.5, 1.0)],
}


def rig_cameras(rig: RigConfig) -> list[Camera]:
    if rig.name not in _RIG_OFFSETS:
        raise ValueError(f"unknown rig {rig.name!r}; choose from {sorted(_RIG_OFFSETS)}")
    cams = []
    for ox, oy in _RIG_OFFSETS[rig.name]:
        cams.append(Camera(fx=rig.focal, fy=rig.focal,
                           cx=(rig.width - 1) / 2, cy=(rig.height - 1) / 2,
                           width=rig.width, height=rig.height,
                           c=np.array([ox * rig.spacing, oy * rig.spacing, 0.0])))
    return cams


def target_camera(rig: RigConfig, jitter_xy=(0.0, 0.0)) -> Camera:
    return Camera(fx=rig.focal, fy=rig.focal,
                  cx=(rig.width - 1) / 2, cy=(rig.height - 1) / 2,
                  width=rig.width, height=rig.height,
                  c=np.array([jitter_xy[0], jitter_xy[1], 0.0]))


def make_example(scene: Scene, rig: RigConfig, seed: int):
    """Render a training example: (input images, input cams, target image,
    target cam). The target stays strictly inside the rig hull."""
    rng = np.random.default_rng(seed)
    cams = rig_cameras(rig)
    j = rig.jitter * rig.spacing
    tgt = target_camera(rig, (float(rng.uniform(-j, j)), float(rng.uniform(-j, j))))
    views = [render_ground_truth(scene, c) for c in cams]
    target_img = render_ground_truth(scene, tgt)
    return views, cams, target_img, tgt


# -- scene files ----------------------------------------------------------


def save_scene(scene: Scene, directory):
    """scene.json + one PNG texture per quad."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {"background": [float(v) for v in scene.background],
           "depth_range": list(scene.depth_range), "quads": []}
    for i, q in enumerate(scene.quads):
        name = f"texture_{i:03d}.png"
        Image.fromarray((np.clip(q.texture, 0, 1) * 255).round().astype(np.uint8)).save(directory / name)
        doc["quads"].append({"texture": name, "depth": q.depth,
                             "extent": q.extent, "offset": list(q.offset)})
    (directory / "scene.json").write_text(json.dumps(doc, indent=2))


def load_scene(directory) -> Scene:
    from PIL import Image

    directory = Path(directory)
    doc = json.loads((directory / "scene.json").read_text())
    quads = []
    for q in doc["quads"]:
        tex = np.asarray(Image.open(directory / q["texture"]), dtype=np.float32) / 255.0
        quads.append(Quad(texture=tex[..., :3], depth=q["depth"],
                          extent=q["extent"], offset=tuple(q["offset"])))
    return Scene(quads=quads, background=np.asarray(doc["background"]),
                 depth_range=tuple(doc["depth_range"]))
