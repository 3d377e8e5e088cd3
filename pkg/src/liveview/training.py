"""Training loop, loss, evaluation and the nearest-view baseline."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .geometry import equidisparity_planes
from .metrics import psnr, ssim
from .network import LiveViewNet, ModelMeta, NetworkConfig
from .optim import Adam
from .render import (nearest_view_baseline, render_image,
                     render_input_centered_t, render_target_centered_t)
from .scenes import RigConfig, SceneConfig, generate_scene, make_example

HELD_OUT_SEED_OFFSET = 1_000_000_000  # evaluation seeds never collide with training


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, scene_seed):
        super().__init__(f"non-finite loss at iteration {iteration} (scene seed {scene_seed}); "
                         f"rerun with this seed to reproduce")
        self.iteration = iteration
        self.scene_seed = scene_seed


@dataclass
class TrainConfig:
    num_views: int = 5
    planes: int = 16
    iterations: int = 5000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    loss: str = "l1"            # or "l2"
    seed: int = 0
    centering: str = "target"   # or "input"
    arch: str = "perplane"      # or "static"
    head_mode: str = "softmax_V"
    val_every: int = 500
    val_scenes: int = 8
    scene: SceneConfig = field(default_factory=SceneConfig)
    rig: RigConfig = field(default_factory=RigConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.num_views < 2:
            raise ValueError("need at least two views")


def image_loss(pred, gt, kind: str = "l1"):
    """Mean absolute (default) or mean squared error over pixels and channels."""
    pred = T.astensor(pred)
    gt = T.astensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"loss shape mismatch: {pred.shape} vs {gt.shape}")
    diff = T.sub(pred, gt)
    if kind == "l1":
        return T.tmean(T.absolute(diff))
    if kind == "l2":
        return T.tmean(T.mul(diff, diff))
    raise ValueError(f"unknown loss kind {kind!r}")


def _render_example_t(net, views, cams, target, planes, centering):
    if centering == "input":
        return render_input_centered_t(net, views, cams, cams[0], target, planes)
    return render_target_centered_t(net, views, cams, target, planes)


def build_network(config: TrainConfig) -> LiveViewNet:
    net_config = NetworkConfig(num_views=config.num_views, head_mode=config.head_mode,
                               arch=config.arch,
                               static_planes=config.planes if config.arch == "static" else 0)
    meta = ModelMeta(centering=config.centering, trained_planes=config.planes,
                     z_near=config.scene.z_near, z_far=config.scene.z_far)
    return LiveViewNet(net_config, seed=config.seed, meta=meta)


def train(config: TrainConfig, checkpoint_path=None, log_path=None, progress=False) -> LiveViewNet:
    """Run the full loop: scene -> example -> warp -> network -> composite ->
    loss -> backward -> Adam. Deterministic for a fixed config."""
    net = build_network(config)
    opt = Adam(net.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    planes = equidisparity_planes(config.scene.z_near, config.scene.z_far, config.planes)
    log_rows = []
    losses = []
    for i in range(config.iterations):
        scene_seed = config.seed * 100_000_000 + i
        scene = generate_scene(scene_seed, config.scene)
        views, cams, gt, tgt = make_example(scene, config.rig, scene_seed + 1)

        t0 = time.perf_counter()
        net.train()
        pred, _ = _render_example_t(net, views, cams, tgt, planes, config.centering)
        loss = image_loss(pred, T.Tensor(gt.transpose(2, 0, 1)), config.loss)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise TrainingDiverged(i, scene_seed)
        opt.zero_grad()
        loss.backward()
        opt.step()
        wall_ms = (time.perf_counter() - t0) * 1000.0
        losses.append(loss_val)

        val_psnr = ""
        if config.val_every and ((i + 1) % config.val_every == 0 or i == config.iterations - 1):
            val_psnr = validation_psnr(net, config, planes)
            if progress:
                print(f"iter {i + 1}/{config.iterations} loss {loss_val:.5f} "
                      f"val_psnr {val_psnr:.2f} dB", flush=True)
        log_rows.append((i, loss_val, val_psnr, wall_ms))

    net.eval()
    if checkpoint_path is not None:
        net.save(checkpoint_path)
    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "loss", "val_psnr", "wall_ms"])
            w.writerows(log_rows)
    net.last_losses = losses
    return net


def validation_psnr(net, config: TrainConfig, planes) -> float:
    net.eval()
    vals = []
    for k in range(config.val_scenes):
        seed = HELD_OUT_SEED_OFFSET + config.seed * 100_000 + k
        scene = generate_scene(seed, config.scene)
        views, cams, gt, tgt = make_example(scene, config.rig, seed + 1)
        img, _ = render_image(net, views, cams, tgt, planes)
        vals.append(psnr(img, gt))
    net.train()
    return float(np.mean(vals))


@dataclass
class EvalResult:
    psnr_values: np.ndarray
    ssim_values: np.ndarray
    baseline_psnr: np.ndarray

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim_values))


def evaluate(net: LiveViewNet, num_scenes: int, seed: int, planes,
             scene_config: SceneConfig = SceneConfig(), rig: RigConfig = RigConfig(),
             select_k: int | None = None, select_from: int = 64) -> EvalResult:
    """Held-out evaluation on `num_scenes` fresh scenes.

    With `select_k`, each scene is first rendered at `select_from`
    equi-disparity planes, the top-K alpha-histogram planes are selected,
    and the reported render uses only those planes.
    """
    from .mpi import select_planes

    psnrs, ssims, base = [], [], []
    for k in range(num_scenes):
        s = HELD_OUT_SEED_OFFSET + seed * 100_000 + k
        scene = generate_scene(s, scene_config)
        views, cams, gt, tgt = make_example(scene, rig, s + 1)
        if select_k is not None:
            full = equidisparity_planes(scene_config.z_near, scene_config.z_far, select_from)
            _, alpha = render_image(net, views, cams, tgt, full)
            sel = select_planes(alpha, select_k)
            img, _ = render_image(net, views, cams, tgt, full, indices=sel.indices)
        else:
            img, _ = render_image(net, views, cams, tgt, planes)
        psnrs.append(psnr(img, gt))
        ssims.append(ssim(img, gt))
        base.append(psnr(nearest_view_baseline(views, cams, tgt), gt))
    return EvalResult(np.asarray(psnrs), np.asarray(ssims), np.asarray(base))
