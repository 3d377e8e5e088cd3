"""Command-line interface: train, synthesize, benchmark, video, evaluate, serve.

Heavy imports happen inside the commands so that ``--threads`` can pin the
BLAS thread count through the environment before numpy loads.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click

_PRECISIONS = {"f32": "float32", "f64": "float64"}


def common_options(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="Base RNG seed.")(fn)
    fn = click.option("--threads", type=int, default=None,
                      help="BLAS thread count (default: leave as configured).")(fn)
    fn = click.option("--precision", type=click.Choice(["f32", "f64"]), default="f32",
                      show_default=True, help="Floating-point precision for rendering.")(fn)
    return fn


def _apply_threads(threads):
    if threads is None:
        return
    if threads < 1:
        raise click.BadParameter("--threads must be >= 1")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _load_net(path, precision):
    import numpy as np

    from .network import LiveViewNet

    try:
        net = LiveViewNet.load(path)
    except Exception as exc:  # noqa: BLE001 - one consistent CLI failure path
        raise click.ClickException(f"cannot load checkpoint {path}: {exc}") from exc
    net.eval()
    return net.to_dtype(getattr(np, _PRECISIONS[precision]))


def _save_png(path, image):
    import numpy as np
    from PIL import Image

    arr = (np.clip(np.asarray(image), 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def _load_png(path):
    import numpy as np
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def _parse_xyz(text, name):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 3:
        raise click.BadParameter(f"{name} must be 'x,y,z'")
    return [float(p) for p in parts]


def _rig_for_views(num_views):
    from .scenes import RigConfig

    names = {5: "cross5", 4: "quad4", 10: "grid10"}
    if num_views not in names:
        raise click.ClickException(f"no built-in rig with {num_views} cameras")
    return RigConfig(name=names[num_views])


def _plane_set(net, planes, plane_file):
    import numpy as np

    from .geometry import PlaneSet, equidisparity_planes

    z_near = net.meta.z_near or 2.0
    z_far = net.meta.z_far or 10.0
    if plane_file:
        depths = np.asarray(json.loads(Path(plane_file).read_text()), dtype=np.float64)
        return PlaneSet(np.sort(depths), 1.0 / z_far, 1.0 / z_near)
    return equidisparity_planes(z_near, z_far, planes)


@click.group()
def main():
    """Real-time dynamic multi-plane-image view synthesis."""


# -- train -----------------------------------------------------------------


@main.command()
@common_options
@click.option("--iterations", type=int, default=5000, show_default=True)
@click.option("--planes", type=int, default=16, show_default=True)
@click.option("--views", type=int, default=5, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--loss", type=click.Choice(["l1", "l2"]), default="l1", show_default=True)
@click.option("--centering", type=click.Choice(["target", "input"]), default="target",
              show_default=True)
@click.option("--arch", type=click.Choice(["perplane", "static"]), default="perplane",
              show_default=True)
@click.option("--head-mode", type=click.Choice(["softmax_V", "compact_Vminus1"]),
              default="softmax_V", show_default=True)
@click.option("--checkpoint-out", type=click.Path(dir_okay=False), required=True)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None,
              help="CSV training log (iteration, loss, val_psnr, wall_ms).")
def train(seed, threads, precision, iterations, planes, views, lr, loss, centering,
          arch, head_mode, checkpoint_out, log_path):
    """Train a network on procedural scenes and write a checkpoint."""
    _apply_threads(threads)
    from .training import TrainConfig, TrainingDiverged
    from .training import train as run_train

    config = TrainConfig(num_views=views, planes=planes, iterations=iterations, lr=lr,
                         loss=loss, seed=seed, centering=centering, arch=arch,
                         head_mode=head_mode)
    try:
        run_train(config, checkpoint_path=checkpoint_out, log_path=log_path, progress=True)
    except TrainingDiverged as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"checkpoint written to {checkpoint_out}")


# -- synthesize ------------------------------------------------------------


@main.command()
@common_options
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--scene", "scene_dir", type=click.Path(file_okay=False), default=None,
              help="Scene directory (scene.json + textures); rendered with the built-in rig.")
@click.option("--images", default=None, help="Comma-separated input-view PNG paths.")
@click.option("--cameras", "cameras_path", type=click.Path(dir_okay=False), default=None,
              help="cameras.json describing the input views (and optionally the target).")
@click.option("--target-pose", default="0,0,0", show_default=True,
              help="Target camera center 'x,y,z' (meters).")
@click.option("--look-at", default=None, help="Optional look-at point 'x,y,z'.")
@click.option("--planes", type=int, default=16, show_default=True)
@click.option("--plane-file", type=click.Path(dir_okay=False), default=None,
              help="JSON list of plane depths (overrides --planes).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--dump-mpi", type=click.Path(file_okay=False), default=None,
              help="Also write per-plane RGB + 16-bit alpha PNGs and planes.json here.")
def synthesize(seed, threads, precision, checkpoint, scene_dir, images, cameras_path,
               target_pose, look_at, planes, plane_file, out, dump_mpi):
    """Render one novel view of a scene and write it as a PNG."""
    _apply_threads(threads)
    import numpy as np

    from .geometry import Camera, load_cameras, look_at_rotation
    from .render import predict_mpi, render_image
    from .scenes import load_scene, render_ground_truth, rig_cameras

    net = _load_net(checkpoint, precision)

    if scene_dir is not None:
        rig = _rig_for_views(net.config.num_views)
        cams = rig_cameras(rig)
        scene = load_scene(scene_dir)
        views = [render_ground_truth(scene, c) for c in cams]
    elif images is not None and cameras_path is not None:
        paths = [p for p in images.split(",") if p]
        try:
            cams, _ = load_cameras(cameras_path)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise click.ClickException(f"cannot read cameras {cameras_path}: {exc}") from exc
        if len(paths) != len(cams):
            raise click.ClickException(
                f"{len(paths)} images but {len(cams)} cameras in {cameras_path}")
        views = [_load_png(p) for p in paths]
    else:
        raise click.ClickException("provide --scene, or both --images and --cameras")

    if len(cams) != net.config.num_views:
        raise click.ClickException(
            f"checkpoint expects {net.config.num_views} views, got {len(cams)}")

    c = np.asarray(_parse_xyz(target_pose, "--target-pose"))
    base = cams[0]
    R = np.eye(3) if look_at is None else look_at_rotation(c, _parse_xyz(look_at, "--look-at"))
    target = Camera(fx=base.fx, fy=base.fy, cx=base.cx, cy=base.cy,
                    width=base.width, height=base.height, R=R, c=c)

    plane_set = _plane_set(net, planes, plane_file)
    img, alpha = render_image(net, views, cams, target, plane_set)
    _save_png(out, img)
    click.echo(f"wrote {out} ({len(plane_set)} planes)")

    if dump_mpi:
        from PIL import Image

        dump = Path(dump_mpi)
        dump.mkdir(parents=True, exist_ok=True)
        rgb, alpha = predict_mpi(net, views, cams, target, plane_set)
        for d in range(rgb.shape[0]):
            _save_png(dump / f"plane_{d:03d}_rgb.png", rgb[d].transpose(1, 2, 0))
            a16 = (np.clip(alpha[d], 0.0, 1.0) * 65535.0).round().astype(np.uint16)
            Image.fromarray(a16).save(dump / f"plane_{d:03d}_alpha.png")
        (dump / "planes.json").write_text(json.dumps(
            {"depths": [float(z) for z in plane_set.depths],
             "centering": net.meta.centering}, indent=2))
        click.echo(f"MPI dump in {dump}")


# -- benchmark -------------------------------------------------------------

_MODES = ("dynamic_target", "static_target", "dynamic_input", "static_input")


@main.command()
@common_options
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--scene-seed", type=int, default=0, show_default=True)
@click.option("--plane-counts", default="8,16,32,64", show_default=True)
@click.option("--modes", default="dynamic_target", show_default=True,
              help=f"Comma-separated subset of {','.join(_MODES)}.")
@click.option("--runs", type=int, default=5, show_default=True)
@click.option("--warmups", type=int, default=2, show_default=True)
@click.option("--out", "out_csv", type=click.Path(dir_okay=False), default=None)
def benchmark(seed, threads, precision, checkpoint, scene_seed, plane_counts, modes,
              runs, warmups, out_csv):
    """Time rendering across plane counts and report wall-clock, OPX, PSNR, SSIM.

    "static" modes emulate a fixed-plane network by always rendering with
    the checkpoint's trained plane count; "input" modes generate the MPI at
    the first input camera and warp its planes to the target.
    """
    _apply_threads(threads)
    if runs < 5:
        raise click.BadParameter("--runs must be >= 5")
    import time

    import numpy as np

    from .geometry import equidisparity_planes
    from .metrics import psnr, ssim
    from .network import opx_count
    from .render import render_input_centered_t, render_target_centered_t
    from .scenes import SceneConfig, generate_scene, make_example
    from . import tensor as T

    mode_list = [m for m in modes.split(",") if m]
    for m in mode_list:
        if m not in _MODES:
            raise click.BadParameter(f"unknown mode {m!r}")
    counts = [int(v) for v in plane_counts.split(",") if v]

    net = _load_net(checkpoint, precision)
    scfg = SceneConfig(z_near=net.meta.z_near or 2.0, z_far=net.meta.z_far or 10.0)
    scene = generate_scene(scene_seed, scfg)
    rig = _rig_for_views(net.config.num_views)
    views, cams, gt, tgt = make_example(scene, rig, scene_seed + 1)

    def render_once(mode, D):
        planes = equidisparity_planes(scfg.z_near, scfg.z_far, D)
        with T.no_grad():
            if mode.endswith("_input"):
                img, _ = render_input_centered_t(net, views, cams, cams[0], tgt, planes)
            else:
                img, _ = render_target_centered_t(net, views, cams, tgt, planes)
        return np.clip(img.data.transpose(1, 2, 0), 0.0, 1.0)

    rows = []
    for mode in mode_list:
        for D in counts:
            eff_d = net.meta.trained_planes if mode.startswith("static") else D
            for _ in range(warmups):
                img = render_once(mode, eff_d)
            times = []
            for _ in range(runs):
                t0 = time.perf_counter()
                img = render_once(mode, eff_d)
                times.append((time.perf_counter() - t0) * 1000.0)
            rows.append({"mode": mode, "V": net.config.num_views, "D": D,
                         "planes_used": eff_d,
                         "wall_ms_mean": float(np.mean(times)),
                         "wall_ms_std": float(np.std(times)),
                         "opx": opx_count(net.config, eff_d, tgt.height, tgt.width),
                         "psnr": psnr(img, gt), "ssim": ssim(img, gt)})

    header = ["mode", "V", "D", "planes_used", "wall_ms_mean", "wall_ms_std",
              "opx", "psnr", "ssim"]
    click.echo("  ".join(f"{h:>13}" for h in header))
    for r in rows:
        click.echo("  ".join(f"{r[h]:>13.3f}" if isinstance(r[h], float) else f"{r[h]!s:>13}"
                             for h in header))
    if out_csv:
        with open(out_csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=header)
            w.writeheader()
            w.writerows(rows)
        click.echo(f"wrote {out_csv}")


# -- video -----------------------------------------------------------------


@main.command()
@common_options
@click.option("--scene-script", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON: {'seed': int, 'frames': [{'target': [x,y,z], "
                   "'quad_offsets': [[dx,dy], ...]?}, ...]}.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--keyframe-planes", type=int, default=64, show_default=True)
@click.option("--select-k", type=int, default=16, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def video(seed, threads, precision, scene_script, checkpoint, keyframe_planes,
          select_k, out_dir):
    """Render a scripted video with frame-0 plane selection amortized over
    all frames; emits numbered PNGs and a per-frame PSNR/SSIM CSV."""
    _apply_threads(threads)
    import dataclasses

    import numpy as np

    from .geometry import Camera, equidisparity_planes
    from .metrics import psnr, ssim
    from .mpi import select_planes
    from .render import render_image
    from .scenes import SceneConfig, generate_scene, render_ground_truth, rig_cameras

    try:
        script = json.loads(Path(scene_script).read_text())
        frames = script["frames"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise click.ClickException(f"bad scene script: {exc}") from exc
    if select_k > keyframe_planes:
        raise click.BadParameter("--select-k must be <= --keyframe-planes")

    net = _load_net(checkpoint, precision)
    rig = _rig_for_views(net.config.num_views)
    cams = rig_cameras(rig)
    scfg = SceneConfig(z_near=net.meta.z_near or 2.0, z_far=net.meta.z_far or 10.0)
    base_scene = generate_scene(int(script.get("seed", seed)), scfg)
    full = equidisparity_planes(scfg.z_near, scfg.z_far, keyframe_planes)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    sel = None
    base = cams[0]
    for i, frame in enumerate(frames):
        scene = base_scene
        if "quad_offsets" in frame:
            offs = frame["quad_offsets"]
            if len(offs) != len(scene.quads):
                raise click.ClickException(
                    f"frame {i}: {len(offs)} offsets for {len(scene.quads)} quads")
            quads = [dataclasses.replace(q, offset=(q.offset[0] + dx, q.offset[1] + dy))
                     for q, (dx, dy) in zip(scene.quads, offs)]
            scene = dataclasses.replace(scene, quads=quads)
        c = np.asarray(frame.get("target", [0.0, 0.0, 0.0]), dtype=np.float64)
        tgt = Camera(fx=base.fx, fy=base.fy, cx=base.cx, cy=base.cy,
                     width=base.width, height=base.height, c=c)
        views = [render_ground_truth(scene, cm) for cm in cams]
        gt = render_ground_truth(scene, tgt)

        img_full, alpha = render_image(net, views, cams, tgt, full)
        if sel is None:
            sel = select_planes(alpha, select_k)
        if select_k == keyframe_planes:
            img = img_full
        else:
            img, _ = render_image(net, views, cams, tgt, full, indices=sel.indices)
        _save_png(out / f"frame_{i:04d}.png", img)
        rows.append({"frame": i, "psnr": psnr(img, gt), "ssim": ssim(img, gt),
                     "psnr_full": psnr(img_full, gt), "ssim_full": ssim(img_full, gt)})

    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["frame", "psnr", "ssim", "psnr_full", "ssim_full"])
        w.writeheader()
        w.writerows(rows)
    click.echo(f"{len(rows)} frames in {out}")


# -- evaluate --------------------------------------------------------------


@main.command()
@common_options
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--num-scenes", type=int, default=16, show_default=True)
@click.option("--planes", type=int, default=16, show_default=True)
@click.option("--select-k", type=int, default=None,
              help="Also report dynamic top-K selection from --select-from planes.")
@click.option("--select-from", type=int, default=64, show_default=True)
def evaluate(seed, threads, precision, checkpoint, num_scenes, planes, select_k,
             select_from):
    """Held-out evaluation: mean/σ PSNR and SSIM over fresh scenes."""
    _apply_threads(threads)
    import numpy as np

    from .geometry import equidisparity_planes
    from .scenes import SceneConfig
    from .training import evaluate as run_eval

    net = _load_net(checkpoint, precision)
    scfg = SceneConfig(z_near=net.meta.z_near or 2.0, z_far=net.meta.z_far or 10.0)
    plane_set = equidisparity_planes(scfg.z_near, scfg.z_far, planes)

    def report(label, res):
        click.echo(f"{label}: psnr {res.mean_psnr:.3f} ± {np.std(res.psnr_values):.3f} dB, "
                   f"ssim {res.mean_ssim:.4f} ± {np.std(res.ssim_values):.4f}  "
                   f"(baseline psnr {np.mean(res.baseline_psnr):.3f} dB)")

    report(f"uniform D={planes}", run_eval(net, num_scenes, seed, plane_set, scfg))
    if select_k is not None:
        report(f"dynamic K={select_k}/{select_from}",
               run_eval(net, num_scenes, seed, plane_set, scfg,
                        select_k=select_k, select_from=select_from))


# -- serve -----------------------------------------------------------------


@main.command()
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--scene", "scene_dir", type=click.Path(file_okay=False), default=None,
              help="Scene directory; defaults to a procedural scene from --scene-seed.")
@click.option("--scene-seed", type=int, default=0, show_default=True)
@click.option("--planes", type=int, default=64, show_default=True)
@click.option("--max-sessions", type=int, default=4, show_default=True)
def serve(port, host, checkpoint, scene_dir, scene_seed, planes, max_sessions):
    """Run the streaming render service (HTTP + websocket)."""
    import uvicorn

    from .server import build_app

    app = build_app(checkpoint=checkpoint, scene_dir=scene_dir, scene_seed=scene_seed,
                    planes=planes, max_sessions=max_sessions)
    level = os.environ.get("LIVEVIEW_LOG", "info").lower()
    uvicorn.run(app, host=host, port=port, log_level=level)


if __name__ == "__main__":
    sys.exit(main())
