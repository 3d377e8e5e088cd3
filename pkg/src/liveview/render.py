"""End-to-end rendering: network prediction, weight normalization, blending
and compositing, for both centering modes and both architectures.

Everything here is expressed with the autodiff tensor ops, so the same
code path serves training (gradients flow back to the network) and
inference (wrapped in `no_grad`, results unwrapped to numpy).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .geometry import Camera, PlaneSet, plane_homography, warp_coords
from .mpi import DIST_EPS, HWV, build_hwv, view_distances
from .network import LiveViewNet


def predict_planes(net: LiveViewNet, hwv: HWV, batch_size: int = 8):
    """Run the network over every plane of `hwv`.

    Returns (alpha, raw_weights) tensors of shape D×H×W and D×V_w×H×W.
    The per-plane architecture is evaluated in plane batches (identical
    results to one-at-a-time evaluation in eval mode); the static
    architecture consumes the full volume at once.
    """
    D, V, _, H, W = hwv.data.shape
    if net.config.arch == "static":
        if D != net.config.static_planes:
            raise ValueError(f"static network expects {net.config.static_planes} planes, got {D}")
        x = hwv.data.reshape(3 * V * D, H, W)
        return net.forward(x)
    x = hwv.data.reshape(D, 3 * V, H, W)
    alphas, weights = [], []
    for lo in range(0, D, batch_size):
        a, w = net.forward(x[lo:lo + batch_size])
        alphas.append(a)
        weights.append(w)
    if len(alphas) == 1:
        return alphas[0], weights[0]
    return T.concat(alphas, axis=0), T.concat(weights, axis=0)


def normalize_weights(raw_weights, cams, target: Camera):
    """Inverse-distance scaling + renormalization, on tensors.

    With the compact V-1 head, the missing view (the last input)
    gets raw weight 0 before normalization.
    """
    raw_weights = T.astensor(raw_weights)
    D, Vw, H, W = raw_weights.shape
    V = len(cams)
    if Vw == V - 1:
        zeros = T.Tensor(np.zeros((D, 1, H, W), dtype=raw_weights.dtype))
        raw_weights = T.concat([raw_weights, zeros], axis=1)
    elif Vw != V:
        raise ValueError(f"{Vw} weight channels for {V} views")
    inv = (1.0 / (DIST_EPS + view_distances(cams, target))).astype(raw_weights.dtype)
    w = T.mul(raw_weights, inv[None, :, None, None])
    return T.div(w, T.tsum(w, axis=1, keepdims=True))


def blend_planes(hwv: HWV, weights):
    """Weighted sum over views: D×V×3×H×W with D×V×H×W -> D×3×H×W tensor."""
    D, V, _, H, W = hwv.data.shape
    w5 = T.reshape(weights, (D, V, 1, H, W))
    return T.tsum(T.mul(w5, T.Tensor(hwv.data)), axis=1)


def composite_planes(plane_rgb, alpha):
    """Back-to-front over operator onto black, on tensors."""
    D = plane_rgb.shape[0]
    out = None
    for d in range(D - 1, -1, -1):
        a = T.reshape(alpha[d], (1,) + alpha.shape[1:])
        contrib = T.mul(plane_rgb[d], a)
        out = contrib if out is None else T.add(contrib, T.mul(out, T.sub(1.0, a)))
    return out


def render_target_centered_t(net, views, cams, target, planes: PlaneSet,
                             indices=None, batch_size: int = 8):
    """Differentiable target-centered render -> (3×H×W tensor, alpha tensor)."""
    hwv = build_hwv(views, cams, target, planes, indices=indices)
    alpha, raw = predict_planes(net, hwv, batch_size=batch_size)
    weights = normalize_weights(raw, cams, target)
    rgb = blend_planes(hwv, weights)
    return composite_planes(rgb, alpha), alpha


def render_input_centered_t(net, views, cams, ref: Camera, target: Camera,
                            planes: PlaneSet, indices=None, batch_size: int = 8):
    """Differentiable input-centered render: MPI predicted at `ref`, each
    RGBA plane homography-warped to `target`, then composited."""
    psv = build_hwv(views, cams, ref, planes, indices=indices)
    alpha, raw = predict_planes(net, psv, batch_size=batch_size)
    weights = normalize_weights(raw, cams, ref)
    rgb = blend_planes(psv, weights)  # D×3×H×W at the reference view

    depth_list = planes.depths if indices is None else planes.depths[np.asarray(indices)]
    D = len(depth_list)
    out_rgb, out_alpha = [], []
    for d, z in enumerate(depth_list):
        Hm = np.linalg.inv(plane_homography(target, ref, z))
        xs, ys = warp_coords(Hm, (target.height, target.width))
        rgba = T.concat([rgb[d], T.reshape(alpha[d], (1,) + alpha.shape[1:])], axis=0)
        warped, _ = T.bilinear_sample(rgba, xs, ys)
        out_rgb.append(warped[:3])
        out_alpha.append(warped[3])
    rgb_t = T.stack(out_rgb, axis=0)
    alpha_t = T.stack(out_alpha, axis=0)
    return composite_planes(rgb_t, alpha_t), alpha


def render_image(net, views, cams, target, planes, indices=None, batch_size: int = 8):
    """Inference render -> (H×W×3 float32 image, D×H×W alpha array).

    Dispatches on the checkpoint's centering mode; for input-centered
    models the reference is the first input camera.
    """
    with T.no_grad():
        if net.meta.centering == "input":
            img, alpha = render_input_centered_t(net, views, cams, cams[0], target,
                                                 planes, indices, batch_size)
        else:
            img, alpha = render_target_centered_t(net, views, cams, target,
                                                  planes, indices, batch_size)
    out = np.clip(img.data.transpose(1, 2, 0), 0.0, 1.0).astype(np.float32)
    return out, alpha.data


def predict_mpi(net, views, cams, target, planes, indices=None, batch_size: int = 8):
    """Inference MPI at the MPI camera -> (rgb D×3×H×W, alpha D×H×W) numpy.

    For target-centered models the MPI camera is `target`; for
    input-centered models it is the first input camera.
    """
    mpi_cam = cams[0] if net.meta.centering == "input" else target
    with T.no_grad():
        hwv = build_hwv(views, cams, mpi_cam, planes, indices=indices)
        alpha, raw = predict_planes(net, hwv, batch_size=batch_size)
        weights = normalize_weights(raw, cams, mpi_cam)
        rgb = blend_planes(hwv, weights)
    return rgb.data, alpha.data


def nearest_view_baseline(views, cams, target: Camera) -> np.ndarray:
    """Copy the input view whose camera center is closest to the target."""
    idx = int(np.argmin(view_distances(cams, target)))
    return np.asarray(views[idx], dtype=np.float32)
