"""The per-plane blending U-Net and its complexity accounting.

Encoder conv1..conv5 (strides 1,2,2,2,1), decoder with bilinear 2x
upsampling and skip concatenations, conv9 head. Every conv except the head
is followed by batchnorm and ReLU. Channel 0 of the head goes through a
sigmoid (alpha); the remaining channels through a channel softmax (raw
blending weights).

Two head modes exist:

* ``softmax_V`` (default): V weight channels, one per input view.
* ``compact_Vminus1``: V-1 weight channels; view V receives weight 0.

A ``static`` architecture variant consumes the whole warped volume at once
(3·V·D input channels) and emits all D planes in a single pass; it cannot
re-space its planes after training and exists for the ablation study.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import (HEAD_COMPACT_VMINUS1, HEAD_SOFTMAX_V, CheckpointError,
                         load_checkpoint, save_checkpoint)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# (name, in_ch, out_ch, stride) with V-dependent endpoints filled in later
_ENCODER = [("conv1", None, 16, 1), ("conv2", 16, 32, 2), ("conv3", 32, 64, 2),
            ("conv4", 64, 128, 2), ("conv5", 128, 128, 1)]
_DECODER = [("conv6", 192, 64), ("conv7", 96, 32), ("conv8", 48, 16)]


@dataclass(frozen=True)
class NetworkConfig:
    num_views: int
    head_mode: str = "softmax_V"  # or "compact_Vminus1"
    arch: str = "perplane"        # or "static"
    static_planes: int = 0        # D for the static variant

    def __post_init__(self):
        if self.num_views < 2:
            raise ValueError("need at least two views")
        if self.head_mode not in ("softmax_V", "compact_Vminus1"):
            raise ValueError(f"unknown head mode {self.head_mode!r}")
        if self.arch not in ("perplane", "static"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.arch == "static" and self.static_planes < 1:
            raise ValueError("static arch needs static_planes >= 1")

    @property
    def weight_channels(self) -> int:
        return self.num_views if self.head_mode == "softmax_V" else self.num_views - 1

    @property
    def head_channels(self) -> int:
        per_plane = 1 + self.weight_channels
        return per_plane * (self.static_planes if self.arch == "static" else 1)

    @property
    def input_channels(self) -> int:
        per_plane = 3 * self.num_views
        return per_plane * (self.static_planes if self.arch == "static" else 1)

    @property
    def head_flag(self) -> int:
        return HEAD_SOFTMAX_V if self.head_mode == "softmax_V" else HEAD_COMPACT_VMINUS1


def _layer_plan(config: NetworkConfig):
    """(name, c_in, c_out, stride, spatial_scale, has_bn) for every conv."""
    plan = []
    scale = 1.0
    for name, cin, cout, stride in _ENCODER:
        cin = config.input_channels if cin is None else cin
        scale /= stride ** 2
        plan.append((name, cin, cout, stride, scale, True))
    scales = {"conv6": 1 / 16, "conv7": 1 / 4, "conv8": 1.0}
    for name, cin, cout in _DECODER:
        plan.append((name, cin, cout, 1, scales[name], True))
    plan.append(("conv9", 16, config.head_channels, 1, 1.0, False))
    return plan


def param_count(config: NetworkConfig) -> int:
    """Learnable parameters: conv weights+biases plus batchnorm gamma/beta
    (running statistics excluded)."""
    total = 0
    for _, cin, cout, _, _, has_bn in _layer_plan(config):
        total += 9 * cin * cout + cout
        if has_bn:
            total += 2 * cout
    return total


def opx_count(config: NetworkConfig, D: int, H: int, W: int) -> float:
    """Floating-point operations per output pixel for a D-plane render.

    Convolution cost is counted as one fused multiply-add per MAC,
    accounted at the output resolution; homography warping, weight
    normalization, blending and compositing are included. Linear in D.
    """
    per_plane = 0.0
    for _, cin, cout, _, scale, has_bn in _layer_plan(config):
        per_plane += 9 * cin * cout * scale
        if has_bn:
            per_plane += 3 * cout * scale  # normalize + scale/shift + relu
    V = config.num_views
    per_plane += 42 * V   # homography transform + bilinear sample, per view
    per_plane += 4 * V    # distance normalization
    per_plane += 3 * V    # blending MACs
    per_plane += 8        # over-compositing
    return float(D) * per_plane


class _Conv:
    def __init__(self, name, cin, cout, stride, rng, dtype):
        bound = np.sqrt(6.0 / (cin * 9))
        self.name = name
        self.stride = stride
        self.weight = T.Tensor(rng.uniform(-bound, bound, (cout, cin, 3, 3)).astype(dtype),
                               requires_grad=True)
        self.bias = T.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=1)


class _BatchNorm:
    def __init__(self, name, ch, dtype):
        self.name = name
        self.gamma = T.Tensor(np.ones(ch, dtype=dtype), requires_grad=True)
        self.beta = T.Tensor(np.zeros(ch, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(ch, dtype=np.float64)
        self.running_var = np.ones(ch, dtype=np.float64)

    def __call__(self, x, training):
        return T.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training, momentum=BN_MOMENTUM, eps=BN_EPS)


@dataclass
class ModelMeta:
    """Rendering-time context a checkpoint carries alongside its weights."""
    centering: str = "target"   # or "input"
    trained_planes: int = 0
    z_near: float = 0.0
    z_far: float = 0.0


class LiveViewNet:
    """Maps one HWV plane slice (3V channels) to alpha + raw blending weights."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32,
                 meta: ModelMeta | None = None):
        self.config = config
        self.training = False
        self.meta = meta or ModelMeta()
        rng = np.random.default_rng(seed)
        self.convs: dict[str, _Conv] = {}
        self.bns: dict[str, _BatchNorm] = {}
        for name, cin, cout, stride, _, has_bn in _layer_plan(config):
            self.convs[name] = _Conv(name, cin, cout, stride, rng, dtype)
            if has_bn:
                self.bns[name] = _BatchNorm(name, cout, dtype)

    # -- parameter access --------------------------------------------------

    def parameters(self) -> dict[str, T.Tensor]:
        out = {}
        for name, conv in self.convs.items():
            out[f"{name}/weight"] = conv.weight
            out[f"{name}/bias"] = conv.bias
        for name, bn in self.bns.items():
            out[f"{name}/bn_gamma"] = bn.gamma
            out[f"{name}/bn_beta"] = bn.beta
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.parameters().items()}
        for name, bn in self.bns.items():
            out[f"{name}/bn_running_mean"] = bn.running_mean
            out[f"{name}/bn_running_var"] = bn.running_var
        return out

    def to_dtype(self, dtype) -> "LiveViewNet":
        """Cast all learnable tensors in place (running stats stay float64)."""
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    # -- forward -----------------------------------------------------------

    def _block(self, name, x):
        x = self.convs[name](x)
        return T.relu(self.bns[name](x, self.training))

    def forward(self, x):
        """x: (3V[,D])×H×W slice or a batch with a leading axis.

        Returns (alpha, raw_weights) with the batch axis preserved;
        softmax weight slices sum to 1 along the channel axis.
        """
        x = T.astensor(x)
        squeeze = x.ndim == 3
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[1] != self.config.input_channels:
            raise ValueError(f"expected {self.config.input_channels} input channels, got {x.shape[1]}")
        H, W = x.shape[-2], x.shape[-1]
        pad_h = (-H) % 8
        pad_w = (-W) % 8
        x = T.pad_reflect2d(x, pad_h, pad_w)

        c1 = self._block("conv1", x)
        c2 = self._block("conv2", c1)
        c3 = self._block("conv3", c2)
        c4 = self._block("conv4", c3)
        c5 = self._block("conv5", c4)
        u5 = T.bilinear_upsample2x(c5)
        c6 = self._block("conv6", T.concat([u5, c3], axis=1))
        u6 = T.bilinear_upsample2x(c6)
        c7 = self._block("conv7", T.concat([u6, c2], axis=1))
        u7 = T.bilinear_upsample2x(c7)
        c8 = self._block("conv8", T.concat([u7, c1], axis=1))
        out = self.convs["conv9"](c8)
        out = out[:, :, :H, :W]

        per_plane = 1 + self.config.weight_channels
        if self.config.arch == "static":
            D = self.config.static_planes
            N = out.shape[0]
            out = T.reshape(out, (N, D, per_plane, H, W))
            alpha = T.sigmoid(out[:, :, 0])
            weights = T.softmax(out[:, :, 1:], axis=2)
            if squeeze:
                alpha = alpha[0]
                weights = weights[0]
            return alpha, weights

        alpha = T.sigmoid(out[:, 0])
        weights = T.softmax(out[:, 1:], axis=1)
        if squeeze:
            alpha = alpha[0]
            weights = weights[0]
        return alpha, weights

    __call__ = forward

    # -- persistence -------------------------------------------------------

    _ARCHS = ["perplane", "static"]
    _CENTERINGS = ["target", "input"]

    def save(self, path):
        arrays = dict(self.state_arrays())
        arrays["meta/arch"] = np.array([self._ARCHS.index(self.config.arch)], dtype=np.float32)
        arrays["meta/static_planes"] = np.array([self.config.static_planes], dtype=np.float32)
        arrays["meta/centering"] = np.array([self._CENTERINGS.index(self.meta.centering)], dtype=np.float32)
        arrays["meta/trained_planes"] = np.array([self.meta.trained_planes], dtype=np.float32)
        arrays["meta/depth_range"] = np.array([self.meta.z_near, self.meta.z_far], dtype=np.float32)
        save_checkpoint(path, arrays, self.config.num_views, self.config.head_flag)

    @classmethod
    def load(cls, path) -> "LiveViewNet":
        arrays, num_views, head_flag = load_checkpoint(path)
        head_mode = "softmax_V" if head_flag == HEAD_SOFTMAX_V else "compact_Vminus1"
        arch = cls._ARCHS[int(arrays.get("meta/arch", [0])[0])]
        static_planes = int(arrays.get("meta/static_planes", [0])[0])
        config = NetworkConfig(num_views=num_views, head_mode=head_mode,
                               arch=arch, static_planes=static_planes)
        net = cls(config)
        zn, zf = arrays.get("meta/depth_range", np.zeros(2))
        net.meta = ModelMeta(centering=cls._CENTERINGS[int(arrays.get("meta/centering", [0])[0])],
                             trained_planes=int(arrays.get("meta/trained_planes", [0])[0]),
                             z_near=float(zn), z_far=float(zf))
        params = net.parameters()
        for name, p in params.items():
            if name not in arrays:
                raise CheckpointError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise CheckpointError(f"shape mismatch for {name}: "
                                      f"{arrays[name].shape} vs {p.data.shape}")
            p.data = arrays[name].astype(p.data.dtype)
        for name, bn in net.bns.items():
            bn.running_mean = arrays[f"{name}/bn_running_mean"].astype(np.float64)
            bn.running_var = arrays[f"{name}/bn_running_var"].astype(np.float64)
        return net
