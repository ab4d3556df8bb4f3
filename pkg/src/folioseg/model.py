"""Encoder-decoder FCN assembly, initialization, inference, checkpoints.

The network is a fixed 9-layer stack: five 5x5 convolutions (two 2x2 max
pools interleaved) encode the page, then a 5x5 transposed convolution, two
stride-2 transposed convolutions that restore the resolution, and a final
5x5 transposed convolution that emits one logit channel per foreground
class.  Class 0 (ignored background) has no output channel.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import DataError
from .pixmap import Pixmap
from .preprocess import NetInputSpec, pad_to_divisor, prepare_page, resize_nearest

_MAGIC = b"FSEGCKPT"
_VERSION = 1


@dataclass(frozen=True)
class FcnConfig:
    """Architecture hyperparameters; defaults give the full-size network."""

    num_classes: int
    encoder_filters: tuple = (40, 60, 120, 160, 240)
    decoder_filters: tuple = (240, 120, 60)
    kernel: int = 5

    def __post_init__(self):
        if not 1 <= self.num_classes <= 6:
            raise DataError(f"class count must be 1..6, got {self.num_classes}")
        if len(self.encoder_filters) != 5 or len(self.decoder_filters) != 3:
            raise DataError("expected 5 encoder and 3 decoder filter counts")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise DataError("kernel must be odd and >= 1")

    def hash(self) -> str:
        blob = json.dumps(
            {
                "num_classes": self.num_classes,
                "encoder_filters": list(self.encoder_filters),
                "decoder_filters": list(self.decoder_filters),
                "kernel": self.kernel,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()


def layer_plan(cfg: FcnConfig) -> list[dict]:
    """Ordered layer descriptors; pools sit after encoder convs 2 and 4."""
    e = cfg.encoder_filters
    d = cfg.decoder_filters
    k = cfg.kernel
    p = k // 2
    plan = [
        dict(kind="conv", in_c=1, out_c=e[0], k=k, stride=1, pad=p, relu=True),
        dict(kind="conv", in_c=e[0], out_c=e[1], k=k, stride=1, pad=p, relu=True),
        dict(kind="pool"),
        dict(kind="conv", in_c=e[1], out_c=e[2], k=k, stride=1, pad=p, relu=True),
        dict(kind="conv", in_c=e[2], out_c=e[3], k=k, stride=1, pad=p, relu=True),
        dict(kind="pool"),
        dict(kind="conv", in_c=e[3], out_c=e[4], k=k, stride=1, pad=p, relu=True),
        dict(kind="deconv", in_c=e[4], out_c=d[0], k=k, stride=1, pad=p, relu=True),
        dict(kind="deconv", in_c=d[0], out_c=d[1], k=2, stride=2, pad=0, relu=True),
        dict(kind="deconv", in_c=d[1], out_c=d[2], k=2, stride=2, pad=0, relu=True),
        dict(kind="deconv", in_c=d[2], out_c=cfg.num_classes, k=k, stride=1, pad=p, relu=False),
    ]
    return plan


@dataclass
class ModelParams:
    """Trained state: layer weights plus the input normalization stats."""

    config: FcnConfig
    seed: int
    layers: list = field(default_factory=list)  # (w, b) per parameterized layer
    norm_mean: float = 0.0
    norm_std: float = 1.0

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            self.seed,
            [(w.copy(), b.copy()) for w, b in self.layers],
            self.norm_mean,
            self.norm_std,
        )


def build_fcn(cfg: FcnConfig, seed: int) -> ModelParams:
    """Initialize weights uniform in +-sqrt(6/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    layers = []
    for spec in layer_plan(cfg):
        if spec["kind"] == "pool":
            continue
        ic, oc, k = spec["in_c"], spec["out_c"], spec["k"]
        fan_in = ic * k * k
        bound = np.sqrt(6.0 / fan_in)
        if spec["kind"] == "conv":
            w = rng.uniform(-bound, bound, size=(oc, ic, k, k))
        else:
            w = rng.uniform(-bound, bound, size=(ic, oc, k, k))
        layers.append((w, np.zeros(oc)))
    return ModelParams(config=cfg, seed=seed, layers=layers)


def forward(params: ModelParams, x: np.ndarray, want_cache: bool = False):
    """Run the network on (N, 1, H, W) input; H and W must divide 4.

    Returns logits (N, C, H, W), or (logits, cache) with want_cache for the
    backward pass.
    """
    n, c, h, w = x.shape
    if c != 1:
        raise DataError(f"network input must have 1 channel, got {c}")
    if h % 4 or w % 4:
        raise DataError(
            f"input dims must be divisible by 4 (got {h}x{w}); pad the input first"
        )
    cache = []
    li = 0
    for spec in layer_plan(params.config):
        if spec["kind"] == "pool":
            y, arg = ops.maxpool2_fwd(x)
            cache.append(("pool", arg, x.shape))
            x = y
            continue
        wgt, b = params.layers[li]
        pre_in = x
        if spec["kind"] == "conv":
            x = ops.conv2d_fwd(x, wgt, b, spec["stride"], spec["pad"])
        else:
            x = ops.deconv2d_fwd(x, wgt, b, spec["stride"], spec["pad"])
        pre_act = x
        if spec["relu"]:
            x = ops.relu_fwd(x)
        cache.append((spec["kind"], li, pre_in, pre_act, spec))
        li += 1
    if want_cache:
        return x, cache
    return x


def backward(params: ModelParams, cache: list, dlogits: np.ndarray):
    """Parameter gradients [(dw, db), ...] in layer order, given dlogits."""
    grads = [None] * len(params.layers)
    dy = dlogits
    for entry in reversed(cache):
        if entry[0] == "pool":
            _, arg, in_shape = entry
            dy = ops.maxpool2_bwd(arg, dy)
            continue
        kind, li, pre_in, pre_act, spec = entry
        if spec["relu"]:
            dy = ops.relu_bwd(pre_act, dy)
        wgt, _ = params.layers[li]
        if kind == "conv":
            dy, dw, db = ops.conv2d_bwd(pre_in, wgt, dy, spec["stride"], spec["pad"])
        else:
            dy, dw, db = ops.deconv2d_bwd(pre_in, wgt, dy, spec["stride"], spec["pad"])
        grads[li] = (dw, db)
    return grads


def normalize_input(params: ModelParams, gray_net: np.ndarray) -> np.ndarray:
    """Map 8-bit samples to standardized floats using the stored stats."""
    return (gray_net.astype(np.float64) / 255.0 - params.norm_mean) / params.norm_std


def predict_net(params: ModelParams, gray_net: np.ndarray, spec: NetInputSpec) -> np.ndarray:
    """Argmax labels (1..C) at network resolution for one prepared page."""
    x = normalize_input(params, gray_net)[None, None]
    xp = pad_to_divisor(x, spec.pad_divisor)
    logits = forward(params, xp)
    logits = logits[:, :, : x.shape[2], : x.shape[3]]
    # smallest channel wins ties; labels are argmax index + 1
    return (logits[0].argmax(axis=0) + 1).astype(np.int32)


def predict_labels(params: ModelParams, page: Pixmap, spec: NetInputSpec | None = None) -> np.ndarray:
    """Predict a full-resolution label mask for a raw page."""
    spec = spec or NetInputSpec()
    prep = prepare_page(page, None, spec)
    labels_net = predict_net(params, prep.gray_net, spec)
    cw, ch = prep.canvas_size
    labels_canvas = resize_nearest(labels_net, cw, ch)
    ox, oy = prep.offset
    ow, oh = prep.orig_size
    return labels_canvas[oy : oy + oh, ox : ox + ow]


# ---------------------------------------------------------------------------
# Checkpoints


def save_params(path, params: ModelParams) -> None:
    """Write a checkpoint: magic, version, JSON header, raw float64 tensors."""
    header = {
        "config": {
            "num_classes": params.config.num_classes,
            "encoder_filters": list(params.config.encoder_filters),
            "decoder_filters": list(params.config.decoder_filters),
            "kernel": params.config.kernel,
        },
        "config_hash": params.config.hash(),
        "seed": params.seed,
        "norm_mean": params.norm_mean,
        "norm_std": params.norm_std,
        "shapes": [[list(w.shape), list(b.shape)] for w, b in params.layers],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(hbytes)))
        f.write(hbytes)
        for w, b in params.layers:
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path, expected_config: FcnConfig | None = None) -> ModelParams:
    """Read a checkpoint; refuses wrong magic, version, or config hash."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path}: not a folioseg checkpoint (bad magic)")
    off = len(_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, off)
    off += 8
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[off : off + hlen])
    except json.JSONDecodeError:
        raise DataError(f"{path}: corrupt checkpoint header") from None
    off += hlen
    cfg = FcnConfig(
        num_classes=header["config"]["num_classes"],
        encoder_filters=tuple(header["config"]["encoder_filters"]),
        decoder_filters=tuple(header["config"]["decoder_filters"]),
        kernel=header["config"]["kernel"],
    )
    if cfg.hash() != header["config_hash"]:
        raise DataError(f"{path}: config hash mismatch inside checkpoint")
    if expected_config is not None and expected_config.hash() != cfg.hash():
        raise DataError(
            f"{path}: checkpoint config (C={cfg.num_classes}) does not match "
            f"expected config (C={expected_config.num_classes})"
        )
    layers = []
    for wshape, bshape in header["shapes"]:
        for shape in (wshape, bshape):
            n = int(np.prod(shape)) * 8
            if off + n > len(blob):
                raise DataError(f"{path}: truncated checkpoint data")
            arr = np.frombuffer(blob[off : off + n], dtype="<f8").reshape(shape).copy()
            off += n
            if shape is wshape:
                w = arr
            else:
                b = arr
        layers.append((w, b))
    return ModelParams(
        config=cfg,
        seed=header["seed"],
        layers=layers,
        norm_mean=header["norm_mean"],
        norm_std=header["norm_std"],
    )
