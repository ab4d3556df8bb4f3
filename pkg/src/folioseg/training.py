"""Masked cross-entropy training of the FCN.

The loss averages -log softmax probability of the true class over pixels
whose target label is nonzero; label 0 pixels contribute nothing and receive
an exactly-zero gradient, so the network is free to predict anything at
background.  The loop is single-threaded and fully deterministic given the
seed.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import DataError, NumericError
from .model import FcnConfig, ModelParams, backward, build_fcn, forward, normalize_input
from .pixmap import DatasetManifest, Pixmap, decode_label_mask, read_pixmap
from .preprocess import NetInputSpec, PreparedPage, binarize_otsu, pad_to_divisor, prepare_page


@dataclass
class TrainConfig:
    iterations: int
    seed: int
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    batch_size: int = 1
    checkpoint_interval: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.learning_rate < 0:
            raise DataError("learning rate must be >= 0")
        if self.iterations < 1:
            raise DataError("iterations must be >= 1")
        if self.batch_size < 1:
            raise DataError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LossReport:
    iteration: int
    loss: float
    counted_pixels: int


def masked_ce(logits: np.ndarray, target: np.ndarray):
    """Mean cross entropy over pixels with target > 0.

    target holds labels 0..C with 0 ignored; logit channel c scores label
    c+1.  Returns (loss, dlogits, counted); dlogits is exactly zero at every
    ignored pixel.
    """
    n, c, h, w = logits.shape
    if target.shape != (n, h, w):
        raise DataError(f"target shape {target.shape} does not match logits {(n, h, w)}")
    if target.min() < 0 or target.max() > c:
        raise DataError(f"target label {int(target.max())} exceeds class count {c}")
    mask = target > 0
    m = int(mask.sum())
    if m == 0:
        warnings.warn("loss target is fully ignored (no foreground labels)")
        return 0.0, np.zeros_like(logits), 0
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    ni, hi, wi = np.nonzero(mask)
    ci = target[ni, hi, wi] - 1
    loss = float((logsumexp[ni, hi, wi] - z[ni, ci, hi, wi]).sum() / m)
    probs = ops.softmax_channels(logits)
    dlogits = np.zeros_like(logits)
    dlogits[ni, :, hi, wi] = probs[ni, :, hi, wi] / m
    dlogits[ni, ci, hi, wi] -= 1.0 / m
    return loss, dlogits, m


# ---------------------------------------------------------------------------
# Optimizers over flat lists of parameter arrays


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list, grads: list, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Standard Adam update with bias correction; params updated in place."""
    if len(params) != len(grads):
        raise DataError("params/grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    bc1 = 1 - beta1 ** state.t
    bc2 = 1 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DataError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


@dataclass
class SgdState:
    vel: list = field(default_factory=list)


def sgd_step(params: list, grads: list, state: SgdState, lr: float,
             momentum: float = 0.9) -> SgdState:
    """SGD with classical momentum; params updated in place."""
    if len(params) != len(grads):
        raise DataError("params/grads length mismatch")
    if not state.vel:
        state.vel = [np.zeros_like(p) for p in params]
    for p, g, vel in zip(params, grads, state.vel):
        if p.shape != g.shape:
            raise DataError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        vel *= momentum
        vel += g
        p -= lr * vel
    return state


# ---------------------------------------------------------------------------
# Dataset loading and the training loop


@dataclass
class PageSample:
    """One page with everything both training and evaluation need."""

    page: Pixmap
    gt_full: np.ndarray  # full-resolution labels
    bin_full: np.ndarray  # full-resolution ink mask
    prep: PreparedPage  # network-resolution view incl. training target
    split: str | None = None


def load_samples(manifest: DatasetManifest, spec: NetInputSpec | None = None) -> list[PageSample]:
    """Read, decode, and pre-process every record of a manifest."""
    spec = spec or NetInputSpec()
    samples = []
    for rec in manifest.records:
        page = read_pixmap(rec.image_path)
        gt = decode_label_mask(read_pixmap(rec.gt_path), manifest.palette)
        if gt.shape != (page.height, page.width):
            raise DataError(
                f"{rec.gt_path}: ground truth {gt.shape} does not match page "
                f"{(page.height, page.width)}"
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bin_full = binarize_otsu(page.to_gray())
            prep = prepare_page(page, gt, spec)
        samples.append(PageSample(page, gt, bin_full, prep, rec.split))
    return samples


def _flatten(layers):
    out = []
    for w, b in layers:
        out.extend((w, b))
    return out


def train_on_samples(samples: list[PageSample], cfg: FcnConfig, tcfg: TrainConfig,
                     spec: NetInputSpec | None = None, checkpoint_fn=None):
    """Train a fresh network on the given pages.

    Returns (params, curve).  Pages are visited in a seeded shuffled order,
    reshuffled every epoch; `checkpoint_fn(iteration, params)` fires every
    tcfg.checkpoint_interval iterations when set.
    """
    if not samples:
        raise DataError("training split is empty")
    spec = spec or NetInputSpec()
    params = build_fcn(cfg, tcfg.seed)
    grays = np.stack([s.prep.gray_net for s in samples]).astype(np.float64) / 255.0
    params.norm_mean = float(grays.mean())
    params.norm_std = max(float(grays.std()), 1e-6)

    inputs = [pad_to_divisor(normalize_input(params, s.prep.gray_net)[None], spec.pad_divisor)
              for s in samples]
    targets = [pad_to_divisor(s.prep.target[None], spec.pad_divisor) for s in samples]

    rng = np.random.default_rng(tcfg.seed)
    flat = _flatten(params.layers)
    state = AdamState() if tcfg.optimizer == "adam" else SgdState()
    curve = []
    order: list[int] = []
    it = 0
    while it < tcfg.iterations:
        if not order:
            order = list(rng.permutation(len(samples)))
        take = [order.pop(0) for _ in range(min(tcfg.batch_size, len(order)))]
        x = np.stack([inputs[i] for i in take])[:, 0]
        t = np.stack([targets[i] for i in take])[:, 0]
        logits, cache = forward(params, x[:, None] if x.ndim == 3 else x, want_cache=True)
        loss, dlogits, counted = masked_ce(logits, t)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {it} (loss={loss})")
        grads = _flatten(backward(params, cache, dlogits))
        if tcfg.optimizer == "adam":
            adam_step(flat, grads, state, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps)
        else:
            sgd_step(flat, grads, state, tcfg.learning_rate, tcfg.momentum)
        it += 1
        curve.append(LossReport(it, loss, counted))
        if checkpoint_fn and tcfg.checkpoint_interval and it % tcfg.checkpoint_interval == 0:
            checkpoint_fn(it, params)
    return params, curve


def train(manifest: DatasetManifest, cfg: FcnConfig, tcfg: TrainConfig,
          spec: NetInputSpec | None = None, split: str | None = None, checkpoint_fn=None):
    """Load a manifest and train; `split` restricts to tagged records."""
    samples = load_samples(manifest, spec)
    if split is not None:
        samples = [s for s in samples if s.split == split]
    return train_on_samples(samples, cfg, tcfg, spec, checkpoint_fn)


def save_loss_curve(path, curve: list[LossReport]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss", "counted_pixels"])
        for r in curve:
            writer.writerow([r.iteration, f"{r.loss:.10g}", r.counted_pixels])
