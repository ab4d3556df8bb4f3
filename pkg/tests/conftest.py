"""Shared fixtures: synthetic text-like pages and on-disk datasets."""

import numpy as np
import pytest

from folioseg.pixmap import LabelPalette, Pixmap, encode_label_mask, write_pixmap

PALETTE3 = LabelPalette([
    (1, (255, 0, 0), "text"),
    (2, (255, 255, 0), "marginalia"),
    (3, (0, 0, 255), "headline"),
])


def make_synthetic_page(rng, width=64, height=96, n_classes=3, strokes_per_band=10):
    """A white page with dark strokes in horizontal class bands.

    Returns (gray uint8 (h, w), gt int32 (h, w)).  The ground truth labels
    whole bands (fore- and background), mimicking block-style region masks.
    Strokes keep a margin inside their band so connected components never
    straddle two classes, even under 8-connectivity.
    """
    img = np.full((height, width), 255, dtype=np.uint8)
    gt = np.zeros((height, width), dtype=np.int32)
    band = height // n_classes
    for k in range(n_classes):
        y0 = k * band
        y1 = (k + 1) * band if k < n_classes - 1 else height
        gt[y0:y1] = k + 1
        for _ in range(strokes_per_band):
            y = int(rng.integers(y0 + 2, y1 - 2))
            x0 = int(rng.integers(0, width - 12))
            ln = int(rng.integers(4, 12))
            img[y, x0 : x0 + ln] = int(rng.integers(0, 60))
    return img, gt


def write_synthetic_dataset(dirpath, n_pages, seed=0, width=64, height=96,
                            split_tags=None, name="synthetic"):
    """Write pages, colored ground truth, and a manifest; returns its path."""
    dirpath.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = [f"name {name}"]
    for idx, color, label in PALETTE3.entries:
        lines.append(f"class {idx} {bytes(color).hex()} {label}")
    for i in range(n_pages):
        img, gt = make_synthetic_page(rng, width, height)
        write_pixmap(dirpath / f"page{i:03d}.pgm", Pixmap(img))
        write_pixmap(dirpath / f"page{i:03d}_gt.ppm", encode_label_mask(gt, PALETTE3))
        tag = ""
        if split_tags is not None:
            tag = f" {split_tags[i]}"
        lines.append(f"record page{i:03d}.pgm page{i:03d}_gt.ppm{tag}")
    manifest = dirpath / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


@pytest.fixture
def palette3():
    return PALETTE3


@pytest.fixture
def tiny_dataset(tmp_path):
    """2-page 64x96 dataset on disk; returns the manifest path."""
    return write_synthetic_dataset(tmp_path / "data", 2, seed=42)
