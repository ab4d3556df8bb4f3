"""Post-processing: ink masking and per-component majority relabeling.

The raw network prediction can say anything at background pixels, so it is
first multiplied with the binarized page.  Optionally, every connected ink
component (roughly a glyph) is then repainted with its most frequent
predicted label, making components label-uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def apply_bitmask(pred: np.ndarray, bin_mask: np.ndarray) -> np.ndarray:
    """Keep predicted labels only at ink pixels; background becomes 0."""
    pred = np.asarray(pred)
    bin_mask = np.asarray(bin_mask)
    if pred.shape != bin_mask.shape:
        raise DataError(f"shape mismatch: pred {pred.shape} vs bin {bin_mask.shape}")
    return np.where(bin_mask == 1, pred, 0).astype(pred.dtype)


@dataclass
class ComponentSet:
    """Dense component ids per pixel; -1 marks background."""

    ids: np.ndarray  # int32 (H, W)
    count: int

    def pixels(self, comp: int):
        """(ys, xs) index arrays of one component."""
        return np.nonzero(self.ids == comp)


_OFFSETS4 = ((-1, 0), (0, -1))
_OFFSETS8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1))


def connected_components(bin_mask: np.ndarray, connectivity: int = 8) -> ComponentSet:
    """Union-find connected-component labeling of the foreground."""
    if connectivity not in (4, 8):
        raise DataError(f"connectivity must be 4 or 8, got {connectivity}")
    bin_mask = np.asarray(bin_mask)
    h, w = bin_mask.shape
    ids = np.full((h, w), -1, dtype=np.int32)
    parent: list[int] = []

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:  # path compression
            parent[a], a = root, parent[a]
        return root

    offsets = _OFFSETS4 if connectivity == 4 else _OFFSETS8
    fg = bin_mask == 1
    for y in range(h):
        for x in range(w):
            if not fg[y, x]:
                continue
            label = -1
            for dy, dx in offsets:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and ids[ny, nx] >= 0:
                    r = find(ids[ny, nx])
                    if label == -1:
                        label = r
                    elif r != label:
                        parent[r] = label
            if label == -1:
                label = len(parent)
                parent.append(label)
            ids[y, x] = label

    # second pass: compress to dense ids 0..count-1
    remap: dict[int, int] = {}
    for y in range(h):
        for x in range(w):
            if ids[y, x] >= 0:
                root = find(ids[y, x])
                if root not in remap:
                    remap[root] = len(remap)
                ids[y, x] = remap[root]
    return ComponentSet(ids=ids, count=len(remap))


def mode_relabel(pred: np.ndarray, comps: ComponentSet) -> np.ndarray:
    """Repaint each component with its modal label (ties -> smallest label).

    `pred` must already be ink-masked: label > 0 exactly on component pixels.
    """
    pred = np.asarray(pred)
    if pred.shape != comps.ids.shape:
        raise DataError(f"shape mismatch: pred {pred.shape} vs components {comps.ids.shape}")
    if comps.count == 0:
        return pred.copy()
    fg = comps.ids >= 0
    labels = pred[fg]
    if (labels <= 0).any():
        raise DataError("masked prediction has label 0 on a foreground pixel")
    num_labels = int(labels.max()) + 1
    counts = np.zeros((comps.count, num_labels), dtype=np.int64)
    np.add.at(counts, (comps.ids[fg], labels), 1)
    modal = counts[:, 1:].argmax(axis=1) + 1  # argmax takes the smallest label on ties
    out = pred.copy()
    out[fg] = modal[comps.ids[fg]]
    return out


def postprocess(pred: np.ndarray, bin_mask: np.ndarray, connectivity: int = 8,
                relabel: bool = True) -> np.ndarray:
    """Full post-processing chain: bitmask, then optional mode relabeling."""
    masked = apply_bitmask(pred, bin_mask)
    if not relabel:
        return masked
    comps = connected_components(bin_mask, connectivity)
    return mode_relabel(masked, comps)
