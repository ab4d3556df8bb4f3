"""Page-segmentation toolkit for historical documents.

A self-contained pipeline: NetPBM/PNG raster I/O, page pre-processing
(ratio fit, rescale, Otsu binarization), a from-scratch encoder-decoder FCN
with a background-ignoring cross-entropy loss, connected-component
post-processing, foreground pixel accuracy metrics, and a reproducible
experiment harness.
"""

__version__ = "0.1.0"

from .errors import DataError, FoliosegError, NumericError
from .metrics import MetricsReport, aggregate, evaluate, pool
from .model import FcnConfig, ModelParams, build_fcn, forward, load_params, predict_labels, save_params
from .pixmap import (
    DatasetManifest,
    LabelPalette,
    Pixmap,
    decode_label_mask,
    encode_label_mask,
    load_manifest,
    read_pixmap,
    write_pixmap,
)
from .postprocess import apply_bitmask, connected_components, mode_relabel, postprocess
from .preprocess import (
    NetInputSpec,
    binarize_otsu,
    fit_to_ratio,
    make_target,
    prepare_page,
    resize,
)
from .training import TrainConfig, masked_ce, train, train_on_samples

__all__ = [
    "DataError", "FoliosegError", "NumericError",
    "MetricsReport", "aggregate", "evaluate", "pool",
    "FcnConfig", "ModelParams", "build_fcn", "forward", "load_params",
    "predict_labels", "save_params",
    "DatasetManifest", "LabelPalette", "Pixmap", "decode_label_mask",
    "encode_label_mask", "load_manifest", "read_pixmap", "write_pixmap",
    "apply_bitmask", "connected_components", "mode_relabel", "postprocess",
    "NetInputSpec", "binarize_otsu", "fit_to_ratio", "make_target",
    "prepare_page", "resize",
    "TrainConfig", "masked_ce", "train", "train_on_samples",
]
