"""Raster I/O, label palettes, and dataset manifests.

Canonical interchange format is NetPBM (P2/P3 ASCII, P5/P6 binary) because it
parses bit-exactly without codec dependencies; PNG is accepted for
convenience via Pillow.  Label masks travel as palette-colored images with an
exact color-to-class mapping, black reserved for the ignored class 0.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class Pixmap:
    """8-bit raster, grayscale (H, W) or RGB (H, W, 3)."""

    samples: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.samples, dtype=np.uint8)
        if a.ndim == 2:
            pass
        elif a.ndim == 3 and a.shape[2] == 3:
            pass
        else:
            raise DataError(f"pixmap must be (H,W) or (H,W,3), got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise DataError("pixmap dimensions must be >= 1")
        self.samples = a

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 2 else 3

    def to_gray(self) -> "Pixmap":
        """Rec. 601 luma conversion; grayscale inputs pass through."""
        if self.channels == 1:
            return self
        rgb = self.samples.astype(np.float64)
        luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        return Pixmap(np.rint(luma).astype(np.uint8))


# ---------------------------------------------------------------------------
# NetPBM / PNG


def _pnm_tokens(buf: bytes):
    """Yield (token, end_offset) over a PNM header, skipping comments."""
    i = 0
    n = len(buf)
    while i < n:
        c = buf[i : i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        else:
            j = i
            while j < n and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
                j += 1
            yield buf[i:j], j
            i = j


def _read_pnm(path: Path) -> Pixmap:
    buf = path.read_bytes()
    toks = _pnm_tokens(buf)

    def next_tok(what):
        try:
            return next(toks)
        except StopIteration:
            raise DataError(f"{path}: truncated header, missing {what}") from None

    magic, _ = next_tok("magic")
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise DataError(f"{path}: unsupported PNM magic {magic!r}")
    width, _ = next_tok("width")
    height, _ = next_tok("height")
    maxval, end = next_tok("maxval")
    try:
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError:
        raise DataError(f"{path}: malformed PNM header") from None
    if w < 1 or h < 1:
        raise DataError(f"{path}: invalid dimensions {w}x{h}")
    if mv != 255:
        raise DataError(f"{path}: unsupported bit depth (maxval {mv}, need 255)")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * channels

    if magic in (b"P5", b"P6"):
        # binary: exactly one whitespace byte after maxval, then raw samples
        start = end + 1
        data = buf[start : start + count]
        if len(data) != count:
            raise DataError(
                f"{path}: truncated data, need {count} bytes from offset {start}, "
                f"file ends at byte {len(buf)}"
            )
        arr = np.frombuffer(data, dtype=np.uint8)
    else:
        vals = []
        for tok, off in toks:
            try:
                v = int(tok)
            except ValueError:
                raise DataError(f"{path}: non-numeric sample {tok!r} at byte {off}") from None
            if not 0 <= v <= 255:
                raise DataError(f"{path}: sample {v} out of range at byte {off}")
            vals.append(v)
            if len(vals) == count:
                break
        if len(vals) != count:
            raise DataError(
                f"{path}: truncated data, got {len(vals)} of {count} samples "
                f"by byte offset {len(buf)}"
            )
        arr = np.asarray(vals, dtype=np.uint8)

    shape = (h, w) if channels == 1 else (h, w, 3)
    return Pixmap(arr.reshape(shape).copy())


def _write_pnm(path: Path, img: Pixmap) -> None:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    path.write_bytes(header + img.samples.tobytes())


def read_pixmap(path) -> Pixmap:
    """Load a PNM or PNG file; raises DataError on anything malformed."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    head = path.open("rb").read(2)
    if head in (b"P2", b"P3", b"P5", b"P6"):
        return _read_pnm(path)
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode in ("1", "L"):
                im = im.convert("L")
            elif im.mode in ("P", "RGB"):
                im = im.convert("RGB")
            else:
                raise DataError(f"{path}: unsupported image mode {im.mode}")
            return Pixmap(np.asarray(im))
    except UnidentifiedImageError:
        raise DataError(f"{path}: not a PNM or PNG file") from None


def write_pixmap(path, img: Pixmap) -> None:
    """Save as PNM (.pgm/.ppm/.pnm) or PNG by extension."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        _write_pnm(path, img)
    elif path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(img.samples).save(path)
    else:
        raise DataError(f"{path}: unknown output extension {path.suffix!r}")


# ---------------------------------------------------------------------------
# Label palettes and masks


@dataclass
class LabelPalette:
    """Mapping class index -> RGB color and name; class 0 is implicit black."""

    entries: list  # of (index >= 1, (r, g, b), name)

    def __post_init__(self):
        indices = [i for i, _, _ in self.entries]
        if sorted(indices) != list(range(1, len(indices) + 1)):
            raise DataError(f"class indices must be contiguous 1..C, got {sorted(indices)}")
        colors = [tuple(c) for _, c, _ in self.entries]
        if len(set(colors)) != len(colors):
            raise DataError("palette colors must be pairwise distinct")
        if (0, 0, 0) in colors:
            raise DataError("black is reserved for the ignored class 0")
        if not 1 <= len(self.entries) <= 6:
            raise DataError(f"class count must be 1..6, got {len(self.entries)}")
        self.entries = sorted(self.entries, key=lambda e: e[0])

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    def colors(self) -> np.ndarray:
        """(C+1, 3) uint8 color table, row 0 black."""
        table = np.zeros((self.num_classes + 1, 3), dtype=np.uint8)
        for idx, color, _ in self.entries:
            table[idx] = color
        return table


def decode_label_mask(img: Pixmap, palette: LabelPalette) -> np.ndarray:
    """Exact color -> class decode; any unlisted color is an error.

    Returns an int32 (H, W) label array with 0 for black pixels.
    """
    if img.channels == 3:
        rgb = img.samples.astype(np.int32)
    else:
        g = img.samples.astype(np.int32)
        rgb = np.stack([g, g, g], axis=-1)
    packed = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    out = np.full(packed.shape, -1, dtype=np.int32)
    out[packed == 0] = 0
    for idx, (r, g, b), _ in palette.entries:
        out[packed == ((r << 16) | (g << 8) | b)] = idx
    if (out < 0).any():
        ys, xs = np.nonzero(out < 0)
        y, x = int(ys[0]), int(xs[0])
        c = rgb[y, x]
        raise DataError(
            f"pixel color #{c[0]:02x}{c[1]:02x}{c[2]:02x} at (x={x}, y={y}) "
            f"is not in the palette ({len(ys)} offending pixels)"
        )
    return out


def encode_label_mask(mask: np.ndarray, palette: LabelPalette) -> Pixmap:
    """Inverse of decode_label_mask; labels must be 0..C."""
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() > palette.num_classes:
        bad = int(mask.max() if mask.max() > palette.num_classes else mask.min())
        raise DataError(f"label {bad} outside palette range 0..{palette.num_classes}")
    return Pixmap(palette.colors()[mask])


# ---------------------------------------------------------------------------
# Dataset manifests


@dataclass
class ManifestRecord:
    image_path: Path
    gt_path: Path
    split: str | None = None  # "train" | "test" | None


@dataclass
class DatasetManifest:
    name: str
    palette: LabelPalette
    records: list = field(default_factory=list)

    def __post_init__(self):
        if not self.records:
            raise DataError("manifest has no records")
        paths = [r.image_path for r in self.records] + [r.gt_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise DataError("manifest paths must be distinct")

    @property
    def num_classes(self) -> int:
        return self.palette.num_classes


def load_manifest(path) -> DatasetManifest:
    """Parse the line-oriented manifest format.

    Directives: `name <string>`, `class <index> <rrggbb> <name>`,
    `record <image> <gt> [train|test]`; `#` starts a comment; paths are
    relative to the manifest file.  File existence is not checked here; use
    check_manifest for an eager check.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    base = path.parent
    name = path.stem
    entries = []
    records = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            parts = shlex.split(line)
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        kind, args = parts[0], parts[1:]
        if kind == "name":
            if len(args) != 1:
                raise DataError(f"{path}:{lineno}: name takes one argument")
            name = args[0]
        elif kind == "class":
            if len(args) != 3:
                raise DataError(f"{path}:{lineno}: class takes <index> <rrggbb> <name>")
            try:
                idx = int(args[0])
                color = bytes.fromhex(args[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed class directive") from None
            if len(color) != 3:
                raise DataError(f"{path}:{lineno}: color must be 6 hex digits")
            entries.append((idx, tuple(color), args[2]))
        elif kind == "record":
            if len(args) not in (2, 3):
                raise DataError(f"{path}:{lineno}: record takes <image> <gt> [train|test]")
            split = None
            if len(args) == 3:
                if args[2] not in ("train", "test"):
                    raise DataError(f"{path}:{lineno}: split must be train or test")
                split = args[2]
            records.append(ManifestRecord(base / args[0], base / args[1], split))
        else:
            raise DataError(f"{path}:{lineno}: unknown directive {kind!r}")
    if not entries:
        raise DataError(f"{path}: no class directives")
    return DatasetManifest(name=name, palette=LabelPalette(entries), records=records)


def check_manifest(manifest: DatasetManifest) -> list[str]:
    """Eagerly verify that every referenced file exists; returns problems."""
    problems = []
    for rec in manifest.records:
        for p in (rec.image_path, rec.gt_path):
            if not p.is_file():
                problems.append(f"missing file: {p}")
    return problems
