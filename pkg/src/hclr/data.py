"""Hierarchical multi-label datasets and the augmentation pipeline.

Two generators are provided: fast Gaussian blob hierarchies (two levels,
fine clusters nested inside coarse ones) and composite digit images with
a large central glyph for the fine class and small subsidiary glyphs for
the coarse category. Digit glyphs come either from IDX files or from a
procedural fallback, so nothing here needs external data.

All generators are pure functions of their configuration and seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Protocol

import numpy as np

from .autodiff import Tensor
from .errors import (
    BadMagic,
    ConfigError,
    DimensionMismatch,
    EmptyDataset,
    LengthMismatch,
    PlacementError,
    TruncatedFile,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class HierLabels:
    """Per-sample labels over H hierarchy levels, level 1 coarsest."""

    levels: tuple[int, ...]

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValueError("HierLabels needs at least one level")
        if any(int(v) != v or v < 0 for v in self.levels):
            raise ValueError(f"labels must be nonnegative integers, got {self.levels}")
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, h: int) -> int:
        """Label id at level h (1-based, 1 = coarsest)."""
        if not 1 <= h <= len(self.levels):
            raise ValueError(f"level {h} out of range 1..{len(self.levels)}")
        return self.levels[h - 1]

    def swapped(self) -> "HierLabels":
        """Labels with the level order reversed (order-ablation helper)."""
        return HierLabels(tuple(reversed(self.levels)))


@dataclass
class Sample:
    features: Tensor  # flat vector, or rank-2 image with pixels in [0, 1]
    labels: HierLabels
    id: int


def check_tree_consistency(samples: list[Sample]) -> bool:
    """True when each finer label maps to exactly one coarser label."""
    for h in range(2, samples[0].labels.depth + 1):
        parent: dict[int, int] = {}
        for s in samples:
            fine = s.labels.level(h)
            coarse = s.labels.level(h - 1)
            if parent.setdefault(fine, coarse) != coarse:
                return False
    return True


# ---------------------------------------------------------------------------
# hierarchical blobs


@dataclass(frozen=True)
class HierBlobConfig:
    coarse_count: int = 4
    fine_per_coarse: int = 3
    input_dim: int = 32
    coarse_separation: float = 6.0
    fine_separation: float = 1.5
    noise_sigma: float = 0.25
    samples_per_fine: int = 200
    seed: int = 0


def generate_blobs(cfg: HierBlobConfig) -> list[Sample]:
    """Two-level hierarchical Gaussian blobs, deterministic per seed.

    Coarse centers are drawn with pairwise distance >= coarse_separation,
    each fine center sits exactly fine_separation from its parent, and
    samples scatter around fine centers with noise_sigma.
    """
    if cfg.coarse_count < 1 or cfg.fine_per_coarse < 1 or cfg.samples_per_fine < 1:
        raise ConfigError("coarse_count", "all counts must be >= 1")
    if cfg.input_dim < 1:
        raise ConfigError("input_dim", "must be >= 1")
    if cfg.noise_sigma < 0:
        raise ConfigError("noise_sigma", "must be >= 0")
    if not cfg.fine_separation < cfg.coarse_separation:
        raise ConfigError(
            "fine_separation",
            f"fine clusters must nest inside coarse ones: "
            f"fine_separation={cfg.fine_separation} must be < "
            f"coarse_separation={cfg.coarse_separation}",
        )
    rng = np.random.default_rng(cfg.seed)

    centers: list[np.ndarray] = []
    for _ in range(cfg.coarse_count):
        for _attempt in range(1000):
            cand = rng.normal(0.0, cfg.coarse_separation, size=cfg.input_dim)
            if all(np.linalg.norm(cand - c) >= cfg.coarse_separation for c in centers):
                centers.append(cand)
                break
        else:
            raise ConfigError(
                "coarse_separation",
                "could not place coarse centers at the requested separation",
            )

    samples: list[Sample] = []
    sid = 0
    for coarse_id, center in enumerate(centers):
        for j in range(cfg.fine_per_coarse):
            direction = rng.normal(size=cfg.input_dim)
            direction /= np.linalg.norm(direction)
            fine_center = center + cfg.fine_separation * direction
            fine_id = coarse_id * cfg.fine_per_coarse + j
            noise = rng.normal(0.0, cfg.noise_sigma,
                               size=(cfg.samples_per_fine, cfg.input_dim))
            for row in noise:
                samples.append(Sample(
                    features=Tensor(fine_center + row),
                    labels=HierLabels((coarse_id, fine_id)),
                    id=sid,
                ))
                sid += 1
    return samples


# ---------------------------------------------------------------------------
# composite digit images


@dataclass(frozen=True)
class CompositeDigitConfig:
    canvas_size: int = 192
    glyph_size: int = 32
    subsidiary_count: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.canvas_size < 2 * self.glyph_size:
            raise ConfigError("canvas_size",
                              f"must be >= 2 * glyph_size ({2 * self.glyph_size})")


class GlyphSource(Protocol):
    def glyph(self, digit: int, rng: np.random.Generator) -> np.ndarray:
        """Return one glyph image for the digit, values in [0, 1]."""


# 3x5 segment bitmaps for digits 0..9, upscaled on demand
_DIGIT_ROWS = {
    0: ("111", "101", "101", "101", "111"),
    1: ("010", "110", "010", "010", "111"),
    2: ("111", "001", "111", "100", "111"),
    3: ("111", "001", "111", "001", "111"),
    4: ("101", "101", "111", "001", "001"),
    5: ("111", "100", "111", "001", "111"),
    6: ("111", "100", "111", "101", "111"),
    7: ("111", "001", "010", "010", "010"),
    8: ("111", "101", "111", "101", "111"),
    9: ("111", "101", "111", "001", "111"),
}


def _resize_nearest(img: np.ndarray, rows: int, cols: int) -> np.ndarray:
    ri = np.minimum((np.arange(rows) * img.shape[0]) // rows, img.shape[0] - 1)
    ci = np.minimum((np.arange(cols) * img.shape[1]) // cols, img.shape[1] - 1)
    return img[np.ix_(ri, ci)]


class ProceduralGlyphs:
    """Blocky seeded digit shapes; lets everything run without MNIST files."""

    def __init__(self, glyph_size: int = 32):
        self.glyph_size = glyph_size
        self._base = {d: np.array([[float(ch) for ch in r] for r in rows])
                      for d, rows in _DIGIT_ROWS.items()}

    def glyph(self, digit: int, rng: np.random.Generator) -> np.ndarray:
        if digit not in self._base:
            raise ValueError(f"digit must be in 0..9, got {digit}")
        g = self.glyph_size
        inner = max(2, g - 4)
        scaled = _resize_nearest(self._base[digit], inner, inner)
        out = np.zeros((g, g))
        max_off = g - inner
        r0 = int(rng.integers(0, max_off + 1))
        c0 = int(rng.integers(0, max_off + 1))
        intensity = 0.75 + 0.25 * rng.random()
        out[r0:r0 + inner, c0:c0 + inner] = scaled * intensity
        return out


class IdxGlyphs:
    """Glyphs drawn from IDX image/label arrays (e.g. MNIST)."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, glyph_size: int = 32):
        self.glyph_size = glyph_size
        self._by_digit = {d: np.flatnonzero(labels == d) for d in range(10)}
        self._images = images

    def glyph(self, digit: int, rng: np.random.Generator) -> np.ndarray:
        idx = self._by_digit.get(digit)
        if idx is None or idx.size == 0:
            raise ValueError(f"no glyphs available for digit {digit}")
        img = self._images[int(rng.choice(idx))]
        g = self.glyph_size
        if img.shape == (g, g):
            return img
        if img.shape[0] <= g and img.shape[1] <= g:
            out = np.zeros((g, g))
            r0 = (g - img.shape[0]) // 2
            c0 = (g - img.shape[1]) // 2
            out[r0:r0 + img.shape[0], c0:c0 + img.shape[1]] = img
            return out
        return _resize_nearest(img, g, g)


def _boxes_overlap(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    ar0, ac0, ar1, ac1 = a
    br0, bc0, br1, bc1 = b
    return not (ar1 <= br0 or br1 <= ar0 or ac1 <= bc0 or bc1 <= ac0)


def compose_hier_image(central_class: int, category: int, glyphs: GlyphSource,
                       cfg: CompositeDigitConfig, seed: int,
                       sample_id: int = 0) -> Sample:
    """One composite image: big central class glyph, small category glyphs.

    The central glyph is upscaled (nearest neighbor) to fill the middle of
    the canvas; subsidiary copies of the category glyph keep their native
    size and land at seeded random spots that stay inside the canvas and
    clear of the central bounding box. Labels are (category, class),
    coarse level first.
    """
    rng = np.random.default_rng(seed)
    size = cfg.canvas_size
    g = cfg.glyph_size
    canvas = np.zeros((size, size))

    scale = max(1, size // (2 * g))
    central = np.repeat(np.repeat(glyphs.glyph(central_class, rng), scale, axis=0),
                        scale, axis=1)
    ch = central.shape[0]
    r0 = (size - ch) // 2
    canvas[r0:r0 + ch, r0:r0 + ch] = central
    central_box = (r0, r0, r0 + ch, r0 + ch)

    for _ in range(cfg.subsidiary_count):
        glyph = glyphs.glyph(category, rng)
        for _attempt in range(1000):
            rr = int(rng.integers(0, size - g + 1))
            cc = int(rng.integers(0, size - g + 1))
            if not _boxes_overlap((rr, cc, rr + g, cc + g), central_box):
                region = canvas[rr:rr + g, cc:cc + g]
                np.maximum(region, glyph, out=region)
                break
        else:
            raise PlacementError(
                f"no non-overlapping spot for a {g}x{g} glyph after 1000 attempts")

    return Sample(features=Tensor(np.clip(canvas, 0.0, 1.0)),
                  labels=HierLabels((category, central_class)),
                  id=sample_id)


@dataclass(frozen=True)
class CompositeDatasetConfig:
    """Whole-dataset settings for the composite digit generator."""

    class_count: int = 10
    category_count: int = 2
    samples_per_class: int = 40
    image: CompositeDigitConfig = field(default_factory=CompositeDigitConfig)
    seed: int = 0


def generate_composite_digits(cfg: CompositeDatasetConfig,
                              glyphs: GlyphSource | None = None) -> list[Sample]:
    """Composite digit dataset with a consistent class -> category tree.

    Category of a class digit is ``class % category_count`` so the label
    hierarchy forms a proper tree (each class has exactly one category).
    """
    if not 1 <= cfg.class_count <= 10:
        raise ConfigError("class_count", "must be in 1..10")
    if not 1 <= cfg.category_count <= 10:
        raise ConfigError("category_count", "must be in 1..10")
    if cfg.samples_per_class < 1:
        raise ConfigError("samples_per_class", "must be >= 1")
    if glyphs is None:
        glyphs = ProceduralGlyphs(cfg.image.glyph_size)
    rng = np.random.default_rng(cfg.seed)
    samples = []
    sid = 0
    for cls in range(cfg.class_count):
        category = cls % cfg.category_count
        for _ in range(cfg.samples_per_class):
            seed = int(rng.integers(0, 2 ** 63 - 1))
            samples.append(compose_hier_image(cls, category, glyphs, cfg.image,
                                              seed, sample_id=sid))
            sid += 1
    return samples


# ---------------------------------------------------------------------------
# IDX files


def load_idx(path) -> np.ndarray:
    """Load an IDX images or labels file (big-endian, MNIST layout).

    Images (magic 0x00000803) come back as (count, rows, cols) float64 in
    [0, 1]; labels (magic 0x00000801) as a (count,) int array.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: shorter than a magic number")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == IDX_IMAGE_MAGIC:
        ndim = 3
    elif magic == IDX_LABEL_MAGIC:
        ndim = 1
    else:
        raise BadMagic(f"{path}: magic 0x{magic:08x} is neither images (0x{IDX_IMAGE_MAGIC:08x}) "
                       f"nor labels (0x{IDX_LABEL_MAGIC:08x})")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFile(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    if any(d > 2 ** 31 - 1 or d == 0 for d in dims):
        raise DimensionMismatch(f"{path}: invalid dimension sizes {dims}")
    count = int(np.prod([int(d) for d in dims]))
    payload = blob[header:header + count]
    if len(payload) < count:
        raise TruncatedFile(f"{path}: payload has {len(payload)} bytes, "
                            f"header declares {count}")
    data = np.frombuffer(payload, dtype=np.uint8)
    if ndim == 3:
        return data.reshape(dims).astype(np.float64) / 255.0
    return data.astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write (count, rows, cols) pixel data in [0, 1] as an IDX images file."""
    arr = np.clip(np.asarray(images) * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *arr.shape))
        fh.write(arr.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    arr = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, arr.shape[0]))
        fh.write(arr.tobytes())


# ---------------------------------------------------------------------------
# augmentation and batching


def augment(s: Sample, strength: float, seed: int) -> Sample:
    """Label-preserving random augmentation, deterministic per seed.

    Vectors get additive Gaussian noise (0.1 * strength * feature std)
    plus coordinate dropout with probability 0.2 * strength. Images get a
    random crop covering at least 1 - 0.5 * strength of the area resized
    back to full size, a horizontal flip with probability 0.5 * strength,
    and additive pixel noise. strength = 0 is the identity.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    x = s.features.values
    if strength == 0.0:
        return Sample(features=Tensor(x.copy()), labels=s.labels, id=s.id)
    rng = np.random.default_rng(seed)
    if x.ndim == 1:
        sigma = float(np.std(x))
        if sigma == 0.0:
            sigma = 1.0
        out = x + rng.normal(0.0, 0.1 * strength * sigma, size=x.shape)
        keep = rng.random(x.shape) >= 0.2 * strength
        out = out * keep
        return Sample(features=Tensor(out), labels=s.labels, id=s.id)

    rows, cols = x.shape
    min_area = 1.0 - 0.5 * strength
    side = np.sqrt(rng.uniform(min_area, 1.0))
    ch = max(1, int(round(rows * side)))
    cw = max(1, int(round(cols * side)))
    r0 = int(rng.integers(0, rows - ch + 1))
    c0 = int(rng.integers(0, cols - cw + 1))
    out = _resize_nearest(x[r0:r0 + ch, c0:c0 + cw], rows, cols)
    if rng.random() < 0.5 * strength:
        out = out[:, ::-1]
    out = out + rng.normal(0.0, 0.1 * strength, size=out.shape)
    return Sample(features=Tensor(np.clip(out, 0.0, 1.0)), labels=s.labels, id=s.id)


def batches(dataset: list[Sample], batch_size: int, shuffle_seed: int,
            augment_strength: float = 0.5) -> Iterator[tuple[list[Sample], list[Sample]]]:
    """One epoch of (anchor, augmented view) batches.

    Seeded permutation of the dataset, chunked into batches; a trailing
    batch with fewer than 2 samples is dropped. Every anchor is paired
    with a freshly augmented view whose seed derives from shuffle_seed.
    """
    if not dataset:
        raise EmptyDataset("cannot batch an empty dataset")
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    rng = np.random.default_rng(shuffle_seed)
    perm = rng.permutation(len(dataset))
    aug_seeds = rng.integers(0, 2 ** 63 - 1, size=len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = perm[start:start + batch_size]
        if idx.size < 2:
            break
        anchors = [dataset[i] for i in idx]
        views = [augment(dataset[i], augment_strength, int(aug_seeds[i])) for i in idx]
        yield anchors, views


def build_feature_matrix(samples: list[Sample]) -> np.ndarray:
    """Stack sample features into a (N, input_dim) matrix, flattening images."""
    return np.stack([s.features.values.ravel() for s in samples])


def export_dataset(dataset: list[Sample], path) -> None:
    """Metadata line (depth and counts), then one CSV row per sample."""
    if not dataset:
        raise EmptyDataset("nothing to export")
    depth = dataset[0].labels.depth
    dim = dataset[0].features.values.size
    with open(path, "w") as fh:
        fh.write(f"H={depth},n={len(dataset)},d={dim}\n")
        for s in dataset:
            labels = ",".join(str(v) for v in s.labels.levels)
            feats = ",".join(repr(float(v)) for v in s.features.values.ravel())
            fh.write(f"{s.id},{labels},{feats}\n")
