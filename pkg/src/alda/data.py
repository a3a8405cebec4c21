"""Synthetic domain-shift datasets, IDX digit ingestion, and batch iteration."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .kernels import bilinear_resize
from .nn import as_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
DIGIT_SIDE = 28


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic, truncated payload, count mismatch)."""


@dataclass
class LabeledSet:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64; target labels are for evaluation only
    domain: str  # "source" | "target"
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be (n, d) and labels (n,)")
        if len(self.features) != len(self.labels):
            raise ValueError("feature/label counts differ")
        if self.domain not in ("source", "target"):
            raise ValueError(f"unknown domain tag {self.domain!r}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label out of range")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature values")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ShiftSpec:
    """Affine-plus-noise corruption standing in for the source/target gap."""

    rotation: float = 0.0  # radians, applied in the first two feature dims
    translation: tuple[float, ...] = (0.0, 0.0)
    scale: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be nonnegative")


def gen_two_moons(n: int, noise_std: float = 0.0, seed=0) -> LabeledSet:
    """Two interleaving half-circles with ``n/2`` points per class."""
    if n < 2 or n % 2:
        raise ValueError("n must be even and >= 2")
    if noise_std < 0.0:
        raise ValueError("noise_std must be nonnegative")
    rng = as_rng(seed)
    half = n // 2
    theta = rng.uniform(0.0, np.pi, size=half)
    upper = np.column_stack([np.cos(theta), np.sin(theta)])
    theta = rng.uniform(0.0, np.pi, size=half)
    lower = np.column_stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)])
    feats = np.vstack([upper, lower])
    feats += rng.normal(0.0, noise_std, size=feats.shape) if noise_std > 0 else 0.0
    labels = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    order = rng.permutation(n)
    return LabeledSet(feats[order], labels[order], domain="source", n_classes=2)


def apply_shift(s: LabeledSet, spec: ShiftSpec, seed=0) -> LabeledSet:
    """Rotate/scale/translate/jitter the features; labels ride along untouched."""
    d = s.features.shape[1]
    t = np.asarray(spec.translation, dtype=np.float64)
    if t.shape != (d,):
        raise ValueError(f"translation has length {t.shape[0]}, features have {d} dims")
    feats = s.features.copy()
    if spec.rotation != 0.0:
        if d < 2:
            raise ValueError("rotation needs at least two feature dims")
        c, sn = np.cos(spec.rotation), np.sin(spec.rotation)
        xy = feats[:, :2] @ np.array([[c, sn], [-sn, c]])  # row-vector rotation
        feats[:, :2] = xy
    feats = spec.scale * feats + t
    if spec.noise_std > 0.0:
        feats = feats + as_rng(seed).normal(0.0, spec.noise_std, size=feats.shape)
    return replace(s, features=feats, domain="target")


def gen_blobs(n: int, k: int, centers_seed=0, spread: float = 0.5, seed=0) -> LabeledSet:
    """K gaussian clusters in the plane with near-balanced labels."""
    if k < 2:
        raise ValueError("need at least two blobs")
    if n < k:
        raise ValueError("need at least one point per class")
    centers = as_rng(centers_seed).uniform(-4.0, 4.0, size=(k, 2))
    rng = as_rng(seed)
    counts = np.full(k, n // k, dtype=np.int64)
    counts[: n % k] += 1
    labels = np.repeat(np.arange(k, dtype=np.int64), counts)
    feats = centers[labels] + rng.normal(0.0, spread, size=(n, 2))
    order = rng.permutation(n)
    return LabeledSet(feats[order], labels[order], domain="source", n_classes=k)


# -- IDX ingestion ---------------------------------------------------------------


def _open_maybe_gz(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx_images(path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        header = f.read(16)
        if len(header) < 16:
            raise IdxFormatError(f"{path}: truncated image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"{path}: bad image magic 0x{magic:08x}")
        payload = f.read(count * rows * cols)
        if len(payload) != count * rows * cols:
            raise IdxFormatError(f"{path}: truncated image payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def _read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        header = f.read(8)
        if len(header) < 8:
            raise IdxFormatError(f"{path}: truncated label header")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{path}: bad label magic 0x{magic:08x}")
        payload = f.read(count)
        if len(payload) != count:
            raise IdxFormatError(f"{path}: truncated label payload")
        return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(
    images_path,
    labels_path,
    limit: int | None = None,
    seed=0,
    stats: tuple[float, float] | None = None,
    domain: str = "source",
):
    """Load an IDX image/label pair into a flat, standardized LabeledSet.

    Pixels are scaled to [0, 1]; images that are not 28x28 (USPS is 16x16)
    are bilinearly resized so both domains share the input dimension.  When
    ``stats`` is None the (mean, std) over this set's pixels is computed,
    applied, and returned alongside the set; pass a source set's stats to
    standardize a target domain without touching its labels.

    Returns ``(LabeledSet, (mean, std))``.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"image count {len(images)} != label count {len(labels)}"
        )
    if limit is not None and limit > 0 and limit < len(images):
        idx = np.sort(as_rng(seed).choice(len(images), size=limit, replace=False))
        images, labels = images[idx], labels[idx]
    pixels = images.astype(np.float64) / 255.0
    if pixels.shape[1:] != (DIGIT_SIDE, DIGIT_SIDE):
        pixels = bilinear_resize(pixels, DIGIT_SIDE, DIGIT_SIDE)
    flat = pixels.reshape(len(pixels), -1)
    if stats is None:
        mean = float(flat.mean())
        std = float(flat.std())
        if std == 0.0:
            std = 1.0
        stats = (mean, std)
    flat = (flat - stats[0]) / stats[1]
    n_classes = int(labels.max()) + 1 if len(labels) else 2
    return LabeledSet(flat, labels, domain=domain, n_classes=max(n_classes, 2)), stats


def standardize_pair(source: LabeledSet, target: LabeledSet):
    """Standardize both domains with the source's global mean/std (no target peeking)."""
    mean = float(source.features.mean())
    std = float(source.features.std())
    if std == 0.0:
        std = 1.0
    return (
        replace(source, features=(source.features - mean) / std),
        replace(target, features=(target.features - mean) / std),
        (mean, std),
    )


# -- batching ---------------------------------------------------------------------


@dataclass
class DomainBatch:
    """Paired minibatch: labeled source rows, unlabeled target rows."""

    source_features: np.ndarray
    source_labels: np.ndarray
    target_features: np.ndarray


def _index_stream(n: int, rng: np.random.Generator) -> Iterator[int]:
    while True:
        yield from rng.permutation(n)


def batch_iter(
    source: LabeledSet, target: LabeledSet, batch: int, seed=0
) -> Iterator[DomainBatch]:
    """Endless stream of full-size paired batches.

    Each domain is consumed as back-to-back shuffled epochs (every index
    appears exactly once per epoch); the shorter domain simply recycles
    faster.  Target labels never cross this interface.
    """
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    if batch > min(len(source), len(target)):
        raise ValueError("batch exceeds the smaller domain size")
    rng = as_rng(seed)
    src_stream = _index_stream(len(source), as_rng(rng.integers(2**63)))
    tgt_stream = _index_stream(len(target), as_rng(rng.integers(2**63)))

    def batches() -> Iterator[DomainBatch]:
        while True:
            si = np.fromiter(src_stream, dtype=np.int64, count=batch)
            ti = np.fromiter(tgt_stream, dtype=np.int64, count=batch)
            yield DomainBatch(
                source_features=source.features[si],
                source_labels=source.labels[si],
                target_features=target.features[ti],
            )

    return batches()


def save_csv(s: LabeledSet, path) -> None:
    """Write a LabeledSet as CSV with header x0,...,x{d-1},label,domain."""
    d = s.features.shape[1]
    header = ",".join([f"x{i}" for i in range(d)] + ["label", "domain"])
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for row, label in zip(s.features, s.labels):
            cells = [repr(float(v)) for v in row] + [str(int(label)), s.domain]
            f.write(",".join(cells) + "\n")
