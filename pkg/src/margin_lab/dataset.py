"""Digit datasets, task variants, and input normalization.

The on-disk contract is the classic IDX pair (images + labels). Real MNIST is
used whenever the data directory holds it (point ``MARGIN_LAB_DATA`` at a
directory with the four standard files, gzipped or plain). When it does not,
``ensure_dataset`` builds a deterministic stand-in corpus: 28x28 digit images
rendered from scikit-learn's bundled real handwritten 8x8 digits with random
affine jitter, using disjoint prototype pools for the train and test splits.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import split_rng

__all__ = [
    "IdxFormatError",
    "RawDataset",
    "Task",
    "TaskSpec",
    "load_idx",
    "save_idx",
    "load_split",
    "normalize_inputs",
    "make_task",
    "parse_task_spec",
    "default_data_dir",
    "ensure_dataset",
    "build_synthetic_corpus",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

BINARY_PAIRS = {"0v1": (0, 1), "3v8": (3, 8), "4v7": (4, 7)}


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic, truncation, or count mismatch)."""


@dataclass(frozen=True)
class RawDataset:
    """Flattened images in [0, 1] plus integer class labels."""

    images: np.ndarray  # (n, d0) float64
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        if self.labels.shape[0] != self.images.shape[0]:
            raise ValueError("images/labels row counts differ")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def input_dim(self) -> int:
        return self.images.shape[1]


@dataclass(frozen=True)
class Task:
    """A training (or evaluation) problem with normalized inputs.

    ``labels`` are class indices for multiclass mode and +/-1 for binary mode.
    ``targets`` is the unscaled label matrix consumed by the loss: one-hot rows
    (multiclass) or a single +/-1 column (binary). ``alpha`` holds the targeted
    margin per example and ``clean`` flags non-attack rows.
    """

    inputs: np.ndarray
    labels: np.ndarray
    targets: np.ndarray
    alpha: np.ndarray
    clean: np.ndarray
    mode: str              # "multiclass" | "binary"
    scheme: str            # "true" | "random" | "attack"
    num_classes: int
    source_indices: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as probe:
        head = probe.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, count: int, what: str, path) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxFormatError(
            f"{path}: truncated while reading {what} "
            f"(wanted {count} bytes, got {len(data)})"
        )
    return data


def _read_be32(f, what: str, path) -> int:
    return struct.unpack(">I", _read_exact(f, 4, what, path))[0]


def load_idx(images_path, labels_path) -> RawDataset:
    """Parse an IDX image/label pair; pixel bytes are scaled by 1/255."""
    images_path, labels_path = Path(images_path), Path(labels_path)

    with _open_maybe_gzip(images_path) as f:
        magic = _read_be32(f, "image magic", images_path)
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad image magic 0x{magic:08x} "
                f"(expected 0x{IMAGE_MAGIC:08x})"
            )
        count = _read_be32(f, "image count", images_path)
        rows = _read_be32(f, "row count", images_path)
        cols = _read_be32(f, "column count", images_path)
        raw = _read_exact(f, count * rows * cols, "pixel data", images_path)
    images = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    images = images.reshape(count, rows * cols)

    with _open_maybe_gzip(labels_path) as f:
        magic = _read_be32(f, "label magic", labels_path)
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x} "
                f"(expected 0x{LABEL_MAGIC:08x})"
            )
        label_count = _read_be32(f, "label count", labels_path)
        raw = _read_exact(f, label_count, "label data", labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if label_count != count:
        raise IdxFormatError(
            f"image count {count} does not match label count {label_count} "
            f"({images_path} vs {labels_path})"
        )
    return RawDataset(images=images, labels=labels)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path,
             side: int = 28) -> None:
    """Write an IDX pair; ``images`` rows are floats in [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    n = images.shape[0]
    if images.shape[1] != side * side:
        raise ValueError(f"expected {side * side} pixels per row")
    pixel_bytes = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, side, side))
        f.write(pixel_bytes.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(labels.astype(np.uint8).tobytes())


def load_split(data_dir, split: str = "train") -> RawDataset:
    """Load the train or test IDX pair from a data directory."""
    data_dir = Path(data_dir)
    names = (TRAIN_IMAGES, TRAIN_LABELS) if split == "train" else (TEST_IMAGES, TEST_LABELS)
    paths = []
    for name in names:
        plain, gz = data_dir / name, data_dir / (name + ".gz")
        if plain.exists():
            paths.append(plain)
        elif gz.exists():
            paths.append(gz)
        else:
            raise FileNotFoundError(
                f"dataset file {name}[.gz] not found in {data_dir}; set "
                f"MARGIN_LAB_DATA or run `margin-lab data` to prepare one"
            )
    return load_idx(*paths)


def normalize_inputs(raw) -> np.ndarray:
    """Project every row onto the hypersphere of radius sqrt(d0).

    For 784-pixel images each output row has 2-norm 28. Idempotent, and leaves
    each row's direction unchanged.
    """
    images = raw.images if isinstance(raw, RawDataset) else np.asarray(raw, dtype=np.float64)
    norms = np.linalg.norm(images, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize all-zero input row {int(zero[0])}")
    return images * (np.sqrt(images.shape[1]) / norms)[:, None]


@dataclass(frozen=True)
class TaskSpec:
    """Declarative description of a task variant.

    classes: None for 10-class, a (pos, neg) digit pair, or "even-odd".
    scheme: "true", "random" (uniformly resampled labels), or "attack"
    (subset true-labeled points followed by attack_size random-labeled ones).
    alpha: targeted margin, scalar (broadcast) or per-example array.
    """

    subset: int
    scheme: str = "true"
    classes: object = None
    seed: int = 0
    alpha: object = 1.0
    attack_size: int = 0
    balanced: bool = False

    def describe(self) -> str:
        classes = "all" if self.classes is None else str(self.classes)
        return (f"subset={self.subset}:classes={classes}:labels={self.scheme}"
                f":seed={self.seed}")


def _binary_sign_labels(labels: np.ndarray, classes) -> np.ndarray:
    if classes == "even-odd":
        # even digits -> +1, odd -> -1 (fixed sign convention)
        return np.where(labels % 2 == 0, 1.0, -1.0)
    pos, neg = classes
    return np.where(labels == pos, 1.0, -1.0)


def _select_indices(labels: np.ndarray, spec: TaskSpec, rng) -> np.ndarray:
    if spec.classes is None or spec.classes == "even-odd":
        pool = np.arange(labels.shape[0])
    else:
        pos, neg = spec.classes
        pool = np.flatnonzero((labels == pos) | (labels == neg))
    order = rng.permutation(pool.shape[0])
    pool = pool[order]

    total = spec.subset + (spec.attack_size if spec.scheme == "attack" else 0)
    if total > pool.shape[0]:
        raise ValueError(
            f"requested {total} examples but only {pool.shape[0]} available "
            f"for classes {spec.classes}"
        )
    if not spec.balanced:
        return pool[:total]

    # Round-robin over classes for tiny subsets (e.g. the 5-sample twin task);
    # attack rows are appended unbalanced from the remaining pool.
    chosen: list[int] = []
    by_class: dict[int, list[int]] = {}
    for idx in pool:
        by_class.setdefault(int(labels[idx]), []).append(int(idx))
    classes_cycle = sorted(by_class)
    cursor = {c: 0 for c in classes_cycle}
    while len(chosen) < spec.subset:
        progressed = False
        for c in classes_cycle:
            if len(chosen) >= spec.subset:
                break
            if cursor[c] < len(by_class[c]):
                chosen.append(by_class[c][cursor[c]])
                cursor[c] += 1
                progressed = True
        if not progressed:
            raise ValueError("not enough examples per class for balanced subset")
    taken = set(chosen)
    rest = [int(i) for i in pool if int(i) not in taken]
    need = total - spec.subset
    if need > len(rest):
        raise ValueError("not enough examples left for the attack set")
    return np.array(chosen + rest[:need], dtype=np.int64)


def make_task(raw: RawDataset, spec: TaskSpec) -> Task:
    """Build a task variant with normalized inputs and targeted margins.

    Subset selection takes the first rows of a seed-shuffled index list, so
    the same (data, spec) always yields the same task. For the attack scheme
    the clean rows come first and keep their true labels; the appended attack
    rows get labels drawn uniformly at random.
    """
    if spec.scheme not in ("true", "random", "attack"):
        raise ValueError(f"unknown label scheme {spec.scheme!r}")
    rng = split_rng(spec.seed, 0xDA7A)
    indices = _select_indices(raw.labels, spec, rng)
    inputs = normalize_inputs(raw.images[indices])
    true_labels = raw.labels[indices].copy()
    n = indices.shape[0]

    clean = np.ones(n, dtype=bool)
    binary = spec.classes is not None
    if binary:
        y = _binary_sign_labels(true_labels, spec.classes)
        if spec.scheme == "random":
            y = np.where(rng.integers(0, 2, size=n) == 1, 1.0, -1.0)
        elif spec.scheme == "attack":
            clean[spec.subset:] = False
            rand = np.where(rng.integers(0, 2, size=n - spec.subset) == 1, 1.0, -1.0)
            y = y.copy()
            y[spec.subset:] = rand
        labels = y
        targets = y[:, None].astype(np.float64)
        num_classes = 2
        mode = "binary"
    else:
        num_classes = 10
        labels = true_labels
        if spec.scheme == "random":
            labels = rng.integers(0, num_classes, size=n).astype(np.int64)
        elif spec.scheme == "attack":
            clean[spec.subset:] = False
            labels = labels.copy()
            labels[spec.subset:] = rng.integers(
                0, num_classes, size=n - spec.subset
            )
        targets = np.zeros((n, num_classes), dtype=np.float64)
        targets[np.arange(n), labels] = 1.0
        mode = "multiclass"

    alpha = np.broadcast_to(
        np.asarray(spec.alpha, dtype=np.float64), (n,)
    ).copy()
    if np.any(alpha <= 0.0):
        raise ValueError("all targeted margins must be positive")

    return Task(inputs=inputs, labels=labels, targets=targets, alpha=alpha,
                clean=clean, mode=mode, scheme=spec.scheme,
                num_classes=num_classes, source_indices=indices)


def parse_task_spec(text: str) -> TaskSpec:
    """Parse a CLI task string such as

    ``mnist:subset=1000:labels=random:seed=7:alpha=100`` or
    ``mnist:subset=500:classes=0v1:labels=attack:attack=1000``.
    """
    fields = text.split(":")
    if fields and fields[0] in ("mnist", "digits"):
        fields = fields[1:]
    kwargs: dict = {}
    for item in fields:
        if not item:
            continue
        try:
            key, value = item.split("=", 1)
        except ValueError as exc:
            raise ValueError(f"malformed task field {item!r}") from exc
        if key == "subset":
            kwargs["subset"] = int(value)
        elif key == "labels":
            kwargs["scheme"] = value
        elif key == "classes":
            if value in ("all", "10"):
                kwargs["classes"] = None
            elif value in ("even-odd", "evenodd"):
                kwargs["classes"] = "even-odd"
            elif value in BINARY_PAIRS:
                kwargs["classes"] = BINARY_PAIRS[value]
            else:
                raise ValueError(f"unknown class filter {value!r}")
        elif key == "seed":
            kwargs["seed"] = int(value)
        elif key == "alpha":
            kwargs["alpha"] = float(value)
        elif key == "attack":
            kwargs["attack_size"] = int(value)
        elif key == "balanced":
            kwargs["balanced"] = value.lower() in ("1", "true", "yes")
        else:
            raise ValueError(f"unknown task field {key!r}")
    if "subset" not in kwargs:
        raise ValueError("task spec must set subset=<n>")
    return TaskSpec(**kwargs)


def default_data_dir() -> Path:
    return Path(os.environ.get("MARGIN_LAB_DATA", "data"))


def _split_exists(data_dir: Path, split: str) -> bool:
    names = (TRAIN_IMAGES, TRAIN_LABELS) if split == "train" else (TEST_IMAGES, TEST_LABELS)
    return all((data_dir / n).exists() or (data_dir / (n + ".gz")).exists()
               for n in names)


def ensure_dataset(data_dir=None, train_n: int = 12000, test_n: int = 4000,
                   seed: int = 0) -> dict:
    """Make sure a usable IDX corpus exists, synthesizing one if needed.

    Returns a small manifest dict; ``synthetic`` is False when pre-existing
    files (e.g. real MNIST) were found.
    """
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    if _split_exists(data_dir, "train") and _split_exists(data_dir, "test"):
        marker = data_dir / "synthetic.json"
        synthetic = marker.exists()
        return {"dir": str(data_dir), "synthetic": synthetic, "built": False}
    build_synthetic_corpus(data_dir, train_n=train_n, test_n=test_n, seed=seed)
    return {"dir": str(data_dir), "synthetic": True, "built": True}


def _render_digit(proto: np.ndarray, rng, out_side: int = 28) -> np.ndarray:
    """One 28x28 rendering of an 8x8 prototype with random affine jitter."""
    from scipy import ndimage

    theta = rng.uniform(-0.21, 0.21)                 # ~12 degrees
    zoom = rng.uniform(2.6, 3.2)                     # output px per proto px
    shift = rng.uniform(-1.2, 1.2, size=2)           # proto-pixel units
    intensity = rng.uniform(0.8, 1.0)

    cos, sin = np.cos(theta), np.sin(theta)
    # input_coord = M @ output_coord + offset
    M = np.array([[cos, -sin], [sin, cos]]) / zoom
    c_out = (out_side - 1) / 2.0
    c_in = (proto.shape[0] - 1) / 2.0
    offset = np.array([c_in, c_in]) + shift - M @ np.array([c_out, c_out])
    img = ndimage.affine_transform(
        proto, M, offset=offset, output_shape=(out_side, out_side),
        order=3, mode="constant", cval=0.0, prefilter=True,
    )
    return np.clip(img * intensity, 0.0, 1.0)


def build_synthetic_corpus(data_dir, train_n: int = 12000, test_n: int = 4000,
                           seed: int = 0) -> None:
    """Write a deterministic MNIST-shaped IDX corpus into ``data_dir``.

    Each sample is a random affine rendering of a real handwritten 8x8 digit
    prototype (scikit-learn's bundled corpus). Train and test draw from
    disjoint prototype pools so generalization requires transfer across
    writers rather than memorizing prototypes.
    """
    from sklearn.datasets import load_digits

    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)

    protos, proto_labels = load_digits(return_X_y=True)
    protos = (protos / 16.0).reshape(-1, 8, 8)

    split_gen = split_rng(seed, 0x51)  # corpus-level prototype shuffle
    order = split_gen.permutation(protos.shape[0])
    cut = int(0.7 * protos.shape[0])
    pools = {"train": order[:cut], "test": order[cut:]}

    for split, count, names in (
        ("train", train_n, (TRAIN_IMAGES, TRAIN_LABELS)),
        ("test", test_n, (TEST_IMAGES, TEST_LABELS)),
    ):
        rng = split_rng(seed, 0xD161, 0 if split == "train" else 1)
        pool = pools[split]
        picks = rng.integers(0, pool.shape[0], size=count)
        images = np.empty((count, 28 * 28))
        labels = np.empty(count, dtype=np.int64)
        for i, p in enumerate(picks):
            proto_idx = pool[p]
            images[i] = _render_digit(protos[proto_idx], rng).ravel()
            labels[i] = proto_labels[proto_idx]
        save_idx(images, labels, data_dir / names[0], data_dir / names[1])

    with open(data_dir / "synthetic.json", "w") as f:
        json.dump(
            {
                "kind": "synthetic-digits",
                "source": "scikit-learn load_digits prototypes, affine jitter",
                "train_n": train_n,
                "test_n": test_n,
                "seed": seed,
                "prototype_split": "70/30 disjoint",
            },
            f, indent=2,
        )
