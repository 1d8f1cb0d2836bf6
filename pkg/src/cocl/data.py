"""Dataset ingestion and task-sequence construction.

Binary formats
--------------
MNIST IDX (big-endian)::

    offset 0   u32 magic   0x00000803 images / 0x00000801 labels
    offset 4   u32 count
    offset 8   u32 rows      (images only)
    offset 12  u32 cols      (images only)
    then count*rows*cols (or count) unsigned bytes

CIFAR-10 binary batch: a sequence of 3073-byte records, each one label byte
followed by 1024 red, 1024 green and 1024 blue bytes (row-major 32x32).
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .augment import ImageSample, resize_bilinear
from .errors import ConfigError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)


@dataclass
class Dataset:
    """Channels-first images in [0, 1] with integer labels."""

    x: np.ndarray  # (n, C, H, W)
    y: np.ndarray  # (n,)
    classes: Tuple[int, ...] = ()
    split: str = "train"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 4:
            raise ConfigError(f"images must be (n, C, H, W), got {self.x.shape}")
        if len(self.x) != len(self.y):
            raise ConfigError(f"{len(self.x)} images but {len(self.y)} labels")
        if len(self.y) == 0:
            raise ConfigError("dataset is empty")
        if not self.classes:
            self.classes = tuple(int(c) for c in np.unique(self.y))
        self.classes = tuple(int(c) for c in self.classes)
        if not np.isin(self.y, self.classes).all():
            raise ConfigError("labels outside the declared class set")

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> ImageSample:
        return ImageSample(self.x[i], int(self.y[i]))

    def __iter__(self) -> Iterator[ImageSample]:
        return (self[i] for i in range(len(self)))

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.x.shape[1:])

    def subset(self, mask_or_idx, classes=None) -> "Dataset":
        return Dataset(self.x[mask_or_idx], self.y[mask_or_idx], classes or (), self.split)


class Scenario(str, enum.Enum):
    TASK_IL = "task_il"
    CLASS_IL = "class_il"
    DOMAIN_IL = "domain_il"


@dataclass
class Task:
    """One task: its train/test data and class set.

    ``train.y`` / ``test.y`` hold nominal classes. For Domain-IL the
    contrastive loss sees ``effective_label`` instead, which separates
    identical digits from different domains.
    """

    index: int  # 1-based
    train: Dataset
    test: Dataset
    classes: Tuple[int, ...]
    angle: Optional[float] = None

    def effective_labels(self, y: np.ndarray, scenario: Scenario, n_nominal: int) -> np.ndarray:
        if scenario is Scenario.DOMAIN_IL:
            return (self.index - 1) * n_nominal + np.asarray(y)
        return np.asarray(y)

    def effective_classes(self, scenario: Scenario, n_nominal: int) -> Tuple[int, ...]:
        return tuple(int(c) for c in self.effective_labels(np.array(self.classes), scenario, n_nominal))


@dataclass
class TaskSequence:
    tasks: List[Task]
    scenario: Scenario = Scenario.CLASS_IL
    all_classes: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("a task sequence needs at least one task")
        for i, task in enumerate(self.tasks, start=1):
            if task.index != i:
                raise ConfigError(f"task at position {i} has index {task.index}")
        if not self.all_classes:
            self.all_classes = tuple(sorted({c for t in self.tasks for c in t.classes}))
        if self.scenario in (Scenario.TASK_IL, Scenario.CLASS_IL):
            seen: set = set()
            for task in self.tasks:
                overlap = seen & set(task.classes)
                if overlap:
                    raise ConfigError(f"task {task.index} reuses classes {sorted(overlap)}")
                seen |= set(task.classes)

    @property
    def T(self) -> int:
        return len(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def n_nominal(self) -> int:
        return max(self.all_classes) + 1


# ---------------------------------------------------------------------- IDX


def _read(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _idx_header(blob: bytes, path: str, magic: int, ndims: int) -> Tuple[int, ...]:
    need = 4 * (1 + ndims)
    if len(blob) < need:
        raise FormatError(
            f"{path}: header truncated, missing byte at offset {len(blob)} (need {need} header bytes)",
            offset=len(blob), path=path)
    got = struct.unpack(">I", blob[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}",
                          offset=0, path=path)
    return struct.unpack(f">{ndims}I", blob[4:need])


def _payload(blob: bytes, start: int, size: int, path: str) -> np.ndarray:
    end = start + size
    if len(blob) < end:
        raise FormatError(
            f"{path}: payload truncated, missing byte at offset {len(blob)} (expected {end} bytes total)",
            offset=len(blob), path=path)
    if len(blob) > end:
        raise FormatError(f"{path}: {len(blob) - end} unexpected trailing bytes starting at offset {end}",
                          offset=end, path=path)
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=start)


def load_idx_images(path: str) -> np.ndarray:
    blob = _read(path)
    count, rows, cols = _idx_header(blob, path, IDX_IMAGE_MAGIC, 3)
    raw = _payload(blob, 16, count * rows * cols, path)
    return raw.reshape(count, 1, rows, cols).astype(np.float64) / 255.0


def load_idx_labels(path: str) -> np.ndarray:
    blob = _read(path)
    (count,) = _idx_header(blob, path, IDX_LABEL_MAGIC, 1)
    return _payload(blob, 8, count, path).astype(np.int64)


def load_idx(images_path: str, labels_path: str, split: str = "train") -> Dataset:
    x = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if len(x) != len(y):
        raise FormatError(f"{images_path} holds {len(x)} images but {labels_path} holds {len(y)} labels",
                          offset=4, path=labels_path)
    return Dataset(x, y, split=split)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str, labels_path: str) -> None:
    """Inverse of :func:`load_idx` for uint8 images of shape (n, rows, cols)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)) + labels.tobytes())


# ----------------------------------------------------------------- CIFAR-10


def load_cifar10_bin(paths: Sequence[str], split: str = "train") -> Dataset:
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    xs, ys = [], []
    for path in paths:
        blob = _read(path)
        if len(blob) == 0 or len(blob) % CIFAR_RECORD:
            full = len(blob) // CIFAR_RECORD * CIFAR_RECORD
            raise FormatError(
                f"{path}: length {len(blob)} is not a positive multiple of {CIFAR_RECORD}; "
                f"incomplete record starts at offset {full}", offset=full, path=path)
        rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(rec[:, 0] > 9)
        if bad.size:
            raise FormatError(f"{path}: label byte {rec[bad[0], 0]} > 9 at offset {bad[0] * CIFAR_RECORD}",
                              offset=int(bad[0]) * CIFAR_RECORD, path=path)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, *CIFAR_SHAPE).astype(np.float64) / 255.0)
    return Dataset(np.concatenate(xs), np.concatenate(ys), split=split)


# ----------------------------------------------------------------- synthetic


def _template(cls: int, size: int) -> np.ndarray:
    """Procedural pattern for one class: oriented grating with a class-specific blob."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = np.pi * (cls * 0.618034 % 1.0)
    freq = 2 + (cls % 3)
    grating = 0.5 + 0.5 * np.cos(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + cls)
    cy, cx = 0.25 + 0.5 * ((cls * 0.37) % 1.0), 0.25 + 0.5 * ((cls * 0.71) % 1.0)
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 0.02)
    return np.clip(0.6 * grating + 0.4 * blob, 0, 1)


def synth_templates(num_classes: int, size: int) -> np.ndarray:
    return np.stack([_template(c, size) for c in range(num_classes)])


def _grating(size: int, angle: float, freq: float, phase: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    return np.cos(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)


def synth_patterns(num_classes: int, per_class: int, size: int = 16, noise: float = 0.1,
                   seed: int = 0, channels: int = 1, *, shift: int = 0,
                   background: float = 0.0, distractor: float = 0.0) -> Dataset:
    """Class templates plus Gaussian pixel noise, clamped to [0, 1].

    Two optional nuisances make the task harder without changing which
    template a sample comes from: ``shift`` rolls each template by up to
    that many pixels along both axes, and ``background`` adds a random
    grating (orientation, frequency and phase drawn per sample) with that
    amplitude. With both at 0 and ``noise`` 0 every sample of a class is
    identical. ``distractor`` blends in the (centred) template of another,
    randomly chosen class with that weight, so features that identify one
    class also vary inside every other class.
    """
    if num_classes <= 0 or per_class <= 0 or size <= 0 or channels <= 0:
        raise ConfigError("synth_patterns needs positive counts")
    if shift < 0 or background < 0 or noise < 0 or distractor < 0:
        raise ConfigError("noise, shift, background and distractor must be non-negative")
    rng = np.random.default_rng(seed)
    templates = synth_templates(num_classes, size)
    y = np.repeat(np.arange(num_classes), per_class)
    x = templates[y].copy()
    if distractor and num_classes > 1:
        other = (y + rng.integers(1, num_classes, size=len(y))) % num_classes
        x += distractor * (templates[other] - templates[other].mean(axis=(1, 2), keepdims=True))
    if shift:
        offsets = rng.integers(-shift, shift + 1, size=(len(y), 2))
        for k, (dy, dx) in enumerate(offsets):
            x[k] = np.roll(x[k], (dy, dx), axis=(0, 1))
    if background:
        params = rng.uniform([0.0, 1.0, 0.0], [np.pi, 4.0, 2 * np.pi], size=(len(y), 3))
        x += background * np.stack([_grating(size, *p) for p in params])
    x = x[:, None].repeat(channels, axis=1)
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    return Dataset(np.clip(x, 0, 1), y, tuple(range(num_classes)))


def split_holdout(d: Dataset, test_fraction: float = 0.2, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Stratified seeded train/test split."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in d.classes:
        idx = np.flatnonzero(d.y == c)
        k = int(round(len(idx) * test_fraction))
        test_idx.extend(rng.choice(idx, size=k, replace=False).tolist())
    is_test = np.zeros(len(d), dtype=bool)
    is_test[test_idx] = True
    train = Dataset(d.x[~is_test], d.y[~is_test], d.classes, "train")
    test = Dataset(d.x[is_test], d.y[is_test], d.classes, "test")
    return train, test


# -------------------------------------------------------------- task builders


@dataclass(frozen=True)
class SplitPlan:
    classes_per_task: int
    order: Optional[Tuple[int, ...]] = None


def make_class_sequence(train: Dataset, plan: SplitPlan, test: Optional[Dataset] = None,
                        scenario: Scenario = Scenario.CLASS_IL) -> TaskSequence:
    order = tuple(plan.order) if plan.order else tuple(sorted(train.classes))
    k = plan.classes_per_task
    if k <= 0 or len(order) % k:
        raise ConfigError(f"{len(order)} classes cannot be split into tasks of {k}")
    test = test if test is not None else train
    tasks = []
    for t in range(len(order) // k):
        cls = order[t * k:(t + 1) * k]
        tasks.append(Task(
            t + 1,
            train.subset(np.isin(train.y, cls), cls),
            test.subset(np.isin(test.y, cls), cls),
            cls,
        ))
    return TaskSequence(tasks, scenario, tuple(sorted(order)))


def rotate(pixels: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a (C, H, W) image about its centre, bilinear, zero fill."""
    if angle == 0:
        return pixels.copy()
    c, h, w = pixels.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cos, sin = np.cos(angle), np.sin(angle)
    # inverse map: output pixel -> source location
    sy = cos * (yy - cy) - sin * (xx - cx) + cy
    sx = sin * (yy - cy) + cos * (xx - cx) + cx
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    fy, fx = sy - y0, sx - x0
    out = np.zeros_like(pixels)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yi, xi = y0 + dy, x0 + dx
        ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.zeros((c, h, w))
        vals[:, ok] = pixels[:, yi[ok], xi[ok]]
        out += vals * wgt
    return np.clip(out, 0, 1)


def rotate_dataset(d: Dataset, angle: float) -> Dataset:
    return Dataset(np.stack([rotate(img, angle) for img in d.x]), d.y.copy(), d.classes, d.split)


def make_rotated_domains(base: Dataset, T: int = 20, seed: int = 0,
                         test: Optional[Dataset] = None,
                         angles: Optional[Sequence[float]] = None) -> TaskSequence:
    """Domain-IL sequence: task t is ``base`` rotated by an angle uniform in [0, pi)."""
    if T < 1:
        raise ConfigError("need at least one task")
    if angles is None:
        angles = np.random.default_rng(seed).uniform(0.0, np.pi, size=T)
    if len(angles) != T:
        raise ConfigError(f"{len(angles)} angles for {T} tasks")
    test = test if test is not None else base
    tasks = [Task(t + 1, rotate_dataset(base, float(a)), rotate_dataset(test, float(a)),
                  base.classes, angle=float(a)) for t, a in enumerate(angles)]
    return TaskSequence(tasks, Scenario.DOMAIN_IL, base.classes)


def resize_dataset(d: Dataset, size: Tuple[int, int]) -> Dataset:
    return Dataset(np.stack([resize_bilinear(img, size) for img in d.x]), d.y, d.classes, d.split)
