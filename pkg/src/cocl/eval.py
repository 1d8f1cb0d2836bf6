"""Linear-probe evaluation of frozen encoders."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses as L
from . import model as M
from . import tensor as T
from .data import Scenario, Task, TaskSequence
from .engine import SGD, ReplayBuffer
from .errors import ConfigError, ContractError
from .tensor import Tensor

PROBE_SOURCES = ("last_task_plus_buffer", "seen", "all")


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    lr: float = 1.0
    decay_epochs: Tuple[int, ...] = (60, 75, 90)
    decay_rate: float = 0.2
    momentum: float = 0.9
    batch_size: int = 64
    source: str = "last_task_plus_buffer"
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("probe epochs, lr and batch_size must be positive")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)) or any(
                e >= self.epochs for e in self.decay_epochs):
            raise ConfigError(f"decay epochs {self.decay_epochs} must be ascending and < {self.epochs}")
        if self.source not in PROBE_SOURCES:
            raise ConfigError(f"probe source must be one of {PROBE_SOURCES}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_rate ** sum(epoch >= e for e in self.decay_epochs)


# ------------------------------------------------------------ sampling


def group_by_class(labels: Sequence[int]) -> Dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def _nonempty(groups: Dict[int, Sequence]) -> List[int]:
    classes = [c for c in sorted(groups) if len(groups[c])]
    empty = [c for c in sorted(groups) if not len(groups[c])]
    if empty:
        warnings.warn(f"classes {empty} have no samples and are excluded from class-balanced draws")
    if not classes:
        raise ContractError("every class group is empty")
    return classes


def class_balanced_sample(groups: Dict[int, Sequence], rng: np.random.Generator):
    """Pick a class uniformly, then one of its members uniformly. Returns (class, member)."""
    classes = _nonempty(groups)
    c = classes[int(rng.integers(len(classes)))]
    members = groups[c]
    return c, members[int(rng.integers(len(members)))]


def class_balanced_indices(groups: Dict[int, np.ndarray], n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent two-stage draws, vectorised."""
    classes = _nonempty(groups)
    picks = rng.integers(len(classes), size=n)
    out = np.empty(n, dtype=np.int64)
    for k, c in enumerate(classes):
        sel = picks == k
        if sel.any():
            members = np.asarray(groups[c])
            out[sel] = members[rng.integers(len(members), size=int(sel.sum()))]
    return out


# ----------------------------------------------------------- classifier


@dataclass
class LinearClassifier:
    weight: Tensor
    bias: Tensor
    classes: Tuple[int, ...]
    shift: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def features(self, emb: np.ndarray) -> np.ndarray:
        if self.shift is None:
            return emb
        return (emb - self.shift) / self.scale

    def logits(self, emb: np.ndarray) -> np.ndarray:
        return self.features(emb) @ self.weight.data + self.bias.data

    def predict(self, emb: np.ndarray, allowed: Optional[Sequence[int]] = None) -> np.ndarray:
        logits = self.logits(emb)
        if allowed is not None:
            keep = np.isin(self.classes, list(allowed))
            if not keep.any():
                raise ContractError(f"none of the classes {list(allowed)} are known to the classifier")
            logits = np.where(keep[None, :], logits, -np.inf)
        return np.asarray(self.classes)[np.argmax(logits, axis=1)]


def embed(encoder, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Encoder outputs for raw images, computed without any tape."""
    frozen = encoder if isinstance(encoder, M.ReferenceSnapshot) else M.snapshot(encoder)
    flat = np.asarray(x).reshape(len(x), -1)
    return np.concatenate([M.encode(frozen, flat[i:i + chunk]).data for i in range(0, len(flat), chunk)])


def train_probe_on_embeddings(emb: np.ndarray, y: np.ndarray, cfg: ProbeConfig,
                              classes: Optional[Sequence[int]] = None) -> LinearClassifier:
    classes = tuple(sorted(int(c) for c in (classes if classes is not None else np.unique(y))))
    index = {c: i for i, c in enumerate(classes)}
    targets = np.array([index[int(c)] for c in y])
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    d = emb.shape[1]
    clf = LinearClassifier(Tensor(np.zeros((d, len(classes))), requires_grad=True),
                           Tensor(np.zeros(len(classes)), requires_grad=True), classes)
    if cfg.standardize:
        clf.shift = emb.mean(axis=0)
        clf.scale = emb.std(axis=0) + 1e-8
    feats = clf.features(emb)
    groups = group_by_class(targets)
    opt = SGD([clf.weight, clf.bias], cfg.momentum, weight_decay=0.0)
    steps = math.ceil(len(y) / cfg.batch_size)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        for _ in range(steps):
            idx = class_balanced_indices(groups, cfg.batch_size, rng)
            logits = T.add(T.matmul(Tensor(feats[idx]), clf.weight),
                           T.broadcast_rows(clf.bias, len(idx)))
            loss = L.cross_entropy(logits, targets[idx])
            opt.zero_grad()
            T.backward(loss)
            opt.step(lr)
    return clf


def train_probe(encoder, x: np.ndarray, y: np.ndarray, cfg: ProbeConfig,
                classes: Optional[Sequence[int]] = None) -> LinearClassifier:
    """Softmax-regression probe on frozen encoder outputs with class-balanced batches."""
    return train_probe_on_embeddings(embed(encoder, x), np.asarray(y), cfg, classes)


def evaluate(clf: LinearClassifier, encoder, x: np.ndarray, y: np.ndarray,
             scenario: Scenario = Scenario.CLASS_IL, task: Optional[Task] = None) -> float:
    """Accuracy; Task-IL restricts the argmax to the task's classes."""
    allowed = None
    if scenario is Scenario.TASK_IL:
        if task is None:
            raise ContractError("Task-IL evaluation needs the task")
        allowed = task.classes
    pred = clf.predict(embed(encoder, x), allowed)
    return float(np.mean(pred == np.asarray(y)))


# ------------------------------------------------------------- matrices


def probe_pool(seq: TaskSequence, t_train: int, source: str,
               buffer: Optional[ReplayBuffer] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Training data for the probe fitted after task ``t_train`` (1-based)."""
    if source == "all":
        tasks = seq.tasks
    elif source == "seen":
        tasks = seq.tasks[:t_train]
    elif source == "last_task_plus_buffer":
        task = seq.tasks[t_train - 1]
        xs, ys = [task.train.x], [task.train.y]
        if buffer is not None and len(buffer):
            xs.append(buffer.x)
            ys.append(buffer.nominal)
        return np.concatenate(xs), np.concatenate(ys)
    else:
        raise ConfigError(f"unknown probe source {source!r}")
    return (np.concatenate([t.train.x for t in tasks]), np.concatenate([t.train.y for t in tasks]))


def accuracy_matrix(snapshots: Sequence[M.ReferenceSnapshot], seq: TaskSequence, cfg: ProbeConfig,
                    buffers: Optional[Sequence[ReplayBuffer]] = None,
                    source: Optional[str] = None) -> np.ndarray:
    """a[i, j]: probe fitted on snapshot i's encoder, tested on task j's test split."""
    if len(snapshots) != seq.T:
        raise ContractError(f"{len(snapshots)} snapshots for {seq.T} tasks")
    source = source or cfg.source
    mat = np.zeros((seq.T, seq.T))
    for i, snap in enumerate(snapshots):
        buf = buffers[i] if buffers is not None else None
        px, py = probe_pool(seq, i + 1, source, buf)
        clf = train_probe(snap, px, py, cfg)
        for j, task in enumerate(seq.tasks):
            mat[i, j] = evaluate(clf, snap, task.test.x, task.test.y, seq.scenario, task)
    return mat


def final_accuracy(snapshot: M.ReferenceSnapshot, seq: TaskSequence, cfg: ProbeConfig,
                   buffer: Optional[ReplayBuffer] = None, source: Optional[str] = None) -> Dict:
    """Probe after the last task; per-task test accuracies and their mean."""
    px, py = probe_pool(seq, seq.T, source or cfg.source, buffer)
    clf = train_probe(snapshot, px, py, cfg)
    per_task = [evaluate(clf, snapshot, t.test.x, t.test.y, seq.scenario, t) for t in seq.tasks]
    return {"per_task": per_task, "average": float(np.mean(per_task))}


def off_diagonal_mean(mat: np.ndarray) -> float:
    mask = ~np.eye(len(mat), dtype=bool)
    if not mask.any():
        return float("nan")
    return float(mat[mask].mean())


def forgetting(mat: np.ndarray) -> float:
    """Mean of a[T,t] - a[t,t] over earlier tasks (auxiliary summary)."""
    n = len(mat)
    if n < 2:
        return 0.0
    return float(np.mean([mat[-1, t] - mat[t, t] for t in range(n - 1)]))


def matrix_to_csv(mat: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(mat)
    w.writerow(["train\\eval"] + [str(j + 1) for j in range(n)])
    for i in range(n):
        w.writerow([str(i + 1)] + [repr(float(v)) for v in mat[i]])
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])
