"""Contrastive continual training loop.

One task at a time: build the pool (task samples plus the replay buffer),
draw two-view mini-batches uniformly with replacement, minimise the
contrastive loss (plus a distillation term from the second task on) with
momentum SGD under a warmup + cosine schedule that restarts per task, then
snapshot the model and rebalance the buffer.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses as L
from . import model as M
from . import tensor as T
from .augment import AugConfig, augment_batch
from .data import Scenario, Task, TaskSequence
from .errors import ConfigError, ContractError, DivergenceError
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.001  # losses are sums over anchors; see README
    batch_size: int = 64
    epochs_first: int = 50
    epochs_rest: int = 20
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-4
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    preserve: str = "ird"
    symmetric: bool = False
    buffer_size: Optional[int] = 200  # None = keep every past sample
    use_buffer: bool = True  # False: buffer only feeds the probe
    steps_per_epoch: Optional[int] = None  # None = ceil(|pool| / batch_size)
    aug: AugConfig = field(default_factory=AugConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("lr and batch_size must be positive")
        if self.epochs_first < 1 or self.epochs_rest < 1:
            raise ConfigError("epoch budgets must be >= 1")
        if self.warmup_epochs < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("warmup, momentum and weight decay must be non-negative")
        if self.buffer_size is not None and self.buffer_size < 0:
            raise ConfigError("buffer_size must be >= 0 or None")
        if self.preserve not in L.PRESERVATION_MODES:
            raise ConfigError(f"unknown preservation mode {self.preserve!r}")

    def epochs_for(self, t: int) -> int:
        return self.epochs_first if t == 1 else self.epochs_rest


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("COCL_THREADS", "1")))
    except ValueError:
        return 1


# ------------------------------------------------------------------ buffer


@dataclass
class ReplayBuffer:
    """Class-balanced store of raw past samples.

    ``y`` holds effective labels (the ones the contrastive loss sees);
    ``nominal`` the labels a classifier predicts.
    """

    capacity: Optional[int]
    x: Optional[np.ndarray] = None
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    nominal: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.y)

    def class_counts(self) -> Dict[int, int]:
        cls, counts = np.unique(self.y, return_counts=True)
        return {int(c): int(n) for c, n in zip(cls, counts)}

    @property
    def infinite(self) -> bool:
        return self.capacity is None


def _balanced_quotas(supply: Dict[int, int], capacity: int, rng: np.random.Generator) -> Dict[int, int]:
    """Largest balanced allocation: short classes keep everything, the rest split evenly."""
    quotas: Dict[int, int] = {}
    active = sorted(supply)
    remaining = capacity
    while active:
        level = remaining // len(active)
        short = [c for c in active if supply[c] <= level]
        if not short:
            break
        for c in short:
            quotas[c] = supply[c]
            remaining -= supply[c]
        active = [c for c in active if c not in quotas]
    if active:
        base, extra = divmod(remaining, len(active))
        lucky = set(rng.choice(active, size=extra, replace=False).tolist()) if extra else set()
        for c in active:
            quotas[c] = base + (1 if c in lucky else 0)
    return quotas


def update_buffer(buffer: ReplayBuffer, x: np.ndarray, y: np.ndarray, classes: Sequence[int],
                  rng: np.random.Generator, nominal: Optional[np.ndarray] = None) -> ReplayBuffer:
    """End-of-task rebalance: every class seen so far ends with floor or ceil of M / #classes.

    Pushes and evictions are uniform random within each class. A class
    holding fewer samples than its quota keeps all of them.
    """
    y = np.asarray(y, dtype=np.int64)
    nominal = y if nominal is None else np.asarray(nominal, dtype=np.int64)
    keep = np.isin(y, list(classes))
    x, y, nominal = x[keep], y[keep], nominal[keep]
    if buffer.x is None or len(buffer) == 0:
        all_x, all_y, all_nom = x, y, nominal
    else:
        all_x = np.concatenate([buffer.x, x])
        all_y = np.concatenate([buffer.y, y])
        all_nom = np.concatenate([buffer.nominal, nominal])
    if buffer.capacity is None:
        return ReplayBuffer(None, all_x.copy(), all_y.copy(), all_nom.copy())

    supply = {int(c): int(n) for c, n in zip(*np.unique(all_y, return_counts=True))}
    quotas = _balanced_quotas(supply, buffer.capacity, rng)
    chosen = []
    for c in sorted(quotas):
        pool = np.flatnonzero(all_y == c)
        if quotas[c]:
            chosen.append(np.sort(rng.choice(pool, size=quotas[c], replace=False)))
    idx = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    return ReplayBuffer(buffer.capacity, all_x[idx].copy(), all_y[idx].copy(), all_nom[idx].copy())


# ------------------------------------------------------------------ batches


@dataclass
class TrainingPool:
    """Union of current-task samples and buffered samples, no oversampling."""

    x: np.ndarray
    y: np.ndarray  # effective labels
    nominal: np.ndarray
    from_buffer: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def build_task_dataset(x: np.ndarray, y: np.ndarray, buffer: Optional[ReplayBuffer],
                       nominal: Optional[np.ndarray] = None) -> TrainingPool:
    nominal = y if nominal is None else nominal
    parts = [(x, y, nominal, np.zeros(len(y), dtype=bool))]
    if buffer is not None and len(buffer):
        parts.append((buffer.x, buffer.y, buffer.nominal, np.ones(len(buffer), dtype=bool)))
    parts = [p for p in parts if len(p[1])]
    if not parts:
        raise ConfigError("training pool is empty: no task samples and no buffered samples")
    return TrainingPool(*(np.concatenate(cols) for cols in zip(*parts)))


def make_batch(pool: TrainingPool, n: int, task_classes: Sequence[int], aug: AugConfig,
               rng: np.random.Generator, seed: int = 0, epoch: int = 0, step: int = 0,
               workers: int = 1) -> L.AugmentedBatch:
    """Draw ``n`` samples uniformly with replacement and emit their 2n augmented views."""
    if n < 1:
        raise ConfigError("batch size must be >= 1")
    idx = rng.integers(0, len(pool), size=n)
    views = augment_batch(pool.x[idx], pool.y[idx], aug, seed, epoch, step * n, workers)
    labels = np.repeat(pool.y[idx], 2)
    return L.AugmentedBatch(
        x=views.reshape(2 * n, -1),
        labels=labels,
        anchor_mask=np.isin(labels, list(task_classes)),
        origin=np.repeat(np.arange(n), 2),
    )


# ------------------------------------------------------------ optimisation


def warmup_epochs_for(cfg: TrainConfig, epochs: int) -> int:
    # budgets too short for the full warmup compress it to half the task
    return cfg.warmup_epochs if epochs > cfg.warmup_epochs else math.ceil(epochs / 2)


def lr_at(cfg: TrainConfig, t: int, epoch: int, step: int = 0) -> float:
    """Epoch-granular linear warmup then cosine decay; restarts every task.

    ``epoch`` is 0-based. ``step`` is accepted for interface symmetry and
    ignored because the schedule only changes between epochs.
    """
    epochs = cfg.epochs_for(t)
    if not 0 <= epoch < epochs:
        raise ContractError(f"epoch {epoch} outside task budget {epochs}")
    warm = warmup_epochs_for(cfg, epochs)
    if epoch < warm:
        return cfg.lr * (epoch + 1) / warm
    return cfg.lr * 0.5 * (1 + math.cos(math.pi * (epoch - warm) / (epochs - warm)))


class SGD:
    """Momentum SGD with coupled weight decay: v = mu*v + (g + wd*w); w -= lr*v."""

    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} of shape {p.shape} has no gradient")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params: Sequence[Tensor], lr: float, velocity: List[np.ndarray],
             momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
    """Functional form of :meth:`SGD.step` over an explicit velocity list."""
    opt = SGD(params, momentum, weight_decay)
    opt.velocity = velocity
    opt.step(lr)


# -------------------------------------------------------------- task loop


@dataclass
class EpochRecord:
    task: int
    epoch: int
    loss_asym: float
    loss_preserve: float
    loss_total: float
    lr: float
    wall_ms: float


def _task_arrays(task: Task, scenario: Scenario, n_nominal: int):
    x = task.train.x
    nominal = task.train.y
    return x, task.effective_labels(nominal, scenario, n_nominal), nominal


def train_task(model: M.ModelState, t: int, task: Task, buffer: Optional[ReplayBuffer],
               snapshot: Optional[M.ReferenceSnapshot], cfg: TrainConfig,
               scenario: Scenario = Scenario.CLASS_IL, n_nominal: Optional[int] = None,
               on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> List[EpochRecord]:
    """Train ``model`` in place on task ``t``; the snapshot is only read."""
    if (t > 1) != (snapshot is not None):
        raise ContractError(f"task {t}: a reference snapshot is required iff t > 1")
    n_nominal = n_nominal if n_nominal is not None else int(task.train.y.max()) + 1
    x, y_eff, nominal = _task_arrays(task, scenario, n_nominal)
    pool = build_task_dataset(x, y_eff, buffer if cfg.use_buffer else None, nominal)
    task_classes = task.effective_classes(scenario, n_nominal)
    steps = cfg.steps_per_epoch or math.ceil(len(pool) / cfg.batch_size)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, t]))
    opt = SGD(model.parameters(), cfg.momentum, cfg.weight_decay)
    records = []
    for epoch in range(cfg.epochs_for(t)):
        start = time.perf_counter()
        lr = lr_at(cfg, t, epoch)
        sums = np.zeros(3)
        for step in range(steps):
            batch = make_batch(pool, cfg.batch_size, task_classes, cfg.aug, rng,
                               seed=cfg.seed * 1000 + t, epoch=epoch, step=step, workers=cfg.workers)
            terms = L.total_loss(batch, model, snapshot, cfg.loss, t, cfg.preserve, cfg.symmetric)
            total = terms.total.item()
            if not math.isfinite(total):
                raise DivergenceError(f"non-finite loss at task {t} epoch {epoch}", task=t, epoch=epoch)
            opt.zero_grad()
            T.backward(terms.total)
            opt.step(lr)
            sums += (terms.contrastive, terms.preserve, total)
        rec = EpochRecord(t, epoch, *(float(v) for v in sums / steps), float(lr),
                          (time.perf_counter() - start) * 1e3)
        records.append(rec)
        if on_epoch:
            on_epoch(rec)
    return records


@dataclass
class RunResult:
    model: M.ModelState
    snapshots: List[M.ReferenceSnapshot]
    metrics: List[EpochRecord]
    buffers: List[ReplayBuffer]  # buffer state each task trained with (before its update)
    final_buffer: ReplayBuffer
    buffer_history: List[Dict[int, int]]


def run_sequence(seq: TaskSequence, cfg: TrainConfig, model_config: Optional[M.ModelConfig] = None,
                 model: Optional[M.ModelState] = None,
                 on_epoch: Optional[Callable[[EpochRecord], None]] = None,
                 on_task_end: Optional[Callable[[int, M.ReferenceSnapshot], None]] = None) -> RunResult:
    """Train on every task in order: train, snapshot, rebalance buffer."""
    if model is None:
        if model_config is None:
            model_config = M.ModelConfig(input_dim=int(np.prod(seq.tasks[0].train.image_shape)))
        model = M.init(model_config, cfg.seed)
    n_nominal = seq.n_nominal
    buffer = ReplayBuffer(cfg.buffer_size)
    buffer_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    snapshots: List[M.ReferenceSnapshot] = []
    metrics: List[EpochRecord] = []
    buffers: List[ReplayBuffer] = []
    history: List[Dict[int, int]] = []
    for task in seq:
        t = task.index
        reference = snapshots[-1] if t > 1 else None
        metrics += train_task(model, t, task, buffer, reference, cfg, seq.scenario, n_nominal, on_epoch)
        snap = M.snapshot(model)
        snapshots.append(snap)
        buffers.append(buffer)
        x, y_eff, nominal = _task_arrays(task, seq.scenario, n_nominal)
        buffer = update_buffer(buffer, x, y_eff, task.effective_classes(seq.scenario, n_nominal),
                               buffer_rng, nominal)
        history.append(buffer.class_counts())
        log.info("task %d done: buffer %d entries", t, len(buffer))
        if on_task_end:
            on_task_end(t, snap)
    return RunResult(model, snapshots, metrics, buffers, buffer, history)


# ---------------------------------------------------------- joint baseline


@dataclass
class JointResult:
    model: M.ModelState
    head: M.Linear
    snapshots: List[M.ReferenceSnapshot]
    losses: List[Tuple[int, int, float]]


def joint_logits(model, head: M.Linear, x) -> Tensor:
    return head(M.encode(model, x))


def train_joint_baseline(seq: TaskSequence, cfg: TrainConfig,
                         model_config: Optional[M.ModelConfig] = None,
                         lr_scale: Optional[float] = None) -> JointResult:
    """Encoder plus linear head trained with cross-entropy, task after task.

    No buffer and no distillation: the comparator for how much the
    representation itself forgets under plain supervised training.
    Cross-entropy is a batch mean while the contrastive losses are sums,
    so the schedule is multiplied by ``lr_scale`` (default: batch size)
    to give both arms the same per-sample step.
    """
    lr_scale = float(cfg.batch_size if lr_scale is None else lr_scale)
    if model_config is None:
        model_config = M.ModelConfig(input_dim=int(np.prod(seq.tasks[0].train.image_shape)))
    model = M.init(model_config, cfg.seed)
    n_classes = seq.n_nominal
    head = M.Linear.init(model_config.embed_dim, n_classes, np.random.default_rng([cfg.seed, 3]))
    snapshots, losses = [], []
    for task in seq:
        t = task.index
        x, y = task.train.x, task.train.y
        steps = cfg.steps_per_epoch or math.ceil(len(y) / cfg.batch_size)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4, t]))
        opt = SGD(model.encoder_parameters() + [head.weight, head.bias], cfg.momentum, cfg.weight_decay)
        for epoch in range(cfg.epochs_for(t)):
            lr = lr_at(cfg, t, epoch) * lr_scale
            total = 0.0
            for step in range(steps):
                idx = rng.integers(0, len(y), size=cfg.batch_size)
                views = augment_batch(x[idx], y[idx], cfg.aug, cfg.seed * 1000 + t, epoch,
                                      step * cfg.batch_size, cfg.workers, views=1)
                loss = L.cross_entropy(joint_logits(model, head, views.reshape(len(idx), -1)), y[idx])
                if not math.isfinite(loss.item()):
                    raise DivergenceError(f"non-finite loss at task {t} epoch {epoch}", task=t, epoch=epoch)
                opt.zero_grad()
                T.backward(loss)
                opt.step(lr)
                total += loss.item()
            losses.append((t, epoch, total / steps))
        snapshots.append(M.snapshot(model))
    return JointResult(model, head, snapshots, losses)
