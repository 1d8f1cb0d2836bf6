"""Contrastive, distillation and matching losses.

All contrastive-style losses are *sums* over anchors rather than means, and
every softmax over a batch excludes the anchor itself by masking before the
normalisation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import model as M
from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

PRESERVATION_MODES = ("ird", "seed", "mse_emb", "mse_proj", "none")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    kappa: float = 0.2
    kappa_star: float = 0.01
    lam: float = 1.0
    gamma_t: float = 0.01
    gamma_s: float = 0.2

    def __post_init__(self):
        for name in ("tau", "kappa", "kappa_star", "gamma_t", "gamma_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.lam >= 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")


@dataclass
class ContrastiveBatchView:
    """Unit-norm projections of a two-view batch plus the bookkeeping around them.

    Views ``2k`` and ``2k+1`` come from source sample ``k``.
    """

    z: Tensor
    labels: np.ndarray
    anchor_mask: np.ndarray
    origin: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        self.anchor_mask = np.asarray(self.anchor_mask, dtype=bool)
        n = self.z.shape[0]
        if self.labels.shape != (n,) or self.anchor_mask.shape != (n,):
            raise DimensionError(
                f"labels {self.labels.shape} / anchor_mask {self.anchor_mask.shape} do not match {n} rows"
            )
        if self.origin is None:
            self.origin = np.arange(n) // 2
        self.origin = np.asarray(self.origin)


def _off_diagonal(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def _similarity_logits(z: Tensor, temperature: float) -> Tensor:
    return T.scale(T.matmul(z, T.transpose(z)), 1.0 / temperature)


def asym_supcon_loss(b: ContrastiveBatchView, tau: float) -> Tensor:
    """Supervised contrastive loss with anchors restricted to ``b.anchor_mask``.

    Non-anchor rows still act as negatives in every denominator. They are
    also counted as positives for an anchor of the same label, which only
    happens when the label is shared with the current task.
    """
    z = b.z
    n = z.shape[0]
    if n < 2:
        raise ContractError("contrastive loss needs at least two views")
    anchors = b.anchor_mask
    if not anchors.any():
        # empty anchor set: the outer sum is empty; keep the graph connected
        return T.scale(T.sum(z), 0.0)
    offdiag = _off_diagonal(n)
    positives = (b.labels[:, None] == b.labels[None, :]) & offdiag
    n_pos = positives.sum(axis=1)
    if np.any(n_pos[anchors] == 0):
        i = int(np.flatnonzero(anchors & (n_pos == 0))[0])
        raise ContractError(f"anchor {i} has no positive in the batch")
    weights = np.zeros((n, n))
    rows = np.flatnonzero(anchors)
    weights[rows] = positives[rows] / n_pos[rows, None]
    log_prob = T.masked_log_softmax(_similarity_logits(z, tau), offdiag)
    return T.neg(T.sum(T.mul(log_prob, Tensor(weights))))


def supcon_loss(b: ContrastiveBatchView, tau: float) -> Tensor:
    """Symmetric SupCon: every view is an anchor."""
    full = ContrastiveBatchView(b.z, b.labels, np.ones(b.z.shape[0], dtype=bool), b.origin)
    return asym_supcon_loss(full, tau)


def similarity_log_probs(z: Tensor, temperature: float) -> Tensor:
    """Row i holds log p_{i,j}; the diagonal is exactly 0 and carries no mass."""
    n = z.shape[0]
    if n < 2:
        raise ContractError("similarity vectors need at least two rows")
    return T.masked_log_softmax(_similarity_logits(z, temperature), _off_diagonal(n))


def similarity_vector(z: Tensor, i: int, temperature: float) -> np.ndarray:
    """Instance-wise similarity of row ``i`` to every other row (length 2N-1)."""
    z = T.as_tensor(z)
    n = z.shape[0]
    if not -n <= i < n:
        raise DimensionError(f"row {i} out of range for {n} rows")
    i %= n
    logp = similarity_log_probs(Tensor(z.data), temperature).data[i]
    return np.exp(np.delete(logp, i))


def _relation_distillation(teacher: Tensor, student: Tensor, t_temp: float, s_temp: float) -> Tensor:
    if teacher.shape[0] != student.shape[0]:
        raise DimensionError(f"teacher has {teacher.shape[0]} rows, student {student.shape[0]}")
    n = student.shape[0]
    target = np.exp(similarity_log_probs(Tensor(teacher.data), t_temp).data)
    target[np.eye(n, dtype=bool)] = 0.0
    log_p = similarity_log_probs(student, s_temp)
    return T.neg(T.sum(T.mul(log_p, Tensor(target))))


def ird_loss(z_past: Tensor, z_cur: Tensor, kappa_star: float, kappa: float) -> Tensor:
    """Cross-entropy between past and current instance-wise similarity vectors.

    ``z_past`` is read as a constant: no gradient ever reaches it.
    """
    return _relation_distillation(T.as_tensor(z_past), z_cur, kappa_star, kappa)


def seed_loss(emb_teacher: Tensor, emb_student: Tensor, gamma_t: float, gamma_s: float) -> Tensor:
    """Relation distillation on L2-normalised encoder embeddings."""
    teacher = T.l2_normalize(Tensor(T.as_tensor(emb_teacher).data))
    return _relation_distillation(teacher, T.l2_normalize(emb_student), gamma_t, gamma_s)


def _mse_rows(cur: Tensor, past) -> Tensor:
    past = T.as_tensor(past)
    if cur.shape != past.shape:
        raise DimensionError(f"shape mismatch {cur.shape} vs {past.shape}")
    diff = T.sub(cur, Tensor(past.data))
    return T.scale(T.sum(T.mul(diff, diff)), 1.0 / cur.shape[0])


def mse_embedding_loss(emb_cur: Tensor, emb_past) -> Tensor:
    return _mse_rows(emb_cur, emb_past)


def mse_projection_loss(proj_cur: Tensor, proj_past) -> Tensor:
    return _mse_rows(proj_cur, proj_past)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape[0]} labels for {n} rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise DimensionError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0 / n
    return T.neg(T.sum(T.mul(T.log_softmax(logits), Tensor(onehot))))


# --------------------------------------------------------------- compound loss


@dataclass
class AugmentedBatch:
    """Model-ready two-view batch: flattened views and per-view metadata."""

    x: np.ndarray  # (2N, input_dim)
    labels: np.ndarray
    anchor_mask: np.ndarray
    origin: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


class LossTerms(NamedTuple):
    total: Tensor
    contrastive: float
    preserve: float


def total_loss(
    batch: AugmentedBatch,
    model: M.ModelState,
    snapshot: Optional[M.ReferenceSnapshot],
    cfg: LossConfig,
    t: int,
    preserve: str = "ird",
    symmetric: bool = False,
) -> LossTerms:
    """Contrastive term plus, from the second task on, ``lam`` times a preservation term."""
    if preserve not in PRESERVATION_MODES:
        raise ConfigError(f"unknown preservation mode {preserve!r}")
    if t > 1 and snapshot is None and preserve != "none":
        raise ContractError(f"task {t} > 1 needs a reference snapshot")
    if t == 1 and snapshot is not None:
        raise ContractError("task 1 must not have a reference snapshot")

    x = Tensor(batch.x)
    use_preserve = t > 1 and preserve != "none"
    emb = M.encode(model, x)
    proj = M._mlp(model.projector, emb)
    z = T.l2_normalize(proj)
    view = ContrastiveBatchView(z, batch.labels, batch.anchor_mask, batch.origin)
    contrastive = supcon_loss(view, cfg.tau) if symmetric else asym_supcon_loss(view, cfg.tau)
    if not use_preserve:
        return LossTerms(contrastive, contrastive.item(), 0.0)

    if preserve == "ird":
        term = ird_loss(M.project_normalized(snapshot, x), z, cfg.kappa_star, cfg.kappa)
    elif preserve == "seed":
        term = seed_loss(M.encode(snapshot, x), emb, cfg.gamma_t, cfg.gamma_s)
    elif preserve == "mse_emb":
        term = mse_embedding_loss(emb, M.encode(snapshot, x))
    else:
        term = mse_projection_loss(proj, M.project(snapshot, x))
    total = T.add(contrastive, T.scale(term, cfg.lam))
    return LossTerms(total, contrastive.item(), term.item())
