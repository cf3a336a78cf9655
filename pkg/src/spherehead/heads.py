"""Classification heads: cosine logits and the margin-based objectives.

Five objectives share one skeleton: compute cos theta between each
feature and each class weight column, perturb the target-class entry
according to the family, then take mean softmax cross-entropy.

    cce         raw linear logits, no normalization, no margin
    sphereface  target exponent |x| * psi(m * theta_y), others |x| * cos theta
    cosface     target s * (cos theta_y - m), others s * cos theta
    arcface     target s * cos(theta_y + m), others s * cos theta
    broadface   arcface over the batch plus a FIFO queue of past
                embeddings, each compensated for weight drift

The queue keeps detached embeddings only; gradient from queue terms
reaches the weight matrix and nothing else. All losses are scalar
tensors on the gradient tape.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DegenerateInputError, LabelError, ShapeError, StateError
from .ndcore import Tensor, expand_cols, expand_rows, matmul, transpose

__all__ = [
    "FAMILIES",
    "MarginConfig",
    "HeadWeights",
    "EmbeddingQueue",
    "QueueEntry",
    "cosine_logits",
    "cce_loss",
    "sphereface_loss",
    "cosface_loss",
    "arcface_loss",
    "broadface_step",
    "compensate",
    "head_forward",
]

FAMILIES = ("cce", "sphereface", "cosface", "arcface", "broadface")

# cosines are pulled this far inside [-1, 1] before acos so the arccos
# derivative stays finite at exactly parallel features
COS_CLAMP = 1.0 - 1e-12

_DEFAULT_MARGIN = {"cce": 0.0, "sphereface": 2.0, "cosface": 0.35, "arcface": 0.5, "broadface": 0.5}
_DEFAULT_SCALE = 8.0
_DEFAULT_QUEUE_CAPACITY = 256


@dataclass(frozen=True)
class MarginConfig:
    """Hyperparameters of one head family.

    ``m`` is the multiplicative integer margin for sphereface and the
    additive margin in [0, 1] for cosface/arcface/broadface; ``s``
    scales cosine logits; ``queue_capacity`` sizes the broadface queue;
    ``use_monotone_psi`` selects the piecewise-monotone sphereface
    target curve instead of the bare cos(m * theta).
    """

    family: str
    m: float = 0.0
    s: float = _DEFAULT_SCALE
    queue_capacity: int = 0
    use_monotone_psi: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if not self.s > 0.0:
            raise ConfigError(f"scale must be positive, got {self.s!r}")
        if self.family == "sphereface":
            if self.m != int(self.m) or not 1 <= self.m <= 4:
                raise ConfigError(f"sphereface margin must be an integer in 1..4, got {self.m!r}")
        elif self.family in ("cosface", "arcface", "broadface"):
            if not 0.0 <= self.m <= 1.0:
                raise ConfigError(f"{self.family} margin must be in [0, 1], got {self.m!r}")
        if self.queue_capacity < 0:
            raise ConfigError(f"queue capacity must be non-negative, got {self.queue_capacity!r}")
        if self.queue_capacity > 0 and self.family != "broadface":
            raise ConfigError(f"queue capacity is a broadface knob, not valid for {self.family!r}")

    @classmethod
    def for_family(cls, family: str, m: float | None = None, s: float | None = None,
                   queue_capacity: int | None = None, use_monotone_psi: bool = True) -> "MarginConfig":
        """Build a config with the per-family defaults filled in."""
        if family not in FAMILIES:
            raise ConfigError(f"unknown family {family!r}, expected one of {FAMILIES}")
        if m is None:
            m = _DEFAULT_MARGIN[family]
        if s is None:
            s = _DEFAULT_SCALE
        if queue_capacity is None:
            queue_capacity = _DEFAULT_QUEUE_CAPACITY if family == "broadface" else 0
        return cls(family=family, m=float(m), s=float(s),
                   queue_capacity=int(queue_capacity), use_monotone_psi=use_monotone_psi)


class HeadWeights:
    """The class-weight matrix W of shape [d, C], one column per class.

    Columns are L2-normalized inside the logit computation; the raw
    matrix is what the optimizer updates.
    """

    __slots__ = ("W",)

    def __init__(self, W: Tensor):
        if not isinstance(W, Tensor):
            W = Tensor(W, requires_grad=True)
        if W.ndim != 2:
            raise ShapeError(f"weights must be [d, C], got shape {W.shape}")
        self.W = W

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @property
    def class_count(self) -> int:
        return self.W.shape[1]


class QueueEntry(NamedTuple):
    embedding: np.ndarray
    label: int
    snapshot_weight: np.ndarray


class EmbeddingQueue:
    """FIFO store of past (embedding, label, weight-snapshot) triples."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ConfigError(f"queue capacity must be non-negative, got {capacity!r}")
        self.capacity = int(capacity)
        self.entries: deque[QueueEntry] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, embedding: np.ndarray, label: int, snapshot_weight: np.ndarray) -> None:
        if self.entries and embedding.shape != self.entries[0].embedding.shape:
            raise StateError(
                f"embedding dim {embedding.shape} does not match queued {self.entries[0].embedding.shape}"
            )
        if self.capacity > 0:
            self.entries.append(QueueEntry(embedding.copy(), int(label), snapshot_weight.copy()))

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries as arrays: embeddings [Q, d], labels [Q], snapshots [Q, d]."""
        emb = np.stack([e.embedding for e in self.entries])
        labels = np.array([e.label for e in self.entries], dtype=np.int64)
        snaps = np.stack([e.snapshot_weight for e in self.entries])
        return emb, labels, snaps


def _one_hot(labels, class_count: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be a flat sequence, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == labels.astype(np.int64)):
            raise LabelError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise LabelError(f"labels must lie in [0, {class_count}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, class_count))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _row_norms(features: Tensor) -> Tensor:
    """Per-row L2 norms as a [B, 1] tensor; rejects zero rows."""
    sq = (features * features).sum(axis=1, keepdims=True)
    if np.any(sq.data == 0.0):
        raise DegenerateInputError("zero-norm feature row cannot be normalized")
    return sq.sqrt()


def cosine_logits(features: Tensor, weights: HeadWeights) -> Tensor:
    """cos theta between each feature row and each weight column, in [-1, 1]."""
    if not isinstance(features, Tensor):
        features = Tensor(features)
    if features.ndim != 2:
        raise ShapeError(f"features must be [B, d], got shape {features.shape}")
    W = weights.W
    if features.shape[1] != weights.dim:
        raise ShapeError(f"feature dim {features.shape[1]} does not match weight dim {weights.dim}")
    norms = _row_norms(features)
    unit_features = features / expand_cols(norms, features.shape[1])
    col_sq = (W * W).sum(axis=0, keepdims=True)
    if np.any(col_sq.data == 0.0):
        raise DegenerateInputError("zero-norm weight column cannot be normalized")
    unit_weights = W / expand_rows(col_sq.sqrt(), weights.dim)
    return matmul(unit_features, unit_weights).clamp(-1.0, 1.0)


def _nll_sum(logits: Tensor, onehot: np.ndarray) -> Tensor:
    """Summed -log softmax(logits)[target], max-shifted against overflow.

    The row maxima are detached constants: subtracting any constant from
    a row leaves softmax and its gradient unchanged, so the shifted
    expression still backpropagates the exact softmax gradient.
    """
    class_count = logits.shape[1]
    row_max = logits.max(axis=1, keepdims=True).detach()
    shifted = logits - expand_cols(row_max, class_count)
    lse = shifted.exp().sum(axis=1, keepdims=True).log()
    target = (shifted * Tensor(onehot)).sum(axis=1, keepdims=True)
    return (lse - target).sum()


def cce_loss(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [B, C], got shape {logits.shape}")
    onehot = _one_hot(labels, logits.shape[1])
    if onehot.shape[0] != logits.shape[0]:
        raise ShapeError(f"{logits.shape[0]} logit rows but {onehot.shape[0]} labels")
    return _nll_sum(logits, onehot) / float(logits.shape[0])


def _target_column(cosines: Tensor, onehot: np.ndarray) -> Tensor:
    """Pick each row's target-class cosine as a [B, 1] tensor."""
    return (cosines * Tensor(onehot)).sum(axis=1, keepdims=True)


def _replace_target(cosines: Tensor, onehot: np.ndarray, new_target: Tensor, old_target: Tensor) -> Tensor:
    """Swap the target-class entry of each row for ``new_target``."""
    delta = new_target - old_target
    return cosines + expand_cols(delta, cosines.shape[1]) * Tensor(onehot)


def _psi_sphereface(cos_target: Tensor, m: int, use_monotone_psi: bool) -> Tensor:
    """Target curve psi(m * theta) evaluated from cos theta, on the tape.

    Literal form: cos(m * theta), non-monotone in theta for m >= 2.
    Monotone form: (-1)^k cos(m * theta) - 2k on theta in [k pi/m, (k+1) pi/m],
    the strictly decreasing extension; k is a per-sample constant.
    """
    if m == 1:
        return cos_target  # both curves are cos(theta) = the cosine itself
    theta = cos_target.clamp(-COS_CLAMP, COS_CLAMP).acos()
    folded = (theta * float(m)).cos()
    if not use_monotone_psi:
        return folded
    k = np.floor(m * theta.data / np.pi)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return folded * Tensor(sign) - Tensor(2.0 * k)


def sphereface_loss(features: Tensor, weights: HeadWeights, cfg: MarginConfig, labels) -> Tensor:
    """Multiplicative angular margin: target exponent |x| * psi(m * theta)."""
    if cfg.family != "sphereface":
        raise ConfigError(f"sphereface_loss needs a sphereface config, got {cfg.family!r}")
    cosines = cosine_logits(features, weights)
    onehot = _one_hot(labels, weights.class_count)
    norms = _row_norms(features if isinstance(features, Tensor) else Tensor(features))
    cos_target = _target_column(cosines, onehot)
    psi = _psi_sphereface(cos_target, int(cfg.m), cfg.use_monotone_psi)
    margined = _replace_target(cosines, onehot, psi, cos_target)
    logits = expand_cols(norms, weights.class_count) * margined
    return _nll_sum(logits, onehot) / float(onehot.shape[0])


def cosface_loss(features: Tensor, weights: HeadWeights, cfg: MarginConfig, labels) -> Tensor:
    """Additive cosine margin: target logit s * (cos theta - m)."""
    if cfg.family != "cosface":
        raise ConfigError(f"cosface_loss needs a cosface config, got {cfg.family!r}")
    cosines = cosine_logits(features, weights)
    onehot = _one_hot(labels, weights.class_count)
    logits = (cosines - Tensor(onehot * cfg.m)) * cfg.s
    return _nll_sum(logits, onehot) / float(onehot.shape[0])


def _arcface_logits(cosines: Tensor, onehot: np.ndarray, cfg: MarginConfig) -> Tensor:
    if cfg.m == 0.0:
        return cosines * cfg.s
    cos_target = _target_column(cosines, onehot)
    theta = cos_target.clamp(-COS_CLAMP, COS_CLAMP).acos()
    shifted = (theta + cfg.m).cos()
    return _replace_target(cosines, onehot, shifted, cos_target) * cfg.s


def _arcface_nll_sum(features: Tensor, weights: HeadWeights, cfg: MarginConfig, onehot: np.ndarray) -> Tensor:
    cosines = cosine_logits(features, weights)
    return _nll_sum(_arcface_logits(cosines, onehot, cfg), onehot)


def arcface_loss(features: Tensor, weights: HeadWeights, cfg: MarginConfig, labels) -> Tensor:
    """Additive angular margin: target logit s * cos(theta + m)."""
    if cfg.family != "arcface":
        raise ConfigError(f"arcface_loss needs an arcface config, got {cfg.family!r}")
    onehot = _one_hot(labels, weights.class_count)
    return _arcface_nll_sum(features, weights, cfg, onehot) / float(onehot.shape[0])


def compensate(entry: QueueEntry, current_W_column: np.ndarray) -> np.ndarray:
    """Drift-corrected embedding: b + (|b| / |W_snap|) * (W_now - W_snap).

    Identity when the weight column has not moved; the correction scales
    with the embedding's own norm.
    """
    snap = np.asarray(entry.snapshot_weight, dtype=np.float64)
    snap_norm = float(np.linalg.norm(snap))
    if snap_norm == 0.0:
        raise DegenerateInputError("zero-norm snapshot weight column cannot anchor compensation")
    b = np.asarray(entry.embedding, dtype=np.float64)
    ratio = float(np.linalg.norm(b)) / snap_norm
    return b + ratio * (np.asarray(current_W_column, dtype=np.float64) - snap)


def _compensated_block(queue: EmbeddingQueue, weights: HeadWeights) -> tuple[Tensor, np.ndarray]:
    """All queue embeddings, drift-corrected on the tape: [Q, d] plus labels.

    Only the current-weight term rides the tape; embeddings and
    snapshots are constants, so queue gradient reaches W alone.
    """
    emb, labels, snaps = queue.stacked()
    if emb.shape[1] != weights.dim:
        raise StateError(f"queued embedding dim {emb.shape[1]} does not match weight dim {weights.dim}")
    snap_norms = np.linalg.norm(snaps, axis=1)
    if np.any(snap_norms == 0.0):
        raise DegenerateInputError("zero-norm snapshot weight column cannot anchor compensation")
    ratios = (np.linalg.norm(emb, axis=1) / snap_norms)[:, None]  # [Q, 1]
    onehot = _one_hot(labels, weights.class_count)
    current_cols = matmul(Tensor(onehot), transpose(weights.W))  # [Q, d] rows = W[:, y_j]
    constant_part = Tensor(emb - ratios * snaps)
    return constant_part + Tensor(np.repeat(ratios, emb.shape[1], axis=1)) * current_cols, labels


def broadface_step(batch_features: Tensor, weights: HeadWeights, cfg: MarginConfig,
                   labels, queue: EmbeddingQueue) -> tuple[Tensor, EmbeddingQueue]:
    """One mixed-batch loss evaluation plus queue bookkeeping.

    Loss averages the per-sample margin loss over the live batch and the
    drift-corrected queue entries together. Afterwards the batch's
    embeddings (detached) and the current target weight columns are
    pushed, evicting oldest-first past capacity.
    """
    if cfg.family != "broadface":
        raise ConfigError(f"broadface_step needs a broadface config, got {cfg.family!r}")
    if not isinstance(batch_features, Tensor):
        batch_features = Tensor(batch_features)
    inner = MarginConfig(family="arcface", m=cfg.m, s=cfg.s)
    onehot = _one_hot(labels, weights.class_count)
    total = _arcface_nll_sum(batch_features, weights, inner, onehot)
    count = onehot.shape[0]
    if len(queue) > 0:
        comp, queued_labels = _compensated_block(queue, weights)
        total = total + _arcface_nll_sum(comp, weights, inner, _one_hot(queued_labels, weights.class_count))
        count += len(queue)
    loss = total / float(count)
    labels_arr = np.asarray(labels, dtype=np.int64)
    for i in range(batch_features.shape[0]):
        queue.push(batch_features.data[i], int(labels_arr[i]), weights.W.data[:, labels_arr[i]])
    return loss, queue


def head_forward(features: Tensor, weights: HeadWeights, cfg: MarginConfig,
                 labels, queue: EmbeddingQueue | None = None) -> Tensor:
    """Dispatch to the configured family's loss.

    cce sees raw linear logits (features @ W); the margin families see
    cosine logits. broadface without a queue degrades to arcface, the
    empty-queue case.
    """
    if cfg.family == "cce":
        if not isinstance(features, Tensor):
            features = Tensor(features)
        return cce_loss(matmul(features, weights.W), labels)
    if cfg.family == "sphereface":
        return sphereface_loss(features, weights, cfg, labels)
    if cfg.family == "cosface":
        return cosface_loss(features, weights, cfg, labels)
    if cfg.family == "arcface":
        return arcface_loss(features, weights, cfg, labels)
    if cfg.family == "broadface":
        if queue is None:
            queue = EmbeddingQueue(cfg.queue_capacity)
        loss, _ = broadface_step(features, weights, cfg, labels, queue)
        return loss
    raise ConfigError(f"unknown family {cfg.family!r}")
