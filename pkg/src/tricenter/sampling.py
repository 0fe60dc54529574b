"""Batch construction and sampling-unit formation.

Stage-1 batches are class-balanced: the same number of samples from every
class, drawn with replacement when a class is smaller than the quota.
Stage-2 batches are plain uniform shuffles chunked to a flat size.

Triplets, pairs and quadruplets reference batch slots (positions inside a
BatchPlan), not global sample ids, because balanced batches may repeat a
sample; ``BatchPlan.indices`` maps slots back to dataset rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

log = logging.getLogger(__name__)


@dataclass
class DatasetIndex:
    """Per-class lists of sample indices."""

    by_class: list

    def __post_init__(self):
        self.by_class = [np.asarray(ix, dtype=np.intp) for ix in self.by_class]
        seen = np.concatenate(self.by_class) if self.by_class else np.array([], dtype=np.intp)
        if len(np.unique(seen)) != len(seen):
            raise ContractError("a sample index appears in more than one class list")

    @classmethod
    def from_labels(cls, labels, n_classes: int | None = None) -> "DatasetIndex":
        labels = np.asarray(labels, dtype=np.intp)
        if labels.size and labels.min() < 0:
            raise ContractError("labels must be nonnegative")
        k = int(n_classes) if n_classes is not None else (int(labels.max()) + 1 if labels.size else 0)
        return cls([np.flatnonzero(labels == c) for c in range(k)])

    @property
    def n_classes(self) -> int:
        return len(self.by_class)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.by_class], dtype=np.intp)

    @property
    def n_samples(self) -> int:
        return int(self.sizes.sum())

    def require_nonempty_classes(self):
        empty = [c for c, ix in enumerate(self.by_class) if len(ix) == 0]
        if empty:
            raise ContractError(f"classes {empty} have no samples")


@dataclass
class BatchPlan:
    """Ordered sample indices for one optimization step.

    ``indices`` are dataset rows, ``labels`` the class of each slot.  Stage
    is "balanced" (m_per_class set) or "flat" (batch_size set).
    """

    indices: np.ndarray
    labels: np.ndarray
    stage: str
    m_per_class: int | None = None
    batch_size: int | None = None

    def __len__(self):
        return len(self.indices)


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


class Pair(NamedTuple):
    a: int
    b: int
    same_class: bool


class Quadruplet(NamedTuple):
    anchor: int
    positive: int
    negative1: int
    negative2: int


def build_balanced_batch(index: DatasetIndex, m_per_class: int,
                         rng: np.random.Generator, labels=None) -> BatchPlan:
    """Draw exactly ``m_per_class`` samples from every class and shuffle.

    Classes smaller than the quota are drawn with replacement so every batch
    stays exactly balanced regardless of imbalance in the dataset.
    """
    if m_per_class < 1:
        raise ContractError(f"m_per_class must be >= 1, got {m_per_class}")
    index.require_nonempty_classes()
    chosen = []
    for c, members in enumerate(index.by_class):
        replace = len(members) < m_per_class
        chosen.append(rng.choice(members, size=m_per_class, replace=replace))
    flat = np.concatenate(chosen)
    slot_labels = np.repeat(np.arange(index.n_classes, dtype=np.intp), m_per_class)
    order = rng.permutation(len(flat))
    return BatchPlan(indices=flat[order], labels=slot_labels[order],
                     stage="balanced", m_per_class=m_per_class)


def flat_batch_plans(labels, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffle the whole dataset and chunk it into flat batches of ``batch_size``."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    labels = np.asarray(labels, dtype=np.intp)
    order = rng.permutation(len(labels))
    plans = []
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        plans.append(BatchPlan(indices=chunk, labels=labels[chunk],
                               stage="flat", batch_size=batch_size))
    return plans


def _embedding_values(embeddings) -> np.ndarray:
    if isinstance(embeddings, Tensor):
        return embeddings.data
    return np.asarray(embeddings, dtype=np.float64)


def _pairwise_distances(values: np.ndarray, p_norm: int) -> np.ndarray:
    diff = np.abs(values[:, None, :] - values[None, :, :]) ** p_norm
    s = diff.sum(axis=2)
    return s if p_norm == 1 else s ** (1.0 / p_norm)


def form_triplets(batch: BatchPlan, embeddings, strategy: str,
                  hyper, rng: np.random.Generator) -> list:
    """Form one triplet per anchor slot.

    The positive is uniform over other slots of the anchor's class.  Under
    ``random`` the negative is uniform over all other-class slots; under
    ``random_hard`` it is uniform over semi-hard negatives (anchor-negative
    distance inside (d_ap, d_ap + alpha)), falling back to the hardest
    negative when the semi-hard band is empty.  Anchors whose class has a
    single slot in the batch are skipped.
    """
    if strategy not in ("random", "random_hard"):
        raise ContractError(f"unknown mining strategy {strategy!r}")
    labels = batch.labels
    if len(np.unique(labels)) < 2:
        raise ContractError("triplet formation needs at least 2 classes in the batch")
    values = _embedding_values(embeddings)
    dist = _pairwise_distances(values, hyper.p_norm) if strategy == "random_hard" else None
    triplets = []
    for anchor in range(len(labels)):
        same = np.flatnonzero(labels == labels[anchor])
        same = same[same != anchor]
        if len(same) == 0:
            log.debug("anchor slot %d has no in-batch positive; skipped", anchor)
            continue
        positive = int(rng.choice(same))
        negatives = np.flatnonzero(labels != labels[anchor])
        if strategy == "random":
            negative = int(rng.choice(negatives))
        else:
            d_ap = dist[anchor, positive]
            d_an = dist[anchor, negatives]
            band = negatives[(d_an > d_ap) & (d_an < d_ap + hyper.alpha)]
            if len(band) > 0:
                negative = int(rng.choice(band))
            else:
                negative = int(negatives[np.argmin(d_an)])
        triplets.append(Triplet(anchor, positive, negative))
    return triplets


def form_center_triplets(batch: BatchPlan, embeddings, centers, hyper) -> list:
    """Pair every anchor with every negative center that incurs positive loss.

    Returns (anchor_slot, negative_class) pairs: all classes k other than the
    anchor's whose center violates ||f_a - c_own|| + alpha > ||f_a - c_k||.
    """
    values = _embedding_values(embeddings)
    matrix = centers.matrix if hasattr(centers, "matrix") else np.asarray(centers, dtype=np.float64)
    if matrix.ndim != 2:
        raise ContractError("center table must be a K x D matrix")
    p = hyper.p_norm
    d = np.abs(values[:, None, :] - matrix[None, :, :]) ** p
    d = d.sum(axis=2)
    if p != 1:
        d = d ** (1.0 / p)
    labels = batch.labels
    own = d[np.arange(len(labels)), labels]
    margin = own[:, None] + hyper.alpha - d
    margin[np.arange(len(labels)), labels] = 0.0  # own class never qualifies
    slots, classes = np.nonzero(margin > 0.0)
    return list(zip(slots.tolist(), classes.tolist()))


def form_pairs(batch: BatchPlan, rng: np.random.Generator) -> list:
    """One same-class pair (when available) and one cross-class pair per slot."""
    labels = batch.labels
    if len(np.unique(labels)) < 2:
        raise ContractError("pair formation needs at least 2 classes in the batch")
    pairs = []
    for a in range(len(labels)):
        same = np.flatnonzero(labels == labels[a])
        same = same[same != a]
        if len(same) > 0:
            pairs.append(Pair(a, int(rng.choice(same)), True))
        other = np.flatnonzero(labels != labels[a])
        pairs.append(Pair(a, int(rng.choice(other)), False))
    return pairs


def form_quadruplets(batch: BatchPlan, rng: np.random.Generator) -> list:
    """Anchor + positive + negatives from two distinct other classes, all uniform."""
    labels = batch.labels
    present = np.unique(labels)
    if len(present) < 3:
        raise ContractError(
            f"quadruplet formation needs >= 3 classes in the batch, got {len(present)}")
    quads = []
    for anchor in range(len(labels)):
        same = np.flatnonzero(labels == labels[anchor])
        same = same[same != anchor]
        if len(same) == 0:
            log.debug("anchor slot %d has no in-batch positive; skipped", anchor)
            continue
        positive = int(rng.choice(same))
        other_classes = present[present != labels[anchor]]
        c1 = rng.choice(other_classes)
        c2 = rng.choice(other_classes[other_classes != c1])
        n1 = int(rng.choice(np.flatnonzero(labels == c1)))
        n2 = int(rng.choice(np.flatnonzero(labels == c2)))
        quads.append(Quadruplet(anchor, positive, n1, n2))
    return quads


def form_center_pairs(batch: BatchPlan, embeddings, centers, hyper) -> list:
    """Center-involved pairs: the own center plus every margin-violating negative center.

    Returns (anchor_slot, partner_class, same_class) units mirroring the
    all-qualifying-negatives rule of the center triplet stage.
    """
    values = _embedding_values(embeddings)
    matrix = centers.matrix if hasattr(centers, "matrix") else np.asarray(centers, dtype=np.float64)
    p = hyper.p_norm
    d = np.abs(values[:, None, :] - matrix[None, :, :]) ** p
    d = d.sum(axis=2)
    if p != 1:
        d = d ** (1.0 / p)
    labels = batch.labels
    units = []
    for a in range(len(labels)):
        units.append((a, int(labels[a]), True))
        for k in range(matrix.shape[0]):
            if k != labels[a] and hyper.alpha - d[a, k] > 0.0:
                units.append((a, k, False))
    return units


def form_center_quadruplets(batch: BatchPlan, embeddings, centers, hyper,
                            rng: np.random.Generator) -> list:
    """Center-involved quadruplets over all qualifying first negatives.

    For each anchor, every class k whose center makes the primary hinge
    positive becomes negative1; negative2 is a uniformly drawn third class.
    Returns (anchor_slot, n1_class, n2_class) units.
    """
    matrix = centers.matrix if hasattr(centers, "matrix") else np.asarray(centers, dtype=np.float64)
    k_total = matrix.shape[0]
    if k_total < 3:
        raise ContractError("center quadruplets need at least 3 classes")
    qualifying = form_center_triplets(batch, embeddings, matrix, hyper)
    labels = batch.labels
    units = []
    for slot, n1 in qualifying:
        third = [c for c in range(k_total) if c != labels[slot] and c != n1]
        units.append((slot, n1, int(rng.choice(third))))
    return units


def oversample_indices(index: DatasetIndex, rng: np.random.Generator) -> np.ndarray:
    """Epoch-long index stream where every class is resampled up to the largest size."""
    index.require_nonempty_classes()
    target = int(index.sizes.max())
    parts = [rng.choice(members, size=target, replace=True) for members in index.by_class]
    stream = np.concatenate(parts)
    return stream[rng.permutation(len(stream))]
