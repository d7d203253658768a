"""Task heads and evaluation metrics: token tagging (F1) and dependency parsing (UAS/LAS).

The tagging head is a single affine classifier over per-word features. The
parsing head scores arcs with a bilinear-style dot product between projected
dependent and head features (column 0 is the root), and classifies the
relation from the concatenated (dependent, head) features. Head prediction is
greedy per word with self-arcs masked; no tree constraint is applied.
"""

import numpy as np

from .nn import (
    AffineLayer,
    Param,
    affine_backward,
    affine_forward,
    softmax_xent,
)


class PosHead:
    """Affine classifier d -> T over per-word joint features."""

    def __init__(self, classifier: AffineLayer):
        if classifier.out_dim < 1:
            raise ValueError("tagset must have at least one tag")
        self.classifier = classifier

    @classmethod
    def create(cls, rng, d: int, n_tags: int):
        return cls(AffineLayer.create(rng, d, n_tags))

    def params(self):
        return self.classifier.params()


def pos_forward(head: PosHead, h_words) -> np.ndarray:
    return affine_forward(head.classifier, h_words)


def pos_loss(head: PosHead, h_words, labels, weight: float = 1.0):
    """Mean per-word cross entropy; returns (loss, gradient w.r.t. h_words)."""
    logits = pos_forward(head, h_words)
    loss, grad_logits = softmax_xent(logits, labels)
    grad_h = affine_backward(head.classifier, h_words, weight * grad_logits)
    return weight * loss, grad_h


class DepHead:
    """Arc scorer + relation classifier for one-sentence dependency parsing."""

    def __init__(self, head_proj: AffineLayer, dep_proj: AffineLayer, root_vector: Param, rel_classifier: AffineLayer):
        if head_proj.out_dim != dep_proj.out_dim or root_vector.value.shape != (head_proj.out_dim,):
            raise ValueError("head/dep projections and root vector disagree on arc width")
        self.head_proj = head_proj
        self.dep_proj = dep_proj
        self.root_vector = root_vector
        self.rel_classifier = rel_classifier

    @classmethod
    def create(cls, rng, d: int, arc_dim: int, n_rels: int):
        if arc_dim <= 0:
            raise ValueError("arc_dim must be positive")
        limit = np.sqrt(6.0 / (arc_dim + 1))
        root = Param(rng.uniform(-limit, limit, size=arc_dim))
        return cls(
            AffineLayer.create(rng, d, arc_dim),
            AffineLayer.create(rng, d, arc_dim),
            root,
            AffineLayer.create(rng, 2 * d, n_rels),
        )

    def params(self):
        return (
            self.head_proj.params()
            + self.dep_proj.params()
            + [self.root_vector]
            + self.rel_classifier.params()
        )


def _head_feature_rows(h, head_indices):
    """Features of each word's head: row head-1, or zeros for the root."""
    n, d = h.shape
    rows = np.zeros((n, d))
    for i, g in enumerate(head_indices):
        if g > 0:
            rows[i] = h[g - 1]
    return rows


def dep_forward(head: DepHead, h_words, head_indices):
    """Arc scores n x (n+1) (column 0 = root) and relation logits given heads."""
    h = np.asarray(h_words, dtype=np.float64)
    n = h.shape[0]
    if n < 1:
        raise ValueError("dependency scoring needs at least one word")
    dep_f = affine_forward(head.dep_proj, h)
    head_f = affine_forward(head.head_proj, h)
    arc = np.empty((n, n + 1))
    arc[:, 0] = dep_f @ head.root_vector.value
    arc[:, 1:] = dep_f @ head_f.T
    rel_inputs = np.concatenate([h, _head_feature_rows(h, head_indices)], axis=1)
    rel_logits = affine_forward(head.rel_classifier, rel_inputs)
    return arc, rel_logits


def dep_loss(head: DepHead, h_words, gold_heads, gold_rels, weight: float = 1.0):
    """Per-word head cross entropy + relation cross entropy (teacher-forced on gold heads).

    Returns (loss, gradient w.r.t. h_words); parameter gradients accumulate.
    """
    h = np.asarray(h_words, dtype=np.float64)
    n = h.shape[0]
    gold_heads = np.asarray(gold_heads, dtype=np.int64)
    if gold_heads.shape != (n,) or gold_heads.min() < 0 or gold_heads.max() > n:
        raise ValueError("gold head outside [0, word_count]")

    dep_f = affine_forward(head.dep_proj, h)
    head_f = affine_forward(head.head_proj, h)
    arc = np.empty((n, n + 1))
    arc[:, 0] = dep_f @ head.root_vector.value
    arc[:, 1:] = dep_f @ head_f.T
    arc_loss, arc_grad = softmax_xent(arc, gold_heads)
    arc_grad = weight * arc_grad

    head_rows = _head_feature_rows(h, gold_heads)
    rel_inputs = np.concatenate([h, head_rows], axis=1)
    rel_logits = affine_forward(head.rel_classifier, rel_inputs)
    rel_loss, rel_grad = softmax_xent(rel_logits, gold_rels)
    rel_grad = weight * rel_grad

    # arc backward
    grad_dep_f = np.outer(arc_grad[:, 0], head.root_vector.value) + arc_grad[:, 1:] @ head_f
    grad_head_f = arc_grad[:, 1:].T @ dep_f
    head.root_vector.grad += dep_f.T @ arc_grad[:, 0]
    grad_h = affine_backward(head.dep_proj, h, grad_dep_f)
    grad_h += affine_backward(head.head_proj, h, grad_head_f)

    # relation backward: dependent half flows to each word, head half to its gold head
    grad_rel_inputs = affine_backward(head.rel_classifier, rel_inputs, rel_grad)
    d = h.shape[1]
    grad_h += grad_rel_inputs[:, :d]
    for i, g in enumerate(gold_heads):
        if g > 0:
            grad_h[g - 1] += grad_rel_inputs[i, d:]

    return weight * (arc_loss + rel_loss), grad_h


def greedy_heads(arc_scores) -> np.ndarray:
    """Per-word argmax head with self-arcs masked out."""
    arc = np.asarray(arc_scores, dtype=np.float64).copy()
    n = arc.shape[0]
    if arc.shape != (n, n + 1):
        raise ValueError(f"arc score matrix must be n x (n+1), got {arc.shape}")
    for i in range(n):
        arc[i, i + 1] = -np.inf
    return arc.argmax(axis=1)


def dep_predict(head: DepHead, h_words):
    """Greedy heads, then the best relation given each predicted head."""
    h = np.asarray(h_words, dtype=np.float64)
    arc, _ = dep_forward(head, h, np.zeros(h.shape[0], dtype=np.int64))
    pred_heads = greedy_heads(arc)
    rel_inputs = np.concatenate([h, _head_feature_rows(h, pred_heads)], axis=1)
    rel_logits = affine_forward(head.rel_classifier, rel_inputs)
    return pred_heads, rel_logits.argmax(axis=1)


# ---------------------------------------------------------------------------
# Metrics (micro-aggregated over all words of the evaluated set)


def _check_lengths(name, *seqs):
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"{name}: input lengths differ: {sorted(lengths)}")
    (n,) = lengths
    if n == 0:
        raise ValueError(f"{name}: undefined for empty input")
    return n


def uas(pred_heads, gold_heads) -> float:
    """Fraction of words whose predicted head is correct."""
    n = _check_lengths("uas", pred_heads, gold_heads)
    correct = sum(1 for p, g in zip(pred_heads, gold_heads) if p == g)
    return correct / n


def las(pred_heads, pred_rels, gold_heads, gold_rels) -> float:
    """Fraction of words with correct head and correct relation label."""
    n = _check_lengths("las", pred_heads, pred_rels, gold_heads, gold_rels)
    correct = sum(
        1
        for ph, pr, gh, gr in zip(pred_heads, pred_rels, gold_heads, gold_rels)
        if ph == gh and pr == gr
    )
    return correct / n


def token_f1(pred_tags, gold_tags) -> float:
    """Micro-averaged token F1; with one prediction per token this equals accuracy."""
    n = _check_lengths("token_f1", pred_tags, gold_tags)
    tp = sum(1 for p, g in zip(pred_tags, gold_tags) if p == g)
    precision = tp / len(pred_tags)
    recall = tp / len(gold_tags)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
