"""Representation-similarity analysis via linear centered kernel alignment.

Linear CKA between two feature sets with paired rows:

    CKA(X, Y) = ||Xc^T Yc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F)

with Xc, Yc column-centered. The value is invariant to orthogonal transforms
and isotropic scaling of either argument. Pairwise reports over several
varieties are computed on sentence-level features: the raw final [CLS] vectors
("pretrained" stage), or the model's joint feature when a model is given.
Rows are paired by one shared, seeded index sample across all varieties.
"""

from dataclasses import dataclass

import numpy as np

from . import model as model_mod


def linear_cka(x, y) -> float:
    """Linear CKA of two n x p / n x q feature matrices with aligned rows."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("linear_cka expects 2-D feature matrices")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("linear_cka needs at least two rows")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cross = xc.T @ yc
    numerator = float(np.sum(cross * cross))
    denom_x = float(np.linalg.norm(xc.T @ xc))
    denom_y = float(np.linalg.norm(yc.T @ yc))
    if denom_x == 0.0 or denom_y == 0.0:
        raise ValueError("zero-variance features: CKA is undefined")
    return numerator / (denom_x * denom_y)


@dataclass
class CkaReport:
    """Symmetric pairwise CKA matrix over varieties at one feature stage."""

    variety_ids: list
    matrix: np.ndarray
    feature_stage: str  # "pretrained" | "post_training"
    sample_size: int
    features: dict | None = None  # variety_id -> the feature matrix used


def cka_report(model, corpora, sample_size=None, seed=0, keep_features=False) -> CkaReport:
    """Pairwise CKA over the [CLS]-level features of each corpus.

    ``model=None`` uses raw final [CLS] vectors; otherwise each corpus passes
    through the model's encoders and the joint feature is compared. All
    corpora are subsampled to a common n with one shared seeded index set so
    rows stay paired.
    """
    corpora = list(corpora)
    if not corpora:
        raise ValueError("no corpora to analyze")
    stacks = {}
    for corpus in corpora:
        rows = []
        for i, s in enumerate(corpus.sentences):
            if s.embedding is None:
                raise ValueError(f"sentence {i} of {corpus.variety_id!r} has no embedding")
            rows.append(s.embedding.cls_final)
        if len(rows) < 2:
            raise ValueError(f"corpus {corpus.variety_id!r} needs at least two embedded sentences")
        stacks[corpus.variety_id] = np.stack(rows)
    if len(stacks) != len(corpora):
        raise ValueError("duplicate variety ids in the report request")

    n_min = min(s.shape[0] for s in stacks.values())
    n = n_min if sample_size is None else min(n_min, int(sample_size))
    if n < 2:
        raise ValueError("sample size must be at least two")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n_min, size=n, replace=False)) if n < n_min else np.arange(n_min)

    features = {}
    for vid, stack in stacks.items():
        x = stack[idx]
        if model is not None:
            x = model_mod.encode(model, x)[0]
        features[vid] = x

    ids = [c.variety_id for c in corpora]
    matrix = np.empty((len(ids), len(ids)))
    for i, a in enumerate(ids):
        for j, b in enumerate(ids[: i + 1]):
            value = linear_cka(features[a], features[b])
            matrix[i, j] = matrix[j, i] = value
    return CkaReport(
        variety_ids=ids,
        matrix=matrix,
        feature_stage="pretrained" if model is None else "post_training",
        sample_size=n,
        features=features if keep_features else None,
    )


def format_report(report: CkaReport) -> str:
    """Render the matrix as TSV with a header row of variety ids."""
    lines = [
        f"# feature_stage\t{report.feature_stage}",
        f"# sample_size\t{report.sample_size}",
        "variety_id\t" + "\t".join(report.variety_ids),
    ]
    for vid, row in zip(report.variety_ids, report.matrix):
        lines.append(vid + "\t" + "\t".join(f"{v:.12g}" for v in row))
    return "\n".join(lines) + "\n"
