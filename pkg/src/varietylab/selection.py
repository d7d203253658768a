"""Source-variety selection over two independent criteria.

Candidates are ranked twice: by Euclidean distance between sentence-embedding
centroids (ascending; a proxy for phylogenetic closeness) and by token-length
weighted Jaccard overlap of subword vocabularies (descending; a proxy for
lexical closeness). The two rankings are never combined into a joint score;
the selected pair is the head of each ranking, which may coincide.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import VarietyCorpus, token_type_set


@dataclass
class SelectionReport:
    """Both rankings plus the selected pair for one target variety.

    sim_ranking is ascending by centroid distance, overlap_ranking descending
    by overlap score; ties break lexicographically by variety id.
    """

    target_id: str
    sim_ranking: list
    overlap_ranking: list
    selected_pair: tuple


def centroid(corpus: VarietyCorpus) -> np.ndarray:
    """Arithmetic mean of the per-sentence lower-layer sentence vectors."""
    if not corpus.sentences:
        raise ValueError(f"corpus {corpus.variety_id!r} is empty")
    rows = []
    for i, s in enumerate(corpus.sentences):
        if s.embedding is None:
            raise ValueError(f"sentence {i} of {corpus.variety_id!r} has no embedding")
        rows.append(s.embedding.cls_layer2)
    return np.mean(np.stack(rows), axis=0)


def token_weight(tok: str) -> int:
    """Weight of one subword type: max(1, len - 1) in Unicode scalar values."""
    if not tok:
        raise ValueError("empty token has no weight")
    return max(1, len(tok) - 1)


def tj_similarity(set_a, set_b) -> float:
    """Length-weighted Jaccard similarity between two token type sets."""
    set_a, set_b = set(set_a), set(set_b)
    if not set_a and not set_b:
        raise ValueError("similarity of two empty token sets is undefined")
    inter = sum(token_weight(t) for t in set_a & set_b)
    union = sum(token_weight(t) for t in set_a | set_b)
    return inter / union


def select_sim(target: VarietyCorpus, candidates) -> list:
    """Rank candidates by ascending centroid distance to the target."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate varieties")
    mu_target = centroid(target)
    ranking = []
    for cand in candidates:
        mu = centroid(cand)
        if mu.shape != mu_target.shape:
            raise ValueError(
                f"dimension mismatch: {cand.variety_id!r} has d={mu.shape[0]}, "
                f"target has d={mu_target.shape[0]}"
            )
        ranking.append((cand.variety_id, float(np.linalg.norm(mu - mu_target))))
    ranking.sort(key=lambda r: (r[1], r[0]))
    return ranking


def select_overlap(target: VarietyCorpus, candidates) -> list:
    """Rank candidates by descending token overlap with the target."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate varieties")
    target_types = token_type_set(target)
    ranking = [
        (cand.variety_id, tj_similarity(token_type_set(cand), target_types))
        for cand in candidates
    ]
    ranking.sort(key=lambda r: (-r[1], r[0]))
    return ranking


def select_pair(target: VarietyCorpus, candidates, force_distinct: bool = False) -> SelectionReport:
    """Combine the heads of both rankings into the selected source pair.

    The rankings are independent, so the same candidate may win both criteria;
    with ``force_distinct`` the overlap pick falls back to its runner-up in
    that case.
    """
    candidates = list(candidates)
    if force_distinct and len(candidates) < 2:
        raise ValueError("force_distinct requires at least two candidates")
    sim_ranking = select_sim(target, candidates)
    overlap_ranking = select_overlap(target, candidates)
    v_sim = sim_ranking[0][0]
    v_overlap = overlap_ranking[0][0]
    if force_distinct and v_sim == v_overlap:
        v_overlap = overlap_ranking[1][0]
    return SelectionReport(
        target_id=target.variety_id,
        sim_ranking=sim_ranking,
        overlap_ranking=overlap_ranking,
        selected_pair=(v_sim, v_overlap),
    )


def format_report(report: SelectionReport, sentence_note: str = "all provided sentences") -> str:
    """Render a report as a UTF-8 TSV table with a trailing pair line."""
    distances = dict(report.sim_ranking)
    overlaps = dict(report.overlap_ranking)
    lines = [
        f"# target\t{report.target_id}",
        f"# scores computed over {sentence_note} of each corpus",
        "variety_id\tcentroid_distance\ttj_score",
    ]
    for vid, dist in report.sim_ranking:
        lines.append(f"{vid}\t{dist:.12g}\t{overlaps[vid]:.12g}")
    lines.append(f"pair\t{report.selected_pair[0]}\t{report.selected_pair[1]}")
    return "\n".join(lines) + "\n"
