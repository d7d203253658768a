"""Deterministic synthetic-variety generator.

Every variety draws sentences over a vocabulary of word types, with three
controllable axes:

  * lexical overlap: pairs of varieties share an exactly-sized pool of word
    types (shared types keep one global surface string), so measured token
    overlap tracks the configured rate;
  * embedding geometry: each variety's sentence-level vectors sit around a
    centroid, and centroids are placed at pairwise distances proportional to
    ``centroid_spread`` times a supplied distance matrix;
  * learnable structure: word order is positional (the type drawn at position
    p belongs to position class p), the gold head of every word is the
    previous word (the first word attaches to the root), tags are a function
    of the word type's class, and relations a function of the tag pair.

Word-type prototype vectors are a sum of three signals: a class signature
shared by all varieties, a class signature shared only within a family of
overlapping varieties, and a per-type component. Token vectors are prototypes
plus Gaussian noise. Final [CLS] vectors carry the variety centroid, a scaled
mean of the sentence's prototypes, and noise; lower-layer [CLS] vectors carry
only centroid plus noise. Sentences are generated in parallel across
varieties (same length and slot draws per sentence index), which keeps rows
paired for representation-similarity analysis.

Generation is a pure function of the config: identical seeds give bitwise
identical corpora.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from .corpus import EmbeddingRecord, Sentence, VarietyCorpus

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_N_SYLLABLES = len(_CONSONANTS) * len(_VOWELS)
_MAX_TYPES = _N_SYLLABLES ** 2


def type_string(gid: int) -> str:
    """Unique pronounceable string per global type id, with varied lengths."""
    if not 0 <= gid < _MAX_TYPES:
        raise ValueError(f"type id {gid} outside [0, {_MAX_TYPES})")

    def syllable(k):
        return _CONSONANTS[k // len(_VOWELS)] + _VOWELS[k % len(_VOWELS)]

    base = syllable(gid % _N_SYLLABLES) + syllable(gid // _N_SYLLABLES)
    extra = "".join(syllable((gid * 31 + 7 * j + 3) % _N_SYLLABLES) for j in range(gid % 3))
    return base + extra


@dataclass
class SynthConfig:
    """Knobs for one synthetic dataset; overlap/distances are per variety pair."""

    n_varieties: int = 3
    variety_ids: tuple = ()  # empty -> v00, v01, ...
    vocab_size: int = 60  # word types per variety
    overlap: object = 0.0  # scalar for all pairs, or full symmetric matrix
    centroid_spread: float = 3.0
    distance_matrix: object = None  # None -> unit distance between all pairs
    token_noise: float = 0.5
    token_variety_weight: float = 0.6  # how much of the variety centroid leaks into tokens
    cls_noise: float = 0.5
    cls_content_weight: float = 1.0  # weight of the mean token vector inside cls_final
    cls_offset_weight: float = 0.5  # extra centroid component in cls_final
    class_signal: float = 1.0  # class signature shared by every variety
    family_signal: float = 2.0  # class signature shared within an overlap family
    concept_signal: float = 0.6  # slot-aligned component shared across all varieties
    type_signal: float = 1.0  # per-type rendering component
    sentences_per_variety: int = 480  # train split
    dev_sentences: int = 120
    test_sentences: int = 120
    sentence_length: tuple = (3, 6)
    tagset_size: int = 6
    dim: int = 32
    seed: int = 0

    def ids(self):
        if self.variety_ids:
            return list(self.variety_ids)
        return [f"v{i:02d}" for i in range(self.n_varieties)]

    def overlap_matrix(self) -> np.ndarray:
        n = self.n_varieties
        if np.isscalar(self.overlap):
            o = np.full((n, n), float(self.overlap))
            np.fill_diagonal(o, 1.0)
        else:
            o = np.asarray(self.overlap, dtype=np.float64)
        if o.shape != (n, n) or not np.allclose(o, o.T) or not np.allclose(np.diag(o), 1.0):
            raise ValueError("overlap must be a symmetric matrix with unit diagonal")
        if o.min() < 0 or o.max() > 1:
            raise ValueError("overlap rates must lie in [0, 1]")
        return o

    def distances(self) -> np.ndarray:
        n = self.n_varieties
        if self.distance_matrix is None:
            d = np.ones((n, n)) - np.eye(n)
        else:
            d = np.asarray(self.distance_matrix, dtype=np.float64)
        if d.shape != (n, n) or not np.allclose(d, d.T) or np.any(np.diag(d) != 0) or d.min() < 0:
            raise ValueError("distance matrix must be symmetric, non-negative, zero-diagonal")
        return d

    def validate(self):
        if self.n_varieties < 1:
            raise ValueError("need at least one variety")
        if len(self.ids()) != len(set(self.ids())):
            raise ValueError("variety ids must be unique")
        lmin, lmax = self.sentence_length
        if not 1 <= lmin <= lmax:
            raise ValueError(f"bad sentence length range {self.sentence_length}")
        if self.vocab_size < lmax:
            raise ValueError("vocab_size must cover one type per position class")
        if self.vocab_size * self.n_varieties > _MAX_TYPES:
            raise ValueError("vocabulary too large for the type-string space")
        if self.tagset_size < 1:
            raise ValueError("tagset_size must be positive")
        if self.dim <= 0 or self.dim % 2 != 0:
            raise ValueError("dim must be positive and even")
        if min(self.sentences_per_variety, self.dev_sentences, self.test_sentences) < 1:
            raise ValueError("split sizes must be positive")
        for name in ("centroid_spread", "token_noise", "token_variety_weight",
                     "cls_noise", "cls_content_weight", "cls_offset_weight",
                     "class_signal", "family_signal", "concept_signal", "type_signal"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        self.overlap_matrix()
        self.distances()


def _families(n: int, overlap: np.ndarray):
    """Connected components of the positive-overlap graph (union-find)."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if overlap[i, j] > 0:
                parent[find(i)] = find(j)
    roots = {}
    out = []
    for i in range(n):
        r = find(i)
        if r not in roots:
            roots[r] = len(roots)
        out.append(roots[r])
    return out


def _centroids(config: SynthConfig, rng) -> np.ndarray:
    """Place centroids so pairwise distances equal spread * distance_matrix."""
    n, d = config.n_varieties, config.dim
    if n == 1:
        return np.zeros((1, d))
    dist = config.centroid_spread * config.distances()
    j = np.eye(n) - np.ones((n, n)) / n
    gram = -0.5 * j @ (dist ** 2) @ j
    w, v = np.linalg.eigh(gram)
    w = np.clip(w, 0.0, None)
    coords = v * np.sqrt(w)  # n x n, meaningful columns have w > 0
    m = min(n, d)
    coords = coords[:, -m:]
    q, _ = np.linalg.qr(rng.normal(size=(d, m)))
    return coords @ q.T


def _sentence_structure(rng, count, lmin, lmax, n_families):
    """Per-sentence draws. Lengths are shared by every variety, slot numbers
    by the varieties of one family; across families the slots are independent,
    so only the structure every variety expresses the same way stays paired."""
    lengths = rng.integers(lmin, lmax + 1, size=count)
    slots = [
        [rng.integers(0, 1 << 30, size=int(n)) for n in lengths]
        for _ in range(n_families)
    ]
    return lengths, slots


@dataclass
class _Type:
    gid: int
    cls: int
    family: int
    slot: int  # position within its variety's class lexicon; aligns concepts
    string: str


def generate(config: SynthConfig):
    """Build all corpora (every variety x split) plus a manifest of exact counts."""
    config.validate()
    ids = config.ids()
    n = config.n_varieties
    overlap = config.overlap_matrix()
    lmin, lmax = config.sentence_length
    n_classes = lmax
    families = _families(n, overlap)

    # shared pools per overlapping pair, then own pools filling each vocabulary
    pools = []  # (members, size)
    shared_counts = {}
    used = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if overlap[i, j] > 0:
                size = int(round(overlap[i, j] * config.vocab_size))
                if size > 0:
                    pools.append(((i, j), size))
                    shared_counts[f"{ids[i]}|{ids[j]}"] = size
                    used[i] += size
                    used[j] += size
    for i in range(n):
        if used[i] > config.vocab_size:
            raise ValueError(
                f"variety {ids[i]!r}: shared pools ({used[i]} types) exceed vocab_size"
            )
        own = config.vocab_size - used[i]
        if own > 0:
            pools.append(((i,), own))

    gid = 0
    lexicons = [[[] for _ in range(n_classes)] for _ in range(n)]
    all_types = []
    for members, size in pools:
        fam = families[members[0]]
        # concept slots continue from the first member's current lexicon, so
        # the j-th class-k type of every variety shares the j-th concept
        offsets = [len(lexicons[members[0]][c]) for c in range(n_classes)]
        counts = [0] * n_classes
        for k in range(size):
            cls = k % n_classes
            t = _Type(gid=gid, cls=cls, family=fam,
                      slot=offsets[cls] + counts[cls], string=type_string(gid))
            counts[cls] += 1
            all_types.append(t)
            for v in members:
                lexicons[v][t.cls].append(t)
            gid += 1
    for v in range(n):
        for cls in range(n_classes):
            if not lexicons[v][cls]:
                raise ValueError(
                    f"variety {ids[v]!r} has no word types for position class {cls}; "
                    "increase vocab_size or reduce the length range"
                )

    # deterministic stream layout: vectors, then per split structure + noise
    ss = np.random.SeedSequence(config.seed)
    children = ss.spawn(1 + 3 * (1 + n))
    vec_rng = np.random.default_rng(children[0])

    def unit(vec):
        return vec / np.linalg.norm(vec)

    d = config.dim
    class_sig = [unit(vec_rng.normal(size=d)) for _ in range(n_classes)]
    n_families = max(families) + 1
    family_sig = [unit(vec_rng.normal(size=d)) for _ in range(n_families)]
    n_slots = 1 + max(t.slot for t in all_types)
    concept_sig = [[unit(vec_rng.normal(size=d)) for _ in range(n_slots)] for _ in range(n_classes)]
    type_sig = {t.gid: unit(vec_rng.normal(size=d)) for t in all_types}
    centroids = _centroids(config, vec_rng)

    prototypes = {
        t.gid: config.class_signal * class_sig[t.cls]
        + config.family_signal * family_sig[t.family]
        + config.concept_signal * concept_sig[t.cls][t.slot]
        + config.type_signal * type_sig[t.gid]
        for t in all_types
    }

    # tag depends on class and concept slot so the tasks anchor the shared
    # concept dictionary across varieties; relations depend on the tag pair
    def tag_value(t: _Type) -> int:
        return (t.cls + t.slot) % config.tagset_size

    def relation(types, i: int) -> str:
        t_dep = tag_value(types[i])
        t_head = config.tagset_size if i == 0 else tag_value(types[i - 1])
        return f"r{(t_head + t_dep) % (config.tagset_size + 1)}"

    split_sizes = {
        "train": config.sentences_per_variety,
        "dev": config.dev_sentences,
        "test": config.test_sentences,
    }
    corpora = []
    child_idx = 1
    for split, count in split_sizes.items():
        structure_rng = np.random.default_rng(children[child_idx])
        child_idx += 1
        lengths, slots = _sentence_structure(structure_rng, count, lmin, lmax, n_families)
        for v in range(n):
            noise_rng = np.random.default_rng(children[child_idx])
            child_idx += 1
            family_slots = slots[families[v]]
            sentences = []
            for length, slot_row in zip(lengths, family_slots):
                length = int(length)
                types = [
                    lexicons[v][cls][int(slot_row[cls]) % len(lexicons[v][cls])]
                    for cls in range(length)
                ]
                words = [t.string for t in types]
                tags = [f"t{tag_value(t)}" for t in types]
                heads = [i for i in range(length)]  # previous word; first word -> root
                rels = [relation(types, i) for i in range(length)]
                protos = np.stack([prototypes[t.gid] for t in types])
                tokens = (
                    protos
                    + config.token_variety_weight * centroids[v]
                    + noise_rng.normal(0.0, config.token_noise, size=(length, d))
                )
                # the final sentence vector sits on the token manifold (mean
                # token) so the trained encoders act on it consistently
                cls_final = (
                    config.cls_content_weight * tokens.mean(axis=0)
                    + config.cls_offset_weight * centroids[v]
                    + noise_rng.normal(0.0, config.cls_noise, size=d)
                )
                cls_layer2 = centroids[v] + noise_rng.normal(0.0, config.cls_noise, size=d)
                sentences.append(Sentence(
                    words=words,
                    subword_tokens=list(words),
                    pos_tags=tags,
                    heads=heads,
                    deprels=rels,
                    embedding=EmbeddingRecord(
                        cls_layer2=cls_layer2, cls_final=cls_final, token_vectors=tokens
                    ),
                ))
            corpora.append(VarietyCorpus(ids[v], sentences, split))

    manifest = {
        "config": _jsonable(asdict(config)),
        "variety_ids": ids,
        "families": {ids[i]: families[i] for i in range(n)},
        "position_classes": n_classes,
        "shared_type_counts": shared_counts,
        "lexicon_sizes": {
            ids[v]: [len(lexicons[v][c]) for c in range(n_classes)] for v in range(n)
        },
        "centroids": {ids[v]: [round(float(x), 9) for x in centroids[v]] for v in range(n)},
        "split_sizes": split_sizes,
    }
    return corpora, manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def by_variety(corpora) -> dict:
    """Index a flat corpus list as {variety_id: {split: corpus}}."""
    out = {}
    for c in corpora:
        out.setdefault(c.variety_id, {})[c.split] = c
    return out


# Canonical related/related/unrelated triple: the first two varieties share a
# large type pool and sit close; the third is lexically disjoint and far away.
# The amplitudes were calibrated so that a small training budget produces the
# qualitative regime of interest: sources separable for a cooperative
# discriminator, suppressible for a reversed one, with enough shared and
# variety-bound structure for representation analysis.
TRIPLE_IDS = ("va", "vb", "vc")
TRIPLE_OVERLAP = ((1.0, 0.7, 0.0), (0.7, 1.0, 0.0), (0.0, 0.0, 1.0))
TRIPLE_DISTANCES = ((0.0, 1.0, 3.0), (1.0, 0.0, 3.0), (3.0, 3.0, 0.0))


def triple_config(seed: int) -> SynthConfig:
    return SynthConfig(
        n_varieties=3,
        variety_ids=TRIPLE_IDS,
        vocab_size=60,
        overlap=TRIPLE_OVERLAP,
        distance_matrix=TRIPLE_DISTANCES,
        centroid_spread=0.8,
        token_noise=0.5,
        token_variety_weight=0.6,
        cls_noise=0.2,
        cls_content_weight=1.0,
        cls_offset_weight=0.3,
        class_signal=2.0,
        family_signal=1.5,
        concept_signal=1.2,
        type_signal=1.0,
        sentences_per_variety=1920,
        dev_sentences=480,
        test_sentences=480,
        sentence_length=(3, 6),
        tagset_size=6,
        dim=32,
        seed=seed,
    )


def make_triple(seed: int):
    """The canonical triple: target ``va``, related ``vb``, unrelated ``vc``."""
    return generate(triple_config(seed))


def manifest_text(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def write_dataset(corpora, manifest, out_dir):
    """Write CoNLL-U + VEMB + sidecar files per (variety, split), plus the manifest."""
    from pathlib import Path

    from .corpus import dataset_paths, write_corpus, write_embeddings, write_token_sidecar

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for corpus in corpora:
        paths = dataset_paths(out_dir, corpus.variety_id, corpus.split)
        write_corpus(paths["conllu"], corpus)
        write_embeddings(paths["vemb"], corpus)
        write_token_sidecar(paths["tokens"], corpus)
    (out_dir / "manifest.txt").write_text(manifest_text(manifest), encoding="utf-8")
