"""CoNLL-U ingestion, corpus containers, and the VEMB embedding interchange format.

A corpus is one split (train/dev/test) of one language variety. Sentences keep
their surface words, the subword tokens used for overlap scoring, optional gold
annotations, and optionally an attached embedding record. Everything is treated
as immutable after load; attaching embeddings returns a new corpus.

VEMB is a little-endian binary format:

    magic "VEMB" | u32 version=1 | u32 d | u32 record_count
    per record: u32 word_count | d x f32 cls_layer2 | d x f32 cls_final
                | word_count x d x f32 token_vectors (row-major)

A sidecar token file (one sentence per line, subword tokens space-separated)
supplies subword tokens when they differ from the surface words.
"""

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SPLITS = ("train", "dev", "test")

VEMB_MAGIC = b"VEMB"
VEMB_VERSION = 1


class ParseError(ValueError):
    """Malformed CoNLL-U or sidecar token content."""


class EmbeddingIOError(ValueError):
    """Malformed VEMB data, or an embedding/corpus mismatch."""


@dataclass
class EmbeddingRecord:
    """Per-sentence features: two sentence-level vectors plus word-aligned token vectors.

    All three arrays share one feature dimension d, which must be even so the
    two encoder halves of width d/2 line up. ``token_vectors`` has one row per
    surface word (subword-to-word pooling happens upstream).
    """

    cls_layer2: np.ndarray
    cls_final: np.ndarray
    token_vectors: np.ndarray

    def __post_init__(self):
        self.cls_layer2 = np.ascontiguousarray(self.cls_layer2, dtype=np.float64)
        self.cls_final = np.ascontiguousarray(self.cls_final, dtype=np.float64)
        self.token_vectors = np.ascontiguousarray(self.token_vectors, dtype=np.float64)
        if self.cls_layer2.ndim != 1 or self.cls_final.ndim != 1:
            raise EmbeddingIOError("cls_layer2 and cls_final must be 1-D vectors")
        if self.token_vectors.ndim != 2:
            raise EmbeddingIOError("token_vectors must be a 2-D matrix")
        d = self.cls_layer2.shape[0]
        if d <= 0 or d % 2 != 0:
            raise EmbeddingIOError(f"feature dimension must be positive and even, got {d}")
        if self.cls_final.shape[0] != d or self.token_vectors.shape[1] != d:
            raise EmbeddingIOError("cls_layer2, cls_final and token_vectors disagree on dimension")

    @property
    def dim(self) -> int:
        return self.cls_layer2.shape[0]


@dataclass
class Sentence:
    """One sentence with surface words, overlap tokens, and optional annotations.

    ``pos_tags``, ``heads`` and ``deprels`` are either absent or carry exactly
    one entry per word. Heads are 1-based word indices with 0 for the root;
    self-attachment is rejected.
    """

    words: list
    subword_tokens: list
    pos_tags: list | None = None
    heads: list | None = None
    deprels: list | None = None
    embedding: EmbeddingRecord | None = None

    def __post_init__(self):
        n = len(self.words)
        if n == 0:
            raise ParseError("sentence has no words")
        if any(not w for w in self.words):
            raise ParseError("empty surface word")
        if len(self.subword_tokens) == 0 or any(not t for t in self.subword_tokens):
            raise ParseError("subword_tokens must be non-empty strings")
        for name in ("pos_tags", "heads", "deprels"):
            col = getattr(self, name)
            if col is not None and len(col) != n:
                raise ParseError(f"{name} has {len(col)} entries for {n} words")
        if self.heads is not None:
            for i, h in enumerate(self.heads):
                if not isinstance(h, int):
                    raise ParseError(f"head of word {i + 1} is not an integer")
                if h < 0 or h > n:
                    raise ParseError(f"head {h} of word {i + 1} outside [0, {n}]")
                if h == i + 1:
                    raise ParseError(f"word {i + 1} attaches to itself")
        if self.embedding is not None and self.embedding.token_vectors.shape[0] != n:
            raise EmbeddingIOError(
                f"embedding has {self.embedding.token_vectors.shape[0]} token rows "
                f"for {n} words"
            )

    def __len__(self):
        return len(self.words)


@dataclass
class VarietyCorpus:
    """A labeled collection of sentences for one language variety and one split."""

    variety_id: str
    sentences: list
    split: str = "train"

    def __post_init__(self):
        if not self.variety_id:
            raise ValueError("variety_id must be non-empty")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")

    def __len__(self):
        return len(self.sentences)


# ---------------------------------------------------------------------------
# CoNLL-U

_N_COLUMNS = 10


def parse_conllu(data: bytes) -> list:
    """Parse raw CoNLL-U file content into sentences.

    Comment lines are ignored, multiword ranges (ID with '-') and empty nodes
    (ID with '.') are skipped. Columns 2/4/7/8 populate words, pos_tags, heads
    and deprels; '_' marks an absent annotation. Annotation columns must be
    filled for all words of a sentence or for none of them.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"input is not UTF-8: {exc}") from exc

    sentences = []
    rows = []  # (form, upos, head, deprel) with None for '_'
    last_lineno = 0

    def flush(end_lineno):
        if not rows:
            return
        words = [r[0] for r in rows]
        cols = {}
        for name, j in (("pos_tags", 1), ("heads", 2), ("deprels", 3)):
            values = [r[j] for r in rows]
            present = [v is not None for v in values]
            if all(present):
                cols[name] = values
            elif not any(present):
                cols[name] = None
            else:
                raise ParseError(
                    f"sentence ending at line {end_lineno}: column {name} is "
                    "only partially annotated"
                )
        sentences.append(Sentence(words=words, subword_tokens=list(words), **cols))
        rows.clear()

    for lineno, line in enumerate(text.splitlines(), start=1):
        last_lineno = lineno
        if line.strip() == "":
            flush(lineno)
            continue
        if line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != _N_COLUMNS:
            raise ParseError(f"line {lineno}: expected {_N_COLUMNS} tab-separated columns, got {len(fields)}")
        token_id = fields[0]
        if "-" in token_id or "." in token_id:
            continue  # multiword range / empty node
        form = fields[1]
        upos = None if fields[3] == "_" else fields[3]
        if fields[6] == "_":
            head = None
        else:
            try:
                head = int(fields[6])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: non-integer head {fields[6]!r}") from exc
        deprel = None if fields[7] == "_" else fields[7]
        rows.append((form, upos, head, deprel))
    flush(last_lineno + 1)
    return sentences


def serialize_conllu(sentences) -> bytes:
    """Render sentences as plain CoNLL-U token rows (inverse of parse_conllu)."""
    blocks = []
    for s in sentences:
        lines = []
        for i, word in enumerate(s.words):
            upos = s.pos_tags[i] if s.pos_tags is not None else "_"
            head = str(s.heads[i]) if s.heads is not None else "_"
            rel = s.deprels[i] if s.deprels is not None else "_"
            lines.append("\t".join([str(i + 1), word, "_", upos, "_", "_", head, rel, "_", "_"]))
        blocks.append("\n".join(lines))
    text = "\n\n".join(blocks)
    if blocks:
        text += "\n"
    return text.encode("utf-8")


def read_corpus(path, variety_id: str, split: str = "train", tokens_path=None) -> VarietyCorpus:
    """Load a CoNLL-U file (and optional sidecar token file) as a corpus."""
    sentences = parse_conllu(Path(path).read_bytes())
    corpus = VarietyCorpus(variety_id=variety_id, sentences=sentences, split=split)
    if tokens_path is not None:
        corpus = attach_subword_tokens(corpus, read_token_sidecar(tokens_path))
    return corpus


def write_corpus(path, corpus: VarietyCorpus):
    Path(path).write_bytes(serialize_conllu(corpus.sentences))


# ---------------------------------------------------------------------------
# Sidecar token files


def read_token_sidecar(path) -> list:
    """Read one space-separated subword token list per line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    out = []
    for lineno, line in enumerate(lines, start=1):
        toks = line.split()
        if not toks:
            raise ParseError(f"sidecar line {lineno} has no tokens")
        out.append(toks)
    return out


def write_token_sidecar(path, corpus: VarietyCorpus):
    text = "\n".join(" ".join(s.subword_tokens) for s in corpus.sentences)
    if corpus.sentences:
        text += "\n"
    Path(path).write_text(text, encoding="utf-8")


def attach_subword_tokens(corpus: VarietyCorpus, token_lines) -> VarietyCorpus:
    """Return a copy of the corpus with subword tokens replaced per sentence."""
    if len(token_lines) != len(corpus.sentences):
        raise ParseError(
            f"sidecar has {len(token_lines)} lines for {len(corpus.sentences)} sentences"
        )
    sentences = [replace(s, subword_tokens=list(toks)) for s, toks in zip(corpus.sentences, token_lines)]
    return VarietyCorpus(corpus.variety_id, sentences, corpus.split)


# ---------------------------------------------------------------------------
# VEMB binary embeddings


def write_embeddings(path, corpus: VarietyCorpus):
    """Write the corpus embeddings as a VEMB file (f32 on disk)."""
    records = []
    for i, s in enumerate(corpus.sentences):
        if s.embedding is None:
            raise EmbeddingIOError(f"sentence {i} has no embedding to write")
        records.append(s.embedding)
    d = records[0].dim if records else 0
    for i, rec in enumerate(records):
        if rec.dim != d:
            raise EmbeddingIOError(f"record {i} has dimension {rec.dim}, expected {d}")
    buf = bytearray()
    buf += VEMB_MAGIC
    buf += struct.pack("<III", VEMB_VERSION, d, len(records))
    for rec in records:
        buf += struct.pack("<I", rec.token_vectors.shape[0])
        buf += rec.cls_layer2.astype("<f4").tobytes()
        buf += rec.cls_final.astype("<f4").tobytes()
        buf += rec.token_vectors.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_embeddings(path, corpus: VarietyCorpus) -> VarietyCorpus:
    """Attach the i-th VEMB record to the i-th sentence; values widen to f64.

    Any cardinality mismatch raises rather than truncating: bad magic, bad
    version, odd/zero dimension, record-count mismatch, and per-sentence
    token-count mismatch are all distinct errors.
    """
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise EmbeddingIOError("truncated VEMB header")
    if data[:4] != VEMB_MAGIC:
        raise EmbeddingIOError(f"bad magic {data[:4]!r}, expected {VEMB_MAGIC!r}")
    version, d, count = struct.unpack_from("<III", data, 4)
    if version != VEMB_VERSION:
        raise EmbeddingIOError(f"unsupported VEMB version {version}")
    if count != len(corpus.sentences):
        raise EmbeddingIOError(
            f"record count {count} does not match corpus sentence count {len(corpus.sentences)}"
        )
    if count > 0 and (d <= 0 or d % 2 != 0):
        raise EmbeddingIOError(f"dimension must be positive and even, got {d}")

    offset = 16
    itemsize = 4
    sentences = []
    for i, s in enumerate(corpus.sentences):
        if offset + 4 > len(data):
            raise EmbeddingIOError(f"truncated VEMB file at record {i}")
        (word_count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if word_count != len(s.words):
            raise EmbeddingIOError(
                f"record {i} has {word_count} token rows for a {len(s.words)}-word sentence"
            )
        need = (2 * d + word_count * d) * itemsize
        if offset + need > len(data):
            raise EmbeddingIOError(f"truncated VEMB file at record {i}")
        cls_layer2 = np.frombuffer(data, dtype="<f4", count=d, offset=offset)
        offset += d * itemsize
        cls_final = np.frombuffer(data, dtype="<f4", count=d, offset=offset)
        offset += d * itemsize
        tok = np.frombuffer(data, dtype="<f4", count=word_count * d, offset=offset)
        offset += word_count * d * itemsize
        rec = EmbeddingRecord(
            cls_layer2=cls_layer2,
            cls_final=cls_final,
            token_vectors=tok.reshape(word_count, d),
        )
        sentences.append(replace(s, embedding=rec))
    if offset != len(data):
        raise EmbeddingIOError(f"{len(data) - offset} trailing bytes after last record")
    return VarietyCorpus(corpus.variety_id, sentences, corpus.split)


# ---------------------------------------------------------------------------


def token_type_set(corpus: VarietyCorpus) -> set:
    """The set of distinct subword token types across all sentences."""
    if not corpus.sentences:
        raise ValueError(f"corpus {corpus.variety_id!r} is empty")
    types = set()
    for s in corpus.sentences:
        types.update(s.subword_tokens)
    return types


def merge_corpora(corpora, variety_id=None, split="train") -> VarietyCorpus:
    """Concatenate several corpora of one variety (e.g. to pool splits)."""
    corpora = list(corpora)
    if not corpora:
        raise ValueError("nothing to merge")
    vid = variety_id or corpora[0].variety_id
    if any(c.variety_id != vid for c in corpora):
        raise ValueError("cannot merge corpora of different varieties")
    sentences = [s for c in corpora for s in c.sentences]
    return VarietyCorpus(vid, sentences, split)


def dataset_paths(data_dir, variety_id: str, split: str) -> dict:
    base = Path(data_dir)
    stem = f"{variety_id}.{split}"
    return {
        "conllu": base / f"{stem}.conllu",
        "vemb": base / f"{stem}.vemb",
        "tokens": base / f"{stem}.tokens",
    }


def load_variety(data_dir, variety_id: str, split: str, require_embeddings: bool = True) -> VarietyCorpus:
    """Load ``{variety_id}.{split}.conllu`` (+``.vemb``/``.tokens``) from a dataset directory."""
    paths = dataset_paths(data_dir, variety_id, split)
    if not paths["conllu"].exists():
        raise FileNotFoundError(f"no corpus file {paths['conllu']}")
    tokens = paths["tokens"] if paths["tokens"].exists() else None
    corpus = read_corpus(paths["conllu"], variety_id, split, tokens_path=tokens)
    if paths["vemb"].exists():
        corpus = load_embeddings(paths["vemb"], corpus)
    elif require_embeddings:
        raise FileNotFoundError(f"no embedding file {paths['vemb']}")
    return corpus
