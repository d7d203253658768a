"""Dual-branch encoder with an adversarial invariant branch and a cooperative specific branch.

Every word-aligned token vector and the sentence-level [CLS] vector pass
through both 2-layer encoders; the halves concatenate back to the input width.
Two discriminators classify the training variety from the [CLS]-position
halves only: the invariant one sits behind a gradient-reversal gate, the
specific one trains cooperatively. The task head consumes per-word joint
features. The objective is the unweighted sum of the active loss terms.

Modes:
  baseline        task loss only; both discriminators stay inert.
  alignment_only  the specific branch is inert and the task head consumes the
                  invariant half duplicated to full width (capacity constant).
  dual            both branches and, subject to the ablation flags, both
                  variety losses.
"""

import copy
import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import VarietyCorpus
from .nn import (
    GrlGate,
    Mlp2,
    adam_step,
    concat_cols,
    grl_backward,
    grl_forward,
    max_rel_error,
    numeric_gradient,
    softmax,
    softmax_xent,
    split_cols,
    zero_grads,
)
from .tasks import (
    DepHead,
    PosHead,
    dep_loss,
    dep_predict,
    las,
    pos_forward,
    pos_loss,
    token_f1,
    uas,
)

MODES = ("baseline", "alignment_only", "dual")
TASKS = ("pos", "dep")

# learning-rate presets named after the two encoder regimes they mimic
PRESETS = {"mbert-like": 2e-4, "xlmr-like": 5e-5}

DEFAULT_LAMBDA_GRID = (0.1, 0.5, 1.0)

ABLATION_ROWS = (
    ("w/o both", False, False),
    ("w/o spc", True, False),
    ("w/o inv", False, True),
    ("full", True, True),
)


@dataclass
class TrainConfig:
    """Hyperparameters and toggles for one training run."""

    lam: float = 1.0
    preset: str = "mbert-like"
    lr: float | None = None  # None -> preset value
    batch_size: int = 64
    max_epochs: int = 10
    max_steps: int = 1000
    seed: int = 0
    mode: str = "dual"
    use_inv_loss: bool = True
    use_spc_loss: bool = True
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    hidden_dim: int | None = None  # None -> feature dim
    disc_hidden: int | None = None  # None -> hidden_dim; small keeps the game non-saturating
    arc_dim: int = 16
    eval_every: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be positive")

    @property
    def resolved_lr(self) -> float:
        return self.lr if self.lr is not None else PRESETS[self.preset]


class DualEncoderModel:
    """Parameters of both encoder branches, both discriminators, and the task head."""

    def __init__(self, d, hidden, mode, grl, f_inv, f_spc, d_inv, d_spc,
                 task_kind, task_head, variety_ids, tag_labels=None, rel_labels=None,
                 use_inv_loss=True, use_spc_loss=True, arc_dim=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if task_kind not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        self.d = d
        self.hidden = hidden
        self.mode = mode
        self.grl = grl
        self.f_inv = f_inv
        self.f_spc = f_spc
        self.d_inv = d_inv
        self.d_spc = d_spc
        self.task_kind = task_kind
        self.task_head = task_head
        self.variety_ids = list(variety_ids)
        self.tag_labels = list(tag_labels) if tag_labels is not None else None
        self.rel_labels = list(rel_labels) if rel_labels is not None else None
        self.use_inv_loss = use_inv_loss
        self.use_spc_loss = use_spc_loss
        self.arc_dim = arc_dim
        self.variety_index = {v: i for i, v in enumerate(self.variety_ids)}
        self.tag_index = {t: i for i, t in enumerate(self.tag_labels)} if self.tag_labels else None
        self.rel_index = {r: i for i, r in enumerate(self.rel_labels)} if self.rel_labels else None

    @property
    def n_varieties(self):
        return len(self.variety_ids)

    @property
    def inv_loss_active(self):
        return self.use_inv_loss and self.mode in ("alignment_only", "dual")

    @property
    def spc_loss_active(self):
        return self.use_spc_loss and self.mode == "dual"

    def named_params(self):
        named = []
        for prefix, mlp in (("f_inv", self.f_inv), ("f_spc", self.f_spc),
                            ("d_inv", self.d_inv), ("d_spc", self.d_spc)):
            named += [
                (f"{prefix}.l1.weight", mlp.l1.weight),
                (f"{prefix}.l1.bias", mlp.l1.bias),
                (f"{prefix}.l2.weight", mlp.l2.weight),
                (f"{prefix}.l2.bias", mlp.l2.bias),
            ]
        if self.task_kind == "pos":
            named += [
                ("task.classifier.weight", self.task_head.classifier.weight),
                ("task.classifier.bias", self.task_head.classifier.bias),
            ]
        else:
            named += [
                ("task.head_proj.weight", self.task_head.head_proj.weight),
                ("task.head_proj.bias", self.task_head.head_proj.bias),
                ("task.dep_proj.weight", self.task_head.dep_proj.weight),
                ("task.dep_proj.bias", self.task_head.dep_proj.bias),
                ("task.root_vector", self.task_head.root_vector),
                ("task.rel_classifier.weight", self.task_head.rel_classifier.weight),
                ("task.rel_classifier.bias", self.task_head.rel_classifier.bias),
            ]
        return named

    def params(self):
        return [p for _, p in self.named_params()]


def build_model(rng, d, variety_ids, task_kind, config: TrainConfig,
                tag_labels=None, rel_labels=None) -> DualEncoderModel:
    """Create all components in a fixed order from one seeded generator."""
    if d <= 0 or d % 2 != 0:
        raise ValueError(f"feature dimension must be positive and even, got {d}")
    hidden = config.hidden_dim if config.hidden_dim is not None else d
    disc_hidden = config.disc_hidden if config.disc_hidden is not None else hidden
    half = d // 2
    n_var = len(variety_ids)
    f_inv = Mlp2.create(rng, d, hidden, half)
    f_spc = Mlp2.create(rng, d, hidden, half)
    d_inv = Mlp2.create(rng, half, disc_hidden, n_var)
    d_spc = Mlp2.create(rng, half, disc_hidden, n_var)
    if task_kind == "pos":
        if not tag_labels:
            raise ValueError("pos task needs a tag label set")
        task_head = PosHead.create(rng, d, len(tag_labels))
    elif task_kind == "dep":
        if not rel_labels:
            raise ValueError("dep task needs a relation label set")
        task_head = DepHead.create(rng, d, config.arc_dim, len(rel_labels))
    else:
        raise ValueError(f"task must be one of {TASKS}")
    use_inv = config.use_inv_loss
    use_spc = config.use_spc_loss
    if config.mode == "baseline":
        use_inv = use_spc = False
    elif config.mode == "alignment_only":
        use_inv = True
        use_spc = False
    return DualEncoderModel(
        d=d, hidden=hidden, mode=config.mode, grl=GrlGate(config.lam),
        f_inv=f_inv, f_spc=f_spc, d_inv=d_inv, d_spc=d_spc,
        task_kind=task_kind, task_head=task_head, variety_ids=variety_ids,
        tag_labels=tag_labels, rel_labels=rel_labels,
        use_inv_loss=use_inv, use_spc_loss=use_spc, arc_dim=config.arc_dim,
    )


# ---------------------------------------------------------------------------
# Forward / backward


def encode_with_cache(model: DualEncoderModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ValueError(f"encode: expected rows of width {model.d}, got shape {x.shape}")
    h_inv, c_inv = model.f_inv.forward(x)
    if model.mode == "alignment_only":
        h_spc, c_spc = h_inv, None
        h = concat_cols(h_inv, h_inv)
    else:
        h_spc, c_spc = model.f_spc.forward(x)
        h = concat_cols(h_inv, h_spc)
    return h, h_inv, h_spc, (c_inv, c_spc)


def encode(model: DualEncoderModel, x):
    """Joint feature h (rows x d) plus both halves (rows x d/2 each)."""
    h, h_inv, h_spc, _ = encode_with_cache(model, x)
    return h, h_inv, h_spc


def encode_backward(model: DualEncoderModel, cache, grad_h):
    c_inv, c_spc = cache
    g_inv, g_spc = split_cols(grad_h, model.d // 2)
    if model.mode == "alignment_only":
        return model.f_inv.backward(c_inv, g_inv + g_spc)
    return model.f_inv.backward(c_inv, g_inv) + model.f_spc.backward(c_spc, g_spc)


def loss_inv(model: DualEncoderModel, cls_x, y_var, with_grads=True) -> float:
    """Variety cross entropy on the invariant half, reversed into the encoder.

    The discriminator receives the plain gradient; the gradient entering the
    invariant encoder is scaled by -lambda. Parameter gradients accumulate.
    """
    h_inv, cache = model.f_inv.forward(cls_x)
    z = grl_forward(model.grl, h_inv)
    logits, d_cache = model.d_inv.forward(z)
    loss, grad_logits = softmax_xent(logits, y_var)
    if with_grads:
        grad_z = model.d_inv.backward(d_cache, grad_logits)
        model.f_inv.backward(cache, grl_backward(model.grl, grad_z))
    return loss


def loss_spc(model: DualEncoderModel, cls_x, y_var, with_grads=True) -> float:
    """Cooperative variety cross entropy on the specific half."""
    h_spc, cache = model.f_spc.forward(cls_x)
    logits, d_cache = model.d_spc.forward(h_spc)
    loss, grad_logits = softmax_xent(logits, y_var)
    if with_grads:
        grad_h = model.d_spc.backward(d_cache, grad_logits)
        model.f_spc.backward(cache, grad_h)
    return loss


def discriminator_accuracy(model: DualEncoderModel, which: str, cls_x, y_var) -> float:
    """Forward-only batch accuracy of one discriminator (no gradients)."""
    h_inv, _ = model.f_inv.forward(cls_x)
    if which == "inv":
        logits, _ = model.d_inv.forward(h_inv)
    elif which == "spc":
        feats = h_inv if model.mode == "alignment_only" else model.f_spc.forward(cls_x)[0]
        logits, _ = model.d_spc.forward(feats)
    else:
        raise ValueError("which must be 'inv' or 'spc'")
    pred = softmax(logits).argmax(axis=1)
    return float(np.mean(pred == np.asarray(y_var)))


# ---------------------------------------------------------------------------
# Batches


@dataclass
class Batch:
    """Stacked per-sentence [CLS] rows and per-word feature rows with labels."""

    cls_x: np.ndarray
    y_var: np.ndarray
    word_x: np.ndarray
    sent_bounds: list
    pos_labels: np.ndarray | None
    head_labels: list | None
    rel_labels: list | None

    @property
    def n_words(self):
        return self.word_x.shape[0]

    def variety_share(self, variety_idx: int = 0) -> float:
        return float(np.mean(self.y_var == variety_idx))


def build_batch(model: DualEncoderModel, items) -> Batch:
    """Assemble a batch from (sentence, variety_index) pairs."""
    cls_rows, y_var, word_rows, bounds = [], [], [], []
    pos_labels, head_labels, rel_labels = [], [], []
    offset = 0
    for sent, var_idx in items:
        if sent.embedding is None:
            raise ValueError("cannot batch a sentence without an embedding")
        if not 0 <= var_idx < model.n_varieties:
            raise ValueError(f"variety index {var_idx} outside [0, {model.n_varieties})")
        cls_rows.append(sent.embedding.cls_final)
        y_var.append(var_idx)
        n = len(sent.words)
        word_rows.append(sent.embedding.token_vectors)
        bounds.append((offset, offset + n))
        offset += n
        if model.task_kind == "pos":
            if sent.pos_tags is None:
                raise ValueError("pos task needs gold tags on every training sentence")
            pos_labels.extend(model.tag_index[t] for t in sent.pos_tags)
        else:
            if sent.heads is None or sent.deprels is None:
                raise ValueError("dep task needs gold heads and relations on every training sentence")
            head_labels.append(np.asarray(sent.heads, dtype=np.int64))
            rel_labels.append(np.asarray([model.rel_index[r] for r in sent.deprels], dtype=np.int64))
    return Batch(
        cls_x=np.stack(cls_rows),
        y_var=np.asarray(y_var, dtype=np.int64),
        word_x=np.concatenate(word_rows, axis=0),
        sent_bounds=bounds,
        pos_labels=np.asarray(pos_labels, dtype=np.int64) if model.task_kind == "pos" else None,
        head_labels=head_labels if model.task_kind == "dep" else None,
        rel_labels=rel_labels if model.task_kind == "dep" else None,
    )


def loss_task(model: DualEncoderModel, batch: Batch, with_grads=True) -> float:
    """Task loss over the per-word joint features, averaged over words."""
    h, _, _, cache = encode_with_cache(model, batch.word_x)
    total_words = batch.n_words
    if model.task_kind == "pos":
        if with_grads:
            loss, grad_h = pos_loss(model.task_head, h, batch.pos_labels)
        else:
            logits = pos_forward(model.task_head, h)
            loss, _ = softmax_xent(logits, batch.pos_labels)
    else:
        loss = 0.0
        grad_h = np.zeros_like(h)
        for (lo, hi), heads, rels in zip(batch.sent_bounds, batch.head_labels, batch.rel_labels):
            weight = (hi - lo) / total_words
            if with_grads:
                sent_loss, sent_grad = dep_loss(model.task_head, h[lo:hi], heads, rels, weight=weight)
                grad_h[lo:hi] += sent_grad
            else:
                sent_loss = _dep_loss_value(model.task_head, h[lo:hi], heads, rels) * weight
            loss += sent_loss
    if with_grads:
        encode_backward(model, cache, grad_h)
    return float(loss)


def _dep_loss_value(head, h, heads, rels) -> float:
    from .tasks import dep_forward

    arc, rel_logits = dep_forward(head, h, heads)
    arc_loss, _ = softmax_xent(arc, heads)
    rel_loss, _ = softmax_xent(rel_logits, rels)
    return arc_loss + rel_loss


def loss_components(model: DualEncoderModel, batch: Batch, with_grads=True) -> dict:
    """The three loss terms; inactive ones are exactly zero and touch no gradient."""
    out = {"l_inv": 0.0, "l_spc": 0.0, "l_task": 0.0}
    if model.inv_loss_active:
        out["l_inv"] = loss_inv(model, batch.cls_x, batch.y_var, with_grads=with_grads)
    if model.spc_loss_active:
        out["l_spc"] = loss_spc(model, batch.cls_x, batch.y_var, with_grads=with_grads)
    out["l_task"] = loss_task(model, batch, with_grads=with_grads)
    out["l_total"] = out["l_inv"] + out["l_spc"] + out["l_task"]
    return out


def loss_total(model: DualEncoderModel, batch: Batch) -> float:
    """Forward value of the unweighted sum of active loss terms."""
    return loss_components(model, batch, with_grads=False)["l_total"]


# ---------------------------------------------------------------------------
# Training


@dataclass
class StepStats:
    step: int
    l_inv: float
    l_spc: float
    l_task: float
    l_total: float
    acc_inv: float
    acc_spc: float
    batch_share: float  # fraction of the batch drawn from the first variety


@dataclass
class TrainResult:
    model: DualEncoderModel  # checkpoint with the best dev metric (earliest tie wins)
    final_model: DualEncoderModel
    step_stats: list
    dev_trace: list  # (step, metric)
    best_step: int | None
    best_metric: float | None
    config: TrainConfig
    variety_ids: list
    metric_name: str


def _derive_labels(task_kind, corpora):
    if task_kind == "pos":
        tags = sorted({t for c in corpora for s in c.sentences for t in (s.pos_tags or [])})
        if not tags:
            raise ValueError("no gold tags found in the training corpora")
        return tags, None
    rels = sorted({r for c in corpora for s in c.sentences for r in (s.deprels or [])})
    if not rels:
        raise ValueError("no gold relations found in the training corpora")
    return None, rels


def train(sources, config: TrainConfig, task_kind: str, dev_corpora=None) -> TrainResult:
    """Train on the pooled source corpora with seeded shuffling.

    Stops at min(max_epochs * steps_per_epoch, max_steps). When dev corpora
    are given, the model is evaluated every ``eval_every`` steps and the
    returned checkpoint is the one with the highest dev UAS (dep) or dev F1
    (pos); ties break to the earliest step. ``final_model`` keeps the
    last-step parameters regardless.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("no training corpora")
    if len(sources) > 2:
        raise ValueError("at most two source varieties are supported")
    if task_kind not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    for c in sources:
        if not c.sentences:
            raise ValueError(f"source corpus {c.variety_id!r} is empty")
        for s in c.sentences:
            if s.embedding is None:
                raise ValueError(f"corpus {c.variety_id!r} has sentences without embeddings")
    variety_ids = sorted(c.variety_id for c in sources)
    if len(set(variety_ids)) != len(variety_ids):
        raise ValueError("source varieties must be distinct")
    d = sources[0].sentences[0].embedding.dim
    tag_labels, rel_labels = _derive_labels(task_kind, sources)

    rng = np.random.default_rng(config.seed)
    model = build_model(rng, d, variety_ids, task_kind, config,
                        tag_labels=tag_labels, rel_labels=rel_labels)
    params = model.params()
    lr = config.resolved_lr

    pool = [(s, model.variety_index[c.variety_id]) for c in sources for s in c.sentences]
    steps_per_epoch = (len(pool) + config.batch_size - 1) // config.batch_size
    limit = min(config.max_epochs * steps_per_epoch, config.max_steps)
    metric_name = "uas" if task_kind == "dep" else "f1"

    step_stats = []
    dev_trace = []
    best_step = None
    best_metric = None
    best_state = None
    step = 0
    for _ in range(config.max_epochs):
        if step >= limit:
            break
        order = rng.permutation(len(pool))
        for lo in range(0, len(pool), config.batch_size):
            if step >= limit:
                break
            items = [pool[i] for i in order[lo:lo + config.batch_size]]
            batch = build_batch(model, items)
            acc_inv = discriminator_accuracy(model, "inv", batch.cls_x, batch.y_var)
            acc_spc = discriminator_accuracy(model, "spc", batch.cls_x, batch.y_var)
            zero_grads(params)
            comps = loss_components(model, batch, with_grads=True)
            step += 1
            adam_step(params, lr, t=step)
            step_stats.append(StepStats(
                step=step, l_inv=comps["l_inv"], l_spc=comps["l_spc"],
                l_task=comps["l_task"], l_total=comps["l_total"],
                acc_inv=acc_inv, acc_spc=acc_spc,
                batch_share=batch.variety_share(0),
            ))
            if dev_corpora and (step % config.eval_every == 0 or step == limit):
                metric = evaluate_model(model, dev_corpora)[metric_name]
                dev_trace.append((step, metric))
                if best_metric is None or metric > best_metric:
                    best_metric = metric
                    best_step = step
                    best_state = [p.value.copy() for p in params]

    final_model = copy.deepcopy(model)
    if best_state is not None:
        for p, v in zip(params, best_state):
            p.value[...] = v
    return TrainResult(
        model=model, final_model=final_model, step_stats=step_stats,
        dev_trace=dev_trace, best_step=best_step, best_metric=best_metric,
        config=config, variety_ids=variety_ids, metric_name=metric_name,
    )


def evaluate_model(model: DualEncoderModel, corpora) -> dict:
    """Micro-aggregated metrics of a frozen model over one or more corpora."""
    if isinstance(corpora, VarietyCorpus):
        corpora = [corpora]
    pred_heads, gold_heads, pred_rels, gold_rels = [], [], [], []
    pred_tags, gold_tags = [], []
    n_sentences = 0
    for corpus in corpora:
        for sent in corpus.sentences:
            if sent.embedding is None:
                raise ValueError(f"corpus {corpus.variety_id!r} has sentences without embeddings")
            n_sentences += 1
            h, _, _ = encode(model, sent.embedding.token_vectors)
            if model.task_kind == "pos":
                if sent.pos_tags is None:
                    raise ValueError("evaluation sentence lacks gold tags")
                idx = pos_forward(model.task_head, h).argmax(axis=1)
                pred_tags.extend(model.tag_labels[i] for i in idx)
                gold_tags.extend(sent.pos_tags)
            else:
                if sent.heads is None or sent.deprels is None:
                    raise ValueError("evaluation sentence lacks gold heads/relations")
                ph, pr = dep_predict(model.task_head, h)
                pred_heads.extend(int(x) for x in ph)
                pred_rels.extend(model.rel_labels[i] for i in pr)
                gold_heads.extend(sent.heads)
                gold_rels.extend(sent.deprels)
    if model.task_kind == "pos":
        return {"f1": token_f1(pred_tags, gold_tags), "sentences": n_sentences, "words": len(gold_tags)}
    return {
        "uas": uas(pred_heads, gold_heads),
        "las": las(pred_heads, pred_rels, gold_heads, gold_rels),
        "sentences": n_sentences,
        "words": len(gold_heads),
    }


# ---------------------------------------------------------------------------
# Sweeps and ablations


def lambda_sweep(sources, config: TrainConfig, task_kind: str, dev_corpora=None, eval_sets=None) -> list:
    """One full training run per grid value, shared seed; rows of (lambda, metrics)."""
    if not config.lambda_grid:
        raise ValueError("lambda_grid is empty")
    rows = []
    for lam in config.lambda_grid:
        cfg = dataclasses.replace(config, lam=lam)
        res = train(sources, cfg, task_kind, dev_corpora=dev_corpora)
        row = {"lambda": lam, "dev_metric": res.best_metric}
        for name, corpora in (eval_sets or {}).items():
            row[name] = evaluate_model(res.model, corpora)[res.metric_name]
        rows.append(row)
    return rows


def ablation_suite(sources, config: TrainConfig, task_kind: str, dev_corpora=None, eval_sets=None) -> list:
    """The four loss-toggle combinations, shared seed, in the canonical row order."""
    rows = []
    for label, use_inv, use_spc in ABLATION_ROWS:
        cfg = dataclasses.replace(config, mode="dual", use_inv_loss=use_inv, use_spc_loss=use_spc)
        res = train(sources, cfg, task_kind, dev_corpora=dev_corpora)
        row = {"label": label, "use_inv_loss": use_inv, "use_spc_loss": use_spc,
               "dev_metric": res.best_metric}
        for name, corpora in (eval_sets or {}).items():
            row[name] = evaluate_model(res.model, corpora)[res.metric_name]
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Checkpoints

CKPT_MAGIC = b"VCKP"
CKPT_VERSION = 1


def save_checkpoint(path, model: DualEncoderModel, extra=None):
    """Binary checkpoint: header, JSON metadata, then name/shape/f64 payload per tensor."""
    meta = {
        "arc_dim": model.arc_dim,
        "d": model.d,
        "extra": extra or {},
        "hidden": model.hidden,
        "lambda": model.grl.lam,
        "mode": model.mode,
        "rel_labels": model.rel_labels,
        "tag_labels": model.tag_labels,
        "task": model.task_kind,
        "use_inv_loss": model.use_inv_loss,
        "use_spc_loss": model.use_spc_loss,
        "variety_ids": model.variety_ids,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    named = model.named_params()
    buf = bytearray()
    buf += CKPT_MAGIC
    buf += struct.pack("<II", CKPT_VERSION, len(meta_bytes))
    buf += meta_bytes
    buf += struct.pack("<I", len(named))
    for name, p in named:
        name_b = name.encode("utf-8")
        buf += struct.pack("<I", len(name_b))
        buf += name_b
        buf += struct.pack("<I", p.value.ndim)
        buf += struct.pack(f"<{p.value.ndim}I", *p.value.shape)
        buf += np.ascontiguousarray(p.value, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path):
    """Rebuild a model from a checkpoint; returns (model, extra_metadata)."""
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {data[:4]!r}")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 12
    meta = json.loads(data[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        tensors[name] = values.astype(np.float64)

    config = TrainConfig(
        lam=meta["lambda"], mode=meta["mode"], hidden_dim=meta["hidden"],
        arc_dim=meta["arc_dim"] or 16,
        use_inv_loss=meta["use_inv_loss"], use_spc_loss=meta["use_spc_loss"],
    )
    model = build_model(
        np.random.default_rng(0), meta["d"], meta["variety_ids"], meta["task"], config,
        tag_labels=meta["tag_labels"], rel_labels=meta["rel_labels"],
    )
    for name, p in model.named_params():
        if name not in tensors:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != p.value.shape:
            raise ValueError(f"tensor {name!r} has shape {tensors[name].shape}, expected {p.value.shape}")
        p.value[...] = tensors[name]
    return model, meta.get("extra", {})


# ---------------------------------------------------------------------------
# Composite gradient check


def _min_relu_preactivation(model: DualEncoderModel, batch: Batch) -> float:
    """Smallest |preactivation| hitting any ReLU during the composed forward."""
    from .nn import affine_forward, grl_forward

    smallest = np.inf
    rows = np.concatenate([batch.cls_x, batch.word_x], axis=0)
    for mlp, x in ((model.f_inv, rows), (model.f_spc, rows)):
        a1 = affine_forward(mlp.l1, x)
        smallest = min(smallest, float(np.min(np.abs(a1))))
    h_inv, _ = model.f_inv.forward(batch.cls_x)
    h_spc, _ = model.f_spc.forward(batch.cls_x)
    for mlp, x in ((model.d_inv, grl_forward(model.grl, h_inv)), (model.d_spc, h_spc)):
        a1 = affine_forward(mlp.l1, x)
        smallest = min(smallest, float(np.min(np.abs(a1))))
    return smallest


def composite_gradient_check(seed: int, eps: float = 1e-5) -> float:
    """Finite-difference check of the full composed objective on a tiny fixture.

    Alternates between the two task heads by seed parity and returns the worst
    relative error over every parameter of every component. The reversal gate
    defines its own Jacobian (-lambda * I), so the finite-difference target for
    the invariant encoder weighs the variety term by -lambda; every other
    parameter is checked against the plain sum of active terms. Fixtures whose
    ReLU preactivations sit within 20 * eps of the kink are redrawn, since
    central differences are one-sided there.
    """
    d, hidden = 8, 6
    task_kind = "dep" if seed % 2 == 0 else "pos"
    config = TrainConfig(lam=0.5, mode="dual", hidden_dim=hidden, arc_dim=4,
                         seed=seed, batch_size=4)
    tag_labels = ["t0", "t1", "t2"] if task_kind == "pos" else None
    rel_labels = ["r0", "r1"] if task_kind == "dep" else None

    lengths = [2, 3, 2]
    bounds = []
    offset = 0
    for n in lengths:
        bounds.append((offset, offset + n))
        offset += n

    model = batch = None
    for attempt in range(32):
        rng = np.random.default_rng(seed * 1009 + attempt)
        model = build_model(rng, d, ["va", "vb"], task_kind, config,
                            tag_labels=tag_labels, rel_labels=rel_labels)
        batch = Batch(
            cls_x=rng.normal(size=(len(lengths), d)),
            y_var=rng.integers(0, 2, size=len(lengths)),
            word_x=rng.normal(size=(offset, d)),
            sent_bounds=bounds,
            pos_labels=rng.integers(0, 3, size=offset) if task_kind == "pos" else None,
            head_labels=[np.asarray([0] + list(range(1, n)), dtype=np.int64) for n in lengths]
            if task_kind == "dep" else None,
            rel_labels=[rng.integers(0, 2, size=n) for n in lengths] if task_kind == "dep" else None,
        )
        if _min_relu_preactivation(model, batch) > 20.0 * eps:
            break

    params_named = model.named_params()
    all_params = model.params()
    zero_grads(all_params)
    loss_components(model, batch, with_grads=True)
    analytic = {name: p.grad.copy() for name, p in params_named}
    zero_grads(all_params)

    lam = model.grl.lam
    worst = 0.0
    for name, p in params_named:
        inv_weight = -lam if name.startswith("f_inv.") else 1.0

        def scalar():
            comps = loss_components(model, batch, with_grads=False)
            return inv_weight * comps["l_inv"] + comps["l_spc"] + comps["l_task"]

        numeric = numeric_gradient(scalar, p.value, eps)
        worst = max(worst, max_rel_error(analytic[name], numeric))
    return worst
