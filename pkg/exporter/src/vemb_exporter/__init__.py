"""Convert CoNLL-U treebanks into VEMB embedding files with a pretrained encoder.

For every sentence the encoder runs once over its subword sequence; the file
records the layer-2 hidden state at the [CLS] position (the similarity
feature), the final-layer [CLS] state, and one vector per treebank word (the
arithmetic mean of the word's final-layer subword states). A sidecar token
file carries the subword strings per sentence and a JSON manifest records the
job parameters. Output goes through the corpus API of ``varietylab``, so
anything exported here loads back with ``varietylab.corpus.load_embeddings``.

Layer counting treats the embedding output as layer 0, so ``--layer 2`` is the
hidden state after the second transformer block. Sentences longer than the
encoder's position limit are truncated with a warning naming the sentence
index; words whose subwords were all cut off keep their row as a zero vector
so word counts always match the source treebank.
"""

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from varietylab.corpus import (
    EmbeddingRecord,
    VarietyCorpus,
    parse_conllu,
    write_embeddings,
    write_token_sidecar,
)

__version__ = "0.1.0"


@dataclass
class ExportJob:
    """One conversion: a checkpoint, an input treebank, and an output path."""

    checkpoint: str
    input_path: str
    output_path: str
    layer: int = 2
    batch_size: int = 16
    device: str = "cpu"
    variety_id: str = "xx"

    def sidecar_path(self) -> Path:
        return Path(str(self.output_path) + ".tokens")

    def manifest_path(self) -> Path:
        return Path(str(self.output_path) + ".manifest.json")


def _pool_word_vectors(final_states, word_ids, n_words):
    """Mean of each word's subword states; words lost to truncation stay zero."""
    d = final_states.shape[1]
    vectors = np.zeros((n_words, d))
    counts = np.zeros(n_words)
    for position, wid in enumerate(word_ids):
        if wid is None or wid >= n_words:
            continue
        vectors[wid] += final_states[position]
        counts[wid] += 1
    present = counts > 0
    vectors[present] /= counts[present, None]
    return vectors, int(n_words - present.sum())


def export(job: ExportJob) -> VarietyCorpus:
    """Run the encoder over the treebank and write VEMB + sidecar + manifest.

    Returns the corpus with the exported embeddings attached.
    """
    torch.set_num_threads(1)  # keeps re-exports byte-identical
    tokenizer = AutoTokenizer.from_pretrained(job.checkpoint)
    model = AutoModel.from_pretrained(job.checkpoint)
    model.to(job.device)
    model.eval()

    depth = getattr(model.config, "num_hidden_layers", None)
    if depth is None or not 0 <= job.layer <= depth:
        raise ValueError(f"layer {job.layer} outside the checkpoint depth [0, {depth}]")
    d = int(model.config.hidden_size)
    if d % 2 != 0:
        raise ValueError(f"checkpoint hidden size {d} is odd; VEMB needs an even dimension")
    max_len = int(getattr(model.config, "max_position_embeddings", tokenizer.model_max_length))

    sentences = parse_conllu(Path(job.input_path).read_bytes())
    truncated = []
    zero_padded_words = 0
    out_sentences = []
    with torch.no_grad():
        for start in range(0, len(sentences), job.batch_size):
            chunk = sentences[start:start + job.batch_size]
            encoded = tokenizer(
                [s.words for s in chunk],
                is_split_into_words=True,
                padding=True,
                truncation=True,
                max_length=max_len,
                return_tensors="pt",
            )
            inputs = {k: v.to(job.device) for k, v in encoded.items()}
            outputs = model(**inputs, output_hidden_states=True)
            hidden = outputs.hidden_states  # index 0 = embedding output
            lower = hidden[job.layer].cpu().numpy().astype(np.float64)
            final = hidden[-1].cpu().numpy().astype(np.float64)
            input_ids = encoded["input_ids"].cpu().numpy()
            mask = encoded["attention_mask"].cpu().numpy()
            for b, sent in enumerate(chunk):
                index = start + b
                n_tokens = int(mask[b].sum())
                word_ids = encoded.word_ids(batch_index=b)[:n_tokens]
                covered = {w for w in word_ids if w is not None}
                if len(covered) < len(sent.words):
                    truncated.append(index)
                    print(
                        f"warning: sentence {index} truncated to {max_len} subwords; "
                        f"{len(sent.words) - len(covered)} word vectors zero-padded",
                        file=sys.stderr,
                    )
                token_vectors, lost = _pool_word_vectors(final[b, :n_tokens], word_ids, len(sent.words))
                zero_padded_words += lost
                record = EmbeddingRecord(
                    cls_layer2=lower[b, 0],
                    cls_final=final[b, 0],
                    token_vectors=token_vectors,
                )
                subwords = [
                    tokenizer.convert_ids_to_tokens(int(tid))
                    for tid, wid in zip(input_ids[b, :n_tokens], word_ids)
                    if wid is not None
                ]
                out_sentences.append(replace(
                    sent,
                    subword_tokens=subwords if subwords else list(sent.words),
                    embedding=record,
                ))

    corpus = VarietyCorpus(job.variety_id, out_sentences, "train")
    write_embeddings(job.output_path, corpus)
    write_token_sidecar(job.sidecar_path(), corpus)
    manifest = {
        "checkpoint": str(job.checkpoint),
        "dimension": d,
        "layer": job.layer,
        "pooling": "mean of final-layer subword states per word",
        "sentences": len(out_sentences),
        "truncated_sentences": truncated,
        "zero_padded_words": zero_padded_words,
    }
    job.manifest_path().write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    return corpus


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vemb-export",
        description="Export a CoNLL-U treebank to a VEMB embedding file.",
    )
    parser.add_argument("checkpoint", help="model name or local checkpoint directory")
    parser.add_argument("input", help="CoNLL-U file to encode")
    parser.add_argument("output", help="VEMB file to write")
    parser.add_argument("--layer", type=int, default=2,
                        help="hidden layer for the similarity feature (embeddings = 0)")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--variety-id", default="xx")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    job = ExportJob(
        checkpoint=args.checkpoint,
        input_path=args.input,
        output_path=args.output,
        layer=args.layer,
        batch_size=args.batch_size,
        device=args.device,
        variety_id=args.variety_id,
    )
    try:
        corpus = export(job)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(corpus)} records to {job.output_path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
