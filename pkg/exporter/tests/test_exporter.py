import json

import numpy as np
import pytest
import torch
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers
from tokenizers.processors import TemplateProcessing
from transformers import AutoModel, AutoTokenizer, BertConfig, BertModel, PreTrainedTokenizerFast

from varietylab.corpus import load_embeddings, parse_conllu, read_token_sidecar, VarietyCorpus

from vemb_exporter import ExportJob, export, main

PIECES = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "cat", "sat", "mat", "on", "a", "dog", "ran", "barked",
    "un", "##hap", "##pi", "##ness", "##s", "##ly", "quick", "slow",
]


def conllu_line(i, form, head):
    return f"{i}\t{form}\t_\t_\t_\t_\t{head}\t_\t_\t_"


def write_treebank(path, sentences):
    blocks = []
    for words in sentences:
        blocks.append("\n".join(conllu_line(i + 1, w, 0 if i == 0 else i) for i, w in enumerate(words)))
    path.write_text("\n\n".join(blocks) + ("\n" if blocks else ""), encoding="utf-8")


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    """A tiny randomly initialized encoder + WordPiece tokenizer, saved locally."""
    out = tmp_path_factory.mktemp("ckpt") / "tiny"
    vocab = {p: i for i, p in enumerate(PIECES)}
    tok = Tokenizer(models.WordPiece(vocab, unk_token="[UNK]", max_input_chars_per_word=100))
    tok.normalizer = normalizers.Lowercase()
    tok.pre_tokenizer = pre_tokenizers.WhitespaceSplit()
    tok.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]",
        cls_token="[CLS]", sep_token="[SEP]", mask_token="[MASK]",
    )
    config = BertConfig(
        vocab_size=len(PIECES), hidden_size=16, num_hidden_layers=3,
        num_attention_heads=2, intermediate_size=32, max_position_embeddings=20,
    )
    torch.manual_seed(0)
    BertModel(config).save_pretrained(out)
    fast.save_pretrained(out)
    return out


@pytest.fixture()
def treebank(tmp_path):
    path = tmp_path / "tb.conllu"
    words = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "quick", "slow"]
    sentences = [[words[i % len(words)], words[(i + 1) % len(words)], words[(i + 3) % len(words)]]
                 for i in range(10)]
    write_treebank(path, sentences)
    return path


class TestExportRoundTrip:
    def test_loads_and_word_counts_match(self, checkpoint, treebank, tmp_path):
        out = tmp_path / "tb.vemb"
        job = ExportJob(checkpoint=str(checkpoint), input_path=str(treebank), output_path=str(out))
        corpus = export(job)
        assert len(corpus) == 10

        bare = VarietyCorpus("xx", parse_conllu(treebank.read_bytes()), "train")
        loaded = load_embeddings(out, bare)
        for sent in loaded.sentences:
            assert sent.embedding.token_vectors.shape == (len(sent.words), 16)

        sidecar = read_token_sidecar(job.sidecar_path())
        assert len(sidecar) == 10
        manifest = json.loads(job.manifest_path().read_text())
        assert manifest["dimension"] == 16
        assert manifest["sentences"] == 10
        assert manifest["truncated_sentences"] == []

    def test_reexport_byte_identical(self, checkpoint, treebank, tmp_path):
        a, b = tmp_path / "a.vemb", tmp_path / "b.vemb"
        export(ExportJob(checkpoint=str(checkpoint), input_path=str(treebank), output_path=str(a)))
        export(ExportJob(checkpoint=str(checkpoint), input_path=str(treebank), output_path=str(b)))
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.vemb.tokens").read_text() == (tmp_path / "b.vemb.tokens").read_text()

    def test_empty_treebank(self, checkpoint, tmp_path):
        src = tmp_path / "empty.conllu"
        src.write_text("")
        out = tmp_path / "empty.vemb"
        corpus = export(ExportJob(checkpoint=str(checkpoint), input_path=str(src), output_path=str(out)))
        assert len(corpus) == 0
        bare = VarietyCorpus("xx", [], "train")
        assert len(load_embeddings(out, bare)) == 0


class TestPooling:
    def test_multi_subword_word_matches_manual_pooling(self, checkpoint, tmp_path):
        # oracle: run the encoder by hand and average the word's subword states
        src = tmp_path / "one.conllu"
        write_treebank(src, [["unhappiness"]])
        out = tmp_path / "one.vemb"
        job = ExportJob(checkpoint=str(checkpoint), input_path=str(src), output_path=str(out))
        corpus = export(job)
        got = corpus.sentences[0].embedding

        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = AutoModel.from_pretrained(checkpoint)
        model.eval()
        encoded = tokenizer([["unhappiness"]], is_split_into_words=True, return_tensors="pt")
        word_ids = encoded.word_ids(batch_index=0)
        assert sum(1 for w in word_ids if w == 0) >= 3  # un ##hap ##pi ##ness
        with torch.no_grad():
            hidden = model(**encoded, output_hidden_states=True).hidden_states
        final = hidden[-1][0].numpy()
        rows = [final[i] for i, w in enumerate(word_ids) if w == 0]
        manual = np.mean(rows, axis=0)
        assert np.max(np.abs(got.token_vectors[0] - manual)) < 1e-5
        assert np.max(np.abs(got.cls_layer2 - hidden[2][0, 0].numpy())) < 1e-5
        assert np.max(np.abs(got.cls_final - final[0])) < 1e-5

    def test_sidecar_records_subword_strings(self, checkpoint, tmp_path):
        src = tmp_path / "one.conllu"
        write_treebank(src, [["unhappiness", "cat"]])
        out = tmp_path / "one.vemb"
        job = ExportJob(checkpoint=str(checkpoint), input_path=str(src), output_path=str(out))
        export(job)
        (tokens,) = read_token_sidecar(job.sidecar_path())
        assert tokens == ["un", "##hap", "##pi", "##ness", "cat"]


class TestLayerHandling:
    def test_cls_layer2_differs_from_cls_final(self, checkpoint, treebank, tmp_path):
        out = tmp_path / "tb.vemb"
        corpus = export(ExportJob(checkpoint=str(checkpoint), input_path=str(treebank),
                                  output_path=str(out)))
        for sent in corpus.sentences:
            gap = np.linalg.norm(sent.embedding.cls_layer2 - sent.embedding.cls_final)
            assert gap > 0.0

    def test_layer_out_of_range(self, checkpoint, treebank, tmp_path):
        job = ExportJob(checkpoint=str(checkpoint), input_path=str(treebank),
                        output_path=str(tmp_path / "x.vemb"), layer=7)
        with pytest.raises(ValueError, match="layer"):
            export(job)

    def test_layer_flag_changes_similarity_feature(self, checkpoint, treebank, tmp_path):
        a = export(ExportJob(checkpoint=str(checkpoint), input_path=str(treebank),
                             output_path=str(tmp_path / "a.vemb"), layer=1))
        b = export(ExportJob(checkpoint=str(checkpoint), input_path=str(treebank),
                             output_path=str(tmp_path / "b.vemb"), layer=2))
        assert not np.allclose(a.sentences[0].embedding.cls_layer2,
                               b.sentences[0].embedding.cls_layer2)
        assert np.allclose(a.sentences[0].embedding.cls_final,
                           b.sentences[0].embedding.cls_final)


class TestTruncation:
    def test_overlong_sentence_truncates_with_warning(self, checkpoint, tmp_path, capsys):
        # 30 words of 1 subword each exceeds the 20-position limit
        src = tmp_path / "long.conllu"
        write_treebank(src, [["cat"] * 30])
        out = tmp_path / "long.vemb"
        corpus = export(ExportJob(checkpoint=str(checkpoint), input_path=str(src),
                                  output_path=str(out)))
        err = capsys.readouterr().err
        assert "sentence 0 truncated" in err
        sent = corpus.sentences[0]
        assert sent.embedding.token_vectors.shape[0] == 30  # word count preserved
        assert np.array_equal(sent.embedding.token_vectors[-1], np.zeros(16))
        assert not np.array_equal(sent.embedding.token_vectors[0], np.zeros(16))
        manifest = json.loads((tmp_path / "long.vemb.manifest.json").read_text())
        assert manifest["truncated_sentences"] == [0]
        assert manifest["zero_padded_words"] > 0


class TestCli:
    def test_main_exports(self, checkpoint, treebank, tmp_path, capsys):
        out = tmp_path / "cli.vemb"
        code = main([str(checkpoint), str(treebank), str(out), "--layer", "2"])
        assert code == 0
        assert out.exists()
        assert "wrote 10 records" in capsys.readouterr().err

    def test_main_reports_errors(self, checkpoint, treebank, tmp_path, capsys):
        code = main([str(checkpoint), str(treebank), str(tmp_path / "x.vemb"), "--layer", "9"])
        assert code == 1
        assert "error" in capsys.readouterr().err
