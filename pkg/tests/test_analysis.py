import numpy as np
import pytest

from varietylab.analysis import cka_report, format_report, linear_cka
from varietylab.corpus import EmbeddingRecord, Sentence, VarietyCorpus


def gram_cka(x, y):
    """Oracle: centered-Gram (HSIC) route, independent of the feature-space path."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = x.shape[0]
    h = np.eye(n) - np.ones((n, n)) / n
    k = h @ (x @ x.T) @ h
    l = h @ (y @ y.T) @ h
    return float(np.sum(k * l) / (np.linalg.norm(k) * np.linalg.norm(l)))


def cls_corpus(vid, rows, d=None):
    rows = np.asarray(rows, dtype=np.float64)
    d = d or rows.shape[1]
    sentences = []
    for row in rows:
        rec = EmbeddingRecord(np.zeros(d), row, np.zeros((1, d)))
        sentences.append(Sentence(words=["w"], subword_tokens=["w"], embedding=rec))
    return VarietyCorpus(vid, sentences, "dev")


class TestLinearCka:
    def test_self_similarity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(10, 4))
        assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(8, 3))
        for c in (2.0, -0.5, 1e-3):
            assert linear_cka(x, c * x) == pytest.approx(1.0, abs=1e-9)

    def test_rotation_fixture(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
        rot90 = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert linear_cka(x, x @ rot90) == pytest.approx(1.0, abs=1e-12)

    def test_fixed_fixture_against_gram_oracle(self):
        x = np.array([[2.0, 0.0], [0.0, 1.0], [-1.0, 3.0], [1.0, -2.0]])
        y = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, -1.0], [3.0, 0.0, 1.0], [-2.0, 1.0, 2.0]])
        frozen = 0.70042951376951446  # computed once with gram_cka
        assert linear_cka(x, y) == pytest.approx(frozen, abs=1e-12)
        assert gram_cka(x, y) == pytest.approx(frozen, abs=1e-12)

    def test_matches_gram_oracle_randomized(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            n = int(rng.integers(3, 12))
            x = rng.normal(size=(n, int(rng.integers(2, 6))))
            y = rng.normal(size=(n, int(rng.integers(2, 6))))
            assert linear_cka(x, y) == pytest.approx(gram_cka(x, y), abs=1e-9)

    def test_orthogonal_and_isotropic_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(12, 5))
        y = rng.normal(size=(12, 5))
        base = linear_cka(x, y)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        assert linear_cka(x @ q, y) == pytest.approx(base, abs=1e-9)
        assert linear_cka(x, y @ q) == pytest.approx(base, abs=1e-9)
        assert linear_cka(2.5 * x, 0.3 * y) == pytest.approx(base, abs=1e-9)

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(9, 4))
        y = rng.normal(size=(9, 4))
        assert linear_cka(x + 7.0, y - 3.0) == pytest.approx(linear_cka(x, y), abs=1e-9)

    def test_range(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.normal(size=(6, 3))
            y = rng.normal(size=(6, 3))
            assert 0.0 <= linear_cka(x, y) <= 1.0 + 1e-12

    def test_row_mismatch(self):
        with pytest.raises(ValueError, match="row"):
            linear_cka(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_too_few_rows(self):
        with pytest.raises(ValueError, match="two rows"):
            linear_cka(np.ones((1, 2)), np.ones((1, 2)))

    def test_zero_variance(self):
        with pytest.raises(ValueError, match="zero-variance"):
            linear_cka(np.ones((4, 2)), np.random.default_rng(6).normal(size=(4, 2)))


class TestCkaReport:
    def test_single_variety(self):
        rng = np.random.default_rng(7)
        report = cka_report(None, [cls_corpus("aa", rng.normal(size=(5, 4)))])
        assert report.matrix.shape == (1, 1)
        assert report.matrix[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert report.feature_stage == "pretrained"

    def test_unit_diagonal_and_symmetry(self):
        rng = np.random.default_rng(8)
        corpora = [cls_corpus(f"v{i}", rng.normal(size=(6, 4)) + i) for i in range(3)]
        report = cka_report(None, corpora, seed=3)
        assert np.allclose(np.diag(report.matrix), 1.0, atol=1e-9)
        assert np.array_equal(report.matrix, report.matrix.T)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(9)
        corpora = [cls_corpus(f"v{i}", rng.normal(size=(9, 4))) for i in range(2)]
        a = cka_report(None, corpora, sample_size=5, seed=4)
        b = cka_report(None, corpora, sample_size=5, seed=4)
        assert np.array_equal(a.matrix, b.matrix)
        c = cka_report(None, corpora, sample_size=5, seed=5)
        assert not np.array_equal(a.matrix, c.matrix)

    def test_sample_sizes_equalized_to_minimum(self):
        rng = np.random.default_rng(10)
        corpora = [
            cls_corpus("aa", rng.normal(size=(12, 4))),
            cls_corpus("bb", rng.normal(size=(7, 4))),
        ]
        report = cka_report(None, corpora)
        assert report.sample_size == 7

    def test_needs_two_sentences(self):
        rng = np.random.default_rng(11)
        with pytest.raises(ValueError, match="at least two"):
            cka_report(None, [cls_corpus("aa", rng.normal(size=(1, 4)))])

    def test_missing_embeddings(self):
        s = Sentence(words=["w"], subword_tokens=["w"])
        with pytest.raises(ValueError, match="no embedding"):
            cka_report(None, [VarietyCorpus("aa", [s, s], "dev")])

    def test_format(self):
        rng = np.random.default_rng(12)
        corpora = [cls_corpus(f"v{i}", rng.normal(size=(4, 4))) for i in range(2)]
        text = format_report(cka_report(None, corpora))
        lines = text.strip().split("\n")
        assert lines[2] == "variety_id\tv0\tv1"
        assert lines[3].startswith("v0\t")
