import numpy as np
import pytest

from varietylab.nn import (
    Param,
    adam_step,
    max_rel_error,
    numeric_gradient,
    zero_grads,
)
from varietylab.tasks import (
    DepHead,
    PosHead,
    dep_forward,
    dep_loss,
    dep_predict,
    greedy_heads,
    las,
    pos_forward,
    pos_loss,
    token_f1,
    uas,
)


class TestPosHead:
    def test_zero_init_uniform_loss(self):
        rng = np.random.default_rng(0)
        head = PosHead.create(rng, 4, 5)
        head.classifier.weight.value[...] = 0.0
        head.classifier.bias.value[...] = 0.0
        loss, _ = pos_loss(head, np.ones((3, 4)), [0, 2, 4])
        assert loss == pytest.approx(np.log(5), rel=1e-12)

    def test_single_word(self):
        rng = np.random.default_rng(1)
        head = PosHead.create(rng, 4, 3)
        h = rng.normal(size=(1, 4))
        loss, _ = pos_loss(head, h, [1])
        logits = pos_forward(head, h)
        z = logits - logits.max()
        p = np.exp(z) / np.exp(z).sum()
        assert loss == pytest.approx(-np.log(p[0, 1]), rel=1e-10)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        head = PosHead.create(rng, 4, 3)
        h = Param(rng.normal(size=(5, 4)))
        labels = rng.integers(0, 3, size=5)

        zero_grads(head.params())
        _, grad_h = pos_loss(head, h.value, labels)
        analytic = {id(p): p.grad.copy() for p in head.params()}

        def value_only():
            logits = pos_forward(head, h.value)
            z = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
            return float(-np.log(p[np.arange(5), labels]).mean())

        for p in head.params():
            assert max_rel_error(analytic[id(p)], numeric_gradient(value_only, p.value)) < 1e-6
        assert max_rel_error(grad_h, numeric_gradient(value_only, h.value)) < 1e-6


class TestDepHead:
    def test_arc_shape(self):
        rng = np.random.default_rng(3)
        head = DepHead.create(rng, 6, 4, 3)
        arc, rel = dep_forward(head, rng.normal(size=(4, 6)), [0, 1, 2, 3])
        assert arc.shape == (4, 5)
        assert rel.shape == (4, 3)

    def test_single_word_predicts_root(self):
        rng = np.random.default_rng(4)
        head = DepHead.create(rng, 6, 4, 3)
        pred_heads, _ = dep_predict(head, rng.normal(size=(1, 6)))
        assert pred_heads.tolist() == [0]
        assert uas(pred_heads, [0]) == 1.0

    def test_gold_head_out_of_range(self):
        rng = np.random.default_rng(5)
        head = DepHead.create(rng, 6, 4, 3)
        with pytest.raises(ValueError):
            dep_loss(head, rng.normal(size=(2, 6)), [0, 3], [0, 0])

    def test_gradients_match_finite_differences(self):
        # oracle: central differences on a 3-word fixture
        rng = np.random.default_rng(6)
        head = DepHead.create(rng, 5, 3, 2)
        h = Param(rng.normal(size=(3, 5)))
        gold_heads = np.array([0, 1, 2])
        gold_rels = np.array([1, 0, 1])

        zero_grads(head.params())
        _, grad_h = dep_loss(head, h.value, gold_heads, gold_rels)
        analytic = {id(p): p.grad.copy() for p in head.params()}

        def value_only():
            from varietylab.nn import softmax_xent

            arc, rel_logits = dep_forward(head, h.value, gold_heads)
            l1, _ = softmax_xent(arc, gold_heads)
            l2, _ = softmax_xent(rel_logits, gold_rels)
            return l1 + l2

        for p in head.params():
            assert max_rel_error(analytic[id(p)], numeric_gradient(value_only, p.value)) < 1e-6
        assert max_rel_error(grad_h, numeric_gradient(value_only, h.value)) < 1e-6

    def test_greedy_heads_masks_self(self):
        scores = np.zeros((2, 3))
        scores[0, 1] = 10.0  # self arc for word 1, must be ignored
        scores[0, 2] = 1.0
        scores[1, 0] = 1.0
        heads = greedy_heads(scores)
        assert heads[0] != 1
        assert heads.tolist() == [2, 0]

    def test_greedy_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            scores = rng.normal(size=(4, 5))
            base = greedy_heads(scores)
            assert np.array_equal(base, greedy_heads(3.0 * scores + 1.0))
            assert np.array_equal(base, greedy_heads(np.exp(scores / 2)))

    def test_overfits_single_sentence(self):
        # sanity: memorizing one sentence drives the loss under 0.01
        rng = np.random.default_rng(8)
        head = DepHead.create(rng, 6, 4, 3)
        h = rng.normal(size=(4, 6))
        gold_heads = np.array([0, 1, 2, 3])
        gold_rels = np.array([0, 1, 2, 1])
        loss = None
        for t in range(1, 501):
            zero_grads(head.params())
            loss, _ = dep_loss(head, h, gold_heads, gold_rels)
            if loss < 0.01:
                break
            adam_step(head.params(), lr=0.01, t=t)
        assert loss < 0.01


class TestMetrics:
    def test_all_correct(self):
        assert uas([0, 1], [0, 1]) == 1.0
        assert las([0, 1], ["a", "b"], [0, 1], ["a", "b"]) == 1.0

    def test_hand_counts(self):
        # oracle: 3 of 4 heads correct; 2 of those also carry the right label
        pred_heads = [0, 1, 2, 9]
        gold_heads = [0, 1, 2, 3]
        pred_rels = ["a", "b", "x", "d"]
        gold_rels = ["a", "b", "c", "d"]
        assert uas(pred_heads, gold_heads) == 0.75
        assert las(pred_heads, pred_rels, gold_heads, gold_rels) == 0.5

    def test_las_bounded_by_uas_randomized(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            n = int(rng.integers(1, 30))
            ph = rng.integers(0, 5, size=n)
            gh = rng.integers(0, 5, size=n)
            pr = rng.integers(0, 3, size=n)
            gr = rng.integers(0, 3, size=n)
            assert las(ph, pr, gh, gr) <= uas(ph, gh)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            uas([0], [0, 1])
        with pytest.raises(ValueError):
            las([0], ["a"], [0, 1], ["a", "b"])

    def test_metrics_invariant_to_sentence_order(self):
        s1 = ([0, 1], [0, 2])
        s2 = ([2, 0, 1], [2, 0, 3])
        flat_a = uas(s1[0] + s2[0], s1[1] + s2[1])
        flat_b = uas(s2[0] + s1[0], s2[1] + s1[1])
        assert flat_a == flat_b


class TestTokenF1:
    def test_perfect(self):
        assert token_f1(["A", "B"], ["A", "B"]) == 1.0

    def test_seven_of_ten(self):
        # oracle: micro P = R = 0.7 by hand
        pred = ["A"] * 7 + ["B"] * 3
        gold = ["A"] * 7 + ["C"] * 3
        assert token_f1(pred, gold) == pytest.approx(0.7, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            token_f1([], [])

    def test_equals_accuracy_with_one_prediction_per_token(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            n = int(rng.integers(1, 40))
            pred = rng.integers(0, 4, size=n).tolist()
            gold = rng.integers(0, 4, size=n).tolist()
            accuracy = sum(p == g for p, g in zip(pred, gold)) / n
            assert token_f1(pred, gold) == pytest.approx(accuracy, rel=1e-12)

    def test_range(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(1, 20))
            f1 = token_f1(rng.integers(0, 3, size=n).tolist(), rng.integers(0, 3, size=n).tolist())
            assert 0.0 <= f1 <= 1.0
