import numpy as np
import pytest

from folioseg.errors import DataError
from folioseg.metrics import aggregate, evaluate, mean_std, pool


def naive_metrics(gt, pred, bin_mask):
    """Per-pixel loop oracle for the three counts."""
    total = correct = fg = fg_correct = 0
    for y in range(gt.shape[0]):
        for x in range(gt.shape[1]):
            total += 1
            d = 1 if gt[y, x] == pred[y, x] else 0
            correct += d
            if bin_mask[y, x] == 1:
                fg += 1
                fg_correct += d
    return total, correct, fg, fg_correct


def test_perfect_prediction():
    gt = np.array([[1, 2], [3, 1]])
    b = np.ones((2, 2), dtype=int)
    rep = evaluate(gt, gt, b)
    assert rep.tpa == 1.0 and rep.fgpa == 1.0 and rep.fgpe == 0.0


def test_hand_worked_2x2_case():
    b = np.array([[1, 0], [0, 1]])
    gt = np.array([[2, 1], [1, 3]])
    pred = np.array([[2, 1], [1, 1]])
    rep = evaluate(gt, pred, b)
    assert rep.tpa == 3 / 4
    assert rep.fgpa == 1 / 2
    assert rep.fgpe == 1 / 2


def test_background_mutations_leave_fgpa_unchanged():
    rng = np.random.default_rng(0)
    gt = rng.integers(1, 4, (16, 16))
    pred = rng.integers(1, 4, (16, 16))
    b = (rng.random((16, 16)) < 0.4).astype(int)
    base = evaluate(gt, pred, b)
    mutated = pred.copy()
    bg = np.nonzero(b == 0)
    for i in range(len(bg[0])):
        mutated[bg[0][i], bg[1][i]] = rng.integers(1, 4)
    rep = evaluate(gt, mutated, b)
    assert rep.fg_correct == base.fg_correct and rep.foreground == base.foreground
    assert rep.fgpa == base.fgpa


def test_matches_naive_loop():
    rng = np.random.default_rng(1)
    for _ in range(50):
        h, w = rng.integers(1, 12, size=2)
        gt = rng.integers(0, 4, (h, w))
        pred = rng.integers(0, 4, (h, w))
        b = rng.integers(0, 2, (h, w))
        rep = evaluate(gt, pred, b)
        total, correct, fg, fg_correct = naive_metrics(gt, pred, b)
        assert (rep.total, rep.correct, rep.foreground, rep.fg_correct) == (
            total, correct, fg, fg_correct)


def test_no_foreground_reports_absent():
    gt = np.ones((2, 2), dtype=int)
    with pytest.warns(UserWarning, match="undefined"):
        rep = evaluate(gt, gt, np.zeros((2, 2), dtype=int))
    assert rep.fgpa is None and rep.fgpe is None
    assert rep.tpa == 1.0


def test_dim_mismatch():
    with pytest.raises(DataError, match="mismatch"):
        evaluate(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 3)))


def test_majority_class_baseline():
    # predicting the most frequent foreground class scores its frequency
    rng = np.random.default_rng(2)
    gt = rng.integers(1, 4, (20, 20))
    b = (rng.random((20, 20)) < 0.5).astype(int)
    freq = np.bincount(gt[b == 1], minlength=4)
    majority = int(freq[1:].argmax()) + 1
    rep = evaluate(gt, np.full_like(gt, majority), b)
    assert rep.fgpa == freq[majority] / b.sum()


def test_confusion_counts_foreground_only():
    gt = np.array([[1, 2]])
    pred = np.array([[2, 2]])
    b = np.array([[1, 0]])
    rep = evaluate(gt, pred, b, num_classes=2)
    assert rep.confusion.sum() == 1
    assert rep.confusion[1, 2] == 1


# ---------------------------------------------------------------------------
# Aggregation


def test_mean_std_two_points():
    mean, std = mean_std([0.9, 1.0])
    assert mean == pytest.approx(0.95)
    assert std == pytest.approx(0.07071, abs=1e-4)


def test_mean_std_identical_folds():
    assert mean_std([0.5, 0.5, 0.5])[1] == 0.0


def test_mean_std_single_fold():
    mean, std = mean_std([0.7])
    assert mean == 0.7 and std is None


def test_mean_std_empty():
    with pytest.raises(DataError):
        mean_std([])


def test_pool_is_micro_average():
    a = evaluate(np.array([[1]]), np.array([[1]]), np.array([[1]]))
    b = evaluate(np.array([[1, 2], [2, 2]]), np.array([[2, 2], [2, 2]]),
                 np.array([[1, 1], [0, 0]]))
    pooled = pool([a, b])
    assert pooled.total == 5 and pooled.correct == 4
    assert pooled.foreground == 3 and pooled.fg_correct == 2
    assert pooled.fgpa == 2 / 3


def test_aggregate_excludes_absent_fgpa():
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        blank = evaluate(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), dtype=int))
        inked = evaluate(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2), dtype=int))
    with pytest.warns(UserWarning, match="excluded"):
        agg = aggregate([blank, inked])
    assert agg["fgpa"] == (1.0, None)
    assert agg["tpa"][0] == 1.0
