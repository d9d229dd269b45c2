import numpy as np
import pytest

from fusionerc.metrics import (
    compute_metrics,
    confusion_matrix,
    emit_report,
    read_confusion_csv,
    report_from_confusion,
)
from oracles import brute_force_metrics


def test_perfect():
    r = compute_metrics([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert r.accuracy == 1.0 and r.weighted_f1 == 1.0


def test_small_hand_case():
    r = compute_metrics([0, 0, 1], [0, 1, 1], 2)
    assert r.per_class_f1.tolist() == pytest.approx([2 / 3, 2 / 3], abs=1e-15)
    assert r.weighted_f1 == pytest.approx(2 / 3, abs=1e-15)
    assert r.accuracy == pytest.approx(2 / 3, abs=1e-15)


def test_all_one_class_balanced():
    r = compute_metrics([0, 0, 1, 1], [0, 0, 0, 0], 2)
    assert r.accuracy == 0.5
    assert r.weighted_f1 == pytest.approx(1 / 3, abs=1e-15)
    assert r.per_class_f1[1] == 0.0


def test_confusion_invariants():
    rng = np.random.default_rng(0)
    y, p = rng.integers(0, 5, 200), rng.integers(0, 5, 200)
    r = compute_metrics(y, p, 5)
    np.testing.assert_array_equal(r.confusion.sum(1), np.bincount(y, minlength=5))
    assert r.accuracy == np.trace(r.confusion) / 200


def test_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        c = int(rng.integers(2, 8))
        n = int(rng.integers(1, 60))
        y, p = rng.integers(0, c, n), rng.integers(0, c, n)
        r = compute_metrics(y, p, c)
        acc, wf1, per = brute_force_metrics(y.tolist(), p.tolist(), c)
        assert r.accuracy == acc
        assert r.weighted_f1 == wf1
        assert r.per_class_f1.tolist() == per


def test_validation():
    with pytest.raises(ValueError):
        compute_metrics([0, 1], [0], 2)
    with pytest.raises(ValueError):
        compute_metrics([0, 2], [0, 1], 2)
    with pytest.raises(ValueError):
        report_from_confusion(np.zeros((2, 2), dtype=int))
    assert confusion_matrix([], [], 3).sum() == 0


def test_emit_report(tmp_path):
    rng = np.random.default_rng(2)
    y, p = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    r = compute_metrics(y, p, 4)
    paths = emit_report(r, tmp_path / "rep")
    cm = read_confusion_csv(paths["confusion"])
    np.testing.assert_array_equal(cm, r.confusion)
    rows = paths["per_class"].read_text().strip().splitlines()[1:]
    assert len(rows) == 4
    # recompute weighted F1 from the CSV contents and compare with the summary line
    again = report_from_confusion(cm)
    summary = paths["summary"].read_text()
    line = next(l for l in summary.splitlines() if l.startswith("weighted F1"))
    assert float(line.split()[-1]) == pytest.approx(again.weighted_f1, abs=5e-7)
    assert [float(row.split(",")[2]) for row in rows] == again.per_class_f1.tolist()


def test_emit_report_class_names(tmp_path):
    r = compute_metrics([0, 1], [0, 1], 2)
    emit_report(r, tmp_path, class_names=["joy", "anger"])
    assert "anger" in (tmp_path / "per_class_f1.csv").read_text()
    with pytest.raises(ValueError):
        emit_report(r, tmp_path, class_names=["one"])


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(compute_metrics([0], [0], 1), blocker / "sub")
