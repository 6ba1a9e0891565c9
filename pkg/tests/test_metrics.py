import csv
import math

import numpy as np
import pytest

from peakcgan.metrics import (TABLE5_COLUMNS, UndefinedMetricError, cosine_similarity,
                              detection_scores, export_mesh, peak_count_match, pearson,
                              quality_report, read_mesh, write_table5)
from peakcgan.simulator import TABLE4A_CONDITIONS, expected_peaks, noiseless, simulate_spectrum
from peakcgan.spectra import ConditionLabel, Scan, Spectrum


def brute_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def brute_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    return cov / math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))


# ---------------------------------------------------------------- similarity


def test_cosine_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 5]) == 0.0
    assert cosine_similarity([1, 2, 3], [3, 2, 1]) == pytest.approx(10 / 14, abs=1e-15)


def test_cosine_errors():
    with pytest.raises(UndefinedMetricError):
        cosine_similarity([0, 0], [1, 2])
    with pytest.raises(ValueError):
        cosine_similarity([1, 2], [1, 2, 3])


def test_pearson_examples():
    a = np.array([1.0, 2, 3, 4])
    assert pearson(a, a) == pytest.approx(1.0)
    assert pearson(a, -a) == pytest.approx(-1.0)
    assert abs(pearson(a, [2, 4, 5, 9]) - brute_pearson([1, 2, 3, 4], [2, 4, 5, 9])) < 1e-12


def test_pearson_errors():
    with pytest.raises(UndefinedMetricError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [2])


@pytest.mark.parametrize("seed", range(5))
def test_similarity_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=40), rng.normal(size=40)
    assert abs(cosine_similarity(a, b) - brute_cosine(a.tolist(), b.tolist())) < 1e-10
    assert abs(pearson(a, b) - brute_pearson(a.tolist(), b.tolist())) < 1e-10


def test_symmetry_and_invariances(rng):
    a, b = rng.random(50), rng.random(50)
    assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-15)
    assert pearson(a, b) == pytest.approx(pearson(b, a), abs=1e-15)
    assert cosine_similarity(a, 3.7 * b) == pytest.approx(cosine_similarity(a, b), abs=1e-12)
    assert pearson(2.5 * a - 4.0, 0.1 * b + 9.0) == pytest.approx(pearson(a, b), abs=1e-12)


# ---------------------------------------------------------------- peaks


def test_peak_count_examples(rng):
    x = simulate_spectrum(TABLE4A_CONDITIONS[0], seed=1)[0]
    n = peak_count_match(x, x)
    assert n[0] == n[1]
    assert peak_count_match(x.tic, np.zeros(x.T)) == (n[0], 0)


def test_peak_count_simulator_pair():
    label = ConditionLabel("EtOH", ("DMMP", "DFP"))
    assert len(expected_peaks(label)) == 3
    a, ta = simulate_spectrum(label, noiseless(), seed=0)
    b, tb = simulate_spectrum(label, noiseless(), seed=1)
    assert len(ta.peaks) == len(tb.peaks) == 3
    assert peak_count_match(a, b) == (3, 3)


# ---------------------------------------------------------------- mesh


def _mesh_spectrum():
    scans = [Scan(7, np.array([0.5, 1.0, 0.25])), Scan(2, np.array([1.0, 0.0, 1 / 3]))]
    return Spectrum(np.linspace(0, 1, 10), scans, None, np.arange(10) * 0.5)


def test_export_mesh_rows_sorted_and_round_trip(tmp_path):
    spec = _mesh_spectrum()
    path = tmp_path / "mesh.csv"
    assert export_mesh(spec, path) == 6
    rows = read_mesh(path)
    assert len(rows) == 6
    assert rows == sorted(rows, key=lambda r: (r[0], r[1]))
    assert rows[0] == (1.0, 0, 1.0) and rows[2] == (1.0, 2, 1 / 3)
    assert [r[2] for r in rows[3:]] == [0.5, 1.0, 0.25]
    with open(path) as fh:
        assert next(csv.reader(fh)) == ["t", "mz", "intensity"]


def test_export_mesh_needs_scans(tmp_path):
    with pytest.raises(ValueError):
        export_mesh(Spectrum(np.ones(5)), tmp_path / "m.csv")


# ---------------------------------------------------------------- detection


def _multi(sets, k=6):
    out = np.zeros((len(sets), k), dtype=bool)
    for i, s in enumerate(sets):
        out[i, list(s)] = True
    return out


# ten records, hand-tallied per class (tp, fp, fn):
#   0: (3,0,0)  1: (1,1,1)  2: (2,0,0)  3: (2,0,1)  4: (1,0,1)  5: (0,1,0)
CONFUSION_LABELS = [{0}, {0}, {1}, {1}, {2, 3}, {2, 3}, {3}, {4}, {4}, {0}]
CONFUSION_PREDS = [{0}, {0, 1}, {1}, set(), {2, 3}, {2}, {3}, {4}, {5}, {0}]


def test_detection_scores_confusion_fixture():
    s = detection_scores(_multi(CONFUSION_PREDS), _multi(CONFUSION_LABELS))
    assert s.n == 10
    assert s.accuracy == pytest.approx(0.6)
    assert s.precision.tolist() == pytest.approx([1, 0.5, 1, 1, 1, 0])
    assert s.recall.tolist() == pytest.approx([1, 0.5, 1, 2 / 3, 0.5, 0])
    assert s.f1.tolist() == pytest.approx([1, 0.5, 1, 0.8, 2 / 3, 0])
    assert s.macro_f1 == pytest.approx((1 + 0.5 + 1 + 0.8 + 2 / 3) / 6)
    assert s.macro_f1 <= s.f1.max()


def test_detection_scores_perfect_and_zero_convention():
    Y = _multi([{0}, {1, 2}, {3}])
    s = detection_scores(Y, Y)
    assert s.accuracy == 1.0
    # classes 4 and 5 never appear and are never predicted
    assert s.f1.tolist() == [1, 1, 1, 1, 0, 0]
    assert s.precision[5] == s.recall[5] == 0


def test_detection_scores_shape_mismatch():
    with pytest.raises(ValueError):
        detection_scores(np.zeros((2, 6)), np.zeros((3, 6)))


def test_table5_csv(tmp_path):
    s = detection_scores(_multi(CONFUSION_PREDS), _multi(CONFUSION_LABELS))
    path = tmp_path / "t5.csv"
    write_table5([s.row(12), s.row(123)], path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == TABLE5_COLUMNS
    assert rows[1]["train_size"] == "123" and float(rows[0]["DFP_F1"]) == pytest.approx(0.5)


# ---------------------------------------------------------------- report


def _sets(n=2):
    out = []
    for i, label in enumerate(TABLE4A_CONDITIONS[:3]):
        out += [simulate_spectrum(label, seed=10 * i + j)[0] for j in range(n)]
    return out


def test_quality_report_self_comparison():
    real = _sets()
    rep = quality_report(real, real)
    assert len(rep.gc_rows) == 3
    for r in rep.gc_rows:
        assert r.present and r.peaks_real == r.peaks_gen
        assert r.pcc == pytest.approx(1.0) and r.cosine == pytest.approx(1.0)
    assert rep.ms_rows and all(r.present and r.cosine == pytest.approx(1.0) for r in rep.ms_rows)


def test_quality_report_missing_condition(tmp_path):
    real = _sets()
    gen = [s for s in real if s.condition.key != TABLE4A_CONDITIONS[1].key]
    rep = quality_report(real, gen)
    absent = [r for r in rep.gc_rows if not r.present]
    assert [r.condition for r in absent] == [TABLE4A_CONDITIONS[1].key]
    a, b = rep.write(tmp_path)
    with open(a) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 and sum(r["present"] == "0" for r in rows) == 1


def test_quality_report_metric_ranges():
    real = _sets()
    gen = _sets()[::-1]
    rep = quality_report(real, [simulate_spectrum(ConditionLabel("THF", ("DMMP",)), seed=3)[0]] + gen)
    for r in rep.gc_rows:
        if r.present:
            assert -1 <= r.pcc <= 1 and -1 <= r.cosine <= 1
