"""Spectrum similarity, peak-count, and detection metrics plus report writers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .spectra import SOLUTES, Spectrum, detect_peaks, group_by_condition


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given inputs (zero or constant vectors)."""


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedMetricError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise UndefinedMetricError("pearson correlation of a constant vector")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def peak_count_match(real, gen, min_prominence=0.05, min_distance=None) -> tuple[int, int]:
    r = real.tic if isinstance(real, Spectrum) else real
    g = gen.tic if isinstance(gen, Spectrum) else gen
    return (len(detect_peaks(r, min_prominence, min_distance)),
            len(detect_peaks(g, min_prominence, min_distance)))


def export_mesh(spectrum: Spectrum, path) -> int:
    """Write (t, mz, intensity) rows sorted by (t, mz); returns the row count."""
    if not spectrum.scans:
        raise ValueError("spectrum has no mass scans to export")
    rows = []
    for scan in spectrum.scans:
        t = (float(spectrum.t_minutes[scan.t]) if spectrum.t_minutes is not None
             else float(scan.t))
        for mz, v in enumerate(np.asarray(scan.mz, dtype=np.float64)):
            rows.append((t, mz, float(v)))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mz", "intensity"])
        for t, mz, v in rows:
            w.writerow([repr(t), mz, repr(v)])
    return len(rows)


def read_mesh(path) -> list[tuple[float, int, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(float(t), int(mz), float(v)) for t, mz, v in r]


@dataclass
class DetectionScores:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    n: int

    def row(self, train_size=None) -> dict:
        out = {"train_size": train_size, "accuracy": self.accuracy}
        for k, name in enumerate(SOLUTES):
            out[f"{name}_P"] = float(self.precision[k])
            out[f"{name}_R"] = float(self.recall[k])
            out[f"{name}_F1"] = float(self.f1[k])
        out["avg_F1"] = self.macro_f1
        return out


def _ratio(num, den):
    return np.where(den > 0, num / np.where(den > 0, den, 1), 0.0)


def detection_scores(predictions, labels) -> DetectionScores:
    """Exact-set accuracy and per-class precision/recall/F1 (0/0 counts as 0)."""
    P = np.asarray(predictions).astype(bool)
    Y = np.asarray(labels).astype(bool)
    if P.shape != Y.shape:
        raise ValueError(f"prediction/label shapes differ: {P.shape} vs {Y.shape}")
    if P.ndim != 2:
        raise ValueError("expected [records, classes] multi-hot arrays")
    n = len(P)
    acc = float(np.mean(np.all(P == Y, axis=1))) if n else 0.0
    tp = np.sum(P & Y, axis=0).astype(float)
    fp = np.sum(P & ~Y, axis=0).astype(float)
    fn = np.sum(~P & Y, axis=0).astype(float)
    prec = _ratio(tp, tp + fp)
    rec = _ratio(tp, tp + fn)
    f1 = _ratio(2 * prec * rec, prec + rec)
    return DetectionScores(acc, prec, rec, f1, float(np.mean(f1)), n)


TABLE5_COLUMNS = (["train_size", "accuracy"]
                  + [f"{s}_{m}" for s in SOLUTES for m in ("P", "R", "F1")] + ["avg_F1"])


def write_table5(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE5_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


# ------------------------------------------------------------ quality report


@dataclass
class GCRow:
    condition: str
    present: bool
    pcc: float | None = None
    cosine: float | None = None
    peaks_real: int | None = None
    peaks_gen: int | None = None


@dataclass
class MSRow:
    condition: str
    t: int
    minutes: float | None
    present: bool
    pcc: float | None = None
    cosine: float | None = None
    peaks_real: int | None = None
    peaks_gen: int | None = None


@dataclass
class QualityReport:
    gc_rows: list[GCRow] = field(default_factory=list)
    ms_rows: list[MSRow] = field(default_factory=list)

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        a, b = out_dir / "table4a_gc.csv", out_dir / "table4b_ms.csv"
        with open(a, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["condition", "present", "pcc", "cosine", "peaks_real_gen"])
            for r in self.gc_rows:
                w.writerow([r.condition, int(r.present), _fmt(r.pcc), _fmt(r.cosine),
                            f"{r.peaks_real}/{r.peaks_gen}" if r.present else ""])
        with open(b, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["condition", "t_index", "t_min", "present", "pcc", "cosine", "peaks_real_gen"])
            for r in self.ms_rows:
                w.writerow([r.condition, r.t, _fmt(r.minutes), int(r.present), _fmt(r.pcc),
                            _fmt(r.cosine), f"{r.peaks_real}/{r.peaks_gen}" if r.present else ""])
        return a, b


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def _safe(metric, a, b):
    try:
        return metric(a, b)
    except UndefinedMetricError:
        return float("nan")


def _mean_scan_near(spectra: Sequence[Spectrum], t: int, tol: int):
    picked = []
    for s in spectra:
        if not s.scans:
            continue
        best = min(s.scans, key=lambda sc: abs(sc.t - t))
        if abs(best.t - t) <= tol:
            picked.append(np.asarray(best.mz, dtype=np.float64))
    return np.mean(picked, axis=0) if picked else None


def representative_times(spectra: Sequence[Spectrum], k: int = 2, min_prominence=0.05,
                         min_distance=None) -> list[int]:
    """Positions of the ``k`` tallest peaks of the class-mean TIC, in retention order."""
    mean = np.mean([s.tic for s in spectra], axis=0)
    pk = sorted(detect_peaks(mean, min_prominence, min_distance), key=lambda p: -p.height)[:k]
    return sorted(p.index for p in pk)


def quality_report(real_set: Sequence[Spectrum], gen_set: Sequence[Spectrum],
                   rep_times: dict[str, list[int]] | None = None, min_prominence=0.05,
                   min_distance=None, scan_tolerance: int = 3) -> QualityReport:
    """Class-mean TIC comparison per condition and MS comparison at representative times."""
    real = group_by_condition(real_set)
    gen = group_by_condition(gen_set)
    report = QualityReport()
    for cond in sorted(set(real) | set(gen)):
        if cond not in real or cond not in gen:
            report.gc_rows.append(GCRow(cond, False))
            continue
        r = np.mean([s.tic for s in real[cond]], axis=0)
        g = np.mean([s.tic for s in gen[cond]], axis=0)
        nr, ng = peak_count_match(r, g, min_prominence, min_distance)
        report.gc_rows.append(GCRow(cond, True, _safe(pearson, r, g),
                                    _safe(cosine_similarity, r, g), nr, ng))
        times = (rep_times or {}).get(cond) or representative_times(real[cond], 2,
                                                                    min_prominence, min_distance)
        minutes = real[cond][0].t_minutes
        for t in times:
            rs = _mean_scan_near(real[cond], t, scan_tolerance)
            gs = _mean_scan_near(gen[cond], t, scan_tolerance)
            m = float(minutes[t]) if minutes is not None else None
            if rs is None or gs is None:
                report.ms_rows.append(MSRow(cond, int(t), m, False))
                continue
            pr, pg = peak_count_match(rs, gs, min_prominence, 1)
            report.ms_rows.append(MSRow(cond, int(t), m, True, _safe(pearson, rs, gs),
                                        _safe(cosine_similarity, rs, gs), pr, pg))
    return report
