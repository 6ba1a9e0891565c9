"""Spectrum and condition types, peak picking, normalization and summary statistics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

SOLVENTS = ("EtOH", "MeOH", "MC", "THF")
SOLUTES = ("DMMP", "DFP", "2-CEES", "2-CEPS", "4-nitrophenol", "ethylenediamine")
INTERFERENCES = ("none", "brick", "soil", "grass", "asphalt", "kerosene", "acetone")
IED_SOLUTES = frozenset({"4-nitrophenol", "ethylenediamine"})


class ContractError(ValueError):
    """An operation was called with inputs outside its contract."""


@dataclass(frozen=True)
class ConditionLabel:
    solvent: str
    solutes: tuple[str, ...]
    interference: str = "none"

    def __post_init__(self):
        if self.solvent not in SOLVENTS:
            raise ContractError(f"unknown solvent {self.solvent!r}")
        if not self.solutes:
            raise ContractError("at least one solute is required")
        unknown = [s for s in self.solutes if s not in SOLUTES]
        if unknown:
            raise ContractError(f"unknown solutes {unknown}")
        if self.interference not in INTERFERENCES:
            raise ContractError(f"unknown interference {self.interference!r}")
        # canonical solute order so equal conditions compare equal
        ordered = tuple(s for s in SOLUTES if s in self.solutes)
        object.__setattr__(self, "solutes", ordered)

    @classmethod
    def from_vectors(cls, solvent_onehot, solute_multihot, interference="none"):
        solvent_onehot = np.asarray(solvent_onehot)
        solute_multihot = np.asarray(solute_multihot)
        if solvent_onehot.shape != (len(SOLVENTS),) or solvent_onehot.sum() != 1:
            raise ContractError("solvent vector must be one-hot of length 4")
        if solute_multihot.shape != (len(SOLUTES),) or solute_multihot.sum() < 1:
            raise ContractError("solute vector must be multi-hot of length 6")
        solvent = SOLVENTS[int(np.argmax(solvent_onehot))]
        solutes = tuple(s for s, on in zip(SOLUTES, solute_multihot) if on)
        return cls(solvent, solutes, interference)

    @property
    def solvent_onehot(self) -> np.ndarray:
        v = np.zeros(len(SOLVENTS))
        v[SOLVENTS.index(self.solvent)] = 1.0
        return v

    @property
    def solute_multihot(self) -> np.ndarray:
        v = np.zeros(len(SOLUTES))
        for s in self.solutes:
            v[SOLUTES.index(s)] = 1.0
        return v

    @property
    def key(self) -> str:
        """Condition name without interference, e.g. ``2-CEES+2-CEPS|EtOH``."""
        return "+".join(self.solutes) + "|" + self.solvent

    def to_dict(self) -> dict:
        return {"solvent": self.solvent, "solutes": list(self.solutes),
                "interference": self.interference}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionLabel":
        return cls(d["solvent"], tuple(d["solutes"]), d.get("interference", "none"))


@dataclass
class Scan:
    t: int
    mz: np.ndarray


@dataclass
class Spectrum:
    tic: np.ndarray
    scans: list[Scan] = field(default_factory=list)
    condition: ConditionLabel | None = None
    t_minutes: np.ndarray | None = None

    def __post_init__(self):
        self.tic = np.asarray(self.tic, dtype=np.float64)
        if self.tic.ndim != 1 or len(self.tic) < 2:
            raise ContractError("tic must be a 1-D vector of length >= 2")
        if not np.all(np.isfinite(self.tic)):
            raise ContractError("tic contains non-finite values")
        for s in self.scans:
            if not 0 <= s.t < len(self.tic):
                raise ContractError(f"scan retention index {s.t} outside [0, {len(self.tic)})")

    @property
    def T(self) -> int:
        return len(self.tic)

    def scan_matrix(self) -> np.ndarray:
        if not self.scans:
            return np.zeros((0, 0))
        return np.stack([s.mz for s in self.scans])

    def to_dict(self) -> dict:
        d = {
            "tic": self.tic.tolist(),
            "scans": [{"t": int(s.t), "mz": np.asarray(s.mz).tolist()} for s in self.scans],
            "condition": self.condition.to_dict() if self.condition else None,
        }
        if self.t_minutes is not None:
            d["t_minutes"] = np.asarray(self.t_minutes).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Spectrum":
        cond = d.get("condition")
        tm = d.get("t_minutes")
        return cls(
            tic=np.asarray(d["tic"], dtype=np.float64),
            scans=[Scan(int(s["t"]), np.asarray(s["mz"], dtype=np.float64)) for s in d.get("scans", [])],
            condition=ConditionLabel.from_dict(cond) if cond else None,
            t_minutes=None if tm is None else np.asarray(tm, dtype=np.float64),
        )


def save_spectrum(spectrum: Spectrum, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spectrum.to_dict()))


def load_spectrum(path: str | Path) -> Spectrum:
    return Spectrum.from_dict(json.loads(Path(path).read_text()))


def export_tic_csv(spectrum: Spectrum, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "intensity"])
        for i, v in enumerate(spectrum.tic):
            w.writerow([i, repr(float(v))])


@dataclass(frozen=True)
class Peak:
    index: int
    height: float
    area: float
    prominence: float


@dataclass
class PeakList:
    peaks: list[Peak] = field(default_factory=list)

    def __len__(self):
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    @property
    def indices(self) -> np.ndarray:
        return np.array([p.index for p in self.peaks], dtype=np.intp)


def _select_by_distance(peaks: np.ndarray, heights: np.ndarray, distance: int) -> np.ndarray:
    """Keep the tallest peaks first, dropping neighbours closer than ``distance``."""
    keep = np.ones(len(peaks), dtype=bool)
    if distance <= 1:
        return keep
    # stable sort so equal heights resolve left-to-right deterministically
    order = np.argsort(-heights, kind="stable")
    for i in order:
        if not keep[i]:
            continue
        j = i - 1
        while j >= 0 and peaks[i] - peaks[j] < distance:
            keep[j] = False
            j -= 1
        j = i + 1
        while j < len(peaks) and peaks[j] - peaks[i] < distance:
            keep[j] = False
            j += 1
    return keep


def default_min_distance(T: int) -> int:
    return max(1, math.ceil(T / 100))


def detect_peaks(x, min_prominence: float = 0.05, min_distance: int | None = None) -> PeakList:
    """Local maxima with prominence >= ``min_prominence * max(x)``.

    Candidates closer than ``min_distance`` samples are thinned tallest-first
    before the prominence test. Each peak's area is the trapezoidal integral
    over the samples where the signal stays above the peak's prominence base
    line.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < 3:
        raise ContractError("detect_peaks needs a 1-D signal of length >= 3")
    if not 0 < min_prominence <= 1:
        raise ContractError("min_prominence must lie in (0, 1]")
    if min_distance is None:
        min_distance = default_min_distance(len(x))
    top = float(np.max(x))
    if top <= 0 or np.ptp(x) == 0:
        return PeakList()
    cand = kernels.local_maxima(x)
    if len(cand) == 0:
        return PeakList()
    cand = cand[_select_by_distance(cand, x[cand], int(min_distance))]
    prom, _, _ = kernels.peak_prominences(x, cand)
    ok = prom >= min_prominence * top
    cand, prom = cand[ok], prom[ok]
    if len(cand) == 0:
        return PeakList()
    lo, hi = kernels.support_bounds(x, cand, x[cand] - prom)
    peaks = []
    for p, pr, a, b in zip(cand, prom, lo, hi):
        area = float(_trapezoid(x[a:b + 1])) if b > a else 0.0
        peaks.append(Peak(int(p), float(x[p]), area, float(pr)))
    return PeakList(peaks)


def peak_stats(x, peaks: PeakList) -> tuple[float, float, float]:
    """(total peak area, mean intensity, standard deviation) as reported in EDA tables."""
    x = np.asarray(x, dtype=np.float64)
    total = float(sum(p.area for p in peaks))
    return total, float(np.mean(x)), float(np.std(x))


def min_max_normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = np.min(x), np.max(x)
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def eda_table(spectra: Iterable[Spectrum], min_prominence=0.05,
              min_distance: int | None = None) -> list[dict]:
    """Per-condition mean of peak statistics, one row per condition key."""
    groups: dict[str, list[tuple[float, float, float, int]]] = {}
    for s in spectra:
        name = s.condition.key if s.condition else "unlabeled"
        pk = detect_peaks(s.tic, min_prominence, min_distance)
        groups.setdefault(name, []).append((*peak_stats(s.tic, pk), len(pk)))
    rows = []
    for name in sorted(groups):
        arr = np.asarray(groups[name])
        rows.append({
            "condition": name,
            "total_peak_area": float(arr[:, 0].mean()),
            "mean_intensity": float(arr[:, 1].mean()),
            "std_intensity": float(arr[:, 2].mean()),
            "n_peaks": float(arr[:, 3].mean()),
            "n_records": len(arr),
        })
    return rows


def group_by_condition(items: Sequence, key=lambda s: s.condition.key) -> dict:
    out: dict = {}
    for it in items:
        out.setdefault(key(it), []).append(it)
    return out
