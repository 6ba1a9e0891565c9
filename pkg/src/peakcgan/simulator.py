"""Synthetic GC-MS ground truth.

Each solute is a template of Gaussian chromatographic peaks with a fragment
(m/z) pattern per peak. Solvents shift retention and rescale peak heights;
interference kinds add nonspecific peaks, baseline drift, retention jitter
and noise. Every random draw comes from a stream keyed by ``(seed, purpose)``
so noiseless runs superpose exactly across solutes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .spectra import (
    IED_SOLUTES,
    SOLUTES,
    SOLVENTS,
    ConditionLabel,
    ContractError,
    Peak,
    PeakList,
    Scan,
    Spectrum,
    min_max_normalize,
)

REFERENCE_T = 512
N_MZ = 64
RUN_MINUTES = 25.0
MASK_HALF_WIDTH = 2


@dataclass(frozen=True)
class AgentTemplate:
    name: str
    peak_centers: tuple[float, ...]   # fraction of the retention axis
    peak_widths: tuple[float, ...]    # sigma as a fraction of the axis
    peak_heights: tuple[float, ...]
    fragment_lines: tuple[dict, ...]  # per peak: {mz_bin: relative intensity}

    def fragment_pattern(self, i: int, n_mz: int = N_MZ) -> np.ndarray:
        v = np.zeros(n_mz)
        for b, h in self.fragment_lines[i].items():
            v[int(b) % n_mz] = h
        return v / v.max()


AGENTS: dict[str, AgentTemplate] = {
    "DMMP": AgentTemplate("DMMP", (0.22, 0.34), (0.005, 0.004), (1.0, 0.45),
                          ({4: 0.3, 23: 0.6, 39: 1.0, 47: 0.5}, {12: 0.4, 39: 0.7, 55: 1.0})),
    "DFP": AgentTemplate("DFP", (0.42,), (0.006,), (0.9,),
                         ({9: 0.5, 27: 1.0, 33: 0.4, 61: 0.3},)),
    "2-CEES": AgentTemplate("2-CEES", (0.10, 0.47), (0.004, 0.006), (0.8, 1.0),
                            ({6: 1.0, 18: 0.5, 31: 0.2}, {18: 0.6, 29: 1.0, 44: 0.5, 52: 0.3})),
    "2-CEPS": AgentTemplate("2-CEPS", (0.70, 0.385), (0.006, 0.004), (1.0, 0.35),
                            ({15: 0.4, 36: 1.0, 50: 0.7}, {10: 1.0, 36: 0.3})),
    "4-nitrophenol": AgentTemplate("4-nitrophenol", (0.80,), (0.007,), (1.0,),
                                   ({13: 0.3, 25: 0.5, 41: 0.4, 58: 1.0},)),
    "ethylenediamine": AgentTemplate("ethylenediamine", (0.15, 0.60), (0.004, 0.005), (1.0, 0.3),
                                     ({2: 0.4, 20: 1.0}, {20: 0.5, 34: 1.0, 46: 0.2})),
}

# retention offset in samples at the reference length, per solvent
SOLVENT_SHIFT = {"EtOH": 0.0, "MeOH": -4.0, "MC": 6.0, "THF": 3.0}


def solvent_height_scale(solvent: str, solute: str) -> float:
    """Deterministic per (solvent, solute) height factor in [0.7, 1.3]."""
    rng = np.random.default_rng([SOLVENTS.index(solvent), SOLUTES.index(solute), 7])
    return float(rng.uniform(0.7, 1.3))


@dataclass(frozen=True)
class InterferenceModel:
    kind: str = "none"
    extra_peaks: tuple[int, int] = (0, 0)
    baseline_drift: float = 0.0
    retention_shift: int = 0
    noise_std: float = 0.0
    height_jitter: float = 0.0

    def __post_init__(self):
        if min(self.extra_peaks) < 0 or self.extra_peaks[0] > self.extra_peaks[1]:
            raise ContractError("extra_peaks must be a non-negative (lo, hi) range")
        if min(self.baseline_drift, self.retention_shift, self.noise_std, self.height_jitter) < 0:
            raise ContractError("interference amplitudes must be non-negative")


_PRESETS = {
    "none": InterferenceModel("none", (0, 0), 0.0, 1, 0.004, 0.05),
    "brick": InterferenceModel("brick", (1, 2), 0.03, 2, 0.008, 0.08),
    "soil": InterferenceModel("soil", (1, 3), 0.05, 2, 0.010, 0.08),
    "grass": InterferenceModel("grass", (2, 4), 0.04, 2, 0.010, 0.10),
    "asphalt": InterferenceModel("asphalt", (2, 4), 0.08, 3, 0.012, 0.10),
    "kerosene": InterferenceModel("kerosene", (3, 6), 0.06, 3, 0.012, 0.10),
    "acetone": InterferenceModel("acetone", (1, 1), 0.02, 2, 0.008, 0.08),
}


def interference_preset(kind: str) -> InterferenceModel:
    if kind not in _PRESETS:
        raise ContractError(f"unknown interference kind {kind!r}")
    return _PRESETS[kind]


def noiseless(kind: str = "none") -> InterferenceModel:
    return replace(interference_preset(kind), noise_std=0.0, retention_shift=0,
                   height_jitter=0.0, baseline_drift=0.0, extra_peaks=(0, 0))


def allowed_interferences(label: ConditionLabel) -> tuple[str, ...]:
    if IED_SOLUTES & set(label.solutes):
        return tuple(k for k in _PRESETS if k not in ("brick", "acetone"))
    return tuple(_PRESETS)


# Table 4a conditions (solutes, solvent)
TABLE4A_CONDITIONS: tuple[ConditionLabel, ...] = tuple(
    ConditionLabel(solvent, tuple(solutes))
    for solutes, solvent in [
        (["4-nitrophenol"], "EtOH"), (["4-nitrophenol"], "MC"),
        (["4-nitrophenol"], "MeOH"), (["4-nitrophenol"], "THF"),
        (["ethylenediamine"], "EtOH"), (["ethylenediamine"], "MC"),
        (["ethylenediamine"], "MeOH"), (["ethylenediamine"], "THF"),
        (["2-CEES"], "EtOH"), (["2-CEES"], "MC"), (["2-CEES"], "MeOH"), (["2-CEES"], "THF"),
        (["2-CEES", "2-CEPS"], "EtOH"),
        (["2-CEES", "2-CEPS", "DFP"], "MeOH"),
        (["2-CEPS", "DFP", "DMMP"], "THF"),
        (["2-CEES", "2-CEPS", "DFP", "DMMP"], "MC"),
    ]
)


@dataclass
class GroundTruth:
    peaks: PeakList
    mask: np.ndarray
    sources: list[str] = field(default_factory=list)


@dataclass
class Record:
    spectrum: Spectrum
    label: ConditionLabel
    truth: GroundTruth | None = None


@dataclass
class _Component:
    center: float
    sigma: float
    height: float
    fragment: np.ndarray
    source: str


def _gauss(t, c, s):
    return np.exp(-0.5 * ((t - c) / s) ** 2)


def _solute_components(label, T, seed, model, n_mz) -> list[_Component]:
    scale = T / REFERENCE_T
    shift = SOLVENT_SHIFT[label.solvent] * scale
    if model.retention_shift:
        jitter = np.random.default_rng([seed, 1]).integers(-model.retention_shift,
                                                           model.retention_shift + 1)
        shift += jitter * scale
    comps = []
    for name in label.solutes:
        tpl = AGENTS[name]
        k = SOLUTES.index(name)
        rng = np.random.default_rng([seed, 100 + k])
        factor = solvent_height_scale(label.solvent, name)
        for i, (c, w, h) in enumerate(zip(tpl.peak_centers, tpl.peak_widths, tpl.peak_heights)):
            hj = 1.0 + model.height_jitter * rng.uniform(-1, 1) if model.height_jitter else 1.0
            comps.append(_Component(c * T + shift, w * T, h * factor * hj,
                                    tpl.fragment_pattern(i, n_mz), name))
    return comps


def _interference_components(model, T, seed, n_mz) -> list[_Component]:
    lo, hi = model.extra_peaks
    if hi == 0:
        return []
    rng = np.random.default_rng([seed, 2])
    comps = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        frag = np.zeros(n_mz)
        frag[rng.choice(n_mz, size=3, replace=False)] = rng.uniform(0.2, 1.0, size=3)
        comps.append(_Component(rng.uniform(0.05, 0.95) * T, rng.uniform(0.003, 0.008) * T,
                                rng.uniform(0.1, 0.5), frag / frag.max(), "interference"))
    return comps


def _scan_at(t, comps, n_mz):
    v = np.zeros(n_mz)
    for c in comps:
        v += c.height * _gauss(t, c.center, c.sigma) * c.fragment
    return v


def simulate_spectrum(label: ConditionLabel, model: InterferenceModel | None = None,
                      T: int = REFERENCE_T, seed: int = 0, normalize: bool = True,
                      n_mz: int = N_MZ) -> tuple[Spectrum, GroundTruth]:
    if T < 64:
        raise ContractError("simulate_spectrum needs T >= 64")
    if model is None:
        model = interference_preset(label.interference)
    if model.kind not in allowed_interferences(label):
        raise ContractError(f"IED solutes are never combined with {model.kind}")
    t = np.arange(T, dtype=np.float64)
    comps = _solute_components(label, T, seed, model, n_mz)
    comps += _interference_components(model, T, seed, n_mz)
    tic = np.zeros(T)
    for c in comps:
        tic += c.height * _gauss(t, c.center, c.sigma)
    if model.baseline_drift:
        rng = np.random.default_rng([seed, 4])
        phase, freq = rng.uniform(0, 2 * np.pi), rng.uniform(0.3, 1.2)
        tic += model.baseline_drift * (0.5 + 0.5 * np.sin(2 * np.pi * freq * t / T + phase))
    if model.noise_std:
        tic += np.random.default_rng([seed, 3]).normal(0.0, model.noise_std, size=T)
    tic = np.clip(tic, 0.0, None)
    lo, hi = float(tic.min()), float(tic.max())
    if normalize:
        tic = min_max_normalize(tic)
    span = (hi - lo) if normalize and hi > lo else 1.0

    order = sorted(range(len(comps)), key=lambda i: comps[i].center)
    peaks, mask, sources, scans = [], np.zeros(T, dtype=bool), [], []
    scan_rng = np.random.default_rng([seed, 5])
    for i in order:
        c = comps[i]
        idx = int(np.clip(round(c.center), 0, T - 1))
        height = float(tic[idx])
        area = c.height * c.sigma * np.sqrt(2 * np.pi) / span
        peaks.append(Peak(idx, height, float(area), float(c.height / span)))
        mask[max(0, idx - MASK_HALF_WIDTH):idx + MASK_HALF_WIDTH + 1] = True
        sources.append(c.source)
        mz = _scan_at(idx, comps, n_mz)
        if model.noise_std:
            mz = np.clip(mz + scan_rng.normal(0.0, model.noise_std, n_mz), 0.0, None)
        if mz.max() > 0:
            mz = mz / mz.max()
        scans.append(Scan(idx, mz))
    minutes = t * (RUN_MINUTES / T)
    spectrum = Spectrum(tic, scans, label if model.kind == label.interference
                        else replace(label, interference=model.kind), minutes)
    return spectrum, GroundTruth(PeakList(peaks), mask, sources)


def expected_peaks(label: ConditionLabel, T: int = REFERENCE_T) -> list[tuple[float, str, int]]:
    """(center, solute, template peak index) of the noiseless solute peaks, sorted."""
    out = []
    shift = SOLVENT_SHIFT[label.solvent] * T / REFERENCE_T
    for name in label.solutes:
        for i, c in enumerate(AGENTS[name].peak_centers):
            out.append((c * T + shift, name, i))
    return sorted(out)


def scans_for_positions(label: ConditionLabel, positions: Sequence[int], T: int,
                        n_mz: int = N_MZ) -> list[Scan]:
    """Mass scans rendered from the label's templates at the given retention indices."""
    comps = _solute_components(label, T, 0, noiseless(), n_mz)
    scans = []
    for p in positions:
        mz = _scan_at(int(p), comps, n_mz)
        if mz.max() > 0:
            mz = mz / mz.max()
        scans.append(Scan(int(p), mz))
    return scans


def stratified_counts(total: int, n_conditions: int) -> list[int]:
    base, extra = divmod(total, n_conditions)
    return [base + (1 if i < extra else 0) for i in range(n_conditions)]


def make_dataset(n_per_condition: int | Sequence[int], conditions: Sequence[ConditionLabel] | None = None,
                 model: InterferenceModel | None = None, seed: int = 0, T: int = REFERENCE_T,
                 interference_kinds: Sequence[str] | None = None) -> list[Record]:
    """Seeded, stratified dataset.

    With ``interference_kinds`` each record draws one allowed kind for its
    label; otherwise ``model`` (or the label's own preset) is used throughout.
    """
    conditions = list(conditions or TABLE4A_CONDITIONS)
    counts = ([int(n_per_condition)] * len(conditions) if np.isscalar(n_per_condition)
              else list(n_per_condition))
    if len(counts) != len(conditions) or min(counts) < 0 or sum(counts) < 1:
        raise ContractError("need a non-negative count per condition and at least one record")
    records = []
    for ci, (label, n) in enumerate(zip(conditions, counts)):
        for rep in range(n):
            rec_seed = int(np.random.default_rng([seed, ci, rep]).integers(2**31))
            m = model
            if interference_kinds is not None:
                allowed = [k for k in interference_kinds if k in allowed_interferences(label)]
                pick = np.random.default_rng([rec_seed, 9]).integers(len(allowed))
                m = interference_preset(allowed[pick])
            spec, truth = simulate_spectrum(label, m, T=T, seed=rec_seed)
            records.append(Record(spec, spec.condition, truth))
    return records
