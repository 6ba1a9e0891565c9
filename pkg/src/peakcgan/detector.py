"""Two-stream detector: a GC stream for per-position peak presence and an MS
stream that identifies solutes from mass scans pooled with peak attention.

The MS head exposes one logit per solute. Its softmax is reported as the
posterior; the per-class sigmoid of the same logits is what training (multi-label
BCE) and decisions use, since mixtures carry several solutes at once.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import DetectionScores, detection_scores
from .nn.checkpoint import load_arrays, save_arrays
from .nn.layers import (ConfigError, Conv1d, Encoder, Linear, Module, ReLU, ShapeError,
                        sigmoid, sinusoidal_positions, softmax)
from .nn.optim import Adam
from .peak_attention import PeakAttention
from .simulator import MASK_HALF_WIDTH, Record
from .spectra import SOLUTES, ConditionLabel, ContractError, Spectrum, detect_peaks


class DataError(ValueError):
    """Training records and labels do not agree."""


@dataclass
class DetectorConfig:
    gc_kernel: int = 7
    gc_padding: int = 3
    ms_kernels: tuple[int, int] = (7, 5)
    ms_channels: tuple[int, int] = (8, 8)
    encoder_dim: int = 128
    gc_encoder_dim: int | None = None  # None: same width as the MS encoder
    heads: int = 4
    layers: int = 2
    ff_dim: int = 256
    classes: int = len(SOLUTES)
    refine_kernel: int = 5
    dropout_p: float = 0.0
    gate: bool = True
    epochs: int = 10
    lr: float = 1e-3
    # "cosine" anneals lr to zero over all steps; "constant" keeps it fixed
    lr_schedule: str = "cosine"
    batch: int = 16
    seed: int = 0

    def __post_init__(self):
        self.ms_kernels = tuple(self.ms_kernels)
        self.ms_channels = tuple(self.ms_channels)
        for d in (self.encoder_dim, self.gc_dim):
            if d % self.heads:
                raise ConfigError(f"encoder width {d} is not divisible by {self.heads} heads")
        if self.gc_kernel % 2 == 0 or self.gc_padding != self.gc_kernel // 2:
            raise ConfigError("GC convolution must be odd-sized and length preserving")
        if any(k % 2 == 0 for k in self.ms_kernels):
            raise ConfigError("MS convolution kernels must be odd")
        if self.classes != len(SOLUTES):
            raise ConfigError(f"classes must equal the {len(SOLUTES)} known solutes")
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch >= 1 and lr > 0 are required")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")

    @property
    def gc_dim(self) -> int:
        return self.gc_encoder_dim or self.encoder_dim


@dataclass
class DetectionResult:
    peak_presence: np.ndarray
    solute_posteriors: np.ndarray
    decided_solutes: np.ndarray
    solute_probabilities: np.ndarray
    gated: bool = False

    @property
    def solutes(self) -> tuple[str, ...]:
        return tuple(s for s, on in zip(SOLUTES, self.decided_solutes) if on)


# ------------------------------------------------------------ pooling and head


def pool_weights(refined_alpha, valid=None) -> np.ndarray:
    """Softmax over refined attention (restricted to ``valid`` positions)."""
    a = np.asarray(refined_alpha, dtype=np.float64)
    if valid is None:
        return softmax(a, axis=-1)
    return softmax(np.where(valid, a, -np.inf), axis=-1)


def peak_aware_pool(h, weights) -> np.ndarray:
    """``f = sum_t w_t h_t`` for normalised weights ``w`` (see :func:`pool_weights`)."""
    h = np.asarray(h, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if h.shape[:-1] != w.shape:
        raise ContractError(f"pool weights {w.shape} do not match features {h.shape}")
    if not np.allclose(w.sum(axis=-1), 1.0, atol=1e-9):
        raise ContractError("pool weights must sum to 1")
    return np.einsum("...t,...td->...d", w, h)


def classify(f, W, b) -> np.ndarray:
    """Softmax posterior ``softmax(W f + b)``; ``W`` is ``[classes, d]``."""
    f = np.asarray(f, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.shape[1] != f.shape[-1] or np.shape(b) != W.shape[:1]:
        raise ShapeError(f"classify: W{W.shape} f{f.shape} b{np.shape(b)} do not conform")
    return softmax(f @ W.T + b, axis=-1)


def _bce(p_logits, target):
    """Mean binary cross-entropy on logits and its gradient."""
    z, y = p_logits, target
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean()), (sigmoid(z) - y) / z.size


# ------------------------------------------------------------------- streams


class GCStream(Module):
    """conv1d -> positional encoding -> encoder -> per-position sigmoid."""

    def __init__(self, cfg: DetectorConfig, rng):
        d = cfg.gc_dim
        self.conv = Conv1d(1, d, cfg.gc_kernel, rng, padding=cfg.gc_padding)
        self.encoder = Encoder(d, cfg.heads, cfg.layers, cfg.ff_dim, rng, cfg.dropout_p)
        self.fc = Linear(d, 1, rng, init="xavier")

    def logits(self, tic):
        tic = np.asarray(tic, dtype=np.float64)
        h = self.conv.forward(tic[:, None, :]).transpose(0, 2, 1)
        h = h + sinusoidal_positions(h.shape[1], h.shape[2])[None]
        return self.fc.forward(self.encoder.forward(h))[..., 0]

    def forward(self, tic):
        return sigmoid(self.logits(tic))

    def backward(self, d_logits):
        d = self.encoder.backward(self.fc.backward(d_logits[..., None]))
        return self.conv.backward(d.transpose(0, 2, 1))[:, 0, :]


class MSStream(Module):
    """Per-scan convolutions, scan-token encoder, peak-aware pooling, dense head.

    Scans arrive padded to ``[B, S, n_mz]`` with ``valid`` marking real scans
    and ``times`` giving each scan's retention index in the TIC.
    """

    def __init__(self, cfg: DetectorConfig, rng, n_mz: int):
        (k1, k2), (c1, c2) = cfg.ms_kernels, cfg.ms_channels
        self.n_mz = n_mz
        self.conv1 = Conv1d(1, c1, k1, rng, padding=k1 // 2)
        self.act1 = ReLU()
        self.conv2 = Conv1d(c1, c2, k2, rng, padding=k2 // 2)
        self.act2 = ReLU()
        self.proj = Linear(c2 * n_mz, cfg.encoder_dim, rng)
        self.encoder = Encoder(cfg.encoder_dim, cfg.heads, cfg.layers, cfg.ff_dim, rng,
                               cfg.dropout_p)
        self.peak = PeakAttention(rng, cfg.refine_kernel)
        self.head = Linear(cfg.encoder_dim, cfg.classes, rng, init="xavier")

    def forward(self, tic, scans, times, valid):
        tic = np.asarray(tic, dtype=np.float64)
        scans = np.asarray(scans, dtype=np.float64)
        if scans.ndim != 3 or scans.shape[1] == 0 or not np.all(valid.any(axis=1)):
            raise ContractError("every record needs at least one mass scan")
        if scans.shape[2] != self.n_mz:
            raise ShapeError(f"scans have {scans.shape[2]} m/z bins, stream expects {self.n_mz}")
        B, S, M = scans.shape
        h = self.act1.forward(self.conv1.forward(scans.reshape(B * S, 1, M)))
        h = self.act2.forward(self.conv2.forward(h))
        tok = self.proj.forward(h.reshape(B, S, -1))
        hid = self.encoder.forward(tok, key_mask=valid)
        refined = self.peak.forward(tic)
        rows = np.arange(B)[:, None]
        w = pool_weights(refined[rows, times], valid)
        f = np.einsum("bs,bsd->bd", w, hid)
        self._cache = (B, S, M, hid, w, times, refined.shape)
        return self.head.forward(f)

    def backward(self, d_logits):
        B, S, M, hid, w, times, rshape = self._cache
        d_f = self.head.backward(d_logits)
        d_hid = w[:, :, None] * d_f[:, None, :]
        d_w = np.einsum("bsd,bd->bs", hid, d_f)
        d_a = w * (d_w - np.sum(d_w * w, axis=1, keepdims=True))
        d_refined = np.zeros(rshape)
        np.add.at(d_refined, (np.arange(B)[:, None], times), d_a)
        self.peak.backward(d_refined)
        d_tok = self.encoder.backward(d_hid)
        d_h = self.proj.backward(d_tok).reshape(B * S, -1, M)
        d_h = self.conv1.backward(self.act1.backward(self.conv2.backward(self.act2.backward(d_h))))
        return d_h.reshape(B, S, M)


# ------------------------------------------------------------------- batching


@dataclass
class Batch:
    tic: np.ndarray
    scans: np.ndarray
    times: np.ndarray
    valid: np.ndarray
    mask: np.ndarray | None = None
    solutes: np.ndarray | None = None


def _pseudo_mask(tic) -> np.ndarray:
    mask = np.zeros(len(tic), dtype=bool)
    for i in detect_peaks(tic).indices:
        mask[max(0, i - MASK_HALF_WIDTH):i + MASK_HALF_WIDTH + 1] = True
    return mask


def _scan_block(spec: Spectrum, n_mz: int):
    if spec.scans:
        return spec.scan_matrix(), np.array([s.t for s in spec.scans], dtype=np.intp)
    # a spectrum without scans still gets a well-formed posterior from an empty scan
    return np.zeros((1, n_mz)), np.zeros(1, dtype=np.intp)


def make_batch(items: Sequence, n_mz: int, with_targets: bool = True) -> Batch:
    """Stack records (or bare spectra) into padded arrays."""
    specs, labels, masks = [], [], []
    for it in items:
        if isinstance(it, Record):
            spec, label = it.spectrum, it.label
            mask = it.truth.mask if it.truth is not None else None
        elif isinstance(it, Spectrum):
            spec, label, mask = it, it.condition, None
        else:
            raise DataError(f"cannot batch a {type(it).__name__}")
        specs.append(spec)
        labels.append(label)
        masks.append(mask)
    T = len(specs[0].tic)
    if any(len(s.tic) != T for s in specs):
        raise DataError("all records in a batch must share the retention length")
    blocks = [_scan_block(s, n_mz) for s in specs]
    S = max(len(b[1]) for b in blocks)
    B = len(specs)
    scans = np.zeros((B, S, n_mz))
    times = np.zeros((B, S), dtype=np.intp)
    valid = np.zeros((B, S), dtype=bool)
    for i, (m, t) in enumerate(blocks):
        if m.shape[1] != n_mz:
            raise DataError(f"record {i} has {m.shape[1]} m/z bins, expected {n_mz}")
        scans[i, :len(t)], times[i, :len(t)], valid[i, :len(t)] = m, t, True
    batch = Batch(np.stack([s.tic for s in specs]), scans, times, valid)
    if with_targets:
        for i, (spec, label) in enumerate(zip(specs, labels)):
            if label is None:
                raise DataError(f"record {i} has no label")
            if spec.condition is not None and spec.condition.solutes != label.solutes:
                raise DataError(f"record {i}: label {label.key} disagrees with its spectrum")
        batch.mask = np.stack([(m if m is not None else _pseudo_mask(s.tic)).astype(float)
                               for m, s in zip(masks, specs)])
        if batch.mask.shape != batch.tic.shape:
            raise DataError("peak masks must match the TIC length")
        batch.solutes = np.stack([l.solute_multihot for l in labels]).astype(float)
    return batch


# ------------------------------------------------------------------ detector


class Detector(Module):
    def __init__(self, cfg: DetectorConfig, n_mz: int, rng=None):
        self.cfg = cfg
        self.n_mz = n_mz
        rng = rng if rng is not None else np.random.default_rng([cfg.seed, 31])
        self.gc = GCStream(cfg, rng)
        self.ms = MSStream(cfg, rng, n_mz)

    def loss(self, batch: Batch, backward: bool = False) -> tuple[float, float]:
        """Per-position GC BCE and multi-label MS BCE; optionally accumulate grads."""
        gc_logits = self.gc.logits(batch.tic)
        l_gc, d_gc = _bce(gc_logits, batch.mask)
        ms_logits = self.ms.forward(batch.tic, batch.scans, batch.times, batch.valid)
        l_ms, d_ms = _bce(ms_logits, batch.solutes)
        if backward:
            self.gc.backward(d_gc)
            self.ms.backward(d_ms)
        return l_gc, l_ms

    def predict(self, items: Sequence, gate: bool | None = None) -> list[DetectionResult]:
        gate = self.cfg.gate if gate is None else gate
        batch = make_batch(items, self.n_mz, with_targets=False)
        presence = self.gc.forward(batch.tic)
        logits = self.ms.forward(batch.tic, batch.scans, batch.times, batch.valid)
        post = softmax(logits, axis=-1)
        prob = sigmoid(logits)
        out = []
        for i in range(len(post)):
            decided = prob[i] > 0.5
            gated = bool(gate and presence[i].max() < 0.5)
            if gated:
                decided = np.zeros_like(decided)
            out.append(DetectionResult(presence[i], post[i], decided, prob[i], gated))
        return out


def gc_stream_forward(tic, detector: Detector) -> np.ndarray:
    return detector.gc.forward(np.atleast_2d(tic))[0] if np.ndim(tic) == 1 else detector.gc.forward(tic)


def ms_stream_forward(scans, detector: Detector, tic=None, times=None) -> np.ndarray:
    """Solute logits for one record's ``[S, n_mz]`` scan matrix."""
    scans = np.asarray(scans, dtype=np.float64)
    if scans.ndim != 2 or len(scans) == 0:
        raise ContractError("ms_stream_forward needs at least one scan")
    S = len(scans)
    if tic is None:
        tic = np.zeros(max(S, 2))
    times = np.arange(S) if times is None else np.asarray(times, dtype=np.intp)
    return detector.ms.forward(np.asarray(tic, float)[None], scans[None], times[None],
                               np.ones((1, S), dtype=bool))[0]


def detect(record, detector: Detector, gate: bool | None = None) -> DetectionResult:
    return detector.predict([record], gate)[0]


# ------------------------------------------------------------------- training


@dataclass
class EpochMetrics:
    epoch: int
    loss_gc: float
    loss_ms: float
    scores: DetectionScores | None = None

    @property
    def loss(self) -> float:
        return self.loss_gc + self.loss_ms


@dataclass
class DetectorTrainResult:
    detector: Detector
    history: list[EpochMetrics] = field(default_factory=list)


def evaluate_detector(detector: Detector, records: Sequence[Record], batch: int = 64,
                      gate: bool | None = None) -> DetectionScores:
    preds, labels = [], []
    for i in range(0, len(records), batch):
        chunk = records[i:i + batch]
        preds += [r.decided_solutes for r in detector.predict(chunk, gate)]
        labels += [r.label.solute_multihot for r in chunk]
    return detection_scores(np.array(preds), np.array(labels))


def _n_mz(records) -> int:
    for r in records:
        if r.spectrum.scans:
            return len(r.spectrum.scans[0].mz)
    raise DataError("no record carries a mass scan")


def train_detector(records: Sequence[Record], cfg: DetectorConfig,
                   validation: Sequence[Record] | None = None,
                   progress: Callable[[EpochMetrics], None] | None = None) -> DetectorTrainResult:
    """Adam on the summed stream losses; one metrics row per epoch.

    With the default cosine schedule the learning rate decays from ``cfg.lr``
    towards zero over every step of the run, so the final weights settle instead
    of wandering once the training loss has bottomed out.

    Scores are computed on ``validation`` when given, otherwise skipped.
    Synthetic records without simulator ground truth get GC targets from
    their own detected peaks.
    """
    records = list(records)
    if not records:
        raise DataError("no training records")
    for i, r in enumerate(records):
        if not isinstance(r, Record) or r.label is None:
            raise DataError(f"record {i} is not a labelled Record")
    n_mz = _n_mz(records)
    det = Detector(cfg, n_mz)
    opt = Adam(det.params(), cfg.lr)
    rng = np.random.default_rng([cfg.seed, 32])
    result = DetectorTrainResult(det)
    # surface label errors before any training happens
    for i in range(0, len(records), cfg.batch):
        make_batch(records[i:i + cfg.batch], n_mz)
    total = cfg.epochs * -(-len(records) // cfg.batch)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        det.train()
        order = rng.permutation(len(records))
        tot_gc = tot_ms = 0.0
        for i in range(0, len(order), cfg.batch):
            chunk = [records[j] for j in order[i:i + cfg.batch]]
            batch = make_batch(chunk, n_mz)
            if cfg.lr_schedule == "cosine":
                opt.state.lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / total))
            step += 1
            det.zero_grad()
            l_gc, l_ms = det.loss(batch, backward=True)
            opt.step()
            tot_gc += l_gc * len(chunk)
            tot_ms += l_ms * len(chunk)
        det.eval()
        m = EpochMetrics(epoch, tot_gc / len(records), tot_ms / len(records))
        if validation:
            m.scores = evaluate_detector(det, validation)
        result.history.append(m)
        if progress is not None:
            progress(m)
    det.eval()
    return result


def save_detector(det: Detector, path) -> None:
    save_arrays({k: p.data for k, p in det.params().items()}, path,
                {"kind": "detector", "config": asdict(det.cfg), "n_mz": det.n_mz})


def load_detector(path) -> Detector:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "detector":
        raise ConfigError(f"{path} is not a detector checkpoint")
    det = Detector(DetectorConfig(**meta["config"]), int(meta["n_mz"]))
    for k, p in det.params().items():
        p.data[...] = arrays[k]
    return det


def records_from_spectra(spectra: Sequence[Spectrum]) -> list[Record]:
    """Wrap generated spectra as records; GC targets come from detected peaks."""
    out = []
    for s in spectra:
        if not isinstance(s.condition, ConditionLabel):
            raise DataError("generated spectra must carry their condition label")
        out.append(Record(s, s.condition, None))
    return out
