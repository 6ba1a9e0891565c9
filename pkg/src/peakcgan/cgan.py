"""Conditional generator/discriminator with peak-aware attention, losses and training.

Generator pipeline for a batch of condition labels and noise ``z``::

    E_c (2 tokens: solvent, summed solutes)
      -> MHA -> flatten ++ z
      -> `depth` dense blocks (ReLU + dropout) up to [tokens, embed_dim]  (F_up)
      -> MHA                                                         (H2)
      -> H2 * refined peak weights of the mean F_up profile           (X_hat)
      -> dense -> sigmoid -> spectrum of length output_dim

The discriminator returns a raw score. The least-squares loss consumes it
directly; the generator's cross-entropy term squashes it with a sigmoid.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .nn.checkpoint import load_arrays, save_arrays
from .nn.layers import (
    ConfigError,
    Conv1d,
    Dropout,
    Linear,
    Module,
    MultiHeadAttention,
    Param,
    ReLU,
    ShapeError,
    sigmoid,
    sinusoidal_positions,
)
from .nn.optim import Adam
from .peak_attention import PeakAttention
from .simulator import RUN_MINUTES, Record, scans_for_positions
from .spectra import ConditionLabel, ContractError, Spectrum, detect_peaks


@dataclass
class GeneratorConfig:
    solvent_dim: int = 4
    solute_dim: int = 6
    embed_dim: int = 100
    noise_dim: int = 64
    hidden_dim: int = 32
    depth: int = 16
    output_dim: int = 5347
    heads: int = 4
    dropout_p: float = 0.1
    tokens: int = 64
    refine_kernel: int = 5
    disc_channels: tuple[int, int] = (16, 32)
    disc_heads: int = 4
    disc_embed: int = 16

    def __post_init__(self):
        self.disc_channels = tuple(self.disc_channels)
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        if self.disc_channels[1] % self.disc_heads:
            raise ConfigError("discriminator width must be divisible by disc_heads")
        if self.output_dim < 8:
            raise ConfigError("output_dim must be >= 8")
        if self.depth < 2:
            raise ConfigError("depth must be >= 2 (input and output dense layers)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")


@dataclass
class TrainConfig:
    iterations: int = 100_000
    lr_g: float = 1e-4
    lr_d: float = 1e-5
    batch: int = 128
    lam: float = 1.0
    mu: float = 0.0  # reserved trade-off weight; no loss term uses it
    seed: int = 0
    stft_window: int = 64
    stft_hop: int = 32
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.batch < 1 or self.iterations < 0:
            raise ConfigError("batch must be >= 1 and iterations >= 0")


# ------------------------------------------------------------------- embedding


class ConditionEmbedding(Module):
    """Solvent one-hot and solute multi-hot to a two-token sequence ``[B, 2, E]``."""

    def __init__(self, n_solvent, n_solute, dim, rng, scale=1.0):
        self.solvent = Param(rng.normal(0.0, scale, size=(n_solvent, dim)))
        self.solute = Param(rng.normal(0.0, scale, size=(n_solute, dim)))

    def forward(self, solvent_onehot, solute_multihot):
        self._in = (solvent_onehot, solute_multihot)
        return np.stack([solvent_onehot @ self.solvent.data,
                         solute_multihot @ self.solute.data], axis=1)

    def backward(self, d):
        s, u = self._in
        self.solvent.grad += s.T @ d[:, 0]
        self.solute.grad += u.T @ d[:, 1]


def label_arrays(labels: Sequence[ConditionLabel]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([l.solvent_onehot for l in labels]),
            np.stack([l.solute_multihot for l in labels]))


def embed_condition(label: ConditionLabel, embedding: ConditionEmbedding) -> np.ndarray:
    if not isinstance(label, ConditionLabel):
        raise ContractError("embed_condition expects a ConditionLabel")
    s, u = label_arrays([label])
    return embedding.forward(s, u)[0]


# ------------------------------------------------------------------ generator


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, rng):
        self.cfg = cfg
        E, H = cfg.embed_dim, cfg.hidden_dim
        self.embed = ConditionEmbedding(cfg.solvent_dim, cfg.solute_dim, E, rng)
        self.fuse = MultiHeadAttention(E, cfg.heads, rng)
        self.up_in = Linear(2 * E + cfg.noise_dim, H, rng)
        # residual branches start small so activations do not grow with depth
        gain = 1.0 / math.sqrt(max(cfg.depth - 2, 1))
        self.up_hidden = [Linear(H, H, rng, gain=gain) for _ in range(cfg.depth - 2)]
        self.up_out = Linear(H, cfg.tokens * E, rng)
        n_blocks = cfg.depth
        self.acts = [ReLU() for _ in range(n_blocks)]
        self.drops = [Dropout(cfg.dropout_p, rng) for _ in range(n_blocks)]
        self.refine_attn = MultiHeadAttention(E, cfg.heads, rng)
        self.peak = PeakAttention(rng, cfg.refine_kernel)
        self.head = Linear(cfg.tokens * E, cfg.output_dim, rng, init="xavier", gain=0.25)
        self.out_act = None

    def forward(self, solvent_onehot, solute_multihot, z):
        cfg = self.cfg
        B = len(z)
        if z.shape[-1] != cfg.noise_dim:
            raise ShapeError(f"noise width {z.shape[-1]} != {cfg.noise_dim}")
        e = self.embed.forward(solvent_onehot, solute_multihot)
        h1 = self.fuse.forward(e)
        h = np.concatenate([h1.reshape(B, -1), z], axis=1)
        h = self.drops[0].forward(self.acts[0].forward(self.up_in.forward(h)))
        # hidden blocks are residual so the 16-deep stack stays trainable
        for i, lin in enumerate(self.up_hidden, start=1):
            h = h + self.drops[i].forward(self.acts[i].forward(lin.forward(h)))
        f = self.drops[-1].forward(self.acts[-1].forward(self.up_out.forward(h)))
        f_up = f.reshape(B, cfg.tokens, cfg.embed_dim)
        h2 = self.refine_attn.forward(f_up)
        weights = self.peak.forward(f_up.mean(axis=2))
        x_hat = h2 * weights[:, :, None]
        logits = self.head.forward(x_hat.reshape(B, -1))
        out = sigmoid(logits)
        self._cache = (h2, weights, out)
        return out

    def backward(self, d_out):
        cfg = self.cfg
        h2, weights, out = self._cache
        B = len(out)
        d_logits = d_out * out * (1.0 - out)
        d_xhat = self.head.backward(d_logits).reshape(B, cfg.tokens, cfg.embed_dim)
        d_h2 = d_xhat * weights[:, :, None]
        d_w = np.sum(d_xhat * h2, axis=2)
        d_fup = self.refine_attn.backward(d_h2)
        d_fup += self.peak.backward(d_w)[:, :, None] / cfg.embed_dim
        d = self.up_out.backward(self.acts[-1].backward(self.drops[-1].backward(d_fup.reshape(B, -1))))
        for i in range(len(self.up_hidden), 0, -1):
            lin = self.up_hidden[i - 1]
            d = d + lin.backward(self.acts[i].backward(self.drops[i].backward(d)))
        d = self.up_in.backward(self.acts[0].backward(self.drops[0].backward(d)))
        d_h1 = d[:, :2 * cfg.embed_dim].reshape(B, 2, cfg.embed_dim)
        self.embed.backward(self.fuse.backward(d_h1))
        return d[:, 2 * cfg.embed_dim:]


def generator_forward(E_c_labels, z, generator: Generator) -> np.ndarray:
    """Convenience wrapper taking a list of labels."""
    s, u = label_arrays(E_c_labels)
    return generator.forward(s, u, np.atleast_2d(z))


# -------------------------------------------------------------- discriminator


class Discriminator(Module):
    """conv(k7, s2) -> conv(k5, s2) -> +positions -> MHA -> mean-pool ++ condition -> score."""

    def __init__(self, cfg: GeneratorConfig, rng):
        self.cfg = cfg
        c1, c2 = cfg.disc_channels
        self.conv1 = Conv1d(1, c1, 7, rng, padding=3, stride=2)
        self.act1 = ReLU()
        self.conv2 = Conv1d(c1, c2, 5, rng, padding=2, stride=2)
        self.act2 = ReLU()
        self.attn = MultiHeadAttention(c2, cfg.disc_heads, rng)
        self.cond = Linear(cfg.solvent_dim + cfg.solute_dim, cfg.disc_embed, rng, init="xavier")
        self.fc = Linear(c2 + cfg.disc_embed, 32, rng)
        self.act3 = ReLU()
        self.out = Linear(32, 1, rng, init="xavier")

    def forward(self, x, solvent_onehot, solute_multihot):
        if x.ndim != 2 or x.shape[1] != self.cfg.output_dim:
            raise ShapeError(f"discriminator expects [B, {self.cfg.output_dim}], got {x.shape}")
        h = self.act1.forward(self.conv1.forward(x[:, None, :]))
        h = self.act2.forward(self.conv2.forward(h))
        tok = h.transpose(0, 2, 1)
        tok = tok + sinusoidal_positions(tok.shape[1], tok.shape[2])[None]
        a = self.attn.forward(tok)
        pooled = a.mean(axis=1)
        c = self.cond.forward(np.concatenate([solvent_onehot, solute_multihot], axis=1))
        self._L = tok.shape[1]
        f = self.act3.forward(self.fc.forward(np.concatenate([pooled, c], axis=1)))
        return self.out.forward(f)[:, 0]

    def backward(self, d_score):
        d = self.fc.backward(self.act3.backward(self.out.backward(d_score[:, None])))
        c2 = self.cfg.disc_channels[1]
        self.cond.backward(d[:, c2:])
        d_a = np.repeat(d[:, None, :c2] / self._L, self._L, axis=1)
        d_tok = self.attn.backward(d_a)
        d_h = d_tok.transpose(0, 2, 1)
        d_h = self.conv2.backward(self.act2.backward(d_h))
        return self.conv1.backward(self.act1.backward(d_h))[:, 0, :]


def discriminator_forward(x, labels: Sequence[ConditionLabel], disc: Discriminator) -> np.ndarray:
    s, u = label_arrays(labels)
    return disc.forward(np.atleast_2d(x), s, u)


# ------------------------------------------------------------------------ STFT


class STFT:
    """Hann-windowed short-time DFT magnitudes, ``[B, frames, window_len//2 + 1]``."""

    def __init__(self, window_len: int = 64, hop: int = 32):
        if window_len < 2 or window_len & (window_len - 1):
            raise ConfigError("window_len must be a power of two")
        if not 1 <= hop <= window_len:
            raise ConfigError("hop must lie in [1, window_len]")
        self.n, self.hop = window_len, hop
        n = np.arange(window_len)
        self.window = 0.5 - 0.5 * np.cos(2 * np.pi * n / window_len)
        k = np.arange(window_len // 2 + 1)
        ang = 2 * np.pi * np.outer(n, k) / window_len
        self.cos, self.sin = np.cos(ang), -np.sin(ang)

    def frames(self, length: int) -> int:
        if self.n > length:
            raise ConfigError(f"window_len {self.n} exceeds signal length {length}")
        return (length - self.n) // self.hop + 1

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        F = self.frames(x.shape[1])
        idx = np.arange(F)[:, None] * self.hop + np.arange(self.n)[None, :]
        seg = x[:, idx] * self.window
        re, im = seg @ self.cos, seg @ self.sin
        mag = np.sqrt(re * re + im * im)
        self._cache = (x.shape, idx, re, im, mag)
        return mag

    def backward(self, d_mag):
        shape, idx, re, im, mag = self._cache
        safe = np.where(mag > 0, mag, 1.0)
        d_re = np.where(mag > 0, d_mag * re / safe, 0.0)
        d_im = np.where(mag > 0, d_mag * im / safe, 0.0)
        d_seg = (d_re @ self.cos.T + d_im @ self.sin.T) * self.window
        dx = np.zeros(shape)
        for f in range(idx.shape[0]):
            dx[:, idx[f]] += d_seg[:, f]
        return dx


def stft_mag(x, window_len: int = 64, hop: int = 32) -> np.ndarray:
    out = STFT(window_len, hop).forward(x)
    return out[0] if np.ndim(x) == 1 else out


# ---------------------------------------------------------------------- losses


@dataclass
class LossParts:
    total: float
    adversarial: float
    spectral: float


def _softplus(x):
    return np.logaddexp(0.0, x)


def generator_loss(d_fake, x, x_hat, lam: float, window_len: int = 64, hop: int = 32,
                   return_grads: bool = False, stft: STFT | None = None):
    """``mean(-log sigmoid(D_fake)) + lam * mean_b ||STFT(x) - STFT(x_hat)||^2``.

    With ``return_grads`` also returns ``(parts, d_score, d_x_hat)``.
    """
    d_fake = np.atleast_1d(np.asarray(d_fake, dtype=np.float64))
    B = len(d_fake)
    adv = float(np.mean(_softplus(-d_fake)))
    stft_x = stft or STFT(window_len, hop)
    mx = stft_x.forward(x)
    stft_h = STFT(stft_x.n, stft_x.hop)
    mh = stft_h.forward(x_hat)
    diff = mh - mx
    spec = float(np.sum(diff * diff) / B)
    total = adv + lam * spec
    if not return_grads:
        return total
    d_score = -(1.0 - sigmoid(d_fake)) / B
    d_xhat = stft_h.backward(2.0 * lam * diff / B)
    return LossParts(total, adv, spec), d_score, d_xhat


def discriminator_loss(d_real, d_fake, return_grads: bool = False):
    """Least-squares loss ``0.5 mean (D_real - 1)^2 + 0.5 mean D_fake^2``."""
    d_real = np.atleast_1d(np.asarray(d_real, dtype=np.float64))
    d_fake = np.atleast_1d(np.asarray(d_fake, dtype=np.float64))
    loss = 0.5 * float(np.mean((d_real - 1.0) ** 2)) + 0.5 * float(np.mean(d_fake ** 2))
    if not return_grads:
        return loss
    return loss, (d_real - 1.0) / len(d_real), d_fake / len(d_fake)


# -------------------------------------------------------------------- training


@dataclass
class LossRecord:
    iteration: int
    g_adv: float
    g_stft: float
    d: float


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    history: list[LossRecord] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def write_history_csv(history: Sequence[LossRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "L_G_adv", "L_G_stft", "L_D"])
        for r in history:
            w.writerow([r.iteration, repr(r.g_adv), repr(r.g_stft), repr(r.d)])


def _dataset_arrays(dataset):
    tics, labels = [], []
    for item in dataset:
        spec, label = (item.spectrum, item.label) if isinstance(item, Record) else item
        tics.append(np.asarray(spec.tic, dtype=np.float64))
        labels.append(label)
    return np.stack(tics), labels


def build_models(gcfg: GeneratorConfig, seed: int) -> tuple[Generator, Discriminator]:
    return (Generator(gcfg, np.random.default_rng([seed, 11])),
            Discriminator(gcfg, np.random.default_rng([seed, 12])))


def train_cgan(dataset, cfg: TrainConfig, gcfg: GeneratorConfig, checkpoint_dir=None,
               progress: Callable[[LossRecord], None] | None = None) -> TrainResult:
    """Alternate one discriminator and one generator Adam step per iteration."""
    if not dataset:
        raise ConfigError("training dataset is empty")
    X, labels = _dataset_arrays(dataset)
    if X.shape[1] != gcfg.output_dim:
        raise ConfigError(f"spectra have length {X.shape[1]}, generator emits {gcfg.output_dim}")
    if X.min() < 0 or X.max() > 1:
        raise ConfigError("spectra must be normalized to [0, 1]")
    S, U = label_arrays(labels)
    G, D = build_models(gcfg, cfg.seed)
    opt_g = Adam(G.params(), cfg.lr_g)
    opt_d = Adam(D.params(), cfg.lr_d)
    rng = np.random.default_rng([cfg.seed, 13])
    stft = STFT(cfg.stft_window, cfg.stft_hop)
    result = TrainResult(G, D)
    N, B = len(X), cfg.batch
    if checkpoint_dir and cfg.checkpoint_every:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    G.train()
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(N, size=B)
        x, s, u = X[idx], S[idx], U[idx]
        z = rng.normal(size=(B, gcfg.noise_dim))
        x_hat = G.forward(s, u, z)

        D.zero_grad()
        scores = D.forward(np.concatenate([x, x_hat]), np.concatenate([s, s]), np.concatenate([u, u]))
        l_d, g_real, g_fake = discriminator_loss(scores[:B], scores[B:], return_grads=True)
        D.backward(np.concatenate([g_real, g_fake]))
        opt_d.step()

        D.zero_grad()
        G.zero_grad()
        fake_scores = D.forward(x_hat, s, u)
        parts, d_score, d_xhat = generator_loss(fake_scores, x, x_hat, cfg.lam,
                                                return_grads=True, stft=stft)
        G.backward(D.backward(d_score) + d_xhat)
        opt_g.step()
        D.zero_grad()

        rec = LossRecord(it, parts.adversarial, parts.spectral, l_d)
        result.history.append(rec)
        if progress is not None:
            progress(rec)
        if checkpoint_dir and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"generator_{it:07d}.ckpt"
            save_generator(G, path)
            result.checkpoints.append(path)
    G.eval()
    return result


# ------------------------------------------------------------------ generation


def generate(label: ConditionLabel, n: int, generator: Generator, seed: int = 0,
             with_scans: bool = True, min_prominence: float = 0.05,
             min_distance: int | None = None) -> list[Spectrum]:
    """Sample ``n`` spectra for ``label``; scans are rendered at detected peaks."""
    if n <= 0:
        return []
    generator.eval()
    rng = np.random.default_rng([seed, 21])
    z = rng.normal(size=(n, generator.cfg.noise_dim))
    s, u = label_arrays([label] * n)
    tics = generator.forward(s, u, z)
    T = generator.cfg.output_dim
    minutes = np.arange(T) * (RUN_MINUTES / T)
    out = []
    for tic in tics:
        scans = []
        if with_scans:
            pos = detect_peaks(tic, min_prominence, min_distance).indices
            scans = scans_for_positions(label, pos, T)
        out.append(Spectrum(tic.copy(), scans, label, minutes))
    return out


def save_generator(G: Generator, path) -> None:
    meta = {"kind": "generator", "config": asdict(G.cfg)}
    save_arrays({k: p.data for k, p in G.params().items()}, path, meta)


def load_generator(path) -> Generator:
    arrays, meta = load_arrays(path)
    cfg = GeneratorConfig(**meta["config"])
    G = Generator(cfg, np.random.default_rng(0))
    for k, p in G.params().items():
        p.data[...] = arrays[k]
    return G.eval()


def config_to_json(cfg) -> str:
    return json.dumps(asdict(cfg), sort_keys=True)


__all__ = [
    "GeneratorConfig", "TrainConfig", "ConditionEmbedding", "Generator", "Discriminator",
    "STFT", "stft_mag", "generator_loss", "discriminator_loss", "train_cgan", "generate",
    "embed_condition", "generator_forward", "discriminator_forward", "save_generator",
    "load_generator", "write_history_csv", "label_arrays", "build_models",
]

