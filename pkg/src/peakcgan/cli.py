"""Command-line pipeline: simulate, eda, train-gan, generate, train-detector,
evaluate, export-mesh.

Every command reads defaults, then an optional JSON ``--config`` file, then
explicit flags, writes the resolved values to ``<out>/<command>.config.json``
and records its artifacts in ``<out>/manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import cgan, detector as det_mod, metrics, simulator
from .datastore import SpectrumRecord, SpectrumStore
from .nn.layers import ConfigError
from .simulator import GroundTruth, Record
from .spectra import (INTERFERENCES, ConditionLabel, PeakList, Peak, eda_table, load_spectrum,
                      save_spectrum)

log = logging.getLogger("peakcgan")

DB_ENV = "PEAKCGAN_DB"
DEFAULT_LADDER = (12, 123, 307, 615, 922)


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ defaults

COMMON = {"seed": 0, "db": None, "out": "runs"}

DEFAULTS = {
    "simulate": {"n": 10, "T": simulator.REFERENCE_T, "interference": "mixed"},
    "eda": {"data_type": "real"},
    "train-gan": {"iterations": 3000, "lr_g": 1e-4, "lr_d": 1e-5, "batch": 16, "lambda": 1.0,
                  "embed_dim": 100, "hidden_dim": 32, "depth": 16, "noise_dim": 64,
                  "tokens": 64, "checkpoint_every": 0, "stft_window": 16, "stft_hop": 8},
    "generate": {"n": 13, "condition": "all", "checkpoint": None},
    "train-detector": {"ladder": list(DEFAULT_LADDER), "epochs": 8, "lr": 1e-3,
                       "lr_schedule": "cosine", "batch": 16, "encoder_dim": 32, "gc_encoder_dim": 16,
                       "ff_dim": 64, "heads": 4, "layers": 2, "pool_size": 160, "val_n": 10},
    "evaluate": {"real_type": "real", "gen_type": "synthetic", "detector": None},
    "export-mesh": {"record_id": None},
}


def _ladder(text):
    try:
        sizes = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ladder must be comma-separated integers: {text!r}") from exc
    if not sizes or min(sizes) < 0:
        raise argparse.ArgumentTypeError("ladder needs non-negative sizes")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of parameter values")
    common.add_argument("--seed", type=int)
    common.add_argument("--db", help=f"database file (default: ${DB_ENV} or <out>/peakcgan.db)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="peakcgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="build a simulated dataset and DB")
    s.add_argument("--n", type=int, help="records per condition")
    s.add_argument("--T", type=int, help="retention length")
    s.add_argument("--interference", choices=("mixed",) + INTERFERENCES)

    s = sub.add_parser("eda", parents=[common], help="per-condition peak statistics")
    s.add_argument("--data-type", dest="data_type", choices=("real", "synthetic"))

    s = sub.add_parser("train-gan", parents=[common], help="train the conditional GAN")
    s.add_argument("--iterations", type=int)
    s.add_argument("--lr-g", dest="lr_g", type=float)
    s.add_argument("--lr-d", dest="lr_d", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--lambda", dest="lambda", type=float)
    s.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    s.add_argument("--stft-window", dest="stft_window", type=int,
                   help="STFT window; 16 resolves the narrow peaks of a 512-sample run")
    s.add_argument("--stft-hop", dest="stft_hop", type=int)

    s = sub.add_parser("generate", parents=[common], help="sample synthetic spectra")
    s.add_argument("--n", type=int, help="spectra per condition")
    s.add_argument("--condition", help="condition key such as '2-CEES+2-CEPS|EtOH', or 'all'")
    s.add_argument("--checkpoint", help="generator checkpoint (default <out>/generator.ckpt)")

    s = sub.add_parser("train-detector", parents=[common], help="detection data-volume ladder")
    s.add_argument("--ladder", type=_ladder, help="synthetic counts, e.g. 12,123,307")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--lr-schedule", dest="lr_schedule", choices=("cosine", "constant"))
    s.add_argument("--batch", type=int)

    s = sub.add_parser("evaluate", parents=[common], help="quality and detection reports")
    s.add_argument("--real-type", dest="real_type", choices=("real", "synthetic"))
    s.add_argument("--gen-type", dest="gen_type", choices=("real", "synthetic"))
    s.add_argument("--detector", help="detector checkpoint for a detection report")

    s = sub.add_parser("export-mesh", parents=[common], help="(t, m/z, intensity) CSV of a record")
    s.add_argument("--record-id", dest="record_id", type=int)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; unknown config keys are rejected."""
    cmd = args.command
    allowed = {**COMMON, **DEFAULTS[cmd]}
    cfg = dict(allowed)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        if loaded.pop("command", cmd) != cmd:
            raise UsageError(f"config was written for another command, not {cmd!r}")
        unknown = sorted(set(loaded) - set(allowed))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in allowed:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["db"] is None:
        cfg["db"] = os.environ.get(DB_ENV) or str(Path(cfg["out"]) / "peakcgan.db")
    return cfg


# ------------------------------------------------------------------ artifacts


class Run:
    def __init__(self, command: str, cfg: dict):
        self.command, self.cfg = command, cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(p)
        return p

    def finish(self):
        snap = self.path(f"{self.command}.config.json")
        snap.write_text(json.dumps({"command": self.command, **self.cfg}, indent=2, sort_keys=True) + "\n")
        manifest_path = self.out / "manifest.json"
        manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
        entries = {}
        for p in self.artifacts:
            if p.exists():
                entries[p.relative_to(self.out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest[self.command] = dict(sorted(entries.items()))
        manifest_path.write_text(json.dumps(dict(sorted(manifest.items())), indent=2) + "\n")


def _store(cfg) -> SpectrumStore:
    return SpectrumStore(cfg["db"])


def _truth_path(spec_path: Path) -> Path:
    return spec_path.with_suffix(".truth.json")


def _save_truth(truth: GroundTruth, path: Path):
    path.write_text(json.dumps({
        "mask": truth.mask.astype(int).tolist(),
        "sources": truth.sources,
        "peaks": [[p.index, p.height, p.area, p.prominence] for p in truth.peaks],
    }))


def _load_truth(path: Path) -> GroundTruth | None:
    if not path.exists():
        return None
    d = json.loads(path.read_text())
    peaks = PeakList([Peak(int(i), h, a, pr) for i, h, a, pr in d["peaks"]])
    return GroundTruth(peaks, np.asarray(d["mask"], dtype=bool), d["sources"])


def load_records(store: SpectrumStore, **filters) -> list[Record]:
    out = []
    for row in store.query_records(**filters):
        path = store.resolve(row)
        spec = load_spectrum(path)
        out.append(Record(spec, spec.condition, _load_truth(_truth_path(path))))
    return out


def _store_spectrum(run: Run, store: SpectrumStore, spec, data_type: str, name: str,
                    truth: GroundTruth | None = None) -> int:
    path = run.path(f"spectra/{data_type}/{name}.json")
    save_spectrum(spec, path)
    if truth is not None:
        _save_truth(truth, run.path(f"spectra/{data_type}/{name}.truth.json"))
    rel = os.path.relpath(path.resolve(), store.root.resolve())
    return store.insert_record(SpectrumRecord.for_label(spec.condition, data_type, rel))


def _parse_condition(text: str) -> ConditionLabel:
    try:
        solutes, solvent = text.split("|")
        return ConditionLabel(solvent.strip(), tuple(s.strip() for s in solutes.split("+")))
    except ValueError as exc:
        raise UsageError(f"bad condition {text!r}; expected 'A+B|Solvent'") from exc


# ------------------------------------------------------------------- commands


def cmd_simulate(run: Run, cfg: dict):
    kinds = None if cfg["interference"] == "mixed" else [cfg["interference"]]
    kinds = list(INTERFERENCES) if kinds is None else kinds
    records = simulator.make_dataset(cfg["n"], seed=cfg["seed"], T=cfg["T"], interference_kinds=kinds)
    with _store(cfg) as store:
        for i, r in enumerate(records):
            _store_spectrum(run, store, r.spectrum, "real", f"real_{cfg['seed']}_{i:05d}", r.truth)
    log.info("simulated %d records into %s", len(records), cfg["db"])


def cmd_eda(run: Run, cfg: dict):
    with _store(cfg) as store:
        spectra = [r.spectrum for r in load_records(store, data_type=cfg["data_type"])]
    if not spectra:
        raise RuntimeError(f"no {cfg['data_type']} records in {cfg['db']}")
    rows = eda_table(spectra)
    with open(run.path("eda.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def cmd_train_gan(run: Run, cfg: dict):
    with _store(cfg) as store:
        records = load_records(store, data_type="real")
    if not records:
        raise RuntimeError(f"no real records in {cfg['db']}; run simulate first")
    T = len(records[0].spectrum.tic)
    gcfg = cgan.GeneratorConfig(output_dim=T, embed_dim=cfg["embed_dim"], hidden_dim=cfg["hidden_dim"],
                                depth=cfg["depth"], noise_dim=cfg["noise_dim"], tokens=cfg["tokens"])
    tcfg = cgan.TrainConfig(iterations=cfg["iterations"], lr_g=cfg["lr_g"], lr_d=cfg["lr_d"],
                            batch=cfg["batch"], lam=cfg["lambda"], seed=cfg["seed"],
                            checkpoint_every=cfg["checkpoint_every"],
                            stft_window=cfg["stft_window"], stft_hop=cfg["stft_hop"])

    def progress(rec):
        if rec.iteration % 100 == 0:
            log.info("iter %d  L_G_adv %.4f  L_G_stft %.4f  L_D %.4f",
                     rec.iteration, rec.g_adv, rec.g_stft, rec.d)

    ckpt_dir = run.out / "checkpoints"
    if tcfg.checkpoint_every:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    res = cgan.train_cgan(records, tcfg, gcfg, checkpoint_dir=ckpt_dir, progress=progress)
    run.artifacts.extend(res.checkpoints)
    cgan.save_generator(res.generator, run.path("generator.ckpt"))
    cgan.write_history_csv(res.history, run.path("loss_history.csv"))


def cmd_generate(run: Run, cfg: dict):
    ckpt = cfg["checkpoint"] or str(run.out / "generator.ckpt")
    G = cgan.load_generator(ckpt)
    labels = (list(simulator.TABLE4A_CONDITIONS) if cfg["condition"] == "all"
              else [_parse_condition(cfg["condition"])])
    with _store(cfg) as store:
        for ci, label in enumerate(labels):
            spectra = cgan.generate(label, cfg["n"], G, seed=int(np.random.default_rng(
                [cfg["seed"], ci]).integers(2**31)))
            for k, spec in enumerate(spectra):
                name = f"syn_{cfg['seed']}_{ci:02d}_{k:05d}"
                _store_spectrum(run, store, spec, "synthetic", name)


def ladder_experiment(pool, synthetic, validation, sizes, dcfg: det_mod.DetectorConfig,
                      seed: int = 0, progress=None):
    """Train one detector per ladder size on ``pool`` plus the first ``k`` synthetic
    records (taken from a seeded shuffle) and score each on ``validation``."""
    if max(sizes) > len(synthetic):
        raise RuntimeError(f"ladder needs {max(sizes)} synthetic records, only {len(synthetic)} available")
    order = np.random.default_rng([seed, 41]).permutation(len(synthetic))
    shuffled = [synthetic[i] for i in order]
    rows, models = [], []
    for k in sizes:
        res = det_mod.train_detector(list(pool) + shuffled[:k], dcfg)
        scores = det_mod.evaluate_detector(res.detector, validation)
        rows.append(scores.row(train_size=k))
        models.append(res)
        if progress is not None:
            progress(k, scores, res)
    return rows, models


def cmd_train_detector(run: Run, cfg: dict):
    with _store(cfg) as store:
        real = load_records(store, data_type="real")
        synthetic = load_records(store, data_type="synthetic")
    if not real:
        raise RuntimeError(f"no real records in {cfg['db']}; run simulate first")
    pool = real[:cfg["pool_size"]]
    T = len(pool[0].spectrum.tic)
    validation = simulator.make_dataset(cfg["val_n"], seed=cfg["seed"] + 10_000, T=T,
                                        interference_kinds=list(INTERFERENCES))
    dcfg = det_mod.DetectorConfig(encoder_dim=cfg["encoder_dim"], gc_encoder_dim=cfg["gc_encoder_dim"],
                                  ff_dim=cfg["ff_dim"], heads=cfg["heads"], layers=cfg["layers"],
                                  epochs=cfg["epochs"], lr=cfg["lr"],
                                  lr_schedule=cfg["lr_schedule"], batch=cfg["batch"],
                                  seed=cfg["seed"])

    def progress(k, scores, res):
        log.info("ladder %d: accuracy %.4f macro-F1 %.4f", k, scores.accuracy, scores.macro_f1)
        det_mod.save_detector(res.detector, run.path(f"detector_{k}.ckpt"))

    rows, models = ladder_experiment(pool, synthetic, validation, cfg["ladder"], dcfg,
                                     cfg["seed"], progress)
    metrics.write_table5(rows, run.path("table5.csv"))
    with open(run.path("detector_history.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["train_size", "epoch", "loss_gc", "loss_ms"])
        for k, res in zip(cfg["ladder"], models):
            for m in res.history:
                w.writerow([k, m.epoch, repr(m.loss_gc), repr(m.loss_ms)])


def cmd_evaluate(run: Run, cfg: dict):
    with _store(cfg) as store:
        real = load_records(store, data_type=cfg["real_type"])
        gen = load_records(store, data_type=cfg["gen_type"])
    if not real or not gen:
        raise RuntimeError("evaluate needs both real and generated records in the store")
    report = metrics.quality_report([r.spectrum for r in real], [r.spectrum for r in gen])
    a, b = report.write(run.out)
    run.artifacts += [a, b]
    if cfg["detector"]:
        det = det_mod.load_detector(cfg["detector"])
        scores = det_mod.evaluate_detector(det, real)
        metrics.write_table5([scores.row(train_size=len(real))], run.path("table5_eval.csv"))


def cmd_export_mesh(run: Run, cfg: dict):
    with _store(cfg) as store:
        rows = store.query_records()
        if not rows:
            raise RuntimeError(f"no records in {cfg['db']}")
        row = rows[0] if cfg["record_id"] is None else store.get(cfg["record_id"])
        if row is None:
            raise RuntimeError(f"no record with id {cfg['record_id']}")
        spec = load_spectrum(store.resolve(row))
    metrics.export_mesh(spec, run.path(f"mesh_{row.id}.csv"))


COMMANDS = {
    "simulate": cmd_simulate, "eda": cmd_eda, "train-gan": cmd_train_gan,
    "generate": cmd_generate, "train-detector": cmd_train_detector,
    "evaluate": cmd_evaluate, "export-mesh": cmd_export_mesh,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        run = Run(args.command, cfg)
        COMMANDS[args.command](run, cfg)
        run.finish()
    except (UsageError, ConfigError, TypeError) as exc:
        print(f"peakcgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic for any runtime failure
        print(f"peakcgan {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
