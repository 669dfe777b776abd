"""``mealdetect`` command line: simulate, encode, train, evaluate, monitor.

Exit codes: 0 success, 1 runtime error, 2 usage or missing prerequisite.
Log verbosity comes from ``MEALDETECT_LOG`` (DEBUG, INFO, WARNING, ...).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cnn.io import load_model
from .cnn.model import Architecture, CnnModel
from .cnn.train import evaluate, train
from .config import RunConfig, load_run_config
from .encoder import EncoderConfig, encode_window, read_pgm, write_pgm
from .exceptions import EmptyMatrix, MealDetectError, ParameterError
from .metrics import confusion_from_indices, emit_report, scores
from .pipeline.monitor import Monitor, ThresholdRule, results_to_rows, run_stream
from .pipeline.registry import (Fingerprint, ModelNotFound, ModelRegistry, config_hash,
                                dataset_hash)
from .simulator.episode import Label, read_windows, write_episode, write_windows
from .simulator.params import (PatientConfig, dump_patient_config, load_patient_config,
                               patient_config_from_dict)
from .simulator.scenario import simulate_patient

logger = logging.getLogger("mealdetect")

LOG_ENV = "MEALDETECT_LOG"
WINDOWS_PER_SNACK = 7
INDEX_HEADER = ["file", "label", "source_offset", "snack_index", "replicate"]


class PrerequisiteError(Exception):
    """An upstream artifact is missing; the message names the command to run."""


def _missing(what: str, command: str) -> PrerequisiteError:
    return PrerequisiteError(f"{what} not found; run `mealdetect {command}` first")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- simulate ---------------------------------------------------------------

def _subsample(windows, per_class: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    keep = []
    for label in (Label.RescueMeal, Label.NoMeal):
        idx = [i for i, w in enumerate(windows) if w.label is label]
        if len(idx) < per_class:
            logger.warning("only %d %s windows available (wanted %d)", len(idx), label.name,
                           per_class)
            keep.extend(idx)
        else:
            keep.extend(rng.choice(idx, size=per_class, replace=False).tolist())
    return [windows[i] for i in sorted(keep)]


def _base_patient(run: RunConfig) -> PatientConfig:
    return load_patient_config(run.patient_config)


def cmd_simulate(args, run: RunConfig, paths) -> int:
    base = _base_patient(run)
    patients = list(run.patients)
    if args.patients is not None:
        patients = patients[:args.patients]
    data_root = Path(paths.data_dir)
    manifest = {"seed": run.seed, "patients": {}}
    for i, spec in enumerate(patients):
        n_snacks = spec.n_snacks if args.n_snacks is None else args.n_snacks
        per_replicate = WINDOWS_PER_SNACK * max(n_snacks, 1)
        replicates = max(1, math.ceil(spec.images_per_class / per_replicate))
        data = simulate_patient(base, spec.id, n_snacks, replicates, seed=run.derive_seed(1, i),
                                schedule=run.simulation.schedule(), jitter=run.simulation.jitter,
                                perturb=run.simulation.perturb,
                                announced_negatives=run.simulation.announced_negatives)
        windows = _subsample(data.windows, spec.images_per_class, run.derive_seed(2, i))
        out = data_root / spec.id
        out.mkdir(parents=True, exist_ok=True)
        for r, ep in enumerate(data.episodes):
            write_episode(ep, out / f"episode_{r:02d}.csv")
        write_windows(windows, out / "windows.csv")
        (out / "patient.yaml").write_text(dump_patient_config(data.config))
        counts = {lab.name: sum(w.label is lab for w in windows) for lab in Label}
        manifest["patients"][spec.id] = {"n_snacks": n_snacks, "replicates": replicates,
                                         "episodes": len(data.episodes), "windows": counts}
        print(f"{spec.id}: snacks={n_snacks} replicates={replicates} "
              f"RescueMeal={counts['RescueMeal']} NoMeal={counts['NoMeal']}")
    _dump_json(manifest, data_root / "manifest.json")
    return 0


# --- encode -----------------------------------------------------------------

def _patient_ids(args, run: RunConfig) -> list:
    """(config index, id) pairs; the index keys per-patient seeds."""
    pairs = [(i, p.id) for i, p in enumerate(run.patients)]
    if getattr(args, "patient", None):
        run.patient(args.patient)
        return [pr for pr in pairs if pr[1] == args.patient]
    return pairs


def _encoder_for(run: RunConfig, patient_cfg: PatientConfig) -> EncoderConfig:
    return EncoderConfig.from_params(patient_cfg.params, **run.encoder)


def cmd_encode(args, run: RunConfig, paths) -> int:
    for _, pid in _patient_ids(args, run):
        src = Path(paths.data_dir) / pid
        if not (src / "windows.csv").exists():
            raise _missing(f"windows for patient {pid}", "simulate")
        with open(src / "patient.yaml") as fh:
            pcfg = patient_config_from_dict(yaml.safe_load(fh))
        enc = _encoder_for(run, pcfg)
        out = Path(paths.image_dir) / pid
        out.mkdir(parents=True, exist_ok=True)
        for stale in out.glob("*.pgm*"):
            stale.unlink()
        rows, dropped = [], 0
        for i, win in enumerate(read_windows(src / "windows.csv")):
            try:
                img = encode_window(win, enc)
            except EmptyMatrix as exc:
                logger.warning("dropping window: %s", exc)
                dropped += 1
                continue
            name = f"{i:05d}.pgm"
            write_pgm(img, out / name)
            rows.append([name, win.label.name, f"{win.source_offset:g}", win.snack_index,
                         win.replicate])
        with open(out / "index.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(INDEX_HEADER)
            w.writerows(rows)
        _dump_json(enc.to_dict(), out / "encoder.json")
        print(f"{pid}: {len(rows)} images ({dropped} degenerate windows dropped)")
    return 0


# --- train ------------------------------------------------------------------

def _load_images(image_dir: Path, pid: str):
    index = image_dir / "index.csv"
    if not index.exists():
        raise _missing(f"images for patient {pid}", "encode")
    with open(index, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise MealDetectError(f"no images for patient {pid}")
    images = np.stack([read_pgm(image_dir / r["file"]).pixels for r in rows])
    labels = np.array([int(Label[r["label"]]) for r in rows])
    encoder = json.loads((image_dir / "encoder.json").read_text())
    return images, labels, encoder


def cmd_train(args, run: RunConfig, paths) -> int:
    registry = ModelRegistry(paths.model_dir)
    report_dir = Path(paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    for i, pid in _patient_ids(args, run):
        images, labels, encoder = _load_images(Path(paths.image_dir) / pid, pid)
        cfg = dataclasses.replace(run.train, seed=run.derive_seed(3, run.train.seed, i))
        arch = Architecture(input_size=images.shape[1])
        fingerprint = Fingerprint(
            dataset_hash(images, labels),
            config_hash({"train": dataclasses.asdict(cfg), "arch": dataclasses.asdict(arch),
                         "encoder": encoder}))
        same = pid in registry and registry.fingerprint(pid) == fingerprint
        if pid in registry and not (same or args.force):
            raise PrerequisiteError(f"patient {pid} already has a model trained on other data; "
                                    "pass --force to replace it")
        model, report = train(CnnModel.create(arch, seed=cfg.seed), images, labels, cfg)
        registry.register(pid, model, fingerprint, encoder=encoder, force=True)
        _dump_json(report.to_dict(), report_dir / f"{pid}_train.json")
        s = report.test_scores
        print(f"{pid}: epochs={report.epochs_run} train_acc={report.train_accuracy:.4f} "
              f"test_acc={s.accuracy:.4f} test_f1={s.f1:.4f}")
    return 0


# --- evaluate ---------------------------------------------------------------

def cmd_evaluate(args, run: RunConfig, paths) -> int:
    registry = ModelRegistry(paths.model_dir)
    report_dir = Path(paths.report_dir)
    per_patient, n_test = {}, {}
    for _, pid in _patient_ids(args, run):
        try:
            model = registry.load(pid)
        except ModelNotFound:
            raise _missing(f"trained model for patient {pid}", "train") from None
        train_report = report_dir / f"{pid}_train.json"
        if not train_report.exists():
            raise _missing(f"training report for patient {pid}", "train")
        test_idx = np.array(json.loads(train_report.read_text())["test_indices"], dtype=int)
        images, labels, _ = _load_images(Path(paths.image_dir) / pid, pid)
        _, _, preds = evaluate(model, images[test_idx], labels[test_idx])
        per_patient[pid] = scores(confusion_from_indices(preds, labels[test_idx]))
        n_test[pid] = len(test_idx)
    text, csv_text = emit_report(per_patient, n_test)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.txt").write_text(text)
    (report_dir / "report.csv").write_text(csv_text)
    sys.stdout.write(text)
    return 0


# --- monitor ----------------------------------------------------------------

def cmd_monitor(args, run: RunConfig, paths) -> int:
    pid = args.patient or (run.patients[0].id if run.patients else None)
    if pid is None:
        raise PrerequisiteError("no patient given; pass --patient")
    registry = ModelRegistry(paths.model_dir)
    encoder_dict = None
    if args.model:
        model = load_model(args.model)
        model_id = str(args.model)
    else:
        try:
            model = registry.load(pid)
        except ModelNotFound:
            raise _missing(f"trained model for patient {pid}", "train") from None
        encoder_dict = registry.entry(pid).get("encoder")
        model_id = registry.entry(pid)["sha256"][:12]
    if encoder_dict:
        encoder = EncoderConfig.from_dict(encoder_dict)
    else:
        encoder = _encoder_for(run, _base_patient(run))
    rule = ThresholdRule.parse(args.rule, run.rule) if args.rule else run.rule
    monitor = Monitor(model, encoder, rule, pid, model_id=model_id)

    def emit(alert):
        print(alert.format(), flush=True)

    if args.episode in (None, "-"):
        run_stream(sys.stdin, monitor, on_alert=emit)
    else:
        if not Path(args.episode).exists():
            raise PrerequisiteError(f"episode file {args.episode} not found; "
                                    "run `mealdetect simulate` or pass an existing file")
        with open(args.episode, newline="") as fh:
            run_stream(fh, monitor, on_alert=emit)
    if args.log:
        rows = results_to_rows(monitor.results)
        with open(args.log, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["t"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    logger.info("%d windows classified, %d alerts", len(monitor.results), len(monitor.alerts))
    return 0


# --- entry point ------------------------------------------------------------

def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config YAML (default: packaged defaults)")
    common.add_argument("--seed", type=_seed, help="override the run seed")
    common.add_argument("--out", default=".", help="root directory for all artifacts")

    parser = argparse.ArgumentParser(prog="mealdetect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate episodes and cut windows")
    p.add_argument("--patients", type=int, help="use only the first N configured patients")
    p.add_argument("--n-snacks", type=int, help="snack count for every patient")
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("encode", cmd_encode, "render windows as PGM images"),
                             ("train", cmd_train, "train per-patient models"),
                             ("evaluate", cmd_evaluate, "score models on held-out images")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--patient", help="restrict to one configured patient")
        if name == "train":
            p.add_argument("--force", action="store_true",
                           help="replace models trained on different data")
        p.set_defaults(func=func)

    p = sub.add_parser("monitor", parents=[common], help="replay or stream an episode")
    p.add_argument("--patient", help="patient id (default: first configured)")
    p.add_argument("--episode", help="episode file; '-' or omitted reads standard input")
    p.add_argument("--rule", help="k=<n>,conf=<f>,cooldown=<min>")
    p.add_argument("--model", help="model file to use instead of the registry entry")
    p.add_argument("--log", help="write the per-window detection log as CSV")
    p.set_defaults(func=cmd_monitor)
    return parser


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = load_run_config(args.config)
        if args.seed is not None:
            run = run.with_seed(args.seed)
        paths = run.paths.resolve(args.out)
    except (OSError, ParameterError) as exc:
        print(f"mealdetect {args.command}: config: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, run, paths)
    except PrerequisiteError as exc:
        print(f"mealdetect {args.command}: {exc}", file=sys.stderr)
        return 2
    except (MealDetectError, OSError, ValueError) as exc:
        print(f"mealdetect {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
