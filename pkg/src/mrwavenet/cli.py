"""Command-line driver: synth, preprocess, train and evaluate from one config file.

Exit codes: 0 success, 1 internal failure, 2 user or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, dsp, ecod, evaluation, store, training
from .config import ConfigFileError, RunConfig, load_config
from .model import ConfigError, ModelConfig, load_model, save_model

log = logging.getLogger("mrwavenet")


class UserError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def out_dir(cfg: RunConfig) -> Path:
    return cfg.resolve(cfg.output.directory)


def load_dataset(cfg: RunConfig):
    """Recordings and annotation sets named by the dataset section."""
    ds = cfg.dataset
    if ds.source == "synthetic":
        return dataio.generate_synthetic(ds.synthetic)
    ann_path = cfg.resolve(ds.annotations)
    if not ann_path.is_file():
        raise UserError(f"annotation file not found: {ann_path}")
    paths = sorted(glob.glob(str(cfg.resolve(ds.edf_glob))))
    if not paths:
        raise UserError(f"no EDF files match {ds.edf_glob}")
    table = dataio.read_annotation_table(ann_path)
    recordings, errors = [], []
    for p in paths:
        try:
            rec = dataio.read_edf(p)
        except (OSError, dataio.EDFError) as exc:
            errors.append(f"{p}: {exc}")
            continue
        if ds.channels:
            missing = [c for c in ds.channels if c not in rec.channels]
            if missing:
                errors.append(f"{p}: missing channels {missing}")
                continue
            idx = [rec.channels.index(c) for c in ds.channels]
            rec = dataio.Recording(rec.patient_id, rec.session_id, list(ds.channels),
                                   rec.sample_rate, rec.samples[idx])
        recordings.append(rec)
    if errors:
        raise UserError("unreadable inputs:\n  " + "\n  ".join(errors))
    annotations = []
    for rec in recordings:
        ann = table.get(rec.session_id, dataio.AnnotationSet(rec.session_id))
        ann.check_duration(rec.duration)
        annotations.append(ann)
    return recordings, annotations


def model_config(cfg: RunConfig, channels: int, sample_rate: float) -> ModelConfig:
    mc = ModelConfig(cfg.model.window_sec, list(cfg.model.resolutions),
                     cfg.model.feature_width, channels, sample_rate, cfg.model.leaky_slope)
    try:
        mc.validate()
    except ConfigError as exc:
        raise UserError(f"[model] {exc}") from None
    return mc


def segment_id(seg) -> str:
    return f"{seg.recording_id}@{seg.start_sec:.3f}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    """Write the configured synthetic corpus as EDF files plus an annotation CSV."""
    target = out_dir(cfg) / "data"
    target.mkdir(parents=True, exist_ok=True)
    recordings, annotations = dataio.generate_synthetic(cfg.dataset.synthetic)
    for rec in recordings:
        dataio.write_edf(rec, target / f"{rec.session_id}.edf")
    dataio.write_annotations(annotations, target / "annotations.csv")
    log.info("wrote %d recordings to %s", len(recordings), target)
    return 0


def cmd_preprocess(cfg: RunConfig) -> int:
    recordings, annotations = load_dataset(cfg)
    pp = cfg.preprocessing
    W = cfg.model.window_sec
    proto = cfg.training
    test_segs, test_kinds, train_segs, train_kinds = [], [], [], []
    shape = None
    for rec, ann in zip(recordings, annotations):
        try:
            rec = dsp.preprocess(rec, pp.filters, pp.target_rate, pp.resample_first)
            tests = dsp.segmentize(rec, ann, W, 0.0)
        except (dsp.FilterDesignError, dsp.SegmentationError) as exc:
            raise UserError(f"{rec.session_id}: {exc}") from None
        if shape is None:
            shape = (rec.n_channels, rec.sample_rate)
        elif shape != (rec.n_channels, rec.sample_rate):
            raise UserError(f"{rec.session_id}: channel count or rate differs from the "
                            f"first recording {shape}")
        test_segs += tests
        test_kinds += [store.TEST] * len(tests)
        step = W * (1 - proto.seizure_overlap)
        for s in training.ictal_starts(ann, W, proto.seizure_overlap, rec.duration):
            train_segs.append(training._cut(rec, s, W, 1))
            train_kinds.append(store.ICTAL)
        for s in training.interictal_starts(ann, W, step, proto.interictal_margin_sec,
                                            rec.duration):
            train_segs.append(training._cut(rec, s, W, 0))
            train_kinds.append(store.INTERICTAL)
    if shape is None:
        raise UserError("dataset contains no recordings")
    C, fs = shape
    model_config(cfg, C, fs)
    N = dsp.samples_per_window(W, fs)
    out = out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    store.write_store(out / "segments_test.bin", test_segs, test_kinds, C, N, fs)
    store.write_store(out / "segments_train.bin", train_segs, train_kinds, C, N, fs)
    with open(out / "recordings.json", "w") as fh:
        json.dump({a.recording_id: {"patient_id": r.patient_id, "intervals": a.intervals,
                                    "duration_sec": r.duration}
                   for r, a in zip(recordings, annotations)}, fh, indent=2, sort_keys=True)
    log.info("stored %d test and %d training-candidate segments", len(test_segs),
             len(train_segs))
    return 0


def corpus_from_store(train_store: store.SegmentStore, protocol, run_index: int):
    """Ictal windows plus a seeded 1:ratio draw of interictal windows per recording."""
    by_rec: dict[str, dict[int, list]] = {}
    for seg, kind in zip(train_store.segments, train_store.kinds):
        by_rec.setdefault(seg.recording_id, {}).setdefault(int(kind), []).append(seg)
    corpus = []
    for rid in sorted(by_rec):
        ictal = by_rec[rid].get(store.ICTAL, [])
        if not ictal:
            continue
        rng = np.random.default_rng(training.stable_seed(protocol.seed, run_index, rid))
        n_wanted = int(round(protocol.nonseizure_ratio * len(ictal)))
        chosen = training.select_interictal(by_rec[rid].get(store.INTERICTAL, []),
                                            n_wanted, rng, rid)
        corpus += ictal + chosen
    return corpus


def _paths(out: Path, split: training.LosoSplit):
    return {"checkpoint": out / "checkpoints" / f"{split.name}.ckpt",
            "failed": out / "checkpoints" / f"{split.name}.failed",
            "trace": out / "traces" / f"{split.name}.csv",
            "audit": out / "audit" / f"{split.name}.json"}


def run_job(cfg: RunConfig, split: training.LosoSplit) -> tuple[str, str]:
    out = out_dir(cfg)
    paths = _paths(out, split)
    try:
        train_store = store.read_store(out / "segments_train.bin")
        mc = model_config(cfg, train_store.channels, train_store.sample_rate)
        corpus = corpus_from_store(train_store, cfg.training, split.run_index)
        result = training.train(split, corpus, mc, cfg.training)
    except training.TrainingError as exc:
        paths["failed"].write_text(str(exc) + "\n")
        return split.name, f"failed: {exc}"
    save_model(result.model, paths["checkpoint"])
    training.write_trace(paths["trace"], result.trace)
    with open(paths["audit"], "w") as fh:
        json.dump({"test_patient": split.test_patient_id,
                   "train_patients": list(split.train_patient_ids),
                   "run": split.run_index, "best_epoch": result.best_epoch,
                   "train": result.train_ids, "val": result.val_ids}, fh, indent=1)
    paths["failed"].unlink(missing_ok=True)
    return split.name, "ok"


def cmd_train(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    train_path = out / "segments_train.bin"
    if not train_path.is_file():
        raise UserError(f"segment store not found: {train_path} (run preprocess first)")
    patients = store.read_store(out / "segments_test.bin").patients
    for sub in ("checkpoints", "traces", "audit"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    splits = training.make_loso_splits(patients, cfg.training.runs_per_patient)
    todo = [s for s in splits if not _paths(out, s)["checkpoint"].is_file()]
    log.info("%d LOSO jobs, %d already complete", len(splits), len(splits) - len(todo))
    if cfg.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(run_job, [cfg] * len(todo), todo))
    else:
        results = [run_job(cfg, s) for s in todo]
    failed = [name for name, status in results if status != "ok"]
    for name, status in results:
        log.info("%s: %s", name, status)
    return 1 if failed else 0


def _populations(segs, scope):
    if scope == "global":
        return {"all": list(range(len(segs)))}
    key = (lambda s: s.recording_id) if scope == "session" else (lambda s: s.patient_id)
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(segs):
        groups.setdefault(key(s), []).append(i)
    return groups


def anomaly_flags(segs, features, postproc):
    """Per-population ECOD flags; returns (scores, flags) aligned with ``segs``."""
    scores = np.zeros(len(segs))
    flags = np.zeros(len(segs), dtype=np.int8)
    if postproc.representation == "raw":
        features = ecod.raw_segment_statistics(np.stack([s.data for s in segs]))
    for idx in _populations(segs, postproc.scope).values():
        if len(idx) < 2:
            continue
        res = ecod.threshold_rule(ecod.ecod_scores(features[idx]))
        scores[idx] = res.scores
        flags[idx] = res.flags
    return scores, flags


def cmd_evaluate(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    test_path = out / "segments_test.bin"
    if not test_path.is_file():
        raise UserError(f"segment store not found: {test_path} (run preprocess first)")
    test_store = store.read_store(test_path)
    if not (out / "recordings.json").is_file():
        raise UserError(f"{out / 'recordings.json'} not found (run preprocess first)")
    with open(out / "recordings.json") as fh:
        rec_info = json.load(fh)
    W = cfg.model.window_sec
    splits = training.make_loso_splits(test_store.patients, cfg.training.runs_per_patient)
    missing = [s.name for s in splits if not _paths(out, s)["checkpoint"].is_file()]
    if missing:
        raise UserError(f"missing checkpoints for splits: {', '.join(missing)}")
    for sub in ("scores", "features"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    plain_runs = [dict() for _ in range(cfg.training.runs_per_patient)]
    post_runs = [dict() for _ in range(cfg.training.runs_per_patient)]
    for split in splits:
        model = load_model(_paths(out, split)["checkpoint"], dtype=np.float64)
        segs = test_store.select(store.TEST, split.test_patient_id)
        x = np.stack([s.data for s in segs]).astype(np.float64)
        y = np.array([s.label for s in segs], dtype=np.int8)
        preds, logp1, feats = training.predict_segments(model, x)
        ids = [segment_id(s) for s in segs]
        plain = _patient_row(segs, preds, y, logp1, rec_info, W)
        plain_runs[split.run_index][split.test_patient_id] = plain
        if cfg.postproc.ecod:
            scores, flags = anomaly_flags(segs, feats.astype(np.float64), cfg.postproc)
            fused = ecod.fuse_labels(preds, flags)
        else:
            scores, flags, fused = np.zeros(len(segs)), np.ones(len(segs), np.int8), preds
        # no AUC after fusion: the fused output is a hard label
        post_runs[split.run_index][split.test_patient_id] = _patient_row(
            segs, fused, y, None, rec_info, W)
        if cfg.output.export_scores:
            ecod.write_scores_csv(out / "scores" / f"{split.name}.csv", ids,
                                  ecod.AnomalyResult(scores, float(scores.mean()), flags))
        if cfg.output.export_features:
            write_feature_dump(out / "features" / f"{split.name}.csv", ids, y, feats)

    plain_report = evaluation.aggregate(plain_runs, "classifier output")
    post_report = evaluation.aggregate(post_runs, "with anomaly-score post-processing")
    (out / "report_plain.json").write_text(plain_report.to_json() + "\n")
    (out / "report_postproc.json").write_text(post_report.to_json() + "\n")
    (out / "report.txt").write_text(plain_report.to_text() + "\n" + post_report.to_text())
    sys.stdout.write(plain_report.to_text() + "\n" + post_report.to_text())
    return 0


def _patient_row(segs, predicted, truth, scores, rec_info, W):
    """Metrics for one patient, detection ratio pooled over the patient's sessions."""
    row = evaluation.segment_report(predicted, truth, scores)
    detected = total = 0
    for rid in sorted({s.recording_id for s in segs}):
        mask = np.array([s.recording_id == rid for s in segs])
        det = evaluation.detection_ratio(
            np.asarray(predicted)[mask], [s.start_sec for s, m in zip(segs, mask) if m], W,
            [tuple(iv) for iv in rec_info[rid]["intervals"]])
        detected += det.detected
        total += det.total
    row["detection_ratio"] = detected / total if total else None
    return row


def write_feature_dump(path, ids, labels, features) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "label"] + [f"f{i}" for i in range(features.shape[1])])
        for sid, lab, row in zip(ids, labels, features):
            w.writerow([sid, int(lab)] + [repr(float(v)) for v in row])


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
            "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrwavenet", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--jobs", type=int, help="parallel LOSO jobs")
    p.add_argument("--output", help="override [output] directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = cfg.training.seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        if args.output is not None:
            cfg.output.directory = Path(args.output).resolve()
        cfg.validate()
        return COMMANDS[args.command](cfg)
    except (UserError, ConfigFileError, dataio.AnnotationError, dataio.SyntheticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
