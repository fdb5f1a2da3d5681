"""Command line interface.

Subcommands:
    triage phantom    generate a synthetic cohort with ground truth
    triage train      train a network per an experiment config
    triage bundle     merge weights files into one container
    triage run        score a directory of studies into results.json
    triage report     metric table (CSV + text) and figures from results
    triage serve      start the worklist service
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from .metrics import StudyPrediction, StudyTruth, evaluate_suite
from .nets import build, load_weights, save_weights
from .phantom import phantom_cohort
from .preprocess import (
    crop_mask,
    crop_to_lungs,
    normalize_intensity,
    resample_axial,
    resample_axial_mask,
)
from .report import write_report
from .threshold import ThresholdConfig
from .train import Sample, train
from .triage import TriageModels, rank_studies, run_batch
from .volume import VOLUME_SUFFIXES, load_mask, load_volume, save_mask, save_volume


def _load_dataset(cfg: config_mod.ExperimentConfig):
    """(train samples, val samples) of preprocessed studies."""
    data = cfg.data
    if data.kind == "phantom":
        cohort = phantom_cohort(
            data.count + data.val_count,
            data.lesioned + max(1, data.val_count // 2),
            seed=data.seed, shape=data.shape, spacing=data.spacing,
            fraction_range=data.fraction_range, noise_sigma=data.noise_sigma)
        # interleave lesioned/healthy before the split so both partitions
        # carry both classes
        lesioned = [s for s in cohort if s.label == 1]
        healthy = [s for s in cohort if s.label == 0]
        ordered = [s for pair in zip(lesioned, healthy) for s in pair]
        ordered += lesioned[len(healthy):] + healthy[len(lesioned):]
        samples = []
        for s in ordered:
            vol = normalize_intensity(resample_axial(s.volume, cfg.preprocess),
                                      cfg.preprocess)
            if cfg.target == "lungs":
                volume, mask = vol.data, s.lungs.data
            else:
                # lesion nets see lung-box-cropped inputs, same as inference
                cropped, crop = crop_to_lungs(vol, s.lungs)
                volume, mask = cropped.data, crop_mask(s.lesion, crop).data
            samples.append(Sample(volume=volume, mask=mask.astype(np.float32),
                                  label=s.label, source=s.volume.study_id))
        return samples[data.val_count:], samples[:data.val_count]
    if data.kind == "directory":
        root = Path(data.path)
        truth = json.loads((root / "truth.json").read_text())
        samples = []

        def load_aligned(name):
            mask = load_mask(root / name)
            if mask.shape != vol.shape:
                mask = resample_axial_mask(mask, cfg.preprocess)
            return mask

        for entry in truth:
            vol = load_volume(root / entry["volume"])
            vol = normalize_intensity(resample_axial(vol, cfg.preprocess), cfg.preprocess)
            if cfg.target == "lungs":
                mask = None
                if entry.get("lungs_mask"):
                    mask = load_aligned(entry["lungs_mask"]).data.astype(np.float32)
                samples.append(Sample(volume=vol.data, mask=mask,
                                      label=entry.get("label"), source=entry["study_id"]))
                continue
            if not entry.get("lungs_mask"):
                raise ValueError(f"{entry['study_id']}: lesion training needs a lungs mask "
                                 "for the bounding-box crop")
            cropped, crop = crop_to_lungs(vol, load_aligned(entry["lungs_mask"]))
            mask = None
            if entry.get("lesion_mask"):
                mask = crop_mask(load_aligned(entry["lesion_mask"]),
                                 crop).data.astype(np.float32)
            samples.append(Sample(volume=cropped.data, mask=mask,
                                  label=entry.get("label"), source=entry["study_id"]))
        n_val = min(data.val_count, max(1, len(samples) // 5))
        return samples[n_val:], samples[:n_val]
    raise ValueError(f"unknown data kind {data.kind!r}")


def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cohort = phantom_cohort(args.count, args.lesioned, seed=args.seed,
                            shape=tuple(args.shape), spacing=tuple(args.spacing))
    truth = []
    for s in cohort:
        sid = s.volume.study_id
        save_volume(s.volume, out / f"{sid}.raw")
        save_mask(s.lesion, out / f"{sid}_lesion.raw")
        save_mask(s.lungs, out / f"{sid}_lungs.raw")
        truth.append({
            "study_id": sid,
            "volume": f"{sid}.raw",
            "lesion_mask": f"{sid}_lesion.raw",
            "lungs_mask": f"{sid}_lungs.raw",
            "label": s.label,
            "group": "COVID" if s.label else "NORMAL",
            "severity": s.severity,
            "per_lung_fractions": list(s.per_lung_fractions),
        })
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    print(f"wrote {len(cohort)} phantoms to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = config_mod.load_config(args.config)
    if args.data:
        cfg.data.kind = "directory"
        cfg.data.path = args.data
    train_set, val_set = _load_dataset(cfg)
    model = build(cfg.network, seed=cfg.train.seed)
    _, log = train(model, train_set, val_set, cfg.train)
    save_weights(args.out, {cfg.target: model})
    print(f"trained {cfg.target} ({cfg.network.kind}) for "
          f"{cfg.train.batches_total} batches; best validation "
          f"{log.val_metric_name}={log.best_metric:.4f} at batch {log.best_batch}")
    print(f"weights written to {args.out}")
    return 0


def cmd_bundle(args) -> int:
    merged = {}
    for part in args.parts:
        merged.update(load_weights(part))
    save_weights(args.out, merged)
    print(f"bundled {sorted(merged)} into {args.out}")
    return 0


def cmd_run(args) -> int:
    models_by_name = load_weights(args.weights)
    if "lungs" not in models_by_name:
        print("weights file has no 'lungs' model", file=sys.stderr)
        return 2
    models = TriageModels(lungs=models_by_name["lungs"],
                          multitask=models_by_name.get("multitask"))
    threshold_cfg = ThresholdConfig(hu_min=args.hu_min, hu_max=args.hu_max,
                                    sigma=args.sigma, v_min_fraction=args.v_min)

    paths = sorted(p for p in Path(args.input).iterdir()
                   if p.name.endswith(VOLUME_SUFFIXES)
                   and not p.stem.endswith(("_lesion", "_lungs")))
    volumes = [load_volume(p) for p in paths]
    results, masks, failures = run_batch(
        volumes, models, method=args.method, threshold_cfg=threshold_cfg)

    if args.save_masks:
        mask_dir = Path(args.save_masks)
        mask_dir.mkdir(parents=True, exist_ok=True)
        for sid, mask in masks.items():
            save_mask(mask, mask_dir / f"{sid}_pred.raw")

    records = []
    ordered = list(results.values())
    ranks: dict[str, dict] = {sid: {} for sid in results}
    if args.mode in ("identification", "both"):
        for rank, r in enumerate(rank_studies(ordered, "identification"), 1):
            ranks[r.study_id]["rank_identification"] = rank
    if args.mode in ("severity", "both"):
        for rank, r in enumerate(rank_studies(ordered, "severity"), 1):
            ranks[r.study_id]["rank_severity"] = rank
    for sid, result in results.items():
        rec = result.to_dict()
        rec.update(ranks[sid])
        if args.save_masks:
            rec["lesion_mask"] = str(Path(args.save_masks) / f"{sid}_pred.raw")
        records.append(rec)
    for sid, error in failures.items():
        records.append({"study_id": sid, "status": "failed", "error": error})

    Path(args.output).write_text(json.dumps(records, indent=2))
    print(f"scored {len(results)} studies ({len(failures)} failed) -> {args.output}")
    return 0 if not failures else 1


def _prediction_set(path) -> tuple[str, list[StudyPrediction]]:
    records = json.loads(Path(path).read_text())
    preds = []
    method = "unknown"
    for rec in records:
        if rec.get("status") == "failed":
            continue
        method = rec.get("method", method)
        mask = None
        if rec.get("lesion_mask") and Path(rec["lesion_mask"]).exists():
            mask = load_mask(rec["lesion_mask"])
        preds.append(StudyPrediction(
            study_id=rec["study_id"], score=rec["covid_probability"],
            severity=rec.get("severity"), lesion_mask=mask))
    return method, preds


def cmd_report(args) -> int:
    truth_root = Path(args.truth).parent
    truth = {}
    for entry in json.loads(Path(args.truth).read_text()):
        mask = None
        if entry.get("lesion_mask") and (truth_root / entry["lesion_mask"]).exists():
            mask = load_mask(truth_root / entry["lesion_mask"])
        truth[entry["study_id"]] = StudyTruth(
            study_id=entry["study_id"], group=entry["group"],
            severity=entry.get("severity"), lesion_mask=mask)

    predictions: dict[str, list] = {}
    for path in args.results:
        method, preds = _prediction_set(path)
        predictions.setdefault(method, []).append(preds)

    report = evaluate_suite(predictions, truth)
    written = write_report(report, predictions, truth, args.out_dir)
    print(report.to_text())
    if report.missing:
        print(f"missing predictions for: {', '.join(report.missing)}")
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import Store, TriageService, create_app

    cfg = config_mod.load_config(args.config) if args.config else config_mod.ExperimentConfig()
    weights = args.weights or cfg.service.weights
    if not weights:
        print("no weights file given (--weights or service.weights)", file=sys.stderr)
        return 2
    models_by_name = load_weights(weights)
    models = TriageModels(lungs=models_by_name["lungs"],
                          multitask=models_by_name.get("multitask"))
    store = Store(args.store or cfg.service.store)
    service = TriageService(store, models, preprocess_cfg=cfg.preprocess,
                            workers=cfg.service.workers)
    service.requeue_unscored()
    app = create_app(service)
    uvicorn.run(app, host=args.host, port=args.port or cfg.service.port)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="triage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--lesioned", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=int, nargs=3, default=(8, 32, 32))
    p.add_argument("--spacing", type=float, nargs=3, default=(8.0, 2.0, 2.0))
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train a network from an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--data", help="override: train from a prepared directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bundle", help="merge weights files into one container")
    p.add_argument("--out", required=True)
    p.add_argument("parts", nargs="+")
    p.set_defaults(func=cmd_bundle)

    p = sub.add_parser("run", help="score a directory of studies")
    p.add_argument("--input", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--mode", choices=("identification", "severity", "both"),
                   default="both")
    p.add_argument("--method", choices=("multitask", "threshold"), default="multitask")
    p.add_argument("--output", default="results.json")
    p.add_argument("--save-masks", help="directory for predicted lesion masks")
    p.add_argument("--hu-min", type=float, default=-700.0)
    p.add_argument("--hu-max", type=float, default=300.0)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--v-min", type=float, default=0.001)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="metric table and figures from results")
    p.add_argument("--truth", required=True)
    p.add_argument("--out-dir", default="report")
    p.add_argument("results", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="start the worklist service")
    p.add_argument("--config")
    p.add_argument("--weights")
    p.add_argument("--store")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
