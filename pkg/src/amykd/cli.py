"""Command-line surface binding all modules into reproducible runs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import trainer
from .cohort import make_splits, pair_sessions, read_manifest, split_records
from .config import RunConfig, desk_profile, load_config
from .errors import AmykdError, ConfigurationError, DataError, DivergenceError
from .synth import PhantomSpec, generate_cohort

logger = logging.getLogger("amykd")


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML run config")
    parser.add_argument("--cohort", help="cohort manifest CSV")
    parser.add_argument("--contrast", help="MRI contrast to train on")
    parser.add_argument("--out", dest="out_dir", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--profile", choices=["desk"], help="apply the desk-scale profile")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (dotted for phase sections)")


def _parse_value(raw: str):
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


def _build_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key] = _parse_value(raw)
    for key in ("cohort", "contrast", "out_dir", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.profile:
        overrides["profile"] = args.profile
    return load_config(args.config, overrides)


def cmd_synth(args) -> dict:
    spec = PhantomSpec(seed=args.seed if args.seed is not None else 0,
                       positive_fraction=args.positive_fraction,
                       mri_signal_strength=args.mri_signal_strength,
                       noise_sd=args.noise_sd)
    manifest = generate_cohort(spec, args.subjects, args.out)
    return {"manifest": str(manifest), "subjects": args.subjects}


def cmd_split(args) -> dict:
    cfg = _build_config(args)
    records = read_manifest(cfg.cohort)
    mri, pet = split_records(records)
    sessions = pair_sessions(mri, pet, {cfg.contrast}, cfg.max_gap_days)
    split = make_splits(sessions, cfg.k_folds, cfg.split_seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "split.json"
    split.save(path)
    return {"split": str(path), "subjects": len(split.fold_of_subject)}


def cmd_train(args) -> dict:
    cfg = _build_config(args)
    run_dir = Path(cfg.out_dir)
    if args.phase == "all":
        results = trainer.run_all(cfg, run_dir)
        return {"run_dir": str(run_dir), "summary": results["summary"]}
    data = trainer.load_cohort(cfg)
    cfg.snapshot(run_dir)
    data.split.save(run_dir / "split.json")
    if args.phase == "1":
        meta = trainer.run_phase1(data, cfg, run_dir)
    elif args.phase == "2":
        ckpt = _require_ckpt(args.teacher_ckpt or run_dir / "phase1_best_f1.pt")
        meta = trainer.run_phase2(data, _meta_from_path(ckpt, cfg), cfg, run_dir)
    else:
        ckpt = _require_ckpt(args.teacher_ckpt or run_dir / "phase2_best_combined.pt")
        meta, _ = trainer.run_phase3(data, _meta_from_path(ckpt, cfg), cfg, run_dir)
    return {"run_dir": str(run_dir), "checkpoint": meta.path, "metric": meta.metric}


def _require_ckpt(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    return path


def _meta_from_path(path: Path, cfg: RunConfig) -> trainer.CheckpointMeta:
    import torch
    meta = torch.load(path, map_location="cpu", weights_only=True)["meta"]
    return trainer.CheckpointMeta(meta["phase"], meta["epoch"], meta["selection"],
                                  meta["metric"], meta["config_hash"], meta["seed"],
                                  path=str(path))


def cmd_eval(args) -> dict:
    cfg = _build_config(args)
    data = trainer.load_cohort(cfg)
    out = Path(cfg.out_dir)
    reports = trainer.evaluate_student(str(_require_ckpt(args.ckpt)), data, cfg, out)
    report = reports["test"]
    metrics = report.optimized if args.threshold == "opt" else report.fixed
    return {"out_dir": str(out), "auc": report.auc, "f1": metrics.f1,
            "threshold": args.threshold, "select": args.select}


def cmd_cdkd(args) -> dict:
    cfg = _build_config(args)
    cfg.cohort = args.target_cohort
    results = trainer.run_cdkd(_require_ckpt(args.teacher_ckpt), cfg, Path(cfg.out_dir))
    return {"run_dir": cfg.out_dir, "test_auc": results["reports"]["test"].auc}


def cmd_ablate(args) -> dict:
    cfg = _build_config(args)
    ablation = {"pretrain": "no_pretrain", "triplet": "no_triplet",
                "feat": "no_feat", "logit": "no_logit"}[args.drop]
    results = trainer.run_all(cfg, Path(cfg.out_dir), ablations=(ablation,))
    return {"run_dir": cfg.out_dir, "ablation": ablation, "summary": results["summary"]}


def cmd_saliency(args) -> dict:
    import torch

    from . import tensorio
    from .saliency import gradient_saliency, hirescam
    from .slices import ExtractionConfig, NormalizationConfig, extract_slices, \
        normalize_intensity, subsample_uniform

    cfg = _build_config(args)
    model, _ = trainer.load_checkpoint(_require_ckpt(args.ckpt), cfg)
    volume = normalize_intensity(tensorio.load_tensor(args.volume), NormalizationConfig())
    stack = subsample_uniform(
        extract_slices(volume, ExtractionConfig(s_full=cfg.s_full, s_train=cfg.s_train)),
        cfg.s_train)
    x = torch.from_numpy(stack.slices).float()
    smap = gradient_saliency(model, x) if args.method == "grad" else hirescam(model, x)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"saliency_{args.method}.amt"
    tensorio.save_tensor(path, smap.per_slice)
    return {"saliency": str(path), "max": float(smap.per_slice.max())}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amykd",
                                     description="PET-guided MRI amyloid distillation pipeline")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--positive-fraction", type=float, default=0.3)
    p.add_argument("--mri-signal-strength", type=float,
                   default=PhantomSpec().mri_signal_strength)
    p.add_argument("--noise-sd", type=float, default=0.02)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="emit the subject-level split JSON")
    _add_config_args(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="run training phases")
    _add_config_args(p)
    p.add_argument("--phase", choices=["1", "2", "3", "all"], required=True)
    p.add_argument("--teacher-ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a student checkpoint")
    _add_config_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--select", choices=["f1", "sim"], default="f1")
    p.add_argument("--threshold", choices=["fixed", "opt"], default="fixed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cdkd", help="cross-dataset distillation")
    _add_config_args(p)
    p.add_argument("--teacher-ckpt", required=True)
    p.add_argument("--target-cohort", required=True)
    p.set_defaults(func=cmd_cdkd)

    p = sub.add_parser("ablate", help="run the pipeline with one component dropped")
    _add_config_args(p)
    p.add_argument("--drop", choices=["pretrain", "triplet", "feat", "logit"], required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("saliency", help="emit a saliency map for one volume")
    _add_config_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--volume", required=True, help="raw-tensor volume file")
    p.add_argument("--method", choices=["grad", "hirescam"], default="grad")
    p.set_defaults(func=cmd_saliency)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        result = args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except AmykdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(result, default=str))
    else:
        for key, value in result.items():
            print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
