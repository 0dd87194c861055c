"""Command-line entry point.

Subcommands cover the full experiment loop:

    gen-data      render a synthetic dataset into the run directory
    train-phase1  weak MIL training on video labels
    pseudo-label  threshold phase-1 chunk scores into pseudo labels
    gen-srd       materialize region-distorted pseudo-anomaly videos + plans
    train-phase2  chunk-level adversarial training
    attack-eval   clean or attacked AUC evaluation on the test split
    report        merge saved evaluation records into one CSV (and plots)
    run-all       all of the above in order, one run directory

Run directories live under --run-root (default: $ROBUSTVAD_RUN_ROOT or
./runs) and look like runs/<name>/{config, checkpoints/, data/, reports/}.
The `config` file is a JSON snapshot, updated by every subcommand, sufficient
to reproduce the run. Nothing written here embeds timestamps, so identical
invocations produce identical directories.

Exit status: 0 success, 2 configuration/usage error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from robustvad.attacks import ATTACK_FAMILIES, AttackConfig, format_eps, parse_eps
from robustvad.errors import ConfigurationError, NumericError, RobustVadError
from robustvad.evalkit import (emit_report, evaluate_videos, plot_records,
                               summarize, write_score_files)
from robustvad.pipeline import (ASSEMBLY_MODES, AdvTrainConfig, PseudoLabelSet,
                                TrainConfig, assemble_phase2_dataset,
                                generate_pseudo_labels, train_phase1, train_phase2)
from robustvad.scorer.aggregate import AGGREGATOR_NAMES, AggregatorKind, make_abmil
from robustvad.scorer.network import ChunkScorer
from robustvad.scorer.params import (ScorerConfig, load_checkpoint_full,
                                     save_checkpoint)
from robustvad.srd import SRD_MODES, SrdConfig
from robustvad.videostore.io import (DatasetManifest, ManifestEntry, load_dataset,
                                     save_manifest, write_frame_labels, write_video)
from robustvad.videostore.synth import SceneSpec, generate_synthetic_dataset

log = logging.getLogger(__name__)

EVAL_FAMILIES = ("clean",) + ATTACK_FAMILIES


# --------------------------------------------------------------------------
# run-directory plumbing

def run_dir(args) -> Path:
    root = Path(args.run_root or os.environ.get("ROBUSTVAD_RUN_ROOT", "runs"))
    rd = root / args.run
    for sub in ("checkpoints", "data", "reports"):
        (rd / sub).mkdir(parents=True, exist_ok=True)
    return rd


def snapshot_config(rd: Path, section: str, payload: dict) -> None:
    """Merge one subcommand's effective settings into the run's config file."""
    path = rd / "config"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc[section] = payload
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_split(rd: Path, split: str):
    manifest = rd / "data" / "manifest.json"
    if not manifest.exists():
        raise ConfigurationError(f"{manifest}: no dataset in this run (gen-data first)")
    return load_dataset(manifest)[split]


def _checkpoint_path(rd: Path, name: str) -> Path:
    p = Path(name)
    if p.suffix == ".rvc" and p.exists():
        return p
    return rd / "checkpoints" / f"{name}.rvc"


def _load_model(rd: Path, name: str):
    path = _checkpoint_path(rd, name)
    if not path.exists():
        raise ConfigurationError(f"{path}: no such checkpoint")
    params, extra = load_checkpoint_full(path)
    return ChunkScorer(params), extra


def _aggregator(name: str, r: float, feature_dim: int, seed: int) -> AggregatorKind:
    if name == "abmil":
        return make_abmil(feature_dim, seed=seed)
    return AggregatorKind(name=name, r=r)


def _write_metrics_csv(path: Path, metrics: list[dict]) -> None:
    if not metrics:
        path.write_text("")
        return
    cols = list(metrics[0].keys())
    lines = [",".join(cols)]
    for row in metrics:
        cells = []
        for c in cols:
            v = row[c]
            cells.append("NA" if v is None
                         else (f"{v:.6g}" if isinstance(v, float) else str(v)))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    rd = run_dir(args)
    # anomaly window scales with the clip: a quarter to three quarters of it,
    # never shorter than one chunk (64 frames -> the canonical (16, 48))
    duration = (max(args.chunk_size, args.frames // 4),
                max(args.chunk_size, args.frames * 3 // 4))
    spec = SceneSpec(height=args.height, width=args.width, channels=args.channels,
                     n_frames=args.frames, chunk_size=args.chunk_size,
                     duration_range=duration)
    counts = {"train_normal": args.train_normal, "train_abnormal": args.train_abnormal,
              "test_normal": args.test_normal, "test_abnormal": args.test_abnormal}
    generate_synthetic_dataset(spec, counts, args.seed, rd / "data")
    scene = {"height": args.height, "width": args.width, "channels": args.channels,
             "frames": args.frames, "chunk_size": args.chunk_size,
             "duration_range": list(duration)}
    snapshot_config(rd, "gen-data", {"seed": args.seed, "counts": counts,
                                     "scene": scene})
    print(f"dataset written to {rd / 'data'}")
    return 0


def cmd_train_phase1(args) -> int:
    rd = run_dir(args)
    train = _load_split(rd, "train")
    first = train[0]
    scfg = ScorerConfig(height=first.pixels.shape[1], width=first.pixels.shape[2],
                        channels=first.pixels.shape[3], chunk_size=args.chunk_size)
    kind = _aggregator(args.aggregator, args.r, scfg.feature_dim, args.seed)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay,
                      batch_size=args.batch_size, chunk_size=args.chunk_size,
                      seed=args.seed, lr_schedule=args.lr_schedule,
                      aggregator=kind)
    result = train_phase1(train, scfg, cfg)
    extra = kind.attention if kind.name == "abmil" else None
    save_checkpoint(result.params, rd / "checkpoints" / "phase1.rvc", extra=extra)
    _write_metrics_csv(rd / "reports" / "phase1_metrics.csv", result.metrics)
    snapshot_config(rd, "train-phase1", {
        "epochs": args.epochs, "lr": args.lr, "weight_decay": args.weight_decay,
        "batch_size": args.batch_size, "chunk_size": args.chunk_size,
        "seed": args.seed, "lr_schedule": args.lr_schedule,
        "aggregator": args.aggregator, "r": args.r, "aborted": result.aborted,
    })
    print(f"phase-1 checkpoint saved ({'aborted' if result.aborted else 'completed'}, "
          f"{len(result.metrics)} epochs logged)")
    return 3 if result.aborted else 0


def cmd_pseudo_label(args) -> int:
    rd = run_dir(args)
    model, _ = _load_model(rd, args.checkpoint)
    train = _load_split(rd, "train")
    abnormal = [v for v in train if v.video_label == 1]
    pseudo = generate_pseudo_labels(model.params, abnormal, tau=args.tau,
                                    provenance=args.checkpoint)
    out = rd / "data" / "pseudo_labels.json"
    out.write_text(json.dumps(pseudo.to_doc(), indent=2, sort_keys=True) + "\n")
    snapshot_config(rd, "pseudo-label", {"tau": args.tau, "checkpoint": args.checkpoint})
    pos = sum(int(v.sum()) for v in pseudo.labels.values())
    total = sum(len(v) for v in pseudo.labels.values())
    print(f"pseudo labels: {pos}/{total} chunks abnormal -> {out}")
    return 0


def _srd_config(args, model_params=None) -> SrdConfig:
    return SrdConfig(provider=args.saliency, mode=args.srd_mode,
                     model_params=model_params)


def cmd_gen_srd(args) -> int:
    rd = run_dir(args)
    train = _load_split(rd, "train")
    model_params = None
    if args.saliency == "model_grad":
        model, _ = _load_model(rd, args.checkpoint)
        model_params = model.params
    srd_cfg = _srd_config(args, model_params)
    items = assemble_phase2_dataset(train, None, srd_cfg, args.chunk_size,
                                    p_srd=args.p_srd, seed=args.seed, mode="srd_only")
    out = rd / "data" / "srd"
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for item in items:
        if item.source != "srd":
            continue
        write_video(out / "videos" / f"{item.video_id}.fsv", item.pixels)
        frame_labels = np.repeat(item.targets, args.chunk_size)
        n = item.pixels.shape[0]
        if len(frame_labels) < n:  # trailing frames keep the last chunk's label
            frame_labels = np.concatenate(
                [frame_labels, np.full(n - len(frame_labels), frame_labels[-1])])
        write_frame_labels(out / "labels" / f"{item.video_id}.txt", frame_labels)
        entries.append(ManifestEntry(
            id=item.video_id, split="train", video_label=1, n_frames=n,
            path=f"videos/{item.video_id}.fsv",
            frame_label_path=f"labels/{item.video_id}.txt"))
    manifest = DatasetManifest(seed=args.seed, spec={}, entries=entries)
    save_manifest(manifest, out / "srd_manifest.json")
    snapshot_config(rd, "gen-srd", {
        "p_srd": args.p_srd, "seed": args.seed, "srd_mode": args.srd_mode,
        "saliency": args.saliency, "count": len(entries)})
    print(f"{len(entries)} distorted videos -> {out}")
    return 0


def cmd_train_phase2(args) -> int:
    rd = run_dir(args)
    train = _load_split(rd, "train")
    model, _ = _load_model(rd, args.checkpoint)
    pseudo = None
    if args.phase2_mode in ("both", "pseudo_only") and not args.use_ground_truth:
        ppath = rd / "data" / "pseudo_labels.json"
        if not ppath.exists():
            raise ConfigurationError(f"{ppath}: run pseudo-label first")
        pseudo = PseudoLabelSet.from_doc(json.loads(ppath.read_text()))
    model_params = model.params if args.saliency == "model_grad" else None
    srd_cfg = _srd_config(args, model_params) if args.phase2_mode != "pseudo_only" else None
    items = assemble_phase2_dataset(train, pseudo, srd_cfg, args.chunk_size,
                                    p_srd=args.p_srd, seed=args.seed,
                                    mode=args.phase2_mode,
                                    use_ground_truth=args.use_ground_truth)
    eps_end = parse_eps(args.eps)
    eps_start = parse_eps(args.eps_start) if args.eps_start is not None else eps_end
    cfg = AdvTrainConfig(
        epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay,
        batch_size=args.batch_size, seed=args.seed, lr_schedule=args.lr_schedule,
        inner_iters=args.inner_iters, norm=args.norm,
        eps_schedule=args.eps_schedule, eps_start=eps_start, eps_end=eps_end,
        beta=args.beta)
    result = train_phase2(items, model.params, cfg, reinit=args.reinit)
    save_checkpoint(result.params, rd / "checkpoints" / "phase2.rvc")
    _write_metrics_csv(rd / "reports" / "phase2_metrics.csv", result.metrics)
    snapshot_config(rd, "train-phase2", {
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "seed": args.seed, "inner_iters": args.inner_iters,
        "eps": format_eps(eps_end), "eps_start": format_eps(eps_start),
        "eps_schedule": args.eps_schedule, "beta": args.beta,
        "phase2_mode": args.phase2_mode, "p_srd": args.p_srd,
        "srd_mode": args.srd_mode, "use_ground_truth": args.use_ground_truth,
        "reinit": args.reinit, "checkpoint": args.checkpoint,
        "aborted": result.aborted,
    })
    print(f"phase-2 checkpoint saved ({'aborted' if result.aborted else 'completed'}, "
          f"{len(result.metrics)} epochs logged)")
    return 3 if result.aborted else 0


def cmd_attack_eval(args) -> int:
    rd = run_dir(args)
    model, _ = _load_model(rd, args.checkpoint)
    test = _load_split(rd, "test")
    if args.attack_family == "clean":
        attack_cfg = None
    else:
        attack_cfg = AttackConfig(
            family=args.attack_family, eps=parse_eps(args.eps), iters=args.iters,
            norm=args.norm, restarts=args.restarts, seed=args.seed)
    tag = args.tag or f"{args.checkpoint}-{args.attack_family}"
    records = evaluate_videos(model, test, attack_cfg)
    row = summarize(tag, records, attack_cfg)
    emit_report([row], rd / "reports" / f"eval_{tag}.csv")
    write_score_files(records, rd / "reports" / "scores")
    doc = {
        "tag": tag, "attack": args.attack_family,
        "eps": format_eps(parse_eps(args.eps)) if args.attack_family != "clean" else "0",
        "iters": args.iters if args.attack_family != "clean" else 0,
        "records": [
            {"video_id": r.video_id, "video_label": r.video_label,
             "attack": r.attack, "queries": r.queries,
             "success_chunks": r.success_chunks,
             "frame_scores": [float(x) for x in r.frame_scores],
             "frame_labels": [int(x) for x in r.frame_labels]}
            for r in records
        ],
    }
    (rd / "reports" / f"records_{tag}.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n")
    snapshot_config(rd, f"attack-eval:{tag}", {
        "checkpoint": args.checkpoint, "attack_family": args.attack_family,
        "eps": doc["eps"], "iters": args.iters, "restarts": args.restarts,
        "norm": args.norm, "seed": args.seed})
    print(f"eval[{tag}]: auc_o={row['auc_o']} auc_a={row['auc_a']}")
    return 0


def cmd_report(args) -> int:
    rd = run_dir(args)
    from robustvad.evalkit import EvalRecord

    rows = []
    all_records = []
    for path in sorted((rd / "reports").glob("records_*.json")):
        doc = json.loads(path.read_text())
        records = [EvalRecord(video_id=r["video_id"], video_label=r["video_label"],
                              attack=r["attack"],
                              frame_scores=np.asarray(r["frame_scores"]),
                              frame_labels=np.asarray(r["frame_labels"]),
                              queries=r["queries"],
                              success_chunks=r["success_chunks"])
                   for r in doc["records"]]
        cfg = None
        if doc["attack"] != "clean":
            cfg = AttackConfig(family=doc["attack"], eps=parse_eps(doc["eps"]),
                               iters=doc["iters"])
        rows.append(summarize(doc["tag"], records, cfg))
        all_records.extend(records)
    emit_report(rows, rd / "reports" / "report.csv")
    if args.plots:
        plot_records(all_records, rd / "reports" / "plots")
    print(f"{len(rows)} evaluation(s) -> {rd / 'reports' / 'report.csv'}")
    return 0


def cmd_run_all(args) -> int:
    args.tag = None
    rc = cmd_gen_data(args)
    if rc:
        return rc
    rc = cmd_train_phase1(args)
    if rc:
        return rc
    args.checkpoint = "phase1"
    rc = cmd_pseudo_label(args)
    if rc:
        return rc
    rc = cmd_gen_srd(args)
    if rc:
        return rc
    rc = cmd_train_phase2(args)
    if rc:
        return rc
    eval_family = args.attack_family if args.attack_family != "clean" else "pgd"
    for checkpoint in ("phase1", "phase2"):
        for family in ("clean", eval_family):
            args.checkpoint = checkpoint
            args.attack_family = family
            args.tag = f"{checkpoint}-{family}"
            rc = cmd_attack_eval(args)
            if rc:
                return rc
    return cmd_report(args)


# --------------------------------------------------------------------------
# argument parsing

def _add_common(p):
    p.add_argument("--run", required=True, help="run directory name")
    p.add_argument("--run-root", default=None,
                   help="parent of run directories (default $ROBUSTVAD_RUN_ROOT or ./runs)")
    p.add_argument("--seed", type=int, default=0)


def _add_scene(p):
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--chunk-size", type=int, default=16)
    p.add_argument("--train-normal", type=int, default=24)
    p.add_argument("--train-abnormal", type=int, default=24)
    p.add_argument("--test-normal", type=int, default=10)
    p.add_argument("--test-abnormal", type=int, default=10)


def _add_train1(p):
    p.add_argument("--epochs", type=int, default=90)
    p.add_argument("--lr", type=float, default=7e-4)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr-schedule", choices=("cosine", "constant"), default="cosine")
    p.add_argument("--aggregator", choices=AGGREGATOR_NAMES, default="max")
    p.add_argument("--r", type=float, default=8.0, help="lse/smoothmax sharpness")
    if not any(a.dest == "chunk_size" for a in p._actions):
        p.add_argument("--chunk-size", type=int, default=16)


def _add_srd(p):
    p.add_argument("--srd-mode", choices=SRD_MODES, default="full")
    p.add_argument("--saliency", choices=("contrast", "model_grad", "random"),
                   default="contrast")
    p.add_argument("--p-srd", type=float, default=0.5)


def _add_train2(p):
    p.add_argument("--phase2-mode", choices=ASSEMBLY_MODES, default="both")
    p.add_argument("--eps", default="0.5/255", help="fraction like 0.5/255 or decimal")
    p.add_argument("--eps-start", default=None,
                   help="linear schedule start (default: same as --eps)")
    p.add_argument("--eps-schedule", choices=("constant", "linear"), default="constant")
    p.add_argument("--inner-iters", type=int, default=10)
    p.add_argument("--norm", choices=("linf", "l2"), default="linf")
    p.add_argument("--beta", type=float, default=0.0,
                   help="consistency weight; > 0 switches to the TRADES-style loss")
    p.add_argument("--use-ground-truth", action="store_true",
                   help="train on true frame labels (the supervised eps study)")
    p.add_argument("--reinit", action="store_true",
                   help="re-initialize instead of continuing from the checkpoint")
    p.add_argument("--checkpoint", default="phase1")


def _add_attack(p):
    p.add_argument("--attack-family", choices=EVAL_FAMILIES, default="pgd")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--tag", default=None)
    if not any(a.dest == "eps" for a in p._actions):
        p.add_argument("--eps", default="0.5/255")
    if not any(a.dest == "norm" for a in p._actions):
        p.add_argument("--norm", choices=("linf", "l2"), default="linf")
    if not any(a.dest == "checkpoint" for a in p._actions):
        p.add_argument("--checkpoint", default="phase2")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="robustvad",
        description="Two-phase robust weakly supervised video anomaly detection "
                    "on synthetic scenes.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    _add_common(p); _add_scene(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-phase1", help="weak MIL training")
    _add_common(p); _add_train1(p)
    p.set_defaults(fn=cmd_train_phase1)

    p = sub.add_parser("pseudo-label", help="threshold phase-1 scores")
    _add_common(p)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--checkpoint", default="phase1")
    p.set_defaults(fn=cmd_pseudo_label)

    p = sub.add_parser("gen-srd", help="materialize distorted pseudo-anomalies")
    _add_common(p); _add_srd(p)
    p.add_argument("--chunk-size", type=int, default=16)
    p.add_argument("--checkpoint", default="phase1")
    p.set_defaults(fn=cmd_gen_srd)

    p = sub.add_parser("train-phase2", help="adversarial chunk-level training")
    _add_common(p); _add_train1(p); _add_srd(p); _add_train2(p)
    p.set_defaults(fn=cmd_train_phase2)

    p = sub.add_parser("attack-eval", help="clean or attacked evaluation")
    _add_common(p); _add_attack(p)
    p.set_defaults(fn=cmd_attack_eval)

    p = sub.add_parser("report", help="merge saved evaluations into one CSV")
    _add_common(p)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run-all", help="full two-phase experiment")
    _add_common(p); _add_scene(p); _add_train1(p); _add_srd(p); _add_train2(p)
    _add_attack(p)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(fn=cmd_run_all)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except RobustVadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
