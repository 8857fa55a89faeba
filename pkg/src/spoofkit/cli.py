"""Command-line entry point: sample, train, eval, calibrate, analyze, synth.

Every command is deterministic given its inputs: artifacts embed the
config hash, seed, and toolkit version, and wall-clock timestamps live
only in the events.log sidecar. Exit codes: 0 success, 2 validation
error, 3 runtime/numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, analysis, calibrate, config, evaluation, model, optim
from . import synthdata
from .manifest import (Manifest, load_manifest, sample_fixed, sample_proportioned,
                       save_manifest, split_by_subset)

log = logging.getLogger("spoofkit")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _provenance(path: Path, payload: dict) -> None:
    payload = {"toolkit_version": __version__, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _attach_events_log(out_dir: Path) -> None:
    """Timestamps are confined to this sidecar; all other artifacts are
    byte-stable across reruns."""
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "events.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    logging.getLogger().setLevel(logging.INFO)


# ---------------------------------------------------------------------------
# Commands

def cmd_sample(args: argparse.Namespace) -> int:
    m = load_manifest(args.manifest)
    if args.fake_fraction is None:
        sampled = sample_fixed(m, args.n, args.seed)
    else:
        sampled = sample_proportioned(m, args.n, args.fake_fraction, args.seed)
    out = Path(args.out)
    save_manifest(sampled, out)
    _provenance(out.with_suffix(out.suffix + ".provenance.json"), {
        "command": "sample", "source_manifest": str(args.manifest), "n": args.n,
        "fake_fraction": args.fake_fraction, "seed": args.seed,
        "output_entries": len(sampled),
    })
    print(f"wrote {len(sampled)} entries to {out}")
    return EXIT_OK


def _load_experiment(args: argparse.Namespace):
    cfg = config.load_config(args.config)
    base_dir = Path(args.config).parent
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.output_dir = str(args.out)
    if getattr(args, "epochs", None) is not None:
        cfg.optimizer = {**cfg.optimizer, "epochs": args.epochs}
    return cfg, base_dir


def cmd_train(args: argparse.Namespace) -> int:
    cfg, base_dir = _load_experiment(args)
    run_dir = Path(cfg.output_dir)
    if not run_dir.is_absolute():
        run_dir = base_dir / run_dir
    _attach_events_log(run_dir)
    manifests = config.resolve_manifests(cfg, base_dir)
    if "train" not in manifests or "val" not in manifests:
        raise ValueError("training requires 'train' and 'val' manifests "
                         "(or a subset-tagged 'all' manifest)")
    provider = model.load_provider(cfg.provider, base_dir=None)
    loss_cfg = config.build_loss_config(cfg)
    opt_cfg = config.build_optimizer_config(cfg)
    policy = config.build_policy(cfg, base_dir)
    teacher = None
    if cfg.teacher_checkpoint:
        teacher_path = Path(cfg.teacher_checkpoint)
        if not teacher_path.is_absolute():
            teacher_path = base_dir / teacher_path
        teacher, _ = model.load_state(teacher_path)
    dim = provider.dim
    if dim is None:  # file provider: probe the first training entry
        dim = provider.embed(manifests["train"].entries[0]).shape[1]
    state = model.init_state(cfg.seed, dim,
                             with_adapter=bool(cfg.model.get("with_adapter", False)),
                             leaky_relu_slope=float(cfg.model.get("leaky_relu_slope", 0.01)))
    config.save_config(cfg, run_dir / "config.json")
    win_s = float(cfg.scoring.get("window_s", 3.5))
    run = optim.train(manifests["train"], manifests["val"], provider, state,
                      loss_cfg, opt_cfg, policy, cfg.seed, run_dir,
                      teacher_state=teacher, config_hash=cfg.config_hash(),
                      win_s=win_s)
    print(f"trained {opt_cfg.epochs} epochs -> {run.run_dir} "
          f"(final val loss {run.checkpoints[-1].val_loss:.6f})")
    return EXIT_OK


def _select_state(args: argparse.Namespace):
    if args.checkpoint:
        state, header = model.load_state(args.checkpoint)
        return state, {"checkpoint": str(args.checkpoint), **{
            k: header.get(k) for k in ("seed", "config_hash")}}
    if not args.run:
        raise ValueError("provide --checkpoint or --run")
    records = optim.read_run_log(args.run)
    if args.swa:
        state = optim.select_checkpoint(records, "swa", k=args.swa)
        return state, {"run": str(args.run), "selection": f"swa({args.swa})"}
    state = optim.select_checkpoint(records, "best_val")
    return state, {"run": str(args.run), "selection": "best_val"}


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, base_dir = _load_experiment(args)
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir) / "eval"
    _attach_events_log(out_dir)
    state, selection = _select_state(args)
    provider = model.load_provider(cfg.provider, base_dir=None)
    manifests = config.resolve_manifests(cfg, base_dir)
    if args.manifest:
        m = load_manifest(args.manifest)
    elif "test" in manifests:
        m = manifests["test"]
    else:
        raise ValueError("no manifest to evaluate: pass --manifest or configure one")
    mode = args.mode or cfg.scoring.get("mode", "windowed")
    agg = args.agg or cfg.scoring.get("agg", "mean")
    scores, report = evaluation.evaluate_manifest(
        state, provider, m, mode=mode, agg=agg,
        win_s=float(cfg.scoring.get("window_s", 3.5)),
        step_s=float(cfg.scoring.get("step_s", 0.5)),
        workers=args.workers)
    report.update({"toolkit_version": __version__, "seed": cfg.seed,
                   "config_hash": cfg.config_hash(), "selection": selection})
    evaluation.write_scores_csv(scores, out_dir / "scores.csv")
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    metrics = report.get("metrics")
    if metrics:
        print(f"eer {metrics['eer']:.4f}  auc {metrics['auc']:.4f}  "
              f"acc {metrics['accuracy']:.4f}  f1 {metrics['f1']:.4f}")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    cal_set = evaluation.read_scores_csv(args.cal_scores)
    target = evaluation.read_scores_csv(args.scores)
    platt = calibrate.platt_fit(cal_set)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    calibrate.save_model(platt, out_dir / "calibration.json",
                         fitted_on=str(args.cal_scores), n_records=len(cal_set),
                         extra={"toolkit_version": __version__})
    calibrated = calibrate.calibrate_scores(platt, target)
    evaluation.write_scores_csv(calibrated, out_dir / "calibrated.csv")
    print(f"a0 {platt.a0:.6f}  a1 {platt.a1:.6f}"
          + ("  [separation flagged]" if platt.separation_flag else ""))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    scores = evaluation.read_scores_csv(args.scores)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.category:
        report = analysis.category_report(scores, args.category,
                                          threshold=args.threshold)
        analysis.write_category_report_csv(report, out_dir / "category.csv")
        flagged = [r.category for r in report.rows if r.flagged]
        print(f"{len(report.rows)} categories, global accuracy "
              f"{report.global_accuracy:.4f}"
              + (f", flagged: {flagged}" if flagged else ""))
        return EXIT_OK
    if not args.field:
        raise ValueError("analyze needs --field with --edges, or --category")
    edges = tuple(float(e) for e in args.edges.split(","))
    report = analysis.binned_eer(scores, analysis.BinSpec(args.field, edges))
    analysis.write_bin_report_csv(report, out_dir / "bins.csv")
    summary = ", ".join(
        f"[{r.low:g},{r.high:g}): " + (f"{r.eer:.4f}" if r.eer is not None else r.note)
        for r in report.rows)
    print(summary)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synthdata.SynthSpec(
        n_per_class=args.n_per_class,
        duration_range_s=(args.duration[0], args.duration[1]),
        separation=args.separation, seed=args.seed,
        snr_by_duration_db=tuple(args.duration_snr) if args.duration_snr else None,
        embedding_dim=args.embedding_dim)
    if args.embeddings:
        m = synthdata.generate_embedding_store(spec, args.out)
    else:
        m = synthdata.generate_corpus(spec, args.out)
    print(f"wrote {len(m)} entries under {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spoofkit",
        description="Train, evaluate, calibrate, and analyze audio anti-spoofing "
                    "countermeasures.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="deterministically subsample a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--fake-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="run the training protocol from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a manifest and report metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--run", default=None)
    p.add_argument("--swa", type=int, default=None,
                   help="average this many checkpoints around the best epoch")
    p.add_argument("--manifest", default=None)
    p.add_argument("--mode", choices=("whole", "windowed"), default=None)
    p.add_argument("--agg", choices=("mean", "max"), default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="fit and apply Platt calibration")
    p.add_argument("--cal-scores", required=True,
                   help="score CSV used to fit the calibration")
    p.add_argument("--scores", required=True, help="score CSV to calibrate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", help="bin-wise EER or per-category accuracy")
    p.add_argument("--scores", required=True)
    p.add_argument("--field", choices=analysis.BIN_FIELDS, default=None)
    p.add_argument("--edges", default="0,2,4,8,16")
    p.add_argument("--category", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--duration", type=float, nargs=2, default=(1.0, 3.0),
                   metavar=("LO", "HI"))
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration-snr", type=float, nargs=2, default=None,
                   metavar=("SHORT_DB", "LONG_DB"),
                   help="extra noise SNR interpolated over the duration range")
    p.add_argument("--embeddings", action="store_true",
                   help="generate an embedding store instead of WAV audio")
    p.add_argument("--embedding-dim", type=int, default=16)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    root = logging.getLogger()
    before = list(root.handlers)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, ArithmeticError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        for handler in list(root.handlers):  # drop per-command file handlers
            if handler not in before:
                root.removeHandler(handler)
                handler.close()


if __name__ == "__main__":
    sys.exit(main())
