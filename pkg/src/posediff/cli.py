"""Command-line entry point: ``posediff synth|train|eval|ablate|score``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or schema
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from .config import CONFIG_DOCS, ExperimentConfig, config_keys, dump_config, load_config
from .errors import PosediffError
from .evaluation import ablate, run_benchmark, write_ablation_table
from .motion_data import PoseDataset, Skeleton, generate_synthetic, load_manifest, write_labels, write_manifest, write_tracks
from .scoring import generate, window_frame_scores
from .training import check_compatible, fit, load_checkpoint
from .validation import check_dataset

logger = logging.getLogger("posediff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _defaults(cfg=None, prefix=""):
    cfg = cfg or ExperimentConfig()
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out.update(_defaults(v, prefix + f.name + "."))
        else:
            out[prefix + f.name] = v
    return out


def config_help() -> str:
    lines = ["configuration keys (set in --config or with --set KEY=VALUE):"]
    defaults = _defaults()
    for key in config_keys():
        lines.append(f"  {key} = {defaults.get(key)!r}")
    lines.append("")
    lines.append("key notes:")
    for key, doc in CONFIG_DOCS.items():
        lines.append(f"  {key}: {doc}")
    lines.append("")
    lines.append("environment: POSEDIFF_OUTPUT_DIR, POSEDIFF_WORKERS")
    lines.append("exit codes: 0 ok, 1 usage/config, 2 data/schema, 3 numeric")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", "-c", help="YAML or JSON experiment config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--log-level", default="INFO")
    epilog = config_help()
    p = _Parser(prog="posediff", description="Pose anomaly detection by conditional motion diffusion.",
                epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    kw = dict(parents=[common], epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_parser("synth", help="write synthetic train/test pose data", **kw)
    tr = sub.add_parser("train", help="train a model on normal data", **kw)
    tr.add_argument("--resume", action="store_true", help="continue from OUTPUT_DIR/checkpoint.bin")
    ev = sub.add_parser("eval", help="score a labelled test set and report ROC-AUC", **kw)
    ev.add_argument("--checkpoint", help="defaults to OUTPUT_DIR/checkpoint.bin")
    ev.add_argument("--histograms", action="store_true", help="also write per-label error histograms")
    sub.add_parser("ablate", help="train and evaluate every strategy x task cell", **kw)
    sc = sub.add_parser("score", help="write frame anomaly scores (no labels needed)", **kw)
    sc.add_argument("--checkpoint", help="defaults to OUTPUT_DIR/checkpoint.bin")
    sc.add_argument("--input", help="manifest or NDJSON track file (default: the test set)")
    sc.add_argument("--output", help="CSV path (default OUTPUT_DIR/scores.csv)")
    return p


def _dataset(cfg: ExperimentConfig, which: str) -> PoseDataset:
    manifest = getattr(cfg.data, f"{which}_manifest")
    if manifest:
        return load_manifest(manifest)
    spec = getattr(cfg.data, f"synthetic_{which}")
    if spec is None:
        raise PosediffError(f"no {which} data: set data.{which}_manifest or data.synthetic_{which}")
    tracks, labels = generate_synthetic(spec)
    return PoseDataset(tracks, labels, Skeleton.default_for(spec.joint_count))


def _out(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg) / "data"
    out.mkdir(parents=True, exist_ok=True)
    for which in ("train", "test"):
        spec = getattr(cfg.data, f"synthetic_{which}")
        if spec is None:
            continue
        tracks, labels = generate_synthetic(spec)
        write_tracks(tracks, out / f"{which}_tracks.ndjson")
        write_labels(labels, out / f"{which}_labels.ndjson")
        write_manifest(out / f"{which}.yaml", Skeleton.default_for(spec.joint_count),
                       f"{which}_tracks.ndjson", f"{which}_labels.ndjson")
        print(f"{which}: {len(tracks)} tracks, {sum(labels.values())} anomalous of {len(labels)} frames "
              f"-> {out / (which + '.yaml')}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    tcfg = cfg.resolved_train()
    ds = _dataset(cfg, "train")
    state = None
    ckpt = out / "checkpoint.bin"
    if args.resume:
        state = load_checkpoint(ckpt)
        a, b = dataclasses.asdict(state.config), dataclasses.asdict(tcfg)
        a.pop("epochs"), b.pop("epochs")
        if a != b:
            raise PosediffError("--resume with a config that differs from the checkpoint (only epochs may change)")
        logger.info("resuming at epoch %d", state.epoch)
    (out / "config.yaml").write_text(dump_config(cfg))
    metrics = (out / "metrics.jsonl").open("a" if args.resume else "w")

    def on_step(rec):
        line = json.dumps(rec)
        metrics.write(line + "\n")
        print(line, flush=True)

    try:
        state = fit(tcfg, ds, out, state, on_step)
    finally:
        metrics.close()
    print(f"checkpoint: {ckpt} (epoch {state.epoch}, step {state.step})")
    return EXIT_OK


def _checkpoint(cfg, args):
    path = Path(args.checkpoint) if args.checkpoint else Path(cfg.output_dir) / "checkpoint.bin"
    return load_checkpoint(path)


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    state = _checkpoint(cfg, args)
    ds = _dataset(cfg, "test")
    out = _out(cfg)
    report, art = run_benchmark(state, ds, cfg.eval, cfg.seed, with_artifacts=True)
    for r in report.table:
        print(f"AUC statistic={r['statistic']} m={r['m']}: {r['auc']:.6f}")
    report.write(out / "report.json")
    report.write_table(out / "auc_table.csv")
    art.series.write_csv(out / "frame_scores.csv")
    if args.histograms:
        (out / "histograms.json").write_text(json.dumps(art.histograms, indent=2))
        print(f"histograms: {out / 'histograms.json'}")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    cells = ablate(cfg.resolved_train(), _dataset(cfg, "train"), _dataset(cfg, "test"),
                   cfg.ablation.strategies, cfg.ablation.tasks, cfg.eval, cfg.seed)
    for c in cells:
        print(f"{c.strategy:>14s} {c.task:>18s} AUC={c.report.auc:.6f}")
    write_ablation_table(cells, out / "ablation.csv")
    print(f"table: {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_score(cfg: ExperimentConfig, args) -> int:
    state = _checkpoint(cfg, args)
    ds = check_dataset(args.input, skeleton=state.skeleton) if args.input else _dataset(cfg, "test")
    check_compatible(state, ds.skeleton)
    ws = state.windows(ds.tracks)
    errors = generate(state, ws, cfg.eval.default_m, cfg.seed, cfg.eval.chunk_size)
    series = window_frame_scores(errors, ws, cfg.eval.default_statistic)
    path = Path(args.output) if args.output else _out(cfg) / "scores.csv"
    series.write_csv(path)
    print(f"scores: {path} ({len(series)} frames)")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "score": cmd_score}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        torch.set_num_threads(max(1, int(cfg.workers)))
        return COMMANDS[args.command](cfg, args)
    except PosediffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
