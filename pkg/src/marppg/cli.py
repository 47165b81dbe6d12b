"""Command-line entry point: ``marppg {synth,train,eval,infer,gradcheck}``.

Exit codes: 0 success, 1 operational error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .checks import TOLERANCE, REGISTRY, run_checks
from .config import ConfigError, RunConfig, load_config, parse_overrides, save_config
from .data import ChunkFormatError, ManifestError, load_manifest, read_chunk, synth_dataset
from .evaluation import (
    evaluate_signals, evaluate_model, green_channel_signal, hr_from_prediction, predict,
    write_attention_csv, write_bland_altman_csv, write_hrv_csv, write_metrics_csv, write_signal_csv,
)
from .metrics import MetricsError, metrics_report
from .model import EREA
from .numerics import CheckpointError, load_checkpoint
from .signal import SignalError
from .training import TrainingDiverged, train

OK, OPERATIONAL, VERIFICATION = 0, 1, 2

log = logging.getLogger("marppg")


class CommandError(RuntimeError):
    pass


def _stamp(cfg_path: Path, cfg: RunConfig, deterministic: bool) -> None:
    """Record the effective config next to the outputs."""
    save_config(cfg_path, cfg)
    if not deterministic:
        text = cfg_path.read_text(encoding="utf-8")
        cfg_path.write_text(f"# generated {time.strftime('%Y-%m-%dT%H:%M:%S')}\n{text}", encoding="utf-8")


def _load_model(cfg: RunConfig) -> EREA:
    path = cfg.checkpoint_path()
    if not path.exists():
        raise CommandError(f"checkpoint not found: {path}")
    model = EREA(cfg.model_config(), seed=cfg.seed)
    model.load_state_dict(load_checkpoint(path))
    return model


def cmd_synth(cfg: RunConfig, deterministic: bool = False) -> int:
    out = Path(cfg.out_dir)
    manifest = synth_dataset(cfg.synth_config(), cfg.n_train, cfg.n_val, cfg.n_test, out)
    _stamp(out / "run_config.txt", cfg, deterministic)
    print(manifest.path)
    return OK


def cmd_train(cfg: RunConfig, deterministic: bool = False) -> int:
    manifest = load_manifest(cfg.manifest_path())
    out = Path(cfg.out_dir)
    try:
        _, records = train(cfg.train_config(), manifest, out, model_cfg=cfg.model_config())
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return OPERATIONAL
    _stamp(out / "run_config.txt", cfg, deterministic)
    final = records[-1].loss_total if records else float("nan")
    print(f"final loss {final:.6f} after {len(records)} steps")
    return OK


def cmd_eval(cfg: RunConfig, deterministic: bool = False, source: str = "model") -> int:
    manifest = load_manifest(cfg.manifest_path())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hrv_rows = []
    if source == "model":
        report, hrv_rows = evaluate_model(_load_model(cfg), manifest, "test", band=cfg.band)
    else:
        items = []
        for path in manifest.split("test"):
            chunk = read_chunk(path)
            signal = chunk.ppg if source == "labels" else green_channel_signal(chunk)
            items.append((chunk.source_id, signal, chunk.ppg, chunk.fs))
        report = metrics_report(evaluate_signals(items, band=cfg.band, postprocess=source != "labels"))
    write_metrics_csv(out / "metrics_report.csv", report)
    if report.n >= 2:
        write_bland_altman_csv(out / "bland_altman.csv", report)
    if hrv_rows:
        write_hrv_csv(out / "hrv_report.csv", hrv_rows)
    _stamp(out / "eval_config.txt", cfg, deterministic)
    print(f"n={report.n} MAE={report.mae:.3f} BPM RMSE={report.rmse:.3f} BPM "
          f"MAPE={100 * report.mape:.2f}% r={report.pearson_r:.4f}")
    return OK


def cmd_infer(cfg: RunConfig, chunk_path, deterministic: bool = False) -> int:
    chunk = read_chunk(chunk_path)
    model = _load_model(cfg)
    signal, maps = predict(model, chunk)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_signal_csv(out / f"{chunk.source_id}_signal.csv", signal, chunk.fs)
    write_attention_csv(out / f"{chunk.source_id}_attention.csv", maps)
    hr = hr_from_prediction(signal, chunk.fs, cfg.band)
    print(f"HR {hr:.2f} BPM")
    return OK


def cmd_gradcheck(cfg: RunConfig, deterministic: bool = False) -> int:
    results = run_checks(points=10, seed=cfg.seed)
    width = max(len(n) for n in REGISTRY)
    failed = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {r.max_error:.3e}  {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradient check failed (tol {TOLERANCE:g}): {', '.join(failed)}", file=sys.stderr)
        return VERIFICATION
    return OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--deterministic", action="store_true",
                        help="omit the timestamp header from written config files")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser = argparse.ArgumentParser(prog="marppg", description="Masked attention rPPG toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train on a manifest")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--source", choices=("model", "labels", "green"), default="model",
                   help="signal to evaluate: model output, the labels themselves, or green-channel mean")
    p = sub.add_parser("infer", parents=[common], help="run one chunk file")
    p.add_argument("chunk", type=Path)
    sub.add_parser("gradcheck", parents=[common], help="check every backward rule numerically")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    pairs = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        pairs[key.strip()] = value.strip()
    cfg = parse_overrides(pairs, cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(out_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg, args.deterministic)
        if args.command == "train":
            return cmd_train(cfg, args.deterministic)
        if args.command == "eval":
            return cmd_eval(cfg, args.deterministic, args.source)
        if args.command == "infer":
            return cmd_infer(cfg, args.chunk, args.deterministic)
        return cmd_gradcheck(cfg, args.deterministic)
    except (CommandError, ConfigError, ChunkFormatError, ManifestError, CheckpointError,
            SignalError, MetricsError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return OPERATIONAL


if __name__ == "__main__":
    sys.exit(main())
