"""Command-line entry point: ``rawgat-st {train,score,eval,audit}``.

Exit status is 0 on success, 2 for configuration or usage errors and 1 for
failures at run time (unreadable inputs, corrupt checkpoints, divergence).
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import config as cfgmod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    AudioFormatError,
    load_manifest,
    make_synthetic_dataset,
    read_protocol,
)
from .metrics import BONAFIDE, ScoreRecord, format_report, per_attack_report
from .model import STANDARD_SHAPES, ConfigError, ModelConfig, RawGatST, expected_shapes, scores_from_logits, shape_trace
from .train import LOG_HEADER, EpochRecord, TrainingDiverged, predict_logits, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PARAM_RANGE = (350_000, 550_000)
ABLATIONS = {"spectral": "model.use_spectral", "temporal": "model.use_temporal", "pooling": "model.use_pooling"}


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _settings(args) -> cfgmod.Settings:
    s = cfgmod.load(args.config, args.set or ())
    if getattr(args, "seed", None) is not None:
        s.set("seed", args.seed)
    if getattr(args, "fusion", None) is not None:
        s.set("model.fusion", args.fusion)
    for name in getattr(args, "ablate", None) or ():
        s.set(ABLATIONS[name], False)
    return s


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _datasets(s: cfgmod.Settings, length: int):
    if s["data.synthetic"]:
        seed = s["data.synthetic_seed"]
        for key in ("data.synthetic_train", "data.synthetic_dev"):
            if s[key] < 1:
                raise ConfigError(f"{key}: must be >= 1")
        return (
            make_synthetic_dataset(s["data.synthetic_train"], seed, length),
            make_synthetic_dataset(s["data.synthetic_dev"], seed + 1, length),
        )
    sets = []
    for key in ("data.train", "data.dev"):
        path = s.require(key)
        if not Path(path).is_file():
            raise ConfigError(f"{key}: no such manifest {path}")
        utts = load_manifest(path, length)
        if not utts:
            raise ConfigError(f"{key}: manifest {path} lists no utterances")
        unlabeled = [u.utt_id for u in utts if u.label is None]
        if unlabeled:
            raise ConfigError(f"{key}: utterance {unlabeled[0]} has no label")
        sets.append(utts)
    return tuple(sets)


def cmd_train(s: cfgmod.Settings, out: Optional[str] = None) -> int:
    if out is not None:
        s.set("out.dir", out)
    model_cfg = s.model_config()
    train_cfg = s.train_config()
    out_dir = Path(s.require("out.dir"))
    ckpt_path = Path(s["checkpoint"]) if s["checkpoint"] else out_dir / "checkpoint.npz"
    log_path = out_dir / "train.log"
    train_set, dev_set = _datasets(s, model_cfg.segment_length)

    model = RawGatST(model_cfg)
    print(f"model: {model.num_parameters()} trainable parameters, fusion={model_cfg.fusion}", flush=True)
    lines = [LOG_HEADER]

    def on_epoch(rec: EpochRecord) -> None:
        lines.append(rec.format())
        atomic_write(log_path, "\n".join(lines) + "\n")
        print(lines[-1], flush=True)

    def on_improve(m: RawGatST, rec: EpochRecord) -> None:
        save_checkpoint(
            ckpt_path, m, train_config=train_cfg.to_dict(), epoch=rec.epoch, dev_loss=rec.dev_loss
        )

    try:
        result = train(model, train_set, dev_set, train_cfg, on_epoch=on_epoch, on_improve=on_improve)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}; last good checkpoint kept at {ckpt_path}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"best epoch {result.best_epoch}, dev loss {result.best_dev_loss:.6f}; checkpoint {ckpt_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def cmd_score(s: cfgmod.Settings, checkpoint: Optional[str], manifest: Optional[str], out: Optional[str]) -> int:
    ckpt = checkpoint or s.require("checkpoint")
    manifest = manifest or s.require("data.score")
    out = out or s.require("out.scores")
    if not Path(manifest).is_file():
        raise ConfigError(f"data.score: no such manifest {manifest}")
    model, _ = load_checkpoint(ckpt)
    for key in ("fusion", "use_spectral", "use_temporal", "use_pooling"):
        name = f"model.{key}"
        if name in s.explicit and s[name] != getattr(model.config, key):
            raise ConfigError(f"{name}: checkpoint has {getattr(model.config, key)!r}, configuration asks for {s[name]!r}")
    utts = load_manifest(manifest, model.config.segment_length)
    if not utts:
        raise ConfigError(f"data.score: manifest {manifest} lists no utterances")
    x = np.stack([u.samples for u in utts])
    scores = scores_from_logits(predict_logits(model, x))
    atomic_write(out, "".join(f"{u.utt_id} {sc:.9g}\n" for u, sc in zip(utts, scores)))
    print(f"wrote {len(utts)} scores to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def read_scores(path) -> List[tuple]:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'utterance-id score'")
            score = float(fields[1])
            if not np.isfinite(score):
                raise ValueError(f"{path}:{lineno}: non-finite score")
            rows.append((fields[0], score))
    return rows


def cmd_eval(scores_path: str, protocol_path: str, out: Optional[str] = None) -> int:
    for key, path in (("scores", scores_path), ("data.protocol", protocol_path)):
        if not path or not Path(path).is_file():
            raise ConfigError(f"{key}: no such file {path}")
    protocol = {e.utt_id: e for e in read_protocol(protocol_path)}
    records = []
    for utt, score in read_scores(scores_path):
        entry = protocol.get(utt)
        if entry is None:
            raise ValueError(f"utterance {utt!r} from {scores_path} is not in protocol {protocol_path}")
        records.append(ScoreRecord(utt, score, entry.label, entry.attack))
    rows = per_attack_report(records)
    n_bona = sum(r.label == BONAFIDE for r in records)
    report = format_report(rows, n_bona=n_bona)
    pooled = rows[-1]
    print(f"pooled EER: {100.0 * pooled['eer']:.4f}% at threshold {pooled['threshold']:.6g}")
    print(report, end="")
    if out:
        atomic_write(out, report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


def _fmt_shape(shape) -> str:
    if shape is None:
        return "-"
    if shape and isinstance(shape[0], (tuple, type(None))):
        return " | ".join(_fmt_shape(s) for s in shape)
    return str(tuple(shape))


def audit_rows(model_cfg: ModelConfig):
    """[(stage, expected, observed, ok)] plus the parameter count."""
    reference = expected_shapes(model_cfg)
    if reference == expected_shapes(ModelConfig(fusion=model_cfg.fusion)):
        reference = STANDARD_SHAPES[model_cfg.fusion]
    model = RawGatST(model_cfg)
    observed = dict(shape_trace(model, seed=model_cfg.seed))
    rows = []
    for stage, want in reference.items():
        got = observed.get(stage)
        rows.append((stage, want, got, want == got))
    return rows, model.num_parameters()


def cmd_audit(s: cfgmod.Settings, out: Optional[str] = None) -> int:
    model_cfg = s.model_config()
    rows, n_params = audit_rows(model_cfg)
    lines = [f"fusion={model_cfg.fusion} spectral={model_cfg.use_spectral} temporal={model_cfg.use_temporal} "
             f"pooling={model_cfg.use_pooling} segment={model_cfg.segment_length}"]
    lines.append(f"{'stage':<14}{'expected':<24}{'observed':<24}status")
    for stage, want, got, ok in rows:
        lines.append(f"{stage:<14}{_fmt_shape(want):<24}{_fmt_shape(got):<24}{'OK' if ok else 'MISMATCH'}")
    lo, hi = PARAM_RANGE
    verdict = "within" if lo <= n_params <= hi else "outside"
    lines.append(f"trainable parameters: {n_params} ({verdict} [{lo}, {hi}])")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if out:
        atomic_write(out, text)
    bad = [r[0] for r in rows if not r[3]]
    if bad:
        print(f"error: shape divergence at {', '.join(bad)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    keys = "configuration keys (file lines 'key = value', or --set key=value):\n" + cfgmod.describe_keys()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file of 'key = value' lines")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--seed", type=int, help="overrides 'seed'")
    model_flags.add_argument("--fusion", choices=("add", "mul", "concat"), help="overrides 'model.fusion'")
    model_flags.add_argument(
        "--ablate", action="append", choices=sorted(ABLATIONS), help="disable a branch or pooling (repeatable)"
    )

    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="rawgat-st",
        description="Train, score, evaluate and audit the spectro-temporal graph attention countermeasure.",
        epilog=keys + "\n\nexit status: 0 ok, 2 usage/configuration error, 1 runtime failure",
        formatter_class=fmt,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, model_flags], help="train a model", epilog=keys, formatter_class=fmt)
    p.add_argument("--out", help="output directory (overrides 'out.dir')")
    p.add_argument("--checkpoint", help="checkpoint path (default: <out.dir>/checkpoint.npz)")

    p = sub.add_parser("score", parents=[common, model_flags], help="score a manifest", epilog=keys, formatter_class=fmt)
    p.add_argument("--checkpoint", help="checkpoint to load (overrides 'checkpoint')")
    p.add_argument("--manifest", help="utterances to score (overrides 'data.score')")
    p.add_argument("--out", help="score file to write (overrides 'out.scores')")

    p = sub.add_parser("eval", parents=[common], help="EER report from a score file", epilog=keys, formatter_class=fmt)
    p.add_argument("scores", nargs="?", help="score file (default: 'out.scores')")
    p.add_argument("protocol", nargs="?", help="protocol file (default: 'data.protocol')")
    p.add_argument("--out", help="write the report table here as well (overrides 'out.report')")

    p = sub.add_parser("audit", parents=[common, model_flags], help="shape and parameter audit", epilog=keys, formatter_class=fmt)
    p.add_argument("--out", help="write the audit table here as well")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        s = _settings(args)
        if args.command == "train":
            if args.checkpoint:
                s.set("checkpoint", args.checkpoint)
            return cmd_train(s, args.out)
        if args.command == "score":
            return cmd_score(s, args.checkpoint, args.manifest, args.out)
        if args.command == "eval":
            scores = args.scores or s.require("out.scores")
            protocol = args.protocol or s.require("data.protocol")
            return cmd_eval(scores, protocol, args.out or s["out.report"])
        return cmd_audit(s, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, AudioFormatError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
