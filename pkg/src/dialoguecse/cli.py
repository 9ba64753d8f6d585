"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All outputs go to paths named by flags; a one-line summary (or a table)
is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import load_corpus, preprocess, save_corpus
from .errors import CorpusFormatError, DataError, NumericalError
from .evaluation import (
    evaluate_dsts,
    evaluate_sr,
    format_table,
    read_dsts_file,
    read_sr_file,
    write_dsts_file,
    write_sr_file,
)
from .gradsuite import full_loss_report, op_reports
from .synth import SynthSpec, synth_corpus
from .trainer import SWEEP_AXES, TrainConfig, model_from_checkpoint, sweep, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage errors to 1
        raise UsageError(message)


def _write_json(path: str, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_config(args) -> TrainConfig:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{args.config}: invalid JSON ({exc.msg})") from exc
        if not isinstance(cfg, dict):
            raise CorpusFormatError(f"{args.config}: config must be a JSON object")
    overrides = {
        "model": getattr(args, "model", None),
        "aggregation": getattr(args, "agg", None),
        "tau": getattr(args, "tau", None),
        "m_neg": getattr(args, "neg", None),
        "turn_budget": getattr(args, "turns", None),
        "steps": getattr(args, "steps", None),
        "seed": getattr(args, "seed", None),
        "precision": getattr(args, "precision", None),
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    if isinstance(cfg.get("model"), str):
        cfg["model"] = cfg["model"].replace("-", "_")
    return TrainConfig.from_dict(cfg)


def _eval_paths(out: str) -> tuple[str, str]:
    stem = out[: -len(".jsonl")] if out.endswith(".jsonl") else out
    return f"{stem}.sr.jsonl", f"{stem}.dsts.jsonl"


# -- subcommands -------------------------------------------------------------


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        intents=args.intents,
        templates_per_intent=args.templates,
        sessions=args.sessions,
        turns_per_session=args.turns_per_session,
        noise_rate=args.noise,
        seed=args.seed,
    )
    result = synth_corpus(spec, sr_queries=args.sr_queries, dsts_pairs=args.dsts_pairs)
    save_corpus(result.sessions, args.out)
    sr_path, dsts_path = _eval_paths(args.out)
    write_sr_file(result.sr_samples, sr_path)
    write_dsts_file(result.dsts_pairs, dsts_path)
    print(
        f"wrote {len(result.sessions)} sessions to {args.out}, "
        f"{len(result.sr_samples)} SR samples to {sr_path}, "
        f"{len(result.dsts_pairs)} D-STS pairs to {dsts_path}"
    )
    return 0


def _cmd_preprocess(args) -> int:
    sessions = preprocess(load_corpus(args.corpus))
    save_corpus(sessions, args.out)
    print(f"wrote {len(sessions)} preprocessed sessions to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    result = train(config, args.corpus, log_every=args.log_every)
    result.checkpoint.save(args.out)
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {config.model} for {config.steps} steps (final loss {final:.4f}); "
          f"checkpoint at {args.out}")
    return 0


def _cmd_eval_sr(args) -> int:
    model = model_from_checkpoint(Checkpoint.load(args.ckpt))
    samples = read_sr_file(args.data)
    metrics = evaluate_sr(model.embedder(), samples)
    report = {"map": metrics.map, "mrr": metrics.mrr, "excluded": metrics.excluded}
    print(format_table(["metric", "value"],
                       [["map", f"{metrics.map:.4f}"], ["mrr", f"{metrics.mrr:.4f}"],
                        ["excluded", metrics.excluded]]))
    if args.out:
        _write_json(args.out, report)
    return 0


def _cmd_eval_dsts(args) -> int:
    model = model_from_checkpoint(Checkpoint.load(args.ckpt))
    pairs = read_dsts_file(args.data)
    rho = evaluate_dsts(model.embedder(), pairs)
    print(format_table(["metric", "value"], [["spearman", f"{rho:.4f}"]]))
    if args.out:
        _write_json(args.out, {"spearman": rho})
    return 0


def _cmd_embed(args) -> int:
    model = model_from_checkpoint(Checkpoint.load(args.ckpt))
    lines = Path(args.data).read_text(encoding="utf-8").splitlines()
    embed = model.embedder()
    rows = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            raise CorpusFormatError(f"line {line_no}: empty sentence")
        vec = embed(line)
        rows.append(" ".join(f"{x:.9g}" for x in vec))
    Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} embeddings of width {model.config.dim} to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    sessions = load_corpus(args.corpus)
    sr_samples = read_sr_file(args.data)
    dsts_pairs = read_dsts_file(args.dsts)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values must be a comma-separated number list: {exc}") from exc
    if not values:
        raise UsageError("--values is empty")
    report = sweep(config, args.axis, values, sessions, sr_samples, dsts_pairs)
    print(report.table())
    if args.out:
        _write_json(args.out, report.to_dict())
    return 0


def _cmd_gradcheck(args) -> int:
    checks = op_reports()
    if args.scale == "small":
        checks.append(("loss/mean-aggregation", full_loss_report(aggregation="mean")))
        checks.append(("loss/attention-aggregation", full_loss_report(aggregation="attention")))
    rows = []
    failed = 0
    for name, report in checks:
        ok = report.passed
        failed += 0 if ok else 1
        rows.append([name, f"{report.max_rel_err:.3e}", "pass" if ok else "FAIL"])
    print(format_table(["op", "max rel err", "status"], rows))
    if failed:
        print(f"{failed} gradient check(s) failed", file=sys.stderr)
        return 3
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dialoguecse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus plus eval sets")
    p.add_argument("--intents", type=int, default=20)
    p.add_argument("--templates", type=int, default=5)
    p.add_argument("--sessions", type=int, default=500)
    p.add_argument("--turns-per-session", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--sr-queries", type=int, default=120)
    p.add_argument("--dsts-pairs", type=int, default=400)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="merge same-speaker turns, drop short sessions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file mirroring TrainConfig fields")
    p.add_argument("--model", choices=["dialoguecse", "siamese-single", "siamese-multi"])
    p.add_argument("--agg", choices=["attention", "mean"])
    p.add_argument("--tau", type=float)
    p.add_argument("--neg", type=int)
    p.add_argument("--turns", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=["single", "double"])
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-sr", help="semantic retrieval metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_sr)

    p = sub.add_parser("eval-dsts", help="dialogue STS correlation for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_dsts)

    p = sub.add_parser("embed", help="write one embedding per input line")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("sweep", help="train/evaluate across one hyperparameter axis")
    p.add_argument("--axis", choices=list(SWEEP_AXES), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True, help="SR eval file")
    p.add_argument("--dsts", required=True, help="D-STS eval file")
    p.add_argument("--config")
    p.add_argument("--model", choices=["dialoguecse", "siamese-single", "siamese-multi"])
    p.add_argument("--agg", choices=["attention", "mean"])
    p.add_argument("--tau", type=float)
    p.add_argument("--neg", type=int)
    p.add_argument("--turns", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=["single", "double"])
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference checks for all ops")
    p.add_argument("--scale", choices=["tiny", "small"], default="tiny")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))
