"""Command-line surface: one executable, one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation/processing failure, 2 usage error.
Reports go to stdout; warnings, progress, and errors go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from goct.chartcore.cchart import parse_cchart, serialize_cchart
from goct.chartcore.chart import make_chart
from goct.chartcore.osu import import_osu
from goct.chartcore.sm import import_sm
from goct.datasetpipe import (
    build_shards,
    build_unaligned_shards,
    load_split,
    read_manifest,
    read_normalization,
    stats_report,
)
from goct.errors import GoctError
from goct.evalkit import evaluate_chart, format_report
from goct.featureext import extract, load_wav, write_features
from goct.nnmodel.config import ModelConfig
from goct.nnmodel.generate import generate_chart
from goct.nnmodel.modelio import load_model, save_model
from goct.nnmodel.train import finetune, parse_train_config, train
from goct.tokencodec import decode_stream, dump_tokens, encode_chart, parse_token_dump, strip_actions


def _read(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def _load_chart(path: str):
    return parse_cchart(_read(path))


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_import(args) -> int:
    text = _read(args.infile)
    stem = os.path.splitext(os.path.basename(args.infile))[0]
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    if args.format == "cchart":
        outputs.append((f"{stem}.cchart", parse_cchart(text), ()))
    elif args.format == "osu":
        result = import_osu(text, difficulty=args.difficulty)
        outputs.append((f"{stem}.cchart", result.chart, result.warnings))
        if result.max_quantization_error_ms > 0:
            _say(f"max quantization error {result.max_quantization_error_ms:.3f} ms")
    else:  # sm
        result = import_sm(text)
        for rej in result.rejected:
            _say(f"chart {rej.index} (meter {rej.meter}): rejected: {rej.reason}")
        if not result.charts:
            _say("error: no usable charts in file")
            return 1
        for k, imported in enumerate(result.charts):
            outputs.append((f"{stem}.{k}.cchart", imported.chart, imported.warnings))
    for name, chart, warnings in outputs:
        for w in warnings:
            _say(f"{name}: warning: {w}")
        path = os.path.join(args.out, name)
        with open(path, "w") as fh:
            fh.write(serialize_cchart(chart))
        print(path)
    return 0


def cmd_validate(args) -> int:
    text = _read(args.infile)
    if args.format == "cchart":
        chart = parse_cchart(text)
    elif args.format == "osu":
        chart = import_osu(text).chart
    else:
        result = import_sm(text)
        if result.rejected:
            for rej in result.rejected:
                _say(f"chart {rej.index}: {rej.reason}")
            return 1
        chart = result.charts[0].chart if result.charts else None
    if chart is None:
        _say("error: file contains no charts")
        return 1
    print(f"ok: {len(chart.events)} events over {chart.n_beats} beats")
    return 0


def cmd_features(args) -> int:
    timing = _load_chart(args.tempo)
    n_beats = args.beats if args.beats is not None else timing.n_beats
    audio = load_wav(args.audio)
    spec = extract(audio, timing.tempo, n_beats)
    write_features(args.out, spec.frames)
    print(f"{args.out}\t{spec.frames.shape[0]}x{spec.frames.shape[1]}")
    return 0


def cmd_dataset_build(args) -> int:
    rows = read_manifest(args.manifest)
    if args.unaligned:
        report = build_unaligned_shards(rows, args.out, seed=args.seed, jobs=args.jobs)
    else:
        mode = "time_only" if args.time_only else "full"
        report = build_shards(rows, args.out, mode=mode, jobs=args.jobs)
    for song_id, path, message in report.errors:
        _say(f"{song_id}: {path}: {message}")
    for split, count in report.counts.items():
        print(f"{split}\t{count}\t{report.shard_paths[split]}")
    return 0


def cmd_stats(args) -> int:
    rows = read_manifest(args.manifest)
    sys.stdout.write(stats_report(rows, args.data, mode=args.mode))
    return 0


def _train_settings(args, defaults):
    settings = dict(defaults)
    if args.config:
        settings.update(parse_train_config(_read(args.config)))
    for key in ("lr", "batch", "epochs", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if getattr(args, "time_only", False):
        settings["time_only"] = True
    return settings


def cmd_train(args) -> int:
    defaults = {"lr": 2e-4, "batch": 32, "epochs": 10, "seed": 0, "time_only": False, "normalization": ""}
    s = _train_settings(args, defaults)
    mode = "time_only" if s["time_only"] else "full"
    samples = load_split(args.data, "train", mode)
    try:
        val = load_split(args.data, "valid", mode) or None
    except OSError:
        val = None
    norm_path = s["normalization"] or os.path.join(args.data, "normalization.feat")
    normalization = read_normalization(norm_path) if os.path.exists(norm_path) else None
    config = ModelConfig(time_only=bool(s["time_only"]))
    result = train(
        samples,
        config,
        lr=float(s["lr"]),
        batch_size=int(s["batch"]),
        epochs=int(s["epochs"]),
        seed=int(s["seed"]),
        val_dataset=val,
        normalization=normalization,
        log_fn=_say,
    )
    save_model(args.out, result.params)
    for entry in result.history:
        line = f"epoch\t{entry['epoch']}\ttrain_loss\t{entry['train_loss']:.6f}"
        if "val_loss" in entry:
            line += f"\tval_loss\t{entry['val_loss']:.6f}"
        print(line)
    print(f"model\t{args.out}")
    return 0


def cmd_finetune(args) -> int:
    params = load_model(args.model)
    mode = "time_only" if params.config.time_only else "full"
    samples = load_split(args.data, "train", mode)
    result = finetune(
        params,
        samples,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        log_fn=_say,
    )
    save_model(args.out, result.params)
    for entry in result.history:
        print(f"epoch\t{entry['epoch']}\ttrain_loss\t{entry['train_loss']:.6f}")
    print(f"model\t{args.out}")
    return 0


def cmd_generate(args) -> int:
    params = load_model(args.model)
    timing = _load_chart(args.tempo)
    audio = load_wav(args.audio)
    spec = extract(audio, timing.tempo, timing.n_beats)
    chart = generate_chart(params, spec, timing.tempo, args.difficulty)
    with open(args.out, "w") as fh:
        fh.write(serialize_cchart(chart))
    print(f"{args.out}\t{len(chart.events)} events")
    return 0


def cmd_eval(args) -> int:
    pred = _load_chart(args.pred)
    ref = _load_chart(args.ref)
    if args.tolerance_ms is not None:
        report = evaluate_chart(pred, ref, mode="tolerance", tol_ms=args.tolerance_ms)
    else:
        report = evaluate_chart(pred, ref, mode="exact")
        if not args.per_group:
            report = replace(report, groups=None)
    sys.stdout.write(format_report(report))
    return 0


def cmd_tokenize(args) -> int:
    chart = _load_chart(args.chart)
    windows = encode_chart(chart)
    if args.time_only:
        windows = strip_actions(windows)
    text = dump_tokens(windows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_detokenize(args) -> int:
    text = _read(args.tokens) if args.tokens else sys.stdin.read()
    windows = parse_token_dump(text)
    timing = _load_chart(args.timing)
    events = decode_stream(windows)
    chart = make_chart(timing.tempo, timing.difficulty, events, n_beats=timing.n_beats)
    out_text = serialize_cchart(chart)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out_text)
    else:
        sys.stdout.write(out_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="goct", description="Rhythm-game chart generation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="convert osu/sm/cchart files to canonical charts")
    p.add_argument("--format", choices=("osu", "sm", "cchart"), required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--difficulty", type=float, default=0.0, help="difficulty value for osu imports")
    p.set_defaults(fn=cmd_import)

    p = sub.add_parser("validate", help="parse and validate a chart file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("osu", "sm", "cchart"), default="cchart")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("features", help="extract beat-aligned log-Mel features")
    p.add_argument("--audio", required=True)
    p.add_argument("--tempo", required=True, help="cchart supplying the tempo map")
    p.add_argument("--beats", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("dataset-build", help="build shard + feature files from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--time-only", action="store_true")
    p.add_argument("--unaligned", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_dataset_build)

    p = sub.add_parser("stats", help="corpus statistics report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data", default=None, help="dataset-build output dir for sample counts")
    p.add_argument("--mode", default="full", choices=("full", "time_only", "unaligned"))
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("train", help="train a model on built shards")
    p.add_argument("--config", default=None, help="key=value training config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--time-only", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="continue training from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("generate", help="generate a chart for audio + tempo")
    p.add_argument("--model", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--tempo", required=True, help="cchart supplying tempo and beat count")
    p.add_argument("--difficulty", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("eval", help="compare a predicted chart against a reference")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--tolerance-ms", type=float, nargs="?", const=30.0, default=None)
    p.add_argument("--per-group", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("tokenize", help="dump a chart's token windows")
    p.add_argument("--chart", required=True)
    p.add_argument("--time-only", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("detokenize", help="rebuild a chart from a token dump")
    p.add_argument("--tokens", default=None, help="token dump file (default: stdin)")
    p.add_argument("--timing", required=True, help="cchart supplying tempo/difficulty/beats")
    p.add_argument("--out", default=None, help="output chart (default: stdout)")
    p.set_defaults(fn=cmd_detokenize)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GoctError as e:
        _say(f"error: {e}")
        return 1
    except OSError as e:
        _say(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
