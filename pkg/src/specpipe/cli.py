"""``specpipe`` command line.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.  ``SPECPIPE_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import audio_io, pipeline
from .errors import ConfigError, SpecpipeError
from .manifest import split_by_epoch
from .synth_corpus import CorpusSpec, generate

def _config(args) -> dict:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.resolve_config({})
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg["seed"] = args.seed
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _config(args)
    spec = CorpusSpec(**cfg["corpus"])
    m = generate(spec, _out(args))
    print(f"wrote {sum(1 for _ in m.clips())} clips for {len(m)} participants to {args.out}")
    return 0


def cmd_segment(args) -> int:
    cfg = _config(args)
    out = _out(args)
    m, root, _ = pipeline.prepare_data(cfg, out)
    seg_dir = out / "segments"
    seg_dir.mkdir(exist_ok=True)
    n = 0
    for _, c in m.clips():
        clip = audio_io.read_wav(root / c.file_path, c)
        clip = audio_io.resample(clip, cfg["preprocessing"]["sample_rate"])
        s = cfg["segmentation"]
        for seg in audio_io.segment(clip, s["window_s"], s["hop_s"], s["pad_policy"], clip_id=c.clip_id):
            audio_io.dump_segment(seg, seg_dir / f"{c.clip_id}_{seg.start_ms}.f32")
            n += 1
    print(f"wrote {n} segments to {seg_dir}")
    return 0


def cmd_spectrogram(args) -> int:
    cfg = _config(args)
    cfg["dump_tensors"] = True
    cfg["export_png"] = not args.no_png
    out = _out(args)
    m, root, _ = pipeline.prepare_data(cfg, out)
    sink = pipeline._tensor_writer(cfg, out, pipeline.run_hash(cfg))
    feats = pipeline.preprocess_manifest(m, cfg, root, args.jobs, tensor_sink=sink)
    print(f"wrote {sum(len(f.x) for f in feats)} spectrograms to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    result, _, tlog, _ = pipeline.train_stage(cfg, out, args.jobs)
    print(f"checkpoint: {result.artifacts['checkpoint']}  final loss {tlog.stages[-1].final_loss:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} not found; run 'specpipe train' first or pass --checkpoint")
    m, root, cutoff = pipeline.prepare_data(cfg, out)
    train_m, test_m = split_by_epoch(m, cutoff)
    test_f = pipeline.preprocess_manifest(test_m, cfg, root, args.jobs)
    res = pipeline.evaluate_stage(cfg, out, test_f, test_m, train_m, checkpoint=ckpt)
    _print_metrics(res.report)
    return 0


def _print_metrics(report) -> None:
    ms = report.metrics

    def f(v):
        return "n/a" if v is None else f"{v:.3f}"

    ci = "n/a" if ms.auc_ci is None else f"{ms.auc_ci[0]:.3f}-{ms.auc_ci[1]:.3f}"
    print(f"AUC {f(ms.auc)} (CI {ci})  ST {f(ms.sensitivity)}  SP {f(ms.specificity)}  "
          f"precision {f(ms.precision)}  F1 {f(ms.f1)}")


def cmd_run(args) -> int:
    cfg = _config(args)
    res = pipeline.run(cfg, _out(args), args.jobs)
    _print_metrics(res.report)
    print(f"report: {res.artifacts['report']}")
    return 0


def cmd_compare(args) -> int:
    csv_text, table = pipeline.compare(args.runs)
    out = _out(args)
    (out / "comparison.csv").write_text(csv_text)
    (out / "comparison.txt").write_text(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specpipe", description="Voice-clip spectrogram classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline config JSON (all fields optional)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=pipeline.default_jobs(), help="worker processes for preprocessing")
        p.add_argument("--out", default="specpipe_out", help="output directory")
        return p

    common(sub.add_parser("generate", help="write the synthetic corpus")).set_defaults(func=cmd_generate)
    common(sub.add_parser("segment", help="dump fixed-length segments")).set_defaults(func=cmd_segment)
    p = common(sub.add_parser("spectrogram", help="dump spectrogram tensors and PNGs"))
    p.add_argument("--no-png", action="store_true")
    p.set_defaults(func=cmd_spectrogram)
    common(sub.add_parser("train", help="preprocess and train, write a checkpoint")).set_defaults(func=cmd_train)
    p = common(sub.add_parser("evaluate", help="evaluate a checkpoint on the test split"))
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_evaluate)
    common(sub.add_parser("run", help="generate/train/evaluate in one go")).set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="tabulate AUC/ST/SP across runs")
    p.add_argument("runs", nargs="+", help="run directories or report.json files")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SPECPIPE_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpecpipeError as exc:
        print(f"specpipe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(f"specpipe: ConfigError: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"specpipe: NumericalError: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
