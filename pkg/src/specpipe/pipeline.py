"""End-to-end pipeline: corpus -> segments -> spectrograms -> training -> report.

A run is described by one JSON config; every key has a default, so ``{}``
is a valid config that generates the bundled synthetic corpus and trains on
three-FFT mel images.  See :data:`DEFAULTS` for the schema.
"""

from __future__ import annotations

import copy
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio_io, render, stft_mel, superlet
from .errors import ConfigError, DataError, MissingRun, SpecpipeError
from .evaluation import REPORT_SCHEMA, EvaluationReport, build_report, roc_csv
from .manifest import Label, Manifest, load_manifest, split_by_epoch, validate_manifest
from .model import (
    Dataset,
    ModelConfig,
    TrainConfig,
    config_hash,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    train,
)
from .synth_corpus import CorpusSpec, PretrainSpec, generate, iter_pretraining

log = logging.getLogger("specpipe")

MODES = ("mel_rgb", "mel_mono3", "superlet")

DEFAULTS: dict = {
    "seed": 42,
    "manifest": None,
    "audio_root": None,
    "corpus": {},
    "split_cutoff": None,
    "segmentation": {"window_s": 3.0, "hop_s": 1.5, "pad_policy": "drop_tail"},
    "preprocessing": {
        "mode": "mel_mono3",
        "sample_rate": 16000,
        "n_mels": 128,
        "fmin": 0.0,
        "fmax": None,
        "mono3_settings": [[1024, 256], [2048, 512], [4096, 1024]],
        "single_setting": [2048, 512],
        "top_db": 80.0,
        "superlet": {
            "n_freqs": 64,
            "fmin": 50.0,
            "base_cycles": 3.0,
            "order_min": 1.0,
            "order_max": 16.0,
            "cycle_mode": "multiplicative",
            "k_sd": 5.0,
            "pool_win": None,
        },
    },
    "model": {"kind": "cnn", "widths": [8, 16, 32], "embed_dim": 32},
    "training": {
        "class_weighting": "inverse",
        "stages": [
            {"dataset_id": "task", "epochs": 20, "learning_rate": 1e-3, "batch_size": 16,
             "lam": 0.5, "margin": 1.0, "freeze": []},
        ],
    },
    "pretraining": None,
    "evaluation": {"n_resamples": 2000, "ci_level": 0.95, "score": "mean_prob", "clip_threshold": 0.5, "plots": True},
    "export_png": False,
    "dump_tensors": False,
    "cache": False,
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config field '{where}'")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def resolve_config(raw: dict | None = None, base_dir=None) -> dict:
    """Fill defaults, check field values and make paths absolute."""
    cfg = _merge(DEFAULTS, raw or {})
    pre = cfg["preprocessing"]
    if pre["mode"] not in MODES:
        raise ConfigError(f"preprocessing.mode must be one of {', '.join(MODES)}; got {pre['mode']!r}")
    if pre["sample_rate"] <= 0:
        raise ConfigError("preprocessing.sample_rate must be positive")
    seg = cfg["segmentation"]
    if seg["pad_policy"] not in ("drop_tail", "pad_tail"):
        raise ConfigError("segmentation.pad_policy must be 'drop_tail' or 'pad_tail'")
    if not 0 < seg["hop_s"] <= seg["window_s"]:
        raise ConfigError("segmentation.hop_s must satisfy 0 < hop_s <= window_s")
    if cfg["evaluation"]["score"] not in ("mean_prob", "vote_fraction"):
        raise ConfigError("evaluation.score must be 'mean_prob' or 'vote_fraction'")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg["model"]["kind"] not in ("cnn", "linear"):
        raise ConfigError(f"model.kind must be 'cnn' or 'linear'; got {cfg['model']['kind']!r}")
    try:
        CorpusSpec(**cfg["corpus"])
        if cfg["pretraining"] is not None:
            PretrainSpec(**cfg["pretraining"])
        _train_config(cfg)
    except TypeError as exc:
        raise ConfigError(f"invalid corpus/training field: {exc}") from None
    base = Path(base_dir) if base_dir else Path.cwd()
    for key in ("manifest", "audio_root"):
        if cfg[key] is not None:
            cfg[key] = str((base / cfg[key]).resolve())
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return resolve_config(raw, path.parent)


_UNHASHED = ("manifest", "audio_root", "dump_tensors", "export_png", "cache")


def run_hash(cfg: dict) -> str:
    """Config hash over the fields that affect results.

    Machine-specific paths and output switches (dumps, PNGs, cache, plots)
    are left out.
    """
    kept = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    kept["evaluation"] = {k: v for k, v in cfg["evaluation"].items() if k != "plots"}
    return config_hash(kept)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        stages=tuple(cfg["training"]["stages"]),
        seed=cfg["seed"],
        class_weighting=cfg["training"]["class_weighting"],
    )


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class Preprocessor:
    """Turns a waveform segment into the classifier input for one mode."""

    mode: str
    sample_rate: int
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None
    mono3_settings: tuple = stft_mel.DEFAULT_MONO3_SETTINGS
    single_setting: tuple = stft_mel.DEFAULT_SINGLE_SETTING
    top_db: float = 80.0
    superlet_cfg: superlet.SuperletConfig | None = None

    @classmethod
    def from_config(cls, cfg: dict) -> "Preprocessor":
        pre = cfg["preprocessing"]
        fs = pre["sample_rate"]
        sl = None
        if pre["mode"] == "superlet":
            s = pre["superlet"]
            win, hop = pre["single_setting"]
            sl = superlet.SuperletConfig.default(
                fs,
                n_freqs=s["n_freqs"],
                fmin=s["fmin"],
                base_cycles=s["base_cycles"],
                order_min=s["order_min"],
                order_max=s["order_max"],
                mode=s["cycle_mode"],
                k_sd=s["k_sd"],
                pool_win=s["pool_win"] or hop,
                pool_hop=hop,
                pool_frame=win,
            )
        return cls(
            mode=pre["mode"],
            sample_rate=fs,
            n_mels=pre["n_mels"],
            fmin=pre["fmin"],
            fmax=pre["fmax"],
            mono3_settings=tuple(tuple(s) for s in pre["mono3_settings"]),
            single_setting=tuple(pre["single_setting"]),
            top_db=pre["top_db"],
            superlet_cfg=sl,
        )

    def tensor(self, samples) -> stft_mel.SpectrogramTensor:
        if self.mode == "mel_mono3":
            return stft_mel.mel_mono3(samples, self.sample_rate, self.mono3_settings, self.n_mels, fmin=self.fmin, fmax=self.fmax)
        if self.mode == "mel_rgb":
            n_fft, hop = self.single_setting
            return stft_mel.mel_single(samples, self.sample_rate, n_fft, hop, self.n_mels, fmin=self.fmin, fmax=self.fmax)
        return superlet.superlet_transform(samples, self.superlet_cfg, self.sample_rate, _plan(self.superlet_cfg, self.sample_rate, len(samples)))

    def normalized(self, t: stft_mel.SpectrogramTensor) -> np.ndarray:
        return render.normalize(render.clamp_top_db(t, self.top_db))

    def features(self, t: stft_mel.SpectrogramTensor) -> np.ndarray:
        """Classifier input in [0, 1]; mel_rgb goes through the colormap."""
        x = self.normalized(t)
        if self.mode == "mel_rgb":
            return render.colormap_float(x[0])
        return x

    def image(self, t: stft_mel.SpectrogramTensor) -> render.SpectrogramImage:
        x = self.normalized(t)
        return render.to_image(t, x, render.VIRIDIS if self.mode != "mel_mono3" else None)


_PLANS: dict = {}


def _plan(cfg, fs, n):
    key = (cfg, fs, n)
    if key not in _PLANS:
        _PLANS.clear()
        _PLANS[key] = superlet.SuperletPlan(cfg, fs, n)
    return _PLANS[key]


@dataclass
class ClipFeatures:
    participant_id: str
    clip_id: str
    label: Label
    starts: list[float]
    x: np.ndarray  # (n_segments, C, F, T)


def _segment_clip(samples: np.ndarray, fs: int, cfg: dict, clip_id: str) -> list[audio_io.AudioSegment]:
    target = cfg["preprocessing"]["sample_rate"]
    clip = audio_io.resample(audio_io.AudioClip(samples, fs), target)
    seg = cfg["segmentation"]
    return audio_io.segment(clip, seg["window_s"], seg["hop_s"], seg["pad_policy"], clip_id=clip_id)


def _cache_key(audio: bytes, cfg: dict) -> str:
    h = hashlib.sha256(audio)
    h.update(json.dumps({"segmentation": cfg["segmentation"], "preprocessing": cfg["preprocessing"]}, sort_keys=True).encode())
    return h.hexdigest()[:32]


def _clip_job(args):
    clip_id, audio, cfg, cache_dir = args
    if cache_dir is not None:
        cached = Path(cache_dir) / f"{_cache_key(audio, cfg)}.npz"
        if cached.exists():
            with np.load(cached) as z:
                return z["starts"].tolist(), z["x"], None
    decoded = audio_io.decode_wav(audio)
    pre = Preprocessor.from_config(cfg)
    segs = _segment_clip(decoded.samples, decoded.sample_rate, cfg, clip_id)
    tensors = [pre.tensor(s.samples) for s in segs]
    x = np.stack([pre.features(t) for t in tensors])
    starts = [s.start_time for s in segs]
    if cache_dir is not None:
        np.savez(cached, starts=np.array(starts), x=x)
    return starts, x, tensors


def preprocess_manifest(m: Manifest, cfg: dict, audio_root, jobs: int = 1, cache_dir=None,
                        tensor_sink=None) -> list[ClipFeatures]:
    """Segment and transform every non-excluded clip of ``m``, in manifest order.

    ``tensor_sink(clip_id, starts, tensors)`` receives the raw tensors when
    they were computed in this process (not for cache hits).
    """
    root = Path(audio_root)
    items = []
    for p, c in m.clips():
        try:
            audio = (root / c.file_path).read_bytes()
        except OSError as exc:
            raise DataError(f"audio_io: cannot read {c.file_path}: {exc}") from exc
        items.append((p, c, audio))
    args = [(c.clip_id, audio, cfg, cache_dir) for _, c, audio in items]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_clip_job, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        results = [_clip_job(a) for a in args]
    out = []
    for (p, c, _), (starts, x, tensors) in zip(items, results):
        if tensor_sink is not None and tensors is not None:
            tensor_sink(c.clip_id, starts, tensors)
        out.append(ClipFeatures(p.participant_id, c.clip_id, p.label, starts, x))
    return out


def _stack(feats: list[ClipFeatures], dataset_id: str) -> Dataset:
    x = np.concatenate([f.x for f in feats])
    y = np.concatenate([np.full(len(f.x), f.label.index) for f in feats])
    return Dataset(dataset_id, x, y, 2)


def pretraining_dataset(cfg: dict, input_shape, jobs: int = 1) -> Dataset:
    spec = PretrainSpec(**cfg["pretraining"])
    pre = Preprocessor.from_config(cfg)
    xs, ys = [], []
    for _, ci, samples in iter_pretraining(spec):
        segs = _segment_clip(samples, spec.sample_rate, cfg, "pretrain")
        for s in segs:
            xs.append(pre.features(pre.tensor(s.samples)))
            ys.append(ci)
    x = np.stack(xs)
    if x.shape[1:] != tuple(input_shape):
        raise ConfigError("pretraining segments do not match the task input shape")
    return Dataset("pretrain", x, np.array(ys), len(spec.classes))


# ---------------------------------------------------------------------------
# run


@dataclass
class RunResult:
    out_dir: Path
    report: EvaluationReport | None = None
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def prepare_data(cfg: dict, out_dir: Path) -> tuple[Manifest, Path, dt.date]:
    """Locate or generate the corpus; returns (manifest, audio root, cutoff)."""
    if cfg["manifest"]:
        try:
            m = load_manifest(cfg["manifest"])
        except FileNotFoundError:
            raise DataError(f"manifest: {cfg['manifest']} not found") from None
        root = Path(cfg["audio_root"] or Path(cfg["manifest"]).parent)
        cutoff = cfg["split_cutoff"] or CorpusSpec(**cfg["corpus"]).epoch2[0]
    else:
        spec = CorpusSpec(**cfg["corpus"])
        root = out_dir / "corpus"
        if (root / "corpus_spec.json").exists() and (root / "corpus_spec.json").read_text() == spec.to_json():
            m = load_manifest(root / "manifest.csv")
        else:
            m = generate(spec, root)
        cutoff = cfg["split_cutoff"] or spec.epoch2[0]
    report = validate_manifest(m, root)
    if not report.ok:
        first = report.issues[0]
        raise DataError(f"manifest: {len(report.issues)} invalid clip(s), e.g. {first.clip_id}: {first.kind.value}")
    try:
        cutoff = dt.date.fromisoformat(str(cutoff))
    except ValueError:
        raise ConfigError(f"split_cutoff must be YYYY-MM-DD, got {cutoff!r}") from None
    return m, root, cutoff


def _predict_clips(params, feats: list[ClipFeatures]) -> dict:
    """``{participant_id: [(clip_id, fail_prob), ...]}``; a clip's probability
    is the mean over its segments."""
    out: dict = {}
    for f in feats:
        p = float(np.mean(predict_proba(params, f.x)[:, 1]))
        out.setdefault(f.participant_id, []).append((f.clip_id, p))
    return out


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _tensor_writer(cfg, out_dir: Path, chash: str):
    pre = Preprocessor.from_config(cfg)
    mode_tag = stft_mel.Mode.SUPERLET if pre.mode == "superlet" else (
        stft_mel.Mode.MEL_MONO3 if pre.mode == "mel_mono3" else stft_mel.Mode.MEL_SINGLE)

    def sink(clip_id, starts, tensors):
        for start, t in zip(starts, tensors):
            ms = int(round(start * 1000))
            if cfg["dump_tensors"]:
                d = out_dir / "tensors"
                d.mkdir(parents=True, exist_ok=True)
                stft_mel.dump_tensor(t, d / f"{clip_id}_{ms}_{mode_tag.value}.f32", {"config_hash": chash})
            if cfg["export_png"]:
                d = out_dir / "images"
                d.mkdir(parents=True, exist_ok=True)
                render.export_png(pre.image(t), d / render.image_filename(clip_id, ms, mode_tag), {"config_hash": chash})

    return sink if (cfg["dump_tensors"] or cfg["export_png"]) else None


def train_stage(cfg: dict, out_dir: Path, jobs: int = 1, result: RunResult | None = None):
    result = result or RunResult(out_dir)
    chash = run_hash(cfg)
    t0 = time.perf_counter()
    m, root, cutoff = prepare_data(cfg, out_dir)
    train_m, test_m = split_by_epoch(m, cutoff)
    cache_dir = None
    if cfg["cache"]:
        cache_dir = out_dir / "cache"
        cache_dir.mkdir(parents=True, exist_ok=True)
    sink = _tensor_writer(cfg, out_dir, chash)
    train_f = preprocess_manifest(train_m, cfg, root, jobs, cache_dir, sink)
    test_f = preprocess_manifest(test_m, cfg, root, jobs, cache_dir, sink)
    result.timings["preprocess_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    task = _stack(train_f, "task")
    datasets = {"task": task}
    tcfg = _train_config(cfg)
    if any(s.dataset_id == "pretrain" for s in tcfg.stages):
        if cfg["pretraining"] is None:
            raise ConfigError("training stage uses dataset 'pretrain' but pretraining is not configured")
        datasets["pretrain"] = pretraining_dataset(cfg, task.x.shape[1:], jobs)
    for s in tcfg.stages:
        if s.dataset_id not in datasets:
            raise ConfigError(f"training.stages: unknown dataset_id {s.dataset_id!r} (use 'task' or 'pretrain')")
    first = datasets[tcfg.stages[0].dataset_id]
    mc = ModelConfig(task.x.shape[1:], cfg["model"]["kind"], tuple(cfg["model"]["widths"]), cfg["model"]["embed_dim"], first.n_classes)
    params, tlog = train(datasets, tcfg, model_config=mc)
    result.timings["train_s"] = time.perf_counter() - t0
    ckpt = out_dir / "model.ckpt"
    save_checkpoint(params, ckpt, {"config_hash": chash, "stage_index": len(tcfg.stages) - 1, "mode": cfg["preprocessing"]["mode"]})
    _write_text(out_dir / "train_log.json", json.dumps({"config_hash": chash, **tlog.to_dict()}, indent=1, sort_keys=True) + "\n")
    result.artifacts.update({"checkpoint": ckpt, "train_log": out_dir / "train_log.json"})
    return result, test_f, tlog, (train_m, test_m)


def evaluate_stage(cfg: dict, out_dir: Path, test_f: list[ClipFeatures], test_m: Manifest, train_m: Manifest | None = None,
                   tlog=None, result: RunResult | None = None, checkpoint=None) -> RunResult:
    result = result or RunResult(out_dir)
    chash = run_hash(cfg)
    params, meta = load_checkpoint(checkpoint or out_dir / "model.ckpt")
    if meta.get("config_hash") != chash:
        log.warning("checkpoint config hash %s differs from run config %s", meta.get("config_hash"), chash)
    ev = cfg["evaluation"]
    truth = {p.participant_id: p.label.value for p in test_m.participants}
    extra = {
        "mode": cfg["preprocessing"]["mode"],
        "n_test_participants": len(test_m),
        "n_test_segments": int(sum(len(f.x) for f in test_f)),
        "test_label_counts": test_m.label_counts(),
    }
    if train_m is not None:
        extra["n_train_participants"] = len(train_m)
        extra["train_label_counts"] = train_m.label_counts()
    if tlog is not None:
        extra["train_log"] = tlog.to_dict()
    else:
        saved = Path(checkpoint or out_dir / "model.ckpt").parent / "train_log.json"
        if saved.exists():
            extra["train_log"] = {k: v for k, v in json.loads(saved.read_text()).items() if k != "config_hash"}
    report = build_report(
        _predict_clips(params, test_f),
        truth,
        chash,
        cfg["seed"],
        n_resamples=ev["n_resamples"],
        level=ev["ci_level"],
        score=ev["score"],
        threshold=ev["clip_threshold"],
        extra=extra,
    )
    report.write(out_dir / "report.json")
    _write_text(out_dir / "roc.csv", roc_csv(report.roc))
    result.artifacts.update({"report": out_dir / "report.json", "roc": out_dir / "roc.csv"})
    if ev["plots"]:
        cm = report.confusion
        render.export_png(render.plot_confusion(cm.tp, cm.fn, cm.fp, cm.tn), out_dir / "confusion.png", {"config_hash": chash})
        result.artifacts["confusion_png"] = out_dir / "confusion.png"
        if report.roc:
            render.export_png(render.plot_roc([p.fpr for p in report.roc], [p.tpr for p in report.roc]), out_dir / "roc.png", {"config_hash": chash})
            result.artifacts["roc_png"] = out_dir / "roc.png"
    result.report = report
    return result


def run(cfg: dict, out_dir, jobs: int = 1) -> RunResult:
    """Generate/locate data, preprocess, train, evaluate and write all artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    result, test_f, tlog, (train_m, test_m) = train_stage(cfg, out_dir, jobs)
    t0 = time.perf_counter()
    evaluate_stage(cfg, out_dir, test_f, test_m, train_m, tlog, result)
    result.timings["evaluate_s"] = time.perf_counter() - t0
    result.timings["total_s"] = time.perf_counter() - t_start
    ms = result.report.metrics
    summary = {
        "config_hash": run_hash(cfg),
        "seed": cfg["seed"],
        "mode": cfg["preprocessing"]["mode"],
        "auc": ms.auc,
        "auc_ci": ms.auc_ci,
        "sensitivity": ms.sensitivity,
        "specificity": ms.specificity,
        "artifacts": {k: str(Path(v).relative_to(out_dir)) for k, v in result.artifacts.items()},
        "timings": result.timings,
    }
    _write_text(out_dir / "summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _write_text(out_dir / "config.resolved.json", json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    return result


# ---------------------------------------------------------------------------
# comparison across runs

COMPARE_COLUMNS = ("mode", "auc", "auc_ci_lo", "auc_ci_hi", "sensitivity", "specificity", "config_hash")


def _report_path(p) -> Path:
    p = Path(p)
    return p / "report.json" if p.is_dir() else p


def compare(report_paths) -> tuple[str, str]:
    """Mode x metric table over finished runs; returns (csv_text, plain_text)."""
    paths = [_report_path(p) for p in report_paths]
    if len(paths) < 2:
        raise MissingRun("compare needs at least two run outputs")
    rows = []
    for p in paths:
        if not p.exists():
            raise MissingRun(f"no report at {p}")
        d = json.loads(p.read_text())
        if d.get("schema") != REPORT_SCHEMA:
            raise ConfigError(f"{p}: report schema {d.get('schema')!r} is not {REPORT_SCHEMA!r}")
        m = d["metrics"]
        ci = m.get("auc_ci") or [None, None]
        rows.append(
            {
                "mode": d.get("extra", {}).get("mode", str(p.parent.name)),
                "auc": m["auc"],
                "auc_ci_lo": ci[0],
                "auc_ci_hi": ci[1],
                "sensitivity": m["sensitivity"],
                "specificity": m["specificity"],
                "config_hash": d["config_hash"],
            }
        )
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in r.items()})

    def fmt(v):
        return "  -  " if v is None else f"{v:.2f}"

    lines = [f"{'mode':<12}{'AUC':>8}{'95% CI':>14}{'ST':>8}{'SP':>8}"]
    for r in rows:
        ci = "-" if r["auc_ci_lo"] is None else f"{r['auc_ci_lo']:.2f}-{r['auc_ci_hi']:.2f}"
        lines.append(f"{r['mode']:<12}{fmt(r['auc']):>8}{ci:>14}{fmt(r['sensitivity']):>8}{fmt(r['specificity']):>8}")
    return buf.getvalue(), "\n".join(lines) + "\n"


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


__all__ = [
    "DEFAULTS",
    "MODES",
    "Preprocessor",
    "RunResult",
    "SpecpipeError",
    "compare",
    "evaluate_stage",
    "load_config",
    "preprocess_manifest",
    "resolve_config",
    "run",
    "run_hash",
    "train_stage",
]
