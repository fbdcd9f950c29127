"""Command-line entry point.

Every command prints one JSON document on stdout; progress and errors go to
stderr. Exit status: 0 success, 1 usage or configuration error, 2 I/O or
file-format error, 3 numerical divergence, 4 failed verification.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from threadpoolctl import threadpool_limits

from freqadapt import __version__, adapters, analysis, harness, spectral, tensorio, verify
from freqadapt.errors import ConfigError, DimensionError, FormatError, FreqAdaptError

log = logging.getLogger("freqadapt")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4
SECTIONS = ("adapter", "train", "synth", "analysis")


# -- configuration --------------------------------------------------------------


@dataclass
class RunConfig:
    adapter: adapters.AdapterConfig | None = field(default_factory=adapters.AdapterConfig)
    train: harness.TrainConfig = field(default_factory=harness.TrainConfig)
    synth: harness.SynthConfig = field(default_factory=harness.SynthConfig)
    analysis: analysis.AnalysisConfig = field(default_factory=analysis.AnalysisConfig)

    def train_config(self, **overrides) -> harness.TrainConfig:
        cfg = harness.TrainConfig.from_dict({**self.train.to_dict(include_adapter=False), **overrides})
        cfg.adapter = self.adapter
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return {
            "adapter": None if self.adapter is None else self.adapter.to_dict(),
            "train": self.train.to_dict(include_adapter=False),
            "synth": self.synth.to_dict(),
            "analysis": self.analysis.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for key in SECTIONS:
            if key in data and data[key] is not None and not isinstance(data[key], dict):
                raise ConfigError(f"config section {key!r} must be an object")
        if "adapter" in (data.get("train") or {}):
            raise ConfigError("adapter settings belong in the top-level 'adapter' section")
        try:
            adapter = (adapters.AdapterConfig.from_dict(data["adapter"]) if data.get("adapter") is not None
                       else None if "adapter" in data else adapters.AdapterConfig())
            train = harness.TrainConfig.from_dict(data.get("train") or {}, adapter=None)
            synth = harness.SynthConfig.from_dict(data.get("synth") or {})
            an = analysis.AnalysisConfig.from_dict(data.get("analysis") or {})
        except TypeError as exc:
            raise ConfigError(f"invalid config value: {exc}") from None
        train.adapter = adapter
        return cls(adapter, train, synth, an)


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}", code="io", path=str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})", code="bad_json",
                          path=str(path)) from None
    return RunConfig.from_dict(data)


def _thread_limit() -> int | None:
    raw = os.environ.get("F2F_THREADS")
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"F2F_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"F2F_THREADS must be a positive integer, got {raw!r}")
    return value


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    sys.stdout.flush()


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}", code="io", path=str(path)) from exc


def _check_dims(cfg: harness.TrainConfig, data: harness.Dataset) -> None:
    d = data.shape[2]
    if cfg.adapter is not None and cfg.adapter.dim != d:
        raise ConfigError(f"adapter.dim={cfg.adapter.dim} does not match data D={d}")


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    run = load_run_config(args.config)
    synth = run.synth
    if args.seed is not None:
        synth = harness.SynthConfig.from_dict({**synth.to_dict(), "seed": args.seed})
    data = harness.synth_generate(synth)
    harness.save_dataset(data, args.out)
    _emit({"out": str(args.out), "bins": synth.class_bins, "seed": synth.seed,
           "amplitude": synth.amplitude, "noise_std": synth.noise_std, **data.manifest()})
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    cfg = run.train_config(**overrides)
    data = harness.load_dataset(args.data)
    _check_dims(cfg, data)
    report, ckpt = harness.train(cfg, data, log=log.info)
    harness.save_checkpoint(ckpt, args.out)
    if args.report:
        _write_text(args.report, report.to_json())
    log.info("wall time %.2fs", report.wall_time_s)
    _emit({"checkpoint": str(args.out), "report": args.report and str(args.report),
           "final_test_accuracy": report.final_test_accuracy, "param_count": report.param_count,
           "epochs": cfg.epochs, "discriminability": report.discriminability})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = harness.load_checkpoint(args.checkpoint)
    data = harness.load_dataset(args.data)
    result = harness.evaluate(ckpt, data.split(args.split))
    _emit({"split": args.split, **result.to_dict()})
    return EXIT_OK


def cmd_embed(args) -> int:
    data = harness.load_dataset(args.data)
    if args.checkpoint:
        ckpt = harness.load_checkpoint(args.checkpoint)
        harness.check_compatible(ckpt, data.shape)
        model = ckpt.model()
    else:
        cfg = load_run_config(args.config).train_config()
        _check_dims(cfg, data)
        model = harness.Model.initialise(cfg, data.shape[2], data.classes)
    split = data.split(args.split)
    emb = model.embed(split.x, args.tap)
    try:
        tensorio.save_tensor(args.out, emb)
        if args.labels_out:
            analysis.write_labels_csv(args.labels_out, split.y)
    except OSError as exc:
        raise FormatError(f"cannot write embeddings: {exc.strerror}", code="io", path=str(args.out)) from exc
    _emit({"out": str(args.out), "tap": args.tap, "split": args.split, "shape": list(emb.shape),
           "trained": bool(args.checkpoint)})
    return EXIT_OK


def cmd_discriminability(args) -> int:
    cfg = load_run_config(args.config).analysis
    pooling = args.pooling or cfg.pooling
    epsilon = cfg.epsilon if args.epsilon is None else args.epsilon
    fps = cfg.fps if args.fps is None else args.fps
    band = analysis.parse_band(args.band) if args.band else cfg.band_range
    emb = tensorio.load_tensor(args.embeddings)
    if np.iscomplexobj(emb):
        raise ConfigError(f"{args.embeddings}: embeddings must be real")
    if emb.ndim not in (3, 4):
        raise DimensionError(f"embeddings must be rank 3 or 4, got shape {emb.shape}")
    labels = analysis.read_labels_csv(args.labels)
    spectra = analysis.PowerSpectrumSet.from_embeddings(emb, labels, pooling=pooling, frame_rate_hz=fps)
    curve = analysis.discriminability(spectra, epsilon)
    if args.out:
        try:
            analysis.write_curve_csv(curve, args.out, fps=fps)
        except OSError as exc:
            raise FormatError(f"cannot write {args.out}: {exc.strerror}", code="io", path=str(args.out)) from exc
    _emit({"out": args.out and str(args.out), "pooling": pooling, "fps": fps,
           **analysis.curve_summary(curve, band)})
    return EXIT_OK


def cmd_video_spectrum(args) -> int:
    volume = tensorio.load_tensor(args.volume)
    if np.iscomplexobj(volume):
        raise ConfigError(f"{args.volume}: volume must be real")
    smap = spectral.spectrum_map(volume, remove_dc=args.remove_dc, whiten=args.whiten)
    out = Path(args.out)
    fmt = "pgm" if out.suffix.lower() == ".pgm" else "f2ft"
    try:
        if fmt == "pgm":
            spectral.write_pgm(smap, out)
        else:
            tensorio.save_tensor(out, smap.values)
    except OSError as exc:
        raise FormatError(f"cannot write {out}: {exc.strerror}", code="io", path=str(out)) from exc
    peak = np.unravel_index(int(np.argmax(smap.values)), smap.values.shape)
    _emit({"out": str(out), "format": fmt, "peak": [int(i) for i in peak], **smap.metadata()})
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = verify.run_suite(args.suite, log=log.info)
    passed = all(c.passed for c in checks)
    _emit({"suite": args.suite, "passed": passed, "checks": [c.to_dict() for c in checks]})
    return EXIT_OK if passed else EXIT_VERIFY


# -- parser ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="freqadapt", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic frequency-coded dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train adapter and head")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=harness.SPLITS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="dump embeddings at a tap point")
    p.add_argument("--checkpoint", help="trained checkpoint; omit for the untrained model from --config")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=harness.SPLITS)
    p.add_argument("--tap", default="post_adapter", choices=harness.TAP_POINTS)
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("discriminability", help="per-bin class discriminability of embeddings")
    p.add_argument("--config")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--fps", type=float)
    p.add_argument("--out")
    p.add_argument("--pooling", choices=analysis.POOLINGS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--band", help="inclusive bin range such as 1-5")
    p.set_defaults(func=cmd_discriminability)

    p = sub.add_parser("video-spectrum", help="spectrum map of an (H, W, T) volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--whiten", action="store_true")
    p.add_argument("--remove-dc", action="store_true")
    p.add_argument("--out", required=True, help="output path; .pgm writes an image, anything else F2FT")
    p.set_defaults(func=cmd_video_spectrum)

    p = sub.add_parser("verify", help="run acceptance checks")
    p.add_argument("--suite", default="all", choices=verify.SUITES + ("all",))
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s", force=True)
    try:
        args = build_parser().parse_args(argv)
        if args.quiet:
            log.setLevel(logging.WARNING)
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except FreqAdaptError as exc:
        log.error("error: %s", exc)
        _emit({"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code,
                         "path": getattr(exc, "path", None)}})
        return exc.exit_code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
