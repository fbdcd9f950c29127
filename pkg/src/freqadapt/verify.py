"""Programmatic acceptance checks, grouped into suites.

Each check returns a :class:`Check` with a criterion number, a pass flag and
a small JSON-friendly ``detail`` dict. ``run_suite("all")`` runs every
criterion; the ``e2e`` suite trains real models and dominates the runtime.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from freqadapt import adapters, analysis, harness, spectral, tensorio
from freqadapt import numerics as nx

SUITES = ("fft", "stft", "grad", "anova", "e2e")

# Optional hook ``(parameter_name, analytic_grad) -> analytic_grad`` used to
# inject a known-bad gradient and confirm the grad suite catches it.
GradPerturbation = Callable[[str, np.ndarray], np.ndarray]


@dataclass
class Check:
    criterion: int
    name: str
    passed: bool
    detail: dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"criterion": self.criterion, "name": self.name, "passed": self.passed,
                "detail": self.detail, "seconds": round(self.seconds, 3)}

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion}. {self.name}: {json.dumps(self.detail)}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        check = fn(*args, **kwargs)
        check.seconds = time.perf_counter() - start
        return check

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- 1. FFT ---------------------------------------------------------------------


@_timed
def check_fft(seed: int = 0, trials: int = 100) -> Check:
    rng = np.random.default_rng(seed)
    worst_ratio, worst_parseval = 0.0, 0.0
    for n in (4, 8, 16, 32, 64):
        x = rng.standard_normal((trials, n)) + 1j * rng.standard_normal((trials, n))
        X = spectral.fft(x)
        err = np.max(np.abs(X - spectral.dft_naive(x)))
        worst_ratio = max(worst_ratio, err / (1e-9 * n))
        energy_t = np.sum(np.abs(x) ** 2, axis=1)
        energy_f = np.sum(np.abs(X) ** 2, axis=1) / n
        worst_parseval = max(worst_parseval, float(np.max(np.abs(energy_t - energy_f) / energy_t)))
    passed = worst_ratio < 1.0 and worst_parseval < 1e-9
    return Check(1, "FFT matches naive DFT, Parseval holds", passed,
                 {"max_err_over_tol": float(worst_ratio), "max_parseval_rel": worst_parseval})


# -- 2. STFT --------------------------------------------------------------------

STFT_CASES = ((16, 8, 2), (32, 16, 4), (64, 32, 8))


@_timed
def check_stft(seed: int = 0, trials: int = 50) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    rule_ok = True
    for length, n_fft, hop in STFT_CASES:
        rule_ok &= spectral.default_stft_params(length) == (n_fft, hop)
        x = rng.standard_normal((trials, length))
        y = spectral.istft(spectral.stft(x, n_fft, hop))
        rel = np.linalg.norm(y - x, axis=1) / np.linalg.norm(x, axis=1)
        worst = max(worst, float(rel.max()))
    return Check(2, "STFT round trip", bool(worst < 1e-8 and rule_ok),
                 {"max_rel_l2": worst, "default_rule_matches": bool(rule_ok)})


# -- 3, 4, 8. adapters ----------------------------------------------------------


def _random_adapter_case(rng, variant):
    t = int(rng.choice([16, 32]))
    width = int(rng.choice([4, 8, 16]))
    dim = int(rng.integers(4, 24))
    fusion = str(rng.choice(adapters.FUSIONS))
    cfg = adapters.AdapterConfig(variant=variant, dim=dim, width=width, fusion=fusion)
    x = rng.standard_normal((int(rng.integers(1, 4)), t, int(rng.integers(1, 5)), dim)) * rng.uniform(0.1, 10)
    return cfg, x


@_timed
def check_zero_init(seed: int = 0, cases: int = 10) -> Check:
    rng = np.random.default_rng(seed)
    failures = []
    for variant in adapters.VARIANTS:
        for k in range(cases):
            cfg, x = _random_adapter_case(rng, variant)
            params = adapters.init_adapter(cfg, seed=k)
            if not np.array_equal(adapters.apply(params, x, cfg), x):
                failures.append(f"{variant}#{k}")
    return Check(3, "zero-init adapters are exact identities", not failures,
                 {"cases_per_variant": cases, "failures": failures})


def _randomise(params: nx.ParamSet, rng, scale: float = 0.5) -> None:
    for name in params:
        params[name] = params[name] + scale * rng.standard_normal(params[name].shape)


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / denom


def pipeline_gradcheck(variant: str, seed: int, h: float = 1e-5,
                       perturb: GradPerturbation | None = None) -> dict[str, float]:
    """Central-difference check of the full model for one variant.

    Returns the relative error per parameter tensor (``adapter.after.*``,
    ``head.*``) and for the input (``input``).
    """
    rng = np.random.default_rng([seed, adapters.VARIANTS.index(variant)])
    dim, classes = 6, 3
    cfg = harness.TrainConfig(adapter=adapters.AdapterConfig(variant=variant, dim=dim, width=4,
                                                             fusion=adapters.FUSIONS[seed % 3]),
                              seed=seed, backbone_seed=seed)
    model = harness.Model.initialise(cfg, dim, classes)
    for params in model.groups().values():
        _randomise(params, rng)
    x = rng.standard_normal((2, 16, 2, dim))
    y = rng.integers(0, classes, size=2)

    def loss_at(inp):
        return harness.cross_entropy(model.forward(inp)[0], y)[0]

    model.zero_grads()
    logits, cache = model.forward(x)
    grad_x = model.backward(cache, harness.cross_entropy(logits, y)[1])
    errors = {}
    for prefix, params in model.groups().items():
        for name in params:
            full = prefix + name
            analytic = params.grad(name).copy()
            if perturb is not None:
                analytic = perturb(full, analytic)
            value = params[name]
            numeric = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                orig = value[idx]
                value[idx] = orig + h
                up = loss_at(x)
                value[idx] = orig - h
                down = loss_at(x)
                value[idx] = orig
                numeric[idx] = (up - down) / (2 * h)
            errors[full] = _relative_error(analytic, numeric)
    numeric = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        numeric[idx] = (loss_at(xp) - loss_at(xm)) / (2 * h)
    errors["input"] = _relative_error(grad_x if perturb is None else perturb("input", grad_x), numeric)
    return errors


@_timed
def check_gradients(seeds: int = 10, tol: float = 1e-5, perturb: GradPerturbation | None = None) -> Check:
    worst: dict[str, float] = {}
    offenders = set()
    for variant in adapters.VARIANTS:
        for seed in range(seeds):
            for name, err in pipeline_gradcheck(variant, seed, perturb=perturb).items():
                key = f"{variant}:{name}"
                worst[key] = max(worst.get(key, 0.0), err)
                if not err < tol:
                    offenders.add(key)
    top = max(worst, key=worst.get)
    return Check(4, "full-pipeline gradients match finite differences", not offenders,
                 {"seeds_per_variant": seeds, "max_rel_err": worst[top], "worst": top,
                  "offending": sorted(offenders)})


@_timed
def check_param_accounting(widths=(16, 32, 64), dim: int = 64) -> Check:
    mismatches, ordering = [], []
    for width in widths:
        for variant in adapters.VARIANTS:
            for fusion in adapters.FUSIONS:
                cfg = harness.TrainConfig(adapter=adapters.AdapterConfig(variant=variant, dim=dim, width=width,
                                                                         fusion=fusion), epochs=0)
                model = harness.Model.initialise(cfg, dim, 4)
                state = harness.AdamState()
                ckpt = harness.Checkpoint(model.adapters, model.head, state,
                                          {"train": cfg.to_dict(), "data": {}}, {})
                counted = sum(v.size for k, v in ckpt.entries().items() if k.startswith("adapter."))
                reloaded = harness.Checkpoint.from_entries(tensorio.decode_container(
                    tensorio.encode_container(ckpt.entries())))
                counts = {counted, model.adapter_param_count(), reloaded.adapter_param_count(),
                          adapters.expected_param_count(cfg.adapter)}
                if len(counts) != 1:
                    mismatches.append(f"{variant}/{fusion}/w{width}: {sorted(counts)}")
        ms = adapters.expected_param_count(adapters.AdapterConfig(variant="MS", dim=dim, width=2 * width))
        st = adapters.expected_param_count(adapters.AdapterConfig(variant="ST", dim=dim, width=width))
        ordering.append({"w": width, "ST": st, "MS_2w": ms, "ok": ms > st})
    passed = not mismatches and all(o["ok"] for o in ordering)
    return Check(8, "parameter counts match checkpoint entries", passed,
                 {"mismatches": mismatches, "ordering": ordering})


# -- 5. discriminability --------------------------------------------------------


def literal_discriminability(clips: list[np.ndarray], labels: list[int], epsilon: float) -> list[float]:
    """Loop-by-loop transcription over ``(T, D)`` clips with a direct DFT sum."""
    t_len = clips[0].shape[0]
    f_len = t_len // 2 + 1
    power = []
    for clip in clips:
        row = []
        for f in range(f_len):
            total = 0.0
            for d in range(clip.shape[1]):
                acc = 0j
                for t in range(t_len):
                    acc += clip[t, d] * complex(math.cos(2 * math.pi * f * t / t_len),
                                                -math.sin(2 * math.pi * f * t / t_len))
                total += abs(acc) ** 2
            row.append(total / clip.shape[1])
        power.append(row)
    classes = sorted(set(labels))
    d_raw = []
    for f in range(f_len):
        mu = sum(p[f] for p in power) / len(power)
        between = within = 0.0
        for c in classes:
            members = [p[f] for p, y in zip(power, labels) if y == c]
            mu_c = sum(members) / len(members)
            between += len(members) * (mu_c - mu) ** 2
            within += sum((p - mu_c) ** 2 for p in members)
        d_raw.append(between / (within + epsilon))
    total = sum(d_raw)
    return [v / total for v in d_raw] if total > 0 else [1.0 / f_len] * f_len


@_timed
def check_discriminability(instances: int = 50, planted: int = 100) -> Check:
    worst_oracle, worst_sum = 0.0, 0.0
    for seed in range(instances):
        rng = np.random.default_rng(seed)
        t_len = int(rng.choice([8, 16]))
        clips = rng.standard_normal((int(rng.integers(8, 25)), t_len, int(rng.integers(1, 5))))
        labels = np.arange(len(clips)) % int(rng.integers(2, 5))
        curve = analysis.discriminability(analysis.PowerSpectrumSet(analysis.spectral_power(clips), labels))
        oracle = literal_discriminability(list(clips), labels.tolist(), analysis.DEFAULT_EPSILON)
        worst_oracle = max(worst_oracle, float(np.max(np.abs(curve.values - oracle))))
        worst_sum = max(worst_sum, abs(float(curve.values.sum()) - 1.0))
    hits = 0
    for seed in range(planted):
        rng = np.random.default_rng(10_000 + seed)
        target = int(rng.integers(1, 8))
        t = np.arange(16)
        labels = np.arange(40) % 2
        amp = np.where(labels == 1, 3.0, 1.0)[:, None, None]
        phase = rng.uniform(0, 2 * np.pi, size=(40, 1, 4))
        clips = amp * np.sin(2 * np.pi * target * t[None, :, None] / 16 + phase)
        clips = clips + 0.05 * rng.standard_normal(clips.shape)
        curve = analysis.discriminability(analysis.PowerSpectrumSet(analysis.spectral_power(clips), labels))
        hits += curve.argmax == target
    passed = worst_oracle < 1e-12 and worst_sum < 1e-12 and hits == planted
    return Check(5, "discriminability matches literal transcription", passed,
                 {"max_abs_vs_literal": worst_oracle, "max_sum_dev": worst_sum,
                  "planted_hits": f"{hits}/{planted}"})


# -- 6, 7, 9. training ----------------------------------------------------------


def e2e_run(seed: int, adapter=True, epochs: int = 30):
    data = harness.synth_generate(harness.SynthConfig(seed=seed))
    cfg = harness.desk_train_config(seed=seed, epochs=epochs)
    if not adapter:
        cfg.adapter = None
    return harness.train(cfg, data)


@_timed
def check_end_to_end(seed: int = 0, runs: dict | None = None) -> Check:
    report = runs[seed][0] if runs and seed in runs else e2e_run(seed)[0]
    baseline = e2e_run(seed, adapter=False)[0]
    chance = 0.25
    passed = report.final_test_accuracy >= 0.95 and abs(baseline.final_test_accuracy - chance) <= 0.10
    return Check(6, "MS separates frequency classes, pooled baseline at chance", passed,
                 {"ms_test_accuracy": report.final_test_accuracy,
                  "pooled_baseline_accuracy": baseline.final_test_accuracy})


@_timed
def check_band_shift(seeds: int = 10, runs: dict | None = None) -> Check:
    rows = []
    for seed in range(seeds):
        report = runs[seed][0] if runs and seed in runs else e2e_run(seed)[0]
        d = report.discriminability
        rows.append({"seed": seed, "initial": round(d["band_mass_initial"], 6),
                     "final": round(d["band_mass_final"], 6),
                     "up": d["band_mass_final"] > d["band_mass_initial"]})
    ups = sum(r["up"] for r in rows)
    return Check(7, "mid-band discriminability rises with training", ups >= 8,
                 {"seeds_increased": f"{ups}/{seeds}", "runs": rows})


@_timed
def check_determinism(seed: int = 0, epochs: int = 3) -> Check:
    """Run the ``train`` command twice in fresh processes and compare the bytes."""
    cfg = harness.desk_train_config(seed=seed, epochs=epochs)
    run_config = {"adapter": cfg.adapter.to_dict(), "train": cfg.to_dict(include_adapter=False),
                  "synth": harness.SynthConfig(seed=seed).to_dict()}
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        (root / "run.json").write_text(json.dumps(run_config))
        _cli("synth", "--config", root / "run.json", "--out", root / "data")
        for i in range(2):
            _cli("train", "--config", root / "run.json", "--data", root / "data",
                 "--out", root / f"m{i}.f2fc", "--report", root / f"r{i}.json")
        same_ckpt = (root / "m0.f2fc").read_bytes() == (root / "m1.f2fc").read_bytes()
        same_report = (root / "r0.json").read_bytes() == (root / "r1.json").read_bytes()
    return Check(9, "training is bit-reproducible", same_report and same_ckpt,
                 {"epochs": epochs, "reports_identical": same_report, "checkpoints_identical": same_ckpt})


def _cli(*args) -> None:
    proc = subprocess.run([sys.executable, "-m", "freqadapt", "-q", *map(str, args)],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"freqadapt {args[0]} exited {proc.returncode}: {proc.stderr.strip()}")


# -- suites ---------------------------------------------------------------------


def run_suite(suite: str = "all", log=None, perturb: GradPerturbation | None = None) -> list[Check]:
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES + ('all',)}")
    chosen = SUITES if suite == "all" else (suite,)
    checks: list[Check] = []

    def record(check):
        checks.append(check)
        if log:
            log(check.line())

    if "fft" in chosen:
        record(check_fft())
    if "stft" in chosen:
        record(check_stft())
    if "grad" in chosen:
        record(check_zero_init())
        record(check_gradients(perturb=perturb))
        record(check_param_accounting())
    if "anova" in chosen:
        record(check_discriminability())
    if "e2e" in chosen:
        runs = {seed: e2e_run(seed) for seed in range(10)}
        record(check_end_to_end(runs=runs))
        record(check_band_shift(runs=runs))
        record(check_determinism())
    return sorted(checks, key=lambda c: c.criterion)
