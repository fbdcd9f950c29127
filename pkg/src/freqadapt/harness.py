"""Desk-scale training apparatus for the temporal adapters.

The pipeline per clip is::

    x (T, N, D) -> [adapter "before"] -> x @ W -> [adapter "after"] -> activation
      -> CLS token, mean over T -> linear head -> logits

``W`` is a frozen seeded orthogonal matrix standing in for a pretrained
backbone. Only the adapters and the head are trained.

Synthetic clips carry one sinusoid per class, ``A sin(2 pi f_c t / T + phi)``
along a fixed unit direction in ``R^{N x D}``, with a fresh uniform phase per
clip. Every frame has the same marginal distribution whatever the class, so
only temporal structure separates them.
"""

from __future__ import annotations

import json
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from freqadapt import adapters, analysis, tensorio
from freqadapt import numerics as nx
from freqadapt.errors import ConfigError, DimensionError, DivergenceError, FormatError

SPLITS = ("train", "val", "test")
TAP_POINTS = ("input", "pre_adapter", "post_adapter", "post_backbone")
SLOTS = {
    "before_attention": ("before",),
    "after_attention": ("after",),
    "both": ("before", "after"),
}


def _check_keys(cls, data: Mapping[str, Any], section: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")


# -- synthetic data -------------------------------------------------------------


@dataclass
class SynthConfig:
    classes: int = 4
    class_bins: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    frames: int = 16
    tokens: int = 9
    dim: int = 64
    amplitude: float = 16.0
    noise_std: float = 0.3
    clips_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("classes", "frames", "tokens", "dim", "clips_per_class"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"synth.{name} must be a positive integer, got {value!r}")
        self.class_bins = [int(b) for b in self.class_bins]
        if len(self.class_bins) != self.classes:
            raise ConfigError(f"synth.class_bins has {len(self.class_bins)} entries for {self.classes} classes")
        if len(set(self.class_bins)) != len(self.class_bins):
            raise ConfigError(f"synth.class_bins must be distinct, got {self.class_bins}")
        top = self.frames // 2 - 1
        for b in self.class_bins:
            if not 1 <= b <= top:
                raise ConfigError(f"synth.class_bins entries must lie in 1..{top}, got {b}")
        if self.noise_std < 0:
            raise ConfigError(f"synth.noise_std must be nonnegative, got {self.noise_std}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SynthConfig":
        _check_keys(cls, data, "synth")
        return cls(**data)


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 4:
            raise DimensionError(f"clips must be (B, T, N, D), got shape {self.x.shape}")
        if len(self.y) != len(self.x):
            raise DimensionError(f"{len(self.x)} clips but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Split

    def split(self, name: str) -> Split:
        if name not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {name!r}")
        return getattr(self, name)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.train.x.shape[1:])

    @property
    def classes(self) -> int:
        return int(max(int(s.y.max()) for s in (self.train, self.val, self.test) if len(s)) + 1)

    def manifest(self) -> dict[str, Any]:
        t, n, d = self.shape
        return {
            "T": t,
            "N": n,
            "D": d,
            "classes": self.classes,
            "splits": {name: list(self.split(name).x.shape) for name in SPLITS},
        }


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Seeded frequency-coded clips; the direction is shared by all splits."""
    cfg.validate()
    direction_seed, *split_seeds = np.random.SeedSequence(cfg.seed).spawn(1 + len(SPLITS))
    u = np.random.default_rng(direction_seed).standard_normal((cfg.tokens, cfg.dim))
    u /= np.linalg.norm(u)
    t = np.arange(cfg.frames)
    bins = np.asarray(cfg.class_bins, dtype=np.float64)
    out = {}
    for name, seed in zip(SPLITS, split_seeds):
        rng = np.random.default_rng(seed)
        labels = np.tile(np.arange(cfg.classes), cfg.clips_per_class)
        phase = rng.uniform(0.0, 2 * np.pi, size=len(labels))
        wave = cfg.amplitude * np.sin(2 * np.pi * bins[labels][:, None] * t / cfg.frames + phase[:, None])
        noise = rng.standard_normal((len(labels), cfg.frames, cfg.tokens, cfg.dim)) * cfg.noise_std
        out[name] = Split(wave[:, :, None, None] * u + noise, labels)
    return Dataset(**out)


def save_dataset(data: Dataset, directory) -> None:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name in SPLITS:
            split = data.split(name)
            tensorio.save_tensor(directory / f"{name}.f2ft", split.x)
            analysis.write_labels_csv(directory / f"labels_{name}.csv", split.y)
    except OSError as exc:
        raise FormatError(f"cannot write dataset to {directory}: {exc.strerror}", code="io",
                          path=str(directory)) from exc


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    splits = {}
    for name in SPLITS:
        x = tensorio.load_tensor(directory / f"{name}.f2ft")
        if np.iscomplexobj(x) or x.ndim != 4:
            raise FormatError(f"{directory / f'{name}.f2ft'}: expected a real rank-4 tensor",
                              code="bad_shape", path=str(directory / f"{name}.f2ft"))
        y = analysis.read_labels_csv(directory / f"labels_{name}.csv")
        splits[name] = Split(x, y)
    shapes = {s.x.shape[1:] for s in splits.values()}
    if len(shapes) != 1:
        raise DimensionError(f"splits disagree on (T, N, D): {sorted(shapes)}")
    return Dataset(**splits)


# -- frozen backbone ------------------------------------------------------------


class FrozenBackbone:
    """Seeded orthogonal token map followed by a fixed activation."""

    def __init__(self, dim: int, seed: int = 0, activation: str = "gelu"):
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        self.weight = q * np.sign(np.diag(r))
        self.weight.setflags(write=False)
        self.seed = seed
        self.activation = activation
        self._act, self._act_backward = nx.activation(activation)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"backbone expects D={self.dim}, got {x.shape[-1]}")
        return x @ self.weight

    def project_backward(self, grad: np.ndarray) -> np.ndarray:
        return grad @ self.weight.T

    def activate(self, z: np.ndarray) -> np.ndarray:
        return self._act(z)

    def activate_backward(self, z: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return self._act_backward(z, grad)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.activate(self.project(x))


def frozen_backbone(x, seed: int = 0, activation: str = "gelu") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return FrozenBackbone(x.shape[-1], seed, activation)(x)


def singular_value_range(matrix, iters: int = 500, seed: int = 0) -> tuple[float, float]:
    """``(sigma_min, sigma_max)`` by power iteration on ``M^T M`` and its shifted complement."""
    m = np.asarray(matrix, dtype=np.float64)
    gram = m.T @ m
    rng = np.random.default_rng(seed)

    def top_eigenvalue(a):
        v = rng.standard_normal(a.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = a @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                return 0.0
            lam = float(v @ w)
            v = w / norm
        return lam

    lam_max = top_eigenvalue(gram)
    lam_min = lam_max - top_eigenvalue(lam_max * np.eye(len(gram)) - gram)
    return math.sqrt(max(lam_min, 0.0)), math.sqrt(max(lam_max, 0.0))


# -- head and loss --------------------------------------------------------------


def init_head(dim: int, classes: int) -> nx.ParamSet:
    head = nx.ParamSet()
    head.add("weight", np.zeros((dim, classes)))
    head.add("bias", np.zeros(classes))
    return head


def classify(x, head: nx.ParamSet):
    """CLS token per frame, mean over frames, one linear layer; returns ``(logits, pooled)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"classify expects (B, T, N, D), got shape {x.shape}")
    if head["weight"].shape[0] != x.shape[-1]:
        raise DimensionError(f"head expects D={head['weight'].shape[0]}, got {x.shape[-1]}")
    pooled = x[:, :, 0, :].mean(axis=1)
    return nx.linear_apply(pooled, head["weight"], head["bias"]), pooled


def classify_backward(x_shape, head: nx.ParamSet, pooled: np.ndarray, grad_logits: np.ndarray) -> np.ndarray:
    gp, gw, gb = nx.linear_backward(pooled, head["weight"], grad_logits)
    head.accumulate("weight", gw)
    head.accumulate("bias", gb)
    grad_x = np.zeros(x_shape)
    grad_x[:, :, 0, :] = gp[:, None, :] / x_shape[1]
    return grad_x


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient ``(softmax - onehot) / B``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if np.any((labels < 0) | (labels >= k)):
        raise ConfigError(f"labels must lie in 0..{k - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), labels]))
    grad = softmax(logits)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def predict(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)  # first maximum wins ties


# -- optimisation ---------------------------------------------------------------


@dataclass
class TrainConfig:
    adapter: adapters.AdapterConfig | None = field(default_factory=adapters.AdapterConfig)
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 2
    seed: int = 0
    backbone_seed: int = 0
    tap_point: str = "post_adapter"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if isinstance(self.adapter, Mapping):
            self.adapter = adapters.AdapterConfig.from_dict(self.adapter)
        for name in ("epochs", "warmup_epochs", "seed", "backbone_seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigError(f"train.{name} must be a nonnegative integer, got {value!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be a positive integer, got {self.batch_size!r}")
        if self.base_lr < 0 or self.weight_decay < 0:
            raise ConfigError("train.base_lr and train.weight_decay must be nonnegative")
        if self.tap_point not in TAP_POINTS:
            raise ConfigError(f"train.tap_point must be one of {TAP_POINTS}, got {self.tap_point!r}")
        self.betas = tuple(float(b) for b in self.betas)
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"train.betas must be two values in [0, 1), got {self.betas}")

    def to_dict(self, include_adapter: bool = True) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "adapter"}
        out["betas"] = list(self.betas)
        if include_adapter:
            out["adapter"] = None if self.adapter is None else self.adapter.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], adapter: dict | None = None) -> "TrainConfig":
        _check_keys(cls, data, "train")
        data = dict(data)
        if adapter is not None:
            data["adapter"] = adapter
        return cls(**data)


DESK_BASE_LR = 1e-2


def desk_train_config(**overrides) -> TrainConfig:
    """Shipped desk experiment: default AdamW settings with ``base_lr`` 1e-2.

    At 1e-3 the zero-initialised up-projection, identity kernels and zero
    head form a saddle the synthetic task does not escape within 30 epochs.
    """
    return TrainConfig(**{"base_lr": DESK_BASE_LR, **overrides})


def lr_schedule(epoch: float, cfg: TrainConfig) -> float:
    """Linear warmup from 0, then half-cosine from ``base_lr`` down to 0 at epoch ``E - 1``.

    ``epoch`` may be fractional; values past the final epoch stay at 0.
    """
    w, e = cfg.warmup_epochs, cfg.epochs
    if epoch < w:
        return cfg.base_lr * epoch / w
    span = e - 1 - w
    if span <= 0:
        return cfg.base_lr
    progress = min((epoch - w) / span, 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(groups, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> AdamState:
    """One decoupled-weight-decay Adam update, in place, over every parameter.

    ``groups`` is a :class:`ParamSet` or a mapping of name prefix to
    ParamSet. Parameters are visited in insertion order. Every gradient is
    checked before anything is modified.
    """
    if isinstance(groups, nx.ParamSet):
        groups = {"": groups}
    entries = [(prefix + name, params, name) for prefix, params in groups.items() for name in params]
    for full, params, name in entries:
        if not np.all(np.isfinite(params.grad(name))):
            raise DivergenceError(f"non-finite gradient in {full}", param=full)
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for full, params, name in entries:
        g = params.grad(name)
        theta = params[name]
        m = state.m.setdefault(full, np.zeros_like(theta))
        v = state.v.setdefault(full, np.zeros_like(theta))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta *= 1.0 - lr * weight_decay
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# -- model ----------------------------------------------------------------------


class Model:
    """Adapters around the frozen backbone plus the linear head."""

    def __init__(self, backbone: FrozenBackbone, head: nx.ParamSet,
                 adapter_config: adapters.AdapterConfig | None = None,
                 adapter_params: Mapping[str, nx.ParamSet] | None = None):
        self.backbone = backbone
        self.head = head
        self.adapter_config = adapter_config
        self.adapters: dict[str, nx.ParamSet] = dict(adapter_params or {})
        slots = SLOTS[adapter_config.placement] if adapter_config else ()
        if tuple(self.adapters) != slots:
            raise ConfigError(f"placement needs adapters {slots}, got {tuple(self.adapters)}")

    @classmethod
    def initialise(cls, cfg: TrainConfig, dim: int, classes: int) -> "Model":
        backbone = FrozenBackbone(dim, cfg.backbone_seed)
        params = {}
        if cfg.adapter is not None:
            if cfg.adapter.dim != dim:
                raise ConfigError(f"adapter.dim={cfg.adapter.dim} but data has D={dim}")
            for k, slot in enumerate(SLOTS[cfg.adapter.placement]):
                params[slot] = adapters.init_adapter(cfg.adapter, seed=[cfg.seed, k])
        return cls(backbone, init_head(dim, classes), cfg.adapter, params)

    def groups(self) -> "OrderedDict[str, nx.ParamSet]":
        out = OrderedDict((f"adapter.{slot}.", p) for slot, p in self.adapters.items())
        out["head."] = self.head
        return out

    def adapter_param_count(self) -> int:
        return sum(nx.param_count(p) for p in self.adapters.values())

    def zero_grads(self) -> None:
        for params in self.groups().values():
            params.zero_grads()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4:
            raise DimensionError(f"model expects (B, T, N, D), got shape {x.shape}")
        cache: dict[str, Any] = {"x_shape": x.shape}
        taps = {"input": x}
        h = x
        if "before" in self.adapters:
            taps["pre_adapter"] = h
            h, cache["before"] = adapters.forward(self.adapters["before"], h, self.adapter_config)
        z = self.backbone.project(h)
        taps.setdefault("pre_adapter", z)
        if "after" in self.adapters:
            z, cache["after"] = adapters.forward(self.adapters["after"], z, self.adapter_config)
        taps["post_adapter"] = h if "before" in self.adapters and "after" not in self.adapters else z
        cache["z"] = z
        e = self.backbone.activate(z)
        taps["post_backbone"] = e
        logits, cache["pooled"] = classify(e, self.head)
        cache["e_shape"] = e.shape
        cache["taps"] = taps
        return logits, cache

    def backward(self, cache, grad_logits) -> np.ndarray:
        g = classify_backward(cache["e_shape"], self.head, cache["pooled"], grad_logits)
        g = self.backbone.activate_backward(cache["z"], g)
        if "after" in cache:
            g = adapters.backward(self.adapters["after"], cache["after"], g)
        g = self.backbone.project_backward(g)
        if "before" in cache:
            g = adapters.backward(self.adapters["before"], cache["before"], g)
        return g

    def logits(self, x, batch: int = 256) -> np.ndarray:
        return np.concatenate([self.forward(x[i : i + batch])[0] for i in range(0, len(x), batch)])

    def embed(self, x, tap: str = "post_adapter", batch: int = 256) -> np.ndarray:
        if tap not in TAP_POINTS:
            raise ConfigError(f"tap must be one of {TAP_POINTS}, got {tap!r}")
        return np.concatenate([self.forward(x[i : i + batch])[1]["taps"][tap] for i in range(0, len(x), batch)])


# -- reports and checkpoints ----------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    per_class: list[float | None]

    def to_dict(self) -> dict[str, Any]:
        return {"accuracy": self.accuracy, "per_class_accuracy": self.per_class}


def _accuracy(logits: np.ndarray, labels: np.ndarray, classes: int) -> EvalResult:
    pred = predict(logits)
    hit = pred == labels
    per_class = []
    for c in range(classes):
        mask = labels == c
        per_class.append(float(hit[mask].mean()) if mask.any() else None)
    return EvalResult(float(hit.mean()) if len(hit) else 0.0, per_class)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    final_test_accuracy: float = 0.0
    test_per_class_accuracy: list[float | None] = field(default_factory=list)
    param_count: int = 0
    head_param_count: int = 0
    discriminability: dict[str, Any] | None = None
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_time_s")
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


@dataclass
class Checkpoint:
    adapter_params: dict[str, nx.ParamSet]
    head: nx.ParamSet
    optimizer: AdamState
    config: dict[str, Any]
    history: dict[str, Any]

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config["train"])

    def adapter_param_count(self) -> int:
        return sum(nx.param_count(p) for p in self.adapter_params.values())

    def model(self) -> Model:
        cfg = self.train_config
        dim = self.config["data"]["D"]
        return Model(FrozenBackbone(dim, cfg.backbone_seed), self.head, cfg.adapter, self.adapter_params)

    def entries(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        out["meta.config_json"] = tensorio.bytes_to_tensor(json.dumps(self.config, sort_keys=True).encode())
        out["meta.history_json"] = tensorio.bytes_to_tensor(json.dumps(self.history, sort_keys=True).encode())
        for slot, params in self.adapter_params.items():
            for name, value in params.items():
                out[f"adapter.{slot}.{name}"] = value
        for name, value in self.head.items():
            out[f"head.{name}"] = value
        out["optim.step"] = np.array([float(self.optimizer.step)])
        for name in self.optimizer.m:
            out[f"optim.m.{name}"] = self.optimizer.m[name]
            out[f"optim.v.{name}"] = self.optimizer.v[name]
        return out

    @classmethod
    def from_entries(cls, entries: Mapping[str, np.ndarray], path=None) -> "Checkpoint":
        try:
            config = json.loads(tensorio.tensor_to_bytes(entries["meta.config_json"]).decode())
            history = json.loads(tensorio.tensor_to_bytes(entries["meta.history_json"]).decode())
            step = int(entries["optim.step"][0])
        except (KeyError, ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"checkpoint metadata missing or corrupt: {exc}", code="bad_meta", path=path) from None
        adapter_params: dict[str, nx.ParamSet] = {}
        head = nx.ParamSet()
        optimizer = AdamState(step=step)
        for key, value in entries.items():
            if key.startswith("adapter."):
                _, slot, name = key.split(".", 2)
                adapter_params.setdefault(slot, nx.ParamSet()).add(name, value.copy())
            elif key.startswith("head."):
                head.add(key[len("head."):], value.copy())
            elif key.startswith("optim.m."):
                optimizer.m[key[len("optim.m."):]] = value.copy()
            elif key.startswith("optim.v."):
                optimizer.v[key[len("optim.v."):]] = value.copy()
        return cls(adapter_params, head, optimizer, config, history)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        tensorio.save_container(path, ckpt.entries())
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}", code="io", path=str(path)) from exc


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_entries(tensorio.load_container(path), path=str(path))


# -- training -------------------------------------------------------------------


def _tap_curve(model: Model, split: Split, tap: str):
    if len(np.unique(split.y)) < 2:
        return None
    emb = model.embed(split.x, tap)
    return analysis.discriminability(analysis.PowerSpectrumSet.from_embeddings(emb, split.y))


def _mid_band(curve) -> range:
    return range(analysis.MID_BAND.start, min(analysis.MID_BAND.stop, curve.bins))


def train(cfg: TrainConfig, data: Dataset, log=None) -> tuple[TrainReport, Checkpoint]:
    """Train adapters and head; deterministic given ``cfg``.

    ``log`` is an optional callable receiving one progress line per epoch.
    """
    for name in SPLITS:
        if len(data.split(name)) == 0:
            raise ConfigError(f"{name} split is empty")
    started = time.perf_counter()
    t, n, d = data.shape
    classes = data.classes
    model = Model.initialise(cfg, d, classes)
    state = AdamState()
    report = TrainReport(param_count=model.adapter_param_count(), head_param_count=nx.param_count(model.head))
    before = _tap_curve(model, data.test, cfg.tap_point)

    x, y = data.train.x, data.train.y
    steps = math.ceil(len(y) / cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(y))
        loss_sum, hits, lr = 0.0, 0, 0.0
        for i in range(steps):
            idx = order[i * cfg.batch_size : (i + 1) * cfg.batch_size]
            lr = lr_schedule(epoch + i / steps, cfg)
            model.zero_grads()
            logits, cache = model.forward(x[idx])
            loss, grad = cross_entropy(logits, y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            model.backward(cache, grad)
            adamw_step(model.groups(), state, lr, cfg.betas, cfg.eps, cfg.weight_decay)
            loss_sum += loss * len(idx)
            hits += int(np.sum(predict(logits) == y[idx]))
        val = _accuracy(model.logits(data.val.x), data.val.y, classes)
        report.train_loss.append(loss_sum / len(y))
        report.train_accuracy.append(hits / len(y))
        report.val_accuracy.append(val.accuracy)
        report.learning_rate.append(lr)
        if log:
            log(f"epoch {epoch}: loss {report.train_loss[-1]:.4f} "
                f"train_acc {report.train_accuracy[-1]:.3f} val_acc {val.accuracy:.3f}")

    test = _accuracy(model.logits(data.test.x), data.test.y, classes)
    report.final_test_accuracy = test.accuracy
    report.test_per_class_accuracy = test.per_class
    after = _tap_curve(model, data.test, cfg.tap_point)
    if before is not None:
        band = _mid_band(before)
        report.discriminability = {
            "tap": cfg.tap_point,
            "band": [band.start, band.stop - 1],
            "band_mass_initial": analysis.band_mass(before, band),
            "band_mass_final": analysis.band_mass(after, band),
            "argmax_initial": before.argmax,
            "argmax_final": after.argmax,
        }
    report.wall_time_s = time.perf_counter() - started
    config = {"train": cfg.to_dict(), "data": {"T": t, "N": n, "D": d, "classes": classes}}
    ckpt = Checkpoint(dict(model.adapters), model.head, state, config, report.to_dict())
    return report, ckpt


def check_compatible(ckpt: Checkpoint, shape) -> None:
    data = ckpt.config["data"]
    expected = (data["T"], data["N"], data["D"])
    if tuple(shape) != expected:
        raise ConfigError(f"checkpoint trained on (T, N, D)={expected}, data has {tuple(shape)}")


def evaluate(ckpt: Checkpoint, split: Split) -> EvalResult:
    check_compatible(ckpt, split.x.shape[1:])
    data = ckpt.config["data"]
    if len(split.y) and int(split.y.max()) >= data["classes"]:
        raise ConfigError(f"labels exceed the checkpoint's {data['classes']} classes")
    return _accuracy(ckpt.model().logits(split.x), split.y, data["classes"])
