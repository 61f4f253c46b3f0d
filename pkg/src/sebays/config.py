"""Run configuration: one YAML file per run, validated before any work starts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data import SEVERITY, CorruptionSpec
from .layers import PriorConfig
from .model import LayerSpec, NetworkSpec
from .schedule import PhasePlan
from .trainer import TrainerConfig

DATA_SOURCES = ("two-moons", "blobs", "synthetic-digits", "idx", "csv")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class DataConfig:
    source: str = "two-moons"
    n_train: int = 1000
    n_test: int = 1000
    noise: float = 0.1
    classes: int = 3
    spread: float = 0.5
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_csv: str | None = None
    test_csv: str | None = None
    val_fraction: float = 0.0
    augment: bool = False
    normalize: bool = True


@dataclass
class NetworkConfig:
    hidden: list[int] = field(default_factory=lambda: [16, 16])
    conv: list[dict] = field(default_factory=list)
    prior_sigma0: float = 1.0
    prior_lambda: float = 0.5
    temperature: float = 0.5


@dataclass
class TrainerSection:
    mode: str = "sebays-no-freeze"
    t0: int = 150
    t_ex: int = 100
    M: int = 3
    lr_high: float = 0.1
    lr_mid: float = 0.01
    lr_low: float = 0.001
    schedule: str = "stepwise"
    rho: float = 3.0
    sigma_reset: float = 1e-6
    init_sigma: float = 1e-4
    init_gamma: float = 0.99
    batch_size: int = 128
    momentum: float = 0.9
    kl_weight: float | None = None
    freeze_variant: str = "mask"
    checkpoint_every: int = 10


@dataclass
class OodConfig:
    source: str = "blobs"
    n: int = 500
    spread: float = 0.5
    centers: list[list[float]] = field(default_factory=lambda: [[3.5, 3.5], [-2.5, 3.5]])


@dataclass
class EvalConfig:
    mc: list[int] = field(default_factory=lambda: [1])
    ece_bins: int = 15
    corruptions: list[dict] = field(default_factory=list)
    ood: OodConfig | None = None
    sparsity_threshold: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # -- derived objects --------------------------------------------------------
    def plan(self) -> PhasePlan:
        t = self.trainer
        return PhasePlan(t.t0, t.t_ex, t.M, t.lr_high, t.lr_mid, t.lr_low, t.schedule)

    def trainer_config(self) -> TrainerConfig:
        t = self.trainer
        return TrainerConfig(
            plan=self.plan(), rho=t.rho, mode=t.mode, sigma_reset=t.sigma_reset,
            init_sigma=t.init_sigma, init_gamma=t.init_gamma, seed=self.seed,
            batch_size=t.batch_size, momentum=t.momentum, kl_weight=t.kl_weight,
            freeze_variant=t.freeze_variant, augment=self.data.augment,
            checkpoint_every=t.checkpoint_every,
        )

    def prior(self) -> PriorConfig:
        return PriorConfig(self.network.prior_sigma0, self.network.prior_lambda)

    def network_spec(self, input_shape: tuple[int, ...], n_classes: int) -> NetworkSpec:
        kind = "gaussian" if self.trainer.mode == "dense-bnn" else "spike-slab"
        layers = [LayerSpec(kind, int(c["units"]), c.get("activation", "relu"),
                            int(c.get("kernel", 3)), int(c.get("padding", 1)))
                  for c in self.network.conv]
        layers += [LayerSpec(kind, int(h)) for h in self.network.hidden]
        layers.append(LayerSpec("gaussian", n_classes, "identity"))
        return NetworkSpec(input_shape, n_classes, layers)

    def corruption_specs(self) -> list[CorruptionSpec]:
        return [CorruptionSpec(c["kind"], int(c["severity"])) for c in self.eval.corruptions]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _coerce(value: Any, typ: str, key: str) -> Any:
    optional = typ.endswith("| None")
    base = typ.replace("| None", "").strip()
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: must not be null")
    if base == "float":
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if base == "bool" and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if base == "str" and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    if base.startswith("list") and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list")
    return value


def _build(cls, raw: Any, prefix: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {prefix}{key}")
    kwargs = {}
    for name, f in known.items():
        if name not in raw:
            continue
        value = raw[name]
        sub = _NESTED.get((cls, name))
        if sub is not None and value is not None:
            value = _build(sub, value, f"{prefix}{name}.")
        elif sub is None:
            value = _coerce(value, f.type, f"{prefix}{name}")
        kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "data"): DataConfig,
    (RunConfig, "network"): NetworkConfig,
    (RunConfig, "trainer"): TrainerSection,
    (RunConfig, "eval"): EvalConfig,
    (EvalConfig, "ood"): OodConfig,
}


_FILE_KEYS = ("train_images", "train_labels", "test_images", "test_labels", "train_csv", "test_csv")


def _require(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: RunConfig, base_dir: Path | None = None, check_files: bool = True) -> RunConfig:
    d = cfg.data
    _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    _require(d.source in DATA_SOURCES, "data.source", f"must be one of {DATA_SOURCES}")
    _require(d.n_train >= 2 and d.n_test >= 1, "data.n_train", "need n_train >= 2 and n_test >= 1")
    _require(0 <= d.val_fraction < 1, "data.val_fraction", "must lie in [0, 1)")
    _require(d.noise >= 0 and d.spread > 0, "data.noise", "noise must be >= 0 and spread > 0")
    if d.source == "blobs":
        _require(d.classes >= 2, "data.classes", "need at least 2 classes")
    needed = {"idx": ("train_images", "train_labels", "test_images", "test_labels"),
              "csv": ("train_csv", "test_csv")}.get(d.source, ())
    for key in needed:
        value = getattr(d, key)
        _require(value is not None, f"data.{key}", f"required for source {d.source!r}")
        if check_files:
            path = Path(value)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            _require(path.exists(), f"data.{key}", f"file not found: {value}")
    n = cfg.network
    _require(all(int(h) >= 1 for h in n.hidden), "network.hidden", "widths must be >= 1")
    for i, c in enumerate(n.conv):
        _require(isinstance(c, dict) and "units" in c, f"network.conv[{i}]", "needs 'units'")
        extra = set(c) - {"units", "kernel", "padding", "activation"}
        _require(not extra, f"network.conv[{i}]", f"unknown keys {sorted(extra)}")
    _require(n.temperature > 0, "network.temperature", "must be > 0")
    try:
        cfg.prior()
    except ValueError as exc:
        raise ConfigError(f"network.prior: {exc}") from None
    try:
        cfg.trainer_config()
    except ValueError as exc:
        raise ConfigError(f"trainer: {exc}") from None
    e = cfg.eval
    _require(bool(e.mc) and all(int(m) >= 1 for m in e.mc), "eval.mc", "MC sample counts must be >= 1")
    _require(e.ece_bins >= 1, "eval.ece_bins", "must be >= 1")
    _require(0 < e.sparsity_threshold < 1, "eval.sparsity_threshold", "must lie in (0, 1)")
    for i, c in enumerate(e.corruptions):
        _require(isinstance(c, dict) and set(c) == {"kind", "severity"},
                 f"eval.corruptions[{i}]", "needs exactly 'kind' and 'severity'")
        _require(c["kind"] in SEVERITY, f"eval.corruptions[{i}].kind", f"unknown kind {c['kind']!r}")
        _require(0 <= int(c["severity"]) <= 5, f"eval.corruptions[{i}].severity", "must lie in 0..5")
    if e.ood is not None:
        _require(e.ood.source == "blobs", "eval.ood.source", "only 'blobs' is supported")
        _require(e.ood.n >= 1 and len(e.ood.centers) >= 1, "eval.ood", "need n >= 1 and a centre")
    return cfg


def parse_config(raw: dict | None) -> RunConfig:
    try:
        return _build(RunConfig, raw or {}, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: list[str] | None = None, check_files: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    for item in overrides or []:
        apply_override(raw, item)
    cfg = validate(parse_config(raw), path.parent, check_files)
    # Stored absolute so the copy written into a run directory still resolves.
    for key in _FILE_KEYS:
        value = getattr(cfg.data, key)
        if value is not None and not Path(value).is_absolute():
            setattr(cfg.data, key, str((path.parent / value).resolve()))
    return cfg


def apply_override(raw: dict, item: str) -> None:
    """Apply ``section.key=value`` (value parsed as YAML) to a raw config dict."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key}: {p} is not a section")
    node[parts[-1]] = yaml.safe_load(value)
