"""Run configuration: TOML file + flag overrides, with a resolved echo.

A run config merges the training hyperparameters, variant switches,
synthetic-cohort spec, data paths, and output directory. Every run writes
its fully resolved config next to its outputs so re-running the echoed file
reproduces the run bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import VariantConfig
from .synth import SynthSpec
from .training import LAMBDA_GRID, TrainConfig

VARIANT_NAMES = ("ukt", "no_cl", "no_wdist", "no_stocemb")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: VariantConfig = field(default_factory=VariantConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    dataset: str = ""
    dataset_format: str = "csv-flat"
    out_dir: str = "out"
    noise_rate: float = 0.2
    lambda_grid: list = field(default_factory=lambda: [0.0, *LAMBDA_GRID])
    heatmap_per_dim: bool = True
    variant_name: str = "ukt"
    test_fraction: float = 0.2
    folds_k: int = 5
    sweep_folds: int = 1
    stress_variants: list = field(default_factory=lambda: ["ukt", "no_cl"])

    def echo(self, path) -> None:
        """Write the resolved config as TOML (stable key order)."""
        lines = ["[run]"]
        lines.append(f'out_dir = "{self.out_dir}"')
        lines.append(f"noise_rate = {self.noise_rate!r}")
        lines.append("lambda_grid = [" + ", ".join(repr(float(x)) for x in self.lambda_grid) + "]")
        lines.append(f"heatmap_per_dim = {str(self.heatmap_per_dim).lower()}")
        lines.append(f'variant_name = "{self.variant_name}"')
        lines.append(f"sweep_folds = {self.sweep_folds}")
        lines.append("stress_variants = [" + ", ".join(f'"{v}"' for v in self.stress_variants) + "]")
        lines.append("")
        lines.append("[data]")
        lines.append(f'dataset = "{self.dataset}"')
        lines.append(f'format = "{self.dataset_format}"')
        lines.append(f"test_fraction = {self.test_fraction!r}")
        lines.append(f"folds_k = {self.folds_k}")
        lines.append("")
        lines.append("[train]")
        for f_ in dataclasses.fields(TrainConfig):
            value = getattr(self.train, f_.name)
            lines.append(f"{f_.name} = {_toml_value(value)}")
        lines.append("")
        lines.append("[variant]")
        for f_ in dataclasses.fields(VariantConfig):
            value = getattr(self.variant, f_.name)
            lines.append(f"{f_.name} = {_toml_value(value)}")
        lines.append("")
        lines.append("[synth]")
        for f_ in dataclasses.fields(SynthSpec):
            value = getattr(self.synth, f_.name)
            lines.append(f"{f_.name} = {_toml_value(value)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    if value is None:
        return '"none"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def _apply_section(cls, current, section: dict, name: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {f.name: getattr(current, f.name) for f in fields.values()}
    for key, value in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        if value == "none":
            value = None
        if isinstance(value, list) and key == "seq_len":
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] section: {exc}")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    cfg = RunConfig()
    if "train" in raw:
        cfg.train = _apply_section(TrainConfig, cfg.train, raw["train"], "train")
    if "variant" in raw:
        cfg.variant = _apply_section(VariantConfig, cfg.variant, raw["variant"], "variant")
    if "synth" in raw:
        cfg.synth = _apply_section(SynthSpec, cfg.synth, raw["synth"], "synth")
    data = raw.get("data", {})
    cfg.dataset = data.get("dataset", cfg.dataset)
    cfg.dataset_format = data.get("format", cfg.dataset_format)
    cfg.test_fraction = data.get("test_fraction", cfg.test_fraction)
    cfg.folds_k = data.get("folds_k", cfg.folds_k)
    run = raw.get("run", {})
    for key in ("out_dir", "noise_rate", "lambda_grid", "heatmap_per_dim",
                "variant_name", "sweep_folds", "stress_variants"):
        if key in run:
            setattr(cfg, key, run[key])
    if cfg.variant_name not in VARIANT_NAMES:
        raise ConfigError(f"unknown variant_name {cfg.variant_name!r}")
    return cfg


def apply_variant_name(cfg: RunConfig) -> None:
    """Fold the named ablation into the variant switches, keeping lambda."""
    cfg.variant = VariantConfig.named_variant(
        cfg.variant_name,
        lambda_=cfg.variant.lambda_,
        cl_convention=cfg.variant.cl_convention,
        distance_cap=cfg.variant.distance_cap,
    )


def override_from_flags(cfg: RunConfig, args) -> RunConfig:
    """Apply CLI flags on top of the config file; flags win."""
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "format", None):
        cfg.dataset_format = args.format
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.synth = dataclasses.replace(cfg.synth, seed=args.seed)
    if getattr(args, "lambda_", None) is not None:
        cfg.variant = dataclasses.replace(cfg.variant, lambda_=args.lambda_)
    if getattr(args, "variant", None):
        cfg.variant_name = args.variant
    train_flags = {
        "epochs": "max_epochs", "dim": "dim", "heads": "heads",
        "blocks": "blocks", "lr": "learning_rate", "dropout": "dropout",
        "batch_size": "batch_size",
    }
    updates = {}
    for flag, field_name in train_flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[field_name] = value
    if updates:
        cfg.train = dataclasses.replace(cfg.train, **updates)
    if getattr(args, "noise_rate", None) is not None:
        cfg.noise_rate = args.noise_rate
    if cfg.variant_name not in VARIANT_NAMES:
        raise ConfigError(f"unknown variant {cfg.variant_name!r}")
    apply_variant_name(cfg)
    return cfg
