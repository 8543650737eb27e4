"""Experiment configuration: defaults, flat key=value parsing, validation.

Config files are plain text, one `key = value` per line, `#` comments.
Parsing is strict: unknown keys are rejected so a typo in an ablation config
cannot silently run the wrong experiment. Every field has a documented
default, so an empty config is a valid experiment.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to exit code 2."""


@dataclass
class ExperimentConfig:
    rounds: int = 30  # communication rounds (desk-scale default)
    epochs: int = 10  # local epochs per round
    batch_size: int = 32
    lr: float = 0.01
    weight_decay: float = 1e-5
    tau: float = 0.07  # contrastive temperature
    alpha: float = 0.4  # Beta(alpha, alpha) mixup concentration
    beta: float = 0.99  # EMA decay for generalized prototypes
    ema_enabled: bool = True
    aggregator_mode: str = "reweight"  # reweight | average
    gpcl_enabled: bool = True
    apa_enabled: bool = True
    apa_class_mean: bool = False  # alternative class-mean alignment reading
    mixup_mode: str = "feature"  # off | input | feature
    arch: tuple[int, ...] = (16, 32, 16)  # input, hidden..., feature width
    num_classes: int = 5
    num_domains: int = 4
    per_class_count: int = 200  # per class, per domain (synthetic data)
    clients_per_domain: tuple[int, ...] = (3, 2, 1, 2)
    sampling_rate: float = 0.5  # fraction of the domain pool each client draws
    data_noise: float = 0.3  # within-domain Gaussian noise sigma
    data_anchor_scale: float = 2.0
    data_shift: float = 1.0  # strength of the per-domain affine skew
    csv_path: str = ""  # nonempty switches data source from synthetic to CSV
    seed: int = 0
    out_dir: str = "runs/default"

    @property
    def num_clients(self) -> int:
        return sum(self.clients_per_domain)

    @property
    def input_dim(self) -> int:
        return self.arch[0]

    @property
    def feature_dim(self) -> int:
        return self.arch[-1]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    field = _FIELDS[name]
    raw = raw.strip()
    try:
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
        if field.type in ("bool", bool):
            low = raw.lower()
            if low in ("true", "false"):
                return low == "true"
            raise ValueError("expected true or false")
        if field.type.startswith("tuple"):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(int(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} ({exc})") from None


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key = value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def build_config(raw: dict[str, str]) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    values = {name: _parse_value(name, val) for name, val in raw.items()}
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    problems: list[str] = []

    def check(ok: bool, msg: str):
        if not ok:
            problems.append(msg)

    check(cfg.rounds >= 1, "rounds must be >= 1")
    check(cfg.epochs >= 1, "epochs must be >= 1")
    check(cfg.batch_size >= 1, "batch_size must be >= 1")
    check(cfg.lr > 0, "lr must be > 0")
    check(cfg.weight_decay >= 0, "weight_decay must be >= 0")
    check(cfg.tau > 0, "tau must be > 0")
    check(cfg.alpha > 0, "alpha must be > 0")
    check(0.0 <= cfg.beta <= 1.0, "beta must lie in [0, 1]")
    check(
        cfg.aggregator_mode in ("reweight", "average"),
        "aggregator_mode must be reweight or average",
    )
    check(
        cfg.mixup_mode in ("off", "input", "feature"),
        "mixup_mode must be off, input or feature",
    )
    check(len(cfg.arch) >= 2, "arch needs at least input and feature widths")
    check(all(w >= 1 for w in cfg.arch), "arch widths must be positive")
    check(cfg.num_classes >= 2, "num_classes must be >= 2")
    check(cfg.num_domains >= 1, "num_domains must be >= 1")
    check(cfg.per_class_count >= 1, "per_class_count must be >= 1")
    check(
        len(cfg.clients_per_domain) == cfg.num_domains,
        "clients_per_domain needs one entry per domain",
    )
    check(all(c >= 0 for c in cfg.clients_per_domain), "client counts must be >= 0")
    check(sum(cfg.clients_per_domain) >= 1, "need at least one client")
    check(0.0 < cfg.sampling_rate <= 1.0, "sampling_rate must lie in (0, 1]")
    check(cfg.data_noise >= 0, "data_noise must be >= 0")
    check(cfg.data_anchor_scale > 0, "data_anchor_scale must be > 0")
    check(cfg.data_shift >= 0, "data_shift must be >= 0")
    check(cfg.seed >= 0, "seed must be >= 0")
    if problems:
        raise ConfigError("; ".join(problems))


def load_config(path, seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    raw = parse_kv_text(text)
    cfg = build_config(raw)
    if seed is not None or out_dir is not None:
        cfg = dataclasses.replace(
            cfg,
            seed=cfg.seed if seed is None else seed,
            out_dir=cfg.out_dir if out_dir is None else out_dir,
        )
        validate_config(cfg)
    return cfg


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """JSON-safe view of every resolved field; never contains nulls."""
    out = {}
    for name in _FIELDS:
        value = getattr(cfg, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def write_resolved(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


SWEEPABLE = ("tau", "alpha", "beta")


@dataclass
class SweepSpec:
    param: str
    values: list[float]
    base: ExperimentConfig


def parse_sweep(text: str) -> SweepSpec:
    """Sweep files are regular configs plus `sweep_param` and `sweep_values`."""
    raw = parse_kv_text(text)
    param = raw.pop("sweep_param", None)
    values_raw = raw.pop("sweep_values", None)
    if param is None or values_raw is None:
        raise ConfigError("sweep config requires sweep_param and sweep_values")
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep_param must be one of {', '.join(SWEEPABLE)}")
    parts = [p.strip() for p in values_raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError("sweep_values must be a nonempty comma-separated list")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"sweep_values: {exc}") from None
    return SweepSpec(param, values, build_config(raw))
