"""Run configuration: ``key = value`` files merged with command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from .alignment import AlignmentConfig, format_mode, parse_mode
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

SEED_ENV = "FAEREC_SEED"


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ks(text: str) -> tuple[int, ...]:
    ks = tuple(int(k) for k in text.split(",") if k.strip())
    if not ks or min(ks) < 1:
        raise ValueError("need a comma-separated list of positive integers")
    return ks


def _mode(text: str) -> str:
    return format_mode(parse_mode(text))


# key -> (parser, default, help)
KEYS: dict[str, tuple[Callable[[str], object], str, str]] = {
    "train.batch_size": (int, "256", "users per mini-batch"),
    "train.lr": (float, "0.001", "Adam learning rate"),
    "train.beta1": (float, "0.9", "Adam first-moment decay"),
    "train.beta2": (float, "0.999", "Adam second-moment decay"),
    "train.adam_eps": (float, "1e-8", "Adam denominator epsilon"),
    "train.epochs": (int, "50", "maximum number of epochs"),
    "train.alpha": (float, "0.3", "weight of the alignment loss"),
    "train.seed": (int, "0", "seed for initialization, shuffling and negatives"),
    "train.patience": (int, "10", "epochs without validation N@10 gain before stopping"),
    "align.tau": (float, "0.1", "InfoNCE temperature"),
    "align.lambda": (float, "0.01", "redundancy-reduction weight"),
    "align.w_max": (float, "1.0", "upper bound of the item-level weight"),
    "align.w_min": (float, "0.0", "lower bound of the item-level weight"),
    "align.period": (int, "0", "cosine schedule period in epochs (0 = train.epochs)"),
    "align.grouping": (_bool, "true", "split batches at median popularity for feature-level loss"),
    "align.mode": (_mode, "full", "full or +-joined subset of no_ila,no_fla,no_cls,no_pg"),
    "model.d": (int, "32", "embedding size"),
    "model.max_len": (int, "50", "longest input sequence (positional table size)"),
    "model.fusion": (str, "gate", "gate, equal (no gating) or id_only (plain ID baseline)"),
    "model.id_init": (str, "pca", "pca (from semantic vectors) or normal"),
    "model.id_init_std": (float, "0.1", "std of normal ID initialization"),
    "model.proj_hidden": (int, "0", "projection hidden width (0 = ceil(d_llm / 2))"),
    "encoder.kind": (str, "attn", "attn (causal self-attention) or last (last item)"),
    "encoder.blocks": (int, "2", "number of attention blocks"),
    "encoder.d_ff": (int, "0", "feed-forward width (0 = 4 * model.d)"),
    "eval.exclude_seen": (_bool, "true", "drop already-consumed items from the candidates"),
    "eval.ks": (_ks, "5,10,20", "cutoffs for HR@K / NDCG@K / coverage"),
}

# command-line ablation names -> config overrides
ABLATIONS = {
    "agf": ("model.fusion", "equal"),
    "ila": ("align.mode", "no_ila"),
    "fla": ("align.mode", "no_fla"),
    "cls": ("align.mode", "no_cls"),
    "pg": ("align.mode", "no_pg"),
}


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    return "\n".join(f"  {k.ljust(width)}  default {d:<8}  {h}" for k, (_, d, h) in KEYS.items())


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        file: str | Path | None = None,
        overrides: Mapping[str, str] | None = None,
        env: Mapping[str, str] | None = None,
    ) -> "RunConfig":
        """Defaults, then the config file, then ``FAEREC_SEED``, then overrides."""
        raw = {k: d for k, (_, d, _) in KEYS.items()}
        layers = []
        if file is not None:
            layers.append(parse_config_text(Path(file).read_text(encoding="utf-8"), str(file)))
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            layers.append({"train.seed": env[SEED_ENV]})
        layers.append(dict(overrides or {}))
        for layer in layers:
            unknown = set(layer) - set(KEYS)
            if unknown:
                raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
            raw.update(layer)
        values = {}
        for key, text in raw.items():
            try:
                values[key] = KEYS[key][0](str(text))
            except ValueError as exc:
                raise ConfigError(f"{key}: invalid value {text!r} ({exc})") from None
        cfg = cls(values)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        # constructing the typed configs runs every range check
        self.train_config()
        self.align_config()
        self.model_config()

    def to_text(self) -> str:
        lines = []
        for key in KEYS:
            value = self.values[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            batch_size=v["train.batch_size"], lr=v["train.lr"], beta1=v["train.beta1"],
            beta2=v["train.beta2"], adam_eps=v["train.adam_eps"], epochs=v["train.epochs"],
            alpha=v["train.alpha"], seed=v["train.seed"], patience=v["train.patience"],
        )

    def align_config(self) -> AlignmentConfig:
        v = self.values
        return AlignmentConfig(
            tau=v["align.tau"], lam=v["align.lambda"], w_max=v["align.w_max"], w_min=v["align.w_min"],
            period=v["align.period"] or max(v["train.epochs"], 1), popularity_grouping=v["align.grouping"],
            mode=parse_mode(v["align.mode"]),
        )

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            d=v["model.d"], max_len=v["model.max_len"], fusion=v["model.fusion"], id_init=v["model.id_init"],
            id_init_std=v["model.id_init_std"], encoder=v["encoder.kind"], blocks=v["encoder.blocks"],
            d_ff=v["encoder.d_ff"], proj_hidden=v["model.proj_hidden"],
        )
