"""Training configuration and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidInputError, ParseError

STRATEGIES = ("boundary", "random", "cluster")


@dataclass
class TrainConfig:
    # architecture (input dim and class count come from the data)
    hidden: int = 64
    feature_dim: int = 16
    # schedule
    epochs: int = 40
    pretrain_epochs: int = 5
    batch_size: int = 32
    # objective
    beta: float = 0.5
    margin: float = 1.0
    lambda_dis: float = 1.0
    omega_min: float = 0.05
    include_true_class_margin: bool = False
    # active sampling
    delta: float = 0.01
    start_epoch: int = 20
    period: int = 2
    max_rounds: int = 5
    label_mode: str = "pseudo"
    sampling_strategy: str = "boundary"
    # optimiser
    lr_init: float = 0.01
    gamma: float = 0.8
    epoch_drop: int = 10
    momentum: float = 0.9
    lr_head_multiplier: float = 10.0
    grad_clip: float = 0.0
    # discrepancy
    n_bandwidths: int = 5
    unbiased: bool = False
    distance_cap: int = 2000
    refresh_distances: bool = False
    # ablation toggles
    use_mmd: bool = True
    use_alpha: bool = True
    use_epsilon: bool = True
    use_projection_head: bool = True
    use_boundary_loss: bool = True
    use_active_sampling: bool = True
    # output
    export_features: bool = False
    seed: int = 0

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise InvalidInputError(f"config: {msg}")

        need(self.hidden >= 1 and self.feature_dim >= 1, "layer widths must be >= 1")
        need(self.epochs >= 0 and self.pretrain_epochs >= 0, "epoch counts must be >= 0")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.beta >= 0, "beta must be >= 0")
        need(self.margin >= 0, "margin must be >= 0")
        need(self.lambda_dis >= 0, "lambda_dis must be >= 0")
        need(0 <= self.omega_min <= 1, "omega_min must be in [0, 1]")
        need(0 <= self.delta <= 1, "delta must be in [0, 1]")
        need(self.start_epoch >= 0 and self.period >= 1 and self.max_rounds >= 0,
             "sampling schedule out of range")
        need(self.label_mode in ("pseudo", "oracle"), "label_mode must be pseudo or oracle")
        need(self.sampling_strategy in STRATEGIES,
             f"sampling_strategy must be one of {STRATEGIES}")
        need(self.lr_init > 0 and 0 < self.gamma <= 1 and self.epoch_drop >= 1,
             "learning-rate schedule out of range")
        need(0 <= self.momentum < 1, "momentum must be in [0, 1)")
        need(self.lr_head_multiplier > 0, "lr_head_multiplier must be > 0")
        need(self.grad_clip >= 0, "grad_clip must be >= 0 (0 disables clipping)")
        need(self.n_bandwidths >= 1, "n_bandwidths must be >= 1")
        need(self.distance_cap >= 2, "distance_cap must be >= 2")

    def replace(self, **changes) -> "TrainConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def source_only(self) -> "TrainConfig":
        """Plain source classification: every adaptation component switched off."""
        return self.replace(use_mmd=False, use_alpha=False, use_epsilon=False,
                            use_projection_head=False, use_boundary_loss=False,
                            use_active_sampling=False)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def standard_config() -> TrainConfig:
    """Settings used for the synthetic-benchmark acceptance runs.

    Defaults everywhere except a lower base learning rate (the 10x head
    multiplier destabilises the bias-free head at 0.01) and oracle labelling
    of the actively selected target samples.
    """
    return TrainConfig(lr_init=0.002, label_mode="oracle")


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(raw: str, typ, key: str, path, lineno: int):
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ParseError(f"bad value {raw!r} for {key}", path, lineno) from None


def parse_config(text: str, path=None) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", path, lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ParseError(f"unknown key {key!r}", path, lineno)
        values[key] = _coerce(raw.strip().strip('"'), types[key], key, path, lineno)
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), path)
