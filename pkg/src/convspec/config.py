"""Config documents for the CLI commands: strict JSON with known keys only."""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError, InputError


@dataclass
class RunConfig:
    """cmd_train configuration. Defaults mirror the reference training
    protocol (lr 0.1, momentum 0.9, weight decay 1e-4, projection every 2
    steps); batch 64 is the documented desk-scale reduction of 128 for the
    10x smaller synthetic dataset."""

    architecture: str = "resnet"
    depth: int = 9
    widths: tuple = (16, 32, 64)
    input_size: int = 16
    classes: int = 10
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    projection_period: int = 2
    seed: int = 0
    out_dir: str = "runs"
    lr_decay: bool = True
    train_size: int = 5000
    test_size: int = 1000
    noise: float = 1.0
    signal: float = 0.15
    shift: int = 2
    flip: bool = True
    ratio_log_every: int = 1
    seeds: tuple = ()  # non-empty -> aggregation mode over these seeds
    relu_corrected_sigma: bool = False
    head_width: int = 0
    convs_per_block: int = 3
    batchnorm: bool = True
    padding: str = "zero"
    branch_scale: float = 1.0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.seeds = tuple(int(s) for s in self.seeds)
        positive = {
            "depth": self.depth, "input_size": self.input_size,
            "classes": self.classes, "epochs": self.epochs,
            "batch_size": self.batch_size, "lr": self.lr,
            "projection_period": self.projection_period,
            "train_size": self.train_size, "test_size": self.test_size,
            "ratio_log_every": self.ratio_log_every,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        for name, value in (("momentum", self.momentum),
                            ("weight_decay", self.weight_decay),
                            ("noise", self.noise), ("signal", self.signal), ("shift", self.shift)):
            if value < 0:
                raise ConfigError(f"{name} must be nonnegative, got {value}")


@dataclass
class LinExpConfig:
    """cmd_linexp configuration; the target map R is generated with
    log-singular values uniform in [-gamma, gamma]."""

    n_dim: int = 8
    gamma: float = 0.5
    L_values: tuple = (4, 8, 16, 32)
    steps: int = 5000
    lr: float = 0.1
    batch: int = 512
    noise_std: float = 1.0
    seeds: tuple = (0, 1, 2, 3, 4)
    log_every: int = 100
    seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        self.L_values = tuple(int(v) for v in self.L_values)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not (1 <= self.n_dim <= 32):
            raise ConfigError("n_dim must be in [1, 32]")
        if min(self.L_values) < 1:
            raise ConfigError("L_values must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")


@dataclass
class FigRatioConfig:
    """cmd_figratio configuration: the 3-conv probe net swept over a
    channel grid, with and without per-step projection."""

    channels: tuple = (8, 16, 32, 64)
    failure_in_channels: tuple = (1, 2)
    failure_out_channels: tuple = (32, 64)
    runs: int = 10
    epochs: int = 10
    input_size: int = 6
    classes: int = 10
    train_size: int = 128
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    projection_period: int = 2
    noise: float = 1.0
    signal: float = 0.15
    seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.failure_in_channels = tuple(int(c) for c in self.failure_in_channels)
        self.failure_out_channels = tuple(int(c) for c in self.failure_out_channels)
        if min(self.channels) < 1:
            raise ConfigError("channels must be positive")
        for name in ("runs", "epochs", "input_size", "train_size", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


_LIST_FIELDS = {"widths", "seeds", "L_values", "channels",
                "failure_in_channels", "failure_out_channels"}


def _from_dict(cls, doc, path="config"):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(
            f"{path}: unknown config keys {sorted(unknown)}; known: {sorted(known)}"
        )
    kwargs = {}
    for key, value in doc.items():
        if key in _LIST_FIELDS:
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path, cls):
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}: invalid JSON at byte offset {exc.pos}: {exc.msg}",
            offset=exc.pos,
        ) from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be an object")
    return _from_dict(cls, doc, path)
