"""Sweep configuration: a JSON document with materialized defaults."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .. import __version__
from ..activation import ActivationError, get_activation
from ..nnsim import TrainConfig

MODELS = ("RF", "NN")
ROUNDING_RULE = "N = round(D * n_over_d), P = round(D * p_over_d), clipped to >= 1"


class ConfigError(ValueError):
    pass


def log_grid(lo: float, hi: float, num: int) -> list:
    """``num`` log-spaced ratios between lo and hi (inclusive)."""
    if not (lo > 0 and hi >= lo and num >= 1):
        raise ConfigError(f"bad log grid ({lo}, {hi}, {num})")
    return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), num)]


def _snr_to_json(v):
    return "inf" if math.isinf(v) else v


def parse_snr(v) -> float:
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "+inf"):
        return math.inf
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"snr must be a positive number or 'inf', got {v!r}") from None
    if not v > 0:
        raise ConfigError(f"snr must be positive, got {v}")
    return v


@dataclass
class SweepGrid:
    """A (P/D, N/D) grid for RF, or a (width, N/D) grid for NN."""

    model: str = "RF"
    D: int = 100
    n_over_d: list = field(default_factory=lambda: log_grid(0.1, 100.0, 25))
    p_over_d: list = field(default_factory=lambda: [10.0])
    widths: list = field(default_factory=lambda: [20])
    replicates: int = 10
    activation: str = "tanh"
    snr: float = 0.2
    gamma: float = 1e-3
    K: int = 1
    ensemble: bool = False
    m_test: int = 10_000
    train: dict = field(default_factory=lambda: asdict(TrainConfig()))
    checkpoint_epochs: list = field(default_factory=lambda: [50, 100, 200, 500, 1000])
    teacher_width: int = 100
    experiment_id: str = "sweep"
    master_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if int(self.D) < 1:
            raise ConfigError("D must be >= 1")
        self.D = int(self.D)
        self.snr = parse_snr(self.snr)
        for name in ("n_over_d", "p_over_d"):
            vals = [float(v) for v in getattr(self, name)]
            if not vals or any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise ConfigError(f"{name} must be a non-empty list of positive ratios")
            setattr(self, name, vals)
        self.widths = [int(w) for w in self.widths]
        if self.model == "NN" and (not self.widths or min(self.widths) < 1):
            raise ConfigError("widths must be positive integers")
        if self.replicates < 1 or self.K < 1 or self.m_test < 2:
            raise ConfigError("replicates, K must be >= 1 and m_test >= 2")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError("gamma must be finite and >= 0")
        try:
            self.act = get_activation(self.activation)
        except ActivationError as exc:
            raise ConfigError(str(exc)) from None
        try:
            self.train_config = TrainConfig(**self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None

    # --- implied sizes

    @property
    def n_values(self) -> list:
        return [max(1, int(round(self.D * r))) for r in self.n_over_d]

    @property
    def p_values(self) -> list:
        if self.model == "NN":
            return list(self.widths)
        return [max(1, int(round(self.D * r))) for r in self.p_over_d]

    # --- serialization

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["snr"] = _snr_to_json(self.snr)
        d["train"] = asdict(self.train_config)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resolved(self) -> dict:
        """Config with all defaults plus derived sizes and provenance."""
        out = self.to_dict()
        out["derived"] = {
            "N": self.n_values, "P_or_width": self.p_values, "rounding": ROUNDING_RULE,
            "eta": self.act.eta, "zeta": self.act.zeta, "r": self.act.r,
            "config_hash": self.config_hash(), "code_version": __version__,
        }
        return out


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> SweepGrid:
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data.get("grid", data))
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    try:
        return SweepGrid.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
