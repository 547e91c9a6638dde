"""Run configuration: a flat key=value text format with # comments.

Every field round-trips losslessly through serialize/parse. CLI flags
override file values; unknown keys are rejected by name so typos fail
loudly instead of silently training the wrong thing.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional


class ConfigFileError(ValueError):
    """Bad config file or field value; message names the offender."""


@dataclass
class RunConfig:
    # training method and schedule
    method: str = "xgblora"  # xgblora | lora | full-ft
    iterations: Optional[int] = None  # T
    kappa: Optional[int] = 8  # steps per booster
    total_steps: Optional[int] = 256  # K
    rank: int = 1
    sample_layers: int = 8  # L_s
    lam: float = 0.0
    eta: float = 0.5
    batch_size: int = 16
    policy: str = "qv"
    seed: int = 0
    # task
    task: str = "teacher-matrix"  # teacher-matrix | teacher-mlp | parity-seq | char-classify
    dims: str = "8,8"  # mlp dims, comma separated
    noise: float = 0.0
    delta_scale: float = 1.0
    delta_kind: str = "gaussian"
    n_examples: int = 128
    seq_len: int = 8
    vocab: int = 2
    # model (transformer tasks)
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 64
    # run plumbing
    precision: str = "f64"  # f64 | f32
    out_dir: str = "runs/out"
    verbose_metrics: bool = False

    def validate(self):
        if self.method not in ("xgblora", "lora", "full-ft"):
            raise ConfigFileError(f"method: unknown value {self.method!r}")
        if self.task not in ("teacher-matrix", "teacher-mlp", "parity-seq", "char-classify"):
            raise ConfigFileError(f"task: unknown value {self.task!r}")
        if self.precision not in ("f64", "f32"):
            raise ConfigFileError(f"precision: must be f64 or f32, got {self.precision!r}")
        if self.policy not in ("qv", "all"):
            raise ConfigFileError(f"policy: must be qv or all, got {self.policy!r}")
        if self.rank < 1:
            raise ConfigFileError(f"rank: must be >= 1, got {self.rank}")
        if self.eta < 0:
            raise ConfigFileError(f"eta: must be >= 0, got {self.eta}")
        if self.batch_size < 1:
            raise ConfigFileError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.n_examples < 1:
            raise ConfigFileError(f"n_examples: must be >= 1, got {self.n_examples}")
        return self

    def dims_list(self) -> list[int]:
        try:
            return [int(tok) for tok in self.dims.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigFileError(f"dims: expected comma-separated ints, got {self.dims!r}") from exc


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    f = _FIELDS[name]
    base = f.type.replace("Optional[", "").rstrip("]") if isinstance(f.type, str) else f.type
    raw = raw.strip()
    if raw == "none":
        return None
    if base in ("int", int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigFileError(f"{name}: expected int, got {raw!r}") from exc
    if base in ("float", float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigFileError(f"{name}: expected float, got {raw!r}") from exc
    if base in ("bool", bool):
        if raw in ("true", "1", "yes"):
            return True
        if raw in ("false", "0", "no"):
            return False
        raise ConfigFileError(f"{name}: expected bool, got {raw!r}")
    return raw


def serialize_config(cfg: RunConfig) -> str:
    lines = ["# run configuration (key=value)"]
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigFileError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigFileError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
