"""INI-style run configuration: ``[data]``, ``[network]`` and ``[train]`` sections of key = value.

Example::

    [data]
    dataset = dvsgesture
    manifest = data/manifest.json

    [network]
    embed_dim = 64
    alpha = 1,1,1,1; 1,1,2,1

    [train]
    lr0 = 0.001
    epochs = 50

Network values override the named dataset's defaults. ``alpha`` takes one
4-vector per stage separated by ``;``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .events import WindowSpec
from .model import DATASETS, NetworkConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dataset: str | None = None
    manifest: str | None = None
    points: int | None = None
    window_ms: float | None = None
    stride_ms: float | None = None

    def window(self, points: int) -> WindowSpec | None:
        window_ms = self.window_ms
        if window_ms is None and self.dataset is not None:
            window_ms = DATASETS[self.dataset].window_ms
        if window_ms is None:
            return None
        return WindowSpec(window_ms, self.stride_ms or window_ms, points)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    path: str | None = None

    def window(self) -> WindowSpec | None:
        return self.data.window(self.network.points)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    if key == "alpha":
        return [[float(v) for v in part.split(",")] for part in raw.split(";") if part.strip()]
    if key == "betas":
        return tuple(float(v) for v in raw.split(","))
    if isinstance(default, bool):
        low = raw.lower()
        if low not in _TRUE | _FALSE:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return low in _TRUE
    if raw.lower() in ("none", ""):
        return None
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        for conv in (int, float):
            try:
                return conv(raw)
            except ValueError:
                pass
    return raw


def _apply(cls, section, base=None, *, where: str):
    base = base if base is not None else cls()
    names = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            updates[key] = _coerce(raw, getattr(base, key), key)
        except ValueError as e:
            raise ConfigError(f"{where}: bad value for {key}: {e}") from None
    try:
        return dataclasses.replace(base, **updates)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";;"))
    parser.optionxform = str  # keys are case-sensitive field names (K)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    unknown = set(parser.sections()) - {"data", "network", "train"}
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")
    data = _apply(DataConfig, parser["data"] if parser.has_section("data") else {}, where=f"{source} [data]")
    if data.dataset is not None and data.dataset not in DATASETS:
        raise ConfigError(f"{source}: unknown dataset {data.dataset!r}; choose from {sorted(DATASETS)}")
    base = DATASETS[data.dataset].network() if data.dataset else NetworkConfig()
    if data.points is not None:
        base = dataclasses.replace(base, points=data.points)
    net = _apply(NetworkConfig, parser["network"] if parser.has_section("network") else {}, base,
                 where=f"{source} [network]")
    train = _apply(TrainConfig, parser["train"] if parser.has_section("train") else {},
                   where=f"{source} [train]")
    return RunConfig(data, net, train, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))
