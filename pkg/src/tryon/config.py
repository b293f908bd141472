"""Run configuration: one declarative document covering every module.

Every knob has a default. Configs load from a TOML file with one section
per module; unknown keys are rejected. The effective config is snapshotted
(as JSON) into every checkpoint and report so artifacts are self-describing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


@dataclass
class DatasetConfig:
    image_size: int = 128
    n_records: int = 64
    two_component: bool = False


@dataclass
class ContourParams:
    """Contour pipeline knobs: mean-filter window, adaptive-threshold block
    size and offset. Block size must be odd; foreground is darker-than-threshold."""

    mean_kernel: int = 5
    block_size: int = 11
    offset: float = 2.0


@dataclass
class MatcherConfig:
    """Shape-matching net: autoencoder, attention visual encoder, mapper."""

    shape_dim: int = 64
    visual_dim: int = 128
    attention_grid: int = 8
    trunk_width: int = 64
    margin: float = 0.3
    reg_weight: float = 1e-4
    lr: float = 1e-3
    batch_size: int = 16
    steps: int = 500


@dataclass
class WarperConfig:
    num_warps: int = 2
    beta: float = 3.0
    alpha: float = 0.1
    trunk_width: int = 64
    lr: float = 1e-3
    batch_size: int = 16
    steps: int = 2000


@dataclass
class InpaintConfig:
    base_width: int = 32
    depth: int = 4
    lambda_valid: float = 1.0
    lambda_hole: float = 6.0
    lambda_perceptual: float = 0.05
    lambda_style: float = 120.0
    lambda_tv: float = 0.1
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 1000


@dataclass
class RetrievalConfig:
    top_k: int = 25
    n_pairs: int = 2000


@dataclass
class EvalConfig:
    extractor_seed: int = 7
    feature_dim: int = 64
    n_batch_sizes: int = 8
    fid_repeats: int = 3
    fid_n: int = 500


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    contour: ContourParams = field(default_factory=ContourParams)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    warper: WarperConfig = field(default_factory=WarperConfig)
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, path="")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data)

    def override(self, dotted: str, value) -> None:
        """Set ``section.key`` (or a top-level key) to ``value``, e.g. from a CLI flag."""
        parts = dotted.split(".")
        obj = self
        for part in parts[:-1]:
            if not hasattr(obj, part):
                raise ConfigError(f"unknown config section: {dotted!r}")
            obj = getattr(obj, part)
        key = parts[-1]
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key: {dotted!r}")
        current = getattr(obj, key)
        setattr(obj, key, type(current)(value) if current is not None else value)

    def to_toml(self) -> str:
        """Render as a TOML document (config snapshots written to run dirs)."""
        lines = []
        d = self.to_dict()
        for key, value in d.items():
            if not isinstance(value, dict):
                lines.append(f"{key} = {_toml_value(value)}")
        for section, sub in d.items():
            if isinstance(sub, dict):
                lines.append("")
                lines.append(f"[{section}]")
                for key, value in sub.items():
                    lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"


class ConfigError(ValueError):
    pass


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    raise ConfigError(f"cannot serialize config value {value!r}")


def _build(cls, data: dict, path: str):
    """Construct a dataclass from a nested dict, rejecting unknown keys."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"unknown config key: {where!r}")
        ftype = fields[key].type
        if isinstance(value, dict):
            sub_cls = _SECTION_TYPES.get(key)
            if sub_cls is None:
                raise ConfigError(f"unexpected table at {where!r}")
            kwargs[key] = _build(sub_cls, value, where)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "contour": ContourParams,
    "matcher": MatcherConfig,
    "warper": WarperConfig,
    "inpaint": InpaintConfig,
    "retrieval": RetrievalConfig,
    "evaluation": EvalConfig,
}
