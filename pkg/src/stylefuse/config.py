"""Run configuration: flat ``section.key = value`` text with strict key checking.

Example::

    # comments and blank lines are ignored
    seed = 3
    fusion.gamma = 0.6
    eval.gamma_grid = 0,0.3,0.6,0.9,1.2

Every key must exist in :class:`RunConfig`; values are parsed to the type
of the field's default. ``dumps`` writes every key, so a stored config
fully determines a run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


# keys whose value may be "none"
OPTIONAL_FLOATS = {"sample.w_style"}


@dataclass
class CorpusSection:
    samples_per_cell: int = 16
    num_frames: int = 60
    test_fraction: float = 0.2
    judge_samples_per_cell: int = 8


@dataclass
class VaeSection:
    latent_tokens: int = 2
    latent_dim: int = 32
    blocks: int = 2
    hidden: int = 64
    heads: int = 4
    beta: float = 1e-4
    warmup_steps: int = 200
    stage1_steps: int = 1200
    stage2_steps: int = 1200
    batch_size: int = 32
    lr: float = 1e-3
    stages: str = "both"


@dataclass
class DiffusionSection:
    T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    width: int = 64
    heads: int = 4
    blocks: int = 4
    p_uncond: float = 0.1
    p_pooled: float = 0.5
    content_steps: int = 3000
    style_steps: int = 800
    batch_size: int = 64
    style_batch_size: int = 32
    lr: float = 1e-3
    style_lr: float = 3e-3
    reference: str = "same_style"


@dataclass
class FusionSection:
    gamma: float = 0.6
    eta: float = 1e-5
    hook_block: int = 2


@dataclass
class AlignSection:
    tau0: float = 0.07
    epochs: int = 30
    steps_per_epoch: int = 20
    lr: float = 5e-3
    train_head: bool = True


@dataclass
class SampleSection:
    steps: int = 50
    w_cfg: float = 2.5
    # separate style guidance weight; none = two-branch guidance at w_cfg
    w_style: float | None = 6.0
    w_cls: float = 0.0
    num_frames: int = 60


@dataclass
class ClassifierSection:
    steps: int = 1500
    latent_steps: int = 300


@dataclass
class EvalSection:
    samples_per_cell: int = 8
    gamma_grid: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2)
    pool: int = 32
    diversity_pairs: int = 32


@dataclass
class RunConfig:
    seed: int = 0
    corpus: CorpusSection = field(default_factory=CorpusSection)
    vae: VaeSection = field(default_factory=VaeSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    align: AlignSection = field(default_factory=AlignSection)
    sample: SampleSection = field(default_factory=SampleSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    out[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
            else:
                out[f.name] = value
        return out

    def set(self, key: str, raw: str):
        parts = key.split(".")
        if len(parts) == 1 and parts[0] in self._top_keys():
            target, name = self, parts[0]
        elif len(parts) == 2 and parts[0] in self._section_keys():
            target, name = getattr(self, parts[0]), parts[1]
            if name not in {f.name for f in dataclasses.fields(target)}:
                raise ConfigError(f"unknown config key {key!r}")
        else:
            raise ConfigError(f"unknown config key {key!r}")
        if key in OPTIONAL_FLOATS:
            value = None if raw.strip().lower() == "none" else _parse(raw, 0.0, key)
        else:
            value = _parse(raw, getattr(target, name), key)
        setattr(target, name, value)

    def _top_keys(self):
        return {f.name for f in dataclasses.fields(self)
                if not dataclasses.is_dataclass(getattr(self, f.name))}

    def _section_keys(self):
        return {f.name for f in dataclasses.fields(self)
                if dataclasses.is_dataclass(getattr(self, f.name))}


def _parse(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x for x in raw.split(",") if x.strip()]
            return tuple(float(x) for x in items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in cfg.flat().items())


def load(path, overrides=()) -> RunConfig:
    cfg = loads(Path(path).read_text()) if path else RunConfig()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg
