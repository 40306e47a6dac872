"""Pipeline configuration: one JSON document, one root seed."""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autoenc.train import TrainConfig
from .cluster.repro import ClusterConfig
from .voxform import ALL_VARIANTS, parse_variant

SEED_NAMES = ("synth", "init", "folds", "louvain")
FINE_TUNED = "FT"


def sub_seed(root: int, name: str) -> int:
    """Independent 32-bit seed for stream ``name`` under ``root``."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


@dataclass
class SynthConfig:
    n_per_class: int = 50
    volume_dims: tuple[int, int, int] = (96, 96, 96)


@dataclass
class PreprocessConfig:
    variants: list[str] = field(default_factory=lambda: list(ALL_VARIANTS))
    mip_size: int = 256


@dataclass
class ModelConfig:
    channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    train_variants: list[str] = field(default_factory=lambda: ["D+T"])
    finetune_variant: str = "D+NT"
    encode_batch: int = 12


@dataclass
class EvalConfig:
    # (model, data) pairs; the model is a trained variant or "FT" for the fine-tuned one
    pairs: list[list[str]] = field(default_factory=lambda: [["D+T", "D+T"], ["D+T", "ND+T"],
                                                             [FINE_TUNED, "D+NT"]])
    identity_model: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "run"
    jobs: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    cluster_variants: list[str] = field(default_factory=lambda: ["D+NT"])
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    # fields that locate or schedule work but never change results
    NON_SEMANTIC = ("out", "jobs")

    def seeds(self) -> dict[str, int]:
        return {name: sub_seed(self.seed, name) for name in SEED_NAMES}

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        sections = {"synth": SynthConfig, "preprocess": PreprocessConfig, "model": ModelConfig,
                    "train": TrainConfig, "evaluate": EvalConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key == "cluster":
                kwargs[key] = ClusterConfig.from_dict(value)
            elif key in sections:
                kwargs[key] = _section(sections[key], value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for v in [*self.preprocess.variants, *self.model.train_variants, self.model.finetune_variant,
                  *self.cluster_variants]:
            parse_variant(v)
        size = self.preprocess.mip_size
        if size < 2 ** (len(self.model.channels) - 1) or size & (size - 1):
            raise ValueError(f"mip_size {size} must be a power of two >= 2^(levels)")
        if self.synth.n_per_class < 1:
            raise ValueError("synth.n_per_class must be >= 1")
        if min(self.synth.volume_dims) < 64:
            raise ValueError("synth.volume_dims must each be >= 64")

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in self.NON_SEMANTIC}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def override(self, dotted: str, value) -> "PipelineConfig":
        """Return a copy with ``a.b.c = value`` applied."""
        d = self.to_dict()
        node = d
        *parents, leaf = dotted.split(".")
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise ValueError(f"no config section {p!r} in {dotted!r}")
            node = node[p]
        if leaf not in node:
            raise ValueError(f"unknown config key {dotted!r}")
        node[leaf] = value
        return PipelineConfig.from_dict(d)


def _section(cls, value: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(value) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    out = {}
    for k, v in value.items():
        out[k] = tuple(v) if isinstance(v, list) and "tuple" in str(known[k].type) else v
    return cls(**out)
