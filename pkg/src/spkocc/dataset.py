"""Synthetic occlusion dataset: configuration, generation, on-disk layout and loading.

A dataset directory holds ``sample_XXXX.socc`` (+ ``.json`` provenance) files,
``manifest.txt`` with the train/test split and ``dataset.json`` with the config.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterator

from .dataset_io import EXTENSION, SplitManifest, make_split, read_sample, sample_id, write_sample
from .scenes import OCCLUDER_PATTERNS, Sample, SceneConfigError, generate_sample, random_scene
from .spikes import DEFAULT_BINS, DEFAULT_HEIGHT, DEFAULT_STEPS, DEFAULT_W_AUX, DEFAULT_WIDTH
from .train import WindowDataset

MANIFEST = "manifest.txt"
CONFIG = "dataset.json"


@dataclass
class DatasetConfig:
    count: int = 128
    num_train: int = 108
    height: int = DEFAULT_HEIGHT
    width: int = DEFAULT_WIDTH
    duration: int = DEFAULT_STEPS
    w_aux: int = DEFAULT_W_AUX
    bins: int = DEFAULT_BINS
    seed: int = 0
    patterns: list[str] = field(default_factory=lambda: list(OCCLUDER_PATTERNS))
    scene_overrides: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.patterns = list(self.patterns)
        for name in ("count", "height", "width", "duration", "bins"):
            if int(getattr(self, name)) <= 0:
                raise SceneConfigError(name, "must be positive")
        if not 0 < self.num_train < self.count:
            raise SceneConfigError("num_train", f"must lie strictly between 0 and count ({self.count})")
        if self.w_aux <= 0 or 2 * self.w_aux >= self.duration:
            raise SceneConfigError("w_aux", f"need 0 < 2*w_aux < duration ({self.duration})")
        if not self.patterns:
            raise SceneConfigError("patterns", "at least one occluder pattern is required")
        for p in self.patterns:
            if p not in OCCLUDER_PATTERNS:
                raise SceneConfigError("patterns", f"unknown occluder {p!r}; expected one of {OCCLUDER_PATTERNS}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise SceneConfigError(key, "unknown dataset field")
        return cls(**d)


def scene_for(config: DatasetConfig, index: int):
    pattern = config.patterns[index % len(config.patterns)]
    return random_scene(config.seed * 100003 + index, pattern, config.height, config.width, config.duration,
                        **config.scene_overrides)


def iter_samples(config: DatasetConfig) -> Iterator[tuple[str, Sample]]:
    for i in range(config.count):
        sample = generate_sample(scene_for(config, i))
        sample.meta["id"] = sample_id(i)
        yield sample_id(i), sample


def write_dataset(config: DatasetConfig, out_dir: str | os.PathLike, progress=None) -> SplitManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    for sid, sample in iter_samples(config):
        write_sample(sample, out / f"{sid}{EXTENSION}")
        if progress is not None:
            progress(sid, sample)
    manifest = make_split(config.count, config.num_train, config.seed)
    manifest.save(out / MANIFEST)
    return manifest


def load_config(data_dir: str | os.PathLike) -> DatasetConfig:
    return DatasetConfig.from_dict(json.loads((Path(data_dir) / CONFIG).read_text()))


def load_split(data_dir: str | os.PathLike, split: str, w_aux: int | None = None,
               bins: int | None = None) -> WindowDataset:
    data_dir = Path(data_dir)
    config = load_config(data_dir)
    manifest = SplitManifest.load(data_dir / MANIFEST)
    ids = {"train": manifest.train, "test": manifest.test}[split]
    samples = (read_sample(data_dir / f"{sid}{EXTENSION}") for sid in ids)
    return WindowDataset.from_samples(samples, w_aux=w_aux or config.w_aux, bins=bins or config.bins, ids=ids)


def build_in_memory(config: DatasetConfig) -> tuple[WindowDataset, WindowDataset]:
    """Generate a dataset without touching disk and return its (train, test) window datasets."""
    manifest = make_split(config.count, config.num_train, config.seed)
    train_ids, test_ids = set(manifest.train), set(manifest.test)
    train, test = [], []
    for sid, sample in iter_samples(config):
        if sid in train_ids:
            train.append((sid, sample))
        elif sid in test_ids:
            test.append((sid, sample))

    def to_ds(pairs):
        ids = [p[0] for p in pairs]
        return WindowDataset.from_samples((p[1] for p in pairs), w_aux=config.w_aux, bins=config.bins, ids=ids)

    return to_ds(train), to_ds(test)
