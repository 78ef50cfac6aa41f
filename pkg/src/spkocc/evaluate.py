"""Per-occlusion-class evaluation and the four-row ablation study."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .metrics import psnr, ssim
from .nets.model import ABLATION_ROWS, MODEL_KINDS, ModelConfig, count_parameters, load_checkpoint
from .scenes import OCCLUDER_PATTERNS
from .train import TrainConfig, WindowDataset, train

Predictor = Callable[[WindowDataset, int], np.ndarray]


@torch.no_grad()
def predict(model: torch.nn.Module, dataset: WindowDataset, index: int) -> dict[str, np.ndarray]:
    model.eval()
    v_minus, v_center, v_plus, _ = dataset.batch([index])
    out = model(v_minus, v_center, v_plus)
    return {k: v[0, 0].numpy() for k, v in out.items()}


def model_predictor(model: torch.nn.Module) -> Predictor:
    return lambda ds, i: predict(model, ds, i)["i_hat"]


def mean_psnr(model: torch.nn.Module, dataset: WindowDataset) -> float:
    pred = model_predictor(model)
    return float(np.mean([psnr(pred(dataset, i), dataset.records[i].ground_truth) for i in range(len(dataset))]))


@dataclass
class ClassScore:
    name: str
    count: int
    psnr: float | None
    ssim: float | None

    @property
    def flagged(self) -> bool:
        return self.count == 0

    @property
    def infinite(self) -> bool:
        return self.psnr is not None and math.isinf(self.psnr)


@dataclass
class EvalReport:
    classes: list[ClassScore]
    total: ClassScore
    param_count: int | None
    fingerprint: str | None
    per_sample: list[dict] = field(default_factory=list)

    def records(self) -> list[dict]:
        rows = []
        for c in [*self.classes, self.total]:
            rows.append({"class": c.name, "count": c.count, "psnr": _json_float(c.psnr),
                         "ssim": c.ssim, "flagged": c.flagged, "params": self.param_count,
                         "fingerprint": self.fingerprint})
        return rows

    def format_table(self) -> str:
        lines = [f"{'Occlusion':<16}{'N':>4}{'PSNR':>10}{'SSIM':>9}"]
        for c in [*self.classes, self.total]:
            if c.flagged:
                lines.append(f"{c.name:<16}{c.count:>4}{'(no samples)':>19}")
            else:
                lines.append(f"{c.name:<16}{c.count:>4}{c.psnr:>10.2f}{c.ssim:>9.3f}")
        if self.param_count is not None:
            lines.append(f"parameters: {self.param_count:,}  fingerprint: {self.fingerprint}")
        return "\n".join(lines)


def _json_float(x):
    if x is None:
        return None
    if math.isinf(x):
        return "inf"
    return x


def _mean(values: Sequence[float]) -> float:
    # mean over a list containing inf stays inf instead of producing nan warnings
    if any(math.isinf(v) for v in values):
        return math.inf
    return float(np.mean(values))


def evaluate(model: torch.nn.Module | str | os.PathLike | None, dataset: WindowDataset,
             predictor: Predictor | None = None, expected: ModelConfig | None = None) -> EvalReport:
    """Score predictions against ground truth per occlusion class and in total.

    ``model`` may be a module, a checkpoint path, or None when ``predictor`` is given.
    """
    param_count = fingerprint = None
    if isinstance(model, (str, os.PathLike)):
        model, _ = load_checkpoint(model, expected=expected)
    if model is not None:
        param_count = sum(p.numel() for p in model.parameters())
        cfg = getattr(model, "config", None)
        fingerprint = cfg.fingerprint() if cfg is not None else None
        if predictor is None:
            predictor = model_predictor(model)
    if predictor is None:
        raise ValueError("need a model or a predictor")

    per_sample = []
    for i, rec in enumerate(dataset.records):
        if rec.ground_truth is None:
            raise ValueError(f"sample {rec.sample_id} has no ground truth")
        pred = np.clip(predictor(dataset, i), 0.0, 1.0)
        per_sample.append({"id": rec.sample_id, "class": rec.pattern,
                           "psnr": psnr(pred, rec.ground_truth), "ssim": ssim(pred, rec.ground_truth)})

    names = list(OCCLUDER_PATTERNS) + sorted({r["class"] for r in per_sample} - set(OCCLUDER_PATTERNS) - {None})
    classes = []
    for name in names:
        rows = [r for r in per_sample if r["class"] == name]
        if rows:
            classes.append(ClassScore(name, len(rows), _mean([r["psnr"] for r in rows]),
                                      float(np.mean([r["ssim"] for r in rows]))))
        else:
            classes.append(ClassScore(name, 0, None, None))
    total = ClassScore("total", len(per_sample), _mean([r["psnr"] for r in per_sample]),
                       float(np.mean([r["ssim"] for r in per_sample])))
    return EvalReport(classes=classes, total=total, param_count=param_count, fingerprint=fingerprint,
                      per_sample=per_sample)


def constant_predictor(value: float = 0.5) -> Predictor:
    def pred(ds: WindowDataset, i: int) -> np.ndarray:
        return np.full(ds.records[i].counts.shape[-2:], value, dtype=np.float32)
    return pred


def oracle_predictor() -> Predictor:
    return lambda ds, i: ds.records[i].ground_truth


# -- ablation -------------------------------------------------------------------------

@dataclass
class AblationRow:
    kind: str
    architecture: str
    inputs: str
    psnr: float
    ssim: float
    params: int
    final_loss: float


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def format_table(self) -> str:
        lines = [f"{'Architecture':<18}{'Inputs':<16}{'PSNR':>8}{'SSIM':>8}{'Params':>12}"]
        for r in self.rows:
            lines.append(f"{r.architecture:<18}{r.inputs:<16}{r.psnr:>8.2f}{r.ssim:>8.3f}{r.params:>12,}")
        return "\n".join(lines)

    def records(self) -> list[dict]:
        return [asdict(r) for r in self.rows]

    def psnr_by_kind(self) -> dict[str, float]:
        return {r.kind: r.psnr for r in self.rows}


def ablation_run(train_set: WindowDataset, test_set: WindowDataset, model_config: ModelConfig,
                 train_config: TrainConfig, out_dir: str | os.PathLike | None = None,
                 kinds: Sequence[str] = MODEL_KINDS) -> AblationTable:
    """Train and evaluate each ablation row with the same data, seed and iteration budget."""
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    for kind in kinds:
        cfg = replace(model_config, kind=kind)
        result = train(cfg, train_config, train_set, out_dir=None if out is None else out / kind)
        report = evaluate(result.model, test_set)
        arch, inputs = ABLATION_ROWS[kind]
        rows.append(AblationRow(kind=kind, architecture=arch, inputs=inputs, psnr=report.total.psnr,
                                ssim=report.total.ssim, params=count_parameters(cfg),
                                final_loss=float(np.mean(result.losses[-50:]))))
    table = AblationTable(rows)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.txt").write_text(table.format_table() + "\n")
        with open(out / "ablation.jsonl", "w") as fh:
            for rec in table.records():
                fh.write(json.dumps(rec) + "\n")
    return table
