"""Loss, cosine-scheduled AdamW training loop and the in-memory window dataset."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .dataset_io import SpatialTransform, random_transform
from .nets.model import ModelConfig, build_model, save_checkpoint
from .scenes import Sample
from .spikes import DEFAULT_BINS, DEFAULT_W_AUX, bin_counts, split_windows

log = logging.getLogger(__name__)

DETERMINISM_ENV = "SPKOCC_DETERMINISTIC"


class TrainingDiverged(RuntimeError):
    pass


def total_loss(i_hat, i_minus, i_plus, i_center, gt, lam: float = 0.4):
    """Mean-L1 of the final prediction plus ``lam`` times the three branch L1 terms."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    for name, t in (("i_hat", i_hat), ("i_minus", i_minus), ("i_plus", i_plus), ("i_center", i_center)):
        if t.shape != gt.shape:
            raise ValueError(f"{name} shape {tuple(t.shape)} does not match ground truth {tuple(gt.shape)}")
    aux = F.l1_loss(i_minus, gt) + F.l1_loss(i_plus, gt) + F.l1_loss(i_center, gt)
    return F.l1_loss(i_hat, gt) + lam * aux


def model_loss(out: dict[str, torch.Tensor], gt: torch.Tensor, lam: float, kind: str = "spkoccnet"):
    """Training objective for one model kind.

    The two-stage model adds ``lam``-weighted branch terms; the ablation baselines, including
    the branch-average row, are supervised on their final prediction only.
    """
    if kind == "spkoccnet":
        return total_loss(out["i_hat"], out["i_minus"], out["i_plus"], out["i_center"], gt, lam)
    return F.l1_loss(out["i_hat"], gt)


def cosine_lr(step: int, total: int, lr0: float) -> float:
    """``lr0 * (1 + cos(pi * step / total)) / 2``."""
    return lr0 * (1.0 + math.cos(math.pi * step / total)) / 2.0


def determinism_enabled() -> bool:
    return os.environ.get(DETERMINISM_ENV, "1") not in ("0", "false", "no")


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    if determinism_enabled():
        torch.use_deterministic_algorithms(True)


# -- data -----------------------------------------------------------------------------

@dataclass
class WindowRecord:
    sample_id: str
    counts: np.ndarray  # (3, bins, H, W) uint16, windows ordered minus, center, plus
    lengths: np.ndarray  # (3, bins) segment lengths
    ground_truth: np.ndarray | None
    pattern: str | None


class WindowDataset:
    """Samples pre-binned into per-window spike counts.

    Spatial augmentation commutes with temporal binning, so transforms are applied
    to the cached counts rather than the raw stream.
    """

    def __init__(self, records: list[WindowRecord], w_aux: int, bins: int):
        self.records = records
        self.w_aux = w_aux
        self.bins = bins

    @classmethod
    def from_samples(cls, samples: Iterable[Sample], w_aux: int = DEFAULT_W_AUX, bins: int = DEFAULT_BINS,
                     ids: Sequence[str] | None = None) -> "WindowDataset":
        records = []
        for i, s in enumerate(samples):
            split = split_windows(s.stream, w_aux)
            counts, lengths = zip(*(bin_counts(w, bins) for w in (split.s_minus, split.s_center, split.s_plus)))
            pattern = s.scene.pattern if s.scene is not None else s.meta.get("pattern")
            records.append(WindowRecord(
                sample_id=ids[i] if ids is not None else s.meta.get("id", f"sample_{i:04d}"),
                counts=np.stack(counts), lengths=np.stack(lengths),
                ground_truth=None if s.ground_truth is None else s.ground_truth.astype(np.float32),
                pattern=pattern,
            ))
        return cls(records, w_aux, bins)

    def __len__(self):
        return len(self.records)

    @property
    def spatial_size(self) -> tuple[int, int]:
        return self.records[0].counts.shape[-2:]

    def voxels(self, index: int, transform: SpatialTransform | None = None) -> tuple[np.ndarray, np.ndarray | None]:
        rec = self.records[index]
        counts = rec.counts if transform is None else transform(rec.counts)
        vox = (counts / rec.lengths[:, :, None, None]).astype(np.float32)
        gt = rec.ground_truth
        if gt is not None and transform is not None:
            gt = transform(gt)
        return vox, gt

    def batch(self, indices: Sequence[int], transforms: Sequence[SpatialTransform | None] | None = None):
        """Tensors ``(v_minus, v_center, v_plus, gt)`` each shaped (N, C, H, W)."""
        if transforms is None:
            transforms = [None] * len(indices)
        vox, gts = zip(*(self.voxels(i, t) for i, t in zip(indices, transforms)))
        v = torch.from_numpy(np.stack(vox))
        gt = None if gts[0] is None else torch.from_numpy(np.stack(gts))[:, None]
        return v[:, 0], v[:, 1], v[:, 2], gt


# -- training -------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 8
    lr: float = 2e-4
    iterations: int = 20000
    schedule: str = "cosine"
    seed: int = 0
    crop: int = 128
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    lam: float = 0.4
    log_every: int = 100
    val_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        for name in ("batch_size", "iterations", "crop"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}; only 'cosine' is available")
        if self.lam < 0 or self.weight_decay < 0:
            raise ValueError("lam and weight_decay must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainResult:
    model: torch.nn.Module
    losses: list[float]
    lrs: list[float]
    val_psnr: list[tuple[int, float]] = field(default_factory=list)


def sample_transform(dataset: WindowDataset, cfg: TrainConfig, iteration: int, slot: int) -> SpatialTransform:
    # per-sample generator keyed on (seed, iteration, slot): independent of loader scheduling
    rng = np.random.default_rng([cfg.seed, iteration, slot])
    h, w = dataset.spatial_size
    crop = min(cfg.crop, h, w)
    return random_transform(h, w, rng, crop=crop)


def train(model_config: ModelConfig, cfg: TrainConfig, dataset: WindowDataset,
          val_dataset: WindowDataset | None = None, out_dir: str | os.PathLike | None = None,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    if model_config.bins != dataset.bins:
        raise ValueError(f"model expects {model_config.bins} bins, dataset has {dataset.bins}")
    seed_everything(cfg.seed)
    model = build_model(model_config)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
                            weight_decay=cfg.weight_decay)
    pick = np.random.default_rng([cfg.seed, 0x5EED])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    losses, lrs, val_hist = [], [], []
    for it in range(cfg.iterations):
        lr = cosine_lr(it, cfg.iterations, cfg.lr)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = pick.integers(0, len(dataset), size=cfg.batch_size)
        transforms = [sample_transform(dataset, cfg, it, j) for j in range(cfg.batch_size)]
        v_minus, v_center, v_plus, gt = dataset.batch(idx, transforms)
        loss = model_loss(model(v_minus, v_center, v_plus), gt, cfg.lam, model_config.kind)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at iteration {it} (lr={lr:.3g})")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(value)
        lrs.append(lr)
        if callback is not None:
            callback(it, value)
        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            log.info("iter %d/%d loss %.5f lr %.3g", it, cfg.iterations, value, lr)
        if val_dataset is not None and cfg.val_every and (it + 1) % cfg.val_every == 0:
            from .evaluate import mean_psnr
            score = mean_psnr(model, val_dataset)
            val_hist.append((it + 1, score))
            log.info("iter %d validation PSNR %.3f dB", it + 1, score)
            model.train()
        if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, out / f"checkpoint_{it + 1:06d}.pt", extra={"iteration": it + 1})

    model.eval()
    if out is not None:
        save_checkpoint(model, out / "checkpoint_final.pt",
                        extra={"iteration": cfg.iterations, "train_config": cfg.to_dict()})
        with open(out / "loss_curve.tsv", "w") as fh:
            fh.write("iteration\tloss\tlr\n")
            for i, (l, r) in enumerate(zip(losses, lrs)):
                fh.write(f"{i}\t{l:.8f}\t{r:.8e}\n")
    return TrainResult(model=model, losses=losses, lrs=lrs, val_psnr=val_hist)
