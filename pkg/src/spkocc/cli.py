"""Command-line entry point: ``spkocc {simulate,train,eval,infer,inspect,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error, 4 training diverged.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import CONFIG, DatasetConfig, load_config, load_split, write_dataset
from .dataset_io import ContainerError, read_sample
from .evaluate import ablation_run, evaluate, predict
from .nets.model import CheckpointError, ModelConfig, load_checkpoint
from .scenes import SceneConfigError
from .spikes import DEFAULT_W_AUX, BoundsError, accumulate_window, split_windows
from .train import TrainConfig, TrainingDiverged, WindowDataset, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

log = logging.getLogger("spkocc")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _build(cls, section: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"unknown {what} field(s): {', '.join(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}") from exc


def _run_config(path: str | None, seed: int | None) -> tuple[ModelConfig, TrainConfig]:
    """A run config is ``{"model": {...}, "train": {...}}``; both sections are optional."""
    data = _read_json(path)
    extra = sorted(set(data) - {"model", "train"})
    if extra:
        raise ConfigError(f"unknown config section(s): {', '.join(extra)}")
    model = _build(ModelConfig, data.get("model", {}), "model")
    tcfg = _build(TrainConfig, data.get("train", {}), "train")
    if seed is not None:
        tcfg = replace(tcfg, seed=seed)
    return model, tcfg


def _save_config(out: Path, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_split(data: str, split: str, bins: int | None = None) -> WindowDataset:
    if not (Path(data) / CONFIG).exists():
        raise DataError(f"{data} is not a dataset directory (missing {CONFIG})")
    try:
        return load_split(data, split, bins=bins)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc


# -- subcommands ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _read_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        config = DatasetConfig.from_dict(cfg)
    except SceneConfigError as exc:
        raise ConfigError(f"invalid dataset config: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    per_class: dict[str, int] = {}

    def progress(sid, sample):
        per_class[sample.scene.pattern] = per_class.get(sample.scene.pattern, 0) + 1
        log.info("wrote %s", sid)

    manifest = write_dataset(config, out, progress=progress)
    print(f"wrote {config.count} samples to {out} ({len(manifest.train)} train / {len(manifest.test)} test)")
    for name, n in per_class.items():
        print(f"  {name}: {n}")
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = _run_config(args.config, args.seed)
    out = Path(args.out)
    _save_config(out, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": str(args.data)})
    train_set = _load_split(args.data, "train", bins=model_cfg.bins)
    val_set = _load_split(args.data, "test", bins=model_cfg.bins) if train_cfg.val_every else None
    result = train(model_cfg, train_cfg, train_set, val_dataset=val_set, out_dir=out)
    print(f"final loss {result.losses[-1]:.5f}; checkpoint {out / 'checkpoint_final.pt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_split(args.data, args.split, bins=model.config.bins)
    report = evaluate(model, dataset)
    print(report.format_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.jsonl", "w") as fh:
            for rec in report.records():
                fh.write(json.dumps(rec) + "\n")
    return EXIT_OK


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _default_w_aux(sample_path: Path) -> int:
    cfg_path = sample_path.parent / CONFIG
    return load_config(sample_path.parent).w_aux if cfg_path.exists() else DEFAULT_W_AUX


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    path = Path(args.sample)
    sample = read_sample(path)
    w_aux = args.w_aux or _default_w_aux(path)
    ds = WindowDataset.from_samples([sample], w_aux=w_aux, bins=model.config.bins, ids=[path.stem])
    pred = predict(model, ds, 0)
    acc = accumulate_window(split_windows(sample.stream, w_aux).s_center)
    acc = acc / acc.max() if acc.max() > 0 else acc
    panels = [acc]
    panels += [pred[k] for k in ("i_center", "i_minus", "i_plus") if k in pred]
    panels.append(pred["i_hat"])
    if sample.ground_truth is not None:
        panels.append(sample.ground_truth)
    h = panels[0].shape[0]
    gap = np.full((h, 2), 255, dtype=np.uint8)
    row = [_to_uint8(panels[0])]
    for p in panels[1:]:
        row += [gap, _to_uint8(p)]
    out = Path(args.out)
    if out.suffix.lower() != ".png":
        out = out / f"{path.stem}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.concatenate(row, axis=1)).save(out)
    np.save(out.with_suffix(".npy"), pred["i_hat"])
    print(f"wrote {out} ({len(panels)} panels)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.sample)
    sample = read_sample(path)
    s = sample.stream
    w_aux = args.w_aux or _default_w_aux(path)
    print(f"H={s.height} W={s.width} T={s.num_steps}")
    print(f"mean firing rate {float(s.data.mean()):.6f}")
    split = split_windows(s, w_aux)
    for name, part in (("S_-", split.s_minus), ("S_c", split.s_center), ("S_+", split.s_plus)):
        print(f"{name}: steps {part.num_steps} spikes {int(part.data.sum(dtype=np.int64))}")
    print(f"ground truth: {'yes' if sample.ground_truth is not None else 'no'}")
    if sample.scene is not None:
        print(f"occluder: {sample.scene.pattern}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = _run_config(args.config, args.seed)
    out = Path(args.out)
    _save_config(out, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": str(args.data)})
    train_set = _load_split(args.data, "train", bins=model_cfg.bins)
    test_set = _load_split(args.data, "test", bins=model_cfg.bins)
    table = ablation_run(train_set, test_set, model_cfg, train_cfg, out_dir=out)
    print(table.format_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spkocc", description="Spike-camera occlusion removal toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize an occlusion dataset")
    p.add_argument("--config", help="JSON dataset config (count, height, width, duration, w_aux, ...)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a dataset's train split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help='JSON run config {"model": {...}, "train": {...}}')
    p.add_argument("--out", required=True, help="run directory for checkpoints and loss curve")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class PSNR/SSIM of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", help="directory for eval.jsonl")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="reconstruct one sample and write a PNG panel")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True, help=".socc file")
    p.add_argument("--out", required=True, help="PNG path or output directory")
    p.add_argument("--w-aux", type=int, help="auxiliary window length (default: dataset config or 300)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect", help="print stream statistics of a .socc file")
    p.add_argument("--sample", required=True)
    p.add_argument("--w-aux", type=int)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("ablate", help="train and evaluate the four ablation rows")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help='JSON run config {"model": {...}, "train": {...}}')
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ContainerError, CheckpointError, BoundsError, FileNotFoundError) as exc:
        print(f"data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
