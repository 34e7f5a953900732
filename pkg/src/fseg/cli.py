"""Single command-line entry point: `fseg <subcommand> --config <path>
[--out <dir>] [--deterministic] [--seed <u64>]`.

Subcommands: phantom, train, eval, infer, aliasing-demo, ablate, flops.
Every run validates its JSON config against the published schema (unknown
keys rejected) and writes the fully-resolved config next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from .errors import ConfigError, FsegError
from .losses import ConfusionCounts, dice as dice_metric, iou as iou_metric, write_metrics_csv
from .network import FsegConfig, build, flops_estimate, load_checkpoint, preset_config, save_checkpoint
from .phantom import (
    AugmentConfig,
    PhantomSpec,
    Volume,
    clip_and_map,
    generate_phantom,
    load_volume,
    save_volume,
    split,
)
from .spectral import circular_vs_linear_demo
from .train import SlidingWindowSpec, TrainConfig, sliding_window_infer, train

log = logging.getLogger(__name__)

_SCHEMA_PATH = os.path.join(os.path.dirname(__file__), "config_schema.json")

# Published reference numbers for the ablation and efficiency reports;
# attached for comparison, never asserted.
ABLATION_CELLS = [
    ("skip", "dwconv7", "none", 0.8365),
    ("skip", "fourier", "none", 0.8405),
    ("skip", "fourier", "padding", 0.8427),
    ("fusion", "dwconv7", "none", 0.8401),
    ("fusion", "fourier", "none", 0.8435),
    ("fusion", "fourier", "padding", 0.8437),
]
REFERENCE_EFFICIENCY = {
    "fseg-s": {"gflops": 40.58, "params_m": 27.14},
    "fseg-m": {"gflops": 148.17, "params_m": 41.60},
    "fseg-l": {"gflops": 574.65, "params_m": 80.24},
}


def load_config(path: str) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    with open(_SCHEMA_PATH) as f:
        schema = json.load(f)
    if jsonschema is None:
        raise ConfigError("jsonschema is required to validate run configs")
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config {path} invalid: {e.message} at {list(e.absolute_path)}") from e
    return cfg


def _model_config(section: dict) -> FsegConfig:
    section = dict(section or {})
    preset = section.pop("preset", None)
    if preset:
        return preset_config(preset, **section)
    return FsegConfig(**section)


def _train_config(cfg: dict) -> TrainConfig:
    kw = dict(cfg.get("train") or {})
    if "betas" in kw:
        kw["betas"] = tuple(kw["betas"])
    return TrainConfig(seed=cfg.get("seed", 0), deterministic=cfg.get("deterministic", False), **kw)


def _write_snapshot(cfg: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)


def write_pgm(path: str, img: np.ndarray):
    """8-bit binary PGM of a 2D array, min/max normalized."""
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    b = ((img - lo) * scale).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{b.shape[1]} {b.shape[0]}\n255\n".encode())
        f.write(b.tobytes())


def _volume_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=base, spawn_key=(index,)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_phantom(cfg: dict, out_dir: str) -> int:
    data = cfg.get("data") or {}
    n = data.get("n_volumes", 20)
    base_seed = cfg.get("seed", 0)
    pspec = dict(data.get("phantom") or {})
    if "radius_range" in pspec:
        pspec["radius_range"] = tuple(pspec["radius_range"])
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for i in range(n):
        spec = PhantomSpec(seed=_volume_seed(base_seed, i), **pspec)
        vol, label = generate_phantom(spec)
        vid = f"phantom_{i:03d}"
        save_volume(os.path.join(out_dir, vid + "_img"), vol)
        save_volume(os.path.join(out_dir, vid + "_lab"), Volume(label, kind="label"))
        manifest.append({"id": vid, "image": vid + "_img", "label": vid + "_lab"})
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    splits = split([m["id"] for m in manifest], seed=data.get("split_seed", base_seed))
    with open(os.path.join(out_dir, "split.json"), "w") as f:
        json.dump(splits, f, indent=1, sort_keys=True)
    _write_snapshot(cfg, out_dir)
    print(f"wrote {n} phantom pairs to {out_dir} "
          f"(split {len(splits['train'])}/{len(splits['val'])}/{len(splits['test'])})")
    return 0


def _load_dataset(data_dir: str):
    mpath = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(mpath):
        raise FsegError(f"dataset manifest not found: {mpath}")
    with open(mpath) as f:
        manifest = json.load(f)
    with open(os.path.join(data_dir, "split.json")) as f:
        splits = json.load(f)
    volumes = {}
    for m in manifest:
        img = load_volume(os.path.join(data_dir, m["image"]))
        lab = load_volume(os.path.join(data_dir, m["label"]))
        volumes[m["id"]] = (img.data, lab.data.astype(np.int64))
    return volumes, splits


def _augment_config(cfg: dict) -> AugmentConfig:
    kw = dict((cfg.get("data") or {}).get("augment") or {})
    for key in ("scale_range", "shift_range"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return AugmentConfig(**kw)


def cmd_train(cfg: dict, out_dir: str, data_dir: str) -> int:
    volumes, splits = _load_dataset(data_dir)
    tcfg = _train_config(cfg)
    aug = _augment_config(cfg)
    train_set = [volumes[i] for i in splits["train"]]
    val_set = [(clip_and_map(img, aug), lab) for img, lab in (volumes[i] for i in splits["val"])]
    size = train_set[0][0].shape
    model = build(_model_config(cfg.get("model")), size, seed=tcfg.seed)
    os.makedirs(out_dir, exist_ok=True)
    _write_snapshot(cfg, out_dir)
    hist = train(
        model, train_set, val_set, tcfg,
        log_path=os.path.join(out_dir, "train_log.csv"),
        checkpoint_path=os.path.join(out_dir, "best"),
        augment_cfg=aug,
    )
    summary = {
        "final_loss": hist["loss"][-1],
        "best_val_dice": hist["best_val_dice"],
        "best_step": hist["best_step"],
        "lambda": tcfg.lam,
        "seed": tcfg.seed,
    }
    with open(os.path.join(out_dir, "final_metrics.json"), "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    print(f"trained {tcfg.max_steps} steps; best val Dice {hist['best_val_dice']:.4f} "
          f"at step {hist['best_step']}")
    return 0


def _eval_split(model, volumes, ids, aug, window, overlap):
    rows = []
    num_classes = model.config.num_classes
    spec = SlidingWindowSpec(window=window, overlap=overlap)
    for vid in ids:
        img, lab = volumes[vid]
        pred, _ = sliding_window_infer(model, clip_and_map(img, aug), spec)
        c = ConfusionCounts.from_labels(pred, lab, num_classes)
        for k in range(1, num_classes):
            rows.append((vid, k, dice_metric(c, k), iou_metric(c, k)))
    return rows


def cmd_eval(cfg: dict, out_dir: str, data_dir: str) -> int:
    ev = cfg.get("eval") or {}
    ck = ev.get("checkpoint")
    if not ck:
        raise ConfigError("eval.checkpoint is required")
    model, _ = load_checkpoint(ck)
    volumes, splits = _load_dataset(data_dir)
    ids = splits[ev.get("split", "test")]
    aug = _augment_config(cfg)
    rows = _eval_split(model, volumes, ids, aug,
                       ev.get("window", model.input_size[0]), ev.get("overlap", 0.25))
    os.makedirs(out_dir, exist_ok=True)
    _write_snapshot(cfg, out_dir)
    path = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(path, rows)
    mean = float(np.mean([r[2] for r in rows])) if rows else float("nan")
    std = float(np.std([r[2] for r in rows])) if rows else float("nan")
    print(f"evaluated {len(ids)} volumes: Dice {mean:.4f} ± {std:.4f} -> {path}")
    return 0


def cmd_infer(cfg: dict, out_dir: str) -> int:
    inf = cfg.get("infer") or {}
    if not inf.get("checkpoint") or not inf.get("volume"):
        raise ConfigError("infer.checkpoint and infer.volume are required")
    model, _ = load_checkpoint(inf["checkpoint"])
    vol = load_volume(inf["volume"])
    aug = _augment_config(cfg)
    spec = SlidingWindowSpec(window=inf.get("window", model.input_size[0]),
                             overlap=inf.get("overlap", 0.25))
    labels, probs = sliding_window_infer(model, clip_and_map(vol.data, aug), spec)
    os.makedirs(out_dir, exist_ok=True)
    _write_snapshot(cfg, out_dir)
    save_volume(os.path.join(out_dir, "prediction"), Volume(labels, vol.spacing, kind="label"))
    save_volume(os.path.join(out_dir, "probability"),
                Volume(probs[min(1, probs.shape[0] - 1)], vol.spacing, kind="image"))
    print(f"wrote prediction and probability volumes to {out_dir}")
    return 0


def cmd_aliasing_demo(cfg: dict, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    _write_snapshot(cfg, out_dir)
    rows = []

    # shipped 1D example
    out1d = circular_vs_linear_demo([1.0, 2.0, 3.0], [1.0, 1.0, 0.0])
    for method in ("linear", "circular", "padded_spectral"):
        for i, v in enumerate(out1d[method]):
            rows.append((method, i, float(v)))

    # 3D demonstration: smooth blob convolved with a box kernel
    g = np.arange(8) - 3.5
    zz, yy, xx = np.meshgrid(g, g, g, indexing="ij")
    image = np.exp(-(zz**2 + yy**2 + xx**2) / 8.0)
    kernel = np.full((3, 3, 3), 1.0 / 27.0)
    out3d = circular_vs_linear_demo(image, kernel)
    lin = out3d["linear"][:8, :8, :8]
    circ = out3d["circular"]
    padded = out3d["padded_spectral"][:8, :8, :8]
    wrap_err = float(np.abs(circ - lin).max())
    interior_err = float(np.abs(padded - lin).max())
    mid = 4
    for name, arr in (
        ("slice_linear", lin), ("slice_circular", circ), ("slice_padded", padded),
        ("diff_circular", np.abs(circ - lin)), ("diff_padded", np.abs(padded - lin)),
    ):
        write_pgm(os.path.join(out_dir, name + ".pgm"), arr[mid])

    with open(os.path.join(out_dir, "aliasing.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "index", "value"])
        for r in rows:
            w.writerow([r[0], r[1], f"{r[2]:.9f}"])
    with open(os.path.join(out_dir, "aliasing_stats.json"), "w") as f:
        json.dump(
            {"wrap_error_unpadded": wrap_err, "interior_error_padded": interior_err,
             "ratio": wrap_err / max(interior_err, 1e-300)},
            f, indent=1, sort_keys=True,
        )
    print(f"unpadded wrap error {wrap_err:.3e} vs padded interior error {interior_err:.3e}")
    return 0


def cmd_ablate(cfg: dict, out_dir: str, data_dir: str) -> int:
    volumes, splits = _load_dataset(data_dir)
    ab = cfg.get("ablation") or {}
    seeds = ab.get("seeds", [0, 1, 2])
    tcfg_base = _train_config(cfg)
    max_steps = ab.get("max_steps", tcfg_base.max_steps)
    aug = _augment_config(cfg)
    train_set = [volumes[i] for i in splits["train"]]
    val_set = [(clip_and_map(img, aug), lab) for img, lab in (volumes[i] for i in splits["val"])]
    size = train_set[0][0].shape
    os.makedirs(out_dir, exist_ok=True)
    _write_snapshot(cfg, out_dir)

    results = []
    for decoder, filt, padding, reference in ABLATION_CELLS:
        dices = []
        for seed in seeds:
            mcfg = _model_config(cfg.get("model"))
            mcfg = FsegConfig(**{**asdict(mcfg), "decoder_kind": decoder, "filter_kind": filt,
                                 "pad_mode": "double" if padding == "padding" else "none"})
            model = build(mcfg, size, seed=seed)
            tcfg = TrainConfig(**{**asdict(tcfg_base), "seed": seed, "max_steps": max_steps})
            cell_dir = os.path.join(out_dir, f"{decoder}_{filt}_{padding}_s{seed}")
            os.makedirs(cell_dir, exist_ok=True)
            train(model, train_set, val_set, tcfg,
                  log_path=os.path.join(cell_dir, "train_log.csv"), augment_cfg=aug)
            rows = _eval_split(model, volumes, splits["test"], aug, size[0], 0.25)
            dices.append(float(np.mean([r[2] for r in rows])))
        results.append((decoder, filt, padding, float(np.mean(dices)), float(np.std(dices)), reference))
        log.info("ablation cell %s/%s/%s: %.4f ± %.4f", decoder, filt, padding,
                 results[-1][3], results[-1][4])

    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["decoder", "filter", "padding", "mean_test_dice", "std_test_dice",
                    "published_dice"])
        for r in results:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.6f}", f"{r[4]:.6f}", f"{r[5]:.4f}"])
    print(f"wrote 6-cell ablation table to {path}")
    return 0


def cmd_flops(cfg: dict, out_dir: str) -> int:
    fl = cfg.get("flops") or {}
    presets = fl.get("presets", ["fseg-s", "fseg-m", "fseg-l"])
    input_size = tuple(fl.get("input_size", (96, 96, 96)))
    os.makedirs(out_dir, exist_ok=True)
    _write_snapshot(cfg, out_dir)
    path = os.path.join(out_dir, "efficiency.csv")
    lines = [f"efficiency report at input size {input_size} "
             "(published columns are reference, not asserted)"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["preset", "input_size", "params_m", "gflops",
                    "published_params_m", "published_gflops", "asserted"])
        for name in presets:
            s = flops_estimate(preset_config(name), input_size)
            ref = REFERENCE_EFFICIENCY.get(name, {})
            w.writerow([
                name, "x".join(map(str, input_size)),
                f"{s.total_params / 1e6:.2f}", f"{s.flops / 1e9:.2f}",
                f"{ref['params_m']:.2f}" if ref else "",
                f"{ref['gflops']:.2f}" if ref else "", "no",
            ])
            lines.append(
                f"{name}: {s.total_params / 1e6:.2f}M params, {s.flops / 1e9:.2f} GFLOPs "
                f"(published reference: {ref.get('params_m', 'n/a')}M / "
                f"{ref.get('gflops', 'n/a')}G — reference, not asserted)"
            )
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fseg", description=__doc__)
    parser.add_argument("command", choices=[
        "phantom", "train", "eval", "infer", "aliasing-demo", "ablate", "flops"])
    parser.add_argument("--config", default=None, help="JSON run configuration")
    parser.add_argument("--out", default="fseg_out", help="output directory")
    parser.add_argument("--data", default=None, help="dataset directory (train/eval/ablate)")
    parser.add_argument("--deterministic", action="store_true")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.deterministic:
            cfg["deterministic"] = True
        cfg.setdefault("seed", 0)
        cfg.setdefault("deterministic", False)
        out = args.out
        data_dir = args.data or (cfg.get("data") or {}).get("dir")
        if args.command == "phantom":
            return cmd_phantom(cfg, out)
        if args.command == "train":
            if not data_dir:
                raise ConfigError("train requires --data or data.dir")
            return cmd_train(cfg, out, data_dir)
        if args.command == "eval":
            if not data_dir:
                raise ConfigError("eval requires --data or data.dir")
            return cmd_eval(cfg, out, data_dir)
        if args.command == "infer":
            return cmd_infer(cfg, out)
        if args.command == "aliasing-demo":
            return cmd_aliasing_demo(cfg, out)
        if args.command == "ablate":
            if not data_dir:
                raise ConfigError("ablate requires --data or data.dir")
            return cmd_ablate(cfg, out, data_dir)
        if args.command == "flops":
            return cmd_flops(cfg, out)
        raise ConfigError(f"unknown command {args.command}")
    except (FsegError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
