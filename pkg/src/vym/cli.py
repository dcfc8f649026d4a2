"""Command-line pipeline: synth, preprocess, train, cv, predict, report.

Every run embeds its fully resolved configuration and seed in what it
writes, so reports are replayable. Exit codes are stable for scripting:
0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .dataset import ManifestError, VIEW_ORDER, load_manifest
from .imageops import PreprocessConfig, RgbImage, load_image, save_image
from .metrics import paired_fold_comparison
from .model import ModelConfig, build_model, stl_variant
from .synth import SynthConfig, generate_dataset
from .training import (CvReport, DivergenceError, TrainConfig, cross_validate,
                       predict_batch, prepare_examples, split_validation, train_one)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

VIEW_LABELS = {
    ("E", 1): "#E1 = east side images from camera 1",
    ("E", 2): "#E2 = east side images from camera 2",
    ("W", 1): "#W1 = west side images from camera 1",
    ("W", 2): "#W2 = west side images from camera 2",
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that for data errors
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "mtl"
    k: int = 6

    def to_json_obj(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(old, text: str):
    """Parse a --set value using the default's type."""
    if isinstance(old, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    if isinstance(old, int):
        return int(text)
    if isinstance(old, float):
        return float(text)
    if isinstance(old, tuple):
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        elem = old[0] if old else 0
        return tuple(_coerce(elem, p.strip()) for p in parts)
    if old is None or isinstance(old, str):
        return text
    raise UsageError(f"cannot override a value of type {type(old).__name__}")


def _apply_overrides(resolved: dict, sets: list[str]) -> dict:
    for item in sets:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node = resolved
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise UsageError(f"unknown config section {path!r}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise UsageError(f"unknown config key {path!r}")
        node[leaf] = _coerce(node[leaf], value)
    return resolved


def _dataclass_from(cls, obj: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in obj:
            v = obj[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


def resolve_run_config(config_path: str | None, sets: list[str],
                       seed_flag: int | None, mode_flag: str | None,
                       k_flag: int | None) -> RunConfig:
    """defaults <- JSON config file <- --set overrides <- dedicated flags."""
    resolved = dataclasses.asdict(RunConfig())
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_obj = json.load(fh)
        for section, values in file_obj.items():
            if section not in resolved:
                raise UsageError(f"unknown config section {section!r}")
            if isinstance(resolved[section], dict):
                for key, v in values.items():
                    if key not in resolved[section]:
                        raise UsageError(f"unknown config key {section}.{key}")
                    resolved[section][key] = v
            else:
                resolved[section] = values
    _apply_overrides(resolved, sets)

    seed = seed_flag
    if seed is None:
        env = os.environ.get("VYM_SEED")
        seed = int(env) if env else resolved["train"]["seed"]
    resolved["train"]["seed"] = seed
    resolved["synth"]["seed"] = resolved["synth"]["seed"] or seed
    if mode_flag:
        resolved["mode"] = mode_flag
    if k_flag:
        resolved["k"] = k_flag

    return RunConfig(
        synth=_dataclass_from(SynthConfig, resolved["synth"]),
        preprocess=_dataclass_from(PreprocessConfig, resolved["preprocess"]),
        model=_dataclass_from(ModelConfig, resolved["model"]),
        train=_dataclass_from(TrainConfig, resolved["train"]),
        mode=resolved["mode"],
        k=resolved["k"],
    )


def parse_mode(mode: str):
    """-> (model-config transform tag, view or None)."""
    if mode == "mtl":
        return "mtl", None
    if mode == "stl":
        return "stl", None
    if mode.startswith("single-view:"):
        code = mode.split(":", 1)[1]
        if len(code) == 2 and code[0] in "EW" and code[1] in "12":
            return "stl", (code[0], int(code[1]))
        raise UsageError(f"single-view mode must be one of E1,E2,W1,W2, got {code!r}")
    raise UsageError(f"unknown mode {mode!r} (expected mtl, stl or single-view:<side><camera>)")


def _model_config_for_mode(cfg: RunConfig) -> ModelConfig:
    tag, _ = parse_mode(cfg.mode)
    return cfg.model if tag == "mtl" else stl_variant(cfg.model)


def _load_reference(cfg: RunConfig, manifest_path: Path) -> RgbImage:
    ref_path = cfg.preprocess.reference_image or str(manifest_path.parent / "reference.png")
    if not Path(ref_path).is_file():
        raise ManifestError(f"histogram reference image not found: {ref_path}")
    return load_image(ref_path)


def _load_prepared(cfg: RunConfig, manifest: str, cache_path: str | None):
    manifest_path = Path(manifest)
    examples, canvas = load_manifest(manifest_path)
    reference = _load_reference(cfg, manifest_path)
    cache: dict[str, np.ndarray] = {}
    if cache_path and Path(cache_path).is_file():
        with np.load(cache_path) as npz:
            cache = {k: npz[k] for k in npz.files}
    prepared = prepare_examples(examples, canvas, cfg.preprocess, reference, cache)
    if cache_path and not Path(cache_path).is_file():
        Path(cache_path).parent.mkdir(parents=True, exist_ok=True)
        with open(cache_path, "wb") as fh:
            np.savez(fh, **cache)
    return prepared, canvas, reference


def _report_obj(cfg: RunConfig, report: CvReport, mode: str) -> dict:
    return {
        "mode": mode,
        "run_config": cfg.to_json_obj(),
        "report": report.to_json_obj(),
    }


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_report_table(obj: dict, out=sys.stdout) -> None:
    mode = obj["mode"]
    rep = obj["report"]
    print(f"mode: {mode}", file=out)
    _, view = parse_mode(mode)
    if view is not None:
        print(VIEW_LABELS[view], file=out)
    print(f"{'fold':>4} {'n':>4} {'MAE(g)':>10} {'acc':>7} {'recon MSE':>10} {'epochs':>7}", file=out)
    for f in rep["folds"]:
        rmse = f"{f['recon_mse']:.4f}" if f["recon_mse"] is not None else "-"
        print(f"{f['fold']:>4} {f['n_test']:>4} {f['mae_g']:>10.2f} "
              f"{f['mean_accuracy']:>7.4f} {rmse:>10} {f['epochs_trained']:>7}", file=out)
    agg_rmse = rep["aggregate_recon_mse"]
    print(f"aggregate MAE {rep['aggregate_mae_g']:.2f} g "
          f"(95% CI = {rep['ci95_mae_g']:.2f}), mean accuracy {rep['aggregate_accuracy']:.4f}"
          + (f", recon MSE {agg_rmse:.4f}" if agg_rmse is not None else ""), file=out)
    if rep.get("paired_comparison"):
        pc = rep["paired_comparison"]
        print(f"paired vs {pc['other_mode']} ({pc['other_run']}): "
              f"confidence this mode's MAE is lower = {pc['confidence_lower_mae']:.4f}", file=out)


def _scan_for_pair(out_dir: Path, report: CvReport, mode: str) -> dict | None:
    """Look for a sibling run with the same seed and fold plan but another mode."""
    plan_json = report.fold_plan.to_json()
    candidates = []
    for sibling in sorted(out_dir.parent.glob("*/report.json")):
        if sibling.parent == out_dir:
            continue
        try:
            with open(sibling, "r", encoding="utf-8") as fh:
                other = json.load(fh)
        except (OSError, json.JSONDecodeError):
            continue
        orep = other.get("report", {})
        if other.get("mode") == mode or orep.get("seed") != report.seed:
            continue
        if json.dumps(orep.get("fold_plan"), sort_keys=True) != plan_json:
            continue
        candidates.append((sibling.parent.name, other))
    if not candidates:
        return None
    name, other = candidates[0]
    other_maes = [f["mae_g"] for f in other["report"]["folds"]]
    return {
        "other_mode": other["mode"],
        "other_run": name,
        "other_aggregate_mae_g": other["report"]["aggregate_mae_g"],
        "confidence_lower_mae": paired_fold_comparison(report.fold_maes(), other_maes),
    }


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    cfg = resolve_run_config(args.config, args.set, args.seed, None, None)
    synth_cfg = dataclasses.replace(cfg.synth, seed=cfg.train.seed if args.seed is not None else cfg.synth.seed)
    manifest = generate_dataset(args.n, synth_cfg, args.out)
    print(f"wrote {args.n} examples to {manifest}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = resolve_run_config(args.config, args.set, args.seed, None, None)
    prepared, canvas, _ = _load_prepared(cfg, args.manifest, args.out)
    if not Path(args.out).is_file():
        cache = {f"{ex.plant}{ex.cordon}{s}{c}": ex.tensors[(s, c)]
                 for ex in prepared for (s, c) in VIEW_ORDER}
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "wb") as fh:
            np.savez(fh, **cache)
    print(f"cached {4 * len(prepared)} tensors (canvas {canvas[0]}x{canvas[1]}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_run_config(args.config, args.set, args.seed, args.mode, None)
    _, view = parse_mode(cfg.mode)
    prepared, canvas, _ = _load_prepared(cfg, args.manifest, args.cache)
    train, val = split_validation(prepared, cfg.train.validation_fraction, cfg.train.seed)
    model = build_model(_model_config_for_mode(cfg), cfg.train.seed)
    record = train_one(model, train, val, cfg.train, view=view)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint.save_params(out_dir / "checkpoint.npz", model.parameters())
    sidecar = {
        "run_config": cfg.to_json_obj(),
        "mode": cfg.mode,
        "canvas": list(canvas),
        "reference_image": cfg.preprocess.reference_image
                           or str(Path(args.manifest).parent / "reference.png"),
    }
    _write_json(out_dir / "checkpoint.json", sidecar)
    print(f"trained {record.epochs_trained} epochs, best validation loss "
          f"{record.best_val_loss:.6f}; checkpoint in {out_dir}")
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = resolve_run_config(args.config, args.set, args.seed, args.mode, args.k)
    _, view = parse_mode(cfg.mode)
    prepared, _, _ = _load_prepared(cfg, args.manifest, args.cache)
    model_cfg = _model_config_for_mode(cfg)
    out_dir = Path(args.out if args.out else f"runs/{cfg.mode.replace(':', '-')}")

    dump_dir = out_dir if args.dump_recons else None

    def on_fold(fold, model, test):
        if dump_dir is not None and test:
            _dump_recon_grid(model, test[0], view, dump_dir / f"recons_fold{fold}.png")

    report = cross_validate(prepared, lambda seed: build_model(model_cfg, seed),
                            cfg.k, cfg.train, view=view, on_fold=on_fold)
    report.paired_comparison = _scan_for_pair(out_dir, report, cfg.mode)
    obj = _report_obj(cfg, report, cfg.mode)
    obj["report"]["paired_comparison"] = report.paired_comparison
    _write_json(out_dir / "report.json", obj)
    _print_report_table(obj)
    print(f"report written to {out_dir / 'report.json'}")
    return EXIT_OK


def _dump_recon_grid(model, example, view, path: Path) -> None:
    """Original row over reconstructed row, four views wide."""
    from .training import assemble_inputs
    inputs = assemble_inputs([example], view)
    out = model.forward(inputs, with_reconstructions=True)
    if out.reconstructions is None:
        return
    panels_top, panels_bot = [], []
    for x, r in zip(inputs, out.reconstructions):
        panels_top.append(np.clip(x.data[0].transpose(1, 2, 0) * 255, 0, 255).astype(np.uint8))
        panels_bot.append(np.clip(r.data[0].transpose(1, 2, 0) * 255, 0, 255).astype(np.uint8))
    grid = np.vstack([np.hstack(panels_top), np.hstack(panels_bot)])
    path.parent.mkdir(parents=True, exist_ok=True)
    save_image(RgbImage(grid), path)


def cmd_predict(args) -> int:
    ckpt_dir = Path(args.checkpoint)
    sidecar_path = ckpt_dir / "checkpoint.json"
    if not sidecar_path.is_file():
        raise ManifestError(f"checkpoint sidecar not found: {sidecar_path}")
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    rc = sidecar["run_config"]
    model_cfg = _dataclass_from(ModelConfig, rc["model"])
    pre_cfg = _dataclass_from(PreprocessConfig, rc["preprocess"])
    mode = sidecar["mode"]
    _, view = parse_mode(mode)
    if mode != "mtl":
        model_cfg = stl_variant(model_cfg)
    canvas = tuple(sidecar["canvas"])
    reference = load_image(sidecar["reference_image"])

    model = build_model(model_cfg, rc["train"]["seed"])
    values = checkpoint.load_params(ckpt_dir / "checkpoint.npz")
    checkpoint.restore_into(model.parameters(), values)

    from .imageops import preprocess_image
    from .tensor import Tensor
    tensors = {}
    for (side, cam), img_path in zip(VIEW_ORDER, args.images):
        tensors[(side, cam)] = preprocess_image(load_image(img_path), reference, canvas, pre_cfg)
    if view is not None:
        inputs = [Tensor(tensors[view][None]) for _ in VIEW_ORDER]
    else:
        inputs = [Tensor(tensors[v][None]) for v in VIEW_ORDER]
    out = model.forward(inputs, with_reconstructions=False)
    grams = max(0.0, float(out.yield_scaled.data[0])) * model_cfg.target_scale_g
    print(f"{grams:.2f}")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    _print_report_table(obj)
    if args.png:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        preds = obj["report"]["predictions"]
        truth = [p["weight_g"] for p in preds]
        pred = [p["predicted_g"] for p in preds]
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.scatter(truth, pred, s=12, alpha=0.7)
        lim = max(max(truth, default=1), max(pred, default=1)) * 1.05
        ax.plot([0, lim], [0, lim], "k--", lw=1)
        ax.set_xlabel("true weight (g)")
        ax.set_ylabel("predicted weight (g)")
        ax.set_title(f"{obj['mode']}: MAE {obj['report']['aggregate_mae_g']:.1f} g")
        fig.tight_layout()
        fig.savefig(args.png, dpi=110)
        print(f"scatter written to {args.png}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="vym", description="multi-view grape yield estimation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a single config value")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (falls back to VYM_SEED, then config)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, required=True, help="number of cordon examples")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="preprocess a dataset into a tensor cache")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="cache file (.npz)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", default=None, help="mtl | stl | single-view:<side><camera>")
    p.add_argument("--cache", default=None, help="tensor cache file")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", default=None, help="run directory (default runs/<mode>)")
    p.add_argument("--dump-recons", action="store_true",
                   help="write original-vs-reconstruction grids per fold")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="predict grams for one cordon's four images")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("images", nargs=4, metavar="IMAGE",
                   help="four images in (E,1),(E,2),(W,1),(W,2) order")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="re-render a report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--png", default=None, help="also write a prediction scatter PNG")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ManifestError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
