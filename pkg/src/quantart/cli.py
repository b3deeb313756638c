"""Command-line entry points: train, stylize, grid, eval, serve.

Exit codes: 0 success, 2 bad arguments or out-of-range parameters,
3 I/O failures (missing files, unreadable datasets), 4 training
divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

CKPT_ENV_VAR = "QUANTART_CKPT"


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Deduplicated, sorted alpha/beta sample points, all in [0, 1]."""

    alphas: tuple
    betas: tuple

    def __post_init__(self):
        for name, values in (("alphas", self.alphas), ("betas", self.betas)):
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(not 0.0 <= v <= 1.0 for v in values):
                raise ValueError(f"{name} values must lie in [0, 1]: "
                                 f"{list(values)}")
        object.__setattr__(self, "alphas", tuple(sorted(set(self.alphas))))
        object.__setattr__(self, "betas", tuple(sorted(set(self.betas))))

    @property
    def tile_count(self) -> int:
        return len(self.alphas) * len(self.betas)


# -- shared helpers -----------------------------------------------------


def _resolve_checkpoint(args) -> str:
    path = getattr(args, "ckpt", None) or os.environ.get(CKPT_ENV_VAR)
    if not path:
        raise CLIError(
            EXIT_USAGE,
            f"no checkpoint given; pass --ckpt or set {CKPT_ENV_VAR}")
    if not os.path.isfile(path):
        raise CLIError(EXIT_IO, f"checkpoint not found: {path}")
    return path


def _load_bundle(args, min_stage: int = 2):
    from quantart.training import ModelBundle

    path = _resolve_checkpoint(args)
    bundle = ModelBundle.load(path)
    if bundle.stage < min_stage:
        raise CLIError(
            EXIT_USAGE,
            f"checkpoint {path} is stage {bundle.stage}; stage "
            f"{min_stage} is required (run train --stage {min_stage})")
    return bundle


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot read {path}: {e}")


def _check_unit_interval(**knobs) -> None:
    for name, value in knobs.items():
        if not np.isfinite(value) or not 0.0 <= value <= 1.0:
            raise CLIError(EXIT_USAGE,
                           f"--{name} must lie in [0, 1], got {value}")


def _parse_float_list(text: str, flag: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise CLIError(EXIT_USAGE, f"{flag} expects numbers, got {text!r}")
    if not values:
        raise CLIError(EXIT_USAGE, f"{flag} must list at least one value")
    return values


# -- train --------------------------------------------------------------


def _build_config(args):
    from quantart.training import TrainConfig

    if args.toy:
        cfg = TrainConfig.toy()
    elif args.config:
        try:
            with open(args.config) as f:
                raw = json.load(f)
        except OSError as e:
            raise CLIError(EXIT_IO, f"cannot read config {args.config}: {e}")
        except json.JSONDecodeError as e:
            raise CLIError(EXIT_USAGE,
                           f"config {args.config} is not valid JSON: {e}")
        cfg = TrainConfig.from_dict(raw)
    else:
        cfg = TrainConfig()
    overrides = {}
    for field in ("seed", "steps", "epochs", "batch_size", "image_size",
                  "learning_rate"):
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _epoch_log(history: list, epochs: int) -> list:
    """Collapse per-step loss records into per-epoch means."""
    if not history:
        return []
    epochs = max(1, min(epochs, len(history)))
    chunk = len(history) // epochs
    log = []
    for e in range(epochs):
        steps = history[e * chunk:(e + 1) * chunk if e < epochs - 1
                        else len(history)]
        entry = {"epoch": e, "steps": len(steps)}
        for group in steps[0]:
            keys = steps[0][group]
            entry[group] = {
                k: float(np.mean([s[group][k] for s in steps]))
                for k in keys}
        log.append(entry)
    return log


def cmd_train(args) -> int:
    from quantart.data import load_dataset
    from quantart.training import ModelBundle, train_stage1, train_stage2

    os.makedirs(args.out, exist_ok=True)
    if args.stage == 1:
        cfg = _build_config(args)
        photos = load_dataset(args.photos, cfg.image_size)
        arts = load_dataset(args.arts, cfg.image_size)
        bundle, history = train_stage1(cfg, photos, arts)
        ckpt_path = os.path.join(args.out, "stage1.qart")
        log_path = os.path.join(args.out, "stage1_losses.json")
    else:
        path = _resolve_checkpoint(args)
        bundle = ModelBundle.load(path)
        if bundle.stage < 1:
            raise CLIError(EXIT_USAGE,
                           f"checkpoint {path} has no completed stage 1")
        cfg = bundle.cfg
        overrides = {f: getattr(args, f) for f in ("seed", "steps", "epochs")
                     if getattr(args, f, None) is not None}
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        photos = load_dataset(args.photos, cfg.image_size)
        arts = load_dataset(args.arts, cfg.image_size)
        bundle, history = train_stage2(cfg, bundle, photos, arts)
        ckpt_path = os.path.join(args.out, "stage2.qart")
        log_path = os.path.join(args.out, "stage2_losses.json")
    bundle.save(ckpt_path)
    with open(log_path, "w") as f:
        json.dump({"stage": args.stage, "config": cfg.to_dict(),
                   "epochs": _epoch_log(history, cfg.epochs)}, f, indent=2)
    print(f"wrote {ckpt_path}")
    print(f"wrote {log_path}")
    return EXIT_OK


# -- stylize ------------------------------------------------------------


def cmd_stylize(args) -> int:
    from quantart.service import stylize_image_bytes

    _check_unit_interval(alpha=args.alpha, beta=args.beta)
    bundle = _load_bundle(args)
    content = _read_bytes(args.content)
    style = _read_bytes(args.style)
    png = stylize_image_bytes(bundle, content, style, args.alpha, args.beta,
                              fuse_outputs=args.fuse_outputs)
    try:
        with open(args.out, "wb") as f:
            f.write(png)
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot write {args.out}: {e}")
    print(f"wrote {args.out}")
    return EXIT_OK


# -- grid ---------------------------------------------------------------


def cmd_grid(args) -> int:
    from quantart.data import decode_image_bytes, save_image
    from quantart.service import stylize_image_bytes

    try:
        spec = GridSpec(_parse_float_list(args.alphas, "--alphas"),
                        _parse_float_list(args.betas, "--betas"))
    except ValueError as e:
        raise CLIError(EXIT_USAGE, str(e))
    bundle = _load_bundle(args)
    content = _read_bytes(args.content)
    style = _read_bytes(args.style)
    os.makedirs(args.out, exist_ok=True)

    tiles = {}
    for beta in spec.betas:
        for alpha in spec.alphas:
            png = stylize_image_bytes(bundle, content, style, alpha, beta)
            tiles[(alpha, beta)] = decode_image_bytes(png)
    tile_h, tile_w = next(iter(tiles.values())).shape[1:]
    mosaic = np.zeros((3, tile_h * len(spec.betas),
                       tile_w * len(spec.alphas)), dtype=np.float32)
    cells = []
    for i, beta in enumerate(spec.betas):
        for j, alpha in enumerate(spec.alphas):
            mosaic[:, i * tile_h:(i + 1) * tile_h,
                   j * tile_w:(j + 1) * tile_w] = tiles[(alpha, beta)]
            cells.append({"row": i, "col": j, "alpha": alpha, "beta": beta})

    mosaic_path = os.path.join(args.out, "grid.png")
    index_path = os.path.join(args.out, "grid.json")
    save_image(mosaic, mosaic_path)
    with open(index_path, "w") as f:
        json.dump({"rows": len(spec.betas), "cols": len(spec.alphas),
                   "tile_height": tile_h, "tile_width": tile_w,
                   "cells": cells}, f, indent=2)
    print(f"wrote {mosaic_path} ({spec.tile_count} tiles)")
    print(f"wrote {index_path}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------


def cmd_eval(args) -> int:
    from quantart.data import load_dataset
    from quantart.fusion import FusionParams, stylize
    from quantart.metrics import (FeatureBackbone, frechet_distance,
                                  gram_loss, metric_report,
                                  moments_from_features, perceptual_distance)
    from quantart.tensor import Tensor, no_grad
    from quantart.training import PAIR_NAMES, evaluate_recon_loss, \
        evaluate_style_loss

    bundle = _load_bundle(args, min_stage=1)
    size = bundle.cfg.image_size
    photos = load_dataset(args.photos, size)[:args.n]
    arts = load_dataset(args.arts, size)[:args.n]
    backbone = FeatureBackbone.from_bundle(bundle)

    reports = []

    def add(metric, value, n):
        reports.append(metric_report(metric, float(value), int(n),
                                     backbone.hash))

    for name in PAIR_NAMES:
        pair = getattr(bundle, name)
        if pair is None:
            continue
        images = photos if name.startswith("photo") else arts
        add(f"recon_l1_{name}", evaluate_recon_loss(pair, images),
            len(images))

    if bundle.stage >= 2:
        n = min(len(photos), len(arts))
        add("style_stats", evaluate_style_loss(bundle, photos, arts), n)
        with no_grad():
            stylized = stylize(bundle, Tensor(photos[:n]), Tensor(arts[:n]),
                               FusionParams(1.0, 1.0)).data
        add("gram", gram_loss(stylized, arts[:n], backbone), n)
        add("perceptual", perceptual_distance(stylized, photos[:n], backbone),
            n)
        embed_dim = backbone.embed(Tensor(arts[:1])).shape[1]
        if n > embed_dim:
            fd = frechet_distance(
                moments_from_features(backbone.embed(Tensor(stylized))),
                moments_from_features(backbone.embed(Tensor(arts[:n]))))
            add("frechet", fd, n)

    out = "\n".join(reports) + "\n"
    if args.out:
        try:
            with open(args.out, "w") as f:
                f.write(out)
        except OSError as e:
            raise CLIError(EXIT_IO, f"cannot write {args.out}: {e}")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(out)
    return EXIT_OK


# -- serve --------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from quantart.service import create_app

    path = _resolve_checkpoint(args)
    app = create_app(checkpoint_path=path,
                     max_concurrency=args.max_concurrency)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot bind {args.host}:{args.port}: {e}")
    return EXIT_OK


# -- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantart",
        description="Vector-quantized style transfer: train, stylize, "
                    "explore the fidelity trade-off, evaluate, serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_ckpt(p):
        p.add_argument("--ckpt", default=None,
                       help=f"checkpoint path (default: ${CKPT_ENV_VAR})")

    t = sub.add_parser("train", help="fit stage 1 or stage 2")
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--photos", required=True, help="photo dataset directory")
    t.add_argument("--arts", required=True, help="art dataset directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", default=None, help="JSON config file")
    t.add_argument("--toy", action="store_true",
                   help="small fast preset for smoke tests")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--image-size", dest="image_size", type=int, default=None)
    t.add_argument("--learning-rate", dest="learning_rate", type=float,
                   default=None)
    add_ckpt(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("stylize", help="stylize one content/style pair")
    s.add_argument("--content", required=True)
    s.add_argument("--style", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--fuse-outputs", dest="fuse_outputs",
                   action="store_true",
                   help="blend decoded images instead of decoder weights")
    add_ckpt(s)
    s.set_defaults(func=cmd_stylize)

    g = sub.add_parser("grid", help="render an alpha x beta mosaic")
    g.add_argument("--content", required=True)
    g.add_argument("--style", required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--alphas", default="0,0.5,1")
    g.add_argument("--betas", default="0,0.5,1")
    add_ckpt(g)
    g.set_defaults(func=cmd_grid)

    e = sub.add_parser("eval", help="report metrics over datasets")
    e.add_argument("--photos", required=True)
    e.add_argument("--arts", required=True)
    e.add_argument("--out", default=None, help="JSON-lines output path")
    e.add_argument("--n", type=int, default=64, help="max images per side")
    add_ckpt(e)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("serve", help="run the HTTP inference service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    v.add_argument("--max-concurrency", dest="max_concurrency", type=int,
                   default=4)
    add_ckpt(v)
    v.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except CLIError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FloatingPointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
