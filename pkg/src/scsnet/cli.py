"""Command-line surface: data generation, training, inference, evaluation,
and gradient verification.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The environment variable SCS_SEED overrides the configured seed for the
config-driven commands (train, eval).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import RunConfig, load_config
from .errors import DataError, NumericalError, UsageError
from .gradcheck import format_results, run_suite
from .imaging import (
    LabImage,
    RgbImage,
    lab_to_rgb,
    load_rgb,
    make_pair,
    read_manifest,
    rgb_to_lab,
    save_rgb,
    synth_dataset,
    write_manifest,
)
from .metrics import colorfulness, psnr, ssim
from .model import Mode
from .training import load_generator, train_loop


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="scsnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="write a synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run the alternating-mode training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("colorize", help="colorize + magnify one grayscale image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--ref")
    p.add_argument("--mode", choices=["auto", "ref"], default="auto")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="PSNR/SSIM/CN over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--mode", choices=["auto", "ref"], default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv")

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds-per-op", type=int, default=20)
    p.add_argument("--corrupt", help="self-test: corrupt the named op's adjoint")

    return parser


# ---------------------------------------------------------------------------
# inference helper (kept module-level so tests can substitute a double)
# ---------------------------------------------------------------------------


def predict_lab(gen, source, reference, mode, p) -> LabImage:
    """Run the generator on [1,h,w] source (+ optional LabImage reference)."""
    src = Tensor(source[None].astype(np.float32))
    ref = Tensor(reference.data[None].astype(np.float32)) if reference is not None else None
    out = gen(src, ref, mode, p)
    return LabImage(out.data[0])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_datagen(args):
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.size < 8:
        raise UsageError(f"--size must be >= 8, got {args.size}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = synth_dataset(args.seed, args.n, args.size)
    names = []
    for i, img in enumerate(images):
        name = f"img_{i:05d}.png"
        save_rgb(out_dir / name, img)
        names.append(name)
    write_manifest(out_dir, names)
    print(f"wrote {len(names)} images to {out_dir}")
    return 0


def _apply_seed_env(cfg_seed):
    env = os.environ.get("SCS_SEED")
    if env is None:
        return cfg_seed
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"SCS_SEED must be an integer, got {env!r}") from exc


def cmd_train(args):
    cfg = load_config(args.config)
    cfg.seed = _apply_seed_env(cfg.seed)
    images = [load_rgb(p) for p in read_manifest(cfg.data_dir)]
    ckpt_dir = Path(args.out)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    result = train_loop(
        cfg, images, ckpt_dir, resume=args.resume, log_file=ckpt_dir / "train_log.txt"
    )
    print(f"finished at step {result.final_step}; checkpoints: {len(result.checkpoints)}")
    return 0


def _load_gray(path):
    img = load_rgb(path)
    return rgb_to_lab(img).l_channel().copy()


def cmd_colorize(args):
    if args.mode == "ref" and not args.ref:
        raise UsageError("--mode ref requires --ref")
    if args.scale <= 0:
        raise UsageError(f"--scale must be positive, got {args.scale}")
    if args.mode == "auto" and args.ref:
        print("warning: --ref is ignored in auto mode", file=sys.stderr)
    gen, _, _ = load_generator(args.ckpt)
    source = _load_gray(args.input)
    h, w = source.shape[1:]
    if h % 4 or w % 4:
        raise DataError(f"input dims must be divisible by 4, got {h}x{w}")
    reference = None
    if args.mode == "ref":
        reference = rgb_to_lab(load_rgb(args.ref))
    mode = Mode.REF if args.mode == "ref" else Mode.AUTO
    pred = predict_lab(gen, source, reference, mode, args.scale)
    save_rgb(args.out, lab_to_rgb(pred))
    oh, ow = pred.size
    print(f"wrote {args.out} ({ow}x{oh})")
    return 0


def _fmt(x):
    return "inf" if math.isinf(x) else f"{x:.4f}"


def cmd_eval(args):
    if args.scale <= 1:
        raise UsageError(f"--scale must exceed 1, got {args.scale}")
    seed = _apply_seed_env(args.seed)
    gen, _, _ = load_generator(args.ckpt)
    paths = read_manifest(args.dataset)
    if not paths:
        raise DataError(f"dataset {args.dataset} is empty")
    mode = Mode.REF if args.mode == "ref" else Mode.AUTO
    rows = []
    for idx, path in enumerate(paths):
        hr = load_rgb(path)
        pair = make_pair(hr, args.scale, with_reference=(mode is Mode.REF), seed=(seed, idx))
        pred = predict_lab(gen, pair.source, pair.reference, mode, args.scale)
        pred_rgb = lab_to_rgb(pred)
        gt_rgb = lab_to_rgb(pair.target)
        rows.append((path.name, psnr(pred_rgb, gt_rgb), ssim(pred_rgb, gt_rgb), colorfulness(pred_rgb)))

    header = "image,psnr,ssim,cn"
    csv_lines = [header] + [f"{n},{_fmt(p)},{_fmt(s)},{_fmt(c)}" for n, p, s, c in rows]
    if args.csv:
        Path(args.csv).write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    for line in csv_lines:
        print(line)
    mean_psnr = float(np.mean([p for _, p, _, _ in rows]))
    mean_ssim = float(np.mean([s for _, _, s, _ in rows]))
    mean_cn = float(np.mean([c for _, _, _, c in rows]))
    print(f"mean,{_fmt(mean_psnr)},{_fmt(mean_ssim)},{_fmt(mean_cn)}")
    return 0


def cmd_gradcheck(args):
    results = run_suite(seed=args.seed, op_seeds=args.seeds_per_op, corrupt=args.corrupt)
    print(format_results(results))
    failed = [r for r in results if not r.passed]
    if failed:
        raise NumericalError(
            "gradient check failed for: " + ", ".join(r.name for r in failed)
        )
    return 0


_COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "colorize": cmd_colorize,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
