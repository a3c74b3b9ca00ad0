"""Command-line entry point.

Exit status is 0 on success, 1 on a usage error and 2 on a data error
(unreadable or inconsistent inputs). Every numeric flag may also be given in
a ``key = value`` file passed with ``--config``; flags on the command line
override the file.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .core import IGNORE, ClassPalette, ImageBuffer, argmax_labeling, softmax_over_classes
from .crf import CrfConfig, CrfKernels, pairwise_energy, refine, unary_energy
from .filtering import PermutohedralLattice, brute_force_filter, build_features
from .io import load_image, load_manifest, load_mask, load_unary, overlay, save_mask, save_rgb, save_unary
from .losses import LossConfig
from .metrics import ConfusionMatrix, confusion, miou
from .optim import OptimConfig, fit_scribbles
from .plotting import plot_iou_bars, plot_loss_curve

# brute-force kernels are used under --filter auto up to this many points
AUTO_EXACT_POINTS = 1024


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _palette(classes: int) -> ClassPalette:
    return ClassPalette.voc(min(max(classes, 1), 255))


def _use_exact(mode: str, points: int) -> bool:
    return mode == "exact" or (mode == "auto" and points <= AUTO_EXACT_POINTS)


def _crf_config(a) -> CrfConfig:
    return CrfConfig(a.w1, a.w2, a.sigma_alpha, a.sigma_beta, a.sigma_gamma, a.iters)


def cmd_refine(a) -> int:
    img = load_image(a.image)
    unary = load_unary(a.unary)
    if unary.shape != img.shape:
        raise ValueError(f"unary is {unary.shape}, image is {img.shape}")
    cfg = _crf_config(a)
    exact = _use_exact(a.filter, img.height * img.width)
    mask, _ = refine(unary, img, cfg, exact=exact, workers=a.threads)
    start = argmax_labeling(softmax_over_classes(unary))
    kernels = CrfKernels(img, cfg, exact=exact, workers=a.threads)
    for name, m in (("before", start), ("after", mask)):
        e = unary_energy(m, unary) + pairwise_energy(m, img, cfg, kernels=kernels)
        print(f"energy_{name}\t{_fmt(e)}")
    save_mask(mask, _palette(unary.classes), a.out)
    return 0


def _write_loss_csv(history, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "pce", "crf", "combined"])
        for i, r in enumerate(history):
            w.writerow([i, repr(r.pce), repr(r.crf), repr(r.combined)])
    plot_loss_curve(history, path.with_suffix(".png"))


def cmd_fit(a) -> int:
    img = load_image(a.image)
    scribbles = load_mask(a.scribbles, a.classes, a.ignore)
    if scribbles.shape != img.shape:
        raise ValueError(f"scribbles are {scribbles.shape}, image is {img.shape}")
    loss_cfg = LossConfig(
        w=a.w, sigma_rgb=a.sigma_rgb, sigma_xy=a.sigma_xy, scale=a.scale,
        lambda_crf=a.lambda_crf, pce_reduction=a.pce_reduction,
    )
    opt_cfg = OptimConfig(
        lr0=a.lr, momentum=a.momentum, weight_decay=a.weight_decay, power=a.power,
        max_iter=a.iters, seed=a.seed, init_std=a.init_std,
    )
    small = int(img.height * a.scale) * int(img.width * a.scale)
    result = fit_scribbles(
        img, scribbles, a.classes, loss_cfg, opt_cfg, exact=_use_exact(a.filter, small), workers=a.threads
    )
    save_mask(result.mask, _palette(a.classes), a.out)
    if a.save_logits:
        save_unary(result.logits, a.save_logits)
    if a.loss_csv:
        _write_loss_csv(result.history, Path(a.loss_csv))
    last = result.history[-1]
    print(f"final_pce\t{_fmt(last.pce)}")
    print(f"final_crf\t{_fmt(last.crf)}")
    print(f"final_combined\t{_fmt(last.combined)}")
    return 0


def _eval_one(sample, pred_dir: Path, classes: int, ignore: int) -> ConfusionMatrix:
    gt = load_mask(sample.gt, classes, ignore)
    pred_path = pred_dir / f"{sample.name}.png"
    if not pred_path.exists():
        raise ValueError(f"missing prediction {pred_path}")
    pred = load_mask(pred_path, classes, ignore)
    return confusion(pred, gt, classes)


def cmd_eval(a) -> int:
    samples = [s for s in load_manifest(a.manifest) if s.gt is not None]
    if not samples:
        raise ValueError("empty evaluation: no manifest entry has ground truth")
    pred_dir = Path(a.pred_dir)
    with ThreadPoolExecutor(max_workers=max(1, a.threads)) as pool:
        parts = list(pool.map(lambda s: _eval_one(s, pred_dir, a.classes, a.ignore), samples))
    cm = ConfusionMatrix.empty(a.classes)
    for part in parts:  # integer counts: the merge is exact in any order
        cm = cm + part
    mean, iou = miou(cm, absent_as_zero=a.absent_as_zero)
    names = _palette(a.classes).names if a.classes <= 255 else tuple(map(str, range(a.classes)))
    rows = [(str(c), names[c], "absent" if np.isnan(v) else f"{v:.6f}") for c, v in enumerate(iou)]
    print("class\tname\tiou")
    for row in rows:
        print("\t".join(row))
    print(f"mIoU\t{mean:.6f}")
    if a.csv:
        path = Path(a.csv)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "name", "iou"])
            w.writerows(rows)
            w.writerow(["mean", "mIoU", f"{mean:.6f}"])
        plot_iou_bars(names, iou, mean, path.with_suffix(".png"))
    return 0


def cmd_energy(a) -> int:
    img = load_image(a.image)
    unary = load_unary(a.unary)
    mask = load_mask(a.labeling, unary.classes, a.ignore)
    if not (img.shape == unary.shape == mask.shape):
        raise ValueError(f"shape mismatch: image {img.shape}, unary {unary.shape}, labeling {mask.shape}")
    cfg = _crf_config(a)
    exact = _use_exact(a.filter, img.height * img.width)
    u = unary_energy(mask, unary)
    p = pairwise_energy(mask, img, cfg, kernels=CrfKernels(img, cfg, exact=exact, workers=a.threads))
    print(f"unary\t{_fmt(u)}")
    print(f"pairwise\t{_fmt(p)}")
    print(f"total\t{_fmt(u + p)}")
    return 0


def cmd_bench_filter(a) -> int:
    if a.height < 1 or a.width < 1:
        raise ValueError("height and width must be positive")
    rng = np.random.default_rng(a.seed)
    img = ImageBuffer(rng.uniform(0, 255, (a.height, a.width, 3)))
    f = build_features(img, "bilateral", (a.sigma_xy, a.sigma_rgb))
    v = rng.uniform(0, 1, (f.shape[0], a.channels))
    t0 = time.perf_counter()
    approx = PermutohedralLattice(f).filter(v, workers=a.threads)
    t_lat = time.perf_counter() - t0
    print(f"points\t{f.shape[0]}")
    print(f"lattice_seconds\t{t_lat:.4f}")
    if a.oracle:
        t0 = time.perf_counter()
        exact = brute_force_filter(v, f, workers=a.threads)
        t_bf = time.perf_counter() - t0
        err = float(np.abs(approx - exact).max() / np.abs(exact).max())
        print(f"brute_force_seconds\t{t_bf:.4f}")
        print(f"max_relative_error\t{err:.6f}")
    return 0


def cmd_overlay(a) -> int:
    img = load_image(a.image)
    mask = load_mask(a.mask, 255, IGNORE)
    save_rgb(overlay(img, mask, ClassPalette.voc(255), a.alpha), a.out)
    return 0


def _crf_flags(p) -> None:
    p.add_argument("--iters", type=int, default=5, help="mean-field iterations")
    p.add_argument("--w1", type=float, default=3.0, help="appearance kernel weight")
    p.add_argument("--w2", type=float, default=4.0, help="smoothness kernel weight")
    p.add_argument("--sigma-alpha", type=float, default=67.0)
    p.add_argument("--sigma-beta", type=float, default=3.0)
    p.add_argument("--sigma-gamma", type=float, default=1.0)


def _filter_flag(p) -> None:
    p.add_argument(
        "--filter", choices=("auto", "exact", "lattice"), default="auto",
        help=f"Gaussian filter route; auto = exact up to {AUTO_EXACT_POINTS} points",
    )


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file supplying numeric flags")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-class filtering")

    parser = _Parser(prog="scribblecrf", description="Dense CRF refinement and scribble-supervised fitting.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("refine", parents=[common], help="mean-field CRF refinement of a unary field")
    p.add_argument("--image", required=True)
    p.add_argument("--unary", required=True, help="UNR1 logits")
    p.add_argument("--out", required=True, help="output indexed PNG")
    _crf_flags(p)
    _filter_flag(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("fit", parents=[common], help="fit a segmentation to scribbles")
    p.add_argument("--image", required=True)
    p.add_argument("--scribbles", required=True, help="indexed PNG, 255 = unlabeled")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--out", required=True, help="output indexed PNG")
    p.add_argument("--ignore", type=int, default=IGNORE)
    p.add_argument("--lambda", dest="lambda_crf", type=float, default=1.0)
    p.add_argument("--w", type=float, default=2.0 ** -9)
    p.add_argument("--sigma-rgb", type=float, default=15.0)
    p.add_argument("--sigma-xy", type=float, default=100.0)
    p.add_argument("--scale", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--power", type=float, default=1.2)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-std", type=float, default=0.0)
    p.add_argument("--pce-reduction", choices=("sum", "mean"), default="sum")
    p.add_argument("--loss-csv", help="per-iteration losses; a loss-curve PNG is written beside it")
    p.add_argument("--save-logits", help="final logits as UNR1")
    _filter_flag(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", parents=[common], help="mIoU of predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True, help="holds <image stem>.png per sample")
    p.add_argument("--classes", type=int, default=21)
    p.add_argument("--ignore", type=int, default=IGNORE)
    p.add_argument("--absent-as-zero", action="store_true", help="score absent classes as 0 in the mean")
    p.add_argument("--csv", help="per-class table; an IoU bar chart PNG is written beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("energy", parents=[common], help="CRF energy of a labeling")
    p.add_argument("--image", required=True)
    p.add_argument("--labeling", required=True)
    p.add_argument("--unary", required=True)
    p.add_argument("--ignore", type=int, default=IGNORE)
    _crf_flags(p)
    _filter_flag(p)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("bench-filter", parents=[common], help="lattice vs brute-force filtering")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--oracle", action="store_true", help="also run brute force and report the error")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--sigma-xy", type=float, default=100.0)
    p.add_argument("--sigma-rgb", type=float, default=15.0)
    p.set_defaults(func=cmd_bench_filter)

    p = sub.add_parser("overlay", parents=[common], help="blend a mask over its image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_overlay)
    return parser


def read_config(path) -> dict[str, float]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key = key.strip().lstrip("-").replace("-", "_")
        try:
            out[key] = float(value.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: {key} is not numeric") from None
    return out


def _numeric_actions(subparser) -> dict[str, argparse.Action]:
    acts = {}
    for act in subparser._actions:
        if act.type in (int, float) and act.dest != "threads":
            acts[act.dest] = act
            for opt in act.option_strings:
                acts[opt.lstrip("-").replace("-", "_")] = act
    return acts


def _apply_config(parser, argv) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    if known.config and command:
        sub = choices[command]
        acts = _numeric_actions(sub)
        try:
            values = read_config(known.config)
        except OSError as exc:
            raise UsageError(f"cannot read config {known.config}: {exc}") from None
        defaults = {}
        for key, value in values.items():
            act = acts.get(key)
            if act is None:
                raise UsageError(f"{known.config}: unknown setting '{key}' for {command}")
            if act.type is int:
                if value != int(value):
                    raise UsageError(f"{known.config}: {key} must be an integer")
                value = int(value)
            defaults[act.dest] = value
            act.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.threads < 1:
        print("scribblecrf: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"scribblecrf: error: {exc}", file=sys.stderr)
        return 2


def run_cli(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
