"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime failure (malformed data,
bad checkpoint, aborted training), 3 data error such as a missing input
file. Report-producing subcommands write figures next to their delimited
output.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import checkpoint, evalkit, figures, imgproc, infer, nets, train

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep codes ours
        raise UsageError(message)


def _alpha_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}")


def _resolution_list(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        if not part:
            continue
        try:
            w, h = part.lower().split("x")
            out.append((int(h), int(w)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad resolution {part!r}, expected WxH")
    if not out:
        raise argparse.ArgumentTypeError("empty resolution list")
    return out


def _add_prior_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--no-prior-blur", action="store_true",
        help="skip the Gaussian stage of prior smoothing (default off)",
    )
    p.add_argument("--blur-kernel", type=int, default=7, help="smoothing kernel size (default 7)")
    p.add_argument(
        "--bilateral-d", type=int, default=25,
        help="edge-preserving filter diameter (default 25)",
    )
    p.add_argument(
        "--bilateral-sigma", type=float, default=100.0,
        help="edge-preserving filter color and range sigma (default 100.0)",
    )
    p.add_argument(
        "--prior-weight", type=float, default=0.5,
        help="scale applied to the decoder base image (default 0.5)",
    )


def _prior_from(args) -> imgproc.PriorConfig:
    cfg = imgproc.PriorConfig()
    cfg.blur_enabled = not args.no_prior_blur
    cfg.blur_kernel = args.blur_kernel
    cfg.bilateral_diameter = args.bilateral_d
    cfg.bilateral_sigma_color = args.bilateral_sigma
    cfg.bilateral_sigma_space = args.bilateral_sigma
    cfg.prior_weight = args.prior_weight
    return cfg


def _opts_from(args) -> infer.StylizeOptions:
    opts = infer.StylizeOptions()
    opts.prior = _prior_from(args)
    opts.output_size = getattr(args, "size", 0)
    return opts


def _load_params(path: str) -> nets.ModelParams:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params, _ = nets.load_model(path)
    return params


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="styletrace", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True, help="key=value training config")
    p.add_argument("--resume", default="", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stylize", help="transfer one style onto one content image")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument(
        "--alpha", type=float, default=1.0,
        help="style strength: 0 reconstructs, 1 full transfer, >1 boosts (default 1.0)",
    )
    p.add_argument("--size", type=int, default=0, help="long-side rescale, 0 keeps size")
    _add_prior_flags(p)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("interp", help="sweep style strength, one output per value")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument(
        "--alpha-list", type=_alpha_list, default=[0.0, 0.5, 1.0, 1.5],
        help="comma-separated strengths (default 0,0.5,1,1.5)",
    )
    p.add_argument("--size", type=int, default=0, help="long-side rescale, 0 keeps size")
    _add_prior_flags(p)
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("prior", help="write every prior assembly stage for a pair")
    p.add_argument("--content", required=True)
    p.add_argument("--style", default="", help="omit with --plain")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--plain", action="store_true", help="skip color matching")
    _add_prior_flags(p)
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("eval", help="stylize listed pairs and score the results")
    p.add_argument(
        "--pairs", required=True,
        help="CSV of content_path,style_path rows under that header",
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="median stylization time per resolution")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="", help="also write the table here, plus a .png figure")
    p.add_argument(
        "--sizes", type=_resolution_list,
        default=list(evalkit.DEFAULT_BENCH_RESOLUTIONS),
        help="comma-separated WxH list (default 256x256,512x512,1920x1080)",
    )
    p.add_argument("--repeats", type=int, default=10, help="timed runs per size (default 10)")
    p.add_argument("--warmup", type=int, default=2, help="untimed runs per size (default 2)")
    _add_prior_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("frames", help="stylize an image sequence")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of numbered frames")
    p.add_argument("--style", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--alpha", type=float, default=1.0, help="style strength (default 1.0)")
    _add_prior_flags(p)
    p.set_defaults(func=cmd_frames)

    return parser


def cmd_train(args) -> int:
    cfg = train.parse_config(args.config)
    if args.resume:
        cfg.resume = args.resume
    result = train.fit(cfg)
    print(f"finished at {result.last_checkpoint}")
    print(f"losses: {os.path.join(result.out_dir, 'losses.csv')}")
    return 0


def cmd_stylize(args) -> int:
    content = imgproc.load_image(args.content)
    style = imgproc.load_image(args.style)
    params = _load_params(args.checkpoint)
    opts = _opts_from(args)
    if args.alpha == 1.0:
        out = infer.stylize(content, style, params, opts)
    else:
        out = infer.stylize_interp(content, style, params, args.alpha, opts)
    imgproc.save_image(out, args.out)
    print(args.out)
    return 0


def cmd_interp(args) -> int:
    content = imgproc.load_image(args.content)
    style = imgproc.load_image(args.style)
    params = _load_params(args.checkpoint)
    opts = _opts_from(args)
    os.makedirs(args.out_dir, exist_ok=True)
    for alpha in args.alpha_list:
        out = infer.stylize_interp(content, style, params, alpha, opts)
        path = os.path.join(args.out_dir, f"alpha_{alpha:g}.png")
        imgproc.save_image(out, path)
        print(path)
    return 0


def cmd_prior(args) -> int:
    content = imgproc.load_image(args.content)
    opts = infer.StylizeOptions()
    opts.prior = _prior_from(args)
    content_work, _ = infer._prepare(content, opts)
    if args.plain:
        style_work = None
    else:
        if not args.style:
            raise UsageError("--style is required unless --plain is given")
        style = imgproc.load_image(args.style)
        style_work = infer._resize_chw(style, *content_work.shape[1:])
    os.makedirs(args.out_dir, exist_ok=True)
    for index, (name, image) in enumerate(
        imgproc.prior_stages(content_work, style_work, opts.prior), 1
    ):
        path = os.path.join(args.out_dir, f"{index:02d}_{name}.png")
        imgproc.save_image(image, path)
        print(path)
    return 0


PAIRS_HEADER = "content_path,style_path"


def _read_pairs(path: str) -> list[tuple[str, str]]:
    rows = []
    saw_header = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not saw_header:
                if line.replace(" ", "") != PAIRS_HEADER:
                    raise ValueError(f"{path}:{lineno}: expected header {PAIRS_HEADER!r}")
                saw_header = True
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two paths, got {len(parts)}")
            rows.append((parts[0], parts[1]))
    if not rows:
        raise ValueError(f"{path} lists no pairs to evaluate")
    return rows


def cmd_eval(args) -> int:
    params = _load_params(args.checkpoint)
    base = os.path.dirname(os.path.abspath(args.pairs))
    resolve = lambda p: p if os.path.isabs(p) else os.path.join(base, p)
    stem = lambda p: os.path.splitext(os.path.basename(p))[0]
    snap = lambda img: infer._resize_chw(img, *infer._working_size(*img.shape[1:]))
    pairs = []
    for content_p, style_p in _read_pairs(args.pairs):
        content = snap(imgproc.load_image(resolve(content_p)))
        style = snap(imgproc.load_image(resolve(style_p)))
        stylized = infer.stylize(content, style, params)
        pairs.append((f"{stem(content_p)}+{stem(style_p)}", stylized, style, content))
    report = evalkit.evaluate_pairs(pairs, params)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(report.csv_text())
    fig_path = os.path.splitext(args.out)[0] + ".png"
    figures.render_metric_bars(
        [r.label for r in report.rows],
        [r.color_dist for r in report.rows],
        [r.feature_dist for r in report.rows],
        [r.content_dist for r in report.rows],
        fig_path,
    )
    print(args.out)
    print(fig_path)
    return 0


def cmd_bench(args) -> int:
    params = _load_params(args.checkpoint)
    opts = infer.StylizeOptions()
    opts.prior = _prior_from(args)
    rows = evalkit.bench_stylize(
        params,
        resolutions=tuple(args.sizes),
        repeats=args.repeats,
        warmup=args.warmup,
        opts=opts,
    )
    table = evalkit.timing_table(rows)
    sys.stdout.write(table)
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(out_dir, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(table)
        fig_path = os.path.splitext(args.out)[0] + ".png"
        figures.render_timing([r.label for r in rows], [r.seconds for r in rows], fig_path)
        print(fig_path)
    return 0


def cmd_frames(args) -> int:
    style = imgproc.load_image(args.style)
    params = _load_params(args.checkpoint)
    opts = infer.StylizeOptions()
    opts.prior = _prior_from(args)
    written = infer.stylize_frames(args.in_dir, style, params, args.out, opts, alpha=args.alpha)
    print(f"wrote {len(written)} frames to {args.out}")
    return 0


def entry(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, checkpoint.CheckpointError, train.TrainAbort) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())
