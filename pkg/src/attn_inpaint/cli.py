"""``attn-inpaint`` command line: gendata, train, complete, attend, eval, check."""

import argparse
import logging
import os
import sys

import numpy as np

from . import functional as F
from . import imageio as io
from .attention import attention_to_color, color_wheel_legend
from .checks import run_all
from .config import RunConfig
from .tensor import no_grad
from .trainer import build_models, evaluate, load_generator, load_state, save_state, train

EVAL_COLUMNS = ("l1_pct", "l2_pct", "psnr", "tv")


def cmd_gendata(args):
    paths = io.gendata(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def cmd_train(args):
    rc = RunConfig.from_file(args.config) if args.config else RunConfig()
    rc.apply(args.set)
    os.makedirs(args.run_dir, exist_ok=True)
    if args.resume:
        models = load_state(args.resume)
    else:
        cfg, spec = rc.build()
        models = build_models(spec, cfg)
    with open(os.path.join(args.run_dir, "config.echo"), "w", encoding="utf-8") as fh:
        fh.write(rc.echo())
    data = io.load_dir(args.data)
    size = models.cfg.image_size
    if data.shape[-2:] != (size, size):
        raise SystemExit(f"training images are {data.shape[-2:]}, config wants {size}x{size}")
    train(models, data, run_dir=args.run_dir)
    final = os.path.join(args.run_dir, f"ckpt_{models.step}.cain")
    save_state(final, models)
    print(f"trained {models.step} steps; checkpoint {final}")
    return 0


def _load_pair(image_path, mask_path):
    rgb = io.read_rgb(image_path)
    known = io.read_mask(mask_path)
    if rgb.shape[:2] != known.shape:
        raise SystemExit(f"image {rgb.shape[:2]} and mask {known.shape} dims differ")
    return rgb, known


def _pad_to(rgb, known, unit):
    """Reflect-pad bottom/right so both dims divide ``unit``; padding counts as known."""
    H, W = known.shape
    ph, pw = (-H) % unit, (-W) % unit
    if ph or pw:
        rgb = np.pad(rgb, ((0, ph), (0, pw), (0, 0)), mode="symmetric")
        known = np.pad(known, ((0, ph), (0, pw)), constant_values=1.0)
    return rgb, known


def _run_generator(gen, rgb, known):
    H, W = known.shape
    unit = gen.downsample_factor() * gen.spec.attention.downscale_rate
    prgb, pknown = _pad_to(rgb, known, unit)
    x = io.image_to_tensor(prgb)
    m = pknown[None, None].astype(np.float32)
    with no_grad():
        _, refined, scores = gen(x * m, m)
    return refined.data[..., :H, :W], scores, (H, W), prgb.shape[:2]


def cmd_complete(args):
    gen = load_generator(args.checkpoint)
    rgb, known = _load_pair(args.image, args.mask)
    pred, _, _, _ = _run_generator(gen, rgb, known)
    out = np.where(known[..., None] > 0.5, rgb, io.tensor_to_image(pred))
    io.write_rgb(args.out, out)
    return 0


def cmd_attend(args):
    gen = load_generator(args.checkpoint)
    if not gen.spec.use_attention:
        raise SystemExit("checkpoint has no attention layer")
    rgb, known = _load_pair(args.image, args.mask)
    _, scores, (H, W), (PH, PW) = _run_generator(gen, rgb, known)
    color = attention_to_color(scores[0])[0]
    factor = PH // color.shape[1]
    up = color.repeat(factor, axis=1).repeat(factor, axis=2)[:, :H, :W]
    img = np.clip(np.rint(up.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    if args.legend:
        legend = np.clip(np.rint(color_wheel_legend(H) * 255), 0, 255).astype(np.uint8)
        img = np.concatenate([img, legend], axis=1)
    io.write_rgb(args.out, img)
    return 0


def cmd_eval(args):
    data = io.load_dir(args.dir)
    if args.identity:
        gen, hole = None, args.hole or data.shape[-1] // 2
    else:
        if not args.checkpoint:
            raise SystemExit("--checkpoint is required unless --identity is given")
        gen = load_generator(args.checkpoint)
        hole = args.hole or gen.spec.local_size
    metrics = evaluate(gen, data, hole, hole, seed=args.seed, identity=args.identity)
    print(",".join(EVAL_COLUMNS))
    print(",".join(f"{metrics[c]:.6f}" for c in EVAL_COLUMNS))
    return 0


def cmd_check(args):
    if args.perturb:
        F.KERNEL_PERTURBATION = args.perturb
    try:
        reports = run_all(args.seed)
    finally:
        F.KERNEL_PERTURBATION = 0.0
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} cases passed")
    return 0 if failed == 0 else 1


def build_parser():
    p = argparse.ArgumentParser(prog="attn-inpaint", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gendata", help="write synthetic texture PNGs")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gendata)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    t.add_argument("--data", required=True)
    t.add_argument("--run-dir", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("complete", cmd_complete, "fill the hole of one image"),
                               ("attend", cmd_attend, "export the attention colour map")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--image", required=True)
        c.add_argument("--mask", required=True, help="grayscale PNG, 255 = known")
        c.add_argument("--out", required=True)
        if name == "attend":
            c.add_argument("--legend", action="store_true", help="append a colour-wheel legend")
        c.set_defaults(func=fn)

    e = sub.add_parser("eval", help="mean metrics over a directory (CSV to stdout)")
    e.add_argument("--checkpoint")
    e.add_argument("--dir", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--hole", type=int, help="hole size (default: the checkpoint's local size)")
    e.add_argument("--identity", action="store_true", help="score ground truth against itself")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("check", help="run the oracle suite")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    k.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
