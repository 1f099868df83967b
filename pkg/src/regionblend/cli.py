"""``regionblend`` command line.

Exit codes: 0 success, 2 configuration / input error, 3 numerical failure.
"""
import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .denoiser import Prompt, save_checkpoint
from .errors import NumericalFailure, RegionBlendError
from .fixtures import gen_fixtures
from .imageio import load_image, load_mask, save_image
from .metrics import MetricReport, compare_images
from .pipeline import RunConfig, customize_detailed, invert, load_model, reconstruct
from .training import shape_dataset, train_toy

log = logging.getLogger("regionblend")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class CommandError(RegionBlendError):
    def __init__(self, step, message):
        self.step = step
        super().__init__(message)


def _parse_box(text):
    try:
        box = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"box must be X,Y,W,H integers, got {text!r}")
    if len(box) != 4:
        raise argparse.ArgumentTypeError(f"box must have four integers, got {text!r}")
    return box


def _coerce(value):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def build_config(args):
    """Config file first, then ``--set key=value`` pairs, then dedicated flags."""
    data = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError("config", f"cannot read config {args.config}: {exc}") from exc
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CommandError("config", f"--set expects key=value, got {item!r}")
        if key.startswith("blend."):
            data.setdefault("blend", {})[key[6:]] = _coerce(value)
        else:
            data[key] = _coerce(value)
    flags = {"seed": "seed", "steps": "num_steps", "solver": "solver", "prompt": "prompt",
             "copy_mask": "copy_mask", "injection": "injection", "weights": "weights",
             "model_seed": "model_seed"}
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            data[key] = value
    if getattr(args, "box", None):
        data["boxes"] = [list(b) for b in args.box]
    return RunConfig.from_dict(data)


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def manifest_path(out):
    return os.path.splitext(out)[0] + ".manifest.json"


def write_manifest(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _base_manifest(command, cfg, model):
    return {
        "tool": "regionblend",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "model": {"checksum": model.checksum(), "source": cfg.weights or f"seed:{cfg.model_seed}"},
    }


def _metric_table(report):
    table = report.as_dict()
    table["lpips"] = "not-computed (needs a pretrained perceptual network)"
    return table


def cmd_customize(args):
    cfg = build_config(args)
    refs = [load_image(p) for p in args.ref]
    masks = [load_mask(p) for p in args.ref_mask]
    scene = load_image(args.scene)
    model = load_model(cfg)
    tic = time.perf_counter()
    result = customize_detailed(scene, refs, masks, cfg, model)
    elapsed = time.perf_counter() - tic
    save_image(result.image, args.out)
    steps = []
    for s in result.steps:
        row = {"index": s.index, "t": s.t, "t_next": s.t_next, "branch": s.branch}
        if args.timing:
            row["seconds"] = round(s.seconds, 6)
        steps.append(row)
    payload = _base_manifest("customize", cfg, model)
    payload.update({
        "inputs": {"scene": args.scene, "refs": args.ref, "ref_masks": args.ref_mask,
                   "sha256": {p: _sha256(p) for p in [args.scene, *args.ref, *args.ref_mask]}},
        "output": {"image": os.path.basename(args.out), "sha256": _sha256(args.out)},
        "region_pixels": int(result.masks.R.sum()),
        "subject_pixels": int(result.masks.S.sum()),
        "gap_pixels": int(result.masks.M.sum()),
        "steps": steps,
        "metrics": {"output_vs_collage": _metric_table(compare_images(result.collage,
                                                                      result.image))},
    })
    if args.timing:
        payload["timing"] = {"total_seconds": round(elapsed, 6)}
    write_manifest(manifest_path(args.out), payload)
    log.info("wrote %s", args.out)


def cmd_reconstruct(args):
    cfg = build_config(args)
    image = load_image(args.image)
    model = load_model(cfg)
    out = reconstruct(image, cfg, model)
    save_image(out, args.out)
    payload = _base_manifest("reconstruct", cfg, model)
    payload.update({
        "inputs": {"image": args.image, "sha256": {args.image: _sha256(args.image)}},
        "output": {"image": os.path.basename(args.out), "sha256": _sha256(args.out)},
        "metrics": {"reconstruction_vs_input": _metric_table(compare_images(image, out))},
    })
    write_manifest(manifest_path(args.out), payload)
    print(json.dumps(payload["metrics"], sort_keys=True))


def cmd_invert(args):
    cfg = build_config(args)
    model = load_model(cfg)
    prompt = Prompt.from_text(cfg.prompt, model.config.vocab_size)
    zT = invert(load_image(args.image), cfg, prompt, model)
    np.save(args.out, zT)
    log.info("wrote latent %s with shape %s", args.out, zT.shape)


def _image_files(folder):
    return sorted(f for f in os.listdir(folder) if f.lower().endswith((".png", ".ppm")))


def cmd_eval(args):
    if os.path.isdir(args.a) and os.path.isdir(args.b):
        names = sorted(set(_image_files(args.a)) & set(_image_files(args.b)))
        if not names:
            raise CommandError("eval", "no matching image names in the two directories")
        rows = {n: compare_images(load_image(os.path.join(args.a, n)),
                                  load_image(os.path.join(args.b, n))) for n in names}
        out = {"images": {n: r.as_dict() for n, r in rows.items()},
               "mean": MetricReport.aggregate(rows.values()).as_dict()}
    else:
        out = compare_images(load_image(args.a), load_image(args.b)).as_dict()
    print(json.dumps(out, indent=2, sort_keys=True))


def cmd_gen_fixtures(args):
    paths = gen_fixtures(args.seed, args.out_dir, count=args.count, multi=args.multi)
    print(f"wrote {len(paths)} files to {args.out_dir}")


def cmd_train_toy(args):
    cfg = build_config(args)
    model = load_model(cfg)
    images, prompts = shape_dataset(args.dataset_size, seed=args.seed)
    losses = []
    trained = train_toy(model, images, prompts, args.iterations, batch_size=args.batch_size,
                        lr=args.lr, seed=args.seed, log=losses)
    save_checkpoint(trained, args.out)
    if losses:
        k = max(1, len(losses) // 10)
        log.info("loss %.4f -> %.4f", np.mean(losses[:k]), np.mean(losses[-k:]))
    print(f"wrote {args.out}")


def _add_run_flags(p, prompt=True):
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key, e.g. blend.alpha=0.5")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="inference grid size N")
    p.add_argument("--solver", choices=["ddim", "dpmpp2m"])
    p.add_argument("--weights", help="checkpoint file (default: seeded weights)")
    p.add_argument("--model-seed", type=int)
    if prompt:
        p.add_argument("--prompt", help="target prompt: words or integer token ids")


def build_parser():
    parser = argparse.ArgumentParser(prog="regionblend", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("customize", help="edit a region using a reference subject and a prompt")
    p.add_argument("--scene", required=True)
    p.add_argument("--ref", action="append", required=True)
    p.add_argument("--ref-mask", action="append", required=True)
    p.add_argument("--box", action="append", type=_parse_box, help="X,Y,W,H; repeat per region")
    p.add_argument("--out", required=True)
    p.add_argument("--copy-mask", choices=["region", "gap"])
    p.add_argument("--injection", choices=["blend", "self", "none"])
    p.add_argument("--timing", action="store_true",
                   help="add wall-clock timings to the manifest (breaks byte reproducibility)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_customize)

    p = sub.add_parser("reconstruct", help="invert and regenerate an image, report metrics")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    _add_run_flags(p, prompt=False)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("invert", help="save the terminal latent of an image as .npy")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("eval", help="MAE / SSIM / PSNR between two images or directories")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-fixtures", help="write the synthetic fixture set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--multi", type=int, default=2)
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("train-toy", help="train the toy denoiser on synthetic shapes")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dataset-size", type=int, default=64)
    _add_run_flags(p, prompt=False)
    p.set_defaults(func=cmd_train_toy, seed=0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalFailure as exc:
        print(f"regionblend: numerical failure at {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CommandError as exc:
        print(f"regionblend: error in {exc.step}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RegionBlendError, OSError) as exc:
        print(f"regionblend: error in {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
