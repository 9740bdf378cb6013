"""Command-line surface tying the package together.

Subcommands: audit, gradcheck, train, infer, eval, make-toy-data.
Exit codes: 0 success, 1 contract or anchor failure, 2 I/O error.
"""

import argparse
import dataclasses
import sys

import numpy as np

from .archive import load_weights, read_entries, save_weights
from .audit import MAC_HEIGHT, MAC_WIDTH, audit_against_reference, count_params
from .configfile import read_kv, train_config_from_kv
from .dataset import load_pair_dir, make_synthetic_sharp, make_toy_dataset
from .errors import ContractViolation, FormatError, TrainingDiverged
from .metrics import psnr, ssim
from .model import ModelConfig, build_model, preset, preset_names
from .pngio import load_image, save_image
from .train import train, write_history
from .unet import UNetChannels
from .verify import check_gradients

_PRECISION = {"float32": np.float32, "float64": np.float64}


def resolve_variant(name):
    """Preset name or 'tiny' (the 4/6/8 debug ladder) -> ModelConfig."""
    if name == "tiny":
        return ModelConfig(stages_per_scale=(1, 2, 3),
                           channels=(UNetChannels(4, 6, 8),), base_channels=4)
    if name in preset_names():
        return preset(name)
    known = ", ".join(list(preset_names()) + ["tiny"])
    raise ContractViolation(f"unknown variant {name!r}; choose one of {known}")


# ---------------------------------------------------------------------------
# padding for arbitrary input sizes
# ---------------------------------------------------------------------------

def pad_divisor(config):
    """Spatial divisor a config's forward needs: one halving per coarse
    scale, one for unshuffled inputs, two inside each stage ladder."""
    return 2 ** (config.n_scales + 1)


def _pad_axis(arr, axis, need):
    # mirror without repeating the border pixel; chunked so pads larger
    # than the image stay legal, degrading to edge copies at width 1
    while need > 0:
        step = min(need, arr.shape[axis] - 1)
        pad = [(0, 0)] * arr.ndim
        if step <= 0:
            pad[axis] = (0, need)
            return np.pad(arr, pad, mode="edge")
        pad[axis] = (0, step)
        arr = np.pad(arr, pad, mode="reflect")
        need -= step
    return arr


def pad_to_multiple(img, d):
    """Reflection-pad (..., H, W) on the bottom/right to multiples of d."""
    h, w = img.shape[-2], img.shape[-1]
    img = _pad_axis(img, img.ndim - 2, (-h) % d)
    img = _pad_axis(img, img.ndim - 1, (-w) % d)
    return img, (h, w)


def _run_padded(model, config, blur):
    """Forward one (3, H, W) image of any size; returns (3, H, W)."""
    padded, (h, w) = pad_to_multiple(blur, pad_divisor(config))
    out = model.forward(padded[None].astype(model.dtype), train_mode=False)
    return np.asarray(out.final.value[0], dtype=np.float64)[:, :h, :w]


# ---------------------------------------------------------------------------
# weight loading with variant detection
# ---------------------------------------------------------------------------

def _model_for_weights(path, variant):
    """Build the right model for an archive and load it.

    With variant=None the archive's parameter total and variable
    inventory select the matching preset (or the tiny debug config).
    """
    entries = read_entries(path)
    if variant is not None:
        config = resolve_variant(variant)
        model = build_model(config, seed=0)
        load_weights(path, model)
        return config, model
    total = sum(a.size for a in entries.values())
    for name in ["tiny"] + list(preset_names()):
        config = resolve_variant(name)
        if count_params(config).param_total != total:
            continue
        model = build_model(config, seed=0)
        inventory = {v.name: v.value.shape for v in model.variables()}
        if (set(inventory) == set(entries)
                and all(entries[k].shape == inventory[k] for k in inventory)):
            load_weights(path, model)
            return config, model
    raise ContractViolation(
        f"{path}: weights match no known variant; pass --variant")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_audit(args):
    report = audit_against_reference(args.variant, args.width, args.height)
    sys.stdout.write(report.key_values() if args.kv else report.text_table())
    return 0 if report.passed else 1


def _cmd_gradcheck(args):
    config = resolve_variant(args.variant)
    report = check_gradients(config, tol=args.tol, samples=args.samples)
    print(report.summary())
    return 0 if report.passed else 1


def _cmd_train(args):
    variant, model_seed, tcfg = train_config_from_kv(read_kv(args.config),
                                                     source=args.config)
    tcfg = dataclasses.replace(tcfg, checkpoint_path=args.out)
    if args.seed is not None:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    config = resolve_variant(variant)
    model = build_model(config, seed=model_seed,
                        dtype=_PRECISION[tcfg.precision])
    pairs = load_pair_dir(args.data)
    history = train(model, pairs, tcfg)
    history_path = args.history or args.out + ".history.csv"
    write_history(history, history_path)
    first, last = history[0][2].total, history[-1][2].total
    print(f"trained {variant} for {tcfg.total_iters} iterations "
          f"on {len(pairs)} pairs")
    print(f"loss {first:.6g} -> {last:.6g}")
    print(f"weights: {args.out}")
    print(f"history: {history_path}")
    return 0


def _cmd_infer(args):
    config, model = _model_for_weights(args.weights, args.variant)
    img = np.asarray(load_image(args.input)[0], dtype=np.float64)
    out = _run_padded(model, config, img)
    save_image(out, args.output)
    print(f"wrote {args.output}")
    return 0


def _metrics(pred, sharp):
    return (psnr(pred, sharp),
            ssim(pred.transpose(1, 2, 0),
                 np.asarray(sharp).transpose(1, 2, 0)))


def _cmd_eval(args):
    config, model = _model_for_weights(args.weights, args.variant)
    pairs = load_pair_dir(args.data)
    sums = np.zeros(4)
    for name, blur, sharp in pairs:
        blur = np.asarray(blur, dtype=np.float64)
        out = _run_padded(model, config, blur)
        ip, is_ = _metrics(blur, sharp)
        op, os_ = _metrics(out, sharp)
        sums += (ip, is_, op, os_)
        print(f"{name}: input psnr {ip:.2f} ssim {is_:.4f} | "
              f"output psnr {op:.2f} ssim {os_:.4f}")
    m = sums / len(pairs)
    print(f"mean input: psnr {m[0]:.2f} ssim {m[1]:.4f} "
          f"({len(pairs)} images)")
    print(f"mean output: psnr {m[2]:.2f} ssim {m[3]:.4f} "
          f"({len(pairs)} images)")
    return 0


def _cmd_make_toy_data(args):
    if args.synthesize:
        make_synthetic_sharp(args.sharp, args.synthesize, size=args.size,
                             seed=args.seed, smooth=args.smooth)
    written = make_toy_dataset(args.sharp, args.out, length=args.length,
                               angle=args.angle, count=args.count,
                               seed=args.seed)
    print(f"wrote {len(written)} pairs to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mssnet",
        description="multi-scale stage deblurring: audit, verify, train, "
                    "and run the network family")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="parameter and MAC audit of a preset")
    p.add_argument("variant")
    p.add_argument("--width", type=int, default=MAC_WIDTH)
    p.add_argument("--height", type=int, default=MAC_HEIGHT)
    p.add_argument("--kv", action="store_true",
                   help="machine-readable key=value output")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the gradients")
    p.add_argument("variant", help="preset name or 'tiny'")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=10,
                   help="probed elements per variable")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("train", help="train on a blur/sharp pair directory")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--data", required=True, help="directory with blur/ and "
                   "sharp/ subdirectories")
    p.add_argument("--out", required=True, help="weight archive to write")
    p.add_argument("--history", default=None,
                   help="history CSV path (default: <out>.history.csv)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config file's sampling seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="deblur one image")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--variant", default=None,
                   help="skip auto-detection of the weight archive's variant")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="mean PSNR/SSIM over a pair directory")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", default=None,
                   help="skip auto-detection of the weight archive's variant")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("make-toy-data",
                       help="motion-blur sharp frames into a pair directory")
    p.add_argument("--sharp", required=True, help="directory of sharp PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--len", dest="length", type=float, default=9.0,
                   help="blur length in pixels")
    p.add_argument("--angle", type=float, default=None,
                   help="blur direction in degrees (default: random per "
                   "frame)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=None,
                   help="number of pairs (default: one per sharp frame)")
    p.add_argument("--synthesize", type=int, default=0, metavar="N",
                   help="first write N synthetic sharp frames into --sharp")
    p.add_argument("--size", type=int, default=128,
                   help="synthetic frame size")
    p.add_argument("--smooth", action="store_true",
                   help="synthetic frames without rectangles or noise")
    p.set_defaults(func=_cmd_make_toy_data)
    return parser


def cli(argv=None):
    """Run one command; returns the exit code instead of raising."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ContractViolation, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
