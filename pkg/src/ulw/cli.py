"""Command-line entry point: synth, train, desmoke, eval.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime error.  All
normal output goes to stdout as `key=value` rows; error diagnostics go to
stderr as a single `error=` row.
"""

from __future__ import annotations

import argparse
import sys

from ulw.data import build_synthetic_dataset
from ulw.errors import ConfigError, UlwError, UsageError
from ulw.metrics import evaluate_pairs
from ulw.training import TrainConfig, desmoke_dir, resolve_weights, train


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports bad usage through our exception type.

    The default parser calls sys.exit(2); our contract reserves 2 for runtime
    failures, so usage problems are rerouted to UsageError and become exit 1.
    """

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _parse_density(text: str) -> tuple[float, float]:
    try:
        if ":" in text:
            lo_text, hi_text = text.split(":", 1)
            lo, hi = float(lo_text), float(hi_text)
        else:
            lo = hi = float(text)
    except ValueError:
        raise UsageError(f"--density expects LO:HI or a single value, got {text!r}") from None
    if not (0.0 <= lo <= hi <= 1.0):
        raise UsageError(f"--density range must satisfy 0 <= LO <= HI <= 1, got {text!r}")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ulw", description="Learnable Wiener + U-Net desmoking pipeline")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    synth = sub.add_parser("synth", help="generate a paired synthetic dataset")
    synth.add_argument("--out", required=True, help="output directory for PNG pairs")
    synth.add_argument("--count", type=int, required=True, help="number of pairs")
    synth.add_argument("--size", type=int, default=64, help="square image size (default 64)")
    synth.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    synth.add_argument("--density", default="0.3:0.9", metavar="LO:HI",
                       help="smoke density range (default 0.3:0.9)")
    synth.add_argument("--clean-dir", default=None,
                       help="use PNGs from this directory as clean images "
                            "instead of procedural textures")

    tr = sub.add_parser("train", help="train a model on a paired dataset")
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--preset", choices=("base", "ulw"), default="ulw",
                    help="base = plain U-Net with MSE; ulw = Wiener stage + composite loss")
    tr.add_argument("--out", required=True, help="checkpoint output path")
    tr.add_argument("--alpha", type=float, default=None, help="MSE weight")
    tr.add_argument("--beta", type=float, default=None, help="SSIM weight")
    tr.add_argument("--gamma", type=float, default=None, help="perceptual weight")
    tr.add_argument("--lr", type=float, default=1e-3, help="learning rate (default 1e-3)")
    tr.add_argument("--steps", type=int, default=300, help="optimization steps (default 300)")
    tr.add_argument("--batch", type=int, default=2, help="batch size (default 2)")
    tr.add_argument("--depth", type=int, default=4, help="U-Net depth (default 4)")
    tr.add_argument("--base-channels", type=int, default=16,
                    help="channels at the first level (default 16)")
    tr.add_argument("--seed", type=int, default=0, help="training seed (default 0)")
    tr.add_argument("--image-size", type=int, default=64,
                    help="resize pairs to this square size (default 64)")
    tr.add_argument("--extractor", default=None, metavar="WEIGHTS",
                    help="feature extractor container (default: built-in fixture)")
    tr.add_argument("--checkpoint-every", type=int, default=100,
                    help="also save every N steps (default 100)")
    tr.add_argument("--dump-grid", default=None, metavar="PNG",
                    help="write a smoky|restored|clean grid after training")

    de = sub.add_parser("desmoke", help="run a checkpoint over a directory of PNGs")
    de.add_argument("--ckpt", required=True, help="checkpoint path")
    de.add_argument("--in", dest="input_dir", required=True, help="input directory")
    de.add_argument("--out", required=True, help="output directory")
    de.add_argument("--resize", action="store_true",
                    help="resample inputs whose dimensions are not multiples of 2^depth")

    ev = sub.add_parser("eval", help="score predictions against targets into a CSV")
    ev.add_argument("--pred", required=True, help="prediction directory")
    ev.add_argument("--target", required=True, help="reference directory")
    ev.add_argument("--report", required=True, help="CSV report path")
    return parser


def _run_synth(args) -> int:
    manifest = build_synthetic_dataset(args.out, args.count, args.size, seed=args.seed,
                                       density_range=_parse_density(args.density),
                                       clean_dir=args.clean_dir)
    print(f"manifest={manifest} pairs={args.count}")
    return 0


def _run_train(args) -> int:
    weights = resolve_weights(args.preset, args.alpha, args.beta, args.gamma)
    config = TrainConfig(preset=args.preset, depth=args.depth,
                         base_channels=args.base_channels, weights=weights, lr=args.lr,
                         batch_size=args.batch, max_steps=args.steps, seed=args.seed,
                         image_size=args.image_size, data_dir=args.data,
                         checkpoint_path=args.out, checkpoint_every=args.checkpoint_every,
                         extractor_path=args.extractor, dump_grid=args.dump_grid)
    config.validate()
    train(config, log=print)
    return 0


def _run_desmoke(args) -> int:
    count = desmoke_dir(args.ckpt, args.input_dir, args.out, allow_resize=args.resize,
                        log=print)
    print(f"images={count}")
    return 0


def _run_eval(args) -> int:
    summary = evaluate_pairs(args.pred, args.target, args.report)
    row = f"report={args.report} pairs={summary['pairs']} errors={summary['errors']}"
    for name, value in summary["mean"].items():
        row += f" mean_{name}={value:.6f}"
    print(row)
    return 0


_COMMANDS = {
    "synth": _run_synth,
    "train": _run_train,
    "desmoke": _run_desmoke,
    "eval": _run_eval,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse exits itself only for --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"error={exc}", file=sys.stderr)
        return 1
    except UlwError as exc:
        print(f"error={exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything to 2
        print(f"error={type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
