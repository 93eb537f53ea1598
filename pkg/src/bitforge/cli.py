"""Command-line front end: ``bitforge VERB [flags]``.

Every verb resolves a TrainConfig (defaults, then ``--config``, then flags),
works inside ``<out>/<config hash>-seed<seed>`` and refreshes its manifest.
Failures print one JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from bitforge.imageio import read_png
from bitforge.pipeline import experiment
from bitforge.pipeline.config import ConfigError, parse_config
from bitforge.pipeline.train import TrainingDiverged

log = logging.getLogger("bitforge")

VERBS = ("synth", "pretrain-sr", "train", "infer", "eval", "compare", "ablate", "gradcheck")

EXIT_FAILURE, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED = 1, 2, 3, 4


def _stages(text: str) -> tuple[int, int]:
    low, sep, high = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return int(low), int(high)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected b_L:b_H, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file (a run manifest also works)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, default=Path("runs"), help="parent of run directories")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("--stages", type=_stages, metavar="B_L:B_H", help="input and output depth of the cascade")
    common.add_argument("--no-sr", action="store_true", help="drop the SR trunks (inception-only features)")
    common.add_argument("--depth-in", type=int)
    common.add_argument("--depth-out", type=int)
    common.add_argument("--quiet", action="store_true", help="only warnings on stderr")

    parser = argparse.ArgumentParser(prog="bitforge", description="Bit-plane cascade bit-depth expansion.")
    verbs = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    help_text = {
        "synth": "write the synthetic dataset as PNGs",
        "pretrain-sr": "pretrain the x2/x4 SR trunks",
        "train": "train every cascade stage",
        "infer": "expand one image through the trained cascade",
        "eval": "PSNR/SSIM of the cascade on held-out images",
        "compare": "classical expanders and the cascade side by side",
        "ablate": "train and evaluate with and without SR trunks",
        "gradcheck": "finite-difference check of every op and a whole stage",
    }
    subs = {verb: verbs.add_parser(verb, parents=[common], help=help_text[verb]) for verb in VERBS}
    subs["infer"].add_argument("input", type=Path)
    subs["infer"].add_argument("output", type=Path)
    subs["infer"].add_argument("--run", type=Path, help="run directory holding the stage checkpoints")
    subs["train"].add_argument("--workers", type=int, help="stage processes (default BITFORGE_THREADS)")
    return parser


def config_from(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.stages is not None:
        overrides += [f"depth_in={args.stages[0]}", f"depth_out={args.stages[1]}"]
    if args.no_sr:
        overrides.append("use_sr=false")
    if args.verb != "infer":
        # for infer these describe the image, not the run
        if args.depth_in is not None:
            overrides.append(f"depth_in={args.depth_in}")
        if args.depth_out is not None:
            overrides.append(f"depth_out={args.depth_out}")
    return parse_config(args.config, overrides)


def _print_rows(rows) -> None:
    for row in rows:
        print(f"{row['method']}\t{row['b_L']}->{row['b_H']}\tpsnr={row['psnr_db']:.4f}\tssim={row['ssim']:.4f}")


def run(args) -> int:
    if args.verb == "gradcheck":
        return _gradcheck(args)

    config = config_from(args)
    if args.verb == "infer" and args.run is not None:
        run_dir = experiment.RunDir.existing(args.run)
    else:
        run_dir = experiment.RunDir(args.out, config)
    log.info("run directory %s", run_dir.path)

    if args.verb == "synth":
        written = experiment.run_synth(run_dir)
        print(f"{len(written)} images in {run_dir / 'dataset'}")
    elif args.verb == "pretrain-sr":
        experiment.run_pretrain(run_dir)
        print(run_dir / experiment.TRUNKS)
    elif args.verb == "train":
        for name in experiment.run_train(run_dir, args.workers):
            print(run_dir / name)
    elif args.verb == "eval":
        _print_rows(experiment.run_eval(run_dir)[-1:])
    elif args.verb == "compare":
        _print_rows(experiment.run_compare(run_dir))
    elif args.verb == "ablate":
        _print_rows(experiment.run_ablate(run_dir, args.out))
    elif args.verb == "infer":
        img = read_png(args.input, args.depth_in)
        depth_out = args.depth_out if args.depth_out is not None else run_dir.config.depth_out
        result = experiment.run_infer(run_dir, img, depth_out, args.output)
        print(f"{args.output}\t{img.bit_depth}->{result.bit_depth} bits")
    return 0


def _gradcheck(args) -> int:
    from bitforge.diagnostics import run_suite, suite_passed

    seed = args.seed if args.seed is not None else 0
    lines = []

    def emit(name, report):
        verdict = "ok" if report.passed else "FAIL"
        if name == "negative_control":
            verdict = "ok (fails as intended)" if not report.passed else "FAIL (corruption not detected)"
        line = f"{name}\tmax_rel_error={report.max_rel_error:.3e}\tchecked={report.checked}\t{verdict}"
        lines.append(line)
        print(line)

    passed = suite_passed(run_suite(seed=seed, emit=emit))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"gradcheck-seed{seed}.txt").write_text("\n".join(lines) + "\n")
    print("gradcheck passed" if passed else "gradcheck FAILED")
    return 0 if passed else EXIT_FAILURE


def _fail(verb: str | None, code: int, exc: BaseException) -> int:
    record = {"status": "error", "verb": verb, "kind": type(exc).__name__, "message": str(exc), "exit": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(experiment.thread_cap()):
            return run(args)
    except ConfigError as exc:
        return _fail(args.verb, EXIT_CONFIG, exc)
    except FileNotFoundError as exc:
        return _fail(args.verb, EXIT_MISSING, exc)
    except TrainingDiverged as exc:
        return _fail(args.verb, EXIT_DIVERGED, exc)
    except (ValueError, OSError, RuntimeError) as exc:
        return _fail(args.verb, EXIT_FAILURE, exc)


if __name__ == "__main__":
    sys.exit(main())
