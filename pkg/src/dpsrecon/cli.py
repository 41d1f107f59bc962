"""Command-line entry point: prepare, train, reconstruct, evaluate.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import audio
from .config import ConfigError, DataError, NumericError, load_config
from .data import load_split, prepare_dataset
from .metrics import EvalReport, evaluate_pairs, write_report
from .train import CheckpointError, Reconstructor, load_checkpoint, model_from_checkpoint, train

log = logging.getLogger("dpsrecon")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--capture-rate", type=int, choices=(500, 1000, 2000))
    p.add_argument("--cuab", choices=("paper", "every", "none"))
    p.add_argument("--bottleneck", choices=("conformer", "transformer"))
    p.add_argument("--workdir")


def build_parser():
    parser = argparse.ArgumentParser(prog="dpsrecon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="degrade a WAV corpus into paired clips")
    _common(p)
    p.add_argument("--corpus")

    p = sub.add_parser("train", help="train the reconstruction network")
    _common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("reconstruct", help="reconstruct one WAV file")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("evaluate", help="score model output and the raw-input baseline")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="debug: use targets as estimates")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="report directory (default WORKDIR/eval)")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _config(args):
    overrides = {
        "seed": args.seed,
        "workdir": args.workdir,
        "profile.capture_rate": args.capture_rate,
        "model.cuab": args.cuab,
        "model.bottleneck": args.bottleneck,
    }
    if getattr(args, "corpus", None):
        overrides["corpus"] = args.corpus
    if getattr(args, "max_steps", None):
        overrides["max_steps"] = args.max_steps
    return load_config(args.config, overrides)


def cmd_prepare(args):
    cfg = _config(args)
    if not cfg.corpus or not Path(cfg.corpus).is_dir():
        raise ConfigError(f"corpus directory {cfg.corpus!r} does not exist")
    cfg.freeze(cfg.data_dir / "config.json")
    try:
        manifest = prepare_dataset(
            cfg.corpus, cfg.data_dir, cfg.profile, cfg.valid_fraction, cfg.test_fraction, cfg.test_speakers
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    c = manifest["counts"]
    print(f"{c['clips']} pairs ({c['train']} train / {c['valid']} valid / {c['test']} test), "
          f"{c['skipped']} skipped -> {cfg.manifest_path}")


def cmd_train(args):
    cfg = _config(args)
    if not cfg.manifest_path.is_file():
        raise DataError(f"no manifest at {cfg.manifest_path}; run prepare first")
    _, inputs, targets = load_split(cfg.manifest_path, "train")
    if inputs is None:
        raise DataError("the train split is empty")
    cfg.freeze(cfg.checkpoint_dir / "config.json")
    log_file = Path(cfg.workdir) / "train_log.csv"
    if not args.resume and log_file.exists():
        log_file.unlink()
    try:
        _, history = train(cfg, inputs, targets, cfg.checkpoint_dir, resume=args.resume, log_file=log_file)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    if history:
        from .plotting import plot_loss_curve

        plot_loss_curve(history, Path(cfg.workdir) / "train_loss.png")
        print(f"trained to step {history[-1][0]}, loss {history[-1][1]:.5f}")


def cmd_reconstruct(args):
    try:
        net = model_from_checkpoint(load_checkpoint(args.checkpoint))
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    try:
        x, rate = audio.read_wav(args.input)
    except Exception as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    x = audio.resample(x, rate, audio.TARGET_RATE)
    y = Reconstructor(net)(x)
    audio.write_wav(args.output, y, audio.TARGET_RATE)
    print(f"wrote {args.output} ({len(y)} samples at {audio.TARGET_RATE} Hz)")


def cmd_evaluate(args):
    cfg = _config(args)
    if not cfg.manifest_path.is_file():
        raise DataError(f"no manifest at {cfg.manifest_path}; run prepare first")
    out = Path(args.out) if args.out else Path(cfg.workdir) / "eval"
    cfg.freeze(out / "config.json")
    kw = dict(externals=cfg.externals, split=args.split, workers=cfg.workers)
    reports, failed = [], False
    if args.oracle:
        reports.append(evaluate_pairs(cfg.manifest_path, label="oracle", source="target", **kw))
    elif args.checkpoint:
        try:
            net = model_from_checkpoint(load_checkpoint(args.checkpoint))
            reports.append(
                evaluate_pairs(cfg.manifest_path, Reconstructor(net), label="model",
                               meta={"checkpoint": Path(args.checkpoint).name}, **kw)
            )
        except (CheckpointError, RuntimeError, ValueError) as exc:
            log.error("model row failed: %s", exc)
            reports.append(EvalReport("model", [], {"error": str(exc)}))
            failed = True
    reports.append(evaluate_pairs(cfg.manifest_path, label="raw input", source="raw", **kw))
    write_report(reports, out, figures=not args.no_figures)
    if not args.no_figures:
        _example_figure(cfg, args, reports, out)
    print((out / "report.txt").read_text(), end="")
    if failed:
        raise DataError("model row could not be evaluated; baseline row written")


def _example_figure(cfg, args, reports, out):
    from .plotting import plot_spectrograms

    ids, inputs, targets = load_split(cfg.manifest_path, args.split)
    if not ids:
        return
    panels = [("target", targets[0]), ("raw input", inputs[0])]
    if args.checkpoint and not args.oracle and reports[0].clips:
        net = model_from_checkpoint(load_checkpoint(args.checkpoint))
        panels.append(("reconstruction", Reconstructor(net)(inputs[0])))
    plot_spectrograms(panels, out / f"spectrogram_{ids[0]}.png")


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
