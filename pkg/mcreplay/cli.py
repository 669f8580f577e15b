"""
Command-line entry point.

Every subcommand loads a recipe (``--config``), applies ``key=value``
overrides and then its own flags, writes ``run_manifest.json`` to the output
directory and exits 0 on success, 2 on usage or configuration errors and 1
on runtime failures.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import voluptuous as vol

from . import __version__
from .config_flow import RecipeConfig, float_list, int_list, load_recipe, order_list, position_list
from .const import (
    CHECKPOINT_NAME,
    ENV_THREADS,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    LABEL_REPLAYED,
    LOGGER_NAME,
    MANIFEST_NAME,
    RUN_MANIFEST_NAME,
    SCORES_NAME,
    SPLIT_EVAL,
    SPLITS,
)
from .detector.audio import ManifestRecord, load_manifest
from .detector.backbone import CLASS_INDEX, architecture_hash, clip_frames, init_params, resolve_architecture
from .detector.checkpoint import load_params
from .detector.errors import ConfigurationError, DetectorError
from .detector.evaluation import ExperimentReport, ReportRow, eer, evaluate, write_scores
from .detector.synth import (
    PRESETS,
    furthest_first_order,
    generate_corpus,
    reference_class_split,
    preset,
    propagate,
    sample_scene,
    synth_source,
)
from .detector.trainer import model_grad_check, train
from .detector.utils import derive_rng, worker_count
from .experiments import (
    channel_ablation,
    dummy_comparison,
    filter_sweep,
    segment_ablation,
    single_channel_sweep,
)

_LOGGER = logging.getLogger(LOGGER_NAME)


def _typed(validator: Callable):
    def parse(text: str):
        try:
            return validator(text)
        except vol.Invalid as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcreplay", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="recipe file (INI)")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--manifest", help="manifest file or corpus directory")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("overrides", nargs="*", metavar="key=value", help="recipe overrides")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    synth.add_argument("--preset", choices=sorted(PRESETS))
    synth.add_argument("--n", dest="n_clips", type=int, help="total clip count")
    synth.add_argument("--seed", dest="data_seed", type=int)
    synth.add_argument("--duration", type=float)
    synth.add_argument("--speakers", dest="n_speakers", type=int)
    synth.add_argument("--class-split", choices=["balanced", "reference"])
    synth.add_argument("--workers", type=int)

    train_cmd = sub.add_parser("train", parents=[common], help="train one model")
    train_cmd.add_argument("--mode")
    train_cmd.add_argument("--seed", type=int, help="training seed (default: first of seeds)")

    evaluate_cmd = sub.add_parser("eval", parents=[common], help="score a split with a checkpoint")
    evaluate_cmd.add_argument("--checkpoint", type=Path, required=True)
    evaluate_cmd.add_argument("--split", choices=SPLITS, default=SPLIT_EVAL)

    ablate = sub.add_parser("ablate-channels", parents=[common], help="channel-count ablation")
    ablate.add_argument("--order", dest="channel_orders", type=_typed(order_list), help="e.g. 1-4-2-3;1-2-3-4")

    sweep = sub.add_parser("sweep-filters", parents=[common], help="filters-per-channel sweep")
    sweep.add_argument("--filters", dest="filter_sweep", type=_typed(int_list), help="e.g. 8,16,32")

    segment = sub.add_parser("ablate-segment", parents=[common], help="input segment ablation")
    segment.add_argument("--lengths", dest="segment_lengths", type=_typed(float_list))
    segment.add_argument("--positions", dest="segment_positions", type=_typed(position_list))

    compare = sub.add_parser("compare-modes", parents=[common], help="single vs dummy vs multichannel")
    compare.add_argument("--seeds", type=_typed(int_list))

    channels = sub.add_parser("sweep-channels", parents=[common], help="single-channel model per microphone")
    channels.add_argument("--seeds", type=_typed(int_list))

    check = sub.add_parser("grad-check", parents=[common], help="full-model finite-difference check")
    check.add_argument("--coords", dest="grad_coords", type=int)
    check.add_argument("--eps", dest="grad_eps", type=float)
    check.add_argument("--preset", choices=sorted(PRESETS))
    check.add_argument("--seed", dest="data_seed", type=int)
    return parser


FLAG_KEYS = (
    "preset",
    "n_clips",
    "data_seed",
    "duration",
    "n_speakers",
    "class_split",
    "workers",
    "mode",
    "channel_orders",
    "filter_sweep",
    "segment_lengths",
    "segment_positions",
    "seeds",
    "grad_coords",
    "grad_eps",
)


def _recipe(args: argparse.Namespace) -> RecipeConfig:
    flags = {key: getattr(args, key) for key in FLAG_KEYS if hasattr(args, key)}
    if args.manifest:
        flags["manifest"] = args.manifest
    if getattr(args, "seed", None) is not None:
        flags["seeds"] = [args.seed]
    return load_recipe(args.config, args.overrides, flags)


def _records(recipe: RecipeConfig) -> List[ManifestRecord]:
    if not recipe.data.manifest:
        raise ConfigurationError("no manifest given (--manifest or [data] manifest)")
    path = Path(recipe.data.manifest)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return load_manifest(path)


def write_run_manifest(out: Path, args: argparse.Namespace, recipe: RecipeConfig, argv: Sequence[str]):
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": args.command,
        "argv": list(argv),
        "version": __version__,
        "config": recipe.as_dict(),
        "config_hash": recipe.config_hash,
        "seeds": list(recipe.train.seeds),
        "data_seed": recipe.data.data_seed,
        "threads": worker_count(),
    }
    (out / RUN_MANIFEST_NAME).write_text(json.dumps(record, indent=2, sort_keys=True, default=list) + "\n", encoding="utf-8")


def _finish(report: ExperimentReport, out: Path) -> int:
    report.write(out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


# -- subcommands -------------------------------------------------------------


def cmd_synth(args, recipe: RecipeConfig) -> int:
    data = recipe.data
    if data.class_split == "reference":
        n_genuine, n_replayed = reference_class_split(data.n_clips)
    else:
        n_genuine = data.n_clips // 2
        n_replayed = data.n_clips - n_genuine
    records = generate_corpus(
        args.out,
        n_genuine,
        n_replayed,
        preset(data.preset),
        data.data_seed,
        duration_s=data.duration,
        n_speakers=data.n_speakers or None,
        workers=data.workers,
    )
    print(f"{len(records)} clips ({n_genuine} genuine, {n_replayed} replayed) in {args.out}")
    return EXIT_OK


def cmd_train(args, recipe: RecipeConfig) -> int:
    seed = recipe.train.seeds[0]
    result = train(_records(recipe), recipe.model, recipe.train, seed, args.out)
    print(f"best epoch {result.best_epoch}, dev EER {100 * result.best_dev_eer:.2f}% -> {args.out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_eval(args, recipe: RecipeConfig) -> int:
    params = load_params(args.checkpoint)
    scores = evaluate(params, _records(recipe), args.split)
    write_scores(args.out / SCORES_NAME, scores)
    value = eer(scores)
    report = ExperimentReport("evaluation", {"checkpoint": str(args.checkpoint), "split": args.split})
    report.add(ReportRow(params.arch.mode, (value,), (), None, {"architecture": architecture_hash(params)}))
    return _finish(report, args.out)


def _default_orders(records: List[ManifestRecord], recipe: RecipeConfig):
    if recipe.experiment.channel_orders:
        return recipe.experiment.channel_orders
    device = records[0]["device"]
    if device in PRESETS:
        return (tuple(furthest_first_order(preset(device))),)
    raise ConfigurationError(f"device {device!r} is not a preset; give --order")


def cmd_ablate_channels(args, recipe: RecipeConfig) -> int:
    records = _records(recipe)
    status = EXIT_OK
    for order in _default_orders(records, recipe):
        label = "-".join(map(str, order))
        report = channel_ablation(records, order, recipe.model, recipe.train, args.out / label)
        status = _finish(report, args.out / label)
    return status


def cmd_sweep_filters(args, recipe: RecipeConfig) -> int:
    report = filter_sweep(_records(recipe), recipe.experiment.filter_sweep, recipe.model, recipe.train, args.out)
    return _finish(report, args.out)


def cmd_ablate_segment(args, recipe: RecipeConfig) -> int:
    report = segment_ablation(
        _records(recipe),
        recipe.experiment.segment_lengths,
        recipe.experiment.segment_positions,
        recipe.model,
        recipe.train,
        args.out,
    )
    return _finish(report, args.out)


def cmd_compare_modes(args, recipe: RecipeConfig) -> int:
    return _finish(dummy_comparison(_records(recipe), recipe.model, recipe.train, args.out), args.out)


def cmd_sweep_channels(args, recipe: RecipeConfig) -> int:
    return _finish(single_channel_sweep(_records(recipe), recipe.model, recipe.train, out_dir=args.out), args.out)


def cmd_grad_check(args, recipe: RecipeConfig) -> int:
    """Check the recipe's model on one synthetic replayed clip of the preset array."""
    geometry = preset(recipe.data.preset)
    seed = recipe.data.data_seed
    fs = geometry.sample_rate
    source = synth_source(recipe.model.segment_s, (seed, 0), fs)
    scene = sample_scene(derive_rng(seed, 1), LABEL_REPLAYED, (seed, 1), fs)
    clip = propagate(source, geometry, scene)
    arch = resolve_architecture(recipe.model, fs, clip.channels)
    params = init_params(arch, (seed, 2))
    frames = clip_frames(clip, arch)[None]
    targets = np.array([CLASS_INDEX[LABEL_REPLAYED]])
    report = model_grad_check(
        params, frames, targets, coords=recipe.experiment.grad_coords, eps=recipe.experiment.grad_eps, seed=seed
    )
    passed = report.max_rel_error < recipe.experiment.grad_tolerance
    print(
        f"max relative error {report.max_rel_error:.3e} over {len(report.coordinates)} coordinates, {report.skipped} skipped at kinks "
        f"({'ok' if passed else 'FAILED'}, tolerance {recipe.experiment.grad_tolerance:g})"
    )
    return EXIT_OK if passed else EXIT_RUNTIME


COMMANDS: Dict[str, Callable[[argparse.Namespace, RecipeConfig], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-channels": cmd_ablate_channels,
    "sweep-filters": cmd_sweep_filters,
    "ablate-segment": cmd_ablate_segment,
    "compare-modes": cmd_compare_modes,
    "sweep-channels": cmd_sweep_channels,
    "grad-check": cmd_grad_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        recipe = _recipe(args)
        write_run_manifest(args.out, args, recipe, argv)
        _LOGGER.info("%s: config %s, %s=%d", args.command, recipe.config_hash[:12], ENV_THREADS, worker_count())
        return COMMANDS[args.command](args, recipe)
    except ConfigurationError as exc:
        print(f"mcreplay: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DetectorError as exc:
        print(f"mcreplay: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"mcreplay: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
