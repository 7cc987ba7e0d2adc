"""Command-line surface.

Commands: ``split`` (materialize a labeled/unlabeled partition), ``train``
(run one experiment), ``eval`` (score a checkpoint), ``report`` (compare
completed runs). Exit codes: 0 success, 1 usage/configuration error,
2 runtime abort (non-finite loss).

Precedence for ``train`` settings: built-in defaults, then the config file,
then command-line flags. The fully resolved config is written into the run
directory before training starts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .config import CONFIG_FILE_NAME, ExperimentConfig, load_config, parse_config, save_config
from .data.datasets import DATA_DIR_ENV, dataset_ids, load_dataset
from .data.splits import save_split, split_from_labels, SplitSpec
from .exceptions import ConfigurationError, ContractError, DualSSLError, SplitError, TrainingAborted
from .experiment import build_model, run_experiment
from .trainer import evaluate, load_checkpoint
from .report import write_report

logger = logging.getLogger("dualssl")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2

VARIANT_FLAGS = {
    "sup": "sup_only",
    "vanilla-cnn": "vanilla_cnn",
    "vanilla-vit": "vanilla_vit",
    "conv-labeled": "conv_labeled",
    "semiformer": "semiformer",
}
PSEUDO_FLAGS = {"cnn": "cnn", "transformer": "transformer", "fused": "fused_average"}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for runtime aborts
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualssl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_split = sub.add_parser("split", help="write a deterministic labeled/unlabeled split file")
    p_split.add_argument("--dataset", required=True, choices=dataset_ids())
    p_split.add_argument("--fraction", required=True, type=float)
    p_split.add_argument("--seed", required=True, type=int)
    p_split.add_argument("--no-stratified", action="store_true")
    p_split.add_argument("--data-dir", default=None, help=f"dataset root (or ${DATA_DIR_ENV})")
    p_split.add_argument("--out", default=None, help="output JSON path")

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("--config", default=None, help="INI config file")
    p_train.add_argument("--dataset", choices=dataset_ids())
    p_train.add_argument("--fraction", type=float)
    p_train.add_argument("--split-seed", type=int)
    p_train.add_argument("--split-file", default=None, help="use a pre-built split file")
    p_train.add_argument("--variant", choices=sorted(VARIANT_FLAGS))
    p_train.add_argument("--pseudo-source", choices=sorted(PSEUDO_FLAGS))
    p_train.add_argument("--arch", choices=config_mod.ARCH_CHOICES)
    p_train.add_argument("--fusion", help="'auto', 'none', or 'block:stage,...'")
    p_train.add_argument("--tau", type=float)
    p_train.add_argument("--lambda", dest="lambda_u", type=float)
    p_train.add_argument("--mu", type=int)
    p_train.add_argument("--n-l", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--warmup-epochs", type=int)
    p_train.add_argument("--labeled-only-epochs", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--lr-final", type=float)
    p_train.add_argument("--seed", type=int, help="training seed")
    p_train.add_argument("--eval-every", type=int)
    p_train.add_argument("--label-smoothing", type=float)
    p_train.add_argument("--data-dir", default=None)
    p_train.add_argument("--out", default=None, help="run output directory")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test set")
    p_eval.add_argument("--run", required=True, help="run directory (with config.ini)")
    p_eval.add_argument("--checkpoint", default="last.pt", help="checkpoint file name or path")
    p_eval.add_argument("--data-dir", default=None)

    p_report = sub.add_parser("report", help="compare completed runs")
    p_report.add_argument("run_dirs", nargs="+")
    p_report.add_argument("--out", default="report", help="report output directory")
    return parser


_TRAIN_OVERRIDES = [
    # (argparse dest, config "section.key", transform)
    ("dataset", "data.dataset_id", str),
    ("fraction", "data.label_fraction", repr),
    ("split_seed", "data.seed", str),
    ("variant", "train.variant", lambda v: VARIANT_FLAGS[v]),
    ("pseudo_source", "train.pseudo_source", lambda v: PSEUDO_FLAGS[v]),
    ("arch", "model.arch", str),
    ("fusion", "model.fusion", str),
    ("tau", "train.tau", repr),
    ("lambda_u", "train.lambda", repr),
    ("mu", "train.mu", str),
    ("n_l", "train.n_l", str),
    ("epochs", "train.total_epochs", str),
    ("warmup_epochs", "train.warmup_epochs", str),
    ("labeled_only_epochs", "train.labeled_only_epochs", str),
    ("lr", "train.lr_init", repr),
    ("lr_final", "train.lr_final", repr),
    ("seed", "train.seed", str),
    ("eval_every", "train.eval_every", str),
    ("label_smoothing", "train.label_smoothing", repr),
    ("data_dir", "run.data_dir", str),
    ("out", "run.output_dir", str),
]


def resolve_train_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, str] = {}
    for dest, key, transform in _TRAIN_OVERRIDES:
        value = getattr(args, dest)
        if value is not None:
            overrides[key] = transform(value)
    if "train.variant" in overrides and "model.arch" not in overrides:
        # pick the canonical architecture for the requested variant
        arch = {"vanilla_cnn": "cnn", "vanilla_vit": "vit"}.get(overrides["train.variant"])
        if arch:
            overrides["model.arch"] = arch
        if overrides["train.variant"] == "conv_labeled":
            overrides.setdefault("model.fusion", "none")
    if "run.output_dir" not in overrides and args.config is None:
        overrides["run.output_dir"] = _default_run_dir(overrides)
    if args.config is not None:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def _default_run_dir(overrides: dict[str, str]) -> str:
    variant = overrides.get("train.variant", "semiformer")
    dataset = overrides.get("data.dataset_id", "synth10")
    fraction = overrides.get("data.label_fraction", "0.1")
    seed = overrides.get("train.seed", "0")
    return f"runs/{variant}_{dataset}_f{fraction}_s{seed}"


def cmd_split(args: argparse.Namespace) -> int:
    spec = SplitSpec(
        dataset_id=args.dataset,
        label_fraction=args.fraction,
        seed=args.seed,
        stratified=not args.no_stratified,
    )
    dataset = load_dataset(args.dataset, args.data_dir, train=True)
    split = split_from_labels(spec, dataset.labels)
    if split.num_unlabeled == 0:
        logger.warning("no unlabeled data; only sup_only is meaningful")
    out = Path(args.out or f"splits/{args.dataset}_f{args.fraction}_s{args.seed}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_split(out, spec, split)
    print(f"wrote {out} ({split.num_labeled} labeled / {split.num_unlabeled} unlabeled)")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_train_config(args)
    state, run_dir = run_experiment(config, split_file=args.split_file, resume_from=args.resume)
    final = state.records[-1] if state.records else None
    if final is not None:
        print(
            f"run complete: {run_dir} "
            f"(top1_T={final.top1_T} top1_C={final.top1_C} combined={final.top1_combined})"
        )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    config = load_config(run_dir / CONFIG_FILE_NAME)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_absolute() and not ckpt_path.exists():
        ckpt_path = run_dir / args.checkpoint
    payload = load_checkpoint(ckpt_path)
    data_dir = args.data_dir or config.data_dir or None
    eval_set = load_dataset(config.split.dataset_id, data_dir, train=False)
    model = build_model(config, eval_set.num_classes, eval_set.image_size)
    model.load_state_dict(payload["model"])
    result = evaluate(model, eval_set, config.train.eval_batch)
    summary = {
        "checkpoint": str(ckpt_path),
        "epoch": payload["epoch"],
        "top1_T": result.top1_T,
        "top1_C": result.top1_C,
        "top1_combined": result.top1_combined,
    }
    (run_dir / "eval.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        summary = write_report(args.run_dirs, args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {summary}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"split": cmd_split, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigurationError, ContractError, SplitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DualSSLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
