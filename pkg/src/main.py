"""Command-line entry point: generate, train, eval and weights."""

import argparse
import json
import logging
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.engine.autograd import set_default_dtype
from src.models.config import MODES, PROFILES, RunConfig
from src.models.kg import MODALITY_ORDER, AlignmentDataset, Pair
from src.models.parameters import ParameterStore
from src.services.checkpoint import dump_parameters, load_parameters
from src.services.dataset_builder import prepare_dataset, split_alignments
from src.services.evaluator import evaluate
from src.services.kg_loader import load_pair, write_alignments, write_pair
from src.services.network import AlignmentNetwork
from src.services.report_generator import EPOCH_LOG_FILE, ReportGenerator
from src.services.synthetic_generator import generate_synthetic_pair
from src.services.trainer import AlignmentTrainer
from src.utils.errors import AlignmentError, ConfigError, DataError
from src.utils.settings import settings

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
GENERATION_LOG_FILE = "generation.json"
TRAIN_PAIRS_FILE = "train_pairs.tsv"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def setup_logging(log_dir: Optional[Path] = None, quiet: bool = False):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    log_dir = Path(settings.log_dir) if settings.log_dir else log_dir
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / "application.log", mode='a', encoding='utf-8'))
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


# -- configuration -------------------------------------------------------------

def _set(overrides: Dict[str, Any], section: str, key: str, value):
    if value is not None:
        overrides.setdefault(section, {})[key] = value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Profile, then config file, then flags; the default seed comes from the environment."""
    if getattr(args, "config", None):
        config = RunConfig.load(args.config)
        if args.profile and args.profile != config.profile:
            raise ConfigError(f"--profile {args.profile} conflicts with {args.config} ({config.profile})")
    else:
        config = RunConfig.from_profile(args.profile or "desk")
        config.train.seed = settings.default_seed

    overrides: Dict[str, Any] = {}
    _set(overrides, "train", "seed", args.seed)
    for key in ("n_entities", "n_relations", "n_attributes", "avg_degree", "d_v", "d_s", "rewire_rate",
                "feature_noise", "visual_missing", "visual_missing_1"):
        _set(overrides, "generator", key, getattr(args, key, None))
    for key in ("mode", "epochs", "iter_epochs", "lr", "ratio", "n_dic", "reference", "k_e", "k_s",
                "grad_accum_steps", "early_stop_patience", "eval_every", "precision"):
        _set(overrides, "train", key, getattr(args, key, None))
    for key in ("tau", "batch_size", "merp_refresh"):
        _set(overrides, "loss", key, getattr(args, key, None))
    if getattr(args, "merp", False):
        _set(overrides, "loss", "use_merp", True)
    if getattr(args, "no_licl", False):
        _set(overrides, "loss", "use_licl", False)
    if getattr(args, "l_xi", False):
        _set(overrides, "loss", "use_l_xi", True)
    _set(overrides, "model", "d", getattr(args, "d", None))
    if getattr(args, "no_ffn", False):
        _set(overrides, "model", "use_ffn", False)
    if getattr(args, "raw_fusion", False):
        _set(overrides, "model", "normalize_fusion", False)
    for key in ("direction", "pool"):
        _set(overrides, "eval", key, getattr(args, key, None))
    config.apply(overrides)

    dropped = getattr(args, "drop_modality", None) or []
    if dropped:
        config.model.modalities = [m for m in config.model.modalities if m not in dropped]
        logger.info(f"Dropping modalities {dropped}; remaining {config.model.modalities}")
    return config.validate()


def load_dataset(config: RunConfig, data_dir: Path) -> Tuple[AlignmentDataset, List[Pair]]:
    kg1, kg2, pairs = load_pair(data_dir)
    split = split_alignments(pairs, config.train.ratio, config.train.seed)
    dataset = prepare_dataset(kg1, kg2, split, config.model, config.train.seed, all_pairs=pairs)
    return dataset, pairs


def _load_run(run_dir: Path, data_dir: Path, args: argparse.Namespace):
    config_path = run_dir / CONFIG_FILE
    if not config_path.exists():
        raise DataError("run directory has no config", str(config_path))
    config = RunConfig.load(config_path)
    overrides: Dict[str, Any] = {}
    for key in ("direction", "pool"):
        _set(overrides, "eval", key, getattr(args, key, None))
    config.apply(overrides).validate()
    set_default_dtype(config.train.precision)
    params = load_parameters(run_dir)
    dataset, _ = load_dataset(config, data_dir)
    network = AlignmentNetwork(config.model, dataset)
    _check_parameters(network, params)
    return config, params, dataset, network


def _check_parameters(network: AlignmentNetwork, params: ParameterStore):
    try:
        network.embed(params)
    except KeyError as e:
        raise DataError(f"parameter dump lacks tensor {e.args[0]!r} needed by this dataset/config") from None


# -- commands ------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    """Write a synthetic pair atomically: everything lands in a temp dir that is renamed into place."""
    config = resolve_config(args)
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise ConfigError(f"{out_dir} exists and is not empty (use --force to replace it)")

    pair = generate_synthetic_pair(config.generator, config.train.seed)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-", dir=out_dir.parent))
    try:
        write_pair(pair.kg1, pair.kg2, pair.alignments, staging)
        record = {"seed": config.train.seed, "generator": config.to_dict()["generator"], "log": pair.log}
        (staging / GENERATION_LOG_FILE).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                                                   encoding="utf-8")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        staging.rename(out_dir)
    except Exception as e:
        logger.error(f"Generation failed, nothing written to {out_dir}: {e}")
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info(f"Synthetic pair written to {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = Path(args.out) if args.out else settings.output_dir / f"{config.train.mode}-seed{config.train.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(run_dir, args.quiet)
    config.save(run_dir / CONFIG_FILE)
    start = time.time()

    set_default_dtype(config.train.precision)
    dataset, _ = load_dataset(config, Path(args.data))
    reports = ReportGenerator(run_dir)
    (run_dir / EPOCH_LOG_FILE).unlink(missing_ok=True)

    trainer = AlignmentTrainer(config, dataset, show_progress=not args.quiet, snapshot_dir=run_dir,
                               on_epoch=reports.append_epoch)
    result = trainer.fit()

    dump_parameters(result.params, run_dir)
    write_alignments(dataset.to_local(result.train_pairs), run_dir / TRAIN_PAIRS_FILE)
    reports.write_loss_curve(result.history)
    summary = result.summary()
    summary["wall_time"] = time.time() - start
    if result.report is not None:
        reports.write_metrics(result.report, extra=summary)
        print(ReportGenerator.format_metrics_table(result.report))
    if result.pseudo_seed_precision is not None:
        print(f"pseudo-seed precision: {result.pseudo_seed_precision:.4f} ({result.pseudo_seed_size} pairs)")
    logger.info(f"Training finished in {summary['wall_time']:.1f}s; artifacts in {run_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    setup_logging(run_dir if run_dir.is_dir() else None, args.quiet)
    config, params, dataset, network = _load_run(run_dir, Path(args.data), args)
    if len(dataset.test_pairs) == 0:
        raise DataError("the split has no test pairs to evaluate")
    report = evaluate(network.embed(params).h_mu, dataset.test_pairs, dataset.n1, config.eval)
    ReportGenerator(run_dir).write_metrics(report, prefix="eval_")
    print(ReportGenerator.format_metrics_table(report))
    return 0


def cmd_weights(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    setup_logging(run_dir if run_dir.is_dir() else None, args.quiet)
    _, params, dataset, network = _load_run(run_dir, Path(args.data), args)
    summary = ReportGenerator(args.out or run_dir).write_meta_weights(network.embed(params), dataset)
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0


# -- parser --------------------------------------------------------------------

def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON run config (profile + overrides)")
    parser.add_argument("--profile", choices=PROFILES)
    parser.add_argument("--seed", type=int, help="defaults to MEAF_SEED or 2023")
    parser.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="mmea", description="Multi-modal entity alignment toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    gen = sub.add_parser("generate", help="write a synthetic KG pair")
    gen.add_argument("out")
    _common(gen)
    gen.add_argument("--n", dest="n_entities", type=int)
    gen.add_argument("--relations", dest="n_relations", type=int)
    gen.add_argument("--attributes", dest="n_attributes", type=int)
    gen.add_argument("--degree", dest="avg_degree", type=float)
    gen.add_argument("--d-v", dest="d_v", type=int)
    gen.add_argument("--d-s", dest="d_s", type=int)
    gen.add_argument("--rewire", dest="rewire_rate", type=float)
    gen.add_argument("--noise", dest="feature_noise", type=float)
    gen.add_argument("--visual-missing", dest="visual_missing", type=float, help="fraction of KG2 visual rows")
    gen.add_argument("--visual-missing-1", dest="visual_missing_1", type=float, help="fraction of KG1 visual rows")
    gen.add_argument("--force", action="store_true", help="replace an existing output directory")
    gen.set_defaults(handler=cmd_generate)

    train = sub.add_parser("train", help="train on a dataset directory pair")
    train.add_argument("data")
    train.add_argument("--out", help="run directory (default: $MEAF_OUTPUT_DIR/<mode>-seed<seed>)")
    _common(train)
    train.add_argument("--mode", choices=MODES)
    train.add_argument("--merp", action="store_true", help="hard-negative replay (supervised mode)")
    train.add_argument("--merp-refresh", dest="merp_refresh", choices=("step", "epoch"))
    train.add_argument("--ref", dest="reference", choices=("v", "s"), help="pseudo-seed reference modality")
    train.add_argument("--n-dic", dest="n_dic", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--iter-epochs", dest="iter_epochs", type=int)
    train.add_argument("--k-e", dest="k_e", type=int)
    train.add_argument("--k-s", dest="k_s", type=int)
    train.add_argument("--ratio", type=float, help="seed alignment ratio R_sa")
    train.add_argument("--lr", type=float)
    train.add_argument("--tau", type=float)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--accum", dest="grad_accum_steps", type=int)
    train.add_argument("--patience", dest="early_stop_patience", type=int)
    train.add_argument("--eval-every", dest="eval_every", type=int)
    train.add_argument("--precision", choices=("float64", "float32"))
    train.add_argument("--d", type=int)
    train.add_argument("--no-ffn", action="store_true")
    train.add_argument("--raw-fusion", action="store_true", help="fuse unnormalised modality embeddings")
    train.add_argument("--no-licl", action="store_true")
    train.add_argument("--l-xi", action="store_true")
    train.add_argument("--drop-modality", action="append", choices=MODALITY_ORDER)
    train.add_argument("--direction", choices=("both", "fwd", "bwd"))
    train.add_argument("--pool", choices=("test", "all"))
    train.set_defaults(handler=cmd_train)

    for name, handler, text in (("eval", cmd_eval, "evaluate saved parameters"),
                                ("weights", cmd_weights, "per-entity meta modality weights")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("run", help="run directory written by train")
        cmd.add_argument("data", help="dataset directory pair")
        cmd.add_argument("--quiet", action="store_true")
        if name == "eval":
            cmd.add_argument("--direction", choices=("both", "fwd", "bwd"))
            cmd.add_argument("--pool", choices=("test", "all"))
        else:
            cmd.add_argument("--out", help="output directory (default: the run directory)")
        cmd.set_defaults(handler=handler)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        setup_logging(None, args.quiet)
    try:
        return args.handler(args)
    except AlignmentError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
