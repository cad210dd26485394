"""CLI entry point for fuselab."""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Sequence

from .config import add_config_arguments, config_from_args
from .data import gen_interaction_dataset, gen_toy_translation, write_corpus
from .errors import ConfigError, DatasetError, FuselabError
from .gradcheck import CASES, run_gradcheck
from .harness import DEFAULT_P_GRID, ablate, evaluate, sweep, train
from .state import FusionKind, Task

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _banner(title: str) -> None:
    print("\n" + "="*60)
    print(title)
    print("="*60 + "\n")


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got '{text}'") from None


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    if not config.data_dir:
        raise ConfigError("gen-data needs --data-dir")
    if config.task is Task.CLASSIFICATION:
        corpus = gen_interaction_dataset(config.n_samples, config.seed, noise_std=config.noise_std)
    else:
        corpus = gen_toy_translation(config.n_samples, config.seed, vocab_size=config.vocab_size,
                                     ambiguity_rate=config.ambiguity_rate, jargon_rate=config.jargon_rate,
                                     noise_std=config.noise_std)
    paths = write_corpus(config.data_dir, corpus)
    for split, path in paths.items():
        print(f"  - {split}: {path} ({len(corpus.splits[split])} records)")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    _banner(f"FUSELAB TRAINING - {config.task.value} / {config.fusion.value}")
    result = train(config)
    summary = result.summary
    _banner("[OK] TRAINING COMPLETED")
    print(f"Run directory: {result.run_dir}")
    print(f"Best {summary['metric']}: {summary['best_score']:.4f} at epoch {summary['best_epoch']}")
    print(f"Stop reason: {summary['stop_reason']}")
    print(f"Parameters: {summary['parameter_count']}")
    if summary.get('test'):
        print(f"Test metrics: {json.dumps(summary['test'], sort_keys=True)}")
    print()
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    metrics = evaluate(args.checkpoint, args.dataset, args.word_drop)
    for name, value in sorted(metrics.items()):
        print(f"  - {name}: {value:.6f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(metrics, f, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    grid = _float_list(args.p_grid) if args.p_grid else list(DEFAULT_P_GRID)
    out = args.out or os.path.join(os.path.dirname(args.checkpoint), "ablation.csv")
    rows = ablate(args.checkpoint, args.dataset, grid, out)
    print("p,bleu1,bleu2,bleu3,bleu4")
    for row in rows:
        print(f"{row['p']:.2f},{row['bleu1']:.2f},{row['bleu2']:.2f},{row['bleu3']:.2f},{row['bleu4']:.2f}")
    print(f"\nCurve written to {out}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    names = [n.strip() for n in args.cases.split(",")] if args.cases else None
    if names:
        unknown = [n for n in names if n not in CASES]
        if unknown:
            raise ConfigError(f"unknown gradcheck cases {unknown}; known: {sorted(CASES)}")
    results = run_gradcheck(names, trials=args.trials, seed=args.seed)
    for r in results:
        print(f"  [{'OK' if r.passed else 'X'}] {r.name}: {r.max_rel_error:.2e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"\n[X] Gradient check failed for: {', '.join(failed)}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    base = config_from_args(args)
    try:
        fusions = [FusionKind(f.strip()) for f in args.fusions.split(",")]
    except ValueError:
        raise ConfigError(f"unknown fusion kind in '{args.fusions}'") from None
    rows = sweep(base, _float_list(args.lambda_fusion_grid), _float_list(args.lambda_task_grid),
                 fusions, workers=args.workers)
    _banner("SWEEP RESULTS")
    for row in rows:
        print(f"  - {row['run_name']}: {row['metric']} = {row['best_score']:.4f} (epoch {row['best_epoch']})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuselab", description="Multimodal fusion experiments")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic train/valid/test files")
    add_config_arguments(p)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration")
    add_config_arguments(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--word-drop", type=float, default=0.0)
    p.add_argument("--json", help="also write the metrics to this file")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", help="word-drop curve of a translation checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--p-grid", help="comma-separated probabilities (default 0.0..0.9)")
    p.add_argument("--out", help="CSV path (default: ablation.csv next to the checkpoint)")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--cases", help=f"comma-separated subset of: {', '.join(sorted(CASES))}")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("sweep", help="grid over lambda_fusion x lambda_task x fusion")
    add_config_arguments(p)
    p.add_argument("--lambda-fusion-grid", default="0,0.5,1")
    p.add_argument("--lambda-task-grid", default="1")
    p.add_argument("--fusions", default="auto,gan")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return args.handler(args)
    except (ConfigError, DatasetError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"\n[X] Error: {e}")
        return EXIT_CONFIG
    except FuselabError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=args.verbose)
        print(f"\n[X] Error: {e}")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("\n\n[!] Interrupted by user")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
