"""Command line: ``lgdrl train | eval | compare | replay``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config, override
from .errors import ConfigError, LgdrlError
from .guardian import InterventionMode
from .learner.agent import Algorithm

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgdrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run per seed")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--algo", choices=[a.value for a in Algorithm])
    p.add_argument("--expert", choices=["oracle", "llm"])
    p.add_argument("--mode", choices=[m.value for m in InterventionMode], help="guardian intervention mode")
    p.add_argument("--seeds", type=_seed_list)
    p.add_argument("--episodes", type=int, help="override trainer.max_episodes")
    p.add_argument("--out", type=Path, help="override out_dir")
    p.add_argument("--label", help="override the run label (default: config label)")
    p.add_argument("--capture-replay", type=_seed_list, metavar="EPISODES", help="training episodes to record")
    p.add_argument("--workers", type=int, default=1, help="parallel seed workers")

    p = sub.add_parser("eval", help="greedy evaluation of a trained run")
    p.add_argument("--run", required=True, type=Path, help="seed run directory")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int, help="evaluation master seed")
    p.add_argument("--js-against", choices=["oracle", "llm"], help="write per-step JS gap vs this expert")
    p.add_argument("--replay-out", type=Path, help="directory for per-episode replay files")
    p.add_argument("--out", type=Path, help="output directory (default RUN/eval)")

    p = sub.add_parser("compare", help="aggregate runs into one comparison CSV")
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("replay", help="export (and optionally re-simulate) a captured episode")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--episode", required=True, type=int)
    p.add_argument("--kind", choices=["train", "eval"], default="train")
    p.add_argument("--out", type=Path)
    p.add_argument("--verify", action="store_true", help="re-simulate and report the max ego deviation")
    return parser


def cmd_train(args) -> int:
    from .harness import train_seeds

    cfg = load_config(args.config)
    trainer = override(cfg.trainer, algorithm=args.algo, max_episodes=args.episodes)
    cfg = override(
        cfg,
        trainer=trainer,
        seeds=args.seeds,
        out_dir=str(args.out) if args.out else None,
        label=args.label,
        capture_replay=args.capture_replay,
        guardian=override(cfg.guardian, mode=InterventionMode(args.mode) if args.mode else None),
        expert=override(cfg.expert, kind=args.expert),
    )
    summaries = train_seeds(cfg, args.workers)
    for s in summaries:
        print(
            f"{s['label']} seed {s['seed']}: {s['episodes']} episodes, "
            f"final rolling-20 success {s['final_rolling20_success']:.2f}, "
            f"intervention rate {s['total_intervention_rate']:.4f}"
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import evaluate_run

    result = evaluate_run(args.run, args.episodes, args.seed, args.js_against, args.replay_out, args.out)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    from .harness import compare

    print(json.dumps(compare(args.runs, args.out), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_replay(args) -> int:
    from .harness import export_replay, verify_replay

    path = export_replay(args.run, args.episode, args.out, args.kind)
    print(path)
    if args.verify:
        deviation = verify_replay(path)
        print(f"max ego deviation after re-simulation: {deviation:.3e}")
        return EXIT_OK if deviation <= 1e-9 else EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "replay": cmd_replay}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LgdrlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
