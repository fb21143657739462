"""Run orchestration behind the CLI: train, evaluate, compare and replay."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .actions import ActionId
from .config import RunConfig, config_hash, from_dict, load_config, save_config, to_dict
from .env import EnvConfig, HighwayEnv, Outcome
from .errors import MissingDataError
from .expert import ExpertPolicy, LlmExpert, OracleExpert
from .guardian import Guardian, InterventionMode, build_schedule
from .learner.agent import Agent, AdamState, Algorithm
from .learner.trainer import SeedStreams, evaluate, train
from .nn import load_params, save_params
from .records import (
    EpisodeWriter,
    InterventionWriter,
    ReplayWriter,
    compare_runs,
    read_episodes,
    read_replay,
    replay_path,
    rolling_success,
    write_comparison,
)

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = "lgdrl-summary/1"
# algorithms that never take expert actions during interaction
UNGUIDED = (Algorithm.VANILLA_SAC, Algorithm.SAC_DEMO)


def run_dir_for(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / cfg.label / f"seed_{seed}"


def make_expert(cfg: RunConfig, run_dir: Optional[Path] = None) -> ExpertPolicy:
    settings = cfg.expert
    if settings.kind == "oracle":
        return OracleExpert(settings.oracle, settings.kappa)
    llm = dataclasses.replace(settings.llm, kappa=settings.kappa)
    if llm.cache_enabled and llm.cache_path is None and run_dir is not None:
        llm = dataclasses.replace(llm, cache_path=str(run_dir / "llm_cache.jsonl"))
    return LlmExpert(llm, settings.oracle)


def guardian_mode(cfg: RunConfig) -> InterventionMode:
    if cfg.trainer.algorithm in UNGUIDED:
        return InterventionMode.OFF
    return cfg.guardian.mode


def _env_header(cfg: RunConfig) -> dict:
    return to_dict(cfg.env_config())


# ---------------------------------------------------------------------------
# Training


def train_one(cfg: RunConfig, seed: int) -> dict:
    """Train one seed, writing all artefacts into its run directory; returns the summary."""
    run_dir = run_dir_for(cfg, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(dataclasses.replace(cfg, seeds=(seed,)), run_dir / "config.toml")
    streams = SeedStreams.from_master(seed)
    episodes = cfg.trainer.max_episodes

    mode = guardian_mode(cfg)
    gcfg = dataclasses.replace(cfg.guardian, mode=mode)
    schedule_seed = gcfg.schedule_seed if gcfg.schedule_seed is not None else streams.draw_seed(streams.schedule)
    schedule = build_schedule(gcfg, episodes, schedule_seed)
    (run_dir / "permitted_episodes.json").write_text(
        json.dumps({"mode": mode.value, "schedule_seed": schedule_seed, "episodes": sorted(schedule)}) + "\n"
    )
    guardian = Guardian(gcfg, schedule)
    env = HighwayEnv(cfg.env_config())
    expert = make_expert(cfg, run_dir)

    summary = {
        "schema": SUMMARY_SCHEMA,
        "status": "running",
        "label": cfg.label,
        "algorithm": cfg.trainer.algorithm.value,
        "expert": cfg.expert.kind,
        "guardian_mode": mode.value,
        "seed": seed,
        "config_hash": config_hash(cfg),
        "code_version": __version__,
    }
    capture = set(cfg.capture_replay)
    replays: dict[int, ReplayWriter] = {}
    interventions = InterventionWriter(run_dir / "interventions.csv")
    timing = open(run_dir / "timing.csv", "w", encoding="utf-8", newline="")
    timing.write("episode,wall_seconds\n")
    records = []

    def on_start(episode, scenario_seed, world):
        if episode in capture:
            path = replay_path(run_dir, episode)
            path.parent.mkdir(exist_ok=True)
            replays[episode] = ReplayWriter(
                path, {"source": "train", "episode": episode, "scenario_seed": scenario_seed, "env": _env_header(cfg)}
            )

    def on_step(episode, rec, world):
        interventions.write(episode, rec)
        if episode in replays:
            replays[episode].write(rec, world)

    def on_episode(record):
        records.append(record)
        writer.write(record)
        timing.write(f"{record.episode},{record.wall_seconds:.6f}\n")
        timing.flush()
        if record.episode in replays:
            replays.pop(record.episode).close()
        if (record.episode + 1) % 10 == 0:
            tail = [r.outcome for r in records[-20:]]
            log.info(
                "%s seed %d episode %d: rolling-20 success %.2f, lambda %.4f",
                cfg.label, seed, record.episode + 1, tail.count("success") / len(tail), record.lam,
            )

    started = time.perf_counter()
    writer = EpisodeWriter(run_dir / "episodes.csv")
    try:
        result = train(
            env, expert, guardian, cfg.trainer, seed,
            on_episode=on_episode, on_step=on_step, on_episode_start=on_start, streams=streams,
        )
    except BaseException as exc:
        summary.update(status="failed", error=f"{type(exc).__name__}: {exc}", episodes=len(records))
        _write_json(run_dir / "summary.json", summary)
        raise
    finally:
        writer.close()
        interventions.close()
        timing.close()
        for r in replays.values():
            r.close()

    save_checkpoint(result.agent, run_dir / "checkpoint", cfg, len(records))
    steps = sum(r.steps for r in records)
    n_int = sum(r.intervention_count for r in records)
    outcomes = [r.outcome for r in records]
    summary.update(
        status="completed",
        episodes=len(records),
        total_steps=steps,
        total_interventions=n_int,
        total_intervention_rate=n_int / steps,
        permitted_episodes=len(schedule),
        final_lambda=result.agent.lam,
        final_rolling20_success=float(rolling_success(outcomes)[-1]),
        success_rate=outcomes.count(Outcome.SUCCESS.value) / len(outcomes),
        collision_rate=outcomes.count(Outcome.COLLISION.value) / len(outcomes),
    )
    _write_json(run_dir / "summary.json", summary)
    (run_dir / "run_timing.json").write_text(json.dumps({"wall_seconds": time.perf_counter() - started}) + "\n")
    return summary


def _train_worker(args):
    cfg, seed = args
    return train_one(cfg, seed)


def train_seeds(cfg: RunConfig, workers: int = 1) -> list[dict]:
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers <= 1 or len(jobs) == 1:
        return [train_one(c, s) for c, s in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_worker, jobs))


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(agent: Agent, directory: Path, cfg: RunConfig, episodes: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_params(agent.actor, directory / "actor.bin")
    for i, critic in enumerate(agent.critics):
        save_params(critic, directory / f"critic{i}.bin")
    meta = {
        "config_hash": config_hash(cfg),
        "algorithm": cfg.trainer.algorithm.value,
        "lambda": agent.lam,
        "episodes": episodes,
        "updates": agent.updates,
        "obs_dim": agent.obs_dim,
        "n_actions": agent.actor.output_size,
        "hidden_sizes": list(cfg.trainer.hidden_sizes),
    }
    _write_json(directory / "meta.json", meta)


def load_agent(run_dir: Path, cfg: RunConfig) -> Agent:
    """Rebuild an agent from a run directory's checkpoint; sizes must match the config."""
    directory = Path(run_dir) / "checkpoint"
    if not (directory / "actor.bin").exists():
        raise MissingDataError(f"no checkpoint in {directory}")
    env_cfg = cfg.env_config()
    obs_dim = HighwayEnv(env_cfg).obs_dim
    actor = load_params(directory / "actor.bin", input_size=obs_dim, output_size=HighwayEnv.n_actions)
    critics = [
        load_params(directory / f"critic{i}.bin", input_size=obs_dim, output_size=HighwayEnv.n_actions)
        for i in range(2)
    ]
    meta = json.loads((directory / "meta.json").read_text())
    return Agent(
        cfg.trainer,
        actor,
        critics,
        [c.copy() for c in critics],
        AdamState.for_params(actor, cfg.trainer.learning_rate),
        [AdamState.for_params(c, cfg.trainer.learning_rate) for c in critics],
        float(meta.get("lambda", 0.0)),
        int(meta.get("updates", 0)),
    )


# ---------------------------------------------------------------------------
# Evaluation


def eval_seeds(master: int, episodes: int) -> list[int]:
    streams = SeedStreams.from_master(master)
    return [streams.draw_seed(streams.scenario) for _ in range(episodes)]


def evaluate_run(
    run_dir: Path,
    episodes: Optional[int] = None,
    seed: Optional[int] = None,
    js_against: Optional[str] = None,
    replay_out: Optional[Path] = None,
    out: Optional[Path] = None,
) -> dict:
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.toml")
    agent = load_agent(run_dir, cfg)
    n = episodes or cfg.eval.episodes
    master = cfg.eval.seed if seed is None else seed
    seeds = eval_seeds(master, n)
    env = HighwayEnv(cfg.env_config())
    reference = None
    if js_against == "oracle":
        reference = OracleExpert(cfg.expert.oracle, cfg.expert.kappa)
    elif js_against == "llm":
        reference = make_expert(dataclasses.replace(cfg, expert=dataclasses.replace(cfg.expert, kind="llm")), run_dir)

    writers: dict[int, ReplayWriter] = {}
    if replay_out is not None:
        Path(replay_out).mkdir(parents=True, exist_ok=True)

    def on_start(episode, scenario_seed, world):
        if replay_out is not None:
            writers[episode] = ReplayWriter(
                Path(replay_out) / f"eval_episode_{episode:04d}.jsonl",
                {"source": "eval", "episode": episode, "scenario_seed": scenario_seed, "env": _env_header(cfg)},
            )

    def on_step(episode, rec, world):
        if episode in writers:
            writers[episode].write(rec, world)

    try:
        result = evaluate(agent, env, seeds, reference, on_step=on_step, on_episode_start=on_start)
    finally:
        for w in writers.values():
            w.close()

    out_dir = Path(out) if out is not None else run_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = {"eval_seed": master, **result.metrics()}
    _write_json(out_dir / "metrics.json", metrics)
    if result.js_gap:
        with open(out_dir / "js_gap.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "step", "js"])
            for ep, step, g in result.js_gap:
                w.writerow([ep, step, repr(float(g))])
            w.writerow(["mean", "", repr(float(np.mean([g for _, _, g in result.js_gap])))])
    latency = {"policy_latency_ms": result.policy_latency * 1e3, "decisions": int(sum(r.steps for r in result.episodes))}
    _write_json(out_dir / "latency.json", latency)
    return {**metrics, **latency}


# ---------------------------------------------------------------------------
# Compare


def expand_run_dirs(paths: Sequence[Path]) -> list[Path]:
    """Accept seed directories directly, or label directories holding ``seed_*``."""
    runs: list[Path] = []
    for p in map(Path, paths):
        if (p / "episodes.csv").exists():
            runs.append(p)
            continue
        children = sorted(c for c in p.glob("seed_*") if (c / "episodes.csv").exists())
        if not children:
            raise MissingDataError(f"{p}: no episodes.csv here or in seed_* subdirectories")
        runs.extend(children)
    return runs


def compare(paths: Sequence[Path], out: Path) -> dict:
    runs = expand_run_dirs(paths)
    rows = compare_runs([read_episodes(r / "episodes.csv") for r in runs])
    write_comparison(rows, out)
    last = rows[-1]
    return {
        "runs": len(runs),
        "episodes": len(rows),
        "final_rolling20_success_mean": last["success_rolling20_mean"],
        "final_rolling20_success_std": last["success_rolling20_std"],
        "total_intervention_rate": last["total_intervention_rate"],
    }


# ---------------------------------------------------------------------------
# Replay


def export_replay(run_dir: Path, episode: int, out: Optional[Path] = None, kind: str = "train") -> Path:
    """Copy a captured replay out of a run, checking its schema on the way."""
    src = replay_path(run_dir, episode, kind)
    if not src.exists():
        raise MissingDataError(f"episode {episode} was not captured in {run_dir} (expected {src})")
    read_replay(src)
    if out is None:
        return src
    Path(out).write_text(src.read_text(encoding="utf-8"), encoding="utf-8")
    return Path(out)


def verify_replay(path: Path) -> float:
    """Re-simulate the recorded actions; returns the max abs ego-state deviation."""
    header, records = read_replay(path)
    env_cfg = from_dict(EnvConfig, header["env"])
    env = HighwayEnv(env_cfg)
    env.reset(int(header["scenario_seed"]))
    worst = 0.0
    for rec in records:
        env.step(ActionId.from_token(rec["action"]))
        ego = env.snapshot().ego
        state = [ego.x, ego.y, ego.v_x, ego.v_y, ego.heading, ego.lane_index]
        worst = max(worst, float(np.max(np.abs(np.subtract(state, rec["ego"])))))
    return worst


def _write_json(path: Path, data: dict) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v

    path.write_text(json.dumps({k: clean(v) for k, v in data.items()}, indent=2, sort_keys=True) + "\n")
