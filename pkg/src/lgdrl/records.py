"""On-disk run artefacts: episode CSVs, intervention logs, comparison and replays."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingDataError, SchemaError
from .guardian import InterventionRecord
from .learner.trainer import EpisodeRecord
from .sim import VehicleState

EPISODES_SCHEMA = "lgdrl-episodes/1"
EPISODE_COLUMNS = (
    "episode",
    "scenario_seed",
    "return",
    "outcome",
    "steps",
    "intervention_count",
    "intervention_rate",
    "lambda",
    "mean_constraint",
)
INTERVENTION_COLUMNS = ("episode", "step", "i1", "i2", "a_drl", "a_llm", "a_applied")
COMPARE_COLUMNS = (
    "episode",
    "runs",
    "return_mean",
    "return_std",
    "success_rolling20_mean",
    "success_rolling20_std",
    "cumulative_interventions_mean",
    "cumulative_interventions_std",
    "intervention_rate_mean",
    "intervention_rate_std",
    "total_intervention_rate",
)
REPLAY_SCHEMA = "lgdrl-replay"
REPLAY_VERSION = 1
ROLLING_WINDOW = 20


def _num(x: float) -> str:
    # repr round-trips exactly and is locale independent
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


# ---------------------------------------------------------------------------
# Episodes


class EpisodeWriter:
    """Appends one row per episode and flushes, so a crashed run leaves a partial log."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._fh.write(f"# schema: {EPISODES_SCHEMA}\n")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(EPISODE_COLUMNS)
        self._fh.flush()

    def write(self, r: EpisodeRecord) -> None:
        self._csv.writerow(
            [
                r.episode,
                r.scenario_seed,
                _num(r.ret),
                r.outcome,
                r.steps,
                r.intervention_count,
                _num(r.intervention_rate),
                _num(r.lam),
                _num(r.mean_constraint),
            ]
        )
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class EpisodeTable:
    episode: np.ndarray
    returns: np.ndarray
    outcome: list[str]
    steps: np.ndarray
    interventions: np.ndarray
    intervention_rate: np.ndarray

    def __len__(self) -> int:
        return len(self.episode)


def read_episodes(path) -> EpisodeTable:
    path = Path(path)
    if not path.exists():
        raise MissingDataError(f"no episode log at {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {EPISODES_SCHEMA}":
            raise SchemaError(f"{path}: unsupported episode schema line {first!r}")
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != EPISODE_COLUMNS:
        raise SchemaError(f"{path}: unexpected columns {rows[0] if rows else []}")
    body = rows[1:]
    col = {name: [r[i] for r in body] for i, name in enumerate(EPISODE_COLUMNS)}
    return EpisodeTable(
        np.array(col["episode"], dtype=int),
        np.array(col["return"], dtype=float),
        col["outcome"],
        np.array(col["steps"], dtype=int),
        np.array(col["intervention_count"], dtype=int),
        np.array(col["intervention_rate"], dtype=float),
    )


def rolling_success(outcomes: list[str], window: int = ROLLING_WINDOW) -> np.ndarray:
    """Success fraction over the most recent ``window`` episodes (fewer at the start)."""
    hits = np.array([o == "success" for o in outcomes], dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(hits)])
    idx = np.arange(1, len(hits) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


# ---------------------------------------------------------------------------
# Interventions


class InterventionWriter:
    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(INTERVENTION_COLUMNS)

    def write(self, episode: int, rec: InterventionRecord) -> None:
        self._csv.writerow(
            [episode, rec.step, rec.i1, rec.i2, rec.a_drl.token, rec.a_llm.token, rec.a_applied.token]
        )

    def close(self) -> None:
        self._fh.close()


# ---------------------------------------------------------------------------
# Compare


def compare_runs(tables: list[EpisodeTable]) -> list[dict]:
    """Per-episode aggregates across runs; all runs must have the same length."""
    if len(tables) < 2:
        raise SchemaError("compare needs at least two runs")
    lengths = {len(t) for t in tables}
    if len(lengths) != 1:
        raise SchemaError(f"runs have different episode counts: {sorted(lengths)}")
    returns = np.stack([t.returns for t in tables])
    rolling = np.stack([rolling_success(t.outcome) for t in tables])
    cum_int = np.stack([np.cumsum(t.interventions) for t in tables]).astype(float)
    rates = np.stack([t.intervention_rate for t in tables])
    cum_steps = np.stack([np.cumsum(t.steps) for t in tables]).astype(float)
    total_rate = cum_int.sum(axis=0) / cum_steps.sum(axis=0)
    rows = []
    for e in range(lengths.pop()):
        rows.append(
            {
                "episode": int(tables[0].episode[e]),
                "runs": len(tables),
                "return_mean": returns[:, e].mean(),
                "return_std": returns[:, e].std(),
                "success_rolling20_mean": rolling[:, e].mean(),
                "success_rolling20_std": rolling[:, e].std(),
                "cumulative_interventions_mean": cum_int[:, e].mean(),
                "cumulative_interventions_std": cum_int[:, e].std(),
                "intervention_rate_mean": rates[:, e].mean(),
                "intervention_rate_std": rates[:, e].std(),
                "total_intervention_rate": total_rate[e],
            }
        )
    return rows


def write_comparison(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            w.writerow([r[c] if c in ("episode", "runs") else _num(r[c]) for c in COMPARE_COLUMNS])


# ---------------------------------------------------------------------------
# Replays


def _vehicle(v: VehicleState) -> list:
    return [v.x, v.y, v.v_x, v.v_y, v.heading, v.lane_index]


class ReplayWriter:
    """Line-delimited JSON: a header line, then one record per decision step."""

    def __init__(self, path, header: dict):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(json.dumps({"schema": REPLAY_SCHEMA, "version": REPLAY_VERSION, **header}) + "\n")

    def write(self, rec: InterventionRecord, world) -> None:
        self._fh.write(
            json.dumps(
                {
                    "step": rec.step,
                    "sim_time": world.sim_time,
                    "action": rec.a_applied.token,
                    "i1": rec.i1,
                    "i2": rec.i2,
                    "ego": _vehicle(world.ego),
                    "svs": [_vehicle(v) for v in world.svs],
                }
            )
            + "\n"
        )

    def close(self) -> None:
        self._fh.close()


def read_replay(path) -> tuple[dict, list[dict]]:
    path = Path(path)
    if not path.exists():
        raise MissingDataError(f"no replay file at {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty replay file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:] if line]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed replay line: {exc}") from exc
    if header.get("schema") != REPLAY_SCHEMA or header.get("version") != REPLAY_VERSION:
        raise SchemaError(f"{path}: unsupported replay schema {header.get('schema')!r} v{header.get('version')!r}")
    return header, records


def replay_path(run_dir, episode: int, kind: str = "train") -> Path:
    return Path(run_dir) / "replays" / f"{kind}_episode_{episode:04d}.jsonl"
