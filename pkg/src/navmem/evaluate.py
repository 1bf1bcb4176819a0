"""Dataset evaluation: fan-out over episodes, deterministic merge.

Episodes are independent given read-only parameters, so the worker
count only controls wall-clock; results are merged by episode id and
are byte-identical for any worker count.
"""

from __future__ import annotations

import json
import multiprocessing as mp
import os
from dataclasses import dataclass

from .agent import AgentConfig, EpisodeResult, StepRecord, run_episode
from .episodes import EpisodeSpec, load_dataset, oracle_length
from .gridworld import GridWorld, load_world
from .metrics import MetricsRecord, aggregate, episode_metrics
from .tensor import ParamStore


def record_to_obj(rec: StepRecord) -> dict:
    obj = {
        "episode": rec.episode_id,
        "goal_index": rec.goal_index + 1,  # 1-based in files
        "step": rec.step,
        "pose": [rec.pose.x, rec.pose.y, int(rec.pose.heading)],
        "action": int(rec.action),
        "n_active": rec.n_active,
        "forgotten_ids": rec.forgotten_ids,
        "ltm_delta_l2": round(rec.ltm_delta_l2, 12),
    }
    if rec.stm_scores is not None:
        obj["stm_scores"] = {str(k): round(v, 12) for k, v in sorted(rec.stm_scores.items())}
    return obj


def write_trajectory_jsonl(path, results: list[EpisodeResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in sorted(results, key=lambda r: r.episode_id):
            for rec in result.records:
                fh.write(json.dumps(record_to_obj(rec), sort_keys=True) + "\n")


def write_snapshots_jsonl(path, results: list[EpisodeResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in sorted(results, key=lambda r: r.episode_id):
            for snap in result.snapshots or []:
                fh.write(json.dumps(snap, sort_keys=True) + "\n")


def load_worlds_for(header: dict, dataset_path) -> list[GridWorld]:
    base = os.path.dirname(os.path.abspath(dataset_path))
    worlds = []
    for rel in header["world_files"]:
        path = rel if os.path.isabs(rel) else os.path.join(base, rel)
        worlds.append(load_world(path))
    return worlds


@dataclass
class EvalJob:
    worlds: list[GridWorld]
    episodes: list[EpisodeSpec]
    params: ParamStore
    config: AgentConfig
    seed: int
    record_snapshots: bool = False


_JOB: EvalJob | None = None


def _init_worker(job: EvalJob) -> None:
    global _JOB
    _JOB = job


def _run_one(idx: int) -> tuple[MetricsRecord, EpisodeResult]:
    job = _JOB
    spec = job.episodes[idx]
    world = job.worlds[spec.world_index]
    result = run_episode(
        world, spec.start, spec.goals, job.params, job.config,
        seed=job.seed, episode_id=spec.episode_id,
        record_snapshots=job.record_snapshots,
    )
    length, _ = oracle_length(world, spec)
    return episode_metrics(result, length, spec.difficulty), result


def evaluate_episodes(
    worlds: list[GridWorld],
    episodes: list[EpisodeSpec],
    params: ParamStore,
    config: AgentConfig,
    seed: int = 0,
    workers: int = 1,
    record_snapshots: bool = False,
) -> tuple[list[MetricsRecord], list[EpisodeResult]]:
    job = EvalJob(worlds, episodes, params, config, seed, record_snapshots)
    indices = list(range(len(episodes)))
    if workers <= 1:
        _init_worker(job)
        pairs = [_run_one(i) for i in indices]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        with ctx.Pool(workers, initializer=_init_worker, initargs=(job,)) as pool:
            pairs = pool.map(_run_one, indices)
    pairs.sort(key=lambda pr: pr[0].episode_id)
    return [p[0] for p in pairs], [p[1] for p in pairs]


def evaluate_dataset(
    dataset_path,
    params: ParamStore,
    config: AgentConfig,
    seed: int = 0,
    workers: int = 1,
    record_snapshots: bool = False,
):
    header, episodes = load_dataset(dataset_path)
    worlds = load_worlds_for(header, dataset_path)
    records, results = evaluate_episodes(
        worlds, episodes, params, config, seed=seed, workers=workers,
        record_snapshots=record_snapshots,
    )
    return header, records, results, aggregate(records)
