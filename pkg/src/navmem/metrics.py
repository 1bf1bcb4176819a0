"""Evaluation metrics and the per-node distance analysis.

Progress is the fraction of an episode's ordered goals reached; its
path-weighted form multiplies by oracle_length / max(agent_length,
oracle_length) and averages over episodes. Success-weighted path length
is the same formula with the full-success indicator, so the two agree
exactly on 1-goal episodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .agent import EpisodeResult, Outcome
from .gridworld import GridWorld, bfs_distance_field, shortest_path


@dataclass
class MetricsRecord:
    episode_id: int
    difficulty: int
    success: bool
    progress: float
    agent_path_len: float  # p_i
    oracle_len: float  # l_i
    spl: float
    ppl: float
    steps: int
    outcome: str


def path_weight(progress: float, oracle_len: float, agent_len: float) -> float:
    if oracle_len <= 0:
        raise ValueError(f"oracle length must be positive, got {oracle_len}")
    if agent_len < 0:
        raise ValueError(f"agent path length must be >= 0, got {agent_len}")
    return progress * oracle_len / max(agent_len, oracle_len)


def compute_progress(goal_outcomes: list[bool]) -> float:
    if not goal_outcomes:
        raise ValueError("progress needs at least one goal outcome")
    return sum(goal_outcomes) / len(goal_outcomes)


def episode_metrics(result: EpisodeResult, oracle_len: float, difficulty: int) -> MetricsRecord:
    progress = compute_progress(result.goals_reached)
    success = result.outcome is Outcome.SUCCESS
    return MetricsRecord(
        episode_id=result.episode_id,
        difficulty=difficulty,
        success=success,
        progress=progress,
        agent_path_len=result.agent_path_len,
        oracle_len=oracle_len,
        spl=path_weight(1.0 if success else 0.0, oracle_len, result.agent_path_len),
        ppl=path_weight(progress, oracle_len, result.agent_path_len),
        steps=result.steps,
        outcome=result.outcome.value,
    )


def compute_ppl(records: list[MetricsRecord]) -> float:
    """Mean over episodes of progress * l_i / max(p_i, l_i)."""
    if not records:
        raise ValueError("no records")
    return float(np.mean([path_weight(r.progress, r.oracle_len, r.agent_path_len) for r in records]))


def compute_spl(records: list[MetricsRecord]) -> float:
    if not records:
        raise ValueError("no records")
    return float(np.mean([
        path_weight(1.0 if r.success else 0.0, r.oracle_len, r.agent_path_len) for r in records
    ]))


def aggregate(records: list[MetricsRecord]) -> dict:
    return {
        "episodes": len(records),
        "sr": float(np.mean([1.0 if r.success else 0.0 for r in records])),
        "spl": compute_spl(records),
        "pr": float(np.mean([r.progress for r in records])),
        "ppl": compute_ppl(records),
    }


METRICS_CSV_COLUMNS = [
    "episode", "difficulty", "progress", "spl", "ppl", "p_i", "l_i", "steps", "outcome",
]


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_COLUMNS)
        for r in sorted(records, key=lambda r: r.episode_id):
            writer.writerow([
                r.episode_id, r.difficulty,
                f"{r.progress:.6f}", f"{r.spl:.6f}", f"{r.ppl:.6f}",
                f"{r.agent_path_len:.6f}", f"{r.oracle_len:.6f}",
                r.steps, r.outcome,
            ])


# ---------------------------------------------------------------------------
# Per-node distance metrics for the forgetting analysis.
# ---------------------------------------------------------------------------

DISTANCE_CSV_COLUMNS = [
    "episode", "goal_index", "step", "node_id", "status", "m_a", "m_b", "m_c", "m_d", "m_e",
]


def distance_metrics(
    world: GridWorld,
    node_cells: dict[int, tuple[int, int]],
    agent_cell: tuple[int, int],
    goal_cell: tuple[int, int],
    oracle_path: list[tuple[int, int]],
    geodesic: bool = True,
) -> dict[int, tuple[float, float, float, float, float]]:
    """Five distances per node, in meters:
      (a) to the agent, (b) to the goal, (c) to the oracle path,
      (d) to the path half nearer the agent, (e) to the half nearer the
      goal. The split is at the geodesic midpoint, ties to the agent
      half. Geodesic (BFS) by default; Euclidean behind the flag.
    """
    if not oracle_path:
        raise ValueError("oracle path must be nonempty")
    n_cells = len(oracle_path)
    split = (n_cells + 1) // 2
    agent_half = oracle_path[:split]
    goal_half = oracle_path[split:] or [oracle_path[-1]]
    cs = world.cell_size

    if geodesic:
        fields = {
            "a": bfs_distance_field(world, agent_cell),
            "b": bfs_distance_field(world, goal_cell),
            "c": bfs_distance_field(world, oracle_path),
            "d": bfs_distance_field(world, agent_half),
            "e": bfs_distance_field(world, goal_half),
        }

        def dist(field, cell):
            d = field[cell[1], cell[0]]
            return float(d) * cs if d >= 0 else float("inf")

        out = {}
        for node_id, cell in node_cells.items():
            out[node_id] = tuple(dist(fields[k], cell) for k in "abcde")
        return out

    def euclid(cell, targets):
        t = np.asarray(targets, dtype=float)
        c = np.asarray(cell, dtype=float)
        return float(np.min(np.hypot(*(t - c).T))) * cs

    out = {}
    for node_id, cell in node_cells.items():
        out[node_id] = (
            euclid(cell, [agent_cell]),
            euclid(cell, [goal_cell]),
            euclid(cell, oracle_path),
            euclid(cell, agent_half),
            euclid(cell, goal_half),
        )
    return out


def oracle_path_for(world: GridWorld, agent_cell: tuple[int, int], goal_cell: tuple[int, int]):
    _, path = shortest_path(world, agent_cell, goal_cell)
    return path


# ---------------------------------------------------------------------------
# Histogram with left-closed right-open bins and an out-of-range bin.
# ---------------------------------------------------------------------------


def histogram(values, bin_width: float, value_range: tuple[float, float]) -> np.ndarray:
    """Counts per bin [lo + k*w, lo + (k+1)*w); the final extra bin
    collects everything outside the range, so counts always sum to the
    input size."""
    if bin_width <= 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    lo, hi = value_range
    if hi <= lo:
        raise ValueError(f"empty range {value_range}")
    n_bins = int(np.ceil((hi - lo) / bin_width))
    counts = np.zeros(n_bins + 1, dtype=np.int64)
    for v in values:
        if v < lo or v >= hi:
            counts[-1] += 1
            continue
        idx = int((v - lo) / bin_width)
        counts[min(idx, n_bins - 1)] += 1
    return counts
