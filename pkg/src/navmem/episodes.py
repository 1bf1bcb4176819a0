"""Multi-goal episode specs: generation under five rules, independent
validation, and the dataset file format.

The five rules for an episode's ordered goals:
  1. no obstacles in the 8-neighborhood of any goal;
  2. successive goals are 6..40 BFS cells apart (1.5..10 m);
  3. everything lives on one layer (trivially true on a single grid);
  4. start and all goals are pairwise reachable;
  5. for 2+ goals, the final goal lies within 12 BFS cells (3 m) of
     some earlier goal.
The start cell must additionally be at least 6 BFS cells from the
first goal so zero-step goals cannot occur.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import WorldUnsuitableError
from .gridworld import (
    AgentPose,
    GridWorld,
    Heading,
    bfs_distance_field,
    largest_free_component,
)

DATASET_MAGIC = "MGEP1"

MIN_SEPARATION_CELLS = 6
MAX_GOAL_GAP_CELLS = 40
RULE5_RADIUS_CELLS = 12
MIN_COMPONENT_CELLS = 100


@dataclass
class RuleThresholds:
    min_separation_cells: int = MIN_SEPARATION_CELLS
    max_goal_gap_cells: int = MAX_GOAL_GAP_CELLS
    rule5_radius_cells: int = RULE5_RADIUS_CELLS

    def as_dict(self) -> dict:
        return {
            "min_separation_cells": self.min_separation_cells,
            "max_goal_gap_cells": self.max_goal_gap_cells,
            "rule5_radius_cells": self.rule5_radius_cells,
        }


@dataclass
class EpisodeSpec:
    episode_id: int
    world_index: int
    start: AgentPose
    goals: list[tuple[int, int]]

    @property
    def difficulty(self) -> int:
        return len(self.goals)


def clear_neighborhood(world: GridWorld, cell: tuple[int, int]) -> bool:
    """Rule 1: the cell and its full 8-neighborhood are free."""
    x, y = cell
    if world.blocked(x, y):
        return False
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if world.blocked(x + dx, y + dy):
                return False
    return True


def generate_episode(
    world: GridWorld,
    n_goals: int,
    rng: np.random.Generator,
    episode_id: int = 0,
    world_index: int = 0,
    thresholds: RuleThresholds | None = None,
    max_attempts: int = 200,
    min_component_cells: int = MIN_COMPONENT_CELLS,
) -> EpisodeSpec:
    """Sample a rule-satisfying episode; deterministic given rng state."""
    if not 1 <= n_goals <= 4:
        raise ValueError(f"n_goals must be in 1..4, got {n_goals}")
    th = thresholds or RuleThresholds()
    component = largest_free_component(world)
    if len(component) < min_component_cells:
        raise WorldUnsuitableError(
            f"largest free component has {len(component)} cells; episode-bearing "
            f"worlds need >= {min_component_cells}"
        )
    free = sorted(component)
    goal_candidates = [c for c in free if clear_neighborhood(world, c)]
    if not goal_candidates:
        raise WorldUnsuitableError("no cells satisfy the goal-clearance rule")

    for _ in range(max_attempts):
        start_cell = free[int(rng.integers(0, len(free)))]
        heading = Heading(int(rng.integers(0, 4)))
        dist_prev = bfs_distance_field(world, start_cell)
        goals: list[tuple[int, int]] = []
        ok = True
        for gi in range(n_goals):
            lo = th.min_separation_cells
            hi = th.max_goal_gap_cells if gi > 0 else np.inf
            cands = [
                c for c in goal_candidates
                if c not in goals and c != start_cell
                and dist_prev[c[1], c[0]] >= lo
                and dist_prev[c[1], c[0]] <= hi
            ]
            if gi == n_goals - 1 and n_goals >= 2:
                # rule 5: final goal near some earlier goal
                fields = [bfs_distance_field(world, g) for g in goals]
                cands = [
                    c for c in cands
                    if any(0 <= f[c[1], c[0]] <= th.rule5_radius_cells for f in fields)
                ]
            if not cands:
                ok = False
                break
            pick = cands[int(rng.integers(0, len(cands)))]
            goals.append(pick)
            dist_prev = bfs_distance_field(world, pick)
        if not ok:
            continue
        spec = EpisodeSpec(
            episode_id=episode_id,
            world_index=world_index,
            start=AgentPose(start_cell[0], start_cell[1], heading),
            goals=goals,
        )
        if validate_episode(world, spec, th).all_passed:
            return spec
    raise WorldUnsuitableError(
        f"could not sample a valid {n_goals}-goal episode in {max_attempts} attempts"
    )


@dataclass
class RuleReport:
    """Rule-by-rule re-check; reports, never throws."""

    rules: dict[str, bool] = field(default_factory=dict)
    start_separation: bool = True
    details: dict[str, str] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.rules.values()) and self.start_separation


def validate_episode(world: GridWorld, spec: EpisodeSpec,
                     thresholds: RuleThresholds | None = None) -> RuleReport:
    """Independent re-check of every rule via fresh BFS runs."""
    th = thresholds or RuleThresholds()
    report = RuleReport()
    goals = spec.goals

    report.rules["rule1_goal_clearance"] = all(clear_neighborhood(world, g) for g in goals)

    rule2 = True
    for a, b in zip(goals, goals[1:]):
        if world.blocked(*a) or world.blocked(*b):
            rule2 = False
            break
        d = bfs_distance_field(world, a)[b[1], b[0]]
        if d < 0 or not th.min_separation_cells <= d <= th.max_goal_gap_cells:
            rule2 = False
            report.details["rule2"] = f"gap {a}->{b} is {d} cells"
            break
    report.rules["rule2_goal_gap"] = rule2

    report.rules["rule3_single_layer"] = True  # one grid, one layer

    points = [spec.start.cell] + goals
    rule4 = not any(world.blocked(*p) for p in points)
    if rule4:
        field_ = bfs_distance_field(world, points[0])
        rule4 = all(field_[p[1], p[0]] >= 0 for p in points)
    report.rules["rule4_reachability"] = rule4

    if len(goals) >= 2 and rule4:
        final = goals[-1]
        rule5 = False
        for g in goals[:-1]:
            d = bfs_distance_field(world, g)[final[1], final[0]]
            if 0 <= d <= th.rule5_radius_cells:
                rule5 = True
                break
        report.rules["rule5_final_near_previous"] = rule5
    else:
        report.rules["rule5_final_near_previous"] = True

    if rule4:
        d0 = bfs_distance_field(world, spec.start.cell)[goals[0][1], goals[0][0]]
        report.start_separation = d0 >= th.min_separation_cells
    else:
        report.start_separation = False
    return report


def oracle_length(world: GridWorld, spec: EpisodeSpec) -> tuple[float, list[float]]:
    """Chained BFS length start -> g1 -> ... -> gk in meters, plus the
    per-leg lengths."""
    from .gridworld import shortest_path

    legs = []
    prev = spec.start.cell
    for g in spec.goals:
        length, _ = shortest_path(world, prev, g)
        legs.append(length)
        prev = g
    return float(sum(legs)), legs


# ---------------------------------------------------------------------------
# Dataset files: header + episode list, JSON.
# ---------------------------------------------------------------------------


def save_dataset(path, world_files: list[str], episodes: list[EpisodeSpec],
                 cell_size: float, seed: int,
                 thresholds: RuleThresholds | None = None) -> None:
    th = thresholds or RuleThresholds()
    doc = {
        "format": DATASET_MAGIC,
        "world_files": list(world_files),
        "cell_size": cell_size,
        "rules": th.as_dict(),
        "seed": seed,
        "episodes": [
            {
                "id": ep.episode_id,
                "world": ep.world_index,
                "start": {"x": ep.start.x, "y": ep.start.y, "heading": int(ep.start.heading)},
                "goals": [[x, y] for x, y in ep.goals],
            }
            for ep in episodes
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> tuple[dict, list[EpisodeSpec]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != DATASET_MAGIC:
        raise ValueError(f"not a dataset file: format={doc.get('format')!r}")
    episodes = [
        EpisodeSpec(
            episode_id=e["id"],
            world_index=e.get("world", 0),
            start=AgentPose(e["start"]["x"], e["start"]["y"], Heading(e["start"]["heading"])),
            goals=[tuple(g) for g in e["goals"]],
        )
        for e in doc["episodes"]
    ]
    header = {k: doc[k] for k in doc if k != "episodes"}
    return header, episodes
