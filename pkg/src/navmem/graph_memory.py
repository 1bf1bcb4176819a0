"""Topological map lifecycle: the short-term memory of the agent.

Nodes hold unit-norm observation features and are localized against by
cosine similarity. The map is capacity-bounded (FIFO eviction of the
oldest non-current node), supports temporary attention-based forgetting
with full restoration, and carries the long-term-memory vector slot
that the graph encoder updates recurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConsistencyError
from .gridworld import AgentPose

DEFAULT_CAPACITY = 100
DEFAULT_SIMILARITY_THRESHOLD = 0.9


class NodeStatus(Enum):
    ACTIVE = "active"
    FORGOTTEN = "forgotten"


@dataclass
class NodeRecord:
    id: int
    feature: np.ndarray  # unit L2 norm
    pose: AgentPose
    status: NodeStatus
    created_step: int
    last_updated_step: int


@dataclass
class AttentionScores:
    """Per-active-node attention weights from the goal decoder.

    The long-term-memory slot participates in the same softmax but can
    never be forgotten, so it keeps its own score; node scores plus
    `ltm_score` sum to 1.
    """

    scores: dict[int, float]
    ltm_score: float
    step: int

    def total(self) -> float:
        return sum(self.scores.values()) + self.ltm_score

    def reconciled(self, active_ids: set[int], current_id: int) -> "AttentionScores":
        """Restrict to the given active set and renormalize.

        Between scoring (end of step t-1) and forgetting (step t) the
        active set can gain exactly one node (the new or revisited
        current node, which is exempt from forgetting anyway) and lose
        evicted ones. Filtering plus renormalization preserves the rank
        order of everything that can actually be forgotten.
        """
        kept = {i: s for i, s in self.scores.items() if i in active_ids}
        if current_id in active_ids and current_id not in kept:
            kept[current_id] = 0.0
        total = sum(kept.values()) + self.ltm_score
        if total <= 0.0:
            raise ConsistencyError("attention scores sum to zero after reconciliation")
        return AttentionScores(
            scores={i: s / total for i, s in kept.items()},
            ltm_score=self.ltm_score / total,
            step=self.step,
        )


class TopoMap:
    """Insertion-ordered node collection plus undirected edges.

    Forgetting only flips node status; edges stay recorded so that
    restoration (on revisit or on reaching a goal) reinstates the exact
    pre-forget graph. Eviction is the one permanent removal.
    """

    def __init__(
        self,
        dim: int,
        similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
        capacity: int = DEFAULT_CAPACITY,
    ):
        self.dim = dim
        self.similarity_threshold = similarity_threshold
        self.capacity = capacity
        self.nodes: dict[int, NodeRecord] = {}
        self.edges: set[tuple[int, int]] = set()
        self.current_node: int | None = None
        self._ltm = np.zeros(dim)
        self._next_id = 0

    # -- basic views --------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def active_ids(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.status is NodeStatus.ACTIVE)

    def forgotten_ids(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.status is NodeStatus.FORGOTTEN)

    def n_active(self) -> int:
        return sum(1 for n in self.nodes.values() if n.status is NodeStatus.ACTIVE)

    def neighbors(self, node_id: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == node_id:
                out.append(b)
            elif b == node_id:
                out.append(a)
        return sorted(out)

    # -- construction and localization --------------------------------

    def _add_edge(self, a: int, b: int) -> None:
        if a == b:
            return
        self.edges.add((min(a, b), max(a, b)))

    def localize_and_update(self, obs_feature: np.ndarray, pose: AgentPose, step: int) -> int:
        """Match against ALL stored nodes (active and forgotten) by
        cosine similarity. A match refreshes that node's feature and
        pose and restores it if forgotten; otherwise a new node is
        appended. The current node follows, with an edge recorded
        between consecutive current nodes."""
        norm = float(np.linalg.norm(obs_feature))
        if not math.isclose(norm, 1.0, abs_tol=1e-6):
            raise ValueError(f"observation feature must be unit-norm, got |v|={norm}")
        best_id, best_sim = None, -np.inf
        for node_id in sorted(self.nodes):
            sim = float(self.nodes[node_id].feature @ obs_feature)
            if sim > best_sim:
                best_id, best_sim = node_id, sim
        previous = self.current_node
        if best_id is not None and best_sim >= self.similarity_threshold:
            node = self.nodes[best_id]
            node.feature = obs_feature.copy()
            node.pose = pose
            node.last_updated_step = step
            if node.status is NodeStatus.FORGOTTEN:
                node.status = NodeStatus.ACTIVE
            if previous is not None and previous != best_id:
                self._add_edge(previous, best_id)
            self.current_node = best_id
            return best_id
        node_id = self._next_id
        self._next_id += 1
        self.nodes[node_id] = NodeRecord(
            id=node_id,
            feature=obs_feature.copy(),
            pose=pose,
            status=NodeStatus.ACTIVE,
            created_step=step,
            last_updated_step=step,
        )
        if previous is not None:
            self._add_edge(previous, node_id)
        self.current_node = node_id
        return node_id

    def evict_if_full(self) -> list[int]:
        """Permanently drop the oldest non-current nodes (FIFO by
        created_step) until back under capacity."""
        evicted = []
        while len(self.nodes) > self.capacity:
            victim = min(
                (n for n in self.nodes.values() if n.id != self.current_node),
                key=lambda n: (n.created_step, n.id),
            )
            del self.nodes[victim.id]
            self.edges = {(a, b) for a, b in self.edges if victim.id not in (a, b)}
            evicted.append(victim.id)
        return evicted

    # -- forgetting and restoration ------------------------------------

    def forget(self, scores: AttentionScores, fraction: float) -> list[int]:
        """Mark the floor(fraction * n_active) lowest-scored active
        nodes as forgotten. The current node is exempt; if it ranks in
        the bottom, the next-lowest node substitutes so the count is
        preserved. Ties break toward the lower node id."""
        if not 0.0 <= fraction < 1.0:
            raise ValueError(f"forget fraction must be in [0, 1), got {fraction}")
        active = set(self.active_ids())
        covered = set(scores.scores)
        if covered != active:
            raise ConsistencyError(
                f"scores cover {sorted(covered)} but active nodes are {sorted(active)}"
            )
        n = int(math.floor(fraction * len(active)))
        if n == 0:
            return []
        order = sorted(scores.scores.items(), key=lambda kv: (kv[1], kv[0]))
        forgotten = []
        for node_id, _ in order:
            if node_id == self.current_node:
                continue
            self.nodes[node_id].status = NodeStatus.FORGOTTEN
            forgotten.append(node_id)
            if len(forgotten) == n:
                break
        return forgotten

    def restore_all(self) -> int:
        count = 0
        for node in self.nodes.values():
            if node.status is NodeStatus.FORGOTTEN:
                node.status = NodeStatus.ACTIVE
                count += 1
        return count

    # -- views for the encoder -----------------------------------------

    def active_subgraph(self) -> tuple[np.ndarray, list[tuple[int, int]], list[int]]:
        """Features (rows ordered by node id ascending), active-active
        edges as id pairs, and the id ordering of the rows."""
        ordering = self.active_ids()
        if ordering:
            features = np.stack([self.nodes[i].feature for i in ordering])
        else:
            features = np.zeros((0, self.dim))
        active = set(ordering)
        edges = sorted((a, b) for a, b in self.edges if a in active and b in active)
        return features, edges, ordering

    # -- long-term memory slot ------------------------------------------

    def ltm_read(self) -> np.ndarray:
        return self._ltm.copy()

    def ltm_write(self, v: np.ndarray) -> None:
        if v.shape != (self.dim,):
            raise ValueError(f"ltm vector shape {v.shape} != ({self.dim},)")
        self._ltm = v.copy()

    def ltm_reset(self) -> None:
        self._ltm = np.zeros(self.dim)

    # -- snapshot export --------------------------------------------------

    def snapshot(self, step: int, include_features: bool = False) -> dict:
        nodes = []
        for node_id in sorted(self.nodes):
            n = self.nodes[node_id]
            rec = {
                "id": n.id,
                "pose": [n.pose.x, n.pose.y, int(n.pose.heading)],
                "status": n.status.value,
                "created_step": n.created_step,
            }
            if include_features:
                rec["feature"] = n.feature.tolist()
            nodes.append(rec)
        return {
            "step": step,
            "current_node": self.current_node,
            "nodes": nodes,
            "edges": sorted([a, b] for a, b in self.edges),
        }


def snapshot_to_json(snap: dict) -> str:
    return json.dumps(snap, separators=(",", ":"), sort_keys=True)
