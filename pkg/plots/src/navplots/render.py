"""The four figure kinds. All rendering is pinned to the Agg backend
with fixed sizes so fixture inputs reproduce pixel-identical images."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import (
    read_dataset,
    read_distance_csv,
    read_jsonl,
    read_ltm_csv,
    read_sweep_csv,
    read_trajectory_jsonl,
    read_world,
)

SAVEFIG_KW = dict(dpi=100, metadata={"Software": None})

RETAINED_COLOR = "tab:orange"
FORGOTTEN_COLOR = "tab:green"


def _save(fig, out_path):
    fig.savefig(out_path, **SAVEFIG_KW)
    plt.close(fig)


def plot_sweep(csv_path, out_path, metric: str = "pr") -> None:
    """Metric vs forgetting fraction, one line per difficulty."""
    rows = read_sweep_csv(csv_path)
    if metric not in ("sr", "spl", "pr", "ppl"):
        raise ValueError(f"unknown metric {metric!r}")
    by_difficulty = defaultdict(list)
    for row in rows:
        by_difficulty[int(row["difficulty"])].append((float(row["p"]), float(row[metric])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for difficulty in sorted(by_difficulty):
        pts = sorted(by_difficulty[difficulty])
        ax.plot([p for p, _ in pts], [v for _, v in pts], marker="o",
                label=f"{difficulty}-goal")
    ax.set_xlabel("forgetting fraction")
    ax.set_ylabel(metric.upper())
    ax.set_ylim(bottom=0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path)


def plot_disthist(csv_path, out_path, bin_width: float = 0.5,
                  value_range: tuple[float, float] = (0.0, 8.0)) -> None:
    """Histogram grid: five distance metrics across goal indices, with
    retained and forgotten node populations overlaid."""
    rows = read_distance_csv(csv_path)
    goal_indices = sorted({int(r["goal_index"]) for r in rows}) or [1]
    metrics = ["m_a", "m_b", "m_c", "m_d", "m_e"]
    titles = ["to agent", "to goal", "to oracle path",
              "to path half near agent", "to path half near goal"]
    edges = np.arange(value_range[0], value_range[1] + bin_width, bin_width)
    fig, axes = plt.subplots(
        len(goal_indices), len(metrics),
        figsize=(3 * len(metrics), 2.4 * len(goal_indices)),
        squeeze=False,
    )
    for gi_pos, gi in enumerate(goal_indices):
        for mi, metric in enumerate(metrics):
            ax = axes[gi_pos][mi]
            for status, color in (("forgotten", FORGOTTEN_COLOR),
                                  ("retained", RETAINED_COLOR)):
                wanted = "forgotten" if status == "forgotten" else "active"
                values = [
                    float(r[metric]) for r in rows
                    if int(r["goal_index"]) == gi and r["status"] == wanted
                    and np.isfinite(float(r[metric]))
                ]
                ax.hist(values, bins=edges, alpha=0.55, color=color, label=status)
            if gi_pos == 0:
                ax.set_title(titles[mi], fontsize=9)
            if mi == 0:
                ax.set_ylabel(f"goal {gi}")
            ax.tick_params(labelsize=7)
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)


def plot_ltm(csv_path, out_path) -> None:
    """L2 distance between consecutive LTM states over each episode,
    with goal-switch boundaries marked."""
    rows = read_ltm_csv(csv_path)
    by_episode = defaultdict(list)
    for row in rows:
        by_episode[int(row["episode"])].append(
            (int(row["step"]), int(row["goal_index"]), float(row["ltm_delta_l2"])))
    episodes = sorted(by_episode)
    fig, axes = plt.subplots(max(1, len(episodes)), 1,
                             figsize=(7, 2.2 * max(1, len(episodes))),
                             squeeze=False)
    for pos, ep in enumerate(episodes):
        ax = axes[pos][0]
        seq = sorted(by_episode[ep])
        steps = [s for s, _, _ in seq]
        deltas = [d for _, _, d in seq]
        ax.plot(steps, deltas, lw=1.0)
        last_goal = None
        for s, gi, _ in seq:
            if last_goal is not None and gi != last_goal:
                ax.axvline(s, color="tab:green", ls="--", lw=0.8)
            last_goal = gi
        ax.set_ylabel(f"ep {ep}")
        ax.tick_params(labelsize=7)
    axes[-1][0].set_xlabel("step")
    fig.suptitle("LTM variation (L2 between consecutive states)", fontsize=10)
    fig.tight_layout()
    _save(fig, out_path)


def plot_trajectory(world_path, traj_path, out_path, dataset_path=None,
                    snapshots_path=None, episode: int | None = None) -> None:
    """Top-down view: occupancy, the agent's path polyline, goal
    markers (when a dataset is given), and forgotten-node markers from
    the final step's snapshot (when snapshots are given)."""
    occ, _ = read_world(world_path)
    rows = read_trajectory_jsonl(traj_path)
    if episode is None and rows:
        episode = int(rows[0]["episode"])
    rows = [r for r in rows if int(r["episode"]) == episode]
    rows.sort(key=lambda r: int(r["step"]))

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(~occ, cmap="gray", interpolation="nearest", vmin=0, vmax=1)
    if rows:
        xs = [r["pose"][0] for r in rows]
        ys = [r["pose"][1] for r in rows]
        ax.plot(xs, ys, color="tab:blue", lw=1.5, label="path")
        ax.plot(xs[0], ys[0], marker="s", color="tab:blue", ms=7)

    if dataset_path is not None:
        doc = read_dataset(dataset_path)
        for ep_doc in doc["episodes"]:
            if int(ep_doc["id"]) == episode:
                for k, (gx, gy) in enumerate(ep_doc["goals"], start=1):
                    ax.plot(gx, gy, marker="*", color="tab:red", ms=14)
                    ax.annotate(str(k), (gx, gy), fontsize=8,
                                xytext=(gx + 0.4, gy - 0.4))
                break

    if snapshots_path is not None and rows:
        final_step = int(rows[-1]["step"])
        snaps = [s for s in read_jsonl(snapshots_path)
                 if int(s.get("episode", -1)) == episode]
        final = None
        for snap in snaps:
            if int(snap["step"]) <= final_step and (final is None or snap["step"] > final["step"]):
                final = snap
        if final is not None:
            for node in final["nodes"]:
                x, y = node["pose"][0], node["pose"][1]
                if node["status"] == "forgotten":
                    ax.plot(x, y, marker="x", color="black", ms=6)
                else:
                    ax.plot(x, y, marker=".", color=RETAINED_COLOR, ms=5)

    ax.set_xticks([])
    ax.set_yticks([])
    ax.set_title(f"episode {episode}", fontsize=10)
    fig.tight_layout()
    _save(fig, out_path)
