"""Padded road/agent vector sets in the SDC frame.

Each row is ``(x1, y1, cos1, sin1, x2, y2, cos2, sin2, id)``: the start and
end point of one segment with their headings, plus the dense id of the
element (agent track or map polyline) it belongs to.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .raster_gt import GridSpec, world_to_grid
from .scene_kit import Scene

VECTOR_DIM = 9


@dataclass(frozen=True)
class VectorConfig:
    max_road_vectors: int = 10000
    max_agents: int = 128
    vectors_per_agent: int = 10


@dataclass
class VectorSet:
    road: np.ndarray  # [N_R, 9]
    road_valid: np.ndarray  # [N_R]
    agents: np.ndarray  # [max_agents * vectors_per_agent, 9]
    agents_valid: np.ndarray
    element_count: int
    agent_ids: np.ndarray  # [max_agents] source track id per row block, -1 if empty

    @property
    def rows(self) -> np.ndarray:
        return np.concatenate([self.road, self.agents], axis=0)

    @property
    def rows_valid(self) -> np.ndarray:
        return np.concatenate([self.road_valid, self.agents_valid], axis=0)


def _segment_rows(points, headings, eid):
    n = len(points) - 1
    rows = np.empty((n, VECTOR_DIM), dtype=np.float64)
    rows[:, 0:2] = points[:-1]
    rows[:, 2] = np.cos(headings[:-1])
    rows[:, 3] = np.sin(headings[:-1])
    rows[:, 4:6] = points[1:]
    rows[:, 6] = np.cos(headings[1:])
    rows[:, 7] = np.sin(headings[1:])
    rows[:, 8] = eid
    return rows


def vectorize_scene(scene: Scene, config: VectorConfig = VectorConfig()) -> VectorSet:
    """Vectorize observed agent histories and map polylines of an SDC-frame scene."""
    cur = scene.current_index
    per_agent = config.vectors_per_agent
    road = np.zeros((config.max_road_vectors, VECTOR_DIM), dtype=np.float32)
    road_valid = np.zeros(config.max_road_vectors, dtype=np.float32)
    agents = np.zeros((config.max_agents * per_agent, VECTOR_DIM), dtype=np.float32)
    agents_valid = np.zeros(config.max_agents * per_agent, dtype=np.float32)
    agent_ids = np.full(config.max_agents, -1, dtype=np.int64)

    hist = slice(cur - per_agent, cur + 1)
    candidates = []
    for a in scene.agents:
        if not a.observed_now:
            continue
        valid = a.validity[hist]
        seg_valid = valid[:-1] & valid[1:]
        if seg_valid.any():
            candidates.append((float(np.hypot(*a.positions[cur])), a.id, a, seg_valid))
    candidates.sort(key=lambda c: (c[0], c[1]))
    if len(candidates) > config.max_agents:
        warnings.warn(
            f"scene {scene.scene_id}: {len(candidates)} observed agents, keeping the "
            f"{config.max_agents} nearest the SDC",
            stacklevel=2,
        )
        candidates = candidates[: config.max_agents]

    eid = 0
    for slot, (_, _, a, seg_valid) in enumerate(candidates):
        rows = _segment_rows(a.positions[hist], a.headings[hist], eid)
        rows[~seg_valid] = 0.0
        block = slice(slot * per_agent, (slot + 1) * per_agent)
        agents[block] = rows
        agents_valid[block] = seg_valid
        agent_ids[slot] = a.id
        eid += 1

    polys = sorted(
        scene.polylines,
        key=lambda p: (float(np.min(np.hypot(p.points[:, 0], p.points[:, 1]))), p.id),
    )
    filled = 0
    total = sum(len(p.points) - 1 for p in polys)
    if total > config.max_road_vectors:
        warnings.warn(
            f"scene {scene.scene_id}: {total} road vectors exceed the budget of "
            f"{config.max_road_vectors}; dropping the farthest",
            stacklevel=2,
        )
    for p in polys:
        room = config.max_road_vectors - filled
        if room <= 0:
            break
        d = np.diff(p.points, axis=0)
        seg_heading = np.arctan2(d[:, 1], d[:, 0])
        # each point takes the direction of its outgoing segment; the last one the incoming
        heads = np.append(seg_heading, seg_heading[-1])
        rows = _segment_rows(p.points, heads, eid)[:room]
        road[filled : filled + len(rows)] = rows
        road_valid[filled : filled + len(rows)] = 1.0
        filled += len(rows)
        eid += 1

    return VectorSet(road, road_valid, agents, agents_valid, eid, agent_ids)


@dataclass
class ConsistencyReport:
    agent_ids: list[int]
    status: list[str]  # "pass", "fail" or "out_of_view"

    @property
    def passed(self) -> bool:
        return all(s != "fail" for s in self.status)


def consistency_check(vs: VectorSet, raster: np.ndarray, spec: GridSpec, per_agent: int = 10) -> ConsistencyReport:
    """Check each agent's current-time vector endpoint against the last history raster channel."""
    t_hist = raster.shape[0] - 3
    footprint = raster[t_hist - 1] > 0
    H, W = footprint.shape
    ids, status = [], []
    for slot, aid in enumerate(vs.agent_ids):
        if aid < 0:
            continue
        last = (slot + 1) * per_agent - 1
        ids.append(int(aid))
        if not vs.agents_valid[last]:
            # no segment reaches the current step; nothing to compare
            status.append("out_of_view")
            continue
        r, c = world_to_grid(vs.agents[last, 4:6].astype(np.float64), spec)
        ri, ci = int(math.floor(r + 0.5)), int(math.floor(c + 0.5))
        if ri < -1 or ri > H or ci < -1 or ci > W:
            status.append("out_of_view")
            continue
        window = footprint[max(ri - 1, 0) : ri + 2, max(ci - 1, 0) : ci + 2]
        status.append("pass" if window.any() else "fail")
    return ConsistencyReport(ids, status)
