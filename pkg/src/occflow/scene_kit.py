"""Scene data model, a synthetic scene generator and JSONL scene files.

Scenes produced by :func:`generate_scene` live in an arbitrary world frame;
:func:`transform_to_sdc_frame` moves them into the self-driving car's local
frame (SDC at the origin, facing +y) which both the rasterizer and the
vectorizer expect.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError, SceneFormatError, SchemaVersionError

SCHEMA_VERSION = 1
NUM_WAYPOINTS = 8
MAX_OBSERVED_AGENTS = 128
POLYLINE_KINDS = ("lane_center", "road_edge", "crosswalk")
MOTION_KINDS = ("constant_velocity", "constant_turn", "stopped")
MAP_STYLES = ("grid_roads", "single_curve", "empty")
MAX_HEADING_STEP = 0.2


@dataclass(eq=False)
class AgentTrack:
    id: int
    positions: np.ndarray
    headings: np.ndarray
    validity: np.ndarray
    length_m: float
    width_m: float
    observed_now: bool

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.headings = np.asarray(self.headings, dtype=np.float64).reshape(-1)
        self.validity = np.asarray(self.validity, dtype=bool).reshape(-1)
        n = len(self.positions)
        if len(self.headings) != n or len(self.validity) != n:
            raise DataError(f"agent {self.id}: positions/headings/validity lengths differ")
        if not (self.length_m > 0 and self.width_m > 0):
            raise DataError(f"agent {self.id}: box extents must be positive")
        self.id = int(self.id)
        self.length_m = float(self.length_m)
        self.width_m = float(self.width_m)
        self.observed_now = bool(self.observed_now)

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (
            self.id == other.id
            and self.length_m == other.length_m
            and self.width_m == other.width_m
            and self.observed_now == other.observed_now
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.headings, other.headings)
            and np.array_equal(self.validity, other.validity)
        )


@dataclass(eq=False)
class MapPolyline:
    id: int
    points: np.ndarray
    kind: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.id = int(self.id)
        if self.kind not in POLYLINE_KINDS:
            raise DataError(f"polyline {self.id}: unknown kind {self.kind!r}")
        if len(self.points) < 2:
            raise DataError(f"polyline {self.id}: needs at least 2 points")
        if np.any(np.all(np.diff(self.points, axis=0) == 0, axis=1)):
            raise DataError(f"polyline {self.id}: consecutive points must be distinct")

    def __eq__(self, other):
        if not isinstance(other, MapPolyline):
            return NotImplemented
        return (
            self.id == other.id
            and self.kind == other.kind
            and np.array_equal(self.points, other.points)
        )


@dataclass
class Scene:
    agents: list[AgentTrack]
    polylines: list[MapPolyline]
    sdc_index: int
    dt: float = 0.1
    t_hist: int = 11
    t_future: int = 80
    scene_id: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def current_index(self) -> int:
        return self.t_hist - 1

    @property
    def waypoint_stride(self) -> int:
        return self.t_future // NUM_WAYPOINTS

    @property
    def sdc(self) -> AgentTrack:
        return self.agents[self.sdc_index]

    def validate(self):
        if self.t_future % NUM_WAYPOINTS:
            raise DataError(f"t_future={self.t_future} is not divisible into {NUM_WAYPOINTS} waypoints")
        total = self.t_hist + self.t_future
        cur = self.current_index
        for a in self.agents:
            if len(a.positions) != total:
                raise DataError(f"agent {a.id}: expected {total} states, got {len(a.positions)}")
            if not a.observed_now and a.validity[: cur + 1].any():
                raise DataError(f"agent {a.id}: occluded agent has valid history")
        if not 0 <= self.sdc_index < len(self.agents):
            raise DataError(f"sdc_index {self.sdc_index} out of range")
        if not (self.sdc.observed_now and self.sdc.validity[cur]):
            raise DataError("SDC must be observed and valid at the current step")
        ids = [p.id for p in self.polylines]
        if len(set(ids)) != len(ids):
            raise DataError("polyline ids must be unique")


@dataclass
class SceneRecipe:
    num_agents: int = 16
    num_occluded: int = 2
    motion_mix: dict = field(
        default_factory=lambda: {"constant_velocity": 0.6, "constant_turn": 0.2, "stopped": 0.2}
    )
    speed_range: tuple = (2.0, 10.0)
    map_style: str = "grid_roads"
    rng_seed: int = 0
    # Extras beyond the core recipe; zero keeps every observed history complete.
    partial_history_prob: float = 0.0
    placement_radius_m: float = 35.0
    t_hist: int = 11
    t_future: int = 80
    dt: float = 0.1

    def validate(self):
        if self.num_agents < 1:
            raise ConfigError("num_agents: must be >= 1 (the SDC counts as an agent)")
        if not 0 <= self.num_occluded <= self.num_agents - 1:
            raise ConfigError("num_occluded: must lie in [0, num_agents - 1]")
        if self.num_agents - self.num_occluded > MAX_OBSERVED_AGENTS:
            raise ConfigError(f"num_agents: at most {MAX_OBSERVED_AGENTS} observed agents allowed")
        unknown = set(self.motion_mix) - set(MOTION_KINDS)
        if unknown:
            raise ConfigError(f"motion_mix: unknown motion kinds {sorted(unknown)}")
        weights = [float(self.motion_mix.get(k, 0.0)) for k in MOTION_KINDS]
        if any(w < 0 or not math.isfinite(w) for w in weights) or sum(weights) <= 0:
            raise ConfigError("motion_mix: weights must be nonnegative with a positive sum")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ConfigError("speed_range: need 0 <= low <= high")
        if self.map_style not in MAP_STYLES:
            raise ConfigError(f"map_style: expected one of {MAP_STYLES}, got {self.map_style!r}")
        if not 0 <= self.partial_history_prob <= 1:
            raise ConfigError("partial_history_prob: must lie in [0, 1]")
        if self.t_future % NUM_WAYPOINTS or self.t_hist < 2:
            raise ConfigError("t_future: must split into 8 waypoints and t_hist must be >= 2")
        if self.dt <= 0:
            raise ConfigError("dt: must be positive")


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _integrate(p0, theta0, speed, yaw_rate, times):
    """Closed-form unicycle states at ``times`` (seconds relative to now)."""
    headings = theta0 + yaw_rate * times
    if yaw_rate == 0.0:
        pos = p0 + speed * times[:, None] * np.array([math.cos(theta0), math.sin(theta0)])
    else:
        r = speed / yaw_rate
        pos = np.stack(
            [
                p0[0] + r * (np.sin(headings) - math.sin(theta0)),
                p0[1] - r * (np.cos(headings) - math.cos(theta0)),
            ],
            axis=1,
        )
    return pos, headings


def _straight(a, b, step):
    n = max(2, int(round(np.linalg.norm(np.subtract(b, a)) / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) * np.asarray(a, float) + t * np.asarray(b, float)


def _build_map(style):
    """Polylines in the scene-local frame plus lane poses for agent placement."""
    lines = []  # (kind, points)
    if style == "grid_roads":
        extent, half_lane, half_road = 60.0, 1.75, 3.5
        for c in (-40.0, 0.0, 40.0):
            for axis in (0, 1):
                for off, kind in ((-half_lane, "lane_center"), (half_lane, "lane_center"),
                                  (-half_road, "road_edge"), (half_road, "road_edge")):
                    a, b = [-extent, c + off], [extent, c + off]
                    if axis == 1:
                        a, b = a[::-1], b[::-1]
                    lines.append((kind, _straight(a, b, 4.0)))
        for cx in (-40.0, 0.0, 40.0):
            for cy in (-40.0, 0.0, 40.0):
                for sgn in (-1.0, 1.0):
                    x = cx + sgn * 6.0
                    lines.append(("crosswalk", _straight([x, cy - half_road], [x, cy + half_road], 1.75)))
    elif style == "single_curve":
        radius = 60.0
        for off, kind in ((0.0, "lane_center"), (-3.5, "road_edge"), (3.5, "road_edge")):
            ang = np.linspace(-0.9, 0.9, 41)
            r = radius + off
            pts = np.stack([r * np.sin(ang), radius - r * np.cos(ang)], axis=1)
            lines.append((kind, pts))
        lines.append(("crosswalk", _straight([15.0, -3.0], [15.0, 5.0], 2.0)))
    lanes = [pts for kind, pts in lines if kind == "lane_center"]
    return lines, lanes


def generate_scene(recipe: SceneRecipe) -> Scene:
    """Build a synthetic scene; identical recipes yield identical scenes."""
    recipe.validate()
    rng = np.random.default_rng(recipe.rng_seed)
    total = recipe.t_hist + recipe.t_future
    cur = recipe.t_hist - 1
    times = (np.arange(total) - cur) * recipe.dt

    lines, lanes = _build_map(recipe.map_style)
    weights = np.array([float(recipe.motion_mix.get(k, 0.0)) for k in MOTION_KINDS])
    weights = weights / weights.sum()
    lo, hi = recipe.speed_range

    def sample_motion():
        kind = MOTION_KINDS[rng.choice(len(MOTION_KINDS), p=weights)]
        speed = float(rng.uniform(lo, hi))
        yaw_rate = 0.0
        if kind == "stopped":
            speed = 0.0
        elif kind == "constant_turn":
            # |yaw_rate * dt| stays well under the per-step heading bound
            yaw_rate = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.4))
        return speed, yaw_rate

    def sample_pose():
        if lanes:
            lane = lanes[rng.integers(len(lanes))]
            i = int(rng.integers(len(lane) - 1))
            t = float(rng.uniform())
            p = lane[i] * (1 - t) + lane[i + 1] * t
            d = lane[i + 1] - lane[i]
            theta = math.atan2(d[1], d[0]) + (math.pi if rng.uniform() < 0.5 else 0.0)
        else:
            p = rng.uniform(-recipe.placement_radius_m, recipe.placement_radius_m, size=2)
            theta = float(rng.uniform(-math.pi, math.pi))
        return np.asarray(p, float), theta

    # scene-local frame: SDC at the origin heading +x
    starts = [(np.zeros(2), 0.0)]
    for _ in range(recipe.num_agents - 1):
        for _attempt in range(50):
            p, theta = sample_pose()
            if np.linalg.norm(p) > recipe.placement_radius_m:
                continue
            if all(np.linalg.norm(p - q) > 6.0 for q, _ in starts):
                break
        starts.append((p, theta))

    occluded = set()
    if recipe.num_occluded:
        occluded = set(rng.choice(np.arange(1, recipe.num_agents), size=recipe.num_occluded, replace=False).tolist())

    world_rot = float(rng.uniform(-math.pi, math.pi))
    world_shift = rng.uniform(-100.0, 100.0, size=2)
    R = _rot(world_rot)

    agents = []
    for idx, (p, theta) in enumerate(starts):
        speed, yaw_rate = sample_motion()
        pos, heads = _integrate(p, theta, speed, yaw_rate, times)
        validity = np.ones(total, dtype=bool)
        observed = idx not in occluded
        if not observed:
            validity[: cur + 1] = False
        elif idx != 0 and rng.uniform() < recipe.partial_history_prob:
            validity[: int(rng.integers(1, cur))] = False
        agents.append(
            AgentTrack(
                id=idx,
                positions=pos @ R.T + world_shift,
                headings=heads + world_rot,
                validity=validity,
                length_m=float(rng.uniform(3.8, 5.2)),
                width_m=float(rng.uniform(1.7, 2.1)),
                observed_now=observed,
            )
        )

    polylines = [
        MapPolyline(id=i, points=pts @ R.T + world_shift, kind=kind)
        for i, (kind, pts) in enumerate(lines)
    ]
    return Scene(
        agents=agents,
        polylines=polylines,
        sdc_index=0,
        dt=recipe.dt,
        t_hist=recipe.t_hist,
        t_future=recipe.t_future,
        scene_id=f"synth-{recipe.rng_seed}",
    )


def transform_to_sdc_frame(scene: Scene) -> Scene:
    """Rigidly move ``scene`` so the SDC sits at the origin facing +y."""
    sdc = scene.sdc
    cur = scene.current_index
    origin = sdc.positions[cur]
    angle = math.pi / 2 - sdc.headings[cur]
    R = _rot(angle)

    def move(pts):
        return (pts - origin) @ R.T

    agents = [
        AgentTrack(
            id=a.id,
            positions=move(a.positions),
            headings=a.headings + angle,
            validity=a.validity.copy(),
            length_m=a.length_m,
            width_m=a.width_m,
            observed_now=a.observed_now,
        )
        for a in scene.agents
    ]
    polylines = [MapPolyline(id=p.id, points=move(p.points), kind=p.kind) for p in scene.polylines]
    return Scene(
        agents=agents,
        polylines=polylines,
        sdc_index=scene.sdc_index,
        dt=scene.dt,
        t_hist=scene.t_hist,
        t_future=scene.t_future,
        scene_id=scene.scene_id,
    )


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "dt": scene.dt,
        "t_hist": scene.t_hist,
        "t_future": scene.t_future,
        "sdc_index": scene.sdc_index,
        "agents": [
            {
                "id": a.id,
                "length_m": a.length_m,
                "width_m": a.width_m,
                "observed_now": a.observed_now,
                "positions": a.positions.tolist(),
                "headings": a.headings.tolist(),
                "validity": a.validity.tolist(),
            }
            for a in scene.agents
        ],
        "polylines": [
            {"id": p.id, "kind": p.kind, "points": p.points.tolist()} for p in scene.polylines
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    return Scene(
        agents=[
            AgentTrack(
                id=a["id"],
                positions=np.array(a["positions"], dtype=np.float64).reshape(-1, 2),
                headings=a["headings"],
                validity=a["validity"],
                length_m=a["length_m"],
                width_m=a["width_m"],
                observed_now=a["observed_now"],
            )
            for a in d["agents"]
        ],
        polylines=[MapPolyline(id=p["id"], points=p["points"], kind=p["kind"]) for p in d["polylines"]],
        sdc_index=d["sdc_index"],
        dt=d["dt"],
        t_hist=d["t_hist"],
        t_future=d["t_future"],
        scene_id=d["scene_id"],
    )


def save_scenes(scenes: Iterable[Scene], path) -> None:
    # json emits the shortest round-tripping repr for floats
    with open(path, "w", encoding="utf-8") as f:
        for s in scenes:
            f.write(json.dumps(scene_to_dict(s), separators=(",", ":")))
            f.write("\n")


def load_scenes(path) -> list[Scene]:
    scenes = []
    with open(Path(path), encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"malformed JSON ({exc.msg})", line=lineno) from exc
            try:
                scenes.append(scene_from_dict(d))
            except SchemaVersionError as exc:
                raise SchemaVersionError(str(exc), line=lineno) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise SceneFormatError(f"invalid scene record ({exc})", line=lineno) from exc
    return scenes
