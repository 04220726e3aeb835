"""BEV rasterization of scene history and ground-truth occupancy/flow rendering.

Grid convention: fractional cell coordinates (row, col) put the center of cell
``(r, c)`` at integer ``(r, c)``. The SDC's current position is the grid
origin cell and SDC-forward (+y in the SDC frame) points toward row 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from skimage.draw import line as bresenham_line

from .errors import DataError
from .scene_kit import NUM_WAYPOINTS, POLYLINE_KINDS, Scene

OFGRID_MAGIC = b"OFGRID1\n"


@dataclass(frozen=True)
class GridSpec:
    height: int = 256
    width: int = 256
    pixels_per_meter: float = 3.2
    # waypoint occupancy = union over the interval's frames instead of the final frame
    waypoint_union: bool = False
    include_sdc: bool = True

    def __post_init__(self):
        if self.height != self.width:
            raise DataError("GridSpec: height and width must be equal")
        if not self.pixels_per_meter > 0:
            raise DataError("GridSpec: pixels_per_meter must be positive")

    @property
    def origin(self) -> tuple[int, int]:
        return self.height // 2, self.width // 2

    @property
    def fov_m(self) -> float:
        return self.height / self.pixels_per_meter


def world_to_grid(point, spec: GridSpec):
    """Map SDC-frame meters to fractional (row, col); works on ``[..., 2]`` arrays."""
    p = np.asarray(point, dtype=np.float64)
    r0, c0 = spec.origin
    row = r0 - p[..., 1] * spec.pixels_per_meter
    col = c0 + p[..., 0] * spec.pixels_per_meter
    return np.stack([row, col], axis=-1)


def grid_to_world(cell, spec: GridSpec):
    rc = np.asarray(cell, dtype=np.float64)
    r0, c0 = spec.origin
    x = (rc[..., 1] - c0) / spec.pixels_per_meter
    y = (r0 - rc[..., 0]) / spec.pixels_per_meter
    return np.stack([x, y], axis=-1)


def box_cells(center, heading, length_m, width_m, spec: GridSpec):
    """Cells whose centers lie inside an oriented box, cropped to the grid.

    Returns ``(rows, cols)`` integer arrays.
    """
    cx, cy = float(center[0]), float(center[1])
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length_m / 2.0, width_m / 2.0
    corners = np.array([[cx + c * u - s * v, cy + s * u + c * v] for u in (-hl, hl) for v in (-hw, hw)])
    rc = world_to_grid(corners, spec)
    r_lo = max(int(math.floor(rc[:, 0].min())), 0)
    r_hi = min(int(math.ceil(rc[:, 0].max())), spec.height - 1)
    c_lo = max(int(math.floor(rc[:, 1].min())), 0)
    c_hi = min(int(math.ceil(rc[:, 1].max())), spec.width - 1)
    if r_lo > r_hi or c_lo > c_hi:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    rr, cc = np.mgrid[r_lo : r_hi + 1, c_lo : c_hi + 1]
    w = grid_to_world(np.stack([rr, cc], axis=-1), spec)
    dx, dy = w[..., 0] - cx, w[..., 1] - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    inside = (np.abs(u) <= hl) & (np.abs(v) <= hw)
    return rr[inside], cc[inside]


def _draw_polyline(canvas, points, spec):
    rc = np.rint(world_to_grid(points, spec)).astype(np.int64)
    h, w = canvas.shape
    for (r0, c0), (r1, c1) in zip(rc[:-1], rc[1:]):
        rr, cc = bresenham_line(r0, c0, r1, c1)
        keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        canvas[rr[keep], cc[keep]] = 1.0


def _renders(agent, scene, spec):
    return spec.include_sdc or agent is not scene.sdc


def rasterize_history(scene: Scene, spec: GridSpec = GridSpec()) -> np.ndarray:
    """Stack ``[t_hist + 3, H, W]``: agent occupancy per past step (oldest first), then map layers."""
    out = np.zeros((scene.t_hist + len(POLYLINE_KINDS), spec.height, spec.width), dtype=np.float32)
    for a in scene.agents:
        if not a.observed_now or not _renders(a, scene, spec):
            continue
        for t in range(scene.t_hist):
            if a.validity[t]:
                rr, cc = box_cells(a.positions[t], a.headings[t], a.length_m, a.width_m, spec)
                out[t, rr, cc] = 1.0
    for p in scene.polylines:
        _draw_polyline(out[scene.t_hist + POLYLINE_KINDS.index(p.kind)], p.points, spec)
    return out


@dataclass
class OccupancyFlowTargets:
    observed: np.ndarray  # [8, H, W]
    occluded: np.ndarray  # [8, H, W]
    flow: np.ndarray  # [8, H, W, 2] backward (dx cols, dy rows)
    flow_valid: np.ndarray  # [8, H, W]
    current: np.ndarray  # [H, W] joint occupancy at the current step (waypoint 0)


def waypoint_steps(scene: Scene) -> list[int]:
    """State indices of waypoints 0..8; index 0 is the current step."""
    cur, stride = scene.current_index, scene.waypoint_stride
    return [cur + k * stride for k in range(NUM_WAYPOINTS + 1)]


def _backward_flow(rr, cc, agent, t_now, t_prev, spec):
    w = grid_to_world(np.stack([rr, cc], axis=-1), spec)
    d = w - agent.positions[t_now]
    delta = agent.headings[t_prev] - agent.headings[t_now]
    c, s = math.cos(delta), math.sin(delta)
    prev = np.stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]], axis=1) + agent.positions[t_prev]
    prc = world_to_grid(prev, spec)
    return np.stack([prc[:, 1] - cc, prc[:, 0] - rr], axis=1)


def render_targets(scene: Scene, spec: GridSpec = GridSpec()) -> OccupancyFlowTargets:
    H, W = spec.height, spec.width
    observed = np.zeros((NUM_WAYPOINTS, H, W), dtype=np.float32)
    occluded = np.zeros_like(observed)
    flow = np.zeros((NUM_WAYPOINTS, H, W, 2), dtype=np.float32)
    flow_valid = np.zeros_like(observed)
    current = np.zeros((H, W), dtype=np.float32)
    steps = waypoint_steps(scene)
    agents = [a for a in scene.agents if _renders(a, scene, spec)]

    for a in agents:
        if a.validity[steps[0]]:
            rr, cc = box_cells(a.positions[steps[0]], a.headings[steps[0]], a.length_m, a.width_m, spec)
            current[rr, cc] = 1.0

    for k in range(1, NUM_WAYPOINTS + 1):
        t, t_prev = steps[k], steps[k - 1]
        frames = range(t_prev + 1, t + 1) if spec.waypoint_union else (t,)
        # descending id so the lowest id writes flow last and wins overlaps
        for a in sorted(agents, key=lambda a: a.id, reverse=True):
            layer = observed if a.observed_now else occluded
            for f in frames:
                if a.validity[f]:
                    rr, cc = box_cells(a.positions[f], a.headings[f], a.length_m, a.width_m, spec)
                    layer[k - 1, rr, cc] = 1.0
            if not a.validity[t]:
                continue
            rr, cc = box_cells(a.positions[t], a.headings[t], a.length_m, a.width_m, spec)
            if a.validity[t_prev]:
                flow[k - 1, rr, cc] = _backward_flow(rr, cc, a, t, t_prev, spec)
                flow_valid[k - 1, rr, cc] = 1.0
            else:
                flow[k - 1, rr, cc] = 0.0
                flow_valid[k - 1, rr, cc] = 0.0
    # a cell holding both kinds of agent counts as observed
    occluded *= 1.0 - observed
    return OccupancyFlowTargets(observed, occluded, flow, flow_valid, current)


def save_ofgrid(path, array, layout: str, kind: str | None = None) -> None:
    """Write a float32 array as magic + one-line JSON header + row-major data."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = {"dtype": "float32", "shape": list(arr.shape), "layout": layout}
    if kind is not None:
        header["kind"] = kind
    with open(path, "wb") as f:
        f.write(OFGRID_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(arr.tobytes(order="C"))


def load_ofgrid(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        if f.read(len(OFGRID_MAGIC)) != OFGRID_MAGIC:
            raise DataError(f"{path}: not an .ofgrid file")
        header = json.loads(f.readline().decode("utf-8"))
        data = f.read()
    if header.get("dtype") != "float32":
        raise DataError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} data bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy(), header
