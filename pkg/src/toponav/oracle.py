"""Privileged shortest-path expert: path tracking, subgoal sampling, rollouts, route checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .world import (
    STOP,
    Camera,
    Embodiment,
    NoPathError,
    Observation,
    OccupancyScene,
    PlanningError,
    Pose,
    Twist,
    distance_field,
    euler_step,
    grid_graph,
    is_collision,
    path_cells_from_field,
    path_length,
    polyline_from_cells,
    render,
    shortest_path,
    smooth_path,
    step_kinematic,
    wrap_angle,
)


class CollisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    d_min: float = 0.5
    d_max: float = 3.0
    clearance: float = 0.2
    kp_heading: float = 4.0
    H: int = 5
    max_steps: int = 500
    success_radius: float = 0.4
    lookahead: Optional[float] = None  # None -> 2 * v_max * dt
    recover_dist: float = 0.15
    subgoal_reach: float = 0.3

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise ValueError("need 0 < d_min < d_max")
        if self.H < 1:
            raise ValueError("H must be >= 1")

    def lookahead_for(self, emb: Embodiment) -> float:
        return self.lookahead if self.lookahead is not None else 2 * emb.v_max * emb.dt


@dataclass
class Subgoal:
    pose: Pose
    observation: Observation
    index: int
    arc: float = 0.0


@dataclass
class RouteSpec:
    scene: OccupancyScene
    start: Pose
    goal: Pose
    subgoals: list = field(default_factory=list)
    path: list = field(default_factory=list)
    seed: int = 0
    scene_ref: str = ""

    def to_record(self) -> str:
        rec = {
            "scene": self.scene_ref,
            "seed": self.seed,
            "start": [self.start.x, self.start.y, self.start.theta],
            "goal": [self.goal.x, self.goal.y, self.goal.theta],
            "subgoals": [[s.pose.x, s.pose.y, s.pose.theta] for s in self.subgoals],
        }
        return json.dumps(rec)


def read_route_manifest(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_route_manifest(path, routes) -> None:
    with open(path, "w") as f:
        for r in routes:
            f.write(r.to_record() + "\n")


# ---------------------------------------------------------------- polyline helpers

class Polyline:
    """Array view of a pose list with cumulative arc lengths, for fast projection."""

    __slots__ = ("poses", "xy", "cum", "d", "L2", "total")

    def __init__(self, poses):
        self.poses = list(poses)
        self.xy = np.array([(p.x, p.y) for p in self.poses], dtype=np.float64)
        self.d = np.diff(self.xy, axis=0)
        self.L2 = (self.d ** 2).sum(axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(np.sqrt(self.L2))])
        self.total = float(self.cum[-1])

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, k):
        return self.poses[k]


def as_polyline(path) -> Polyline:
    return path if isinstance(path, Polyline) else Polyline(path)


def project(path, pose: Pose):
    """(arc length of the closest polyline point, distance to it)."""
    pl = as_polyline(path)
    if len(pl) == 1:
        return 0.0, pl[0].distance(pose)
    rel = np.array([pose.x, pose.y]) - pl.xy[:-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(pl.L2 > 0, (rel * pl.d).sum(axis=1) / pl.L2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    dist = np.hypot(rel[:, 0] - u * pl.d[:, 0], rel[:, 1] - u * pl.d[:, 1])
    k = int(np.argmin(dist))  # first minimum on ties
    return float(pl.cum[k] + u[k] * np.sqrt(pl.L2[k])), float(dist[k])


def point_at(path, s: float) -> Pose:
    """Pose on the polyline at arc length ``s`` with the local tangent heading."""
    pl = as_polyline(path)
    if len(pl) == 1:
        return pl[0]
    s = min(max(s, 0.0), pl.total)
    k = int(np.searchsorted(pl.cum, s, side="right")) - 1
    k = min(max(k, 0), len(pl) - 2)
    # skip zero-length segments for the tangent
    while k < len(pl) - 2 and pl.L2[k] == 0:
        k += 1
    seg = math.sqrt(pl.L2[k])
    u = 0.0 if seg == 0 else (s - pl.cum[k]) / seg
    (ax, ay), (dx, dy) = pl.xy[k], pl.d[k]
    th = math.atan2(dy, dx) if seg > 0 else pl[k].theta
    return Pose(ax + u * dx, ay + u * dy, th)


# ---------------------------------------------------------------- controller

def oracle_action(pose: Pose, path, cfg: OracleConfig, emb: Embodiment) -> Twist:
    path = as_polyline(path)
    s_proj, _ = project(path, pose)
    total = path.total
    end = path[-1]
    d_end = pose.distance(end)
    if d_end <= 0.5 * emb.v_max * emb.dt and s_proj + 1e-9 >= total - cfg.lookahead_for(emb):
        return STOP
    s_look = s_proj + cfg.lookahead_for(emb)
    target = end if s_look >= total else point_at(path, s_look)
    alpha = wrap_angle(math.atan2(target.y - pose.y, target.x - pose.x) - pose.theta)
    omega = min(max(cfg.kp_heading * alpha, -emb.omega_max), emb.omega_max)
    v = emb.v_max * max(0.0, math.cos(alpha))
    if s_look >= total:
        # land on the path end instead of orbiting it
        v = min(v, d_end / emb.dt)
    return Twist(v, omega)


class OracleGuide:
    """Tracks a fixed route polyline and falls back to a goal distance field when off it.

    The field covers cells free at the planning clearance; cells only free at the
    robot radius are attached by a second pass so recovery leads back to safe space.
    """

    def __init__(self, scene: OccupancyScene, goal: Pose, path, cfg: OracleConfig, emb: Embodiment):
        self.scene, self.goal, self.cfg, self.emb = scene, goal, cfg, emb
        self.path = as_polyline(path)
        self.total = self.path.total
        self._field = None

    def _fields(self):
        if self._field is None:
            dist, pred = distance_field(self.scene, self.goal, self.cfg.clearance)
            # second pass: cells with only robot-radius clearance
            from scipy.sparse.csgraph import dijkstra
            from scipy.sparse import bmat, csr_matrix

            sc = self.scene
            loose = sc.feasible(self.emb.radius)
            g = grid_graph(loose, sc.cell_size)
            n = sc.height * sc.width
            strict = np.isfinite(dist).ravel()
            seeds = np.flatnonzero(strict)
            src = csr_matrix((dist.ravel()[seeds] + 1e-6, (np.zeros_like(seeds), seeds)), shape=(1, n))
            # edges into strict cells are dropped so the seed values stay fixed
            g = g.tocoo()
            keep = ~strict[g.col]
            g = csr_matrix((g.data[keep], (g.row[keep], g.col[keep])), shape=(n, n))
            big = bmat([[csr_matrix((1, 1)), src], [None, g]]).tocsr()
            d2, p2 = dijkstra(big, directed=True, indices=0, return_predecessors=True)
            d2, p2 = d2[1:].reshape(sc.height, sc.width), p2[1:] - 1
            p2 = p2.reshape(sc.height, sc.width)
            self._field = (dist, pred, d2, p2, strict.reshape(sc.height, sc.width))
        return self._field

    def local_path(self, pose: Pose):
        dist, pred, d2, p2, strict = self._fields()
        sc = self.scene
        j, i = sc.cell_of(pose.x, pose.y)
        if not sc.in_bounds(j, i) or not np.isfinite(d2[j, i]):
            # pose is free but its cell center is not: enter the field from a neighbor
            best = None
            for dj in (-2, -1, 0, 1, 2):
                for di in (-2, -1, 0, 1, 2):
                    jj, ii = j + dj, i + di
                    if sc.in_bounds(jj, ii) and np.isfinite(d2[jj, ii]):
                        cx, cy = sc.cell_center(jj, ii)
                        c = d2[jj, ii] + math.hypot(cx - pose.x, cy - pose.y)
                        if best is None or c < best[0]:
                            best = (c, jj, ii)
            if best is None:
                raise NoPathError(f"no recovery path from {pose}")
            j, i = best[1], best[2]
            cells = [(j, i), (j, i)]
        else:
            cells = [(j, i)]
        while not strict[cells[-1]]:
            k = int(p2[cells[-1]])
            cells.append((k // sc.width, k % sc.width))
        cells += path_cells_from_field(pred, sc.width, *cells[-1])[1:]
        return smooth_path(sc, polyline_from_cells(sc, pose, self.goal, cells), self.cfg.clearance)

    def path_for(self, pose: Pose):
        if len(self.path) > 1:
            _, d = project(self.path, pose)
            if d <= self.cfg.recover_dist:
                return self.path
        if pose.distance(self.goal) <= self.cfg.recover_dist:
            return Polyline([pose, self.goal])
        return Polyline(self.local_path(pose))

    def action(self, pose: Pose) -> Twist:
        """Tracking command, with forward speed cut back until the step is collision-free.

        Turning in place never collides for a disc robot, so the guide itself
        never drives into an obstacle.
        """
        tw = oracle_action(pose, self.path_for(pose), self.cfg, self.emb)
        if tw.v == 0.0:
            return tw
        for f in (1.0, 0.5, 0.25):
            cand = Twist(tw.v * f, tw.omega)
            if not is_collision(self.scene, euler_step(pose, cand, self.emb.dt), self.emb.radius):
                return cand
        return Twist(0.0, tw.omega)

    def progress(self, pose: Pose) -> float:
        if len(self.path) <= 1:
            return 0.0
        return project(self.path, pose)[0]


def rollout_oracle(scene: OccupancyScene, pose: Pose, path, cfg: OracleConfig, emb: Embodiment,
                   guide: Optional[OracleGuide] = None) -> np.ndarray:
    """H oracle steps from ``pose``; returns (H, 3) poses relative to ``pose``."""
    out = np.zeros((cfg.H, 3))
    cur = pose
    for k in range(cfg.H):
        tw = guide.action(cur) if guide is not None else oracle_action(cur, path, cfg, emb)
        nxt, collided = step_kinematic(scene, cur, tw, emb)
        if collided:
            raise CollisionError(f"oracle rollout collided at step {k} from {cur}")
        cur = nxt
        rel = pose.relative(cur)
        out[k] = (rel.x, rel.y, rel.theta)
    return out


# ---------------------------------------------------------------- subgoals and routes

def sample_subgoals(scene: OccupancyScene, path, cfg: OracleConfig, seed, camera: Camera = Camera(),
                    light_level: float = 1.0) -> list[Subgoal]:
    rng = np.random.default_rng(seed)
    path = as_polyline(path)
    total = path.total
    arcs = []
    s = 0.0
    while True:
        s += rng.uniform(cfg.d_min, cfg.d_max)
        if s >= total:
            break
        arcs.append(s)
    arcs.append(total)
    out = []
    for k, a in enumerate(arcs):
        p = point_at(path, a)
        out.append(Subgoal(p, render(scene, p, camera, light_level), k, float(a)))
    return out


def current_subgoal(subgoals, progress: float, reach: float) -> int:
    """Index of the first subgoal at least ``reach`` meters of arc ahead of ``progress``."""
    for k, sg in enumerate(subgoals):
        if sg.arc >= progress + reach:
            return k
    return len(subgoals) - 1


def route_path(scene: OccupancyScene, start: Pose, goal: Pose, cfg: OracleConfig) -> list[Pose]:
    """Grid shortest path with line-of-sight shortcuts; what the oracle tracks."""
    return smooth_path(scene, shortest_path(scene, start, goal, cfg.clearance), cfg.clearance)


def run_oracle(scene, start: Pose, goal: Pose, cfg: OracleConfig, emb: Embodiment, path=None):
    """Closed-loop oracle run; returns (poses, reached, collided)."""
    if path is None:
        path = route_path(scene, start, goal, cfg)
    guide = OracleGuide(scene, goal, path, cfg, emb)
    pose = start
    poses = [pose]
    for _ in range(cfg.max_steps):
        if pose.distance(goal) <= cfg.success_radius:
            return poses, True, False
        pose, collided = step_kinematic(scene, pose, guide.action(pose), emb)
        if collided:
            return poses, False, True
        poses.append(pose)
    return poses, pose.distance(goal) <= cfg.success_radius, False


def validate_route(scene, start: Pose, goal: Pose, cfg: OracleConfig, emb: Embodiment = Embodiment()) -> bool:
    if is_collision(scene, start, emb.radius) or is_collision(scene, goal, emb.radius):
        return False
    if start.distance(goal) <= cfg.success_radius:
        return True
    try:
        path = route_path(scene, start, goal, cfg)
    except PlanningError:
        return False
    _, reached, collided = run_oracle(scene, start, goal, cfg, emb, path)
    return reached and not collided


def sample_route(scene: OccupancyScene, rng: np.random.Generator, cfg: OracleConfig, emb: Embodiment,
                 min_len: float = 2.0, max_len: float = 8.0, heading_noise: float = math.pi / 6,
                 tries: int = 200):
    """Random validated (start, goal, path) at cell centers, geodesic length in range."""
    mask = scene.feasible(cfg.clearance)
    cells = np.argwhere(mask)
    if len(cells) == 0:
        raise PlanningError("no cell has enough clearance for a route")
    for _ in range(tries):
        a, b = cells[rng.integers(len(cells), size=2)]
        start = Pose(*scene.cell_center(*a), 0.0)
        goal = Pose(*scene.cell_center(*b), 0.0)
        try:
            path = route_path(scene, start, goal, cfg)
        except NoPathError:
            continue
        L = path_length(path)
        if not (min_len <= L <= max_len):
            continue
        th0 = path[0].theta + rng.uniform(-heading_noise, heading_noise)
        start = Pose(start.x, start.y, th0)
        path[0] = start
        goal = Pose(goal.x, goal.y, path[-2].theta)
        path[-1] = goal
        if validate_route(scene, start, goal, cfg, emb):
            return start, goal, path
    raise PlanningError("could not sample a valid route")
