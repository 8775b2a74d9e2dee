"""Topological maps, place descriptors, filtered subgoal selection and the navigate loop."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .oracle import OracleConfig, OracleGuide, route_path
from .policy import FrozenEncoder, PolicyConfig, as_batch
from .world import (
    Camera,
    Embodiment,
    NoPathError,
    OccupancyScene,
    PlanningError,
    Pose,
    Twist,
    path_length,
    render,
    shortest_path,
    smooth_path,
    step_kinematic,
    wrap_angle,
)

OUTCOMES = ("success", "collision", "timeout", "lost")
MAP_MAGIC = b"TNMP"
MAP_VERSION = 1


class MapError(ValueError):
    pass


# ---------------------------------------------------------------- descriptors

_DEFAULT_ENCODER: dict = {}


def default_encoder(encoder_seed: int = 0) -> FrozenEncoder:
    if encoder_seed not in _DEFAULT_ENCODER:
        _DEFAULT_ENCODER[encoder_seed] = FrozenEncoder(PolicyConfig(encoder_seed=encoder_seed))
    return _DEFAULT_ENCODER[encoder_seed]


def descriptors(obs, encoder: Optional[FrozenEncoder] = None) -> np.ndarray:
    """Mean-pooled frozen tokens, L2-normalized; accepts (W, C) or (N, W, C)."""
    enc = encoder or default_encoder()
    arr = as_batch(obs).astype(np.float64)
    tok = enc(arr).astype(np.float64)
    d = tok.mean(axis=-2)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def descriptor(obs, encoder: Optional[FrozenEncoder] = None) -> np.ndarray:
    return descriptors(obs, encoder)


# ---------------------------------------------------------------- maps

@dataclass
class TopoMap:
    observations: np.ndarray  # (N, W, C)
    descriptors: np.ndarray  # (N, D)
    eval_poses: list  # hidden from the policy
    spacing: float = 1.5

    def __post_init__(self):
        if len(self.eval_poses) < 2:
            raise MapError("a topological map needs at least two nodes")
        norms = np.linalg.norm(self.descriptors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise MapError("map descriptors must be unit norm")

    def __len__(self):
        return len(self.eval_poses)

    @property
    def goal_pose(self) -> Pose:
        return self.eval_poses[-1]

    def to_bytes(self) -> bytes:
        n, W, C = self.observations.shape
        D = self.descriptors.shape[1]
        out = [MAP_MAGIC, struct.pack("<HIHHHf", MAP_VERSION, n, W, C, D, self.spacing)]
        for k in range(n):
            p = self.eval_poses[k]
            out.append(struct.pack("<ddd", p.x, p.y, p.theta))
            out.append(self.observations[k].astype("<f4").tobytes())
            out.append(self.descriptors[k].astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "TopoMap":
        if buf[:4] != MAP_MAGIC:
            raise MapError("bad map magic at offset 0")
        version, n, W, C, D, spacing = struct.unpack_from("<HIHHHf", buf, 4)
        if version != MAP_VERSION:
            raise MapError(f"unsupported map version {version} at offset 4")
        off = 4 + struct.calcsize("<HIHHHf")
        per = 24 + 4 * W * C + 8 * D
        if len(buf) < off + n * per:
            raise MapError(f"truncated map at offset {len(buf)}")
        poses, obs, desc = [], [], []
        for _ in range(n):
            poses.append(Pose(*struct.unpack_from("<ddd", buf, off)))
            off += 24
            obs.append(np.frombuffer(buf, "<f4", W * C, off).reshape(W, C))
            off += 4 * W * C
            desc.append(np.frombuffer(buf, "<f8", D, off))
            off += 8 * D
        return cls(np.stack(obs).astype(np.float32), np.stack(desc).astype(np.float64), poses, float(spacing))

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TopoMap":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def drive_oracle(scene, start: Pose, goal: Pose, cfg: OracleConfig, emb: Embodiment, path=None):
    """Oracle drive that continues until it stops on the goal; returns visited poses."""
    if path is None:
        path = route_path(scene, start, goal, cfg)
    guide = OracleGuide(scene, goal, path, cfg, emb)
    pose, poses = start, [start]
    for _ in range(cfg.max_steps):
        tw = guide.action(pose)
        if tw.v == 0.0 and tw.omega == 0.0:
            return poses
        pose, collided = step_kinematic(scene, pose, tw, emb)
        if collided:
            raise PlanningError(f"oracle collided while mapping at {pose}")
        poses.append(pose)
    if pose.distance(goal) > cfg.success_radius:
        raise PlanningError("oracle did not reach the goal while mapping")
    return poses


def build_map(scene: OccupancyScene, start: Pose, goal: Pose, node_spacing: float = 1.5,
              cfg: OracleConfig = OracleConfig(), emb: Embodiment = Embodiment(), camera: Camera = Camera(),
              light_level: float = 1.0, encoder: Optional[FrozenEncoder] = None, path=None) -> TopoMap:
    """Drive the route with the oracle and keep a node every ``node_spacing`` meters of travel."""
    try:
        poses = drive_oracle(scene, start, goal, cfg, emb, path)
    except NoPathError as e:
        raise MapError(f"route is not traversable: {e}") from e
    except PlanningError as e:
        raise MapError(f"route is not traversable: {e}") from e
    arcs = np.concatenate([[0.0], np.cumsum([a.distance(b) for a, b in zip(poses[:-1], poses[1:])])])
    total = arcs[-1]
    keep, k = [], 0
    while k * node_spacing < total - node_spacing / 2:
        keep.append(int(np.searchsorted(arcs, k * node_spacing - 1e-12)))
        k += 1
    if not keep:
        keep = [0]
    keep.append(len(poses) - 1)
    if keep[-1] == keep[-2]:
        # degenerate zero-length drive: duplicate the single pose
        keep[-2] = 0
    node_poses = [poses[i] for i in keep]
    obs = np.stack([render(scene, p, camera, light_level).to_array() for p in node_poses])
    return TopoMap(obs, descriptors(obs, encoder), node_poses, node_spacing)


def relight_map(scene: OccupancyScene, topomap: TopoMap, light_level: float, camera: Camera = Camera(),
                encoder: Optional[FrozenEncoder] = None) -> TopoMap:
    """Same nodes re-captured under another illumination."""
    obs = np.stack([render(scene, p, camera, light_level).to_array() for p in topomap.eval_poses])
    return TopoMap(obs, descriptors(obs, encoder), list(topomap.eval_poses), topomap.spacing)


# ---------------------------------------------------------------- filter

@dataclass(frozen=True)
class FilterParams:
    p_stay: float = 0.5
    p_next: float = 0.4
    p_skip: float = 0.1
    tau: float = 0.07
    lookahead: int = 1

    def __post_init__(self):
        if abs(self.p_stay + self.p_next + self.p_skip - 1.0) > 1e-9:
            raise ValueError("transition probabilities must sum to 1")


@dataclass
class FilterState:
    posterior: np.ndarray
    selected: int = 0
    fallbacks: int = 0

    @classmethod
    def at_start(cls, n: int) -> "FilterState":
        p = np.zeros(n)
        p[0] = 1.0
        return cls(p, 0)

    @classmethod
    def uniform(cls, n: int) -> "FilterState":
        return cls(np.full(n, 1.0 / n), 0)


def predict_step(post: np.ndarray, params: FilterParams) -> np.ndarray:
    n = post.shape[0]
    out = params.p_stay * post
    nxt = np.minimum(np.arange(n) + 1, n - 1)
    skp = np.minimum(np.arange(n) + 2, n - 1)
    np.add.at(out, nxt, params.p_next * post)
    np.add.at(out, skp, params.p_skip * post)
    return out


def likelihood(desc: np.ndarray, map_desc: np.ndarray, tau: float) -> np.ndarray:
    z = map_desc @ desc / tau
    e = np.exp(z - z.max())
    return e / e.sum()


def filter_update(state: FilterState, desc: np.ndarray, topomap: TopoMap, params: FilterParams) -> FilterState:
    prior = predict_step(state.posterior, params)
    post = prior * likelihood(desc, topomap.descriptors, params.tau)
    s = post.sum()
    fallbacks = state.fallbacks
    if not np.isfinite(s) or s <= 0:
        post = np.full_like(prior, 1.0 / len(prior))
        fallbacks += 1
    else:
        post = post / s
    sel = min(int(np.argmax(post)) + params.lookahead, len(topomap) - 1)
    return FilterState(post, sel, fallbacks)


def subgoal_select(state: FilterState, obs, topomap: TopoMap, params: FilterParams = FilterParams(),
                   encoder: Optional[FrozenEncoder] = None):
    """Returns (subgoal observation, selected index, new filter state)."""
    new = filter_update(state, descriptor(obs, encoder), topomap, params)
    return topomap.observations[new.selected], new.selected, new


# ---------------------------------------------------------------- control

@dataclass(frozen=True)
class PDGains:
    kp: float = 4.0
    kd: float = 0.0
    k_track: int = 5  # 1-based waypoint index, clamped to H
    d_slow: Optional[float] = None  # None -> k_track * v_max * dt


def pd_controller(pred, gains: PDGains, emb: Embodiment, alpha_prev: Optional[float] = None):
    """Returns (twist, alpha); feed ``alpha`` back as ``alpha_prev`` on the next call."""
    wp = np.asarray(pred, dtype=np.float64)
    k = min(gains.k_track, wp.shape[0]) - 1
    x, y = float(wp[k, 0]), float(wp[k, 1])
    dist = math.hypot(x, y)
    alpha = math.atan2(y, x) if dist > 0 else 0.0
    d_alpha = 0.0 if alpha_prev is None else wrap_angle(alpha - alpha_prev)
    omega = gains.kp * alpha + gains.kd * d_alpha / emb.dt
    d_slow = gains.d_slow if gains.d_slow is not None else (k + 1) * emb.v_max * emb.dt
    v = emb.v_max * max(0.0, math.cos(alpha)) * min(1.0, dist / d_slow) if d_slow > 0 else 0.0
    return emb.clamp(v, omega), alpha


# ---------------------------------------------------------------- navigation

@dataclass(frozen=True)
class NavParams:
    emb: Embodiment = Embodiment()
    camera: Camera = Camera()
    light_level: float = 1.0
    max_steps: int = 500
    success_radius: float = 0.4
    filter: FilterParams = FilterParams()
    gains: PDGains = PDGains()
    encoder_seed: int = 0


@dataclass
class EpisodeResult:
    outcome: str
    steps: int
    path_length: float
    shortest_length: float
    trajectory: list = field(default_factory=list)
    twists: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    localized_last: bool = False

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def spl_term(self) -> float:
        if not self.success:
            return 0.0
        if self.shortest_length <= 0:
            return 1.0
        return self.shortest_length / max(self.path_length, self.shortest_length)

    def write_trace(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "x", "y", "theta", "v", "omega", "node", "outcome"])
            for k, p in enumerate(self.trajectory):
                tw = self.twists[k] if k < len(self.twists) else Twist(0.0, 0.0)
                node = self.selected[k] if k < len(self.selected) else ""
                w.writerow([k, f"{p.x:.6f}", f"{p.y:.6f}", f"{p.theta:.6f}", f"{tw.v:.6f}",
                            f"{tw.omega:.6f}", node, self.outcome if k == len(self.trajectory) - 1 else ""])


@dataclass
class Episode:
    scene: OccupancyScene
    topomap: TopoMap
    start: Pose


def shortest_length(scene, start: Pose, goal: Pose, radius: float, success_radius: float) -> float:
    """Length of the shortest way into the success disc around ``goal``.

    Planned on cells the robot body fits in, shortcut by line of sight so the
    8-connected grid's detours do not count, then shortened by the success radius.
    """
    if start.distance(goal) <= success_radius:
        return 0.0
    try:
        path = smooth_path(scene, shortest_path(scene, start, goal, radius), radius)
        L = path_length(path)
    except PlanningError:
        L = start.distance(goal)
    return max(L - success_radius, 0.0)


def navigate_many(episodes, policy, params: NavParams = NavParams(),
                  on_step: Optional[Callable] = None) -> list[EpisodeResult]:
    """Run episodes in lockstep so the policy sees one batch per simulator step.

    ``policy`` needs ``predict(obs_stack (B,P,W,C), goal (B,W,C), scale) -> (B,H,3)`` metric
    waypoints and ``cfg.P``; ``scale`` is the deployed robot's v_max * dt.
    ``on_step(step, poses)`` is called before each batch of predictions with the
    current poses of the active episodes (instrumentation only).
    """
    P = policy.cfg.P
    enc = default_encoder(params.encoder_seed)
    n = len(episodes)
    pose = [e.start for e in episodes]
    hist = [[] for _ in range(n)]
    fstate = [FilterState.at_start(len(e.topomap)) for e in episodes]
    alpha = [None] * n
    plen = [0.0] * n
    outcome = [None] * n
    steps = [0] * n
    traj = [[e.start] for e in episodes]
    twists = [[] for _ in range(n)]
    sel = [[] for _ in range(n)]
    goal = [e.topomap.goal_pose for e in episodes]
    for t in range(params.max_steps + 1):
        active = []
        for k in range(n):
            if outcome[k] is not None:
                continue
            if pose[k].distance(goal[k]) <= params.success_radius:
                outcome[k] = "success"
            elif t == params.max_steps:
                outcome[k] = "timeout"
            else:
                active.append(k)
        if not active:
            break
        obs = np.stack([render(episodes[k].scene, pose[k], params.camera, params.light_level).to_array()
                        for k in active])
        desc = descriptors(obs, enc)
        goals, stacks = [], []
        for j, k in enumerate(active):
            hist[k].append(obs[j])
            fstate[k] = filter_update(fstate[k], desc[j], episodes[k].topomap, params.filter)
            sel[k].append(fstate[k].selected)
            goals.append(episodes[k].topomap.observations[fstate[k].selected])
            h = hist[k]
            stacks.append(np.stack([h[max(i, 0)] for i in range(len(h) - P, len(h))]))
        if on_step is not None:
            on_step(t, {k: pose[k] for k in active})
        preds = policy.predict(np.stack(stacks), np.stack(goals), scale=params.emb.v_max * params.emb.dt)
        for j, k in enumerate(active):
            if not np.all(np.isfinite(preds[j])):
                outcome[k] = "lost"
                continue
            tw, alpha[k] = pd_controller(preds[j], params.gains, params.emb, alpha[k])
            new, collided = step_kinematic(episodes[k].scene, pose[k], tw, params.emb)
            twists[k].append(tw)
            steps[k] += 1
            if collided:
                outcome[k] = "collision"
                continue
            plen[k] += pose[k].distance(new)
            pose[k] = new
            traj[k].append(new)
    results = []
    for k, e in enumerate(episodes):
        shortest = shortest_length(e.scene, e.start, goal[k], params.emb.radius, params.success_radius)
        results.append(EpisodeResult(outcome[k], steps[k], plen[k], shortest, traj[k], twists[k], sel[k],
                                     bool(sel[k]) and sel[k][-1] == len(e.topomap) - 1))
    return results


def navigate(scene: OccupancyScene, topomap: TopoMap, policy, start: Pose, params: NavParams = NavParams(),
             on_step: Optional[Callable] = None) -> EpisodeResult:
    return navigate_many([Episode(scene, topomap, start)], policy, params, on_step)[0]
