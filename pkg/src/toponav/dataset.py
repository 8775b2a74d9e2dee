"""Triplet shards, trajectory logs, hindsight relabeling and waypoint normalization."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .world import N_CHANNELS, Pose

SHARD_MAGIC = b"TNTD"
SHARD_VERSION = 1
_HEADER = struct.Struct("<4sHHHHHQ")
DEFAULT_DIMS = (6, 5, 32, N_CHANNELS)  # P, H, W, C for empty shards


class ShardError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (offset {offset})")
        self.offset = offset


@dataclass
class Triplet:
    obs_stack: np.ndarray  # (P, W, C)
    goal_obs: np.ndarray  # (W, C)
    waypoints: np.ndarray  # (H, 3)

    def __post_init__(self):
        for name in ("obs_stack", "goal_obs", "waypoints"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in triplet {name}")


@dataclass
class TripletArrays:
    """A batch of triplets stored as stacked arrays."""

    obs: np.ndarray  # (N, P, W, C) float32
    goal: np.ndarray  # (N, W, C) float32
    waypoints: np.ndarray  # (N, H, 3)

    def __len__(self):
        return self.obs.shape[0]

    @property
    def dims(self):
        _, P, W, C = self.obs.shape
        return P, self.waypoints.shape[1], W, C

    def __getitem__(self, k) -> Triplet:
        return Triplet(self.obs[k], self.goal[k], self.waypoints[k])

    def subset(self, idx) -> "TripletArrays":
        return TripletArrays(self.obs[idx], self.goal[idx], self.waypoints[idx])

    @classmethod
    def empty(cls, P, H, W, C) -> "TripletArrays":
        return cls(np.zeros((0, P, W, C), np.float32), np.zeros((0, W, C), np.float32),
                   np.zeros((0, H, 3), np.float32))

    @classmethod
    def from_triplets(cls, triplets, dims=None) -> "TripletArrays":
        triplets = list(triplets)
        if not triplets:
            if dims is None:
                raise ValueError("need dims to build an empty TripletArrays")
            return cls.empty(*dims)
        shapes = {(t.obs_stack.shape, t.goal_obs.shape, t.waypoints.shape) for t in triplets}
        if len(shapes) != 1:
            raise ValueError(f"inhomogeneous triplet shapes: {sorted(shapes)}")
        return cls(np.stack([t.obs_stack for t in triplets]).astype(np.float32),
                   np.stack([t.goal_obs for t in triplets]).astype(np.float32),
                   np.stack([t.waypoints for t in triplets]).astype(np.float32))

    @staticmethod
    def concat(parts) -> "TripletArrays":
        parts = list(parts)
        return TripletArrays(np.concatenate([p.obs for p in parts]), np.concatenate([p.goal for p in parts]),
                             np.concatenate([p.waypoints for p in parts]))


# ---------------------------------------------------------------- shards

def shard_bytes(data) -> bytes:
    if not isinstance(data, TripletArrays):
        data = TripletArrays.from_triplets(data, dims=DEFAULT_DIMS)
    P, H, W, C = data.dims
    n = len(data)
    head = _HEADER.pack(SHARD_MAGIC, SHARD_VERSION, P, H, W, C - 2, n)
    payload = np.concatenate([
        data.obs.reshape(n, P * W * C).astype("<f4"),
        data.goal.reshape(n, W * C).astype("<f4"),
        data.waypoints.reshape(n, H * 3).astype("<f4"),
    ], axis=1)
    return head + payload.tobytes()


def write_shard(path, data) -> int:
    """Write triplets (list or TripletArrays); returns the count written."""
    buf = shard_bytes(data)
    Path(path).write_bytes(buf)
    return struct.unpack_from("<Q", buf, 14)[0]


def parse_shard(buf: bytes) -> TripletArrays:
    if len(buf) < _HEADER.size:
        raise ShardError("truncated shard header", len(buf))
    magic, version, P, H, W, Cs, n = _HEADER.unpack_from(buf, 0)
    if magic != SHARD_MAGIC:
        raise ShardError(f"bad shard magic {magic!r}", 0)
    if version != SHARD_VERSION:
        raise ShardError(f"unsupported shard version {version}", 4)
    C = Cs + 2
    per = P * W * C + W * C + H * 3
    need = _HEADER.size + 4 * per * n
    if len(buf) < need:
        # name the first byte of the first incomplete record
        done = (len(buf) - _HEADER.size) // (4 * per)
        raise ShardError(f"truncated shard: header declares {n} triplets of P={P}, "
                         f"only {done} complete", _HEADER.size + 4 * per * done)
    if len(buf) > need:
        raise ShardError("trailing bytes after declared triplets", need)
    flat = np.frombuffer(buf, dtype="<f4", count=per * n, offset=_HEADER.size).reshape(n, per)
    a, b = P * W * C, P * W * C + W * C
    return TripletArrays(flat[:, :a].reshape(n, P, W, C).astype(np.float32),
                         flat[:, a:b].reshape(n, W, C).astype(np.float32),
                         flat[:, b:].reshape(n, H, 3).astype(np.float32))


def read_shard(path) -> TripletArrays:
    return parse_shard(Path(path).read_bytes())


def write_manifest(path, entries) -> None:
    """entries: iterable of (shard_path, count)."""
    with open(path, "w") as f:
        for p, n in entries:
            f.write(f"{p}\t{int(n)}\n")


def read_manifest(path) -> list[tuple[str, int]]:
    out = []
    base = Path(path).parent
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        p, n = line.split("\t")
        q = Path(p)
        out.append((str(q if q.is_absolute() else base / q), int(n)))
    return out


def load_shards(paths) -> TripletArrays:
    parts = [read_shard(p) for p in paths]
    if not parts:
        raise ValueError("no shards given")
    return TripletArrays.concat(parts)


# ---------------------------------------------------------------- trajectories

@dataclass
class TrajectoryLog:
    poses: list
    observations: list  # (W, C) arrays
    twists: list = field(default_factory=list)
    scene_ref: str = ""
    light_level: float = 1.0

    def __len__(self):
        return len(self.poses)


@dataclass(frozen=True)
class OfflineConfig:
    l_min: int = 0
    l_max: int = 10
    normalization_scale: float = 1.0

    def __post_init__(self):
        if not (0 <= self.l_min <= self.l_max):
            raise ValueError("need 0 <= l_min <= l_max")


def stack_history(frames, t: int, P: int) -> np.ndarray:
    """Frames t-P+1..t, front-padded with frame 0 before the trajectory start."""
    idx = [max(k, 0) for k in range(t - P + 1, t + 1)]
    return np.stack([frames[k] for k in idx])


def relative_waypoints(poses, t: int, H: int) -> np.ndarray:
    base: Pose = poses[t]
    out = np.zeros((H, 3))
    for k in range(H):
        r = base.relative(poses[t + 1 + k])
        out[k] = (r.x, r.y, r.theta)
    return out


def relabel_hindsight(log: TrajectoryLog, t: int, cfg: OfflineConfig, seed, P: int = 6,
                      H: int = 5) -> Optional[Triplet]:
    """Hindsight triplet at frame ``t``; None when history or future is too short."""
    if t < P - 1 or t + H >= len(log):
        return None
    rng = np.random.default_rng(seed)
    l = int(rng.integers(cfg.l_min, cfg.l_max + 1))
    if t + l >= len(log):
        return None
    return Triplet(stack_history(log.observations, t, P), np.asarray(log.observations[t + l]),
                   relative_waypoints(log.poses, t, H))


def mirror_arrays(obs: np.ndarray, goal: np.ndarray, waypoints: np.ndarray):
    """Left-right reflection: reverse scan columns, negate lateral offset and heading."""
    wp = np.array(waypoints, copy=True)
    wp[..., 1:] *= -1
    return obs[..., ::-1, :], goal[..., ::-1, :], wp


def average_waypoint_distance(wps: np.ndarray) -> float:
    """Mean step length between consecutive waypoints, counting origin -> first."""
    wps = np.asarray(wps, dtype=np.float64).reshape(-1, np.shape(wps)[-2], 3)
    xy = np.concatenate([np.zeros((wps.shape[0], 1, 2)), wps[..., :2]], axis=1)
    return float(np.linalg.norm(np.diff(xy, axis=1), axis=-1).mean())


def normalize_waypoints(wps, scale: float) -> np.ndarray:
    if not scale > 0:
        raise ValueError(f"normalization scale must be positive, got {scale}")
    out = np.array(wps, dtype=np.float64, copy=True)
    out[..., :2] /= scale
    return out


def denormalize_waypoints(wps, scale: float) -> np.ndarray:
    if not scale > 0:
        raise ValueError(f"normalization scale must be positive, got {scale}")
    out = np.array(wps, dtype=np.float64, copy=True)
    out[..., :2] *= scale
    return out
