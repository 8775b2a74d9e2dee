"""Procedural grid worlds, unicycle kinematics, grid planning and a scanline renderer.

Coordinates: cell ``(row=j, col=i)`` covers ``[i*cs, (i+1)*cs) x [j*cs, (j+1)*cs)``
in world meters, with the grid origin at ``(0, 0)``.  Angles are CCW from +x.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

CATEGORIES = ("open_space", "tight_maneuver", "clutter")
N_SEMANTIC = 7  # classes for occupied cells, ids 1..N_SEMANTIC
C_SEMANTIC = N_SEMANTIC + 1  # one-hot width, index 0 = "no hit"
N_CHANNELS = 2 + C_SEMANTIC  # inv_depth, appearance, semantics
MIN_SCENE_SIZE = 16
SCENE_MAGIC = b"TNLS"
SCENE_VERSION = 1


class WorldError(Exception):
    pass


class SceneGenerationError(WorldError):
    pass


class PlanningError(WorldError):
    pass


class NoPathError(PlanningError):
    pass


def wrap_angle(a):
    """Wrap to (-pi, pi].  Works on floats and arrays."""
    if isinstance(a, np.ndarray):
        w = np.mod(a + np.pi, 2 * np.pi) - np.pi
        w[w <= -np.pi] += 2 * np.pi
        return w
    w = math.fmod(a + math.pi, 2 * math.pi)
    if w < 0:
        w += 2 * math.pi
    w -= math.pi
    if w <= -math.pi:
        w += 2 * math.pi
    return w


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self.x, self.y, self.theta}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def compose(self, rel: "Pose") -> "Pose":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose(self.x + c * rel.x - s * rel.y, self.y + s * rel.x + c * rel.y, self.theta + rel.theta)

    def relative(self, other: "Pose") -> "Pose":
        """``other`` expressed in the frame of ``self``."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = other.x - self.x, other.y - self.y
        return Pose(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)

    def distance(self, other: "Pose") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class Twist:
    v: float
    omega: float


STOP = Twist(0.0, 0.0)


@dataclass(frozen=True)
class Embodiment:
    radius: float = 0.1
    v_max: float = 0.3
    omega_max: float = 1.0
    dt: float = 0.25

    def __post_init__(self):
        if self.radius <= 0 or self.dt <= 0:
            raise ValueError("radius and dt must be positive")
        if self.v_max < 0 or self.omega_max < 0:
            raise ValueError("velocity limits must be non-negative")

    def clamp(self, v: float, omega: float) -> Twist:
        return Twist(min(max(v, -self.v_max), self.v_max), min(max(omega, -self.omega_max), self.omega_max))


@dataclass(frozen=True)
class Camera:
    fov: float = math.radians(110.0)
    W: int = 32
    max_range: float = 10.0

    def column_offsets(self) -> np.ndarray:
        """Ray angle offsets from the heading, leftmost column first."""
        i = np.arange(self.W)
        return self.fov * (0.5 - (i + 0.5) / self.W)


@dataclass(frozen=True)
class Observation:
    inv_depth: np.ndarray  # (W,)
    appearance: np.ndarray  # (W,)
    semantic: np.ndarray  # (W, C_SEMANTIC) one-hot
    light_level: float = 1.0

    @property
    def W(self) -> int:
        return self.inv_depth.shape[0]

    def to_array(self) -> np.ndarray:
        """(W, 2 + C_s) float32 channel stack."""
        return np.concatenate(
            [self.inv_depth[:, None], self.appearance[:, None], self.semantic], axis=1
        ).astype(np.float32)

    @classmethod
    def from_array(cls, arr: np.ndarray, light_level: float = float("nan")) -> "Observation":
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2:].copy(), light_level)


@dataclass(eq=False)
class OccupancyScene:
    occupancy: np.ndarray  # (height, width) bool
    albedo: np.ndarray  # (height, width) float32
    semantic_id: np.ndarray  # (height, width) uint8
    cell_size: float = 0.1
    category: Optional[str] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.occupancy = np.ascontiguousarray(self.occupancy, dtype=bool)
        self.albedo = np.ascontiguousarray(self.albedo, dtype=np.float32)
        self.semantic_id = np.ascontiguousarray(self.semantic_id, dtype=np.uint8)
        if not (self.occupancy.shape == self.albedo.shape == self.semantic_id.shape):
            raise ValueError("per-cell arrays must share a shape")
        if not np.all(np.isfinite(self.albedo)) or self.albedo.min() < 0 or self.albedo.max() > 1:
            raise ValueError("albedo must be finite in [0, 1]")
        if self.occupancy.all():
            raise ValueError("scene has no free cell")
        for arr in (self.occupancy, self.albedo, self.semantic_id):
            arr.setflags(write=False)

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def cell_center(self, j: int, i: int) -> tuple[float, float]:
        return (i + 0.5) * self.cell_size, (j + 0.5) * self.cell_size

    def in_bounds(self, j: int, i: int) -> bool:
        return 0 <= j < self.height and 0 <= i < self.width

    def clearance_map(self) -> np.ndarray:
        """Distance from each cell center to the nearest occupied cell square, capped.

        Out-of-grid space counts as occupied.  Occupied cells get 0.
        """
        if "clearance" not in self._cache:
            cs = self.cell_size
            K = 12
            pad = np.pad(self.occupancy, K, constant_values=True)
            cap = (K - 0.5) * cs
            clr = np.full(self.occupancy.shape, cap)
            h, w = self.occupancy.shape
            for dj in range(-K, K + 1):
                for di in range(-K, K + 1):
                    d = math.hypot(max(abs(di) * cs - cs / 2, 0.0), max(abs(dj) * cs - cs / 2, 0.0))
                    if d >= cap:
                        continue
                    occ = pad[K + dj:K + dj + h, K + di:K + di + w]
                    clr = np.where(occ & (clr > d), d, clr)
            clr[self.occupancy] = 0.0
            clr.setflags(write=False)
            self._cache["clearance"] = clr
        return self._cache["clearance"]

    def feasible(self, clearance: float) -> np.ndarray:
        return (~self.occupancy) & (self.clearance_map() >= clearance - 1e-9)

    def to_bytes(self) -> bytes:
        h, w = self.occupancy.shape
        rec = np.zeros(h * w, dtype=np.dtype([("occ", "u1"), ("albedo", "<f4"), ("sem", "u1")]))
        rec["occ"] = self.occupancy.ravel()
        rec["albedo"] = self.albedo.ravel()
        rec["sem"] = self.semantic_id.ravel()
        return SCENE_MAGIC + struct.pack("<HIIf", SCENE_VERSION, w, h, self.cell_size) + rec.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, category: Optional[str] = None) -> "OccupancyScene":
        if buf[:4] != SCENE_MAGIC:
            raise WorldError("bad scene magic at offset 0")
        if len(buf) < 18:
            raise WorldError(f"truncated scene header at offset {len(buf)}")
        version, w, h, cs = struct.unpack_from("<HIIf", buf, 4)
        if version != SCENE_VERSION:
            raise WorldError(f"unsupported scene version {version} at offset 4")
        dt = np.dtype([("occ", "u1"), ("albedo", "<f4"), ("sem", "u1")])
        need = 18 + w * h * dt.itemsize
        if len(buf) < need:
            raise WorldError(f"truncated scene payload at offset {len(buf)} (need {need})")
        rec = np.frombuffer(buf, dtype=dt, count=w * h, offset=18)
        return cls(
            rec["occ"].reshape(h, w).astype(bool),
            rec["albedo"].reshape(h, w).astype(np.float32),
            rec["sem"].reshape(h, w).astype(np.uint8),
            cell_size=float(f"{cs:.7g}"),  # undo f32 rounding of decimal sizes like 0.1
            category=category,
        )

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path, category: Optional[str] = None) -> "OccupancyScene":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read(), category)


def empty_scene(width: int, height: int, cell_size: float = 0.1, walls: bool = True) -> OccupancyScene:
    occ = np.zeros((height, width), dtype=bool)
    if walls:
        occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    sem = np.where(occ, 1, 0).astype(np.uint8)
    return OccupancyScene(occ, np.full((height, width), 0.5, np.float32), sem, cell_size)


# ---------------------------------------------------------------- generation

def _rect(occ, j0, i0, hh, ww):
    occ[max(j0, 0):j0 + hh, max(i0, 0):i0 + ww] = True


def _keep_largest_component(occ: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(~occ)
    if n <= 1:
        return occ
    sizes = ndimage.sum(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    keep = 1 + int(np.argmax(sizes))
    return occ | ((labels != keep) & (labels > 0))


def _paint(occ: np.ndarray, rng: np.random.Generator):
    """Albedo texture and semantic ids: walls in segments, obstacles per blob."""
    h, w = occ.shape
    sem = np.zeros((h, w), np.uint8)
    albedo = np.zeros((h, w), np.float32)
    labels, n = ndimage.label(occ)
    # split everything into tiles so long walls carry several classes
    tile = 6
    tj, ti = np.meshgrid(np.arange(h) // tile, np.arange(w) // tile, indexing="ij")
    tile_id = tj * (w // tile + 1) + ti
    n_tiles = int(tile_id.max()) + 1
    cls_of = rng.integers(1, N_SEMANTIC + 1, size=(n + 1, n_tiles))
    base_of = rng.uniform(0.2, 0.9, size=(n + 1, n_tiles))
    sem[occ] = cls_of[labels[occ], tile_id[occ]]
    noise = rng.uniform(-0.1, 0.1, size=(h, w))
    albedo[occ] = np.clip(base_of[labels[occ], tile_id[occ]] + noise[occ], 0.0, 1.0)
    return albedo.astype(np.float32), sem


def _gen_open(size, rng):
    occ = np.zeros((size, size), bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    for _ in range(rng.integers(2, 6)):
        hh, ww = rng.integers(2, max(3, size // 8) + 1, size=2)
        j0, i0 = rng.integers(3, size - 3 - max(hh, ww), size=2)
        _rect(occ, j0, i0, hh, ww)
    return occ


def _gen_tight(size, rng, radius, cell_size):
    occ = np.zeros((size, size), bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    gap = int(math.floor((3 * radius + 2 * cell_size) / cell_size + 1e-9))
    if gap % 2 == 0:
        gap -= 1  # odd width keeps a centre row of cells planable
    # a dividing wall with a narrow door, fronted by a short corridor
    c = int(rng.integers(size // 3, 2 * size // 3))
    door = int(rng.integers(4, size - 4 - gap))
    occ[1:-1, c] = True
    occ[door:door + gap, c] = False
    clen = int(rng.integers(3, max(4, size // 6)))
    occ[door - 1, c - clen:c + 1] = True
    occ[door + gap, c - clen:c + 1] = True
    # a pillar to loop around on the far side
    pj = int(rng.integers(3, size - 7))
    pi = int(rng.integers(c + 3, size - 6))
    _rect(occ, pj, pi, 3, 3)
    if rng.random() < 0.5:
        occ = occ.T.copy()
    return occ


def _gen_clutter(size, rng):
    occ = np.zeros((size, size), bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    n = int(rng.integers(15, 15 + size // 4))
    placed = 0
    tries = 0
    while placed < n and tries < 50 * n:
        tries += 1
        hh, ww = rng.integers(1, 3, size=2)
        j0, i0 = rng.integers(3, size - 3 - 2, size=2)
        if occ[j0 - 2:j0 + hh + 2, i0 - 2:i0 + ww + 2].any():
            continue
        _rect(occ, j0, i0, hh, ww)
        placed += 1
    return occ


def count_obstacles(scene_occ: np.ndarray) -> int:
    inner = scene_occ.copy()
    inner[0, :] = inner[-1, :] = inner[:, 0] = inner[:, -1] = False
    labels, n = ndimage.label(inner)
    # components touching the border wall are walls, not obstacles
    border = set(np.unique(np.concatenate([labels[1, :], labels[-2, :], labels[:, 1], labels[:, -2]])))
    return sum(1 for k in range(1, n + 1) if k not in border)


def generate_scene(category: str, size: int, seed: int, cell_size: float = 0.1,
                   radius: float = 0.1, max_tries: int = 50) -> OccupancyScene:
    if category not in CATEGORIES:
        raise ValueError(f"unknown scene category {category!r}")
    if size < MIN_SCENE_SIZE:
        raise SceneGenerationError(f"scene size {size} below minimum {MIN_SCENE_SIZE}")
    rng = np.random.default_rng([seed, CATEGORIES.index(category), size])
    for _ in range(max_tries):
        if category == "open_space":
            occ = _gen_open(size, rng)
        elif category == "tight_maneuver":
            occ = _gen_tight(size, rng, radius, cell_size)
        else:
            occ = _gen_clutter(size, rng)
        occ = _keep_largest_component(occ)
        free_interior = (~occ[1:-1, 1:-1]).mean()
        if category == "open_space" and free_interior < 0.7:
            continue
        if category == "clutter" and count_obstacles(occ) < 15:
            continue
        if (~occ).sum() < 16:
            continue
        albedo, sem = _paint(occ, rng)
        return OccupancyScene(occ, albedo, sem, cell_size, category)
    raise SceneGenerationError(f"could not satisfy {category} constraints at size {size}")


# ---------------------------------------------------------------- kinematics

def is_collision(scene: OccupancyScene, pose: Pose, radius: float) -> bool:
    """Closed-disc vs occupied-cell intersection; leaving the grid is a collision."""
    x, y = pose.x, pose.y
    cs = scene.cell_size
    if x - radius < 0 or y - radius < 0 or x + radius > scene.width * cs or y + radius > scene.height * cs:
        return True
    i0, i1 = int(math.floor((x - radius) / cs)), int(math.floor((x + radius) / cs))
    j0, j1 = int(math.floor((y - radius) / cs)), int(math.floor((y + radius) / cs))
    i1 = min(i1, scene.width - 1)
    j1 = min(j1, scene.height - 1)
    occ = scene.occupancy
    r2 = radius * radius
    for j in range(j0, j1 + 1):
        for i in range(i0, i1 + 1):
            if not occ[j, i]:
                continue
            dx = max(i * cs - x, 0.0, x - (i + 1) * cs)
            dy = max(j * cs - y, 0.0, y - (j + 1) * cs)
            if dx * dx + dy * dy <= r2:
                return True
    return False


def euler_step(pose: Pose, twist: Twist, dt: float) -> Pose:
    return Pose(pose.x + twist.v * math.cos(pose.theta) * dt,
                pose.y + twist.v * math.sin(pose.theta) * dt,
                pose.theta + twist.omega * dt)


def step_kinematic(scene: OccupancyScene, pose: Pose, twist: Twist, emb: Embodiment) -> tuple[Pose, bool]:
    if not (math.isfinite(twist.v) and math.isfinite(twist.omega)):
        raise ValueError(f"non-finite twist {twist}")
    if abs(twist.v) > emb.v_max + 1e-9 or abs(twist.omega) > emb.omega_max + 1e-9:
        raise ValueError(f"twist {twist} exceeds embodiment limits")
    cand = euler_step(pose, twist, emb.dt)
    if is_collision(scene, cand, emb.radius):
        return pose, True
    return cand, False


# ---------------------------------------------------------------- planning

_NEIGHBORS = [(0, 1, 1.0), (0, -1, 1.0), (1, 0, 1.0), (-1, 0, 1.0),
              (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)), (-1, -1, math.sqrt(2))]


def grid_graph(mask: np.ndarray, cell_size: float):
    """Sparse 8-connected graph over ``mask`` cells; diagonals need both side cells."""
    h, w = mask.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for dj, di, c in _NEIGHBORS:
        js, je = max(0, -dj), h - max(0, dj)
        is_, ie = max(0, -di), w - max(0, di)
        ok = np.zeros_like(mask)
        ok[js:je, is_:ie] = mask[js:je, is_:ie] & mask[js + dj:je + dj, is_ + di:ie + di]
        if dj and di:
            ok[js:je, is_:ie] &= mask[js + dj:je + dj, is_:ie] & mask[js:je, is_ + di:ie + di]
        a = idx[ok]
        rows.append(a)
        cols.append(a + dj * w + di)
        vals.append(np.full(a.shape, c * cell_size))
    r = np.concatenate(rows)
    return coo_matrix((np.concatenate(vals), (r, np.concatenate(cols))), shape=(h * w, h * w)).tocsr()


def _graph(scene: OccupancyScene, clearance: float):
    key = ("graph", round(clearance, 9))
    if key not in scene._cache:
        mask = scene.feasible(clearance)
        scene._cache[key] = (mask, grid_graph(mask, scene.cell_size))
    return scene._cache[key]


def _check_endpoint(scene, pose, clearance, mask, what):
    j, i = scene.cell_of(pose.x, pose.y)
    if not scene.in_bounds(j, i) or not mask[j, i]:
        raise PlanningError(f"{what} {pose} is not free at clearance {clearance}")
    return j, i


def distance_field(scene: OccupancyScene, goal: Pose, clearance: float):
    """Geodesic distance from every cell to the goal cell and next-hop predecessors."""
    mask, g = _graph(scene, clearance)
    gj, gi = _check_endpoint(scene, goal, clearance, mask, "goal")
    # graph is symmetric, so distances from the goal equal distances to it
    dist, pred = dijkstra(g, directed=True, indices=gj * scene.width + gi, return_predecessors=True)
    return dist.reshape(scene.height, scene.width), pred.reshape(scene.height, scene.width)


def geodesic_distance(scene: OccupancyScene, a: Pose, b: Pose, clearance: float) -> float:
    mask, g = _graph(scene, clearance)
    aj, ai = _check_endpoint(scene, a, clearance, mask, "start")
    bj, bi = _check_endpoint(scene, b, clearance, mask, "goal")
    if (aj, ai) == (bj, bi):
        return 0.0
    d = dijkstra(g, directed=True, indices=aj * scene.width + ai)
    return float(d[bj * scene.width + bi])


def path_cells_from_field(pred: np.ndarray, width: int, j: int, i: int) -> list[tuple[int, int]]:
    """Cells from (j, i) to the field's source following predecessors."""
    cells = [(j, i)]
    k = pred[j, i]
    while k >= 0:
        cells.append((int(k) // width, int(k) % width))
        k = pred[cells[-1]]
    return cells


def polyline_from_cells(scene: OccupancyScene, start: Pose, goal: Pose, cells) -> list[Pose]:
    pts = [(start.x, start.y)]
    pts += [scene.cell_center(j, i) for j, i in cells[1:-1]]
    pts.append((goal.x, goal.y))
    poses = []
    for k, (x, y) in enumerate(pts):
        if k + 1 < len(pts):
            nx, ny = pts[k + 1]
            th = math.atan2(ny - y, nx - x) if (nx, ny) != (x, y) else (poses[-1].theta if poses else start.theta)
        else:
            th = goal.theta if len(pts) == 1 else poses[-1].theta
        poses.append(Pose(x, y, th))
    if len(poses) == 1:
        return [start]
    return poses


def shortest_path(scene: OccupancyScene, start: Pose, goal: Pose, clearance: float) -> list[Pose]:
    dist, pred = distance_field(scene, goal, clearance)
    mask, _ = _graph(scene, clearance)
    sj, si = _check_endpoint(scene, start, clearance, mask, "start")
    if not np.isfinite(dist[sj, si]):
        raise NoPathError(f"no path from {start} to {goal} at clearance {clearance}")
    if start.distance(goal) == 0.0:
        return [start]
    cells = path_cells_from_field(pred, scene.width, sj, si)
    return polyline_from_cells(scene, start, goal, cells)


def segment_free(mask: np.ndarray, cs: float, a, b) -> bool:
    """True if every cell touched by samples of segment a-b (step cs/4) is set in ``mask``."""
    (ax, ay), (bx, by) = a, b
    n = max(2, int(math.ceil(math.hypot(bx - ax, by - ay) / (0.25 * cs))) + 1)
    t = np.linspace(0.0, 1.0, n)
    i = np.floor((ax + t * (bx - ax)) / cs).astype(np.int64)
    j = np.floor((ay + t * (by - ay)) / cs).astype(np.int64)
    h, w = mask.shape
    if (i < 0).any() or (j < 0).any() or (i >= w).any() or (j >= h).any():
        return False
    return bool(mask[j, i].all())


def smooth_path(scene: OccupancyScene, path, clearance: float) -> list[Pose]:
    """Greedy line-of-sight shortcutting of a grid polyline.

    From each kept vertex, jump to the farthest later vertex reachable by a
    straight segment through cells that are free at ``clearance``.  Consecutive
    vertices are always allowed, so the result never fails.  Headings are the
    outgoing segment directions; endpoints keep their given poses.
    """
    path = list(path)
    if len(path) <= 2:
        return path
    mask = scene.feasible(clearance)
    pts = [(p.x, p.y) for p in path]
    keep, k = [0], 0
    while k < len(pts) - 1:
        j = k + 1
        while j + 1 < len(pts) and segment_free(mask, scene.cell_size, pts[k], pts[j + 1]):
            j += 1
        keep.append(j)
        k = j
    out = [path[0]]
    for a, b in zip(keep[1:-1], keep[2:]):
        (x, y), (nx, ny) = pts[a], pts[b]
        out.append(Pose(x, y, math.atan2(ny - y, nx - x)))
    out.append(path[-1])
    return out


def path_length(path) -> float:
    return float(sum(a.distance(b) for a, b in zip(path[:-1], path[1:])))


# ---------------------------------------------------------------- rendering

@numba.njit(cache=True)
def _cast(occ, albedo, sem, cs, xs, ys, angs, max_range, out_t, out_a, out_s):
    h, w = occ.shape
    n = xs.shape[0]
    for k in range(n):
        x = xs[k] / cs
        y = ys[k] / cs
        dx = math.cos(angs[k])
        dy = math.sin(angs[k])
        i = int(math.floor(x))
        j = int(math.floor(y))
        step_i = 1 if dx > 0 else -1
        step_j = 1 if dy > 0 else -1
        if dx != 0.0:
            t_dx = abs(1.0 / dx)
            t_mx = ((i + 1 - x) if dx > 0 else (x - i)) * t_dx
        else:
            t_dx = 1e30
            t_mx = 1e30
        if dy != 0.0:
            t_dy = abs(1.0 / dy)
            t_my = ((j + 1 - y) if dy > 0 else (y - j)) * t_dy
        else:
            t_dy = 1e30
            t_my = 1e30
        t = 0.0
        rng = max_range / cs
        out_t[k] = -1.0
        out_a[k] = 0.0
        out_s[k] = 0
        while t <= rng:
            if i < 0 or j < 0 or i >= w or j >= h:
                break
            if occ[j, i]:
                out_t[k] = t * cs
                out_a[k] = albedo[j, i]
                out_s[k] = sem[j, i]
                break
            if t_mx < t_my:
                t = t_mx
                t_mx += t_dx
                i += step_i
            else:
                t = t_my
                t_my += t_dy
                j += step_j


def cast_rays(scene: OccupancyScene, xs, ys, angs, max_range: float):
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    angs = np.ascontiguousarray(angs, dtype=np.float64)
    n = xs.shape[0]
    t = np.empty(n)
    a = np.empty(n, np.float32)
    s = np.empty(n, np.int64)
    _cast(scene.occupancy, scene.albedo, scene.semantic_id, scene.cell_size, xs, ys, angs, max_range, t, a, s)
    t[t > max_range] = -1.0
    return t, a, s


def render(scene: OccupancyScene, pose: Pose, camera: Camera = Camera(), light_level: float = 1.0,
           check: bool = True) -> Observation:
    if check:
        j, i = scene.cell_of(pose.x, pose.y)
        if not scene.in_bounds(j, i) or scene.occupancy[j, i]:
            raise WorldError(f"cannot render from inside an obstacle at {pose}")
    angs = pose.theta + camera.column_offsets()
    W = camera.W
    t, a, s = cast_rays(scene, np.full(W, pose.x), np.full(W, pose.y), angs, camera.max_range)
    hit = t > 0
    inv = np.where(hit, 1.0 / np.where(hit, t, 1.0), 0.0)
    sem = np.zeros((W, C_SEMANTIC), np.float32)
    sem[np.arange(W), np.where(t >= 0, s, 0)] = 1.0
    app = np.where(t >= 0, a.astype(np.float64) * light_level, 0.0)
    return Observation(inv.astype(np.float32), app.astype(np.float32), sem, float(light_level))
