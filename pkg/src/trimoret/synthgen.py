"""Procedural generator for aligned (text, motion, scene) triples.

Everything is a pure function of (config, seeds). Scenes are box-backed rooms
with class-colored object point clouds; motions walk a planned collision-free
path to a target object and finish with an action pattern; captions come from
a small template grammar and are featurized with a deterministic hashed
n-gram embedding.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .types import (
    JOINT_COUNT,
    JOINT_NAMES,
    PELVIS,
    MotionSequence,
    ObjectInstance,
    SampleTruth,
    SceneGraphMeta,
    ScenePointCloud,
    TextFeature,
    TrimodalSample,
    validate_sample,
)


class SceneTooCrowdedError(RuntimeError):
    pass


class NoPathError(RuntimeError):
    pass


# class -> (half extents xyz [m], rgb color)
OBJECT_CATALOG: dict[str, tuple[tuple[float, float, float], tuple[float, float, float]]] = {
    "chair": ((0.22, 0.22, 0.40), (0.85, 0.10, 0.10)),
    "table": ((0.25, 0.25, 0.37), (0.10, 0.75, 0.10)),
    "bed": ((0.25, 0.25, 0.25), (0.15, 0.20, 0.90)),
    "lamp": ((0.10, 0.10, 0.60), (0.90, 0.85, 0.10)),
    "sofa": ((0.25, 0.20, 0.30), (0.80, 0.15, 0.80)),
    "shelf": ((0.25, 0.15, 0.50), (0.10, 0.80, 0.80)),
}

ACTIONS = ("sit", "lie", "reach", "stand up", "pick up")

# sitting/lying requires a surface below standing pelvis height
_SURFACE_ACTIONS = {
    "chair": ("sit", "reach", "stand up", "pick up"),
    "table": ("sit", "lie", "reach", "stand up", "pick up"),
    "bed": ("sit", "lie", "reach", "stand up", "pick up"),
    "sofa": ("sit", "lie", "reach", "stand up", "pick up"),
    "lamp": ("reach", "stand up", "pick up"),
    "shelf": ("reach", "stand up", "pick up"),
}

FLOOR_COLOR = (0.55, 0.55, 0.55)

# walkability margins, meters
_BOX_GAP = 1.0        # min face-to-face gap between placed boxes
_WALL_GAP = 0.8       # min box-face distance to walls
_CLEARANCE = 0.35     # pelvis-path clearance around boxes
_CELL = 0.25          # planning grid cell

PELVIS_HEIGHT = 0.90
_STRIDE = 0.7         # gait cycle length, meters
_GAIT_LIFT = 0.08
_ARM_SWING = 0.12


def allowed_actions(class_label: str) -> tuple[str, ...]:
    return _SURFACE_ACTIONS[class_label]


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    room_size: tuple[float, float] = (6.0, 6.0)
    room_height: float = 2.4
    objects_min: int = 3
    objects_max: int = 6
    points_per_object: int = 256
    floor_points: int = 1024
    frames: int = 60
    text_dim: int = 768
    object_classes: tuple[str, ...] = tuple(OBJECT_CATALOG)
    # samples per scene family: members share the layout, target and action,
    # but the target object is displaced by a small jitter. Near-duplicate
    # scenes act as hard negatives that force encoders to resolve object
    # positions well below the typical inter-object spacing.
    family_size: int = 4
    jitter_min: float = 0.10
    jitter_max: float = 1.25
    # some family members lift the target instead of sliding it: vertical
    # near-duplicates are the only training pressure against placements that
    # float the object toward body height
    jitter_lift_prob: float = 0.35
    jitter_lift_min: float = 0.2
    jitter_lift_max: float = 0.6

    def room_bounds(self) -> np.ndarray:
        return np.array([[0.0, 0.0, 0.0],
                         [self.room_size[0], self.room_size[1], self.room_height]])


@dataclass(frozen=True)
class DatasetSplit:
    samples: tuple[TrimodalSample, ...]
    scene_seeds: tuple[int, ...]  # one entry per sample


def _rng(cfg_seed: int, stream: str, *seeds: int) -> np.random.Generator:
    tag = int.from_bytes(hashlib.blake2b(stream.encode(), digest_size=4).digest(), "little")
    return np.random.default_rng([cfg_seed, tag, *seeds])


# ---------------------------------------------------------------------------
# scenes


def gen_scene(cfg: GeneratorConfig, scene_seed: int) -> ScenePointCloud:
    """Place non-overlapping object boxes and sample the colored point cloud."""
    rng = _rng(cfg.seed, "scene", scene_seed)
    w, d = cfg.room_size
    n_obj = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    classes = [cfg.object_classes[i] for i in rng.integers(0, len(cfg.object_classes), n_obj)]

    placed: list[ObjectInstance] = []
    for attempt in range(40):  # whole-layout restarts for crowded draws
        placed = []
        failed = False
        for k, cls in enumerate(classes):
            (ex, ey, ez), color = OBJECT_CATALOG[cls]
            ok = False
            for _ in range(200):
                cx = rng.uniform(ex + _WALL_GAP, w - ex - _WALL_GAP)
                cy = rng.uniform(ey + _WALL_GAP, d - ey - _WALL_GAP)
                clash = False
                for other in placed:
                    ox, oy, _ = other.half_extents
                    if (abs(cx - other.anchor[0]) < ex + ox + _BOX_GAP
                            and abs(cy - other.anchor[1]) < ey + oy + _BOX_GAP):
                        clash = True
                        break
                if not clash:
                    start = cfg.floor_points + k * cfg.points_per_object
                    placed.append(ObjectInstance(
                        class_label=cls,
                        anchor=(cx, cy, ez),
                        half_extents=(ex, ey, ez),
                        color=color,
                        point_range=(start, start + cfg.points_per_object),
                    ))
                    ok = True
                    break
            if not ok:
                failed = True
                break
        if not failed:
            break
    else:
        raise SceneTooCrowdedError(f"scene too crowded with seed {scene_seed}")

    pts = np.zeros((cfg.floor_points + n_obj * cfg.points_per_object, 6), dtype=np.float64)
    pts[:cfg.floor_points, 0] = rng.uniform(0.0, w, cfg.floor_points)
    pts[:cfg.floor_points, 1] = rng.uniform(0.0, d, cfg.floor_points)
    pts[:cfg.floor_points, 3:] = FLOOR_COLOR
    for obj in placed:
        s, e = obj.point_range
        lo, hi = obj.box_min, obj.box_max
        pts[s:e, :3] = rng.uniform(lo, hi, (cfg.points_per_object, 3))
        pts[s:e, 3:] = obj.color

    meta = SceneGraphMeta(objects=tuple(placed), room_bounds=cfg.room_bounds())
    return ScenePointCloud(points=pts.astype(np.float32), meta=meta)


# ---------------------------------------------------------------------------
# path planning

def _grid_dims(cfg: GeneratorConfig) -> tuple[int, int]:
    return (int(round(cfg.room_size[0] / _CELL)), int(round(cfg.room_size[1] / _CELL)))


def _blocked_grid(cfg: GeneratorConfig, meta: SceneGraphMeta) -> np.ndarray:
    nx, ny = _grid_dims(cfg)
    xs = (np.arange(nx) + 0.5) * _CELL
    ys = (np.arange(ny) + 0.5) * _CELL
    blocked = np.zeros((nx, ny), dtype=bool)
    for obj in meta.objects:
        inx = np.abs(xs - obj.anchor[0]) < obj.half_extents[0] + _CLEARANCE
        iny = np.abs(ys - obj.anchor[1]) < obj.half_extents[1] + _CLEARANCE
        blocked |= inx[:, None] & iny[None, :]
    # keep half a body width off the walls
    blocked[0, :] = blocked[-1, :] = True
    blocked[:, 0] = blocked[:, -1] = True
    return blocked


def _bfs_dist(blocked: np.ndarray, goal: tuple[int, int]) -> np.ndarray:
    nx, ny = blocked.shape
    dist = np.full((nx, ny), -1, dtype=np.int32)
    if blocked[goal]:
        return dist
    dist[goal] = 0
    queue = [goal]
    head = 0
    while head < len(queue):
        cx, cy = queue[head]
        head += 1
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            x, y = cx + dx, cy + dy
            if 0 <= x < nx and 0 <= y < ny and not blocked[x, y] and dist[x, y] < 0:
                dist[x, y] = dist[cx, cy] + 1
                queue.append((x, y))
    return dist


def _trace_path(dist: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    path = [start]
    cur = start
    while dist[cur] > 0:
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = (cur[0] + dx, cur[1] + dy)
            if (0 <= nxt[0] < dist.shape[0] and 0 <= nxt[1] < dist.shape[1]
                    and dist[nxt] == dist[cur] - 1):
                cur = nxt
                path.append(cur)
                break
    return path


def _cells_to_waypoints(cells: list[tuple[int, int]]) -> np.ndarray:
    pts = np.array([((cx + 0.5) * _CELL, (cy + 0.5) * _CELL) for cx, cy in cells])
    if len(pts) <= 2:
        return pts
    keep = [0]
    for i in range(1, len(pts) - 1):
        a, b, c = pts[keep[-1]], pts[i], pts[i + 1]
        if abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) > 1e-12:
            keep.append(i)
    keep.append(len(pts) - 1)
    return pts[keep]


# ---------------------------------------------------------------------------
# motion synthesis

def _standing_offsets() -> np.ndarray:
    """Joint offsets relative to the pelvis for a standing pose facing +x."""
    z = {  # absolute heights of the canonical skeleton
        "pelvis": 0.90,
        "left_hip": 0.85, "right_hip": 0.85,
        "spine1": 1.02, "spine2": 1.14, "spine3": 1.26,
        "left_knee": 0.50, "right_knee": 0.50,
        "left_ankle": 0.10, "right_ankle": 0.10,
        "left_foot": 0.05, "right_foot": 0.05,
        "neck": 1.40, "head": 1.55,
        "left_collar": 1.32, "right_collar": 1.32,
        "left_shoulder": 1.35, "right_shoulder": 1.35,
        "left_elbow": 1.10, "right_elbow": 1.10,
        "left_wrist": 0.88, "right_wrist": 0.88,
    }
    y = {
        "left_hip": 0.10, "right_hip": -0.10,
        "left_knee": 0.10, "right_knee": -0.10,
        "left_ankle": 0.10, "right_ankle": -0.10,
        "left_foot": 0.10, "right_foot": -0.10,
        "left_collar": 0.08, "right_collar": -0.08,
        "left_shoulder": 0.18, "right_shoulder": -0.18,
        "left_elbow": 0.20, "right_elbow": -0.20,
        "left_wrist": 0.22, "right_wrist": -0.22,
    }
    x = {"left_foot": 0.12, "right_foot": 0.12}
    out = np.zeros((JOINT_COUNT, 3))
    for j, name in enumerate(JOINT_NAMES):
        out[j] = (x.get(name, 0.0), y.get(name, 0.0), z[name] - z["pelvis"])
    return out


_OFFSETS = _standing_offsets()
_J = {name: i for i, name in enumerate(JOINT_NAMES)}


def _rot_z(offsets: np.ndarray, heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    rot = offsets.copy()
    rot[:, 0] = c * offsets[:, 0] - s * offsets[:, 1]
    rot[:, 1] = s * offsets[:, 0] + c * offsets[:, 1]
    return rot


def _pose(pelvis_xy: np.ndarray, heading: float, pelvis_z: float = PELVIS_HEIGHT) -> np.ndarray:
    frame = _rot_z(_OFFSETS, heading)
    frame[:, 0] += pelvis_xy[0]
    frame[:, 1] += pelvis_xy[1]
    frame[:, 2] += pelvis_z
    return frame


def _gait(frame: np.ndarray, heading: float, phase: float) -> np.ndarray:
    frame = frame.copy()
    lift = _GAIT_LIFT * max(0.0, math.sin(phase))
    frame[_J["left_ankle"], 2] += lift
    frame[_J["left_foot"], 2] += lift
    lift = _GAIT_LIFT * max(0.0, math.sin(phase + math.pi))
    frame[_J["right_ankle"], 2] += lift
    frame[_J["right_foot"], 2] += lift
    fx, fy = math.cos(heading), math.sin(heading)
    swing = _ARM_SWING * math.sin(phase)
    for name, sgn in (("left_wrist", 1.0), ("right_wrist", -1.0), ("left_elbow", 0.5), ("right_elbow", -0.5)):
        frame[_J[name], 0] += sgn * swing * fx
        frame[_J[name], 1] += sgn * swing * fy
    return frame


_STANDOFF = 0.24  # pelvis-to-face distance for standing actions, meters


def _exit_distance(facing: np.ndarray, half_extents: np.ndarray) -> float:
    """Distance from the box center to its face along -facing (xy only)."""
    ts = []
    for a in range(2):
        if abs(facing[a]) > 1e-9:
            ts.append(half_extents[a] / abs(facing[a]))
    return min(ts)


def _action_pose(action: str, target: ObjectInstance, facing: np.ndarray,
                 approach_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Final frame for the action, plus an optional mid-action frame."""
    heading = math.atan2(facing[1], facing[0])
    anchor_xy = target.anchor[:2]
    top = target.anchor[2] + target.half_extents[2]
    t_exit = _exit_distance(facing, target.half_extents)
    # stand clear of the face by more than the widest joint offset (0.22 m
    # wrist): every box point is then farther from the pelvis than any body
    # joint, so the final pose stays collision-free under any rotation about
    # the pelvis and the plausibility filter measures path sweep, not pose
    face_xy = anchor_xy - facing * (t_exit + _STANDOFF)

    if action == "sit":
        pelvis_z = top + 0.03
        frame = _pose(anchor_xy, heading, pelvis_z)
        # legs fold forward onto the approach side, feet toward the floor
        for side in ("left", "right"):
            lat = _OFFSETS[_J[f"{side}_hip"], 1]
            perp = np.array([-facing[1], facing[0]]) * lat
            # 0.14 clears the box diagonal: the corner reaches at most
            # sqrt(2)*0.25 - 0.25 = 0.104 beyond the face under rotation
            for name, fwd, z in ((f"{side}_knee", t_exit + 0.14, max(0.12, pelvis_z - 0.35)),
                                 (f"{side}_ankle", t_exit + 0.22, 0.10),
                                 (f"{side}_foot", t_exit + 0.30, 0.05)):
                frame[_J[name], :2] = anchor_xy - facing * fwd + perp
                frame[_J[name], 2] = z
        return frame, None

    if action == "lie":
        frame = _pose(anchor_xy, heading, top + 0.07)
        body_axis = -facing  # head away from the approach side
        spread = {
            "head": 0.62, "neck": 0.50, "spine3": 0.36, "spine2": 0.24, "spine1": 0.12,
            "left_collar": 0.42, "right_collar": 0.42,
            "left_shoulder": 0.44, "right_shoulder": 0.44,
            "left_elbow": 0.28, "right_elbow": 0.28,
            "left_wrist": 0.10, "right_wrist": 0.10,
            "left_hip": -0.10, "right_hip": -0.10,
            "left_knee": -0.42, "right_knee": -0.42,
            "left_ankle": -0.72, "right_ankle": -0.72,
            "left_foot": -0.80, "right_foot": -0.80,
        }
        for name, dist in spread.items():
            lat = _OFFSETS[_J[name], 1]
            perp = np.array([-facing[1], facing[0]]) * lat
            frame[_J[name], :2] = anchor_xy + body_axis * dist + perp
            frame[_J[name], 2] = top + 0.07
        return frame, None

    # standing actions at the box face
    frame = _pose(face_xy, heading)
    if action == "reach":
        wrist_z = float(np.clip(target.anchor[2], 0.3, 1.4))
        wrist_xy = anchor_xy - facing * (t_exit + 0.02)
        frame[_J["right_wrist"], :2] = wrist_xy
        frame[_J["right_wrist"], 2] = wrist_z
        frame[_J["right_elbow"], :2] = (frame[_J["right_shoulder"], :2] + wrist_xy) / 2
        frame[_J["right_elbow"], 2] = (frame[_J["right_shoulder"], 2] + wrist_z) / 2
        return frame, None
    if action == "pick up":
        crouch = _pose(face_xy, heading, 0.72)
        crouch[:, 2] -= np.where(crouch[:, 2] > 0.72, 0.12, 0.0)
        wrist_xy = anchor_xy - facing * (t_exit + 0.02)
        frame[_J["right_wrist"], :2] = wrist_xy
        frame[_J["right_wrist"], 2] = top + 0.05
        frame[_J["right_elbow"], 2] = (frame[_J["right_shoulder"], 2] + top + 0.05) / 2
        return frame, crouch
    if action == "stand up":
        crouch = _pose(face_xy, heading, 0.55)
        crouch[:, 2] = np.maximum(crouch[:, 2] - 0.2, 0.03)
        crouch[_J["pelvis"], 2] = 0.55
        return frame, crouch
    raise ValueError(f"unknown action {action!r}")


def _lift_above_target(frames: np.ndarray, target: ObjectInstance) -> None:
    """Clamp joints inside the target footprint to just above the box top."""
    top = target.anchor[2] + target.half_extents[2]
    inside = ((np.abs(frames[..., 0] - target.anchor[0]) < target.half_extents[0])
              & (np.abs(frames[..., 1] - target.anchor[1]) < target.half_extents[1])
              & (frames[..., 2] < top + 0.03))
    frames[..., 2] = np.where(inside, top + 0.03, frames[..., 2])


def gen_motion(scene: ScenePointCloud, target_index: int, action: str,
               motion_seed: int, cfg: GeneratorConfig) -> tuple[MotionSequence, np.ndarray]:
    """Walk from a random free start to the target and perform the action.

    Returns the motion and the planned waypoint polyline (xy).
    """
    meta = scene.meta
    if meta is None or not (0 <= target_index < len(meta.objects)):
        raise ValueError("invalid target index")
    target = meta.objects[target_index]
    rng = _rng(0, "motion", motion_seed)

    blocked = _blocked_grid(cfg, meta)
    anchor_cell = (int(target.anchor[0] / _CELL), int(target.anchor[1] / _CELL))
    nx, ny = blocked.shape
    free = np.argwhere(~blocked)
    if len(free) == 0:
        raise NoPathError("no free cells")
    # goal: nearest free cell to the target anchor
    centers = (free + 0.5) * _CELL
    d2 = ((centers - target.anchor[:2]) ** 2).sum(1)
    goal = tuple(free[int(np.argmin(d2))])
    dist = _bfs_dist(blocked, goal)

    reachable = np.argwhere(dist > 0)
    if len(reachable) == 0:
        raise NoPathError(f"no path to target {target_index}")
    rcenters = (reachable + 0.5) * _CELL
    d2 = ((rcenters - target.anchor[:2]) ** 2).sum(1)
    # bounded start distance: far enough for a real approach walk, close
    # enough that a rotated path usually stays inside the room (keeps the
    # rotation sweep's plausibility filter from emptying at large angles)
    far = (d2 >= 1.5 ** 2) & (d2 <= 2.5 ** 2)
    if not far.any():
        far = d2 >= 1.5 ** 2
    pool = reachable[far] if far.any() else reachable
    start = tuple(pool[int(rng.integers(0, len(pool)))])

    cells = _trace_path(dist, start)
    waypoints = _cells_to_waypoints(cells)

    T = cfg.frames
    action_frames = max(10, T // 5)
    walk_frames = T - action_frames

    # arclength parametrization of the waypoint polyline
    seglen = np.sqrt(((waypoints[1:] - waypoints[:-1]) ** 2).sum(1)) if len(waypoints) > 1 else np.array([])
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1] if len(cum) > 1 else 0.0

    def along(sdist: float) -> tuple[np.ndarray, float]:
        if total <= 1e-9:
            return waypoints[0].astype(float), 0.0
        sdist = min(max(sdist, 0.0), total)
        i = int(np.searchsorted(cum, sdist, side="right")) - 1
        i = min(i, len(seglen) - 1)
        t = (sdist - cum[i]) / max(seglen[i], 1e-12)
        p = waypoints[i] + t * (waypoints[i + 1] - waypoints[i])
        d = waypoints[i + 1] - waypoints[i]
        return p, math.atan2(d[1], d[0])

    frames = np.zeros((T, JOINT_COUNT, 3))
    heading = 0.0
    for f in range(walk_frames):
        sdist = total * f / max(walk_frames - 1, 1)
        xy, h = along(sdist)
        if total > 1e-9:
            heading = h
        phase = 2 * math.pi * sdist / _STRIDE
        frames[f] = _gait(_pose(xy, heading, PELVIS_HEIGHT), heading, phase)

    approach_xy = waypoints[-1].astype(float)
    facing = target.anchor[:2] - approach_xy
    norm = np.linalg.norm(facing)
    facing = facing / norm if norm > 1e-9 else np.array([1.0, 0.0])
    final, mid = _action_pose(action, target, facing, approach_xy)

    last_walk = frames[walk_frames - 1] if walk_frames > 0 else _pose(approach_xy, heading)
    if mid is None:
        for i in range(action_frames):
            t = (i + 1) / action_frames
            t = t * t * (3 - 2 * t)  # smoothstep
            frames[walk_frames + i] = (1 - t) * last_walk + t * final
    else:
        half = action_frames // 2
        for i in range(half):
            t = (i + 1) / half
            frames[walk_frames + i] = (1 - t) * last_walk + t * mid
        for i in range(action_frames - half):
            t = (i + 1) / (action_frames - half)
            frames[walk_frames + half + i] = (1 - t) * mid + t * final

    _lift_above_target(frames[walk_frames:], target)
    np.clip(frames[..., 2], 0.0, None, out=frames[..., 2])
    return MotionSequence(frames=frames.astype(np.float32)), waypoints


# ---------------------------------------------------------------------------
# captions and text features

_TEMPLATES = (
    "walk to the {target} near the {neighbor} and {action}",
    "go to the {target} beside the {neighbor} and {action}",
    "head toward the {target} by the {neighbor} then {action}",
)
_SOLO_TEMPLATES = (
    "walk to the {target} and {action}",
    "go to the {target} then {action}",
)


def gen_caption(scene: ScenePointCloud, target_index: int, action: str, text_seed: int) -> str:
    meta = scene.meta
    target = meta.objects[target_index]
    rng = _rng(0, "caption", text_seed)
    others = [(i, o) for i, o in enumerate(meta.objects) if i != target_index]
    if not others:
        tmpl = _SOLO_TEMPLATES[int(rng.integers(0, len(_SOLO_TEMPLATES)))]
        return tmpl.format(target=target.class_label, action=action)
    dists = [np.linalg.norm(o.anchor[:2] - target.anchor[:2]) for _, o in others]
    neighbor = others[int(np.argmin(dists))][1]
    tmpl = _TEMPLATES[int(rng.integers(0, len(_TEMPLATES)))]
    return tmpl.format(target=target.class_label, neighbor=neighbor.class_label, action=action)


def featurize_text(caption: str, d_text: int = 768) -> TextFeature:
    """Hashed bag of unigrams+bigrams, signed, accumulated, L2-normalized."""
    if not caption:
        raise ValueError("empty caption")
    tokens = caption.lower().split()
    grams = list(tokens) + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    vec = np.zeros(d_text, dtype=np.float64)
    for g in grams:
        h = int.from_bytes(hashlib.blake2b(g.encode(), digest_size=8).digest(), "little")
        sign = 1.0 if (h >> 63) & 1 else -1.0
        vec[h % d_text] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValueError("degenerate caption feature")
    return TextFeature(values=(vec / norm).astype(np.float32), raw_caption=caption)


# ---------------------------------------------------------------------------
# datasets

def displace_target(scene: ScenePointCloud, cfg: GeneratorConfig, target_index: int,
                    offset: np.ndarray) -> ScenePointCloud | None:
    """Scene with the target object (box, anchor, points) translated by offset.

    Returns None when the displaced box would violate the wall or box gaps
    that keep the room walkable.
    """
    meta = scene.meta
    obj = meta.objects[target_index]
    new_anchor = obj.anchor + offset
    ex, ey, _ = obj.half_extents
    w, d = cfg.room_size
    if not (ex + _WALL_GAP <= new_anchor[0] <= w - ex - _WALL_GAP
            and ey + _WALL_GAP <= new_anchor[1] <= d - ey - _WALL_GAP):
        return None
    for i, other in enumerate(meta.objects):
        if i == target_index:
            continue
        ox, oy, _ = other.half_extents
        if (abs(new_anchor[0] - other.anchor[0]) < ex + ox + _BOX_GAP
                and abs(new_anchor[1] - other.anchor[1]) < ey + oy + _BOX_GAP):
            return None
    objects = list(meta.objects)
    objects[target_index] = dc_replace(obj, anchor=new_anchor)
    s, e = obj.point_range
    pts = np.asarray(scene.points, dtype=np.float64).copy()
    pts[s:e, :3] += offset
    return ScenePointCloud(
        points=pts.astype(np.float32),
        meta=SceneGraphMeta(objects=tuple(objects), room_bounds=meta.room_bounds),
    )


def _jittered_variant(scene: ScenePointCloud, cfg: GeneratorConfig, target_index: int,
                      scene_seed: int, member: int) -> ScenePointCloud:
    """Family member scene with the target displaced; base scene if no jitter fits."""
    jrng = _rng(cfg.seed, "jitter", scene_seed, member)
    lift = jrng.uniform() < cfg.jitter_lift_prob  # decided once: ring retries
    # must not re-roll into a lift or lifts dominate (they never collide)
    for _ in range(40):
        if lift:
            offset = np.array([0.0, 0.0, jrng.uniform(cfg.jitter_lift_min, cfg.jitter_lift_max)])
        else:
            radius = jrng.uniform(cfg.jitter_min, cfg.jitter_max)
            phi = jrng.uniform(0.0, 2.0 * math.pi)
            offset = np.array([radius * math.cos(phi), radius * math.sin(phi), 0.0])
        variant = displace_target(scene, cfg, target_index, offset)
        if variant is not None:
            return variant
    return scene


def _gen_split(cfg: GeneratorConfig, n: int, seed_base: int, prefix: str) -> DatasetSplit:
    samples: list[TrimodalSample] = []
    seeds: list[int] = []
    scene_seed = seed_base
    while len(samples) < n:
        scene = gen_scene(cfg, scene_seed)
        meta = scene.meta
        combos = [(i, a) for i, o in enumerate(meta.objects) for a in allowed_actions(o.class_label)]
        rng = _rng(cfg.seed, "combo", scene_seed)
        target_index, action = combos[int(rng.choice(len(combos)))]
        for j in range(min(max(cfg.family_size, 1), n - len(samples))):
            variant = scene if j == 0 else _jittered_variant(scene, cfg, target_index, scene_seed, j)
            motion_seed = scene_seed * 64 + j
            try:
                motion, waypoints = gen_motion(variant, target_index, action, motion_seed, cfg)
            except NoPathError:
                variant = scene  # displaced box blocked the only approach
                motion, waypoints = gen_motion(variant, target_index, action, motion_seed, cfg)
            caption = gen_caption(variant, target_index, action, motion_seed)
            text = featurize_text(caption, cfg.text_dim)
            sample = TrimodalSample(
                id=f"{prefix}{len(samples):05d}",
                text=text,
                motion=motion,
                scene=variant,
                truth=SampleTruth(target_index=target_index, action=action, waypoints=waypoints),
            )
            report = validate_sample(sample, cfg.text_dim)
            if report:
                raise RuntimeError(f"generated invalid sample {sample.id}: {report}")
            samples.append(sample)
            seeds.append(scene_seed)
        scene_seed += 1
    return DatasetSplit(samples=tuple(samples), scene_seeds=tuple(seeds))


TEST_SEED_BASE = 1_000_000


def gen_dataset(cfg: GeneratorConfig, n_train: int, n_test: int) -> tuple[DatasetSplit, DatasetSplit]:
    """Generate disjoint train/test splits; every sample passes validation."""
    if n_train <= 0 or n_test <= 0:
        raise ValueError("split sizes must be positive")
    train = _gen_split(cfg, n_train, 0, "train-")
    test = _gen_split(cfg, n_test, TEST_SEED_BASE, "test-")
    return train, test
