"""Declarative environment: table, laptop, human, obstacles, and the analytic
ground-truth features used to score end-effector positions.

Feature polarity is cost-oriented everywhere: 0 is desirable, 1 undesirable.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import IoError, NoObstacles, SchemaViolation
from .transforms import Transform

__all__ = [
    "Obstacle",
    "Scene",
    "PointCloud",
    "FeatureConstants",
    "sample_point_cloud",
    "gt_table",
    "gt_laptop",
    "gt_proxemics",
    "gt_feature",
    "GT_FEATURE_NAMES",
    "load_scene",
    "scene_to_json",
    "scene_from_json",
    "builtin_scene_path",
]

GT_FEATURE_NAMES = ("table", "laptop", "proxemics")


@dataclass(frozen=True, eq=False)
class Obstacle:
    id: str
    kind: str  # "box" | "sphere" | "cylinder"
    pose: Transform = field(default_factory=Transform.identity)
    is_obstacle: bool = True
    half_extents: Optional[np.ndarray] = None  # box
    radius: Optional[float] = None  # sphere / cylinder
    height: Optional[float] = None  # cylinder

    def __post_init__(self):
        if self.kind == "box":
            he = np.asarray(self.half_extents, dtype=float)
            if np.any(he <= 0):
                raise ValueError(f"obstacle {self.id}: half extents must be > 0")
            object.__setattr__(self, "half_extents", he)
        elif self.kind == "sphere":
            if not self.radius or self.radius <= 0:
                raise ValueError(f"obstacle {self.id}: radius must be > 0")
        elif self.kind == "cylinder":
            if not self.radius or self.radius <= 0 or not self.height or self.height <= 0:
                raise ValueError(f"obstacle {self.id}: radius/height must be > 0")
        else:
            raise ValueError(f"obstacle {self.id}: unknown shape {self.kind!r}")

    def surface_area(self) -> float:
        if self.kind == "box":
            a, b, c = self.half_extents
            return 8.0 * (a * b + b * c + c * a)
        if self.kind == "sphere":
            return 4.0 * math.pi * self.radius ** 2
        lateral = 2.0 * math.pi * self.radius * self.height
        caps = 2.0 * math.pi * self.radius ** 2
        return lateral + caps

    def sample_surface(self, count: int, rng) -> np.ndarray:
        """Uniform samples on the surface, in world frame, shape (count, 3)."""
        if count == 0:
            return np.zeros((0, 3))
        if self.kind == "sphere":
            v = rng.normal(size=(count, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            local = v * self.radius
        elif self.kind == "box":
            he = self.half_extents
            # Face areas: +-x, +-y, +-z pairs.
            areas = np.array([he[1] * he[2], he[1] * he[2],
                              he[0] * he[2], he[0] * he[2],
                              he[0] * he[1], he[0] * he[1]]) * 4.0
            faces = rng.choice(6, size=count, p=areas / areas.sum())
            u = rng.uniform(-1.0, 1.0, size=(count, 2))
            local = np.zeros((count, 3))
            for f in range(6):
                m = faces == f
                axis = f // 2
                sign = 1.0 if f % 2 == 0 else -1.0
                others = [i for i in range(3) if i != axis]
                local[m, axis] = sign * he[axis]
                local[m, others[0]] = u[m, 0] * he[others[0]]
                local[m, others[1]] = u[m, 1] * he[others[1]]
        else:  # cylinder, axis along local z
            lateral = 2.0 * math.pi * self.radius * self.height
            caps = 2.0 * math.pi * self.radius ** 2
            on_side = rng.uniform(size=count) < lateral / (lateral + caps)
            theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
            local = np.zeros((count, 3))
            z = rng.uniform(-0.5 * self.height, 0.5 * self.height, size=count)
            local[on_side, 0] = self.radius * np.cos(theta[on_side])
            local[on_side, 1] = self.radius * np.sin(theta[on_side])
            local[on_side, 2] = z[on_side]
            m = ~on_side
            r = self.radius * np.sqrt(rng.uniform(size=m.sum()))
            top = rng.uniform(size=m.sum()) < 0.5
            local[m, 0] = r * np.cos(theta[m])
            local[m, 1] = r * np.sin(theta[m])
            local[m, 2] = np.where(top, 0.5 * self.height, -0.5 * self.height)
        rot = self.pose.rotation
        from .transforms import quat_rotate_batch

        return quat_rotate_batch(np.broadcast_to(rot, (count, 4)), local) \
            + self.pose.translation


@dataclass(frozen=True)
class FeatureConstants:
    """Tunable constants of the analytic ground-truth features."""

    table_z_range: float = 1.0  # workspace height above the table, m
    laptop_radius: float = 0.3  # horizontal penalty radius, m
    proxemics_axes: tuple = (0.6, 0.3)  # ellipse semi-axes (x, y), m


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    robot_urdf: str  # resolved path to the URDF file
    ee_link: Optional[str]
    table_top_height: float
    table_extent: np.ndarray  # (2,)
    table_pose: Transform
    laptop_center: np.ndarray  # (3,)
    human_position: np.ndarray  # (3,)
    robot_base_pose: Transform
    obstacles: tuple
    constants: FeatureConstants
    indicator_column: Optional[dict] = None  # {center_xy, radius, height}
    joint_inertia_overrides: Optional[dict] = None

    def __post_init__(self):
        if np.any(np.asarray(self.table_extent) <= 0):
            raise ValueError("table extent components must be > 0")
        if self.indicator_column is not None and self.indicator_column["radius"] <= 0:
            raise ValueError("indicator column radius must be > 0")


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (n, 3) world frame
    source_ids: tuple  # parallel obstacle ids


def sample_point_cloud(scene: Scene, count: int, seed: int) -> PointCloud:
    """Surface samples over obstacles, allocated proportionally to area.

    Deterministic per seed and independent of obstacle list order (obstacles
    are processed sorted by id; counts assigned by largest remainder).
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    active = sorted((o for o in scene.obstacles if o.is_obstacle),
                    key=lambda o: o.id)
    if count == 0:
        return PointCloud(np.zeros((0, 3)), ())
    if not active:
        raise NoObstacles("no obstacle with is_obstacle=true in scene")

    areas = np.array([o.surface_area() for o in active])
    quota = count * areas / areas.sum()
    counts = np.floor(quota).astype(int)
    remainder = count - counts.sum()
    if remainder > 0:
        frac = quota - counts
        # Largest remainders first; ties resolved by id order (stable sort).
        for idx in np.argsort(-frac, kind="stable")[:remainder]:
            counts[idx] += 1

    rng = np.random.default_rng(seed)
    chunks = []
    ids = []
    for obstacle, n in zip(active, counts):
        chunks.append(obstacle.sample_surface(int(n), rng))
        ids.extend([obstacle.id] * int(n))
    return PointCloud(np.vstack(chunks), tuple(ids))


# --- analytic ground-truth features -----------------------------------------

def gt_table(scene: Scene, ee_position, raw: bool = False) -> float:
    """Height above the table, scaled: 0 on the table, 1 at the top of the
    workspace band. raw=True skips the [0, 1] clamp (useful for descent
    directions inside the saturated plateaus)."""
    z = float(np.asarray(ee_position)[2])
    value = (z - scene.table_top_height) / scene.constants.table_z_range
    return value if raw else float(np.clip(value, 0.0, 1.0))


def gt_laptop(scene: Scene, ee_position, raw: bool = False) -> float:
    """Horizontal proximity to the laptop: 1 directly over it, 0 outside the
    penalty radius."""
    p = np.asarray(ee_position, dtype=float)
    d_xy = float(np.hypot(p[0] - scene.laptop_center[0],
                          p[1] - scene.laptop_center[1]))
    value = 1.0 - d_xy / scene.constants.laptop_radius
    return value if raw else max(0.0, value)


def gt_proxemics(scene: Scene, ee_position, raw: bool = False) -> float:
    """Elliptic proximity to the human: 1 at the human, 0 on/outside the
    ellipse. The x axis is the elongated frontal direction."""
    p = np.asarray(ee_position, dtype=float)
    a, b = scene.constants.proxemics_axes
    d_ell = math.hypot((p[0] - scene.human_position[0]) / a,
                       (p[1] - scene.human_position[1]) / b)
    value = 1.0 - d_ell
    return value if raw else max(0.0, value)


def gt_feature(name: str) -> Callable:
    """Ground-truth feature by short name."""
    table = {"table": gt_table, "laptop": gt_laptop, "proxemics": gt_proxemics}
    if name not in table:
        raise KeyError(f"unknown ground-truth feature {name!r}; "
                       f"choose from {GT_FEATURE_NAMES}")
    return table[name]


# --- scene file I/O ----------------------------------------------------------

def _transform_from_json(obj) -> Transform:
    if obj is None:
        return Transform.identity()
    return Transform.from_json(obj)


def scene_from_json(obj: dict, base_dir: str = ".") -> Scene:
    try:
        robot = obj["robot"]
        if not os.path.isabs(robot):
            robot = os.path.join(base_dir, robot)
        obstacles = []
        for o in obj.get("obstacles", []):
            shape = o["shape"]
            obstacles.append(Obstacle(
                id=o["id"],
                kind=shape["kind"],
                pose=_transform_from_json(o.get("pose")),
                is_obstacle=o.get("is_obstacle", True),
                half_extents=shape.get("half_extents"),
                radius=shape.get("radius"),
                height=shape.get("height"),
            ))
        fc = obj.get("feature_constants", {})
        constants = FeatureConstants(
            table_z_range=fc.get("table_z_range", 1.0),
            laptop_radius=fc.get("laptop_radius", 0.3),
            proxemics_axes=tuple(fc.get("proxemics_axes", (0.6, 0.3))),
        )
        table = obj["table"]
        return Scene(
            scene_id=obj.get("scene_id", "scene"),
            robot_urdf=robot,
            ee_link=obj.get("ee_link"),
            table_top_height=float(table["top_height"]),
            table_extent=np.asarray(table["extent"], dtype=float),
            table_pose=_transform_from_json(table.get("pose")),
            laptop_center=np.asarray(obj["laptop_center"], dtype=float),
            human_position=np.asarray(obj["human_position"], dtype=float),
            robot_base_pose=_transform_from_json(obj.get("robot_base_pose")),
            obstacles=tuple(obstacles),
            constants=constants,
            indicator_column=obj.get("indicator_column"),
            joint_inertia_overrides=obj.get("joint_inertia_overrides"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"bad scene document: {exc}") from exc


def scene_to_json(scene: Scene) -> dict:
    out = {
        "scene_id": scene.scene_id,
        "robot": scene.robot_urdf,
        "table": {
            "top_height": scene.table_top_height,
            "extent": [float(v) for v in scene.table_extent],
            "pose": scene.table_pose.to_json(),
        },
        "laptop_center": [float(v) for v in scene.laptop_center],
        "human_position": [float(v) for v in scene.human_position],
        "robot_base_pose": scene.robot_base_pose.to_json(),
        "obstacles": [
            {
                "id": o.id,
                "shape": _shape_json(o),
                "pose": o.pose.to_json(),
                "is_obstacle": o.is_obstacle,
            }
            for o in scene.obstacles
        ],
        "feature_constants": {
            "table_z_range": scene.constants.table_z_range,
            "laptop_radius": scene.constants.laptop_radius,
            "proxemics_axes": list(scene.constants.proxemics_axes),
        },
    }
    if scene.ee_link is not None:
        out["ee_link"] = scene.ee_link
    if scene.indicator_column is not None:
        out["indicator_column"] = scene.indicator_column
    if scene.joint_inertia_overrides is not None:
        out["joint_inertia_overrides"] = scene.joint_inertia_overrides
    return out


def _shape_json(o: Obstacle) -> dict:
    if o.kind == "box":
        return {"kind": "box", "half_extents": [float(v) for v in o.half_extents]}
    if o.kind == "sphere":
        return {"kind": "sphere", "radius": o.radius}
    return {"kind": "cylinder", "radius": o.radius, "height": o.height}


def load_scene(path) -> Scene:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read scene file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"scene file {path} is not valid JSON: {exc}") from exc
    return scene_from_json(obj, base_dir=os.path.dirname(os.path.abspath(path)))


def builtin_scene_path(name: str = "bench_ur5e") -> str:
    """Path of a bundled scene document."""
    from importlib.resources import files

    return str(files("demobench.data") / f"{name}.json")


def load_scene_and_model(path):
    """Convenience: load a scene plus its robot model."""
    from .model import parse_urdf_file

    scene = load_scene(path)
    model = parse_urdf_file(scene.robot_urdf, ee_link=scene.ee_link,
                            inertia_overrides=scene.joint_inertia_overrides)
    return scene, model
