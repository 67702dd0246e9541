"""URDF parsing into a validated kinematic tree.

The parser keeps full tree structure (branches included) but only the chain
from the root link to a designated end-effector link is articulated; that is
the chain serial manipulators expose. Mesh geometry stays an opaque path so
the core never touches mesh files.
"""
from __future__ import annotations

import json
import math
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DanglingReference, MalformedXml, MissingAxis, NotATree
from .transforms import Transform

REVOLUTE = "revolute"
CONTINUOUS = "continuous"
PRISMATIC = "prismatic"
FIXED = "fixed"

JOINT_KINDS = (REVOLUTE, CONTINUOUS, PRISMATIC, FIXED)

# Tags we knowingly skip; everything kinematic is handled.
_IGNORED_TAGS = ("transmission", "gazebo")


@dataclass(frozen=True, eq=False)
class GeometryRef:
    """Primitive or mesh reference attached to a link (opaque to the core)."""

    kind: str  # "mesh" | "box" | "cylinder" | "sphere"
    origin: Transform = field(default_factory=Transform.identity)
    mesh_path: Optional[str] = None
    scale: Optional[np.ndarray] = None
    size: Optional[np.ndarray] = None  # box full extents
    radius: Optional[float] = None
    length: Optional[float] = None

    def to_json(self) -> dict:
        out = {"kind": self.kind, "origin": self.origin.to_json()}
        if self.mesh_path is not None:
            out["mesh_path"] = self.mesh_path
        if self.scale is not None:
            out["scale"] = [float(v) for v in self.scale]
        if self.size is not None:
            out["size"] = [float(v) for v in self.size]
        if self.radius is not None:
            out["radius"] = float(self.radius)
        if self.length is not None:
            out["length"] = float(self.length)
        return out

    @staticmethod
    def from_json(obj: dict) -> "GeometryRef":
        return GeometryRef(
            kind=obj["kind"],
            origin=Transform.from_json(obj["origin"]),
            mesh_path=obj.get("mesh_path"),
            scale=np.array(obj["scale"]) if "scale" in obj else None,
            size=np.array(obj["size"]) if "size" in obj else None,
            radius=obj.get("radius"),
            length=obj.get("length"),
        )


@dataclass(frozen=True, eq=False)
class Inertial:
    mass: float
    inertia: np.ndarray  # 3x3 tensor about the inertial origin
    origin: Transform = field(default_factory=Transform.identity)

    def to_json(self) -> dict:
        return {
            "mass": float(self.mass),
            "inertia": [[float(v) for v in row] for row in self.inertia],
            "origin": self.origin.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "Inertial":
        return Inertial(obj["mass"], np.array(obj["inertia"], dtype=float),
                        Transform.from_json(obj["origin"]))


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    visual: Optional[GeometryRef] = None
    collision: Optional[GeometryRef] = None
    inertial: Optional[Inertial] = None


@dataclass(frozen=True, eq=False)
class JointLimits:
    lower: Optional[float]  # None for continuous joints
    upper: Optional[float]
    velocity: float = math.inf
    effort: float = math.inf


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    kind: str
    parent_link: str
    child_link: str
    origin: Transform
    axis: Optional[np.ndarray]  # unit vector, None for fixed joints
    limits: JointLimits
    inertia: float  # scalar moment used for torque estimation


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Kinematic tree with an articulated root-to-end-effector chain."""

    name: str
    links: tuple
    joints: tuple
    actuated: tuple  # joint indices, base -> tip along the chain
    root_link: int
    ee_link: int
    chain: tuple  # all joint indices (fixed included) from root to ee

    def __post_init__(self):
        object.__setattr__(self, "_link_index",
                           {l.name: i for i, l in enumerate(self.links)})
        object.__setattr__(self, "_joint_index",
                           {j.name: i for i, j in enumerate(self.joints)})

    @property
    def n_actuated(self) -> int:
        return len(self.actuated)

    def link_index(self, name: str) -> int:
        return self._link_index[name]

    def joint_index(self, name: str) -> int:
        return self._joint_index[name]

    def actuated_joints(self) -> list:
        return [self.joints[i] for i in self.actuated]

    def joint_names(self) -> list:
        return [self.joints[i].name for i in self.actuated]

    def joint_inertias(self) -> np.ndarray:
        return np.array([self.joints[i].inertia for i in self.actuated])

    def velocity_limits(self) -> np.ndarray:
        return np.array([self.joints[i].limits.velocity for i in self.actuated])

    def limits_arrays(self):
        """(lower, upper) arrays in actuated order; continuous as (-pi, pi]."""
        bounds = actuated_configuration_space(self)
        if not bounds:
            return np.zeros(0), np.zeros(0)
        lo, hi = zip(*bounds)
        return np.array(lo), np.array(hi)


def _parse_floats(text: str, n: int, what: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split()]
    except ValueError as exc:
        raise MalformedXml(f"bad float list in {what}: {text!r}") from exc
    if len(vals) != n:
        raise MalformedXml(f"{what} needs {n} values, got {len(vals)}")
    return np.array(vals)


def _parse_origin(elem) -> Transform:
    origin = elem.find("origin")
    if origin is None:
        return Transform.identity()
    xyz = _parse_floats(origin.get("xyz", "0 0 0"), 3, "origin xyz")
    rpy = _parse_floats(origin.get("rpy", "0 0 0"), 3, "origin rpy")
    return Transform.from_xyz_rpy(xyz, rpy)


def _parse_geometry(elem) -> Optional[GeometryRef]:
    geom = elem.find("geometry")
    if geom is None:
        return None
    origin = _parse_origin(elem)
    mesh = geom.find("mesh")
    if mesh is not None:
        scale = mesh.get("scale")
        scale_arr = _parse_floats(scale, 3, "mesh scale") if scale else np.ones(3)
        if np.any(scale_arr <= 0):
            raise MalformedXml("mesh scale components must be > 0")
        return GeometryRef("mesh", origin, mesh_path=mesh.get("filename", ""),
                           scale=scale_arr)
    box = geom.find("box")
    if box is not None:
        size = _parse_floats(box.get("size", "0 0 0"), 3, "box size")
        return GeometryRef("box", origin, size=size)
    cyl = geom.find("cylinder")
    if cyl is not None:
        return GeometryRef("cylinder", origin,
                           radius=float(cyl.get("radius", 0.0)),
                           length=float(cyl.get("length", 0.0)))
    sph = geom.find("sphere")
    if sph is not None:
        return GeometryRef("sphere", origin, radius=float(sph.get("radius", 0.0)))
    return None


def _parse_inertial(elem) -> Optional[Inertial]:
    inertial = elem.find("inertial")
    if inertial is None:
        return None
    mass_el = inertial.find("mass")
    mass = float(mass_el.get("value", 0.0)) if mass_el is not None else 0.0
    if mass < 0:
        raise MalformedXml(f"negative mass on link {elem.get('name')!r}")
    tensor = np.zeros((3, 3))
    inertia_el = inertial.find("inertia")
    if inertia_el is not None:
        ixx = float(inertia_el.get("ixx", 0.0))
        iyy = float(inertia_el.get("iyy", 0.0))
        izz = float(inertia_el.get("izz", 0.0))
        ixy = float(inertia_el.get("ixy", 0.0))
        ixz = float(inertia_el.get("ixz", 0.0))
        iyz = float(inertia_el.get("iyz", 0.0))
        tensor = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    return Inertial(mass, tensor, _parse_origin(inertial))


def _parse_link(elem) -> Link:
    name = elem.get("name")
    if not name:
        raise MalformedXml("link without a name")
    visual = collision = None
    vis_el = elem.find("visual")
    if vis_el is not None:
        visual = _parse_geometry(vis_el)
    col_el = elem.find("collision")
    if col_el is not None:
        collision = _parse_geometry(col_el)
    return Link(name, visual, collision, _parse_inertial(elem))


def _parse_joint(elem) -> tuple:
    """Returns (Joint sans inertia, inertia_override or None)."""
    name = elem.get("name")
    kind = elem.get("type")
    if not name or kind is None:
        raise MalformedXml("joint missing name or type")
    if kind not in JOINT_KINDS:
        warnings.warn(f"joint {name!r}: unsupported type {kind!r} treated as fixed")
        kind = FIXED
    if elem.find("mimic") is not None:
        warnings.warn(f"joint {name!r}: mimic tag ignored")
    parent = elem.find("parent")
    child = elem.find("child")
    if parent is None or child is None:
        raise MalformedXml(f"joint {name!r} missing parent or child element")
    parent_link = parent.get("link")
    child_link = child.get("link")
    if not parent_link or not child_link:
        raise MalformedXml(f"joint {name!r} parent/child missing link attribute")

    origin = _parse_origin(elem)

    axis = None
    if kind != FIXED:
        axis_el = elem.find("axis")
        if axis_el is None:
            raise MissingAxis(f"joint {name!r} ({kind}) has no axis element")
        axis = _parse_floats(axis_el.get("xyz", ""), 3, f"axis of joint {name!r}")
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            raise MissingAxis(f"joint {name!r} has a zero-length axis")
        axis = axis / norm

    limit_el = elem.find("limit")
    if kind == CONTINUOUS:
        lower = upper = None
    elif limit_el is not None:
        lower = float(limit_el.get("lower", 0.0))
        upper = float(limit_el.get("upper", 0.0))
        if lower > upper:
            raise MalformedXml(f"joint {name!r}: lower limit exceeds upper")
    else:
        lower = upper = None if kind == FIXED else 0.0
    velocity = math.inf
    effort = math.inf
    if limit_el is not None:
        if limit_el.get("velocity") is not None:
            velocity = float(limit_el.get("velocity"))
        if limit_el.get("effort") is not None:
            effort = float(limit_el.get("effort"))

    joint = Joint(name, kind, parent_link, child_link, origin, axis,
                  JointLimits(lower, upper, velocity, effort), inertia=0.0)
    return joint


def parse_urdf(xml_text: str, ee_link: Optional[str] = None,
               inertia_overrides: Optional[dict] = None) -> RobotModel:
    """Parse URDF text into a RobotModel.

    ee_link picks the articulated chain's tip; default is the last link in
    depth-first tree order. inertia_overrides maps joint name to the scalar
    moment used for torque estimation (default: the child link's largest
    principal moment of inertia).
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "robot":
        raise MalformedXml(f"expected <robot> root element, got <{root.tag}>")
    name = root.get("name", "robot")

    for tag in _IGNORED_TAGS:
        if root.find(tag) is not None:
            warnings.warn(f"URDF tag <{tag}> ignored")

    links = [_parse_link(el) for el in root.findall("link")]
    if not links:
        raise MalformedXml("URDF declares no links")
    link_names = {l.name for l in links}
    if len(link_names) != len(links):
        raise MalformedXml("duplicate link names")

    joints = [_parse_joint(el) for el in root.findall("joint")]

    for j in joints:
        if j.parent_link not in link_names:
            raise DanglingReference(
                f"joint {j.name!r} references unknown parent link {j.parent_link!r}")
        if j.child_link not in link_names:
            raise DanglingReference(
                f"joint {j.name!r} references unknown child link {j.child_link!r}")

    # Tree validation: every link except one root has exactly one parent joint.
    parent_joint: dict = {}
    for idx, j in enumerate(joints):
        if j.child_link in parent_joint:
            raise NotATree(f"link {j.child_link!r} has multiple parent joints")
        parent_joint[j.child_link] = idx
    roots = [l.name for l in links if l.name not in parent_joint]
    if not roots:
        raise NotATree("no root link (cycle)")
    if len(roots) > 1:
        raise NotATree(f"multiple root links: {roots}")
    root_name = roots[0]

    children: dict = {l.name: [] for l in links}
    for idx, j in enumerate(joints):
        children[j.parent_link].append(idx)

    # Depth-first walk in document order; also catches disconnected cycles.
    order = []
    stack = [root_name]
    while stack:
        link = stack.pop()
        order.append(link)
        for idx in reversed(children[link]):
            stack.append(joints[idx].child_link)
    if len(order) != len(links):
        raise NotATree("links unreachable from the root (cycle or orphan)")

    if ee_link is None:
        ee_name = order[-1]
    else:
        if ee_link not in link_names:
            raise DanglingReference(f"designated ee link {ee_link!r} not in model")
        ee_name = ee_link

    # Chain root -> ee by walking parents upward.
    chain = []
    cursor = ee_name
    while cursor != root_name:
        idx = parent_joint[cursor]
        chain.append(idx)
        cursor = joints[idx].parent_link
    chain.reverse()

    # Scalar joint inertia: override, else child link's dominant principal moment.
    overrides = inertia_overrides or {}
    link_by_name = {l.name: l for l in links}
    final_joints = []
    for j in joints:
        inertia = overrides.get(j.name)
        if inertia is None:
            child = link_by_name[j.child_link]
            if child.inertial is not None:
                principal = np.linalg.eigvalsh(child.inertial.inertia)
                inertia = float(principal[-1])
            else:
                inertia = 0.0
        if j.kind != FIXED and inertia <= 0.0:
            warnings.warn(
                f"joint {j.name!r} has no usable inertia; defaulting to 1.0 kg*m^2")
            inertia = 1.0
        final_joints.append(Joint(j.name, j.kind, j.parent_link, j.child_link,
                                  j.origin, j.axis, j.limits, inertia))

    actuated = tuple(i for i in chain if final_joints[i].kind != FIXED)

    model = RobotModel(
        name=name,
        links=tuple(links),
        joints=tuple(final_joints),
        actuated=actuated,
        root_link=[i for i, l in enumerate(links) if l.name == root_name][0],
        ee_link=[i for i, l in enumerate(links) if l.name == ee_name][0],
        chain=tuple(chain),
    )
    return model


def parse_urdf_file(path, ee_link: Optional[str] = None,
                    inertia_overrides: Optional[dict] = None) -> RobotModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_urdf(fh.read(), ee_link=ee_link,
                          inertia_overrides=inertia_overrides)


def actuated_configuration_space(model: RobotModel) -> list:
    """(lower, upper) bounds per actuated joint; continuous reported (-pi, pi]."""
    bounds = []
    for idx in model.actuated:
        j = model.joints[idx]
        if j.kind == CONTINUOUS or j.limits.lower is None:
            bounds.append((-math.pi, math.pi))
        else:
            bounds.append((j.limits.lower, j.limits.upper))
    return bounds


# --- JSON scene-description round trip -------------------------------------

def model_to_json(model: RobotModel) -> dict:
    def link_json(l: Link) -> dict:
        out: dict = {"name": l.name}
        if l.visual is not None:
            out["visual"] = l.visual.to_json()
        if l.collision is not None:
            out["collision"] = l.collision.to_json()
        if l.inertial is not None:
            out["inertial"] = l.inertial.to_json()
        return out

    def joint_json(j: Joint) -> dict:
        return {
            "name": j.name,
            "kind": j.kind,
            "parent_link": j.parent_link,
            "child_link": j.child_link,
            "origin": j.origin.to_json(),
            "axis": None if j.axis is None else [float(v) for v in j.axis],
            "limits": {
                "lower": j.limits.lower,
                "upper": j.limits.upper,
                "velocity": j.limits.velocity,
                "effort": j.limits.effort,
            },
            "inertia": j.inertia,
        }

    return {
        "name": model.name,
        "links": [link_json(l) for l in model.links],
        "joints": [joint_json(j) for j in model.joints],
        "actuated": list(model.actuated),
        "root_link": model.root_link,
        "ee_link": model.ee_link,
        "chain": list(model.chain),
    }


def model_from_json(obj: dict) -> RobotModel:
    links = tuple(
        Link(
            name=lo["name"],
            visual=GeometryRef.from_json(lo["visual"]) if "visual" in lo else None,
            collision=GeometryRef.from_json(lo["collision"]) if "collision" in lo else None,
            inertial=Inertial.from_json(lo["inertial"]) if "inertial" in lo else None,
        )
        for lo in obj["links"]
    )
    joints = tuple(
        Joint(
            name=jo["name"],
            kind=jo["kind"],
            parent_link=jo["parent_link"],
            child_link=jo["child_link"],
            origin=Transform.from_json(jo["origin"]),
            axis=None if jo["axis"] is None else np.array(jo["axis"], dtype=float),
            limits=JointLimits(
                jo["limits"]["lower"], jo["limits"]["upper"],
                jo["limits"]["velocity"], jo["limits"]["effort"]),
            inertia=jo["inertia"],
        )
        for jo in obj["joints"]
    )
    return RobotModel(
        name=obj["name"],
        links=links,
        joints=joints,
        actuated=tuple(obj["actuated"]),
        root_link=obj["root_link"],
        ee_link=obj["ee_link"],
        chain=tuple(obj["chain"]),
    )


def model_to_json_text(model: RobotModel) -> str:
    return json.dumps(model_to_json(model), indent=2)
