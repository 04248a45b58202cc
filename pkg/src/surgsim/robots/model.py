"""Kinematic chain descriptions and the robot descriptor file format.

A descriptor is a YAML document::

    format: surgsim-robot
    version: 1
    name: psm
    workspace: {center: [x, y, z], radius: r}
    joints:
      - name: outer_yaw
        kind: revolute            # revolute | prismatic | fixed
        axis: [1, 0, 0]           # unit vector in the joint frame
        origin: {xyz: [0, 0, 0], quat: [1, 0, 0, 0]}   # parent -> joint, quat is w, x, y, z
        limits: {lower: -1.2, upper: 1.2, velocity: 3.0, effort: 40.0}
    tool_tip: {xyz: [0, 0, 0], quat: [1, 0, 0, 0]}
    jaw: {joint: 6}               # optional, index into the actuated DoFs

Joint order in the file is base to tip and is preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

FORMAT_NAME = "surgsim-robot"
FORMAT_VERSION = 1
BUNDLED = ("psm", "ecm", "star")


class JointKind(str, Enum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"
    FIXED = "fixed"

    @property
    def letter(self) -> str:
        return {"revolute": "R", "prismatic": "P", "fixed": ""}[self.value]


class DescriptorError(ValueError):
    """Raised for malformed robot descriptors; the message carries file, line and field."""


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion, w x y z

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: JointKind
    axis: tuple[float, float, float]
    origin_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    origin_rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    limit_lo: float = 0.0
    limit_hi: float = 0.0
    velocity_limit: float = 0.0
    effort_limit: float = 0.0

    @property
    def actuated(self) -> bool:
        return self.kind is not JointKind.FIXED


@dataclass(frozen=True)
class RobotModel:
    name: str
    joints: tuple[JointSpec, ...]
    tool_tip_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tool_tip_rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    jaw_index: int | None = None
    workspace_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    workspace_radius: float = 0.1
    version: int = FORMAT_VERSION
    # cached per-DoF arrays, derived in __post_init__
    _arrays: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        act = [j for j in self.joints if j.actuated]
        arrays = {
            "lo": np.array([j.limit_lo for j in act], dtype=np.float64),
            "hi": np.array([j.limit_hi for j in act], dtype=np.float64),
            "vel": np.array([j.velocity_limit for j in act], dtype=np.float64),
            "effort": np.array([j.effort_limit for j in act], dtype=np.float64),
        }
        for a in arrays.values():
            a.setflags(write=False)
        object.__setattr__(self, "_arrays", arrays)

    @property
    def dof_count(self) -> int:
        return sum(1 for j in self.joints if j.actuated)

    @property
    def actuated_joints(self) -> tuple[JointSpec, ...]:
        return tuple(j for j in self.joints if j.actuated)

    @property
    def sequence(self) -> str:
        """Joint-type string such as ``RRPRRRR``."""
        return "".join(j.kind.letter for j in self.joints)

    @property
    def lower(self) -> np.ndarray:
        return self._arrays["lo"]

    @property
    def upper(self) -> np.ndarray:
        return self._arrays["hi"]

    @property
    def velocity_limits(self) -> np.ndarray:
        return self._arrays["vel"]

    @property
    def effort_limits(self) -> np.ndarray:
        return self._arrays["effort"]

    def mid_configuration(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = (float(v) for v in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


# -- descriptor parsing --------------------------------------------------------


def _marks(node, path=(), out=None) -> dict:
    """Map field paths to 1-based source lines."""
    if out is None:
        out = {}
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _marks(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _marks(v, path + (i,), out)
    return out


class _Reader:
    def __init__(self, source: str, marks: dict):
        self.source = source
        self.marks = marks

    def fail(self, path: tuple, msg: str):
        line = None
        p = tuple(path)
        while line is None and p is not None:
            line = self.marks.get(p)
            p = p[:-1] if p else None
        loc = ".".join(f"[{x}]" if isinstance(x, int) else str(x) for x in path).replace(".[", "[")
        raise DescriptorError(f"{self.source}:{line or '?'}: {loc or '<root>'}: {msg}")

    def get(self, data: dict, path: tuple, key: str, default=...):
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        if key not in data:
            if default is ...:
                self.fail(path + (key,), "missing required field")
            return default
        return data[key]

    def number(self, value, path) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            self.fail(path, "must be finite")
        return float(value)

    def vector(self, value, path, n: int) -> tuple:
        if not isinstance(value, list) or len(value) != n:
            self.fail(path, f"expected a list of {n} numbers")
        return tuple(self.number(v, path + (i,)) for i, v in enumerate(value))

    def frame(self, value, path) -> tuple[tuple, tuple]:
        if value is None:
            return (0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping with xyz/quat")
        self.unknown(value, path, {"xyz", "quat"})
        xyz = self.vector(value.get("xyz", [0, 0, 0]), path + ("xyz",), 3)
        quat = self.vector(value.get("quat", [1, 0, 0, 0]), path + ("quat",), 4)
        if abs(math.sqrt(sum(c * c for c in quat)) - 1.0) > 1e-9:
            self.fail(path + ("quat",), "quaternion must have unit norm")
        return xyz, quat

    def unknown(self, data: dict, path, allowed: set):
        for k in data:
            if k not in allowed:
                self.fail(path + (k,), "unknown field")


def parse_robot(text: str, source: str = "<string>") -> RobotModel:
    """Parse and validate a descriptor document."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else "?"
        raise DescriptorError(f"{source}:{line}: syntax error: {exc.problem}") from None
    if node is None or not isinstance(data, dict):
        raise DescriptorError(f"{source}:1: <root>: expected a mapping")
    rd = _Reader(source, _marks(node))
    rd.unknown(data, (), {"format", "version", "name", "workspace", "joints", "tool_tip", "jaw"})

    if rd.get(data, (), "format") != FORMAT_NAME:
        rd.fail(("format",), f"expected {FORMAT_NAME!r}")
    version = rd.get(data, (), "version")
    if version != FORMAT_VERSION:
        rd.fail(("version",), f"unsupported version {version!r} (supported: {FORMAT_VERSION})")
    name = rd.get(data, (), "name")
    if not isinstance(name, str) or not name:
        rd.fail(("name",), "expected a non-empty string")

    ws = rd.get(data, (), "workspace")
    if not isinstance(ws, dict):
        rd.fail(("workspace",), "expected a mapping")
    rd.unknown(ws, ("workspace",), {"center", "radius"})
    center = rd.vector(rd.get(ws, ("workspace",), "center"), ("workspace", "center"), 3)
    radius = rd.number(rd.get(ws, ("workspace",), "radius"), ("workspace", "radius"))
    if radius <= 0:
        rd.fail(("workspace", "radius"), "must be positive")

    raw_joints = rd.get(data, (), "joints")
    if not isinstance(raw_joints, list) or not raw_joints:
        rd.fail(("joints",), "expected a non-empty list")
    joints = []
    names = set()
    for i, rj in enumerate(raw_joints):
        path = ("joints", i)
        if not isinstance(rj, dict):
            rd.fail(path, "expected a mapping")
        rd.unknown(rj, path, {"name", "kind", "axis", "origin", "limits"})
        jname = rd.get(rj, path, "name")
        if not isinstance(jname, str) or not jname:
            rd.fail(path + ("name",), "expected a non-empty string")
        if jname in names:
            rd.fail(path + ("name",), f"duplicate joint name {jname!r}")
        names.add(jname)
        try:
            kind = JointKind(rd.get(rj, path, "kind"))
        except ValueError:
            rd.fail(path + ("kind",), f"joint {jname!r}: kind must be revolute, prismatic or fixed")
        xyz, quat = rd.frame(rj.get("origin"), path + ("origin",))
        if kind is JointKind.FIXED:
            axis = rd.vector(rj.get("axis", [0, 0, 1]), path + ("axis",), 3)
            if "limits" in rj:
                rd.fail(path + ("limits",), f"joint {jname!r}: fixed joints take no limits")
            joints.append(JointSpec(jname, kind, axis, xyz, quat))
            continue
        axis = rd.vector(rd.get(rj, path, "axis"), path + ("axis",), 3)
        if abs(math.sqrt(sum(a * a for a in axis)) - 1.0) > 1e-12:
            rd.fail(path + ("axis",), f"joint {jname!r}: axis must have unit norm")
        lim = rd.get(rj, path, "limits")
        lpath = path + ("limits",)
        if not isinstance(lim, dict):
            rd.fail(lpath, "expected a mapping")
        rd.unknown(lim, lpath, {"lower", "upper", "velocity", "effort"})
        lo = rd.number(rd.get(lim, lpath, "lower"), lpath + ("lower",))
        hi = rd.number(rd.get(lim, lpath, "upper"), lpath + ("upper",))
        vel = rd.number(rd.get(lim, lpath, "velocity"), lpath + ("velocity",))
        eff = rd.number(rd.get(lim, lpath, "effort"), lpath + ("effort",))
        if not lo < hi:
            rd.fail(lpath, f"joint {jname!r}: lower limit {lo} must be below upper limit {hi}")
        if vel <= 0 or eff <= 0:
            rd.fail(lpath, f"joint {jname!r}: velocity and effort limits must be positive")
        joints.append(JointSpec(jname, kind, axis, xyz, quat, lo, hi, vel, eff))

    tip_xyz, tip_quat = rd.frame(data.get("tool_tip"), ("tool_tip",))
    dof = sum(1 for j in joints if j.actuated)
    jaw_index = None
    if data.get("jaw") is not None:
        jaw = data["jaw"]
        if not isinstance(jaw, dict):
            rd.fail(("jaw",), "expected a mapping")
        rd.unknown(jaw, ("jaw",), {"joint"})
        jaw_index = rd.get(jaw, ("jaw",), "joint")
        if not isinstance(jaw_index, int) or not 0 <= jaw_index < dof:
            rd.fail(("jaw", "joint"), f"expected a DoF index in [0, {dof})")

    return RobotModel(
        name=name,
        joints=tuple(joints),
        tool_tip_translation=tip_xyz,
        tool_tip_rotation=tip_quat,
        jaw_index=jaw_index,
        workspace_center=center,
        workspace_radius=radius,
        version=version,
    )


def _frame_dict(xyz, quat) -> dict:
    return {"xyz": [float(v) for v in xyz], "quat": [float(v) for v in quat]}


def dump_robot(model: RobotModel) -> str:
    """Serialize a model back to descriptor text (exact float round-trip)."""
    joints = []
    for j in model.joints:
        rec = {
            "name": j.name,
            "kind": j.kind.value,
            "axis": [float(v) for v in j.axis],
            "origin": _frame_dict(j.origin_translation, j.origin_rotation),
        }
        if j.actuated:
            rec["limits"] = {
                "lower": j.limit_lo,
                "upper": j.limit_hi,
                "velocity": j.velocity_limit,
                "effort": j.effort_limit,
            }
        joints.append(rec)
    doc = {
        "format": FORMAT_NAME,
        "version": model.version,
        "name": model.name,
        "workspace": {"center": [float(v) for v in model.workspace_center], "radius": model.workspace_radius},
        "joints": joints,
        "tool_tip": _frame_dict(model.tool_tip_translation, model.tool_tip_rotation),
    }
    if model.jaw_index is not None:
        doc["jaw"] = {"joint": model.jaw_index}
    return yaml.safe_dump(doc, sort_keys=False)


def load_robot(descriptor: str | Path) -> RobotModel:
    """Load a robot from a bundled name (``psm``, ``ecm``, ``star``) or a file path."""
    if isinstance(descriptor, str) and descriptor in BUNDLED:
        text = resources.files("surgsim.robots").joinpath("data", f"{descriptor}.yaml").read_text()
        return parse_robot(text, source=f"{descriptor}.yaml")
    path = Path(descriptor)
    if not path.is_file():
        raise FileNotFoundError(f"robot descriptor not found: {path}")
    return parse_robot(path.read_text(), source=str(path))
