"""Coordinate frames, device panel layouts and random UT orientations.

Conventions used throughout the package:

* A rotation triple ``(alpha, beta, gamma)`` rotates a local frame about the
  global z, y and x axes, i.e. ``R = Rz(alpha) @ Ry(beta) @ Rx(gamma)``. The
  columns of ``R`` are the local axes expressed in global coordinates.
* Direction angles are ``(phi, theta)``: azimuth from local +x in the xy-plane
  and zenith measured from local +z.
* Panel indices are 0-based (``P1`` of the figures is panel 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def mod_2pi(a):
    """Angle(s) in [0, 2pi); tiny negatives that round up to 2pi map to 0."""
    m = np.mod(np.asarray(a, dtype=float), TWO_PI)
    return np.where(m >= TWO_PI, 0.0, m)


def wrap_angle(a):
    """Wrap angle(s) into [-pi, pi)."""
    w = mod_2pi(np.asarray(a, dtype=float) + math.pi) - math.pi
    return np.where(w >= math.pi, -math.pi, w)


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(b: float) -> np.ndarray:
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(g: float) -> np.ndarray:
    c, s = math.cos(g), math.sin(g)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_matrix(rotation: Sequence[float]) -> np.ndarray:
    """Rotation matrix ``Rz(alpha) Ry(beta) Rx(gamma)``, built in closed form."""
    a, b, g = (float(v) for v in rotation)
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cg, sg = math.cos(g), math.sin(g)
    return np.array(
        [
            [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
            [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
            [-sb, cb * sg, cb * cg],
        ]
    )


def rotation_angles(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_matrix`, returning normalized angles.

    alpha in [-pi, pi), beta in [-pi/2, pi/2], gamma in [0, 2pi).
    """
    R = np.asarray(R, dtype=float)
    beta = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        alpha = math.atan2(R[1, 0], R[0, 0])
        gamma = math.atan2(R[2, 1], R[2, 2])
    else:
        # gimbal lock: only alpha -/+ gamma is defined, put it all in alpha
        alpha = math.atan2(-R[0, 1], R[1, 1])
        gamma = 0.0
    alpha = float(wrap_angle(alpha))
    gamma = float(mod_2pi(gamma))
    return alpha, beta, gamma


@dataclass(frozen=True)
class Pose:
    """Position (m, GCS) and z-y-x rotation triple (rad) of an AP or UT."""

    position: tuple[float, float, float]
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))
        if len(self.position) != 3 or len(self.rotation) != 3:
            raise ValueError("pose needs 3 coordinates and 3 angles")

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def normalized(self) -> "Pose":
        """Same physical pose with angles mapped to their canonical ranges."""
        return Pose(self.position, rotation_angles(self.matrix))


def sample_orientation(mode: str, rng: np.random.Generator) -> tuple[float, float, float]:
    """Draw a UT rotation triple for ``"portrait"`` or ``"landscape"`` mode.

    Portrait: beta = 0, alpha ~ U[-pi, pi), gamma ~ U[0, pi/2].
    Landscape: gamma = 0, alpha ~ U[-pi, pi), beta ~ U[-pi/2, 0].
    """
    alpha = rng.uniform(-math.pi, math.pi)
    if mode == "portrait":
        return alpha, 0.0, rng.uniform(0.0, math.pi / 2)
    if mode == "landscape":
        return alpha, rng.uniform(-math.pi / 2, 0.0), 0.0
    raise ValueError(f"unknown orientation mode {mode!r}")


def angles_to_unit(phi, theta) -> np.ndarray:
    """Unit vector(s) for azimuth ``phi`` and zenith ``theta``; shape (..., 3)."""
    phi, theta = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(theta, dtype=float))
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def unit_to_angles(d) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth in [-pi, pi) and zenith in [0, pi] of unit vector(s) ``d``."""
    d = np.asarray(d, dtype=float)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = wrap_angle(np.arctan2(d[..., 1], d[..., 0]))
    return phi, theta


@dataclass(frozen=True)
class PanelLayout:
    """One UT (or AP) antenna panel.

    ``local_axes`` columns are the panel-local x, y, z axes in the device LCS.
    Steering vectors use panel-local angles; the element pattern is evaluated
    in a frame whose +x axis is the boresight (see :attr:`element_axes`).
    """

    grid: tuple[int, int, int]
    boresight: tuple[float, float, float]
    local_axes: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        grid = tuple(int(n) for n in self.grid)
        if len(grid) != 3 or min(grid) < 1:
            raise ValueError(f"invalid element grid {self.grid}")
        b = np.asarray(self.boresight, dtype=float)
        if abs(np.linalg.norm(b) - 1.0) > 1e-9:
            raise ValueError("boresight must be a unit vector")
        axes = np.array(self.local_axes, dtype=float)
        if axes.shape != (3, 3):
            raise ValueError("local_axes must be 3x3")
        if np.abs(axes.T @ axes - np.eye(3)).max() > 1e-12 or np.linalg.det(axes) < 0:
            raise ValueError("local_axes must be a proper rotation")
        axes.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "boresight", tuple(float(v) for v in b))
        object.__setattr__(self, "local_axes", axes)

    @property
    def n_elements(self) -> int:
        nx, ny, nz = self.grid
        return nx * ny * nz

    @cached_property
    def element_axes(self) -> np.ndarray:
        """Element-pattern frame in panel-local coordinates (+x = boresight)."""
        x = self.local_axes.T @ np.asarray(self.boresight)
        ref = np.array([0.0, 0.0, 1.0]) if abs(x[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        z = ref - (ref @ x) * x
        z /= np.linalg.norm(z)
        y = np.cross(z, x)
        return np.column_stack([x, y, z])

    def __eq__(self, other):
        if not isinstance(other, PanelLayout):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.boresight == other.boresight
            and np.array_equal(self.local_axes, other.local_axes)
        )

    def __hash__(self):
        return hash((self.grid, self.boresight, self.local_axes.tobytes()))


@dataclass(frozen=True)
class DeviceDesign:
    name: str
    panels: tuple[PanelLayout, ...]

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    @property
    def n_elements(self) -> int:
        return sum(p.n_elements for p in self.panels)

    @property
    def panel_sizes(self) -> list[int]:
        return [p.n_elements for p in self.panels]

    def rotated(self, R: np.ndarray) -> "DeviceDesign":
        """Apply a rigid rotation to every panel (boresight and axes)."""
        R = np.asarray(R, dtype=float)
        return DeviceDesign(
            self.name,
            tuple(
                PanelLayout(p.grid, tuple(R @ np.asarray(p.boresight)), R @ p.local_axes)
                for p in self.panels
            ),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "panels": [
                {
                    "grid": list(p.grid),
                    "boresight": list(p.boresight),
                    "axes": p.local_axes.tolist(),
                }
                for p in self.panels
            ],
        }


_HALF_PI = math.pi / 2
# (grid, boresight, axes rotation) in the device LCS: screen in the xy-plane,
# +y toward the top edge, +z out of the screen.
_EDGE_PANELS = [
    ((1, 4, 1), (1.0, 0.0, 0.0), rot_z(0.0)),  # P1 right edge
    ((1, 4, 1), (0.0, 1.0, 0.0), rot_z(_HALF_PI)),  # P2 top edge
    ((1, 4, 1), (-1.0, 0.0, 0.0), rot_z(math.pi)),  # P3 left edge
]
_FACE_PANELS = [
    ((2, 2, 1), (0.0, 0.0, -1.0), rot_x(math.pi)),  # P4 back, near top
    ((2, 2, 1), (0.0, 0.0, 1.0), np.eye(3)),  # P5 face, near bottom
]


def _clean(R: np.ndarray) -> np.ndarray:
    # exact zeros/ones for the axis-aligned frames
    return np.round(R, 15) + 0.0


def _panels(spec) -> tuple[PanelLayout, ...]:
    return tuple(PanelLayout(g, b, _clean(R)) for g, b, R in spec)


def edge_design() -> DeviceDesign:
    return DeviceDesign("edge", _panels(_EDGE_PANELS))


def edge_face_design() -> DeviceDesign:
    return DeviceDesign("edge-face", _panels(_EDGE_PANELS + _FACE_PANELS))


def design_from_dict(data: dict) -> DeviceDesign:
    """Build a design from ``{"name": ..., "panels": [{"grid", "boresight", "axes"}]}``."""
    try:
        panels = tuple(
            PanelLayout(
                tuple(p["grid"]),
                tuple(p["boresight"]),
                np.array(p.get("axes", np.eye(3)), dtype=float),
            )
            for p in data["panels"]
        )
    except KeyError as exc:
        raise ValueError(f"layout entry missing field {exc}") from None
    if not panels:
        raise ValueError("design needs at least one panel")
    return DeviceDesign(str(data.get("name", "custom")), panels)


def load_design(path) -> DeviceDesign:
    return design_from_dict(json.loads(Path(path).read_text()))


def get_design(name_or_path: str) -> DeviceDesign:
    """Resolve ``"edge"``, ``"edge-face"`` or a path to a JSON layout file."""
    if name_or_path == "edge":
        return edge_design()
    if name_or_path in ("edge-face", "edge_face"):
        return edge_face_design()
    if Path(name_or_path).is_file():
        return load_design(name_or_path)
    raise ValueError(f"unknown device design {name_or_path!r}")


def to_local(direction, pose_rotation: Sequence[float], axes: np.ndarray) -> np.ndarray:
    """Express global direction(s) in a frame with ``axes`` inside a rotated device."""
    R = rotation_matrix(pose_rotation) @ axes
    return np.asarray(direction, dtype=float) @ R


def direction_to_panel_angles(direction, device_pose: Pose, panel: PanelLayout):
    """Panel-local azimuth/zenith of a global arrival direction.

    ``direction`` may be a single unit 3-vector or an array of shape (n, 3).
    """
    d = np.asarray(direction, dtype=float)
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("non-unit direction")
    local = to_local(d, device_pose.rotation, panel.local_axes)
    phi, theta = unit_to_angles(local)
    if local.ndim == 1:
        return float(phi), float(theta)
    return phi, theta


def orientation_mode(rotation: Sequence[float]) -> str:
    """``"portrait"`` when beta is exactly zero, else ``"landscape"``."""
    return "portrait" if float(rotation[1]) == 0.0 else "landscape"
