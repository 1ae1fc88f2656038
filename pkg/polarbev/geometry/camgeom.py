"""Pinhole multi-camera geometry.

Frames: ego x forward, y left, z up; camera z forward, x right, y down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from polarbev.core.errors import BehindCameraError, ConfigurationError, ContractViolation
from polarbev.schemas.scene import RigSpec

TWO_PI = 2.0 * math.pi

# camera axes expressed in the ego frame for a camera looking along ego +x
_CAM_TO_EGO_BASE = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


@dataclass(frozen=True, eq=False)
class Camera:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int
    K_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64)
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise ConfigurationError("camera K and R must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or not math.isclose(np.linalg.det(R), 1.0, abs_tol=1e-9):
            raise ConfigurationError("camera rotation must be orthonormal with det +1")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= K[0, 2] <= self.width and 0 <= K[1, 2] <= self.height):
            raise ConfigurationError("principal point must lie inside the image")
        for arr in (K, R, t):
            arr.setflags(write=False)
        K_inv = np.linalg.inv(K)
        K_inv.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "K_inv", K_inv)

    @property
    def pose_key(self) -> bytes:
        """Order-independent identity of the camera's placement"""
        return self.R.tobytes() + self.t.tobytes()


@dataclass(frozen=True)
class CameraRig:
    cameras: Tuple[Camera, ...]

    def __post_init__(self):
        if not self.cameras:
            raise ConfigurationError("a rig needs at least one camera")
        object.__setattr__(self, "cameras", tuple(self.cameras))
        shapes = {(c.width, c.height) for c in self.cameras}
        if len(shapes) != 1:
            raise ConfigurationError("all rig cameras must share one image size")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    @property
    def image_size(self) -> Tuple[int, int]:
        cam = self.cameras[0]
        return cam.width, cam.height

    def permuted(self, order: Sequence[int]) -> "CameraRig":
        return CameraRig(tuple(self.cameras[i] for i in order))


@dataclass(frozen=True)
class RayAssignment:
    """Per azimuth bin: the (camera, column) pairs landing in it and the camera count"""

    azimuth_bins: int
    stride: int
    bins: Tuple[Tuple[Tuple[int, int], ...], ...]
    coverage: Tuple[int, ...]

    def covered(self) -> np.ndarray:
        return np.asarray(self.coverage) > 0


def make_camera(heading: float, fov: float, width: int, height: int,
                position: Iterable[float] = (0.0, 0.0, 1.0)) -> Camera:
    """Level pinhole looking along ego azimuth ``heading`` (radians) with horizontal ``fov``"""
    f = (width / 2.0) / math.tan(fov / 2.0)
    K = np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])
    R = Rotation.from_euler("z", heading).as_matrix() @ _CAM_TO_EGO_BASE
    return Camera(K=K, R=R, t=np.asarray(tuple(position), dtype=np.float64), width=width, height=height)


def build_rig(spec: RigSpec) -> CameraRig:
    fov = math.radians(spec.fov_deg)
    position = (0.0, 0.0, spec.mount_height)
    return CameraRig(tuple(
        make_camera(math.radians(h), fov, spec.image_width, spec.image_height, position)
        for h in spec.headings()
    ))


def to_camera_frame(p_ego, cam: Camera) -> np.ndarray:
    return cam.R.T @ (np.asarray(p_ego, dtype=np.float64) - cam.t)


def project_to_image(p_ego, cam: Camera) -> Tuple[float, float, float]:
    """Pixel (u, v) and forward depth of an ego-frame point"""
    pc = to_camera_frame(p_ego, cam)
    depth = float(pc[2])
    if depth <= 0.0:
        raise BehindCameraError("point is behind the camera", depth=depth)
    uvw = cam.K @ pc
    return float(uvw[0] / uvw[2]), float(uvw[1] / uvw[2]), depth


def backproject(u: float, v: float, depth: float, cam: Camera) -> np.ndarray:
    pc = depth * (cam.K_inv @ np.array([u, v, 1.0]))
    return cam.R @ pc + cam.t


def column_azimuth(cam: Camera, column: int, stride: int = 1) -> float:
    """Ego azimuth of the ray through a column's center at mid image height.

    With ``stride`` > 1 the column indexes a feature map whose columns each
    span ``stride`` pixels.
    """
    if not 0 <= column * stride < cam.width:
        raise ContractViolation("column outside the image", column=column, stride=stride)
    u = (column + 0.5) * stride
    direction = cam.R @ (cam.K_inv @ np.array([u, cam.height / 2.0, 1.0]))
    return math.atan2(direction[1], direction[0]) % TWO_PI


def azimuth_bin(azimuth: float, azimuth_bins: int) -> int:
    """Bin index of an azimuth in [0, 2π); boundaries go to the lower bin"""
    q = azimuth / (TWO_PI / azimuth_bins)
    b = math.floor(q)
    if q == b and b > 0:
        b -= 1
    return min(max(b, 0), azimuth_bins - 1)


def assign_columns_to_rays(rig: CameraRig, azimuth_bins: int, stride: int = 1) -> RayAssignment:
    """Group every (camera, column) pair by the azimuth bin its ray falls into"""
    if azimuth_bins < 4:
        raise ConfigurationError("at least four azimuth bins are required", azimuth_bins=azimuth_bins)
    width, _ = rig.image_size
    if width % stride:
        raise ConfigurationError("stride must divide the image width", stride=stride, width=width)
    bins: List[List[Tuple[int, int]]] = [[] for _ in range(azimuth_bins)]
    for ci, cam in enumerate(rig.cameras):
        for col in range(width // stride):
            bins[azimuth_bin(column_azimuth(cam, col, stride), azimuth_bins)].append((ci, col))
    coverage = tuple(len({ci for ci, _ in members}) for members in bins)
    return RayAssignment(azimuth_bins=azimuth_bins, stride=stride,
                         bins=tuple(tuple(members) for members in bins), coverage=coverage)
