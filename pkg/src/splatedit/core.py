"""Scene model for anisotropic Gaussian splats.

Holds the primitive/scene containers, the optimization-space ("raw") view of a
scene, per-Gaussian raw-space offsets, region masks over Gaussians, pinhole
cameras, and the scene (de)serialization formats:

* text: versioned JSON, one object per Gaussian;
* binary sidecar: magic ``PGDF``, u32 version, u32 count, then 14 little-endian
  float32 per Gaussian (position, scale, rotation wxyz, opacity, color).

Raw space is where offsets add: position as-is, log scale, unnormalized
rotation quaternion, opacity logit, color logits. Activation (exp / normalize /
sigmoid) maps raw rows back to a valid scene regardless of offset magnitude.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

SCENE_FORMAT_VERSION = 1
BINARY_MAGIC = b"PGDF"
BINARY_VERSION = 1

# One Gaussian in raw space is a 14-vector with this layout.
RAW_DIM = 14
POSITION = slice(0, 3)
LOG_SCALE = slice(3, 6)
ROTATION = slice(6, 10)
OPACITY = slice(10, 11)
COLOR = slice(11, 14)

# Inverse activations clamp into the open interval so logits stay finite.
LOGIT_EPS = 1e-5


class SceneError(ValueError):
    """Raised for malformed scenes / scene files."""


def sigmoid(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray | float, eps: float = LOGIT_EPS) -> np.ndarray:
    """Inverse sigmoid; clamps into [eps, 1-eps] first."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Rows of q scaled to unit norm. Raises on zero-norm rows."""
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise SceneError("rotation quaternion has zero or non-finite norm")
    return q / norms


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) wxyz -> rotation matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass(frozen=True)
class GaussianPrimitive:
    """A single splat: position, per-axis scale, rotation (wxyz, unit),
    opacity in [0,1], RGB color in [0,1]. View-independent color only."""

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(4))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.scale))
                and np.all(np.isfinite(self.rotation)) and np.all(np.isfinite(self.color))
                and math.isfinite(self.opacity)):
            raise SceneError("non-finite Gaussian parameter")
        if np.any(self.scale <= 0):
            raise SceneError("scale must be positive")
        if not 0.0 <= self.opacity <= 1.0:
            raise SceneError("opacity must lie in [0, 1]")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise SceneError("color must lie in [0, 1]")
        n = float(np.linalg.norm(self.rotation))
        if n == 0.0:
            raise SceneError("rotation quaternion has zero norm")
        if abs(n - 1.0) > 1e-6:
            raise SceneError("rotation quaternion must be unit length")

    def covariance(self) -> np.ndarray:
        """World-space 3x3 covariance R S S^T R^T."""
        R = quaternion_to_rotation(self.rotation)
        Q = R * self.scale[None, :]
        return Q @ Q.T


@dataclass
class Scene:
    """Struct-of-arrays scene: N Gaussians plus a background color.

    positions (N,3), scales (N,3) > 0, rotations (N,4) unit wxyz,
    opacities (N,) in [0,1], colors (N,3) in [0,1], background (3,) in [0,1].
    """

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        try:
            self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
            n = self.positions.shape[0]
            self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
            self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
            self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
            self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        except (ValueError, TypeError) as e:
            raise SceneError(f"malformed scene arrays: {e}") from e

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.count

    def gaussian(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.positions[i].copy(),
            scale=self.scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity=float(self.opacities[i]),
            color=self.colors[i].copy(),
        )

    @classmethod
    def from_gaussians(cls, gaussians, background=(0.0, 0.0, 0.0)) -> "Scene":
        gs = list(gaussians)
        if gs:
            return cls(
                positions=np.stack([g.position for g in gs]),
                scales=np.stack([g.scale for g in gs]),
                rotations=np.stack([g.rotation for g in gs]),
                opacities=np.array([g.opacity for g in gs], dtype=np.float64),
                colors=np.stack([g.color for g in gs]),
                background=np.asarray(background, dtype=np.float64),
            )
        return cls(
            positions=np.zeros((0, 3)), scales=np.ones((0, 3)),
            rotations=np.tile([1.0, 0, 0, 0], (0, 1)).reshape(0, 4),
            opacities=np.zeros(0), colors=np.zeros((0, 3)),
            background=np.asarray(background, dtype=np.float64),
        )

    def copy(self) -> "Scene":
        return Scene(
            positions=self.positions.copy(), scales=self.scales.copy(),
            rotations=self.rotations.copy(), opacities=self.opacities.copy(),
            colors=self.colors.copy(), background=self.background.copy(),
        )

    def validate(self) -> None:
        for name in ("positions", "scales", "rotations", "opacities", "colors", "background"):
            a = getattr(self, name)
            if not np.all(np.isfinite(a)):
                raise SceneError(f"non-finite values in {name}")
        if np.any(self.scales <= 0):
            raise SceneError("scale must be positive")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise SceneError("opacity must lie in [0, 1]")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise SceneError("color must lie in [0, 1]")
        if np.any(self.background < 0) or np.any(self.background > 1):
            raise SceneError("background must lie in [0, 1]")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(norms == 0):
            raise SceneError("rotation quaternion has zero norm")
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise SceneError("rotation quaternions must be unit length")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds of Gaussian centers (min, max)."""
        if self.count == 0:
            z = np.zeros(3)
            return z, z
        return self.positions.min(axis=0), self.positions.max(axis=0)


@dataclass
class RawParams:
    """Scene in optimization space. Arrays mirror Scene rows; rotations are
    unnormalized (activation renormalizes)."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    color_logits: np.ndarray

    FIELDS = ("positions", "log_scales", "rotations", "opacity_logits", "color_logits")

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.color_logits = np.asarray(self.color_logits, dtype=np.float64).reshape(n, 3)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def from_scene(cls, scene: Scene, eps: float = LOGIT_EPS) -> "RawParams":
        """Inverse activation. Opacity/color are clamped into the open unit
        interval before the logit, so saturated values move to the interior."""
        return cls(
            positions=scene.positions.copy(),
            log_scales=np.log(scene.scales),
            rotations=scene.rotations.copy(),
            opacity_logits=logit(scene.opacities, eps),
            color_logits=logit(scene.colors, eps),
        )

    def activate(self, background) -> Scene:
        return Scene(
            positions=self.positions.copy(),
            scales=np.exp(self.log_scales),
            rotations=normalize_quaternions(self.rotations),
            opacities=sigmoid(self.opacity_logits),
            colors=sigmoid(self.color_logits),
            background=np.asarray(background, dtype=np.float64),
        )

    def copy(self) -> "RawParams":
        return RawParams(*(getattr(self, f).copy() for f in self.FIELDS))

    def as_matrix(self) -> np.ndarray:
        """(N, 14) view of the raw parameters (copies)."""
        return np.concatenate(
            [self.positions, self.log_scales, self.rotations,
             self.opacity_logits[:, None], self.color_logits], axis=1)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RawParams":
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != RAW_DIM:
            raise SceneError(f"raw matrix must be (N, {RAW_DIM})")
        return cls(m[:, POSITION], m[:, LOG_SCALE], m[:, ROTATION],
                   m[:, OPACITY][:, 0], m[:, COLOR])


@dataclass(frozen=True)
class GaussianOffset:
    """Raw-space delta for one Gaussian."""

    d_position: np.ndarray
    d_log_scale: np.ndarray
    d_rotation: np.ndarray
    d_opacity_logit: float
    d_color_logit: np.ndarray

    def as_vector(self) -> np.ndarray:
        v = np.empty(RAW_DIM, dtype=np.float64)
        v[POSITION] = np.asarray(self.d_position, dtype=np.float64).reshape(3)
        v[LOG_SCALE] = np.asarray(self.d_log_scale, dtype=np.float64).reshape(3)
        v[ROTATION] = np.asarray(self.d_rotation, dtype=np.float64).reshape(4)
        v[OPACITY] = float(self.d_opacity_logit)
        v[COLOR] = np.asarray(self.d_color_logit, dtype=np.float64).reshape(3)
        return v

    @classmethod
    def from_vector(cls, v) -> "GaussianOffset":
        v = np.asarray(v, dtype=np.float64).reshape(RAW_DIM)
        return cls(v[POSITION].copy(), v[LOG_SCALE].copy(), v[ROTATION].copy(),
                   float(v[OPACITY][0]), v[COLOR].copy())

    @classmethod
    def zero(cls) -> "GaussianOffset":
        return cls(np.zeros(3), np.zeros(3), np.zeros(4), 0.0, np.zeros(3))


@dataclass
class RegionMask:
    """Boolean membership over the scene's Gaussians."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)

    @property
    def size(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def indices(self) -> np.ndarray:
        return np.nonzero(self.bits)[0]

    @classmethod
    def from_indices(cls, size: int, indices) -> "RegionMask":
        bits = np.zeros(size, dtype=bool)
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= size):
            raise SceneError("region index out of range")
        bits[idx] = True
        return cls(bits)

    @classmethod
    def full(cls, size: int) -> "RegionMask":
        return cls(np.ones(size, dtype=bool))

    def union(self, other: "RegionMask") -> "RegionMask":
        if other.size != self.size:
            raise SceneError("region mask size mismatch")
        return RegionMask(self.bits | other.bits)

    def to_text(self) -> str:
        lines = [f"regionmask {SCENE_FORMAT_VERSION} {self.size}"]
        lines += [str(i) for i in self.indices()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RegionMask":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise SceneError("empty region mask document")
        head = lines[0].split()
        if len(head) != 3 or head[0] != "regionmask":
            raise SceneError("bad region mask header")
        if int(head[1]) != SCENE_FORMAT_VERSION:
            raise SceneError(f"unsupported region mask version {head[1]}")
        size = int(head[2])
        return cls.from_indices(size, (int(ln) for ln in lines[1:]))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. Camera frame: +x right, +y down, +z forward; pixel
    centers sit at integer coordinates, u = fx*x/z + cx, v = fy*y/z + cy."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray   # (3,3) world->camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.width <= 0 or self.height <= 0:
            raise SceneError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise SceneError("focal lengths must be positive")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, fov_deg: float = 45.0,
                width: int = 64, height: int = 64) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        fwd = target - eye
        n = np.linalg.norm(fwd)
        if n == 0:
            raise SceneError("camera eye and target coincide")
        z_c = fwd / n
        x_c = np.cross(z_c, up)
        nx = np.linalg.norm(x_c)
        if nx < 1e-12:
            # looking straight along up: pick an arbitrary horizontal right
            x_c = np.cross(z_c, np.array([0.0, 1.0, 0.0]))
            nx = np.linalg.norm(x_c)
        x_c = x_c / nx
        y_c = np.cross(z_c, x_c)
        R = np.stack([x_c, y_c, z_c])
        t = -R @ eye
        f = 0.5 * width / math.tan(math.radians(fov_deg) * 0.5)
        return cls(width=width, height=height, fx=f, fy=f,
                   cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   rotation=R, translation=t)


def orbit_camera(center, radius: float, azimuth_deg: float, elevation_deg: float,
                 *, fov_deg: float = 45.0, width: int = 64, height: int = 64) -> Camera:
    center = np.asarray(center, dtype=np.float64)
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    eye = center + radius * np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return Camera.look_at(eye, center, fov_deg=fov_deg, width=width, height=height)


def orbit_rig(center, radius: float, azimuth_steps: int, elevations_deg,
              *, fov_deg: float = 45.0, width: int = 64, height: int = 64,
              azimuth_offset_deg: float = 0.0) -> list[Camera]:
    """Ring(s) of cameras looking at `center`. Capped at 96 viewpoints."""
    elevations = list(elevations_deg)
    if azimuth_steps < 1 or not elevations:
        raise SceneError("orbit rig needs at least one viewpoint")
    if azimuth_steps * len(elevations) > 96:
        raise SceneError("orbit rig capped at 96 viewpoints")
    cams = []
    for el in elevations:
        for k in range(azimuth_steps):
            az = azimuth_offset_deg + 360.0 * k / azimuth_steps
            cams.append(orbit_camera(center, radius, az, el,
                                     fov_deg=fov_deg, width=width, height=height))
    return cams


@dataclass
class ImageBuffer:
    """Float RGB image, shape (H, W, 3), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise SceneError("image buffer must have shape (H, W, 3)")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def apply_offsets(scene: Scene, offsets, mask: RegionMask) -> Scene:
    """New scene with raw-space offsets added to masked Gaussians.

    Rows outside the mask are copied bit-for-bit; so are masked rows whose
    offset vector is exactly zero, which makes a zero offset an exact identity.
    """
    if isinstance(offsets, np.ndarray):
        off = np.asarray(offsets, dtype=np.float64)
    else:
        off = np.stack([o.as_vector() if isinstance(o, GaussianOffset) else np.asarray(o, dtype=np.float64)
                        for o in offsets]) if len(offsets) else np.zeros((0, RAW_DIM))
    if off.shape != (scene.count, RAW_DIM):
        raise SceneError(f"offsets must have shape ({scene.count}, {RAW_DIM})")
    if mask.size != scene.count:
        raise SceneError("region mask size mismatch")
    if not np.all(np.isfinite(off)):
        raise SceneError("non-finite offset")

    out = scene.copy()
    touched = mask.bits & np.any(off != 0.0, axis=1)
    idx = np.nonzero(touched)[0]
    if idx.size == 0:
        return out

    sub = Scene(
        positions=scene.positions[idx], scales=scene.scales[idx],
        rotations=scene.rotations[idx], opacities=scene.opacities[idx],
        colors=scene.colors[idx], background=scene.background,
    )
    raw = RawParams.from_scene(sub)
    d = off[idx]
    raw.positions += d[:, POSITION]
    raw.log_scales += d[:, LOG_SCALE]
    raw.rotations += d[:, ROTATION]
    raw.opacity_logits += d[:, OPACITY][:, 0]
    raw.color_logits += d[:, COLOR]
    act = raw.activate(scene.background)
    out.positions[idx] = act.positions
    out.scales[idx] = act.scales
    out.rotations[idx] = act.rotations
    out.opacities[idx] = act.opacities
    out.colors[idx] = act.colors
    return out


# --- serialization ---------------------------------------------------------


def encode_scene(scene: Scene) -> bytes:
    scene.validate()
    doc = {
        "version": SCENE_FORMAT_VERSION,
        "background": scene.background.tolist(),
        "gaussians": [
            {
                "pos": scene.positions[i].tolist(),
                "scale": scene.scales[i].tolist(),
                "rot": scene.rotations[i].tolist(),
                "opacity": float(scene.opacities[i]),
                "color": scene.colors[i].tolist(),
            }
            for i in range(scene.count)
        ],
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def decode_scene(data: bytes | str) -> Scene:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise SceneError(f"scene document is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a JSON object")
    version = doc.get("version")
    if version != SCENE_FORMAT_VERSION:
        raise SceneError(f"unsupported scene version: {version!r}")
    try:
        gs = doc["gaussians"]
        background = np.asarray(doc.get("background", [0.0, 0.0, 0.0]), dtype=np.float64)
        scene = Scene(
            positions=np.array([g["pos"] for g in gs], dtype=np.float64).reshape(len(gs), 3),
            scales=np.array([g["scale"] for g in gs], dtype=np.float64).reshape(len(gs), 3),
            rotations=np.array([g["rot"] for g in gs], dtype=np.float64).reshape(len(gs), 4),
            opacities=np.array([g["opacity"] for g in gs], dtype=np.float64),
            colors=np.array([g["color"] for g in gs], dtype=np.float64).reshape(len(gs), 3),
            background=background,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SceneError(f"malformed scene document: {e}") from e
    scene.rotations = normalize_quaternions(scene.rotations)
    scene.validate()
    return scene


def encode_scene_binary(scene: Scene) -> bytes:
    """Sidecar binary; note the background is not part of this format."""
    scene.validate()
    m = np.concatenate(
        [scene.positions, scene.scales, scene.rotations,
         scene.opacities[:, None], scene.colors], axis=1).astype("<f4")
    header = BINARY_MAGIC + struct.pack("<II", BINARY_VERSION, scene.count)
    return header + m.tobytes(order="C")


def decode_scene_binary(data: bytes, background=(0.0, 0.0, 0.0)) -> Scene:
    if len(data) < 12 or data[:4] != BINARY_MAGIC:
        raise SceneError("bad scene binary magic")
    version, count = struct.unpack("<II", data[4:12])
    if version != BINARY_VERSION:
        raise SceneError(f"unsupported scene binary version: {version}")
    expect = 12 + count * RAW_DIM * 4
    if len(data) != expect:
        raise SceneError(f"scene binary length mismatch: got {len(data)}, want {expect}")
    m = np.frombuffer(data, dtype="<f4", offset=12).reshape(count, RAW_DIM).astype(np.float64)
    scene = Scene(
        positions=m[:, POSITION], scales=m[:, LOG_SCALE], rotations=m[:, ROTATION],
        opacities=m[:, OPACITY][:, 0], colors=m[:, COLOR],
        background=np.asarray(background, dtype=np.float64),
    )
    scene.rotations = normalize_quaternions(scene.rotations)
    scene.validate()
    return scene
