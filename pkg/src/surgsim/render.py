"""Pinhole ray-cast renderer for small grayscale endoscope images.

Camera frame convention: +z is the optical axis, +x points to increasing
image columns and +y to increasing image rows. Each pixel casts one ray
through its centre; the nearest sphere hit is shaded with a Lambertian term
lit by a headlight at the camera. Misses are background (0).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from surgsim.robots.model import Pose


class Sphere(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center: tuple[float, float, float]
    radius: float
    albedo: float = 1.0

    @field_validator("radius")
    @classmethod
    def _radius(cls, v):
        if not v > 0:
            raise ValueError("radius must be > 0")
        return v

    @field_validator("albedo")
    @classmethod
    def _albedo(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("albedo must lie in [0, 1]")
        return v


class RenderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = 32
    height: int = 32
    fov: float = 1.0  # horizontal field of view, radians
    near: float = 0.005
    far: float = 1.0
    scene: list[Sphere] = []

    @field_validator("width", "height")
    @classmethod
    def _size(cls, v):
        if v < 8:
            raise ValueError("must be >= 8 pixels")
        return v

    @model_validator(mode="after")
    def _clip(self):
        if not 0.0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if not 0.0 < self.fov < math.pi:
            raise ValueError("fov must lie in (0, pi)")
        return self

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return 0.5 * self.width / math.tan(0.5 * self.fov)

    @property
    def pixels(self) -> int:
        return self.width * self.height


def pixel_rays(cfg: RenderConfig) -> np.ndarray:
    """Unit ray directions in the camera frame, shape (h*w, 3), row-major."""
    f = cfg.focal
    u = (np.arange(cfg.width) + 0.5 - 0.5 * cfg.width) / f
    v = (np.arange(cfg.height) + 0.5 - 0.5 * cfg.height) / f
    uu, vv = np.meshgrid(u, v)
    d = np.stack([uu.ravel(), vv.ravel(), np.ones(cfg.pixels)], axis=1)
    return d / np.sqrt(d[:, 0:1] ** 2 + d[:, 1:2] ** 2 + d[:, 2:3] ** 2)


def render_batch(
    positions: np.ndarray,
    rotations: np.ndarray,
    centers: np.ndarray,
    radii: np.ndarray,
    albedo: np.ndarray,
    cfg: RenderConfig,
) -> np.ndarray:
    """Render N cameras, each against its own sphere set.

    positions (N,3), rotations (N,3,3) camera-to-world, centers (N,S,3),
    radii (N,S), albedo (N,S). Returns images (N, h*w) in [0, 1].
    """
    rays = pixel_rays(cfg)  # (P,3) camera frame
    rx, ry, rz = rays[None, :, 0], rays[None, :, 1], rays[None, :, 2]
    n, p = len(positions), len(rays)
    best_t = np.full((n, p), np.inf)
    shade = np.zeros((n, p))
    for s in range(centers.shape[1]):
        # sphere-to-camera offset expressed in the camera frame: R^T (o - c)
        w = positions - centers[:, s]
        oc = w[:, 0:1] * rotations[:, 0, :] + w[:, 1:2] * rotations[:, 1, :] + w[:, 2:3] * rotations[:, 2, :]
        b = rx * oc[:, None, 0] + ry * oc[:, None, 1] + rz * oc[:, None, 2]
        c = w[:, 0] ** 2 + w[:, 1] ** 2 + w[:, 2] ** 2 - radii[:, s] ** 2
        disc = b * b - c[:, None]
        root = np.sqrt(np.maximum(disc, 0.0))
        t = -b - root
        t = np.where(t >= cfg.near, t, -b + root)
        hit = (disc >= 0.0) & (t >= cfg.near) & (t <= cfg.far) & (t < best_t)
        if not hit.any():
            continue
        # Lambert with a headlight: n.(-d) = -(oc + t d).d / r = -(b + t) / r for unit d.
        lam = np.clip(-(b + t) / radii[:, s, None], 0.0, 1.0) * albedo[:, None, s]
        best_t = np.where(hit, t, best_t)
        shade = np.where(hit, lam, shade)
    return shade


def render(camera: Pose, cfg: RenderConfig) -> np.ndarray:
    """Render one camera against ``cfg.scene``; returns an (h, w) image."""
    if cfg.scene:
        centers = np.array([s.center for s in cfg.scene], dtype=np.float64)[None]
        radii = np.array([s.radius for s in cfg.scene], dtype=np.float64)[None]
        albedo = np.array([s.albedo for s in cfg.scene], dtype=np.float64)[None]
    else:
        centers, radii, albedo = np.zeros((1, 0, 3)), np.zeros((1, 0)), np.zeros((1, 0))
    img = render_batch(
        np.asarray(camera.position, dtype=np.float64)[None],
        camera.rotation_matrix()[None],
        centers,
        radii,
        albedo,
        cfg,
    )
    return img[0].reshape(cfg.height, cfg.width)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write an (h, w) image in [0, 1] as a binary 8-bit portable graymap."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w = img.shape
    data = np.round(img * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, size, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    w, h = (int(x) for x in size.split())
    maxval = int(maxval)
    data = np.frombuffer(body[: w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / maxval
