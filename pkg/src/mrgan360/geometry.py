"""Spherical resampling between equirectangular panoramas and viewports.

Conventions:
  * World axes: +X is the forward direction (longitude 0, latitude 0),
    +Y points toward longitude +90, +Z is up.
  * An ERP pixel (x, y) sits at longitude (x+0.5)/W*360 - 180 and
    latitude 90 - (y+0.5)/H*180, both in degrees.
  * View orientation composes extrinsically as yaw about the vertical,
    then pitch, then roll about the view axis: R = Rz(yaw) Ry(-pitch) Rx(roll).
  * Images are channels-first float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import CoverageError, GeometryError, ShapeError

FACE_NAMES = ("front", "right", "back", "left", "up", "down")
FACE_ANGLES = {
    "front": (0.0, 0.0),
    "right": (90.0, 0.0),
    "back": (180.0, 0.0),
    "left": (270.0, 0.0),
    "up": (0.0, 90.0),
    "down": (0.0, -90.0),
}


@dataclass
class EquirectImage:
    """2:1 equirectangular panorama, pixels (C, H, W) in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise ShapeError(f"ERP pixels must be (C,H,W), got "
                             f"{self.pixels.shape}")
        c, h, w = self.pixels.shape
        if c not in (1, 3):
            raise ShapeError(f"ERP must have 1 or 3 channels, got {c}")
        if w != 2 * h or w % 2 != 0:
            raise ShapeError(f"ERP must be 2:1 with even width, got {w}x{h}")
        if not np.all(np.isfinite(self.pixels)):
            raise ShapeError("ERP pixels must be finite")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass
class ViewSpec:
    """A rectilinear viewport orientation and size."""

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    fov: float = 90.0
    out_width: int = 256
    out_height: int = 256

    def __post_init__(self):
        if not 0.0 < self.fov < 180.0:
            raise GeometryError(f"fov must be in (0,180), got {self.fov}")
        if self.out_width < 2 or self.out_height < 2:
            raise GeometryError("viewport extents must be >= 2")
        if not -90.0 <= self.pitch <= 90.0:
            raise GeometryError(f"pitch must be in [-90,90], got {self.pitch}")

    @property
    def focal(self) -> float:
        return (self.out_width / 2.0) / np.tan(np.radians(self.fov) / 2.0)

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.yaw, self.pitch, self.roll)


@dataclass
class FaceImage:
    """A rendered viewport: pixels (C, view.out_height, view.out_width)."""

    view: ViewSpec
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise ShapeError(f"face pixels must be (C,H,W), got "
                             f"{self.pixels.shape}")
        c, h, w = self.pixels.shape
        if (h, w) != (self.view.out_height, self.view.out_width):
            raise ShapeError(f"face pixels {w}x{h} disagree with view "
                             f"{self.view.out_width}x{self.view.out_height}")
        if not np.all(np.isfinite(self.pixels)):
            raise ShapeError("face pixels must be finite")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]


@dataclass
class AccumulatorMap:
    """Running sum/count buffer for averaging back-projected viewports."""

    width: int
    height: int
    sum: np.ndarray = field(default=None)
    count: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sum is None:
            self.sum = np.zeros((self.height, self.width))
        if self.count is None:
            self.count = np.zeros((self.height, self.width))

    def finalize(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-pixel average and the covered mask."""
        covered = self.count > 0
        out = np.zeros_like(self.sum)
        np.divide(self.sum, self.count, out=out, where=covered)
        return out, covered


# -- rotations ------------------------------------------------------------

def rotation_matrix(yaw: float, pitch: float, roll: float = 0.0) -> np.ndarray:
    """Orientation matrix mapping camera coords (forward, right, up) to world."""
    # reduce to [0,360) so full-turn offsets reproduce the exact same matrix
    yaw = yaw % 360.0
    roll = roll % 360.0
    cy, sy = np.cos(np.radians(yaw)), np.sin(np.radians(yaw))
    cp, sp = np.cos(np.radians(pitch)), np.sin(np.radians(pitch))
    cr, sr = np.cos(np.radians(roll)), np.sin(np.radians(roll))
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def matrix_to_angles(r: np.ndarray) -> Tuple[float, float, float]:
    """Recover (yaw, pitch, roll) from a rotation matrix, degrees.

    At the gimbal-lock poles (|pitch| = 90) yaw is folded into roll.
    """
    forward = r[:, 0]
    pitch = float(np.degrees(np.arcsin(np.clip(forward[2], -1.0, 1.0))))
    if abs(forward[2]) > 1.0 - 1e-12:
        yaw = 0.0
    else:
        yaw = float(np.degrees(np.arctan2(forward[1], forward[0]))) % 360.0
    # the residual after undoing yaw and pitch is a pure twist about forward
    m = rotation_matrix(yaw, pitch, 0.0).T @ r
    roll = float(np.degrees(np.arctan2(m[2, 1], m[1, 1])))
    return yaw, pitch, roll


# -- ERP sampling ----------------------------------------------------------

def _erp_coords(lam_deg: np.ndarray, phi_deg: np.ndarray,
                width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous ERP pixel coordinates for longitude/latitude in degrees."""
    fx = (lam_deg + 180.0) / 360.0 * width - 0.5
    fy = (90.0 - phi_deg) / 180.0 * height - 0.5
    return fx, fy


def sample_erp(erp: EquirectImage, lam_deg: np.ndarray, phi_deg: np.ndarray,
               interp: str = "bilinear") -> np.ndarray:
    """Sample the panorama at (longitude, latitude) arrays, degrees.

    Longitude wraps, latitude clamps at the poles.  Returns (C, *angles.shape).
    """
    w, h = erp.width, erp.height
    fx, fy = _erp_coords(np.asarray(lam_deg, dtype=np.float64),
                         np.asarray(phi_deg, dtype=np.float64), w, h)
    pix = erp.pixels
    if interp == "nearest":
        xi = np.mod(np.rint(fx).astype(np.int64), w)
        yi = np.clip(np.rint(fy).astype(np.int64), 0, h - 1)
        return pix[:, yi, xi]
    if interp != "bilinear":
        raise GeometryError(f"unknown interpolation {interp!r}")
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    tx = fx - x0
    ty = fy - y0
    x0w = np.mod(x0, w)
    x1w = np.mod(x0 + 1, w)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    v00 = pix[:, y0c, x0w]
    v01 = pix[:, y0c, x1w]
    v10 = pix[:, y1c, x0w]
    v11 = pix[:, y1c, x1w]
    top = v00 * (1.0 - tx) + v01 * tx
    bot = v10 * (1.0 - tx) + v11 * tx
    return top * (1.0 - ty) + bot * ty


def _camera_rays(width: int, height: int, focal: float) -> np.ndarray:
    """Unit rays through each pixel center, camera frame (forward, right, up)."""
    px = (np.arange(width) + 0.5) - width / 2.0
    py = height / 2.0 - (np.arange(height) + 0.5)
    right, up = np.meshgrid(px, py)
    fwd = np.full_like(right, focal)
    rays = np.stack([fwd, right, up])
    return rays / np.linalg.norm(rays, axis=0, keepdims=True)


def _dirs_to_angles(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lam = np.degrees(np.arctan2(d[1], d[0]))
    phi = np.degrees(np.arcsin(np.clip(d[2], -1.0, 1.0)))
    return lam, phi


def render_view(erp: EquirectImage, rotation: np.ndarray, fov: float,
                out_width: int, out_height: int,
                interp: str = "bilinear") -> np.ndarray:
    """Render a viewport with an explicit orientation matrix."""
    focal = (out_width / 2.0) / np.tan(np.radians(fov) / 2.0)
    rays = _camera_rays(out_width, out_height, focal)
    world = np.einsum("ij,jhw->ihw", rotation, rays)
    lam, phi = _dirs_to_angles(world)
    return sample_erp(erp, lam, phi, interp)


def extract_view(erp: EquirectImage, view: ViewSpec,
                 interp: str = "bilinear") -> FaceImage:
    """Rectilinear projection of the panorama through a pinhole camera."""
    pixels = render_view(erp, view.rotation(), view.fov,
                         view.out_width, view.out_height, interp)
    return FaceImage(view=view, pixels=pixels)


def cube_faces(erp: EquirectImage, rotation: Tuple[float, float] = (0.0, 0.0),
               size: int = 256, interp: str = "bilinear") -> List[FaceImage]:
    """Six 90-degree faces, optionally under a (yaw, pitch) cube rotation."""
    yaw_off, pitch_off = rotation
    r_off = rotation_matrix(yaw_off, pitch_off, 0.0)
    faces = []
    for name in FACE_NAMES:
        fy, fp = FACE_ANGLES[name]
        r = r_off @ rotation_matrix(fy, fp, 0.0)
        yaw, pitch, roll = matrix_to_angles(r)
        view = ViewSpec(yaw=yaw, pitch=pitch, roll=roll, fov=90.0,
                        out_width=size, out_height=size)
        faces.append(extract_view(erp, view, interp))
    return faces


# -- back-projection --------------------------------------------------------

def erp_directions(width: int, height: int) -> np.ndarray:
    """Unit direction for every ERP pixel center: (3, H, W)."""
    lam = np.radians((np.arange(width) + 0.5) / width * 360.0 - 180.0)
    phi = np.radians(90.0 - (np.arange(height) + 0.5) / height * 180.0)
    lam, phi = np.meshgrid(lam, phi)
    return np.stack([np.cos(phi) * np.cos(lam),
                     np.cos(phi) * np.sin(lam),
                     np.sin(phi)])


def _sample_face_bilinear(pixels: np.ndarray, u: np.ndarray,
                          v: np.ndarray) -> np.ndarray:
    """Clamped bilinear lookup into a single-channel face image."""
    h, w = pixels.shape
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    x0 = np.clip(np.floor(u).astype(np.int64), 0, w - 2) if w > 1 else 0
    y0 = np.clip(np.floor(v).astype(np.int64), 0, h - 2) if h > 1 else 0
    tx = u - x0
    ty = v - y0
    top = pixels[y0, x0] * (1 - tx) + pixels[y0, x0 + 1] * tx
    bot = pixels[y0 + 1, x0] * (1 - tx) + pixels[y0 + 1, x0 + 1] * tx
    return top * (1 - ty) + bot * ty


def backproject_accumulate(acc: AccumulatorMap,
                           face: FaceImage) -> AccumulatorMap:
    """Add one single-channel viewport into the ERP accumulator.

    Frustum membership is hard (weight 1 inside, 0 outside), boundary
    inclusive, so overlapping viewports average exactly.
    """
    if face.channels != 1:
        raise ShapeError(f"back-projection needs a single-channel map, "
                         f"got {face.channels} channels")
    view = face.view
    r = view.rotation()
    dirs = erp_directions(acc.width, acc.height)
    cam = np.einsum("ji,jhw->ihw", r, dirs)  # R^T @ dirs
    fwd, right, up = cam[0], cam[1], cam[2]
    focal = view.focal
    eps = 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.where(fwd > 0, right / fwd * focal, np.inf)
        py = np.where(fwd > 0, up / fwd * focal, np.inf)
    inside = ((fwd > 0)
              & (np.abs(px) <= view.out_width / 2.0 + eps)
              & (np.abs(py) <= view.out_height / 2.0 + eps))
    if np.any(inside):
        u = px[inside] + view.out_width / 2.0 - 0.5
        v = view.out_height / 2.0 - py[inside] - 0.5
        acc.sum[inside] += _sample_face_bilinear(face.pixels[0], u, v)
        acc.count[inside] += 1.0
    return acc


def frustum_mask(view: ViewSpec, width: int, height: int) -> np.ndarray:
    """Which ERP pixels a viewport covers (same membership rule as
    back-projection)."""
    r = view.rotation()
    dirs = erp_directions(width, height)
    cam = np.einsum("ji,jhw->ihw", r, dirs)
    fwd = cam[0]
    focal = view.focal
    eps = 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.where(fwd > 0, cam[1] / fwd * focal, np.inf)
        py = np.where(fwd > 0, cam[2] / fwd * focal, np.inf)
    return ((fwd > 0)
            & (np.abs(px) <= view.out_width / 2.0 + eps)
            & (np.abs(py) <= view.out_height / 2.0 + eps))


def dense_view_grid(lon_step: float = 10.0, lat_step: float = 10.0,
                    fov: float = 90.0, out_width: int = 256,
                    out_height: int = 256) -> List[ViewSpec]:
    """Viewport centers on a longitude x latitude grid (poles included)."""
    views = []
    for pitch in np.arange(-90.0, 90.0 + 1e-9, lat_step):
        for yaw in np.arange(0.0, 360.0 - 1e-9, lon_step):
            views.append(ViewSpec(yaw=float(yaw), pitch=float(pitch),
                                  fov=fov, out_width=out_width,
                                  out_height=out_height))
    return views


def dense_assemble(viewport_maps: Sequence[FaceImage],
                   out_dims: Tuple[int, int]) -> np.ndarray:
    """Average back-projected viewport saliency maps into one ERP map.

    Returns an (H, W) array scaled so the global max is 1.  Raises
    CoverageError if any ERP pixel is covered by no viewport, reporting
    the uncovered solid-angle fraction.
    """
    width, height = out_dims
    if not viewport_maps:
        raise ShapeError("dense_assemble needs at least one viewport map")
    acc = AccumulatorMap(width=width, height=height)
    for face in viewport_maps:
        backproject_accumulate(acc, face)
    out, covered = acc.finalize()
    if not covered.all():
        phi = np.radians(90.0 - (np.arange(height) + 0.5) / height * 180.0)
        weights = np.cos(phi)[:, None] * np.ones((1, width))
        uncovered = float(weights[~covered].sum() / weights.sum())
        raise CoverageError(uncovered)
    peak = out.max()
    if peak > 0:
        out = out / peak
    return out


# -- forward projection of points -------------------------------------------

def project_directions(view: ViewSpec,
                       dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Map unit directions (3, N) to viewport pixel coords.

    Returns (coords (2, N) as (u, v), inside mask).  Inverse of the
    pixel-to-ray mapping used by extract_view.
    """
    r = view.rotation()
    cam = r.T @ dirs
    fwd, right, up = cam[0], cam[1], cam[2]
    focal = view.focal
    eps = 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.where(fwd > 0, right / fwd * focal, np.inf)
        py = np.where(fwd > 0, up / fwd * focal, np.inf)
    inside = ((fwd > 0)
              & (np.abs(px) <= view.out_width / 2.0 + eps)
              & (np.abs(py) <= view.out_height / 2.0 + eps))
    u = px + view.out_width / 2.0 - 0.5
    v = view.out_height / 2.0 - py - 0.5
    return np.stack([u, v]), inside


def erp_pixel_direction(x: np.ndarray, y: np.ndarray,
                        width: int, height: int) -> np.ndarray:
    """Unit directions (3, N) for ERP pixel coordinates."""
    lam = np.radians((np.asarray(x, dtype=np.float64) + 0.5) / width * 360.0
                     - 180.0)
    phi = np.radians(90.0 - (np.asarray(y, dtype=np.float64) + 0.5)
                     / height * 180.0)
    return np.stack([np.cos(phi) * np.cos(lam),
                     np.cos(phi) * np.sin(lam),
                     np.sin(phi)])
