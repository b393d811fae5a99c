"""Dataset assembly: cube rotation augmentation, fixation projection,
ground-truth smoothing, and the bundled synthetic desk-scale data."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .geometry import (EquirectImage, FaceImage, FACE_ANGLES, FACE_NAMES,
                       ViewSpec, cube_faces, erp_pixel_direction,
                       project_directions, rotation_matrix)
from .metrics import FixationMap, SaliencyMap, gaussian_density


@dataclass
class Sample:
    """One training item: a rectilinear view plus its ground truth."""

    image: np.ndarray          # (3, H, W) float in [0, 1]
    gt_density: SaliencyMap
    gt_fixations: FixationMap
    source_id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"sample image must be (3,H,W), "
                             f"got {self.image.shape}")
        h, w = self.image.shape[1:]
        if (self.gt_density.height, self.gt_density.width) != (h, w):
            raise ShapeError("sample density dims disagree with image")
        if (self.gt_fixations.height, self.gt_fixations.width) != (h, w):
            raise ShapeError("sample fixation dims disagree with image")


def build_dataset(odis: Sequence[Tuple[EquirectImage, FixationMap]],
                  rotations: Sequence[float],
                  face_size: int = 256,
                  sigma: float = 0.0) -> List[Sample]:
    """Cube-face samples under every (yaw, pitch) rotation pair.

    Each ERP fixation is assigned to the face whose axis it is closest to
    (the natural cube partition), then smoothed into a density.  Faces
    that receive no fixation are dropped: an all-zero density would break
    the KL and CC terms downstream.

    ``sigma`` is the smoothing width in face pixels; 0 selects one degree
    of visual angle (face_size / 90).
    """
    if not odis:
        raise ShapeError("build_dataset needs at least one panorama")
    if sigma <= 0:
        sigma = face_size / 90.0
    samples: List[Sample] = []
    for odi_idx, (erp, fixations) in enumerate(odis):
        if erp.channels != 3:
            raise ShapeError("training panoramas must be RGB")
        if (fixations.width, fixations.height) != (erp.width, erp.height):
            raise ShapeError("fixations must be in ERP pixel coordinates")
        if fixations.points:
            xs = np.array([p[0] for p in fixations.points], dtype=np.float64)
            ys = np.array([p[1] for p in fixations.points], dtype=np.float64)
            dirs = erp_pixel_direction(xs, ys, erp.width, erp.height)
        else:
            dirs = np.zeros((3, 0))
        for yaw_off in rotations:
            for pitch_off in rotations:
                samples.extend(_rotation_samples(
                    erp, dirs, (yaw_off, pitch_off), face_size, sigma,
                    f"odi{odi_idx}"))
    return samples


def _rotation_samples(erp: EquirectImage, fix_dirs: np.ndarray,
                      rotation: Tuple[float, float], face_size: int,
                      sigma: float, source_id: str) -> List[Sample]:
    faces = cube_faces(erp, rotation, size=face_size)
    r_off = rotation_matrix(rotation[0], rotation[1], 0.0)
    axes = np.stack([r_off @ rotation_matrix(*FACE_ANGLES[name], 0.0)[:, 0]
                     for name in FACE_NAMES])
    owner = (axes @ fix_dirs).argmax(axis=0) if fix_dirs.shape[1] else \
        np.zeros(0, dtype=int)
    out: List[Sample] = []
    for face_idx, face in enumerate(faces):
        mine = fix_dirs[:, owner == face_idx]
        if mine.shape[1] == 0:
            continue
        coords, inside = project_directions(face.view, mine)
        coords = coords[:, inside]
        if coords.shape[1] == 0:
            continue
        xs = np.clip(np.rint(coords[0]).astype(int), 0, face_size - 1)
        ys = np.clip(np.rint(coords[1]).astype(int), 0, face_size - 1)
        fix = FixationMap(width=face_size, height=face_size,
                          points=list(zip(xs.tolist(), ys.tolist())))
        density = gaussian_density(fix, sigma)
        out.append(Sample(image=face.pixels, gt_density=density,
                          gt_fixations=fix, source_id=source_id))
    return out


def split_dataset(samples: Sequence[Sample],
                  val_fraction: float = 0.25
                  ) -> Tuple[List[Sample], List[Sample]]:
    """Train/validation split by stable hash of the source panorama id,
    so augmented views of one panorama never straddle the split."""
    train: List[Sample] = []
    val: List[Sample] = []
    cutoff = int(val_fraction * 256)
    for s in samples:
        digest = hashlib.md5(s.source_id.encode("utf-8")).digest()
        (val if digest[0] < cutoff else train).append(s)
    return train, val


# -- synthetic desk-scale data -------------------------------------------------

def make_synthetic_sample(rng: np.random.Generator, size: int = 8,
                          n_fixations: int = 3,
                          source_id: str = "") -> Sample:
    """A blob image whose brightness is the thing to predict: fixations
    are drawn from the blob density, so saliency is learnable."""
    yy, xx = np.mgrid[0:size, 0:size]
    density = np.zeros((size, size))
    image = rng.uniform(0.0, 0.15, size=(3, size, size))
    for _ in range(rng.integers(1, 3)):
        cx, cy = rng.uniform(1, size - 1, size=2)
        s = rng.uniform(size / 8, size / 4)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
        density += blob
        color = rng.uniform(0.5, 1.0, size=3)
        image += color[:, None, None] * blob
    image = np.clip(image, 0.0, 1.0)
    p = (density / density.sum()).ravel()
    idx = rng.choice(size * size, size=n_fixations, p=p)
    points = [(int(i % size), int(i // size)) for i in idx]
    fix = FixationMap(width=size, height=size, points=points)
    return Sample(image=image, gt_density=SaliencyMap(density / density.sum()),
                  gt_fixations=fix, source_id=source_id)


def make_synthetic_samples(n: int, size: int = 8, seed: int = 0,
                           n_fixations: int = 3) -> List[Sample]:
    rng = np.random.default_rng(seed)
    return [make_synthetic_sample(rng, size, n_fixations, f"syn{i}")
            for i in range(n)]


def make_synthetic_odi(rng: np.random.Generator, width: int = 128,
                       n_fixations: int = 48
                       ) -> Tuple[EquirectImage, FixationMap]:
    """A smooth blob panorama with fixations scattered over the whole
    sphere (area-weighted), so every cube face sees some ground truth."""
    height = width // 2
    lam = np.radians((np.arange(width) + 0.5) / width * 360.0 - 180.0)
    phi = np.radians(90.0 - (np.arange(height) + 0.5) / height * 180.0)
    lam, phi = np.meshgrid(lam, phi)
    image = np.zeros((3, height, width))
    for c in range(3):
        a, b, ph = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), \
            rng.uniform(0, 2 * np.pi)
        image[c] = 0.5 + 0.4 * np.sin(a * lam + ph) * np.cos(b * phi)
    image = np.clip(image, 0.0, 1.0)
    # area-weighted uniform sphere sampling keeps pole faces populated
    weights = np.cos(phi).ravel()
    idx = rng.choice(width * height, size=n_fixations,
                     p=weights / weights.sum())
    points = [(int(i % width), int(i // width)) for i in idx]
    fix = FixationMap(width=width, height=height, points=points)
    return EquirectImage(image), fix


def make_synthetic_odis(n: int, width: int = 128, n_fixations: int = 48,
                        seed: int = 0
                        ) -> List[Tuple[EquirectImage, FixationMap]]:
    rng = np.random.default_rng(seed)
    return [make_synthetic_odi(rng, width, n_fixations) for _ in range(n)]
