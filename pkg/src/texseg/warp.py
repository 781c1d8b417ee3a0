"""Geometric transform bank and homography block warping.

Every transform is a 3x3 homography in block pixel coordinates, where pixel
centres run from 0 to ``block_size - 1`` and rotation/scale act about the
block centre ``(block_size - 1) / 2``. Angles are counter-clockwise as seen
on screen (y axis pointing down).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyScaleSet, InvalidSpec, InvalidStep, OutOfBounds, SingularHomography
from .raster import Rect

KINDS = ("identity", "mirror_h", "mirror_v", "rotation", "scale", "rotation_scale", "perspective")
DIRECTIONS = ("above", "below", "left", "right")
MAX_BEND = 0.35

DEFAULT_ROTATION_STEP = 5.0
DEFAULT_SCALES = (0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
DEFAULT_BENDS = (0.08, 0.16)
COARSE_ROTATION_STEP = 45.0


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "identity"
    angle: float = 0.0
    scale: float = 1.0
    bend_direction: str = "none"
    bend_strength: float = 0.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown transform kind {self.kind!r}")
        if not (math.isfinite(self.angle) and math.isfinite(self.scale) and self.scale > 0):
            raise InvalidSpec(f"bad angle/scale in {self}")
        if self.kind == "perspective":
            if self.bend_direction not in DIRECTIONS:
                raise InvalidSpec(f"perspective needs a bend direction, got {self.bend_direction!r}")
            if not 0.0 <= self.bend_strength <= MAX_BEND:
                raise InvalidSpec(f"bend strength {self.bend_strength} outside [0, {MAX_BEND}]")
        elif self.bend_strength != 0.0 or self.bend_direction != "none":
            raise InvalidSpec(f"bend given for non-perspective kind {self.kind!r}")

    def to_text(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "mirror_h":
            return "mirror=h"
        if self.kind == "mirror_v":
            return "mirror=v"
        text = f"rot={self.angle:g} scale={self.scale:g}"
        if self.kind == "perspective":
            text += f" bend={self.bend_direction}:{self.bend_strength:g}"
        return text

    @classmethod
    def from_text(cls, text: str) -> "TransformSpec":
        text = text.strip()
        if text == "identity":
            return cls()
        if text == "mirror=h":
            return cls("mirror_h")
        if text == "mirror=v":
            return cls("mirror_v")
        fields = dict(tok.split("=", 1) for tok in text.split())
        angle = float(fields.get("rot", 0))
        scale = float(fields.get("scale", 1))
        if "bend" in fields:
            direction, strength = fields["bend"].split(":")
            return cls("perspective", angle, scale, direction, float(strength))
        return cls(_affine_kind(angle, scale), angle, scale)

    def __str__(self) -> str:
        return self.to_text()


def _affine_kind(angle: float, scale: float) -> str:
    if scale == 1.0:
        return "rotation" if angle % 360 else "identity"
    return "rotation_scale" if angle % 360 else "scale"


def _translate(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def rotation_scale_matrix(angle: float, scale: float, block_size: int) -> np.ndarray:
    c = (block_size - 1) / 2.0
    t = math.radians(angle)
    ca, sa = math.cos(t), math.sin(t)
    # exact quarter turns keep 90-degree warps free of rounding noise
    if angle % 90 == 0:
        ca, sa = round(ca), round(sa)
    m = np.array([[scale * ca, scale * sa, 0.0], [-scale * sa, scale * ca, 0.0], [0.0, 0.0, 1.0]])
    return _translate(c, c) @ m @ _translate(-c, -c)


def four_point_homography(src_pts, dst_pts) -> np.ndarray:
    """Solve the 8-DOF homography taking four source points to four targets."""
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src_pts, dst_pts)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i] = u
        rhs[2 * i + 1] = v
    sol = np.linalg.solve(a, rhs)
    return np.append(sol, 1.0).reshape(3, 3)


def bend_matrix(direction: str, strength: float, block_size: int) -> np.ndarray:
    n = block_size - 1
    d = strength * block_size
    corners = [(0.0, 0.0), (n, 0.0), (0.0, n), (n, n)]
    if direction == "above":
        target = [(d, 0.0), (n - d, 0.0), (0.0, n), (n, n)]
    elif direction == "below":
        target = [(0.0, 0.0), (n, 0.0), (d, n), (n - d, n)]
    elif direction == "left":
        target = [(0.0, d), (n, 0.0), (0.0, n - d), (n, n)]
    elif direction == "right":
        target = [(0.0, 0.0), (n, d), (0.0, n), (n, n - d)]
    else:
        raise InvalidSpec(f"unknown bend direction {direction!r}")
    return four_point_homography(corners, target)


def homography_from_spec(spec: TransformSpec, block_size: int) -> np.ndarray:
    spec.validate()
    if block_size < 2:
        raise InvalidSpec(f"block size must be >= 2, got {block_size}")
    n = block_size - 1
    if spec.kind == "identity":
        return np.eye(3)
    if spec.kind == "mirror_h":
        return np.array([[-1.0, 0.0, n], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    if spec.kind == "mirror_v":
        return np.array([[1.0, 0.0, 0.0], [0.0, -1.0, n], [0.0, 0.0, 1.0]])
    h = rotation_scale_matrix(spec.angle, spec.scale, block_size)
    if spec.kind == "perspective":
        h = bend_matrix(spec.bend_direction, spec.bend_strength, block_size) @ h
    return normalize(h)


def normalize(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h[2, 2] == 0:
        raise SingularHomography("h[2,2] is zero")
    return h / h[2, 2]


def is_affine(h: np.ndarray) -> bool:
    return bool(h[2, 0] == 0.0 and h[2, 1] == 0.0 and h[2, 2] == 1.0)


def apply_homography(h: np.ndarray, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    hom = np.c_[pts, np.ones(len(pts))] @ h.T
    return hom[:, :2] / hom[:, 2:3]


def recenter(h: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Express a block-frame homography in a frame shifted by (dx, dy)."""
    return _translate(dx, dy) @ h @ _translate(-dx, -dy)


def _inverse(h: np.ndarray) -> np.ndarray:
    if abs(np.linalg.det(h)) < 1e-12:
        raise SingularHomography("homography is not invertible")
    return np.linalg.inv(h)


def warp_block(img: np.ndarray, src: Rect, h: np.ndarray) -> np.ndarray:
    """Inverse-mapped bilinear warp of the ``src`` window of ``img``.

    ``output(x, y) = block(h^-1 (x, y, 1))`` in block-local coordinates; samples
    falling outside the window are edge-replicated from within it. uint8
    input yields uint8 output (rounded), anything else float64.
    """
    hinv = np.ascontiguousarray(_inverse(np.asarray(h, dtype=np.float64)))
    block = img[src.slices()]
    if block.shape[0] != src.h or block.shape[1] != src.w:
        raise OutOfBounds(f"{src} outside image {img.shape[1]}x{img.shape[0]}")
    if block.ndim == 3:
        out = np.stack([kernels.warp_bilinear(np.ascontiguousarray(block[..., ch], dtype=np.float64),
                                              hinv, src.h, src.w)
                        for ch in range(block.shape[2])], axis=2)
    else:
        out = kernels.warp_bilinear(np.ascontiguousarray(block, dtype=np.float64), hinv, src.h, src.w)
    if img.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def generate_transform_bank(rotation_step: float = DEFAULT_ROTATION_STEP,
                            scale_set=DEFAULT_SCALES,
                            bend_strengths=DEFAULT_BENDS,
                            coarse_step: float = COARSE_ROTATION_STEP) -> list[TransformSpec]:
    """Ordered transform bank: mirrors, then rotations x scales, then bends.

    Rotation angles are ``k * rotation_step`` for ``k = 1 .. 360/step - 1``;
    perspective bends are combined with ``coarse_step`` rotations (including
    0) and every scale.
    """
    if not rotation_step > 0 or abs(360.0 / rotation_step - round(360.0 / rotation_step)) > 1e-9:
        raise InvalidStep(f"rotation step {rotation_step} does not divide 360")
    if not coarse_step > 0 or abs(360.0 / coarse_step - round(360.0 / coarse_step)) > 1e-9:
        raise InvalidStep(f"coarse rotation step {coarse_step} does not divide 360")
    scales = list(dict.fromkeys(float(s) for s in scale_set))
    if not scales:
        raise EmptyScaleSet("scale set is empty")
    bank = [TransformSpec("identity"), TransformSpec("mirror_h"), TransformSpec("mirror_v")]
    n_rot = int(round(360.0 / rotation_step))
    for k in range(1, n_rot):
        angle = k * rotation_step
        for s in scales:
            bank.append(TransformSpec("rotation" if s == 1.0 else "rotation_scale", angle, s))
    n_coarse = int(round(360.0 / coarse_step))
    for direction in DIRECTIONS:
        for b in dict.fromkeys(float(b) for b in bend_strengths):
            for k in range(n_coarse):
                for s in scales:
                    bank.append(TransformSpec("perspective", k * coarse_step, s, direction, b))
    for spec in bank:
        spec.validate()
    return bank


def split_bank(bank: list[TransformSpec]) -> tuple[list[int], list[int], list[int]]:
    """Bank indices for the three search rounds."""
    r1 = [i for i, t in enumerate(bank) if t.kind in ("identity", "mirror_h", "mirror_v")]
    r3 = [i for i, t in enumerate(bank) if t.kind == "perspective"]
    r2 = [i for i, t in enumerate(bank) if i not in set(r1) | set(r3)]
    return r1, r2, r3
