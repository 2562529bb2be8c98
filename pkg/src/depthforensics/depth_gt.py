"""Ground-truth depth construction for supervision.

A depth oracle produces an 8-bit face depth map (background exactly 0). For a
sample with a binary fake-region mask, the supervision target zeroes the fake
region and lifts everything else by a positive offset ``lam`` (clamped to 255),
so fake (0), background (``lam``) and real-face (> ``lam``) pixels are well
separated. Targets are then reduced to per-patch means and normalized to [0, 1].
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation, DataFormatError

DEPTH_MAX = 255
GT_FILE_VERSION = 1


def clamp_overflow(v):
    """Clamp depth values to the 8-bit ceiling; negative input is a contract error."""
    arr = np.asarray(v)
    if np.any(arr < 0):
        raise ContractViolation("depth values must be non-negative")
    clamped = np.minimum(arr, DEPTH_MAX)
    return clamped if isinstance(v, np.ndarray) else clamped.item()


def compose_gt_depth(depth, mask, lam):
    """Combine an oracle depth map and a fake mask into the supervision map.

    Fake pixels go to 0; all others get ``depth + lam`` clamped to 255.
    """
    depth = np.asarray(depth)
    mask = np.asarray(mask)
    if depth.shape != mask.shape:
        raise ContractViolation(f"depth {depth.shape} and mask {mask.shape} differ in shape")
    if not np.issubdtype(lam_dtype := np.asarray(lam).dtype, np.integer) or lam <= 0:
        raise ContractViolation(f"lambda must be a positive integer, got {lam!r} ({lam_dtype})")
    if np.any((mask != 0) & (mask != 1)):
        raise ContractViolation("mask must be strictly binary")
    if np.any(depth < 0) or np.any(depth > DEPTH_MAX):
        raise ContractViolation("depth values must lie in [0, 255]")
    lifted = np.minimum(depth.astype(np.int64) + int(lam), DEPTH_MAX)
    return np.where(mask == 1, 0, lifted)


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping tiling of an image into a square grid of patches."""

    image_h: int
    image_w: int
    patches_per_side: int

    def __post_init__(self):
        n = self.patches_per_side
        if n <= 0:
            raise ContractViolation("patches_per_side must be positive")
        if self.image_h % n != 0 or self.image_w % n != 0:
            raise ContractViolation(
                f"image {self.image_h}x{self.image_w} not divisible into {n}x{n} patches"
            )

    @property
    def patch_h(self):
        return self.image_h // self.patches_per_side

    @property
    def patch_w(self):
        return self.image_w // self.patches_per_side

    @property
    def patch_count(self):
        return self.patches_per_side**2

    def patch_bounds(self):
        """Row-major list of (y0, y1, x0, x1) pixel bounds, one per patch."""
        ph, pw = self.patch_h, self.patch_w
        return [
            (r * ph, (r + 1) * ph, c * pw, (c + 1) * pw)
            for r in range(self.patches_per_side)
            for c in range(self.patches_per_side)
        ]


def patch_average(gt, grid):
    """Mean depth per patch, row-major, in the original [0, 255] scale."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != (grid.image_h, grid.image_w):
        raise ContractViolation(f"map shape {gt.shape} does not match grid {grid}")
    n, ph, pw = grid.patches_per_side, grid.patch_h, grid.patch_w
    return gt.reshape(n, ph, n, pw).mean(axis=(1, 3)).ravel()


def normalize_patch_depth(v):
    """Scale [0, 255] patch means to the [0, 1] training range."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or np.any(v > DEPTH_MAX):
        raise ContractViolation("patch depth entries must lie in [0, 255]")
    return v / DEPTH_MAX


def denormalize_patch_depth(v):
    return np.asarray(v, dtype=np.float64) * DEPTH_MAX


def synthetic_face_depth(image_h, image_w, center, axes, peak):
    """Procedural stand-in for a face depth estimator.

    Renders a smooth elliptical dome: ``peak * sqrt(1 - r^2)`` inside the
    ellipse (apex exactly ``peak`` at the center pixel), exactly 0 outside.
    Depth decreases monotonically along any ray from the center.
    """
    cy, cx = center
    ay, ax = axes
    if ay <= 0 or ax <= 0:
        raise ContractViolation(f"degenerate ellipse axes {axes}")
    if not (0 < peak <= DEPTH_MAX):
        raise ContractViolation(f"peak must lie in (0, 255], got {peak}")
    if cy - ay < 0 or cy + ay > image_h - 1 or cx - ax < 0 or cx + ax > image_w - 1:
        raise ContractViolation("ellipse does not fit inside the image")
    yy, xx = np.mgrid[0:image_h, 0:image_w]
    r2 = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2
    dome = peak * np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
    return np.rint(np.where(r2 < 1.0, dome, 0.0)).astype(np.int64)


@dataclass(frozen=True)
class GtRecord:
    """One serialized supervision target: id, offset, grid dims, patch values."""

    sample_id: str
    lam: int
    grid_h: int
    grid_w: int
    values: np.ndarray  # float32, length grid_h * grid_w, in [0, 1]


def write_gt_records(path, records, provenance):
    """Write patch-depth targets as little-endian binary plus a JSON sidecar."""
    blob = bytearray()
    for rec in records:
        values = np.asarray(rec.values, dtype="<f4")
        if values.size != rec.grid_h * rec.grid_w:
            raise ContractViolation(
                f"record {rec.sample_id}: {values.size} values for a "
                f"{rec.grid_h}x{rec.grid_w} grid"
            )
        ident = rec.sample_id.encode("utf-8")
        blob += struct.pack("<H", len(ident)) + ident
        blob += struct.pack("<HHH", rec.lam, rec.grid_h, rec.grid_w)
        blob += values.tobytes()
    path = str(path)
    with open(path, "wb") as f:
        f.write(bytes(blob))
    sidecar = {
        "format_version": GT_FILE_VERSION,
        "record_count": len(records),
        **provenance,
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def read_gt_records(path):
    """Inverse of :func:`write_gt_records`; returns (records, sidecar dict)."""
    path = str(path)
    try:
        with open(path + ".json") as f:
            sidecar = json.load(f)
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError as e:
        raise DataFormatError(f"missing ground-truth file: {e.filename}") from e
    if sidecar.get("format_version") != GT_FILE_VERSION:
        raise DataFormatError(
            f"unsupported ground-truth format version {sidecar.get('format_version')}"
        )
    records = []
    offset = 0
    try:
        for _ in range(sidecar["record_count"]):
            (id_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            ident = blob[offset : offset + id_len].decode("utf-8")
            offset += id_len
            lam, gh, gw = struct.unpack_from("<HHH", blob, offset)
            offset += 6
            count = gh * gw
            if offset + 4 * count > len(blob):
                raise DataFormatError("truncated ground-truth record")
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).copy()
            offset += 4 * count
            records.append(GtRecord(ident, lam, gh, gw, values))
    except (struct.error, UnicodeDecodeError) as e:
        raise DataFormatError(f"corrupt ground-truth file: {e}") from e
    if offset != len(blob):
        raise DataFormatError(f"{len(blob) - offset} trailing bytes in ground-truth file")
    return records, sidecar
