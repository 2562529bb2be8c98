"""Procedural real/fake face-like samples with masks and depth supervision.

A "face" is an elliptical dome rendered with depth-consistent shading
(directional light on the dome's surface normals plus a height term) over a
textured background. A fake sample re-renders one interior region from a
*different* dome with the same palette, photometrically matched to the pixels
it replaces and feather-blended at the boundary, so the manipulation is
locally plausible but inconsistent with the global shape. The binary mask of
that region drives the ground-truth depth composition.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .depth_gt import compose_gt_depth, synthetic_face_depth
from .exceptions import ContractViolation, DataFormatError

GENERATOR_VERSION = 1
MANIFEST_VERSION = 1

REAL, FAKE = 0, 1
QUALITY_LEVELS = ("high", "low")


@dataclass(frozen=True)
class SynthProfile:
    """Geometry and photometric ranges for the generator."""

    image_size: int = 224
    lam: int = 50
    center_jitter: float = 0.04  # fraction of image size
    axis_range: tuple = (0.32, 0.42)  # fraction of image size
    peak_range: tuple = (140, 200)
    light_z_range: tuple = (0.6, 0.85)
    ambient_range: tuple = (0.25, 0.35)
    diffuse_range: tuple = (0.45, 0.60)
    height_coef_range: tuple = (0.10, 0.20)
    noise_std: float = 0.02
    grain_amp: float = 0.18  # multiplicative skin-grain contrast
    fake_grain_sigma: float = 1.4  # grain correlation length inside fakes
    fake_area_range: tuple = (0.05, 0.25)  # fraction of face area
    feather_sigma: float = 0.8
    alt_light_min_angle: float = 1.0  # radians between scene and region light
    fake_shade_offset: tuple = (0.08, 0.22)  # |brightness offset|, sign random
    match_mean: bool = True  # match region means to the replaced pixels
    match_std: bool = False  # also match standard deviations (hides more)


def mini_profile(**overrides):
    """Small, fast profile for CI and the acceptance runs."""
    defaults = dict(image_size=32, feather_sigma=0.5)
    defaults.update(overrides)
    return SynthProfile(**defaults)


@dataclass
class SampleRecord:
    sample_id: str
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    mask: np.ndarray  # (H, W) uint8, binary
    depth: np.ndarray  # (H, W) int64 ground-truth depth in [0, 255]
    label: int  # REAL or FAKE
    seed: int
    quality: str

    def equals(self, other):
        return (
            self.sample_id == other.sample_id
            and self.label == other.label
            and self.seed == other.seed
            and self.quality == other.quality
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.depth, other.depth)
        )


def _unit_light(rng, profile):
    lz = rng.uniform(*profile.light_z_range)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    r = np.sqrt(1.0 - lz * lz)
    return np.array([r * np.cos(theta), r * np.sin(theta), lz])


def _dome(image_size, center, axes, peak):
    """Float dome without fit validation (rendering helper)."""
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    r2 = ((yy - center[0]) / axes[0]) ** 2 + ((xx - center[1]) / axes[1]) ** 2
    return np.where(r2 < 1.0, peak * np.sqrt(np.clip(1.0 - r2, 0.0, 1.0)), 0.0)


def _shade(depth, light, ambient, diffuse, height_coef, image_size):
    """Per-pixel shading consistent with a depth surface."""
    z = depth / 255.0
    gy, gx = np.gradient(z)
    steep = 0.5 * image_size
    norm = np.sqrt((steep * gx) ** 2 + (steep * gy) ** 2 + 1.0)
    ndotl = (-steep * gx * light[0] - steep * gy * light[1] + light[2]) / norm
    return ambient + diffuse * np.clip(ndotl, 0.0, 1.0) + height_coef * z


def _draw_geometry(rng, profile):
    size = profile.image_size
    jitter = profile.center_jitter * size
    cy = size / 2.0 + rng.uniform(-jitter, jitter)
    cx = size / 2.0 + rng.uniform(-jitter, jitter)
    lo, hi = profile.axis_range
    ay = rng.uniform(lo, hi) * size
    ax = rng.uniform(lo, hi) * size
    # keep the ellipse inside the frame
    ay = min(ay, cy, size - 1 - cy)
    ax = min(ax, cx, size - 1 - cx)
    peak = int(rng.integers(profile.peak_range[0], profile.peak_range[1] + 1))
    return (cy, cx), (ay, ax), peak


def _grain(rng, size, amp, sigma=0.0):
    """Unit-amplitude multiplicative skin grain; ``sigma`` sets correlation length."""
    g = rng.standard_normal((size, size))
    if sigma > 0:
        g = gaussian_filter(g, sigma=sigma)
        g = g / max(g.std(), 1e-9)
    return 1.0 + amp * g


def _render_scene(rng, profile):
    """Draw one full scene; returns (image, oracle_depth, params)."""
    size = profile.image_size
    center, axes, peak = _draw_geometry(rng, profile)
    depth = synthetic_face_depth(size, size, center, axes, peak)
    light = _unit_light(rng, profile)
    ambient = rng.uniform(*profile.ambient_range)
    diffuse = rng.uniform(*profile.diffuse_range)
    height_coef = rng.uniform(*profile.height_coef_range)
    skin = np.array(
        [rng.uniform(0.75, 0.90), rng.uniform(0.55, 0.70), rng.uniform(0.42, 0.58)]
    )
    shade = _shade(depth.astype(np.float64), light, ambient, diffuse, height_coef, size)
    shade = shade * _grain(rng, size, profile.grain_amp)
    face = shade[:, :, None] * skin[None, None, :]

    bg_level = rng.uniform(0.08, 0.30)
    bg_dir = rng.uniform(0.0, 2.0 * np.pi)
    bg_amp = rng.uniform(0.0, 0.15)
    yy, xx = np.mgrid[0:size, 0:size]
    ramp = (np.cos(bg_dir) * xx + np.sin(bg_dir) * yy) / size
    bg = (bg_level + bg_amp * ramp)[:, :, None] * np.ones(3)[None, None, :]

    face_region = depth > 0
    image = np.where(face_region[:, :, None], face, bg)
    params = {
        "center": center,
        "axes": axes,
        "peak": peak,
        "light": light,
        "ambient": ambient,
        "diffuse": diffuse,
        "height_coef": height_coef,
        "skin": skin,
    }
    return image, depth, params


def _fake_region_mask(rng, depth, axes, center, profile):
    """Binary interior region (ellipse or rectangle) covering 5-25% of the face."""
    size = depth.shape[0]
    face_area = float(np.count_nonzero(depth > 0))
    for _ in range(64):
        frac = rng.uniform(*profile.fake_area_range)
        target = frac * face_area
        off_y = rng.uniform(-0.45, 0.45) * axes[0]
        off_x = rng.uniform(-0.45, 0.45) * axes[1]
        ry_cy, ry_cx = center[0] + off_y, center[1] + off_x
        aspect = rng.uniform(0.6, 1.6)
        shape_kind = rng.choice(["ellipse", "rectangle"])
        yy, xx = np.mgrid[0:size, 0:size]
        if shape_kind == "ellipse":
            ry = np.sqrt(target * aspect / np.pi)
            rx = target / (np.pi * ry)
            region = ((yy - ry_cy) / max(ry, 1.0)) ** 2 + ((xx - ry_cx) / max(rx, 1.0)) ** 2 <= 1.0
        else:
            hy = np.sqrt(target * aspect) / 2.0
            hx = target / (4.0 * hy) if hy > 0 else 1.0
            region = (np.abs(yy - ry_cy) <= max(hy, 1.0)) & (np.abs(xx - ry_cx) <= max(hx, 1.0))
        mask = (region & (depth > 0)).astype(np.uint8)
        if mask.sum() >= max(4, 0.5 * target):
            return mask
    raise ContractViolation("could not place a fake region inside the face")


def quantize(image, levels):
    """Uniform quantization to ``levels`` values in [0, 1]; exactly idempotent."""
    if levels < 2:
        raise ContractViolation("need at least two quantization levels")
    return np.rint(image * (levels - 1)) / (levels - 1)


DEGRADE_PARAMS = {"high": (0.2, 128), "low": (1.0, 32)}


def degrade_quality(image, level):
    """Blur plus uniform quantization at a named strength; image-only, deterministic."""
    if level not in DEGRADE_PARAMS:
        raise ContractViolation(f"unknown quality level {level!r}")
    sigma, levels = DEGRADE_PARAMS[level]
    blurred = gaussian_filter(np.asarray(image, dtype=np.float64), sigma=(sigma, sigma, 0.0))
    return quantize(np.clip(blurred, 0.0, 1.0), levels)


def _finalize(image, rng, profile, quality):
    noise = rng.normal(0.0, profile.noise_std, size=image.shape)
    image = np.clip(image + noise, 0.0, 1.0)
    return degrade_quality(image, quality)


def generate_real_sample(seed, profile=SynthProfile(), quality="high", sample_id=None):
    """Depth-consistent scene, all-zero mask, label REAL."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    image, depth, _ = _render_scene(rng, profile)
    image = _finalize(image, rng, profile, quality)
    mask = np.zeros(depth.shape, dtype=np.uint8)
    gt = compose_gt_depth(depth, mask, profile.lam)
    return SampleRecord(
        sample_id=sample_id or f"real-{seed:010d}",
        image=image,
        mask=mask,
        depth=gt,
        label=REAL,
        seed=seed,
        quality=quality,
    )


def generate_fake_sample(seed, profile=SynthProfile(), quality="high", sample_id=None):
    """Real scene with one interior region re-rendered from a different dome."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    image, depth, params = _render_scene(rng, profile)
    size = profile.image_size
    mask = _fake_region_mask(rng, depth, params["axes"], params["center"], profile)

    # alternative geometry and light: same palette, inconsistent shape/shading
    alt_center = (
        params["center"][0] + rng.uniform(-0.5, 0.5) * params["axes"][0],
        params["center"][1] + rng.uniform(-0.5, 0.5) * params["axes"][1],
    )
    alt_axes = (
        params["axes"][0] * rng.uniform(0.7, 1.3),
        params["axes"][1] * rng.uniform(0.7, 1.3),
    )
    alt_peak = float(np.clip(params["peak"] * rng.uniform(0.6, 1.4), 100, 230))
    alt_depth = _dome(size, alt_center, alt_axes, alt_peak)
    light = params["light"]
    delta = rng.uniform(profile.alt_light_min_angle, 2.0 * np.pi - profile.alt_light_min_angle)
    azimuth = np.arctan2(light[1], light[0]) + delta
    planar = np.hypot(light[0], light[1])
    alt_light = np.array([planar * np.cos(azimuth), planar * np.sin(azimuth), light[2]])
    alt_shade = _shade(
        alt_depth, alt_light, params["ambient"], params["diffuse"],
        params["height_coef"], size,
    )
    # manipulated texture lacks the fine grain of the pristine surface
    alt_shade = alt_shade * _grain(rng, size, profile.grain_amp, sigma=profile.fake_grain_sigma)
    alt_face = alt_shade[:, :, None] * params["skin"][None, None, :]

    region = mask.astype(bool)
    if profile.match_mean:
        for ch in range(3):
            src = alt_face[:, :, ch][region]
            dst = image[:, :, ch][region]
            if profile.match_std:
                scale = np.clip(dst.std() / max(src.std(), 1e-6), 0.2, 5.0)
                alt_face[:, :, ch] = (alt_face[:, :, ch] - src.mean()) * scale + dst.mean()
            else:
                alt_face[:, :, ch] = alt_face[:, :, ch] - src.mean() + dst.mean()
    # shading level inconsistent with the region's position on the face
    offset = rng.uniform(*profile.fake_shade_offset) * rng.choice([-1.0, 1.0])
    alt_face = alt_face + offset

    blend = gaussian_filter(mask.astype(np.float64), sigma=profile.feather_sigma)
    blend = np.clip(blend / max(blend.max(), 1e-9), 0.0, 1.0)[:, :, None]
    image = image * (1.0 - blend) + alt_face * blend

    image = _finalize(image, rng, profile, quality)
    gt = compose_gt_depth(depth, mask, profile.lam)
    return SampleRecord(
        sample_id=sample_id or f"fake-{seed:010d}",
        image=image,
        mask=mask,
        depth=gt,
        label=FAKE,
        seed=seed,
        quality=quality,
    )


@dataclass
class DatasetManifest:
    format_version: int
    generator_version: int
    global_seed: int
    count: int
    fake_ratio: float
    quality: str
    profile: dict
    splits: dict  # split name -> ordered list of sample ids
    checksums: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


DEFAULT_SPLIT_FRACTIONS = {"train": 0.7, "val": 0.15, "test": 0.15}


def make_dataset(
    count,
    global_seed,
    profile=SynthProfile(),
    quality="high",
    fake_ratio=0.5,
    split_fractions=None,
):
    """Generate a labeled dataset; fully reproducible from (version, seed).

    Returns (manifest, records) with records keyed by sample id in
    manifest.splits order.
    """
    if quality not in QUALITY_LEVELS:
        raise ContractViolation(f"unknown quality level {quality!r}")
    if count < 2:
        raise ContractViolation("need at least two samples")
    fractions = split_fractions or DEFAULT_SPLIT_FRACTIONS
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise ContractViolation("split fractions must sum to 1")

    n_fake = int(round(count * fake_ratio))
    labels = np.array([FAKE] * n_fake + [REAL] * (count - n_fake))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[global_seed, 0xD5]))
    rng.shuffle(labels)

    records = {}
    ids = []
    for index, label in enumerate(labels):
        seed_seq = np.random.SeedSequence(entropy=[global_seed, GENERATOR_VERSION, index])
        record_seed = int(seed_seq.generate_state(1)[0])
        kind = "fake" if label == FAKE else "real"
        sample_id = f"{kind}-{index:06d}"
        gen = generate_fake_sample if label == FAKE else generate_real_sample
        records[sample_id] = gen(record_seed, profile, quality, sample_id=sample_id)
        ids.append(sample_id)

    order = rng.permutation(count)
    splits = {}
    start = 0
    names = list(fractions)
    for i, name in enumerate(names):
        stop = count if i == len(names) - 1 else start + int(round(fractions[name] * count))
        splits[name] = [ids[j] for j in order[start:stop]]
        start = stop

    manifest = DatasetManifest(
        format_version=MANIFEST_VERSION,
        generator_version=GENERATOR_VERSION,
        global_seed=global_seed,
        count=count,
        fake_ratio=fake_ratio,
        quality=quality,
        profile=asdict(profile),
        splits=splits,
    )
    return manifest, records


_BLOBS = ("images", "masks", "depths", "labels", "seeds")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(root, manifest, records):
    """One directory per split: tensor blobs plus a checksummed JSON manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest.checksums = {}
    for split, ids in manifest.splits.items():
        split_dir = root / split
        split_dir.mkdir(exist_ok=True)
        recs = [records[i] for i in ids]
        blobs = {
            "images": np.stack([r.image for r in recs]) if recs else np.zeros((0,)),
            "masks": np.stack([r.mask for r in recs]) if recs else np.zeros((0,)),
            "depths": np.stack([r.depth for r in recs]) if recs else np.zeros((0,)),
            "labels": np.array([r.label for r in recs], dtype=np.uint8),
            "seeds": np.array([r.seed for r in recs], dtype=np.uint64),
        }
        for name, arr in blobs.items():
            path = split_dir / f"{name}.npy"
            np.save(path, arr)
            manifest.checksums[f"{split}/{name}.npy"] = _sha256(path)
    with open(root / "manifest.json", "w") as f:
        f.write(manifest.to_json())


def read_dataset(root):
    """Load and verify a dataset directory; returns (manifest, records_by_split)."""
    root = Path(root)
    try:
        with open(root / "manifest.json") as f:
            manifest = DatasetManifest.from_dict(json.load(f))
    except FileNotFoundError as e:
        raise DataFormatError(f"missing dataset manifest under {root}") from e
    if manifest.format_version != MANIFEST_VERSION:
        raise DataFormatError(f"unsupported dataset version {manifest.format_version}")
    by_split = {}
    for split, ids in manifest.splits.items():
        arrays = {}
        for name in _BLOBS:
            rel = f"{split}/{name}.npy"
            path = root / rel
            if not path.exists():
                raise DataFormatError(f"missing blob {rel}")
            if _sha256(path) != manifest.checksums.get(rel):
                raise DataFormatError(f"checksum mismatch for {rel}")
            arrays[name] = np.load(path)
        records = [
            SampleRecord(
                sample_id=ids[i],
                image=arrays["images"][i],
                mask=arrays["masks"][i],
                depth=arrays["depths"][i],
                label=int(arrays["labels"][i]),
                seed=int(arrays["seeds"][i]),
                quality=manifest.quality,
            )
            for i in range(len(ids))
        ]
        by_split[split] = records
    return manifest, by_split
