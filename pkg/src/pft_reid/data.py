"""Synthetic occluded-identity data, augmentations, and zero-dependency image IO.

The generator draws a person-like figure (head, textured torso band, leg
band) whose colors and texture are a deterministic function of the identity,
with per-variant pose jitter and photometric noise and, half the time, an
occluding rectangle over part of the figure. That keeps identities separable
(retrieval is learnable) while exercising the occlusion machinery, and no
external dataset is needed.

Interchange formats are binary PPM (P6) / PGM (P5) and a CSV manifest with
header ``path,person_id,camera_id``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_HEADER = ["path", "person_id", "camera_id"]
_SKIN = np.array([0.87, 0.72, 0.55])


@dataclass
class DatasetRecord:
    """One image with its identity and camera labels."""

    image: np.ndarray  # [C, H, W] float64 in [0, 1]
    person_id: int
    camera_id: int


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated dataset: ids x variants, cameras interleaved."""

    seed: int = 7
    ids: int = 8
    variants_start: int = 0
    variants_stop: int = 16
    cams: int = 2
    height: int = 96
    width: int = 48


# ---- generation ----


def _camera_tint(seed, cam):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99991, cam]))
    return rng.uniform(0.9, 1.0, size=3)


def generate_identity(seed, person_id, variant, cam, height=96, width=48,
                      with_metadata=False):
    """Deterministically render one record for (seed, id, variant, cam).

    With ``with_metadata`` the return value is ``(record, meta)`` where
    ``meta["occluder"]`` is the (y0, y1, x0, x1) box of the occluding
    rectangle, or None when this draw is unoccluded.
    """
    id_rng = np.random.default_rng(np.random.SeedSequence([seed, person_id]))
    torso = id_rng.uniform(0.2, 0.95, size=3)
    legs = id_rng.uniform(0.2, 0.95, size=3)
    stripe_period = int(id_rng.integers(3, 9))
    stripe_gain = id_rng.uniform(0.1, 0.35)
    body_width_frac = id_rng.uniform(0.42, 0.58)

    var_rng = np.random.default_rng(np.random.SeedSequence([seed, person_id, variant, cam]))
    bg = var_rng.uniform(0.05, 0.35, size=3)
    dx = int(var_rng.integers(-3, 4))
    dy = int(var_rng.integers(-2, 3))
    brightness = var_rng.uniform(0.85, 1.15)
    noise_sigma = 0.02

    img = np.empty((3, height, width))
    img[:] = bg[:, None, None]
    column = np.linspace(-0.03, 0.03, width)
    img += column[None, None, :]

    half_w = max(2, int(round(body_width_frac * width / 2)))
    cx = width // 2 + dx
    x0, x1 = max(0, cx - half_w), min(width, cx + half_w)
    head_top = max(0, int(0.06 * height) + dy)
    torso_top = max(0, int(0.20 * height) + dy)
    legs_top = int(0.55 * height) + dy
    legs_bot = min(height, int(0.95 * height) + dy)

    hx0, hx1 = max(0, cx - half_w // 2), min(width, cx + half_w // 2)
    img[:, head_top:torso_top, hx0:hx1] = _SKIN[:, None, None]

    rows = np.arange(torso_top, legs_top)
    stripe = 1.0 + stripe_gain * (((rows // stripe_period) % 2) * 2.0 - 1.0)
    img[:, torso_top:legs_top, x0:x1] = torso[:, None, None] * stripe[None, :, None]

    leg_gap = max(1, (x1 - x0) // 5)
    gap0 = cx - leg_gap // 2
    img[:, legs_top:legs_bot, x0:x1] = legs[:, None, None]
    img[:, legs_top:legs_bot, max(0, gap0) : min(width, gap0 + leg_gap)] = bg[:, None, None]

    occluder = None
    if var_rng.random() < 0.5:
        frac = var_rng.uniform(0.2, 0.6)
        occ_color = var_rng.uniform(0.0, 1.0, size=3)
        fig_h = legs_bot - head_top
        if var_rng.random() < 0.5:  # from the bottom
            occ_top = max(0, legs_bot - max(1, int(round(frac * fig_h))))
            occluder = (occ_top, legs_bot, 0, width)
        else:  # from a side
            occ_w = max(1, int(round(frac * (x1 - x0))))
            if var_rng.random() < 0.5:
                occluder = (head_top, legs_bot, x0, min(width, x0 + occ_w))
            else:
                occluder = (head_top, legs_bot, max(0, x1 - occ_w), x1)
        y0, y1, ox0, ox1 = occluder
        img[:, y0:y1, ox0:ox1] = occ_color[:, None, None]

    img *= brightness
    img *= _camera_tint(seed, cam)[:, None, None]
    img += var_rng.normal(0.0, noise_sigma, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    record = DatasetRecord(image=img, person_id=int(person_id), camera_id=int(cam))
    if with_metadata:
        return record, {"occluder": occluder}
    return record


def make_synthetic_dataset(spec: SyntheticSpec):
    """All records of the spec; camera = variant modulo the camera count."""
    records = []
    for pid in range(spec.ids):
        for variant in range(spec.variants_start, spec.variants_stop):
            records.append(
                generate_identity(
                    spec.seed, pid, variant, variant % spec.cams, spec.height, spec.width
                )
            )
    return records


# ---- augmentation ----


@dataclass(frozen=True)
class AugmentFlags:
    flip: bool = True
    pad_crop: bool = True
    erase: bool = True


def hflip(image):
    return np.ascontiguousarray(image[:, :, ::-1])


def dataset_mean(records):
    """Per-channel mean over a record list (random-erasing fill value)."""
    total = np.zeros(3)
    count = 0
    for r in records:
        total += r.image.reshape(r.image.shape[0], -1).mean(axis=1)
        count += 1
    return total / max(count, 1)


def augment(record, rng, flags=AugmentFlags(), fill=None, pad=10):
    """Train-time pipeline: horizontal flip (p=0.5), zero-pad + random crop
    back to size, random erasing (p=0.5, 2-40% area, fill = dataset mean).

    With all flags off the record passes through bitwise unchanged.
    """
    if not (flags.flip or flags.pad_crop or flags.erase):
        return record
    img = record.image
    c, h, w = img.shape
    if flags.flip and rng.random() < 0.5:
        img = hflip(img)
    if flags.pad_crop:
        padded = np.zeros((c, h + 2 * pad, w + 2 * pad))
        padded[:, pad : pad + h, pad : pad + w] = img
        top = int(rng.integers(0, 2 * pad + 1))
        left = int(rng.integers(0, 2 * pad + 1))
        img = np.ascontiguousarray(padded[:, top : top + h, left : left + w])
    if flags.erase and rng.random() < 0.5:
        img = img.copy()
        fill_vec = np.zeros(c) if fill is None else np.asarray(fill, dtype=np.float64)
        for _ in range(20):
            area = rng.uniform(0.02, 0.4) * h * w
            aspect = rng.uniform(0.3, 3.3)
            eh = int(round(np.sqrt(area * aspect)))
            ew = int(round(np.sqrt(area / aspect)))
            if 0 < eh <= h and 0 < ew <= w:
                top = int(rng.integers(0, h - eh + 1))
                left = int(rng.integers(0, w - ew + 1))
                img[:, top : top + eh, left : left + ew] = fill_vec[:, None, None]
                break
    return replace(record, image=img)


# ---- PPM / PGM ----


def write_ppm(path, image):
    """Write a [3, H, W] float image in [0, 1] as binary 8-bit PPM (P6)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"write_ppm: expected [3, H, W], got shape {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[1], img.shape[2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.transpose(1, 2, 0).tobytes())


def _read_pnm_tokens(blob, count, path):
    """Header tokens after the magic; '#' comments run to end of line."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(blob):
            raise DataError(f"{path}: truncated header")
        ch = blob[i : i + 1]
        if ch == b"#":
            j = blob.find(b"\n", i)
            i = len(blob) if j < 0 else j + 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace():
                j += 1
            tokens.append(blob[i:j])
            i = j
    return tokens, i + 1  # one whitespace byte separates header from payload


def read_ppm(path):
    """Read a binary 8-bit PPM (P6) into a [3, H, W] float image in [0, 1]."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    if not blob.startswith(b"P6"):
        raise DataError(f"{path}: not a binary PPM (P6) file")
    tokens, offset = _read_pnm_tokens(blob[2:], 3, path)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    payload = blob[2 + offset : 2 + offset + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise DataError(f"{path}: truncated pixel data")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, gray):
    """Write a [H, W] array as binary 8-bit PGM (P5); floats are scaled so
    the maximum maps to 255."""
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"write_pgm: expected [H, W], got shape {g.shape}")
    peak = g.max()
    scaled = np.zeros_like(g) if peak <= 0 else g / peak * 255.0
    data = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path):
    """Read a binary 8-bit PGM (P5) into a [H, W] uint8 array."""
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _read_pnm_tokens(blob[2:], 3, path)
    w, h, _ = (int(t) for t in tokens)
    payload = blob[2 + offset : 2 + offset + w * h]
    if len(payload) != w * h:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


# ---- resize and manifest ----


def bilinear_resize(image, out_h, out_w):
    """Bilinear resample of a [C, H, W] image (pixel-center alignment)."""
    img = np.asarray(image, dtype=np.float64)
    c, h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def load_manifest(path, target_h, target_w):
    """Read a ``path,person_id,camera_id`` CSV of P6 images into records.

    Image paths resolve relative to the manifest; images are bilinearly
    resized to the target geometry. Errors carry the offending row number.
    """
    manifest = Path(path)
    if not manifest.is_file():
        raise DataError(f"manifest not found: {manifest}")
    records = []
    with open(manifest, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{manifest}: empty file, expected header {MANIFEST_HEADER}")
        if [col.strip() for col in header] != MANIFEST_HEADER:
            raise DataError(f"{manifest}: bad header {header}, expected {MANIFEST_HEADER}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{manifest} row {row_no}: expected 3 columns, got {len(row)}")
            img_path = manifest.parent / row[0]
            try:
                person_id, camera_id = int(row[1]), int(row[2])
            except ValueError:
                raise DataError(f"{manifest} row {row_no}: non-integer id fields {row[1:]}")
            try:
                img = read_ppm(img_path)
            except DataError as exc:
                raise DataError(f"{manifest} row {row_no}: {exc}") from exc
            if img.shape[1] != target_h or img.shape[2] != target_w:
                img = np.clip(bilinear_resize(img, target_h, target_w), 0.0, 1.0)
            records.append(DatasetRecord(image=img, person_id=person_id, camera_id=camera_id))
    return records
