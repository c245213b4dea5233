"""Dataset synthesis: clean scenes, degradation sampling, prompts, manifests.

Every sample is reproducible from (seed, sample id): the per-sample RNG is
np.random.default_rng((seed, sample_id)) and each stochastic degradation
carries its own stream id, so regenerating a dataset or re-rendering one
ground truth is byte-identical regardless of order or parallelism.

Images are stored as binary PPM (P6, maxval 255); the manifest is UTF-8
JSON lines, one record per line.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .degradations import (KINDS, DegradationSpec, compose_sample)

SPLITS = ("train", "val", "test")
CATEGORIES = ("1-1", "2-1", "2-2", "3-1", "3-2", "3-3")

# Table-style defaults: share of one/two/three-degradation images, the
# partial/global removal split inside each, and the train/val/test split
GROUP_FRACTIONS = (0.476, 0.381, 0.143)
DOUBLE_REMOVAL_FRACTIONS = (0.8, 0.2)          # 2-1 vs 2-2
TRIPLE_REMOVAL_FRACTIONS = (0.4, 0.4, 0.2)     # 3-1, 3-2, 3-3
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


# ---------------------------------------------------------------------------
# PPM image I/O


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6, maxval 255; img is float [H,W,3] in [0,1]."""
    h, w, c = img.shape
    if c != 3:
        raise ValueError("PPM writer expects [H,W,3]")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError(f"{path}: not a maxval-255 P6 PPM")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace after header
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# prompts


def canonical_order(kinds) -> list[str]:
    return [k for k in KINDS if k in set(kinds)]


def gen_prompt(present, removed, style: str) -> str:
    """single: "Remove a, b." / two: "There are a, b in the image. Remove a."
    Lists appear in the canonical kind order."""
    removed = canonical_order(removed)
    if not removed:
        raise ValueError("removed set is empty")
    removed_part = ", ".join(removed)
    if style == "single":
        return f"Remove {removed_part}."
    if style == "two":
        present_part = ", ".join(canonical_order(present))
        return f"There are {present_part} in the image. Remove {removed_part}."
    raise ValueError(f"unknown prompt style {style!r}")


# ---------------------------------------------------------------------------
# records / manifest


@dataclass
class SampleRecord:
    id: int
    clean_path: str
    degraded_path: str
    gt_path: str
    present: list[str]
    removed: list[str]
    specs: list[dict]
    prompt_single: str
    prompt_two: str
    split: str
    category: str

    def validate(self) -> None:
        if not set(self.removed) <= set(self.present) or not self.removed:
            raise ValueError(f"record {self.id}: removed must be a non-empty "
                             "subset of present")
        expect = f"{len(self.present)}-{len(self.removed)}"
        if self.category != expect:
            raise ValueError(f"record {self.id}: category {self.category} "
                             f"inconsistent with sets ({expect})")
        if self.split not in SPLITS:
            raise ValueError(f"record {self.id}: bad split {self.split!r}")

    def spec_objects(self) -> list[DegradationSpec]:
        return [DegradationSpec.from_dict(d) for d in self.specs]

    def labels(self) -> np.ndarray:
        return np.array([1.0 if k in self.present else 0.0 for k in KINDS])


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r)) + "\n")


def read_manifest(path) -> list[SampleRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(SampleRecord(**json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# clean image synthesis


def generate_clean_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Procedural geometric scene with mean luminance >= 0.35 (keeps every
    composed degradation above the visibility floor)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float) / size
    c0 = rng.uniform(0.15, 0.85, 3)
    c1 = rng.uniform(0.15, 0.85, 3)
    axis = yy if rng.random() < 0.5 else xx
    img = c0 + (c1 - c0) * axis[:, :, None]
    for _ in range(int(rng.integers(3, 8))):
        color = rng.uniform(0.1, 0.9, 3)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, size, 2)
            hh, ww = rng.integers(size // 8, size // 2, 2)
            img[y0:y0 + hh, x0:x0 + ww] = color
        else:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 12, size / 4)
            inside = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 < r * r
            img[inside] = color
    img = np.clip(img, 0.0, 1.0)
    mean = img.mean()
    if mean < 0.35:   # lift dark scenes so lowlight cannot crush them
        img = np.clip(img + (0.35 - mean), 0.0, 1.0)
    return img


def load_clean_pool(source_dir) -> list[np.ndarray]:
    pool = []
    for name in sorted(os.listdir(source_dir)):
        if name.endswith(".ppm"):
            pool.append(read_ppm(os.path.join(source_dir, name)))
    if not pool:
        raise FileNotFoundError(f"no .ppm images in {source_dir}")
    return pool


# ---------------------------------------------------------------------------
# dataset construction


@dataclass
class DatasetConfig:
    count: int = 500
    image_size: int = 64
    seed: int = 0
    beta_range: tuple[float, float] = (0.3, 0.9)
    group_fractions: tuple[float, float, float] = GROUP_FRACTIONS
    split_fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    source_dir: str | None = None   # optional pool of clean .ppm images


def _largest_remainder(total: int, fractions) -> list[int]:
    raw = [total * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = np.argsort([c - r for c, r in zip(counts, raw)])  # biggest deficit first
    for i in range(total - sum(counts)):
        counts[order[i % len(fractions)]] += 1
    return counts


def category_counts(total: int, group_fractions=GROUP_FRACTIONS) -> dict[str, int]:
    one, two, three = _largest_remainder(total, group_fractions)
    out = {"1-1": one}
    d21, d22 = _largest_remainder(two, DOUBLE_REMOVAL_FRACTIONS)
    out.update({"2-1": d21, "2-2": d22})
    t31, t32, t33 = _largest_remainder(three, TRIPLE_REMOVAL_FRACTIONS)
    out.update({"3-1": t31, "3-2": t32, "3-3": t33})
    return out


def _assignments(cfg: DatasetConfig) -> list[tuple[str, str]]:
    """Deterministic (category, split) pair per sample id."""
    pairs = []
    for cat, n in category_counts(cfg.count, cfg.group_fractions).items():
        split_n = _largest_remainder(n, cfg.split_fractions)
        for split, k in zip(SPLITS, split_n):
            pairs.extend([(cat, split)] * k)
    rng = np.random.default_rng((cfg.seed, 0xC0FFEE))
    rng.shuffle(pairs)
    return pairs


def _sample_specs(rng, category: str, size: int, b_lo: float, b_hi: float):
    n_present, n_removed = (int(x) for x in category.split("-"))
    present = sorted(rng.choice(len(KINDS), size=n_present, replace=False))
    present = [KINDS[i] for i in present]
    removed_idx = sorted(rng.choice(n_present, size=n_removed, replace=False))
    removed = [present[i] for i in removed_idx]
    specs = []
    for kind in present:
        beta = float(rng.uniform(b_lo, b_hi))
        stream = int(rng.integers(0, 2 ** 63 - 1))
        if kind == "blur":
            gamma = float(rng.uniform(0.0, 180.0))
        elif kind == "rain":
            gamma = float(rng.uniform(-20.0, 20.0))
        elif kind == "haze":
            gamma = int(rng.integers(0, 2 ** 31 - 1))
        else:
            gamma = 0.0
        alpha = int(rng.integers(0, 2 ** 31 - 1)) if kind == "snow" else 0
        specs.append(DegradationSpec(kind=kind, alpha=alpha, beta=beta,
                                     gamma=gamma, rng_stream=stream))
    return specs, removed


def build_dataset(cfg: DatasetConfig, out_dir) -> str:
    """Write images + manifest.jsonl under out_dir; returns manifest path."""
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    pool = load_clean_pool(cfg.source_dir) if cfg.source_dir else None
    b_lo, b_hi = cfg.beta_range
    records = []
    for sample_id, (category, split) in enumerate(_assignments(cfg)):
        rng = np.random.default_rng((cfg.seed, sample_id))
        if pool is None:
            clean = generate_clean_image(rng, cfg.image_size)
        else:
            clean = pool[int(rng.integers(len(pool)))]
        specs, removed = _sample_specs(rng, category, cfg.image_size, b_lo, b_hi)
        present = [s.kind for s in specs]
        degraded, gt = compose_sample(clean, specs, removed)
        paths = {}
        for tag, img in (("clean", clean), ("degraded", degraded), ("gt", gt)):
            rel = os.path.join("images", f"{sample_id:05d}_{tag}.ppm")
            write_ppm(os.path.join(out_dir, rel), img)
            paths[tag] = rel
        rec = SampleRecord(
            id=sample_id,
            clean_path=paths["clean"],
            degraded_path=paths["degraded"],
            gt_path=paths["gt"],
            present=canonical_order(present),
            removed=canonical_order(removed),
            specs=[s.to_dict() for s in specs],
            prompt_single=gen_prompt(present, removed, "single"),
            prompt_two=gen_prompt(present, removed, "two"),
            split=split,
            category=category,
        )
        rec.validate()
        records.append(rec)
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(records, manifest)
    return manifest
