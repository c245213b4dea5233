"""Procedural degradation renderers with (alpha, beta, gamma) parameters.

All renderers map float images [H,W,3] in [0,1] to the same range. beta is
the severity in [0,1] and beta = 0 renders as the exact identity; gamma is
the per-kind feature parameter (blur angle, rain slant, haze blob seed);
alpha seeds the snow mask. Re-rendering with an identical spec is
bit-identical, which the ground-truth consistency checks rely on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

KINDS = ("blur", "rain", "haze", "lowlight", "snow")   # canonical label order
RENDER_ORDER = ("haze", "rain", "snow", "blur", "lowlight")

BLUR_MAX_LEN = 14          # kernel length at beta = 1 is 1 + 14
RAIN_BASE_COUNT = 120      # streaks at beta = 1 on a 128x128 image
RAIN_BRIGHTNESS = 0.8
RAIN_ALPHA = 0.6
HAZE_AIRLIGHT = 0.9
HAZE_T_FLOOR = 0.25        # keeps scene content visible under any beta
LOWLIGHT_RETAIN = 0.85     # out = img * (1 - 0.85 * beta)
SNOW_COVERAGE_CAP = 0.15


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    alpha: int = 0
    beta: float = 0.0
    gamma: float = 0.0
    rng_stream: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0,1], got {self.beta}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        return cls(**d)


def apply_lowlight(img: np.ndarray, beta: float) -> np.ndarray:
    """Uniform brightness reduction; retained fraction 1 - 0.85*beta."""
    if beta == 0.0:
        return img.copy()
    return img * (1.0 - LOWLIGHT_RETAIN * beta)


def motion_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Normalized linear motion kernel: `length` unit samples along the
    angle, bilinearly splatted. At axis-aligned angles this reduces to an
    exact 1/length line."""
    size = length if length % 2 else length + 1
    k = np.zeros((size, size))
    c = (size - 1) / 2.0
    ang = np.deg2rad(angle_deg)
    dy, dx = np.sin(ang), np.cos(ang)
    for t in range(length):
        off = t - (length - 1) / 2.0
        y, x = c + off * dy, c + off * dx
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for iy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
            for ix, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                if 0 <= iy < size and 0 <= ix < size and wy * wx:
                    k[iy, ix] += wy * wx
    return k / k.sum()


def _convolve_edge(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # 2-d kernel over each channel, edge padding so constants stay constant
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(img, ((ph, ph), (pw, pw), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    for i in range(kh):
        for j in range(kw):
            if kernel[i, j]:
                out += kernel[i, j] * xp[i:i + h, j:j + w]
    return out


def apply_blur(img: np.ndarray, beta: float, gamma: float) -> np.ndarray:
    """Linear motion blur; length 1 + round(beta*14) at angle gamma degrees."""
    length = 1 + round(beta * BLUR_MAX_LEN)
    if length <= 1:
        return img.copy()
    return np.clip(_convolve_edge(img, motion_kernel(length, gamma)), 0.0, 1.0)


def apply_haze(img: np.ndarray, beta: float, gamma: int) -> np.ndarray:
    """Spatially varying haze: transmission 1 - beta*G clamped to >= 0.25,
    G a max-normalized sum of Gaussian blobs placed by the gamma seed."""
    if beta == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    rng = np.random.default_rng(int(gamma))
    n_blobs = int(rng.integers(3, 7))
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    field = np.zeros((h, w))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(0.15, 0.45) * min(h, w)
        field += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    field /= field.max()
    t = np.clip(1.0 - beta * field, HAZE_T_FLOOR, 1.0)[:, :, None]
    return img * t + HAZE_AIRLIGHT * (1.0 - t)


def rain_streak_count(beta: float, shape) -> int:
    """round(beta * 120) scaled by image area relative to 128x128."""
    h, w = shape[:2]
    return round(beta * RAIN_BASE_COUNT * (h * w) / (128 * 128))


def _splat_line(mask: np.ndarray, y0, x0, length, angle_deg) -> None:
    h, w = mask.shape
    ang = np.deg2rad(angle_deg)
    # rain falls vertically at slant gamma: direction (cos g, sin g) in (y, x)
    dy, dx = np.cos(ang), np.sin(ang)
    steps = max(2, int(length * 2))
    for t in np.linspace(0.0, length, steps):
        y, x = y0 + t * dy, x0 + t * dx
        iy, ix = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - iy, x - ix
        for yy, wy in ((iy, 1 - fy), (iy + 1, fy)):
            for xx, wx in ((ix, 1 - fx), (ix + 1, fx)):
                if 0 <= yy < h and 0 <= xx < w:
                    mask[yy, xx] = min(1.0, mask[yy, xx] + wy * wx)


def apply_rain(img: np.ndarray, beta: float, gamma: float,
               rng_stream: int) -> np.ndarray:
    """Anti-aliased rain streaks at slant gamma (degrees off vertical)."""
    n = rain_streak_count(beta, img.shape)
    if n == 0:
        return img.copy()
    h, w = img.shape[:2]
    rng = np.random.default_rng(int(rng_stream))
    mask = np.zeros((h, w))
    for _ in range(n):
        y0 = rng.uniform(-4, h - 4)
        x0 = rng.uniform(0, w)
        length = rng.uniform(0.08, 0.16) * h
        _splat_line(mask, y0, x0, length, gamma)
    m = (RAIN_ALPHA * mask)[:, :, None]
    return img * (1.0 - m) + RAIN_BRIGHTNESS * m


def snow_mask(alpha: int, shape) -> np.ndarray:
    """Feathered elliptical flakes; mask mass capped at 15% of the image."""
    h, w = shape[:2]
    rng = np.random.default_rng(int(alpha))
    n_flakes = int(rng.integers(15, 40))
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    mask = np.zeros((h, w))
    scale = min(h, w)
    for _ in range(n_flakes):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry = rng.uniform(0.02, 0.06) * scale
        rx = ry * rng.uniform(0.7, 1.3)
        rho = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
        flake = np.clip((1.0 - rho) / 0.35, 0.0, 1.0)
        grown = np.maximum(mask, flake)
        if grown.mean() > SNOW_COVERAGE_CAP:
            break
        mask = grown
    return mask


def apply_snow(img: np.ndarray, alpha: int) -> np.ndarray:
    m = snow_mask(alpha, img.shape)[:, :, None]
    return img * (1.0 - m) + m


def apply_spec(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    if spec.kind == "lowlight":
        return apply_lowlight(img, spec.beta)
    if spec.kind == "blur":
        return apply_blur(img, spec.beta, spec.gamma)
    if spec.kind == "haze":
        return apply_haze(img, spec.beta, int(spec.gamma))
    if spec.kind == "rain":
        return apply_rain(img, spec.beta, spec.gamma, spec.rng_stream)
    return apply_snow(img, spec.alpha)


def render(clean: np.ndarray, specs) -> np.ndarray:
    """Apply specs in the canonical composition order haze -> rain -> snow
    -> blur -> lowlight (fixes ground-truth semantics)."""
    by_kind = {}
    for s in specs:
        if s.kind in by_kind:
            raise ValueError(f"duplicate degradation kind {s.kind!r}")
        by_kind[s.kind] = s
    out = clean.copy()
    for kind in RENDER_ORDER:
        if kind in by_kind:
            out = apply_spec(out, by_kind[kind])
    return out


def compose_sample(clean: np.ndarray, present_specs, removed_kinds):
    """Render the degraded image (all specs) and the ground truth (specs
    not being removed, identical parameter values)."""
    removed = set(removed_kinds)
    present = {s.kind for s in present_specs}
    if not removed:
        raise ValueError("removed set must be non-empty")
    if not removed <= present:
        raise ValueError(f"removed {removed} not a subset of present {present}")
    degraded = render(clean, present_specs)
    kept = [s for s in present_specs if s.kind not in removed]
    gt = render(clean, kept)
    return degraded, gt
