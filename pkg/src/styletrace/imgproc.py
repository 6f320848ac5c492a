"""Non-differentiable image plumbing.

Everything here runs on plain numpy arrays shaped (3, H, W) with values in
[0, 1], float64 throughout: Gaussian and bilateral smoothing, Sobel edge
magnitude, covariance-based recolouring, content-prior assembly, and scored
patch sampling. None of it participates in gradient flow; the differentiable
side starts at the network boundary.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np
from PIL import Image

# Rec. 601 luminance weights, used for the edge map only.
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

_SOBEL_GX = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_GY = _SOBEL_GX.T.copy()


@dataclasses.dataclass
class PriorConfig:
    """Knobs for content-prior construction.

    blur_sigma=None derives sigma from the kernel size (0.15 * k + 0.35).
    bilateral sigmas are given in 0..255 intensity units and scaled down
    internally against the [0, 1] data.
    """

    blur_enabled: bool = True
    blur_kernel: int = 7
    blur_sigma: float | None = None
    bilateral_diameter: int = 25
    bilateral_sigma_color: float = 100.0
    bilateral_sigma_space: float = 100.0
    prior_weight: float = 0.5

    def validate(self) -> None:
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError(f"blur_kernel must be odd and positive, got {self.blur_kernel}")
        if self.blur_sigma is not None and self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if self.bilateral_diameter < 1 or self.bilateral_diameter % 2 == 0:
            raise ValueError(
                f"bilateral_diameter must be odd and positive, got {self.bilateral_diameter}"
            )
        if self.bilateral_sigma_color <= 0 or self.bilateral_sigma_space <= 0:
            raise ValueError("bilateral sigmas must be positive")
        if not 0.0 <= self.prior_weight <= 1.0:
            raise ValueError(f"prior_weight must lie in [0, 1], got {self.prior_weight}")

    def resolved_blur_sigma(self) -> float:
        if self.blur_sigma is not None:
            return float(self.blur_sigma)
        return 0.15 * self.blur_kernel + 0.35


@dataclasses.dataclass
class ScoredPatch:
    """A square crop plus the mean edge score of its footprint."""

    crop: np.ndarray  # (3, p, p)
    score: float
    origin: tuple[int, int]  # (x, y) of the top-left corner
    source_id: int = 0


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (3, H, W) [0, 1] contract and return the array as float64."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, H, W), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range [{a.min()}, {a.max()}]")
    return a


def _reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the border sample."""
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


def _pad_reflect_2d(plane: np.ndarray, pad: int) -> np.ndarray:
    h, w = plane.shape
    ys = _reflect_index(np.arange(-pad, h + pad), h)
    xs = _reflect_index(np.arange(-pad, w + pad), w)
    return plane[np.ix_(ys, xs)]


def _correlate_separable(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size separable correlation with reflect padding."""
    pad = len(kernel) // 2
    h, w = plane.shape
    padded = _pad_reflect_2d(plane, pad)
    tmp = np.zeros((h + 2 * pad, w), dtype=np.float64)
    for j, kv in enumerate(kernel):
        tmp += kv * padded[:, j : j + w]
    out = np.zeros((h, w), dtype=np.float64)
    for i, kv in enumerate(kernel):
        out += kv * tmp[i : i + h, :]
    return out


def gaussian_blur(img: np.ndarray, kernel: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; kernel is normalized to sum 1."""
    img = validate_image(img)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and positive, got {kernel}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = np.arange(kernel, dtype=np.float64) - (kernel - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    k /= k.sum()
    return np.stack([_correlate_separable(img[c], k) for c in range(3)])


def bilateral_filter(
    img: np.ndarray, diameter: int, sigma_color: float, sigma_space: float
) -> np.ndarray:
    """Edge-preserving smoothing.

    Each output pixel is a normalized average over a diameter x diameter
    window; the weight of a neighbour is the product of a spatial Gaussian on
    its offset and a range Gaussian on the Euclidean RGB distance between the
    neighbour and the centre pixel. Borders are handled by reflection.
    sigma_color is interpreted in the same units as the data.
    """
    img = validate_image(img)
    if diameter < 1 or diameter % 2 == 0:
        raise ValueError(f"diameter must be odd and positive, got {diameter}")
    if sigma_color <= 0 or sigma_space <= 0:
        raise ValueError("sigmas must be positive")
    radius = diameter // 2
    _, h, w = img.shape
    padded = np.stack([_pad_reflect_2d(img[c], radius) for c in range(3)])

    num = np.zeros_like(img)
    den = np.zeros((h, w), dtype=np.float64)
    inv2_space = 1.0 / (2.0 * sigma_space**2)
    inv2_color = 1.0 / (2.0 * sigma_color**2)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = padded[:, radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            dist2 = np.sum((shifted - img) ** 2, axis=0)
            weight = np.exp(-(dy * dy + dx * dx) * inv2_space) * np.exp(-dist2 * inv2_color)
            num += weight[None] * shifted
            den += weight
    return num / den[None]


def sobel_map(img: np.ndarray) -> np.ndarray:
    """Edge magnitude sqrt(gx^2 + gy^2) of the luminance plane, reflect-padded."""
    img = validate_image(img)
    luma = LUMA_R * img[0] + LUMA_G * img[1] + LUMA_B * img[2]
    padded = _pad_reflect_2d(luma, 1)
    h, w = luma.shape
    gx = np.zeros((h, w), dtype=np.float64)
    gy = np.zeros((h, w), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            window = padded[i : i + h, j : j + w]
            gx += _SOBEL_GX[i, j] * window
            gy += _SOBEL_GY[i, j] * window
    return np.sqrt(gx * gx + gy * gy)


def _image_moments(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = img.reshape(3, -1)
    mean = flat.mean(axis=1)
    centered = flat - mean[:, None]
    cov = centered @ centered.T / flat.shape[1]
    return mean, cov


def _sym_power(mat: np.ndarray, power: float, eps: float) -> np.ndarray:
    # Eigenvalues of a sample covariance can dip below zero numerically.
    vals, vecs = np.linalg.eigh(mat + eps * np.eye(3))
    vals = np.clip(vals, eps * 1e-3, None)
    return (vecs * vals**power) @ vecs.T


def recolor(
    content: np.ndarray, style: np.ndarray, eps: float = 1e-5, clip: bool = True
) -> np.ndarray:
    """Map the content's global colour distribution onto the style's.

    A linear transform A = cov_s^(1/2) @ cov_c^(-1/2) (epsilon-regularized,
    via eigendecomposition) is applied to mean-centred content pixels and the
    style mean is added back. clip=False returns the raw pre-clamp values so
    the transferred moments can be inspected.
    """
    content = validate_image(content, "content")
    style = validate_image(style, "style")
    mu_c, cov_c = _image_moments(content)
    mu_s, cov_s = _image_moments(style)
    transfer = _sym_power(cov_s, 0.5, eps) @ _sym_power(cov_c, -0.5, eps)
    flat = content.reshape(3, -1)
    out = transfer @ (flat - mu_c[:, None]) + mu_s[:, None]
    out = out.reshape(content.shape)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def smooth(img: np.ndarray, cfg: PriorConfig) -> np.ndarray:
    """The smoothing front half of the prior: optional blur, then bilateral."""
    cfg.validate()
    out = validate_image(img)
    if cfg.blur_enabled:
        out = gaussian_blur(out, cfg.blur_kernel, cfg.resolved_blur_sigma())
    # Config sigmas are in 0..255 units; the data lives in [0, 1].
    out = bilateral_filter(
        out,
        cfg.bilateral_diameter,
        cfg.bilateral_sigma_color / 255.0,
        cfg.bilateral_sigma_space,
    )
    return out


def build_prior(content: np.ndarray, style: np.ndarray, cfg: PriorConfig) -> np.ndarray:
    """Smoothed, recoloured, intensity-faded starting point for the generator."""
    smoothed = smooth(content, cfg)
    recoloured = recolor(smoothed, style)
    return cfg.prior_weight * recoloured


def prior_stages(
    content: np.ndarray, style: np.ndarray | None, cfg: PriorConfig
) -> list[tuple[str, np.ndarray]]:
    """Named intermediates of prior assembly, in order, ending with the prior.

    Runs the exact same operations as build_prior (or build_plain_prior when
    style is None), so the final entry matches those bit for bit. Stages that
    are switched off are simply absent from the list.
    """
    cfg.validate()
    out = validate_image(content)
    stages = []
    if cfg.blur_enabled:
        out = gaussian_blur(out, cfg.blur_kernel, cfg.resolved_blur_sigma())
        stages.append(("blurred", out))
    out = bilateral_filter(
        out,
        cfg.bilateral_diameter,
        cfg.bilateral_sigma_color / 255.0,
        cfg.bilateral_sigma_space,
    )
    stages.append(("smoothed", out))
    if style is not None:
        out = recolor(out, validate_image(style))
        stages.append(("recolored", out))
    stages.append(("prior", cfg.prior_weight * out))
    return stages


def build_plain_prior(content: np.ndarray, cfg: PriorConfig) -> np.ndarray:
    """Prior without recolouring; the reconstruction endpoint starts here."""
    return cfg.prior_weight * smooth(content, cfg)


def sample_patch_origins(
    height: int,
    width: int,
    sobel: np.ndarray,
    n: int,
    patch_size: int,
    rng: np.random.Generator,
) -> list[tuple[int, int, float]]:
    """Draw n uniform top-left corners and score each footprint by mean edge magnitude.

    Returns (x, y, score) triples in draw order. Shared by sample_patches and
    the patch co-occurrence loss so both route crops identically.
    """
    if patch_size < 1 or patch_size > min(height, width):
        raise ValueError(
            f"patch_size must lie in [1, {min(height, width)}], got {patch_size}"
        )
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if sobel.shape != (height, width):
        raise ValueError(f"sobel map shape {sobel.shape} does not match ({height}, {width})")
    xs = rng.integers(0, width - patch_size + 1, size=n)
    ys = rng.integers(0, height - patch_size + 1, size=n)
    out = []
    for x, y in zip(xs, ys):
        score = float(sobel[y : y + patch_size, x : x + patch_size].mean())
        out.append((int(x), int(y), score))
    return out


def sample_patches(
    img: np.ndarray,
    sobel: np.ndarray,
    n: int,
    patch_size: int,
    seed: int,
    source_id: int = 0,
) -> list[ScoredPatch]:
    """Seeded random square crops of img, scored against the given edge map."""
    img = validate_image(img)
    rng = np.random.default_rng(seed)
    origins = sample_patch_origins(img.shape[1], img.shape[2], sobel, n, patch_size, rng)
    return [
        ScoredPatch(
            crop=img[:, y : y + patch_size, x : x + patch_size].copy(),
            score=score,
            origin=(x, y),
            source_id=source_id,
        )
        for x, y, score in origins
    ]


def split_indices_by_score(scores: Sequence[float]) -> tuple[list[int], list[int]]:
    """Stable ascending sort by score; lower half indices first, upper half second.

    Ties keep draw order. The count must be even so the halves balance.
    """
    n = len(scores)
    if n == 0 or n % 2 != 0:
        raise ValueError(f"patch count must be even and positive, got {n}")
    order = sorted(range(n), key=lambda i: scores[i])
    return order[: n // 2], order[n // 2 :]


def sort_split_patches(
    patches: Sequence[ScoredPatch],
) -> tuple[list[ScoredPatch], list[ScoredPatch]]:
    """Route patches to the (simple, complex) discriminator pair by edge score."""
    lo, hi = split_indices_by_score([p.score for p in patches])
    return [patches[i] for i in lo], [patches[i] for i in hi]


def load_image(path: str) -> np.ndarray:
    """Decode an image file to a (3, H, W) float64 array in [0, 1]."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(img: np.ndarray, path: str) -> None:
    """Quantize to 8 bits (round, via float32 like the inference path) and save."""
    img = validate_image(img)
    as32 = img.astype(np.float32)
    q = np.clip(np.rint(as32 * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q.transpose(1, 2, 0)).save(path)


def save_gray(plane: np.ndarray, path: str) -> None:
    """Save a 2-D map rescaled to its own [min, max] range as 8-bit grayscale."""
    lo, hi = float(plane.min()), float(plane.max())
    scaled = (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)
    Image.fromarray((scaled * 255.0).round().astype(np.uint8), mode="L").save(path)
