"""Output-quality metrics and a wall-clock benchmark for the stylizer.

Color fidelity is a symmetric squared chamfer distance between RGB point
clouds in 0..255 units. Style-feature fidelity is a Fréchet distance between
per-image Gaussian fits of early encoder features, with spatial positions as
the sample dimension. Content preservation is a normalized feature-space
distance to the original content image.
"""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np
from scipy.spatial import cKDTree

from . import diffcore, imgproc, infer, nets

log = logging.getLogger(__name__)

SIFID_LEVEL = 1  # first stride-2 pyramid level
_STAT_EPS = 1e-10


def color_points(img: np.ndarray, max_points: int, rng: np.random.Generator) -> np.ndarray:
    """Pixels as an (N, 3) cloud in 0..255, subsampled without replacement."""
    imgproc.validate_image(img, "img")
    pts = img.reshape(3, -1).T * 255.0
    if max_points and pts.shape[0] > max_points:
        keep = rng.choice(pts.shape[0], size=max_points, replace=False)
        pts = pts[keep]
    return np.ascontiguousarray(pts, dtype=np.float64)


def chamfer_color(
    img_a: np.ndarray, img_b: np.ndarray, max_points: int = 4096, seed: int = 0
) -> float:
    """Sum of both directed mean squared nearest-neighbor RGB distances."""
    rng = np.random.default_rng(seed)
    pts_a = color_points(img_a, max_points, rng)
    pts_b = color_points(img_b, max_points, rng)
    d_ab, _ = cKDTree(pts_b).query(pts_a, k=1)
    d_ba, _ = cKDTree(pts_a).query(pts_b, k=1)
    return float(np.mean(d_ab**2) + np.mean(d_ba**2))


def _encode_single(img: np.ndarray, params: nets.ModelParams) -> nets.FeaturePyramid:
    imgproc.validate_image(img, "img")
    dtype = next(params.decoder.parameters()).dtype
    return params.encoder(diffcore.to_tensor(img[None], dtype=dtype))


def feature_stats(img: np.ndarray, params: nets.ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance of early features across positions."""
    feat = _encode_single(img, params).levels[SIFID_LEVEL]
    samples = feat[0].detach().numpy().astype(np.float64).reshape(feat.shape[1], -1).T
    if samples.shape[0] < 2:
        raise ValueError("image too small for covariance estimation")
    mu = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False)
    return mu, cov


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> float:
    """Squared Fréchet distance between two Gaussians.

    The cross term uses tr((S A S)^{1/2}) with S the symmetric root of B,
    which equals tr((A B)^{1/2}) but stays in symmetric eigendecompositions;
    small negative eigenvalues from roundoff are clamped.
    """
    diff = np.asarray(mu_a, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64)
    root_b = _psd_sqrt(np.asarray(cov_b, dtype=np.float64))
    inner = root_b @ np.asarray(cov_a, dtype=np.float64) @ root_b
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    cross = np.sum(np.sqrt(np.clip(vals, 0.0, None)))
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(value, 0.0)


def sifid(img_a: np.ndarray, img_b: np.ndarray, params: nets.ModelParams) -> float:
    """Single-pair Fréchet distance on early encoder features."""
    mu_a, cov_a = feature_stats(img_a, params)
    mu_b, cov_b = feature_stats(img_b, params)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def content_proxy(img_a: np.ndarray, img_b: np.ndarray, params: nets.ModelParams) -> float:
    """Mean per-level feature distance, normalized by feature count."""
    pyr_a = _encode_single(img_a, params)
    pyr_b = _encode_single(img_b, params)
    dists = []
    for fa, fb in zip(pyr_a.levels, pyr_b.levels):
        diff = (fa - fb).detach().numpy().astype(np.float64)
        dists.append(np.linalg.norm(diff) / np.sqrt(diff.size))
    return float(np.mean(dists))


@dataclasses.dataclass
class PairMetrics:
    label: str
    color_dist: float
    feature_dist: float
    content_dist: float


@dataclasses.dataclass
class MetricReport:
    rows: list[PairMetrics]

    CSV_HEADER = "label,color_chamfer,feature_fd,content_proxy"

    def aggregate(self) -> PairMetrics:
        """Arithmetic mean of each column over every evaluated pair."""
        if not self.rows:
            raise ValueError("no rows to aggregate")
        return PairMetrics(
            label="mean",
            color_dist=float(np.mean([r.color_dist for r in self.rows])),
            feature_dist=float(np.mean([r.feature_dist for r in self.rows])),
            content_dist=float(np.mean([r.content_dist for r in self.rows])),
        )

    def csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for r in [*self.rows, self.aggregate()]:
            lines.append(f"{r.label},{r.color_dist!r},{r.feature_dist!r},{r.content_dist!r}")
        return "\n".join(lines) + "\n"


def evaluate_pairs(
    pairs: list[tuple[str, np.ndarray, np.ndarray, np.ndarray]],
    params: nets.ModelParams,
    max_points: int = 4096,
    seed: int = 0,
) -> MetricReport:
    """Each pair is (label, stylized, style, content): color and feature
    distances go against the style, the content proxy against the content."""
    rows = []
    for label, stylized, style, content in pairs:
        rows.append(
            PairMetrics(
                label=label,
                color_dist=chamfer_color(stylized, style, max_points, seed),
                feature_dist=sifid(stylized, style, params),
                content_dist=content_proxy(stylized, content, params),
            )
        )
        log.info("evaluated %s", label)
    return MetricReport(rows=rows)


@dataclasses.dataclass
class BenchRow:
    height: int
    width: int
    seconds: float | None  # None when the resolution could not be processed

    @property
    def label(self) -> str:
        return f"{self.width}x{self.height}"


DEFAULT_BENCH_RESOLUTIONS = ((256, 256), (512, 512), (1080, 1920))


def bench_stylize(
    params: nets.ModelParams,
    resolutions: tuple[tuple[int, int], ...] = DEFAULT_BENCH_RESOLUTIONS,
    repeats: int = 10,
    warmup: int = 2,
    opts: infer.StylizeOptions | None = None,
    seed: int = 0,
) -> list[BenchRow]:
    """Median wall-clock stylization time per resolution."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for height, width in resolutions:
        content = rng.random((3, height, width))
        style = rng.random((3, height, width))
        try:
            for _ in range(warmup):
                infer.stylize(content, style, params, opts)
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                infer.stylize(content, style, params, opts)
                times.append(time.perf_counter() - t0)
            rows.append(BenchRow(height=height, width=width, seconds=float(np.median(times))))
        except (RuntimeError, MemoryError) as exc:
            log.warning("benchmark at %dx%d failed: %s", width, height, exc)
            rows.append(BenchRow(height=height, width=width, seconds=None))
    return rows


def timing_table(rows: list[BenchRow]) -> str:
    """Aligned two-column text table, resolutions across the first column."""
    cells = [("resolution", "seconds")]
    for r in rows:
        cells.append((r.label, "unavailable" if r.seconds is None else f"{r.seconds:.3f}"))
    width0 = max(len(a) for a, _ in cells)
    lines = [f"{a:<{width0}}  {b}" for a, b in cells]
    return "\n".join(lines) + "\n"
