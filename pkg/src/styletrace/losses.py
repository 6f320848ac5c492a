"""The eight-term training objective.

Feature-statistics style matching, deepest-level content matching, a
non-saturating domain-adversarial pair, self-reconstruction identity terms,
two grouped InfoNCE contrastive losses, and the edge-routed dual patch
co-occurrence terms. Per-image values are averaged over the batch. All
functions are pure: they take tensors and modules, return scalars, and keep
whatever gradient graph the inputs carried.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import diffcore, imgproc
from .nets import FeaturePyramid, PatchDiscriminator


def _neg_log_sigmoid(logits: torch.Tensor) -> torch.Tensor:
    # -log sigmoid(x) == softplus(-x), stable for large |x|.
    return F.softplus(-logits)


@dataclasses.dataclass
class LossWeights:
    """Term weights; patch terms intentionally sum to 1 with complex favored 3:1."""

    style: float = 1.0
    adversarial: float = 1.0
    content: float = 1.0
    identity: float = 1.0
    contra_style: float = 0.3
    contra_content: float = 0.3
    patch_simple: float = 0.25
    patch_complex: float = 0.75
    identity_pixel: float = 50.0
    identity_feature: float = 1.0
    tau: float = 0.2

    def validate(self) -> None:
        for field in dataclasses.fields(self):
            v = getattr(self, field.name)
            if field.name == "tau":
                if v <= 0:
                    raise ValueError(f"tau must be positive, got {v}")
            elif v < 0:
                raise ValueError(f"weight {field.name} must be nonnegative, got {v}")


TERM_NAMES = (
    "style",
    "adversarial",
    "content",
    "identity",
    "contra_style",
    "contra_content",
    "patch_simple",
    "patch_complex",
)


@dataclasses.dataclass
class LossReport:
    """Unweighted per-term values plus the weighted total for one step."""

    step: int
    style: float
    adversarial: float
    content: float
    identity: float
    contra_style: float
    contra_content: float
    patch_simple: float
    patch_complex: float
    total: float

    CSV_HEADER = ("step",) + TERM_NAMES + ("total",)

    def csv_row(self) -> str:
        vals = [str(self.step)] + [repr(getattr(self, n)) for n in self.CSV_HEADER[1:]]
        return ",".join(vals)

    @staticmethod
    def csv_header() -> str:
        return ",".join(LossReport.CSV_HEADER)


def _per_image_norm(diff: torch.Tensor) -> torch.Tensor:
    """Frobenius norm per batch element."""
    return torch.linalg.vector_norm(diff.reshape(diff.shape[0], -1), dim=1)


def style_loss(stylized_pyr: FeaturePyramid, style_pyr: FeaturePyramid) -> torch.Tensor:
    """Sum over levels of channelwise mean/std distances, averaged over the batch."""
    if len(stylized_pyr.levels) != len(style_pyr.levels):
        raise ValueError("pyramids have different level counts")
    total = None
    for a, b in zip(stylized_pyr.levels, style_pyr.levels):
        mu_d = torch.linalg.vector_norm(
            diffcore.channel_mean(a) - diffcore.channel_mean(b), dim=1
        )
        sd_d = torch.linalg.vector_norm(
            diffcore.channel_std(a) - diffcore.channel_std(b), dim=1
        )
        term = mu_d + sd_d
        total = term if total is None else total + term
    return total.mean()


def content_loss(stylized_pyr: FeaturePyramid, content_pyr: FeaturePyramid) -> torch.Tensor:
    """Frobenius distance at the deepest (content) level, averaged over the batch."""
    return _per_image_norm(stylized_pyr.content_level - content_pyr.content_level).mean()


def identity_loss(
    self_styled_content: torch.Tensor,
    content: torch.Tensor,
    self_styled_style: torch.Tensor,
    style: torch.Tensor,
    pyr_self_content: FeaturePyramid,
    pyr_content: FeaturePyramid,
    pyr_self_style: FeaturePyramid,
    pyr_style: FeaturePyramid,
    pixel_weight: float = 50.0,
    feature_weight: float = 1.0,
) -> torch.Tensor:
    """Self-stylization should reproduce the input, in pixels and in features."""
    pixel = (
        _per_image_norm(self_styled_content - content).mean()
        + _per_image_norm(self_styled_style - style).mean()
    )
    feat = None
    for a, b, c, d in zip(
        pyr_self_content.levels, pyr_content.levels, pyr_self_style.levels, pyr_style.levels
    ):
        term = _per_image_norm(a - b).mean() + _per_image_norm(c - d).mean()
        feat = term if feat is None else feat + term
    return pixel_weight * pixel + feature_weight * feat


def adversarial_losses(
    disc: torch.nn.Module, real: torch.Tensor, fake: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating GAN pair on the per-image mean logit.

    Returns (disc_loss, gen_loss). The fake image is detached inside the
    discriminator term, so disc_loss never reaches generator parameters; the
    caller is responsible for stepping only generator parameters on gen_loss.
    """
    mean_logit = lambda imgs: disc(imgs).mean(dim=tuple(range(1, 4)))
    d_loss = _neg_log_sigmoid(mean_logit(real)).mean() + F.softplus(
        mean_logit(fake.detach())
    ).mean()
    g_loss = _neg_log_sigmoid(mean_logit(fake)).mean()
    return d_loss, g_loss


def choose_positives(
    group_ids: Sequence[int], is_anchor: Sequence[bool], rng: np.random.Generator
) -> list[tuple[int, int]]:
    """One sampled positive per anchor; anchors without a same-group partner are skipped.

    Deterministic given the generator state: anchors are visited in index
    order and one draw is consumed per eligible anchor.
    """
    pairs = []
    for i, anchor in enumerate(is_anchor):
        if not anchor:
            continue
        candidates = [j for j, g in enumerate(group_ids) if g == group_ids[i] and j != i]
        if not candidates:
            continue
        pairs.append((i, candidates[int(rng.integers(0, len(candidates)))]))
    return pairs


def info_nce(
    codes: torch.Tensor,
    group_ids: Sequence[int],
    is_anchor: Sequence[bool],
    tau: float,
    seed: int,
) -> torch.Tensor:
    """Grouped InfoNCE over dot-product similarities.

    For each anchor the positive is one sampled same-group entry and the
    negatives are every entry of a different group. Cross-entropy is computed
    via logsumexp for stability. No usable anchors -> 0 with a warning.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    k = codes.shape[0]
    if len(group_ids) != k or len(is_anchor) != k:
        raise ValueError(
            f"codes ({k}), group_ids ({len(group_ids)}), is_anchor ({len(is_anchor)}) disagree"
        )
    pairs = choose_positives(group_ids, is_anchor, np.random.default_rng(seed))
    if not pairs:
        warnings.warn("contrastive loss skipped: no anchor has a same-group partner")
        return codes.sum() * 0.0
    sims = diffcore.matmul(codes, codes.T)
    per_anchor = []
    for i, pos in pairs:
        negs = [j for j, g in enumerate(group_ids) if g != group_ids[i]]
        logits = sims[i, [pos] + negs] / tau
        per_anchor.append(torch.logsumexp(logits, dim=0) - logits[0])
    return torch.stack(per_anchor).mean()


def contrastive_style(
    codes: torch.Tensor,
    style_ids: Sequence[int],
    is_generated: Sequence[bool],
    tau: float,
    seed: int,
) -> torch.Tensor:
    """Style-grouped InfoNCE; only generated entries anchor, crops only support."""
    return info_nce(codes, style_ids, is_generated, tau, seed)


def contrastive_content(
    codes: torch.Tensor, content_ids: Sequence[int], tau: float, seed: int
) -> torch.Tensor:
    """Content-grouped InfoNCE over generated entries; everything anchors."""
    return info_nce(codes, content_ids, [True] * codes.shape[0], tau, seed)


@dataclasses.dataclass
class PatchTerms:
    simple_generator: torch.Tensor
    complex_generator: torch.Tensor
    discriminator: torch.Tensor
    discriminator_real: torch.Tensor  # the -log p(real) half, handy for logging
    discriminator_fake: torch.Tensor
    weighted_generator: torch.Tensor | None = None


def default_patch_size(*dims: int) -> int:
    """A quarter of the smallest image side, clamped to [8, 64]."""
    m = min(dims)
    return min(m, min(64, max(8, m // 4)))


def patch_cooccurrence_loss(
    stylized: torch.Tensor,
    style_img: np.ndarray,
    content_img: np.ndarray,
    style_sobel: np.ndarray,
    content_sobel: np.ndarray,
    disc_simple: PatchDiscriminator,
    disc_complex: PatchDiscriminator,
    weights: LossWeights | None = None,
    n_patches: int = 8,
    patch_size: int | None = None,
    seed: int = 0,
) -> PatchTerms:
    """Edge-routed dual patch adversarial terms for one (content, style) pair.

    Three seeded draws happen in fixed order: reference patches from the
    style, "real" candidate patches from the style, and candidate patches
    from the stylized output. Stylized candidates are scored by the CONTENT
    image's edge map (the stylized output has no trustworthy edges of its
    own); style patches are scored by the style's. Each group is split at its
    score median: low half to the simple discriminator, high half to the
    complex one. Generator terms are per-candidate -log sigmoid, averaged;
    the discriminator term treats stylized candidates as fake and
    style-vs-style pairs as real, with stylized crops detached.
    """
    if stylized.ndim == 4:
        if stylized.shape[0] != 1:
            raise ValueError("patch loss operates on a single stylized image")
        stylized = stylized[0]
    if stylized.ndim != 3 or stylized.shape[0] != 3:
        raise ValueError(f"stylized must be (3, H, W), got {tuple(stylized.shape)}")
    h, w = stylized.shape[1], stylized.shape[2]
    if content_sobel.shape != (h, w):
        raise ValueError(
            f"content edge map {content_sobel.shape} does not match stylized ({h}, {w})"
        )
    if content_img.shape[1:] != (h, w):
        raise ValueError("content image does not match stylized size")
    hs, ws = style_img.shape[1], style_img.shape[2]
    if style_sobel.shape != (hs, ws):
        raise ValueError(f"style edge map {style_sobel.shape} does not match style ({hs}, {ws})")
    if n_patches % 2:
        raise ValueError(f"n_patches must be even, got {n_patches}")
    if patch_size is None:
        patch_size = default_patch_size(h, w, hs, ws)

    rng = np.random.default_rng(seed)
    dtype = stylized.dtype

    def style_stack(origins):
        crops = [
            style_img[:, y : y + patch_size, x : x + patch_size] for x, y, _ in origins
        ]
        return diffcore.to_tensor(np.stack(crops), dtype=dtype)

    ref_origins = imgproc.sample_patch_origins(hs, ws, style_sobel, n_patches, patch_size, rng)
    real_origins = imgproc.sample_patch_origins(hs, ws, style_sobel, n_patches, patch_size, rng)
    fake_origins = imgproc.sample_patch_origins(h, w, content_sobel, n_patches, patch_size, rng)

    ref_lo, ref_hi = imgproc.split_indices_by_score([s for _, _, s in ref_origins])
    real_lo, real_hi = imgproc.split_indices_by_score([s for _, _, s in real_origins])
    fake_lo, fake_hi = imgproc.split_indices_by_score([s for _, _, s in fake_origins])

    refs = style_stack(ref_origins)
    reals = style_stack(real_origins)
    fakes = torch.stack(
        [diffcore.crop(stylized, y, x, patch_size) for x, y, _ in fake_origins]
    )

    def halves(route, disc):
        lo_ref, lo_real, lo_fake = route
        ref_set = refs[lo_ref]
        gen = _neg_log_sigmoid(disc(fakes[lo_fake], ref_set)).mean()
        d_real = _neg_log_sigmoid(disc(reals[lo_real], ref_set)).mean()
        d_fake = F.softplus(disc(fakes[lo_fake].detach(), ref_set)).mean()
        return gen, d_real, d_fake

    simple_gen, simple_real, simple_fake = halves((ref_lo, real_lo, fake_lo), disc_simple)
    complex_gen, complex_real, complex_fake = halves((ref_hi, real_hi, fake_hi), disc_complex)
    d_real = simple_real + complex_real
    d_fake = simple_fake + complex_fake

    weighted = None
    if weights is not None:
        weighted = weights.patch_simple * simple_gen + weights.patch_complex * complex_gen
    return PatchTerms(
        simple_generator=simple_gen,
        complex_generator=complex_gen,
        discriminator=d_real + d_fake,
        discriminator_real=d_real,
        discriminator_fake=d_fake,
        weighted_generator=weighted,
    )


def total_loss(
    style: torch.Tensor,
    adversarial: torch.Tensor,
    content: torch.Tensor,
    identity: torch.Tensor,
    contra_style: torch.Tensor,
    contra_content: torch.Tensor,
    patch_simple: torch.Tensor,
    patch_complex: torch.Tensor,
    weights: LossWeights,
    step: int = 0,
) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of the eight terms plus a per-step report.

    Any non-finite term aborts with an error naming it.
    """
    weights.validate()
    terms = {
        "style": style,
        "adversarial": adversarial,
        "content": content,
        "identity": identity,
        "contra_style": contra_style,
        "contra_content": contra_content,
        "patch_simple": patch_simple,
        "patch_complex": patch_complex,
    }
    for name, t in terms.items():
        value = float(t.detach()) if isinstance(t, torch.Tensor) else float(t)
        if not np.isfinite(value):
            raise FloatingPointError(f"loss term {name!r} is non-finite: {value}")
    lams = {
        "style": weights.style,
        "adversarial": weights.adversarial,
        "content": weights.content,
        "identity": weights.identity,
        "contra_style": weights.contra_style,
        "contra_content": weights.contra_content,
        "patch_simple": weights.patch_simple,
        "patch_complex": weights.patch_complex,
    }
    total = None
    for name in TERM_NAMES:
        piece = lams[name] * terms[name]
        total = piece if total is None else total + piece
    report = LossReport(
        step=step,
        total=float(total.detach()),
        **{name: float(terms[name].detach()) for name in TERM_NAMES},
    )
    return total, report
