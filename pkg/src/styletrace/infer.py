"""Inference: stylization, reconstruction, and feature-space interpolation.

The blend knob mixes the transformed feature field with the reconstruction
feature field, and the decoder base mixes the recolored prior with the plain
one, both with the same coefficient. 0 reproduces the reconstruction path
bitwise, 1 reproduces plain stylization bitwise, and values above 1
extrapolate past the training operating point to exaggerate the style.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import re
import warnings

import numpy as np
import torch
import torch.nn.functional as F

from . import diffcore, imgproc, nets

log = logging.getLogger(__name__)


@dataclasses.dataclass
class StylizeOptions:
    alpha: float = 1.0
    prior: imgproc.PriorConfig = dataclasses.field(default_factory=imgproc.PriorConfig)
    output_size: int = 0  # 0 keeps the content resolution

    def validate(self) -> None:
        self.prior.validate()
        if self.output_size < 0:
            raise ValueError(f"output_size must be >= 0, got {self.output_size}")


def _working_size(h: int, w: int) -> tuple[int, int]:
    # Encoder needs /8 sides; round up so detail is resampled, not dropped.
    rounded = lambda v: max(8, ((v + 7) // 8) * 8)
    return rounded(h), rounded(w)


def _resize_chw(img: np.ndarray, h: int, w: int) -> np.ndarray:
    if img.shape[1:] == (h, w):
        return img
    t = torch.from_numpy(img[None])
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    return out[0].numpy()


def _prepare(content: np.ndarray, opts: StylizeOptions) -> tuple[np.ndarray, tuple[int, int]]:
    imgproc.validate_image(content, "content")
    opts.validate()
    h, w = content.shape[1:]
    if opts.output_size:
        scale = opts.output_size / max(h, w)
        h, w = max(1, round(h * scale)), max(1, round(w * scale))
    wh, ww = _working_size(h, w)
    return _resize_chw(content, wh, ww), (h, w)


def _finish(img_t: torch.Tensor, final_hw: tuple[int, int]) -> np.ndarray:
    out = img_t[0].detach().numpy().astype(np.float32)
    if out.shape[1:] != final_hw:
        out = _resize_chw(out.astype(np.float64), *final_hw).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def _feature_fields(
    params: nets.ModelParams,
    content_work: np.ndarray,
    style_work: np.ndarray,
    prior_sty: np.ndarray,
    prior_rec: np.ndarray,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Decoder inputs for the stylization route and the reconstruction route."""
    dtype = next(params.decoder.parameters()).dtype
    pyr_prior_sty = params.encoder(diffcore.to_tensor(prior_sty[None], dtype=dtype))
    pyr_prior_rec = params.encoder(diffcore.to_tensor(prior_rec[None], dtype=dtype))
    pyr_style = params.encoder(diffcore.to_tensor(style_work[None], dtype=dtype))
    pyr_content = params.encoder(diffcore.to_tensor(content_work[None], dtype=dtype))
    f_sty = params.transform(pyr_prior_sty, pyr_style)
    f_rec = params.transform(pyr_prior_rec, pyr_content)
    return f_sty, f_rec


def stylize(
    content: np.ndarray,
    style: np.ndarray,
    params: nets.ModelParams,
    opts: StylizeOptions | None = None,
) -> np.ndarray:
    """Transfer the style image's appearance onto the content image."""
    opts = opts or StylizeOptions()
    imgproc.validate_image(style, "style")
    content_work, final_hw = _prepare(content, opts)
    wh, ww = content_work.shape[1:]
    style_work = _resize_chw(style, wh, ww)

    prior = imgproc.build_prior(content_work, style_work, opts.prior)
    dtype = next(params.decoder.parameters()).dtype
    with torch.no_grad():
        pyr_prior = params.encoder(diffcore.to_tensor(prior[None], dtype=dtype))
        pyr_style = params.encoder(diffcore.to_tensor(style_work[None], dtype=dtype))
        fused = params.transform(pyr_prior, pyr_style)
        out, _ = params.decoder.decode(fused, diffcore.to_tensor(prior[None], dtype=dtype))
    return _finish(out, final_hw)


def reconstruct(
    content: np.ndarray, params: nets.ModelParams, opts: StylizeOptions | None = None
) -> np.ndarray:
    """Self-conditioned pass over the plain (un-recolored) prior."""
    opts = opts or StylizeOptions()
    content_work, final_hw = _prepare(content, opts)
    prior = imgproc.build_plain_prior(content_work, opts.prior)
    dtype = next(params.decoder.parameters()).dtype
    with torch.no_grad():
        pyr_prior = params.encoder(diffcore.to_tensor(prior[None], dtype=dtype))
        pyr_content = params.encoder(diffcore.to_tensor(content_work[None], dtype=dtype))
        fused = params.transform(pyr_prior, pyr_content)
        out, _ = params.decoder.decode(fused, diffcore.to_tensor(prior[None], dtype=dtype))
    return _finish(out, final_hw)


def interp_features(
    content: np.ndarray,
    style: np.ndarray,
    params: nets.ModelParams,
    alpha: float,
    opts: StylizeOptions | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(decoder feature input, decoder base) at a given blend, for inspection.

    Exposed separately so the affine relationship between the blend
    coefficient and the decoder inputs is directly testable.
    """
    opts = opts or StylizeOptions()
    imgproc.validate_image(style, "style")
    content_work, _ = _prepare(content, opts)
    wh, ww = content_work.shape[1:]
    style_work = _resize_chw(style, wh, ww)
    prior_sty = imgproc.build_prior(content_work, style_work, opts.prior)
    prior_rec = imgproc.build_plain_prior(content_work, opts.prior)
    dtype = next(params.decoder.parameters()).dtype
    with torch.no_grad():
        f_sty, f_rec = _feature_fields(params, content_work, style_work, prior_sty, prior_rec)
        if alpha == 1.0:  # exact endpoint, no arithmetic on the tensors
            fused, base_np = f_sty, prior_sty
        elif alpha == 0.0:
            fused, base_np = f_rec, prior_rec
        else:
            fused = (1.0 - alpha) * f_rec + alpha * f_sty
            base_np = (1.0 - alpha) * prior_rec + alpha * prior_sty
        base = diffcore.to_tensor(base_np[None], dtype=dtype)
    return fused, base


def stylize_interp(
    content: np.ndarray,
    style: np.ndarray,
    params: nets.ModelParams,
    alpha: float,
    opts: StylizeOptions | None = None,
) -> np.ndarray:
    """Blend between reconstruction (0) and stylization (1); >1 boosts."""
    opts = opts or StylizeOptions()
    _, final_hw = _prepare(content, opts)
    with torch.no_grad():
        fused, base = interp_features(content, style, params, alpha, opts)
        out, _ = params.decoder.decode(fused, base)
    return _finish(out, final_hw)


_FRAME_NUM = re.compile(r"(\d+)")


def _frame_sort_key(name: str):
    m = _FRAME_NUM.search(name)
    return (int(m.group(1)) if m else float("inf"), name)


def stylize_frames(
    frames_dir: str,
    style: np.ndarray,
    params: nets.ModelParams,
    out_dir: str,
    opts: StylizeOptions | None = None,
    alpha: float | None = None,
) -> list[str]:
    """Stylize every decodable image in a directory, preserving file names.

    Frames are processed in numeric order when names carry frame numbers.
    Returns the written paths.
    """
    names = sorted(os.listdir(frames_dir), key=_frame_sort_key)
    if not names:
        raise ValueError(f"no frames found in {frames_dir}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in names:
        src = os.path.join(frames_dir, name)
        if not os.path.isfile(src):
            continue
        try:
            frame = imgproc.load_image(src)
        except Exception as exc:
            warnings.warn(f"skipping {name}: {exc}")
            continue
        if alpha is None or alpha == 1.0:
            out = stylize(frame, style, params, opts)
        else:
            out = stylize_interp(frame, style, params, alpha, opts)
        dst = os.path.join(out_dir, os.path.splitext(name)[0] + ".png")
        imgproc.save_image(out, dst)
        written.append(dst)
        log.info("stylized %s", name)
    if not written:
        raise ValueError(f"no decodable frames in {frames_dir}")
    return written
