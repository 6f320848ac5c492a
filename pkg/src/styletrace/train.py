"""Training loop: adversarial two-phase steps over manifest-listed images.

Each step is deterministic given (seed, step): batch composition, crop
offsets, patch draws and contrastive positives are all derived from that pair
and nothing else, which is what makes resume bit-exact — a restored
checkpoint replays the identical remaining schedule. Discriminators update
first on detached stylized outputs, then the generator side (transform,
decoder, projection heads) updates against the refreshed critics.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
import warnings
from typing import Callable, Sequence

import numpy as np
import torch

from . import diffcore, figures, imgproc, losses, nets

log = logging.getLogger(__name__)


class TrainAbort(RuntimeError):
    """A step produced a non-finite loss; parameters were rolled back."""


@dataclasses.dataclass
class TrainConfig:
    content_manifest: str = ""
    style_manifest: str = ""
    out_dir: str = ""
    steps: int = 200
    batch_size: int = 4
    crop_size: int = 256
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    base_width: int = 16
    proj_dim: int = 64
    accumulation_subbatch: int = 0  # 0 disables logit accumulation
    checkpoint_every: int = 100
    log_every: int = 10
    n_patches: int = 8
    patch_size: int = 0  # 0 derives from image size
    resume: str = ""
    weights: losses.LossWeights = dataclasses.field(default_factory=losses.LossWeights)
    prior: imgproc.PriorConfig = dataclasses.field(default_factory=imgproc.PriorConfig)

    def validate(self) -> None:
        if not self.content_manifest or not self.style_manifest or not self.out_dir:
            raise ValueError("content_manifest, style_manifest and out_dir are required")
        if self.steps < 1:
            raise ValueError(f"steps must be positive, got {self.steps}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.crop_size % 8:
            raise ValueError(f"crop_size must be divisible by 8, got {self.crop_size}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must lie in [0, 1)")
        if self.accumulation_subbatch < 0:
            raise ValueError("accumulation_subbatch must be >= 0")
        if self.n_patches < 2 or self.n_patches % 2:
            raise ValueError("n_patches must be even and >= 2")
        self.weights.validate()
        self.prior.validate()


_WEIGHT_KEYS = {
    "lambda_style": "style",
    "lambda_adversarial": "adversarial",
    "lambda_content": "content",
    "lambda_identity": "identity",
    "lambda_contra_style": "contra_style",
    "lambda_contra_content": "contra_content",
    "lambda_patch_simple": "patch_simple",
    "lambda_patch_complex": "patch_complex",
    "identity_pixel_weight": "identity_pixel",
    "identity_feature_weight": "identity_feature",
    "tau": "tau",
}

_PRIOR_KEYS = {
    "blur_enabled": "blur_enabled",
    "blur_kernel": "blur_kernel",
    "blur_sigma": "blur_sigma",
    "bilateral_diameter": "bilateral_diameter",
    "bilateral_sigma_color": "bilateral_sigma_color",
    "bilateral_sigma_space": "bilateral_sigma_space",
    "prior_weight": "prior_weight",
}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(value: str, target):
    if isinstance(target, bool):
        low = value.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    return value


def parse_config(path: str) -> TrainConfig:
    """Flat key=value file, '#' comments; unknown keys are hard errors."""
    cfg = TrainConfig()
    field_types = {f.name: f for f in dataclasses.fields(TrainConfig)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in _WEIGHT_KEYS:
                attr = _WEIGHT_KEYS[key]
                setattr(cfg.weights, attr, _coerce(value, getattr(cfg.weights, attr)))
            elif key in _PRIOR_KEYS:
                attr = _PRIOR_KEYS[key]
                if attr == "blur_sigma":
                    cfg.prior.blur_sigma = None if value.lower() == "auto" else float(value)
                else:
                    setattr(cfg.prior, attr, _coerce(value, getattr(cfg.prior, attr)))
            elif key in field_types and key not in ("weights", "prior"):
                setattr(cfg, key, _coerce(value, getattr(cfg, key)))
            else:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    cfg.validate()
    return cfg


def config_text(cfg: TrainConfig) -> str:
    """Resolved settings in the same key=value shape the parser reads."""
    lines = []
    for f in dataclasses.fields(TrainConfig):
        if f.name in ("weights", "prior"):
            continue
        lines.append(f"{f.name}={getattr(cfg, f.name)}")
    for key, attr in _WEIGHT_KEYS.items():
        lines.append(f"{key}={getattr(cfg.weights, attr)}")
    for key, attr in _PRIOR_KEYS.items():
        value = getattr(cfg.prior, attr)
        if attr == "blur_sigma" and value is None:
            value = "auto"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def load_manifest(path: str) -> list[str]:
    """Newline-separated paths, resolved relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            entries.append(line if os.path.isabs(line) else os.path.join(base, line))
    if not entries:
        raise ValueError(f"manifest {path} lists no images")
    for p in entries:
        if not os.path.exists(p):
            raise FileNotFoundError(f"manifest {path} lists missing file {p}")
    return entries


def _load_all(paths: list[str], min_size: int) -> list[np.ndarray]:
    out = []
    for p in paths:
        try:
            img = imgproc.load_image(p)
        except Exception as exc:
            raise ValueError(f"cannot decode {p}: {exc}") from exc
        if img.shape[1] < min_size or img.shape[2] < min_size:
            raise ValueError(
                f"{p} is {img.shape[2]}x{img.shape[1]}, smaller than crop size {min_size}"
            )
        out.append(img)
    return out


@dataclasses.dataclass
class PairSlot:
    content: np.ndarray
    content_id: int
    style_id: int


@dataclasses.dataclass
class Batch:
    slots: list[PairSlot]
    # Two independent crops per distinct style; the first feeds the
    # stylization, both support the style-grouped contrastive loss.
    style_crops: dict[int, tuple[np.ndarray, np.ndarray]]

    @property
    def size(self) -> int:
        return len(self.slots)


def _random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    _, h, w = img.shape
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return img[:, y : y + size, x : x + size].copy()


def sample_batch(
    contents: list[np.ndarray],
    styles: list[np.ndarray],
    batch_size: int,
    crop_size: int,
    rng: np.random.Generator,
) -> Batch:
    """Uniform content draws; each drawn style occupies two slots so the
    style-grouped contrastive loss always has in-batch partners."""
    content_ids = [int(i) for i in rng.integers(0, len(contents), size=batch_size)]
    n_styles = (batch_size + 1) // 2
    style_draw = [int(i) for i in rng.integers(0, len(styles), size=n_styles)]
    style_ids = [style_draw[i // 2] for i in range(batch_size)]
    slots = [
        PairSlot(
            content=_random_crop(contents[cid], crop_size, rng),
            content_id=cid,
            style_id=sid,
        )
        for cid, sid in zip(content_ids, style_ids)
    ]
    style_crops = {}
    for sid in dict.fromkeys(style_ids):
        a = _random_crop(styles[sid], crop_size, rng)
        b = _random_crop(styles[sid], crop_size, rng)
        style_crops[sid] = (a, b)
    return Batch(slots=slots, style_crops=style_crops)


def _nce_from_pairs(
    codes: torch.Tensor, group_ids: Sequence[int], pairs: list[tuple[int, int]], tau: float
) -> torch.Tensor:
    sims = diffcore.matmul(codes, codes.T)
    per_anchor = []
    for i, pos in pairs:
        negs = [j for j, g in enumerate(group_ids) if g != group_ids[i]]
        logits = sims[i, [pos] + negs] / tau
        per_anchor.append(torch.logsumexp(logits, dim=0) - logits[0])
    return torch.stack(per_anchor).mean()


def logit_accumulated_contrastive(
    images: torch.Tensor | list[torch.Tensor],
    embed: Callable[[torch.Tensor], torch.Tensor],
    group_ids: Sequence[int],
    is_anchor: Sequence[bool],
    tau: float,
    seed: int,
    subbatch: int,
    weight: float = 1.0,
    retain_graph: bool = True,
) -> float:
    """Memory-bounded grouped InfoNCE whose gradients equal the full-batch ones.

    Pass one embeds every image without gradients to fix the full code set
    and the positive assignments. Pass two walks subbatches: each chunk is
    re-embedded with gradients, spliced into the fixed code matrix, and
    weight * loss is backpropagated immediately. Because the total derivative
    of the loss decomposes additively over code rows, the accumulated
    parameter gradients match a single full-batch backward exactly; only peak
    memory changes. Returns the (weight-free) loss value.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if subbatch < 1:
        raise ValueError(f"subbatch must be >= 1, got {subbatch}")
    stacked = torch.stack(list(images)) if isinstance(images, (list, tuple)) else images
    k = stacked.shape[0]
    if k % subbatch:
        raise ValueError(f"batch of {k} is not divisible by subbatch {subbatch}")
    if len(group_ids) != k or len(is_anchor) != k:
        raise ValueError("group/anchor lists do not match the image count")

    pairs = losses.choose_positives(group_ids, is_anchor, np.random.default_rng(seed))
    if not pairs:
        warnings.warn("contrastive loss skipped: no anchor has a same-group partner")
        return 0.0

    with torch.no_grad():
        codes_fixed = embed(stacked)
    value = float(_nce_from_pairs(codes_fixed, group_ids, pairs, tau).detach())

    for lo in range(0, k, subbatch):
        hi = lo + subbatch
        live = embed(stacked[lo:hi])
        spliced = codes_fixed.clone()
        spliced[lo:hi] = live
        chunk_loss = _nce_from_pairs(spliced, group_ids, pairs, tau)
        (weight * chunk_loss).backward(retain_graph=retain_graph)
    return value


def _effective_subbatch(total: int, cap: int) -> int:
    """Largest divisor of total that is <= cap (the chunk contract requires
    exact divisibility; batch composition varies at runtime)."""
    for size in range(min(cap, total), 0, -1):
        if total % size == 0:
            return size
    return 1


def make_optimizers(
    params: nets.ModelParams, cfg: TrainConfig
) -> tuple[torch.optim.Adam, torch.optim.Adam]:
    betas = (cfg.beta1, cfg.beta2)
    # foreach=False pins the single-tensor path so resumed state stays bit-exact.
    opt_g = torch.optim.Adam(params.generator_parameters(), lr=cfg.learning_rate, betas=betas, foreach=False)
    opt_d = torch.optim.Adam(params.discriminator_parameters(), lr=cfg.learning_rate, betas=betas, foreach=False)
    return opt_g, opt_d


def _trainable_named(params: nets.ModelParams) -> dict[str, torch.nn.Parameter]:
    return {n: p for n, p in params.named_parameters().items() if p.requires_grad}


def optimizer_arrays(
    opt_g: torch.optim.Adam, opt_d: torch.optim.Adam, params: nets.ModelParams
) -> dict[str, np.ndarray]:
    """Adam moments and step counts as checkpoint entries under 'opt.'."""
    by_id = {id(p): name for name, p in params.named_parameters().items()}
    out: dict[str, np.ndarray] = {}
    for prefix, opt in (("g", opt_g), ("d", opt_d)):
        for group in opt.param_groups:
            for p in group["params"]:
                state = opt.state.get(p)
                if not state:
                    continue
                name = by_id[id(p)]
                out[f"opt.{prefix}.{name}.m"] = state["exp_avg"].numpy().astype(np.float32)
                out[f"opt.{prefix}.{name}.v"] = state["exp_avg_sq"].numpy().astype(np.float32)
                out[f"opt.{prefix}.{name}.t"] = np.array(int(state["step"].item()), dtype=np.int64)
    return out


def restore_optimizers(
    opt_g: torch.optim.Adam,
    opt_d: torch.optim.Adam,
    params: nets.ModelParams,
    arrays: dict[str, np.ndarray],
) -> None:
    named = params.named_parameters()
    for prefix, opt in (("g", opt_g), ("d", opt_d)):
        for name, p in named.items():
            key = f"opt.{prefix}.{name}.m"
            if key not in arrays:
                continue
            opt.state[p] = {
                "step": torch.tensor(float(arrays[f"opt.{prefix}.{name}.t"]), dtype=torch.float32),
                "exp_avg": torch.from_numpy(arrays[key].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(arrays[f"opt.{prefix}.{name}.v"].copy()).to(p.dtype),
            }


def _encode_images(params: nets.ModelParams, arrays: list[np.ndarray], dtype) -> nets.FeaturePyramid:
    stack = np.stack(arrays)
    return params.encoder(diffcore.to_tensor(stack, dtype=dtype))


def train_step(
    params: nets.ModelParams,
    batch: Batch,
    cfg: TrainConfig,
    step: int,
    opt_g: torch.optim.Adam,
    opt_d: torch.optim.Adam,
) -> losses.LossReport:
    """One discriminator update followed by one generator update.

    If any loss term comes out non-finite, every parameter is restored to its
    pre-step value and TrainAbort names the term.
    """
    w = cfg.weights
    dtype = next(params.transform.parameters()).dtype
    rng = np.random.default_rng((cfg.seed, step, 1))
    b = batch.size

    snapshot = {n: p.detach().clone() for n, p in params.named_parameters().items()}

    def rollback_and_raise(exc: Exception):
        with torch.no_grad():
            for n, p in params.named_parameters().items():
                p.copy_(snapshot[n])
        raise TrainAbort(f"step {step}: {exc}") from exc

    # Seeds drawn up front so the D and G phases see identical patch draws
    # and positive choices.
    patch_seeds = [int(s) for s in rng.integers(0, 2**31, size=b)]
    seed_contra_style = int(rng.integers(0, 2**31))
    seed_contra_content = int(rng.integers(0, 2**31))

    uniq_styles = list(batch.style_crops)
    uniq_contents = list(dict.fromkeys(slot.content_id for slot in batch.slots))
    content_by_id = {slot.content_id: slot.content for slot in batch.slots}

    # Non-differentiable preprocessing, all numpy.
    priors = [
        imgproc.build_prior(slot.content, batch.style_crops[slot.style_id][0], cfg.prior)
        for slot in batch.slots
    ]
    priors_cc = [
        imgproc.build_prior(content_by_id[cid], content_by_id[cid], cfg.prior)
        for cid in uniq_contents
    ]
    priors_ss = [
        imgproc.build_prior(batch.style_crops[sid][0], batch.style_crops[sid][0], cfg.prior)
        for sid in uniq_styles
    ]
    sobel_content = {cid: imgproc.sobel_map(content_by_id[cid]) for cid in uniq_contents}
    sobel_style = {sid: imgproc.sobel_map(batch.style_crops[sid][0]) for sid in uniq_styles}

    style_slot_imgs = [batch.style_crops[slot.style_id][0] for slot in batch.slots]
    content_slot_imgs = [slot.content for slot in batch.slots]

    # Shared forward pass: stylized outputs for every slot plus both identity
    # reconstructions.
    pyr_priors = _encode_images(params, priors, dtype)
    pyr_styles_slot = _encode_images(params, style_slot_imgs, dtype)
    pyr_contents_slot = _encode_images(params, content_slot_imgs, dtype)
    priors_t = diffcore.to_tensor(np.stack(priors), dtype=dtype)

    fused = params.transform(pyr_priors, pyr_styles_slot)
    stylized, _ = params.decoder.decode(fused, priors_t)

    pyr_cc_prior = _encode_images(params, priors_cc, dtype)
    pyr_cc_style = _encode_images(params, [content_by_id[c] for c in uniq_contents], dtype)
    icc, _ = params.decoder.decode(
        params.transform(pyr_cc_prior, pyr_cc_style),
        diffcore.to_tensor(np.stack(priors_cc), dtype=dtype),
    )
    pyr_ss_prior = _encode_images(params, priors_ss, dtype)
    pyr_ss_style = _encode_images(params, [batch.style_crops[s][0] for s in uniq_styles], dtype)
    iss, _ = params.decoder.decode(
        params.transform(pyr_ss_prior, pyr_ss_style),
        diffcore.to_tensor(np.stack(priors_ss), dtype=dtype),
    )

    style_real = diffcore.to_tensor(np.stack(style_slot_imgs), dtype=dtype)

    def patch_terms_for(slot_idx: int) -> losses.PatchTerms:
        slot = batch.slots[slot_idx]
        return losses.patch_cooccurrence_loss(
            stylized[slot_idx],
            batch.style_crops[slot.style_id][0],
            slot.content,
            sobel_style[slot.style_id],
            sobel_content[slot.content_id],
            params.patch_disc_simple,
            params.patch_disc_complex,
            n_patches=cfg.n_patches,
            patch_size=cfg.patch_size or None,
            seed=patch_seeds[slot_idx],
        )

    # ---- discriminator phase (stylized outputs detached inside the losses)
    opt_d.zero_grad(set_to_none=True)
    d_domain = losses.adversarial_losses(params.domain_disc, style_real, stylized)[0]
    d_patch = torch.stack([patch_terms_for(i).discriminator for i in range(b)]).mean()
    d_total = d_domain + d_patch
    if not torch.isfinite(d_total):
        rollback_and_raise(FloatingPointError("discriminator loss is non-finite"))
    d_total.backward()
    opt_d.step()

    # ---- generator phase against the refreshed critics
    opt_g.zero_grad(set_to_none=True)
    pyr_stylized = params.encoder(stylized)
    term_style = losses.style_loss(pyr_stylized, pyr_styles_slot)
    term_content = losses.content_loss(pyr_stylized, pyr_contents_slot)
    term_identity = losses.identity_loss(
        icc,
        diffcore.to_tensor(np.stack([content_by_id[c] for c in uniq_contents]), dtype=dtype),
        iss,
        diffcore.to_tensor(np.stack([batch.style_crops[s][0] for s in uniq_styles]), dtype=dtype),
        params.encoder(icc),
        pyr_cc_style,
        params.encoder(iss),
        pyr_ss_style,
        pixel_weight=w.identity_pixel,
        feature_weight=w.identity_feature,
    )
    term_adv = losses.adversarial_losses(params.domain_disc, style_real, stylized)[1]
    patch_terms = [patch_terms_for(i) for i in range(b)]
    term_patch_simple = torch.stack([t.simple_generator for t in patch_terms]).mean()
    term_patch_complex = torch.stack([t.complex_generator for t in patch_terms]).mean()

    # Contrastive inputs: stylized outputs anchor; two ground-truth crops per
    # style support without anchoring.
    style_group_ids = [slot.style_id for slot in batch.slots] + uniq_styles + uniq_styles
    style_anchor = [True] * b + [False] * (2 * len(uniq_styles))
    crop_imgs = [batch.style_crops[s][0] for s in uniq_styles] + [
        batch.style_crops[s][1] for s in uniq_styles
    ]
    crops_t = diffcore.to_tensor(np.stack(crop_imgs), dtype=dtype)
    style_code_images = torch.cat([stylized, crops_t], dim=0)
    content_group_ids = [slot.content_id for slot in batch.slots]

    def embed_style(imgs: torch.Tensor) -> torch.Tensor:
        return params.style_proj(params.encoder(imgs))

    def embed_content(imgs: torch.Tensor) -> torch.Tensor:
        return params.content_proj(params.encoder(imgs))

    accumulate = 0 < cfg.accumulation_subbatch < style_code_images.shape[0]
    if accumulate:
        # These two backward for themselves (weighted); the remaining terms
        # follow in one more backward below.
        val_cs = logit_accumulated_contrastive(
            style_code_images, embed_style, style_group_ids, style_anchor,
            w.tau, seed_contra_style,
            _effective_subbatch(style_code_images.shape[0], cfg.accumulation_subbatch),
            weight=w.contra_style,
        )
        val_cc = logit_accumulated_contrastive(
            stylized, embed_content, content_group_ids, [True] * b,
            w.tau, seed_contra_content,
            _effective_subbatch(b, cfg.accumulation_subbatch),
            weight=w.contra_content,
        )
        term_cs = torch.tensor(val_cs, dtype=dtype)
        term_cc = torch.tensor(val_cc, dtype=dtype)
    else:
        term_cs = losses.contrastive_style(
            embed_style(style_code_images), style_group_ids, style_anchor, w.tau, seed_contra_style
        )
        term_cc = losses.contrastive_content(
            embed_content(stylized), content_group_ids, w.tau, seed_contra_content
        )

    try:
        total, report = losses.total_loss(
            style=term_style,
            adversarial=term_adv,
            content=term_content,
            identity=term_identity,
            contra_style=term_cs,
            contra_content=term_cc,
            patch_simple=term_patch_simple,
            patch_complex=term_patch_complex,
            weights=w,
            step=step,
        )
    except FloatingPointError as exc:
        rollback_and_raise(exc)
    if accumulate:
        # Contrastive gradients are already in .grad; finish with the rest.
        partial = (
            w.style * term_style
            + w.adversarial * term_adv
            + w.content * term_content
            + w.identity * term_identity
            + w.patch_simple * term_patch_simple
            + w.patch_complex * term_patch_complex
        )
        partial.backward()
    else:
        total.backward()
    opt_g.step()
    return report


@dataclasses.dataclass
class TrainResult:
    out_dir: str
    last_checkpoint: str
    reports: list[losses.LossReport]


def _save_checkpoint(
    params: nets.ModelParams,
    opt_g: torch.optim.Adam,
    opt_d: torch.optim.Adam,
    step: int,
    path: str,
) -> None:
    extra = optimizer_arrays(opt_g, opt_d, params)
    extra["meta.step"] = np.array(step, dtype=np.int64)
    nets.save_model(params, path, extra=extra)


def fit(cfg: TrainConfig) -> TrainResult:
    """Run the loop; emits losses.csv (flushed per step), checkpoints, and a
    loss-curve figure beside the CSV."""
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w") as fh:
        fh.write(config_text(cfg))
    log.info("resolved config:\n%s", config_text(cfg))

    contents = _load_all(load_manifest(cfg.content_manifest), cfg.crop_size)
    styles = _load_all(load_manifest(cfg.style_manifest), cfg.crop_size)
    log.info("loaded %d content and %d style images", len(contents), len(styles))

    start_step = 0
    if cfg.resume:
        params, leftovers = nets.load_model(cfg.resume)
        if params.base_width != cfg.base_width or params.proj_dim != cfg.proj_dim:
            raise ValueError(
                f"checkpoint widths ({params.base_width}, {params.proj_dim}) do not match "
                f"config ({cfg.base_width}, {cfg.proj_dim})"
            )
        opt_g, opt_d = make_optimizers(params, cfg)
        restore_optimizers(opt_g, opt_d, params, leftovers)
        start_step = int(leftovers.get("meta.step", np.array(0)))
        log.info("resumed from %s at step %d", cfg.resume, start_step)
    else:
        params = nets.build_model(cfg.base_width, cfg.proj_dim, seed=cfg.seed)
        opt_g, opt_d = make_optimizers(params, cfg)

    csv_path = os.path.join(cfg.out_dir, "losses.csv")
    mode = "a" if (cfg.resume and os.path.exists(csv_path)) else "w"
    reports: list[losses.LossReport] = []
    last_ckpt = ""
    with open(csv_path, mode) as csv_fh:
        if mode == "w":
            csv_fh.write(losses.LossReport.csv_header() + "\n")
            csv_fh.flush()
        for step in range(start_step, cfg.steps):
            t0 = time.perf_counter()
            batch = sample_batch(
                contents, styles, cfg.batch_size, cfg.crop_size,
                np.random.default_rng((cfg.seed, step, 0)),
            )
            report = train_step(params, batch, cfg, step, opt_g, opt_d)
            reports.append(report)
            csv_fh.write(report.csv_row() + "\n")
            csv_fh.flush()
            if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                log.info(
                    "step %d: total %.4f (%.2fs)", step, report.total, time.perf_counter() - t0
                )
            done = step + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.steps:
                last_ckpt = os.path.join(cfg.out_dir, f"ckpt_{done:06d}.bin")
                _save_checkpoint(params, opt_g, opt_d, done, last_ckpt)
                _save_checkpoint(params, opt_g, opt_d, done, os.path.join(cfg.out_dir, "latest.bin"))
    try:
        figures.render_loss_curves(csv_path, os.path.join(cfg.out_dir, "losses.png"))
    except ValueError:
        pass  # resumed past the end: no new rows is fine
    return TrainResult(out_dir=cfg.out_dir, last_checkpoint=last_ckpt, reports=reports)
