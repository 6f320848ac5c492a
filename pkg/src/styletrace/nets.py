"""Network pieces: frozen pyramid encoder, attention-based feature transform,
delta decoder, discriminators, and contrastive projection heads.

All modules route their tensor work through the diffcore catalog. Weights are
float32 by default; build_model(dtype=torch.float64) exists for gradient
verification. Initialization is driven entirely by an explicit seed so two
builds with the same seed agree parameter-for-parameter.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn

from . import checkpoint, diffcore

NUM_LEVELS = 4
ATTN_QUERY_CHUNK = 4096


def channel_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Normalize across channels at each spatial position."""
    mu = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, unbiased=False, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps)


def l2_normalize_rows(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return x / torch.linalg.vector_norm(x, dim=-1, keepdim=True).clamp_min(eps)


@dataclasses.dataclass
class FeaturePyramid:
    """Per-level NCHW feature maps, shallowest first; the last is the content level."""

    levels: list[torch.Tensor]

    def __post_init__(self) -> None:
        if len(self.levels) != NUM_LEVELS:
            raise ValueError(f"expected {NUM_LEVELS} levels, got {len(self.levels)}")

    @property
    def content_level(self) -> torch.Tensor:
        return self.levels[-1]

    @property
    def batch(self) -> int:
        return self.levels[0].shape[0]


class Conv(nn.Module):
    """Thin parameter holder; the arithmetic lives in the diffcore catalog."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, pad_mode: str = "zero"):
        super().__init__()
        self.stride = stride
        self.pad_mode = pad_mode
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        self.bias = nn.Parameter(torch.empty(cout))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return diffcore.conv2d(x, self.weight, self.bias, stride=self.stride, pad_mode=self.pad_mode)


class Linear(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cin, cout))
        self.bias = nn.Parameter(torch.empty(cout))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return diffcore.add(diffcore.matmul(x, self.weight), self.bias)


def _init_module(module: nn.Module, gen: torch.Generator) -> None:
    """He-style init, traversal order fixed by registration order."""
    for sub in module.modules():
        if isinstance(sub, (Conv, Linear)):
            fan_in = sub.weight.shape[1] if isinstance(sub, Linear) else int(
                np.prod(sub.weight.shape[1:])
            )
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                sub.weight.normal_(0.0, std, generator=gen)
                sub.bias.zero_()


class Encoder(nn.Module):
    """Four-level frozen feature pyramid over [0, 1] RGB input.

    Level widths are (c, 2c, 4c, 8c); each level is tapped before the next
    stride-2 stage, so spatial sizes run (H, H/2, H/4, H/8). Weights are
    random but fixed by seed and never trained.
    """

    def __init__(self, base_width: int = 16):
        super().__init__()
        c = base_width
        self.base_width = c
        self.stem = nn.ModuleList([Conv(3, c), Conv(c, c)])
        self.downs = nn.ModuleList([Conv(c, 2 * c, stride=2), Conv(2 * c, 4 * c, stride=2), Conv(4 * c, 8 * c, stride=2)])
        self.stages = nn.ModuleList([Conv(2 * c, 2 * c), Conv(4 * c, 4 * c), Conv(8 * c, 8 * c)])

    def forward(self, images: torch.Tensor) -> FeaturePyramid:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"encoder expects (N, 3, H, W), got {tuple(images.shape)}")
        h, w = images.shape[-2], images.shape[-1]
        if h % 8 or w % 8:
            raise ValueError(f"spatial size ({h}, {w}) must be divisible by 8; resize first")
        x = diffcore.relu(self.stem[0](images))
        x = diffcore.relu(self.stem[1](x))
        levels = [x]
        for down, stage in zip(self.downs, self.stages):
            x = diffcore.relu(down(x))
            x = diffcore.relu(stage(x))
            levels.append(x)
        return FeaturePyramid(levels)


class AttentionBlock(nn.Module):
    """Residual cross-attention: content queries attend over style positions."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.to_q = Conv(dim, dim, k=1)
        self.to_k = Conv(dim, dim, k=1)
        self.to_v = Conv(dim, dim, k=1)
        self.to_out = Conv(dim, dim, k=1)

    def forward(
        self, content_feat: torch.Tensor, style_feat: torch.Tensor, return_attn: bool = False
    ):
        n, d, h, w = content_feat.shape
        hs, ws = style_feat.shape[-2], style_feat.shape[-1]
        q = self.to_q(channel_norm(content_feat)).reshape(n, d, h * w).transpose(1, 2)
        k = self.to_k(channel_norm(style_feat)).reshape(n, d, hs * ws)
        v = self.to_v(style_feat).reshape(n, d, hs * ws)
        inv_scale = 1.0 / math.sqrt(d)

        attended_chunks = []
        attn_chunks = []
        # Row-chunked so giant query counts never materialize a full square matrix.
        for lo in range(0, h * w, ATTN_QUERY_CHUNK):
            q_part = q[:, lo : lo + ATTN_QUERY_CHUNK, :]
            scores = diffcore.scale(diffcore.matmul(q_part, k), inv_scale)
            attn = diffcore.softmax(scores, axis=-1)
            attended_chunks.append(diffcore.matmul(v, attn.transpose(1, 2)))
            if return_attn:
                attn_chunks.append(attn)
        attended = diffcore.concat(attended_chunks, axis=2).reshape(n, d, h, w)
        out = diffcore.add(content_feat, self.to_out(attended))
        if return_attn:
            return out, diffcore.concat(attn_chunks, axis=1)
        return out


class FeatureTransform(nn.Module):
    """Fuse both pyramids to the deepest resolution, then run residual
    cross-attention blocks that pull style statistics into the content layout."""

    def __init__(self, base_width: int = 16, num_blocks: int = 4):
        super().__init__()
        c = base_width
        total = c + 2 * c + 4 * c + 8 * c
        self.dim = 8 * c
        self.content_fuse = Conv(total, self.dim, k=1)
        self.style_fuse = Conv(total, self.dim, k=1)
        self.blocks = nn.ModuleList(AttentionBlock(self.dim) for _ in range(num_blocks))

    @staticmethod
    def _flatten_pyramid(pyr: FeaturePyramid) -> torch.Tensor:
        parts = []
        for i, lvl in enumerate(pyr.levels):
            factor = 2 ** (NUM_LEVELS - 1 - i)
            parts.append(diffcore.avg_pool(lvl, factor) if factor > 1 else lvl)
        return diffcore.concat(parts, axis=1)

    def forward(self, content_pyr: FeaturePyramid, style_pyr: FeaturePyramid) -> torch.Tensor:
        if len(content_pyr.levels) != len(style_pyr.levels):
            raise ValueError("pyramids have different level counts")
        for a, b in zip(content_pyr.levels, style_pyr.levels):
            if a.shape[1] != b.shape[1]:
                raise ValueError(
                    f"pyramid channel mismatch: {a.shape[1]} vs {b.shape[1]}"
                )
        f = self.content_fuse(self._flatten_pyramid(content_pyr))
        s = self.style_fuse(self._flatten_pyramid(style_pyr))
        for block in self.blocks:
            f = block(f, s)
        return f


class DeltaDecoder(nn.Module):
    """Upsample fused features x8 and emit bounded RGB deltas via tanh."""

    def __init__(self, base_width: int = 16):
        super().__init__()
        c = base_width
        self.convs = nn.ModuleList(
            [
                Conv(8 * c, 4 * c, pad_mode="reflect"),
                Conv(4 * c, 2 * c, pad_mode="reflect"),
                Conv(2 * c, c, pad_mode="reflect"),
            ]
        )
        self.final = Conv(c, 3, pad_mode="reflect")

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        x = features
        for conv in self.convs:
            x = diffcore.upsample_nearest2x(diffcore.relu(conv(x)))
        return torch.tanh(self.final(x))

    def decode(self, features: torch.Tensor, prior: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Apply predicted deltas on top of the prior; returns (image, delta)."""
        delta = self.forward(features)
        if delta.shape != prior.shape:
            raise ValueError(
                f"delta shape {tuple(delta.shape)} does not match prior {tuple(prior.shape)}"
            )
        return torch.clamp(diffcore.add(prior, delta), 0.0, 1.0), delta

    def zero_final_(self) -> None:
        """Zero the output layer so decoding becomes the identity on the prior."""
        with torch.no_grad():
            self.final.weight.zero_()
            self.final.bias.zero_()


class DomainDiscriminator(nn.Module):
    """Fully convolutional real-vs-stylized critic; emits a logit map.

    min_input guards the four stride-2 stages; gradient-verification
    harnesses may relax it to run the whole objective on tiny images.
    """

    MIN_INPUT = 64

    def __init__(self, base_width: int = 16, min_input: int = MIN_INPUT):
        super().__init__()
        self.min_input = min_input
        c = base_width
        self.convs = nn.ModuleList(
            [
                Conv(3, c, stride=2),
                Conv(c, 2 * c, stride=2),
                Conv(2 * c, 4 * c, stride=2),
                Conv(4 * c, 8 * c, stride=2),
            ]
        )
        self.head = Conv(8 * c, 1, k=1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"discriminator expects (N, 3, H, W), got {tuple(images.shape)}")
        if min(images.shape[-2:]) < self.min_input:
            raise ValueError(
                f"discriminator input must be at least {self.min_input} px, "
                f"got {tuple(images.shape[-2:])}"
            )
        x = images
        for conv in self.convs:
            x = diffcore.leaky_relu(conv(x))
        return self.head(x)


class PatchDiscriminator(nn.Module):
    """Scores a candidate patch against a reference set from one style.

    Candidate and references share one patch encoder; reference codes are
    mean-pooled, so the score cannot depend on reference order.
    """

    def __init__(self, base_width: int = 16):
        super().__init__()
        c = base_width
        self.enc = nn.ModuleList(
            [Conv(3, c), Conv(c, 2 * c, stride=2), Conv(2 * c, 4 * c, stride=2)]
        )
        self.mlp = nn.ModuleList([Linear(8 * c, 4 * c), Linear(4 * c, 1)])

    def encode_patches(self, patches: torch.Tensor) -> torch.Tensor:
        if patches.ndim != 4 or patches.shape[1] != 3:
            raise ValueError(f"expected (N, 3, p, p) patches, got {tuple(patches.shape)}")
        x = patches
        for conv in self.enc:
            x = diffcore.leaky_relu(conv(x))
        return diffcore.channel_mean(x)

    def forward(self, candidates: torch.Tensor, references: torch.Tensor) -> torch.Tensor:
        if references.ndim != 4 or references.shape[0] == 0:
            raise ValueError("reference set must be a nonempty (M, 3, p, p) stack")
        cand = self.encode_patches(candidates)
        ref = self.encode_patches(references).mean(dim=0, keepdim=True)
        joint = diffcore.concat([cand, ref.expand(cand.shape[0], -1)], axis=1)
        x = diffcore.leaky_relu(self.mlp[0](joint))
        return self.mlp[1](x).reshape(-1)


class StyleProjector(nn.Module):
    """Pyramid mean/std statistics -> unit-norm embedding."""

    def __init__(self, base_width: int = 16, proj_dim: int = 64, hidden: int = 128):
        super().__init__()
        stats_dim = 2 * (base_width * 15)
        self.mlp = nn.ModuleList([Linear(stats_dim, hidden), Linear(hidden, proj_dim)])

    def forward(self, pyr: FeaturePyramid) -> torch.Tensor:
        stats = []
        for lvl in pyr.levels:
            stats.append(diffcore.channel_mean(lvl))
            stats.append(diffcore.channel_std(lvl))
        x = diffcore.relu(self.mlp[0](diffcore.concat(stats, axis=1)))
        return l2_normalize_rows(self.mlp[1](x))


class ContentProjector(nn.Module):
    """Pooled deepest-level features -> unit-norm embedding."""

    def __init__(self, base_width: int = 16, proj_dim: int = 64, hidden: int = 128):
        super().__init__()
        self.mlp = nn.ModuleList([Linear(8 * base_width, hidden), Linear(hidden, proj_dim)])

    def forward(self, pyr: FeaturePyramid) -> torch.Tensor:
        x = diffcore.channel_mean(pyr.content_level)
        x = diffcore.relu(self.mlp[0](x))
        return l2_normalize_rows(self.mlp[1](x))


_MODULE_FIELDS = (
    "encoder",
    "transform",
    "decoder",
    "domain_disc",
    "patch_disc_simple",
    "patch_disc_complex",
    "style_proj",
    "content_proj",
)


@dataclasses.dataclass
class ModelParams:
    """Everything trainable (plus the frozen encoder) in one place."""

    encoder: Encoder
    transform: FeatureTransform
    decoder: DeltaDecoder
    domain_disc: DomainDiscriminator
    patch_disc_simple: PatchDiscriminator
    patch_disc_complex: PatchDiscriminator
    style_proj: StyleProjector
    content_proj: ContentProjector
    base_width: int
    proj_dim: int

    def modules(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in _MODULE_FIELDS}

    def generator_modules(self) -> list[nn.Module]:
        return [self.transform, self.decoder, self.style_proj, self.content_proj]

    def discriminator_modules(self) -> list[nn.Module]:
        return [self.domain_disc, self.patch_disc_simple, self.patch_disc_complex]

    def generator_parameters(self) -> list[nn.Parameter]:
        return [p for m in self.generator_modules() for p in m.parameters()]

    def discriminator_parameters(self) -> list[nn.Parameter]:
        return [p for m in self.discriminator_modules() for p in m.parameters()]

    def named_parameters(self) -> dict[str, nn.Parameter]:
        out = {}
        for mod_name, module in self.modules().items():
            for p_name, p in module.named_parameters():
                out[f"{mod_name}.{p_name}"] = p
        return out

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {
            name: p.detach().cpu().numpy().astype(np.float32, copy=True)
            for name, p in self.named_parameters().items()
        }

    def to_(self, dtype: torch.dtype) -> "ModelParams":
        for module in self.modules().values():
            module.to(dtype)
        return self


def build_model(
    base_width: int = 16,
    proj_dim: int = 64,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> ModelParams:
    """Construct and seed every module; the encoder comes out frozen."""
    gen = torch.Generator().manual_seed(seed)
    params = ModelParams(
        encoder=Encoder(base_width),
        transform=FeatureTransform(base_width),
        decoder=DeltaDecoder(base_width),
        domain_disc=DomainDiscriminator(base_width),
        patch_disc_simple=PatchDiscriminator(base_width),
        patch_disc_complex=PatchDiscriminator(base_width),
        style_proj=StyleProjector(base_width, proj_dim),
        content_proj=ContentProjector(base_width, proj_dim),
        base_width=base_width,
        proj_dim=proj_dim,
    )
    for name in _MODULE_FIELDS:
        _init_module(getattr(params, name), gen)
    params.encoder.requires_grad_(False)
    params.to_(dtype)
    return params


def save_model(params: ModelParams, path: str, extra: dict[str, np.ndarray] | None = None) -> None:
    """Serialize weights (plus optional optimizer/meta entries under their own names)."""
    arrays = params.named_arrays()
    arrays["meta.base_width"] = np.array(params.base_width, dtype=np.int64)
    arrays["meta.proj_dim"] = np.array(params.proj_dim, dtype=np.int64)
    if extra:
        for name in extra:
            if not name.startswith(("opt.", "meta.")):
                raise ValueError(f"extra entry {name!r} must live under 'opt.' or 'meta.'")
        arrays.update(extra)
    checkpoint.save_arrays(path, arrays)


def load_model(path: str, dtype: torch.dtype = torch.float32) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """Strictly load a model; returns (params, leftover opt./meta. entries).

    Every model weight must be present with the stored shape, and nothing
    outside the model weights, 'opt.' and 'meta.' namespaces is tolerated.
    """
    arrays = checkpoint.load_arrays(path)
    for key in ("meta.base_width", "meta.proj_dim"):
        if key not in arrays:
            raise checkpoint.MissingEntryError(f"{path}: missing entry {key!r}")
    params = build_model(
        base_width=int(arrays["meta.base_width"]),
        proj_dim=int(arrays["meta.proj_dim"]),
        seed=0,
        dtype=dtype,
    )
    expected = params.named_parameters()
    model_names = [n for n in arrays if not n.startswith(("opt.", "meta."))]
    checkpoint.check_exact_names(
        {n: arrays[n] for n in model_names}, list(expected), path
    )
    for name, p in expected.items():
        stored = arrays[name]
        if tuple(stored.shape) != tuple(p.shape):
            raise checkpoint.CheckpointError(
                f"{path}: entry {name!r} has shape {stored.shape}, model expects {tuple(p.shape)}"
            )
        with torch.no_grad():
            p.copy_(torch.from_numpy(stored.copy()).to(p.dtype))
    params.encoder.requires_grad_(False)
    leftovers = {n: a for n, a in arrays.items() if n.startswith(("opt.", "meta."))}
    return params, leftovers
