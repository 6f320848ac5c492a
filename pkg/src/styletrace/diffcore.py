"""Differentiable op catalog and gradient verification.

Reverse-mode differentiation is delegated to torch: the substrate array type
is torch.Tensor (data, shape, requires_grad, grad), and every op the networks
and losses use is routed through the wrappers below so the catalog stays the
single differentiable surface. Verification does not trust the same machinery
twice: grad_check compares autograd output against central finite differences
computed with nothing but arithmetic.

Float32 is the training dtype; gradient verification runs at float64, where
the quoted tolerances hold.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

STD_EPS = 1e-8


def to_tensor(img: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Adopt a (3, H, W) numpy image as a leaf tensor."""
    return torch.from_numpy(np.ascontiguousarray(img)).to(dtype)


def to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    pad_mode: str = "zero",
) -> torch.Tensor:
    """Same-padding 2-D convolution, stride 1 or 2, zero or reflect borders."""
    if x.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input, got shape {tuple(x.shape)}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d expects OIKK weight, got shape {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    k = weight.shape[-1]
    pad = k // 2
    if pad > 0:
        if pad_mode == "zero":
            x = F.pad(x, (pad, pad, pad, pad))
        elif pad_mode == "reflect":
            x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
        else:
            raise ValueError(f"unknown pad_mode {pad_mode!r}")
    return F.conv2d(x, weight, bias, stride=stride)


def upsample_nearest2x(x: torch.Tensor) -> torch.Tensor:
    if x.ndim != 4:
        raise ValueError(f"upsample expects NCHW input, got shape {tuple(x.shape)}")
    return F.interpolate(x, scale_factor=2, mode="nearest")


def avg_pool(x: torch.Tensor, k: int) -> torch.Tensor:
    if x.ndim != 4:
        raise ValueError(f"avg_pool expects NCHW input, got shape {tuple(x.shape)}")
    if x.shape[-2] % k or x.shape[-1] % k:
        raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by pool size {k}")
    return F.avg_pool2d(x, k)


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    return F.leaky_relu(x, slope)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax(x: torch.Tensor, axis: int) -> torch.Tensor:
    return torch.softmax(x, dim=axis)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return a + b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return a * b


def scale(x: torch.Tensor, s: float) -> torch.Tensor:
    return x * s


def concat(parts: Sequence[torch.Tensor], axis: int = 1) -> torch.Tensor:
    return torch.cat(list(parts), dim=axis)


def crop(x: torch.Tensor, y0: int, x0: int, size: int) -> torch.Tensor:
    """Square spatial crop of an NCHW (or CHW) tensor."""
    h, w = x.shape[-2], x.shape[-1]
    if y0 < 0 or x0 < 0 or y0 + size > h or x0 + size > w:
        raise ValueError(f"crop ({y0}, {x0}, {size}) outside ({h}, {w})")
    return x[..., y0 : y0 + size, x0 : x0 + size]


def channel_mean(x: torch.Tensor) -> torch.Tensor:
    """Spatial mean per channel of an NCHW tensor -> (N, C)."""
    if x.ndim != 4:
        raise ValueError(f"channel_mean expects NCHW input, got shape {tuple(x.shape)}")
    return x.mean(dim=(2, 3))


def channel_std(x: torch.Tensor, eps: float = STD_EPS) -> torch.Tensor:
    """Population std per channel, epsilon inside the sqrt -> (N, C)."""
    if x.ndim != 4:
        raise ValueError(f"channel_std expects NCHW input, got shape {tuple(x.shape)}")
    var = x.var(dim=(2, 3), unbiased=False)
    return torch.sqrt(var + eps)


def l2_norm(x: torch.Tensor) -> torch.Tensor:
    """Frobenius norm over all elements -> scalar per call."""
    return torch.linalg.vector_norm(x.reshape(-1))


OP_CATALOG: dict[str, Callable] = {
    "conv2d": conv2d,
    "upsample_nearest2x": upsample_nearest2x,
    "avg_pool": avg_pool,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scale": scale,
    "concat": concat,
    "crop": crop,
    "channel_mean": channel_mean,
    "channel_std": channel_std,
    "l2_norm": l2_norm,
}


def forward(op: str, *args, **kwargs) -> torch.Tensor:
    """Dispatch into the catalog by name; unknown ops are invalid arguments."""
    if op not in OP_CATALOG:
        raise ValueError(f"unknown op {op!r}; catalog has {sorted(OP_CATALOG)}")
    return OP_CATALOG[op](*args, **kwargs)


def backward(loss: torch.Tensor) -> None:
    """Reverse pass from a scalar; anything non-scalar is an invalid argument."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar, got shape {tuple(loss.shape)}")
    loss.backward()


@dataclasses.dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    checked: int

    def __str__(self) -> str:
        tag = "ok" if self.passed else "FAILED"
        return (
            f"grad_check {tag}: max rel error {self.max_rel_error:.3e} "
            f"at {self.worst_param}{list(self.worst_index)} over {self.checked} coords"
        )


def grad_check(
    fn: Callable[[Mapping[str, torch.Tensor]], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    tolerance: float,
    max_coords: int = 64,
    h: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central finite differences.

    fn maps the params dict to a scalar. Up to max_coords coordinates are
    sampled across all parameters; each is perturbed by +-h and the two
    evaluations happen under no_grad, so the check shares nothing with the
    reverse pass beyond the forward arithmetic itself. Relative error uses a
    small floor so exactly-zero gradients compare cleanly. Non-finite values
    anywhere abort with an explicit error naming the stage.
    """
    for name, p in params.items():
        if not p.is_floating_point():
            raise ValueError(f"param {name!r} is not floating point")
        p.requires_grad_(True)
        p.grad = None

    with warnings.catch_warnings():
        # Anomaly mode is the point here, not an accident worth warning about.
        warnings.filterwarnings("ignore", message="Anomaly Detection has been enabled")
        with torch.autograd.detect_anomaly():
            value = fn(params)
    if value.numel() != 1:
        raise ValueError(f"fn must return a scalar, got shape {tuple(value.shape)}")
    if not torch.isfinite(value):
        raise FloatingPointError("grad_check: forward value is non-finite")
    value.backward()

    grads = {}
    for name, p in params.items():
        g = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"grad_check: gradient of {name!r} is non-finite")
        grads[name] = g

    coords: list[tuple[str, tuple[int, ...]]] = []
    rng = np.random.default_rng(seed)
    total = sum(p.numel() for p in params.values())
    budget = min(max_coords, total)
    names = list(params)
    sizes = np.array([params[n].numel() for n in names])
    flat_picks = rng.choice(total, size=budget, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for pick in flat_picks:
        which = int(np.searchsorted(offsets, pick, side="right") - 1)
        name = names[which]
        local = int(pick - offsets[which])
        coords.append((name, np.unravel_index(local, tuple(params[name].shape))))

    max_rel = 0.0
    worst = (names[0], (0,) * max(params[names[0]].ndim, 1))
    with torch.no_grad():
        for name, idx in coords:
            p = params[name]
            keep = p[idx].item()
            p[idx] = keep + h
            f_plus = fn(params).item()
            p[idx] = keep - h
            f_minus = fn(params).item()
            p[idx] = keep
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(
                    f"grad_check: perturbed forward at {name}{list(idx)} is non-finite"
                )
            fd = (f_plus - f_minus) / (2.0 * h)
            an = grads[name][idx].item()
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-4)
            if rel > max_rel:
                max_rel = rel
                worst = (name, idx)

    for p in params.values():
        p.grad = None
    return GradCheckReport(
        passed=max_rel < tolerance,
        max_rel_error=max_rel,
        worst_param=worst[0],
        worst_index=tuple(int(i) for i in worst[1]),
        checked=len(coords),
    )
