from __future__ import annotations

import numpy as np
import pytest


def random_image(rng: np.random.Generator, h: int = 16, w: int = 16) -> np.ndarray:
    return rng.random((3, h, w))


def two_tone_image(h: int = 16, w: int = 16) -> np.ndarray:
    """Left half dark red, right half bright blue; hard vertical edge."""
    img = np.zeros((3, h, w))
    img[0, :, : w // 2] = 0.2
    img[2, :, w // 2 :] = 0.9
    return img


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def _ramp(h: int, w: int, horizontal: bool) -> np.ndarray:
    line = np.linspace(0.15, 0.85, w if horizontal else h)
    return np.tile(line, (h, 1)) if horizontal else np.tile(line[:, None], (1, w))


def _disk(h: int, w: int, cy: int, cx: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(float)


def overfit_images(size: int = 64) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Two content and two style images with smooth, learnable structure.

    Ramps and disks for content, gradients and stripes for style; pure noise
    images stall the overfit-convergence checks that use this fixture.
    """
    h = w = size
    c0 = np.stack([_ramp(h, w, True), 0.3 + 0.4 * _disk(h, w, 20, 20, 10), _ramp(h, w, False)])
    c1 = np.stack([_ramp(h, w, False), _ramp(h, w, True), 0.2 + 0.5 * _disk(h, w, 44, 40, 14)])
    yy, xx = np.mgrid[0:h, 0:w]
    diag = (yy + xx) / (2 * size - 2)
    stripes = 0.5 + 0.3 * np.sin(2 * np.pi * xx / 16)
    s0 = np.stack([0.7 * np.ones((h, w)), 0.2 + 0.5 * diag, 0.25 * np.ones((h, w))])
    s1 = np.stack([0.15 + 0.2 * diag, 0.4 * np.ones((h, w)), 0.8 * stripes])
    clip = lambda imgs: [np.clip(i, 0.0, 1.0) for i in imgs]
    return clip([c0, c1]), clip([s0, s1])


def write_overfit_dataset(root, size: int = 64) -> tuple[str, str]:
    """Save the overfit images under root; returns the two manifest paths."""
    from styletrace import imgproc

    contents, styles = overfit_images(size)
    root = str(root)
    for i, img in enumerate(contents):
        imgproc.save_image(img, f"{root}/content_{i}.png")
    for i, img in enumerate(styles):
        imgproc.save_image(img, f"{root}/style_{i}.png")
    c_manifest = f"{root}/contents.txt"
    s_manifest = f"{root}/styles.txt"
    with open(c_manifest, "w") as fh:
        fh.write("".join(f"content_{i}.png\n" for i in range(len(contents))))
    with open(s_manifest, "w") as fh:
        fh.write("".join(f"style_{i}.png\n" for i in range(len(styles))))
    return c_manifest, s_manifest
