"""Encoding, translation and loss evaluation on uint8 image batches."""
from __future__ import annotations

import numpy as np

from .model import (
    LossBreakdown,
    UnitModel,
    build_encoder_graph,
    build_generator_graph,
    build_loss_graph,
    build_translate_graph,
    latent_shape,
)

CHUNK = 64
DIRECTIONS = {"A2B": ("a", "b"), "B2A": ("b", "a"), "A2A": ("a", "a"), "B2B": ("b", "b")}


def as_batch(x, size=None):
    """Accept one HxWx3 image or an NxHxWx3 stack; return (batch, was_single)."""
    arr = np.asarray(x)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected HxWx3 or NxHxWx3 images, got shape {arr.shape}")
    if size is not None and arr.shape[1:3] != (size, size):
        raise ValueError(f"image size {arr.shape[1]}x{arr.shape[2]} does not match model size {size}x{size}")
    return arr, single


def to_unit(images) -> np.ndarray:
    """uint8 NHWC -> float32 NCHW in [-1, 1]."""
    x = np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x / np.float32(127.5) - np.float32(1.0))


def from_unit(x: np.ndarray) -> np.ndarray:
    """float NCHW in [-1, 1] -> uint8 NHWC, round half to even."""
    v = (np.asarray(x, dtype=np.float64) + 1.0) * 127.5
    v = np.clip(np.rint(v), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(v.transpose(0, 2, 3, 1))


def _side(side):
    s = str(side).lower()
    if s not in ("a", "b"):
        raise ValueError(f"domain must be 'A' or 'B', got {side!r}")
    return s


def encode(model: UnitModel, x, side="A", noise="zero", rng=None):
    """Return (mu, z) latent arrays for a batch (or single image)."""
    side = _side(side)
    if noise not in ("zero", "sample"):
        raise ValueError(f"noise must be 'zero' or 'sample', got {noise!r}")
    if noise == "sample" and rng is None:
        raise ValueError("noise='sample' needs an rng")
    batch, single = as_batch(x, model.image_size)
    mus = []
    for i in range(0, len(batch), CHUNK):
        part = batch[i : i + CHUNK]
        g = model.graph(("enc", side, len(part)), lambda: build_encoder_graph(model, side, len(part)))
        mus.append(g.forward({"x": to_unit(part)})["mu"].copy())
    mu = np.concatenate(mus)
    if noise == "sample":
        z = mu + rng.standard_normal(mu.shape).astype(np.float32)
    else:
        z = mu.copy()
    if single:
        return mu[0], z[0]
    return mu, z


def decode(model: UnitModel, z, side="A") -> np.ndarray:
    side = _side(side)
    z = np.asarray(z, dtype=np.float32)
    single = z.ndim == 3
    if single:
        z = z[None]
    if z.shape[1:] != latent_shape(model, 1)[1:]:
        raise ValueError(f"latent shape {z.shape[1:]} does not match {latent_shape(model, 1)[1:]}")
    out = []
    for i in range(0, len(z), CHUNK):
        part = z[i : i + CHUNK]
        g = model.graph(("gen", side, len(part)), lambda: build_generator_graph(model, side, len(part)))
        out.append(from_unit(g.forward({"z": part})["image"]))
    imgs = np.concatenate(out)
    return imgs[0] if single else imgs


def _run(model, x, source, target):
    batch, single = as_batch(x, model.image_size)
    out = []
    for i in range(0, len(batch), CHUNK):
        part = batch[i : i + CHUNK]
        n = len(part)
        g = model.graph(("tr", source, target, n), lambda: build_translate_graph(model, source, target, n))
        eps = np.zeros(latent_shape(model, n), np.float32)
        out.append(from_unit(g.forward({"x": to_unit(part), "eps": eps})["image"]))
    imgs = np.concatenate(out)
    return imgs[0] if single else imgs


def translate(model: UnitModel, x, direction="A2B") -> np.ndarray:
    """Cross-domain translation with zero latent noise."""
    key = str(direction).upper().replace("->", "2").replace("→", "2")
    if key not in ("A2B", "B2A"):
        raise ValueError(f"direction must be 'A2B' or 'B2A', got {direction!r}")
    return _run(model, x, *DIRECTIONS[key])


def reconstruct(model: UnitModel, x, domain="A") -> np.ndarray:
    s = _side(domain)
    return _run(model, x, s, s)


def cycle(model: UnitModel, x, domain="A") -> np.ndarray:
    """Full cycle, e.g. A -> Z -> B -> Z -> A, with zero noise."""
    s = _side(domain)
    other = "b" if s == "a" else "a"
    return _run(model, _run(model, x, s, other), other, s)


def draw_noise(model: UnitModel, rng: np.random.Generator, n=1) -> dict[str, np.ndarray]:
    shape = latent_shape(model, n)
    return {k: rng.standard_normal(shape).astype(np.float32) for k in ("eps_a", "eps_b", "eps_aba", "eps_bab")}


def compute_loss(model: UnitModel, batch_a, batch_b, rng=None, noise=None) -> LossBreakdown:
    """Evaluate every loss component on one pair of uint8 batches.

    Latent noise is drawn from ``rng`` unless ``noise`` supplies the four
    arrays explicitly (``rng=None`` and no ``noise`` means zero noise).
    """
    a, _ = as_batch(batch_a, model.image_size)
    b, _ = as_batch(batch_b, model.image_size)
    if len(a) != len(b) or len(a) == 0:
        raise ValueError("batches must be non-empty and of equal length")
    n = len(a)
    if noise is None:
        if rng is None:
            noise = {k: np.zeros(latent_shape(model, n), np.float32)
                     for k in ("eps_a", "eps_b", "eps_aba", "eps_bab")}
        else:
            noise = draw_noise(model, rng, n)
    g = model.graph(("loss", n), lambda: build_loss_graph(model, n))
    out = g.forward({"xa": to_unit(a), "xb": to_unit(b), **noise})
    return LossBreakdown.from_outputs(out)
