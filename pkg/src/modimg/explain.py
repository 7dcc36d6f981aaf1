"""Attention-based saliency over images and tokens, exported as overlays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .textmeta import BpeModel, PAD_ID, token_strings


@dataclass
class SaliencyMap:
    grid: np.ndarray  # (g, g) in [0, 1], max 1
    upsampled: np.ndarray  # (H, W) in [0, 1]


def _layer_matrix(layer: np.ndarray) -> np.ndarray:
    """Head-averaged attention matrix for one layer; accepts (heads, T, T) or
    (heads, 1, T) CLS-only rows."""
    arr = np.asarray(layer, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("attention layer must be (heads, rows, cols)")
    return arr.mean(axis=0)


def _minmax(grid: np.ndarray) -> np.ndarray:
    lo, hi = grid.min(), grid.max()
    if hi - lo < 1e-12:
        return np.ones_like(grid)
    return (grid - lo) / (hi - lo)


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    g_h, g_w = grid.shape
    ys = (np.arange(height) + 0.5) * g_h / height - 0.5
    xs = (np.arange(width) + 0.5) * g_w / width - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, g_h - 1)
    y1 = np.clip(y0 + 1, 0, g_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, g_w - 1)
    x1 = np.clip(x0 + 1, 0, g_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - wx) + grid[np.ix_(y0, x1)] * wx
    bot = grid[np.ix_(y1, x0)] * (1 - wx) + grid[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def cls_attention_map(
    stack: list[np.ndarray],
    image_size: int,
    mode: str = "last_layer_mean",
) -> SaliencyMap:
    """CLS-to-patch saliency from a recorded attention stack.

    last_layer_mean: head-averaged CLS row of the final layer.
    rollout: layerwise product of (0.5 A + 0.5 I) row-normalized; requires
    full square attention (global encoders only).
    """
    if not stack:
        raise ValueError("empty attention stack")
    if mode == "last_layer_mean":
        mat = _layer_matrix(stack[-1])
        cls_row = mat[0] if mat.shape[0] > 1 else mat.reshape(-1)
        patch_weights = cls_row[1:]
    elif mode == "rollout":
        mats = [_layer_matrix(layer) for layer in stack]
        t = mats[0].shape[-1]
        for m in mats:
            if m.shape != (t, t):
                raise ValueError("rollout is undefined for windowed attention; use last_layer_mean")
        rollout = np.eye(t)
        for m in mats:
            mixed = 0.5 * m + 0.5 * np.eye(t)
            mixed = mixed / mixed.sum(axis=1, keepdims=True)
            rollout = mixed @ rollout
        patch_weights = rollout[0, 1:]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    g = int(np.sqrt(patch_weights.size))
    if g * g != patch_weights.size:
        raise ValueError("patch count is not a square grid")
    grid = _minmax(patch_weights.reshape(g, g))
    return SaliencyMap(grid=grid, upsampled=_bilinear_upsample(grid, image_size, image_size))


def _jet(t: float) -> tuple[int, int, int]:
    r = min(max(1.5 - abs(4 * t - 3.0), 0.0), 1.0)
    g = min(max(1.5 - abs(4 * t - 2.0), 0.0), 1.0)
    b = min(max(1.5 - abs(4 * t - 1.0), 0.0), 1.0)
    return round(255 * r), round(255 * g), round(255 * b)


# fixed 256-entry heat table so overlays are byte-stable
HEAT_TABLE = np.array([_jet(i / 255.0) for i in range(256)], dtype=np.float64)


def overlay(image: np.ndarray, saliency: SaliencyMap, alpha: float = 0.5) -> np.ndarray:
    """Blend the heat-colored saliency onto the image; alpha 0 or an all-zero
    map returns the original bytes."""
    m = saliency.upsampled
    if m.shape != image.shape[:2]:
        raise ValueError("saliency map does not match image size")
    heat = HEAT_TABLE[np.clip(np.round(m * 255).astype(int), 0, 255)]
    weight = (alpha * m)[:, :, None]
    blended = (1.0 - weight) * image.astype(np.float64) + weight * heat
    return np.clip(np.round(blended), 0, 255).astype(np.uint8)


def text_attention(
    stack: list[np.ndarray], ids: list[int], model: BpeModel
) -> list[tuple[str, float]]:
    """Head-averaged last-layer CLS attention over non-PAD tokens,
    renormalized to sum 1; PAD weights are exactly 0."""
    mat = _layer_matrix(stack[-1])
    cls_row = mat[0] if mat.shape[0] > 1 else mat.reshape(-1)
    weights = np.asarray(cls_row[: len(ids)], dtype=np.float64).copy()
    pad = np.array([i == PAD_ID for i in ids])
    weights[pad] = 0.0
    total = weights.sum()
    if total > 0:
        weights = weights / total
    names = token_strings(ids, model)
    return list(zip(names, weights.tolist()))


def cell_mean_saliency(
    saliency: SaliencyMap, rows: int, cols: int
) -> np.ndarray:
    """Mean upsampled saliency per layout grid cell, as a (rows, cols) array."""
    h, w = saliency.upsampled.shape
    out = np.zeros((rows, cols))
    for r in range(rows):
        for c in range(cols):
            y0, y1 = r * h // rows, (r + 1) * h // rows
            x0, x1 = c * w // cols, (c + 1) * w // cols
            out[r, c] = saliency.upsampled[y0:y1, x0:x1].mean()
    return out
