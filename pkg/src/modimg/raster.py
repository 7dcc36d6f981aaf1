"""Deterministic 1-px rasterization onto RGB canvases.

Everything here is integer Bresenham on uint8 numpy buffers: no
anti-aliasing, no floating-point pixel coverage, so two runs (or two
threads) always produce byte-identical images. All draw calls accept an
optional clip rectangle; pixels falling outside it are silently dropped,
which is what guarantees that a panel never writes into its neighbours.
"""

from __future__ import annotations

import numpy as np

Color = tuple[int, int, int]
# inclusive pixel rectangle (x0, y0, x1, y1)
Rect = tuple[int, int, int, int]

WHITE: Color = (255, 255, 255)
RED: Color = (255, 0, 0)


def new_canvas(size: int, background: Color = WHITE) -> np.ndarray:
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[:, :] = background
    return canvas


def full_rect(canvas: np.ndarray) -> Rect:
    h, w = canvas.shape[:2]
    return (0, 0, w - 1, h - 1)


def _inside(x: int, y: int, rect: Rect) -> bool:
    return rect[0] <= x <= rect[2] and rect[1] <= y <= rect[3]


def _clip_to_canvas(canvas: np.ndarray, rect: Rect) -> Rect:
    """Intersect a clip rect with the canvas bounds so that a rect hanging
    off the edge can never index outside the buffer."""
    h, w = canvas.shape[:2]
    return (max(rect[0], 0), max(rect[1], 0), min(rect[2], w - 1), min(rect[3], h - 1))


def put_pixel(canvas: np.ndarray, x: int, y: int, color: Color, rect: Rect | None = None) -> None:
    if rect is None:
        rect = full_rect(canvas)
    else:
        rect = _clip_to_canvas(canvas, rect)
    if _inside(x, y, rect):
        canvas[y, x] = color


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Bresenham pixel chain from (x0,y0) to (x1,y1), both endpoints included."""
    pixels = []
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pixels.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return pixels


def rasterize_polyline(
    canvas: np.ndarray,
    points: list[tuple[int, int]],
    color: Color,
    rect: Rect | None = None,
) -> np.ndarray:
    """Draw straight Bresenham segments between consecutive points.

    A single point draws nothing (markers are a separate op). Later draws
    overwrite earlier pixels.
    """
    if rect is None:
        rect = full_rect(canvas)
    else:
        rect = _clip_to_canvas(canvas, rect)
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        for x, y in line_pixels(x0, y0, x1, y1):
            if _inside(x, y, rect):
                canvas[y, x] = color
    return canvas


def draw_marker(
    canvas: np.ndarray,
    center: tuple[int, int],
    color: Color,
    rect: Rect | None = None,
) -> np.ndarray:
    """5x5 plus-shaped observation marker, clipped to the panel."""
    if rect is None:
        rect = full_rect(canvas)
    else:
        rect = _clip_to_canvas(canvas, rect)
    cx, cy = center
    for k in (-2, -1, 0, 1, 2):
        if _inside(cx + k, cy, rect):
            canvas[cy, cx + k] = color
        if k != 0 and _inside(cx, cy + k, rect):
            canvas[cy + k, cx] = color
    return canvas


def draw_hline(
    canvas: np.ndarray, y: int, color: Color, rect: Rect | None = None
) -> np.ndarray:
    if rect is None:
        rect = full_rect(canvas)
    else:
        rect = _clip_to_canvas(canvas, rect)
    if rect[1] <= y <= rect[3]:
        canvas[y, rect[0] : rect[2] + 1] = color
    return canvas


def panel_rect(canvas_size: int, rows: int, cols: int, cell: tuple[int, int], margin: int = 2) -> Rect:
    """Inclusive interior rectangle of one grid cell, inset by the margin."""
    row, col = cell
    x0 = col * canvas_size // cols
    x1 = (col + 1) * canvas_size // cols - 1
    y0 = row * canvas_size // rows
    y1 = (row + 1) * canvas_size // rows - 1
    return (x0 + margin, y0 + margin, x1 - margin, y1 - margin)
