import numpy as np
from hypothesis import given, strategies as st

from modimg import raster

coord = st.integers(min_value=0, max_value=63)


class TestLinePixels:
    def test_horizontal(self):
        # [TRIVIAL]
        assert raster.line_pixels(1, 5, 4, 5) == [(1, 5), (2, 5), (3, 5), (4, 5)]

    def test_vertical(self):
        assert raster.line_pixels(2, 1, 2, 3) == [(2, 1), (2, 2), (2, 3)]

    def test_diagonal(self):
        assert raster.line_pixels(0, 0, 3, 3) == [(0, 0), (1, 1), (2, 2), (3, 3)]

    def test_single_point(self):
        assert raster.line_pixels(7, 7, 7, 7) == [(7, 7)]

    def test_known_shallow_line(self):
        # [DERIVED] hand-traced Bresenham for (0,0)->(5,2):
        # err walk gives y increments after x=1 and x=3
        assert raster.line_pixels(0, 0, 5, 2) == [
            (0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2),
        ]

    @given(coord, coord, coord, coord)
    def test_endpoints_and_connectivity(self, x0, y0, x1, y1):
        pixels = raster.line_pixels(x0, y0, x1, y1)
        assert pixels[0] == (x0, y0)
        assert pixels[-1] == (x1, y1)
        for (ax, ay), (bx, by) in zip(pixels, pixels[1:]):
            assert max(abs(ax - bx), abs(ay - by)) == 1  # 8-connected

    @given(coord, coord, coord, coord)
    def test_length_and_bounds(self, x0, y0, x1, y1):
        pixels = raster.line_pixels(x0, y0, x1, y1)
        assert len(pixels) == max(abs(x1 - x0), abs(y1 - y0)) + 1
        for x, y in pixels:
            assert min(x0, x1) <= x <= max(x0, x1)
            assert min(y0, y1) <= y <= max(y0, y1)


class TestPolyline:
    def test_draws_color_inside_rect_only(self):
        canvas = raster.new_canvas(32)
        rect = (8, 8, 15, 15)
        raster.rasterize_polyline(canvas, [(0, 0), (31, 31)], (10, 20, 30), rect)
        colored = np.argwhere((canvas != 255).any(axis=2))
        assert len(colored) > 0
        for y, x in colored:
            assert rect[0] <= x <= rect[2] and rect[1] <= y <= rect[3]

    def test_single_point_draws_nothing(self):
        canvas = raster.new_canvas(16)
        raster.rasterize_polyline(canvas, [(5, 5)], (0, 0, 0))
        assert (canvas == 255).all()

    def test_later_draw_overwrites(self):
        canvas = raster.new_canvas(16)
        raster.rasterize_polyline(canvas, [(0, 4), (15, 4)], (1, 1, 1))
        raster.rasterize_polyline(canvas, [(8, 0), (8, 15)], (2, 2, 2))
        assert tuple(canvas[4, 8]) == (2, 2, 2)


class TestMarker:
    def test_plus_shape(self):
        # [TRIVIAL] 5x5 plus = 9 pixels: horizontal and vertical arms
        canvas = raster.new_canvas(16)
        raster.draw_marker(canvas, (8, 8), (0, 0, 0))
        colored = {(x, y) for y, x in np.argwhere((canvas != 255).any(axis=2))}
        expected = {(8 + k, 8) for k in range(-2, 3)} | {(8, 8 + k) for k in range(-2, 3)}
        assert colored == expected

    def test_clipped_at_rect_edge(self):
        canvas = raster.new_canvas(16)
        rect = (4, 4, 11, 11)
        raster.draw_marker(canvas, (4, 4), (0, 0, 0), rect)
        colored = {(x, y) for y, x in np.argwhere((canvas != 255).any(axis=2))}
        assert colored == {(4, 4), (5, 4), (6, 4), (4, 5), (4, 6)}


class TestHline:
    def test_spans_rect_width(self):
        canvas = raster.new_canvas(16)
        rect = (2, 2, 9, 9)
        raster.draw_hline(canvas, 5, raster.RED, rect)
        row = canvas[5]
        assert (row[2:10] == (255, 0, 0)).all()
        assert (row[:2] == 255).all() and (row[10:] == 255).all()

    def test_outside_rect_is_noop(self):
        canvas = raster.new_canvas(16)
        raster.draw_hline(canvas, 12, raster.RED, (2, 2, 9, 9))
        assert (canvas == 255).all()


class TestPanelRect:
    def test_six_by_six_384(self):
        # [DERIVED] 384/6 = 64 per cell, margin 2: cell (0,0) -> (2,2,61,61)
        assert raster.panel_rect(384, 6, 6, (0, 0)) == (2, 2, 61, 61)
        assert raster.panel_rect(384, 6, 6, (5, 5)) == (322, 322, 381, 381)

    @given(
        st.integers(min_value=1, max_value=8),
        st.integers(min_value=1, max_value=8),
        st.sampled_from([48, 96, 384]),
    )
    def test_panels_disjoint_and_inside_canvas(self, rows, cols, size):
        rects = [
            raster.panel_rect(size, rows, cols, (r, c), margin=2)
            for r in range(rows)
            for c in range(cols)
        ]
        live = [r for r in rects if r[2] >= r[0] and r[3] >= r[1]]
        for x0, y0, x1, y1 in live:
            assert 0 <= x0 and x1 <= size - 1 and 0 <= y0 and y1 <= size - 1
        for i, a in enumerate(live):
            for b in live[i + 1 :]:
                x_overlap = a[0] <= b[2] and b[0] <= a[2]
                y_overlap = a[1] <= b[3] and b[1] <= a[3]
                assert not (x_overlap and y_overlap)
