from __future__ import annotations

import math

import pytest

from contactgrad.svg import emit_svg, render_svg


def test_single_point_is_a_dot():
    svg = render_svg([([1.0], [2.0])], ["one"])
    assert svg.count("<circle") == 1 and "<polyline" not in svg


def test_empty_series_is_an_error():
    with pytest.raises(ValueError):
        render_svg([], [])
    with pytest.raises(ValueError):
        render_svg([([], [])], ["empty"])


def test_two_series_two_legend_entries():
    svg = render_svg([([0, 1, 2], [0, 1, 4]), ([0, 1, 2], [1, 1, 1])], ["a", "b"])
    assert svg.count('class="legend"') == 2
    assert svg.count("<polyline") == 2


def test_unequal_lengths_rejected():
    with pytest.raises(ValueError):
        render_svg([([0, 1], [0]), ([0, 1], [1, 2])], ["a", "b"])
    with pytest.raises(ValueError):
        render_svg([([0, 1], [0, 1]), ([0], [1])], ["a", "b"])
    with pytest.raises(ValueError):
        render_svg([([0, 1], [0, 1])], ["a", "b"])


def test_nan_breaks_the_line():
    svg = render_svg([([0, 1, 2, 3, 4], [0, 1, math.nan, 3, 4])], ["gap"])
    assert svg.count("<polyline") == 2


def test_labels_are_escaped():
    svg = render_svg([([0, 1], [0, 1])], ["a<b & c"], title="x < y")
    assert "a&lt;b &amp; c" in svg and "x &lt; y" in svg


def test_emit_is_byte_deterministic(tmp_path):
    series = [([0.0, 0.5, 1.0], [1.0, -2.0, 3.0])]
    a = emit_svg(series, ["s"], tmp_path / "a.svg", title="t", xlabel="x", ylabel="y")
    b = emit_svg(series, ["s"], tmp_path / "b.svg", title="t", xlabel="x", ylabel="y")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().startswith("<svg") and a.read_text().rstrip().endswith("</svg>")
