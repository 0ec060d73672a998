from __future__ import annotations

import math

import pytest

from asyncpca import IoFailure, Series, TypeMismatch, line_chart
from asyncpca.svg import nice_ticks


def test_chart_is_deterministic(tmp_path):
    s = [Series("run a", [0, 1, 2, 3], [0.1, 0.4, 0.2, 0.9]),
         Series("run b", [0, 1, 2, 3], [0.3, 0.1, 0.5, 0.6],
                band_lo=[0.2, 0.0, 0.4, 0.5], band_hi=[0.4, 0.2, 0.6, 0.7])]
    one = line_chart(s, title="pair", xlabel="t", ylabel="value")
    two = line_chart(s, title="pair", xlabel="t", ylabel="value")
    assert one == two
    path = tmp_path / "chart.svg"
    line_chart(s, title="pair", path=path)
    assert path.read_text().startswith("<svg ")
    assert path.read_text().rstrip().endswith("</svg>")


def test_single_point_renders_marker():
    text = line_chart([Series("dot", [2.0], [5.0])])
    assert "<circle " in text
    assert "<polyline " not in text


def test_band_renders_polygon_under_line():
    s = Series("banded", [0, 1, 2], [1.0, 2.0, 1.5],
               band_lo=[0.8, 1.7, 1.2], band_hi=[1.2, 2.3, 1.8])
    text = line_chart([s])
    assert text.index("<polygon ") < text.index("<polyline ")
    assert 'fill-opacity="0.15"' in text


def test_markup_escaping():
    text = line_chart([Series("a < b & c", [0, 1], [0, 1])],
                      title="x > y", xlabel="<t>")
    assert "a &lt; b &amp; c" in text
    assert "x &gt; y" in text
    assert "<t>" not in text


def test_non_finite_data_rejected():
    with pytest.raises(TypeMismatch):
        line_chart([Series("bad", [0, 1], [0.0, math.nan])])
    with pytest.raises(TypeMismatch):
        line_chart([Series("bad", [0, math.inf], [0.0, 1.0])])
    with pytest.raises(TypeMismatch):
        line_chart([])


def test_series_validation():
    with pytest.raises(TypeMismatch):
        Series("empty", [], [])
    with pytest.raises(TypeMismatch):
        Series("ragged", [0, 1], [0.0])
    with pytest.raises(TypeMismatch):
        Series("half band", [0, 1], [0, 1], band_lo=[0, 1])
    with pytest.raises(TypeMismatch):
        Series("short band", [0, 1], [0, 1], band_lo=[0], band_hi=[0])


def test_nice_ticks_cover_range_with_round_steps():
    ticks = nice_ticks(0.0, 10.0)
    assert ticks[0] >= 0.0 and ticks[-1] <= 10.0 + 1e-9
    steps = {round(b - a, 9) for a, b in zip(ticks, ticks[1:])}
    assert len(steps) == 1
    step = steps.pop()
    mant = step / 10 ** math.floor(math.log10(step))
    assert round(mant, 6) in (1.0, 2.0, 5.0)
    # degenerate and negative ranges still produce ticks
    assert nice_ticks(3.0, 3.0)
    assert any(t == 0.0 for t in nice_ticks(-1.0, 1.0))
    with pytest.raises(TypeMismatch):
        nice_ticks(0.0, math.inf)


def test_write_failure_raises_io_error(tmp_path):
    target = tmp_path / "missing" / "chart.svg"
    with pytest.raises(IoFailure):
        line_chart([Series("s", [0, 1], [0, 1])], path=target)
