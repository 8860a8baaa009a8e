import xml.etree.ElementTree as ET

import pytest

from vectrisk import ValidationError
from vectrisk.chart import emit_frequency_chart

SVG_NS = "{http://www.w3.org/2000/svg}"


def _bars_per_panel(root):
    counts = []
    for g in root.iter(f"{SVG_NS}g"):
        counts.append(len([r for r in g.iter(f"{SVG_NS}rect")
                           if r.get("class") == "band"]))
    return counts


def test_chart_structure():
    svg = emit_frequency_chart(["V1", "V2", "V3"], [100, 90, 40], [100, 10, 0],
                               w=100)
    root = ET.fromstring(svg)  # well-formed XML
    assert root.tag == f"{SVG_NS}svg"
    assert _bars_per_panel(root) == [3, 3]
    thresholds = [l for l in root.iter(f"{SVG_NS}line")
                  if l.get("class") == "threshold"]
    assert len(thresholds) == 2


def test_chart_bar_count_matches_variables():
    names = [f"g{i}" for i in range(136)]
    pct = [i % 101 for i in range(136)]
    svg = emit_frequency_chart(names, pct, pct, w=80)
    root = ET.fromstring(svg)
    assert _bars_per_panel(root) == [136, 136]


def test_chart_bar_heights_scale_with_percentages():
    svg = emit_frequency_chart(["a", "b"], [100, 50], [0, 25], w=100)
    root = ET.fromstring(svg)
    panels = [g for g in root.iter(f"{SVG_NS}g") if g.get("class", "").startswith("panel")]
    left = [r for r in panels[0].iter(f"{SVG_NS}rect") if r.get("class") == "band"]
    h = [float(r.get("height")) for r in left]
    assert h[0] == pytest.approx(2 * h[1], rel=1e-6)


def test_chart_rejects_bad_input():
    with pytest.raises(ValidationError, match="empty"):
        emit_frequency_chart([], [], [], w=100)
    with pytest.raises(ValidationError):
        emit_frequency_chart(["a"], [50], [50, 60], w=100)
    with pytest.raises(ValidationError):
        emit_frequency_chart(["a"], [150], [50], w=100)


def test_chart_escapes_names():
    svg = emit_frequency_chart(["a<b>&c"], [50], [50], w=100)
    ET.fromstring(svg)
    assert "a<b>&c" not in svg
