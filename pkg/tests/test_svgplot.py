import xml.etree.ElementTree as ET

import numpy as np

from scos.analysis import PRE_LABEL, SweepPoint, fit_threshold
from scos.svgplot import scatter_hinge_figure, waveform_figure


def test_waveform_figure_well_formed_and_deterministic():
    t = np.arange(120) / 60.0
    series = [
        ("flow", list(np.sin(2 * np.pi * 1.1 * t))),
        ("volume", list(np.cos(2 * np.pi * 1.1 * t))),
    ]
    svg = waveform_figure(t, series, "demo")
    ET.fromstring(svg)
    assert svg == waveform_figure(t, series, "demo")
    assert "flow" in svg and "volume" in svg


def test_scatter_hinge_figure_with_and_without_fit():
    levels = np.geomspace(20, 500, 10)
    values = np.clip(0.5 - 0.1 * np.log10(levels), 0.0, 1.0)
    pts = [SweepPoint(float(l), float(v), 0.5, PRE_LABEL) for l, v in zip(levels, values)]
    fit = fit_threshold(pts)
    svg = scatter_hinge_figure([
        {"title": "with fit", "levels": levels, "values": values, "fit": fit},
        {"title": "no fit", "levels": levels, "values": values},
    ])
    ET.fromstring(svg)
    assert "threshold" in svg
    assert svg.count("<circle") == 20
