"""Structural checks on the scenario SVG figure."""

import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest

from autobasal.cohort import Cohort, PopulationConfig, VirtualPatient
from autobasal.estimate import EstimatorConfig
from autobasal.figures import render_scenario_figure, write_scenario_figure
from autobasal.model import POPULATION
from autobasal.scenario import (
    ClinicalTargets,
    PipelineConfig,
    ScenarioResult,
    ScenarioSpec,
    run_patient,
    run_scenario,
    summarize,
)

SHORT = ScenarioSpec("short", closed_loop_hours=6.0, injection_days=1)
TARGETS = ClinicalTargets()


def elements(svg_text, tag):
    root = ET.fromstring(svg_text)
    ns = "{http://www.w3.org/2000/svg}"
    return list(root.iter(f"{ns}{tag}"))


def by_class(svg_text, tag, cls):
    return [e for e in elements(svg_text, tag) if e.get("class") == cls]


@pytest.fixture(scope="module")
def short_result(small_cohort):
    return run_scenario(SHORT, small_cohort)


@pytest.fixture(scope="module")
def single_noiseless_result():
    patient = VirtualPatient(0, POPULATION, 90.0, 0.0, 0.0, 7)
    spec = ScenarioSpec("solo", closed_loop_hours=48.0, injection_days=5)
    pipeline = PipelineConfig(estimator=EstimatorConfig(r_cgm=0.16))
    res = run_patient(patient, spec, pipeline)
    return ScenarioResult(spec=spec, results=[res], summary=summarize(spec, [res]))


class TestStructure:
    def test_deterministic_and_file_matches_render(self, tmp_path, short_result):
        a = render_scenario_figure(short_result, TARGETS)
        b = render_scenario_figure(short_result, TARGETS)
        assert a == b
        path = tmp_path / "figure.svg"
        write_scenario_figure(path, short_result, TARGETS)
        assert path.read_text() == a

    def test_panel_inventory(self, short_result):
        svg = render_scenario_figure(short_result, TARGETS)
        n_ok = sum(r.ok for r in short_result.results)
        band, = by_class(svg, "rect", "target-band")
        assert float(band.get("height")) > 0
        thresh, = by_class(svg, "line", "hypo-threshold")
        assert thresh.get("stroke-dasharray")
        traces = [e for e in elements(svg, "polyline")
                  if e.get("class") in ("trace", "trace hypo")]
        assert len(traces) == n_ok
        assert len(by_class(svg, "polyline", "infusion")) == n_ok
        # five patients is enough for both dose boxes
        assert len(by_class(svg, "rect", "dose-est-box")) == 1
        assert len(by_class(svg, "rect", "dose-true-box")) == 1
        title, = by_class(svg, "text", "figure-title")
        assert title.text.startswith("scenario short: 6 h closed loop")

    def test_hypo_patients_get_their_own_style(self, short_result):
        # flag one currently-safe patient and expect exactly one more
        # highlighted trajectory than before
        base = sum(r.metrics.hypo_flag for r in short_result.results)
        n = len(short_result.results)
        assert base < n, "need at least one non-hypo patient to rig"
        svg0 = render_scenario_figure(short_result, TARGETS)
        assert len(by_class(svg0, "polyline", "trace hypo")) == base
        flagged_once = list(short_result.results)
        for i, r in enumerate(flagged_once):
            if not r.metrics.hypo_flag:
                flagged_once[i] = replace(r, metrics=replace(r.metrics, hypo_flag=True))
                break
        rigged = ScenarioResult(
            spec=short_result.spec,
            results=flagged_once,
            summary=summarize(short_result.spec, flagged_once),
        )
        svg = render_scenario_figure(rigged, TARGETS)
        assert len(by_class(svg, "polyline", "trace hypo")) == base + 1
        assert len(by_class(svg, "polyline", "trace")) == n - base - 1
        title, = by_class(svg, "text", "figure-title")
        assert f"hypo {base + 1}/" in title.text

    def test_single_patient_has_no_boxplot(self, single_noiseless_result):
        svg = render_scenario_figure(single_noiseless_result, TARGETS)
        assert not by_class(svg, "rect", "dose-est-box")
        texts = [e.text for e in elements(svg, "text")]
        assert "not enough patients for a dose boxplot" in texts

    def test_all_failed_scenario_still_renders(self):
        bad = VirtualPatient(0, POPULATION, 90.0, 0.05, 0.0, 7)
        cohort = Cohort(patients=[bad], attempts=1, config=PopulationConfig())
        out = run_scenario(SHORT, cohort)
        svg = render_scenario_figure(out, TARGETS)
        assert elements(svg, "svg") or ET.fromstring(svg) is not None
        assert not by_class(svg, "polyline", "trace")
        assert by_class(svg, "rect", "target-band")


class TestBandEnding:
    def test_noiseless_curve_ends_inside_the_band(self, single_noiseless_result):
        # the treated patient's glucose trajectory must finish between
        # the band edges, i.e. the last trace point lies inside the
        # band rectangle in pixel space
        svg = render_scenario_figure(single_noiseless_result, TARGETS)
        trace, = [e for e in elements(svg, "polyline")
                  if e.get("class") in ("trace", "trace hypo")]
        assert trace.get("class") == "trace"  # no hypoglycemia either
        last_pt = trace.get("points").split()[-1]
        _, y_px = (float(v) for v in last_pt.split(","))
        band, = by_class(svg, "rect", "target-band")
        y_top = float(band.get("y"))
        y_bot = y_top + float(band.get("height"))
        assert y_top < y_px < y_bot
        # and the underlying sample agrees
        g_end = single_noiseless_result.results[0].injection.glucose[-1]
        assert 4.4 < g_end < 7.2
