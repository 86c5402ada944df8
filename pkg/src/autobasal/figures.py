"""Static SVG reporting, hand-rolled to stay dependency-free.

One scenario produces a three-panel figure: cohort glucose trajectories
against the target band with hypoglycemic patients highlighted, the
closed-loop infusion rates, and a boxplot of estimated versus true
daily doses. The SVG is built from a small fixed vocabulary of elements
in deterministic order, so tests can compare figures structurally and
repeated runs emit identical bytes.
"""

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .scenario import ClinicalTargets, ScenarioResult

_WIDTH = 860
_PANEL_H = 250
_MARGIN_L = 70
_MARGIN_R = 24
_MARGIN_TOP = 42
_PANEL_GAP = 58
_PLOT_W = _WIDTH - _MARGIN_L - _MARGIN_R

_COL_BAND = "#d9f0d9"
_COL_HYPO = "#c0392b"
_COL_OK = "#4878a8"
_COL_AXIS = "#333333"
_COL_BOX = "#dfe8f4"


def _f(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10 * mag
    for m in (1.0, 2.0, 5.0, 10.0):
        if raw <= m * mag:
            step = m * mag
            break
    t = math.ceil(lo / step) * step
    out = []
    while t <= hi + 1e-9 * span:
        out.append(round(t, 10))
        t += step
    return out


@dataclass
class _Panel:
    """Maps one data rectangle onto one pixel rectangle (y grows up)."""

    top: float
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def px(self, x: float) -> float:
        return _MARGIN_L + (x - self.x_lo) / (self.x_hi - self.x_lo) * _PLOT_W

    def py(self, y: float) -> float:
        frac = (y - self.y_lo) / (self.y_hi - self.y_lo)
        return self.top + _PANEL_H - frac * _PANEL_H


class _Svg:
    def __init__(self, width: int, height: int):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def rect(self, x, y, w, h, fill, cls=None, stroke=None):
        attrs = f'x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"'
        if stroke:
            attrs += f' stroke="{stroke}"'
        if cls:
            attrs += f' class="{cls}"'
        self.parts.append(f"<rect {attrs}/>")

    def line(self, x1, y1, x2, y2, stroke, width=1.0, dash=None, cls=None):
        attrs = (
            f'x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{_f(width)}"'
        )
        if dash:
            attrs += f' stroke-dasharray="{dash}"'
        if cls:
            attrs += f' class="{cls}"'
        self.parts.append(f"<line {attrs}/>")

    def polyline(self, pts, stroke, width=1.0, opacity=1.0, cls=None):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        attrs = (
            f'points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_f(width)}"'
        )
        if opacity < 1.0:
            attrs += f' stroke-opacity="{opacity}"'
        if cls:
            attrs += f' class="{cls}"'
        self.parts.append(f"<polyline {attrs}/>")

    def circle(self, cx, cy, r, fill, cls=None):
        attrs = f'cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" fill="{fill}"'
        if cls:
            attrs += f' class="{cls}"'
        self.parts.append(f"<circle {attrs}/>")

    def text(self, x, y, s, size=12, anchor="start", cls=None, color=_COL_AXIS):
        attrs = (
            f'x="{_f(x)}" y="{_f(y)}" font-size="{size}" fill="{color}" '
            f'font-family="sans-serif" text-anchor="{anchor}"'
        )
        if cls:
            attrs += f' class="{cls}"'
        self.parts.append(f"<text {attrs}>{s}</text>")

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _axes(svg: _Svg, p: _Panel, x_label: str, y_label: str, title: str):
    bottom = p.top + _PANEL_H
    svg.text(_MARGIN_L, p.top - 8, title, size=13, cls="panel-title")
    svg.line(_MARGIN_L, bottom, _MARGIN_L + _PLOT_W, bottom, _COL_AXIS)
    svg.line(_MARGIN_L, p.top, _MARGIN_L, bottom, _COL_AXIS)
    for t in _ticks(p.x_lo, p.x_hi):
        x = p.px(t)
        svg.line(x, bottom, x, bottom + 4, _COL_AXIS)
        svg.text(x, bottom + 17, f"{t:g}", size=11, anchor="middle")
    for t in _ticks(p.y_lo, p.y_hi):
        y = p.py(t)
        svg.line(_MARGIN_L - 4, y, _MARGIN_L, y, _COL_AXIS)
        svg.text(_MARGIN_L - 7, y + 4, f"{t:g}", size=11, anchor="end")
    svg.text(_MARGIN_L + _PLOT_W / 2, bottom + 34, x_label, size=12, anchor="middle")
    svg.text(_MARGIN_L, p.top - 24, y_label, size=12)


def _downsample(times_min, values, step_min):
    stride = max(1, int(round(step_min / (times_min[1] - times_min[0]))) if len(times_min) > 1 else 1)
    return times_min[::stride], values[::stride]


def _box_stats(data):
    data = sorted(data)
    q1, q2, q3 = statistics.quantiles(data, n=4, method="inclusive")
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = [v for v in data if lo_fence <= v <= hi_fence]
    outliers = [v for v in data if v < lo_fence or v > hi_fence]
    return q1, q2, q3, min(inside), max(inside), outliers


def _draw_box(svg: _Svg, p: _Panel, x_center: float, data, cls: str):
    q1, q2, q3, w_lo, w_hi, outliers = _box_stats(data)
    half = 46.0
    x0, x1 = x_center - half, x_center + half
    svg.line(x_center, p.py(w_lo), x_center, p.py(q1), _COL_AXIS, cls=f"{cls}-whisker")
    svg.line(x_center, p.py(q3), x_center, p.py(w_hi), _COL_AXIS, cls=f"{cls}-whisker")
    svg.line(x_center - half / 2, p.py(w_lo), x_center + half / 2, p.py(w_lo), _COL_AXIS)
    svg.line(x_center - half / 2, p.py(w_hi), x_center + half / 2, p.py(w_hi), _COL_AXIS)
    svg.rect(x0, p.py(q3), x1 - x0, p.py(q1) - p.py(q3), _COL_BOX, stroke=_COL_AXIS, cls=f"{cls}-box")
    svg.line(x0, p.py(q2), x1, p.py(q2), _COL_AXIS, width=1.6, cls=f"{cls}-median")
    for v in outliers:
        svg.circle(x_center, p.py(v), 2.5, _COL_HYPO, cls=f"{cls}-outlier")


def render_scenario_figure(
    result: ScenarioResult,
    targets: ClinicalTargets,
    downsample_min: float = 15.0,
) -> str:
    """Three stacked panels for one scenario run; returns SVG text."""
    ok = [r for r in result.results if r.ok and r.closed_loop is not None]
    height = _MARGIN_TOP + 3 * (_PANEL_H + _PANEL_GAP)
    svg = _Svg(_WIDTH, height)
    s = result.summary
    svg.text(
        _MARGIN_L, 22,
        f"scenario {result.spec.name}: {result.spec.closed_loop_hours:g} h closed loop, "
        f"gain x{result.spec.gain_multiplier:g}, {result.spec.injection_days} injection days "
        f"| hypo {s.hypo_count}/{s.n_patients - s.n_failed}, "
        f"overestimated {s.overest_count}",
        size=14, cls="figure-title",
    )

    glucose_series = []
    infusion_series = []
    for r in ok:
        t_cl, g_cl = _downsample(r.closed_loop.times_min, r.closed_loop.glucose, downsample_min)
        t_in, g_in = _downsample(r.injection.times_min, r.injection.glucose, downsample_min)
        t = np.concatenate([t_cl, t_in]) / 60.0
        g = np.concatenate([g_cl, g_in])
        glucose_series.append((t, g, r.metrics.hypo_flag))
        tu, u = _downsample(r.closed_loop.times_min, r.closed_loop.u, downsample_min)
        infusion_series.append((tu / 60.0, u))

    # panel 1: glucose trajectories against the band
    top1 = _MARGIN_TOP
    if glucose_series:
        t_hi = max(float(t[-1]) for t, _, _ in glucose_series)
        g_all_lo = min(float(g.min()) for _, g, _ in glucose_series)
        g_all_hi = max(float(g.max()) for _, g, _ in glucose_series)
    else:
        t_hi, g_all_lo, g_all_hi = 1.0, targets.hypo, targets.range_high
    p1 = _Panel(top1, 0.0, max(t_hi, 1e-9),
                min(targets.hypo - 0.5, g_all_lo - 0.3),
                max(targets.range_high + 0.5, g_all_hi + 0.3))
    svg.rect(p1.px(p1.x_lo), p1.py(targets.range_high),
             _PLOT_W, p1.py(targets.range_low) - p1.py(targets.range_high),
             _COL_BAND, cls="target-band")
    svg.line(p1.px(p1.x_lo), p1.py(targets.hypo), p1.px(p1.x_hi), p1.py(targets.hypo),
             _COL_HYPO, width=1.2, dash="6 4", cls="hypo-threshold")
    for t, g, _hypo in (s for s in glucose_series if not s[2]):
        svg.polyline(list(zip(p1.px(t), p1.py(g))), _COL_OK, 1.0, 0.35, cls="trace")
    for t, g, _hypo in (s for s in glucose_series if s[2]):
        svg.polyline(list(zip(p1.px(t), p1.py(g))), _COL_HYPO, 1.3, 0.9, cls="trace hypo")
    _axes(svg, p1, "time (h)", "glucose (mmol/L)", "latent glucose, closed loop and injection days")

    # panel 2: closed-loop infusion rates
    top2 = top1 + _PANEL_H + _PANEL_GAP
    if infusion_series:
        u_hi = max(float(u.max()) for _, u in infusion_series)
        t2_hi = max(float(t[-1]) for t, _ in infusion_series)
    else:
        u_hi, t2_hi = 1.0, 1.0
    p2 = _Panel(top2, 0.0, max(t2_hi, 1e-9), 0.0, max(u_hi * 1.1, 1e-6))
    for t, u in infusion_series:
        svg.polyline(list(zip(p2.px(t), p2.py(u))), _COL_OK, 1.0, 0.35, cls="infusion")
    _axes(svg, p2, "time (h)", "infusion (U/min)", "closed-loop insulin infusion")

    # panel 3: dose boxplot, estimated vs true
    top3 = top2 + _PANEL_H + _PANEL_GAP
    doses_est = [r.metrics.dose_est for r in ok]
    doses_true = [r.metrics.dose_true for r in ok]
    if doses_est and len(doses_est) >= 2:
        all_d = doses_est + doses_true
        p3 = _Panel(top3, 0.0, 1.0, min(all_d) - 1.0, max(all_d) + 1.0)
        _draw_box(svg, p3, _MARGIN_L + _PLOT_W * 0.33, doses_est, "dose-est")
        _draw_box(svg, p3, _MARGIN_L + _PLOT_W * 0.67, doses_true, "dose-true")
        bottom = top3 + _PANEL_H
        svg.text(_MARGIN_L + _PLOT_W * 0.33, bottom + 17, "estimated", size=11, anchor="middle")
        svg.text(_MARGIN_L + _PLOT_W * 0.67, bottom + 17, "true", size=11, anchor="middle")
        svg.text(_MARGIN_L, top3 - 8, "daily basal dose (U/day)", size=13, cls="panel-title")
        svg.line(_MARGIN_L, bottom, _MARGIN_L + _PLOT_W, bottom, _COL_AXIS)
        svg.line(_MARGIN_L, top3, _MARGIN_L, bottom, _COL_AXIS)
        for t in _ticks(p3.y_lo, p3.y_hi):
            y = p3.py(t)
            svg.line(_MARGIN_L - 4, y, _MARGIN_L, y, _COL_AXIS)
            svg.text(_MARGIN_L - 7, y + 4, f"{t:g}", size=11, anchor="end")
    else:
        svg.text(_MARGIN_L, top3 + 20, "not enough patients for a dose boxplot", size=12)

    return svg.render()


def write_scenario_figure(path, result: ScenarioResult, targets: ClinicalTargets,
                          downsample_min: float = 15.0) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_scenario_figure(result, targets, downsample_min))
