"""Minimal self-contained SVG writer for log-log convergence plots."""

import math
import xml.etree.ElementTree as ET

__all__ = ["render_loglog_svg", "write_loglog_svg"]

_W, _H = 760, 500
_ML, _MR, _MT, _MB = 70, 20, 40, 55
_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _finite_positive(xs, ys):
    out = [(x, y) for x, y in zip(xs, ys)
           if math.isfinite(x) and math.isfinite(y) and x > 0 and y > 0]
    return out


def _decades(lo, hi):
    k0 = math.ceil(math.log10(lo) - 1e-12)
    k1 = math.floor(math.log10(hi) + 1e-12)
    return [10.0 ** k for k in range(k0, k1 + 1)]


def render_loglog_svg(curves, bold_curves=(), title="",
                      xlabel="time (s)", ylabel="objective"):
    """Render polylines on log-log axes with decade gridlines.

    Returns the SVG document as a string.

    Parameters
    ----------
    curves : list of (xs, ys, group) triples drawn as thin lines; ``group``
        indexes the color palette.
    bold_curves : list of (xs, ys, group, label) drawn thick, one per group.
    """
    pts = []
    for xs, ys, _ in curves:
        pts.extend(_finite_positive(xs, ys))
    for xs, ys, _, _ in bold_curves:
        pts.extend(_finite_positive(xs, ys))
    if not pts:
        raise ValueError("nothing to plot: no finite positive points")
    x_lo = min(p[0] for p in pts)
    x_hi = max(p[0] for p in pts)
    y_lo = min(p[1] for p in pts)
    y_hi = max(p[1] for p in pts)
    # pad a few percent in log space; guard degenerate ranges
    if x_lo == x_hi:
        x_lo, x_hi = x_lo * 0.5, x_hi * 2.0
    if y_lo == y_hi:
        y_lo, y_hi = y_lo * 0.5, y_hi * 2.0
    lx0, lx1 = math.log10(x_lo), math.log10(x_hi)
    ly0, ly1 = math.log10(y_lo), math.log10(y_hi)
    lx0, lx1 = lx0 - 0.03 * (lx1 - lx0), lx1 + 0.03 * (lx1 - lx0)
    ly0, ly1 = ly0 - 0.05 * (ly1 - ly0), ly1 + 0.05 * (ly1 - ly0)

    def px(x):
        return _ML + (math.log10(x) - lx0) / (lx1 - lx0) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (math.log10(y) - ly0) / (ly1 - ly0) * (_H - _MT - _MB)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(_W), height=str(_H),
                     viewBox=f"0 0 {_W} {_H}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(_W), height=str(_H),
                  fill="white")
    # decade gridlines
    for gx in _decades(10 ** lx0, 10 ** lx1):
        X = px(gx)
        ET.SubElement(svg, "line", x1=f"{X:.2f}", y1=str(_MT),
                      x2=f"{X:.2f}", y2=str(_H - _MB),
                      stroke="#dddddd", **{"stroke-width": "1"})
        lab = ET.SubElement(svg, "text", x=f"{X:.2f}", y=str(_H - _MB + 18),
                            fill="#444444",
                            **{"font-size": "11", "text-anchor": "middle",
                               "font-family": "sans-serif"})
        lab.text = f"1e{int(round(math.log10(gx)))}"
    for gy in _decades(10 ** ly0, 10 ** ly1):
        Y = py(gy)
        ET.SubElement(svg, "line", x1=str(_ML), y1=f"{Y:.2f}",
                      x2=str(_W - _MR), y2=f"{Y:.2f}",
                      stroke="#dddddd", **{"stroke-width": "1"})
        lab = ET.SubElement(svg, "text", x=str(_ML - 6), y=f"{Y + 4:.2f}",
                            fill="#444444",
                            **{"font-size": "11", "text-anchor": "end",
                               "font-family": "sans-serif"})
        lab.text = f"1e{int(round(math.log10(gy)))}"
    ET.SubElement(svg, "rect", x=str(_ML), y=str(_MT),
                  width=str(_W - _ML - _MR), height=str(_H - _MT - _MB),
                  fill="none", stroke="#333333", **{"stroke-width": "1"})

    def polyline(xs, ys, color, width, opacity):
        good = _finite_positive(xs, ys)
        if not good:
            return
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in good)
        ET.SubElement(svg, "polyline", points=coords, fill="none",
                      stroke=color, **{"stroke-width": str(width),
                                       "stroke-opacity": str(opacity)})

    for xs, ys, group in curves:
        polyline(xs, ys, _PALETTE[group % len(_PALETTE)], 1.0, 0.45)
    legend_y = _MT + 16
    for xs, ys, group, label in bold_curves:
        color = _PALETTE[group % len(_PALETTE)]
        polyline(xs, ys, color, 3.0, 1.0)
        tag = ET.SubElement(svg, "text", x=str(_W - _MR - 10), y=str(legend_y),
                            fill=color, **{"font-size": "13", "text-anchor": "end",
                                           "font-family": "sans-serif",
                                           "font-weight": "bold"})
        tag.text = label
        legend_y += 18
    if title:
        t = ET.SubElement(svg, "text", x=str(_W // 2), y="24",
                          fill="#111111",
                          **{"font-size": "15", "text-anchor": "middle",
                             "font-family": "sans-serif"})
        t.text = title
    xl = ET.SubElement(svg, "text", x=str((_ML + _W - _MR) // 2),
                       y=str(_H - 14), fill="#111111",
                       **{"font-size": "13", "text-anchor": "middle",
                          "font-family": "sans-serif"})
    xl.text = xlabel
    yl = ET.SubElement(svg, "text", x="18", y=str((_MT + _H - _MB) // 2),
                       fill="#111111",
                       transform=f"rotate(-90 18 {(_MT + _H - _MB) // 2})",
                       **{"font-size": "13", "text-anchor": "middle",
                          "font-family": "sans-serif"})
    yl.text = ylabel
    body = ET.tostring(svg, encoding="unicode")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n"


def write_loglog_svg(path, curves, bold_curves=(), title="",
                     xlabel="time (s)", ylabel="objective"):
    text = render_loglog_svg(curves, bold_curves=bold_curves, title=title,
                             xlabel=xlabel, ylabel=ylabel)
    with open(path, "w") as fh:
        fh.write(text)
