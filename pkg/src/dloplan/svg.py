"""SVG panels: obstacles, passages (dashed), keypoint paths, reference shapes in red, actual shapes in black."""
from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from dloplan.geom2d import Workspace

REFERENCE_COLOR = "#d62728"
ACTUAL_COLOR = "#000000"
OBSTACLE_COLOR = "#9e9e9e"
PASSAGE_COLOR = "#1f77b4"
PATH_COLOR = "#2ca02c"


@dataclass
class Frame:
    title: str = ""
    actual: list = field(default_factory=list)      # list of (n, 2) arrays
    reference: list = field(default_factory=list)   # list of (n, 2) arrays


def _pts(arr, tf):
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in (tf(p) for p in np.asarray(arr)))


def emit_svg(frames, workspace: Workspace, out_path, passages=(), paths=(), panel_px: int = 320, margin_px: int = 24):
    """Write one panel per frame side by side; raises ValueError on an empty frame list."""
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    scale = panel_px / max(workspace.width, workspace.height)
    pw = workspace.width * scale
    ph = workspace.height * scale
    total_w = len(frames) * (pw + margin_px) + margin_px
    total_h = ph + 2 * margin_px + 16
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0f}" height="{total_h:.0f}" '
           f'viewBox="0 0 {total_w:.0f} {total_h:.0f}">',
           '<rect x="0" y="0" width="100%" height="100%" fill="white"/>']
    for k, fr in enumerate(frames):
        ox = margin_px + k * (pw + margin_px)
        oy = margin_px + 16

        def tf(p, ox=ox, oy=oy):
            return ox + p[0] * scale, oy + (workspace.height - p[1]) * scale

        out.append(f'<g class="panel" id="panel{k}">')
        out.append(f'<text x="{ox:.1f}" y="{oy - 6:.1f}" font-family="sans-serif" font-size="12">'
                   f'{escape(fr.title)}</text>')
        out.append(f'<rect x="{ox:.2f}" y="{oy:.2f}" width="{pw:.2f}" height="{ph:.2f}" fill="none" '
                   f'stroke="black" stroke-width="1"/>')
        for o in workspace.obstacles:
            out.append(f'<polygon points="{_pts(o.vertices, tf)}" fill="{OBSTACLE_COLOR}" stroke="none"/>')
        for p in passages:
            a, b = tf(p.endpoint_a), tf(p.endpoint_b)
            out.append(f'<line class="passage" x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                       f'stroke="{PASSAGE_COLOR}" stroke-width="1" stroke-dasharray="4,3"/>')
        for wp in paths:
            out.append(f'<polyline class="path" points="{_pts(wp, tf)}" fill="none" stroke="{PATH_COLOR}" '
                       f'stroke-width="0.6" stroke-opacity="0.6"/>')
        for s in fr.reference:
            out.append(f'<polyline class="reference" points="{_pts(s, tf)}" fill="none" '
                       f'stroke="{REFERENCE_COLOR}" stroke-width="1.5"/>')
        for s in fr.actual:
            out.append(f'<polyline class="actual" points="{_pts(s, tf)}" fill="none" stroke="{ACTUAL_COLOR}" '
                       f'stroke-width="1.5"/>')
            for x, y in (tf(p) for p in np.asarray(s)):
                out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.6" fill="{ACTUAL_COLOR}"/>')
        out.append("</g>")
    out.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return out_path
