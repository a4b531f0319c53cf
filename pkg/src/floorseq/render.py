"""Deterministic SVG rendering of segment layers and token sequences.

Figure convention: observed geometry in red, generated in blue.  Output is
byte-stable for identical input (fixed float formatting, fixed attribute
order).
"""

from __future__ import annotations

from typing import Sequence

from .dataset import Quantizer, decode
from .geometry import Segment

OBSERVED_COLOR = "#d62728"
GENERATED_COLOR = "#1f77b4"


def render_svg(
    layers: Sequence[tuple[str, Sequence[Segment]]],
    extent: float = 10.0,
    size: int = 512,
) -> str:
    """One polyline per segment, grouped per named layer.

    Layer names "observed" and "generated" select the figure colors; other
    layers render black.
    """
    colors = {"observed": OBSERVED_COLOR, "generated": GENERATED_COLOR}
    scale = size / (2.0 * extent)

    def sx(x: float) -> str:
        return f"{(x + extent) * scale:.3f}"

    def sy(y: float) -> str:
        return f"{(extent - y) * scale:.3f}"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for name, segs in layers:
        color = colors.get(name, "#000000")
        parts.append(f'<g id="{name}" stroke="{color}" stroke-width="1.5" fill="none">')
        for seg in segs:
            parts.append(
                f'<polyline points="{sx(seg.a.x)},{sy(seg.a.y)} {sx(seg.b.x)},{sy(seg.b.y)}"/>'
            )
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def sequence_svg(
    tokens: Sequence[int],
    q: Quantizer,
    prefix_segments: int = 0,
    size: int = 512,
) -> str:
    """Render a token sequence; the first prefix_segments segments are 'observed'."""
    segs = decode(list(tokens), q)
    extent = max(abs(q.lo), abs(q.hi))
    return render_svg(
        [("observed", segs[:prefix_segments]), ("generated", segs[prefix_segments:])],
        extent=extent,
        size=size,
    )
