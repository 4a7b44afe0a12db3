"""Schematic scalp maps as SVG.

A unit-disc head outline with a nose marker; each electrode is a disc
at its 2-D position, colored red (most important) to blue (least) by
normalized score and sized by rank.  No interpolation or head model:
the point is a quick, reproducible picture of a ranking.
"""

from typing import Optional

import numpy as np

from .errors import ConfigError
from .icec import IcecReport

_ROWS = [
    # (prefix, y toward the nose, half width of the row)
    ("Fp", 0.75, 0.30),
    ("AF", 0.60, 0.42),
    ("F", 0.45, 0.55),
    ("FC", 0.25, 0.65),
    ("C", 0.00, 0.75),
    ("CP", -0.25, 0.65),
    ("P", -0.45, 0.55),
    ("PO", -0.60, 0.42),
    ("O", -0.75, 0.30),
]

_LATERAL = {1: 0.25, 2: 0.25, 3: 0.5, 4: 0.5, 5: 0.75, 6: 0.75, 7: 1.0, 8: 1.0}

_ALIASES = {"T3": "C7", "T4": "C8", "T5": "P7", "T6": "P8",
            "FT7": "FC7", "FT8": "FC8", "TP7": "CP7", "TP8": "CP8",
            "T7": "C7", "T8": "C8"}


def _montage():
    table = {}
    for prefix, y, half in _ROWS:
        table[prefix.upper() + "Z"] = (0.0, y)
        for num, frac in _LATERAL.items():
            x = half * frac
            sign = -1.0 if num % 2 == 1 else 1.0
            table[f"{prefix.upper()}{num}"] = (sign * x, y)
    return table


_MONTAGE = _montage()


def standard_positions(names) -> dict:
    """Unit-disc positions for recognized 10-20 style labels.

    Returns a dict covering only the names that were recognized;
    lookups are case-insensitive and accept the legacy T3/T4/T5/T6
    aliases.
    """
    out = {}
    for name in names:
        key = name.strip().upper()
        key = _ALIASES.get(key, key)
        if key in _MONTAGE:
            out[name] = _MONTAGE[key]
    return out


def _color(normalized: float) -> str:
    # red for 1.0 down to blue for 0.0
    t = min(max(normalized, 0.0), 1.0)
    r = round(40 + t * (220 - 40))
    g = round(60 + t * (40 - 60))
    b = round(220 + t * (40 - 220))
    return f"rgb({r},{g},{b})"


def render_topomap(report: IcecReport, positions: dict,
                   channel_names: Optional[list] = None) -> str:
    """Render a ranking report as an SVG string.

    ``positions`` maps channel name to (x, y) in unit-disc coordinates
    (x toward the right ear, y toward the nose) and must cover every
    channel.
    """
    K = len(report.ranking)
    if channel_names is None:
        channel_names = [f"ch{i:02d}" for i in range(K)]
    missing = [n for n in channel_names if n not in positions]
    if missing:
        raise ConfigError(f"no scalp position for channels: {missing}")

    rank_of = {ch: pos for pos, ch in enumerate(report.ranking)}
    scale = 82.0
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="-120 -120 240 240">',
        '<circle cx="0" cy="0" r="100" fill="#fdfdfd" stroke="#333" '
        'stroke-width="2"/>',
        '<path d="M -10 -99 L 0 -114 L 10 -99" fill="none" stroke="#333" '
        'stroke-width="2"/>',
    ]
    title = report.metric
    if report.band is not None and report.band.name:
        title += f" / {report.band.name}"
    if title:
        parts.append(
            f'<text x="0" y="117" text-anchor="middle" font-size="9" '
            f'fill="#333">{title}</text>'
        )
    for i in range(K):
        x, y = positions[channel_names[i]]
        cx = x * scale
        cy = -y * scale
        rank = rank_of[i]
        radius = 12.0 - (8.0 * rank / max(K - 1, 1))
        norm = float(report.normalized[i])
        parts.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius:.2f}" '
            f'fill="{_color(norm)}" stroke="#222" stroke-width="0.6">'
            f"<title>{channel_names[i]}: rank {rank + 1}, "
            f"score {norm:.3f}</title></circle>"
        )
        parts.append(
            f'<text x="{cx:.2f}" y="{cy + radius + 6.0:.2f}" '
            f'text-anchor="middle" font-size="5" fill="#444">'
            f"{channel_names[i]}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts)


def circle_positions(names) -> dict:
    """Evenly spaced positions on a ring, for data without a montage."""
    n = len(names)
    out = {}
    for i, name in enumerate(names):
        ang = 2.0 * np.pi * i / max(n, 1)
        out[name] = (0.8 * np.sin(ang), 0.8 * np.cos(ang))
    return out
