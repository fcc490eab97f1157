"""Per-student prediction heatmaps and line plots as CSV and SVG files.

The CSV is the machine-readable artifact; the SVG writers only draw
rectangles, polylines and text.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .data import InteractionSequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass(frozen=True)
class HeatmapExport:
    """Rows: skills the student answered (sorted by id). Columns: time steps
    labeled "q:a". ``cells[r, t]`` is y_t for skill ``skills[r]``."""

    skills: tuple[int, ...]
    labels: tuple[str, ...]
    cells: np.ndarray

    def __post_init__(self):
        if self.cells.shape != (len(self.skills), len(self.labels)):
            raise ValueError("cells shape does not match skills x labels")

    @classmethod
    def from_outputs(cls, outputs, seq: InteractionSequence) -> "HeatmapExport":
        Y = np.asarray(outputs, dtype=np.float64)
        if Y.shape[0] != len(seq):
            raise ValueError("outputs and sequence lengths differ")
        skills = tuple(sorted(set(seq.questions)))
        labels = tuple(f"{q}:{a}" for q, a in zip(seq.questions, seq.answers))
        return cls(skills, labels, Y[:, list(skills)].T.copy())

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["skill", *self.labels])
        for skill, row in zip(self.skills, self.cells):
            w.writerow([skill, *(f"{v:.6f}" for v in row)])
        return out.getvalue()

    def mean_adjacent_change(self) -> float:
        """Mean |cell[t+1] - cell[t]| over rows and adjacent columns."""
        if self.cells.shape[1] < 2:
            return 0.0
        return float(np.abs(np.diff(self.cells, axis=1)).mean())


def parse_heatmap_csv(text: str) -> HeatmapExport:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["skill"]:
        raise ValueError("not a heatmap CSV (missing 'skill' header)")
    labels = tuple(rows[0][1:])
    skills = tuple(int(r[0]) for r in rows[1:])
    cells = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return HeatmapExport(skills, labels, cells.reshape(len(skills), len(labels)))


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
            f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif" font-size="10">')
    return "\n".join([head, f'<rect width="{width:.0f}" height="{height:.0f}" fill="white"/>', *body, "</svg>"]) + "\n"


def heatmap_svg(hm: HeatmapExport, cell: int = 22) -> str:
    left, top = 48, 12
    n_rows, n_cols = hm.cells.shape
    body = []
    for r, skill in enumerate(hm.skills):
        y = top + r * cell
        body.append(f'<text x="{left - 6}" y="{y + cell * 0.65:.1f}" text-anchor="end">s{skill}</text>')
        for t in range(n_cols):
            p = float(hm.cells[r, t])
            shade = int(round(255 * (1.0 - min(max(p, 0.0), 1.0))))  # darker = higher
            fill = f"rgb({shade},{shade},255)"
            body.append(f'<rect x="{left + t * cell}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="{fill}" stroke="#ccc" stroke-width="0.5"><title>{p:.3f}</title></rect>')
    base = top + n_rows * cell + 12
    for t, label in enumerate(hm.labels):
        x = left + t * cell + cell / 2
        body.append(f'<text x="{x:.1f}" y="{base}" text-anchor="end" '
                    f'transform="rotate(-60 {x:.1f} {base})">{escape(label)}</text>')
    return _svg(left + n_cols * cell + 12, base + 40, body)


def lineplot_svg(hm: HeatmapExport, width: int = 720, height: int = 280) -> str:
    left, right, top, bottom = 44, 90, 12, 30
    n_cols = hm.cells.shape[1]
    pw, ph = width - left - right, height - top - bottom

    def xy(t, p):
        x = left + (pw * t / max(n_cols - 1, 1))
        return x, top + ph * (1.0 - p)

    body = [f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>']
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        _, y = xy(0, tick)
        body.append(f'<text x="{left - 4}" y="{y + 3:.1f}" text-anchor="end">{tick:.2f}</text>')
    for r, skill in enumerate(hm.skills):
        color = PALETTE[r % len(PALETTE)]
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in (xy(t, float(p)) for t, p in enumerate(hm.cells[r])))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        body.append(f'<text x="{width - right + 8}" y="{top + 12 * (r + 1)}" fill="{color}">s{skill}</text>')
    return _svg(width, height, body)
