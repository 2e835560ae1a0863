"""
SVG Charts

Static vector charts written directly as SVG text:
- recurrence: P_continual(T) and P_reset(T) against T with a horizontal
  reference line (2/pi for the quantum walk)
- heatmap: position x step chessboard of a probability history on a
  logarithmic color scale, one rectangle per nonzero cell

Output is a pure function of the input, so identical input gives identical bytes.
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .classical_baseline import ClassicalSeries
from .fileio import atomic_write_text
from .monitoring import RecurrenceSeries

logger = logging.getLogger(__name__)

SVG_NS = 'http://www.w3.org/2000/svg'
WIDTH, HEIGHT = 640, 420
MARGIN = (70, 30, 150, 55)  # left, top, right, bottom
CURVE_COLORS = {'P_continual': '#1f4e9c', 'P_reset': '#c0392b'}
CURVE_LABELS = {'P_continual': 'continual', 'P_reset': 'reset'}
HEAT_LOW, HEAT_HIGH = (255, 247, 188), (127, 0, 38)
QUANTUM_POLYA = 2.0 / math.pi

ChartInput = Union[RecurrenceSeries, ClassicalSeries, pd.DataFrame]


class ChartError(Exception):
    """Custom exception for chart emission errors"""
    pass


def _num(x: float) -> str:
    xr = round(float(x), 3)
    if xr == int(xr):
        return str(int(xr))
    return f"{xr:.3f}".rstrip('0')


def _escape(text: str) -> str:
    return text.replace('&', '&amp;').replace('<', '&lt;').replace('>', '&gt;')


class Element:
    """Minimal SVG node"""

    def __init__(self, tag: str, children: Optional[List["Element"]] = None, text: str = '', **attr):
        self.tag = tag
        self.children = children or []
        self.text = text
        self.attr = attr

    def props(self) -> str:
        parts = []
        for key, value in self.attr.items():
            name = key.rstrip('_').replace('_', '-')
            rendered = _num(value) if isinstance(value, (float, np.floating)) else value
            parts.append(f'{name}="{rendered}"')
        return ' '.join(parts)

    def svg(self, indent: int = 0) -> str:
        pad = '  ' * indent
        props = self.props()
        opening = f'{self.tag} {props}' if props else self.tag
        if not self.children and not self.text:
            return f'{pad}<{opening} />'
        if not self.children:
            return f'{pad}<{opening}>{_escape(self.text)}</{self.tag}>'
        inner = '\n'.join(child.svg(indent + 1) for child in self.children)
        return f'{pad}<{opening}>\n{inner}\n{pad}</{self.tag}>'


def _document(children: List[Element], comment_lines: Sequence[str]) -> str:
    root = Element('svg', children, xmlns=SVG_NS, width=WIDTH, height=HEIGHT,
                   viewBox=f'0 0 {WIDTH} {HEIGHT}', font_family='sans-serif', font_size=12)
    comment = ''.join(f'<!-- {line.replace("--", "- -")} -->\n' for line in comment_lines)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + comment + root.svg() + '\n'


class _Axes:
    """Linear data-to-pixel mapping for the plot area"""

    def __init__(self, xlim: Tuple[float, float], ylim: Tuple[float, float]):
        left, top, right, bottom = MARGIN
        self.px = (left, WIDTH - right)
        self.py = (HEIGHT - bottom, top)
        self.xlim = xlim if xlim[1] > xlim[0] else (xlim[0] - 0.5, xlim[0] + 0.5)
        self.ylim = ylim if ylim[1] > ylim[0] else (ylim[0] - 0.5, ylim[0] + 0.5)

    def x(self, value: float) -> float:
        (a, b), (pa, pb) = self.xlim, self.px
        return pa + (value - a) / (b - a) * (pb - pa)

    def y(self, value: float) -> float:
        (a, b), (pa, pb) = self.ylim, self.py
        return pa + (value - a) / (b - a) * (pb - pa)

    def frame(self, xlabel: str, ylabel: str, xticks: Sequence[float], yticks: Sequence[float]) -> List[Element]:
        x0, x1 = self.px
        y0, y1 = self.py
        items = [
            Element('line', class_='axis', x1=float(x0), y1=float(y0), x2=float(x1), y2=float(y0), stroke='black'),
            Element('line', class_='axis', x1=float(x0), y1=float(y0), x2=float(x0), y2=float(y1), stroke='black'),
            Element('text', text=xlabel, x=float((x0 + x1) / 2), y=float(HEIGHT - 15), text_anchor='middle'),
            Element('text', text=ylabel, x=15.0, y=float((y0 + y1) / 2), text_anchor='middle',
                    transform=f'rotate(-90 15 {_num((y0 + y1) / 2)})'),
        ]
        for tick in xticks:
            px = self.x(tick)
            items.append(Element('line', class_='tick', x1=px, y1=float(y0), x2=px, y2=float(y0 + 5), stroke='black'))
            items.append(Element('text', text=_num(tick), x=px, y=float(y0 + 18), text_anchor='middle'))
        for tick in yticks:
            py = self.y(tick)
            items.append(Element('line', class_='tick', x1=float(x0 - 5), y1=py, x2=float(x0), y2=py, stroke='black'))
            items.append(Element('text', text=_num(tick), x=float(x0 - 8), y=py + 4.0, text_anchor='end'))
        return items


def _ticks(low: float, high: float, count: int = 5) -> List[float]:
    if high <= low:
        return [low]
    raw = (high - low) / count
    magnitude = 10 ** math.floor(math.log10(raw))
    step = min((m * magnitude for m in (1, 2, 5, 10) if m * magnitude >= raw), default=raw)
    start = math.ceil(low / step) * step
    return [round(v, 10) for v in np.arange(start, high + step * 1e-9, step)]


def _recurrence_frame(series: ChartInput) -> pd.DataFrame:
    if isinstance(series, ClassicalSeries):
        return series.to_frame()
    if isinstance(series, RecurrenceSeries):
        return series.to_frame()
    return series


def _recurrence_chart(frame: pd.DataFrame, reference: float, title: str) -> List[Element]:
    curves = [name for name in ('P_continual', 'P_reset') if name in frame.columns]
    if not curves:
        raise ChartError("Recurrence chart needs a P_continual or P_reset column")

    steps = frame.index.to_numpy(dtype=float)
    axes = _Axes((0.0, float(steps.max())), (0.0, 1.0))
    items = [Element('text', text=title, x=float(WIDTH / 2), y=20.0, text_anchor='middle', font_size=14)]
    items += axes.frame('T', 'recurrence probability', _ticks(0.0, float(steps.max())), _ticks(0.0, 1.0))

    ref_y = axes.y(reference)
    items.append(Element('line', class_='reference', x1=axes.x(0.0), y1=ref_y, x2=axes.x(float(steps.max())),
                         y2=ref_y, stroke='gray', stroke_dasharray='6 4'))

    for name in curves:
        values = frame[name].to_numpy(dtype=float)
        points = ' '.join(f'{_num(axes.x(t))},{_num(axes.y(v))}' for t, v in zip(steps, values))
        items.append(Element('polyline', class_='curve', points=points, fill='none',
                             stroke=CURVE_COLORS[name], stroke_width=2.0))

    legend_x = float(WIDTH - MARGIN[2] + 15)
    entries = [(CURVE_LABELS[name], CURVE_COLORS[name], None) for name in curves]
    entries.append((f'reference {reference:.4f}', 'gray', '6 4'))
    for i, (label, color, dash) in enumerate(entries):
        y = float(MARGIN[1] + 20 + 20 * i)
        marker = dict(class_='legend', x1=legend_x, y1=y, x2=legend_x + 20.0, y2=y, stroke=color, stroke_width=2.0)
        if dash:
            marker['stroke_dasharray'] = dash
        items.append(Element('line', **marker))
        items.append(Element('text', text=label, x=legend_x + 26.0, y=y + 4.0))
    return items


def _mix(fraction: float) -> str:
    rgb = [round(lo + (hi - lo) * fraction) for lo, hi in zip(HEAT_LOW, HEAT_HIGH)]
    return '#{:02x}{:02x}{:02x}'.format(*rgb)


def _heatmap_chart(frame: pd.DataFrame, title: str) -> List[Element]:
    missing = {'t', 'x', 'probability'} - set(frame.columns)
    if missing:
        raise ChartError(f"Heatmap needs columns t, x, probability (missing {sorted(missing)})")
    cells = frame[frame['probability'] > 0].sort_values(['t', 'x'], kind='stable')
    if cells.empty:
        raise ChartError("Heatmap has no nonzero cells")

    t_max = int(frame['t'].max())
    x_extent = int(max(abs(frame['x'].min()), abs(frame['x'].max()), 1))
    axes = _Axes((-x_extent - 0.5, x_extent + 0.5), (-0.5, t_max + 0.5))
    cell_w = abs(axes.x(1.0) - axes.x(0.0))
    cell_h = abs(axes.y(1.0) - axes.y(0.0))

    logs = np.log10(cells['probability'].to_numpy(dtype=float))
    lo, hi = float(logs.min()), float(logs.max())
    span = hi - lo if hi > lo else 1.0

    items = [Element('text', text=title, x=float(WIDTH / 2), y=20.0, text_anchor='middle', font_size=14)]
    items += axes.frame('x', 't', _ticks(-x_extent, x_extent), _ticks(0.0, float(t_max)))
    for (t, x, _), value in zip(cells[['t', 'x', 'probability']].itertuples(index=False), logs):
        items.append(Element('rect', class_='cell', x=axes.x(x - 0.5), y=axes.y(t + 0.5),
                             width=cell_w, height=cell_h, fill=_mix((value - lo) / span)))

    legend_x = float(WIDTH - MARGIN[2] + 20)
    for i, fraction in enumerate(np.linspace(1.0, 0.0, 5)):
        y = float(MARGIN[1] + 20 + 22 * i)
        items.append(Element('rect', class_='scale', x=legend_x, y=y, width=18.0, height=18.0, fill=_mix(fraction)))
        items.append(Element('text', text=f'1e{lo + fraction * span:.1f}', x=legend_x + 24.0, y=y + 13.0))
    return items


def render_chart(series: ChartInput, kind: str, title: Optional[str] = None,
                 reference: float = QUANTUM_POLYA, comment_lines: Sequence[str] = ()) -> str:
    """Render a chart to SVG text"""
    if kind == 'recurrence':
        frame = _recurrence_frame(series)
        if frame is None or len(frame) == 0:
            raise ChartError("Cannot chart an empty series")
        items = _recurrence_chart(frame, reference, title or 'Recurrence probability')
    elif kind == 'heatmap':
        if not isinstance(series, pd.DataFrame) or series.empty:
            raise ChartError("Heatmap needs a non-empty t, x, probability table")
        items = _heatmap_chart(series, title or 'Position distribution')
    else:
        raise ChartError(f"Unknown chart kind '{kind}', expected 'recurrence' or 'heatmap'")
    return _document(items, comment_lines)


def emit_chart(series: ChartInput, kind: str, path: Union[str, Path], title: Optional[str] = None,
               reference: float = QUANTUM_POLYA, comment_lines: Sequence[str] = ()) -> Path:
    """
    Write a chart as a self-contained SVG file.

    Args:
        series: RecurrenceSeries, ClassicalSeries or a DataFrame (recurrence
            columns indexed by t, or a long t, x, probability table for heatmaps)
        kind: 'recurrence' or 'heatmap'
        path: Destination file
        title: Chart title
        reference: Height of the horizontal reference line on recurrence charts
        comment_lines: Provenance lines embedded as XML comments

    Raises:
        ChartError: For an empty series or an unknown kind
    """
    text = render_chart(series, kind, title, reference, comment_lines)
    target = atomic_write_text(path, text)
    logger.info(f"Wrote {kind} chart {target}")
    return target
