"""Coordination analysis: ideal offsets and splits, green bands, drawings.

Band sequences are 0/1 samples of one movement's green state at one-second
resolution, read from the controller log of a finished run.  The drawing
helpers build SVG by plain string assembly with fixed number formatting, so
the same inputs always produce byte-identical files.
"""
import csv
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import (
    Aperiodic,
    BothZero,
    LengthMismatch,
    NonPositiveInput,
    WindowOutOfRange,
)


def ideal_offset(spacing_m: float, speed_kmh: float) -> float:
    """Seconds a platoon needs between intersections at the progression speed.

    Evaluated as spacing * 3600 / (speed * 1000) so that common inputs stay
    exact in floating point (300 m at 50 km/h gives 21.6, not 21.599...).
    """
    if spacing_m <= 0:
        raise NonPositiveInput(f"spacing must be > 0, got {spacing_m}")
    if speed_kmh <= 0:
        raise NonPositiveInput(f"speed must be > 0, got {speed_kmh}")
    return spacing_m * 3600.0 / (speed_kmh * 1000.0)


def ideal_split(primary_flow: float, secondary_flow: float) -> float:
    """Green share of the primary direction by flow proportion."""
    if primary_flow < 0 or secondary_flow < 0:
        raise NonPositiveInput("flows must be >= 0")
    if primary_flow == 0 and secondary_flow == 0:
        raise BothZero("both flows are zero; no split is defined")
    return primary_flow / (primary_flow + secondary_flow)


def extract_band(
    ctrl_log: Sequence[tuple], iid: str, movement_index: int, t0: float, t1: float
) -> List[int]:
    """Sample one movement's green state at whole seconds in [t0, t1)."""
    if t0 < 0 or t1 <= t0:
        raise WindowOutOfRange(f"need 0 <= t0 < t1, got [{t0}, {t1})")
    entries = [(clk, string) for clk, i, _, string in ctrl_log if i == iid]
    if not entries:
        raise WindowOutOfRange(f"controller log holds nothing for {iid!r}")
    seq: List[int] = []
    idx = 0
    t = int(t0)
    while t < t1:
        while idx + 1 < len(entries) and entries[idx + 1][0] <= t:
            idx += 1
        if entries[idx][0] > t:
            raise WindowOutOfRange(f"log starts after t={t}")
        seq.append(1 if entries[idx][1][movement_index] == "G" else 0)
        t += 1
    return seq


def detect_period(seq: Sequence[int]) -> int:
    """Smallest exact repetition length, in samples."""
    n = len(seq)
    for p in range(1, n // 2 + 1):
        if all(seq[i] == seq[i + p] for i in range(n - p)):
            return p
    raise Aperiodic(f"no period up to {n // 2} samples")


def measure_offset(ref: Sequence[int], other: Sequence[int]) -> int:
    """Circular lag (in samples) at which `other` best matches `ref`.

    Maximizes the green overlap of ref[t] with other[t + lag]; ties resolve
    to the smallest lag, so a self-comparison reports zero.
    """
    n = len(ref)
    if len(other) != n:
        raise LengthMismatch(f"sequences differ in length: {n} vs {len(other)}")
    best_lag = 0
    best = -1
    for lag in range(n):
        score = 0
        for t in range(n):
            score += ref[t] * other[(t + lag) % n]
        if score > best:
            best = score
            best_lag = lag
    return best_lag


def green_windows(seq: Sequence[int]) -> List[Tuple[int, int]]:
    """Runs of consecutive green samples as (start, length) pairs."""
    out: List[Tuple[int, int]] = []
    start: Optional[int] = None
    for i, v in enumerate(seq):
        if v and start is None:
            start = i
        elif not v and start is not None:
            out.append((start, i - start))
            start = None
    if start is not None:
        out.append((start, len(seq) - start))
    return out


def render_band_svg(
    bands: Dict[str, Sequence[int]],
    t0: float = 0.0,
    px_per_s: float = 8.0,
    row_h: float = 36.0,
    spacing_m: Optional[float] = None,
    speed_kmh: Optional[float] = None,
) -> str:
    """Time-space band diagram; rows follow the dict order top to bottom."""
    names = list(bands)
    if not names:
        raise WindowOutOfRange("no bands to draw")
    n = len(bands[names[0]])
    left = 70.0
    width = left + n * px_per_s + 20.0
    height = 30.0 + row_h * len(names) + 20.0
    out: List[str] = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">'
    )
    out.append(f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="#ffffff"/>')
    out.append(
        f'<text x="{left:.1f}" y="18" font-family="monospace" font-size="12">'
        f"green bands from t={t0:.1f}s, 1s samples</text>"
    )
    for r, name in enumerate(names):
        seq = bands[name]
        if len(seq) != n:
            raise LengthMismatch("bands differ in length")
        y = 30.0 + r * row_h
        mid = y + row_h * 0.5
        out.append(
            f'<text x="6" y="{mid + 4:.1f}" font-family="monospace" font-size="12">{name}</text>'
        )
        out.append(
            f'<line x1="{left:.1f}" y1="{mid:.1f}" x2="{left + n * px_per_s:.1f}" '
            f'y2="{mid:.1f}" stroke="#cccccc" stroke-width="1"/>'
        )
        for start, length in green_windows(seq):
            x = left + start * px_per_s
            w = length * px_per_s
            out.append(
                f'<rect x="{x:.1f}" y="{y + 8:.1f}" width="{w:.1f}" '
                f'height="{row_h - 16:.1f}" fill="#33aa33"/>'
            )
    if spacing_m is not None and speed_kmh is not None and len(names) > 1:
        step = ideal_offset(spacing_m, speed_kmh)
        onset = None
        first = bands[names[0]]
        for i in range(1, n):
            if first[i] and not first[i - 1]:
                onset = i
                break
        if onset is not None:
            x1 = left + onset * px_per_s
            y1 = 30.0 + row_h * 0.5
            x2 = left + (onset + step * (len(names) - 1)) * px_per_s
            y2 = 30.0 + (len(names) - 1) * row_h + row_h * 0.5
            out.append(
                f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                f'stroke="#cc3333" stroke-width="2" stroke-dasharray="5 4"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_band_csv(
    bands: Dict[str, Sequence[int]],
    t0: float,
    path: str,
    positions: Optional[Dict[str, float]] = None,
) -> None:
    """One row per (second, intersection): time, id, position, 0/1 state."""
    names = list(bands)
    n = len(bands[names[0]]) if names else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "intersection_id", "position_m", "state"])
        for i in range(n):
            for name in names:
                pos = positions.get(name, 0.0) if positions else 0.0
                writer.writerow([f"{t0 + i:.0f}", name, f"{pos:.1f}", bands[name][i]])
