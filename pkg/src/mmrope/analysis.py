"""Long-range decay curves, positional-coherence audits and attention-mass measurement."""

from __future__ import annotations

import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .freqs import Axis
from .positions import PositionLayout
from .rotary import RotarySpec
from .stream import Modality, Role, Text, TokenStream, token_count


class AnalysisError(ValueError):
    pass


def _thetas(thetas) -> np.ndarray:
    arr = np.asarray(thetas, dtype=np.float64).ravel()
    if arr.size == 0:
        raise AnalysisError("need at least one frequency")
    return arr


def partial_sums(thetas, delta: float) -> np.ndarray:
    """``|S_j|`` for ``j = 1..n`` where ``S_j = sum_{k<j} exp(1j * delta * theta_k)``."""
    th = _thetas(thetas)
    return np.abs(np.cumsum(np.exp(1j * float(delta) * th)))


def decay_indicator(thetas, delta: float) -> float:
    return float(partial_sums(thetas, delta).mean())


def _indicator_grid(thetas: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    phases = np.exp(1j * np.outer(deltas, thetas))
    return np.abs(np.cumsum(phases, axis=1)).mean(axis=1)


def default_delta_grid(n: int = 200, hi: float = 1e4) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1.0, hi, n)])


@dataclass(frozen=True)
class DecayCurve:
    axis: Axis
    deltas: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    n_pairs: int = 0


def decay_curve(spec: RotarySpec, axis: Axis | str, delta_grid=None) -> DecayCurve:
    try:
        axis = Axis(axis)
    except ValueError:
        raise AnalysisError(f"unknown axis {axis!r}") from None
    if axis not in spec.axes():
        raise AnalysisError(f"axis {axis.value} has no frequencies in this spec")
    deltas = default_delta_grid() if delta_grid is None else np.asarray(delta_grid, dtype=np.float64)
    thetas = spec.axis_thetas(axis)
    return DecayCurve(axis, deltas, _indicator_grid(thetas, deltas), len(thetas))


def curve_divergence(a: DecayCurve, b: DecayCurve, lo: float = 1.0, hi: float = 1e4) -> float:
    """Max over the shared grid in ``[lo, hi]`` of ``|a - b| / max(a, b)``."""
    if a.deltas.shape != b.deltas.shape or not np.array_equal(a.deltas, b.deltas):
        raise AnalysisError("curves are on different delta grids")
    sel = (a.deltas >= lo) & (a.deltas <= hi)
    if not sel.any():
        raise AnalysisError(f"no grid points in [{lo}, {hi}]")
    x, y = a.values[sel], b.values[sel]
    return float(np.max(np.abs(x - y) / np.maximum(x, y)))


def decay_csv(curves: Sequence[DecayCurve], scheme: str, ratio: str, d: int, base: float) -> str:
    buf = io.StringIO()
    buf.write("delta,axis,indicator,scheme,ratio,d,base\n")
    for curve in curves:
        for delta, value in zip(curve.deltas, curve.values):
            buf.write(
                f"{float(delta)!r},{curve.axis.value},{float(value)!r},{scheme},{ratio},{d},{float(base)!r}\n"
            )
    return buf.getvalue()


@dataclass(frozen=True)
class BlockInterval:
    segment: int
    before: Fraction | None
    after: Fraction | None

    @property
    def gap(self) -> Fraction | None:
        if self.before is None or self.after is None:
            return None
        return self.after - self.before


@dataclass
class CoherenceReport:
    overlaps: list[tuple[int, int]]
    generated_overlap: bool
    max_position: Fraction | None
    intervals: list[BlockInterval]
    design: str = ""

    @property
    def clean(self) -> bool:
        return not self.overlaps and not self.generated_overlap

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None else float(x)

        return {
            "design": self.design,
            "overlaps": [list(p) for p in self.overlaps],
            "generated_overlap": self.generated_overlap,
            "max_position": num(self.max_position),
            "intervals": [
                {"segment": iv.segment, "before": num(iv.before), "after": num(iv.after), "gap": num(iv.gap)}
                for iv in self.intervals
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _segment_spans(stream: TokenStream) -> list[tuple[int, int]]:
    spans, start = [], 0
    for seg in stream.segments:
        spans.append((start, start + seg.token_count))
        start += seg.token_count
    return spans


def check_coherence(layout: PositionLayout, stream: TokenStream | None = None) -> CoherenceReport:
    """Audit a layout for cross-segment collisions and generation-time confusion.

    A generated text token is flagged when its triple equals a visual token's, or
    when its position counter lands inside the coordinate range (over all three
    axes) of a visual block earlier in the stream.
    """
    stream = layout.stream if stream is None else stream
    if len(layout) != token_count(stream):
        raise AnalysisError(
            f"layout has {len(layout)} tokens, stream has {token_count(stream)}"
        )
    segs = stream.segments
    entries = layout.entries

    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, e in enumerate(entries):
        groups[e.pos].append(i)
    overlaps = []
    for idxs in groups.values():
        if len(idxs) < 2:
            continue
        for a in range(len(idxs)):
            for b in range(a + 1, len(idxs)):
                i, j = idxs[a], idxs[b]
                if entries[i].segment != entries[j].segment:
                    overlaps.append((i, j))
    overlaps.sort()

    def generated(i: int) -> bool:
        seg = segs[entries[i].segment]
        return isinstance(seg, Text) and seg.role is Role.GENERATED

    flagged = any(
        (generated(i) and entries[j].modality.is_visual)
        or (generated(j) and entries[i].modality.is_visual)
        for i, j in overlaps
    )

    spans = _segment_spans(stream)
    blocks = []  # (segment, lo, hi) for visual blocks in stream order
    for si, seg in enumerate(segs):
        if seg.kind.is_visual:
            lo_i, hi_i = spans[si]
            coords = [c for e in entries[lo_i:hi_i] for c in e.pos]
            blocks.append((si, min(coords), max(coords)))
    if not flagged:
        for si, seg in enumerate(segs):
            if not (isinstance(seg, Text) and seg.role is Role.GENERATED):
                continue
            earlier = [(lo, hi) for bi, lo, hi in blocks if bi < si]
            lo_i, hi_i = spans[si]
            if any(lo <= e.pos.t <= hi for e in entries[lo_i:hi_i] for lo, hi in earlier):
                flagged = True
                break

    intervals = []
    for si, seg in enumerate(segs):
        if not seg.kind.is_visual:
            continue
        before = after = None
        if si > 0 and segs[si - 1].kind is Modality.TEXT:
            before = entries[spans[si - 1][1] - 1].pos.t
        if si + 1 < len(segs) and segs[si + 1].kind is Modality.TEXT:
            after = entries[spans[si + 1][0]].pos.t
        intervals.append(BlockInterval(si, before, after))

    return CoherenceReport(overlaps, flagged, layout.max_position(), intervals, layout.design_name)


@dataclass
class SinkProfile:
    segment: int
    cells: np.ndarray  # (frames, h, w) mean attention received per visual token

    @property
    def frame_mean(self) -> np.ndarray:
        return self.cells.mean(axis=0)

    def argmax_per_frame(self) -> list[tuple[int, int]]:
        out = []
        for frame in self.cells:
            r, c = np.unravel_index(int(np.argmax(frame)), frame.shape)
            out.append((int(r), int(c)))
        return out


@dataclass
class AttentionMassReport:
    masses: list[float]
    profiles: list[SinkProfile]

    @property
    def mass(self) -> float:
        return float(np.mean(self.masses))

    def to_dict(self) -> dict:
        return {
            "visual_mass": self.mass,
            "per_matrix": self.masses,
            "sink_profiles": [
                {
                    "segment": p.segment,
                    "shape": list(p.cells.shape),
                    "cells": p.cells.tolist(),
                    "frame_mean": p.frame_mean.tolist(),
                    "argmax_per_frame": [list(rc) for rc in p.argmax_per_frame()],
                }
                for p in self.profiles
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _check_stochastic(m: np.ndarray, n: int, tol: float = 1e-6) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise AnalysisError(f"attention matrix must be square, got shape {m.shape}")
    if m.shape[0] != n:
        raise AnalysisError(f"attention matrix is {m.shape[0]}x{m.shape[0]}, layout has {n} tokens")
    if not np.all(np.isfinite(m)) or np.any(m < -tol):
        raise AnalysisError("attention weights must be finite and non-negative")
    bad = np.flatnonzero(np.abs(m.sum(axis=1) - 1.0) > tol)
    if bad.size:
        raise AnalysisError(f"rows {bad[:5].tolist()} do not sum to 1 within {tol}")
    return m


def visual_mass(matrix: np.ndarray, is_visual: np.ndarray) -> float:
    """Mean over query rows of the weight landing on visual-token columns."""
    return float(matrix[:, np.asarray(is_visual, dtype=bool)].sum(axis=1).mean())


def attention_mass(matrices, layout: PositionLayout) -> AttentionMassReport:
    """Measure attention on visual tokens for one ``(N, N)`` matrix or a stack of them.

    Sink profiles average the column means of every supplied matrix uniformly.
    """
    arr = np.asarray(matrices, dtype=np.float64)
    stack = arr[None] if arr.ndim == 2 else arr
    if stack.ndim != 3:
        raise AnalysisError(f"expected one matrix or a stack of matrices, got shape {arr.shape}")
    n = len(layout)
    if layout.stream is None or token_count(layout.stream) != n:
        raise AnalysisError("layout does not carry the stream it was assigned from")
    stack = np.stack([_check_stochastic(m, n) for m in stack])
    is_visual = np.array([e.modality.is_visual for e in layout.entries], dtype=bool)
    masses = [visual_mass(m, is_visual) for m in stack]

    received = stack.mean(axis=1).mean(axis=0)
    profiles = []
    for si, (lo, hi) in enumerate(_segment_spans(layout.stream)):
        seg = layout.stream.segments[si]
        if seg.kind.is_visual:
            profiles.append(SinkProfile(si, received[lo:hi].reshape(seg.t_frames, seg.h, seg.w)))
    return AttentionMassReport(masses, profiles)


def read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise AnalysisError(f"{path}: {exc}") from None
