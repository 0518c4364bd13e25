"""Position-ID assignment for multimodal token streams.

Every design maps each token of a :class:`~mmrope.stream.TokenStream` to a
``(t, h, w)`` triple. Coordinates are exact dyadic rationals (``Fraction`` with a
power-of-two denominator no larger than 2**8) so that overlap checks never rely
on floating-point comparison. The circular layout is the one exception: its
coordinates are irrational and get rounded to the 2**-8 grid, with the layout
flagged ``approximate``.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .stream import Modality, TokenStream, raster, token_count

MAX_DENOM_EXP = 8
_GRID = 2**MAX_DENOM_EXP


class PositionError(ValueError):
    pass


def coord(value) -> Fraction:
    """Convert an int, Fraction, float or ``"1/2"``/``"0.25"`` literal to a dyadic coordinate."""
    if isinstance(value, bool):
        raise PositionError(f"not a coordinate: {value!r}")
    try:
        fr = Fraction(value.strip()) if isinstance(value, str) else Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        raise PositionError(f"not a rational literal: {value!r}") from None
    den = fr.denominator
    if den & (den - 1) or den > _GRID:
        raise PositionError(
            f"{value!r} is not dyadic with denominator <= 2**{MAX_DENOM_EXP}"
        )
    return fr


def format_coord(value: Fraction) -> str:
    """Exact decimal rendering of a dyadic rational: ``3/2 -> '1.5'``, ``4 -> '4'``."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    k = value.denominator.bit_length() - 1
    digits = abs(value.numerator) * 5**k
    sign = "-" if value < 0 else ""
    whole, frac = divmod(digits, 10**k)
    return f"{sign}{whole}.{str(frac).rjust(k, '0').rstrip('0')}"


class PosTriple(NamedTuple):
    t: Fraction
    h: Fraction
    w: Fraction

    @classmethod
    def of(cls, t, h=None, w=None) -> "PosTriple":
        if h is None and w is None:
            h = w = t
        return cls(Fraction(t), Fraction(h), Fraction(w))

    def minus(self, other: "PosTriple") -> "PosTriple":
        return PosTriple(self.t - other.t, self.h - other.h, self.w - other.w)

    def plus(self, other: "PosTriple") -> "PosTriple":
        return PosTriple(self.t + other.t, self.h + other.h, self.w + other.w)

    def as_floats(self) -> tuple[float, float, float]:
        return float(self.t), float(self.h), float(self.w)


class IntervalMode(str, enum.Enum):
    MAX_JUMP = "maxjump"
    VANILLA_MATCH = "vanilla"


_V2PE_STRIDES = frozenset(Fraction(1, 2**k) for k in range(MAX_DENOM_EXP + 1))


@dataclass(frozen=True)
class DesignOptions:
    """Knobs shared by all position designs; each design reads the ones it needs.

    ``stride_schedule`` switches the temporal stride from constant to dynamic:
    entry ``k`` is the t-gap between frame ``k`` and frame ``k+1`` of a video, and
    the same schedule is applied to every video block.
    """

    spatial_reset: bool = False
    temporal_stride: Fraction = Fraction(1)
    stride_schedule: tuple[Fraction, ...] | None = None
    interval_mode: IntervalMode = IntervalMode.MAX_JUMP
    text_spatial_reset: bool = False
    visual_stride: Fraction = Fraction(1)
    circle_radius: float = 1.0

    def __post_init__(self):
        stride = coord(self.temporal_stride)
        if stride <= 0:
            raise PositionError(f"temporal_stride must be positive, got {stride}")
        object.__setattr__(self, "temporal_stride", stride)
        if self.stride_schedule is not None:
            sched = tuple(coord(s) for s in self.stride_schedule)
            if any(s <= 0 for s in sched):
                raise PositionError("stride_schedule entries must be positive")
            object.__setattr__(self, "stride_schedule", sched)
        object.__setattr__(self, "interval_mode", IntervalMode(self.interval_mode))
        vs = coord(self.visual_stride)
        if vs not in _V2PE_STRIDES:
            raise PositionError(f"visual_stride must be one of 1, 1/2, ..., 1/256; got {vs}")
        object.__setattr__(self, "visual_stride", vs)
        if not (self.circle_radius > 0 and math.isfinite(self.circle_radius)):
            raise PositionError(f"circle_radius must be positive, got {self.circle_radius}")


@dataclass(frozen=True)
class LayoutEntry:
    pos: PosTriple
    modality: Modality
    segment: int


@dataclass(frozen=True)
class PositionLayout:
    entries: tuple[LayoutEntry, ...]
    design_name: str
    params: DesignOptions
    stream: TokenStream = field(repr=False, compare=False, default=TokenStream())
    approximate: bool = False

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> LayoutEntry:
        return self.entries[i]

    @property
    def triples(self) -> list[PosTriple]:
        return [e.pos for e in self.entries]

    def as_array(self) -> np.ndarray:
        """Positions as an ``(N, 3)`` float64 array."""
        if not self.entries:
            return np.zeros((0, 3))
        return np.array([e.pos.as_floats() for e in self.entries], dtype=np.float64)

    def max_position(self) -> Fraction | None:
        if not self.entries:
            return None
        return max(max(e.pos) for e in self.entries)


def _frame_offsets(n_frames: int, opts: DesignOptions) -> list[Fraction]:
    if opts.stride_schedule is None:
        return [f * opts.temporal_stride for f in range(n_frames)]
    if len(opts.stride_schedule) < n_frames:
        raise PositionError(
            f"stride schedule has {len(opts.stride_schedule)} entries, video has {n_frames} frames"
        )
    out = [Fraction(0)]
    for step in opts.stride_schedule[: n_frames - 1]:
        out.append(out[-1] + step)
    return out


def _text_triple(m: Fraction, zero_spatial: bool) -> PosTriple:
    if zero_spatial:
        return PosTriple(m, Fraction(0), Fraction(0))
    return PosTriple(m, m, m)


def _layout(stream, entries, name, opts, approximate=False) -> PositionLayout:
    return PositionLayout(tuple(entries), name, opts, stream, approximate)


def assign_vanilla(stream: TokenStream, opts: DesignOptions | None = None) -> PositionLayout:
    opts = opts or DesignOptions()
    entries = []
    m = 0
    for si, seg in enumerate(stream.segments):
        for _ in range(seg.token_count):
            entries.append(LayoutEntry(PosTriple.of(m), seg.kind, si))
            m += 1
    return _layout(stream, entries, "vanilla", opts)


def assign_v2pe(stream: TokenStream, opts: DesignOptions | None = None) -> PositionLayout:
    opts = opts or DesignOptions()
    entries = []
    m = Fraction(0)
    for si, seg in enumerate(stream.segments):
        step = opts.visual_stride if seg.kind.is_visual else Fraction(1)
        for _ in range(seg.token_count):
            entries.append(LayoutEntry(PosTriple.of(m), seg.kind, si))
            m += step
    return _layout(stream, entries, "v2pe", opts)


def _assign_blocks(
    stream: TokenStream,
    opts: DesignOptions,
    name: str,
    *,
    centered: bool = False,
) -> PositionLayout:
    """Shared driver for the 3D "cube" designs (MRoPE family, diagonal, text spatial-reset)."""
    zero_text = opts.text_spatial_reset
    entries = []
    m = Fraction(0)
    for si, seg in enumerate(stream.segments):
        if seg.kind is Modality.TEXT:
            for _ in range(seg.len):
                entries.append(LayoutEntry(_text_triple(m, zero_text), seg.kind, si))
                m += 1
            continue
        p = m
        offsets = _frame_offsets(seg.t_frames, opts)
        block = []
        for f, r, c in raster(seg):
            t = p + offsets[f]
            if centered:
                pos = PosTriple(t, t + r - seg.h // 2, t + c - seg.w // 2)
            elif opts.spatial_reset:
                pos = PosTriple(t, Fraction(r), Fraction(c))
            else:
                # spatial axes ride on each frame's own time coordinate
                pos = PosTriple(t, t + r, t + c)
            block.append(LayoutEntry(pos, seg.kind, si))
        entries.extend(block)
        if centered:
            # diagonal layouts continue text along the diagonal from the last frame
            m = max(e.pos.t for e in block) + 1
        elif opts.interval_mode is IntervalMode.VANILLA_MATCH:
            m = p + seg.token_count
        else:
            m = max(max(e.pos) for e in block) + 1
    return _layout(stream, entries, name, opts)


def assign_mrope(stream: TokenStream, opts: DesignOptions | None = None) -> PositionLayout:
    opts = opts or DesignOptions()
    name = "mrope-i" if opts.spatial_reset else "mrope"
    if opts.text_spatial_reset:
        name = "text-spatial-reset"
    return _assign_blocks(stream, opts, name)


def assign_diagonal(stream: TokenStream, opts: DesignOptions | None = None) -> PositionLayout:
    opts = opts or DesignOptions()
    return _assign_blocks(stream, opts, "diagonal", centered=True)


def assign_text_spatial_reset(
    stream: TokenStream, opts: DesignOptions | None = None
) -> PositionLayout:
    opts = replace(opts or DesignOptions(), spatial_reset=True, text_spatial_reset=True)
    return _assign_blocks(stream, opts, "text-spatial-reset")


# orthonormal basis of the plane orthogonal to (1, 1, 1)
_U1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
_U2 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6.0)


def _snap(x: float) -> Fraction:
    return Fraction(round(x * _GRID), _GRID)


def assign_circle(stream: TokenStream, opts: DesignOptions | None = None) -> PositionLayout:
    opts = opts or DesignOptions()
    entries = []
    m = Fraction(0)
    for si, seg in enumerate(stream.segments):
        if seg.kind is Modality.TEXT:
            for _ in range(seg.len):
                entries.append(LayoutEntry(PosTriple.of(m), seg.kind, si))
                m += 1
            continue
        n = seg.token_count
        center = float(m)
        for k in range(n):
            phi = 2.0 * math.pi * k / n
            x = center + opts.circle_radius * (math.cos(phi) * _U1 + math.sin(phi) * _U2)
            entries.append(LayoutEntry(PosTriple(*(_snap(v) for v in x)), seg.kind, si))
        m += 1
    return _layout(stream, entries, "circle", opts, approximate=not stream.is_text_only)


def relative_triple(layout: PositionLayout, i: int, j: int) -> PosTriple:
    """Component-wise ``triple(j) - triple(i)``."""
    n = len(layout)
    for idx in (i, j):
        if not 0 <= idx < n:
            raise IndexError(f"token index {idx} out of range for layout of {n} tokens")
    return layout.entries[j].pos.minus(layout.entries[i].pos)


@dataclass(frozen=True)
class Design:
    name: str
    assign: Callable[[TokenStream, DesignOptions], PositionLayout]
    defaults: dict = field(default_factory=dict)


DESIGNS: dict[str, Design] = {
    d.name: d
    for d in [
        Design("vanilla", assign_vanilla),
        Design("v2pe", assign_v2pe, {"visual_stride": Fraction(1, 2)}),
        Design("mrope", assign_mrope),
        Design("mrope-i", assign_mrope, {"spatial_reset": True}),
        Design("mhrope", assign_mrope, {"spatial_reset": True}),
        Design("diagonal", assign_diagonal),
        Design("circle", assign_circle),
        Design("text-spatial-reset", assign_text_spatial_reset),
    ]
}


def design_options(design: str, **overrides) -> DesignOptions:
    if design not in DESIGNS:
        raise PositionError(f"unknown design {design!r}; valid: {', '.join(DESIGNS)}")
    kw = dict(DESIGNS[design].defaults)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return DesignOptions(**kw)


def assign(design: str, stream: TokenStream, opts: DesignOptions | None = None, **overrides) -> PositionLayout:
    """Lay out ``stream`` under a registered design name.

    ``opts`` replaces the design's defaults entirely; keyword overrides are merged
    on top of the defaults instead.
    """
    if design not in DESIGNS:
        raise PositionError(f"unknown design {design!r}; valid: {', '.join(DESIGNS)}")
    if opts is None:
        opts = design_options(design, **overrides)
    layout = DESIGNS[design].assign(stream, opts)
    assert len(layout) == token_count(stream)
    return replace(layout, design_name=design)


def layout_csv(layout: PositionLayout) -> str:
    buf = io.StringIO()
    buf.write("token_index,segment_index,modality,t,h,w,design\n")
    for i, e in enumerate(layout.entries):
        t, h, w = (format_coord(v) for v in e.pos)
        buf.write(f"{i},{e.segment},{e.modality.value},{t},{h},{w},{layout.design_name}\n")
    return buf.getvalue()


def parse_schedule(text: str | Iterable) -> tuple[Fraction, ...]:
    if isinstance(text, str):
        text = [s for s in text.replace(";", ",").split(",") if s.strip()]
    return tuple(coord(s) for s in text)
