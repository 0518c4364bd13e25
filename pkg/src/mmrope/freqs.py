"""Rotary frequency tables, axis allocation over channel pairs or heads, and context-extension rescaling."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .positions import assign, DESIGNS, DesignOptions
from .stream import TokenStream


class AllocationError(ValueError):
    pass


class Axis(str, enum.Enum):
    T = "T"
    H = "H"
    W = "W"


AXES = (Axis.T, Axis.H, Axis.W)


@dataclass(frozen=True)
class FreqTable:
    d: int
    base: float
    theta: tuple[float, ...]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=np.float64)

    @property
    def n_pairs(self) -> int:
        return self.d // 2


def base_frequencies(d: int, base: float) -> FreqTable:
    """``theta_i = base ** (-2i/d)`` for ``i in range(d // 2)``."""
    if isinstance(d, bool) or not isinstance(d, (int, np.integer)) or d < 2 or d % 2:
        raise AllocationError(f"head dimension must be an even integer >= 2, got {d!r}")
    base = float(base)
    if not (base > 1.0 and math.isfinite(base)):
        raise AllocationError(f"rotary base must be > 1, got {base}")
    d = int(d)
    theta = np.power(base, -2.0 * np.arange(d // 2) / d)
    return FreqTable(d, base, tuple(float(x) for x in theta))


class Scheme(str, enum.Enum):
    CHUNKED = "chunked"
    INTERLEAVED = "interleaved"
    VIDEOROPE = "videorope"
    ILROPE = "ilrope"


@dataclass(frozen=True)
class FreqAllocation:
    scheme: Scheme
    ratio: tuple[int, int, int]
    axis_of: tuple[Axis, ...]
    per_axis_base: tuple[float, float, float] | None = None

    @property
    def d(self) -> int:
        return 2 * len(self.axis_of)

    def pairs(self, axis: Axis) -> list[int]:
        axis = Axis(axis)
        return [i for i, a in enumerate(self.axis_of) if a is axis]

    def axes(self) -> list[Axis]:
        return [a for a in AXES if a in self.axis_of]

    def with_axis_bases(self, bases: Sequence[float] | None) -> "FreqAllocation":
        if bases is None:
            return replace(self, per_axis_base=None)
        bases = tuple(float(b) for b in bases)
        if len(bases) != 3 or not all(b > 1 and math.isfinite(b) for b in bases):
            raise AllocationError(f"per-axis bases must be three values > 1, got {bases}")
        return replace(self, per_axis_base=bases)


def _check_ratio(d: int, ratio: Sequence[int]) -> tuple[int, int, int]:
    if d < 2 or d % 2:
        raise AllocationError(f"head dimension must be an even integer >= 2, got {d}")
    ratio = tuple(int(r) for r in ratio)
    if len(ratio) != 3 or any(r < 0 for r in ratio):
        raise AllocationError(f"ratio must be three non-negative counts, got {ratio}")
    if sum(ratio) != d // 2:
        raise AllocationError(f"ratio {ratio} sums to {sum(ratio)}, expected d/2 = {d // 2}")
    return ratio


def _round_robin(quota: dict[Axis, int], order: Sequence[Axis]) -> list[Axis]:
    # exhausted axes drop out of the rotation; survivors fill the tail
    quota = dict(quota)
    out: list[Axis] = []
    while any(quota[a] for a in order):
        for a in order:
            if quota[a]:
                out.append(a)
                quota[a] -= 1
    return out


def alloc_chunked(d: int, ratio: Sequence[int]) -> FreqAllocation:
    n_t, n_h, n_w = _check_ratio(d, ratio)
    axis_of = (Axis.T,) * n_t + (Axis.H,) * n_h + (Axis.W,) * n_w
    return FreqAllocation(Scheme.CHUNKED, (n_t, n_h, n_w), axis_of)


def alloc_interleaved(d: int, ratio: Sequence[int]) -> FreqAllocation:
    n_t, n_h, n_w = _check_ratio(d, ratio)
    axis_of = _round_robin({Axis.T: n_t, Axis.H: n_h, Axis.W: n_w}, AXES)
    return FreqAllocation(Scheme.INTERLEAVED, (n_t, n_h, n_w), tuple(axis_of))


def alloc_videorope_like(d: int, ratio: Sequence[int]) -> FreqAllocation:
    """Spatial axes on the high-frequency pairs, time on the lowest ``n_t`` pairs."""
    n_t, n_h, n_w = _check_ratio(d, ratio)
    axis_of = (Axis.H,) * n_h + (Axis.W,) * n_w + (Axis.T,) * n_t
    return FreqAllocation(Scheme.VIDEOROPE, (n_t, n_h, n_w), axis_of)


def alloc_ilrope_like(d: int, ratio: Sequence[int]) -> FreqAllocation:
    n_t, n_h, n_w = _check_ratio(d, ratio)
    spatial = _round_robin({Axis.H: n_h, Axis.W: n_w}, (Axis.H, Axis.W))
    return FreqAllocation(Scheme.ILROPE, (n_t, n_h, n_w), tuple(spatial) + (Axis.T,) * n_t)


_ALLOCATORS = {
    Scheme.CHUNKED: alloc_chunked,
    Scheme.INTERLEAVED: alloc_interleaved,
    Scheme.VIDEOROPE: alloc_videorope_like,
    Scheme.ILROPE: alloc_ilrope_like,
}


def allocate(scheme: Scheme | str, d: int, ratio: Sequence[int]) -> FreqAllocation:
    try:
        scheme = Scheme(scheme)
    except ValueError:
        valid = ", ".join(s.value for s in Scheme)
        raise AllocationError(f"unknown scheme {scheme!r}; valid: {valid}") from None
    return _ALLOCATORS[scheme](d, ratio)


@dataclass(frozen=True)
class HeadLayout:
    n_q_heads: int
    n_kv_heads: int
    axis_of_kv_head: tuple[Axis, ...]

    @property
    def group_size(self) -> int:
        return self.n_q_heads // self.n_kv_heads

    @property
    def axis_of_q_head(self) -> tuple[Axis, ...]:
        # GQA: query heads inherit the axis of their KV group
        return tuple(a for a in self.axis_of_kv_head for _ in range(self.group_size))

    def kv_head_of(self, q_head: int) -> int:
        return q_head // self.group_size

    def axes(self) -> list[Axis]:
        return [a for a in AXES if a in self.axis_of_kv_head]


def alloc_multihead(n_q_heads: int, n_kv_heads: int, ratio_heads: Sequence[int]) -> HeadLayout:
    if n_q_heads < 1 or n_kv_heads < 1:
        raise AllocationError("head counts must be positive")
    if n_q_heads % n_kv_heads:
        raise AllocationError(f"{n_q_heads} query heads not divisible by {n_kv_heads} KV heads")
    ratio = tuple(int(k) for k in ratio_heads)
    if len(ratio) != 3 or sum(ratio) != n_kv_heads:
        raise AllocationError(f"head ratio {ratio} must have three counts summing to {n_kv_heads}")
    if min(ratio) < 1:
        raise AllocationError(f"every axis needs at least one KV head, got {ratio}")
    k_t, k_h, k_w = ratio
    axes = (Axis.T,) * k_t + (Axis.H,) * k_h + (Axis.W,) * k_w
    return HeadLayout(n_q_heads, n_kv_heads, axes)


class Extrapolation(str, enum.Enum):
    NONE = "none"
    NTK = "ntk"
    YARN = "yarn"


@dataclass(frozen=True)
class ExtrapolationSpec:
    """Context-extension rescaling.

    ``alpha``/``beta`` bound YaRN's ramp, measured in original-context lengths per
    wavelength (``original_ctx * theta / 2pi``): pairs completing fewer than
    ``alpha`` turns over the original context are fully interpolated, pairs
    completing more than ``beta`` turns are left alone.
    """

    method: Extrapolation = Extrapolation.NONE
    scale: float = 1.0
    alpha: float = 1.0
    beta: float = 32.0
    original_ctx: int = 32768

    def __post_init__(self):
        object.__setattr__(self, "method", Extrapolation(self.method))
        if not (self.scale >= 1.0 and math.isfinite(self.scale)):
            raise AllocationError(f"scale must be >= 1, got {self.scale}")
        if not self.alpha < self.beta:
            raise AllocationError(f"YaRN ramp needs alpha < beta, got ({self.alpha}, {self.beta})")
        if self.original_ctx < 1:
            raise AllocationError("original_ctx must be positive")


def apply_ntk(table: FreqTable, scale: float) -> FreqTable:
    if not scale >= 1.0:
        raise AllocationError(f"scale must be >= 1, got {scale}")
    if scale == 1.0 or table.d == 2:
        # d == 2 has only theta_0 = 1, which NTK never moves
        return table
    new_base = table.base * scale ** (table.d / (table.d - 2))
    return base_frequencies(table.d, new_base)


def yarn_ramp(table: FreqTable, spec: ExtrapolationSpec) -> np.ndarray:
    """Per-pair blend weight: 1 keeps theta, 0 divides it by the scale."""
    turns = spec.original_ctx * table.array / (2.0 * math.pi)
    return np.clip((turns - spec.alpha) / (spec.beta - spec.alpha), 0.0, 1.0)


def apply_yarn(table: FreqTable, spec: ExtrapolationSpec) -> FreqTable:
    if spec.method is not Extrapolation.YARN:
        raise AllocationError(f"apply_yarn needs a YaRN spec, got {spec.method.value}")
    if spec.scale == 1.0:
        return table
    gamma = yarn_ramp(table, spec)
    theta = table.array
    new = gamma * theta + (1.0 - gamma) * theta / spec.scale
    return FreqTable(table.d, table.base, tuple(float(x) for x in new))


def extrapolate(table: FreqTable, spec: ExtrapolationSpec | None) -> FreqTable:
    if spec is None or spec.method is Extrapolation.NONE:
        return table
    if spec.method is Extrapolation.NTK:
        return apply_ntk(table, spec.scale)
    return apply_yarn(table, spec)


def recommend_scale(
    stream: TokenStream,
    design: str,
    train_ctx: int,
    opts: DesignOptions | None = None,
) -> float:
    """Smallest rescale factor (>= 1) whose context covers every coordinate the design produces."""
    if design not in DESIGNS:
        raise AllocationError(f"unknown design {design!r}; valid: {', '.join(DESIGNS)}")
    if train_ctx < 1:
        raise AllocationError(f"train_ctx must be positive, got {train_ctx}")
    top = assign(design, stream, opts).max_position()
    if top is None:
        return 1.0
    return max(1.0, float(top + 1) / train_ctx)


def parse_ratio(text: str | Sequence[int]) -> tuple[int, int, int]:
    if isinstance(text, str):
        try:
            parts = tuple(int(p) for p in text.split(":"))
        except ValueError:
            raise AllocationError(f"ratio must look like a:b:c, got {text!r}") from None
    else:
        parts = tuple(int(p) for p in text)
    if len(parts) != 3:
        raise AllocationError(f"ratio must have three parts, got {text!r}")
    return parts


def default_ratio(d: int) -> tuple[int, int, int]:
    """24:20:20 scaled to ``d/2`` pairs, with the rounding surplus on T."""
    half = d // 2
    n_s = round(half * 20 / 64)
    return half - 2 * n_s, n_s, n_s


def parse_alloc_config(text: str) -> dict:
    """Parse ``scheme=interleaved,ratio=24:20:20,d=128,base=1000000``."""
    out: dict = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise AllocationError(f"expected key=value, got {item!r}")
        key = key.strip()
        if key == "scheme":
            out["scheme"] = value.strip()
        elif key == "ratio":
            out["ratio"] = parse_ratio(value)
        elif key == "d":
            out["d"] = int(value)
        elif key == "base":
            out["base"] = float(value)
        else:
            raise AllocationError(f"unknown allocation key {key!r}")
    return out


def freqs_csv(rows: Sequence[tuple[int, Axis, float]]) -> str:
    buf = io.StringIO()
    buf.write("pair_index,axis,theta\n")
    for i, axis, theta in rows:
        buf.write(f"{i},{Axis(axis).value},{float(theta)!r}\n")
    return buf.getvalue()
