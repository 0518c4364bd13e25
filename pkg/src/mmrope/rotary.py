"""Multi-axis rotary rotation and attention scores.

Rotation acts on adjacent component pairs ``(v[2i], v[2i+1])``. Pair ``i`` is
driven by one positional axis: the axis the channel allocation assigns it to, or
the single axis of the attention head under a head layout. All arithmetic is
float64; angles are ``position * theta`` with no argument reduction, so keep
``|position * theta| < 2**52``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .freqs import (
    AXES,
    Axis,
    ExtrapolationSpec,
    FreqAllocation,
    FreqTable,
    HeadLayout,
    base_frequencies,
    extrapolate,
)
from .positions import PosTriple

_ANGLE_LIMIT = 2.0**52
_AXIS_INDEX = {a: i for i, a in enumerate(AXES)}


class RotaryError(ValueError):
    pass


@dataclass(frozen=True)
class RotarySpec:
    table: FreqTable
    allocation: FreqAllocation | None = None
    head_layout: HeadLayout | None = None
    extrapolation: ExtrapolationSpec = field(default_factory=ExtrapolationSpec)

    def __post_init__(self):
        if (self.allocation is None) == (self.head_layout is None):
            raise RotaryError("exactly one of allocation / head_layout must be given")
        if self.allocation is not None and self.allocation.d != self.table.d:
            raise RotaryError(
                f"allocation covers d={self.allocation.d}, table has d={self.table.d}"
            )

    @property
    def d(self) -> int:
        return self.table.d

    @cached_property
    def effective_table(self) -> FreqTable:
        return extrapolate(self.table, self.extrapolation)

    @cached_property
    def _pair_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(axis index per pair, effective theta per pair) for channel-split specs."""
        alloc = self.allocation
        axis_idx = np.array([_AXIS_INDEX[a] for a in alloc.axis_of], dtype=np.intp)
        if alloc.per_axis_base is None:
            theta = self.effective_table.array
        else:
            per_axis = [
                extrapolate(base_frequencies(self.d, b), self.extrapolation).array
                for b in alloc.per_axis_base
            ]
            theta = np.array([per_axis[a][i] for i, a in enumerate(axis_idx)])
        return axis_idx, theta

    def axes(self) -> list[Axis]:
        if self.head_layout is not None:
            return self.head_layout.axes()
        return self.allocation.axes()

    def axis_thetas(self, axis: Axis) -> np.ndarray:
        """Effective frequencies that encode ``axis`` (full table for a head layout)."""
        axis = Axis(axis)
        if axis not in self.axes():
            raise RotaryError(f"axis {axis.value} is not encoded by this spec")
        if self.head_layout is not None:
            return self.effective_table.array
        axis_idx, theta = self._pair_arrays
        return theta[axis_idx == _AXIS_INDEX[axis]]

    def pair_axes_and_thetas(self, head: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        if self.head_layout is None:
            if head is not None:
                raise RotaryError("head index given for a channel-split spec")
            return self._pair_arrays
        if head is None:
            raise RotaryError("a head index is required under a head layout")
        n_q = self.head_layout.n_q_heads
        if not 0 <= head < n_q:
            raise RotaryError(f"head {head} out of range for {n_q} query heads")
        axis = self.head_layout.axis_of_q_head[head]
        n = self.d // 2
        return np.full(n, _AXIS_INDEX[axis], dtype=np.intp), self.effective_table.array


def _vector(v, d: int) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (d,):
        raise RotaryError(f"expected a vector of length {d}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RotaryError("vector has non-finite components")
    return arr


def _position(p) -> np.ndarray:
    if isinstance(p, PosTriple):
        return np.array(p.as_floats())
    arr = np.asarray([float(x) for x in p], dtype=np.float64)
    if arr.shape != (3,):
        raise RotaryError(f"position must be a (t, h, w) triple, got {p!r}")
    return arr


def rotate_pairs(v: np.ndarray, angles: np.ndarray) -> np.ndarray:
    if np.any(np.abs(angles) >= _ANGLE_LIMIT):
        raise RotaryError("rotation angle exceeds the 2**52 precision limit")
    c, s = np.cos(angles), np.sin(angles)
    x0, x1 = v[0::2], v[1::2]
    out = np.empty_like(v)
    out[0::2] = x0 * c - x1 * s
    out[1::2] = x0 * s + x1 * c
    return out


def rotate(v, p, spec: RotarySpec, head: int | None = None) -> np.ndarray:
    """Rotate ``v`` to position triple ``p``.

    Under a head layout ``head`` is the query-head index; a KV head shares the
    axis of any query head in its group.
    """
    vec = _vector(v, spec.d)
    axis_idx, theta = spec.pair_axes_and_thetas(head)
    return rotate_pairs(vec, _position(p)[axis_idx] * theta)


def rotate_1d(v, m, table: FreqTable) -> np.ndarray:
    """Plain text-LLM RoPE at scalar position ``m``."""
    vec = _vector(v, table.d)
    return rotate_pairs(vec, float(m) * table.array)


def attention_score(q, k, p_q, p_k, spec: RotarySpec, head: int | None = None) -> float:
    return float(np.dot(rotate(q, p_q, spec, head), rotate(k, p_k, spec, head)))


def score_complex_form(q, k, delta, spec: RotarySpec, head: int | None = None) -> float:
    """Score via the complex-sum identity, with ``delta = p_k - p_q``.

    Each pair contributes ``Re[(q_i * conj(k_i)) * exp(1j * (p_q - p_k) * theta_i)]``.
    """
    qv, kv = _vector(q, spec.d), _vector(k, spec.d)
    axis_idx, theta = spec.pair_axes_and_thetas(head)
    h = (qv[0::2] + 1j * qv[1::2]) * np.conj(kv[0::2] + 1j * kv[1::2])
    phase = -_position(delta)[axis_idx] * theta
    return float(np.real(np.sum(h * np.exp(1j * phase))))


def multihead_scores(
    q_heads: Sequence, k_heads: Sequence, p_q, p_k, spec: RotarySpec
) -> list[float]:
    layout = spec.head_layout
    if layout is None:
        raise RotaryError("multihead_scores needs a spec with a head layout")
    if len(q_heads) != layout.n_q_heads or len(k_heads) != layout.n_kv_heads:
        raise RotaryError(
            f"expected {layout.n_q_heads} query / {layout.n_kv_heads} KV heads, "
            f"got {len(q_heads)} / {len(k_heads)}"
        )
    return [
        attention_score(q, k_heads[layout.kv_head_of(h)], p_q, p_k, spec, head=h)
        for h, q in enumerate(q_heads)
    ]


def read_vectors(path) -> list[np.ndarray]:
    """One vector per CSV line; blank lines are skipped."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    try:
        return [np.array([float(c) for c in r], dtype=np.float64) for r in rows]
    except ValueError as exc:
        raise RotaryError(f"{path}: {exc}") from None


def vectors_csv(vectors: Sequence) -> str:
    return "".join(",".join(repr(float(x)) for x in v) + "\n" for v in vectors)
