"""Multimodal token streams: shape-only descriptions of interleaved text, images and video.

A stream is an ordered tuple of segments. Streams are read from and written to a
small JSON document::

    {"segments": [{"kind": "text", "len": 4, "role": "prompt"},
                  {"kind": "image", "h": 2, "w": 3},
                  {"kind": "video", "t": 2, "h": 2, "w": 2},
                  {"kind": "text", "len": 1, "role": "generated"}]}
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Union


class Modality(str, enum.Enum):
    TEXT = "text"
    IMAGE = "image"
    VIDEO = "video"

    @property
    def is_visual(self) -> bool:
        return self is not Modality.TEXT


class Role(str, enum.Enum):
    PROMPT = "prompt"
    GENERATED = "generated"


class StreamSpecError(ValueError):
    """Raised for malformed stream documents; carries the offending segment index."""

    def __init__(self, message: str, segment: int | None = None):
        self.segment = segment
        if segment is not None:
            message = f"segment {segment}: {message}"
        super().__init__(message)


def _check_extent(name: str, value: object) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return value


@dataclass(frozen=True)
class Text:
    len: int
    role: Role = Role.PROMPT

    def __post_init__(self):
        _check_extent("len", self.len)
        object.__setattr__(self, "role", Role(self.role))

    kind = Modality.TEXT

    @property
    def token_count(self) -> int:
        return self.len


@dataclass(frozen=True)
class Image:
    h: int
    w: int

    def __post_init__(self):
        _check_extent("h", self.h)
        _check_extent("w", self.w)

    kind = Modality.IMAGE
    t_frames = 1

    @property
    def token_count(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class Video:
    t_frames: int
    h: int
    w: int

    def __post_init__(self):
        _check_extent("t", self.t_frames)
        _check_extent("h", self.h)
        _check_extent("w", self.w)

    kind = Modality.VIDEO

    @property
    def token_count(self) -> int:
        return self.t_frames * self.h * self.w


Segment = Union[Text, Image, Video]


@dataclass(frozen=True)
class TokenStream:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    @property
    def is_text_only(self) -> bool:
        return all(s.kind is Modality.TEXT for s in self.segments)


class TokenRef(NamedTuple):
    segment: int
    index: int
    modality: Modality


def token_count(stream: TokenStream) -> int:
    return sum(s.token_count for s in stream.segments)


def token_table(stream: TokenStream) -> list[TokenRef]:
    """One entry per token in stream order.

    Visual tokens are enumerated frame-major, then row, then column, so the
    intra-segment index of (frame, row, col) is ``frame*h*w + row*w + col``.
    """
    out = []
    for si, seg in enumerate(stream.segments):
        out.extend(TokenRef(si, k, seg.kind) for k in range(seg.token_count))
    return out


def raster(seg: Image | Video) -> Iterator[tuple[int, int, int]]:
    """Yield (frame, row, col) for every token of a visual segment in canonical order."""
    for f in range(seg.t_frames):
        for r in range(seg.h):
            for c in range(seg.w):
                yield f, r, c


_KEYS = {
    "text": {"kind", "len", "role"},
    "image": {"kind", "h", "w"},
    "video": {"kind", "t", "h", "w"},
}


def _segment_from_obj(obj: object, index: int) -> Segment:
    if not isinstance(obj, dict):
        raise StreamSpecError("segment must be a JSON object", index)
    kind = obj.get("kind")
    if kind not in _KEYS:
        raise StreamSpecError(f"unknown kind {kind!r}", index)
    keys = set(obj)
    if kind != "text" and "role" in keys:
        raise StreamSpecError("visual segments cannot carry a role", index)
    unknown = keys - _KEYS[kind]
    if unknown:
        raise StreamSpecError(f"unknown keys {sorted(unknown)}", index)
    missing = _KEYS[kind] - keys - {"role"}
    if missing:
        raise StreamSpecError(f"missing keys {sorted(missing)}", index)
    try:
        if kind == "text":
            role = obj.get("role", "prompt")
            if role not in ("prompt", "generated"):
                raise ValueError(f"unknown role {role!r}")
            return Text(obj["len"], Role(role))
        if kind == "image":
            return Image(obj["h"], obj["w"])
        return Video(obj["t"], obj["h"], obj["w"])
    except ValueError as exc:
        raise StreamSpecError(str(exc), index) from None


def parse_stream(spec_text: str | bytes) -> TokenStream:
    try:
        doc = json.loads(spec_text)
    except json.JSONDecodeError as exc:
        raise StreamSpecError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or set(doc) != {"segments"}:
        raise StreamSpecError('document must be an object with exactly one key "segments"')
    segs = doc["segments"]
    if not isinstance(segs, list):
        raise StreamSpecError('"segments" must be a list')
    return TokenStream(tuple(_segment_from_obj(o, i) for i, o in enumerate(segs)))


def segment_to_obj(seg: Segment) -> dict:
    if isinstance(seg, Text):
        return {"kind": "text", "len": seg.len, "role": seg.role.value}
    if isinstance(seg, Image):
        return {"kind": "image", "h": seg.h, "w": seg.w}
    return {"kind": "video", "t": seg.t_frames, "h": seg.h, "w": seg.w}


def serialize_stream(stream: TokenStream) -> str:
    return json.dumps({"segments": [segment_to_obj(s) for s in stream.segments]})


def load_stream(path) -> TokenStream:
    with open(path, encoding="utf-8") as fh:
        return parse_stream(fh.read())
