"""Hypothesis strategies for token streams."""

from hypothesis import strategies as st

from mmrope.stream import Image, Role, Text, TokenStream, Video


@st.composite
def segments(draw, max_text=6, max_side=4, max_frames=3, visual=True):
    kinds = ["text", "image", "video"] if visual else ["text"]
    kind = draw(st.sampled_from(kinds))
    if kind == "text":
        role = draw(st.sampled_from([Role.PROMPT, Role.GENERATED]))
        return Text(draw(st.integers(1, max_text)), role)
    h, w = draw(st.integers(1, max_side)), draw(st.integers(1, max_side))
    if kind == "image":
        return Image(h, w)
    return Video(draw(st.integers(1, max_frames)), h, w)


def streams(max_segments=6, **kw):
    return st.lists(segments(**kw), max_size=max_segments).map(lambda s: TokenStream(tuple(s)))


def text_streams(max_segments=5):
    return streams(max_segments, visual=False)
