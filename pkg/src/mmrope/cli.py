"""Command-line front end.

Every command writes CSV or JSON to ``--out`` (or stdout). Output is fully built
before anything is written, so a failing command never leaves a partial file.

Exit status: 0 success, 1 audit failure (``check`` found generation-time
confusion), 2 invalid input.

    mmrope layout --stream s.json --design mrope-i
    mmrope check --stream doc.json --design diagonal
    mmrope freqs --d 128 --base 1e6 --alloc scheme=interleaved,ratio=24:20:20
    mmrope decay --scheme chunked --ratio 24:20:20 --d 128 --base 1e6
    mmrope score --q q.csv --k k.csv --pq 0,0,0 --pk 5,2,1 --scheme interleaved
    mmrope mass --stream s.json --design mrope-i --matrix attn.csv
    mmrope recommend --stream s.json --design vanilla --design mrope-i --train-ctx 32768
"""

from __future__ import annotations

import functools
import io
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import analysis, freqs, positions, rotary
from .freqs import Axis, Extrapolation, ExtrapolationSpec
from .positions import DESIGNS, IntervalMode, PositionError, coord, format_coord
from .stream import StreamSpecError, load_stream

SCHEMES = ["vanilla", "chunked", "interleaved", "videorope", "ilrope", "multihead"]


class InputError(click.ClickException):
    exit_code = 2


def _emit(text: str, out: Path | None) -> None:
    if out is None or str(out) == "-":
        click.echo(text, nl=False)
    else:
        out.write_text(text, encoding="utf-8")


def _guard(fn):
    """Turn library validation errors into exit-status-2 diagnostics."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (StreamSpecError, PositionError, freqs.AllocationError,
                rotary.RotaryError, analysis.AnalysisError) as exc:
            raise InputError(str(exc)) from None
        except OSError as exc:
            raise InputError(f"{exc.filename}: {exc.strerror}") from None

    return wrapper


class Rational(click.ParamType):
    name = "rational"

    def convert(self, value, param, ctx):
        if isinstance(value, Fraction):
            return value
        try:
            return coord(value)
        except PositionError as exc:
            self.fail(str(exc), param, ctx)


class Triple(click.ParamType):
    name = "t,h,w"

    def convert(self, value, param, ctx):
        if isinstance(value, tuple):
            return value
        try:
            parts = [float(Fraction(p.strip())) for p in value.split(",")]
        except (ValueError, ZeroDivisionError):
            self.fail(f"expected t,h,w or a single number, got {value!r}", param, ctx)
        if len(parts) == 1:
            parts *= 3
        if len(parts) != 3:
            self.fail(f"expected three components, got {value!r}", param, ctx)
        return tuple(parts)


RATIONAL = Rational()
TRIPLE = Triple()
OUT = click.option("--out", type=click.Path(dir_okay=False, allow_dash=True, path_type=Path), default=None,
                   help="Write here instead of stdout ('-' is stdout).")
STREAM = click.option("--stream", "stream_path", required=True,
                      type=click.Path(exists=True, dir_okay=False, path_type=Path),
                      help="Stream-spec JSON file.")


def design_options(fn):
    opts = [
        click.option("--spatial-reset", type=click.BOOL, default=None,
                     help="Restart h,w at 0 per visual block (default depends on design)."),
        click.option("--stride", type=RATIONAL, default=None, help="Temporal stride between frames, e.g. 1/2."),
        click.option("--schedule", default=None, help="Dynamic per-frame strides, e.g. 1,1/2,2."),
        click.option("--interval", type=click.Choice([m.value for m in IntervalMode]), default=None,
                     help="Post-block counter rule."),
        click.option("--visual-stride", type=RATIONAL, default=None, help="V2PE visual step size."),
        click.option("--radius", type=click.FloatRange(min=0, min_open=True), default=None,
                     help="CircleRoPE ring radius."),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


def _layout(stream_path, design, spatial_reset, stride, schedule, interval, visual_stride, radius):
    stream = load_stream(stream_path)
    opts = positions.design_options(
        design,
        spatial_reset=spatial_reset,
        temporal_stride=stride,
        stride_schedule=None if schedule is None else positions.parse_schedule(schedule),
        interval_mode=interval,
        visual_stride=visual_stride,
        circle_radius=radius,
    )
    return stream, positions.assign(design, stream, opts)


def alloc_options(fn):
    opts = [
        click.option("--alloc", default=None,
                     help="Inline config, e.g. scheme=interleaved,ratio=24:20:20,d=128,base=1000000."),
        click.option("--scheme", type=click.Choice(SCHEMES), default=None),
        click.option("--ratio", default=None, help="Pairs per axis t:h:w (default 24:20:20 scaled to d/2)."),
        click.option("--d", "d", type=int, default=None, help="Head dimension (default 128)."),
        click.option("--base", type=float, default=None, help="Rotary base (default 1e6)."),
        click.option("--axis-bases", default=None, help="Per-axis bases t:h:w (breaks text compatibility)."),
        click.option("--heads", default="4:4", show_default=True, help="Query:KV head counts (multihead)."),
        click.option("--head-ratio", default="2:1:1", show_default=True, help="KV heads per axis (multihead)."),
        click.option("--extrapolation", type=click.Choice([e.value for e in Extrapolation]), default="none",
                     show_default=True),
        click.option("--scale", type=float, default=1.0, show_default=True),
        click.option("--yarn-alpha", type=float, default=1.0, show_default=True),
        click.option("--yarn-beta", type=float, default=32.0, show_default=True),
        click.option("--orig-ctx", type=int, default=32768, show_default=True,
                     help="Original training context for YaRN."),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


def _spec(alloc, scheme, ratio, d, base, axis_bases, heads, head_ratio,
          extrapolation, scale, yarn_alpha, yarn_beta, orig_ctx, default_scheme="interleaved"):
    """Build a RotarySpec; returns (spec, scheme name, ratio string)."""
    cfg = freqs.parse_alloc_config(alloc) if alloc else {}
    scheme = scheme or cfg.get("scheme") or default_scheme
    if scheme not in SCHEMES:
        raise freqs.AllocationError(f"unknown scheme {scheme!r}; valid: {', '.join(SCHEMES)}")
    d = d if d is not None else cfg.get("d", 128)
    base = base if base is not None else cfg.get("base", 1e6)
    table = freqs.base_frequencies(d, base)
    extra = ExtrapolationSpec(extrapolation, scale, yarn_alpha, yarn_beta, orig_ctx)
    if scheme == "multihead":
        try:
            n_q, n_kv = (int(x) for x in heads.split(":"))
        except ValueError:
            raise freqs.AllocationError(f"--heads must look like Q:KV, got {heads!r}") from None
        layout = freqs.alloc_multihead(n_q, n_kv, freqs.parse_ratio(head_ratio))
        return rotary.RotarySpec(table, head_layout=layout, extrapolation=extra), scheme, head_ratio
    if scheme == "vanilla":
        ratio_t = (d // 2, 0, 0)
        allocation = freqs.alloc_chunked(d, ratio_t)
    else:
        ratio_t = freqs.parse_ratio(ratio) if ratio else cfg.get("ratio") or freqs.default_ratio(d)
        allocation = freqs.allocate(scheme, d, ratio_t)
    if axis_bases:
        bases = [float(b) for b in axis_bases.split(":")]
        allocation = allocation.with_axis_bases(bases)
    spec = rotary.RotarySpec(table, allocation=allocation, extrapolation=extra)
    return spec, scheme, ":".join(str(r) for r in ratio_t)


def _alloc_kwargs(kw: dict) -> dict:
    keys = ("alloc", "scheme", "ratio", "d", "base", "axis_bases", "heads", "head_ratio",
            "extrapolation", "scale", "yarn_alpha", "yarn_beta", "orig_ctx")
    return {k: kw.pop(k) for k in keys}


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Multimodal rotary position embedding analysis toolkit."""


@cli.command("layout")
@STREAM
@click.option("--design", type=click.Choice(list(DESIGNS)), required=True)
@design_options
@OUT
@_guard
def cmd_layout(stream_path, design, out, **opts):
    """Dump per-token (t, h, w) positions as CSV."""
    _, layout = _layout(stream_path, design, **opts)
    _emit(positions.layout_csv(layout), out)


@cli.command("check")
@STREAM
@click.option("--design", type=click.Choice(list(DESIGNS)), required=True)
@design_options
@OUT
@_guard
def cmd_check(stream_path, design, out, **opts):
    """Audit positional coherence; exits 1 when generated text is confusable with visual tokens."""
    stream, layout = _layout(stream_path, design, **opts)
    report = analysis.check_coherence(layout, stream)
    _emit(report.to_json(), out)
    if report.generated_overlap:
        raise SystemExit(1)


@cli.command("freqs")
@alloc_options
@OUT
@_guard
def cmd_freqs(out, **kw):
    """Dump effective per-pair frequencies and their axes as CSV."""
    spec, scheme, _ = _spec(**_alloc_kwargs(kw), default_scheme="vanilla")
    rows = []
    if spec.head_layout is not None:
        theta = spec.effective_table.theta
        for axis in spec.axes():
            rows.extend((i, axis, th) for i, th in enumerate(theta))
    else:
        axis_of = spec.allocation.axis_of
        _, theta = spec.pair_axes_and_thetas()
        rows = [(i, axis_of[i], theta[i]) for i in range(len(axis_of))]
    _emit(freqs.freqs_csv(rows), out)


def _parse_grid(text: str | None) -> np.ndarray | None:
    if text is None:
        return None
    if text.startswith("geom:"):
        try:
            lo, hi, n = text[5:].split(":")
            return np.concatenate([[0.0], np.geomspace(float(lo), float(hi), int(n))])
        except ValueError:
            raise analysis.AnalysisError(f"grid must look like geom:LO:HI:N, got {text!r}") from None
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()], dtype=np.float64)
    except ValueError:
        raise analysis.AnalysisError(f"grid must be a comma list of numbers, got {text!r}") from None


@cli.command("decay")
@alloc_options
@click.option("--axis", "axes", type=click.Choice([a.value for a in Axis]), multiple=True,
              help="Restrict to these axes (default: every axis the scheme encodes).")
@click.option("--grid", default=None, help="Delta grid: comma list or geom:LO:HI:N (0 is prepended).")
@OUT
@_guard
def cmd_decay(out, axes, grid, **kw):
    """Long-range decay indicator per axis as CSV."""
    spec, scheme, ratio = _spec(**_alloc_kwargs(kw))
    deltas = _parse_grid(grid)
    chosen = [Axis(a) for a in axes] or spec.axes()
    curves = [analysis.decay_curve(spec, a, deltas) for a in chosen]
    _emit(analysis.decay_csv(curves, scheme, ratio, spec.d, spec.table.base), out)


@cli.command("score")
@click.option("--q", "q_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--k", "k_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--pq", type=TRIPLE, required=True, help="Query position t,h,w.")
@click.option("--pk", type=TRIPLE, required=True, help="Key position t,h,w.")
@alloc_options
@OUT
@_guard
def cmd_score(q_path, k_path, pq, pk, out, **kw):
    """Rotary attention scores for query/key vectors read from CSV."""
    spec, _, _ = _spec(**_alloc_kwargs(kw))
    qs, ks = rotary.read_vectors(q_path), rotary.read_vectors(k_path)
    delta = tuple(b - a for a, b in zip(pq, pk))
    buf = io.StringIO()
    if spec.head_layout is not None:
        hl = spec.head_layout
        scores = rotary.multihead_scores(qs, ks, pq, pk, spec)
        buf.write("head,kv_head,axis,score\n")
        for h, s in enumerate(scores):
            buf.write(f"{h},{hl.kv_head_of(h)},{hl.axis_of_q_head[h].value},{s!r}\n")
    else:
        if len(qs) != len(ks):
            raise rotary.RotaryError(f"{len(qs)} query vectors but {len(ks)} key vectors")
        buf.write("index,score,score_complex\n")
        for i, (q, k) in enumerate(zip(qs, ks)):
            s = rotary.attention_score(q, k, pq, pk, spec)
            c = rotary.score_complex_form(q, k, delta, spec)
            buf.write(f"{i},{s!r},{c!r}\n")
    _emit(buf.getvalue(), out)


@cli.command("mass")
@STREAM
@click.option("--design", type=click.Choice(list(DESIGNS)), required=True)
@click.option("--matrix", "matrix_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Row-stochastic N x N attention CSV; repeat to average several.")
@design_options
@OUT
@_guard
def cmd_mass(stream_path, design, matrix_paths, out, **opts):
    """Attention mass on visual tokens and per-cell sink profiles as JSON."""
    _, layout = _layout(stream_path, design, **opts)
    mats = [analysis.read_matrix(p) for p in matrix_paths]
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise analysis.AnalysisError(f"matrices have differing shapes {sorted(shapes)}")
    _emit(analysis.attention_mass(np.stack(mats), layout).to_json(), out)


@cli.command("recommend")
@STREAM
@click.option("--design", "designs", type=click.Choice(list(DESIGNS)), multiple=True, required=True)
@click.option("--train-ctx", type=click.IntRange(min=1), required=True)
@design_options
@OUT
@_guard
def cmd_recommend(stream_path, designs, train_ctx, out, **opts):
    """Minimal context-extension scale per design as CSV."""
    buf = io.StringIO()
    buf.write("design,max_position,train_ctx,scale\n")
    for design in designs:
        stream, layout = _layout(stream_path, design, **opts)
        scale = freqs.recommend_scale(stream, design, train_ctx, layout.params)
        top = layout.max_position()
        top_s = "" if top is None else format_coord(top)
        buf.write(f"{design},{top_s},{train_ctx},{scale!r}\n")
    _emit(buf.getvalue(), out)


def main(argv=None):
    cli.main(args=argv, prog_name="mmrope")


if __name__ == "__main__":
    main()
