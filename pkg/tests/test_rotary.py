import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrope.freqs import (
    Axis,
    ExtrapolationSpec,
    FreqAllocation,
    Scheme,
    alloc_multihead,
    allocate,
    base_frequencies,
)
from mmrope.rotary import (
    RotaryError,
    RotarySpec,
    attention_score,
    multihead_scores,
    read_vectors,
    rotate,
    rotate_1d,
    score_complex_form,
    vectors_csv,
)
from oracles import brute_score

SCHEMES = ["chunked", "interleaved", "videorope", "ilrope"]


def spec_for(d=8, scheme="interleaved", ratio=None, base=10000.0, **kw):
    ratio = ratio or (d // 2 - 2 * (d // 6), d // 6, d // 6)
    return RotarySpec(base_frequencies(d, base), allocate(scheme, d, ratio), **kw)


def rng_vec(rng, d):
    return rng.standard_normal(d)


def test_zero_position_is_identity():
    v = np.arange(8.0)
    assert np.array_equal(rotate(v, (0, 0, 0), spec_for()), v)


def test_quarter_turn_d2():
    spec = RotarySpec(base_frequencies(2, 10000.0), FreqAllocation(Scheme.CHUNKED, (1, 0, 0), (Axis.T,)))
    out = rotate([1.0, 0.0], (math.pi / 2, 0, 0), spec)
    assert out == pytest.approx([0.0, 1.0], abs=1e-12)


@settings(max_examples=50)
@given(st.sampled_from(SCHEMES), st.integers(0, 2**32 - 1))
def test_norm_preserved(scheme, seed):
    rng = np.random.default_rng(seed)
    spec = spec_for(64, scheme, (12, 10, 10))
    v = rng_vec(rng, 64)
    p = rng.uniform(-1e4, 1e4, 3)
    assert np.linalg.norm(rotate(v, p, spec)) == pytest.approx(np.linalg.norm(v), abs=1e-12 * max(1, np.linalg.norm(v)))


def test_equal_positions_give_dot_product():
    rng = np.random.default_rng(1)
    q, k = rng_vec(rng, 16), rng_vec(rng, 16)
    spec = spec_for(16, "chunked", (4, 2, 2))
    assert attention_score(q, k, (7, 3, -2), (7, 3, -2), spec) == pytest.approx(float(q @ k), abs=1e-12)


@settings(max_examples=60)
@given(st.sampled_from(SCHEMES), st.integers(0, 2**32 - 1))
def test_shift_invariance(scheme, seed):
    rng = np.random.default_rng(seed)
    spec = spec_for(64, scheme, (12, 10, 10))
    q, k = rng.uniform(-1, 1, 64), rng.uniform(-1, 1, 64)
    pq, pk = rng.integers(-1000, 1000, 3), rng.integers(-1000, 1000, 3)
    c = rng.integers(-100_000, 100_000, 3)
    base = attention_score(q, k, pq, pk, spec)
    assert abs(attention_score(q, k, pq + c, pk + c, spec) - base) < 1e-9


# -- complex form ------------------------------------------------------------------


def test_complex_form_zero_delta_is_dot():
    rng = np.random.default_rng(2)
    q, k = rng_vec(rng, 8), rng_vec(rng, 8)
    assert score_complex_form(q, k, (0, 0, 0), spec_for()) == pytest.approx(float(q @ k), abs=1e-12)


@pytest.mark.parametrize("axis, delta", [(Axis.T, (3.5, 0, 0)), (Axis.H, (0, -2, 0)), (Axis.W, (0, 0, 11))])
def test_complex_form_one_hot(axis, delta):
    d = 6
    alloc = FreqAllocation(Scheme.CHUNKED, (0, 0, 0), (axis, Axis.T, Axis.T))
    spec = RotarySpec(base_frequencies(d, 100.0), alloc)
    e0 = np.zeros(d)
    e0[0] = 1.0
    idx = "THW".index(axis.value)
    # theta_0 is 1
    assert score_complex_form(e0, e0, delta, spec) == pytest.approx(math.cos(delta[idx]), abs=1e-15)


@pytest.mark.parametrize("d, tol", [(4, 1e-12), (64, 1e-10)])
def test_complex_form_matches_score(d, tol):
    rng = np.random.default_rng(d)
    spec = spec_for(d, "interleaved")
    for _ in range(50):
        q, k = rng_vec(rng, d), rng_vec(rng, d)
        pq, pk = rng.uniform(-50, 50, 3), rng.uniform(-50, 50, 3)
        assert abs(attention_score(q, k, pq, pk, spec) - score_complex_form(q, k, pk - pq, spec)) < tol


@settings(max_examples=30)
@given(st.sampled_from(SCHEMES), st.integers(0, 2**32 - 1))
def test_score_matches_matrix_oracle(scheme, seed):
    rng = np.random.default_rng(seed)
    d = 12
    spec = spec_for(d, scheme, (2, 2, 2))
    q, k = rng_vec(rng, d), rng_vec(rng, d)
    pq, pk = rng.uniform(-20, 20, 3), rng.uniform(-20, 20, 3)
    axis_idx, theta = spec.pair_axes_and_thetas()
    want = brute_score(list(q), list(k), [pq[a] * t for a, t in zip(axis_idx, theta)], [pk[a] * t for a, t in zip(axis_idx, theta)])
    assert attention_score(q, k, pq, pk, spec) == pytest.approx(want, abs=1e-10)


# -- text compatibility ---------------------------------------------------------------


@settings(max_examples=60)
@given(
    st.sampled_from(SCHEMES),
    st.sampled_from([(16, 16, 32), (32, 16, 16), (24, 20, 20), (32, 0, 32), (64, 0, 0)]),
    st.integers(-10**6, 10**6),
    st.integers(0, 2**32 - 1),
)
def test_text_compat_bit_exact(scheme, ratio, m, seed):
    if scheme == "ilrope" and 0 in ratio:
        return
    table = base_frequencies(128, 1e6)
    spec = RotarySpec(table, allocate(scheme, 128, ratio))
    v = np.random.default_rng(seed).standard_normal(128)
    assert np.array_equal(rotate(v, (m, m, m), spec), rotate_1d(v, m, table))


def test_per_axis_base_breaks_text_compat():
    table = base_frequencies(16, 10000.0)
    alloc = allocate("interleaved", 16, (4, 2, 2)).with_axis_bases((10000.0, 500.0, 500.0))
    spec = RotarySpec(table, alloc)
    v = np.ones(16)
    assert not np.allclose(rotate(v, (9, 9, 9), spec), rotate_1d(v, 9, table))


def test_head_layout_text_compat():
    table = base_frequencies(32, 1e6)
    spec = RotarySpec(table, head_layout=alloc_multihead(8, 4, (2, 1, 1)))
    v = np.random.default_rng(3).standard_normal(32)
    for h in range(8):
        assert np.array_equal(rotate(v, (41, 41, 41), spec, head=h), rotate_1d(v, 41, table))


def test_extrapolated_text_compat():
    table = base_frequencies(32, 1e6)
    ext = ExtrapolationSpec("yarn", scale=4.0)
    spec = RotarySpec(table, allocate("chunked", 32, (8, 4, 4)), extrapolation=ext)
    v = np.random.default_rng(4).standard_normal(32)
    assert np.array_equal(rotate(v, (5, 5, 5), spec), rotate_1d(v, 5, spec.effective_table))


# -- multi-head -----------------------------------------------------------------------


def mh_setup(seed=0):
    layout = alloc_multihead(8, 4, (2, 1, 1))
    spec = RotarySpec(base_frequencies(16, 10000.0), head_layout=layout)
    rng = np.random.default_rng(seed)
    qs = [rng_vec(rng, 16) for _ in range(8)]
    ks = [rng_vec(rng, 16) for _ in range(4)]
    return layout, spec, qs, ks


def test_multihead_zero_delta_dot_products():
    layout, spec, qs, ks = mh_setup()
    got = multihead_scores(qs, ks, (3, 3, 3), (3, 3, 3), spec)
    want = [float(qs[h] @ ks[layout.kv_head_of(h)]) for h in range(8)]
    assert got == pytest.approx(want, abs=1e-12)


def test_multihead_axis_isolation():
    layout, spec, qs, ks = mh_setup(1)
    at0 = multihead_scores(qs, ks, (0, 0, 0), (0, 0, 0), spec)
    at5 = multihead_scores(qs, ks, (0, 0, 0), (5, 0, 0), spec)
    for h, axis in enumerate(layout.axis_of_q_head):
        assert (at0[h] != at5[h]) == (axis is Axis.T)


def test_multihead_compositional_oracle():
    layout, spec, qs, ks = mh_setup(2)
    pq, pk = (1.0, -4.0, 2.5), (7.0, 3.0, -6.0)
    got = multihead_scores(qs, ks, pq, pk, spec)
    for h, axis in enumerate(layout.axis_of_q_head):
        single = RotarySpec(spec.table, FreqAllocation(Scheme.CHUNKED, (0, 0, 0), (axis,) * 8))
        want = attention_score(qs[h], ks[layout.kv_head_of(h)], pq, pk, single)
        assert got[h] == pytest.approx(want, abs=1e-12)


def test_multihead_layout_mismatch():
    _, spec, qs, ks = mh_setup()
    with pytest.raises(RotaryError, match="heads"):
        multihead_scores(qs[:-1], ks, (0, 0, 0), (0, 0, 0), spec)
    with pytest.raises(RotaryError, match="head layout"):
        multihead_scores(qs, ks, (0, 0, 0), (0, 0, 0), spec_for(16))


# -- errors and I/O ----------------------------------------------------------------------


def test_dimension_mismatch():
    with pytest.raises(RotaryError, match="length 8"):
        rotate(np.ones(6), (0, 0, 0), spec_for())
    with pytest.raises(RotaryError):
        attention_score(np.ones(8), np.ones(4), (0, 0, 0), (0, 0, 0), spec_for())
    with pytest.raises(RotaryError):
        score_complex_form(np.ones(8), np.ones(10), (0, 0, 0), spec_for())


def test_non_finite_rejected():
    v = np.ones(8)
    v[3] = np.nan
    with pytest.raises(RotaryError, match="non-finite"):
        rotate(v, (0, 0, 0), spec_for())


def test_angle_limit():
    with pytest.raises(RotaryError, match="2\\*\\*52"):
        rotate(np.ones(8), (2.0**53, 0, 0), spec_for())


def test_spec_needs_exactly_one_layout():
    table = base_frequencies(8, 100.0)
    with pytest.raises(RotaryError):
        RotarySpec(table)
    with pytest.raises(RotaryError):
        RotarySpec(table, allocate("chunked", 8, (2, 1, 1)), alloc_multihead(3, 3, (1, 1, 1)))
    with pytest.raises(RotaryError, match="d=16"):
        RotarySpec(table, allocate("chunked", 16, (4, 2, 2)))


def test_head_index_rules():
    _, spec, qs, _ = mh_setup()
    with pytest.raises(RotaryError, match="required"):
        rotate(qs[0], (0, 0, 0), spec)
    with pytest.raises(RotaryError, match="out of range"):
        rotate(qs[0], (0, 0, 0), spec, head=8)
    with pytest.raises(RotaryError, match="channel-split"):
        rotate(np.ones(8), (0, 0, 0), spec_for(), head=0)


def test_vector_csv_round_trip(tmp_path):
    vecs = [np.array([0.1, -2.5, 1e-17, 3.0]), np.array([1.0, 2.0, 3.0, 4.0])]
    path = tmp_path / "v.csv"
    path.write_text(vectors_csv(vecs) + "\n")
    back = read_vectors(path)
    assert all(np.array_equal(a, b) for a, b in zip(vecs, back))
    path.write_text("1,2,x\n")
    with pytest.raises(RotaryError):
        read_vectors(path)
