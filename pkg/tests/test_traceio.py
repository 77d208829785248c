import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skipscope.errors import FormatRejected, TraceIoError, ValidationFailed
from skipscope.traceio import (
    AttentionTrace,
    HiddenTrace,
    trace_from_bytes,
    trace_to_bytes,
    validate_trace,
    write_trace,
)

from conftest import make_attention, make_trace


def test_roundtrip_minimal():
    trace = HiddenTrace(
        states=np.array([[[1.0, 0.0]]], dtype=np.float32),
        modality_mask="T",
        sample_id="mini",
    )
    data = trace_to_bytes(trace)
    back, attn = trace_from_bytes(data)
    assert attn is None
    assert back == trace


def test_roundtrip_seeded_random():
    trace = make_trace(layers=3, tokens=4, dim=8, seed=7)
    attn = make_attention(layers=2, heads=2, keys=4, seed=7)
    data = trace_to_bytes(trace, attn)
    back_trace, back_attn = trace_from_bytes(data)
    assert back_trace == trace
    assert back_attn == attn
    assert back_trace.states.tobytes() == trace.states.tobytes()


def test_write_returns_byte_count_and_is_deterministic():
    trace = make_trace(seed=3)
    data1 = trace_to_bytes(trace)
    data2 = trace_to_bytes(trace)
    assert data1 == data2
    sink = io.BytesIO()
    count = write_trace(trace, None, sink)
    assert count == len(sink.getvalue())
    assert count > 10  # magic + version + header length prefix


def test_write_rejects_nan():
    states = np.ones((2, 2, 3), dtype=np.float32)
    states[1, 0, 1] = np.nan
    trace = HiddenTrace(states=states, modality_mask="VT", sample_id="bad")
    with pytest.raises(FormatRejected):
        write_trace(trace, None, io.BytesIO())


def test_read_rejects_bad_magic():
    data = bytearray(trace_to_bytes(make_trace()))
    data[0:4] = b"NOPE"
    with pytest.raises(FormatRejected):
        trace_from_bytes(bytes(data))


def test_read_rejects_bad_version():
    data = bytearray(trace_to_bytes(make_trace()))
    data[4] = 99
    with pytest.raises(FormatRejected):
        trace_from_bytes(bytes(data))


def test_read_truncated_is_io_error():
    data = trace_to_bytes(make_trace())
    with pytest.raises(TraceIoError):
        trace_from_bytes(data[:-7])


def test_read_trailing_garbage_rejected():
    data = trace_to_bytes(make_trace())
    with pytest.raises(FormatRejected):
        trace_from_bytes(data + b"\x00")


def test_read_validates_content():
    # Valid container bytes, then corrupt one stored float into NaN.
    trace = make_trace(layers=1, tokens=1, dim=1)
    data = bytearray(trace_to_bytes(trace))
    data[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    with pytest.raises(ValidationFailed):
        trace_from_bytes(bytes(data))


def test_validate_accepts_valid(small_trace, small_attention):
    assert validate_trace(small_trace, small_attention) == []


def test_validate_row_sum():
    attn = make_attention()
    rows = attn.rows.copy()
    rows[0, 1, 0] *= 0.8
    bad = AttentionTrace(rows=rows, vision_key_mask=attn.vision_key_mask, query_token_ids=attn.query_token_ids)
    diags = validate_trace(make_trace(), bad)
    assert len(diags) == 1
    assert diags[0].invariant == "attention_row_normalized"
    assert "layer 1" in diags[0].location


def test_validate_all_vision_mask():
    base = make_trace()
    trace = HiddenTrace(states=base.states, modality_mask="VVVV", sample_id="x")
    diags = validate_trace(trace)
    assert [d.invariant for d in diags] == ["mask_has_text"]


def test_validate_answer_index():
    base = make_trace()
    trace = HiddenTrace(states=base.states, modality_mask=base.modality_mask, answer_token_index=99)
    assert [d.invariant for d in validate_trace(trace)] == ["answer_index_range"]
    trace = HiddenTrace(states=base.states, modality_mask=base.modality_mask, answer_token_index=0)
    assert [d.invariant for d in validate_trace(trace)] == ["answer_is_text"]


def test_validate_mask_length():
    base = make_trace(tokens=4)
    trace = HiddenTrace(states=base.states, modality_mask="VT")
    assert [d.invariant for d in validate_trace(trace)] == ["mask_length"]


def test_validate_is_pure(small_trace, small_attention):
    first = validate_trace(small_trace, small_attention)
    second = validate_trace(small_trace, small_attention)
    assert first == second == []


def test_traces_are_immutable(small_trace):
    with pytest.raises(ValueError):
        small_trace.states[0, 0, 0] = 5.0


@st.composite
def trace_strategy(draw):
    layers = draw(st.integers(1, 4))
    tokens = draw(st.integers(1, 6))
    dim = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    states = rng.normal(scale=draw(st.floats(0.1, 100.0)), size=(layers, tokens, dim)).astype(np.float32)
    mask = "".join(draw(st.sampled_from("TV")) for _ in range(tokens - 1)) + "T"
    answer = draw(st.one_of(st.none(), st.sampled_from([i for i, m in enumerate(mask) if m == "T"])))
    with_attention = draw(st.booleans())
    attn = None
    if with_attention:
        heads = draw(st.integers(1, 3))
        attn_layers = draw(st.integers(1, 4))
        raw = rng.random((1, attn_layers, heads, tokens)) + 1e-3
        rows = (raw / raw.sum(axis=3, keepdims=True)).astype(np.float32)
        attn = AttentionTrace(rows=rows, vision_key_mask=mask, query_token_ids=(mask.index("T"),))
    return (
        HiddenTrace(states=states, modality_mask=mask, sample_id=f"h{seed}", answer_token_index=answer),
        attn,
    )


@given(trace_strategy())
@settings(max_examples=60, deadline=None)
def test_roundtrip_property(pair):
    trace, attn = pair
    data = trace_to_bytes(trace, attn)
    back_trace, back_attn = trace_from_bytes(data)
    assert back_trace == trace
    assert (attn is None) == (back_attn is None)
    if attn is not None:
        assert back_attn == attn
    # byte-identical file for identical input
    assert trace_to_bytes(back_trace, back_attn) == data
