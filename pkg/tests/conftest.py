import numpy as np
import pytest

from skipscope.traceio import AttentionTrace, HiddenTrace


def make_trace(layers=3, tokens=4, dim=8, seed=7, mask=None, sample_id="t", answer=None):
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(layers, tokens, dim)).astype(np.float32)
    if mask is None:
        mask = "V" * (tokens // 2) + "T" * (tokens - tokens // 2)
    if answer is None:
        answer = mask.index("T")
    return HiddenTrace(states=states, modality_mask=mask, sample_id=sample_id, answer_token_index=answer)


def make_attention(layers=3, heads=2, keys=4, seed=11, key_mask=None, query_ids=(3,)):
    rng = np.random.default_rng(seed)
    raw = rng.random((len(query_ids), layers, heads, keys)) + 0.01
    rows = (raw / raw.sum(axis=3, keepdims=True)).astype(np.float32)
    if key_mask is None:
        key_mask = "V" * (keys // 2) + "T" * (keys - keys // 2)
    return AttentionTrace(rows=rows, vision_key_mask=key_mask, query_token_ids=query_ids)


@pytest.fixture
def small_trace():
    return make_trace()


@pytest.fixture
def small_attention():
    return make_attention()
