import numpy as np
import pytest

from skipscope.attention import mean_var_profile, var_from_csv, var_profile
from skipscope.errors import EmptyModality, FormatRejected, MissingQuery
from skipscope.traceio import AttentionTrace

from conftest import make_attention


def _attention_from_rows(rows, key_mask, query=0):
    return AttentionTrace(rows=np.asarray(rows, dtype=np.float32), vision_key_mask=key_mask, query_token_ids=(query,))


def test_uniform_attention_gives_vision_fraction():
    n, m = 6, 2  # 6 keys, 2 of them vision
    rows = np.full((1, 3, 1, n), 1.0 / n)
    attn = _attention_from_rows(rows, "VV" + "T" * 4)
    prof = var_profile(attn, 0)
    assert prof.layers == (1, 2, 3)
    for v in prof.var_raw:
        assert v == pytest.approx(m / n, abs=1e-6)


def test_all_mass_on_vision_hits_head_count():
    heads = 3
    rows = np.zeros((1, 2, heads, 4))
    rows[:, :, :, 0] = 0.7
    rows[:, :, :, 1] = 0.3
    attn = _attention_from_rows(rows, "VVTT")
    prof = var_profile(attn, 0)
    assert prof.var_raw == (pytest.approx(heads), pytest.approx(heads))
    assert prof.var_normalized == (pytest.approx(1.0), pytest.approx(1.0))


def test_all_mass_on_text_gives_zero():
    rows = np.zeros((1, 2, 2, 4))
    rows[:, :, :, 2] = 1.0
    attn = _attention_from_rows(rows, "VVTT")
    prof = var_profile(attn, 0)
    assert prof.var_raw == (0.0, 0.0)


def test_complementarity_with_text_mass():
    attn = make_attention(layers=4, heads=3, keys=5, seed=2, key_mask="VVVTT")
    prof = var_profile(attn, 3)
    rows = attn.rows[0].astype(np.float64)
    text_mass = rows[:, :, 3:].sum(axis=2).sum(axis=1)
    for i in range(4):
        assert prof.var_raw[i] + text_mass[i] == pytest.approx(3.0, abs=1e-5)


def test_vision_key_permutation_invariant():
    attn = make_attention(layers=2, heads=2, keys=6, seed=5, key_mask="VVVTTT")
    perm = [2, 0, 1, 3, 4, 5]
    permuted = AttentionTrace(
        rows=attn.rows[:, :, :, perm],
        vision_key_mask="VVVTTT",
        query_token_ids=attn.query_token_ids,
    )
    a = var_profile(attn, attn.query_token_ids[0])
    b = var_profile(permuted, attn.query_token_ids[0])
    assert a.var_raw == pytest.approx(b.var_raw, abs=1e-12)


def test_missing_query():
    attn = make_attention()
    with pytest.raises(MissingQuery):
        var_profile(attn, 99)


def test_no_vision_keys():
    attn = make_attention(key_mask="TTTT")
    with pytest.raises(EmptyModality):
        var_profile(attn, attn.query_token_ids[0])


def test_mean_profile_pools():
    a = var_profile(make_attention(seed=1), 3)
    b = var_profile(make_attention(seed=2), 3)
    pooled = mean_var_profile([a, b])
    for i in range(len(a.layers)):
        assert pooled.var_raw[i] == pytest.approx((a.var_raw[i] + b.var_raw[i]) / 2, abs=1e-12)


def test_csv_roundtrip():
    prof = var_profile(make_attention(seed=4), 3)
    back = var_from_csv(prof.to_csv())
    assert back.layers == prof.layers
    assert back.var_raw == pytest.approx(prof.var_raw)
    assert back.head_count == prof.head_count


def test_csv_rejects_junk():
    with pytest.raises(FormatRejected):
        var_from_csv("")
    with pytest.raises(FormatRejected):
        var_from_csv("layer,query_token,var_raw,var_normalized,head_count\n")
    with pytest.raises(FormatRejected):
        var_from_csv("layer,query_token,var_raw,var_normalized,head_count\n1,0,-0.5,-0.25,2\n")
