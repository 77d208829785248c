"""Writer for the VLMT trace container.

Implemented directly against the published format so this package
depends on the analysis toolkit only through its external interfaces:

    magic "VLMT" | u16 LE version = 1 | u32 LE header length
    | canonical UTF-8 JSON header (sorted keys, no spaces)
    | float32 LE "hidden" section, row-major [layer][token][dim]
    | optional float32 LE "attention" section, [query][layer][head][key]

Section offsets in the header are relative to the end of the header.
"""

from __future__ import annotations

import json
import struct
from typing import Optional, Sequence

import numpy as np

MAGIC = b"VLMT"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def build_container(
    hidden: np.ndarray,
    modality_mask: str,
    sample_id: str,
    answer_token_index: Optional[int] = None,
    attention: Optional[np.ndarray] = None,
    query_token_ids: Sequence[int] = (),
    vision_key_mask: Optional[str] = None,
) -> bytes:
    """Serialize one sample's capture to container bytes.

    ``hidden`` is (layers, tokens, dim) with layer 0 the embedding
    output; ``attention`` is (queries, blocks, heads, keys), post-softmax.
    Values are downcast to little-endian float32.
    """
    hidden = np.ascontiguousarray(hidden, dtype="<f4")
    if hidden.ndim != 3:
        raise ContainerError(f"hidden states must be 3-d, got shape {hidden.shape}")
    layers, tokens, dim = hidden.shape
    if len(modality_mask) != tokens:
        raise ContainerError(f"modality mask length {len(modality_mask)} != token count {tokens}")
    if not np.isfinite(hidden).all():
        raise ContainerError("hidden states contain NaN or Inf")

    sections = [{"name": "hidden", "offset": 0, "byte_len": hidden.size * 4}]
    header = {
        "layer_count": layers,
        "token_count": tokens,
        "dim": dim,
        "sample_id": sample_id,
        "modality_mask": modality_mask,
        "sections": sections,
    }
    if answer_token_index is not None:
        header["answer_token_index"] = int(answer_token_index)

    payload = [hidden.tobytes()]
    if attention is not None:
        attention = np.ascontiguousarray(attention, dtype="<f4")
        if attention.ndim != 4:
            raise ContainerError(f"attention must be 4-d, got shape {attention.shape}")
        n_queries, _, heads, keys = attention.shape
        if n_queries != len(query_token_ids):
            raise ContainerError("one stored row block per query token required")
        sections.append({"name": "attention", "offset": hidden.size * 4, "byte_len": attention.size * 4})
        header["head_count"] = heads
        header["key_count"] = keys
        header["vision_key_mask"] = vision_key_mask if vision_key_mask is not None else modality_mask
        header["query_token_ids"] = [int(i) for i in query_token_ids]
        payload.append(attention.tobytes())

    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join(
        [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(header_bytes)), header_bytes, *payload]
    )


def write_container(path, **kwargs) -> int:
    data = build_container(**kwargs)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)
