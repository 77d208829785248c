"""Binary trace container shared by all producers and consumers.

Layout of a ``.vlmt`` file::

    magic   b"VLMT"                      4 bytes
    version u16 little-endian, = 1       2 bytes
    hlen    u32 little-endian            4 bytes
    header  UTF-8 JSON, hlen bytes       canonical form (sorted keys, no spaces)
    body    dense float32 little-endian  sections at header-declared offsets

Header keys: layer_count, token_count, dim, sample_id, modality_mask
(string of 'T'/'V', one char per token), sections (list of
{name, offset, byte_len}), and optionally answer_token_index, head_count,
key_count, vision_key_mask, query_token_ids.

Section "hidden" is row-major [layer][token][dim]. Optional section
"attention" is row-major [query][layer][head][key]; its layer count is
derived from byte_len since attention is recorded per transformer block
while hidden states include the embedding layer 0. All offsets are
relative to the end of the header. Identical inputs yield byte-identical
files: the header is canonical JSON and no timestamps are recorded.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from .errors import FormatRejected, TraceIoError, ValidationFailed

MAGIC = b"VLMT"
FORMAT_VERSION = 1

TEXT = "T"
VISION = "V"

_ROW_SUM_TOL = 1e-5


@dataclass(frozen=True)
class Diagnostic:
    """One violated invariant: a stable name plus where it was seen."""

    invariant: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.invariant} at {self.location}: {self.message}"


@dataclass(frozen=True)
class HiddenTrace:
    """Per-layer, per-token hidden states from one forward pass.

    ``states`` has shape (layer_count, token_count, dim), float32. Layer 0
    is the embedding output; layer L is the output of block L. The mask
    tags each token TEXT or VISION. Immutable after construction; safe to
    share across workers.
    """

    states: np.ndarray
    modality_mask: str
    sample_id: str = ""
    answer_token_index: Optional[int] = None

    def __post_init__(self):
        arr = np.ascontiguousarray(self.states, dtype=np.float32)
        if arr is self.states and arr.flags.writeable:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "states", arr)

    @property
    def layer_count(self) -> int:
        return self.states.shape[0]

    @property
    def token_count(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def token_indices(self, modality: str) -> np.ndarray:
        """Indices of tokens tagged with `modality` ('T' or 'V')."""
        return np.array([i for i, m in enumerate(self.modality_mask) if m == modality], dtype=int)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HiddenTrace):
            return NotImplemented
        return (
            self.modality_mask == other.modality_mask
            and self.sample_id == other.sample_id
            and self.answer_token_index == other.answer_token_index
            and self.states.shape == other.states.shape
            and self.states.tobytes() == other.states.tobytes()
        )


@dataclass(frozen=True)
class AttentionTrace:
    """Post-softmax attention rows for designated query tokens.

    ``rows`` has shape (n_queries, layer_count, head_count, key_count),
    float32; entry [q, l, h, k] is the mass query ``query_token_ids[q]``
    puts on key k at block l+1, head h. ``vision_key_mask`` tags keys.
    """

    rows: np.ndarray
    vision_key_mask: str
    query_token_ids: tuple = field(default_factory=tuple)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.rows, dtype=np.float32)
        if arr is self.rows and arr.flags.writeable:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "rows", arr)
        object.__setattr__(self, "query_token_ids", tuple(int(i) for i in self.query_token_ids))

    @property
    def layer_count(self) -> int:
        return self.rows.shape[1]

    @property
    def head_count(self) -> int:
        return self.rows.shape[2]

    @property
    def key_count(self) -> int:
        return self.rows.shape[3]

    def rows_for(self, query_token: int) -> np.ndarray:
        from .errors import MissingQuery

        try:
            q = self.query_token_ids.index(int(query_token))
        except ValueError:
            raise MissingQuery(
                f"query token {query_token} has no stored attention rows",
                available=list(self.query_token_ids),
            ) from None
        return self.rows[q]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttentionTrace):
            return NotImplemented
        return (
            self.vision_key_mask == other.vision_key_mask
            and self.query_token_ids == other.query_token_ids
            and self.rows.shape == other.rows.shape
            and self.rows.tobytes() == other.rows.tobytes()
        )


def validate_trace(trace: HiddenTrace, attention: Optional[AttentionTrace] = None) -> list[Diagnostic]:
    """Check every container invariant; return [] iff all hold.

    Pure and total: never raises on bad content, also never repairs it.
    Diagnostics are a deterministic function of the content.
    """
    out: list[Diagnostic] = []
    states = trace.states
    if states.ndim != 3:
        out.append(Diagnostic("hidden_rank", "states", f"expected 3-d array, got rank {states.ndim}"))
        return out
    if min(states.shape) < 1:
        out.append(Diagnostic("hidden_shape", "states", f"all dims must be >= 1, got {states.shape}"))
    bad = ~np.isfinite(states)
    if bad.any():
        layer, token, comp = (int(i[0]) for i in np.nonzero(bad))
        out.append(
            Diagnostic(
                "hidden_finite",
                f"layer {layer}, token {token}, component {comp}",
                "hidden states must be finite (no NaN/Inf)",
            )
        )
    if len(trace.modality_mask) != trace.token_count:
        out.append(
            Diagnostic(
                "mask_length",
                "modality_mask",
                f"mask length {len(trace.modality_mask)} != token_count {trace.token_count}",
            )
        )
    else:
        invalid = sorted(set(trace.modality_mask) - {TEXT, VISION})
        if invalid:
            out.append(Diagnostic("mask_alphabet", "modality_mask", f"unknown tags {invalid}"))
        elif TEXT not in trace.modality_mask:
            out.append(Diagnostic("mask_has_text", "modality_mask", "at least one TEXT token required"))
    idx = trace.answer_token_index
    if idx is not None:
        if not (0 <= idx < trace.token_count):
            out.append(
                Diagnostic(
                    "answer_index_range",
                    f"answer_token_index {idx}",
                    f"must lie in [0, {trace.token_count})",
                )
            )
        elif len(trace.modality_mask) == trace.token_count and trace.modality_mask[idx] != TEXT:
            out.append(
                Diagnostic("answer_is_text", f"answer_token_index {idx}", "answer token must be tagged TEXT")
            )

    if attention is not None:
        rows = attention.rows
        if rows.ndim != 4:
            out.append(Diagnostic("attention_rank", "rows", f"expected 4-d array, got rank {rows.ndim}"))
            return out
        if min(rows.shape) < 1:
            out.append(Diagnostic("attention_shape", "rows", f"all dims must be >= 1, got {rows.shape}"))
            return out
        if len(attention.vision_key_mask) != attention.key_count:
            out.append(
                Diagnostic(
                    "key_mask_length",
                    "vision_key_mask",
                    f"mask length {len(attention.vision_key_mask)} != key_count {attention.key_count}",
                )
            )
        invalid = sorted(set(attention.vision_key_mask) - {TEXT, VISION})
        if invalid:
            out.append(Diagnostic("key_mask_alphabet", "vision_key_mask", f"unknown tags {invalid}"))
        if len(attention.query_token_ids) != rows.shape[0]:
            out.append(
                Diagnostic(
                    "query_ids_length",
                    "query_token_ids",
                    f"{len(attention.query_token_ids)} ids for {rows.shape[0]} stored query rows",
                )
            )
        for q in attention.query_token_ids:
            if not (0 <= q < trace.token_count):
                out.append(
                    Diagnostic("query_id_range", f"query token {q}", f"must lie in [0, {trace.token_count})")
                )
        if (rows < 0).any():
            q, l, h, k = (int(i[0]) for i in np.nonzero(rows < 0))
            out.append(
                Diagnostic(
                    "attention_nonnegative",
                    f"query {q}, layer {l}, head {h}, key {k}",
                    "attention weights must be nonnegative",
                )
            )
        sums = rows.astype(np.float64).sum(axis=3)
        off = np.abs(sums - 1.0) > _ROW_SUM_TOL
        if off.any():
            q, l, h = (int(i[0]) for i in np.nonzero(off))
            out.append(
                Diagnostic(
                    "attention_row_normalized",
                    f"query {q}, layer {l}, head {h}",
                    f"post-softmax row must sum to 1 within {_ROW_SUM_TOL}, got {sums[q, l, h]:.6f}",
                )
            )
    return out


def _header_dict(trace: HiddenTrace, attention: Optional[AttentionTrace]) -> dict:
    hidden_len = trace.states.size * 4
    sections = [{"name": "hidden", "offset": 0, "byte_len": hidden_len}]
    header = {
        "layer_count": trace.layer_count,
        "token_count": trace.token_count,
        "dim": trace.dim,
        "sample_id": trace.sample_id,
        "modality_mask": trace.modality_mask,
        "sections": sections,
    }
    if trace.answer_token_index is not None:
        header["answer_token_index"] = int(trace.answer_token_index)
    if attention is not None:
        sections.append({"name": "attention", "offset": hidden_len, "byte_len": attention.rows.size * 4})
        header["head_count"] = attention.head_count
        header["key_count"] = attention.key_count
        header["vision_key_mask"] = attention.vision_key_mask
        header["query_token_ids"] = list(attention.query_token_ids)
    return header


def write_trace(trace: HiddenTrace, attention: Optional[AttentionTrace] = None, sink: BinaryIO = None) -> int:
    """Serialize to the container format; returns the byte count written.

    Rejects invalid inputs (FORMAT_REJECTED) before touching the sink, so
    a failed write never leaves a partial container behind it. Sink
    failures surface as IO_ERROR.
    """
    diags = validate_trace(trace, attention)
    if diags:
        raise FormatRejected("trace failed validation: " + "; ".join(str(d) for d in diags))
    header_bytes = json.dumps(_header_dict(trace, attention), sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(header_bytes)), header_bytes]
    chunks.append(np.ascontiguousarray(trace.states, dtype="<f4").tobytes())
    if attention is not None:
        chunks.append(np.ascontiguousarray(attention.rows, dtype="<f4").tobytes())
    total = 0
    try:
        for chunk in chunks:
            sink.write(chunk)
            total += len(chunk)
    except OSError as exc:
        raise TraceIoError(f"sink failure after {total} bytes: {exc}") from exc
    return total


def write_trace_file(path, trace: HiddenTrace, attention: Optional[AttentionTrace] = None) -> int:
    with open(path, "wb") as fh:
        return write_trace(trace, attention, fh)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    try:
        data = source.read(n)
    except OSError as exc:
        raise TraceIoError(f"stream failure while reading {what}: {exc}") from exc
    if data is None or len(data) < n:
        raise TraceIoError(f"truncated container: expected {n} bytes of {what}, got {0 if data is None else len(data)}")
    return data


def read_trace(source: BinaryIO) -> tuple[HiddenTrace, Optional[AttentionTrace]]:
    """Parse a container; rejects rather than repairs.

    Bad magic or version, malformed headers, and unknown layouts raise
    FORMAT_REJECTED; a stream that ends mid-payload raises IO_ERROR; a
    container that parses but violates the type invariants raises
    VALIDATION_ERROR listing every diagnostic.
    """
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise FormatRejected(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", _read_exact(source, 2, "version"))
    if version != FORMAT_VERSION:
        raise FormatRejected(f"unsupported format version {version}")
    (hlen,) = struct.unpack("<I", _read_exact(source, 4, "header length"))
    try:
        header = json.loads(_read_exact(source, hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatRejected(f"malformed header JSON: {exc}") from exc

    try:
        layer_count = int(header["layer_count"])
        token_count = int(header["token_count"])
        dim = int(header["dim"])
        sample_id = str(header["sample_id"])
        modality_mask = str(header["modality_mask"])
        sections = {s["name"]: (int(s["offset"]), int(s["byte_len"])) for s in header["sections"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatRejected(f"header missing or mistyped field: {exc}") from exc
    if min(layer_count, token_count, dim) < 1:
        raise FormatRejected(f"non-positive dimensions in header: {layer_count}x{token_count}x{dim}")
    if "hidden" not in sections:
        raise FormatRejected("container lacks a 'hidden' section")

    known = {"hidden", "attention"}
    unknown = sorted(set(sections) - known)
    if unknown:
        raise FormatRejected(f"unknown sections {unknown}")

    expected_hidden = layer_count * token_count * dim * 4
    if sections["hidden"][1] != expected_hidden:
        raise FormatRejected(
            f"hidden section byte_len {sections['hidden'][1]} != layer*token*dim*4 = {expected_hidden}"
        )

    order = sorted(sections.items(), key=lambda kv: kv[1][0])
    cursor = 0
    payloads = {}
    for name, (offset, byte_len) in order:
        if offset != cursor:
            raise FormatRejected(f"section '{name}' offset {offset} leaves a gap or overlap at {cursor}")
        payloads[name] = _read_exact(source, byte_len, f"section '{name}'")
        cursor += byte_len
    trailing = source.read(1)
    if trailing:
        raise FormatRejected("trailing bytes after declared sections")

    states = np.frombuffer(payloads["hidden"], dtype="<f4").reshape(layer_count, token_count, dim)
    answer = header.get("answer_token_index")
    trace = HiddenTrace(
        states=states,
        modality_mask=modality_mask,
        sample_id=sample_id,
        answer_token_index=None if answer is None else int(answer),
    )

    attention = None
    if "attention" in sections:
        try:
            head_count = int(header["head_count"])
            key_count = int(header["key_count"])
            vision_key_mask = str(header["vision_key_mask"])
            query_token_ids = [int(i) for i in header["query_token_ids"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatRejected(f"attention section present but header incomplete: {exc}") from exc
        byte_len = sections["attention"][1]
        if len(query_token_ids) < 1 or head_count < 1 or key_count < 1:
            raise FormatRejected("attention header fields must all be >= 1")
        denom = len(query_token_ids) * head_count * key_count * 4
        if byte_len % denom:
            raise FormatRejected(
                f"attention byte_len {byte_len} not divisible into [query][layer][head][key] float32"
            )
        attn_layers = byte_len // denom
        if attn_layers < 1:
            raise FormatRejected("attention section too small for one layer")
        rows = np.frombuffer(payloads["attention"], dtype="<f4").reshape(
            len(query_token_ids), attn_layers, head_count, key_count
        )
        attention = AttentionTrace(rows=rows, vision_key_mask=vision_key_mask, query_token_ids=query_token_ids)

    diags = validate_trace(trace, attention)
    if diags:
        raise ValidationFailed("container violates invariants: " + "; ".join(str(d) for d in diags))
    return trace, attention


def read_trace_file(path) -> tuple[HiddenTrace, Optional[AttentionTrace]]:
    with open(path, "rb") as fh:
        return read_trace(fh)


def trace_to_bytes(trace: HiddenTrace, attention: Optional[AttentionTrace] = None) -> bytes:
    buf = io.BytesIO()
    write_trace(trace, attention, buf)
    return buf.getvalue()


def trace_from_bytes(data: bytes) -> tuple[HiddenTrace, Optional[AttentionTrace]]:
    return read_trace(io.BytesIO(data))
