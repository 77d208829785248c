"""Visual Attention Ratio: a query token's attention mass on vision keys.

VAR at layer l is the sum over heads of the mass the stored query row
puts on vision keys, so it lives in [0, head_count]. Both the raw sum
and the head-normalized value are reported because downstream thresholds
are stated on the normalized form.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyModality, FormatRejected
from .traceio import VISION, AttentionTrace

VAR_COLUMNS = ("layer", "query_token", "var_raw", "var_normalized", "head_count")


@dataclass(frozen=True)
class VarProfile:
    """Per-layer VAR values for one query token.

    ``layers`` are block indices 1..L aligned with the redundancy
    profile's adjacency indices. ``var_raw[i]`` sums attention mass on
    vision keys over all heads at ``layers[i]``.
    """

    layers: tuple
    query_token: int
    var_raw: tuple
    var_normalized: tuple
    head_count: int
    vision_key_count: int

    def value(self, layer: int, normalized: bool = True) -> float:
        i = self.layers.index(layer)
        return self.var_normalized[i] if normalized else self.var_raw[i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(VAR_COLUMNS)
        for i, layer in enumerate(self.layers):
            w.writerow(
                [layer, self.query_token, repr(self.var_raw[i]), repr(self.var_normalized[i]), self.head_count]
            )
        return buf.getvalue()

    def to_records(self) -> list[dict]:
        return [
            {
                "layer": int(layer),
                "query_token": self.query_token,
                "var_raw": self.var_raw[i],
                "var_normalized": self.var_normalized[i],
                "head_count": self.head_count,
            }
            for i, layer in enumerate(self.layers)
        ]


def var_profile(attention: AttentionTrace, query_token: int) -> VarProfile:
    """Sum the query's attention mass on vision keys, per layer over heads."""
    rows = attention.rows_for(query_token)
    vision_keys = np.array([i for i, m in enumerate(attention.vision_key_mask) if m == VISION], dtype=int)
    if len(vision_keys) == 0:
        raise EmptyModality("attention trace has no vision keys")
    mass = rows.astype(np.float64)[:, :, vision_keys].sum(axis=2)  # (layer, head)
    raw = mass.sum(axis=1)
    return VarProfile(
        layers=tuple(range(1, attention.layer_count + 1)),
        query_token=int(query_token),
        var_raw=tuple(float(v) for v in raw),
        var_normalized=tuple(float(v) / attention.head_count for v in raw),
        head_count=attention.head_count,
        vision_key_count=int(len(vision_keys)),
    )


def mean_var_profile(profiles: Sequence[VarProfile]) -> VarProfile:
    """Average VAR across traces (one profile per sample, same layers)."""
    profiles = list(profiles)
    if not profiles:
        raise FormatRejected("no VAR profiles to pool")
    layers = profiles[0].layers
    heads = profiles[0].head_count
    for p in profiles[1:]:
        if p.layers != layers or p.head_count != heads:
            raise FormatRejected("VAR profiles disagree on layers or head count")
    raw = np.mean([p.var_raw for p in profiles], axis=0)
    return VarProfile(
        layers=layers,
        query_token=profiles[0].query_token,
        var_raw=tuple(float(v) for v in raw),
        var_normalized=tuple(float(v) / heads for v in raw),
        head_count=heads,
        vision_key_count=profiles[0].vision_key_count,
    )


def var_from_rows(rows: Sequence[dict]) -> VarProfile:
    """Rebuild a VAR profile from parsed CSV-style records."""
    if not rows:
        raise FormatRejected("VAR CSV contains no data rows")
    layers = []
    raw = []
    norm = []
    heads = set()
    queries = set()
    for i, row in enumerate(rows, start=2):
        loc = f"row {i}"
        try:
            layers.append(int(row["layer"]))
            raw.append(float(row["var_raw"]))
            norm.append(float(row["var_normalized"]))
            heads.add(int(row["head_count"]))
            queries.add(int(row["query_token"]))
        except KeyError as exc:
            raise FormatRejected(f"missing column {exc} in {loc}") from exc
        except ValueError as exc:
            raise FormatRejected(f"unparseable value in {loc}: {exc}") from exc
        if raw[-1] < 0:
            raise FormatRejected(f"var_raw negative in {loc}, column var_raw")
        if raw[-1] > max(heads) + 1e-6:
            raise FormatRejected(f"var_raw exceeds head_count in {loc}, column var_raw")
    if len(heads) != 1 or len(queries) != 1:
        raise FormatRejected("VAR CSV mixes head counts or query tokens")
    order = np.argsort(layers)
    return VarProfile(
        layers=tuple(int(layers[i]) for i in order),
        query_token=queries.pop(),
        var_raw=tuple(raw[i] for i in order),
        var_normalized=tuple(norm[i] for i in order),
        head_count=heads.pop(),
        vision_key_count=0,
    )


def var_from_csv(text: str) -> VarProfile:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise FormatRejected("VAR CSV is empty")
    missing = [c for c in VAR_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise FormatRejected(f"VAR CSV missing columns {missing}")
    return var_from_rows(list(reader))
