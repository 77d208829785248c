"""Geometric and proximal redundancy metrics between adjacent layers.

For each block layer l >= 1 and each modality, the profile records the
mean cosine distance between a token's states at layers l and l-1 and
the fraction of tokens whose distance falls strictly below a threshold t.
All arithmetic is float64 regardless of the stored trace precision.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateVector, EmptyModality, FormatRejected, InvalidArgument, ShapeMismatch
from .traceio import TEXT, VISION, HiddenTrace

DEFAULT_THRESHOLD = 0.05

PROFILE_COLUMNS = ("layer", "modality", "mean_cos_dist", "proximal_frac", "t", "n_tokens")


def cosine_distance(x, y) -> float:
    """1 - <x,y> / (|x| |y|), clamped into [0, 2].

    Symmetric, scale-free, and zero for identical directions. Zero-norm
    inputs have no direction and are rejected.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"vector shapes differ: {x.shape} vs {y.shape}")
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise DegenerateVector("cosine distance undefined for zero-norm vector")
    d = 1.0 - float(np.dot(x, y)) / (nx * ny)
    return min(max(d, 0.0), 2.0)


def _pair_distances(states: np.ndarray, layer: int, token_idx: np.ndarray, location: str) -> np.ndarray:
    """Cosine distances between layers (layer-1, layer) for the given tokens."""
    cur = states[layer, token_idx].astype(np.float64)
    prev = states[layer - 1, token_idx].astype(np.float64)
    n_cur = np.linalg.norm(cur, axis=1)
    n_prev = np.linalg.norm(prev, axis=1)
    zero = (n_cur == 0.0) | (n_prev == 0.0)
    if zero.any():
        tok = int(token_idx[int(np.nonzero(zero)[0][0])])
        raise DegenerateVector(f"zero-norm hidden state in {location}", layer=layer, token=tok)
    d = 1.0 - np.einsum("ij,ij->i", cur, prev) / (n_cur * n_prev)
    return np.clip(d, 0.0, 2.0)


def layer_metrics(trace: HiddenTrace, layer: int, modality: str, t: float = DEFAULT_THRESHOLD) -> tuple[float, float]:
    """(mean distance, fraction strictly below t) for one layer and modality."""
    if not 1 <= layer <= trace.layer_count - 1:
        raise InvalidArgument(f"layer must be in [1, {trace.layer_count - 1}], got {layer}")
    if not 0.0 < t < 2.0:
        raise InvalidArgument(f"threshold t must lie in (0, 2), got {t}")
    idx = trace.token_indices(modality)
    if len(idx) == 0:
        raise EmptyModality(f"trace has no {modality!r} tokens", sample_id=trace.sample_id)
    d = _pair_distances(trace.states, layer, idx, f"sample {trace.sample_id!r}")
    return float(d.mean()), float((d < t).mean())


@dataclass(frozen=True)
class RedundancyProfile:
    """Pooled adjacent-layer metrics, one row per (layer, modality).

    ``layers`` runs over 1..layer_count-1. Arrays are keyed by modality
    tag and indexed like ``layers``. ``n_tokens`` counts pooled tokens,
    constant across layers for a fixed token population.
    """

    layers: tuple
    t: float
    mean_cos_dist: dict
    proximal_frac: dict
    n_tokens: dict
    n_samples: int = 1

    @property
    def modalities(self) -> tuple:
        return tuple(sorted(self.mean_cos_dist))

    def row(self, layer: int, modality: str) -> tuple[float, float]:
        i = self.layers.index(layer)
        return self.mean_cos_dist[modality][i], self.proximal_frac[modality][i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for modality in self.modalities:
            for i, layer in enumerate(self.layers):
                w.writerow(
                    [
                        layer,
                        "TEXT" if modality == TEXT else "VISION",
                        _fmt(self.mean_cos_dist[modality][i]),
                        _fmt(self.proximal_frac[modality][i]),
                        _fmt(self.t),
                        self.n_tokens[modality],
                    ]
                )
        return buf.getvalue()

    def to_records(self) -> list[dict]:
        out = []
        for modality in self.modalities:
            for i, layer in enumerate(self.layers):
                out.append(
                    {
                        "layer": int(layer),
                        "modality": "TEXT" if modality == TEXT else "VISION",
                        "mean_cos_dist": float(self.mean_cos_dist[modality][i]),
                        "proximal_frac": float(self.proximal_frac[modality][i]),
                        "t": float(self.t),
                        "n_tokens": int(self.n_tokens[modality]),
                    }
                )
        return out


def _fmt(x: float) -> str:
    return repr(float(x))


def redundancy_profile(traces: HiddenTrace | Iterable[HiddenTrace], t: float = DEFAULT_THRESHOLD) -> RedundancyProfile:
    """Token-level pooling of layer metrics over one or more traces.

    All tokens from all traces form one population per (layer, modality),
    so the result is independent of trace ordering and of how tokens are
    split across traces. Traces must agree on layer_count and dim.
    """
    if isinstance(traces, HiddenTrace):
        traces = [traces]
    traces = list(traces)
    if not traces:
        raise InvalidArgument("at least one trace required")
    if not 0.0 < t < 2.0:
        raise InvalidArgument(f"threshold t must lie in (0, 2), got {t}")
    layer_count = traces[0].layer_count
    dim = traces[0].dim
    for tr in traces[1:]:
        if tr.layer_count != layer_count or tr.dim != dim:
            raise ShapeMismatch(
                "traces disagree on shape",
                expected=(layer_count, dim),
                got=(tr.layer_count, tr.dim),
                sample_id=tr.sample_id,
            )

    layers = tuple(range(1, layer_count))
    present = [m for m in (TEXT, VISION) if any(len(tr.token_indices(m)) for tr in traces)]
    mean_d: dict = {}
    prox: dict = {}
    counts: dict = {}
    for modality in present:
        per_layer = []
        for layer in layers:
            dists = [
                _pair_distances(tr.states, layer, tr.token_indices(modality), f"sample {tr.sample_id!r}")
                for tr in traces
                if len(tr.token_indices(modality))
            ]
            per_layer.append(np.concatenate(dists))
        mean_d[modality] = tuple(float(d.mean()) for d in per_layer)
        prox[modality] = tuple(float((d < t).mean()) for d in per_layer)
        counts[modality] = int(len(per_layer[0])) if per_layer else 0
    return RedundancyProfile(
        layers=layers,
        t=float(t),
        mean_cos_dist=mean_d,
        proximal_frac=prox,
        n_tokens=counts,
        n_samples=len(traces),
    )


_MODALITY_TAGS = {"TEXT": TEXT, "VISION": VISION, "T": TEXT, "V": VISION}


def profile_from_rows(rows: Sequence[dict]) -> RedundancyProfile:
    """Build a profile from parsed CSV-style records, validating ranges."""
    if not rows:
        raise FormatRejected("profile CSV contains no data rows")
    by_mod: dict = {}
    t_vals = set()
    counts: dict = {}
    for i, row in enumerate(rows, start=2):
        loc = f"row {i}"
        try:
            layer = int(row["layer"])
            tag = _MODALITY_TAGS[str(row["modality"]).strip().upper()]
            d = float(row["mean_cos_dist"])
            p = float(row["proximal_frac"])
            t = float(row["t"])
            n = int(row["n_tokens"])
        except KeyError as exc:
            raise FormatRejected(f"missing column {exc} in {loc}") from exc
        except ValueError as exc:
            raise FormatRejected(f"unparseable value in {loc}: {exc}") from exc
        if layer < 1:
            raise FormatRejected(f"layer must be >= 1 in {loc}, got {layer}")
        if not 0.0 <= d <= 2.0:
            raise FormatRejected(f"mean_cos_dist out of [0, 2] in {loc}, column mean_cos_dist: {d}")
        if not 0.0 <= p <= 1.0:
            raise FormatRejected(f"proximal_frac out of [0, 1] in {loc}, column proximal_frac: {p}")
        if not 0.0 < t < 2.0:
            raise FormatRejected(f"t out of (0, 2) in {loc}, column t: {t}")
        if n < 0:
            raise FormatRejected(f"n_tokens negative in {loc}")
        by_mod.setdefault(tag, {})[layer] = (d, p)
        counts[tag] = n
        t_vals.add(t)
    if len(t_vals) != 1:
        raise FormatRejected(f"profile mixes thresholds {sorted(t_vals)}")
    layer_sets = {tag: tuple(sorted(v)) for tag, v in by_mod.items()}
    layers = next(iter(layer_sets.values()))
    if any(ls != layers for ls in layer_sets.values()):
        raise FormatRejected("modalities cover different layer sets")
    return RedundancyProfile(
        layers=layers,
        t=t_vals.pop(),
        mean_cos_dist={tag: tuple(by_mod[tag][l][0] for l in layers) for tag in by_mod},
        proximal_frac={tag: tuple(by_mod[tag][l][1] for l in layers) for tag in by_mod},
        n_tokens=counts,
    )


def profile_from_csv(text: str) -> RedundancyProfile:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise FormatRejected("profile CSV is empty")
    missing = [c for c in PROFILE_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise FormatRejected(f"profile CSV missing columns {missing}")
    return profile_from_rows(list(reader))
