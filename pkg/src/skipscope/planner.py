"""Per-layer skip-condition flags and late-entry / early-exit planning.

Late entry of a modality requires redundancy of that modality AND small
cross-attention at every covered layer up to the entry point: redundancy
alone leaves inter-modality traffic unexplained, and small traffic alone
leaves the states still evolving. Early exit requires only small
cross-attention from the exit layer onward; the dropped tokens may keep
evolving once nothing reads from them.

Plans use contiguous prefix/suffix rules over the covered layers: the
late-entry layer is the largest l with all covered layers <= l fully ok,
and the early-exit layer is the smallest l with var_ok at every covered
layer >= l.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .attention import VarProfile, var_from_csv
from .errors import FormatRejected, InvalidArgument, ShapeMismatch
from .redundancy import RedundancyProfile, profile_from_csv
from .traceio import TEXT, VISION

RATIONALE_COLUMNS = (
    "layer",
    "modality",
    "mean_cos_dist",
    "proximal_frac",
    "var_normalized",
    "geometric_ok",
    "proximal_ok",
    "var_ok",
)


@dataclass(frozen=True)
class Thresholds:
    """Cutoffs for the three per-layer conditions.

    Defaults separate the clearly-preserved from the clearly-degraded
    layers in published 7B/13B measurements and are CLI-overridable.
    """

    eps_geo: float = 0.03
    eps_prox: float = 0.10
    tau_var: float = 0.05
    t: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.eps_geo <= 2.0:
            raise InvalidArgument(f"eps_geo must lie in (0, 2], got {self.eps_geo}")
        if not 0.0 < self.eps_prox <= 1.0:
            raise InvalidArgument(f"eps_prox must lie in (0, 1], got {self.eps_prox}")
        if not 0.0 <= self.tau_var <= 1.0:
            raise InvalidArgument(f"tau_var must lie in [0, 1], got {self.tau_var}")
        if not 0.0 < self.t < 2.0:
            raise InvalidArgument(f"t must lie in (0, 2), got {self.t}")


@dataclass(frozen=True)
class LayerConditions:
    """Deterministic flags per covered layer: the planner's only input."""

    layers: tuple
    thresholds: Thresholds
    geometric_ok: Mapping[str, tuple]
    proximal_ok: Mapping[str, tuple]
    var_ok: tuple
    metrics: Mapping[str, tuple] = field(default_factory=dict)
    var_values: Optional[tuple] = None

    @property
    def modalities(self) -> tuple:
        return tuple(sorted(self.geometric_ok))

    def all_ok(self, layer: int, modality: str) -> bool:
        i = self.layers.index(layer)
        return self.geometric_ok[modality][i] and self.proximal_ok[modality][i] and self.var_ok[i]


@dataclass(frozen=True)
class SkipPlan:
    """Late-entry and early-exit recommendations with their rationale.

    ``late_entry_layer`` = 0 means no skipping is safe; the skipped
    modality's tokens otherwise join at the layer after it.
    ``early_exit_layer`` is the first layer safe to run without the
    skipped modality, or None when even the last covered layer keeps
    attending it.
    """

    modality: str
    late_entry_layer: int
    early_exit_layer: Optional[int]
    viable_late_entry: tuple
    viable_early_exit: tuple
    layers: tuple
    thresholds: Thresholds
    rationale: tuple

    def to_dict(self) -> dict:
        return {
            "modality": "VISION" if self.modality == VISION else "TEXT",
            "late_entry_layer": self.late_entry_layer,
            "early_exit_layer": self.early_exit_layer,
            "viable_late_entry": list(self.viable_late_entry),
            "viable_early_exit": list(self.viable_early_exit),
            "layers": list(self.layers),
            "thresholds": {
                "eps_geo": self.thresholds.eps_geo,
                "eps_prox": self.thresholds.eps_prox,
                "tau_var": self.thresholds.tau_var,
                "t": self.thresholds.t,
            },
            "rationale": [dict(r) for r in self.rationale],
        }

    def rationale_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RATIONALE_COLUMNS)
        for r in self.rationale:
            w.writerow([_csv_cell(r[c]) for c in RATIONALE_COLUMNS])
        return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def evaluate_conditions(
    profile: RedundancyProfile,
    var: Optional[VarProfile] = None,
    thresholds: Thresholds = Thresholds(),
    var_ok: Optional[Mapping[int, bool]] = None,
) -> LayerConditions:
    """Apply the threshold comparisons per covered layer and modality.

    ``var_ok`` supplies the cross-attention flags directly when no VAR
    measurements exist (e.g. when replaying published metric tables);
    otherwise they come from ``var`` as var_normalized <= tau_var. Pure
    and total given valid inputs.
    """
    layers = profile.layers
    if var is not None and var_ok is not None:
        raise InvalidArgument("pass either a VAR profile or explicit var_ok flags, not both")
    if var is not None:
        if tuple(var.layers) != tuple(layers):
            raise ShapeMismatch(
                "profile and VAR cover different layers",
                profile_layers=layers,
                var_layers=var.layers,
            )
        var_values = tuple(float(v) for v in var.var_normalized)
        var_flags = tuple(v <= thresholds.tau_var for v in var_values)
    elif var_ok is not None:
        missing = [l for l in layers if l not in var_ok]
        if missing:
            raise ShapeMismatch("var_ok flags missing for covered layers", layers=missing)
        var_values = None
        var_flags = tuple(bool(var_ok[l]) for l in layers)
    else:
        raise InvalidArgument("cross-attention input required: a VAR profile or var_ok flags")

    geo = {}
    prox = {}
    for m in profile.modalities:
        geo[m] = tuple(d <= thresholds.eps_geo for d in profile.mean_cos_dist[m])
        prox[m] = tuple(p >= 1.0 - thresholds.eps_prox for p in profile.proximal_frac[m])
    return LayerConditions(
        layers=tuple(layers),
        thresholds=thresholds,
        geometric_ok=geo,
        proximal_ok=prox,
        var_ok=var_flags,
        metrics={m: tuple(zip(profile.mean_cos_dist[m], profile.proximal_frac[m])) for m in profile.modalities},
        var_values=var_values,
    )


def plan_skips(conditions: LayerConditions, modality: str = VISION) -> SkipPlan:
    """Turn per-layer flags into contiguous late-entry / early-exit plans.

    Entry at layer 0 (skip nothing) is always viable. A covered layer l
    is late-entry viable iff every covered layer <= l passes all three
    conditions for the skipped modality, and early-exit viable iff every
    covered layer >= l passes var_ok alone.
    """
    if modality not in conditions.modalities:
        raise InvalidArgument(
            f"conditions carry no {modality!r} metrics", available=conditions.modalities
        )
    layers = conditions.layers
    n = len(layers)
    full_ok = [
        conditions.geometric_ok[modality][i] and conditions.proximal_ok[modality][i] and conditions.var_ok[i]
        for i in range(n)
    ]

    viable_entry = [0]
    prefix_ok = True
    late_entry = 0
    for i, layer in enumerate(layers):
        prefix_ok = prefix_ok and full_ok[i]
        if prefix_ok:
            viable_entry.append(layer)
            late_entry = layer

    viable_exit = []
    suffix_ok = True
    early_exit: Optional[int] = None
    for i in range(n - 1, -1, -1):
        suffix_ok = suffix_ok and conditions.var_ok[i]
        if suffix_ok:
            viable_exit.append(layers[i])
            early_exit = layers[i]
    viable_exit.reverse()

    rationale = []
    for m in conditions.modalities:
        for i, layer in enumerate(layers):
            d, p = conditions.metrics[m][i] if m in conditions.metrics else (None, None)
            rationale.append(
                {
                    "layer": layer,
                    "modality": "VISION" if m == VISION else "TEXT",
                    "mean_cos_dist": d,
                    "proximal_frac": p,
                    "var_normalized": None if conditions.var_values is None else conditions.var_values[i],
                    "geometric_ok": bool(conditions.geometric_ok[m][i]),
                    "proximal_ok": bool(conditions.proximal_ok[m][i]),
                    "var_ok": bool(conditions.var_ok[i]),
                }
            )
    return SkipPlan(
        modality=modality,
        late_entry_layer=late_entry,
        early_exit_layer=early_exit,
        viable_late_entry=tuple(viable_entry),
        viable_early_exit=tuple(viable_exit),
        layers=layers,
        thresholds=conditions.thresholds,
        rationale=tuple(rationale),
    )


def load_external_metrics(profile_csv: str, var_csv: Optional[str] = None):
    """Parse profile (and optionally VAR) CSV text back into profiles.

    Validates ranges cell by cell so a bad row is rejected with its
    location rather than silently absorbed.
    """
    profile = profile_from_csv(profile_csv)
    var = None
    if var_csv is not None:
        var = var_from_csv(var_csv)
        if tuple(var.layers) != tuple(profile.layers):
            raise FormatRejected(
                "VAR CSV covers different layers than the profile CSV",
                profile_layers=profile.layers,
                var_layers=var.layers,
            )
    return profile, var


MODALITY_BY_NAME = {"VISION": VISION, "TEXT": TEXT, "V": VISION, "T": TEXT}
