"""Hand-wired multimodal toy transformer with controllable transfer layers.

The task: a grid of vision tokens carries one attribute each, the text
query names an attribute, and the label says whether it appears in the
grid. All cross-modal traffic is wired into a contiguous block of layers
where the answer slot attends vision keys whose attribute matches the
query and accumulates their presence mass along a dedicated signal
direction. Outside the block every layer is an exact identity (value
path gated to zero), so the redundancy and cross-attention structure the
analysis modules should detect is constructed, not trained.

Embedding subspaces (dim >= 2 * attr_count + 4):

    [0, A)        vision-content one-hot (vision tokens)
    [A, 2A)       query-content one-hot (text tokens)
    2A            vision marker
    2A + 1        text marker
    2A + 2        constant marker (lets bilinear logits read key features)
    2A + 3        signal direction read out for the prediction

Skip modes follow the composition semantics: LATE_ENTRY(l) runs the
first l layers without vision tokens and then inserts their raw
embeddings at their original positions; EARLY_EXIT(l) removes vision
from the sequence after layer l. LATE_ENTRY(0) and EARLY_EXIT(n) take
the exact baseline code path and are bit-identical to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument
from .traceio import AttentionTrace, HiddenTrace

_MATCH_SCALE = 16.0
_SINK_SCALE = 14.0
_HEAD_SPREAD = 0.03
_WEIGHT_NOISE = 0.01
_DECISION_LEVEL = 0.5


@dataclass(frozen=True)
class ToyModelConfig:
    layer_count: int = 12
    dim: int = 32
    head_count: int = 4
    copy_block: tuple = (5, 8)
    noise_scale: float = 0.0
    seed: int = 0
    attr_count: int = 12
    grid_size: int = 9

    def __post_init__(self):
        a, b = self.copy_block
        if not (1 <= a <= b < self.layer_count):
            raise InvalidArgument(f"copy_block must satisfy 1 <= a <= b < n, got {self.copy_block}")
        if self.dim < 2 * self.attr_count + 4:
            raise InvalidArgument(
                f"dim must be >= 2 * attr_count + 4 = {2 * self.attr_count + 4}, got {self.dim}"
            )
        if self.head_count < 1 or self.layer_count < 2 or self.grid_size < 1 or self.attr_count < 2:
            raise InvalidArgument("degenerate toy-model configuration")
        if self.noise_scale < 0:
            raise InvalidArgument("noise_scale must be >= 0")
        object.__setattr__(self, "copy_block", (int(a), int(b)))

    @property
    def token_count(self) -> int:
        return self.grid_size + 2

    @property
    def answer_index(self) -> int:
        return self.grid_size + 1

    @property
    def idx_vis(self) -> int:
        return 2 * self.attr_count

    @property
    def idx_txt(self) -> int:
        return 2 * self.attr_count + 1

    @property
    def idx_one(self) -> int:
        return 2 * self.attr_count + 2

    @property
    def idx_sig(self) -> int:
        return 2 * self.attr_count + 3


@dataclass(frozen=True)
class SkipMode:
    """BASELINE, LATE_ENTRY(layer), or EARLY_EXIT(layer)."""

    kind: str
    layer: Optional[int] = None

    def vision_active(self, layer: int) -> bool:
        if self.kind == "BASELINE":
            return True
        if self.kind == "LATE_ENTRY":
            return layer > self.layer
        return layer <= self.layer

    def describe(self) -> str:
        return self.kind if self.layer is None else f"{self.kind}({self.layer})"


BASELINE = SkipMode("BASELINE")


def late_entry(layer: int) -> SkipMode:
    return SkipMode("LATE_ENTRY", int(layer))


def early_exit(layer: int) -> SkipMode:
    return SkipMode("EARLY_EXIT", int(layer))


def _check_mode(mode: SkipMode, n_layers: int) -> None:
    if mode.kind not in ("BASELINE", "LATE_ENTRY", "EARLY_EXIT"):
        raise InvalidArgument(f"unknown mode kind {mode.kind!r}")
    if mode.kind != "BASELINE" and not (0 <= mode.layer <= n_layers):
        raise InvalidArgument(f"{mode.kind} layer must lie in [0, {n_layers}], got {mode.layer}")


@dataclass(frozen=True)
class SynthSample:
    """One task instance: attribute grid, queried attribute, presence label."""

    grid_attrs: tuple
    query_attr: int
    label: int


@dataclass(frozen=True)
class ToyModel:
    config: ToyModelConfig
    logit_weights: np.ndarray  # (layers, heads, dim, dim)
    value_gain: np.ndarray  # (layers,) 1.0 inside the copy block, else 0.0

    def __post_init__(self):
        self.logit_weights.flags.writeable = False
        self.value_gain.flags.writeable = False


def build_model(config: ToyModelConfig = ToyModelConfig()) -> ToyModel:
    """Deterministic weights from the config seed.

    Inside the copy block the bilinear logit matrix scores query-content
    against vision-content and penalizes non-matching vision keys, with
    text keys as the zero-logit sink; outside it every key of the other
    modality is dominated by a text-sink bias and the value path is
    gated off entirely, making those layers exact identities.
    """
    rng = np.random.default_rng(config.seed)
    d = config.dim
    a, b = config.copy_block
    match_base = np.zeros((d, d))
    for i in range(config.attr_count):
        match_base[config.attr_count + i, i] = _MATCH_SCALE
    match_base[config.idx_one, config.idx_vis] = -_MATCH_SCALE / 2.0
    sink_base = np.zeros((d, d))
    sink_base[config.idx_one, config.idx_txt] = _SINK_SCALE

    weights = np.empty((config.layer_count, config.head_count, d, d))
    gains = np.zeros(config.layer_count)
    for layer in range(1, config.layer_count + 1):
        in_block = a <= layer <= b
        base = match_base if in_block else sink_base
        gains[layer - 1] = 1.0 if in_block else 0.0
        for head in range(config.head_count):
            scale = 1.0 + _HEAD_SPREAD * head
            weights[layer - 1, head] = scale * base + _WEIGHT_NOISE * rng.normal(size=(d, d))
    return ToyModel(config=config, logit_weights=weights, value_gain=gains)


def synth_dataset(seed: int, count: int) -> list[SynthSample]:
    """Deterministic task instances with roughly balanced labels."""
    if count < 1:
        raise InvalidArgument(f"count must be >= 1, got {count}")
    cfg = ToyModelConfig()
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        grid = tuple(int(v) for v in rng.integers(0, cfg.attr_count, cfg.grid_size))
        if rng.random() < 0.5:
            query = grid[int(rng.integers(cfg.grid_size))]
        else:
            absent = sorted(set(range(cfg.attr_count)) - set(grid))
            query = int(absent[int(rng.integers(len(absent)))])
        samples.append(SynthSample(grid_attrs=grid, query_attr=int(query), label=int(query in grid)))
    return samples


def _embed(config: ToyModelConfig, samples: Sequence[SynthSample]) -> np.ndarray:
    n = len(samples)
    h = np.zeros((n, config.token_count, config.dim))
    h[:, :, config.idx_one] = 1.0
    h[:, : config.grid_size, config.idx_vis] = 1.0
    h[:, config.grid_size :, config.idx_txt] = 1.0
    for s, sample in enumerate(samples):
        if len(sample.grid_attrs) != config.grid_size:
            raise InvalidArgument("sample grid size does not match the model config")
        for g, attr in enumerate(sample.grid_attrs):
            h[s, g, attr] = 1.0
        for text_pos in (config.grid_size, config.grid_size + 1):
            h[s, text_pos, config.attr_count + sample.query_attr] = 1.0
    return h


@dataclass(frozen=True)
class ForwardResult:
    states: np.ndarray  # (batch, layer_count + 1, tokens, dim)
    answer_attention: np.ndarray  # (batch, layer_count, heads, tokens)
    signal: np.ndarray  # (batch,)
    predictions: np.ndarray  # (batch,)
    mode: SkipMode


def forward_batch(model: ToyModel, samples: Sequence[SynthSample], mode: SkipMode = BASELINE) -> ForwardResult:
    """Run the full stack over a batch; one code path for every mode.

    Tokens absent under the mode neither query nor serve as keys; their
    recorded states carry the last value they held (raw embeddings before
    late entry, the exit-layer state after early exit).
    """
    cfg = model.config
    _check_mode(mode, cfg.layer_count)
    n = len(samples)
    tokens = cfg.token_count
    h = _embed(cfg, samples)
    states = np.empty((n, cfg.layer_count + 1, tokens, cfg.dim))
    states[:, 0] = h
    attn = np.zeros((n, cfg.layer_count, cfg.head_count, tokens))
    noise_rng = np.random.default_rng(cfg.seed + 1) if cfg.noise_scale > 0 else None

    vis_slice = slice(0, cfg.grid_size)
    for layer in range(1, cfg.layer_count + 1):
        active = np.ones(tokens, dtype=bool)
        if not mode.vision_active(layer):
            active[vis_slice] = False
        key_mask = active

        m = model.logit_weights[layer - 1]  # (heads, dim, dim)
        hm = np.einsum("btd,hde->bhte", h, m)
        logits = np.matmul(hm, h[:, None].transpose(0, 1, 3, 2))  # (b, h, q, k)
        logits = np.where(key_mask[None, None, None, :], logits, -np.inf)
        logits -= logits.max(axis=3, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=3, keepdims=True)

        gain = model.value_gain[layer - 1]
        if gain != 0.0:
            vis_strength = h[:, :, cfg.idx_vis] * key_mask[None, :]
            sig_mass = gain * np.einsum("bhqk,bk->bq", weights, vis_strength) / cfg.head_count
            update = np.zeros_like(h)
            update[:, :, cfg.idx_sig] = sig_mass
            h = h + np.where(active[None, :, None], update, 0.0)
        if noise_rng is not None:
            bump = noise_rng.normal(size=h.shape) * (cfg.noise_scale / np.sqrt(cfg.dim))
            h = h + np.where(active[None, :, None], bump, 0.0)
        states[:, layer] = h
        attn[:, layer - 1] = weights[:, :, cfg.answer_index, :]

    signal = states[:, cfg.layer_count, cfg.answer_index, cfg.idx_sig]
    preds = (signal > _DECISION_LEVEL).astype(int)
    return ForwardResult(states=states, answer_attention=attn, signal=signal, predictions=preds, mode=mode)


def forward(
    model: ToyModel, sample: SynthSample, mode: SkipMode = BASELINE
) -> tuple[HiddenTrace, AttentionTrace, int]:
    """Single-sample forward returning container-ready traces."""
    result = forward_batch(model, [sample], mode)
    trace, attention = result_to_traces(model, result, 0, sample_id=f"toy-{model.config.seed}-{mode.describe()}")
    return trace, attention, int(result.predictions[0])


def result_to_traces(
    model: ToyModel, result: ForwardResult, index: int, sample_id: str = ""
) -> tuple[HiddenTrace, AttentionTrace]:
    cfg = model.config
    mask = "V" * cfg.grid_size + "TT"
    trace = HiddenTrace(
        states=result.states[index].astype(np.float32),
        modality_mask=mask,
        sample_id=sample_id,
        answer_token_index=cfg.answer_index,
    )
    attention = AttentionTrace(
        rows=result.answer_attention[index][None].astype(np.float32),
        vision_key_mask=mask,
        query_token_ids=(cfg.answer_index,),
    )
    return trace, attention


def evaluate_accuracy(model: ToyModel, dataset: Sequence[SynthSample], mode: SkipMode = BASELINE) -> float:
    """Exact fraction of correct presence predictions under the mode."""
    if not dataset:
        raise InvalidArgument("dataset must be nonempty")
    result = forward_batch(model, dataset, mode)
    labels = np.array([s.label for s in dataset])
    return float((result.predictions == labels).mean())
