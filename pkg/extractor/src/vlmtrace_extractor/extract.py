"""Hook a vision-language model's forward pass and write trace containers.

One container per sample: all layers' post-residual hidden states (layer
0 = embedding output) and the post-softmax attention rows of the answer
token, downcast to float32. The modality mask marks the model's image
token span. Sample failures are recorded as diagnostics and extraction
continues; model load failures abort with MODEL_ERROR.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .container import write_container
from .tinyvlm import MODEL_ID as TINY_MODEL_ID
from .tinyvlm import TinyVlm


class ExtractionError(Exception):
    code = "EXTRACTION_ERROR"


class ModelError(ExtractionError):
    code = "MODEL_ERROR"


@dataclass(frozen=True)
class SampleSpec:
    sample_id: str
    prompt: str
    image: Optional[str] = None  # path to .npy (or an image file for hub models)
    answer_token_index: Optional[int] = None  # defaults to the last token


@dataclass(frozen=True)
class ExtractionSpec:
    model_id: str
    samples: tuple
    max_samples: int = 1_000_000

    def __post_init__(self):
        if self.max_samples < 1:
            raise ExtractionError(f"max_samples must be >= 1, got {self.max_samples}")
        object.__setattr__(self, "samples", tuple(self.samples))

    @staticmethod
    def from_manifest(path) -> "ExtractionSpec":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ExtractionError(f"cannot read manifest {path}: {exc}") from exc
        samples = []
        for i, entry in enumerate(raw.get("samples", [])):
            samples.append(
                SampleSpec(
                    sample_id=str(entry.get("id", f"sample-{i:04d}")),
                    prompt=entry["prompt"],
                    image=entry.get("image"),
                    answer_token_index=entry.get("answer_token_index"),
                )
            )
        if not samples:
            raise ExtractionError(f"manifest {path} lists no samples")
        missing = [s.image for s in samples if s.image and not Path(s.image).exists()]
        if missing:
            raise ExtractionError(f"referenced files do not exist: {missing}")
        return ExtractionSpec(
            model_id=str(raw["model"]),
            samples=samples,
            max_samples=int(raw.get("max_samples", len(samples))),
        )


@dataclass
class Capture:
    """One sample's raw capture, model-agnostic."""

    hidden: np.ndarray  # (layers + 1, tokens, dim)
    attentions: np.ndarray  # (layers, heads, tokens, tokens)
    vision_token_count: int
    vision_first: bool = True

    @property
    def modality_mask(self) -> str:
        text = self.hidden.shape[1] - self.vision_token_count
        if self.vision_first:
            return "V" * self.vision_token_count + "T" * text
        return "T" * text + "V" * self.vision_token_count


class VlmAdapter(Protocol):
    model_id: str

    def capture(self, sample: SampleSpec) -> Capture: ...


class TinyVlmAdapter:
    """Adapter over the bundled deterministic model; no downloads."""

    def __init__(self, seed: int = 0):
        self.model_id = TINY_MODEL_ID
        self._model = TinyVlm(seed=seed)

    def capture(self, sample: SampleSpec) -> Capture:
        image = None
        if sample.image is not None:
            image = np.load(sample.image)
        hidden, attentions, n_vision = self._model.capture(sample.prompt, image)
        return Capture(hidden=hidden, attentions=attentions, vision_token_count=n_vision)


class HubVlmAdapter:
    """Adapter over a transformers image-text model.

    Captures hidden_states / attentions from a single forward pass and
    derives the image-token span from the expanded input ids. Requires
    the checkpoint to be available locally or downloadable.
    """

    def __init__(self, model_id: str):
        self.model_id = model_id
        try:
            import torch
            from transformers import AutoModelForImageTextToText, AutoProcessor
        except ImportError as exc:
            raise ModelError(f"transformers/torch unavailable: {exc}") from exc
        try:
            self._processor = AutoProcessor.from_pretrained(model_id)
            self._model = AutoModelForImageTextToText.from_pretrained(model_id, torch_dtype=torch.float32)
            self._model.eval()
        except Exception as exc:
            raise ModelError(f"cannot load {model_id!r}: {exc}") from exc
        self._torch = torch

    def capture(self, sample: SampleSpec) -> Capture:
        torch = self._torch
        from PIL import Image

        image = Image.open(sample.image).convert("RGB") if sample.image else None
        inputs = self._processor(images=image, text=sample.prompt, return_tensors="pt")
        with torch.no_grad():
            out = self._model(**inputs, output_hidden_states=True, output_attentions=True)
        image_token = getattr(self._model.config, "image_token_index", None)
        ids = inputs["input_ids"][0]
        vision_positions = (ids == image_token).nonzero().flatten() if image_token is not None else []
        hidden = torch.stack([h[0] for h in out.hidden_states]).float().numpy()
        attentions = torch.stack([a[0] for a in out.attentions]).float().numpy()
        n_vision = int(len(vision_positions))
        vision_first = bool(n_vision and int(vision_positions[0]) == 0)
        return Capture(
            hidden=hidden,
            attentions=attentions,
            vision_token_count=n_vision,
            vision_first=vision_first,
        )


def load_adapter(model_id: str, seed: int = 0) -> VlmAdapter:
    if model_id == TINY_MODEL_ID:
        return TinyVlmAdapter(seed=seed)
    return HubVlmAdapter(model_id)


@dataclass
class ExtractionResult:
    files: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    manifest_path: Optional[Path] = None


def extract(spec: ExtractionSpec, out_dir, seed: int = 0) -> ExtractionResult:
    """Run every sample through the model and write one container each.

    A manifest JSON alongside the traces records the model identifier,
    capture settings, written files, and per-sample failures.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    adapter = load_adapter(spec.model_id, seed=seed)

    result = ExtractionResult()
    for sample in spec.samples[: spec.max_samples]:
        try:
            capture = adapter.capture(sample)
            mask = capture.modality_mask
            tokens = capture.hidden.shape[1]
            answer = sample.answer_token_index if sample.answer_token_index is not None else tokens - 1
            if not (0 <= answer < tokens) or mask[answer] != "T":
                raise ExtractionError(f"answer token {answer} is not a text token")
            path = out_dir / f"{sample.sample_id}.vlmt"
            answer_rows = capture.attentions[:, :, answer, :][None]  # (1, layers, heads, keys)
            write_container(
                path,
                hidden=capture.hidden,
                modality_mask=mask,
                sample_id=sample.sample_id,
                answer_token_index=answer,
                attention=answer_rows,
                query_token_ids=(answer,),
                vision_key_mask=mask,
            )
            result.files.append(path)
        except Exception as exc:  # per-sample isolation
            result.diagnostics.append({"sample": sample.sample_id, "error": str(exc)})

    manifest = {
        "model": spec.model_id,
        "format": "VLMT v1",
        "capture": {
            "hidden": "post-residual block outputs, layer 0 = embedding output",
            "attention": "post-softmax rows for the answer token only",
            "precision": "float32",
        },
        "seed": seed,
        "files": [p.name for p in result.files],
        "failures": result.diagnostics,
    }
    manifest_path = out_dir / "extraction_manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    result.manifest_path = manifest_path
    return result
