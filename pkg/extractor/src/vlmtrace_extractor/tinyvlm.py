"""A small deterministic vision-language model for hermetic extraction runs.

Random-weights torch model with the same capture surface as a hub VLM:
per-layer post-residual hidden states (layer 0 = embeddings) and
post-softmax attention maps. Images become a prefix of patch tokens
through a linear projector; text is byte-level tokenized. Useful for
exercising the extraction pipeline end to end without downloads; it has
no trained behavior.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

VOCAB = 64
MODEL_ID = "builtin:tiny-vlm"


def tokenize(text: str) -> list[int]:
    return [ord(c) % VOCAB for c in text]


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, h):
        normed = self.norm1(h)
        attn_out, weights = self.attn(normed, normed, normed, need_weights=True, average_attn_weights=False)
        h = h + attn_out
        h = h + self.mlp(self.norm2(h))
        return h, weights


class TinyVlm(nn.Module):
    def __init__(self, layers: int = 4, dim: int = 32, heads: int = 2, patch: int = 4, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.dim = dim
        self.patch = patch
        self.embed = nn.Embedding(VOCAB, dim)
        self.projector = nn.Linear(patch * patch, dim)
        self.blocks = nn.ModuleList(_Block(dim, heads) for _ in range(layers))
        self.eval()

    def image_tokens(self, image: np.ndarray) -> torch.Tensor:
        """Non-overlapping patches, linearly projected; image is (H, W)."""
        arr = torch.as_tensor(np.asarray(image, dtype=np.float32))
        if arr.ndim == 3:
            arr = arr.mean(dim=2)
        p = self.patch
        h = (arr.shape[0] // p) * p
        w = (arr.shape[1] // p) * p
        if h == 0 or w == 0:
            raise ValueError(f"image {tuple(arr.shape)} smaller than one {p}x{p} patch")
        patches = arr[:h, :w].reshape(h // p, p, w // p, p).permute(0, 2, 1, 3).reshape(-1, p * p)
        return self.projector(patches)

    @torch.no_grad()
    def capture(self, prompt: str, image: np.ndarray | None):
        """Run one forward pass and capture everything the container needs.

        Returns (hidden_states [layers+1, tokens, dim], attentions
        [layers, heads, tokens, tokens], vision_token_count).
        """
        text_ids = torch.as_tensor(tokenize(prompt), dtype=torch.long)
        if len(text_ids) == 0:
            raise ValueError("prompt produced no text tokens")
        parts = []
        n_vision = 0
        if image is not None:
            vision = self.image_tokens(image)
            n_vision = vision.shape[0]
            parts.append(vision)
        parts.append(self.embed(text_ids))
        h = torch.cat(parts, dim=0)[None]  # (1, tokens, dim)

        hidden = [h[0].clone()]
        attentions = []
        for block in self.blocks:
            h, weights = block(h)
            hidden.append(h[0].clone())
            attentions.append(weights[0].clone())
        return (
            torch.stack(hidden).numpy(),
            torch.stack(attentions).numpy(),
            n_vision,
        )
