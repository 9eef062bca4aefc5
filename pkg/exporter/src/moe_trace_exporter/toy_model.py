"""Tiny MoE language model for exporter validation.

Token-local (no attention): embedding, a stack of MoE blocks with residual
connections, and a vocabulary head. Each block's gate is a softmax over a
linear projection, and the block dispatches to the top-k experts weighted by
their renormalized gate scores. Small and deterministic by construction; it
exists to exercise gate hooks, not to model language.
"""

from __future__ import annotations

import torch
from torch import nn


class TopKGate(nn.Module):
    """Gate producing a normalized score vector per token (softmax output).

    The exporter hooks this module's forward output; only post-softmax
    scores are observable by design.
    """

    def __init__(self, dim: int, num_experts: int):
        super().__init__()
        self.proj = nn.Linear(dim, num_experts)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.proj(x), dim=-1)


class MoEBlock(nn.Module):
    def __init__(self, dim: int, num_experts: int, k: int):
        super().__init__()
        self.gate = TopKGate(dim, num_experts)
        self.experts = nn.ModuleList(
            nn.Sequential(nn.Linear(dim, 2 * dim), nn.Tanh(),
                          nn.Linear(2 * dim, dim))
            for _ in range(num_experts))
        self.k = k

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        scores = self.gate(x)                       # [tokens, E]
        top_vals, top_idx = torch.topk(scores, self.k, dim=-1)
        weights = top_vals / top_vals.sum(dim=-1, keepdim=True)
        out = torch.zeros_like(x)
        for slot in range(self.k):
            for e in range(len(self.experts)):
                mask = top_idx[:, slot] == e
                if mask.any():
                    out[mask] += weights[mask, slot, None] * \
                        self.experts[e](x[mask])
        return x + out


class ToyMoELM(nn.Module):
    def __init__(self, vocab_size: int = 64, dim: int = 16,
                 num_layers: int = 2, num_experts: int = 4, k: int = 2,
                 seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.vocab_size = vocab_size
        self.num_layers = num_layers
        self.num_experts = num_experts
        self.k = k
        self.embed = nn.Embedding(vocab_size, dim)
        self.blocks = nn.ModuleList(
            MoEBlock(dim, num_experts, k) for _ in range(num_layers))
        self.head = nn.Linear(dim, vocab_size)

    def gate_modules(self) -> list[TopKGate]:
        """Per-layer gating modules, in layer order."""
        return [block.gate for block in self.blocks]

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        h = self.embed(token_ids)
        for block in self.blocks:
            h = block(h)
        return self.head(h)

    @torch.no_grad()
    def greedy_next(self, token_id: int) -> int:
        logits = self.forward(torch.tensor([token_id]))
        return int(logits[-1].argmax())

    def tokenize(self, text: str) -> list[int]:
        return [ord(ch) % self.vocab_size for ch in text]


MODEL_REGISTRY = {
    "toy-2x4": lambda: ToyMoELM(num_layers=2, num_experts=4, k=2, seed=0),
    "toy-4x8": lambda: ToyMoELM(num_layers=4, num_experts=8, k=2, seed=0),
}


def build_model(name: str) -> ToyMoELM:
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(MODEL_REGISTRY))
        raise ValueError(f"unknown model {name!r}; available: {known}") from None
    model = factory()
    model.eval()
    return model
