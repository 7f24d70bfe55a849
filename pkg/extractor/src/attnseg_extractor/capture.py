"""Self-attention probability capture.

Hooks run alongside the model's own computation: a forward pre-hook on
each self-attention module recomputes the post-softmax attention matrix
from the module's query/key projections, averages it over heads, and
stores it. Modules only need the standard projection layout (``to_q``,
``to_k``, ``heads``) and a ``(batch, seq, dim)`` hidden-states input,
which covers Stable-Diffusion-style transformer blocks.
"""

from __future__ import annotations

import math

import numpy as np
import torch


class CapturedAttention:
    def __init__(self, name: str, resolution: int, probs: np.ndarray):
        self.name = name
        self.resolution = resolution
        self.probs = probs  # (w*w, w*w) float32, rows sum to 1

    def as_4d(self) -> np.ndarray:
        w = self.resolution
        return self.probs.reshape(w, w, w, w)


def _attention_probs(module: torch.nn.Module, hidden: torch.Tensor) -> torch.Tensor:
    """Post-softmax attention averaged over heads: (batch, seq, seq)."""
    query = module.to_q(hidden)
    key = module.to_k(hidden)
    batch, seq, inner = query.shape
    heads = int(module.heads)
    dim_head = inner // heads
    query = query.view(batch, seq, heads, dim_head).transpose(1, 2)
    key = key.view(batch, seq, heads, dim_head).transpose(1, 2)
    scores = query @ key.transpose(-1, -2) * (1.0 / math.sqrt(dim_head))
    probs = torch.softmax(scores.float(), dim=-1)
    return probs.mean(dim=1)


class AttentionRecorder:
    """Records every hooked module's attention during one forward pass."""

    def __init__(self, modules: list[tuple[str, torch.nn.Module]]):
        self._order = [name for name, _ in modules]
        self._handles = []
        self._store: dict[str, CapturedAttention] = {}
        for name, module in modules:
            self._handles.append(
                module.register_forward_pre_hook(
                    self._make_hook(name), with_kwargs=True
                )
            )

    def _make_hook(self, name: str):
        def hook(module, args, kwargs):
            hidden = args[0] if args else kwargs["hidden_states"]
            if hidden.ndim != 3:
                raise RuntimeError(
                    f"{name}: expected (batch, seq, dim) input, got "
                    f"{tuple(hidden.shape)}"
                )
            with torch.no_grad():
                probs = _attention_probs(module, hidden)
            if probs.shape[0] != 1:
                raise RuntimeError(f"{name}: expected batch size 1")
            seq = probs.shape[-1]
            w = math.isqrt(seq)
            if w * w != seq:
                raise RuntimeError(f"{name}: sequence length {seq} is not square")
            self._store[name] = CapturedAttention(
                name, w, probs[0].cpu().numpy().astype(np.float32)
            )
            return None

        return hook

    def close(self) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles.clear()

    def captured(self) -> list[CapturedAttention]:
        missing = [name for name in self._order if name not in self._store]
        if missing:
            raise RuntimeError(f"no attention captured for: {missing}")
        return [self._store[name] for name in self._order]

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
