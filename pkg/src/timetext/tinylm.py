"""Tiny byte-level causal transformer, trainable on a desk CPU.

The training path runs on the autodiff `Tensor` graph; greedy decoding
uses a separate numpy-only path with per-layer KV caches (the two paths
share the same parameter arrays and are tested for agreement). Byte 0
doubles as padding and end-of-text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .nn import (
    Embedding,
    LayerNorm,
    Linear,
    LoraLinear,
    Module,
    TransformerBlock,
    causal_attn_bias,
)

__all__ = ["ByteTokenizer", "TinyLMConfig", "TinyCausalLM", "ContextOverflowError"]

PAD_ID = 0  # NUL: padding and end-of-text


class ContextOverflowError(ValueError):
    def __init__(self, needed: int, available: int):
        super().__init__(f"sequence needs {needed} positions but the model context is {available}")
        self.needed = needed
        self.available = available


class ByteTokenizer:
    """UTF-8 byte tokenizer over a 256-entry vocabulary."""

    vocab_size = 256
    pad_id = PAD_ID

    def encode(self, text: str, max_len: int | None = None) -> np.ndarray:
        ids = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
        if max_len is not None:
            out = np.full(max_len, PAD_ID, dtype=np.int64)
            keep = min(len(ids), max_len)  # overlong text keeps its head
            out[:keep] = ids[:keep]
            return out
        return ids

    def decode(self, ids) -> str:
        ids = np.asarray(ids, dtype=np.int64)
        stops = np.nonzero(ids == PAD_ID)[0]
        if stops.size:
            ids = ids[: stops[0]]
        return bytes(ids.astype(np.uint8).tolist()).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class TinyLMConfig:
    vocab_size: int = 256
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 2048
    seed: int = 0


def _apply_linear_np(layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, LoraLinear):
        return layer.apply_np(x)
    out = x @ layer.weight.data
    if layer.bias is not None:
        out = out + layer.bias.data
    return out


class TinyCausalLM(Module):
    """Pre-norm causal transformer with learned positions and a logit head."""

    trainable = True

    def __init__(self, config: TinyLMConfig = TinyLMConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.tok_emb = Embedding(config.vocab_size, config.dim, rng)
        self.pos_emb = Tensor(rng.normal(0.0, 0.02, size=(config.max_len, config.dim)), requires_grad=True)
        self.blocks = [TransformerBlock(config.dim, config.heads, config.ffn_dim, rng)
                       for _ in range(config.layers)]
        self.ln_f = LayerNorm(config.dim)
        self.head = Linear(config.dim, config.vocab_size, rng)

    # -- training path -------------------------------------------------

    def forward_embeds(self, x: Tensor, attend_ok: np.ndarray) -> tuple[Tensor, Tensor]:
        """x: (B, L, dim) input embeddings -> (hidden, logits), both full-length."""
        B, L, _ = x.shape
        if L > self.config.max_len:
            raise ContextOverflowError(L, self.config.max_len)
        x = x + self.pos_emb[np.arange(L)]
        bias = causal_attn_bias(attend_ok)
        for block in self.blocks:
            x = block(x, bias)
        hidden = self.ln_f(x)
        return hidden, self.head(hidden)

    def forward_ids(self, ids: np.ndarray, attend_ok: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        ids = np.asarray(ids, dtype=np.int64)
        if attend_ok is None:
            attend_ok = ids != PAD_ID
        return self.forward_embeds(self.tok_emb(ids), attend_ok)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def add_lora(self, rank: int, alpha: float, seed: int = 0,
                 targets: tuple[str, ...] = ("attention", "ffn")) -> None:
        """Wrap attention and feed-forward projections with low-rank adapters."""
        rng = np.random.default_rng(seed)
        for block in self.blocks:
            if "attention" in targets:
                attn = block.attn
                for name in ("wq", "wk", "wv", "wo"):
                    setattr(attn, name, LoraLinear(getattr(attn, name), rank, alpha, rng))
            if "ffn" in targets:
                mlp = block.mlp
                for name in ("fc1", "fc2"):
                    setattr(mlp, name, LoraLinear(getattr(mlp, name), rank, alpha, rng))

    # -- numpy inference path with KV caches -----------------------------

    def _np_block(self, block: TransformerBlock, x: np.ndarray, pos0: int,
                  cache: dict | None) -> np.ndarray:
        """Run one block over x (L, dim) starting at absolute position pos0.

        With a cache, keys/values are appended and attention spans
        everything cached so far; without one, attention is causal
        within x (which must then start at position 0).
        """
        cfg = self.config
        attn = block.attn
        h = block.ln1.apply_np(x)
        L = h.shape[0]

        def split(m):  # (L, dim) -> (heads, L, head_dim)
            return m.reshape(L, attn.heads, attn.head_dim).transpose(1, 0, 2)

        q = split(_apply_linear_np(attn.wq, h))
        k = split(_apply_linear_np(attn.wk, h))
        v = split(_apply_linear_np(attn.wv, h))
        if cache is not None:
            k = np.concatenate([cache["k"], k], axis=1) if cache["k"] is not None else k
            v = np.concatenate([cache["v"], v], axis=1) if cache["v"] is not None else v
            cache["k"], cache["v"] = k, v
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(attn.head_dim)
        total = k.shape[1]
        # causal: query at absolute position pos0+i sees keys 0..pos0+i
        qpos = pos0 + np.arange(L)[:, None]
        scores = np.where(np.arange(total)[None, None, :] <= qpos[None, :, :], scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        ctx = (w @ v).transpose(1, 0, 2).reshape(L, cfg.dim)
        x = x + _apply_linear_np(attn.wo, ctx)
        h2 = block.ln2.apply_np(x)
        h2 = _apply_linear_np(block.mlp.fc1, h2)
        # exact GELU, matching the training path
        from scipy.special import erf

        h2 = 0.5 * h2 * (1.0 + erf(h2 / np.sqrt(2.0)))
        h2 = _apply_linear_np(block.mlp.fc2, h2)
        return x + h2

    def np_logits(self, ids: np.ndarray) -> np.ndarray:
        """Full-sequence logits (L, V) on the inference path, no cache."""
        ids = np.asarray(ids, dtype=np.int64)
        x = self.tok_emb.weight.data[ids] + self.pos_emb.data[: len(ids)]
        for block in self.blocks:
            x = self._np_block(block, x, 0, None)
        hidden = self.ln_f.apply_np(x)
        return _apply_linear_np(self.head, hidden)

    def generate(self, prompt_ids: np.ndarray, max_new_tokens: int,
                 stop_id: int | None = PAD_ID) -> np.ndarray:
        """Greedy decoding with per-layer KV caches; returns new ids only."""
        cfg = self.config
        prompt_ids = np.asarray(prompt_ids, dtype=np.int64)
        if len(prompt_ids) + max_new_tokens > cfg.max_len:
            raise ContextOverflowError(len(prompt_ids) + max_new_tokens, cfg.max_len)
        caches = [{"k": None, "v": None} for _ in self.blocks]

        def run(ids: np.ndarray, pos0: int) -> np.ndarray:
            x = self.tok_emb.weight.data[ids] + self.pos_emb.data[pos0 : pos0 + len(ids)]
            for block, cache in zip(self.blocks, caches):
                x = self._np_block(block, x, pos0, cache)
            hidden = self.ln_f.apply_np(x[-1:])
            return _apply_linear_np(self.head, hidden)[0]

        logits = run(prompt_ids, 0)
        out: list[int] = []
        pos = len(prompt_ids)
        for _ in range(max_new_tokens):
            nxt = int(np.argmax(logits))
            if stop_id is not None and nxt == stop_id:
                break
            out.append(nxt)
            logits = run(np.array([nxt], dtype=np.int64), pos)
            pos += 1
        return np.array(out, dtype=np.int64)
