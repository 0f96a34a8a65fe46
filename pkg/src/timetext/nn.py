"""Small neural-net layer library on top of the autodiff core.

Modules hold named ``Tensor`` parameters and expose them via
``parameters()`` / ``state_dict()``; ``Adam`` updates them in place.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor, concatenate, gelu, log_softmax, stack


class Module:
    """Base class: parameter registration by attribute assignment."""

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                for sub, p in value._children():
                    yield f"{name}.{sub}", p
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, p in item._children():
                            yield f"{name}.{i}.{sub}", p
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._children())

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) ^ set(state)
        if missing:
            raise KeyError(f"state dict mismatch on keys: {sorted(missing)}")
        for k, p in params.items():
            p.data = np.asarray(state[k], dtype=np.float64).reshape(p.data.shape).copy()

    def checksum(self) -> str:
        """Hash of all parameter bytes, in name order."""
        h = hashlib.blake2b(digest_size=16)
        for name in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(self.named_parameters()[name].data.tobytes())
        return h.hexdigest()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        scale = 1.0 / np.sqrt(d_in)
        self.weight = Tensor(rng.uniform(-scale, scale, size=(d_in, d_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LoraLinear(Module):
    """Linear layer with a trainable low-rank delta over a frozen base.

    rank 0 degenerates to the frozen base layer exactly.
    """

    def __init__(self, base: Linear, rank: int, alpha: float, rng: np.random.Generator):
        d_in, d_out = base.weight.data.shape
        self.base_weight = Tensor(base.weight.data.copy())  # frozen
        self.base_bias = Tensor(base.bias.data.copy()) if base.bias is not None else None
        self.rank = int(rank)
        self.scale = float(alpha) / rank if rank > 0 else 0.0
        if rank > 0:
            self.lora_a = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, rank)), requires_grad=True)
            self.lora_b = Tensor(np.zeros((rank, d_out)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.base_weight
        if self.rank > 0:
            out = out + ((x @ self.lora_a) @ self.lora_b) * self.scale
        if self.base_bias is not None:
            out = out + self.base_bias
        return out

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        # mirror of __call__ for the no-grad inference path
        out = x @ self.base_weight.data
        if self.rank > 0:
            out = out + ((x @ self.lora_a.data) @ self.lora_b.data) * self.scale
        if self.base_bias is not None:
            out = out + self.base_bias.data
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered * ((var + self.eps) ** -0.5)
        return normed * self.gain + self.shift

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / np.sqrt(var + self.eps) * self.gain.data + self.shift.data


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(0.0, 0.02, size=(num, dim)), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return self.weight[np.asarray(ids, dtype=np.intp)]


class MLP(Module):
    """Two affine layers with a smooth rectifier between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


MASK_BIAS = -1e9  # additive attention bias for disallowed positions (finite, FD-safe)


class MultiheadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _split(self, x: Tensor, B: int, L: int) -> Tensor:
        return x.reshape(B, L, self.heads, self.head_dim).swapaxes(1, 2)

    def __call__(self, x: Tensor, attn_bias: np.ndarray) -> Tensor:
        """x: (B, L, dim); attn_bias: (B, 1, L, L) additive mask."""
        B, L, _ = x.shape
        q = self._split(self.wq(x), B, L)
        k = self._split(self.wk(x), B, L)
        v = self._split(self.wv(x), B, L)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        scores = scores + Tensor(attn_bias)
        attn = log_softmax(scores, axis=-1).exp()
        ctx = (attn @ v).swapaxes(1, 2).reshape(B, L, self.dim)
        return self.wo(ctx)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)); x + mlp(ln(x))."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, ffn_dim, dim, rng)

    def __call__(self, x: Tensor, attn_bias: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), attn_bias)
        x = x + self.mlp(self.ln2(x))
        return x


def causal_attn_bias(attend_ok: np.ndarray) -> np.ndarray:
    """(B, L) keep-mask -> (B, 1, L, L) additive bias, causal + key padding.

    Position p may attend to p' <= p with attend_ok[p'] true. Diagonal is
    always allowed so rows of padded queries still normalize.
    """
    B, L = attend_ok.shape
    allowed = np.tril(np.ones((L, L), dtype=bool))[None, :, :] & attend_ok[:, None, :].astype(bool)
    allowed = allowed | np.eye(L, dtype=bool)[None, :, :]
    bias = np.where(allowed, 0.0, MASK_BIAS)
    return bias[:, None, :, :]


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


__all__ = [
    "Module",
    "Linear",
    "LoraLinear",
    "LayerNorm",
    "Embedding",
    "MLP",
    "MultiheadSelfAttention",
    "TransformerBlock",
    "causal_attn_bias",
    "Adam",
    "MASK_BIAS",
    "gelu",
    "stack",
    "concatenate",
]
