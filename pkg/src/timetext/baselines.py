"""Comparison forecasters behind one fit/predict interface.

Covers the naive copy baseline, last-value-normalized linear models with
and without sentence-embedding covariates, a small patch transformer,
and the four prompt-based LM variants (zero-shot, one-example
in-context, fine-tuned). Prompt models call either an `LMClient` or the
trainable tiny byte LM; fine-tuning updates low-rank adapters only.

Fitted numeric models serialize to `.npz` files with a versioned JSON
header (`save` / `load`).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .corpus import TimeTextRecord, WindowPair
from .embed import TextEmbedder
from .lmclient import DecodeParams, LMClient
from .nn import Adam, Linear, LoraLinear, Module, TransformerBlock
from .prompts import PromptSpec, build_prompt, parse_llm_forecast, render_response
from .tinylm import ByteTokenizer, TinyCausalLM
from .autodiff import cross_entropy

__all__ = [
    "Forecast",
    "ForecastModel",
    "NotFittedError",
    "InputCopy",
    "NLinear",
    "NLinearText",
    "PatchTST",
    "PromptLMForecaster",
    "AdapterConfig",
    "finetune_lm",
    "ConfigurationError",
]


class NotFittedError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


MODEL_FILE_VERSION = "ttc-model-1"


def _write_model_file(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = json.dumps({"version": MODEL_FILE_VERSION, "kind": kind, "meta": meta})
    np.savez(path, header=header, **arrays)


def _read_model_file(path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    data = np.load(path, allow_pickle=False)
    header = json.loads(str(data["header"]))
    if header.get("version") != MODEL_FILE_VERSION:
        raise ValueError(f"unsupported model file version {header.get('version')!r}")
    if header.get("kind") != kind:
        raise ValueError(f"model file holds {header.get('kind')!r}, expected {kind!r}")
    return header["meta"], {k: data[k] for k in data.files if k != "header"}


@dataclass
class Forecast:
    """Model output for one window: k future values and/or k future texts."""

    time_values: np.ndarray | None
    texts: list[str] | None
    provenance: str
    parse_failed: bool = False

    def __post_init__(self):
        if self.time_values is None and self.texts is None:
            raise ValueError("forecast must carry values or texts")
        if self.time_values is not None:
            self.time_values = np.asarray(self.time_values, dtype=np.float64)
            if not np.isfinite(self.time_values).all():
                raise ValueError("forecast values must be finite")


class ForecastModel:
    """fit on window pairs, then predict from a k-record input block."""

    model_id = "model"

    def fit(self, train_windows: list[WindowPair], val_windows: list[WindowPair] | None = None):
        return self

    def predict(self, input_records: list[TimeTextRecord]) -> Forecast:
        raise NotImplementedError


def _target_matrix(windows: list[WindowPair], target_index: int, which: str) -> np.ndarray:
    recs = [getattr(w, which) for w in windows]
    return np.array([[r.values[target_index] for r in block] for block in recs], dtype=np.float64)


class InputCopy(ForecastModel):
    """Copies the input block forward: the floor for both modalities."""

    model_id = "input_copy"

    def __init__(self, target_index: int):
        self.target_index = target_index

    def predict(self, input_records: list[TimeTextRecord]) -> Forecast:
        values = [r.values[self.target_index] for r in input_records]
        return Forecast(time_values=np.array(values), texts=[r.text for r in input_records],
                        provenance=self.model_id)


class NLinear(ForecastModel):
    """Linear map on last-value-normalized inputs.

    Prediction = W(x - x_last) + b + x_last, so adding a constant to the
    input shifts the prediction by exactly that constant. W and b are
    the ridge least-squares solution (tiny default ridge for numerical
    stability only).
    """

    model_id = "nlinear"

    def __init__(self, k: int, target_index: int, ridge: float = 1e-6):
        self.k = k
        self.target_index = target_index
        self.ridge = ridge
        self.coef: np.ndarray | None = None  # (k+1, k), last row is the intercept

    def _features(self, x_norm: np.ndarray) -> np.ndarray:
        return np.hstack([x_norm, np.ones((x_norm.shape[0], 1))])

    def fit(self, train_windows, val_windows=None):
        x = _target_matrix(train_windows, self.target_index, "input_records")
        y = _target_matrix(train_windows, self.target_index, "target_records")
        last = x[:, -1:]
        a = self._features(x - last)
        b = y - last
        gram = a.T @ a + self.ridge * np.eye(a.shape[1])
        gram[-1, -1] -= self.ridge  # leave the intercept unregularized
        self.coef = np.linalg.solve(gram, a.T @ b)
        return self

    def _predict_values(self, x: np.ndarray) -> np.ndarray:
        if self.coef is None:
            raise NotFittedError(f"{self.model_id}: predict before fit")
        last = x[-1]
        feats = self._features((x - last)[None, :])
        return (feats @ self.coef)[0] + last

    def predict(self, input_records) -> Forecast:
        x = np.array([r.values[self.target_index] for r in input_records])
        return Forecast(time_values=self._predict_values(x), texts=None, provenance=self.model_id)

    def save(self, path) -> None:
        if self.coef is None:
            raise NotFittedError("nlinear: save before fit")
        meta = {"k": self.k, "target_index": self.target_index, "ridge": self.ridge}
        _write_model_file(path, self.model_id, meta, {"coef": self.coef})

    @classmethod
    def load(cls, path) -> "NLinear":
        meta, arrays = _read_model_file(path, "nlinear")
        model = cls(meta["k"], meta["target_index"], ridge=meta["ridge"])
        model.coef = arrays["coef"]
        return model


class NLinearText(NLinear):
    """Last-value-normalized linear model with sentence-embedding covariates.

    Features are the normalized k input values followed by the k
    concatenated sentence embeddings; with a zero-dimensional embedder
    this is exactly `NLinear`.
    """

    model_id = "nlinear_text"

    def __init__(self, k: int, target_index: int, embedder: TextEmbedder, ridge: float = 3.0):
        super().__init__(k, target_index, ridge=ridge)
        self.embedder = embedder

    def _embed_block(self, records) -> np.ndarray:
        if self.embedder.dim == 0:
            return np.zeros((0,))
        return np.concatenate([self.embedder.embed_sentence(r.text) for r in records])

    def fit(self, train_windows, val_windows=None):
        x = _target_matrix(train_windows, self.target_index, "input_records")
        y = _target_matrix(train_windows, self.target_index, "target_records")
        emb = np.array([self._embed_block(w.input_records) for w in train_windows])
        if emb.size == 0:
            emb = emb.reshape(len(train_windows), 0)
        last = x[:, -1:]
        a = np.hstack([x - last, emb, np.ones((x.shape[0], 1))])
        b = y - last
        gram = a.T @ a + self.ridge * np.eye(a.shape[1])
        gram[-1, -1] -= self.ridge
        self.coef = np.linalg.solve(gram, a.T @ b)
        self._n_embed = emb.shape[1]
        return self

    def predict(self, input_records) -> Forecast:
        if self.coef is None:
            raise NotFittedError(f"{self.model_id}: predict before fit")
        emb = self._embed_block(input_records)
        if emb.shape[0] != self._n_embed:
            raise ValueError(f"embedding dim {emb.shape[0]} does not match fitted {self._n_embed}")
        x = np.array([r.values[self.target_index] for r in input_records])
        last = x[-1]
        feats = np.concatenate([x - last, emb, [1.0]])[None, :]
        values = (feats @ self.coef)[0] + last
        return Forecast(time_values=values, texts=None, provenance=self.model_id)

    def save(self, path) -> None:
        if self.coef is None:
            raise NotFittedError("nlinear_text: save before fit")
        meta = {"k": self.k, "target_index": self.target_index, "ridge": self.ridge,
                "n_embed": self._n_embed}
        _write_model_file(path, self.model_id, meta, {"coef": self.coef})

    @classmethod
    def load(cls, path, embedder: TextEmbedder) -> "NLinearText":
        meta, arrays = _read_model_file(path, "nlinear_text")
        model = cls(meta["k"], meta["target_index"], embedder, ridge=meta["ridge"])
        model.coef = arrays["coef"]
        model._n_embed = meta["n_embed"]
        return model


class PatchTST(ForecastModel):
    """Small patch transformer on the instance-normalized target series.

    The k input values are cut into patches of length `patch_len` with
    stride `stride` (single full-width patch when k < patch_len), each
    patch is linearly embedded, a bidirectional encoder mixes them, and
    a flattened linear head emits k values that are de-normalized with
    the per-window mean/std.
    """

    model_id = "patchtst"

    def __init__(self, k: int, target_index: int, patch_len: int = 4, stride: int = 2,
                 dim: int = 64, heads: int = 4, layers: int = 2, epochs: int = 150,
                 lr: float = 1e-3, batch_size: int = 64, patience: int = 10, seed: int = 0):
        self.k = k
        self.target_index = target_index
        if k < patch_len:
            patch_len, stride = k, k
        self.patch_len = patch_len
        self.stride = stride
        self.n_patches = (k - patch_len) // stride + 1
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.patience = patience
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.embed = Linear(patch_len, dim, rng)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(self.n_patches, dim)), requires_grad=True)
        self.blocks = [TransformerBlock(dim, heads, dim * 4, rng) for _ in range(layers)]
        self.head = Linear(self.n_patches * dim, k, rng)
        self._net = _PatchNet(self)
        self.fitted = False

    def _normalize(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mean = x.mean(axis=-1, keepdims=True)
        std = np.maximum(x.std(axis=-1, keepdims=True), 1e-8)
        return (x - mean) / std, mean, std

    def _patches(self, xn: np.ndarray) -> np.ndarray:
        idx = np.arange(self.patch_len)[None, :] + self.stride * np.arange(self.n_patches)[:, None]
        return xn[:, idx]  # (B, n_patches, patch_len)

    def _forward(self, xn: np.ndarray) -> Tensor:
        B = xn.shape[0]
        h = self.embed(Tensor(self._patches(xn))) + self.pos
        bias = np.zeros((B, 1, self.n_patches, self.n_patches))
        for block in self.blocks:
            h = block(h, bias)
        return self.head(h.reshape(B, -1))

    def fit(self, train_windows, val_windows=None):
        x = _target_matrix(train_windows, self.target_index, "input_records")
        y = _target_matrix(train_windows, self.target_index, "target_records")
        xn, mean, std = self._normalize(x)
        yn = (y - mean) / std
        xv = yv = None
        if val_windows:
            vx = _target_matrix(val_windows, self.target_index, "input_records")
            vy = _target_matrix(val_windows, self.target_index, "target_records")
            xv, vmean, vstd = self._normalize(vx)
            yv = (vy - vmean) / vstd
        rng = np.random.default_rng(self.seed)
        params = self._net.parameters()
        opt = Adam(params, lr=self.lr)
        best = (np.inf, self._net.state_dict())
        bad = 0
        n = xn.shape[0]
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, self.batch_size):
                sel = order[lo : lo + self.batch_size]
                pred = self._forward(xn[sel])
                loss = ((pred - Tensor(yn[sel])) ** 2.0).mean()
                if not np.isfinite(loss.data):
                    raise RuntimeError(f"patchtst: non-finite loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
            if xv is not None:
                val = float((((self._forward(xv).data - yv)) ** 2).mean())
                if val < best[0] - 1e-9:
                    best = (val, self._net.state_dict())
                    bad = 0
                else:
                    bad += 1
                    if bad >= self.patience:
                        break
        if xv is not None and np.isfinite(best[0]):
            self._net.load_state_dict(best[1])
        self.fitted = True
        return self

    def predict(self, input_records) -> Forecast:
        if not self.fitted:
            raise NotFittedError("patchtst: predict before fit")
        x = np.array([r.values[self.target_index] for r in input_records])[None, :]
        xn, mean, std = self._normalize(x)
        out = self._forward(xn).data * std + mean
        return Forecast(time_values=out[0], texts=None, provenance=self.model_id)

    def save(self, path) -> None:
        if not self.fitted:
            raise NotFittedError("patchtst: save before fit")
        meta = {"k": self.k, "target_index": self.target_index, "patch_len": self.patch_len,
                "stride": self.stride, "dim": self.embed.weight.data.shape[1],
                "heads": self.blocks[0].attn.heads, "layers": len(self.blocks), "seed": self.seed}
        _write_model_file(path, self.model_id, meta,
                          {f"param::{k}": v for k, v in self._net.state_dict().items()})

    @classmethod
    def load(cls, path) -> "PatchTST":
        meta, arrays = _read_model_file(path, "patchtst")
        model = cls(meta["k"], meta["target_index"], patch_len=meta["patch_len"],
                    stride=meta["stride"], dim=meta["dim"], heads=meta["heads"],
                    layers=meta["layers"], seed=meta["seed"])
        model._net.load_state_dict({k.split("::", 1)[1]: v for k, v in arrays.items()})
        model.fitted = True
        return model


class _PatchNet(Module):
    """Parameter container so PatchTST can reuse Module state utilities."""

    def __init__(self, owner: PatchTST):
        self.embed = owner.embed
        self.pos = owner.pos
        self.blocks = owner.blocks
        self.head = owner.head


# --------------------------------------------------------------------------
# Low-rank adapter fine-tuning


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 8
    alpha: float = 16.0
    lr: float = 3e-3
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    targets: tuple[str, ...] = ("attention", "ffn")


def _base_tensors(obj, prefix: str = "") -> dict[str, np.ndarray]:
    """All non-adapter parameter arrays, with adapter-wrapped layers mapped
    back to their plain names so pre/post fine-tune states are comparable."""
    out: dict[str, np.ndarray] = {}
    if isinstance(obj, LoraLinear):
        out[f"{prefix}weight"] = obj.base_weight.data
        if obj.base_bias is not None:
            out[f"{prefix}bias"] = obj.base_bias.data
        return out
    if isinstance(obj, Linear):
        out[f"{prefix}weight"] = obj.weight.data
        if obj.bias is not None:
            out[f"{prefix}bias"] = obj.bias.data
        return out
    if isinstance(obj, Tensor):
        out[prefix.rstrip(".")] = obj.data
        return out
    if isinstance(obj, Module):
        for name, value in vars(obj).items():
            if isinstance(value, (Module, Tensor)):
                out.update(_base_tensors(value, f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        out.update(_base_tensors(item, f"{prefix}{name}.{i}."))
    return out


def base_checksum(lm: Module) -> str:
    """Hash of all non-adapter weights; unchanged by adapter fine-tuning."""
    h = hashlib.blake2b(digest_size=16)
    tensors = _base_tensors(lm)
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name]).tobytes())
    return h.hexdigest()


def _pair_arrays(tok: ByteTokenizer, prompt: str, completion: str) -> tuple[np.ndarray, np.ndarray]:
    """ids and next-token labels for one prompt->completion pair.

    Labels cover the completion plus a terminating pad byte; prompt
    positions are ignored.
    """
    p = tok.encode(prompt)
    c = np.concatenate([tok.encode(completion), [tok.pad_id]])
    ids = np.concatenate([p, c])
    labels = np.full(len(ids), -1, dtype=np.int64)
    labels[len(p):] = c
    return ids, labels


def finetune_lm(backend: TinyCausalLM, pairs: list[tuple[str, str]],
                adapter: AdapterConfig = AdapterConfig()) -> TinyCausalLM:
    """Adapter fine-tuning of a causal LM on prompt->completion pairs.

    Only the low-rank adapter matrices train; everything else freezes
    and is checksum-verified unchanged. Rank 0 is a no-op that leaves
    the model's behavior exactly as before.
    """
    if not getattr(backend, "trainable", False):
        raise ConfigurationError("backend is frozen and offers no adapters to train")
    before = base_checksum(backend)
    backend.freeze()
    backend.add_lora(adapter.rank, adapter.alpha, seed=adapter.seed, targets=adapter.targets)
    params = backend.parameters()
    if adapter.rank == 0 or not pairs:
        return backend
    tok = ByteTokenizer()
    data = [_pair_arrays(tok, p, c) for p, c in pairs]
    for ids, _ in data:
        if len(ids) > backend.config.max_len:
            raise ConfigurationError(
                f"pair of {len(ids)} tokens exceeds model context {backend.config.max_len}")
    rng = np.random.default_rng(adapter.seed)
    opt = Adam(params, lr=adapter.lr)
    losses: list[float] = []
    for _ in range(adapter.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for lo in range(0, len(order), adapter.batch_size):
            batch = [data[i] for i in order[lo : lo + adapter.batch_size]]
            width = max(len(ids) for ids, _ in batch)
            ids = np.zeros((len(batch), width), dtype=np.int64)
            labels = np.full((len(batch), width), -1, dtype=np.int64)
            for row, (i_arr, l_arr) in enumerate(batch):
                ids[row, : len(i_arr)] = i_arr
                labels[row, : len(l_arr)] = l_arr
            attend = np.zeros_like(ids, dtype=bool)
            for row, (i_arr, _) in enumerate(batch):
                attend[row, : len(i_arr)] = True
            _, logits = backend.forward_ids(ids, attend)
            # logits at p predict the token at p+1
            loss = cross_entropy(logits[:, :-1, :], labels[:, 1:], ignore_index=-1)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
        losses.append(epoch_loss)
    backend.finetune_losses = losses
    after = base_checksum(backend)
    if after != before:
        raise RuntimeError("base weights changed during adapter fine-tuning")
    return backend


# --------------------------------------------------------------------------
# Prompt-based forecasters


class PromptLMForecaster(ForecastModel):
    """LM forecaster for one prompt variant and mode.

    Completions come from an `LMClient` or from greedy decoding of the
    trainable tiny byte LM. In-context mode samples one solved example
    from the training windows with the model seed; fine-tuned mode runs
    adapter training on prompt/response pairs built from them.
    """

    def __init__(self, spec: PromptSpec, target_index: int,
                 backend: TinyCausalLM | None = None, client: LMClient | None = None,
                 adapter: AdapterConfig | None = None, seed: int = 0,
                 max_train_pairs: int = 64):
        if (backend is None) == (client is None):
            raise ConfigurationError("provide exactly one of backend or client")
        self.spec = spec
        self.target_index = target_index
        self.backend = backend
        self.client = client
        self.adapter = adapter or AdapterConfig()
        self.seed = seed
        self.max_train_pairs = max_train_pairs
        self.example: WindowPair | None = None
        self.model_id = f"{spec.variant}:{spec.mode}"
        self._tok = ByteTokenizer()

    def fit(self, train_windows, val_windows=None):
        rng = np.random.default_rng(self.seed)
        if self.spec.mode == "in-context-1":
            if not train_windows:
                raise ConfigurationError("in-context mode needs a training window to sample from")
            self.example = train_windows[int(rng.integers(len(train_windows)))]
        elif self.spec.mode == "fine-tuned":
            if self.backend is None:
                raise ConfigurationError("fine-tuned mode needs the trainable backend")
            windows = list(train_windows)
            if len(windows) > self.max_train_pairs:
                keep = sorted(rng.choice(len(windows), size=self.max_train_pairs, replace=False))
                windows = [windows[i] for i in keep]
            pairs = [
                (
                    build_prompt(self.spec, list(w.input_records), self.target_index),
                    render_response(self.spec, list(w.target_records), self.target_index),
                )
                for w in windows
            ]
            finetune_lm(self.backend, pairs, self.adapter)
        return self

    def _complete(self, prompt: str, response_budget: int) -> str:
        if self.client is not None:
            return self.client.complete(prompt, DecodeParams())
        ids = self._tok.encode(prompt)
        max_new = min(response_budget, self.backend.config.max_len - len(ids) - 1)
        if max_new <= 0:
            return ""
        out = self.backend.generate(ids, max_new_tokens=max_new)
        return self._tok.decode(np.concatenate([out, [self._tok.pad_id]]))

    def predict(self, input_records) -> Forecast:
        prompt = build_prompt(self.spec, list(input_records), self.target_index, example=self.example)
        # size the decode budget off a response shaped like the input block
        budget = len(render_response(self.spec, list(input_records), self.target_index)) * 3 // 2 + 32
        completion = self._complete(prompt, budget)
        parsed = parse_llm_forecast(completion, self.spec, list(input_records), self.target_index)
        return Forecast(
            time_values=np.array(parsed.time_values) if parsed.time_values is not None else None,
            texts=parsed.texts,
            provenance=self.model_id,
            parse_failed=parsed.failed,
        )
