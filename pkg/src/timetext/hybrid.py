"""Two-stage fused text+time forecaster.

Stage 1 projects per-step text embeddings next to the standardized
numeric channels and fuses them with a multi-head MLP, pretrained to
predict the future target values from the flattened per-step hidden
states. Stage 2 inserts those hidden states into a causal LM token
stream — one projected pseudo-token ahead of each day's text tokens,
plus one learned query pseudo-token ahead of each future day's block —
and trains everything end to end against a weighted sum of time MSE and
text cross-entropy. Decoding fills the future text blocks greedily and
reads the future values off the query positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, concatenate, cross_entropy, stack
from .corpus import TimeTextRecord, WindowPair
from .embed import TextEmbedder
from .nn import Adam, Linear, MLP, Module
from .tinylm import ByteTokenizer, ContextOverflowError, TinyCausalLM, TinyLMConfig

__all__ = [
    "HybridConfig",
    "Standardizer",
    "Stage1Fuser",
    "Stage2Model",
    "TrainState",
    "TrainingDiverged",
    "stage1_forward",
    "stage1_pretrain",
    "build_stage2_sequence",
    "stage2_forward",
    "joint_loss",
    "train_end_to_end",
    "hybrid_predict",
    "HybridForecaster",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = "ttc-hybrid-1"


class TrainingDiverged(RuntimeError):
    """Loss went non-finite or ran away; carries the last good state."""

    def __init__(self, message: str, checkpoint: dict | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class HybridConfig:
    """Dimensions and weights for the fused forecaster.

    `input_steps` is the window size k; `output_count` defaults to k
    (univariate k-step-ahead). `hidden_dim` is the fusion width the text
    embedding is projected to before concatenation with the channels.
    """

    input_steps: int
    channels: int
    tokens_per_step: int = 24
    embed_dim: int = 64
    hidden_dim: int = 64
    output_count: int | None = None
    vocab_size: int = 256
    lambda_time: float = 1.0
    lambda_text: float = 1.0
    embed_mode: str = "stub"
    lm_backend: str = "tiny"
    fusion_heads: int = 4
    reuse_stage1_head: bool = False
    freeze_lm: bool = False
    # tiny LM backend dimensions
    lm_dim: int = 64
    lm_layers: int = 2
    lm_heads: int = 4
    lm_ffn_dim: int = 256
    # optimization
    stage1_lr: float = 1e-2
    stage1_epochs: int = 200
    stage1_patience: int = 10
    stage2_lr: float = 3e-3
    stage2_epochs: int = 150
    stage2_patience: int = 15
    batch_size: int = 32
    seed: int = 0

    @property
    def k(self) -> int:
        return self.input_steps

    @property
    def outputs(self) -> int:
        return self.output_count if self.output_count is not None else self.input_steps

    @property
    def sequence_length(self) -> int:
        return (self.input_steps + self.outputs) * (1 + self.tokens_per_step)


@dataclass
class TrainState:
    """One logged optimization step; total is always the weighted sum."""

    step: int
    epoch: int
    mse: float
    ce: float
    total: float
    lr: float
    seed: int


@dataclass
class Standardizer:
    """Per-channel affine normalization fitted on training inputs."""

    mean: np.ndarray
    std: np.ndarray
    target_index: int

    @classmethod
    def fit(cls, windows: list[WindowPair], target_index: int) -> "Standardizer":
        values = np.array([r.values for w in windows for r in w.input_records], dtype=np.float64)
        mean = values.mean(axis=0)
        std = np.maximum(values.std(axis=0), 1e-8)
        return cls(mean=mean, std=std, target_index=target_index)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def apply_target(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean[self.target_index]) / self.std[self.target_index]

    def invert_target(self, y: np.ndarray) -> np.ndarray:
        return y * self.std[self.target_index] + self.mean[self.target_index]


class Stage1Fuser(Module):
    """Per-step fusion of channels and projected text, plus a time head.

    Each step's [channels ; projected text] vector runs through several
    parallel two-layer MLPs whose outputs are averaged; no information
    moves between steps before the flattened time head.
    """

    def __init__(self, config: HybridConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        h = config.hidden_dim
        self.text_proj = Linear(config.embed_dim, h, rng)
        self.heads = [MLP(config.channels + h, h, h, rng) for _ in range(config.fusion_heads)]
        self.time_head = Linear(config.input_steps * h, config.outputs, rng)
        self.standardizer: Standardizer | None = None

    def forward(self, time_block: Tensor, text_embeds: Tensor) -> tuple[Tensor, Tensor]:
        """(B, I, C) and (B, I, E) -> hidden (B, I, H), time_pred (B, O)."""
        fused_in = concatenate([time_block, self.text_proj(text_embeds)], axis=-1)
        hidden = self.heads[0](fused_in)
        for head in self.heads[1:]:
            hidden = hidden + head(fused_in)
        hidden = hidden * (1.0 / len(self.heads))
        B = hidden.shape[0]
        time_pred = self.time_head(hidden.reshape(B, -1))
        return hidden, time_pred


def _check_shape(name: str, arr: np.ndarray, expected: tuple[int, ...]) -> None:
    if arr.shape != expected:
        for axis, (got, want) in enumerate(zip(arr.shape, expected)):
            if got != want:
                raise ValueError(f"{name}: axis {axis} has size {got}, expected {want}")
        raise ValueError(f"{name}: shape {arr.shape}, expected {expected}")


def stage1_forward(time_block: np.ndarray, text_embeds: np.ndarray,
                   fuser: Stage1Fuser) -> tuple[np.ndarray, np.ndarray]:
    """Single-window fusion pass on plain arrays (no gradients)."""
    cfg = fuser.config
    time_block = np.asarray(time_block, dtype=np.float64)
    text_embeds = np.asarray(text_embeds, dtype=np.float64)
    _check_shape("time_block", time_block, (cfg.input_steps, cfg.channels))
    _check_shape("text_embeds", text_embeds, (cfg.input_steps, cfg.embed_dim))
    if not (np.isfinite(time_block).all() and np.isfinite(text_embeds).all()):
        raise ValueError("stage-1 inputs must be finite")
    hidden, pred = fuser.forward(Tensor(time_block[None]), Tensor(text_embeds[None]))
    return hidden.data[0], pred.data[0]


def _step_text_features(embedder: TextEmbedder, text: str, config: HybridConfig) -> np.ndarray:
    if config.embed_mode == "token":
        _, matrix, mask = embedder.tokenize(text, config.tokens_per_step)
        if not mask.any():
            return embedder.sentinel()
        return matrix[mask].mean(axis=0)
    return embedder.embed_sentence(text)


def _window_stage1_arrays(windows, embedder, config, st, cache):
    xs, embeds, ys = [], [], []
    for w in windows:
        xs.append(st.apply(np.array([r.values for r in w.input_records])))
        embeds.append(np.stack([
            cache.setdefault(r.text, _step_text_features(embedder, r.text, config))
            for r in w.input_records
        ]))
        ys.append(st.apply_target(np.array([r.values[st.target_index] for r in w.target_records])))
    return np.array(xs), np.array(embeds), np.array(ys)


def stage1_pretrain(
    train_windows: list[WindowPair],
    val_windows: list[WindowPair],
    config: HybridConfig,
    embedder: TextEmbedder,
    target_index: int,
) -> Stage1Fuser:
    """Fit the fusion stage on standardized-target MSE with early stopping."""
    st = Standardizer.fit(train_windows, target_index)
    fuser = Stage1Fuser(config)
    fuser.standardizer = st
    cache: dict[str, np.ndarray] = {}
    x, emb, y = _window_stage1_arrays(train_windows, embedder, config, st, cache)
    if val_windows:
        xv, embv, yv = _window_stage1_arrays(val_windows, embedder, config, st, cache)
    rng = np.random.default_rng(config.seed)
    opt = Adam(fuser.parameters(), lr=config.stage1_lr)
    best = (np.inf, fuser.state_dict())
    bad = 0
    history: list[TrainState] = []
    step = 0
    for epoch in range(config.stage1_epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(order), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            _, pred = fuser.forward(Tensor(x[sel]), Tensor(emb[sel]))
            loss = ((pred - Tensor(y[sel])) ** 2.0).mean()
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"stage-1 loss non-finite at epoch {epoch}", checkpoint=best[1])
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            history.append(TrainState(step=step, epoch=epoch, mse=loss.item(), ce=0.0,
                                      total=loss.item(), lr=config.stage1_lr, seed=config.seed))
        if val_windows:
            _, vp = fuser.forward(Tensor(xv), Tensor(embv))
            val = float(((vp.data - yv) ** 2).mean())
            if val < best[0] - 1e-12:
                best = (val, fuser.state_dict())
                bad = 0
            else:
                bad += 1
                if bad >= config.stage1_patience:
                    break
    if val_windows and np.isfinite(best[0]):
        fuser.load_state_dict(best[1])
    fuser.history = history
    return fuser


# --------------------------------------------------------------------------
# Stage 2


class Stage2Model(Module):
    """LM wrapper with the insertion adapter, future queries and time head."""

    def __init__(self, config: HybridConfig, fuser: Stage1Fuser, lm: TinyCausalLM):
        self.config = config
        self.stage1 = fuser
        self.lm = lm
        rng = np.random.default_rng(config.seed + 1)
        self.adapter = Linear(config.hidden_dim, config.lm_dim, rng)
        self.queries = Tensor(rng.normal(0.0, 0.1, size=(config.outputs, config.hidden_dim)),
                              requires_grad=True)
        self.time_head = Linear(config.lm_dim, 1, rng)
        self.tokenizer = ByteTokenizer()
        self.trained = False
        self.history: list[TrainState] = []

    @property
    def standardizer(self) -> Standardizer:
        return self.stage1.standardizer


@dataclass
class SequenceArtifacts:
    """Everything stage-2 forward needs for one batch of windows."""

    embeddings: Tensor          # (B, L, lm_dim)
    attend_ok: np.ndarray       # (B, L) keys that may be attended
    text_labels: np.ndarray     # (B, O, N), -1 = ignore
    readout_positions: np.ndarray  # (O,) query-token indices
    predictor_positions: np.ndarray  # (O, N) logit rows aligned with labels
    stage1_time_std: Tensor | None = None  # (B, O) fusion-head prediction, standardized


def _future_labels(token_ids: np.ndarray) -> np.ndarray:
    """Label the real tokens plus one terminating pad; ignore the rest."""
    labels = np.full_like(token_ids, -1)
    for j in range(token_ids.shape[0]):
        row = token_ids[j]
        n_real = int((row != 0).sum())  # head padding never occurs: encode keeps the head
        labels[j, :n_real] = row[:n_real]
        if n_real < row.shape[0]:
            labels[j, n_real] = 0
    return labels


def _block_positions(config: HybridConfig) -> tuple[np.ndarray, np.ndarray]:
    width = 1 + config.tokens_per_step
    readout = (config.input_steps + np.arange(config.outputs)) * width
    predictor = readout[:, None] + np.arange(config.tokens_per_step)[None, :]
    return readout, predictor


def _assemble(model: Stage2Model, time_block: np.ndarray, text_embeds: np.ndarray,
              input_ids: np.ndarray, future_ids: np.ndarray) -> SequenceArtifacts:
    """Build the batched embedding sequence with teacher-forced future text.

    time_block (B,I,C) standardized; text_embeds (B,I,E);
    input_ids (B,I,N); future_ids (B,O,N) ground-truth future text.
    """
    cfg = model.config
    B, I, N = input_ids.shape
    O = cfg.outputs
    width = 1 + N
    L = cfg.sequence_length
    if L > model.lm.config.max_len:
        raise ContextOverflowError(L, model.lm.config.max_len)
    hidden, stage1_time = model.stage1.forward(Tensor(time_block), Tensor(text_embeds))
    inserted = model.adapter(hidden)                      # (B, I, lm_dim)
    query_h = model.adapter(model.queries)                # (O, lm_dim), shared adapter
    tok_table = model.lm.tok_emb.weight

    parts = []
    attend = np.zeros((B, L), dtype=bool)
    for i in range(I):
        base = i * width
        parts.append(inserted[:, i : i + 1, :])
        parts.append(tok_table[input_ids[:, i, :]])
        attend[:, base] = True
        attend[:, base + 1 : base + width] = input_ids[:, i, :] != 0
    ones = np.ones((B, 1, 1))
    for j in range(O):
        base = (I + j) * width
        parts.append(Tensor(ones) * query_h[j : j + 1, :].reshape(1, 1, cfg.lm_dim))
        parts.append(tok_table[future_ids[:, j, :]])
        attend[:, base] = True
        attend[:, base + 1 : base + width] = future_ids[:, j, :] != 0
    embeddings = concatenate(parts, axis=1)
    labels = np.stack([_future_labels(future_ids[b]) for b in range(B)])
    readout, predictor = _block_positions(cfg)
    return SequenceArtifacts(embeddings=embeddings, attend_ok=attend, text_labels=labels,
                             readout_positions=readout, predictor_positions=predictor,
                             stage1_time_std=stage1_time)


def build_stage2_sequence(
    window: WindowPair,
    fuser: Stage1Fuser,
    embedder: TextEmbedder,
    model: Stage2Model,
) -> SequenceArtifacts:
    """Sequence artifacts for one window with teacher-forced future text."""
    cfg = model.config
    st = fuser.standardizer
    if st is None:
        raise ValueError("fuser has no fitted standardizer")
    tok = model.tokenizer
    time_block = st.apply(np.array([r.values for r in window.input_records]))
    text_embeds = np.stack([_step_text_features(embedder, r.text, cfg) for r in window.input_records])
    input_ids = np.stack([tok.encode(r.text, cfg.tokens_per_step) for r in window.input_records])
    future_ids = np.stack([tok.encode(r.text, cfg.tokens_per_step) for r in window.target_records])
    return _assemble(model, time_block[None], text_embeds[None], input_ids[None], future_ids[None])


def _forward_on_artifacts(model: Stage2Model, art: SequenceArtifacts) -> tuple[Tensor, Tensor]:
    """-> (text logits (B, O, N, V) aligned with labels, standardized time pred (B, O))."""
    hidden, logits = model.lm.forward_embeds(art.embeddings, art.attend_ok)
    B = art.attend_ok.shape[0]
    O, N = art.predictor_positions.shape
    text_logits = logits[:, art.predictor_positions.reshape(-1), :].reshape(B, O, N, -1)
    if model.config.reuse_stage1_head:
        return text_logits, art.stage1_time_std
    readout_hidden = hidden[:, art.readout_positions, :]
    time_std = model.time_head(readout_hidden).reshape(B, O)
    return text_logits, time_std


def stage2_forward(model: Stage2Model, art: SequenceArtifacts) -> tuple[np.ndarray, np.ndarray]:
    """Single-window no-grad forward.

    Returns text logits of shape (O, N, V), row (j, n) being the
    predictor of future-block j's token n, and the O de-standardized
    values read at the query positions.
    """
    text_logits, time_std = _forward_on_artifacts(model, art)
    if not np.isfinite(text_logits.data).all() or not np.isfinite(time_std.data).all():
        raise RuntimeError("non-finite activations in stage-2 forward")
    time_pred = model.standardizer.invert_target(time_std.data)
    if text_logits.data.shape[0] == 1:
        return text_logits.data[0], time_pred[0]
    return text_logits.data, time_pred


def joint_loss(text_logits, text_labels: np.ndarray, time_pred, time_truth: np.ndarray,
               lambda_time: float, lambda_text: float) -> Tensor:
    """lambda_time * MSE + lambda_text * mean CE over non-ignored labels."""
    time_pred = time_pred if isinstance(time_pred, Tensor) else Tensor(time_pred)
    text_logits = text_logits if isinstance(text_logits, Tensor) else Tensor(text_logits)
    mse = ((time_pred - Tensor(np.asarray(time_truth, dtype=np.float64))) ** 2.0).mean()
    ce = cross_entropy(text_logits, text_labels, ignore_index=-1)
    return mse * lambda_time + ce * lambda_text


def _collect_window_arrays(windows, embedder, config, st, tok, cache):
    time_blocks, text_embeds, input_ids, future_ids, targets = [], [], [], [], []
    for w in windows:
        time_blocks.append(st.apply(np.array([r.values for r in w.input_records])))
        text_embeds.append(np.stack([
            cache.setdefault(r.text, _step_text_features(embedder, r.text, config))
            for r in w.input_records
        ]))
        input_ids.append(np.stack([tok.encode(r.text, config.tokens_per_step) for r in w.input_records]))
        future_ids.append(np.stack([tok.encode(r.text, config.tokens_per_step) for r in w.target_records]))
        targets.append(st.apply_target(np.array([r.values[st.target_index] for r in w.target_records])))
    return (np.array(time_blocks), np.array(text_embeds), np.array(input_ids, dtype=np.int64),
            np.array(future_ids, dtype=np.int64), np.array(targets))


def train_end_to_end(
    train_windows: list[WindowPair],
    val_windows: list[WindowPair],
    config: HybridConfig,
    fuser: Stage1Fuser,
    embedder: TextEmbedder,
) -> Stage2Model:
    """Joint optimization of fusion, adapter, queries, time head and LM.

    Teacher forcing on the future text blocks; early stopping on the
    validation joint loss; aborts when the loss runs past ten times its
    initial value for three consecutive epochs.
    """
    lm = TinyCausalLM(TinyLMConfig(
        vocab_size=config.vocab_size, dim=config.lm_dim, layers=config.lm_layers,
        heads=config.lm_heads, ffn_dim=config.lm_ffn_dim,
        max_len=config.sequence_length, seed=config.seed + 2,
    ))
    if config.freeze_lm:
        lm.freeze()
    model = Stage2Model(config, fuser, lm)
    st = fuser.standardizer
    if st is None:
        raise ValueError("stage-1 fuser must be pretrained (or carry a standardizer)")
    tok = model.tokenizer
    cache: dict[str, np.ndarray] = {}
    tb, te, ii, fi, ty = _collect_window_arrays(train_windows, embedder, config, st, tok, cache)
    has_val = bool(val_windows)
    if has_val:
        vtb, vte, vii, vfi, vty = _collect_window_arrays(val_windows, embedder, config, st, tok, cache)

    params = model.parameters()
    opt = Adam(params, lr=config.stage2_lr)
    rng = np.random.default_rng(config.seed + 3)
    best = (np.inf, model.state_dict())
    bad = 0
    initial_loss: float | None = None
    runaway = 0
    step = 0
    for epoch in range(config.stage2_epochs):
        order = rng.permutation(len(train_windows))
        epoch_total = 0.0
        for lo in range(0, len(order), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            art = _assemble(model, tb[sel], te[sel], ii[sel], fi[sel])
            text_logits, time_std = _forward_on_artifacts(model, art)
            mse = ((time_std - Tensor(ty[sel])) ** 2.0).mean()
            ce = cross_entropy(text_logits, art.text_labels, ignore_index=-1)
            loss = mse * config.lambda_time + ce * config.lambda_text
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"stage-2 loss non-finite at epoch {epoch}", checkpoint=best[1])
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            epoch_total += loss.item() * len(sel)
            model.history.append(TrainState(
                step=step, epoch=epoch, mse=mse.item(), ce=ce.item(),
                total=config.lambda_time * mse.item() + config.lambda_text * ce.item(),
                lr=config.stage2_lr, seed=config.seed))
        epoch_loss = epoch_total / len(train_windows)
        if initial_loss is None:
            initial_loss = epoch_loss
        runaway = runaway + 1 if epoch_loss > 10 * initial_loss else 0
        if runaway >= 3:
            raise TrainingDiverged(
                f"stage-2 loss {epoch_loss:.4g} above 10x initial {initial_loss:.4g} "
                f"for 3 consecutive epochs", checkpoint=best[1])
        if has_val:
            val_art = _assemble(model, vtb, vte, vii, vfi)
            v_logits, v_time = _forward_on_artifacts(model, val_art)
            v_mse = float(((v_time.data - vty) ** 2).mean())
            v_ce = cross_entropy(v_logits.detach(), val_art.text_labels, ignore_index=-1).item()
            v_total = config.lambda_time * v_mse + config.lambda_text * v_ce
            if v_total < best[0] - 1e-12:
                best = (v_total, model.state_dict())
                bad = 0
            else:
                bad += 1
                if bad >= config.stage2_patience:
                    break
    if has_val and np.isfinite(best[0]):
        model.load_state_dict(best[1])
    model.trained = True
    return model


def hybrid_predict(
    input_records: list[TimeTextRecord],
    model: Stage2Model,
    embedder: TextEmbedder,
) -> tuple[np.ndarray, list[str]]:
    """Greedy joint decode: k future values and k future texts.

    Future blocks are generated left to right; each query position
    yields one de-standardized value, then its text block fills
    token-by-token until the stop byte or the block width.
    """
    if not model.trained:
        raise RuntimeError("hybrid model is not trained")
    cfg = model.config
    st = model.standardizer
    tok = model.tokenizer
    I, N, O = cfg.input_steps, cfg.tokens_per_step, cfg.outputs
    width = 1 + N
    if len(input_records) != I:
        raise ValueError(f"expected {I} input records, got {len(input_records)}")

    time_block = st.apply(np.array([r.values for r in input_records]))[None]
    text_embeds = np.stack([_step_text_features(embedder, r.text, cfg) for r in input_records])[None]
    input_ids = np.stack([tok.encode(r.text, cfg.tokens_per_step) for r in input_records])[None]
    future_ids = np.zeros((1, O, N), dtype=np.int64)

    hidden, s1_time = model.stage1.forward(Tensor(time_block), Tensor(text_embeds))
    inserted = model.adapter(hidden).data[0]          # (I, lm_dim)
    query_h = model.adapter(model.queries).data        # (O, lm_dim)
    tok_table = model.lm.tok_emb.weight.data

    embeds = np.zeros((1, cfg.sequence_length, cfg.lm_dim))
    attend = np.zeros((1, cfg.sequence_length), dtype=bool)
    for i in range(I):
        base = i * width
        embeds[0, base] = inserted[i]
        embeds[0, base + 1 : base + width] = tok_table[input_ids[0, i]]
        attend[0, base] = True
        attend[0, base + 1 : base + width] = input_ids[0, i] != 0

    values_std = np.zeros(O)
    texts: list[str] = []

    def run() -> tuple[np.ndarray, np.ndarray]:
        h, lg = model.lm.forward_embeds(Tensor(embeds), attend)
        return h.data[0], lg.data[0]

    for j in range(O):
        base = (I + j) * width
        embeds[0, base] = query_h[j]
        attend[0, base] = True
        h, logits = run()
        values_std[j] = model.time_head(Tensor(h[base][None])).data[0, 0]
        block: list[int] = []
        for n in range(N):
            pos = base + n  # logits at pos predict the token placed at pos+1
            nxt = int(np.argmax(logits[pos]))
            if nxt == tok.pad_id:
                break
            block.append(nxt)
            future_ids[0, j, n] = nxt
            embeds[0, pos + 1] = tok_table[nxt]
            attend[0, pos + 1] = True
            if n < N - 1:
                h, logits = run()
        texts.append(tok.decode(np.array(block + [tok.pad_id], dtype=np.int64)))
    if cfg.reuse_stage1_head:
        values_std = s1_time.data[0]
    values = st.invert_target(values_std)
    return values, texts


# --------------------------------------------------------------------------
# fit/predict wrapper for the experiment harness


class HybridForecaster:
    """ForecastModel-style facade: pretrain fusion, then joint training."""

    model_id = "hybrid"

    def __init__(self, k: int, target_index: int, channels: int, embedder: TextEmbedder,
                 seed: int = 0, pretrain: bool = True, **overrides):
        self.embedder = embedder
        self.target_index = target_index
        self.pretrain = pretrain
        self.config = HybridConfig(input_steps=k, channels=channels,
                                   embed_dim=embedder.dim, seed=seed, **overrides)
        self.model: Stage2Model | None = None

    def fit(self, train_windows, val_windows=None):
        val = val_windows or []
        if self.pretrain:
            fuser = stage1_pretrain(train_windows, val, self.config, self.embedder, self.target_index)
        else:
            fuser = Stage1Fuser(self.config)
            fuser.standardizer = Standardizer.fit(train_windows, self.target_index)
        self.model = train_end_to_end(train_windows, val, self.config, fuser, self.embedder)
        return self

    def predict(self, input_records):
        from .baselines import Forecast

        if self.model is None:
            raise RuntimeError("hybrid: predict before fit")
        values, texts = hybrid_predict(list(input_records), self.model, self.embedder)
        return Forecast(time_values=values, texts=texts, provenance=self.model_id)


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: Stage2Model, path) -> None:
    st = model.standardizer
    header = {
        "version": CHECKPOINT_VERSION,
        "config": {k: (v if not isinstance(v, tuple) else list(v))
                   for k, v in vars(model.config).items()},
        "target_index": st.target_index,
    }
    arrays = {f"param::{k}": v for k, v in model.state_dict().items()}
    arrays["std::mean"] = st.mean
    arrays["std::std"] = st.std
    np.savez(path, header=json.dumps(header), **arrays)


def load_checkpoint(path, embedder: TextEmbedder | None = None) -> Stage2Model:
    data = np.load(path, allow_pickle=False)
    header = json.loads(str(data["header"]))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    config = HybridConfig(**header["config"])
    fuser = Stage1Fuser(config)
    fuser.standardizer = Standardizer(mean=data["std::mean"], std=data["std::std"],
                                      target_index=int(header["target_index"]))
    lm = TinyCausalLM(TinyLMConfig(
        vocab_size=config.vocab_size, dim=config.lm_dim, layers=config.lm_layers,
        heads=config.lm_heads, ffn_dim=config.lm_ffn_dim,
        max_len=config.sequence_length, seed=config.seed + 2,
    ))
    model = Stage2Model(config, fuser, lm)
    model.load_state_dict({k.split("::", 1)[1]: data[k] for k in data.files if k.startswith("param::")})
    model.trained = True
    return model
