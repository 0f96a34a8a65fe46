"""Experiment orchestration: registry, sweep runner, score aggregation.

One run takes a corpus (file or synthetic), a list of registered model
ids and a list of window sizes k, fits every model at every k on the
chronological train/val split, scores the test windows, and writes
machine- and human-readable tables. Reruns with the same config and
seed are byte-identical (judge metrics excluded: their raw responses
are cached to disk so scores can be re-derived without re-querying).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    AdapterConfig,
    ForecastModel,
    InputCopy,
    NLinear,
    NLinearText,
    PatchTST,
    PromptLMForecaster,
)
from .corpus import (
    AlignedCorpus,
    SplitSpec,
    SynthSpec,
    WindowPair,
    chronological_split,
    filter_missing,
    generate_synthetic,
    get_schema,
    load_corpus,
    make_windows,
)
from .embed import TextEmbedder, make_embedder
from .hybrid import HybridForecaster
from .lmclient import LMClient
from .metrics import (
    JudgeParseError,
    cosine_similarity,
    gpt_f1,
    gpt_semantic_score,
    meteor,
    rmse,
    rouge_l,
    rouge_n,
)
from .prompts import MODES, VARIANTS, PromptSpec
from .tinylm import TinyCausalLM, TinyLMConfig

__all__ = [
    "ExperimentConfig",
    "CellResult",
    "RunResult",
    "registry_ids",
    "make_model",
    "run_experiment",
    "pooled_rmse",
]

TIME_METRICS = ("rmse",)
TEXT_METRICS = ("cosine", "meteor", "rouge1", "rouge2", "rougeL")
JUDGE_METRICS = ("gpt_score", "gpt_f1")

# higher is better for every text metric; rmse is lower-better
LOWER_BETTER = {"rmse"}


@dataclass
class ExperimentConfig:
    models: list[str]
    ks: list[int] = field(default_factory=lambda: [1, 2, 3])
    dataset_path: str | None = None
    synth: SynthSpec | None = None
    schema: str = "weather"
    seed: int = 0
    metrics: list[str] = field(default_factory=lambda: list(TIME_METRICS + TEXT_METRICS))
    split: SplitSpec = field(default_factory=SplitSpec)
    max_eval_windows: int | None = 64
    embed_mode: str = "stub"
    embed_dim: int = 64
    out_dir: str | None = None
    model_params: dict[str, dict] = field(default_factory=dict)
    judge: LMClient | None = None
    max_missing_fraction: float = 0.05

    def __post_init__(self):
        if not self.models:
            raise ValueError("model list is empty")
        for mid in self.models:
            parse_model_id(mid)  # validates
        if any(k < 1 for k in self.ks):
            raise ValueError("window sizes must be positive")
        bad = [m for m in self.metrics if m not in TIME_METRICS + TEXT_METRICS + JUDGE_METRICS]
        if bad:
            raise ValueError(f"unknown metrics: {bad}")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        kwargs = dict(raw)
        if "synth" in kwargs and kwargs["synth"] is not None:
            synth = dict(kwargs["synth"])
            synth_seed = synth.pop("seed", None)
            kwargs["synth"] = SynthSpec(**synth)
            if synth_seed is not None:
                kwargs.setdefault("seed", synth_seed)
        if "split" in kwargs and kwargs["split"] is not None:
            tr, va, te = kwargs["split"]
            kwargs["split"] = SplitSpec(tr, va, te)
        kwargs.pop("judge", None)  # judge clients are constructed by the caller
        return cls(**kwargs)


def parse_model_id(model_id: str) -> tuple[str, str | None]:
    """Split `variant:mode` ids; plain ids return (id, None)."""
    base, _, mode = model_id.partition(":")
    if base in VARIANTS:
        mode = mode or "zero-shot"
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r} for {base!r}; choose from {MODES}")
        return base, mode
    if mode:
        raise ValueError(f"model {base!r} takes no mode suffix")
    if base not in ("input_copy", "nlinear", "nlinear_text", "patchtst", "hybrid"):
        raise ValueError(f"unknown model id {base!r}")
    return base, None


def registry_ids() -> list[str]:
    ids = ["input_copy", "nlinear", "nlinear_text", "patchtst", "hybrid"]
    for variant in VARIANTS:
        for mode in MODES:
            ids.append(f"{variant}:{mode}")
    return ids


def _model_seed(base_seed: int, model_id: str, k: int) -> int:
    return (base_seed * 1000003 + zlib.crc32(f"{model_id}|{k}".encode())) % (2**31)


def make_model(
    model_id: str,
    k: int,
    corpus: AlignedCorpus,
    embedder: TextEmbedder,
    seed: int,
    params: dict | None = None,
    schema: str = "weather",
) -> ForecastModel:
    """Instantiate a registered model for one (model, k) cell."""
    base, mode = parse_model_id(model_id)
    params = dict(params or {})
    ti = corpus.target_index
    if base == "input_copy":
        return InputCopy(ti)
    if base == "nlinear":
        return NLinear(k, ti, **params)
    if base == "nlinear_text":
        return NLinearText(k, ti, embedder, **params)
    if base == "patchtst":
        return PatchTST(k, ti, seed=seed, **params)
    if base == "hybrid":
        return HybridForecaster(k, ti, channels=len(corpus.channel_names),
                                embedder=embedder, seed=seed, **params)
    # prompt-based LM variants on the trainable tiny backend
    spec = PromptSpec(schema=schema, k=k, variant=base, mode=mode)
    lm_params = params.pop("lm", {})
    adapter = AdapterConfig(**params.pop("adapter", {}), seed=seed) if mode == "fine-tuned" else None
    backend = TinyCausalLM(TinyLMConfig(seed=seed, **lm_params))
    return PromptLMForecaster(spec, ti, backend=backend, adapter=adapter, seed=seed, **params)


@dataclass
class CellResult:
    """Scores for one (model, k): metric -> value, plus bookkeeping."""

    model_id: str
    k: int
    scores: dict[str, float] = field(default_factory=dict)
    parse_failures: int = 0
    judge_failures: dict[str, int] = field(default_factory=dict)
    error: str | None = None
    forecasts: list[dict] = field(default_factory=list)


@dataclass
class RunResult:
    config_digest: str
    dataset_id: str
    cells: list[CellResult]
    model_order: list[str]
    ks: list[int]
    metrics: list[str]

    def cell(self, model_id: str, k: int) -> CellResult | None:
        for c in self.cells:
            if c.model_id == model_id and c.k == k:
                return c
        return None

    def table(self, metric: str) -> dict[str, dict[int, float | None]]:
        out: dict[str, dict[int, float | None]] = {}
        for mid in self.model_order:
            out[mid] = {}
            for k in self.ks:
                c = self.cell(mid, k)
                out[mid][k] = None if c is None or c.error else c.scores.get(metric)
        return out


def pooled_rmse(pairs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """RMSE over all (window, day) prediction/truth pairs jointly."""
    preds = np.concatenate([np.asarray(p, dtype=np.float64) for p, _ in pairs])
    truth = np.concatenate([np.asarray(t, dtype=np.float64) for _, t in pairs])
    return rmse(preds, truth)


def _select_eval(test_windows: list[WindowPair], cap: int | None) -> list[WindowPair]:
    if cap is None or len(test_windows) <= cap:
        return test_windows
    idx = np.unique(np.linspace(0, len(test_windows) - 1, cap).round().astype(int))
    return [test_windows[i] for i in idx]


def _text_metric(name: str, ref: str, cand: str, embedder: TextEmbedder) -> float:
    if name == "cosine":
        return cosine_similarity(ref, cand, embedder)
    if name == "meteor":
        return meteor(ref, cand)
    if name == "rouge1":
        return rouge_n(ref, cand, 1).f1
    if name == "rouge2":
        return rouge_n(ref, cand, 2).f1
    if name == "rougeL":
        return rouge_l(ref, cand).f1
    raise ValueError(f"unknown text metric {name!r}")


class _JudgeCache:
    """JSONL-backed raw-response store keyed by (metric, model, k, origin, day)."""

    def __init__(self, path: Path | None):
        self.path = path
        self._store: dict[str, str] = {}
        if path is not None and path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                row = json.loads(line)
                self._store[row["key"]] = row["response"]

    def get_or_query(self, key: str, query) -> str:
        if key in self._store:
            return self._store[key]
        response = query()
        self._store[key] = response
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "response": response}) + "\n")
        return response


def _score_cell(
    cell: CellResult,
    eval_windows: list[WindowPair],
    forecasts,
    corpus: AlignedCorpus,
    config: ExperimentConfig,
    embedder: TextEmbedder,
    judge_cache: _JudgeCache,
) -> None:
    ti = corpus.target_index
    has_time = all(f.time_values is not None for f in forecasts)
    has_text = all(f.texts is not None for f in forecasts)
    cell.parse_failures = sum(1 for f in forecasts if f.parse_failed)
    if "rmse" in config.metrics and has_time:
        pairs = [
            (f.time_values, np.array([r.values[ti] for r in w.target_records]))
            for f, w in zip(forecasts, eval_windows)
        ]
        cell.scores["rmse"] = pooled_rmse(pairs)
    if has_text:
        refs = [[r.text for r in w.target_records] for w in eval_windows]
        for name in config.metrics:
            if name in TEXT_METRICS:
                per_window = [
                    float(np.mean([_text_metric(name, ref, cand, embedder)
                                   for ref, cand in zip(w_refs, f.texts)]))
                    for w_refs, f in zip(refs, forecasts)
                ]
                cell.scores[name] = float(np.mean(per_window))
        if config.judge is not None:
            for name in config.metrics:
                if name not in JUDGE_METRICS:
                    continue
                values: list[float] = []
                failures = 0
                for w_refs, f, w in zip(refs, forecasts, eval_windows):
                    day_vals = []
                    for day, (ref, cand) in enumerate(zip(w_refs, f.texts)):
                        key = f"{name}|{cell.model_id}|{cell.k}|{w.origin_index}|{day}"
                        try:
                            if name == "gpt_score":
                                resp = judge_cache.get_or_query(
                                    key, lambda: config.judge.complete(
                                        _judge_prompt_score(ref, cand)))
                                day_vals.append(_parse_score(resp))
                            else:
                                resp = judge_cache.get_or_query(
                                    key, lambda: config.judge.complete(
                                        _judge_prompt_f1(ref, cand)))
                                day_vals.append(_parse_f1(resp))
                        except JudgeParseError:
                            failures += 1
                    if day_vals:
                        values.append(float(np.mean(day_vals)))
                if values:
                    cell.scores[name] = float(np.mean(values))
                cell.judge_failures[name] = failures


def _judge_prompt_score(ref: str, cand: str) -> str:
    from .metrics import semantic_judge_prompt

    return semantic_judge_prompt(ref, cand)


def _judge_prompt_f1(ref: str, cand: str) -> str:
    from .metrics import factcount_judge_prompt

    return factcount_judge_prompt(ref, cand)


def _parse_score(completion: str) -> float:
    import re

    for token in re.findall(r"\d+", completion):
        value = int(token)
        if 1 <= value <= 10:
            return float(value)
    raise JudgeParseError("no integer in [1,10]", completion)


def _parse_f1(completion: str) -> float:
    from .metrics import parse_fact_counts

    counts = parse_fact_counts(completion)
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def _load_or_synth(config: ExperimentConfig) -> tuple[AlignedCorpus, str]:
    if (config.dataset_path is None) == (config.synth is None):
        raise ValueError("config needs exactly one of dataset_path or synth")
    if config.dataset_path is not None:
        corpus = load_corpus(config.dataset_path, config.schema)
        corpus = filter_missing(corpus, config.max_missing_fraction)
        return corpus, Path(config.dataset_path).name
    corpus = generate_synthetic(config.synth, config.seed)
    return corpus, f"synth-{config.synth.leak}-{config.synth.length}"


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Fit and score every (model, k) cell; write artifacts if out_dir set.

    A model failure marks its cell with the error and the run continues.
    """
    corpus, dataset_id = _load_or_synth(config)
    embedder = make_embedder(config.embed_mode, dim=config.embed_dim, seed=config.seed)
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    judge_cache = _JudgeCache(out_dir / "judge_cache.jsonl" if out_dir else None)

    cells: list[CellResult] = []
    for k in config.ks:
        windows = make_windows(corpus, k)
        train, val, test = chronological_split(windows, config.split)
        eval_windows = _select_eval(test, config.max_eval_windows)
        for model_id in config.models:
            cell = CellResult(model_id=model_id, k=k)
            cells.append(cell)
            seed = _model_seed(config.seed, model_id, k)
            try:
                model = make_model(model_id, k, corpus, embedder, seed,
                                   params=config.model_params.get(model_id),
                                   schema=config.schema)
                model.fit(train, val)
                forecasts = [model.predict(list(w.input_records)) for w in eval_windows]
            except Exception as exc:  # cell-level isolation, run continues
                cell.error = f"{type(exc).__name__}: {exc}"
                continue
            _score_cell(cell, eval_windows, forecasts, corpus, config, embedder, judge_cache)
            cell.forecasts = [
                {
                    "origin_index": w.origin_index,
                    "dates": [r.date.isoformat() for r in w.target_records],
                    "values": None if f.time_values is None else [float(v) for v in f.time_values],
                    "texts": f.texts,
                }
                for w, f in zip(eval_windows, forecasts)
            ]

    digest = f"{dataset_id}|seed={config.seed}|models={','.join(config.models)}"
    result = RunResult(config_digest=digest, dataset_id=dataset_id, cells=cells,
                       model_order=list(config.models), ks=list(config.ks),
                       metrics=list(config.metrics))
    if out_dir is not None:
        from .reporting import emit_tables, write_run_json

        write_run_json(result, corpus, out_dir)
        emit_tables(result, out_dir)
    return result
