"""Forecast evaluation metrics.

Numeric forecasts are scored with RMSE. Text forecasts are scored with
embedding cosine similarity, n-gram and LCS overlap (ROUGE-1/2/L), a
unigram-alignment score with a fragmentation penalty (METEOR), and two
LM-judged protocols: a 1-10 semantic score and a fact-level TP/FP/FN
count turned into precision/recall/F1.

Text metrics share one fixed tokenization (lowercase, split on
non-alphanumerics) so scores are reproducible. Judge completions are
parsed, never guessed: unparseable responses raise `JudgeParseError`
and callers record them instead of averaging them in.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .embed import TextEmbedder, word_tokens
from .lmclient import LMClient

__all__ = [
    "ScoreReport",
    "FactCounts",
    "RougeScore",
    "JudgeParseError",
    "rmse",
    "cosine_similarity",
    "rouge_n",
    "rouge_l",
    "meteor",
    "stem",
    "gpt_semantic_score",
    "gpt_f1",
    "semantic_judge_prompt",
    "factcount_judge_prompt",
]


@dataclass
class ScoreReport:
    """Per-metric results for one (model, dataset, window size) cell."""

    model_id: str
    dataset_id: str
    k: int
    scores: dict[str, float] = field(default_factory=dict)
    parse_failures: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class FactCounts:
    """Judge-reported fact counts; parsed from the response, never inferred."""

    tp: int
    fp: int
    fn: int
    rationale_text: str = ""


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


class JudgeParseError(ValueError):
    """Judge completion did not contain the required fields."""

    def __init__(self, message: str, completion: str):
        super().__init__(message)
        self.completion = completion


# --------------------------------------------------------------------------
# numeric


def rmse(pred, truth) -> float:
    """Root mean squared error over two equal-length series."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rmse of empty series")
    if not (np.isfinite(p).all() and np.isfinite(t).all()):
        raise ValueError("rmse inputs must be finite")
    return float(np.sqrt(np.mean((p - t) ** 2)))


# --------------------------------------------------------------------------
# embedding similarity


def cosine_similarity(reference: str, candidate: str, embedder: TextEmbedder,
                      normalize: bool = True) -> float:
    """Dot product of the two sentence embeddings.

    With `normalize` (default) the vectors are L2-normalized first, so
    the result is a true cosine in [-1, 1]; the raw dot product is
    available behind the flag.
    """
    a = embedder.embed_sentence(reference)
    b = embedder.embed_sentence(candidate)
    if normalize:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na > 1e-12:
            a = a / na
        if nb > 1e-12:
            b = b / nb
        return float(np.clip(a @ b, -1.0, 1.0))
    return float(a @ b)


# --------------------------------------------------------------------------
# ROUGE


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _prf(overlap: float, cand_total: float, ref_total: float) -> RougeScore:
    p = overlap / cand_total if cand_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return RougeScore(p, r, f)


def rouge_n(reference: str, candidate: str, n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ref = _ngrams(word_tokens(reference), n)
    cand = _ngrams(word_tokens(candidate), n)
    overlap = sum((ref & cand).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    for tok in a:
        cur = np.zeros_like(prev)
        for j, other in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if tok == other else max(prev[j], cur[j - 1])
        prev = cur
    return int(prev[-1])


def rouge_l(reference: str, candidate: str) -> RougeScore:
    """Longest-common-subsequence precision/recall/F1."""
    ref = word_tokens(reference)
    cand = word_tokens(candidate)
    lcs = _lcs_length(ref, cand)
    return _prf(lcs, len(cand), len(ref))


# --------------------------------------------------------------------------
# METEOR


_STEM_RULES = (("sses", "ss"), ("ies", "y"), ("ing", ""), ("ed", ""), ("s", ""))


def stem(token: str) -> str:
    """Fixed suffix-stripping stemmer (applied once, longest suffix first)."""
    for suffix, repl in _STEM_RULES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            if suffix == "s" and token.endswith("ss"):
                continue
            return token[: -len(suffix)] + repl
    return token


def _align(cand: list[str], ref: list[str], synonyms: dict[str, set[str]] | None) -> list[tuple[int, int]]:
    """Greedy staged unigram alignment: exact, then stem, then synonyms.

    Each stage walks candidate positions left to right and pairs each
    unmatched token with the leftmost unmatched reference token whose
    stage key matches. Returns (candidate index, reference index) pairs.
    """
    pairs: list[tuple[int, int]] = []
    cand_used = [False] * len(cand)
    ref_used = [False] * len(ref)

    def run_stage(match) -> None:
        for i, ct in enumerate(cand):
            if cand_used[i]:
                continue
            for j, rt in enumerate(ref):
                if not ref_used[j] and match(ct, rt):
                    pairs.append((i, j))
                    cand_used[i] = True
                    ref_used[j] = True
                    break

    run_stage(lambda c, r: c == r)
    run_stage(lambda c, r: stem(c) == stem(r))
    if synonyms:
        run_stage(lambda c, r: r in synonyms.get(c, ()) or c in synonyms.get(r, ()))
    return sorted(pairs)


def meteor(reference: str, candidate: str, synonyms: dict[str, set[str]] | None = None) -> float:
    """Unigram alignment score with a fragmentation penalty.

    With m aligned unigrams: P = m/|cand|, R = m/|ref|,
    Fmean = 10PR/(R+9P), penalty = 0.5*(chunks/m)^3,
    score = Fmean*(1-penalty); 0 when nothing aligns. The synonym stage
    is off unless a synonym resource is injected.
    """
    ref = word_tokens(reference)
    cand = word_tokens(candidate)
    if not ref or not cand:
        return 0.0
    pairs = _align(cand, ref, synonyms)
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    chunks = 1
    for (c0, r0), (c1, r1) in zip(pairs, pairs[1:]):
        if c1 != c0 + 1 or r1 != r0 + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1.0 - penalty)


# --------------------------------------------------------------------------
# LM-judged metrics


def _judge_template(name: str) -> str:
    path = resources.files("timetext.templates").joinpath(f"{name}_v1.txt")
    return path.read_text(encoding="utf-8").rstrip("\n")


def semantic_judge_prompt(reference: str, candidate: str) -> str:
    tpl = _judge_template("judge_semantic")
    return tpl.replace("{ground_truth}", reference).replace("{output}", candidate)


def factcount_judge_prompt(reference: str, candidate: str) -> str:
    tpl = _judge_template("judge_factcount")
    return tpl.replace("{ground_truth}", reference).replace("{output}", candidate)


def gpt_semantic_score(reference: str, candidate: str, judge: LMClient) -> int:
    """1-10 similarity score: the first in-range integer in the reply."""
    completion = judge.complete(semantic_judge_prompt(reference, candidate))
    for token in re.findall(r"\d+", completion):
        value = int(token)
        if 1 <= value <= 10:
            return value
    raise JudgeParseError("no integer in [1,10] found in judge reply", completion)


_COUNT_RES = {
    "tp": re.compile(r"(?i)\btp\s*total\s*count\b[^0-9\n]*(\d+)"),
    "fp": re.compile(r"(?i)\bfp\s*total\s*count\b[^0-9\n]*(\d+)"),
    "fn": re.compile(r"(?i)\bfn\s*total\s*count\b[^0-9\n]*(\d+)"),
}


def parse_fact_counts(completion: str) -> FactCounts:
    """Pull the three `total count` lines out of a judge reply."""
    found = {}
    for key, pattern in _COUNT_RES.items():
        m = pattern.search(completion)
        if m is None:
            raise JudgeParseError(f"missing '{key.upper()} total count' line", completion)
        found[key] = int(m.group(1))
    return FactCounts(tp=found["tp"], fp=found["fp"], fn=found["fn"], rationale_text=completion)


def gpt_f1(reference: str, candidate: str, judge: LMClient) -> tuple[FactCounts, float, float, float]:
    """Fact-level judge protocol: counts plus precision/recall/F1.

    Zero denominators yield 0 rather than NaN.
    """
    completion = judge.complete(factcount_judge_prompt(reference, candidate))
    counts = parse_fact_counts(completion)
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return counts, precision, recall, f1
