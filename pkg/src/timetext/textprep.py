"""Raw-text curation: chunk, extract, refine against source, combine.

Long daily reports are cut into fixed-size character chunks, each chunk
is summarized down to the variables of interest by an LM, the summary is
refined against the full raw text, and the refined parts are combined
into one daily summary. All LM access goes through `LMClient`, so the
whole pipeline runs deterministically under the seeded stubs.
"""

from __future__ import annotations

import datetime as dt
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

from .lmclient import DecodeParams, LMClient, LMClientError

__all__ = [
    "RawDocument",
    "Chunk",
    "DailySummary",
    "TextPrepError",
    "chunk_text",
    "summarize_chunk",
    "refine_summary",
    "combine_summaries",
    "summarize_document",
    "prepare_documents",
    "load_raw_documents",
]

TEMPLATE_VERSION = "v1"
DEFAULT_CHUNK_SIZE = 1000
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.5


class TextPrepError(RuntimeError):
    """Curation failed after retries; carries the failing chunk or day."""

    def __init__(self, message: str, chunk_index: int | None = None, day: dt.date | None = None):
        super().__init__(message)
        self.chunk_index = chunk_index
        self.day = day


@dataclass(frozen=True)
class RawDocument:
    date: dt.date
    body: str


@dataclass(frozen=True)
class Chunk:
    index: int
    text: str


@dataclass(frozen=True)
class DailySummary:
    date: dt.date
    text: str
    text_missing: bool
    retries: int = 0


def _template(name: str) -> str:
    path = resources.files("timetext.templates").joinpath(f"{name}_{TEMPLATE_VERSION}.txt")
    return path.read_text(encoding="utf-8").rstrip("\n")


def _fill(template: str, **slots: str) -> str:
    # plain replace: slot values may contain braces
    for key, value in slots.items():
        template = template.replace("{" + key + "}", value)
    return template


def chunk_text(doc: RawDocument, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[Chunk]:
    """Split the body into consecutive chunks of `chunk_size` characters.

    Counts Unicode scalar values, not bytes; the final chunk may be
    shorter. Joining the chunks reproduces the body exactly.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    body = doc.body
    return [Chunk(index=i, text=body[start : start + chunk_size])
            for i, start in enumerate(range(0, len(body), chunk_size))]


def _complete_with_retries(
    client: LMClient,
    prompt: str,
    *,
    chunk_index: int | None,
    day: dt.date | None,
    sleep: Callable[[float], None],
) -> tuple[str, int]:
    """Issue a completion with exponential backoff; returns (text, retries)."""
    last_error: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            return client.complete(prompt, DecodeParams()), attempt
        except LMClientError as exc:
            last_error = exc
            if attempt < RETRY_ATTEMPTS - 1:
                sleep(RETRY_BASE_DELAY * 2**attempt)
    where = f"chunk {chunk_index}" if chunk_index is not None else f"day {day}"
    raise TextPrepError(f"completion failed for {where} after {RETRY_ATTEMPTS} attempts: {last_error}",
                        chunk_index=chunk_index, day=day)


def summarize_chunk(
    chunk: Chunk,
    variables: list[str],
    client: LMClient,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Extract the variable-relevant content of one chunk via the client."""
    if not variables:
        raise ValueError("variables must be non-empty")
    if chunk.text == "":
        return ""
    prompt = _fill(_template("extract"), variables=", ".join(variables), chunk=chunk.text)
    text, _ = _complete_with_retries(client, prompt, chunk_index=chunk.index, day=None, sleep=sleep)
    return text.strip()


def refine_summary(
    summary: str,
    raw: RawDocument,
    client: LMClient,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Correct a draft summary against the raw source text.

    If the combined prompt would exceed the client context budget, the
    raw body is tail-truncated; the summary always survives intact.
    """
    template = _template("refine")
    overhead = len(_fill(template, summary=summary, raw=""))
    budget = client.max_context_chars - overhead
    body = raw.body if len(raw.body) <= budget else raw.body[: max(budget, 0)]
    prompt = _fill(template, summary=summary, raw=body)
    text, _ = _complete_with_retries(client, prompt, chunk_index=None, day=raw.date, sleep=sleep)
    return text.strip()


def combine_summaries(
    parts: list[str],
    variables: list[str],
    client: LMClient,
    day: dt.date | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Merge per-chunk summaries into the final daily summary.

    A single part is returned verbatim (no LM call); all-empty parts
    yield an empty summary for the caller to flag.
    """
    if not parts:
        raise ValueError("parts must be non-empty")
    if len(parts) == 1:
        return parts[0]
    if all(p.strip() == "" for p in parts):
        return ""
    joined = "\n".join(f"- {p}" for p in parts if p.strip())
    prompt = _fill(_template("combine"), variables=", ".join(variables), parts=joined)
    text, _ = _complete_with_retries(client, prompt, chunk_index=None, day=day, sleep=sleep)
    return text.strip()


def summarize_document(
    doc: RawDocument,
    variables: list[str],
    client: LMClient,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    max_workers: int = 1,
    sleep: Callable[[float], None] = time.sleep,
) -> DailySummary:
    """Full chunk -> extract -> refine -> combine pass over one document."""
    chunks = chunk_text(doc, chunk_size)
    if not chunks:
        return DailySummary(date=doc.date, text="", text_missing=True)

    def one(chunk: Chunk) -> str:
        summary = summarize_chunk(chunk, variables, client, sleep=sleep)
        return refine_summary(summary, doc, client, sleep=sleep)

    workers = max_workers if client.concurrent_safe else 1
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, chunks))  # map preserves chunk order
    else:
        parts = [one(c) for c in chunks]
    final = combine_summaries(parts, variables, client, day=doc.date, sleep=sleep)
    return DailySummary(date=doc.date, text=final, text_missing=(final == ""))


def load_raw_documents(input_dir) -> list[RawDocument]:
    """Read `YYYY-MM-DD.txt` files from a directory into raw documents."""
    docs = []
    for path in sorted(Path(input_dir).glob("*.txt")):
        try:
            date = dt.date.fromisoformat(path.stem)
        except ValueError:
            raise TextPrepError(f"raw file name {path.name!r} is not a YYYY-MM-DD date")
        docs.append(RawDocument(date=date, body=path.read_text(encoding="utf-8")))
    return docs


def prepare_documents(
    docs: list[RawDocument],
    variables: list[str],
    client: LMClient,
    text_key: str,
    out_path,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    max_workers: int = 1,
    numeric_rows: dict[str, dict] | None = None,
) -> list[DailySummary]:
    """Summarize documents and write a JSONL of dated summaries.

    `numeric_rows` optionally maps ISO dates to channel dicts that are
    merged into each output line, producing a loadable corpus file.
    """
    summaries = [summarize_document(d, variables, client, chunk_size, max_workers) for d in docs]
    with open(out_path, "w", encoding="utf-8") as fh:
        for s in summaries:
            row: dict = {"date": s.date.isoformat(), text_key: s.text}
            if numeric_rows and s.date.isoformat() in numeric_rows:
                row.update(numeric_rows[s.date.isoformat()])
            fh.write(json.dumps(row) + "\n")
    return summaries
