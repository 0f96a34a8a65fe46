"""Prompt construction and response parsing for the LM forecasters.

Prompts ask for strict JSON keyed `day_<i>_<field>`: input days are
numbered 1..k and requested future days k+1..2k. The four variants
differ only in which fields appear: `text2text` drops numeric fields,
`texttime2time` requests no future text, `texttime2text` requests no
future numbers, and `texttime2texttime` keeps everything. Responses are
parsed tolerantly (first balanced JSON object), with per-day fallback to
input copying and an explicit failure flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .corpus import Schema, TimeTextRecord, WindowPair, get_schema

__all__ = [
    "PromptSpec",
    "ParsedForecast",
    "VARIANTS",
    "MODES",
    "build_prompt",
    "render_response",
    "parse_llm_forecast",
]

VARIANTS = ("text2text", "texttime2text", "texttime2time", "texttime2texttime")
MODES = ("zero-shot", "in-context-1", "fine-tuned")

EXAMPLE_DELIMITER = "---"

_DOMAIN_WORD = {"weather": "weather", "medical": "medical"}
_TEXT_PLACEHOLDER = {"weather": "Weather description", "medical": "Medical description"}


@dataclass(frozen=True)
class PromptSpec:
    schema: str
    k: int
    variant: str
    mode: str

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant {self.variant!r} not in {VARIANTS}")
        if self.mode not in MODES:
            raise ValueError(f"mode {self.mode!r} not in {MODES}")
        if self.k < 1:
            raise ValueError("k must be positive")

    @property
    def wants_text_output(self) -> bool:
        return self.variant in ("text2text", "texttime2text", "texttime2texttime")

    @property
    def wants_time_output(self) -> bool:
        return self.variant in ("texttime2time", "texttime2texttime")

    @property
    def uses_time_input(self) -> bool:
        return self.variant != "text2text"


def _days(n: int) -> str:
    return "1 day" if n == 1 else f"{n} days"


def _render_json(items: list[tuple[str, str]]) -> str:
    lines = [f'    "{key}": {value}' for key, value in items]
    return "{\n" + ",\n".join(lines) + "\n}"


def _fmt_value(value: float, schema: Schema) -> str:
    # shortest round-trip form mirrors the stored decimal precision
    # (corpus values are rounded to schema.decimals when generated)
    return repr(float(value))


def _input_items(spec: PromptSpec, schema: Schema, records: list[TimeTextRecord],
                 target_index: int, first_day: int = 1) -> list[tuple[str, str]]:
    items = []
    for offset, rec in enumerate(records):
        day = first_day + offset
        items.append((f"day_{day}_date", json.dumps(rec.date.isoformat())))
        items.append((f"day_{day}_{schema.text_key}", json.dumps(rec.text)))
        if spec.uses_time_input:
            items.append((f"day_{day}_{schema.target_key}", _fmt_value(rec.values[target_index], schema)))
    return items


def _output_schema_items(spec: PromptSpec, schema: Schema) -> list[tuple[str, str]]:
    items = []
    for j in range(spec.k + 1, 2 * spec.k + 1):
        items.append((f"day_{j}_date", json.dumps("YYYY-MM-DD")))
        if spec.wants_text_output:
            items.append((f"day_{j}_{schema.text_key}", json.dumps(_TEXT_PLACEHOLDER[spec.schema])))
        if spec.wants_time_output:
            items.append((f"day_{j}_{schema.target_key}", json.dumps("A Float Number")))
    return items


def render_response(spec: PromptSpec, target_records: list[TimeTextRecord], target_index: int) -> str:
    """The ideal model response for a window: used as the fine-tuning target."""
    schema = get_schema(spec.schema)
    items = []
    for offset, rec in enumerate(target_records):
        day = spec.k + 1 + offset
        items.append((f"day_{day}_date", json.dumps(rec.date.isoformat())))
        if spec.wants_text_output:
            items.append((f"day_{day}_{schema.text_key}", json.dumps(rec.text)))
        if spec.wants_time_output:
            items.append((f"day_{day}_{schema.target_key}", _fmt_value(rec.values[target_index], schema)))
    return _render_json(items)


def build_prompt(
    spec: PromptSpec,
    input_records: list[TimeTextRecord],
    target_index: int,
    example: WindowPair | None = None,
) -> str:
    """Assemble the full prompt for one window.

    `example` must be given exactly for in-context mode; it is rendered
    as a solved input/output pair ahead of the query, separated by a
    fixed delimiter line.
    """
    if (example is not None) != (spec.mode == "in-context-1"):
        raise ValueError("example must be provided iff mode is 'in-context-1'")
    if len(input_records) != spec.k:
        raise ValueError(f"expected {spec.k} input records, got {len(input_records)}")
    schema = get_schema(spec.schema)
    word = _DOMAIN_WORD[spec.schema]
    instruction = (
        f"Given the {word} information of the first {_days(spec.k)}, "
        f"predict the {word} information of the next {_days(spec.k)}. "
        "Output the result strictly in the following JSON format and no additional text:"
    )
    # the medical template labels its input section with a colon
    input_label = "Input:" if spec.schema == "medical" else "Input"
    parts = [instruction, _render_json(_output_schema_items(spec, schema))]
    if example is not None:
        ex_in = _render_json(_input_items(spec, schema, list(example.input_records), target_index))
        ex_out = render_response(spec, list(example.target_records), target_index)
        parts.append(f"Example:\n{input_label}\n{ex_in}\nOutput:\n{ex_out}\n{EXAMPLE_DELIMITER}")
    query = _render_json(_input_items(spec, schema, list(input_records), target_index))
    parts.append(f"{input_label}\n{query}")
    return "\n\n".join(parts)


@dataclass
class ParsedForecast:
    """Parse result: per-day values/texts plus whether fallback was needed."""

    time_values: list[float] | None
    texts: list[str] | None
    failed: bool


def _first_json_object(text: str) -> dict | None:
    """Extract and decode the first balanced top-level JSON object."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    return None


def _coerce_float(value) -> float | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        try:
            out = float(value.strip())
        except ValueError:
            return None
    else:
        return None
    import math

    return out if math.isfinite(out) else None


def parse_llm_forecast(
    response: str,
    spec: PromptSpec,
    input_records: list[TimeTextRecord],
    target_index: int,
) -> ParsedForecast:
    """Decode a model response into per-day forecasts.

    Surrounding prose is tolerated. Any missing or uncoercible day falls
    back to the corresponding input-copy value/text and flips `failed`.
    """
    schema = get_schema(spec.schema)
    obj = _first_json_object(response) or {}
    failed = not obj
    values: list[float] | None = None
    texts: list[str] | None = None
    if spec.wants_time_output:
        values = []
        for offset in range(spec.k):
            got = _coerce_float(obj.get(f"day_{spec.k + 1 + offset}_{schema.target_key}"))
            if got is None:
                got = input_records[offset].values[target_index]
                failed = True
            values.append(got)
    if spec.wants_text_output:
        texts = []
        for offset in range(spec.k):
            got = obj.get(f"day_{spec.k + 1 + offset}_{schema.text_key}")
            if not isinstance(got, str):
                got = input_records[offset].text
                failed = True
            texts.append(got)
    return ParsedForecast(time_values=values, texts=texts, failed=failed)
