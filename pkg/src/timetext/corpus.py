"""Aligned daily time-and-text corpora.

A corpus is an ordered run of (date, numeric vector, text) records at
daily frequency. This module covers the JSONL on-disk format, gap
accounting and forward-filling, sliding k-in/k-out window construction,
chronological train/val/test splitting, and a seeded synthetic generator
whose text can optionally leak next-day movement of the target channel.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeTextRecord",
    "AlignedCorpus",
    "WindowPair",
    "SplitSpec",
    "Schema",
    "SCHEMAS",
    "SynthSpec",
    "CorpusError",
    "CorpusRejected",
    "SplitLeakageError",
    "load_corpus",
    "save_corpus",
    "filter_missing",
    "make_windows",
    "chronological_split",
    "generate_synthetic",
]


class CorpusError(ValueError):
    """Malformed corpus data or an operation precondition violation."""


class CorpusRejected(Exception):
    """Corpus refused by the missing-data filter; carries the measured fraction."""

    def __init__(self, fraction: float, threshold: float):
        self.fraction = fraction
        self.threshold = threshold
        super().__init__(f"missing-day fraction {fraction:.6g} exceeds threshold {threshold:.6g}")


class SplitLeakageError(ValueError):
    """Requested split cannot satisfy the train-target/test-input ordering guard."""


@dataclass(frozen=True)
class Schema:
    """On-disk key vocabulary for one dataset family."""

    text_key: str
    target_key: str
    decimals: int  # numeric precision used when stringifying values


SCHEMAS: dict[str, Schema] = {
    "weather": Schema(text_key="weather_forecast", target_key="temp", decimals=1),
    "medical": Schema(text_key="medical_notes", target_key="Heart_Rate", decimals=3),
}


def get_schema(schema_id: str) -> Schema:
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise CorpusError(f"unknown schema id {schema_id!r}; known: {sorted(SCHEMAS)}") from None


@dataclass(frozen=True)
class TimeTextRecord:
    """One day: numeric state vector plus that day's text.

    `missing_flags[i]` marks channel i as synthesized by forward-fill
    rather than observed; `text_missing` marks an absent text. Flags are
    in-memory bookkeeping and are not persisted by `save_corpus`.
    """

    date: dt.date
    values: tuple[float, ...]
    text: str
    missing_flags: tuple[bool, ...] = ()
    text_missing: bool = False

    def __post_init__(self):
        if not self.missing_flags:
            object.__setattr__(self, "missing_flags", tuple(False for _ in self.values))
        if len(self.missing_flags) != len(self.values):
            raise CorpusError("missing_flags length must equal values length")
        if self.text == "" and not self.text_missing:
            raise CorpusError(f"record {self.date}: empty text requires text_missing=True")


@dataclass(frozen=True)
class AlignedCorpus:
    """Chronologically ordered daily records over named numeric channels."""

    records: tuple[TimeTextRecord, ...]
    channel_names: tuple[str, ...]
    target_channel: str
    frequency: str = "D"

    def __post_init__(self):
        if self.target_channel not in self.channel_names:
            raise CorpusError(f"target channel {self.target_channel!r} not in {self.channel_names}")
        prev = None
        for rec in self.records:
            if len(rec.values) != len(self.channel_names):
                raise CorpusError(f"record {rec.date}: {len(rec.values)} values for {len(self.channel_names)} channels")
            if prev is not None and rec.date <= prev:
                raise CorpusError(f"record dates not strictly increasing at {rec.date}")
            prev = rec.date

    def __len__(self) -> int:
        return len(self.records)

    @property
    def target_index(self) -> int:
        return self.channel_names.index(self.target_channel)

    @property
    def span_days(self) -> int:
        if not self.records:
            return 0
        return (self.records[-1].date - self.records[0].date).days + 1

    @property
    def missing_day_fraction(self) -> float:
        span = self.span_days
        if span == 0:
            return 0.0
        return (span - len(self.records)) / span

    def has_gaps(self) -> bool:
        return self.span_days != len(self.records)

    def values_array(self) -> np.ndarray:
        """(T, C) float array of all channel values."""
        return np.array([r.values for r in self.records], dtype=np.float64)

    def target_values(self) -> np.ndarray:
        return self.values_array()[:, self.target_index]

    def texts(self) -> list[str]:
        return [r.text for r in self.records]


@dataclass(frozen=True)
class WindowPair:
    """k input records followed by the k immediately subsequent records."""

    input_records: tuple[TimeTextRecord, ...]
    target_records: tuple[TimeTextRecord, ...]
    origin_index: int

    def __post_init__(self):
        if len(self.input_records) != len(self.target_records):
            raise CorpusError("input and target blocks must have equal length")
        run = self.input_records + self.target_records
        for a, b in zip(run, run[1:]):
            if (b.date - a.date).days != 1:
                raise CorpusError(f"window not day-contiguous between {a.date} and {b.date}")

    @property
    def k(self) -> int:
        return len(self.input_records)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fr):
            raise CorpusError("split fractions must be nonnegative")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise CorpusError(f"split fractions sum to {sum(fr)!r}, expected 1")


# --------------------------------------------------------------------------
# IO


def _parse_date(raw, line_no: int) -> dt.date:
    try:
        return dt.date.fromisoformat(str(raw))
    except ValueError:
        raise CorpusError(f"line {line_no}: bad date {raw!r} (expected YYYY-MM-DD)") from None


def load_corpus(path, schema: str) -> AlignedCorpus:
    """Read a JSONL corpus file.

    Each line is an object with keys `date`, the schema's text key, and
    one numeric key per channel. Channel order is fixed by the first
    line. Records are returned sorted by date; duplicates are an error.
    """
    sch = get_schema(schema)
    records: list[TimeTextRecord] = []
    channel_names: list[str] | None = None
    seen_dates: set[dt.date] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc})") from None
            if "date" not in obj:
                raise CorpusError(f"line {line_no}: missing 'date' key")
            date = _parse_date(obj["date"], line_no)
            if date in seen_dates:
                raise CorpusError(f"duplicate date {date.isoformat()} at line {line_no}")
            seen_dates.add(date)
            text = obj.get(sch.text_key)
            if text is None:
                raise CorpusError(f"line {line_no}: missing text key {sch.text_key!r}")
            chans = [k for k in obj if k not in ("date", sch.text_key)]
            if channel_names is None:
                channel_names = chans
                if sch.target_key not in channel_names:
                    raise CorpusError(f"target key {sch.target_key!r} absent from first line")
            elif set(chans) != set(channel_names):
                raise CorpusError(f"line {line_no}: channel keys {sorted(chans)} != {sorted(channel_names)}")
            values = []
            for name in channel_names:
                v = obj[name]
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise CorpusError(f"line {line_no}: non-numeric value {v!r} for channel {name!r}")
                values.append(float(v))
            records.append(
                TimeTextRecord(
                    date=date,
                    values=tuple(values),
                    text=str(text),
                    text_missing=(str(text) == ""),
                )
            )
    if not records:
        raise CorpusError(f"{path}: empty corpus")
    records.sort(key=lambda r: r.date)
    return AlignedCorpus(
        records=tuple(records),
        channel_names=tuple(channel_names),
        target_channel=sch.target_key,
    )


def save_corpus(corpus: AlignedCorpus, path, schema: str) -> None:
    """Write JSONL with the schema key vocabulary; inverse of `load_corpus`."""
    sch = get_schema(schema)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            obj: dict = {"date": rec.date.isoformat(), sch.text_key: rec.text}
            for name, value in zip(corpus.channel_names, rec.values):
                obj[name] = value
            fh.write(json.dumps(obj) + "\n")


# --------------------------------------------------------------------------
# Gap handling, windowing, splitting


def filter_missing(corpus: AlignedCorpus, max_missing_fraction: float = 0.05) -> AlignedCorpus:
    """Reject gap-heavy corpora; forward-fill the gaps of accepted ones.

    The missing-day fraction is absent days over the first-to-last span
    (inclusive); the threshold comparison is inclusive, so a fraction
    exactly at the threshold passes. Raises `CorpusRejected` above it.
    Filled records copy the previous day's numeric values with all
    channels flagged missing, and carry an empty missing-flagged text.
    """
    if not 0.0 <= max_missing_fraction <= 1.0:
        raise CorpusError("max_missing_fraction must be within [0, 1]")
    fraction = corpus.missing_day_fraction
    if fraction > max_missing_fraction:
        raise CorpusRejected(fraction, max_missing_fraction)
    if not corpus.has_gaps():
        return corpus
    filled: list[TimeTextRecord] = []
    prev: TimeTextRecord | None = None
    for rec in corpus.records:
        if prev is not None:
            day = prev.date + dt.timedelta(days=1)
            while day < rec.date:
                filled.append(
                    TimeTextRecord(
                        date=day,
                        values=prev.values,
                        text="",
                        missing_flags=tuple(True for _ in prev.values),
                        text_missing=True,
                    )
                )
                day += dt.timedelta(days=1)
        filled.append(rec)
        prev = rec
    return AlignedCorpus(
        records=tuple(filled),
        channel_names=corpus.channel_names,
        target_channel=corpus.target_channel,
    )


def make_windows(corpus: AlignedCorpus, k: int) -> list[WindowPair]:
    """All stride-1 windows of k input days followed by k target days."""
    if k < 1:
        raise CorpusError("k must be a positive integer")
    if corpus.has_gaps():
        raise CorpusError("corpus has calendar gaps; run filter_missing first")
    n = len(corpus)
    if n < 2 * k:
        raise CorpusError(f"corpus length {n} too short for k={k}; needs at least {2 * k} records")
    windows = []
    for origin in range(n - 2 * k + 1):
        windows.append(
            WindowPair(
                input_records=tuple(corpus.records[origin : origin + k]),
                target_records=tuple(corpus.records[origin + k : origin + 2 * k]),
                origin_index=origin,
            )
        )
    return windows


def chronological_split(
    windows: list[WindowPair], spec: SplitSpec = SplitSpec()
) -> tuple[list[WindowPair], list[WindowPair], list[WindowPair]]:
    """Partition windows, in time order, into train/val/test runs.

    Counts are floor(fraction * n) with the remainder assigned to train.
    The validation run must be wide enough (2k-1 windows when both train
    and test are nonempty) that no train-window target day reaches any
    test-window input day; otherwise the split is refused.
    """
    n = len(windows)
    n_train = math.floor(spec.train_fraction * n)
    n_val = math.floor(spec.val_fraction * n)
    n_test = math.floor(spec.test_fraction * n)
    n_train += n - (n_train + n_val + n_test)
    train = windows[:n_train]
    val = windows[n_train : n_train + n_val]
    test = windows[n_train + n_val :]
    if train and test:
        last_train_target = max(r.date for w in train for r in w.target_records)
        first_test_input = min(r.date for w in test for r in w.input_records)
        if last_train_target >= first_test_input:
            k = windows[0].k
            raise SplitLeakageError(
                f"train targets reach {last_train_target} but test inputs start {first_test_input}; "
                f"validation run must hold at least {2 * k - 1} windows to buffer k={k}"
            )
    return train, val, test


# --------------------------------------------------------------------------
# Synthetic corpora


_FILLERS = ("calm air", "light breeze", "thin cloud", "clear sky", "haze bands", "mild front")

LEAK_MODES = ("none", "direction", "value")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the seeded synthetic generator.

    leak modes: `none` (text describes the current day only),
    `direction` (text opens with whether the target moves up or down the
    next day), `value` (text opens with the next day's target value).
    """

    length: int = 400
    channels: int = 1
    noise: float = 1.0
    leak: str = "none"
    schema: str = "weather"
    ar_coef: float = 0.7
    season_period: float = 29.0
    season_amp: float = 2.0
    base_level: float = 50.0
    start_date: dt.date = field(default=dt.date(2014, 1, 1))

    def __post_init__(self):
        if self.leak not in LEAK_MODES:
            raise CorpusError(f"leak mode {self.leak!r} not in {LEAK_MODES}")
        if self.channels < 1:
            raise CorpusError("need at least one channel")


def _ar1_seasonal(rng: np.random.Generator, spec: SynthSpec, n: int, phase: float) -> np.ndarray:
    season = spec.season_amp * np.sin(2 * np.pi * (np.arange(n) / spec.season_period + phase))
    devs = np.empty(n)
    devs[0] = rng.normal(0.0, spec.noise)
    eps = rng.normal(0.0, spec.noise, size=n)
    for t in range(1, n):
        devs[t] = spec.ar_coef * devs[t - 1] + eps[t]
    return spec.base_level + season + devs


def generate_synthetic(spec: SynthSpec, seed: int) -> AlignedCorpus:
    """Deterministic AR(1)+seasonal corpus with templated daily text."""
    if spec.length < 4:
        raise CorpusError("synthetic corpus length must be at least 4")
    sch = get_schema(spec.schema)
    rng = np.random.default_rng(seed)
    n = spec.length + 1  # one hidden extra day so the last text can reference tomorrow
    series = [_ar1_seasonal(rng, spec, n, phase=c / max(spec.channels, 1)) for c in range(spec.channels)]
    series = [np.round(s, sch.decimals) for s in series]
    target = series[0]
    fillers = rng.choice(len(_FILLERS), size=spec.length)
    records = []
    for t in range(spec.length):
        filler = _FILLERS[int(fillers[t])]
        if spec.leak == "direction":
            word = "up" if target[t + 1] > target[t] else "down"
            text = f"signal {word} into tomorrow; {filler}."
        elif spec.leak == "value":
            text = f"tomorrow near {target[t + 1]:.{sch.decimals}f}; {filler}."
        else:
            text = f"steady day, level near {target[t]:.{sch.decimals}f}; {filler}."
        records.append(
            TimeTextRecord(
                date=spec.start_date + dt.timedelta(days=t),
                values=tuple(float(s[t]) for s in series),
                text=text,
            )
        )
    names = [sch.target_key] + [f"aux_{i}" for i in range(1, spec.channels)]
    return AlignedCorpus(
        records=tuple(records),
        channel_names=tuple(names),
        target_channel=sch.target_key,
    )
