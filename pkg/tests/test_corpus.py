import datetime as dt
import json

import numpy as np
import pytest

from timetext.corpus import (
    AlignedCorpus,
    CorpusError,
    CorpusRejected,
    SplitLeakageError,
    SplitSpec,
    SynthSpec,
    TimeTextRecord,
    chronological_split,
    filter_missing,
    generate_synthetic,
    load_corpus,
    make_windows,
    save_corpus,
)

from conftest import make_record


def build_corpus(days, values=None, texts=None):
    values = values or [float(i) for i in range(len(days))]
    texts = texts or [f"day {i}." for i in range(len(days))]
    recs = tuple(
        TimeTextRecord(date=d, values=(v,), text=t)
        for d, v, t in zip(days, values, texts)
    )
    return AlignedCorpus(records=recs, channel_names=("temp",), target_channel="temp")


def consecutive(n, start=dt.date(2020, 1, 1)):
    return [start + dt.timedelta(days=i) for i in range(n)]


class TestLoadSave:
    def test_roundtrip_identity(self, tmp_path):
        corpus = generate_synthetic(SynthSpec(length=30, leak="value", channels=2), seed=4)
        path = tmp_path / "c.jsonl"
        save_corpus(corpus, path, "weather")
        back = load_corpus(path, "weather")
        assert back.channel_names == corpus.channel_names
        assert back.records == corpus.records

    def test_records_sorted_by_date(self, tmp_path):
        rows = [
            {"date": "2014-01-02", "weather_forecast": "b", "temp": 2.0},
            {"date": "2014-01-01", "weather_forecast": "a", "temp": 1.0},
            {"date": "2014-01-03", "weather_forecast": "c", "temp": 3.0},
        ]
        path = tmp_path / "c.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        corpus = load_corpus(path, "weather")
        assert [r.date.isoformat() for r in corpus.records] == [
            "2014-01-01", "2014-01-02", "2014-01-03"]

    def test_duplicate_date_rejected_naming_it(self, tmp_path):
        rows = [
            {"date": "2014-01-01", "weather_forecast": "a", "temp": 1.0},
            {"date": "2014-01-01", "weather_forecast": "b", "temp": 2.0},
        ]
        path = tmp_path / "c.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows))
        with pytest.raises(CorpusError, match="2014-01-01"):
            load_corpus(path, "weather")

    def test_non_numeric_value_gives_line_number(self, tmp_path):
        rows = [
            {"date": "2014-01-01", "weather_forecast": "a", "temp": 1.0},
            {"date": "2014-01-02", "weather_forecast": "b", "temp": "warm"},
        ]
        path = tmp_path / "c.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows))
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path, "weather")

    def test_unknown_schema(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        with pytest.raises(CorpusError, match="unknown schema"):
            load_corpus(path, "finance")

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        with pytest.raises(CorpusError, match="empty"):
            load_corpus(path, "weather")

    def test_full_scale_daily_file(self, tmp_path):
        # a decade of daily rows loads into one record per row
        corpus = generate_synthetic(SynthSpec(length=3621), seed=0)
        path = tmp_path / "big.jsonl"
        save_corpus(corpus, path, "weather")
        assert len(load_corpus(path, "weather")) == 3621


class TestFilterMissing:
    def test_rejects_above_threshold_with_fraction(self):
        days = consecutive(100)
        removed = {10, 20, 30, 40, 50, 60}
        kept = [d for i, d in enumerate(days) if i not in removed]
        corpus = build_corpus(kept, [1.0] * len(kept))
        with pytest.raises(CorpusRejected) as err:
            filter_missing(corpus, 0.05)
        assert err.value.fraction == pytest.approx(0.06)

    def test_boundary_fraction_accepted(self):
        days = consecutive(100)
        removed = {10, 20, 30, 40, 50}
        kept = [d for i, d in enumerate(days) if i not in removed]
        corpus = build_corpus(kept, [float(i) for i in range(len(kept))])
        out = filter_missing(corpus, 0.05)
        assert len(out) == 100
        assert out.missing_day_fraction == 0.0

    def test_gapless_passthrough(self):
        corpus = build_corpus(consecutive(10))
        assert filter_missing(corpus, 0.05) is corpus

    def test_forward_fill_values_and_flags(self):
        days = [dt.date(2020, 1, 1), dt.date(2020, 1, 2), dt.date(2020, 1, 4)]
        corpus = build_corpus(days, [1.0, 2.0, 4.0])
        out = filter_missing(corpus, 0.5)
        assert [r.date.day for r in out.records] == [1, 2, 3, 4]
        filled = out.records[2]
        assert filled.values == (2.0,)
        assert filled.missing_flags == (True,)
        assert filled.text_missing and filled.text == ""


class TestWindows:
    def test_count_10_records_k3(self):
        windows = make_windows(build_corpus(consecutive(10)), 3)
        assert len(windows) == 5

    def test_minimal_corpus(self):
        windows = make_windows(build_corpus(consecutive(2)), 1)
        assert len(windows) == 1

    def test_too_short_reports_minimum(self):
        with pytest.raises(CorpusError, match="14"):
            make_windows(build_corpus(consecutive(13)), 7)

    def test_counts_match_enumeration(self):
        # brute-force enumeration of valid (input, target) origin pairs
        for n in range(1, 51):
            corpus = build_corpus(consecutive(n))
            for k in range(1, 8):
                expected = sum(1 for o in range(n) if o + 2 * k <= n)
                if n < 2 * k:
                    with pytest.raises(CorpusError):
                        make_windows(corpus, k)
                else:
                    assert len(make_windows(corpus, k)) == expected == n - 2 * k + 1

    def test_windows_reconstruct_contiguous_slice(self):
        corpus = build_corpus(consecutive(12))
        for w in make_windows(corpus, 2):
            run = w.input_records + w.target_records
            assert run == corpus.records[w.origin_index : w.origin_index + 4]

    def test_gappy_corpus_refused(self):
        days = [dt.date(2020, 1, 1), dt.date(2020, 1, 2), dt.date(2020, 1, 5)]
        with pytest.raises(CorpusError, match="gaps"):
            make_windows(build_corpus(days), 1)


class TestSplit:
    def test_floor_remainder_sizes(self):
        windows = make_windows(build_corpus(consecutive(11)), 1)
        assert len(windows) == 10
        train, val, test = chronological_split(windows, SplitSpec(0.7, 0.1, 0.2))
        assert (len(train), len(val), len(test)) == (7, 1, 2)

    def test_all_train(self):
        windows = make_windows(build_corpus(consecutive(11)), 1)
        train, val, test = chronological_split(windows, SplitSpec(1.0, 0.0, 0.0))
        assert len(train) == 10 and not val and not test

    def test_partition_exact(self):
        windows = make_windows(build_corpus(consecutive(40)), 2)
        train, val, test = chronological_split(windows, SplitSpec())
        origins = [w.origin_index for part in (train, val, test) for w in part]
        assert origins == [w.origin_index for w in windows]

    def test_bad_fractions(self):
        with pytest.raises(CorpusError, match="sum"):
            SplitSpec(0.5, 0.2, 0.2)
        with pytest.raises(CorpusError, match="nonnegative"):
            SplitSpec(1.2, -0.1, -0.1)

    def test_undersized_val_buffer_refused(self):
        windows = make_windows(build_corpus(consecutive(40)), 3)
        with pytest.raises(SplitLeakageError, match="5 windows"):
            chronological_split(windows, SplitSpec(0.8, 0.0, 0.2))

    def test_zero_leakage_on_random_configs(self):
        rng = np.random.default_rng(0)
        produced = 0
        while produced < 100:
            n = int(rng.integers(30, 120))
            k = int(rng.integers(1, 8))
            if n < 2 * k + 4:
                continue
            corpus = build_corpus(consecutive(n))
            windows = make_windows(corpus, k)
            val_frac = min(0.5, (2 * k + 1) / len(windows) + float(rng.uniform(0, 0.2)))
            test_frac = float(rng.uniform(0.1, 0.3))
            spec = SplitSpec(1.0 - val_frac - test_frac, val_frac, test_frac)
            try:
                train, val, test = chronological_split(windows, spec)
            except SplitLeakageError:
                continue
            if train and test:
                last_train_target = max(r.date for w in train for r in w.target_records)
                first_test_input = min(r.date for w in test for r in w.input_records)
                assert last_train_target < first_test_input
                produced += 1


class TestSynthetic:
    def test_determinism(self):
        spec = SynthSpec(length=50, leak="direction", channels=2)
        a = generate_synthetic(spec, seed=9)
        b = generate_synthetic(spec, seed=9)
        assert a.records == b.records

    def test_seed_changes_output(self):
        spec = SynthSpec(length=50)
        assert generate_synthetic(spec, 1).records != generate_synthetic(spec, 2).records

    def test_direction_leak_contract(self):
        corpus = generate_synthetic(SynthSpec(length=80, leak="direction"), seed=3)
        values = corpus.target_values()
        for t in range(len(corpus) - 1):
            rises = values[t + 1] > values[t]
            assert ("up" in corpus.records[t].text) == rises

    def test_value_leak_contract(self):
        corpus = generate_synthetic(SynthSpec(length=30, leak="value"), seed=3)
        values = corpus.target_values()
        for t in range(len(corpus) - 1):
            assert f"{values[t + 1]:.1f}" in corpus.records[t].text

    def test_none_leak_has_no_direction_words(self):
        corpus = generate_synthetic(SynthSpec(length=50, leak="none"), seed=3)
        for r in corpus.records:
            assert "up" not in r.text and "down" not in r.text

    def test_too_short(self):
        with pytest.raises(CorpusError, match="at least 4"):
            generate_synthetic(SynthSpec(length=3), seed=0)


class TestInvariants:
    def test_record_validation(self):
        with pytest.raises(CorpusError, match="text_missing"):
            TimeTextRecord(date=dt.date(2020, 1, 1), values=(1.0,), text="")
        with pytest.raises(CorpusError, match="strictly increasing"):
            AlignedCorpus(
                records=(make_record(2, 1.0), make_record(1, 2.0)),
                channel_names=("temp",), target_channel="temp")
        with pytest.raises(CorpusError, match="target channel"):
            AlignedCorpus(records=(), channel_names=("temp",), target_channel="hr")
