import datetime as dt

import pytest

from timetext.corpus import SynthSpec, TimeTextRecord, generate_synthetic
from timetext.embed import HashStubEmbedder


@pytest.fixture(scope="session")
def stub_embedder():
    return HashStubEmbedder(dim=64, seed=0)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SynthSpec(length=60, leak="direction"), seed=11)


def make_record(day: int, value: float, text: str = "plain day.", month: int = 1) -> TimeTextRecord:
    return TimeTextRecord(date=dt.date(2020, month, day), values=(value,), text=text)
