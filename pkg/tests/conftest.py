import json

import pytest

from actionsense.corpus import Corpus
from actionsense.extraction import (
    count_lemma_frequencies,
    extract_verb_ingredient_pairs,
    filter_pairs_by_frequency,
    resolve_coreferences,
)
from actionsense.stubs import (
    StubCorefProvider,
    StubLMProvider,
    StubParseProvider,
    StubRCProvider,
    fixture_path,
)
from actionsense.triplets import all_triplets, events_from_pairs, group_by_ingredient


@pytest.fixture(scope="session")
def corpus():
    return Corpus.load(fixture_path("annotations.json"), fixture_path("recipes.json"))


@pytest.fixture(scope="session")
def coref_provider():
    return StubCorefProvider(fixture_path("coref.json"))


@pytest.fixture(scope="session")
def parse_provider():
    return StubParseProvider(fixture_path("parse.json"))


@pytest.fixture(scope="session")
def rc_provider():
    return StubRCProvider(fixture_path("rc.json"))


@pytest.fixture(scope="session")
def lm_provider():
    return StubLMProvider(fixture_path("lm.json"), seed=13)


@pytest.fixture(scope="session")
def resolved(corpus, coref_provider):
    out = {}
    for video in corpus.videos:
        sentences = resolve_coreferences(video, coref_provider)
        for seg, sentence in zip(video.segments, sentences):
            out[(video.video_id, seg.index)] = sentence.resolved
    return out


@pytest.fixture(scope="session")
def fixture_pairs(corpus, parse_provider, resolved):
    pairs = []
    for video in corpus.videos:
        for seg in video.segments:
            pairs.extend(
                extract_verb_ingredient_pairs(
                    resolved[(video.video_id, seg.index)],
                    parse_provider,
                    video.video_id,
                    seg.index,
                )
            )
    return pairs


@pytest.fixture(scope="session")
def fixture_triplets(fixture_pairs):
    counts = count_lemma_frequencies(fixture_pairs)
    kept = filter_pairs_by_frequency(fixture_pairs, counts, min_count=1)
    return all_triplets(group_by_ingredient(events_from_pairs(kept)))


@pytest.fixture()
def fixture_config(tmp_path):
    """Copy of the bundled run config, written under tmp_path."""
    with open(fixture_path("run_config.json"), encoding="utf-8") as fh:
        cfg = json.load(fh)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path
