import pytest

from corpus import USER, Turn, filter_active, load_corpus
from kb import VenueDatabase
from orchestrator import Pipeline, template_registry
from tests.fixtures import A1_USER_TURNS, write_mini_multiwoz


@pytest.fixture
def mini_root(tmp_path):
    return write_mini_multiwoz(tmp_path / "multiwoz")


@pytest.fixture
def raw_corpus(mini_root):
    return load_corpus(mini_root)


@pytest.fixture
def corpus(raw_corpus):
    return filter_active(raw_corpus)


@pytest.fixture
def db(mini_root):
    return VenueDatabase.load(mini_root / "db")


@pytest.fixture
def pipeline(db):
    return Pipeline(template_registry(), db)


@pytest.fixture
def a1_context():
    """First user turn of the expensive-centre restaurant conversation"""
    return [Turn(index=0, speaker=USER, utterance=A1_USER_TURNS[0])]

