import json

import pytest

from corpus import (SYSTEM, USER, export_dst, dialogue_to_record, load_corpus, parse_dialogue,
                    parse_dialogue_acts, render_context, resolve_split, write_dst_examples)
from errors import CorpusLoadError, MalformedRecordError


def _by_id(dialogues):
    return {d.dialogue_id: d for d in dialogues}


# ============================================================================
# LOADING
# ============================================================================

def test_split_sizes(raw_corpus):
    assert [len(raw_corpus.split(s)) for s in ("train", "dev", "test")] == [4, 1, 2]
    assert raw_corpus.split("validation") == raw_corpus.split("dev")


def test_unknown_split_name():
    with pytest.raises(ValueError):
        resolve_split("holdout")


def test_turns_alternate_and_keep_order(raw_corpus):
    for dialogue in raw_corpus.split("test"):
        assert [t.speaker for t in dialogue.turns] == [USER, SYSTEM] * (len(dialogue.turns) // 2)
        assert [t.index for t in dialogue.turns] == list(range(len(dialogue.turns)))


def test_gold_state_parsed_from_frames(raw_corpus):
    pmul0001 = _by_id(raw_corpus.split("test"))["PMUL0001.json"]
    user_states = [t.gold_state for t in pmul0001.user_turns()]
    assert user_states[0] == {"restaurant": {"area": ["centre"], "pricerange": ["expensive"]}}
    assert user_states[1]["restaurant"]["food"] == ["dontcare"]
    assert all(t.gold_state is None for t in pmul0001.turns if not t.is_user)


def test_dialogue_acts_attached(raw_corpus):
    mul0002 = _by_id(raw_corpus.split("test"))["MUL0002.json"]
    assert ("inform", "attraction", "entrancefee", "2 pounds") in mul0002.turns[1].dialogue_acts
    assert ("inform", "taxi", "type", "black toyota") in mul0002.turns[7].dialogue_acts
    assert mul0002.turns[0].dialogue_acts == []


def test_parse_dialogue_acts_without_pairs():
    assert parse_dialogue_acts({"dialog_act": {"general-bye": []}}) == [("bye", "general", "none", "none")]
    assert parse_dialogue_acts(None) == []


def test_schema(raw_corpus):
    assert "bookpeople" in raw_corpus.schema.keys("restaurant")
    assert raw_corpus.schema.categorical("hotel")["type"] == ["guesthouse", "hotel"]
    assert "food" not in raw_corpus.schema.categorical("restaurant")


def test_missing_split_directory(mini_root):
    (mini_root / "dev" / "dialogues_001.json").unlink()
    (mini_root / "dev").rmdir()
    with pytest.raises(CorpusLoadError) as excinfo:
        load_corpus(mini_root)
    assert excinfo.value.path.endswith("dev")


def test_undecodable_file_names_the_file(mini_root):
    (mini_root / "test" / "dialogues_002.json").write_text("[{", encoding="utf-8")
    with pytest.raises(CorpusLoadError) as excinfo:
        load_corpus(mini_root)
    assert "dialogues_002.json" in str(excinfo.value)


def test_out_of_order_speakers_rejected():
    record = {"dialogue_id": "BAD01.json", "services": [], "turns": [
        {"turn_id": "0", "speaker": "USER", "utterance": "hi", "frames": []},
        {"turn_id": "1", "speaker": "USER", "utterance": "hello?", "frames": []},
    ]}
    with pytest.raises(MalformedRecordError) as excinfo:
        parse_dialogue(record)
    assert excinfo.value.dialogue_id == "BAD01.json"
    assert excinfo.value.turn_index == 1


def test_record_round_trip(raw_corpus):
    mul0002 = _by_id(raw_corpus.split("test"))["MUL0002.json"]
    restored = parse_dialogue(json.loads(json.dumps(dialogue_to_record(mul0002))))
    assert restored == mul0002


# ============================================================================
# GOALS
# ============================================================================

def test_annotated_goal(raw_corpus):
    goal = _by_id(raw_corpus.split("test"))["MUL0002.json"].goal
    assert goal.source == "annotation"
    assert sorted(goal.domains) == ["attraction", "restaurant", "taxi"]
    assert goal.domains["attraction"].requestable == ["entrancefee"]
    assert goal.domains["restaurant"].booking == {"people": "2", "day": "friday", "time": "19:30"}
    assert goal.domains["restaurant"].requestable == ["ref"]
    assert goal.domains["taxi"].informable["leaveat"] == "18:00"
    assert goal.domains["taxi"].requestable == ["type", "phone"]


def test_empty_goal_sections_ignored(raw_corpus):
    goal = _by_id(raw_corpus.split("test"))["PMUL0001.json"].goal
    assert list(goal.domains) == ["restaurant"]
    assert goal.domains["restaurant"].requestable == ["phone"]


def test_reconstructed_goal(raw_corpus):
    goal = _by_id(raw_corpus.split("train"))["SNG0103.json"].goal
    assert goal.source == "reconstructed"
    assert goal.domains["train"].booking == {"people": "3"}
    assert goal.domains["train"].informable["leaveat"] == "10:30"
    assert goal.domains["train"].requestable == ["ref"]


# ============================================================================
# FILTERING
# ============================================================================

def test_filter_active_drops_inactive_training_dialogues(corpus, raw_corpus):
    train_ids = [d.dialogue_id for d in corpus.split("train")]
    assert train_ids == ["PMUL0102.json", "SNG0103.json", "MUL0104.json"]
    for dialogue in corpus.split("train"):
        assert not {"hospital", "police"} & set(dialogue.services)
        for turn in dialogue.user_turns():
            assert not {"hospital", "police"} & set(turn.gold_state)
    assert corpus.split("test") == raw_corpus.split("test")
    assert corpus.split("dev") == raw_corpus.split("dev")


# ============================================================================
# DST EXPORT
# ============================================================================

def test_render_context(raw_corpus):
    pmul0001 = _by_id(raw_corpus.split("test"))["PMUL0001.json"]
    rendered = render_context(pmul0001.turns[:2])
    assert rendered.splitlines()[0].startswith("USER: I need a place to dine")
    assert rendered.splitlines()[1].startswith("SYSTEM: There are 2")


def test_export_counts(corpus):
    assert len(export_dst(corpus, "single", "test")) == 8
    assert len(export_dst(corpus, "per_domain", "test")) == 14
    assert len(export_dst(corpus, "single", "train")) == 10


def test_export_context_is_full_prefix(corpus):
    examples = export_dst(corpus, "single", "test")
    last = [e for e in examples if e.dialogue_id == "MUL0002.json"][-1]
    assert last.context.count("\n") == 8
    assert last.context.endswith("USER: Thanks, that's everything. Goodbye.")
    assert sorted(last.target_state) == ["attraction", "restaurant", "taxi"]


def test_per_domain_targets_restricted(corpus):
    for example in export_dst(corpus, "per_domain", "test"):
        assert list(example.target_state) == [example.domain_filter]


def test_unknown_export_mode(corpus):
    with pytest.raises(ValueError):
        export_dst(corpus, "by_speaker", "test")


def test_write_dst_examples(corpus, tmp_path):
    paths = write_dst_examples(export_dst(corpus, "per_domain", "test"), tmp_path, "per_domain")
    assert sorted(p.name for p in paths) == ["dst_attraction.jsonl", "dst_restaurant.jsonl", "dst_taxi.jsonl"]
    lines = (tmp_path / "dst_taxi.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    record = json.loads(lines[0])
    assert record["domain"] == "taxi"
    assert record["state"] == {"taxi": {"departure": ["corpus christi"], "destination": ["bedouin"],
                                        "leaveat": ["18:00"]}}
