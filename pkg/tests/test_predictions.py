import json

import pytest

from errors import PredictionFormatError
from predictions import (TurnPrediction, by_turn, dumps_predictions, failed_dialogues, load_predictions,
                         loads_predictions, save_predictions)


def _prediction_set():
    return {
        "PMUL0001.json": [
            TurnPrediction(2, {"restaurant": {"food": ["dontcare"]}}, "i recommend [restaurant_name] .",
                           "i recommend curry garden .", "restaurant", {"[restaurant_name]": "curry garden"}),
            TurnPrediction(0, {"restaurant": {"area": ["centre"]}}, "what food ?", "what food ?", "restaurant"),
        ],
        "MUL0002.json": [TurnPrediction(0, {}, None, None, None, {}, error="AgentTransportError: gave up")],
    }


def test_saved_file_is_deterministic(tmp_path):
    first = save_predictions(_prediction_set(), tmp_path / "a.json")
    second = save_predictions(_prediction_set(), tmp_path / "b.json")
    assert first.read_bytes() == second.read_bytes()
    text = first.read_text(encoding="utf-8")
    assert text.index('"MUL0002.json"') < text.index('"PMUL0001.json"')
    assert '\n  "MUL0002.json": [' in text


def test_turns_sorted_and_reloaded(tmp_path):
    path = save_predictions(_prediction_set(), tmp_path / "predictions.json")
    loaded = load_predictions(path)
    assert [t.turn_index for t in loaded["PMUL0001.json"]] == [0, 2]
    assert by_turn(loaded["PMUL0001.json"])[2].token_values == {"[restaurant_name]": "curry garden"}
    assert loaded["MUL0002.json"][0].error == "AgentTransportError: gave up"


def test_failed_dialogues():
    assert failed_dialogues(_prediction_set()) == ["MUL0002.json"]


def test_bare_string_state_values_wrapped():
    text = json.dumps({"PMUL0001.json": [{"turn_index": 0, "state": {"restaurant": {"area": "centre"}}}]})
    assert loads_predictions(text)["PMUL0001.json"][0].state == {"restaurant": {"area": ["centre"]}}


def test_malformed_entry_names_the_dialogue():
    records = json.loads(dumps_predictions(_prediction_set()))
    records["MUL0002.json"][0]["turn_index"] = "zero"
    with pytest.raises(PredictionFormatError) as excinfo:
        loads_predictions(json.dumps(records), source="predictions.json")
    assert excinfo.value.dialogue_id == "MUL0002.json"
    assert "MUL0002.json" in str(excinfo.value)


def test_bad_state_shape():
    text = json.dumps({"PMUL0001.json": [{"turn_index": 0, "state": {"restaurant": ["centre"]}}]})
    with pytest.raises(PredictionFormatError) as excinfo:
        loads_predictions(text)
    assert excinfo.value.dialogue_id == "PMUL0001.json"


def test_syntax_error_reports_position_and_dialogue():
    text = '{\n  "PMUL0001.json": [\n    {"turn_index": 0,, "state": {}}\n  ]\n}\n'
    with pytest.raises(PredictionFormatError) as excinfo:
        loads_predictions(text, source="predictions.json")
    assert excinfo.value.dialogue_id == "PMUL0001.json"
    assert excinfo.value.location.startswith("predictions.json:3:")


def test_top_level_must_be_object():
    with pytest.raises(PredictionFormatError):
        loads_predictions("[]")


def test_missing_file(tmp_path):
    with pytest.raises(PredictionFormatError) as excinfo:
        load_predictions(tmp_path / "absent.json")
    assert "absent.json" in excinfo.value.location
