"""
PredictionSet: per-turn predicted states and responses, the file format shared
by `run` (writer) and `eval` (reader).

File layout (JSON, keys sorted, two-space indent):

    {
      "PMUL0001.json": [
        {"turn_index": 0, "state": {...}, "response_delex": "...",
         "response_surface": "...", "active_domain": "restaurant",
         "token_values": {...}},
        ...
      ]
    }

`turn_index` is the index of the user turn the prediction answers.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from dst import DialogueState
from errors import PredictionFormatError

logger = logging.getLogger(__name__)

_DIALOGUE_KEY_RE = re.compile(r'^\s{0,2}"([^"]+)"\s*:\s*\[', re.MULTILINE)


@dataclass
class TurnPrediction:
    turn_index: int
    state: DialogueState = field(default_factory=dict)
    response_delex: Optional[str] = None
    response_surface: Optional[str] = None
    active_domain: Optional[str] = None
    token_values: Dict[str, str] = field(default_factory=dict)
    error: Optional[str] = None

    def to_record(self) -> Dict:
        record = {
            "turn_index": self.turn_index,
            "state": self.state,
            "response_delex": self.response_delex,
            "response_surface": self.response_surface,
            "active_domain": self.active_domain,
            "token_values": self.token_values,
        }
        if self.error is not None:
            record["error"] = self.error
        return record


PredictionSet = Dict[str, List[TurnPrediction]]


def by_turn(predictions: List[TurnPrediction]) -> Dict[int, TurnPrediction]:
    return {p.turn_index: p for p in predictions}


def failed_dialogues(prediction_set: PredictionSet) -> List[str]:
    return sorted(d for d, turns in prediction_set.items() if any(t.error for t in turns))


def dumps_predictions(prediction_set: PredictionSet) -> str:
    records = {
        dialogue_id: [t.to_record() for t in sorted(turns, key=lambda t: t.turn_index)]
        for dialogue_id, turns in prediction_set.items()
    }
    return json.dumps(records, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def save_predictions(prediction_set: PredictionSet, path) -> Path:
    """Write a PredictionSet; identical sets give byte-identical files"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_predictions(prediction_set))
    logger.info(f"Saved predictions for {len(prediction_set)} dialogues to {path}")
    return path


# ============================================================================
# LOADING AND VALIDATION
# ============================================================================

def _dialogue_at(text: str, position: int) -> Optional[str]:
    """Last top-level dialogue key opened before a character offset"""
    found = None
    for match in _DIALOGUE_KEY_RE.finditer(text, 0, position):
        found = match.group(1)
    return found


def _check_state(state, dialogue_id: str, where: str) -> DialogueState:
    if not isinstance(state, dict):
        raise PredictionFormatError("'state' must be an object", dialogue_id, where)
    for domain, slots in state.items():
        if not isinstance(slots, dict):
            raise PredictionFormatError(f"state domain '{domain}' must map slot keys to value lists",
                                        dialogue_id, where)
        for key, values in slots.items():
            if isinstance(values, str):
                continue
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                raise PredictionFormatError(f"state slot '{domain}-{key}' must be a list of strings",
                                            dialogue_id, where)
    return {d: {k: [v] if isinstance(v, str) else list(v) for k, v in s.items()} for d, s in state.items()}


def parse_turn_record(record, dialogue_id: str, where: str) -> TurnPrediction:
    if not isinstance(record, dict):
        raise PredictionFormatError("turn entry must be an object", dialogue_id, where)
    if not isinstance(record.get("turn_index"), int):
        raise PredictionFormatError("turn entry needs an integer 'turn_index'", dialogue_id, where)

    for name in ("response_delex", "response_surface", "active_domain", "error"):
        if record.get(name) is not None and not isinstance(record[name], str):
            raise PredictionFormatError(f"'{name}' must be a string or null", dialogue_id, where)

    token_values = record.get("token_values") or {}
    if not isinstance(token_values, dict):
        raise PredictionFormatError("'token_values' must be an object", dialogue_id, where)

    return TurnPrediction(
        turn_index=record["turn_index"],
        state=_check_state(record.get("state") or {}, dialogue_id, where),
        response_delex=record.get("response_delex"),
        response_surface=record.get("response_surface"),
        active_domain=record.get("active_domain"),
        token_values={str(k): str(v) for k, v in token_values.items()},
        error=record.get("error"),
    )


def loads_predictions(text: str, source: str = "<string>") -> PredictionSet:
    """
    Parse PredictionSet JSON text.

    Raises:
        PredictionFormatError: with the file, line/column and dialogue id of
        the first problem found
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise PredictionFormatError(e.msg, _dialogue_at(text, e.pos), f"{source}:{e.lineno}:{e.colno}")

    if not isinstance(raw, dict):
        raise PredictionFormatError("top level must be an object keyed by dialogue id", location=source)

    prediction_set: PredictionSet = {}
    for dialogue_id, turns in raw.items():
        if not isinstance(turns, list):
            raise PredictionFormatError("value must be a list of turn entries", dialogue_id, source)
        prediction_set[dialogue_id] = [
            parse_turn_record(record, dialogue_id, f"{source}, entry {i}") for i, record in enumerate(turns)
        ]
    return prediction_set


def load_predictions(path) -> PredictionSet:
    path = Path(path)
    if not path.exists():
        raise PredictionFormatError("file not found", location=str(path))
    with open(path, "r", encoding="utf-8") as f:
        return loads_predictions(f.read(), source=str(path))
