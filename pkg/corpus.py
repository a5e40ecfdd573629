"""
MultiWOZ 2.2 corpus loading, filtering and DST training-data export

Expected layout under the corpus root:
    schema.json
    train/dialogues_*.json, dev/dialogues_*.json, test/dialogues_*.json
    dialog_acts.json            (optional, per-turn dialogue acts)
    goals.json or data.json     (optional, MultiWOZ goal annotations)

KEY LOGIC:
1. Parsing is lossless for every field of Turn/Dialogue
2. Hospital/police dialogues are dropped from train (frames stripped when
   active domains remain)
3. DST examples are built per user turn from the full prefix, not from a
   running state
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from domains import ACTIVE_DOMAINS, BOOKING_SLOTS, split_slot_name
from dst import DialogueState, clean_state, project_state, state_domains
from errors import CorpusLoadError, MalformedRecordError

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
SPLIT_ALIASES = {"validation": "dev", "val": "dev", "valid": "dev"}

USER = "user"
SYSTEM = "system"

# Act slot spellings found in MultiWOZ act files -> schema slot keys
ACT_SLOT_ALIASES = {
    "addr": "address",
    "post": "postcode",
    "id": "trainid",
    "train_id": "trainid",
    "trainid": "trainid",
    "fee": "entrancefee",
    "entrance fee": "entrancefee",
    "ticket": "price",
    "leave": "leaveat",
    "arrive": "arriveby",
    "dest": "destination",
    "depart": "departure",
    "car": "type",
    "open": "openhours",
    "time": "duration",
    "reference": "ref",
}

# Goal "reqt" spellings -> schema slot keys
GOAL_SLOT_ALIASES = {
    "trainid": "trainid",
    "entrance fee": "entrancefee",
    "car type": "type",
    "car": "type",
    "reference": "ref",
    "arriveby": "arriveby",
    "leaveat": "leaveat",
}

DialogueAct = Tuple[str, str, str, str]


# ============================================================================
# RECORD TYPES
# ============================================================================

@dataclass
class Turn:
    index: int
    speaker: str
    utterance: str
    gold_state: Optional[DialogueState] = None
    dialogue_acts: List[DialogueAct] = field(default_factory=list)

    @property
    def is_user(self) -> bool:
        return self.speaker == USER


@dataclass
class DomainGoal:
    informable: Dict[str, str] = field(default_factory=dict)
    requestable: List[str] = field(default_factory=list)
    booking: Dict[str, str] = field(default_factory=dict)


@dataclass
class Goal:
    domains: Dict[str, DomainGoal] = field(default_factory=dict)
    source: str = "annotation"


@dataclass
class Dialogue:
    dialogue_id: str
    services: List[str]
    turns: List[Turn]
    goal: Goal = field(default_factory=Goal)

    def user_turns(self) -> List[Turn]:
        return [t for t in self.turns if t.is_user]


@dataclass
class SlotDefinition:
    key: str
    is_categorical: bool
    possible_values: List[str] = field(default_factory=list)


@dataclass
class Schema:
    slots: Dict[str, Dict[str, SlotDefinition]] = field(default_factory=dict)

    def keys(self, domain: str) -> List[str]:
        return sorted(self.slots.get(domain, {}))

    def categorical(self, domain: str) -> Dict[str, List[str]]:
        return {
            key: definition.possible_values
            for key, definition in self.slots.get(domain, {}).items()
            if definition.is_categorical
        }


@dataclass
class Corpus:
    root: Path
    schema: Schema
    splits: Dict[str, List[Dialogue]]

    def split(self, name: str) -> List[Dialogue]:
        return self.splits.get(resolve_split(name), [])


@dataclass
class DstExample:
    dialogue_id: str
    turn_index: int
    context: str
    target_state: DialogueState
    domain_filter: Optional[str] = None

    def to_record(self) -> Dict:
        record = {"context": self.context, "state": self.target_state}
        if self.domain_filter:
            record["domain"] = self.domain_filter
        return record


def resolve_split(name: str) -> str:
    name = name.lower()
    name = SPLIT_ALIASES.get(name, name)
    if name not in SPLITS:
        raise ValueError(f"Unknown split '{name}', expected one of {', '.join(SPLITS)}")
    return name


# ============================================================================
# PARSING
# ============================================================================

def _read_json(path: Path):
    if not path.exists():
        raise CorpusLoadError(path, "file not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise CorpusLoadError(path, f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")


def parse_schema(records: List[Dict]) -> Schema:
    schema = Schema()
    for service in records:
        domain = service["service_name"].lower()
        for slot in service.get("slots", []):
            _, key = split_slot_name(slot["name"])
            schema.slots.setdefault(domain, {})[key] = SlotDefinition(
                key=key,
                is_categorical=bool(slot.get("is_categorical", False)),
                possible_values=[str(v).lower() for v in slot.get("possible_values", [])],
            )
    return schema


def parse_dialogue_acts(raw_turn_acts: Optional[Dict]) -> List[DialogueAct]:
    """
    Convert one turn of dialog_acts.json into (act-type, domain, slot, value) tuples.

    Example:
        {"dialog_act": {"Restaurant-Inform": [["food", "indian"]]}}
        -> [("inform", "restaurant", "food", "indian")]
    """
    acts: List[DialogueAct] = []
    if not raw_turn_acts:
        return acts
    dialog_act = raw_turn_acts.get("dialog_act", raw_turn_acts)
    for intent, pairs in dialog_act.items():
        if "-" in intent:
            domain, act_type = intent.split("-", 1)
        else:
            domain, act_type = "general", intent
        for pair in pairs or [["none", "none"]]:
            slot = str(pair[0]).lower() if len(pair) > 0 else "none"
            value = str(pair[1]) if len(pair) > 1 else "none"
            slot = ACT_SLOT_ALIASES.get(slot, slot)
            acts.append((act_type.lower(), domain.lower(), slot, value))
    return acts


def _state_from_frames(frames: List[Dict]) -> DialogueState:
    state: DialogueState = {}
    for frame in frames:
        slot_values = (frame.get("state") or {}).get("slot_values") or {}
        for slot_name, values in slot_values.items():
            domain, key = split_slot_name(slot_name)
            if isinstance(values, str):
                values = [values]
            values = [str(v) for v in values if str(v).strip()]
            if values:
                state.setdefault(domain, {})[key] = values
    return state


def parse_dialogue(record: Dict, acts: Optional[Dict] = None, goal: Optional[Goal] = None) -> Dialogue:
    """
    Parse one MultiWOZ 2.2 dialogue record.

    Acts and goal may be passed in (from dialog_acts.json / goal files) or be
    embedded in the record as written by dialogue_to_record().

    Raises:
        MalformedRecordError: carrying the dialogue id and turn index
    """
    dialogue_id = str(record.get("dialogue_id", "<unknown>"))
    if "turns" not in record:
        raise MalformedRecordError(dialogue_id, None, "missing 'turns'")

    services = [str(s).lower() for s in record.get("services", [])]
    turns: List[Turn] = []

    for position, raw_turn in enumerate(record["turns"]):
        try:
            speaker = raw_turn["speaker"].lower()
            utterance = raw_turn["utterance"]
            index = int(raw_turn.get("turn_id", position))
        except (KeyError, AttributeError, TypeError, ValueError) as e:
            raise MalformedRecordError(dialogue_id, position, f"bad turn field: {e}")

        expected = USER if position % 2 == 0 else SYSTEM
        if speaker != expected:
            raise MalformedRecordError(dialogue_id, index, f"expected {expected} turn, found {speaker}")

        try:
            gold_state = _state_from_frames(raw_turn.get("frames", [])) if speaker == USER else None
        except (ValueError, AttributeError, TypeError) as e:
            raise MalformedRecordError(dialogue_id, index, f"bad frame: {e}")

        if "dialogue_acts" in raw_turn:
            turn_acts = [tuple(a) for a in raw_turn["dialogue_acts"]]
        else:
            turn_acts = parse_dialogue_acts((acts or {}).get(str(raw_turn.get("turn_id", position))))

        turns.append(Turn(index=index, speaker=speaker, utterance=utterance,
                          gold_state=gold_state, dialogue_acts=turn_acts))

    for turn in turns:
        for domain in state_domains(turn.gold_state or {}):
            if domain not in services:
                logger.debug(f"{dialogue_id}: domain '{domain}' in state but not in services, adding it")
                services.append(domain)

    if goal is None and "goal" in record:
        goal = goal_from_record(record["goal"])

    dialogue = Dialogue(dialogue_id=dialogue_id, services=services, turns=turns)
    dialogue.goal = goal if goal is not None else reconstruct_goal(dialogue)
    return dialogue


# ============================================================================
# GOALS
# ============================================================================

def parse_goal_annotation(raw_goal: Dict, schema: Optional[Schema] = None) -> Goal:
    """
    Parse a MultiWOZ goal annotation ({domain: {info, reqt, book, ...}}).

    Requestables are mapped onto schema slot keys; a booking in the goal adds
    the "ref" requestable.
    """
    goal = Goal(source="annotation")
    for domain, content in (raw_goal or {}).items():
        domain = domain.lower()
        if not isinstance(content, dict) or not content:
            continue
        info = {str(k).lower().replace(" ", ""): str(v) for k, v in (content.get("info") or {}).items()}
        book = {str(k).lower(): str(v) for k, v in (content.get("book") or {}).items()
                if k not in ("invalid", "pre_invalid")}

        requestable: List[str] = []
        for slot in content.get("reqt") or []:
            slot = str(slot).lower()
            slot = GOAL_SLOT_ALIASES.get(slot, slot).replace(" ", "")
            if schema is None or not schema.slots.get(domain) or slot in schema.slots[domain]:
                requestable.append(slot)
        if book and "ref" not in requestable:
            requestable.append("ref")

        if info or requestable or book:
            goal.domains[domain] = DomainGoal(informable=info, requestable=requestable, booking=book)
    return goal


def goal_from_record(raw: Dict) -> Goal:
    """Inverse of goal_to_record()"""
    goal = Goal(source=raw.get("source", "annotation"))
    for domain, content in raw.get("domains", {}).items():
        goal.domains[domain] = DomainGoal(
            informable=dict(content.get("informable", {})),
            requestable=list(content.get("requestable", [])),
            booking=dict(content.get("booking", {})),
        )
    return goal


def goal_to_record(goal: Goal) -> Dict:
    return {
        "source": goal.source,
        "domains": {
            domain: {
                "informable": dict(g.informable),
                "requestable": list(g.requestable),
                "booking": dict(g.booking),
            }
            for domain, g in goal.domains.items()
        },
    }


def reconstruct_goal(dialogue: Dialogue) -> Goal:
    """
    Rebuild a goal when no annotation exists.

    Informables and booking fields come from the final user state; requestables
    from the user's Request acts.
    """
    goal = Goal(source="reconstructed")
    final_state: DialogueState = {}
    for turn in dialogue.turns:
        if turn.is_user and turn.gold_state is not None:
            final_state = turn.gold_state

    for domain, slots in final_state.items():
        domain_goal = goal.domains.setdefault(domain, DomainGoal())
        for key, values in slots.items():
            if key in BOOKING_SLOTS:
                domain_goal.booking[BOOKING_SLOTS[key]] = values[0]
            else:
                domain_goal.informable[key] = values[0]

    for turn in dialogue.turns:
        if not turn.is_user:
            continue
        for act_type, domain, slot, _ in turn.dialogue_acts:
            if act_type == "request" and domain in ACTIVE_DOMAINS and slot != "none":
                domain_goal = goal.domains.setdefault(domain, DomainGoal())
                if slot not in domain_goal.requestable:
                    domain_goal.requestable.append(slot)

    for domain_goal in goal.domains.values():
        if domain_goal.booking and "ref" not in domain_goal.requestable:
            domain_goal.requestable.append("ref")
    return goal


def _load_goal_annotations(root: Path) -> Dict[str, Dict]:
    for name in ("goals.json", "data.json"):
        path = root / name
        if path.exists():
            raw = _read_json(path)
            goals = {}
            for dialogue_id, entry in raw.items():
                goals[dialogue_id] = entry.get("goal", entry) if isinstance(entry, dict) else {}
            logger.info(f"Loaded {len(goals)} goal annotations from {path}")
            return goals
    logger.info("No goal annotation file found, goals will be reconstructed from states and acts")
    return {}


# ============================================================================
# LOADING
# ============================================================================

def load_corpus(root_path) -> Corpus:
    """
    Load the MultiWOZ 2.2 distribution.

    Args:
        root_path: Directory holding schema.json and the train/dev/test folders

    Returns:
        Corpus with dialogues grouped by split, in file order

    Raises:
        CorpusLoadError: missing or undecodable file (names the file)
        MalformedRecordError: record that does not parse (names dialogue and turn)
    """
    root = Path(root_path)
    schema = parse_schema(_read_json(root / "schema.json"))

    acts_path = root / "dialog_acts.json"
    all_acts = _read_json(acts_path) if acts_path.exists() else {}
    raw_goals = _load_goal_annotations(root)

    splits: Dict[str, List[Dialogue]] = {}
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            raise CorpusLoadError(split_dir, "split directory not found")

        dialogues: List[Dialogue] = []
        for path in sorted(split_dir.glob("dialogues_*.json")):
            records = _read_json(path)
            if not isinstance(records, list):
                raise CorpusLoadError(path, "expected a list of dialogues")
            for record in records:
                dialogue_id = str(record.get("dialogue_id", "<unknown>"))
                goal = None
                if dialogue_id in raw_goals:
                    goal = parse_goal_annotation(raw_goals[dialogue_id], schema)
                dialogues.append(parse_dialogue(record, all_acts.get(dialogue_id), goal))

        splits[split] = dialogues
        logger.info(f"Loaded {len(dialogues)} {split} dialogues")

    return Corpus(root=root, schema=schema, splits=splits)


# ============================================================================
# SERIALIZATION
# ============================================================================

def dialogue_to_record(dialogue: Dialogue) -> Dict:
    """
    Serialize a Dialogue in MultiWOZ 2.2 shape, with acts and goal embedded so
    that parse_dialogue() restores an equal Dialogue.
    """
    turns = []
    for turn in dialogue.turns:
        frames = []
        if turn.is_user:
            state = turn.gold_state or {}
            for domain in dialogue.services:
                slot_values = {f"{domain}-{key}": list(values) for key, values in state.get(domain, {}).items()}
                frames.append({"service": domain, "state": {"slot_values": slot_values}})
        turns.append({
            "turn_id": str(turn.index),
            "speaker": turn.speaker.upper(),
            "utterance": turn.utterance,
            "frames": frames,
            "dialogue_acts": [list(a) for a in turn.dialogue_acts],
        })
    return {
        "dialogue_id": dialogue.dialogue_id,
        "services": list(dialogue.services),
        "turns": turns,
        "goal": goal_to_record(dialogue.goal),
    }


# ============================================================================
# FILTERING
# ============================================================================

def _strip_inactive(dialogue: Dialogue) -> Dialogue:
    turns = []
    for turn in dialogue.turns:
        state = clean_state(turn.gold_state) if turn.gold_state is not None else None
        turns.append(Turn(index=turn.index, speaker=turn.speaker, utterance=turn.utterance,
                          gold_state=state, dialogue_acts=list(turn.dialogue_acts)))
    goal = Goal(
        domains={d: g for d, g in dialogue.goal.domains.items() if d in ACTIVE_DOMAINS},
        source=dialogue.goal.source,
    )
    services = [s for s in dialogue.services if s in ACTIVE_DOMAINS]
    return Dialogue(dialogue_id=dialogue.dialogue_id, services=services, turns=turns, goal=goal)


def filter_active(corpus: Corpus) -> Corpus:
    """
    Remove hospital/police conversations from the training split.

    Training dialogues left with no active domain are dropped; the rest keep
    only their active-domain frames. Validation and test are untouched.
    """
    kept: List[Dialogue] = []
    dropped = 0
    for dialogue in corpus.splits.get("train", []):
        if not any(s in ACTIVE_DOMAINS for s in dialogue.services):
            dropped += 1
            continue
        kept.append(_strip_inactive(dialogue))

    logger.info(f"filter_active: dropped {dropped} training dialogues, kept {len(kept)}")
    splits = dict(corpus.splits)
    splits["train"] = kept
    return Corpus(root=corpus.root, schema=corpus.schema, splits=splits)


# ============================================================================
# CONTEXT RENDERING AND DST EXPORT
# ============================================================================

def render_context(turns: List[Turn]) -> str:
    """USER:/SYSTEM: prefixed lines joined by newlines"""
    return "\n".join(f"{turn.speaker.upper()}: {turn.utterance}" for turn in turns)


def export_dst(corpus: Corpus, mode: str = "single", split: str = "train") -> List[DstExample]:
    """
    Build DST examples, one prefix per user turn.

    Args:
        corpus: Active-filtered corpus
        mode: "single" (full state) or "per_domain" (one example per domain
            present in the turn's state, target restricted to that domain)
        split: Split to export

    Returns:
        List of DstExample in dialogue/turn order
    """
    if mode not in ("single", "per_domain"):
        raise ValueError(f"Unknown export mode '{mode}'")

    examples: List[DstExample] = []
    for dialogue in corpus.split(split):
        for position, turn in enumerate(dialogue.turns):
            if not turn.is_user:
                continue
            context = render_context(dialogue.turns[:position + 1])
            state = clean_state(turn.gold_state)

            if mode == "single":
                examples.append(DstExample(dialogue.dialogue_id, turn.index, context, state))
                continue

            for domain in sorted(state_domains(state)):
                examples.append(DstExample(dialogue.dialogue_id, turn.index, context,
                                           project_state(state, domain), domain_filter=domain))
    return examples


def write_jsonl(records: List[Dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    logger.info(f"Wrote {len(records)} records to {path}")
    return path


def write_dst_examples(examples: List[DstExample], output_dir, mode: str) -> List[Path]:
    """
    Write DST exports as JSON lines.

    single mode -> dst_single.jsonl; per_domain mode -> dst_<domain>.jsonl per domain.
    """
    output_dir = Path(output_dir)
    if mode == "single":
        return [write_jsonl([e.to_record() for e in examples], output_dir / "dst_single.jsonl")]

    by_domain: Dict[str, List[Dict]] = {}
    for example in examples:
        by_domain.setdefault(example.domain_filter, []).append(example.to_record())
    return [write_jsonl(records, output_dir / f"dst_{domain}.jsonl")
            for domain, records in sorted(by_domain.items())]


# ============================================================================
# TURN DOMAIN
# ============================================================================

def act_domains(turn: Turn) -> List[str]:
    """Active domains named by a turn's dialogue acts, in act order"""
    domains: List[str] = []
    for _, domain, _, _ in turn.dialogue_acts:
        if domain in ACTIVE_DOMAINS and domain not in domains:
            domains.append(domain)
    return domains
