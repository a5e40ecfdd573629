"""
DELEXICALIZATION: placeholder tokens for venue values in system responses

1. Token vocabulary per domain (data/delex_vocab.json)
2. delexicalize(): surface text -> text with [domain_slot] tokens + bindings
3. lexicalize(): the inverse, for the chat REPL and surface transcripts
4. parse_agent_output()/render_agent_output(): the Response / Token_values /
   Reasoning wire format spoken by every agent
5. gold_delex_turn(): the same delexicalization applied to gold system turns
"""

import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from corpus import Dialogue
from domains import ACTIVE_DOMAINS, TAXI
from dst import DialogueState, normalize_value
from errors import AgentOutputParseError, UnboundTokenError
from kb import BookingRecord, Venue, VenueDatabase

logger = logging.getLogger(__name__)

VOCAB_FILE = Path(__file__).parent / "data" / "delex_vocab.json"

TOKEN_RE = re.compile(r"\[([a-z]+)_([a-z]+)\]")

# Act slot names that refer to booking fields
_ACT_BOOKING_SLOTS = {"people": "bookpeople", "day": "bookday", "time": "booktime", "stay": "bookstay"}


@lru_cache(maxsize=1)
def load_vocabulary(path: str = str(VOCAB_FILE)) -> Dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def domain_vocabulary(domain: str) -> Dict[str, Dict]:
    """Token slots of one domain: slot -> {"keys": [...], "describe": "..."}"""
    return load_vocabulary()["domains"].get(domain, {})


def vocabulary_tokens(domain: str) -> List[str]:
    return [DelexToken(domain, slot).text for slot in domain_vocabulary(domain)]


@dataclass(frozen=True)
class DelexToken:
    domain: str
    slot: str

    @property
    def text(self) -> str:
        return f"[{self.domain}_{self.slot}]"

    @classmethod
    def parse(cls, text: str) -> Optional["DelexToken"]:
        match = TOKEN_RE.fullmatch(text.strip())
        if not match:
            return None
        return cls(match.group(1), match.group(2))

    def in_vocabulary(self) -> bool:
        return self.slot in domain_vocabulary(self.domain)


@dataclass
class DelexResponse:
    text: str
    token_values: Dict[str, str] = field(default_factory=dict)
    booking: Optional[BookingRecord] = None

    def tokens(self) -> List[str]:
        return [m.group(0) for m in TOKEN_RE.finditer(self.text)]

    def unbound_tokens(self) -> List[str]:
        return [t for t in dict.fromkeys(self.tokens()) if t not in self.token_values]


@dataclass
class AgentOutput:
    response: str
    token_values: Dict[str, str] = field(default_factory=dict)
    reasoning: str = ""

    def to_delex(self, booking: Optional[BookingRecord] = None) -> DelexResponse:
        """Keep only bindings whose token occurs in the response"""
        present = set(TOKEN_RE.findall(self.response))
        bindings = {
            token: value for token, value in self.token_values.items()
            if TOKEN_RE.fullmatch(token) and tuple(TOKEN_RE.fullmatch(token).groups()) in present
        }
        return DelexResponse(text=self.response, token_values=bindings, booking=booking)


# ============================================================================
# DELEXICALIZATION
# ============================================================================

def slot_for_key(domain: str, key: str) -> Optional[str]:
    """Token slot a venue attribute / state key binds to in a domain"""
    vocabulary = domain_vocabulary(domain)
    if key in vocabulary and (not vocabulary[key]["keys"] or key in vocabulary[key]["keys"]):
        return key
    for slot, spec in vocabulary.items():
        if key in spec["keys"]:
            return slot
    return None


def _candidate_values(domain: str, slot: str, value: str) -> List[str]:
    value = str(value).strip()
    variants = [value]
    lowered = value.lower()
    if lowered.startswith("the ") and len(lowered) > 4:
        variants.append(value[4:])
    return variants


def _collect_candidates(state: DialogueState, offered: Iterable[Venue], booking: Optional[BookingRecord],
                        count: Optional[int], domain: Optional[str],
                        extra_values: Optional[Mapping[str, str]]) -> List[Tuple[str, str]]:
    """(surface value, token) pairs in priority order: booking, venues, state, extras, count"""
    generic = set(load_vocabulary()["generic_values"])
    booking_fields = load_vocabulary()["booking_fields"]
    candidates: List[Tuple[str, str]] = []

    def add(d: str, slot: Optional[str], value) -> None:
        if slot is None or value is None or slot not in domain_vocabulary(d):
            return
        if normalize_value(str(value)) in generic or not str(value).strip():
            return
        token = DelexToken(d, slot).text
        for variant in _candidate_values(d, slot, value):
            candidates.append((variant, token))

    if booking is not None:
        for slot, field_name in booking_fields.items():
            add(booking.domain, slot, getattr(booking, field_name, None))

    for venue in offered:
        for key, value in venue.attributes.items():
            add(venue.domain, slot_for_key(venue.domain, key), value)

    for d, slots in state.items():
        for key, values in slots.items():
            for value in values:
                add(d, slot_for_key(d, key), value)

    for token, value in (extra_values or {}).items():
        parsed = DelexToken.parse(token)
        if parsed is not None:
            add(parsed.domain, parsed.slot, value)

    if count is not None and domain is not None:
        add(domain, "choice", str(count))

    return candidates


def delexicalize(utterance: str, state: Optional[DialogueState] = None, offered: Iterable[Venue] = (),
                 booking: Optional[BookingRecord] = None, count: Optional[int] = None,
                 domain: Optional[str] = None, extra_values: Optional[Mapping[str, str]] = None) -> DelexResponse:
    """
    Replace known values in a system utterance by canonical tokens.

    Values come from the booking record, the offered venues, the dialogue
    state, optional extra bindings and the current query count (only that
    exact number becomes [domain_choice]). Longer values are replaced first;
    matching ignores case and respects word boundaries. A token keeps the
    first value bound to it; later different values stay as text.

    Args:
        utterance: System text
        state: Dialogue state at this turn
        offered: Venues whose attributes may appear in the text
        booking: Booking issued at this turn
        count: Result count of the current query
        domain: Domain the count belongs to
        extra_values: Additional "[domain_slot]" -> value bindings

    Returns:
        DelexResponse with one binding per token used
    """
    candidates = _collect_candidates(state or {}, list(offered), booking, count, domain, extra_values)
    # Stable sort keeps priority order among equal lengths
    candidates.sort(key=lambda c: -len(c[0]))

    claimed: List[Tuple[int, int, str]] = []
    bindings: Dict[str, str] = {}

    for value, token in candidates:
        pattern = re.compile(rf"(?<!\w){re.escape(value)}(?!\w)", re.IGNORECASE)
        for match in pattern.finditer(utterance):
            start, end = match.span()
            if any(start < c_end and c_start < end for c_start, c_end, _ in claimed):
                continue
            surface = utterance[start:end]
            bound = bindings.get(token)
            if bound is not None and normalize_value(bound) != normalize_value(surface):
                continue
            bindings.setdefault(token, surface)
            claimed.append((start, end, token))

    if not claimed:
        return DelexResponse(text=utterance, token_values={}, booking=booking)

    pieces = []
    cursor = 0
    for start, end, token in sorted(claimed):
        pieces.append(utterance[cursor:start])
        pieces.append(token)
        cursor = end
    pieces.append(utterance[cursor:])
    return DelexResponse(text="".join(pieces), token_values=bindings, booking=booking)


def lexicalize(delex: DelexResponse) -> str:
    """
    Substitute every token by its binding.

    Raises:
        UnboundTokenError: naming the first token without a binding
    """
    def substitute(match: re.Match) -> str:
        token = match.group(0)
        if token not in delex.token_values:
            raise UnboundTokenError(token)
        return delex.token_values[token]

    return TOKEN_RE.sub(substitute, delex.text)


# ============================================================================
# AGENT OUTPUT FORMAT
# ============================================================================

_FIELD_RE = re.compile(r"^\W*(response|token_values|token values|reasoning)\W*:\s?", re.IGNORECASE | re.MULTILINE)
_PAIR_RE = re.compile(
    r"(\[[A-Za-z]+_[A-Za-z]+\]|\[?[A-Z]{2,}\]?)\s*-\s*(.*?)"
    r"(?=\s*,\s*(?:\[[A-Za-z]+_[A-Za-z]+\]|\[?[A-Z]{2,}\]?)\s*-\s|\s*$)",
    re.DOTALL,
)
_EMPTY_VALUES = {"", "none", "n/a", "null", "-"}


def _uppercase_pattern() -> re.Pattern:
    aliases = sorted(load_vocabulary()["uppercase_aliases"], key=len, reverse=True)
    return re.compile(r"(?<![\w\[])\[?(" + "|".join(aliases) + r")\]?(?![\w\]])")


def _canonical_key(raw_token: str, domain: Optional[str]) -> Optional[str]:
    parsed = DelexToken.parse(raw_token.lower())
    if parsed is not None:
        return parsed.text
    if domain is None:
        return None
    slot = load_vocabulary()["uppercase_aliases"].get(raw_token.strip("[]"))
    if slot is None or slot not in domain_vocabulary(domain):
        return None
    return DelexToken(domain, slot).text


def canonicalize_placeholders(text: str, domain: Optional[str]) -> str:
    """Rewrite uppercase placeholders (NAME, COUNT people, REFERENCE) as [domain_slot] tokens"""
    if domain is None:
        return text
    vocabulary = domain_vocabulary(domain)
    for phrase, replacement in load_vocabulary()["uppercase_phrases"].items():
        slot = TOKEN_RE.search(replacement.format(domain=domain)).group(2)
        if slot in vocabulary:
            text = re.sub(rf"(?<!\w){re.escape(phrase)}(?!\w)", replacement.format(domain=domain), text)

    def substitute(match: re.Match) -> str:
        canonical = _canonical_key(match.group(1), domain)
        return canonical if canonical is not None else match.group(0)

    return _uppercase_pattern().sub(substitute, text)


def parse_agent_output(raw: str, domain: Optional[str] = None) -> AgentOutput:
    """
    Parse the three-field agent format:

        Response: <delexicalized response>
        Token_values: [token] - value, [token] - value
        Reasoning: <free text>

    Token_values and Reasoning may be missing. Uppercase placeholders are
    mapped onto canonical tokens of `domain` (or of the domain of the
    bracketed tokens already present).

    Raises:
        AgentOutputParseError: when there is no Response field
    """
    raw = raw or ""
    fields: Dict[str, str] = {}
    matches = list(_FIELD_RE.finditer(raw))
    for i, match in enumerate(matches):
        name = match.group(1).lower().replace(" ", "_")
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        fields.setdefault(name, raw[match.end():end].strip())

    if "response" not in fields:
        raise AgentOutputParseError(raw)

    response = fields["response"]
    if domain is None:
        found = TOKEN_RE.search(response)
        domain = found.group(1) if found else None
    response = canonicalize_placeholders(response, domain)

    token_values: Dict[str, str] = {}
    values_text = fields.get("token_values", "")
    if values_text.strip().lower() not in _EMPTY_VALUES:
        for raw_token, value in _PAIR_RE.findall(values_text):
            key = _canonical_key(raw_token, domain)
            value = value.strip().rstrip(",").strip()
            if key is None or value.lower() in _EMPTY_VALUES:
                continue
            token_values.setdefault(key, value)

    return AgentOutput(response=response, token_values=token_values, reasoning=fields.get("reasoning", ""))


def render_agent_output(output: AgentOutput) -> str:
    pairs = ", ".join(f"{token} - {value}" for token, value in output.token_values.items())
    return f"Response: {output.response}\nToken_values: {pairs}\nReasoning: {output.reasoning}"


# ============================================================================
# GOLD SYSTEM TURNS
# ============================================================================

def _act_slot(domain: str, slot: str) -> Optional[str]:
    found = slot_for_key(domain, slot)
    if found is not None:
        return found
    booking_slot = _ACT_BOOKING_SLOTS.get(slot)
    if booking_slot and booking_slot in domain_vocabulary(domain):
        return booking_slot
    return None


def system_turn_domain(dialogue: Dialogue, position: int) -> Optional[str]:
    """Domain of a system turn: its first act domain, else the most recent user state domain"""
    for _, domain, _, _ in dialogue.turns[position].dialogue_acts:
        if domain in ACTIVE_DOMAINS:
            return domain
    for turn in reversed(dialogue.turns[:position]):
        if turn.is_user and turn.gold_state:
            domains = [d for d in turn.gold_state if d in ACTIVE_DOMAINS]
            if domains:
                return domains[-1]
    return None


def gold_delex_turn(dialogue: Dialogue, position: int, db: VenueDatabase) -> DelexResponse:
    """
    Delexicalize the gold system turn at `position` of `dialogue.turns`.

    Offered venues come from the turn's act values and from venue names found
    in the text; the count is the size of the query built from the preceding
    user state.
    """
    turn = dialogue.turns[position]
    previous = dialogue.turns[position - 1] if position > 0 else None
    state = (previous.gold_state if previous is not None else None) or {}
    domain = system_turn_domain(dialogue, position)

    offered: List[Venue] = []
    extra: Dict[str, str] = {}
    for _, act_domain, slot, value in turn.dialogue_acts:
        if act_domain == "booking":
            act_domain = domain
        if act_domain not in ACTIVE_DOMAINS or value in ("none", "?"):
            continue
        venue = None
        if slot == "name":
            venue = db.find_by_name(act_domain, value)
        elif slot == "trainid":
            venue = db.find_by_id(act_domain, value)
        if venue is not None and all(v.id != venue.id for v in offered):
            offered.append(venue)
        token_slot = _act_slot(act_domain, slot)
        if token_slot is not None and token_slot != "choice":
            extra.setdefault(DelexToken(act_domain, token_slot).text, value)

    for _, venue in db.mentions(turn.utterance, domains=[d for d in ACTIVE_DOMAINS if d != TAXI]):
        if venue is not None and all(v.id != venue.id for v in offered):
            offered.append(venue)

    count = None
    if domain is not None and db.has_table(domain):
        count = len(db.query(domain, db.constraints_from_state(domain, state)))

    return delexicalize(turn.utterance, state=state, offered=offered, count=count,
                        domain=domain, extra_values=extra)


def gold_delex_responses(dialogue: Dialogue, db: VenueDatabase) -> Dict[int, DelexResponse]:
    """Gold delexicalized response for every system turn, keyed by the preceding user turn index"""
    responses: Dict[int, DelexResponse] = {}
    for position, turn in enumerate(dialogue.turns):
        if turn.is_user or position == 0:
            continue
        responses[dialogue.turns[position - 1].index] = gold_delex_turn(dialogue, position, db)
    return responses
