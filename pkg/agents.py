"""
Domain agents: state trackers and responders

Two implementations of each:
1. Template agents: deterministic rules over the lexicon and the venue
   database, usable without any model
2. LLM agents: prompt assembly, chat-completion call, output parsing

Plus the optional LLM dialog manager used for domain detection.
"""

import json
import logging
import os
import random
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Literal, Optional, Protocol, Sequence, Tuple, Union

import httpx
import openai
from openai import OpenAI
from pydantic import BaseModel, ConfigDict, TypeAdapter, ValidationError, field_validator, model_validator
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from corpus import DstExample, Turn, render_context
from domains import ACTIVE_DOMAINS, BOOKABLE_DOMAINS, BOOKING_SLOTS, DOMAIN_NOUNS, TAXI, TRAIN
from delex import DelexResponse, DelexToken, domain_vocabulary, parse_agent_output, slot_for_key
from dst import DialogueState, clean_state, normalize_value
from errors import AgentConfigError, AgentOutputParseError, AgentTransportError, BookingError
from kb import Venue, VenueDatabase, VenueSummary, issue_booking
from phrases import PhraseMatcher, load_lexicon, normalize_text

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "DARD_LLM_API_KEY"

SCENARIOS = ("suggesting", "no_result", "booking", "ending")
PROMPT_SECTIONS = ("instructions", "Delexicalization", "how to respond", "output format", "examples")


# ============================================================================
# AGENT SPECS
# ============================================================================

class AgentSpec(BaseModel):
    """One configured agent; `domain` None means the agent covers every domain"""

    model_config = ConfigDict(extra="forbid")

    name: str
    kind: Literal["template", "llm"] = "template"
    domain: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    seed: int = 0
    policy: Literal["suggest_and_ask", "ask_only"] = "suggest_and_ask"
    num_examples: int = 50
    examples_per_scenario: int = 2
    temperature: float = 0.0
    max_tokens: int = 256
    timeout: float = 60.0
    max_retries: int = 3
    backoff_seconds: float = 1.0
    max_concurrency: int = 4
    api_key_env: str = DEFAULT_API_KEY_ENV

    @field_validator("domain")
    @classmethod
    def _active_domain(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in ACTIVE_DOMAINS:
            raise ValueError(f"domain must be one of {', '.join(ACTIVE_DOMAINS)} or null, got '{value}'")
        return value

    @model_validator(mode="after")
    def _llm_needs_model(self) -> "AgentSpec":
        if self.kind == "llm" and not self.model:
            raise ValueError(f"llm agent '{self.name}' needs a 'model'")
        return self


@dataclass
class ResponseExample:
    """One gold system turn prepared as a responder training / in-context example"""
    dialogue_id: str
    turn_index: int
    domain: Optional[str]
    context: str
    venues: str
    response: str
    token_values: Dict[str, str] = field(default_factory=dict)
    scenario: str = "suggesting"

    def to_record(self) -> Dict:
        return {
            "context": self.context,
            "venues": self.venues,
            "response": self.response,
            "token_values": self.token_values,
            "domain": self.domain,
            "scenario": self.scenario,
        }


def classify_scenario(delex_text: str, count: Optional[int], domain: Optional[str], is_last: bool) -> str:
    """Scenario group of a gold response: booking, no_result, ending or suggesting"""
    if domain and f"[{domain}_ref]" in delex_text:
        return "booking"
    if is_last:
        return "ending"
    if count == 0:
        return "no_result"
    return "suggesting"


# ============================================================================
# PROMPTS
# ============================================================================

@dataclass
class PromptBundle:
    task: str
    domain: Optional[str]
    instructions: str
    delexicalization: str
    guidelines: str
    output_format: str
    examples: str
    conversation: str
    venues: str = ""

    def sections(self) -> List[Tuple[str, str]]:
        return list(zip(PROMPT_SECTIONS, (self.instructions, self.delexicalization, self.guidelines,
                                          self.output_format, self.examples)))

    def render(self) -> str:
        parts = [f"<{name}>\n{body.strip()}\n</{name}>" for name, body in self.sections()]
        parts.append(f"Conversation:\n{self.conversation}")
        if self.venues:
            parts.append(self.venues)
        return "\n\n".join(parts) + "\n"


def _noun(domain: Optional[str]) -> str:
    return DOMAIN_NOUNS.get(domain, "venues") if domain else "venues"


def _singular(domain: Optional[str]) -> str:
    return domain or "venue"


def _dst_sections(domain: Optional[str], schema_keys: Dict[str, List[str]]) -> Tuple[str, str, str, str]:
    scope = f"the {domain} domain" if domain else "all domains"
    instructions = (
        f"You track what the user wants from a travel information desk in Cambridge, for {scope}.\n"
        "Read the whole conversation and write down every constraint the user has stated so far.\n"
        "Only report constraints that come from the USER lines."
    )
    domains = [domain] if domain else list(ACTIVE_DOMAINS)
    slot_lines = [f"{d}: {', '.join(schema_keys.get(d, []))}" for d in domains]
    delexicalization = "You may only use these slot keys:\n" + "\n".join(slot_lines)
    guidelines = (
        "1. Copy values the way the user said them, lowercased.\n"
        "2. Use \"dontcare\" when the user says any value is fine.\n"
        "3. Leave out slots the user never mentioned.\n"
        "4. Write times as HH:MM."
    )
    output_format = (
        "State: a JSON object mapping each domain to its slots, each slot to a list of values.\n"
        "Example: State: {\"restaurant\": {\"area\": [\"centre\"]}}"
    )
    return instructions, delexicalization, guidelines, output_format


def _respond_sections(domain: Optional[str]) -> Tuple[str, str, str, str]:
    domains = [domain] if domain else list(ACTIVE_DOMAINS)
    noun = _noun(domain)
    instructions = (
        f"You are the {_singular(domain)} desk of a Cambridge travel information service.\n"
        "You receive the conversation so far, the number of "
        f"{noun} matching the user's request, and the details of one of them when any match.\n"
        "Write the next SYSTEM reply in delexicalized form and list the values of the tokens you used."
    )
    lines = []
    for d in domains:
        for slot, spec in domain_vocabulary(d).items():
            lines.append(f"{len(lines) + 1}. {DelexToken(d, slot).text} - {spec['describe']}")
    delexicalization = "Write these tokens instead of the actual values:\n" + "\n".join(lines)

    hold = " Mention that the table is held for 15 minutes." if domain in (None, "restaurant") else ""
    guidelines = (
        "1. Keep the reply to one or two short sentences.\n"
        "2. Give the user everything they asked for in their last message (phone, address, postcode and so on).\n"
        f"3. After booking, always give the booking reference.{hold}\n"
        f"4. When several {noun} match, say how many with the choice token and suggest one of them by name.\n"
        "5. Do not book until the user has given every booking detail; ask for the missing ones first.\n"
        f"6. When nothing matches, apologise and say no {_singular(domain)} fits the request.\n"
        "7. When the user is done, thank them for getting in touch and say goodbye."
    )
    output_format = (
        "Response: <the delexicalized reply>\n"
        "Token_values: [token] - value, [token] - value\n"
        "Reasoning: <one sentence on why you replied this way>"
    )
    return instructions, delexicalization, guidelines, output_format


def sample_dst_examples(pool: Sequence[DstExample], n: int, seed: int) -> List[DstExample]:
    """Seeded sample of in-context DST examples; the same seed gives the same examples"""
    if n >= len(pool):
        return list(pool)
    return random.Random(seed).sample(list(pool), n)


def sample_response_examples(pool: Sequence[ResponseExample], per_scenario: int, seed: int) -> Dict[str, List[ResponseExample]]:
    rng = random.Random(seed)
    grouped: Dict[str, List[ResponseExample]] = {}
    for scenario in SCENARIOS:
        candidates = [e for e in pool if e.scenario == scenario]
        grouped[scenario] = candidates if per_scenario >= len(candidates) else rng.sample(candidates, per_scenario)
    return grouped


def build_prompt(domain: Optional[str], context: str, summary: Optional[VenueSummary], examples: Sequence,
                 task: str, seed: int = 0, num_examples: int = 50, examples_per_scenario: int = 2,
                 schema_keys: Optional[Dict[str, List[str]]] = None) -> PromptBundle:
    """
    Assemble an agent prompt.

    Args:
        domain: Agent domain, or None for a single all-domain agent
        context: Rendered conversation (USER:/SYSTEM: lines)
        summary: Venue summary (respond task only)
        examples: Example pool: DstExample for "dst", ResponseExample for "respond"
        task: "dst" or "respond"
        seed: Sampling seed; only the example block depends on it
        num_examples: DST examples to sample
        examples_per_scenario: Response examples per scenario group
        schema_keys: Slot keys per domain listed in DST prompts

    Returns:
        PromptBundle whose render() is byte-identical for identical inputs
    """
    if task == "dst":
        instructions, delexicalization, guidelines, output_format = _dst_sections(domain, schema_keys or {})
        blocks = []
        for example in sample_dst_examples(examples, num_examples, seed):
            state = json.dumps(example.target_state, sort_keys=True)
            blocks.append(f"Conversation:\n{example.context}\nState: {state}")
        return PromptBundle(task, domain, instructions, delexicalization, guidelines, output_format,
                            "\n\n".join(blocks), context)

    if task == "respond":
        instructions, delexicalization, guidelines, output_format = _respond_sections(domain)
        blocks = []
        for scenario, chosen in sample_response_examples(examples, examples_per_scenario, seed).items():
            for example in chosen:
                pairs = ", ".join(f"{t} - {v}" for t, v in example.token_values.items())
                blocks.append(
                    f"<{scenario}>\nConversation:\n{example.context}\n{example.venues}\n"
                    f"Response: {example.response}\nToken_values: {pairs}\n</{scenario}>"
                )
        venues = summary.render() if summary is not None else ""
        return PromptBundle(task, domain, instructions, delexicalization, guidelines, output_format,
                            "\n\n".join(blocks), context, venues)

    raise ValueError(f"Unknown prompt task '{task}'")


_TRACKER_STATE = TypeAdapter(Dict[str, Dict[str, Optional[Union[str, List[Optional[str]]]]]],
                             config=ConfigDict(strict=True))


def parse_dst_output(raw: str, domain: Optional[str]) -> DialogueState:
    """
    Read the state JSON from a tracker reply.

    A flat {slot: values} object is taken to belong to `domain`.

    Raises:
        AgentOutputParseError: no JSON object in the reply
        or the object is not {domain: {slot: value list}}
    """
    start, end = raw.find("{"), raw.rfind("}")
    if start < 0 or end < start:
        raise AgentOutputParseError(raw, "no state object in tracker output")
    try:
        parsed = json.loads(raw[start:end + 1])
    except json.JSONDecodeError as e:
        raise AgentOutputParseError(raw, f"state object is not valid JSON ({e.msg})")
    if not isinstance(parsed, dict):
        raise AgentOutputParseError(raw, "state must be a JSON object")

    nested = parsed and all(isinstance(v, dict) for v in parsed.values())
    if domain and not nested:
        parsed = {domain: parsed}
    try:
        _TRACKER_STATE.validate_python(parsed)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise AgentOutputParseError(raw, f"malformed state at {where}: {first['msg']}")
    state = clean_state(parsed)
    if domain:
        state = {d: s for d, s in state.items() if d == domain}
    return state


# ============================================================================
# RULE LEXICON
# ============================================================================

_NUMBER = r"(\d{1,2}|one|two|three|four|five|six|seven|eight|nine|ten)"
_PEOPLE_RE = re.compile(rf"\b(?:table for|party of|group of)\s+{_NUMBER}\b|\b{_NUMBER}\s+(?:people|persons|guests|adults|of us|tickets)\b")
_STAY_RE = re.compile(rf"\b{_NUMBER}\s+nights?\b|\bfor\s+{_NUMBER}\s+days\b")
_STARS_RE = re.compile(rf"\b{_NUMBER}\s+stars?\b")
_TIME_RE = re.compile(
    r"\b(leave after|leaving after|leave at|leaving at|leaves at|departing at|depart at|after|"
    r"arrive by|arriving by|arrive at|get there by|be there by|by|at|for|around)\s+"
    r"(\d{1,2})(?:\s(\d{2}))?\s?(am|pm)?\b"
)
_LEAVE_WORDS = {"leave after", "leaving after", "leave at", "leaving at", "leaves at", "departing at", "depart at", "after"}
_ARRIVE_WORDS = {"arrive by", "arriving by", "arrive at", "get there by", "be there by", "by"}
_FROM_WORDS = {"from", "leaving", "leaves", "departing", "depart"}
_TO_WORDS = {"to", "into"}

# Which system words ask about which slot (for "i don't care" answers)
_QUESTION_SLOTS = (("part of town", "area"), ("area", "area"), ("price", "pricerange"),
                   ("food", "food"), ("cuisine", "food"), ("type", "type"))

# Request keys spelled differently from vocabulary keys
_REQUEST_KEYS = {"attraction": {"price": "entrancefee"}, "train": {"trainid": "trainid"}}

# Order in which the template responder asks about unconstrained slots
_FOLLOW_UP_SLOTS = {
    "restaurant": (("food", "what type of food would you like ?"),
                   ("area", "what area of town would you prefer ?"),
                   ("pricerange", "what price range are you looking for ?")),
    "hotel": (("area", "what area would you like to stay in ?"),
              ("pricerange", "what price range would you like ?"),
              ("type", "would you prefer a hotel or a guesthouse ?")),
    "attraction": (("type", "what type of attraction are you interested in ?"),
                   ("area", "which part of town would you like to visit ?")),
    "train": (("departure", "where will you be departing from ?"),
              ("destination", "where are you travelling to ?"),
              ("day", "what day would you like to travel ?"),
              ("leaveat", "what time would you like to leave ?")),
}

_BOOKING_QUESTIONS = {
    "people": "how many people is the booking for ?",
    "day": "what day would you like the booking for ?",
    "time": "what time would you like the booking for ?",
    "stay": "how many nights will you be staying ?",
}

_TAXI_QUESTIONS = (("departure", "where will you be leaving from ?"),
                   ("destination", "where would you like to go ?"))


@dataclass
class SlotHit:
    position: int
    options: Dict[str, str]  # domain -> slot key
    value: str


class RuleLexicon:
    """Matchers built once from data/lexicon.json"""

    def __init__(self, lexicon: Dict):
        self.lexicon = lexicon
        self.domains = PhraseMatcher(
            (phrase, domain) for domain, phrases in lexicon["domain_keywords"].items() for phrase in phrases
        )
        self.values = {group: PhraseMatcher.from_groups(values) for group, values in lexicon["value_groups"].items()}
        self.group_slots: Dict[str, Dict[str, str]] = {}
        for domain, slots in lexicon["domain_slots"].items():
            for key, group in slots.items():
                self.group_slots.setdefault(group, {})[domain] = key
        self.dontcare = PhraseMatcher.from_groups(lexicon["dontcare_phrases"])
        self.indifference = PhraseMatcher((p, True) for p in lexicon["indifference_phrases"])
        self.requests = PhraseMatcher.from_groups(lexicon["request_phrases"])
        self.closing = PhraseMatcher((p, True) for p in lexicon["closing_phrases"])
        self.booking = PhraseMatcher((p, True) for p in lexicon["booking_phrases"])
        self.numbers: Dict[str, int] = lexicon["number_words"]

    def number(self, token: str) -> str:
        return str(self.numbers.get(token, token))

    def key_owners(self, key: str) -> Dict[str, str]:
        """Domains whose lexicon tracks a slot key"""
        return {d: key for d, slots in self.lexicon["domain_slots"].items() if key in slots}


@lru_cache(maxsize=1)
def get_rule_lexicon() -> RuleLexicon:
    return RuleLexicon(load_lexicon())


def domain_anchors(text: str, db: Optional[VenueDatabase]) -> List[Tuple[int, str]]:
    """(position, domain) of domain keywords and venue names in normalized text"""
    rules = get_rule_lexicon()
    anchors = [(hit.start, domain) for hit in rules.domains.find_all(text) for domain in hit.labels]
    if db is not None:
        anchors.extend((hit.start, venue.domain) for hit, venue in db.mentions(text) if venue is not None
                       and venue.domain in ACTIVE_DOMAINS)
    return sorted(anchors)


def _previous_word(text: str, position: int, words: int = 1) -> str:
    return " ".join(text[:position].split()[-words:])


def extract_slot_hits(text: str, previous_system: str, db: Optional[VenueDatabase]) -> List[SlotHit]:
    """All slot evidence in one normalized user utterance"""
    rules = get_rule_lexicon()
    hits: List[SlotHit] = []

    for group, matcher in rules.values.items():
        if group == "station":
            continue
        options = rules.group_slots.get(group, {})
        for hit in matcher.find_all(text):
            hits.append(SlotHit(hit.start, dict(options), hit.label))

    for hit in rules.dontcare.find_all(text):
        hits.append(SlotHit(hit.start, rules.key_owners(hit.label), "dontcare"))

    if rules.indifference.contains(text) and not rules.dontcare.find_all(text):
        for word, key in _QUESTION_SLOTS:
            if word in previous_system:
                hits.append(SlotHit(len(text), rules.key_owners(key), "dontcare"))
                break

    for match in _PEOPLE_RE.finditer(text):
        number = match.group(1) or match.group(2)
        options = {"restaurant": "bookpeople", "hotel": "bookpeople", "train": "bookpeople"}
        if "ticket" in match.group(0):
            options = {"train": "bookpeople"}
        hits.append(SlotHit(match.start(), options, rules.number(number)))

    for match in _STAY_RE.finditer(text):
        hits.append(SlotHit(match.start(), {"hotel": "bookstay"}, rules.number(match.group(1) or match.group(2))))

    for match in _STARS_RE.finditer(text):
        hits.append(SlotHit(match.start(), {"hotel": "stars"}, rules.number(match.group(1))))

    for match in _TIME_RE.finditer(text):
        cue, hours, minutes, meridiem = match.groups()
        if minutes is None and meridiem is None:
            continue
        value = normalize_value(f"{hours}:{minutes or '00'} {meridiem or ''}".strip())
        if not re.fullmatch(r"\d{2}:\d{2}", value):
            continue
        if cue in _LEAVE_WORDS:
            options = {"train": "leaveat", "taxi": "leaveat"}
        elif cue in _ARRIVE_WORDS:
            options = {"train": "arriveby", "taxi": "arriveby"}
        else:
            options = {"restaurant": "booktime", "taxi": "leaveat", "train": "leaveat"}
        hits.append(SlotHit(match.start(), options, value))

    for hit in rules.values["station"].find_all(text):
        previous = _previous_word(text, hit.start)
        if previous in _FROM_WORDS:
            hits.append(SlotHit(hit.start, {"train": "departure"}, hit.label))
        elif previous in _TO_WORDS or _previous_word(text, hit.start, 2) in ("arrive in", "arriving in"):
            hits.append(SlotHit(hit.start, {"train": "destination"}, hit.label))

    if db is not None:
        for hit, venue in db.mentions(text):
            if venue is None or venue.domain not in ACTIVE_DOMAINS:
                continue
            name = venue.attributes.get("name", venue.name).lower()
            hits.append(SlotHit(hit.start, {venue.domain: "name"}, name))
            previous = _previous_word(text, hit.start)
            if previous in _FROM_WORDS:
                hits.append(SlotHit(hit.start, {"taxi": "departure"}, name))
            elif previous in _TO_WORDS:
                hits.append(SlotHit(hit.start, {"taxi": "destination"}, name))

    return sorted(hits, key=lambda h: h.position)


def attribute_hit(hit: SlotHit, anchors: List[Tuple[int, str]], carried: Optional[str]) -> Optional[str]:
    """
    Domain a slot hit belongs to: the nearest preceding domain mention that
    tracks the slot, else the nearest following one, else the carried domain,
    else the only domain tracking it.
    """
    before = [d for pos, d in reversed(anchors) if pos <= hit.position]
    after = [d for pos, d in anchors if pos > hit.position]
    for domain in before + after + ([carried] if carried else []):
        if domain in hit.options:
            return domain
    if len(hit.options) == 1:
        return next(iter(hit.options))
    return None


def template_track(domain: Optional[str], context: Sequence[Turn], db: Optional[VenueDatabase] = None) -> DialogueState:
    """
    Rule-based state tracking over the user lines of a conversation.

    Categorical values come from the lexicon, venue names from the database
    gazetteer. Every slot is attributed to a domain by the domain mentions
    around it; later user lines override earlier values.

    Args:
        domain: Domain to track, or None for every active domain
        context: Conversation turns ending with the user turn being tracked
        db: Venue database for the name gazetteer (optional)

    Returns:
        DialogueState restricted to `domain` when given
    """
    state: DialogueState = {}
    carried: Optional[str] = None
    previous_system = ""

    for turn in context:
        text = normalize_text(turn.utterance)
        if not turn.is_user:
            previous_system = text
            continue

        anchors = domain_anchors(text, db)
        for hit in extract_slot_hits(text, previous_system, db):
            owner = attribute_hit(hit, anchors, carried)
            if owner is None or (domain is not None and owner != domain):
                continue
            state.setdefault(owner, {})[hit.options[owner]] = [hit.value]
        if anchors:
            carried = anchors[-1][1]

    return clean_state(state)


# ============================================================================
# TEMPLATE RESPONDER
# ============================================================================

class _Reply:
    """Accumulates reply text and the bindings of the tokens it uses"""

    def __init__(self, domain: str):
        self.domain = domain
        self.parts: List[str] = []
        self.values: Dict[str, str] = {}

    def say(self, text: str) -> "_Reply":
        self.parts.append(text)
        return self

    def token(self, slot: str, value: Optional[str]) -> bool:
        if value is None or str(value).strip() == "" or slot not in domain_vocabulary(self.domain):
            return False
        token = DelexToken(self.domain, slot).text
        self.values.setdefault(token, str(value))
        self.parts.append(token)
        return True

    def build(self, booking=None) -> DelexResponse:
        return DelexResponse(text=" ".join(self.parts), token_values=dict(self.values), booking=booking)


def _venue_value(venue: Optional[Venue], domain: str, slot: str) -> Optional[str]:
    if venue is None:
        return None
    for key in domain_vocabulary(domain).get(slot, {}).get("keys", []):
        if key in venue.attributes:
            return venue.attributes[key]
    return None


def last_user_text(context: Sequence[Turn]) -> str:
    for turn in reversed(context):
        if turn.is_user:
            return normalize_text(turn.utterance)
    return ""


def is_closing(text: str) -> bool:
    rules = get_rule_lexicon()
    if not rules.closing.find_all(text):
        return False
    return not (rules.requests.find_all(text) or rules.booking.find_all(text) or rules.domains.find_all(text))


def requested_slots(text: str, domain: str) -> List[str]:
    """Vocabulary slots the user asks about in one utterance"""
    slots = []
    for label in get_rule_lexicon().requests.labels_in(text):
        key = _REQUEST_KEYS.get(domain, {}).get(label, label)
        slot = slot_for_key(domain, key)
        if slot is not None and slot not in slots:
            slots.append(slot)
    return slots


def _chosen_venue(domain: str, state: DialogueState, summary: Optional[VenueSummary],
                  db: Optional[VenueDatabase]) -> Tuple[Optional[Venue], bool]:
    """Venue the reply talks about, and whether the user named it"""
    names = state.get(domain, {}).get("name", [])
    if names and db is not None:
        venue = db.find_by_name(domain, names[0])
        if venue is not None:
            return venue, True
    return (summary.sample if summary is not None else None), False


def _follow_up(domain: str, state: DialogueState) -> str:
    for key, question in _FOLLOW_UP_SLOTS.get(domain, ()):
        if key not in state.get(domain, {}):
            return question
    if domain in BOOKABLE_DOMAINS:
        return "would you like me to make a booking ?"
    return "would you like any more information ?"


def _booking_fields(domain: str, state: DialogueState) -> Dict[str, str]:
    return {BOOKING_SLOTS[k]: v[0] for k, v in state.get(domain, {}).items() if k in BOOKING_SLOTS and v}


def _respond_taxi(state: DialogueState, summary: Optional[VenueSummary]) -> DelexResponse:
    reply = _Reply(TAXI)
    slots = state.get(TAXI, {})
    for key, question in _TAXI_QUESTIONS:
        if key not in slots:
            return reply.say(question).build()
    if "leaveat" not in slots and "arriveby" not in slots:
        return reply.say("what time would you like to leave or arrive by ?").build()

    taxi = summary.sample if summary is not None else None
    if taxi is None:
        return reply.say("i am sorry , no taxi is available at that time .").build()
    reply.say("i have booked a")
    reply.token("type", _venue_value(taxi, TAXI, "type"))
    reply.say("for you . the contact number is")
    reply.token("phone", _venue_value(taxi, TAXI, "phone"))
    reply.say(".")
    return reply.build()


def template_respond(domain: str, context: Sequence[Turn], summary: Optional[VenueSummary],
                     state: DialogueState, db: Optional[VenueDatabase] = None,
                     policy: str = "suggest_and_ask", dialogue_id: str = "", turn_index: int = 0) -> DelexResponse:
    """
    Deterministic responder policy.

    In order: a closing user line gets a goodbye; taxi requests are booked
    once departure, destination and a time are known; an empty query result
    gets an apology; booking requests are confirmed with a reference or answered
    with the missing booking fields; requested attributes are answered; otherwise
    the count is reported, a venue suggested (unless the policy is ask_only)
    and a follow-up question asked.

    Returns:
        DelexResponse whose tokens are all bound
    """
    rules = get_rule_lexicon()
    text = last_user_text(context)
    reply = _Reply(domain)

    if is_closing(text):
        return reply.say("thank you for contacting us , have a great day !").build()

    if domain == TAXI:
        return _respond_taxi(state, summary)

    count = summary.count if summary is not None else 0
    venue, user_named = _chosen_venue(domain, state, summary, db)

    if count == 0 and not user_named:
        return reply.say(f"i am sorry , there is no {_singular(domain)} that matches your request . "
                         "would you like to try something else ?").build()

    wants_booking = bool(rules.booking.find_all(text)) or (
        domain in BOOKABLE_DOMAINS and any(k in BOOKING_SLOTS for k in state.get(domain, {}))
        and bool(_PEOPLE_RE.search(text) or _STAY_RE.search(text) or _TIME_RE.search(text))
    )
    if wants_booking and domain in BOOKABLE_DOMAINS and venue is not None:
        fields = _booking_fields(domain, state)
        try:
            booking = issue_booking(dialogue_id, domain, venue, fields, turn_index)
        except BookingError as e:
            return reply.say(" ".join(_BOOKING_QUESTIONS[m] for m in e.missing)).build()

        if domain == TRAIN:
            reply.say("i have booked")
            reply.token("bookpeople", booking.people)
            reply.say("tickets on")
            reply.token("id", venue.id)
        else:
            reply.say("booking was successful at")
            reply.token("name", venue.attributes.get("name"))
        reply.say(". your reference number is")
        reply.token("ref", booking.reference)
        reply.say(".")
        if domain == "restaurant":
            reply.say("the table will be held for 15 minutes .")
        return reply.build(booking=booking)

    requests = requested_slots(text, domain)
    if requests and venue is not None:
        name_slot = "id" if domain == TRAIN else "name"
        if not user_named and policy == "suggest_and_ask":
            reply.say("i recommend")
            reply.token(name_slot, _venue_value(venue, domain, name_slot))
            reply.say(".")
        for slot in requests:
            if slot in (name_slot, "choice"):
                continue
            value = _venue_value(venue, domain, slot)
            if value is None:
                reply.say(f"i do not have the {slot} on record .")
                continue
            reply.say(f"the {slot} is")
            reply.token(slot, value)
            reply.say(".")
        return reply.build()

    if user_named:
        name_slot = "id" if domain == TRAIN else "name"
        reply.token(name_slot, _venue_value(venue, domain, name_slot))
        reply.say("is a great choice .")
        reply.say(_follow_up(domain, state) if domain not in BOOKABLE_DOMAINS
                  else "would you like me to make a booking ?")
        return reply.build()

    reply.say("there are")
    reply.token("choice", str(count))
    reply.say(f"{_noun(domain)} that match your request .")
    if policy == "suggest_and_ask":
        if domain == TRAIN:
            reply.token("id", venue.id)
            reply.say("leaves at")
            reply.token("leaveat", _venue_value(venue, domain, "leaveat"))
            reply.say(".")
        else:
            reply.say("i recommend")
            reply.token("name", _venue_value(venue, domain, "name"))
            reply.say(".")
    reply.say(_follow_up(domain, state))
    return reply.build()


# ============================================================================
# AGENT OBJECTS
# ============================================================================

class Tracker(Protocol):
    spec: AgentSpec

    def track(self, domain: Optional[str], context: Sequence[Turn], dialogue_id: str = "") -> DialogueState:
        ...


class Responder(Protocol):
    spec: AgentSpec

    def respond(self, domain: str, context: Sequence[Turn], summary: Optional[VenueSummary],
                state: DialogueState, dialogue_id: str = "", turn_index: int = 0) -> DelexResponse:
        ...


class TemplateTracker:
    def __init__(self, spec: AgentSpec, db: Optional[VenueDatabase] = None):
        self.spec = spec
        self.db = db

    def track(self, domain: Optional[str], context: Sequence[Turn], dialogue_id: str = "") -> DialogueState:
        return template_track(domain, context, self.db)


class TemplateResponder:
    def __init__(self, spec: AgentSpec, db: Optional[VenueDatabase] = None):
        self.spec = spec
        self.db = db

    def respond(self, domain: str, context: Sequence[Turn], summary: Optional[VenueSummary],
                state: DialogueState, dialogue_id: str = "", turn_index: int = 0) -> DelexResponse:
        return template_respond(domain, context, summary, state, db=self.db, policy=self.spec.policy,
                                dialogue_id=dialogue_id, turn_index=turn_index)


# ============================================================================
# LLM CLIENT
# ============================================================================

TRANSIENT_ERRORS = (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError,
                    openai.InternalServerError)


def require_credentials(specs: Sequence[AgentSpec]) -> None:
    """
    Raises:
        AgentConfigError: an llm agent's API key variable is unset or empty
    """
    for spec in specs:
        if spec.kind == "llm" and not os.getenv(spec.api_key_env):
            raise AgentConfigError(f"{spec.api_key_env} is not set (needed by agent '{spec.name}')")


class LLMClient:
    """
    Chat-completion client for one agent spec.

    Retries transient failures with exponential backoff, turns 4xx responses
    into AgentConfigError, caps concurrent requests and appends every
    exchange to a JSON-lines audit log.
    """

    _audit_lock = threading.Lock()

    def __init__(self, spec: AgentSpec, audit_log: Optional[Path] = None,
                 http_client: Optional[httpx.Client] = None):
        require_credentials([spec])
        api_key = os.getenv(spec.api_key_env)

        self.spec = spec
        self.audit_log = Path(audit_log) if audit_log else None
        self._semaphore = threading.BoundedSemaphore(max(1, spec.max_concurrency))
        self._client = OpenAI(api_key=api_key, base_url=spec.endpoint, timeout=spec.timeout,
                              max_retries=0, http_client=http_client)

    def complete(self, prompt: str, dialogue_id: str = "") -> str:
        """
        Send one prompt and return the model text.

        Raises:
            AgentConfigError: the endpoint rejected the request (HTTP 4xx)
            AgentTransportError: transient failures outlasted the retries
        """
        retrying = Retrying(
            stop=stop_after_attempt(self.spec.max_retries + 1),
            wait=wait_exponential(multiplier=self.spec.backoff_seconds, max=30),
            retry=retry_if_exception_type(TRANSIENT_ERRORS),
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    response = self._attempt(prompt, dialogue_id)
        except TRANSIENT_ERRORS as e:
            raise AgentTransportError(f"agent '{self.spec.name}' failed after {self.spec.max_retries + 1} attempts: {e}")
        except openai.APIStatusError as e:
            raise AgentConfigError(f"agent '{self.spec.name}' request rejected with HTTP {e.status_code}: {e.message}")

        text = response.choices[0].message.content or ""
        self._audit(dialogue_id, prompt, text)
        return text

    def _attempt(self, prompt: str, dialogue_id: str):
        # the slot is held for one request only, never across backoff sleeps
        with self._semaphore:
            try:
                return self._client.chat.completions.create(
                    model=self.spec.model,
                    messages=[{"role": "user", "content": prompt}],
                    temperature=self.spec.temperature,
                    max_tokens=self.spec.max_tokens,
                )
            except openai.APIError as e:
                self._audit(dialogue_id, prompt, None, error=f"{type(e).__name__}: {e}")
                raise

    def _audit(self, dialogue_id: str, prompt: str, text: Optional[str], error: Optional[str] = None) -> None:
        if self.audit_log is None:
            return
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "dialogue_id": dialogue_id,
            "agent": self.spec.name,
            "model": self.spec.model,
            "prompt": prompt,
            "response": text,
        }
        if error is not None:
            entry["error"] = error
        with self._audit_lock:
            self.audit_log.parent.mkdir(parents=True, exist_ok=True)
            with open(self.audit_log, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, ensure_ascii=False) + "\n")


def llm_call(spec: AgentSpec, prompt: str, client: Optional[LLMClient] = None, dialogue_id: str = "") -> str:
    """Raw completion text for a prompt; builds a client from the spec when none is given"""
    client = client or LLMClient(spec)
    return client.complete(prompt, dialogue_id=dialogue_id)


class LLMTracker:
    def __init__(self, spec: AgentSpec, client: LLMClient, examples: Sequence[DstExample],
                 schema_keys: Dict[str, List[str]]):
        self.spec = spec
        self.client = client
        self.examples = list(examples)
        self.schema_keys = schema_keys

    def track(self, domain: Optional[str], context: Sequence[Turn], dialogue_id: str = "") -> DialogueState:
        pool = [e for e in self.examples if domain is None or e.domain_filter in (None, domain)]
        prompt = build_prompt(domain, render_context(list(context)), None, pool, "dst", seed=self.spec.seed,
                              num_examples=self.spec.num_examples, schema_keys=self.schema_keys)
        raw = llm_call(self.spec, prompt.render(), self.client, dialogue_id)
        return parse_dst_output(raw, domain)


class LLMResponder:
    def __init__(self, spec: AgentSpec, client: LLMClient, examples: Sequence[ResponseExample],
                 db: Optional[VenueDatabase] = None):
        self.spec = spec
        self.client = client
        self.examples = list(examples)
        self.db = db

    def respond(self, domain: str, context: Sequence[Turn], summary: Optional[VenueSummary],
                state: DialogueState, dialogue_id: str = "", turn_index: int = 0) -> DelexResponse:
        pool = [e for e in self.examples if self.spec.domain is None or e.domain == domain]
        prompt = build_prompt(domain, render_context(list(context)), summary, pool, "respond",
                              seed=self.spec.seed, examples_per_scenario=self.spec.examples_per_scenario)
        raw = llm_call(self.spec, prompt.render(), self.client, dialogue_id)
        output = parse_agent_output(raw, domain)

        booking = None
        ref_token = f"[{domain}_ref]"
        if ref_token in output.response and domain in BOOKABLE_DOMAINS:
            venue, _ = _chosen_venue(domain, state, summary, self.db)
            if venue is not None:
                try:
                    booking = issue_booking(dialogue_id, domain, venue, _booking_fields(domain, state), turn_index)
                    output.token_values[ref_token] = booking.reference
                except BookingError:
                    logger.debug(f"{dialogue_id}: responder quoted a reference before booking details were complete")
        return output.to_delex(booking=booking)


class LLMManager:
    """Dialog manager that asks a model which domains the conversation covers"""

    def __init__(self, spec: AgentSpec, client: LLMClient):
        self.spec = spec
        self.client = client

    def detect(self, context: Sequence[Turn], dialogue_id: str = "") -> List[str]:
        prompt = (
            "Which of these domains does the user talk about in the conversation below: "
            f"{', '.join(ACTIVE_DOMAINS)}?\n"
            "Answer with the domain names in the order they come up, separated by commas. "
            "Put the domain of the last user line last.\n\n"
            f"Conversation:\n{render_context(list(context))}\n\nDomains:"
        )
        raw = llm_call(self.spec, prompt, self.client, dialogue_id)
        found = []
        for word in re.findall(r"[a-z]+", raw.lower()):
            if word in ACTIVE_DOMAINS and word not in found:
                found.append(word)
        return found


# ============================================================================
# FACTORIES
# ============================================================================

class AgentFactory:
    """Builds agents from specs, sharing one LLM client per spec"""

    def __init__(self, db: Optional[VenueDatabase] = None, dst_examples: Sequence[DstExample] = (),
                 response_examples: Sequence[ResponseExample] = (),
                 schema_keys: Optional[Dict[str, List[str]]] = None,
                 audit_log: Optional[Path] = None, http_client: Optional[httpx.Client] = None):
        self.db = db
        self.dst_examples = list(dst_examples)
        self.response_examples = list(response_examples)
        self.schema_keys = schema_keys or {}
        self.audit_log = audit_log
        self.http_client = http_client
        self._clients: Dict[str, LLMClient] = {}

    def client(self, spec: AgentSpec) -> LLMClient:
        if spec.name not in self._clients:
            self._clients[spec.name] = LLMClient(spec, audit_log=self.audit_log, http_client=self.http_client)
        return self._clients[spec.name]

    def tracker(self, spec: AgentSpec) -> Tracker:
        if spec.kind == "template":
            return TemplateTracker(spec, self.db)
        return LLMTracker(spec, self.client(spec), self.dst_examples, self.schema_keys)

    def responder(self, spec: AgentSpec) -> Responder:
        if spec.kind == "template":
            return TemplateResponder(spec, self.db)
        return LLMResponder(spec, self.client(spec), self.response_examples, self.db)

    def manager(self, spec: Optional[AgentSpec]) -> Optional[LLMManager]:
        if spec is None or spec.kind == "template":
            return None
        return LLMManager(spec, self.client(spec))
