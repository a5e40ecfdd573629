"""
DIALOGUE STATE: representation, value normalization and matching

1. Value normalization (case, punctuation, articles, times, synonym table)
2. Fuzzy slot-value comparison (normalized Levenshtein similarity)
3. Joint state match used by JSA
4. Multi-agent state union and per-domain projection

A DialogueState is a plain nested dict: domain -> slot key -> list of values,
e.g. {"restaurant": {"area": ["centre"], "pricerange": ["expensive"]}}.
"""

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

import Levenshtein

from domains import ACTIVE_DOMAINS
from errors import StateMergeError

DialogueState = Dict[str, Dict[str, List[str]]]

DATA_DIR = Path(__file__).parent / "data"
NORMALIZATION_FILE = DATA_DIR / "normalization.json"

DEFAULT_FUZZY_THRESHOLD = 0.9
DONTCARE = "dontcare"


@dataclass(frozen=True)
class SlotTriple:
    """One (domain, key, values) constraint of a dialogue state"""
    domain: str
    key: str
    value: Tuple[str, ...]


# ============================================================================
# NORMALIZATION TABLES
# ============================================================================

@lru_cache(maxsize=1)
def load_normalization_table(path: str = str(NORMALIZATION_FILE)) -> Dict:
    """Load the versioned synonym/time table shipped in data/"""
    with open(path, "r", encoding="utf-8") as f:
        table = json.load(f)
    table["_time_re"] = re.compile(table["times"]["pattern"])
    return table


_PUNCTUATION_RE = re.compile(r"[^\w\s]")
_SPACES_RE = re.compile(r"\s+")
_TIME_SHAPED_RE = re.compile(r"^\d{1,2}[:.]\d{2}\s*(am|pm|a\.m\.|p\.m\.)?$")


# ============================================================================
# VALUE NORMALIZATION
# ============================================================================

def _canonical_time(value: str) -> Optional[str]:
    """
    Convert a time expression to HH:MM (24-hour).

    Returns:
        str: canonical time, or None when the value is not a time expression
        or names an impossible time
    """
    table = load_normalization_table()
    match = table["_time_re"].match(value)
    if not match:
        return None

    hours_str, minutes_str, meridiem = match.groups()
    if table["times"].get("require_minutes_or_meridiem") and minutes_str is None and meridiem is None:
        return None

    hours = int(hours_str)
    minutes = int(minutes_str) if minutes_str is not None else 0

    if minutes > 59:
        return None
    if meridiem:
        if not 1 <= hours <= 12:
            return None
        is_pm = meridiem.startswith("p")
        if is_pm and hours != 12:
            hours += 12
        elif not is_pm and hours == 12:
            hours = 0
    elif hours > 23:
        return None

    return f"{hours:02d}:{minutes:02d}"


@lru_cache(maxsize=65536)
def normalize_value(raw: str, key: Optional[str] = None) -> str:
    """
    Normalize a slot value so equal meanings compare equal.

    Steps: lowercase, time canonicalization ("5:45 pm" -> "17:45"),
    punctuation stripping, leading "the" removal, synonym table, then
    slot-specific synonyms when `key` (e.g. "hotel-internet") is given.
    Unparseable time-looking values pass through lowercased.

    Args:
        raw: Value as written by an annotator, a model or the database
        key: Optional "domain-slot" name selecting slot-specific synonyms

    Returns:
        str: Normalized value (idempotent)
    """
    if raw is None:
        return ""

    value = _SPACES_RE.sub(" ", str(raw).strip().lower())
    if not value:
        return ""

    time_value = _canonical_time(value)
    if time_value is not None:
        return time_value
    if is_time_shaped(value):
        return value

    value = _PUNCTUATION_RE.sub("", value)
    value = _SPACES_RE.sub(" ", value).strip()
    while value.startswith("the "):
        value = value[4:].strip()

    table = load_normalization_table()
    value = table["values"].get(value, value)
    if key:
        value = table["slot_values"].get(key.lower(), {}).get(value, value)
    return value


def is_time_shaped(value: str) -> bool:
    """True when the value has the shape of a clock time, valid or not"""
    return _TIME_SHAPED_RE.match(value) is not None


# ============================================================================
# FUZZY MATCHING
# ============================================================================

def similarity(a: str, b: str) -> float:
    """Normalized edit similarity: 1 - levenshtein(a, b) / max(len(a), len(b))"""
    if not a and not b:
        return 1.0
    longest = max(len(a), len(b))
    return 1.0 - Levenshtein.distance(a, b) / longest


def fuzzy_match(a: str, b: str, threshold: float = DEFAULT_FUZZY_THRESHOLD) -> bool:
    """
    Compare two slot values with a fuzzy margin.

    "dontcare" is a semantic value, not a wildcard: it only matches itself.

    Args:
        a, b: Raw values
        threshold: Minimum normalized edit similarity (0.0-1.0)

    Returns:
        bool: True if normalized forms are equal or similar enough
    """
    norm_a = normalize_value(a)
    norm_b = normalize_value(b)

    if norm_a == norm_b:
        return True
    if DONTCARE in (norm_a, norm_b):
        return False
    if not norm_a or not norm_b:
        return False
    return similarity(norm_a, norm_b) >= threshold


def values_match(pred_values: Iterable[str], gold_values: Iterable[str],
                 threshold: float = DEFAULT_FUZZY_THRESHOLD) -> bool:
    """Any-to-any fuzzy match between two value lists"""
    gold_values = list(gold_values)
    return any(fuzzy_match(p, g, threshold) for p in pred_values for g in gold_values)


# ============================================================================
# STATE HELPERS
# ============================================================================

def clean_state(state: Optional[Dict], active_only: bool = True) -> DialogueState:
    """
    Return a well-formed copy: lowercase domains/keys, value lists, no empty lists.

    Bare string values are wrapped in a list. Inactive domains are dropped
    unless `active_only` is False.
    """
    cleaned: DialogueState = {}
    for domain, slots in (state or {}).items():
        domain = str(domain).lower()
        if active_only and domain not in ACTIVE_DOMAINS:
            continue
        for key, values in (slots or {}).items():
            if values is None:
                continue
            if isinstance(values, str):
                values = [values]
            values = [str(v) for v in values if v is not None and str(v).strip() != ""]
            if values:
                cleaned.setdefault(domain, {})[str(key).lower()] = values
    return cleaned


def state_keys(state: DialogueState) -> Set[Tuple[str, str]]:
    return {(domain, key) for domain, slots in state.items() for key, values in slots.items() if values}


def state_triples(state: DialogueState) -> Set[SlotTriple]:
    return {
        SlotTriple(domain, key, tuple(values))
        for domain, slots in state.items()
        for key, values in slots.items()
        if values
    }


def state_domains(state: DialogueState) -> List[str]:
    return [domain for domain, slots in state.items() if any(slots.values())]


def project_state(state: DialogueState, domain: str) -> DialogueState:
    """Restrict a state to one domain's slots"""
    slots = {key: list(values) for key, values in state.get(domain, {}).items() if values}
    return {domain: slots} if slots else {}


# ============================================================================
# JOINT MATCH AND UNION
# ============================================================================

def joint_match(pred: DialogueState, gold: DialogueState,
                threshold: float = DEFAULT_FUZZY_THRESHOLD) -> bool:
    """
    Joint state match of one user turn.

    Domain names and slot keys must match exactly; values are compared
    with fuzzy_match, any predicted value against any gold value.
    """
    pred = clean_state(pred, active_only=False)
    gold = clean_state(gold, active_only=False)

    if state_keys(pred) != state_keys(gold):
        return False

    for domain, key in state_keys(gold):
        if not values_match(pred[domain][key], gold[domain][key], threshold):
            return False
    return True


def union_states(per_domain: List[DialogueState]) -> DialogueState:
    """
    Merge single-domain states produced by the domain trackers.

    Raises:
        StateMergeError: if two inputs claim the same domain
    """
    merged: DialogueState = {}
    for state in per_domain:
        for domain, slots in state.items():
            if not slots:
                continue
            if domain in merged:
                raise StateMergeError(domain)
            merged[domain] = {key: list(values) for key, values in slots.items()}
    return merged
