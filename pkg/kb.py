"""
Venue database: per-domain tables, constraint queries, venue summaries and
booking references.

Reads <db_dir>/<domain>_db.json as shipped with MultiWOZ. Restaurant, hotel,
attraction, train, hospital and police files are lists of entries; the taxi
file holds attribute ranges (colours, car types, phone pattern) instead of
venues.
"""

import base64
import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from domains import ALL_DOMAINS, BOOKING_REQUIREMENTS, BOOKING_SLOTS, DOMAIN_NOUNS, TAXI, TRAIN
from dst import DEFAULT_FUZZY_THRESHOLD, DONTCARE, DialogueState, fuzzy_match, normalize_value
from errors import BookingError, CorpusLoadError, UnknownConstraintError, UnknownDomainError
from phrases import PhraseHit, PhraseMatcher, load_lexicon, normalize_text, strip_article

logger = logging.getLogger(__name__)

ConstraintValue = Union[str, Sequence[str]]

# Kept in Venue.attributes but left out of the rendered venue block
RENDER_EXCLUDED = {"introduction", "signature", "takesbookings"}

_CLOCK_RE = re.compile(r"^\d{2}:\d{2}$")


@dataclass(frozen=True)
class Venue:
    domain: str
    id: str
    attributes: Dict[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.attributes.get("name") or self.attributes.get("trainid") or self.id

    def render(self) -> List[str]:
        return [
            f"{key} - {value}"
            for key, value in sorted(self.attributes.items())
            if key not in RENDER_EXCLUDED
        ]


@dataclass(frozen=True)
class VenueSummary:
    domain: str
    count: int
    sample: Optional[Venue] = None

    def render(self) -> str:
        """
        Venue block handed to responders, e.g.

            Number of restaurants that meet the user's criteria: 33
            One of them is the following:
              <restaurant>
               address - 106 Regent Street City Centre
               ...
              </restaurant>
        """
        noun = DOMAIN_NOUNS.get(self.domain, self.domain)
        lines = [f"Number of {noun} that meet the user's criteria: {self.count}"]
        if self.sample is not None:
            lines.append("One of them is the following:")
            lines.append(f"  <{self.domain}>")
            lines.extend(f"   {line}" for line in self.sample.render())
            lines.append(f"  </{self.domain}>")
        return "\n".join(lines)


@dataclass(frozen=True)
class BookingRecord:
    domain: str
    venue_id: str
    reference: str
    people: Optional[str] = None
    day: Optional[str] = None
    time: Optional[str] = None
    stay: Optional[str] = None

    def fields(self) -> Dict[str, str]:
        values = {"people": self.people, "day": self.day, "time": self.time, "stay": self.stay}
        return {k: v for k, v in values.items() if v is not None}


@dataclass(frozen=True)
class TaxiRanges:
    colors: Tuple[str, ...]
    types: Tuple[str, ...]
    phone_pattern: str = r"^[0-9]{10}$"


def booking_reference(dialogue_id: str, domain: str, turn_index: int) -> str:
    """8-character uppercase alphanumeric reference, a pure function of its inputs"""
    digest = hashlib.sha256(f"{dialogue_id}|{domain}|{turn_index}".encode("utf-8")).digest()
    return base64.b32encode(digest).decode("ascii")[:8]


def _attribute_key(raw_key: str) -> str:
    return raw_key.lower().replace(" ", "").replace("_", "")


def _id_sort_key(venue: Venue):
    if venue.id.isdigit():
        return (0, int(venue.id), "", venue.name)
    return (1, 0, venue.id, venue.name)


# ============================================================================
# DATABASE
# ============================================================================

class VenueDatabase:
    """Immutable in-memory venue tables, safe to share across worker threads"""

    def __init__(self, tables: Dict[str, List[Venue]], taxi: Optional[TaxiRanges] = None,
                 fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD):
        self.fuzzy_threshold = fuzzy_threshold
        self.taxi = taxi
        self._tables: Dict[str, List[Venue]] = {d: sorted(vs, key=_id_sort_key) for d, vs in tables.items()}
        self._keys: Dict[str, set] = {
            domain: {key for venue in venues for key in venue.attributes} | {"name"}
            for domain, venues in self._tables.items()
        }
        self._normalized: Dict[str, List[Dict[str, str]]] = {
            domain: [
                {key: normalize_value(value, f"{domain}-{key}") for key, value in venue.attributes.items()}
                for venue in venues
            ]
            for domain, venues in self._tables.items()
        }
        self._gazetteer = self._build_gazetteer()

    # ------------------------------------------------------------------ loading

    @classmethod
    def load(cls, db_dir, fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD) -> "VenueDatabase":
        """
        Load every <domain>_db.json found in db_dir.

        Raises:
            CorpusLoadError: if the directory is missing or a file is not valid JSON
        """
        db_dir = Path(db_dir)
        if not db_dir.is_dir():
            raise CorpusLoadError(db_dir, "database directory not found")

        tables: Dict[str, List[Venue]] = {}
        taxi: Optional[TaxiRanges] = None

        for domain in ALL_DOMAINS:
            path = db_dir / f"{domain}_db.json"
            if not path.exists():
                logger.warning(f"No database file for {domain} at {path}")
                continue
            try:
                with open(path, "r", encoding="utf-8") as f:
                    raw = json.load(f)
            except json.JSONDecodeError as e:
                raise CorpusLoadError(path, f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")

            if domain == TAXI:
                taxi = cls._parse_taxi(raw, path)
                continue
            if not isinstance(raw, list):
                raise CorpusLoadError(path, "expected a list of entries")
            tables[domain] = [cls._parse_entry(domain, entry, i) for i, entry in enumerate(raw)]
            logger.info(f"Loaded {len(tables[domain])} {domain} entries")

        return cls(tables, taxi=taxi, fuzzy_threshold=fuzzy_threshold)

    @staticmethod
    def _parse_entry(domain: str, entry: Dict, position: int) -> Venue:
        attributes: Dict[str, str] = {}
        for raw_key, value in entry.items():
            if isinstance(value, (dict, list)):
                continue
            attributes[_attribute_key(raw_key)] = str(value)

        venue_id = attributes.get("trainid") or attributes.get("id") or f"{domain}-{position}"
        return Venue(domain=domain, id=venue_id, attributes=attributes)

    @staticmethod
    def _parse_taxi(raw, path: Path) -> TaxiRanges:
        if isinstance(raw, list):
            raw = raw[0] if raw else {}
        try:
            phone = raw.get("taxi_phone", [r"^[0-9]{10}$"])
            return TaxiRanges(
                colors=tuple(raw["taxi_colors"]),
                types=tuple(raw["taxi_types"]),
                phone_pattern=phone[0] if isinstance(phone, list) else str(phone),
            )
        except (KeyError, AttributeError, TypeError) as e:
            raise CorpusLoadError(path, f"taxi attribute ranges malformed: {e}")

    # ------------------------------------------------------------------ tables

    def domains(self) -> List[str]:
        return list(self._tables)

    def has_table(self, domain: str) -> bool:
        return domain in self._tables

    def table(self, domain: str) -> List[Venue]:
        if domain not in self._tables:
            raise UnknownDomainError(domain)
        return list(self._tables[domain])

    def keys(self, domain: str) -> List[str]:
        if domain not in self._keys:
            raise UnknownDomainError(domain)
        return sorted(self._keys[domain])

    # ------------------------------------------------------------------ queries

    def query(self, domain: str, constraints: Mapping[str, ConstraintValue]) -> List[Venue]:
        """
        Venues whose attributes match every constraint.

        Args:
            domain: Domain with a venue table (not taxi)
            constraints: key -> value or list of values (any may match);
                "dontcare" values are treated as absent

        Returns:
            Matching venues sorted by (id, name)

        Raises:
            UnknownDomainError: taxi or a domain without a table
            UnknownConstraintError: key not present in the domain's table
        """
        if domain not in self._tables:
            raise UnknownDomainError(domain)

        checks: List[Tuple[str, List[str]]] = []
        for key, value in constraints.items():
            key = _attribute_key(key)
            if key not in self._keys[domain]:
                raise UnknownConstraintError(domain, key)
            values = [value] if isinstance(value, str) else list(value)
            normalized = [normalize_value(v, f"{domain}-{key}") for v in values]
            normalized = [v for v in normalized if v]
            if not normalized or DONTCARE in normalized:
                continue
            checks.append((key, normalized))

        venues = self._tables[domain]
        rows = self._normalized[domain]
        return [
            venue for venue, row in zip(venues, rows)
            if all(self._satisfies(domain, row, key, values) for key, values in checks)
        ]

    def _satisfies(self, domain: str, row: Dict[str, str], key: str, values: List[str]) -> bool:
        attribute = row.get(key)
        if attribute is None:
            return False
        for value in values:
            if domain == TRAIN and key in ("leaveat", "arriveby") and _CLOCK_RE.match(value) and _CLOCK_RE.match(attribute):
                if key == "leaveat" and attribute >= value:
                    return True
                if key == "arriveby" and attribute <= value:
                    return True
            elif fuzzy_match(attribute, value, self.fuzzy_threshold):
                return True
        return False

    def venue_summary(self, domain: str, constraints: Mapping[str, ConstraintValue]) -> VenueSummary:
        venues = self.query(domain, constraints)
        return VenueSummary(domain=domain, count=len(venues), sample=venues[0] if venues else None)

    def constraints_from_state(self, domain: str, state: DialogueState) -> Dict[str, List[str]]:
        """Database constraints implied by one domain of a state (booking slots and unknown keys dropped)"""
        if domain not in self._keys:
            return {}
        constraints = {}
        for key, values in state.get(domain, {}).items():
            if key in BOOKING_SLOTS or key not in self._keys[domain]:
                continue
            constraints[key] = list(values)
        return constraints

    def find_by_name(self, domain: str, name: str) -> Optional[Venue]:
        if domain not in self._tables or not name:
            return None
        target = normalize_value(name)
        for venue, row in zip(self._tables[domain], self._normalized[domain]):
            if row.get("name") == target or venue.id.lower() == target:
                return venue
        for venue, row in zip(self._tables[domain], self._normalized[domain]):
            if row.get("name") and fuzzy_match(row["name"], target, self.fuzzy_threshold):
                return venue
        return None

    def find_by_id(self, domain: str, venue_id: str) -> Optional[Venue]:
        if domain not in self._tables:
            return None
        for venue in self._tables[domain]:
            if venue.id.lower() == str(venue_id).lower():
                return venue
        return None

    # ------------------------------------------------------------------ gazetteer

    def _build_gazetteer(self) -> PhraseMatcher:
        stoplist = {normalize_text(s) for s in load_lexicon().get("gazetteer_stoplist", [])}
        entries = []
        for domain, venues in self._tables.items():
            for venue in venues:
                name = venue.attributes.get("name")
                if not name:
                    continue
                key = strip_article(normalize_text(name))
                if key and key not in stoplist:
                    entries.append((key, (domain, venue.id)))
        return PhraseMatcher(entries)

    def mentions(self, text: str, domains: Optional[Iterable[str]] = None) -> List[Tuple[PhraseHit, Venue]]:
        """Venues named in free text (longest name first), optionally restricted to some domains"""
        wanted = set(domains) if domains is not None else None
        found = []
        for hit in self._gazetteer.find_all(normalize_text(text)):
            for domain, venue_id in hit.labels:
                if wanted is None or domain in wanted:
                    found.append((hit, self.find_by_id(domain, venue_id)))
                    break
        return found

    # ------------------------------------------------------------------ taxi and booking

    def synthesize_taxi(self, dialogue_id: str, seed: int = 0) -> Venue:
        """
        Build the taxi "venue" for a conversation from the attribute ranges.

        The car and phone number depend only on (seed, dialogue_id).
        """
        ranges = self.taxi or TaxiRanges(colors=("black",), types=("toyota",))
        rng = random.Random(f"{seed}:{dialogue_id}")
        color = rng.choice(ranges.colors)
        car = rng.choice(ranges.types)
        digits = "".join(str(rng.randrange(10)) for _ in range(10))
        return Venue(domain=TAXI, id=f"taxi-{dialogue_id}", attributes={"type": f"{color} {car}", "phone": digits})

    def book(self, dialogue_id: str, domain: str, venue: Venue,
             booking_fields: Mapping[str, str], turn_index: int) -> BookingRecord:
        return issue_booking(dialogue_id, domain, venue, booking_fields, turn_index)


def issue_booking(dialogue_id: str, domain: str, venue: Venue,
                  booking_fields: Mapping[str, str], turn_index: int) -> BookingRecord:
    """
    Issue a booking with a deterministic reference.

    booking_fields accepts either field names (people, day, time, stay) or
    state slot keys (bookpeople, bookday, booktime, bookstay).

    Raises:
        BookingError: listing the fields the domain still needs
    """
    provided: Dict[str, str] = {}
    for key, value in booking_fields.items():
        if isinstance(value, (list, tuple)):
            value = value[0] if value else None
        if value is None or str(value).strip() == "":
            continue
        provided[BOOKING_SLOTS.get(key, key)] = str(value)

    missing = [f for f in BOOKING_REQUIREMENTS.get(domain, ()) if f not in provided]
    if missing:
        raise BookingError(domain, missing)

    return BookingRecord(
        domain=domain,
        venue_id=venue.id,
        reference=booking_reference(dialogue_id, domain, turn_index),
        people=provided.get("people"),
        day=provided.get("day"),
        time=provided.get("time"),
        stay=provided.get("stay"),
    )
