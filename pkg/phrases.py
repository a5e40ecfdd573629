"""
Phrase matching over normalized utterance text.

Used by the venue gazetteer, the template tracker, domain detection and
request/closing detection. Matching is case-insensitive, respects word
boundaries and prefers the longest phrase at each position.
"""

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

DATA_DIR = Path(__file__).parent / "data"
LEXICON_FILE = DATA_DIR / "lexicon.json"

_APOSTROPHE_RE = re.compile(r"['’`]")
_NON_WORD_RE = re.compile(r"[^\w\s]")
_SPACES_RE = re.compile(r"\s+")


@lru_cache(maxsize=1)
def load_lexicon(path: str = str(LEXICON_FILE)) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def normalize_text(text: str) -> str:
    """
    Lowercase, drop apostrophes ("don't" -> "dont"), turn other punctuation
    into spaces and collapse whitespace.
    """
    text = _APOSTROPHE_RE.sub("", (text or "").lower())
    text = _NON_WORD_RE.sub(" ", text)
    return _SPACES_RE.sub(" ", text).strip()


def strip_article(text: str) -> str:
    while text.startswith("the "):
        text = text[4:]
    return text


@dataclass(frozen=True)
class PhraseHit:
    start: int
    end: int
    phrase: str
    labels: Tuple[Any, ...]

    @property
    def label(self) -> Any:
        return self.labels[0]


class PhraseMatcher:
    """Longest-first alternation over a fixed phrase table"""

    def __init__(self, entries: Iterable[Tuple[str, Any]]):
        self._labels: Dict[str, List[Any]] = {}
        for phrase, label in entries:
            key = normalize_text(phrase)
            if not key:
                continue
            labels = self._labels.setdefault(key, [])
            if label not in labels:
                labels.append(label)

        ordered = sorted(self._labels, key=lambda p: (-len(p), p))
        self._pattern: Optional[re.Pattern] = None
        if ordered:
            alternation = "|".join(re.escape(p) for p in ordered)
            self._pattern = re.compile(rf"(?<!\w)({alternation})(?!\w)")

    @classmethod
    def from_groups(cls, groups: Dict[str, List[str]]) -> "PhraseMatcher":
        """Build from {label: [phrase, ...]}"""
        return cls((phrase, label) for label, phrases in groups.items() for phrase in phrases)

    def __len__(self) -> int:
        return len(self._labels)

    def find_all(self, normalized: str) -> List[PhraseHit]:
        """Non-overlapping hits, left to right. `normalized` must come from normalize_text()"""
        if self._pattern is None or not normalized:
            return []
        return [
            PhraseHit(m.start(), m.end(), m.group(1), tuple(self._labels[m.group(1)]))
            for m in self._pattern.finditer(normalized)
        ]

    def labels_in(self, text: str) -> List[Any]:
        """Distinct labels found in raw text, in order of first appearance"""
        found: List[Any] = []
        for hit in self.find_all(normalize_text(text)):
            for label in hit.labels:
                if label not in found:
                    found.append(label)
        return found

    def contains(self, text: str) -> bool:
        return bool(self.find_all(normalize_text(text)))
