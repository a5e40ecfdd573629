"""
Exception hierarchy for the dialogue engine and evaluation harness.

Every error carries the identifiers a user needs to find the offending input
(file, dialogue id, turn index, slot key, token).
"""

from typing import List, Optional


class DardError(Exception):
    """Base class for all errors raised by this project"""


# ============================================================================
# CORPUS
# ============================================================================

class CorpusLoadError(DardError):
    """A corpus file is missing or cannot be decoded"""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class MalformedRecordError(DardError):
    """A dialogue record does not follow the MultiWOZ 2.2 layout"""

    def __init__(self, dialogue_id: str, turn_index: Optional[int], message: str):
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index
        where = f"dialogue {dialogue_id}"
        if turn_index is not None:
            where += f", turn {turn_index}"
        super().__init__(f"{where}: {message}")


# ============================================================================
# DATABASE
# ============================================================================

class KbError(DardError):
    """Venue database misuse"""


class UnknownDomainError(KbError):
    def __init__(self, domain: str):
        self.domain = domain
        super().__init__(f"No venue table for domain '{domain}'")


class UnknownConstraintError(KbError):
    def __init__(self, domain: str, key: str):
        self.domain = domain
        self.key = key
        super().__init__(f"Unknown constraint key '{key}' for domain '{domain}'")


class BookingError(DardError):
    """Booking requested before all booking fields are known"""

    def __init__(self, domain: str, missing: List[str]):
        self.domain = domain
        self.missing = list(missing)
        super().__init__(f"Incomplete {domain} booking, missing: {', '.join(self.missing)}")


# ============================================================================
# STATES AND DELEXICALIZATION
# ============================================================================

class StateMergeError(DardError):
    """Two per-domain states claim the same domain"""

    def __init__(self, domain: str):
        self.domain = domain
        super().__init__(f"Domain '{domain}' was tracked more than once")


class UnboundTokenError(DardError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"No value bound for token {token}")


class AgentOutputParseError(DardError):
    """Agent text does not follow the expected output format"""

    def __init__(self, raw: str, message: str = "missing 'Response:' field"):
        self.raw = raw
        super().__init__(f"{message}; raw output: {raw[:200]!r}")


# ============================================================================
# AGENTS AND CONFIGURATION
# ============================================================================

class AgentConfigError(DardError):
    """Agent cannot be used as configured (credential, endpoint, 4xx response)"""


class AgentTransportError(DardError):
    """Remote agent kept failing after all retries"""


class ConfigError(DardError):
    """Run configuration is invalid"""


# ============================================================================
# EVALUATION
# ============================================================================

class PredictionFormatError(DardError):
    def __init__(self, message: str, dialogue_id: Optional[str] = None, location: Optional[str] = None):
        self.dialogue_id = dialogue_id
        self.location = location
        parts = []
        if location:
            parts.append(location)
        if dialogue_id:
            parts.append(f"dialogue {dialogue_id}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MetricsError(DardError):
    """Metric cannot be computed for the given input"""
