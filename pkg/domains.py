"""
Domain names shared by every module.

Domains are plain lowercase strings ("restaurant", "hotel", ...) so they can be
used directly as dictionary keys in states, goals and JSON files.
"""

from typing import Dict, Tuple

RESTAURANT = "restaurant"
HOTEL = "hotel"
ATTRACTION = "attraction"
TRAIN = "train"
TAXI = "taxi"
HOSPITAL = "hospital"
POLICE = "police"

ALL_DOMAINS: Tuple[str, ...] = (RESTAURANT, HOTEL, ATTRACTION, TRAIN, TAXI, HOSPITAL, POLICE)

# Only these five are trained on, orchestrated and evaluated
ACTIVE_DOMAINS: Tuple[str, ...] = (RESTAURANT, HOTEL, ATTRACTION, TRAIN, TAXI)
INACTIVE_DOMAINS: Tuple[str, ...] = (HOSPITAL, POLICE)

# Domains with an enumerable venue table (inform is judged on these)
VENUE_DOMAINS: Tuple[str, ...] = (RESTAURANT, HOTEL, ATTRACTION, TRAIN)

BOOKABLE_DOMAINS: Tuple[str, ...] = (RESTAURANT, HOTEL, TRAIN, TAXI)

# Booking fields each domain needs before a reference can be issued
BOOKING_REQUIREMENTS: Dict[str, Tuple[str, ...]] = {
    RESTAURANT: ("people", "day", "time"),
    HOTEL: ("people", "day", "stay"),
    TRAIN: ("people",),
    TAXI: (),
}

# State slot key -> booking field
BOOKING_SLOTS: Dict[str, str] = {
    "bookpeople": "people",
    "bookday": "day",
    "booktime": "time",
    "bookstay": "stay",
}

# Plural nouns used in rendered venue blocks and template replies
DOMAIN_NOUNS: Dict[str, str] = {
    RESTAURANT: "restaurants",
    HOTEL: "hotels",
    ATTRACTION: "attractions",
    TRAIN: "trains",
    TAXI: "taxis",
}


def is_active(domain: str) -> bool:
    return domain in ACTIVE_DOMAINS


def split_slot_name(slot_name: str) -> Tuple[str, str]:
    """
    Split a MultiWOZ 2.2 slot name like "restaurant-area" into (domain, key).

    Raises:
        ValueError: if the name has no domain prefix
    """
    if "-" not in slot_name:
        raise ValueError(f"Slot name without domain prefix: '{slot_name}'")
    domain, key = slot_name.split("-", 1)
    return domain.strip().lower(), key.strip().lower()
