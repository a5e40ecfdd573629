"""
Miniature MultiWOZ 2.2 tree for the test suite.

write_mini_multiwoz(root) lays out schema.json, train/dev/test dialogue
files, dialog_acts.json, goals.json and db/<domain>_db.json with a handful
of venues, so every code path can run without the real distribution.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional

# ============================================================================
# DATABASE
# ============================================================================

RESTAURANTS = [
    {"address": "106 Regent Street City Centre", "area": "centre", "food": "indian", "id": "19214",
     "introduction": "", "location": [52.2, 0.12], "name": "curry garden", "phone": "01223302330",
     "postcode": "cb21dp", "pricerange": "expensive", "type": "restaurant"},
    {"address": "100 Mill Road City Centre", "area": "centre", "food": "african", "id": "19232",
     "location": [52.2, 0.13], "name": "bedouin", "phone": "01223367660", "postcode": "cb12bd",
     "pricerange": "expensive", "type": "restaurant"},
    {"address": "191 Histon Road Chesterton", "area": "north", "food": "chinese", "id": "19250",
     "location": [52.2, 0.11], "name": "golden wok", "phone": "01223350688", "postcode": "cb43hl",
     "pricerange": "moderate", "type": "restaurant"},
    {"address": "Regent Street City Centre", "area": "centre", "food": "chinese", "id": "19237",
     "location": [52.2, 0.12], "name": "charlie chan", "phone": "01223361763", "postcode": "cb21db",
     "pricerange": "cheap", "type": "restaurant"},
]

HOTELS = [
    {"address": "154 chesterton road", "area": "north", "id": "0", "internet": "yes",
     "location": [52.2, 0.14], "name": "acorn guest house", "parking": "yes", "phone": "01223353888",
     "postcode": "cb41da", "price": {"double": "75", "single": "50"}, "pricerange": "moderate",
     "stars": "4", "takesbookings": "yes", "type": "guesthouse"},
    {"address": "gonville place", "area": "centre", "id": "1", "internet": "yes",
     "location": [52.2, 0.13], "name": "gonville hotel", "parking": "yes", "phone": "01223366611",
     "postcode": "cb11ly", "price": {"double": "95", "single": "79"}, "pricerange": "expensive",
     "stars": "3", "takesbookings": "yes", "type": "hotel"},
]

ATTRACTIONS = [
    {"address": "king's parade", "area": "centre", "entrance fee": "2 pounds", "id": "5",
     "location": [52.2, 0.11], "name": "corpus christi", "openhours": "10:00 to 16:00",
     "phone": "01223338000", "postcode": "cb21rh", "pricerange": "cheap", "type": "college"},
    {"address": "98 king street", "area": "centre", "entrance fee": "free", "id": "1",
     "location": [52.2, 0.12], "name": "broughton house gallery", "openhours": "10:30 to 17:00",
     "phone": "01223314960", "postcode": "cb11ln", "pricerange": "free", "type": "museum"},
    {"address": "5 greens road", "area": "east", "entrance fee": "free", "id": "2",
     "location": [52.2, 0.15], "name": "cambridge artworks", "openhours": "?",
     "phone": "01223902168", "postcode": "cb13ef", "pricerange": "free", "type": "museum"},
]

TRAINS = [
    {"arriveBy": "10:08", "day": "monday", "departure": "cambridge", "destination": "london kings cross",
     "duration": "51 minutes", "leaveAt": "09:00", "price": "23.60 pounds", "trainID": "TR1234"},
    {"arriveBy": "12:08", "day": "monday", "departure": "cambridge", "destination": "london kings cross",
     "duration": "51 minutes", "leaveAt": "11:00", "price": "23.60 pounds", "trainID": "TR5678"},
    {"arriveBy": "18:08", "day": "tuesday", "departure": "london kings cross", "destination": "cambridge",
     "duration": "51 minutes", "leaveAt": "17:11", "price": "23.60 pounds", "trainID": "TR9012"},
]

TAXI = {
    "taxi_colors": ["black", "white", "red"],
    "taxi_types": ["toyota", "skoda", "bmw"],
    "taxi_phone": ["^[0-9]{10}$"],
}

HOSPITAL = [{"department": "neurosciences", "id": 0, "phone": "01223274680"}]
POLICE = [{"name": "Parkside Police Station", "address": "Parkside, Cambridge", "id": 0,
           "phone": "01223358966", "postcode": "cb11jg"}]


# ============================================================================
# SCHEMA
# ============================================================================

def _slot(domain: str, key: str, values: Optional[List[str]] = None) -> Dict:
    return {"name": f"{domain}-{key}", "description": key, "is_categorical": values is not None,
            "possible_values": values or []}


AREAS = ["centre", "east", "north", "south", "west"]
PRICES = ["cheap", "expensive", "moderate"]
DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]

SCHEMA = [
    {"service_name": "restaurant", "slots": [
        _slot("restaurant", "area", AREAS), _slot("restaurant", "pricerange", PRICES),
        _slot("restaurant", "food"), _slot("restaurant", "name"),
        _slot("restaurant", "bookday", DAYS), _slot("restaurant", "bookpeople", ["1", "2", "3", "4", "5"]),
        _slot("restaurant", "booktime"), _slot("restaurant", "address"), _slot("restaurant", "phone"),
        _slot("restaurant", "postcode"), _slot("restaurant", "ref"),
    ]},
    {"service_name": "hotel", "slots": [
        _slot("hotel", "area", AREAS), _slot("hotel", "pricerange", PRICES),
        _slot("hotel", "type", ["guesthouse", "hotel"]), _slot("hotel", "parking", ["free", "no", "yes"]),
        _slot("hotel", "internet", ["free", "no", "yes"]), _slot("hotel", "stars", ["0", "1", "2", "3", "4", "5"]),
        _slot("hotel", "name"), _slot("hotel", "bookday", DAYS), _slot("hotel", "bookpeople", ["1", "2", "3"]),
        _slot("hotel", "bookstay", ["1", "2", "3", "4"]), _slot("hotel", "phone"), _slot("hotel", "ref"),
    ]},
    {"service_name": "attraction", "slots": [
        _slot("attraction", "area", AREAS), _slot("attraction", "type", ["college", "museum"]),
        _slot("attraction", "name"), _slot("attraction", "entrancefee"), _slot("attraction", "phone"),
        _slot("attraction", "address"),
    ]},
    {"service_name": "train", "slots": [
        _slot("train", "departure"), _slot("train", "destination"), _slot("train", "day", DAYS),
        _slot("train", "leaveat"), _slot("train", "arriveby"), _slot("train", "bookpeople", ["1", "2", "3"]),
        _slot("train", "trainid"), _slot("train", "price"), _slot("train", "ref"),
    ]},
    {"service_name": "taxi", "slots": [
        _slot("taxi", "departure"), _slot("taxi", "destination"), _slot("taxi", "leaveat"),
        _slot("taxi", "arriveby"), _slot("taxi", "type"), _slot("taxi", "phone"),
    ]},
    {"service_name": "hospital", "slots": [_slot("hospital", "department")]},
    {"service_name": "police", "slots": [_slot("police", "name")]},
]


# ============================================================================
# DIALOGUES
# ============================================================================

def user(turn_id: int, utterance: str, state: Dict[str, Dict[str, List[str]]],
         services: List[str]) -> Dict:
    """USER turn with one frame per service; state is {domain: {key: values}}"""
    frames = []
    for service in services:
        slot_values = {f"{service}-{k}": v for k, v in state.get(service, {}).items()}
        frames.append({"service": service, "state": {"active_intent": "NONE", "requested_slots": [],
                                                     "slot_values": slot_values}})
    return {"turn_id": str(turn_id), "speaker": "USER", "utterance": utterance, "frames": frames}


def system(turn_id: int, utterance: str) -> Dict:
    return {"turn_id": str(turn_id), "speaker": "SYSTEM", "utterance": utterance, "frames": []}


A1_USER_TURNS = [
    "I need a place to dine in the center thats expensive",
    "Any sort of food would be fine, as long as it is a bit expensive. Could I get the phone number for your recommendation?",
    "Great, thank you. That's all I need.",
]

_A1_STATE = {"restaurant": {"area": ["centre"], "pricerange": ["expensive"]}}
_A1_STATE_2 = {"restaurant": {"area": ["centre"], "pricerange": ["expensive"], "food": ["dontcare"]}}


def _pmul0001() -> Dict:
    services = ["restaurant"]
    return {"dialogue_id": "PMUL0001.json", "services": services, "turns": [
        user(0, A1_USER_TURNS[0], _A1_STATE, services),
        system(1, "There are 2 expensive restaurants in the centre. What type of food would you like?"),
        user(2, A1_USER_TURNS[1], _A1_STATE_2, services),
        system(3, "There is an Indian restaurant called Curry Garden. Their phone number is 01223302330."),
        user(4, A1_USER_TURNS[2], _A1_STATE_2, services),
        system(5, "You're welcome. Have a great day!"),
    ]}


def _mul0002() -> Dict:
    services = ["attraction", "restaurant", "taxi"]
    attraction = {"attraction": {"name": ["corpus christi"]}}
    restaurant = {**attraction, "restaurant": {"food": ["african"], "area": ["centre"]}}
    booked = {**attraction, "restaurant": {"food": ["african"], "area": ["centre"], "name": ["bedouin"],
                                           "bookpeople": ["2"], "booktime": ["19:30"], "bookday": ["friday"]}}
    taxi = {**booked, "taxi": {"departure": ["corpus christi"], "destination": ["bedouin"], "leaveat": ["18:00"]}}
    return {"dialogue_id": "MUL0002.json", "services": services, "turns": [
        user(0, "I'm looking for Corpus Christi, can you tell me about it?", attraction, services),
        system(1, "Corpus Christi is a college in the centre. The entrance fee is 2 pounds."),
        user(2, "I also want an African restaurant in the centre.", restaurant, services),
        system(3, "Bedouin is an African restaurant in the centre. Would you like a table?"),
        user(4, "Yes, please book a table for 2 people at 19:30 on Friday.", booked, services),
        system(5, "Booking was successful. The table will be reserved for 15 minutes. Reference number is : ABC12345."),
        user(6, "I also need a taxi from Corpus Christi to the Bedouin, leaving at 18:00.", taxi, services),
        system(7, "I have booked a black toyota for you. The contact number is 07218068540."),
        user(8, "Thanks, that's everything. Goodbye.", taxi, services),
        system(9, "Thank you for using our service. Goodbye."),
    ]}


def _sng0101() -> Dict:
    services = ["hospital"]
    return {"dialogue_id": "SNG0101.json", "services": services, "turns": [
        user(0, "I need the phone number of the neurosciences department.",
             {"hospital": {"department": ["neurosciences"]}}, services),
        system(1, "The number is 01223274680."),
    ]}


def _pmul0102() -> Dict:
    services = ["restaurant", "police"]
    state = {"restaurant": {"pricerange": ["cheap"], "area": ["centre"]}}
    return {"dialogue_id": "PMUL0102.json", "services": services, "turns": [
        user(0, "I want a cheap restaurant in the centre.", state, services),
        system(1, "Charlie Chan is a cheap Chinese restaurant in the centre."),
        user(2, "Great. Also, what is the number of the police station?", state, services),
        system(3, "The police phone number is 01223358966."),
        user(4, "Thanks, bye.", state, services),
        system(5, "Goodbye."),
    ]}


def _sng0103() -> Dict:
    services = ["train"]
    route = {"train": {"departure": ["cambridge"], "destination": ["london kings cross"], "day": ["monday"]}}
    later = {"train": {**route["train"], "leaveat": ["10:30"], "bookpeople": ["3"]}}
    return {"dialogue_id": "SNG0103.json", "services": services, "turns": [
        user(0, "I need a train from Cambridge to London Kings Cross on Monday.", route, services),
        system(1, "TR1234 leaves at 09:00. Would that work?"),
        user(2, "I'd rather leave after 10:30. Book it for 3 people.", later, services),
        system(3, "I booked TR5678 for 3 people, reference XYZ98765."),
        user(4, "Thanks, goodbye.", later, services),
        system(5, "Have a nice trip."),
    ]}


def _mul0104() -> Dict:
    services = ["hotel", "attraction"]
    hotel = {"hotel": {"type": ["guesthouse"], "area": ["north"], "parking": ["yes"]}}
    both = {**hotel, "attraction": {"type": ["museum"], "area": ["centre"]}}
    return {"dialogue_id": "MUL0104.json", "services": services, "turns": [
        user(0, "I need a guesthouse in the north with free parking.", hotel, services),
        system(1, "How many nights will you stay?"),
        user(2, "Not sure yet. Can you recommend one?", hotel, services),
        system(3, "I recommend Acorn Guest House."),
        user(4, "I also want a museum in the centre.", both, services),
        system(5, "Broughton House Gallery is a museum in the centre."),
        user(6, "Thanks, that's all.", both, services),
        system(7, "Goodbye."),
    ]}


def _pmul0201() -> Dict:
    services = ["hotel"]
    wanted = {"hotel": {"pricerange": ["expensive"], "area": ["centre"]}}
    booked = {"hotel": {**wanted["hotel"], "bookpeople": ["2"], "bookstay": ["3"], "bookday": ["friday"]}}
    return {"dialogue_id": "PMUL0201.json", "services": services, "turns": [
        user(0, "I need an expensive hotel in the centre.", wanted, services),
        system(1, "Gonville Hotel is an expensive hotel in the centre. Shall I book it?"),
        user(2, "Yes, for 2 people and 3 nights starting Friday.", booked, services),
        system(3, "Booked! Reference number is HOT12345."),
        user(4, "Thank you, goodbye.", booked, services),
        system(5, "Goodbye."),
    ]}


def _acts(*turns: Optional[Dict]) -> Dict[str, Dict]:
    """Per-turn dialog acts; None marks a turn without acts"""
    return {str(i): {"dialog_act": acts, "span_info": []} for i, acts in enumerate(turns) if acts is not None}


DIALOG_ACTS = {
    "PMUL0001.json": _acts(
        None, {"Restaurant-Inform": [["choice", "2"], ["pricerange", "expensive"], ["area", "centre"]],
               "Restaurant-Request": [["food", "?"]]},
        None, {"Restaurant-Recommend": [["name", "curry garden"], ["food", "indian"], ["phone", "01223302330"]]},
        None, {"general-bye": [["none", "none"]]},
    ),
    "MUL0002.json": _acts(
        None, {"Attraction-Inform": [["name", "corpus christi"], ["type", "college"], ["area", "centre"],
                                     ["fee", "2 pounds"]]},
        None, {"Restaurant-Recommend": [["name", "bedouin"], ["food", "african"], ["area", "centre"]],
               "Booking-Inform": [["none", "none"]]},
        None, {"Booking-Book": [["ref", "ABC12345"], ["people", "2"], ["time", "19:30"], ["day", "friday"]]},
        None, {"Taxi-Inform": [["car", "black toyota"], ["phone", "07218068540"]]},
        None, {"general-bye": [["none", "none"]]},
    ),
    "PMUL0102.json": _acts(
        None, {"Restaurant-Recommend": [["name", "charlie chan"], ["pricerange", "cheap"], ["food", "chinese"],
                                        ["area", "centre"]]},
        None, {"Police-Inform": [["phone", "01223358966"]]},
        None, {"general-bye": [["none", "none"]]},
    ),
    "SNG0103.json": _acts(
        None, {"Train-Inform": [["id", "TR1234"], ["leave", "09:00"]]},
        None, {"Train-OfferBooked": [["id", "TR5678"], ["people", "3"], ["ref", "XYZ98765"]]},
        None, {"general-bye": [["none", "none"]]},
    ),
    "MUL0104.json": _acts(
        None, {"Hotel-Request": [["stay", "?"]]},
        None, {"Hotel-Recommend": [["name", "acorn guest house"]]},
        None, {"Attraction-Recommend": [["name", "broughton house gallery"], ["type", "museum"], ["area", "centre"]]},
        None, {"general-bye": [["none", "none"]]},
    ),
    "PMUL0201.json": _acts(
        None, {"Hotel-Recommend": [["name", "gonville hotel"], ["pricerange", "expensive"], ["area", "centre"]],
               "Booking-Inform": [["none", "none"]]},
        None, {"Booking-Book": [["ref", "HOT12345"]]},
        None, {"general-bye": [["none", "none"]]},
    ),
}

GOALS = {
    "PMUL0001.json": {
        "restaurant": {"info": {"area": "centre", "pricerange": "expensive"}, "reqt": ["phone"], "fail_info": {}},
        "hotel": {}, "taxi": {}, "police": {},
        "message": ["You are looking for an expensive restaurant in the centre."],
        "topic": {"restaurant": False, "hotel": False},
    },
    "MUL0002.json": {
        "attraction": {"info": {"name": "corpus christi"}, "reqt": ["entrance fee"]},
        "restaurant": {"info": {"food": "african", "area": "centre"},
                       "book": {"people": "2", "day": "friday", "time": "19:30", "invalid": False}},
        "taxi": {"info": {"departure": "corpus christi", "destination": "bedouin", "leaveAt": "18:00"},
                 "reqt": ["car type", "phone"]},
    },
    "PMUL0201.json": {
        "hotel": {"info": {"pricerange": "expensive", "area": "centre"},
                  "book": {"people": "2", "day": "friday", "stay": "3"}},
    },
}


def _dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)


def write_mini_multiwoz(root) -> Path:
    """Write the miniature corpus and database under `root`; returns root"""
    root = Path(root)
    _dump(root / "schema.json", SCHEMA)
    _dump(root / "train" / "dialogues_001.json", [_sng0101(), _pmul0102(), _sng0103(), _mul0104()])
    _dump(root / "dev" / "dialogues_001.json", [_pmul0201()])
    _dump(root / "test" / "dialogues_001.json", [_pmul0001(), _mul0002()])
    _dump(root / "dialog_acts.json", DIALOG_ACTS)
    _dump(root / "goals.json", GOALS)

    db = root / "db"
    _dump(db / "restaurant_db.json", RESTAURANTS)
    _dump(db / "hotel_db.json", HOTELS)
    _dump(db / "attraction_db.json", ATTRACTIONS)
    _dump(db / "train_db.json", TRAINS)
    _dump(db / "taxi_db.json", TAXI)
    _dump(db / "hospital_db.json", HOSPITAL)
    _dump(db / "police_db.json", POLICE)
    return root


def write_config(path, corpus_root, **overrides) -> Path:
    """All-template run config pointing at a miniature corpus"""
    import yaml

    from orchestrator import template_registry

    config = {
        "corpus_root": str(corpus_root),
        "split": "test",
        "seed": 0,
        "concurrency": 2,
        "output_dir": str(Path(path).parent / "output"),
        "registry": template_registry().model_dump(exclude_none=True),
    }
    config.update(overrides)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config, f, sort_keys=True)
    return path


def make_context(*lines: str):
    """Alternating USER/SYSTEM turns starting with USER"""
    from corpus import SYSTEM, USER, Turn

    return [Turn(index=i, speaker=USER if i % 2 == 0 else SYSTEM, utterance=line) for i, line in enumerate(lines)]
