import pytest

from delex import (AgentOutput, DelexResponse, DelexToken, delexicalize, gold_delex_responses, gold_delex_turn,
                   lexicalize, parse_agent_output, render_agent_output, slot_for_key, system_turn_domain,
                   vocabulary_tokens)
from errors import AgentOutputParseError, UnboundTokenError


def _dialogue(corpus, dialogue_id):
    for split in ("train", "dev", "test"):
        for dialogue in corpus.split(split):
            if dialogue.dialogue_id == dialogue_id:
                return dialogue
    raise KeyError(dialogue_id)


# ============================================================================
# VOCABULARY
# ============================================================================

def test_restaurant_vocabulary():
    tokens = vocabulary_tokens("restaurant")
    assert len(tokens) == 12
    assert "[restaurant_bookpeople]" in tokens


def test_token_parse():
    assert DelexToken.parse("[hotel_stars]") == DelexToken("hotel", "stars")
    assert DelexToken.parse("[hotel_stars]").in_vocabulary()
    assert not DelexToken("hotel", "food").in_vocabulary()
    assert DelexToken.parse("NAME") is None


def test_slot_for_key():
    assert slot_for_key("attraction", "entrancefee") == "price"
    assert slot_for_key("train", "trainid") == "id"
    assert slot_for_key("restaurant", "ref") == "ref"
    assert slot_for_key("restaurant", "introduction") is None


# ============================================================================
# DELEXICALIZE / LEXICALIZE
# ============================================================================

def test_longer_values_replaced_first(db):
    venue = db.find_by_name("restaurant", "curry garden")
    delex = delexicalize("Curry Garden is at 106 Regent Street City Centre.", offered=[venue])
    assert delex.text == "[restaurant_name] is at [restaurant_address]."
    assert delex.token_values["[restaurant_address]"] == "106 Regent Street City Centre"


def test_token_keeps_first_value(db):
    venues = [db.find_by_name("restaurant", "curry garden"), db.find_by_name("restaurant", "bedouin")]
    delex = delexicalize("Both Curry Garden and Bedouin are in the centre.", offered=venues)
    assert delex.text == "Both [restaurant_name] and Bedouin are in the [restaurant_area]."
    assert delex.token_values == {"[restaurant_name]": "Curry Garden", "[restaurant_area]": "centre"}


def test_only_the_exact_count_becomes_choice():
    assert delexicalize("I found 2 places.", count=2, domain="restaurant").text == "I found [restaurant_choice] places."
    assert delexicalize("I found 2 places.", count=3, domain="restaurant").text == "I found 2 places."


def test_generic_values_stay_as_text():
    state = {"restaurant": {"food": ["dontcare"]}, "hotel": {"parking": ["yes"], "internet": ["free"]}}
    delex = delexicalize("Yes, it has free wifi, and any food is fine.", state=state)
    assert delex.token_values == {}


def test_word_boundaries():
    delex = delexicalize("The northern line is closed.", state={"hotel": {"area": ["north"]}})
    assert delex.text == "The northern line is closed."


def test_lexicalize_is_inverse(db):
    venue = db.find_by_name("hotel", "acorn guest house")
    utterance = "Acorn Guest House is a moderate guesthouse in the north, phone 01223353888."
    assert lexicalize(delexicalize(utterance, offered=[venue])) == utterance


def test_lexicalize_unbound_token():
    with pytest.raises(UnboundTokenError) as excinfo:
        lexicalize(DelexResponse("Call [hotel_phone].", {}))
    assert excinfo.value.token == "[hotel_phone]"


def test_unbound_tokens_listed_once():
    delex = DelexResponse("[hotel_name] or [hotel_name] at [hotel_phone]", {"[hotel_name]": "acorn"})
    assert delex.unbound_tokens() == ["[hotel_phone]"]


# ============================================================================
# AGENT OUTPUT FORMAT
# ============================================================================

def test_parse_agent_output():
    raw = ("Response: I recommend NAME. Their phone is [restaurant_phone].\n"
           "Token_values: [restaurant_name] - curry garden, [restaurant_phone] - 01223302330\n"
           "Reasoning: the user asked for a phone number")
    output = parse_agent_output(raw)
    assert output.response == "I recommend [restaurant_name]. Their phone is [restaurant_phone]."
    assert output.token_values == {"[restaurant_name]": "curry garden", "[restaurant_phone]": "01223302330"}
    assert output.reasoning == "the user asked for a phone number"


def test_uppercase_placeholders_in_token_values():
    output = parse_agent_output("Response: NAME serves FOOD food.\nToken_values: NAME - bedouin, FOOD - african",
                                domain="restaurant")
    assert output.response == "[restaurant_name] serves [restaurant_food] food."
    assert output.token_values == {"[restaurant_name]": "bedouin", "[restaurant_food]": "african"}


def test_count_phrases():
    output = parse_agent_output("Response: Booked for COUNT people, reference REFERENCE.", domain="restaurant")
    assert output.response == "Booked for [restaurant_bookpeople] people, reference [restaurant_ref]."
    assert output.token_values == {}
    assert output.reasoning == ""


def test_empty_token_values():
    output = parse_agent_output("Response: What area would you like?\nToken_values: none\nReasoning: ask",
                                domain="hotel")
    assert output.token_values == {}


def test_missing_response_field():
    with pytest.raises(AgentOutputParseError) as excinfo:
        parse_agent_output("I think the answer is curry garden.")
    assert "curry garden" in excinfo.value.raw


def test_to_delex_drops_unused_bindings():
    output = AgentOutput("Try [hotel_name].", {"[hotel_name]": "acorn guest house", "[hotel_phone]": "0"})
    assert output.to_delex().token_values == {"[hotel_name]": "acorn guest house"}


def test_rendered_output_parses_back():
    output = AgentOutput("Try [hotel_name].", {"[hotel_name]": "acorn guest house"}, "it matches")
    assert parse_agent_output(render_agent_output(output)) == output


# ============================================================================
# GOLD SYSTEM TURNS
# ============================================================================

def test_gold_delex_count_and_state_values(raw_corpus, db):
    pmul0001 = _dialogue(raw_corpus, "PMUL0001.json")
    delex = gold_delex_turn(pmul0001, 1, db)
    assert delex.text == ("There are [restaurant_choice] [restaurant_pricerange] restaurants in the "
                          "[restaurant_area]. What type of food would you like?")
    assert delex.token_values["[restaurant_choice]"] == "2"


def test_gold_delex_offered_venue(raw_corpus, db):
    pmul0001 = _dialogue(raw_corpus, "PMUL0001.json")
    delex = gold_delex_turn(pmul0001, 3, db)
    assert delex.text == ("There is an [restaurant_food] restaurant called [restaurant_name]. "
                          "Their phone number is [restaurant_phone].")
    assert delex.token_values["[restaurant_name]"] == "Curry Garden"


def test_gold_delex_booking_turn(raw_corpus, db):
    mul0002 = _dialogue(raw_corpus, "MUL0002.json")
    assert system_turn_domain(mul0002, 5) == "restaurant"
    delex = gold_delex_turn(mul0002, 5, db)
    assert delex.text.endswith("Reference number is : [restaurant_ref].")
    assert delex.token_values["[restaurant_ref]"] == "ABC12345"


def test_gold_delex_taxi_turn(raw_corpus, db):
    mul0002 = _dialogue(raw_corpus, "MUL0002.json")
    delex = gold_delex_turn(mul0002, 7, db)
    assert delex.text == "I have booked a [taxi_type] for you. The contact number is [taxi_phone]."


def test_gold_delex_keyed_by_user_turn(raw_corpus, db):
    responses = gold_delex_responses(_dialogue(raw_corpus, "MUL0002.json"), db)
    assert sorted(responses) == [0, 2, 4, 6, 8]


def test_gold_delex_lexicalizes_back(raw_corpus, db):
    for dialogue in raw_corpus.split("test") + raw_corpus.split("dev"):
        for position, turn in enumerate(dialogue.turns):
            if not turn.is_user:
                assert lexicalize(gold_delex_turn(dialogue, position, db)) == turn.utterance
