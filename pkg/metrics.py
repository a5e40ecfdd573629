"""
Evaluation metrics

- JSA: joint state match per user turn (dst.joint_match)
- Inform / Success: goal venues offered and requested attributes provided
- BLEU: corpus 4-gram BLEU on delexicalized responses
- Combined: (inform + success) / 2 + BLEU
- Richness: conditional bigram entropy, unique words, unique trigrams
- DST error taxonomy and the venue-suggestion behaviour of gold system turns
"""

import json
import logging
import re
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from nltk.translate.bleu_score import brevity_penalty
from nltk.util import ngrams
from pydantic import BaseModel

from corpus import Dialogue
from delex import TOKEN_RE, gold_delex_responses, slot_for_key, system_turn_domain
from domains import ACTIVE_DOMAINS, TRAIN, VENUE_DOMAINS
from dst import (DEFAULT_FUZZY_THRESHOLD, DialogueState, clean_state, joint_match, project_state,
                 state_domains, state_keys, state_triples, values_match)
from errors import MetricsError
from kb import Venue, VenueDatabase
from phrases import normalize_text
from predictions import PredictionSet, TurnPrediction, by_turn

logger = logging.getLogger(__name__)

ERROR_CATEGORIES = ("correct", "over_prediction", "under_prediction", "both_mismatch", "value_match_error")

BUCKETS = (">=10", "5-9", "<5")

BLEU_ORDER = 4
ZERO_MATCH_EPSILON = 0.1

_BLEU_TOKEN_RE = re.compile(r"\[[a-z]+_[a-z]+\]|\w+|[^\w\s]")
_NAMING_ACTS = {"recommend", "inform", "select"}


def tokenize(text: Optional[str]) -> List[str]:
    """Lowercase word tokens with punctuation split off; delex tokens stay whole"""
    return _BLEU_TOKEN_RE.findall((text or "").lower())


# ============================================================================
# REPORT
# ============================================================================

class EvalReport(BaseModel):
    dialogues: int = 0
    turns: int = 0
    failed_turns: int = 0
    missing_predictions: int = 0
    jsa: float = 0.0
    jsa_per_domain: Dict[str, float] = {}
    inform: Optional[float] = None
    success: Optional[float] = None
    bleu: Optional[float] = None
    combined: Optional[float] = None
    mean_dialogue_bleu: Optional[float] = None
    cbe: Optional[float] = None
    unique_words: Optional[int] = None
    unique_trigrams: Optional[int] = None
    per_domain: Dict[str, Dict[str, float]] = {}
    error_histogram: Dict[str, float] = {}
    error_breakdown: Dict[str, float] = {}

    def table(self) -> pd.DataFrame:
        rows = []
        for domain, scores in sorted(self.per_domain.items()):
            rows.append({"domain": domain, **scores, "jsa": self.jsa_per_domain.get(domain)})
        rows.append({"domain": "ALL", "inform": self.inform, "success": self.success, "bleu": self.bleu,
                     "combined": self.combined, "dialogues": self.dialogues, "turns": self.turns,
                     "jsa": self.jsa})
        return pd.DataFrame(rows).set_index("domain")


def save_report(report: EvalReport, output_dir, stem: str = "eval_report") -> Tuple[Path, Path]:
    """Write <stem>.json and <stem>.csv (per-domain table)"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    json_path = output_dir / f"{stem}.json"
    csv_path = output_dir / f"{stem}.csv"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.model_dump(), f, indent=2, sort_keys=True)
        f.write("\n")
    report.table().to_csv(csv_path)
    logger.info(f"Saved report to {json_path} and {csv_path}")
    return json_path, csv_path


def load_report(path) -> EvalReport:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return EvalReport.model_validate(json.load(f))
    except (OSError, json.JSONDecodeError, ValueError) as e:
        raise MetricsError(f"Cannot read report {path}: {e}")


# ============================================================================
# JSA
# ============================================================================

def jsa(pred_set: PredictionSet, dialogues: Sequence[Dialogue],
        threshold: float = DEFAULT_FUZZY_THRESHOLD) -> Tuple[float, Dict[str, float], int]:
    """
    Joint state accuracy over every user turn of `dialogues`.

    A turn with no prediction counts as a mismatch.

    Returns:
        (jsa, per-domain jsa, missing prediction count). A domain's score
        covers the turns where it appears in the gold or predicted state.
    """
    total = matched = missing = 0
    domain_total: Counter = Counter()
    domain_matched: Counter = Counter()

    for dialogue in dialogues:
        predictions = by_turn(pred_set.get(dialogue.dialogue_id, []))
        for turn in dialogue.user_turns():
            gold = clean_state(turn.gold_state)
            prediction = predictions.get(turn.index)
            if prediction is None:
                missing += 1
            pred = clean_state(prediction.state) if prediction is not None else {}
            total += 1
            matched += int(prediction is not None and joint_match(pred, gold, threshold))

            for domain in set(state_domains(gold)) | set(state_domains(pred)):
                domain_total[domain] += 1
                domain_matched[domain] += int(joint_match(project_state(pred, domain),
                                                          project_state(gold, domain), threshold))

    if missing:
        logger.warning(f"jsa: {missing} user turns have no prediction (counted as mismatches)")
    per_domain = {d: domain_matched[d] / domain_total[d] for d in sorted(domain_total)}
    return (matched / total if total else 0.0), per_domain, missing


# ============================================================================
# INFORM / SUCCESS
# ============================================================================

class DialogueScore(BaseModel):
    """Per-domain inform/success flags of one dialogue"""
    informed: Dict[str, bool] = {}
    succeeded: Dict[str, bool] = {}

    @property
    def inform(self) -> bool:
        return all(self.informed.values())

    @property
    def success(self) -> bool:
        return self.inform and all(self.succeeded.values())


def _final_predicted_state(predictions: Sequence[TurnPrediction]) -> DialogueState:
    for prediction in sorted(predictions, key=lambda p: p.turn_index, reverse=True):
        if prediction.state:
            return clean_state(prediction.state)
    return {}


def offered_venues(domain: str, predictions: Sequence[TurnPrediction], db: VenueDatabase) -> List[Venue]:
    """Venues named in predicted responses, via name/id bindings or surface mentions"""
    name_token = f"[{domain}_{'id' if domain == TRAIN else 'name'}]"
    offered: List[Venue] = []

    def add(venue: Optional[Venue]) -> None:
        if venue is not None and all(v.id != venue.id for v in offered):
            offered.append(venue)

    for prediction in sorted(predictions, key=lambda p: p.turn_index):
        value = prediction.token_values.get(name_token)
        if value and name_token in (prediction.response_delex or ""):
            add(db.find_by_id(domain, value) if domain == TRAIN else db.find_by_name(domain, value))
        for _, venue in db.mentions(prediction.response_surface or "", domains=[domain]):
            add(venue)
    return offered


def _train_constraints_met(goal_informable: Dict[str, str], final_state: DialogueState,
                           threshold: float) -> bool:
    predicted = final_state.get(TRAIN, {})
    for key, value in goal_informable.items():
        if key not in predicted or not values_match(predicted[key], [value], threshold):
            return False
    return bool(goal_informable)


def _provided_slots(domain: str, predictions: Sequence[TurnPrediction], offered: Sequence[Venue]) -> Set[str]:
    """Token slots of `domain` that some response gives the user"""
    provided: Set[str] = set()
    for prediction in predictions:
        text = prediction.response_delex or ""
        for token_domain, slot in TOKEN_RE.findall(text):
            if token_domain == domain:
                provided.add(slot)
        surface = normalize_text(prediction.response_surface or "")
        if not surface:
            continue
        for venue in offered:
            for key, value in venue.attributes.items():
                slot = slot_for_key(domain, key)
                normalized = normalize_text(value)
                if slot and normalized and len(normalized) > 2 and f" {normalized} " in f" {surface} ":
                    provided.add(slot)
    return provided


def score_dialogue(dialogue: Dialogue, predictions: Sequence[TurnPrediction], db: VenueDatabase,
                   threshold: float = DEFAULT_FUZZY_THRESHOLD) -> DialogueScore:
    """
    Inform and success of one dialogue, per goal domain.

    A venue domain is informed when some offered venue satisfies the goal
    constraints under the database query rules. Train falls back to the final
    predicted train constraints when no train id was given and none was
    requested. Taxi is informed vacuously. Success additionally needs every
    goal requestable that has a token slot to be given by some response.
    """
    score = DialogueScore()
    final_state = _final_predicted_state(predictions)

    for domain, goal in dialogue.goal.domains.items():
        if domain not in ACTIVE_DOMAINS:
            continue

        offered: List[Venue] = []
        if domain in VENUE_DOMAINS and db.has_table(domain):
            constraints = {k: v for k, v in goal.informable.items() if k in db.keys(domain)}
            goal_ids = {v.id for v in db.query(domain, constraints)}
            offered = offered_venues(domain, predictions, db)
            informed = any(v.id in goal_ids for v in offered)
            if domain == TRAIN and not offered and "trainid" not in goal.requestable:
                informed = _train_constraints_met(constraints, final_state, threshold)
        else:
            informed = True
        score.informed[domain] = informed

        required = {slot_for_key(domain, r) for r in goal.requestable} - {None}
        provided = _provided_slots(domain, predictions, offered)
        score.succeeded[domain] = informed and required <= provided
    return score


def inform(dialogue: Dialogue, predictions: Sequence[TurnPrediction], db: VenueDatabase,
           threshold: float = DEFAULT_FUZZY_THRESHOLD) -> bool:
    return score_dialogue(dialogue, predictions, db, threshold).inform


def success(dialogue: Dialogue, predictions: Sequence[TurnPrediction], db: VenueDatabase,
            threshold: float = DEFAULT_FUZZY_THRESHOLD) -> bool:
    return score_dialogue(dialogue, predictions, db, threshold).success


# ============================================================================
# BLEU
# ============================================================================

def _ngram_counts(hypothesis: List[str], reference: List[str]) -> np.ndarray:
    """(clipped matches, hypothesis n-grams) for orders 1 to 4"""
    counts = []
    for n in range(1, BLEU_ORDER + 1):
        hyp, ref = Counter(ngrams(hypothesis, n)), Counter(ngrams(reference, n))
        counts.append((sum((hyp & ref).values()), sum(hyp.values())))
    return np.array(counts, dtype=float)


def _bleu_score(pairs: Iterable[Tuple[str, str]]) -> float:
    counts = np.zeros((BLEU_ORDER, 2))
    hyp_len = ref_len = 0
    for hypothesis, reference in pairs:
        hyp_tokens, ref_tokens = tokenize(hypothesis), tokenize(reference)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        counts += _ngram_counts(hyp_tokens, ref_tokens)

    matched, total = counts[:, 0], counts[:, 1]
    present = total > 0
    if not present.any():
        return 0.0
    precisions = np.maximum(matched[present], ZERO_MATCH_EPSILON) / total[present]
    return 100.0 * brevity_penalty(ref_len, hyp_len) * float(np.exp(np.log(precisions).mean()))


def bleu(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """
    Corpus BLEU (up to 4-grams, one reference per hypothesis) on
    delexicalized text, scaled to 0-100.

    Matches and n-gram totals are summed over the corpus before dividing.
    Orders with no hypothesis n-grams at all are left out of the geometric
    mean, so a corpus of two-word replies is scored on unigrams and bigrams
    and identical text always scores 100. An order with n-grams but no match
    counts as ZERO_MATCH_EPSILON matches.

    Raises:
        MetricsError: no hypotheses
    """
    if not hypotheses:
        raise MetricsError("BLEU needs at least one hypothesis")
    if len(hypotheses) != len(references):
        raise MetricsError(f"{len(hypotheses)} hypotheses for {len(references)} references")
    return _bleu_score(zip(hypotheses, references))


def sentence_bleu(hypothesis: str, reference: str) -> float:
    return _bleu_score([(hypothesis, reference)])


def dialogue_bleu(pairs: Sequence[Tuple[str, str]]) -> float:
    """Mean sentence BLEU over the (hypothesis, reference) turns of one conversation"""
    if not pairs:
        return 0.0
    return float(np.mean([sentence_bleu(h, r) for h, r in pairs]))


def combined(inform_pct: float, success_pct: float, bleu_score: float) -> float:
    return (inform_pct + success_pct) / 2 + bleu_score


# ============================================================================
# RICHNESS
# ============================================================================

def richness(texts: Iterable[str]) -> Dict[str, float]:
    """
    Lexical richness of a set of responses.

    cbe = -sum over bigrams (w1, w2) of p(w1, w2) * log2 p(w2 | w1), with
    bigrams taken within each response.

    Raises:
        MetricsError: no tokens at all
    """
    sentences = [tokenize(t) for t in texts]
    words = [w for s in sentences for w in s]
    if not words:
        raise MetricsError("richness needs at least one non-empty response")

    bigrams = Counter(pair for s in sentences for pair in zip(s, s[1:]))
    trigrams = {tri for s in sentences for tri in zip(s, s[1:], s[2:])}

    cbe = 0.0
    if bigrams:
        contexts = Counter()
        for (w1, _), count in bigrams.items():
            contexts[w1] += count
        counts = np.array(list(bigrams.values()), dtype=float)
        context_counts = np.array([contexts[w1] for w1, _ in bigrams], dtype=float)
        joint = counts / counts.sum()
        conditional = counts / context_counts
        cbe = float(-np.sum(joint * np.log2(conditional)))
        cbe = abs(cbe)  # -0.0 otherwise

    return {"cbe": cbe, "unique_words": len(set(words)), "unique_trigrams": len(trigrams)}


# ============================================================================
# DST ERROR TAXONOMY
# ============================================================================

def _covered(triples, others, threshold: float) -> bool:
    """Every triple has a counterpart with the same key and a fuzzy-equal value"""
    return all(
        any(t.domain == o.domain and t.key == o.key and values_match(t.value, o.value, threshold) for o in others)
        for t in triples
    )


def classify_dst_error(pred: DialogueState, gold: DialogueState,
                       threshold: float = DEFAULT_FUZZY_THRESHOLD) -> str:
    """
    Category of one predicted state against gold.

    Subset relations are checked before values: equal -> correct, gold a
    strict subset of pred -> over_prediction, pred a strict subset of gold
    -> under_prediction, same keys -> value_match_error, else both_mismatch.
    """
    pred, gold = clean_state(pred, active_only=False), clean_state(gold, active_only=False)
    pred_triples, gold_triples = state_triples(pred), state_triples(gold)
    pred_in_gold = _covered(pred_triples, gold_triples, threshold)
    gold_in_pred = _covered(gold_triples, pred_triples, threshold)

    if pred_in_gold and gold_in_pred:
        return "correct"
    if gold_in_pred:
        return "over_prediction"
    if pred_in_gold:
        return "under_prediction"
    if state_keys(pred) == state_keys(gold):
        return "value_match_error"
    return "both_mismatch"


def error_histogram(pred_set: PredictionSet, dialogues: Sequence[Dialogue],
                    threshold: float = DEFAULT_FUZZY_THRESHOLD) -> Tuple[Dict[str, float], Dict[str, float]]:
    """
    Category fractions over all user turns, and over the non-correct turns only.
    """
    counts: Counter = Counter()
    for dialogue in dialogues:
        predictions = by_turn(pred_set.get(dialogue.dialogue_id, []))
        for turn in dialogue.user_turns():
            prediction = predictions.get(turn.index)
            pred = prediction.state if prediction is not None else {}
            counts[classify_dst_error(pred, clean_state(turn.gold_state), threshold)] += 1

    total = sum(counts.values())
    errors = total - counts["correct"]
    histogram = {c: counts[c] / total if total else 0.0 for c in ERROR_CATEGORIES}
    breakdown = {c: counts[c] / errors if errors else 0.0 for c in ERROR_CATEGORIES if c != "correct"}
    return histogram, breakdown


# ============================================================================
# VENUE SUGGESTION BEHAVIOUR
# ============================================================================

def bucket_of(count: int) -> str:
    if count >= 10:
        return ">=10"
    if count >= 5:
        return "5-9"
    return "<5"


def _names_venue(acts, domain: str, act_types: Optional[Set[str]] = None) -> bool:
    return any(
        act_domain == domain and slot in ("name", "trainid") and value not in ("none", "?")
        and (act_types is None or act_type in act_types)
        for act_type, act_domain, slot, value in acts
    )


def _named_domains(turn) -> Set[str]:
    """Domains with a venue named by a turn, through its acts or (user turns) a name slot in its state"""
    named = {domain for _, domain, slot, value in turn.dialogue_acts
             if slot in ("name", "trainid") and value not in ("none", "?")}
    if turn.is_user:
        named |= {domain for domain, slots in clean_state(turn.gold_state).items() if "name" in slots}
    return named


def venue_suggestion_analysis(dialogues: Iterable[Dialogue], db: VenueDatabase,
                              first_turn_only: bool = False) -> Dict[str, Dict[str, float]]:
    """
    How often gold system turns name a venue, by the number of matching venues.

    Eligible turns: the turn's domain has a table, no venue of that domain
    has been named at any earlier point of the conversation (by either side,
    in any turn domain), and the preceding user state matches at least one
    venue. A turn names a venue when it carries a Recommend, Inform or Select
    act with a name or train id.

    Args:
        first_turn_only: only the first eligible turn of each domain counts

    Returns:
        {bucket: {"turns", "named", "rate"}} with rate in percent
    """
    turns: Counter = Counter()
    named: Counter = Counter()

    for dialogue in dialogues:
        done: Set[str] = set()
        for position, turn in enumerate(dialogue.turns):
            domain = None if turn.is_user or position == 0 else system_turn_domain(dialogue, position)
            if domain in VENUE_DOMAINS and db.has_table(domain) and domain not in done:
                state = clean_state(dialogue.turns[position - 1].gold_state)
                count = len(db.query(domain, db.constraints_from_state(domain, state)))
                if count:
                    bucket = bucket_of(count)
                    turns[bucket] += 1
                    if _names_venue(turn.dialogue_acts, domain, _NAMING_ACTS):
                        named[bucket] += 1
                    if first_turn_only:
                        done.add(domain)
            done |= _named_domains(turn)

    return {
        bucket: {"turns": turns[bucket], "named": named[bucket],
                 "rate": 100.0 * named[bucket] / turns[bucket] if turns[bucket] else 0.0}
        for bucket in BUCKETS
    }


# ============================================================================
# GOLD ORACLE AND FULL EVALUATION
# ============================================================================

def gold_prediction_set(dialogues: Iterable[Dialogue], db: VenueDatabase) -> PredictionSet:
    """Gold states and gold delexicalized replies in PredictionSet form"""
    prediction_set: PredictionSet = {}
    for dialogue in dialogues:
        responses = gold_delex_responses(dialogue, db)
        turns: List[TurnPrediction] = []
        for position, turn in enumerate(dialogue.turns):
            if not turn.is_user:
                continue
            reply = dialogue.turns[position + 1] if position + 1 < len(dialogue.turns) else None
            delex = responses.get(turn.index)
            turns.append(TurnPrediction(
                turn_index=turn.index,
                state=clean_state(turn.gold_state),
                response_delex=delex.text if delex else "",
                response_surface=reply.utterance if reply else "",
                active_domain=system_turn_domain(dialogue, position + 1) if reply else None,
                token_values=dict(delex.token_values) if delex else {},
            ))
        prediction_set[dialogue.dialogue_id] = turns
    return prediction_set


def _response_pairs(dialogue: Dialogue, predictions: Dict[int, TurnPrediction],
                    gold: Dict) -> List[Tuple[str, str, Optional[str]]]:
    """(hypothesis, reference, predicted domain) for every gold system turn"""
    pairs = []
    for turn_index, reference in sorted(gold.items()):
        if not reference.text:
            continue
        prediction = predictions.get(turn_index)
        hypothesis = (prediction.response_delex or "") if prediction is not None else ""
        pairs.append((hypothesis, reference.text, prediction.active_domain if prediction else None))
    return pairs


def evaluate(pred_set: PredictionSet, dialogues: Sequence[Dialogue], db: VenueDatabase,
             threshold: float = DEFAULT_FUZZY_THRESHOLD) -> EvalReport:
    """
    Full report for a PredictionSet over the given gold dialogues.

    Response metrics are left empty when the predictions carry no responses
    (dst_only runs).
    """
    report = EvalReport(dialogues=len(dialogues))
    report.turns = sum(len(d.user_turns()) for d in dialogues)
    report.failed_turns = sum(1 for d in dialogues for t in pred_set.get(d.dialogue_id, []) if t.error)
    report.jsa, report.jsa_per_domain, report.missing_predictions = jsa(pred_set, dialogues, threshold)
    report.error_histogram, report.error_breakdown = error_histogram(pred_set, dialogues, threshold)

    has_responses = any(t.response_delex is not None for turns in pred_set.values() for t in turns)
    if not has_responses or not dialogues:
        return report

    hypotheses, references, dialogue_bleus = [], [], []
    domain_pairs: Dict[str, List[Tuple[str, str]]] = {}
    informed, succeeded = [], []
    domain_flags: Dict[str, List[Tuple[bool, bool]]] = {}

    for dialogue in dialogues:
        predictions = pred_set.get(dialogue.dialogue_id, [])
        pairs = _response_pairs(dialogue, by_turn(predictions), gold_delex_responses(dialogue, db))
        for hypothesis, reference, domain in pairs:
            hypotheses.append(hypothesis)
            references.append(reference)
            if domain:
                domain_pairs.setdefault(domain, []).append((hypothesis, reference))
        if pairs:
            dialogue_bleus.append(dialogue_bleu([(h, r) for h, r, _ in pairs]))

        score = score_dialogue(dialogue, predictions, db, threshold)
        informed.append(score.inform)
        succeeded.append(score.success)
        for domain, flag in score.informed.items():
            domain_flags.setdefault(domain, []).append((flag, score.succeeded[domain]))

    report.inform = 100.0 * float(np.mean(informed))
    report.success = 100.0 * float(np.mean(succeeded))
    report.bleu = bleu(hypotheses, references) if hypotheses else 0.0
    report.combined = combined(report.inform, report.success, report.bleu)
    report.mean_dialogue_bleu = float(np.mean(dialogue_bleus)) if dialogue_bleus else 0.0

    for domain in sorted(set(domain_flags) | set(domain_pairs)):
        flags = domain_flags.get(domain, [])
        pairs = domain_pairs.get(domain, [])
        domain_inform = 100.0 * float(np.mean([f for f, _ in flags])) if flags else 0.0
        domain_success = 100.0 * float(np.mean([s for _, s in flags])) if flags else 0.0
        domain_bleu = bleu([h for h, _ in pairs], [r for _, r in pairs]) if pairs else 0.0
        report.per_domain[domain] = {
            "inform": domain_inform,
            "success": domain_success,
            "bleu": domain_bleu,
            "combined": combined(domain_inform, domain_success, domain_bleu),
            "dialogues": len(flags),
            "turns": len(pairs),
        }

    texts = [t.response_delex for turns in pred_set.values() for t in turns if t.response_delex]
    if texts:
        stats = richness(texts)
        report.cbe, report.unique_words, report.unique_trigrams = (stats["cbe"], int(stats["unique_words"]),
                                                                   int(stats["unique_trigrams"]))
    return report
