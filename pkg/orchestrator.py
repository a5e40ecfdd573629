"""
DARD control loop

Per user turn:
1. Dialog manager detects the domains of the conversation and delegates the
   turn to one of them
2. Every detected domain's tracker re-tracks the full context; the states
   are merged
3. The delegated domain's constraints are run against the venue database
4. The delegated domain's responder writes the delexicalized reply, which is
   then lexicalized

run_corpus replays gold conversations (gold user side, predicted system side)
across a thread pool.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import httpx
from pydantic import BaseModel, ConfigDict, model_validator
from tqdm import tqdm

from agents import (AgentFactory, AgentSpec, ResponseExample, Responder, Tracker, classify_scenario,
                    domain_anchors, is_closing, last_user_text, require_credentials)
from corpus import SYSTEM, USER, Corpus, Dialogue, DstExample, Turn, export_dst, render_context, write_jsonl
from delex import DelexResponse, gold_delex_turn, lexicalize, system_turn_domain
from domains import ACTIVE_DOMAINS, TAXI
from dst import DialogueState, clean_state, state_domains, union_states
from errors import DardError, StateMergeError
from kb import BookingRecord, VenueDatabase, VenueSummary
from metrics import EvalReport
from phrases import normalize_text
from predictions import PredictionSet, TurnPrediction

logger = logging.getLogger(__name__)

GREETING = "hello , how can i help you today ?"
RUN_MODES = ("dst_only", "end_to_end")


# ============================================================================
# REGISTRY
# ============================================================================

class Registry(BaseModel):
    """
    Which agent serves which domain.

    Per-domain maps must cover all five active domains unless a single
    all-domain agent stands in for them.
    """

    model_config = ConfigDict(extra="forbid")

    manager: Optional[AgentSpec] = None
    trackers: Dict[str, AgentSpec] = {}
    responders: Dict[str, AgentSpec] = {}
    single_tracker: Optional[AgentSpec] = None
    single_responder: Optional[AgentSpec] = None

    @model_validator(mode="after")
    def _total_over_domains(self) -> "Registry":
        for role, mapping, single in (("trackers", self.trackers, self.single_tracker),
                                      ("responders", self.responders, self.single_responder)):
            unknown = sorted(set(mapping) - set(ACTIVE_DOMAINS))
            if unknown:
                raise ValueError(f"{role}: unknown domain(s) {', '.join(unknown)}")
            missing = [d for d in ACTIVE_DOMAINS if d not in mapping]
            if missing and single is None:
                raise ValueError(f"{role}: no agent for {', '.join(missing)}")
        return self

    def tracker_spec(self, domain: str) -> AgentSpec:
        return self.trackers.get(domain) or self.single_tracker

    def responder_spec(self, domain: str) -> AgentSpec:
        return self.responders.get(domain) or self.single_responder

    def specs(self) -> List[AgentSpec]:
        found = [self.manager, self.single_tracker, self.single_responder,
                 *self.trackers.values(), *self.responders.values()]
        return [s for s in found if s is not None]

    def has_llm_agents(self) -> bool:
        return any(s.kind == "llm" for s in self.specs())


def template_registry(policy: str = "suggest_and_ask") -> Registry:
    """All-template registry: fully deterministic, no network"""
    return Registry(
        trackers={d: AgentSpec(name=f"template-dst-{d}", domain=d) for d in ACTIVE_DOMAINS},
        responders={d: AgentSpec(name=f"template-nlg-{d}", domain=d, policy=policy) for d in ACTIVE_DOMAINS},
    )


# ============================================================================
# SESSION AND TURN RESULTS
# ============================================================================

@dataclass
class Session:
    dialogue_id: str
    transcript: List[Turn] = field(default_factory=list)
    state: DialogueState = field(default_factory=dict)
    bookings: List[BookingRecord] = field(default_factory=list)
    domain_history: List[str] = field(default_factory=list)

    @property
    def last_domain(self) -> Optional[str]:
        return self.domain_history[-1] if self.domain_history else None


@dataclass
class TurnResult:
    surface: str
    delex: Optional[DelexResponse]
    domain: Optional[str]
    state: DialogueState
    summary: Optional[VenueSummary] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


# ============================================================================
# DIALOG MANAGER
# ============================================================================

def _mentions(context: Sequence[Turn], db: Optional[VenueDatabase]) -> List[Tuple[int, int, str]]:
    """(turn position, char position, domain) of every domain lexeme in user lines"""
    found = []
    for position, turn in enumerate(context):
        if turn.is_user:
            found.extend((position, start, domain)
                         for start, domain in domain_anchors(normalize_text(turn.utterance), db))
    return found


def detect_domains(context: Sequence[Turn], db: Optional[VenueDatabase] = None,
                   last_active: Optional[str] = None) -> List[str]:
    """
    Domains the conversation covers, in order of first mention.

    Domains mentioned in earlier user lines stay detected. With no domain
    lexeme anywhere, falls back to `last_active` (when given).
    """
    if not context:
        return []
    detected: List[str] = []
    for _, _, domain in _mentions(context, db):
        if domain not in detected:
            detected.append(domain)
    if not detected and last_active:
        detected = [last_active]
    return detected


def delegate(context: Sequence[Turn], db: Optional[VenueDatabase] = None,
             last_active: Optional[str] = None) -> Optional[str]:
    """
    Responding domain: the detected domain mentioned most recently. When
    several domains share the latest user line, the one named first in it
    wins ("a taxi to the museum" -> taxi).
    """
    mentions = _mentions(context, db)
    if not mentions:
        detected = detect_domains(context, db, last_active)
        return detected[-1] if detected else None

    latest: Dict[str, Tuple[int, int]] = {}
    for position, start, domain in mentions:
        if domain not in latest or position > latest[domain][0]:
            latest[domain] = (position, start)
    return min(latest, key=lambda d: (-latest[d][0], latest[d][1], d))


# ============================================================================
# PIPELINE
# ============================================================================

class Pipeline:
    """Registry bound to built agents and a venue database"""

    def __init__(self, registry: Registry, db: VenueDatabase, factory: Optional[AgentFactory] = None,
                 seed: int = 0):
        self.registry = registry
        self.db = db
        self.seed = seed
        factory = factory or AgentFactory(db=db)

        self.single_tracker: Optional[Tracker] = (factory.tracker(registry.single_tracker)
                                                   if registry.single_tracker else None)
        self.single_responder: Optional[Responder] = (factory.responder(registry.single_responder)
                                                       if registry.single_responder else None)
        self.trackers: Dict[str, Tracker] = {d: factory.tracker(s) for d, s in registry.trackers.items()}
        self.responders: Dict[str, Responder] = {d: factory.responder(s) for d, s in registry.responders.items()}
        self.manager = factory.manager(registry.manager)

    def tracker_for(self, domain: str) -> Tracker:
        return self.single_tracker or self.trackers[domain]

    def responder_for(self, domain: str) -> Responder:
        return self.single_responder or self.responders[domain]

    # ------------------------------------------------------------------ manager

    def detect(self, context: Sequence[Turn], dialogue_id: str = "",
               last_active: Optional[str] = None) -> Tuple[List[str], Optional[str]]:
        """(detected domains, delegated domain)"""
        if self.manager is not None and context:
            try:
                detected = self.manager.detect(context, dialogue_id)
                if detected:
                    return detected, detected[-1]
            except DardError as e:
                logger.warning(f"{dialogue_id}: manager failed ({e}); using rule-based detection")
        detected = detect_domains(context, self.db, last_active)
        return detected, delegate(context, self.db, last_active)

    # ------------------------------------------------------------------ steps

    def track(self, context: Sequence[Turn], detected: Sequence[str],
              dialogue_id: str = "") -> Tuple[DialogueState, List[str]]:
        return multi_agent_dst(context, self, detected, dialogue_id)

    def summarize(self, domain: str, state: DialogueState, dialogue_id: str) -> Optional[VenueSummary]:
        if domain == TAXI:
            return VenueSummary(TAXI, 1, self.db.synthesize_taxi(dialogue_id, self.seed))
        if not self.db.has_table(domain):
            return None
        return self.db.venue_summary(domain, self.db.constraints_from_state(domain, state))

    def step(self, context: Sequence[Turn], dialogue_id: str, turn_index: int,
             last_active: Optional[str] = None, respond: bool = True) -> TurnResult:
        """Predict state (and reply) for a context ending with a user turn"""
        detected, domain = self.detect(context, dialogue_id, last_active)
        state, errors = self.track(context, detected, dialogue_id)
        error = "; ".join(errors) if errors else None
        if not respond:
            return TurnResult("", None, domain, state, error=error)

        if domain is None:
            delex = DelexResponse(text=GREETING)
            return TurnResult(GREETING, delex, None, state, error=error)

        summary = None
        try:
            if not is_closing(last_user_text(context)):
                summary = self.summarize(domain, state, dialogue_id)
            delex = self.responder_for(domain).respond(domain, context, summary, state,
                                                       dialogue_id=dialogue_id, turn_index=turn_index)
            surface = lexicalize(delex)
        except DardError as e:
            logger.warning(f"{dialogue_id} turn {turn_index}: {domain} responder failed: {e}")
            message = f"{domain} responder: {e}"
            return TurnResult("", None, domain, state, summary, f"{error}; {message}" if error else message)
        return TurnResult(surface, delex, domain, state, summary, error)


def multi_agent_dst(context: Sequence[Turn], pipeline: Pipeline, detected: Optional[Sequence[str]] = None,
                    dialogue_id: str = "") -> Tuple[DialogueState, List[str]]:
    """
    Union of per-domain tracker states over the detected domains.

    A failing tracker is reported in the returned error list; the other
    domains are still merged.

    Returns:
        (state, errors)
    """
    if detected is None:
        detected = detect_domains(context, pipeline.db)
    if not detected:
        return {}, []

    if pipeline.single_tracker is not None:
        try:
            return clean_state(pipeline.single_tracker.track(None, context, dialogue_id)), []
        except DardError as e:
            logger.warning(f"{dialogue_id}: single tracker failed: {e}")
            return {}, [f"tracker: {e}"]

    per_domain: List[DialogueState] = []
    errors: List[str] = []
    for domain in detected:
        try:
            per_domain.append(pipeline.tracker_for(domain).track(domain, context, dialogue_id))
        except DardError as e:
            logger.warning(f"{dialogue_id}: {domain} tracker failed: {e}")
            errors.append(f"{domain} tracker: {e}")
    try:
        return union_states(per_domain), errors
    except StateMergeError as e:
        return {}, errors + [str(e)]


def run_turn(session: Session, user_utterance: str, pipeline: Pipeline) -> TurnResult:
    """
    One live turn: append the user line, predict, append the system line.

    Failed turns append an empty system line so the session stays usable.
    """
    user_turn = Turn(index=len(session.transcript), speaker=USER, utterance=user_utterance)
    session.transcript.append(user_turn)

    result = pipeline.step(session.transcript, session.dialogue_id, user_turn.index, session.last_domain)

    session.state = result.state
    if result.domain:
        session.domain_history.append(result.domain)
    if result.delex is not None and result.delex.booking is not None:
        session.bookings.append(result.delex.booking)
    session.transcript.append(Turn(index=len(session.transcript), speaker=SYSTEM, utterance=result.surface))
    return result


# ============================================================================
# CORPUS RUNS
# ============================================================================

def predict_dialogue(dialogue: Dialogue, pipeline: Pipeline, mode: str = "end_to_end") -> List[TurnPrediction]:
    """Replay one gold conversation; the context of user turn i is the gold transcript up to it"""
    predictions: List[TurnPrediction] = []
    last_active: Optional[str] = None
    for position, turn in enumerate(dialogue.turns):
        if not turn.is_user:
            continue
        context = dialogue.turns[:position + 1]
        try:
            result = pipeline.step(context, dialogue.dialogue_id, turn.index, last_active,
                                   respond=(mode == "end_to_end"))
        except DardError as e:
            logger.warning(f"{dialogue.dialogue_id} turn {turn.index}: {e}")
            predictions.append(TurnPrediction(turn_index=turn.index, error=str(e)))
            continue

        last_active = result.domain or last_active
        end_to_end = mode == "end_to_end"
        predictions.append(TurnPrediction(
            turn_index=turn.index,
            state=result.state,
            response_delex=(result.delex.text if result.delex else "") if end_to_end else None,
            response_surface=result.surface if end_to_end else None,
            active_domain=result.domain,
            token_values=dict(result.delex.token_values) if result.delex else {},
            error=result.error,
        ))
    return predictions


def run_corpus(dialogues: Sequence[Dialogue], pipeline: Pipeline, mode: str = "end_to_end",
               workers: int = 1, show_progress: bool = True) -> PredictionSet:
    """
    Replay every dialogue and collect per-turn predictions.

    Args:
        dialogues: Conversations to replay (gold user lines are never altered)
        pipeline: Bound registry
        mode: "dst_only" (states only) or "end_to_end" (states and replies)
        workers: Dialogues processed in parallel; turns within a dialogue stay sequential
        show_progress: Show a tqdm bar

    Returns:
        PredictionSet keyed by dialogue id
    """
    if mode not in RUN_MODES:
        raise ValueError(f"Unknown run mode '{mode}', expected one of {', '.join(RUN_MODES)}")

    def run_one(dialogue: Dialogue) -> Tuple[str, List[TurnPrediction]]:
        return dialogue.dialogue_id, predict_dialogue(dialogue, pipeline, mode)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(tqdm(pool.map(run_one, dialogues), total=len(dialogues),
                            desc=f"run ({mode})", disable=not show_progress))

    prediction_set: PredictionSet = dict(sorted(results))
    failed = sum(1 for turns in prediction_set.values() if any(t.error for t in turns))
    logger.info(f"run_corpus: {len(prediction_set)} dialogues, {failed} with failed turns")
    return prediction_set


# ============================================================================
# RESPONSE TRAINING DATA
# ============================================================================

def gold_summary(db: VenueDatabase, domain: Optional[str], state: DialogueState,
                 dialogue_id: str, seed: int = 0) -> Optional[VenueSummary]:
    if domain == TAXI:
        return VenueSummary(TAXI, 1, db.synthesize_taxi(dialogue_id, seed))
    if domain is None or not db.has_table(domain):
        return None
    return db.venue_summary(domain, db.constraints_from_state(domain, state))


def export_responses(corpus: Corpus, split: str, mode: str, db: VenueDatabase,
                     seed: int = 0) -> List[ResponseExample]:
    """
    One example per gold system turn: the conversation up to the preceding
    user line, the venue block, the gold delexicalized reply and its bindings.

    Args:
        mode: "single" keeps every turn; "per_domain" drops turns whose
            domain cannot be determined
        seed: taxi venue synthesis seed
    """
    if mode not in ("single", "per_domain"):
        raise ValueError(f"Unknown export mode '{mode}'")

    examples: List[ResponseExample] = []
    for dialogue in corpus.split(split):
        last = len(dialogue.turns) - 1
        for position, turn in enumerate(dialogue.turns):
            if turn.is_user or position == 0:
                continue
            domain = system_turn_domain(dialogue, position)
            if mode == "per_domain" and domain is None:
                continue
            state = dialogue.turns[position - 1].gold_state or {}
            summary = gold_summary(db, domain, state, dialogue.dialogue_id, seed)
            delex = gold_delex_turn(dialogue, position, db)
            examples.append(ResponseExample(
                dialogue_id=dialogue.dialogue_id,
                turn_index=turn.index,
                domain=domain,
                context=render_context(dialogue.turns[:position]),
                venues=summary.render() if summary is not None else "",
                response=delex.text,
                token_values=dict(delex.token_values),
                scenario=classify_scenario(delex.text, summary.count if summary else None, domain,
                                           position == last),
            ))
    return examples


def write_response_examples(examples: List[ResponseExample], output_dir, mode: str) -> List[Path]:
    """single mode -> responses_single.jsonl; per_domain -> responses_<domain>.jsonl"""
    output_dir = Path(output_dir)
    if mode == "single":
        return [write_jsonl([e.to_record() for e in examples], output_dir / "responses_single.jsonl")]
    by_domain: Dict[str, List[Dict]] = {}
    for example in examples:
        by_domain.setdefault(example.domain, []).append(example.to_record())
    return [write_jsonl(records, output_dir / f"responses_{domain}.jsonl")
            for domain, records in sorted(by_domain.items())]


def build_pipeline(registry: Registry, db: VenueDatabase, corpus: Optional[Corpus] = None, seed: int = 0,
                   audit_log: Optional[Path] = None, http_client: Optional[httpx.Client] = None) -> Pipeline:
    """
    Build agents for a registry. LLM agents get their in-context example
    pools from the corpus training split.

    Raises:
        AgentConfigError: an LLM agent's credential is missing
    """
    require_credentials(registry.specs())

    dst_examples: List[DstExample] = []
    response_examples: List[ResponseExample] = []
    schema_keys: Dict[str, List[str]] = {}
    if corpus is not None and registry.has_llm_agents():
        dst_examples = export_dst(corpus, mode="per_domain") + export_dst(corpus, mode="single")
        response_examples = export_responses(corpus, "train", "single", db, seed)
        schema_keys = {d: corpus.schema.keys(d) for d in ACTIVE_DOMAINS}
        logger.info(f"In-context pools: {len(dst_examples)} DST, {len(response_examples)} response examples")

    factory = AgentFactory(db=db, dst_examples=dst_examples, response_examples=response_examples,
                           schema_keys=schema_keys, audit_log=audit_log, http_client=http_client)
    return Pipeline(registry, db, factory, seed=seed)


# ============================================================================
# SELECTION AND DIAGNOSTICS
# ============================================================================

@dataclass
class Candidate:
    """One candidate configuration and its validation report"""
    name: str
    registry: Registry
    report: EvalReport


def select_best(candidates: Sequence[Candidate]) -> Registry:
    """
    Per domain, keep the agents of the candidate with the highest per-domain
    combined score; ties go to higher success, then the smaller name.

    Raises:
        ValueError: no candidates
    """
    if not candidates:
        raise ValueError("select_best needs at least one candidate report")

    def rank(candidate: Candidate, domain: Optional[str]):
        scores = candidate.report.per_domain.get(domain) if domain else None
        if scores is None:
            scores = {"combined": candidate.report.combined, "success": candidate.report.success}
        return (-(scores.get("combined") or 0.0), -(scores.get("success") or 0.0), candidate.name)

    overall = min(candidates, key=lambda c: rank(c, None))
    trackers, responders = {}, {}
    for domain in ACTIVE_DOMAINS:
        best = min(candidates, key=lambda c: rank(c, domain))
        trackers[domain] = best.registry.tracker_spec(domain).model_copy(update={"domain": domain})
        responders[domain] = best.registry.responder_spec(domain).model_copy(update={"domain": domain})
        logger.info(f"select_best: {domain} -> {best.name}")
    return Registry(manager=overall.registry.manager, trackers=trackers, responders=responders)


def domain_detection_agreement(dialogues: Iterable[Dialogue], db: Optional[VenueDatabase] = None) -> Dict:
    """
    Rule-based manager against gold state domains: fraction of user turns
    whose detected domain set equals the domains of the gold state.
    """
    total = agree = 0
    for dialogue in dialogues:
        last_active = None
        for position, turn in enumerate(dialogue.turns):
            if not turn.is_user:
                continue
            context = dialogue.turns[:position + 1]
            detected = detect_domains(context, db, last_active)
            last_active = delegate(context, db, last_active) or last_active
            gold = set(state_domains(clean_state(turn.gold_state)))
            total += 1
            agree += int(set(detected) == gold)
    return {"turns": total, "agreeing": agree, "agreement": agree / total if total else 0.0}

