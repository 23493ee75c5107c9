"""Closed-loop planning: multi-step plans, per-step critic gating with the
first-step exemption, and full replanning on rejection.

A fresh plan's first action always executes unreviewed, so an adversarial
critic can slow the agent down but never starve it: every planning round
makes at least one environment step of progress.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .core import (
    ActionCommand,
    InvariantError,
    Observation,
    Outcome,
    StepRecord,
    TaskResult,
    Termination,
    Verb,
    canonical_name,
)
from .envsim import Environment, TaskSpec
from .gateway import GatewayError, ReasonerGateway, ReasonerRole
from .lifelong import MemoryEntity, TaskTrace
from .orchestrator import MemoryContext, MemoryOrchestrator, UpdateEvent
from .preprocessor import Preprocessor, extract_triplets

logger = logging.getLogger(__name__)

AGENT = "agent"
_RELATIONS = ("near", "holds", "at", "on", "in", "is")
_LOCATION_RELS = ("on", "in")

_PUT = re.compile(r"^put (?P<obj>.+?) (?P<rel>on|in) (?P<place>.+)$")
_STATE_CLAUSES = [
    (re.compile(r"^heat (?P<obj>.+)$"), "heated"),
    (re.compile(r"^clean (?P<obj>.+)$"), "cleaned"),
    (re.compile(r"^slice (?P<obj>.+)$"), "sliced"),
    (re.compile(r"^turn on (?P<obj>.+)$"), "on"),
    (re.compile(r"^turn off (?P<obj>.+)$"), "off"),
    (re.compile(r"^open (?P<obj>.+)$"), "open"),
    (re.compile(r"^close (?P<obj>.+)$"), "closed"),
]
_AVOID = re.compile(r"^searching for (?P<obj>.+?): not found at (?P<points>.+?); avoid")


class EmptyPlanError(Exception):
    pass


@dataclass(frozen=True)
class Plan:
    steps: Tuple[ActionCommand, ...]
    rationale: str
    created_at_step: int

    def __post_init__(self):
        if not self.steps:
            raise ValueError("a plan must contain at least one step")
        object.__setattr__(self, "steps", tuple(self.steps))


@dataclass(frozen=True)
class CriticVerdict:
    decision: str  # "approve" | "reject"
    reason: str

    def __post_init__(self):
        if self.decision == "reject" and not self.reason:
            raise ValueError("rejections need a reason")


def parse_goals(instruction: str) -> List[dict]:
    goals: List[dict] = []
    for clause in instruction.split(" and "):
        clause = canonical_name(clause)
        match = _PUT.match(clause)
        if match:
            goals.append(
                {
                    "kind": "at",
                    "obj": match.group("obj"),
                    "rel": match.group("rel"),
                    "place": match.group("place"),
                }
            )
            continue
        for pattern, state in _STATE_CLAUSES:
            match = pattern.match(clause)
            if match:
                goals.append({"kind": "state", "obj": match.group("obj"), "state": state})
                break
    return goals


def parse_fact(line: str) -> Optional[Tuple[str, str, str]]:
    tokens = line.split()
    for i, token in enumerate(tokens):
        if token in _RELATIONS and 0 < i < len(tokens) - 1:
            return (" ".join(tokens[:i]), token, " ".join(tokens[i + 1 :]))
    return None


@dataclass
class BeliefState:
    """What the planner currently believes, assembled from the latest
    observation (authoritative) layered over the memory context."""

    agent_at: Optional[str] = None
    holding: Optional[str] = None
    facts: List[Tuple[str, str, str]] = field(default_factory=list)
    known_locations: Dict[str, dict] = field(default_factory=dict)
    hint_locations: Dict[str, dict] = field(default_factory=dict)
    object_states: Dict[str, List[str]] = field(default_factory=dict)
    container_states: Dict[str, str] = field(default_factory=dict)
    avoid_points: Dict[str, List[str]] = field(default_factory=dict)


def build_beliefs(
    context: MemoryContext,
    obs: Observation,
    task_id: Optional[str] = None,
    trace: Optional[TaskTrace] = None,
) -> BeliefState:
    beliefs = BeliefState()
    obs_facts = [(t.subject, t.relation, t.object) for t in extract_triplets(obs)]
    kg_facts = []
    for line in context.spatial.splitlines():
        fact = parse_fact(line.strip())
        if fact:
            kg_facts.append(fact)

    obs_located = {s for s, r, _ in obs_facts if r in _LOCATION_RELS}
    obs_state_subjects = {s for s, r, _ in obs_facts if r == "is"}
    merged: List[Tuple[str, str, str]] = []
    for fact in kg_facts:
        s, r, _ = fact
        # The current observation overrides remembered locations and states.
        if r in _LOCATION_RELS and s in obs_located:
            continue
        if r == "is" and s in obs_state_subjects:
            continue
        if r in ("at", "holds", "near") and s == AGENT:
            continue
        merged.append(fact)
    merged.extend(obs_facts)

    for subject, relation, obj in merged:
        if subject == AGENT:
            if relation == "at":
                beliefs.agent_at = obj
            elif relation == "holds":
                beliefs.holding = obj
            continue
        if relation in _LOCATION_RELS:
            beliefs.known_locations[subject] = {"rel": relation, "place": obj}
        elif relation == "is":
            if obj in ("open", "closed"):
                beliefs.container_states[subject] = obj
            else:
                beliefs.object_states.setdefault(subject, []).append(obj)

    if beliefs.holding is not None:
        beliefs.known_locations.pop(beliefs.holding, None)

    # Long-term hints: discovered locations from episodic entries, search
    # dead-ends from semantic ones. Only entries written by an earlier attempt
    # at this same task are trusted; other tasks reshuffle the world. A hint
    # dies once this episode has searched its place without seeing the object
    # there: visiting a point reveals everything on it, and an opened
    # container reveals everything in it.
    visited = set(trace.visited_points) if trace else set()
    opened = set(trace.opened_containers) if trace else set()
    first_seen = trace.first_seen if trace else {}
    for entity, _ in context.episodic:
        if task_id is not None and entity.created_task != task_id:
            continue
        for chunk in entity.text.split("|"):
            chunk = chunk.strip()
            if not chunk.startswith("locations:"):
                continue
            for loc in chunk[len("locations:") :].split(";"):
                fact = parse_fact(loc.strip())
                if fact is None:
                    continue
                obj, rel, place = fact
                if obj == beliefs.holding or obj in beliefs.known_locations:
                    continue
                searched = place in visited if rel == "on" else place in opened
                if searched and first_seen.get(obj) != (rel, place):
                    continue
                beliefs.hint_locations[obj] = {"rel": rel, "place": place}
    for entity, _ in context.semantic:
        if task_id is not None and entity.created_task != task_id:
            continue
        match = _AVOID.match(entity.text)
        if match:
            points = [canonical_name(p) for p in match.group("points").split(",")]
            beliefs.avoid_points.setdefault(match.group("obj"), []).extend(
                p for p in points if p not in beliefs.avoid_points.get(match.group("obj"), [])
            )

    seen = set()
    beliefs.facts = [f for f in merged if not (f in seen or seen.add(f))]
    return beliefs


class PlannerCritic:
    def __init__(
        self,
        gateway: ReasonerGateway,
        env: Environment,
        critic_enabled: bool = True,
    ):
        self.gateway = gateway
        self.env = env
        self.critic_enabled = critic_enabled

    # -- planning ------------------------------------------------------------

    def plan(
        self,
        instruction: str,
        goals: List[dict],
        beliefs: BeliefState,
        trace: TaskTrace,
        created_at_step: int,
        retry: bool = True,
    ) -> Plan:
        payload = {
            "instruction": instruction,
            "goals": goals,
            "profile": self.env.profile,
            "nav_points": self.env.nav_points,
            "agent_at": beliefs.agent_at,
            "holding": beliefs.holding,
            "visited_points": list(trace.visited_points),
            "known_locations": beliefs.known_locations,
            "hint_locations": beliefs.hint_locations,
            "object_states": beliefs.object_states,
            "container_states": beliefs.container_states,
            "avoid_points": beliefs.avoid_points,
        }
        response = self.gateway.invoke(ReasonerRole.PLANNER, payload)
        steps = self._validate_steps(response.get("steps", []))
        if not steps:
            if retry:
                payload = dict(payload, retry=True, visited_points=[])
                response = self.gateway.invoke(ReasonerRole.PLANNER, payload)
                steps = self._validate_steps(response.get("steps", []))
            if not steps:
                raise EmptyPlanError("planner produced no valid steps")
        return Plan(
            steps=tuple(steps),
            rationale=response.get("rationale", ""),
            created_at_step=created_at_step,
        )

    def _validate_steps(self, raw_steps: List[dict]) -> List[ActionCommand]:
        steps = []
        for raw in raw_steps:
            try:
                verb = Verb(raw["verb"])
            except (ValueError, KeyError):
                logger.warning("dropping plan step with unknown verb: %r", raw)
                continue
            if verb not in self.env.verbs:
                logger.warning("dropping verb %s (not in %s profile)", verb.value, self.env.profile)
                continue
            try:
                steps.append(ActionCommand(verb=verb, target=raw.get("target")))
            except InvariantError as exc:
                logger.warning("dropping invalid plan step %r: %s", raw, exc)
        return steps

    # -- critic --------------------------------------------------------------

    def review(
        self,
        action: ActionCommand,
        plan_suffix: List[ActionCommand],
        goals: List[dict],
        beliefs: BeliefState,
        latest_summary: str,
    ) -> CriticVerdict:
        def action_doc(cmd: ActionCommand) -> dict:
            doc = {"verb": cmd.verb.value}
            if cmd.target is not None:
                doc["target"] = cmd.target
            return doc

        payload = {
            "action": action_doc(action),
            "plan_suffix": [action_doc(c) for c in plan_suffix],
            "goals": goals,
            "facts": [list(f) for f in beliefs.facts],
            "holding": beliefs.holding,
            "agent_at": beliefs.agent_at,
            "latest_summary": latest_summary,
        }
        response = self.gateway.invoke(ReasonerRole.CRITIC, payload)
        return CriticVerdict(decision=response["decision"], reason=response.get("reason", ""))


@dataclass
class EpisodeResult:
    result: TaskResult
    trajectory: List[dict]
    trace: TaskTrace


def run_episode(
    task: TaskSpec,
    env: Environment,
    gateway: ReasonerGateway,
    orchestrator: MemoryOrchestrator,
    critic_enabled: bool = True,
    world_seed: Optional[int] = None,
) -> EpisodeResult:
    """Run one closed-loop episode: perceive, gather, plan, gate, execute,
    update, until completion or the step budget."""
    gateway.reset_budget()
    orchestrator.reset_task_state()
    planner = PlannerCritic(gateway, env, critic_enabled=critic_enabled)
    preprocessor = Preprocessor(gateway, instruction=task.instruction)

    obs = env.reset(task, seed=world_seed)
    goals = parse_goals(task.instruction)
    nav_points = set(env.nav_points)
    goal_objects = sorted(
        {g["obj"] for g in goals if g["obj"] not in nav_points}
        | {g["place"] for g in goals if g["kind"] == "at" and g["place"] not in nav_points}
    )
    trace = TaskTrace(task_id=task.id, instruction=task.instruction, goal_objects=goal_objects)

    def absorb_observation(observation: Observation) -> None:
        trace.note_visit(env.agent_at)
        for triplet in extract_triplets(observation):
            if triplet.subject != AGENT and triplet.relation in _LOCATION_RELS:
                trace.note_seen(triplet.subject, triplet.relation, triplet.object)
            if triplet.relation == "is" and triplet.object == "open":
                trace.note_opened(triplet.subject)

    absorb_observation(obs)
    initial = preprocessor.preprocess(obs, None, None)
    orchestrator.dispatch_update(UpdateEvent(level="action", triplets=initial.triplets))
    query = initial.query
    latest_summary = initial.summary

    trajectory: List[dict] = []
    executed = 0
    plan: Optional[Plan] = None
    plan_index = 0
    plan_id = 0
    aborted = False

    while executed < env.max_steps and not env.done:
        context = orchestrator.gather_context(query)
        beliefs = build_beliefs(context, obs, task.id, trace)

        if plan is None or plan_index >= len(plan.steps):
            try:
                plan = planner.plan(task.instruction, goals, beliefs, trace, executed)
            except (EmptyPlanError, GatewayError) as exc:
                logger.warning("planning failed for %s: %s", task.id, exc)
                aborted = True
                break
            plan_index = 0
            plan_id += 1

        action = plan.steps[plan_index]
        verdict: Optional[CriticVerdict] = None
        if critic_enabled and plan_index >= 1:
            try:
                verdict = planner.review(
                    action, list(plan.steps[plan_index + 1 :]), goals, beliefs, latest_summary
                )
            except GatewayError as exc:
                logger.warning("critic failed (%s); approving by default", exc)
                verdict = CriticVerdict(decision="approve", reason="critic unavailable")
            if verdict.decision == "reject":
                trajectory.append(
                    {
                        "plan_id": plan_id,
                        "plan_step": plan_index + 1,
                        "action": str(action),
                        "verdict": "reject",
                        "verdict_reason": verdict.reason,
                        "executed": False,
                    }
                )
                plan = None
                continue

        obs, outcome, failure_reason = env.step(action)
        executed += 1
        absorb_observation(obs)
        trace.verbs.append(action.verb.value)
        if failure_reason:
            trace.failure_reasons.append(failure_reason)

        pre = preprocessor.preprocess(obs, action, outcome, failure_reason)
        latest_summary = pre.summary
        query = pre.query
        record = StepRecord(
            step_index=executed,
            action=action,
            summary=pre.summary,
            outcome=outcome,
            failure_reason=failure_reason,
        )
        orchestrator.dispatch_update(
            UpdateEvent(level="action", record=record, triplets=pre.triplets)
        )
        trajectory.append(
            {
                "plan_id": plan_id,
                "plan_step": plan_index + 1,
                "step": executed,
                "action": str(action),
                "verdict": verdict.decision if verdict else None,
                "outcome": outcome.value,
                "failure_reason": failure_reason,
                "gather_latency": context.assembly_latency,
                "executed": True,
            }
        )
        plan_index += 1

    scn, gcn = env.score()
    if env.reported_success:
        terminated_by = Termination.SUCCESS
    elif executed >= env.max_steps and not env.done:
        terminated_by = Termination.STEP_BUDGET
    elif env.done and not aborted:
        terminated_by = Termination.SELF_TERMINATED
    elif aborted:
        terminated_by = Termination.SELF_TERMINATED
    else:
        terminated_by = Termination.STEP_BUDGET
    result = TaskResult(
        task_id=task.id,
        scn=scn,
        gcn=gcn,
        steps_used=executed,
        terminated_by=terminated_by,
    )
    orchestrator.dispatch_update(UpdateEvent(level="task", trace=trace, result=result))
    return EpisodeResult(result=result, trajectory=trajectory, trace=trace)
