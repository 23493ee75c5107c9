"""Single gateway for every language-model-backed role in the system.

Two backends: a deterministic rule-based oracle (the default, used by all
tests), and a remote chat-completions-style HTTP adapter. Both sit behind
one invoke() surface with per-role request/response validation, a
per-episode call budget, and an order-preserving parallel variant.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .core import TARGETLESS_VERBS, Verb, canonical_json

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 200
DEFAULT_MAX_RETRIES = 3
DEFAULT_TIMEOUT_MS = 30_000
API_KEY_ENV = "MEMAGENT_API_KEY"


class ReasonerRole(str, Enum):
    STEP_SUMMARIZER = "step_summarizer"
    QUERY_GENERATOR = "query_generator"
    KG_CONFLICT_DETECTOR = "kg_conflict_detector"
    MEMORY_EXTRACTOR = "memory_extractor"
    MEMORY_UPDATER = "memory_updater"
    PLANNER = "planner"
    CRITIC = "critic"


class GatewayError(Exception):
    pass


class SchemaViolationError(GatewayError):
    pass


class BackendUnreachableError(GatewayError):
    pass


class BudgetExceededError(GatewayError):
    pass


# ---------------------------------------------------------------------------
# Request / response validation (one pair of checkers per role)
# ---------------------------------------------------------------------------


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaViolationError(msg)


def _nonempty_str(doc: dict, key: str) -> None:
    _check(isinstance(doc.get(key), str) and doc[key] != "", f"{key} must be a non-empty string")


def _validate_summarizer_request(p: dict) -> None:
    kind = p.get("kind")
    _check(kind in ("step", "compact"), "kind must be 'step' or 'compact'")
    if kind == "step":
        _check(isinstance(p.get("action"), dict), "action must be an object")
        _check(p.get("outcome") in ("success", "failure"), "outcome must be success/failure")
    else:
        _check(isinstance(p.get("entries"), list) and p["entries"], "entries must be non-empty list")
        span = p.get("covers_steps")
        _check(
            isinstance(span, (list, tuple)) and len(span) == 2 and span[0] <= span[1],
            "covers_steps must be [first, last]",
        )


def _validate_summarizer_response(r: dict) -> None:
    _nonempty_str(r, "summary")


def _validate_query_request(p: dict) -> None:
    _nonempty_str(p, "instruction")


def _validate_query_response(r: dict) -> None:
    _nonempty_str(r, "query")


def _validate_conflict_request(p: dict) -> None:
    _check(isinstance(p.get("edges"), list), "edges must be a list")
    for edge in p["edges"]:
        _check(
            isinstance(edge, dict) and {"subject", "relation", "object"} <= set(edge),
            "each edge needs subject/relation/object",
        )


def _validate_conflict_response(r: dict) -> None:
    groups = r.get("conflicts")
    _check(isinstance(groups, list), "conflicts must be a list")
    for group in groups:
        _check(
            isinstance(group, list) and len(group) >= 2 and all(isinstance(i, int) for i in group),
            "each conflict group must list >= 2 edge indices",
        )


def _validate_extractor_request(p: dict) -> None:
    _nonempty_str(p, "task_id")
    _nonempty_str(p, "instruction")
    _check(p.get("outcome") in ("success", "failure"), "outcome must be success/failure")


def _validate_extractor_response(r: dict) -> None:
    _check(
        isinstance(r.get("episodic"), list) and len(r["episodic"]) >= 1,
        "episodic must be a non-empty list",
    )
    _check(isinstance(r.get("semantic"), list), "semantic must be a list")
    for text in r["episodic"] + r["semantic"]:
        _check(isinstance(text, str) and text != "", "entity texts must be non-empty")


def _validate_updater_request(p: dict) -> None:
    _check(isinstance(p.get("new"), dict), "new must be an object")
    _check(isinstance(p.get("similar"), list), "similar must be a list")


def _validate_updater_response(r: dict) -> None:
    _check(r.get("action") in ("add", "update", "replace"), "action must be add/update/replace")
    if r["action"] in ("update", "replace"):
        _nonempty_str(r, "target_id")


def _validate_planner_request(p: dict) -> None:
    _nonempty_str(p, "instruction")
    _check(isinstance(p.get("goals"), list), "goals must be a list")
    _check(p.get("profile") in ("alfred", "realworld"), "profile must be alfred/realworld")
    _check(isinstance(p.get("nav_points"), list) and p["nav_points"], "nav_points required")


def _validate_planner_response(r: dict) -> None:
    _check(isinstance(r.get("steps"), list), "steps must be a list")
    for step in r["steps"]:
        _check(isinstance(step, dict) and "verb" in step, "each step needs a verb")


def _validate_critic_request(p: dict) -> None:
    _check(isinstance(p.get("action"), dict), "action must be an object")
    _check(isinstance(p.get("facts"), list), "facts must be a list")


def _validate_critic_response(r: dict) -> None:
    _check(r.get("decision") in ("approve", "reject"), "decision must be approve/reject")
    if r["decision"] == "reject":
        _nonempty_str(r, "reason")


_VALIDATORS: Dict[ReasonerRole, Tuple[Callable, Callable]] = {
    ReasonerRole.STEP_SUMMARIZER: (_validate_summarizer_request, _validate_summarizer_response),
    ReasonerRole.QUERY_GENERATOR: (_validate_query_request, _validate_query_response),
    ReasonerRole.KG_CONFLICT_DETECTOR: (_validate_conflict_request, _validate_conflict_response),
    ReasonerRole.MEMORY_EXTRACTOR: (_validate_extractor_request, _validate_extractor_response),
    ReasonerRole.MEMORY_UPDATER: (_validate_updater_request, _validate_updater_response),
    ReasonerRole.PLANNER: (_validate_planner_request, _validate_planner_response),
    ReasonerRole.CRITIC: (_validate_critic_request, _validate_critic_response),
}


# ---------------------------------------------------------------------------
# Oracle backend: pure rule-based behaviors for every role
# ---------------------------------------------------------------------------

COMPACTION_MAX_CHARS = 400

#: State values toggled by open/close/turn_on/turn_off, used by the oracle
#: critic to spot already-satisfied effects.
_TOGGLE_EFFECT = {
    "open": "open",
    "close": "closed",
    "turn_on": "on",
    "turn_off": "off",
}


def _action_text(action: dict) -> str:
    target = action.get("target")
    return f"{action['verb']} {target}" if target else action["verb"]


def _oracle_summarize(p: dict) -> dict:
    if p["kind"] == "step":
        text = f"{_action_text(p['action'])}: {p['outcome']}"
        if p["outcome"] == "failure" and p.get("failure_reason"):
            text += f" ({p['failure_reason']})"
        return {"summary": text}
    first, last = p["covers_steps"]
    joined = "; ".join(p["entries"])
    if len(joined) > COMPACTION_MAX_CHARS:
        joined = joined[: COMPACTION_MAX_CHARS - 3] + "..."
    return {"summary": f"steps {first}-{last}: {joined}"}


#: Instruments implied by task wording but usually absent from it; the
#: query must name them or the graph retrieval never reaches their nodes.
_IMPLIED_TOOLS = [("heat", "oven"), ("clean", "faucet"), ("clean", "sink"), ("slice", "knife")]


def _oracle_query(p: dict) -> dict:
    instruction = p["instruction"]
    parts = [instruction]
    tools = [tool for word, tool in _IMPLIED_TOOLS if word in instruction and tool not in instruction]
    if tools:
        parts.append("needs: " + ", ".join(tools))
    if p.get("last_verb"):
        parts.append(f"last action: {p['last_verb']}")
    if p.get("visible_entities"):
        parts.append("seen: " + ", ".join(p["visible_entities"]))
    return {"query": " | ".join(parts)}


#: Relation pairs that cannot both hold for one (subject, object) pair.
DEFAULT_EXCLUSIVE_PAIRS: List[List[str]] = [["near", "holds"], ["on", "in"]]

#: Relation groups where a subject may point at only one object
#: (object locations, state edges, the single-held-object rule).
DEFAULT_FUNCTIONAL_GROUPS: List[List[str]] = [["on", "in", "at"], ["is"], ["holds"]]


def _oracle_detect_conflicts(p: dict) -> dict:
    edges = p["edges"]
    exclusive = [frozenset(pair) for pair in p.get("exclusive_pairs", DEFAULT_EXCLUSIVE_PAIRS)]
    groups = [set(g) for g in p.get("functional_groups", DEFAULT_FUNCTIONAL_GROUPS)]
    conflicts: List[List[int]] = []

    # Pair-exclusive relations on the same (subject, object).
    by_pair: Dict[Tuple[str, str], List[int]] = {}
    for i, edge in enumerate(edges):
        by_pair.setdefault((edge["subject"], edge["object"]), []).append(i)
    for idxs in by_pair.values():
        for a in range(len(idxs)):
            for b in range(a + 1, len(idxs)):
                ra, rb = edges[idxs[a]]["relation"], edges[idxs[b]]["relation"]
                if ra != rb and frozenset((ra, rb)) in exclusive:
                    conflicts.append(sorted([idxs[a], idxs[b]]))

    # Functional relations: one object per subject within each group.
    for group in groups:
        by_subject: Dict[str, List[int]] = {}
        for i, edge in enumerate(edges):
            if edge["relation"] in group:
                by_subject.setdefault(edge["subject"], []).append(i)
        for idxs in by_subject.values():
            distinct_objects = {edges[i]["object"] for i in idxs}
            if len(distinct_objects) > 1:
                conflicts.append(sorted(idxs))

    unique = sorted({tuple(group) for group in conflicts})
    return {"conflicts": [list(group) for group in unique]}


def _oracle_extract(p: dict) -> dict:
    episodic: List[str] = []
    semantic: List[str] = []
    if p.get("steps_used", 0) == 0:
        episodic.append(f"task {p['task_id']}: {p['instruction']} -> aborted at step 0")
        return {"episodic": episodic, "semantic": semantic}

    parts = [
        f"task {p['task_id']}: {p['instruction']} -> {p['outcome']}",
        f"conditions {p.get('scn', 0)}/{p.get('gcn', 1)}",
        f"steps {p['steps_used']}",
    ]
    locations = p.get("first_seen", [])
    if locations:
        rendered = "; ".join(f"{o} {r} {pl}" for o, r, pl in locations)
        parts.append(f"locations: {rendered}")
    episodic.append(" | ".join(parts))

    if p["outcome"] == "failure":
        for obj, points in sorted(p.get("searched_not_found", {}).items()):
            if points:
                semantic.append(
                    f"searching for {obj}: not found at {', '.join(points)}; "
                    "avoid re-searching these locations"
                )
        reasons = p.get("failure_reasons", [])
        if reasons:
            semantic.append(
                f"failure causes during '{p['instruction']}': " + "; ".join(sorted(set(reasons)))
            )
    else:
        verbs = p.get("verbs", [])
        if verbs:
            semantic.append(f"recipe for '{p['instruction']}': " + " -> ".join(verbs))
    return {"episodic": episodic, "semantic": semantic}


def _oracle_update(p: dict) -> dict:
    new = p["new"]
    new_tags = set(new.get("tags", []))
    for old in p["similar"]:
        if old.get("text") == new.get("text"):
            return {"action": "update", "target_id": old["id"]}
    for old in p["similar"]:
        old_tags = set(old.get("tags", []))
        shared = {t for t in new_tags & old_tags if not t.startswith("outcome:")}
        new_outcomes = {t for t in new_tags if t.startswith("outcome:")}
        old_outcomes = {t for t in old_tags if t.startswith("outcome:")}
        if shared and new_outcomes and old_outcomes and new_outcomes != old_outcomes:
            return {"action": "replace", "target_id": old["id"]}
    return {"action": "add"}


# --- oracle planner -------------------------------------------------------


def _goal_satisfied(goal: dict, known: dict, states: dict, holding: Optional[str]) -> bool:
    obj = goal["obj"]
    if goal["kind"] == "at":
        if holding == obj:
            return False
        loc = known.get(obj)
        return bool(loc) and loc["place"] == goal["place"] and loc["rel"] == goal["rel"]
    wanted = goal["state"]
    return wanted in states.get(obj, ())


class _NeedsExploration(Exception):
    def __init__(self, obj: str):
        self.obj = obj


def _oracle_plan(p: dict) -> dict:
    profile = p["profile"]
    nav_points = list(p["nav_points"])
    known = {o: dict(v) for o, v in p.get("known_locations", {}).items()}
    # Remembered locations from earlier attempts: good enough to navigate
    # by, never good enough to declare a goal satisfied.
    hints = {o: dict(v) for o, v in p.get("hint_locations", {}).items()}
    states = {o: set(v) for o, v in p.get("object_states", {}).items()}
    container_states = dict(p.get("container_states", {}))
    visited = set(p.get("visited_points", []))
    avoid = {o: set(v) for o, v in p.get("avoid_points", {}).items()}
    at = p.get("agent_at")
    holding = p.get("holding")
    steps: List[dict] = []
    rationale: List[str] = []

    def emit(verb: str, target: Optional[str] = None) -> None:
        step = {"verb": verb}
        if target is not None:
            step["target"] = target
        steps.append(step)

    def lookup(name: str) -> Optional[dict]:
        return known.get(name) or hints.get(name)

    def nav_point_of(name: str) -> Optional[str]:
        if name in nav_points:
            return name
        seen = set()
        cur = name
        while lookup(cur) is not None and cur not in seen:
            seen.add(cur)
            cur = lookup(cur)["place"]
            if cur in nav_points:
                return cur
        return None

    def goto(name: str) -> None:
        nonlocal at
        point = nav_point_of(name)
        if point is None:
            raise _NeedsExploration(name)
        if at != point:
            if profile == "alfred":
                emit("find", name if name not in nav_points else point)
            else:
                emit("navigate_to", point)
            at = point

    def open_enclosing_containers(name: str) -> None:
        cur = name
        seen = set()
        while lookup(cur) is not None and cur not in seen:
            seen.add(cur)
            loc = lookup(cur)
            place = loc["place"]
            # An unobserved container may well be closed; opening an
            # already-open one only costs a no-op attempt.
            if loc["rel"] == "in" and container_states.get(place) != "open":
                emit("open", place)
                container_states[place] = "open"
            cur = place

    def free_hand() -> None:
        nonlocal holding
        if holding is None:
            return
        if profile == "alfred":
            emit("drop")
            if at:
                known[holding] = {"rel": "on", "place": at}
        else:
            emit("put_down_to", at)
            known[holding] = {"rel": "on", "place": at}
        holding = None

    def acquire(obj: str) -> None:
        nonlocal holding
        if holding == obj:
            return
        if lookup(obj) is None:
            raise _NeedsExploration(obj)
        free_hand()
        goto(obj)
        open_enclosing_containers(obj)
        emit("pick_up", obj)
        known.pop(obj, None)
        hints.pop(obj, None)
        holding = obj

    def place(obj: str, rel: str, where: str) -> None:
        nonlocal holding
        acquire(obj)
        if where not in nav_points and lookup(where) is None:
            raise _NeedsExploration(where)
        goto(where)
        if where not in nav_points and container_states.get(where) != "open":
            emit("open", where)
            container_states[where] = "open"
        emit("put_down_to", where)
        known[obj] = {"rel": rel, "place": where}
        holding = None

    def achieve(goal: dict) -> None:
        obj = goal["obj"]
        if goal["kind"] == "at":
            place(obj, goal["rel"], goal["place"])
            rationale.append(f"move {obj} to {goal['place']}")
            return
        wanted = goal["state"]
        if wanted == "heated":
            loc = known.get(obj)
            inside_oven = holding != obj and bool(loc) and loc["place"] == "oven"
            if not inside_oven:
                place(obj, "in", "oven")
            if lookup("oven") is None:
                raise _NeedsExploration("oven")
            if "on" not in states.get("oven", set()):
                goto("oven")
                emit("turn_on", "oven")
                states.setdefault("oven", set()).add("on")
            states.setdefault(obj, set()).add("heated")
            rationale.append(f"heat {obj} in the oven")
        elif wanted == "cleaned":
            loc = known.get(obj)
            if holding == obj or not loc or loc["place"] != "sink":
                place(obj, "on", "sink")
            if lookup("faucet") is None:
                raise _NeedsExploration("faucet")
            if "on" not in states.get("faucet", set()):
                goto("faucet")
                emit("turn_on", "faucet")
                states.setdefault("faucet", set()).add("on")
            states.setdefault(obj, set()).add("cleaned")
            rationale.append(f"clean {obj} under the faucet")
        elif wanted == "sliced":
            knife = p.get("knife", "knife")
            acquire(knife)
            goto(obj)
            open_enclosing_containers(obj)
            emit("slice", obj)
            states.setdefault(obj, set()).add("sliced")
            rationale.append(f"slice {obj}")
        elif wanted in ("open", "closed", "on", "off"):
            goto(obj)
            verb = {"open": "open", "closed": "close", "on": "turn_on", "off": "turn_off"}[wanted]
            emit(verb, obj)
            if wanted in ("open", "closed"):
                container_states[obj] = wanted
            else:
                states.setdefault(obj, set()).add(wanted)
            rationale.append(f"set {obj} to {wanted}")
        else:
            raise _NeedsExploration(obj)

    for goal in p["goals"]:
        if _goal_satisfied(goal, known, states, holding):
            continue
        try:
            achieve(goal)
        except _NeedsExploration as exc:
            if steps:
                # Partial plan; replan once the world is better known.
                return {"steps": steps, "rationale": "; ".join(rationale)}
            return _exploration_plan(exc.obj, p, known, container_states, visited, avoid, at)

    if profile == "realworld":
        emit("task_complete")
        rationale.append("all goals satisfied")
    return {"steps": steps, "rationale": "; ".join(rationale) or "all goals satisfied"}


def _exploration_plan(
    missing: str,
    p: dict,
    known: dict,
    container_states: dict,
    visited: set,
    avoid: dict,
    at: Optional[str],
) -> dict:
    nav_points = list(p["nav_points"])
    profile = p["profile"]

    # Closed containers at the current point may hide the target.
    closed_here = sorted(
        name
        for name, state in container_states.items()
        if state == "closed" and known.get(name, {}).get("place") == at
    )
    if closed_here:
        return {
            "steps": [{"verb": "open", "target": closed_here[0]}],
            "rationale": f"searching for {missing}: open {closed_here[0]}",
        }

    skip = set(avoid.get(missing, set()))
    candidates = [pt for pt in nav_points if pt not in visited and pt not in skip]
    if not candidates:
        candidates = [pt for pt in nav_points if pt not in skip and pt != at]
    if not candidates:
        candidates = [pt for pt in nav_points if pt != at] or nav_points
    target = candidates[0]
    verb = "find" if profile == "alfred" else "navigate_to"
    return {
        "steps": [{"verb": verb, "target": target}],
        "rationale": f"searching for {missing}: explore {target}",
    }


# --- oracle critic --------------------------------------------------------


def _oracle_critic(p: dict) -> dict:
    action = p["action"]
    verb = action["verb"]
    target = action.get("target")
    facts = {(s, r, o) for s, r, o in p["facts"]}
    holding = p.get("holding")

    def located_at(obj: str, where: str) -> bool:
        return (obj, "on", where) in facts or (obj, "in", where) in facts

    if verb == "pick_up":
        if holding == target:
            return {"decision": "reject", "reason": f"redundant: already holding {target}"}
        if holding is not None:
            return {"decision": "reject", "reason": f"hands full: already holding {holding}"}
        for later in p.get("plan_suffix", []):
            if later.get("verb") in ("put_down_to",) and later.get("target"):
                if located_at(target, later["target"]):
                    return {
                        "decision": "reject",
                        "reason": f"redundant: {target} is already at {later['target']}",
                    }
                break
    elif verb in ("put_down_to", "drop"):
        if holding is None:
            return {"decision": "reject", "reason": "nothing is held; cannot put down"}
    elif verb in _TOGGLE_EFFECT:
        if (target, "is", _TOGGLE_EFFECT[verb]) in facts:
            return {
                "decision": "reject",
                "reason": f"redundant: {target} is already {_TOGGLE_EFFECT[verb]}",
            }
    elif verb == "task_complete":
        for goal in p.get("goals", []):
            if goal["kind"] == "at":
                ok = (goal["obj"], goal["rel"], goal["place"]) in facts
            else:
                ok = (goal["obj"], "is", goal["state"]) in facts
            if not ok:
                return {
                    "decision": "reject",
                    "reason": f"goal not met: {goal['obj']} ({goal['kind']})",
                }
    return {"decision": "approve", "reason": "action is consistent with known state"}


_ORACLE_RULES: Dict[ReasonerRole, Callable[[dict], dict]] = {
    ReasonerRole.STEP_SUMMARIZER: _oracle_summarize,
    ReasonerRole.QUERY_GENERATOR: _oracle_query,
    ReasonerRole.KG_CONFLICT_DETECTOR: _oracle_detect_conflicts,
    ReasonerRole.MEMORY_EXTRACTOR: _oracle_extract,
    ReasonerRole.MEMORY_UPDATER: _oracle_update,
    ReasonerRole.PLANNER: _oracle_plan,
    ReasonerRole.CRITIC: _oracle_critic,
}


class OracleBackend:
    """Deterministic rule-based implementation of every role.

    Pure: the response is a function of (role, payload) alone.
    """

    def invoke(self, role: ReasonerRole, payload: dict) -> dict:
        # Round-trip through canonical JSON so callers cannot observe
        # shared mutable state and purity is byte-level.
        return json.loads(canonical_json(_ORACLE_RULES[role](payload)))


class RemoteBackend:
    """Chat-completions-style JSON-over-HTTP adapter.

    Sends the role name and payload as a single user message and expects
    the assistant content to be the response JSON document.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        max_retries: int = DEFAULT_MAX_RETRIES,
        temperature: float = 0.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.temperature = temperature

    def invoke(self, role: ReasonerRole, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {
                    "role": "user",
                    "content": canonical_json({"role": role.value, "payload": payload}),
                }
            ],
        }
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            try:
                response = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout_ms / 1000.0,
                )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                doc = json.loads(content)
                if not isinstance(doc, dict):
                    raise SchemaViolationError("response content is not a JSON object")
                return doc
            except SchemaViolationError as exc:
                last_error = exc
            except (ValueError, KeyError) as exc:
                last_error = SchemaViolationError(f"malformed response: {exc}")
            except Exception as exc:  # connection errors, HTTP errors, timeouts
                last_error = BackendUnreachableError(str(exc))
            logger.warning("remote invoke attempt %d failed: %s", attempt + 1, last_error)
        raise last_error  # type: ignore[misc]


@dataclass
class GatewayConfig:
    backend: str = "oracle"
    base_url: str = ""
    model: str = ""
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES
    budget: int = DEFAULT_BUDGET

    @classmethod
    def from_file(cls, path: str) -> "GatewayConfig":
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
        remote = doc.get("remote", {})
        return cls(
            backend=doc.get("backend", "oracle"),
            base_url=remote.get("base_url", ""),
            model=remote.get("model", ""),
            timeout_ms=remote.get("timeout_ms", DEFAULT_TIMEOUT_MS),
            max_retries=remote.get("max_retries", DEFAULT_MAX_RETRIES),
            budget=doc.get("budget", DEFAULT_BUDGET),
        )


class ReasonerGateway:
    """Validated, budget-capped access to the active backend."""

    def __init__(
        self,
        backend: Optional[Any] = None,
        budget: int = DEFAULT_BUDGET,
        transcript_path: Optional[str] = None,
    ):
        self.backend = backend if backend is not None else OracleBackend()
        self.budget = budget
        self._remaining = budget
        self._lock = threading.Lock()
        self._transcript_path = transcript_path

    @classmethod
    def from_config(cls, config: GatewayConfig) -> "ReasonerGateway":
        if config.backend == "remote":
            backend = RemoteBackend(
                base_url=config.base_url,
                model=config.model,
                timeout_ms=config.timeout_ms,
                max_retries=config.max_retries,
            )
        else:
            backend = OracleBackend()
        return cls(backend=backend, budget=config.budget)

    def reset_budget(self) -> None:
        with self._lock:
            self._remaining = self.budget

    def invoke(self, role: ReasonerRole, payload: dict) -> dict:
        validate_request, validate_response = _VALIDATORS[role]
        validate_request(payload)
        with self._lock:
            if self._remaining <= 0:
                raise BudgetExceededError(f"per-episode budget of {self.budget} calls exhausted")
            self._remaining -= 1
        response = self.backend.invoke(role, payload)
        validate_response(response)
        if self._transcript_path:
            self._log_transcript(role, payload, response)
        return response

    def invoke_parallel(
        self, requests: Sequence[Tuple[ReasonerRole, dict]]
    ) -> List[Any]:
        """Invoke all requests concurrently; results (or exceptions) are
        returned in request order."""
        if not requests:
            return []

        def call(pair: Tuple[ReasonerRole, dict]) -> Any:
            try:
                return self.invoke(*pair)
            except Exception as exc:
                return exc

        with ThreadPoolExecutor(max_workers=max(1, len(requests))) as pool:
            return list(pool.map(call, requests))

    def _log_transcript(self, role: ReasonerRole, payload: dict, response: dict) -> None:
        line = canonical_json(
            {"role": role.value, "payload": payload, "response": response}
        )
        with self._lock:
            with open(self._transcript_path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
