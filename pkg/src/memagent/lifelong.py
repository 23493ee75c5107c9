"""Episodic and semantic long-term memories behind one
extract / consolidate / retrieve framework.

Episodic entries are written once per finished task. Semantic entries mix
two sources: per-action failure micro-entries buffered during the task,
and post-task lessons (search dead-ends, failure causes, success recipes).
Consolidation merges each new entry against its theta-similar neighbors of
the same kind, so unrelated entries are never touched.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Outcome, StepRecord, TaskResult, canonical_json
from .gateway import GatewayError, ReasonerGateway, ReasonerRole
from .vector_index import HashingEmbedder, IndexEntry, VectorIndex

logger = logging.getLogger(__name__)

DEFAULT_RETRIEVAL_THETA = 0.25
CONSOLIDATION_K = 5


@dataclass(frozen=True)
class MemoryEntity:
    id: str
    kind: str  # "episodic" | "semantic"
    text: str
    created_task: str
    updated_task: str
    tags: Tuple[str, ...] = ()
    count: int = 1

    def __post_init__(self):
        if not self.text:
            raise ValueError("memory entity text must be non-empty")
        if self.kind not in ("episodic", "semantic"):
            raise ValueError(f"unknown kind: {self.kind}")
        object.__setattr__(self, "tags", tuple(self.tags))

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "text": self.text,
            "created_task": self.created_task,
            "updated_task": self.updated_task,
            "tags": list(self.tags),
            "count": self.count,
        }


@dataclass
class UpdatePlan:
    adds: List[MemoryEntity] = field(default_factory=list)
    updates: List[Tuple[str, MemoryEntity]] = field(default_factory=list)
    deletes: List[str] = field(default_factory=list)


@dataclass
class TaskTrace:
    """What the rest of the system observed during one task; the raw
    material the extractor summarizes."""

    task_id: str
    instruction: str
    first_seen: Dict[str, Tuple[str, str]] = field(default_factory=dict)  # obj -> (rel, place)
    visited_points: List[str] = field(default_factory=list)
    opened_containers: List[str] = field(default_factory=list)
    goal_objects: List[str] = field(default_factory=list)
    verbs: List[str] = field(default_factory=list)
    failure_reasons: List[str] = field(default_factory=list)

    def note_visit(self, point: str) -> None:
        if point not in self.visited_points:
            self.visited_points.append(point)

    def note_seen(self, obj: str, rel: str, place: str) -> None:
        if obj not in self.first_seen:
            self.first_seen[obj] = (rel, place)

    def note_opened(self, container: str) -> None:
        if container not in self.opened_containers:
            self.opened_containers.append(container)

    def searched_not_found(self) -> Dict[str, List[str]]:
        missing = {}
        for obj in self.goal_objects:
            if obj not in self.first_seen:
                missing[obj] = list(self.visited_points)
        return missing


class LifelongMemory:
    def __init__(
        self,
        gateway: Optional[ReasonerGateway] = None,
        embedder: Optional[HashingEmbedder] = None,
        theta: float = DEFAULT_RETRIEVAL_THETA,
    ):
        self.gateway = gateway or ReasonerGateway()
        self.embedder = embedder or HashingEmbedder()
        self.theta = theta
        self._indexes = {
            "episodic": VectorIndex(dim=self.embedder.dim),
            "semantic": VectorIndex(dim=self.embedder.dim),
        }
        self._entities: Dict[str, MemoryEntity] = {}
        self._id_counters: Dict[str, int] = {}
        self._action_buffer: Dict[str, int] = {}  # micro-entity text -> occurrence count
        self._action_tags: Dict[str, Tuple[str, ...]] = {}
        self._success_tally: Dict[str, int] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._entities)

    def entities(self, kind: Optional[str] = None) -> List[MemoryEntity]:
        with self._lock:
            selected = [
                self._entities[k]
                for k in sorted(self._entities)
                if kind is None or self._entities[k].kind == kind
            ]
            return selected

    def _next_id(self, kind: str, task_id: str) -> str:
        key = f"{kind}-{task_id}"
        self._id_counters[key] = self._id_counters.get(key, 0) + 1
        return f"{key}-{self._id_counters[key]}"

    # -- action-level (semantic micro-entities) -----------------------------

    def record_action_experience(self, step: StepRecord) -> Optional[str]:
        """Buffer a failure lesson for the post-task update; successes only
        bump per-verb tallies. Returns the buffered text, if any."""
        with self._lock:
            verb = step.action.verb.value
            if step.outcome is Outcome.SUCCESS:
                self._success_tally[verb] = self._success_tally.get(verb, 0) + 1
                return None
            target = step.action.target or ""
            text = f"{verb} {target}".strip() + f": fails when {step.failure_reason}"
            self._action_buffer[text] = self._action_buffer.get(text, 0) + 1
            self._action_tags[text] = (
                f"verb:{verb}",
                f"reason:{step.failure_reason}",
                "outcome:failure",
            )
            return text

    def success_tally(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._success_tally)

    # -- task-level extraction ------------------------------------------------

    def extract_task_entities(self, trace: TaskTrace, result: TaskResult) -> List[MemoryEntity]:
        with self._lock:
            payload = {
                "task_id": trace.task_id,
                "instruction": trace.instruction,
                "outcome": "success" if result.success else "failure",
                "scn": result.scn,
                "gcn": result.gcn,
                "steps_used": result.steps_used,
                "first_seen": [
                    [obj, rel, place]
                    for obj, (rel, place) in sorted(trace.first_seen.items())
                ],
                "visited_points": list(trace.visited_points),
                "searched_not_found": trace.searched_not_found(),
                "verbs": list(trace.verbs),
                "failure_reasons": list(trace.failure_reasons),
            }
            try:
                response = self.gateway.invoke(ReasonerRole.MEMORY_EXTRACTOR, payload)
            except GatewayError as exc:
                logger.warning("extractor failed (%s); using fallback template", exc)
                response = {
                    "episodic": [
                        f"task {trace.task_id}: {trace.instruction} -> {payload['outcome']}"
                    ],
                    "semantic": [],
                }

            outcome_tag = f"outcome:{payload['outcome']}"
            entities = [
                MemoryEntity(
                    id=self._next_id("episodic", trace.task_id),
                    kind="episodic",
                    text=text,
                    created_task=trace.task_id,
                    updated_task=trace.task_id,
                    tags=(f"task:{trace.task_id}", f"instruction:{trace.instruction}", outcome_tag),
                )
                for text in response["episodic"]
            ]
            for text in response["semantic"]:
                entities.append(
                    MemoryEntity(
                        id=self._next_id("semantic", trace.task_id),
                        kind="semantic",
                        text=text,
                        created_task=trace.task_id,
                        updated_task=trace.task_id,
                        tags=(f"instruction:{trace.instruction}", outcome_tag),
                    )
                )
            # Flush the per-action failure buffer into semantic entities.
            for text in sorted(self._action_buffer):
                count = self._action_buffer[text]
                entities.append(
                    MemoryEntity(
                        id=self._next_id("semantic", trace.task_id),
                        kind="semantic",
                        text=f"{text} (seen {count}x)" if count > 1 else text,
                        created_task=trace.task_id,
                        updated_task=trace.task_id,
                        tags=self._action_tags[text],
                        count=count,
                    )
                )
            self._action_buffer.clear()
            self._action_tags.clear()
            return entities

    # -- consolidation -----------------------------------------------------

    def consolidate(self, new_entities: Sequence[MemoryEntity]) -> UpdatePlan:
        with self._lock:
            plan = UpdatePlan()
            claimed: set = set()
            for entity in new_entities:
                decision = self._decide(entity)
                action = decision["action"]
                target_id = decision.get("target_id")
                if action in ("update", "replace") and (
                    target_id not in self._entities or target_id in claimed
                ):
                    logger.warning(
                        "updater referenced unknown or already-claimed id %s; "
                        "falling back to add",
                        target_id,
                    )
                    action = "add"
                if action in ("update", "replace"):
                    claimed.add(target_id)
                if action == "update":
                    old = self._entities[target_id]
                    plan.updates.append(
                        (
                            target_id,
                            replace(
                                old,
                                text=entity.text,
                                updated_task=entity.created_task,
                                count=old.count + entity.count,
                            ),
                        )
                    )
                elif action == "replace":
                    plan.deletes.append(target_id)
                    plan.adds.append(entity)
                else:
                    plan.adds.append(entity)
            self._apply(plan)
            return plan

    def _decide(self, entity: MemoryEntity) -> dict:
        similar = self._similar(entity)
        payload = {
            "new": {
                "id": entity.id,
                "kind": entity.kind,
                "text": entity.text,
                "tags": list(entity.tags),
                "count": entity.count,
            },
            "similar": [
                {
                    "id": e.id,
                    "kind": e.kind,
                    "text": e.text,
                    "tags": list(e.tags),
                    "count": e.count,
                    "score": score,
                }
                for e, score in similar
            ],
        }
        try:
            return self.gateway.invoke(ReasonerRole.MEMORY_UPDATER, payload)
        except GatewayError as exc:
            logger.warning("updater failed (%s); add-only fallback", exc)
            return {"action": "add"}

    def _similar(self, entity: MemoryEntity) -> List[Tuple[MemoryEntity, float]]:
        index = self._indexes[entity.kind]
        if len(index) == 0:
            return []
        results = index.search(
            self.embedder.embed(entity.text), k=CONSOLIDATION_K, theta=self.theta
        )
        return [(self._entities[e.id], score) for e, score in results]

    def _apply(self, plan: UpdatePlan) -> None:
        for entity_id in plan.deletes:
            old = self._entities.pop(entity_id)
            self._indexes[old.kind].remove(entity_id)
        for entity_id, updated in plan.updates:
            self._entities[entity_id] = updated
            self._indexes[updated.kind].upsert(
                IndexEntry(
                    id=entity_id, text=updated.text, embedding=self.embedder.embed(updated.text)
                )
            )
        for entity in plan.adds:
            self._entities[entity.id] = entity
            self._indexes[entity.kind].upsert(
                IndexEntry(id=entity.id, text=entity.text, embedding=self.embedder.embed(entity.text))
            )

    # -- retrieval -----------------------------------------------------------

    def retrieve(
        self, query: str, kind: Optional[str] = None, k: int = 5
    ) -> List[Tuple[MemoryEntity, float]]:
        with self._lock:
            kinds = [kind] if kind else ["episodic", "semantic"]
            results: List[Tuple[MemoryEntity, float]] = []
            for name in kinds:
                index = self._indexes[name]
                if len(index) == 0:
                    continue
                hits = index.search(self.embedder.embed(query), k=k, theta=self.theta)
                results.extend((self._entities[e.id], score) for e, score in hits)
            results.sort(key=lambda pair: (-pair[1], pair[0].id))
            return results[:k] if kind else results

    # -- persistence ---------------------------------------------------------

    def wipe(self) -> None:
        with self._lock:
            self._entities.clear()
            self._indexes = {
                "episodic": VectorIndex(dim=self.embedder.dim),
                "semantic": VectorIndex(dim=self.embedder.dim),
            }
            self._id_counters.clear()
            self._action_buffer.clear()
            self._action_tags.clear()
            self._success_tally.clear()

    def snapshot(self) -> str:
        with self._lock:
            return canonical_json(
                {
                    "entities": [e.to_doc() for e in self.entities()],
                    "id_counters": dict(sorted(self._id_counters.items())),
                    "success_tally": dict(sorted(self._success_tally.items())),
                }
            )

    def restore(self, snapshot: str) -> None:
        doc = json.loads(snapshot)
        with self._lock:
            self.wipe()
            self._id_counters = dict(doc.get("id_counters", {}))
            self._success_tally = dict(doc.get("success_tally", {}))
            for entity_doc in doc["entities"]:
                entity = MemoryEntity(
                    id=entity_doc["id"],
                    kind=entity_doc["kind"],
                    text=entity_doc["text"],
                    created_task=entity_doc["created_task"],
                    updated_task=entity_doc["updated_task"],
                    tags=tuple(entity_doc["tags"]),
                    count=entity_doc["count"],
                )
                self._entities[entity.id] = entity
                self._indexes[entity.kind].upsert(
                    IndexEntry(
                        id=entity.id, text=entity.text, embedding=self.embedder.embed(entity.text)
                    )
                )
