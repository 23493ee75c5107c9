"""Shared domain types and canonical JSON serialization.

Every value that crosses a module boundary (snapshots, trajectory logs,
trace files) goes through :func:`serialize` / :func:`deserialize` so that
golden files and snapshot diffs are byte-stable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class Verb(str, Enum):
    NAVIGATE_TO = "navigate_to"
    FIND = "find"
    PICK_UP = "pick_up"
    PUT_DOWN_TO = "put_down_to"
    DROP = "drop"
    OPEN = "open"
    CLOSE = "close"
    TURN_ON = "turn_on"
    TURN_OFF = "turn_off"
    SLICE = "slice"
    TASK_COMPLETE = "task_complete"


#: Verbs that take no target object.
TARGETLESS_VERBS = frozenset({Verb.TASK_COMPLETE, Verb.DROP})


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class Termination(str, Enum):
    SUCCESS = "success"
    STEP_BUDGET = "step_budget"
    SELF_TERMINATED = "self_terminated"


class InvariantError(ValueError):
    """A value or document violates a type invariant.

    ``path`` names the offending field for deserialization errors.
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class MalformedDocumentError(ValueError):
    """Input is not a JSON object of the expected shape."""


_WS = re.compile(r"\s+")


def canonical_name(name: str) -> str:
    """Canonical spelling for object/point names: case-folded, trimmed,
    inner whitespace collapsed to single spaces."""
    return _WS.sub(" ", name.strip().casefold())


@dataclass(frozen=True)
class ActionCommand:
    verb: Verb
    target: Optional[str] = None

    def __post_init__(self):
        if self.verb in TARGETLESS_VERBS:
            object.__setattr__(self, "target", None)
        else:
            if not self.target or not canonical_name(self.target):
                raise InvariantError(
                    f"verb {self.verb.value} requires a target", "target"
                )
            object.__setattr__(self, "target", canonical_name(self.target))

    def __str__(self) -> str:
        if self.target is None:
            return f"{self.verb.value}()"
        return f"{self.verb.value}({self.target})"


@dataclass(frozen=True)
class Observation:
    task_id: str
    step_index: int
    text: str
    image_refs: tuple = ()

    def __post_init__(self):
        if self.step_index < 0:
            raise InvariantError("step_index must be >= 0", "step_index")
        if not self.text:
            raise InvariantError("text must be non-empty", "text")
        object.__setattr__(self, "image_refs", tuple(self.image_refs))


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    action: ActionCommand
    summary: str
    outcome: Outcome
    failure_reason: Optional[str] = None

    def __post_init__(self):
        if self.step_index < 0:
            raise InvariantError("step_index must be >= 0", "step_index")
        if not self.summary:
            raise InvariantError("summary must be non-empty", "summary")
        if self.outcome is Outcome.FAILURE and not self.failure_reason:
            raise InvariantError(
                "failure_reason required on failure", "failure_reason"
            )
        if self.outcome is Outcome.SUCCESS and self.failure_reason:
            raise InvariantError(
                "failure_reason only allowed on failure", "failure_reason"
            )


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    scn: int
    gcn: int
    steps_used: int
    terminated_by: Termination

    def __post_init__(self):
        if self.gcn < 1:
            raise InvariantError("gcn must be >= 1", "gcn")
        if not (0 <= self.scn <= self.gcn):
            raise InvariantError("scn must satisfy 0 <= scn <= gcn", "scn")
        if self.steps_used < 0:
            raise InvariantError("steps_used must be >= 0", "steps_used")

    @property
    def success(self) -> bool:
        return self.scn == self.gcn


def canonical_json(doc: Any) -> str:
    """Deterministic JSON text: sorted keys, compact separators, UTF-8."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _to_doc(value: Any) -> Any:
    if isinstance(value, ActionCommand):
        doc = {"verb": value.verb.value}
        if value.target is not None:
            doc["target"] = value.target
        return doc
    if isinstance(value, Observation):
        return {
            "task_id": value.task_id,
            "step_index": value.step_index,
            "text": value.text,
            "image_refs": list(value.image_refs),
        }
    if isinstance(value, StepRecord):
        doc = {
            "step_index": value.step_index,
            "action": _to_doc(value.action),
            "summary": value.summary,
            "outcome": value.outcome.value,
        }
        if value.failure_reason is not None:
            doc["failure_reason"] = value.failure_reason
        return doc
    if isinstance(value, TaskResult):
        return {
            "task_id": value.task_id,
            "scn": value.scn,
            "gcn": value.gcn,
            "steps_used": value.steps_used,
            "terminated_by": value.terminated_by.value,
        }
    raise TypeError(f"not a serializable core type: {type(value)!r}")


def serialize(value: Any) -> str:
    """Canonical JSON document for any core type. Deterministic and
    injective on valid values."""
    return canonical_json(_to_doc(value))


def _require(doc: dict, key: str, path: str) -> Any:
    if key not in doc:
        raise InvariantError("missing required field", f"{path}{key}")
    return doc[key]


def _parse_enum(enum_cls, raw: Any, path: str):
    try:
        return enum_cls(raw)
    except ValueError:
        raise InvariantError(
            f"not a valid {enum_cls.__name__}: {raw!r}", path
        ) from None


def deserialize(doc: Any, expected: type) -> Any:
    """Parse a JSON document (text or already-parsed object) into a core
    type, validating invariants. Raises MalformedDocumentError or
    InvariantError (with field path)."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise MalformedDocumentError(str(exc)) from exc
    if not isinstance(doc, dict):
        raise MalformedDocumentError(f"expected JSON object, got {type(doc).__name__}")

    try:
        if expected is ActionCommand:
            verb = _parse_enum(Verb, _require(doc, "verb", ""), "verb")
            target = doc.get("target")
            return ActionCommand(verb=verb, target=target)
        if expected is Observation:
            return Observation(
                task_id=_require(doc, "task_id", ""),
                step_index=_require(doc, "step_index", ""),
                text=_require(doc, "text", ""),
                image_refs=tuple(doc.get("image_refs", ())),
            )
        if expected is StepRecord:
            return StepRecord(
                step_index=_require(doc, "step_index", ""),
                action=deserialize(_require(doc, "action", ""), ActionCommand),
                summary=_require(doc, "summary", ""),
                outcome=_parse_enum(Outcome, _require(doc, "outcome", ""), "outcome"),
                failure_reason=doc.get("failure_reason"),
            )
        if expected is TaskResult:
            return TaskResult(
                task_id=_require(doc, "task_id", ""),
                scn=_require(doc, "scn", ""),
                gcn=_require(doc, "gcn", ""),
                steps_used=_require(doc, "steps_used", ""),
                terminated_by=_parse_enum(
                    Termination, _require(doc, "terminated_by", ""), "terminated_by"
                ),
            )
    except TypeError as exc:
        raise InvariantError(str(exc)) from exc
    raise TypeError(f"unsupported target type: {expected!r}")
