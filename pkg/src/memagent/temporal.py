"""Action-level FIFO buffer of step summaries with clear-and-summarize
compaction: when an append finds the buffer full, the current entries are
collapsed into a single summary that becomes the first entry, followed by
the new item.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

from .core import StepRecord, canonical_json
from .gateway import GatewayError, ReasonerGateway, ReasonerRole

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 3


@dataclass(frozen=True)
class CompactedSummary:
    text: str
    covers_steps: Tuple[int, int]  # inclusive step range

    def __post_init__(self):
        first, last = self.covers_steps
        if first > last:
            raise ValueError("covers_steps must be a non-empty range")


BufferItem = Union[StepRecord, CompactedSummary]


def _item_range(item: BufferItem) -> Tuple[int, int]:
    if isinstance(item, CompactedSummary):
        return item.covers_steps
    return (item.step_index, item.step_index)


class TemporalMemory:
    def __init__(self, gateway: Optional[ReasonerGateway] = None, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.gateway = gateway or ReasonerGateway()
        self.capacity = capacity
        self._entries: List[BufferItem] = []
        self._lock = threading.RLock()

    def entries(self) -> List[BufferItem]:
        with self._lock:
            return list(self._entries)

    def append(self, record: StepRecord) -> None:
        with self._lock:
            if len(self._entries) >= self.capacity:
                compacted = self._compact(self._entries)
                self._entries = [compacted]
            self._entries.append(record)

    def _compact(self, entries: List[BufferItem]) -> CompactedSummary:
        texts = [e.text if isinstance(e, CompactedSummary) else e.summary for e in entries]
        first = min(_item_range(e)[0] for e in entries)
        last = max(_item_range(e)[1] for e in entries)
        payload = {"kind": "compact", "entries": texts, "covers_steps": [first, last]}
        try:
            response = self.gateway.invoke(ReasonerRole.STEP_SUMMARIZER, payload)
            text = response["summary"]
        except GatewayError as exc:
            logger.warning("compaction summarizer failed (%s); falling back", exc)
            text = f"steps {first}-{last}: " + "; ".join(texts)[:400]
        return CompactedSummary(text=text, covers_steps=(first, last))

    def render(self) -> str:
        with self._lock:
            lines = []
            for item in self._entries:
                if isinstance(item, CompactedSummary):
                    first, last = item.covers_steps
                    lines.append(f"steps {first}-{last} (summary): {item.text}")
                else:
                    lines.append(f"step {item.step_index}: {item.summary}")
            return "\n".join(lines)

    def clear(self) -> None:
        with self._lock:
            self._entries = []

    def snapshot(self) -> str:
        with self._lock:
            items = []
            for item in self._entries:
                if isinstance(item, CompactedSummary):
                    items.append(
                        {
                            "type": "compacted",
                            "text": item.text,
                            "covers_steps": list(item.covers_steps),
                        }
                    )
                else:
                    doc = {
                        "type": "step",
                        "step_index": item.step_index,
                        "summary": item.summary,
                        "outcome": item.outcome.value,
                        "action": {"verb": item.action.verb.value},
                    }
                    if item.action.target is not None:
                        doc["action"]["target"] = item.action.target
                    if item.failure_reason is not None:
                        doc["failure_reason"] = item.failure_reason
                    items.append(doc)
            return canonical_json({"capacity": self.capacity, "entries": items})
