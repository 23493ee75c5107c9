"""Tests for the parallel memory update/retrieval coordinator."""

import json
import time

import pytest

from memagent.core import ActionCommand, Outcome, StepRecord, TaskResult, Termination, Verb
from memagent.lifelong import LifelongMemory, TaskTrace
from memagent.orchestrator import MemoryContext, MemoryOrchestrator, UpdateEvent
from memagent.spatial import SpatialMemory, Triplet
from memagent.temporal import TemporalMemory


def step(i, verb=Verb.NAVIGATE_TO, target="sink", outcome=Outcome.SUCCESS, reason=None):
    return StepRecord(
        step_index=i,
        action=ActionCommand(verb=verb, target=target),
        summary=f"step {i}",
        outcome=outcome,
        failure_reason=reason,
    )


def action_event(i, triplets=()):
    return UpdateEvent(level="action", record=step(i), triplets=tuple(triplets))


def task_event(task_id="t1"):
    trace = TaskTrace(task_id=task_id, instruction="put cup on table")
    result = TaskResult(
        task_id=task_id, scn=1, gcn=1, steps_used=3, terminated_by=Termination.SUCCESS
    )
    return UpdateEvent(level="task", trace=trace, result=result)


class TestUpdateEvent:
    def test_rejects_unknown_level(self):
        with pytest.raises(ValueError):
            UpdateEvent(level="weird")

    def test_task_level_needs_trace_and_result(self):
        with pytest.raises(ValueError):
            UpdateEvent(level="task")


class TestDispatch:
    def test_action_event_reaches_all_branches(self):
        orch = MemoryOrchestrator()
        errors = orch.dispatch_update(
            action_event(0, [Triplet("cup", "on", "table")])
        )
        assert errors == {"spatial": None, "temporal": None, "semantic": None}
        assert len(orch.temporal.entries()) == 1
        assert orch.spatial.pending() or orch.spatial.edges()

    def test_task_event_consolidates_longterm(self):
        orch = MemoryOrchestrator()
        errors = orch.dispatch_update(task_event())
        assert errors == {"longterm": None}
        assert len(orch.lifelong) >= 1

    def test_branch_failure_is_isolated(self):
        class BrokenSpatial(SpatialMemory):
            def buffer_triplets(self, new_triplets):
                raise RuntimeError("spatial exploded")

        orch = MemoryOrchestrator(spatial=BrokenSpatial())
        errors = orch.dispatch_update(action_event(0, [Triplet("cup", "on", "table")]))
        assert errors["spatial"] == "spatial exploded"
        assert errors["temporal"] is None
        assert len(orch.temporal.entries()) == 1

    def test_disabled_modules_receive_nothing(self):
        orch = MemoryOrchestrator(spatial_enabled=False, longterm_enabled=False)
        orch.dispatch_update(action_event(0, [Triplet("cup", "on", "table")]))
        orch.dispatch_update(task_event())
        assert orch.spatial.pending() == [] and orch.spatial.edges() == []
        assert len(orch.lifelong) == 0
        assert len(orch.temporal.entries()) == 1

    def test_schedule_independence(self):
        """Final snapshots match whether branches ran in parallel or not."""
        snapshots = []
        for parallel in (True, False):
            orch = MemoryOrchestrator(parallel=parallel)
            for i in range(10):
                orch.dispatch_update(
                    action_event(i, [Triplet(f"object {i}", "on", "table", step_index=i)])
                )
            orch.dispatch_update(task_event())
            orch.spatial.integrate()
            snapshots.append(orch.snapshot())
        assert snapshots[0] == snapshots[1]


class TestGather:
    def build(self):
        orch = MemoryOrchestrator()
        orch.dispatch_update(action_event(0, [Triplet("cup", "on", "table")]))
        orch.spatial.integrate()
        orch.dispatch_update(task_event())
        return orch

    def test_context_contains_all_sections(self):
        orch = self.build()
        ctx = orch.gather_context("where is the cup")
        assert "cup on table" in ctx.spatial
        assert "step 0" in ctx.temporal
        assert ctx.episodic
        rendered = ctx.render()
        for header in ("[spatial]", "[temporal]", "[episodic]", "[semantic]"):
            assert header in rendered

    def test_retrieval_branch_failure_yields_empty_section(self):
        class BrokenTemporal(TemporalMemory):
            def render(self):
                raise RuntimeError("boom")

        orch = MemoryOrchestrator(temporal=BrokenTemporal())
        ctx = orch.gather_context("anything")
        assert ctx.temporal == ""

    def test_parallel_gather_overlaps_section_delays(self):
        delay = 0.05
        hooks = {name: delay for name in ("spatial", "temporal", "episodic", "semantic")}
        fast = MemoryOrchestrator(parallel=True, delay_hooks=hooks)
        slow = MemoryOrchestrator(parallel=False, delay_hooks=hooks)
        fast.gather_context("cup")
        slow.gather_context("cup")
        assert fast.gather_latencies[-1] < 2.5 * delay
        assert slow.gather_latencies[-1] >= 3.8 * delay

    def test_gather_results_match_across_schedules(self):
        par = self.build()
        seq = self.build()
        seq.parallel = False
        ctx_par = par.gather_context("where is the cup")
        ctx_seq = seq.gather_context("where is the cup")
        assert ctx_par.spatial == ctx_seq.spatial
        assert ctx_par.temporal == ctx_seq.temporal
        assert [e.text for e, _ in ctx_par.episodic] == [e.text for e, _ in ctx_seq.episodic]
        assert [e.text for e, _ in ctx_par.semantic] == [e.text for e, _ in ctx_seq.semantic]


class TestTaskBoundaries:
    def test_reset_task_state_keeps_longterm(self):
        orch = MemoryOrchestrator()
        orch.dispatch_update(action_event(0, [Triplet("cup", "on", "table")]))
        orch.dispatch_update(task_event())
        orch.reset_task_state()
        assert orch.temporal.entries() == []
        assert orch.spatial.edges() == [] and orch.spatial.pending() == []
        assert len(orch.lifelong) >= 1

    def test_snapshot_is_json_with_three_sections(self):
        orch = MemoryOrchestrator()
        orch.dispatch_update(action_event(0, [Triplet("cup", "on", "table")]))
        doc = json.loads(orch.snapshot())
        assert set(doc) == {"spatial", "temporal", "lifelong"}
        for section in doc.values():
            json.loads(section)
