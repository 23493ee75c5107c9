"""Knowledge-graph spatial memory with buffered two-phase updates.

New facts land in a small pending buffer (rapid response). On buffer
saturation or a fast-detected conflict, the affected K-hop region of the
graph is retrieved, de-duplicated, conflict-resolved, and merged back;
nodes outside that region are never touched.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .core import canonical_json, canonical_name
from .gateway import (
    DEFAULT_EXCLUSIVE_PAIRS,
    DEFAULT_FUNCTIONAL_GROUPS,
    GatewayError,
    ReasonerGateway,
    ReasonerRole,
)
from .vector_index import DEFAULT_THETA, HashingEmbedder, IndexEntry, VectorIndex, cosine

logger = logging.getLogger(__name__)

DEFAULT_K = 2
DEFAULT_BUFFER_CAPACITY = 8
DEFAULT_MAX_OUT_DEGREE = 16
DEFAULT_MAX_IN_DEGREE = 16


@dataclass(frozen=True)
class Triplet:
    subject: str
    relation: str
    object: str
    step_index: int = 0
    source: str = "observation"  # or "resolver"

    def __post_init__(self):
        subject = canonical_name(self.subject)
        obj = canonical_name(self.object)
        if not subject or not obj:
            raise ValueError("triplet endpoints must be non-empty")
        object.__setattr__(self, "subject", subject)
        object.__setattr__(self, "object", obj)
        object.__setattr__(self, "relation", canonical_name(self.relation))

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.subject, self.relation, self.object)

    def to_doc(self) -> dict:
        return {
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "step_index": self.step_index,
            "source": self.source,
        }


def khop_bound(num_seeds: int, max_out_degree: int, k: int) -> float:
    """Worst-case node count reachable within k hops from num_seeds roots."""
    if max_out_degree <= 0:
        return float(num_seeds)
    if max_out_degree == 1:
        return num_seeds * (k + 1)
    return num_seeds * (max_out_degree ** (k + 1) - 1) / (max_out_degree - 1)


class SpatialMemory:
    """Directed labeled graph over canonical entity names, with entity
    embeddings kept in a vector index for seed resolution and de-dup."""

    def __init__(
        self,
        gateway: Optional[ReasonerGateway] = None,
        embedder: Optional[HashingEmbedder] = None,
        theta: float = DEFAULT_THETA,
        k_hops: int = DEFAULT_K,
        buffer_capacity: int = DEFAULT_BUFFER_CAPACITY,
        max_out_degree: int = DEFAULT_MAX_OUT_DEGREE,
        max_in_degree: int = DEFAULT_MAX_IN_DEGREE,
        exclusive_pairs: Optional[List[List[str]]] = None,
        functional_groups: Optional[List[List[str]]] = None,
    ):
        self.gateway = gateway or ReasonerGateway()
        self.embedder = embedder or HashingEmbedder()
        self.theta = theta
        self.k_hops = k_hops
        self.buffer_capacity = buffer_capacity
        self.max_out_degree = max_out_degree
        self.max_in_degree = max_in_degree
        self.exclusive_pairs = exclusive_pairs or [list(p) for p in DEFAULT_EXCLUSIVE_PAIRS]
        self.functional_groups = (
            functional_groups or [list(g) for g in DEFAULT_FUNCTIONAL_GROUPS]
        )
        self._edges: Dict[Tuple[str, str, str], Triplet] = {}
        self._nodes: Set[str] = set()
        self._index = VectorIndex(dim=self.embedder.dim)
        self._pending: List[Triplet] = []
        self._retrieval_seed: Set[str] = set()  # most recent retrieval entities
        self._lock = threading.RLock()

    # -- basic views ------------------------------------------------------

    @property
    def nodes(self) -> Set[str]:
        with self._lock:
            return set(self._nodes)

    def edges(self) -> List[Triplet]:
        with self._lock:
            return [self._edges[k] for k in sorted(self._edges)]

    def pending(self) -> List[Triplet]:
        with self._lock:
            return list(self._pending)

    def out_degree(self, node: str) -> int:
        with self._lock:
            return sum(1 for s, _, _ in self._edges if s == node)

    def in_degree(self, node: str) -> int:
        with self._lock:
            return sum(1 for _, _, o in self._edges if o == node)

    def clear_retrieval_seed(self) -> None:
        with self._lock:
            self._retrieval_seed.clear()

    def clear(self) -> None:
        with self._lock:
            self._edges.clear()
            self._nodes.clear()
            self._index = VectorIndex(dim=self.embedder.dim)
            self._pending.clear()
            self._retrieval_seed.clear()

    # -- rapid response phase ---------------------------------------------

    def buffer_triplets(self, new_triplets: Sequence[Triplet]) -> None:
        """Buffer new facts; integrate on saturation or a fast conflict."""
        with self._lock:
            for triplet in new_triplets:
                self._pending.append(triplet)
                if len(self._pending) >= self.buffer_capacity or self._fast_conflict(triplet):
                    self.integrate()

    def _fast_conflict(self, triplet: Triplet) -> bool:
        exclusive = [frozenset(pair) for pair in self.exclusive_pairs]
        existing = [t for t in self._pending if t.key != triplet.key] + list(
            self._edges.values()
        )
        for other in existing:
            if (
                other.subject == triplet.subject
                and other.object == triplet.object
                and other.relation != triplet.relation
                and frozenset((other.relation, triplet.relation)) in exclusive
            ):
                return True
        return False

    # -- local integration phase (the incremental update) ------------------

    def integrate(self) -> None:
        with self._lock:
            if not self._pending:
                return
            t_new = list(self._pending)
            self._pending = []
            self._integrate(t_new)

    def _integrate(self, t_new: List[Triplet]) -> None:
        seeds = {t.subject for t in t_new} | {t.object for t in t_new}
        seeds |= self._retrieval_seed

        region_nodes, region_edges = self._retrieve(seeds, self.k_hops)
        region_nodes |= {t.subject for t in t_new} | {t.object for t in t_new}

        # Local working set: retrieved edges plus the new facts.
        local: Dict[Tuple[str, str, str], Triplet] = {}
        for edge in region_edges:
            local[edge.key] = edge
        for triplet in t_new:
            prior = local.get(triplet.key)
            if prior is None or triplet.step_index >= prior.step_index:
                local[triplet.key] = triplet  # relationship merging: max step_index wins

        local = self._dedup_entities(local, region_nodes)
        region_nodes = {n for e in local.values() for n in (e.subject, e.object)} | (
            region_nodes & self._nodes
        )
        local = self._resolve_conflicts(local)

        # Merge back: replace the retrieved region, leave everything else.
        for key in list(self._edges):
            s, _, o = key
            if s in region_nodes and o in region_nodes:
                del self._edges[key]
        for edge in local.values():
            self._add_edge(edge)

    def _dedup_entities(
        self, local: Dict[Tuple[str, str, str], Triplet], region_nodes: Set[str]
    ) -> Dict[Tuple[str, str, str], Triplet]:
        """Merge theta-similar entity names within the local region into the
        lexicographically smallest spelling. Nodes with edges outside the
        region are left alone to preserve locality."""
        local_nodes = sorted({n for e in local.values() for n in (e.subject, e.object)})
        rename: Dict[str, str] = {}
        for i, name in enumerate(local_nodes):
            if name in rename:
                continue
            vec = self.embedder.embed(name)
            for other in local_nodes[i + 1 :]:
                if other in rename or other == name:
                    continue
                if self._has_edges_outside(other, local):
                    continue
                if cosine(vec, self.embedder.embed(other)) >= self.theta:
                    rename[other] = name
        if not rename:
            return local
        merged: Dict[Tuple[str, str, str], Triplet] = {}
        for edge in local.values():
            renamed = replace(
                edge,
                subject=rename.get(edge.subject, edge.subject),
                object=rename.get(edge.object, edge.object),
            )
            prior = merged.get(renamed.key)
            if prior is None or renamed.step_index >= prior.step_index:
                merged[renamed.key] = renamed
        for loser in rename:
            self._drop_node(loser)
        return merged

    def _has_edges_outside(
        self, node: str, local: Dict[Tuple[str, str, str], Triplet]
    ) -> bool:
        for key in self._edges:
            if key in local:
                continue
            if node in (key[0], key[2]):
                return True
        return False

    def _resolve_conflicts(
        self, local: Dict[Tuple[str, str, str], Triplet]
    ) -> Dict[Tuple[str, str, str], Triplet]:
        edges = [local[k] for k in sorted(local)]
        payload = {
            "edges": [e.to_doc() for e in edges],
            "exclusive_pairs": self.exclusive_pairs,
            "functional_groups": self.functional_groups,
        }
        try:
            response = self.gateway.invoke(ReasonerRole.KG_CONFLICT_DETECTOR, payload)
        except GatewayError as exc:
            logger.warning("conflict detector failed (%s); using oracle rules", exc)
            from .gateway import _oracle_detect_conflicts

            response = _oracle_detect_conflicts(payload)

        losers: Set[Tuple[str, str, str]] = set()
        for group in response["conflicts"]:
            contenders = [edges[i] for i in group if 0 <= i < len(edges)]
            if len(contenders) < 2:
                continue
            winner = max(
                contenders,
                key=lambda e: (e.step_index, e.source == "resolver", e.relation),
            )
            for edge in contenders:
                if edge.key != winner.key:
                    losers.add(edge.key)
        return {k: v for k, v in local.items() if k not in losers}

    # -- retrieval ----------------------------------------------------------

    def _resolve_seed(self, seed: str) -> Optional[str]:
        name = canonical_name(seed)
        if name in self._nodes:
            return name
        if not name or not self._nodes:
            return None
        try:
            results = self._index.search(self.embedder.embed(name), k=1, theta=self.theta)
        except ValueError:
            return None
        return results[0][0].id if results else None

    def retrieve_subgraph(
        self, seeds: Iterable[str], k: Optional[int] = None
    ) -> Tuple[Set[str], List[Triplet]]:
        """All nodes reachable from the resolved seeds via <= k outgoing
        hops, plus the edges among them. Node count is asserted against the
        worst-case expansion bound."""
        with self._lock:
            hops = self.k_hops if k is None else k
            resolved = {r for r in (self._resolve_seed(s) for s in seeds) if r}
            nodes, edges = self._retrieve(resolved, hops)
            max_degree = max(
                (sum(1 for s, _, _ in self._edges if s == n) for n in self._nodes),
                default=0,
            )
            bound = min(
                float(len(self._nodes)) if self._nodes else 0.0,
                khop_bound(len(resolved), max_degree, hops),
            )
            assert len(nodes) <= bound or not resolved, (
                f"k-hop extraction returned {len(nodes)} nodes, bound {bound}"
            )
            return nodes, edges

    def _retrieve(self, seeds: Set[str], k: int) -> Tuple[Set[str], List[Triplet]]:
        frontier = {s for s in seeds if s in self._nodes}
        reached = set(frontier)
        adjacency: Dict[str, List[str]] = {}
        for s, _, o in self._edges:
            adjacency.setdefault(s, []).append(o)
        for _ in range(k):
            frontier = {
                neighbor
                for node in frontier
                for neighbor in adjacency.get(node, ())
                if neighbor not in reached
            }
            if not frontier:
                break
            reached |= frontier
        edges = [
            self._edges[key]
            for key in sorted(self._edges)
            if key[0] in reached and key[2] in reached
        ]
        return reached, edges

    def query(self, text: str, k: Optional[int] = None) -> str:
        """Render the subgraph around entities mentioned in the query as
        sorted 'subject relation object' lines; remembers the seed set."""
        with self._lock:
            seeds = self._extract_seeds(text)
            self._retrieval_seed = set(seeds)
            if not seeds:
                return ""
            _, edges = self.retrieve_subgraph(seeds, k)
            return "\n".join(f"{e.subject} {e.relation} {e.object}" for e in edges)

    def _extract_seeds(self, text: str) -> Set[str]:
        words = canonical_name(text).split()
        fragments = set()
        for n in (1, 2, 3):
            for i in range(len(words) - n + 1):
                fragments.add(" ".join(words[i : i + n]))
        seeds = set()
        for fragment in fragments:
            if fragment in self._nodes:
                seeds.add(fragment)
        if not seeds:
            for fragment in sorted(fragments):
                resolved = self._resolve_seed(fragment)
                if resolved:
                    seeds.add(resolved)
        return seeds

    # -- low-level mutation --------------------------------------------------

    def _add_edge(self, edge: Triplet) -> None:
        self._edges[edge.key] = edge
        for node in (edge.subject, edge.object):
            if node not in self._nodes:
                self._nodes.add(node)
                self._index.upsert(
                    IndexEntry(id=node, text=node, embedding=self.embedder.embed(node))
                )
        self._enforce_degree_cap(edge.subject, outgoing=True)
        self._enforce_degree_cap(edge.object, outgoing=False)

    def _enforce_degree_cap(self, node: str, outgoing: bool) -> None:
        cap = self.max_out_degree if outgoing else self.max_in_degree
        position = 0 if outgoing else 2
        incident = sorted(
            (t for k, t in self._edges.items() if k[position] == node),
            key=lambda t: (t.step_index, t.key),
        )
        while len(incident) > cap:
            victim = incident.pop(0)
            logger.info("degree cap on %s: evicting %s", node, victim.key)
            del self._edges[victim.key]

    def _drop_node(self, node: str) -> None:
        self._nodes.discard(node)
        if node in self._index:
            self._index.remove(node)
        for key in [k for k in self._edges if node in (k[0], k[2])]:
            del self._edges[key]

    # -- persistence / inspection ---------------------------------------------

    def snapshot(self) -> str:
        with self._lock:
            return canonical_json(
                {
                    "nodes": sorted(self._nodes),
                    "edges": [e.to_doc() for e in self.edges()],
                    "pending": [t.to_doc() for t in self._pending],
                    "retrieval_seed": sorted(self._retrieval_seed),
                }
            )

    def restore(self, snapshot: str) -> None:
        doc = json.loads(snapshot)
        with self._lock:
            self.clear()
            for edge_doc in doc["edges"]:
                self._add_edge(Triplet(**edge_doc))
            for node in doc["nodes"]:
                if node not in self._nodes:
                    self._nodes.add(node)
                    self._index.upsert(
                        IndexEntry(id=node, text=node, embedding=self.embedder.embed(node))
                    )
            self._pending = [Triplet(**t) for t in doc.get("pending", [])]
            self._retrieval_seed = set(doc.get("retrieval_seed", []))

    def to_graphviz(self) -> str:
        with self._lock:
            lines = ["digraph spatial {"]
            for node in sorted(self._nodes):
                lines.append(f'  "{node}";')
            for edge in self.edges():
                lines.append(
                    f'  "{edge.subject}" -> "{edge.object}" [label="{edge.relation}"];'
                )
            lines.append("}")
            return "\n".join(lines)
