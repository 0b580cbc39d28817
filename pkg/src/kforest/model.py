"""Core data model: topics, facet trees, fragments and the knowledge forest.

All values are immutable after construction; the operations below are pure
functions that return new values and never mutate their arguments. Facets
are addressed by *path*, the tuple of facet names from the tree root down,
because a facet name is only unique among siblings.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .errors import (
    CyclicDependencies,
    DuplicateSibling,
    TopicMismatch,
    UnknownFacet,
    UnknownParent,
    UnknownTopic,
)

FacetPath = tuple[str, ...]
ROOT: FacetPath = ()

TOPIC_ID_RE = re.compile(r"[a-z0-9-]+\Z")

FNV64_OFFSET = 14695981039346656037
FNV64_PRIME = 1099511628211


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash, the content-address scheme for fragments."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def fragment_id(text: str) -> str:
    """Content-derived fragment identifier: 16 hex digits of fnv1a_64(utf-8 text)."""
    return format(fnv1a_64(text.encode("utf-8")), "016x")


@dataclass(frozen=True)
class Topic:
    """A subject unit of a course; node of the knowledge forest."""

    id: str
    label: str
    hypernym: Optional[str] = None


@dataclass(frozen=True)
class FacetTree:
    """Rooted tree of a topic's facets.

    The root is the topic itself and is not stored as a path; ``paths``
    holds every facet as the name sequence leading to it. A well-formed
    tree is prefix closed: the parent ``path[:-1]`` of every facet is
    either the root or another stored path.
    """

    topic: str
    paths: frozenset[FacetPath] = field(default_factory=frozenset)

    def has(self, path: Sequence[str]) -> bool:
        return tuple(path) in self.paths

    def sorted_paths(self) -> list[FacetPath]:
        return sorted(self.paths)

    def names(self) -> frozenset[str]:
        """Set of facet names anywhere in the tree."""
        return frozenset(p[-1] for p in self.paths)

    def children(self, path: Sequence[str]) -> list[FacetPath]:
        prefix = tuple(path)
        n = len(prefix)
        return sorted(p for p in self.paths if len(p) == n + 1 and p[:n] == prefix)

    def edges(self) -> Iterator[tuple[FacetPath, FacetPath]]:
        """(parent path, child path) pairs; the root is the empty path."""
        for p in self.sorted_paths():
            yield p[:-1], p


@dataclass(frozen=True)
class KnowledgeFragment:
    """A text unit owned by one topic, assignable to one or more facets."""

    id: str
    topic: str
    text: str

    @classmethod
    def from_text(cls, topic: str, text: str) -> "KnowledgeFragment":
        return cls(id=fragment_id(text), topic=topic, text=text)


@dataclass(frozen=True)
class MaterializedFacetTree:
    """A facet tree together with its fragments and their facet assignments."""

    tree: FacetTree
    fragments: frozenset[KnowledgeFragment] = field(default_factory=frozenset)
    assembly: frozenset[tuple[FacetPath, str]] = field(default_factory=frozenset)

    def fragment_ids(self) -> frozenset[str]:
        return frozenset(f.id for f in self.fragments)

    def get_fragment(self, fragment_id_: str) -> Optional[KnowledgeFragment]:
        for f in self.fragments:
            if f.id == fragment_id_:
                return f
        return None


@dataclass(frozen=True)
class KnowledgeForest:
    """All materialized facet trees plus the learning-dependency edges.

    ``dependencies`` maps the ordered pair (u, v), read "learn u before v",
    to a confidence score in [0, 1].
    """

    topics: Mapping[str, Topic]
    mfts: Mapping[str, MaterializedFacetTree]
    dependencies: Mapping[tuple[str, str], float]

    def sorted_topic_ids(self) -> list[str]:
        return sorted(self.topics)

    def sorted_dependencies(self) -> list[tuple[str, str]]:
        return sorted(self.dependencies)


def empty_forest() -> KnowledgeForest:
    return KnowledgeForest(topics={}, mfts={}, dependencies={})


# --- tree operations ---

def new_facet_tree(topic: Topic) -> FacetTree:
    """Fresh facet tree whose only node is the topic root."""
    return FacetTree(topic=topic.id)


def add_facet(tree: FacetTree, parent: Sequence[str], name: str) -> FacetTree:
    """Return a tree extended with a facet ``name`` under ``parent``.

    ``parent`` is a facet path; the empty path addresses the root.
    """
    parent_path = tuple(parent)
    if not name or "/" in name:
        raise ValueError(f"invalid facet name: {name!r}")
    if parent_path != ROOT and parent_path not in tree.paths:
        raise UnknownParent(f"no facet at path {'/'.join(parent_path)!r} in topic {tree.topic!r}")
    new_path = parent_path + (name,)
    if new_path in tree.paths:
        raise DuplicateSibling(f"facet {name!r} already exists under {'/'.join(parent_path) or 'root'!r}")
    return FacetTree(topic=tree.topic, paths=tree.paths | {new_path})


def assemble_fragment(
    mft: MaterializedFacetTree, facet_path: Sequence[str], fragment: KnowledgeFragment
) -> MaterializedFacetTree:
    """Attach ``fragment`` to the facet at ``facet_path``; idempotent."""
    path = tuple(facet_path)
    if path not in mft.tree.paths:
        raise UnknownFacet(f"no facet at path {'/'.join(path)!r} in topic {mft.tree.topic!r}")
    if fragment.topic != mft.tree.topic:
        raise TopicMismatch(
            f"fragment belongs to topic {fragment.topic!r}, tree is for {mft.tree.topic!r}"
        )
    return MaterializedFacetTree(
        tree=mft.tree,
        fragments=mft.fragments | {fragment},
        assembly=mft.assembly | {(path, fragment.id)},
    )


# --- validation ---

@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)


def _hypernym_cycle(topics: Mapping[str, Topic]) -> Optional[list[str]]:
    for start in sorted(topics):
        seen: list[str] = []
        seen_set: set[str] = set()
        cur: Optional[str] = start
        while cur is not None and cur in topics:
            if cur in seen_set:
                i = seen.index(cur)
                return seen[i:] + [cur]
            seen.append(cur)
            seen_set.add(cur)
            cur = topics[cur].hypernym
    return None


def find_cycle(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> Optional[list[str]]:
    """One directed cycle as [n0, ..., n0], or None. Deterministic."""
    adj: dict[str, list[str]] = {n: [] for n in nodes}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, [])
    for n in adj:
        adj[n].sort()
    color: dict[str, int] = {}  # 1 on stack, 2 done
    for start in sorted(adj):
        if color.get(start):
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        path: list[str] = []
        color[start] = 1
        path.append(start)
        while stack:
            node, idx = stack[-1]
            if idx < len(adj[node]):
                stack[-1] = (node, idx + 1)
                nxt = adj[node][idx]
                c = color.get(nxt, 0)
                if c == 1:
                    return path[path.index(nxt):] + [nxt]
                if c == 0:
                    color[nxt] = 1
                    path.append(nxt)
                    stack.append((nxt, 0))
            else:
                color[node] = 2
                path.pop()
                stack.pop()
    return None


def validate(forest: KnowledgeForest) -> ValidationReport:
    """Check every forest invariant; violations are reported, never raised."""
    out: list[Violation] = []

    def bad(code: str, subject: str, detail: str) -> None:
        out.append(Violation(code, subject, detail))

    for tid in sorted(forest.topics):
        topic = forest.topics[tid]
        if topic.id != tid:
            bad("TopicIdMismatch", tid, f"table key {tid!r} holds topic id {topic.id!r}")
        if not TOPIC_ID_RE.match(topic.id or ""):
            bad("InvalidTopicId", tid, f"id {topic.id!r} is not a [a-z0-9-]+ slug")
        if topic.hypernym is not None and topic.hypernym not in forest.topics:
            bad("UnknownHypernym", tid, f"hypernym {topic.hypernym!r} is not a topic")

    cyc = _hypernym_cycle(dict(forest.topics))
    if cyc:
        bad("HypernymCycle", cyc[0], " -> ".join(cyc))

    for tid in sorted(forest.topics):
        if tid not in forest.mfts:
            bad("MissingTree", tid, "topic has no materialized facet tree")
    for tid in sorted(forest.mfts):
        mft = forest.mfts[tid]
        if tid not in forest.topics:
            bad("OrphanTree", tid, "materialized facet tree for unknown topic")
        if mft.tree.topic != tid:
            bad("TreeTopicMismatch", tid, f"tree claims topic {mft.tree.topic!r}")
        for path in mft.tree.sorted_paths():
            if any(not name for name in path):
                bad("EmptyFacetName", tid, f"path {path!r} contains an empty name")
            if len(path) > 1 and path[:-1] not in mft.tree.paths:
                bad("DetachedFacet", tid, f"facet {'/'.join(path)!r} has no parent facet")
        frag_ids = mft.fragment_ids()
        for frag in sorted(mft.fragments, key=lambda f: f.id):
            if frag.topic != tid:
                bad("FragmentTopicMismatch", frag.id, f"fragment topic {frag.topic!r} in tree {tid!r}")
            if not frag.text.strip():
                bad("EmptyFragmentText", frag.id, "fragment text is empty after trimming")
            if frag.id != fragment_id(frag.text):
                bad("FragmentIdMismatch", frag.id, "id is not the content hash of the text")
        for path, fid in sorted(mft.assembly):
            if path not in mft.tree.paths:
                bad("DanglingAssembly", tid, f"assembly references missing facet {'/'.join(path)!r}")
            if fid not in frag_ids:
                bad("DanglingAssembly", tid, f"assembly references missing fragment {fid!r}")

    for (u, v) in forest.sorted_dependencies():
        score = forest.dependencies[(u, v)]
        if u not in forest.topics:
            bad("UnknownDependencyTopic", u, f"dependency ({u!r}, {v!r}) references unknown topic")
        if v not in forest.topics:
            bad("UnknownDependencyTopic", v, f"dependency ({u!r}, {v!r}) references unknown topic")
        if u == v:
            bad("SelfDependency", u, "topic depends on itself")
        if not (0.0 <= score <= 1.0):
            bad("InvalidDependencyScore", u, f"score {score!r} for ({u!r}, {v!r}) outside [0, 1]")

    dep_cycle = find_cycle(forest.topics.keys(), [e for e in forest.dependencies if e[0] != e[1]])
    if dep_cycle:
        bad("CycleDetected", dep_cycle[0], " -> ".join(dep_cycle))

    return ValidationReport(violations=tuple(out))


# --- ordering queries ---

def learning_order(forest: KnowledgeForest) -> list[str]:
    """Topic ids in an order that respects every dependency edge.

    Ties are broken lexicographically so the output is deterministic.
    """
    indeg: dict[str, int] = {t: 0 for t in forest.topics}
    adj: dict[str, list[str]] = {t: [] for t in forest.topics}
    for (u, v) in forest.sorted_dependencies():
        if u in indeg and v in indeg:
            adj[u].append(v)
            indeg[v] += 1
    heap = [t for t, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out: list[str] = []
    while heap:
        t = heapq.heappop(heap)
        out.append(t)
        for v in adj[t]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(out) != len(forest.topics):
        cyc = find_cycle(forest.topics.keys(), forest.dependencies.keys())
        raise CyclicDependencies(cyc or ["<unknown>"])
    return out


def prerequisites(forest: KnowledgeForest, topic: str) -> set[str]:
    """All topics u with a directed dependency path u -> topic."""
    if topic not in forest.topics:
        raise UnknownTopic(topic)
    cyc = find_cycle(forest.topics.keys(), forest.dependencies.keys())
    if cyc:
        raise CyclicDependencies(cyc)
    rev: dict[str, list[str]] = {t: [] for t in forest.topics}
    for (u, v) in forest.dependencies:
        if u in rev and v in rev:
            rev[v].append(u)
    seen: set[str] = set()
    stack = [topic]
    while stack:
        node = stack.pop()
        for u in rev.get(node, ()):
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen
