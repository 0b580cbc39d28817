"""Facet propagation: complete each topic's facet set over the topic hierarchy.

Anchored label propagation. Every (topic, facet-name) probability starts
from the topic's own outline evidence and is repeatedly pulled toward the
similarity-weighted average of its neighborhood (parent, children and
brother topics):

    p_i <- (1 - lam) * p_i0 + lam * sum_j(w_ij * p_j) / sum_j(w_ij)

Seeded entries (facets present in the topic's own outline) are clamped to
1.0 after every sweep. Pair weights are computed once from the initial
facet sets and frozen, which makes the sweep a contraction for lam < 1 and
the fixed point unique. A topic includes a facet when its converged
probability is strictly greater than 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import HypernymCycle, NonFiniteProbability
from .model import FacetPath, FacetTree, Topic

INCLUSION_THRESHOLD = 0.5  # strict: include iff probability > 0.5


@dataclass(frozen=True)
class PropagationParams:
    lam: float = 0.7
    eps: float = 1e-4
    max_iters: int = 100
    smoothing: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.lam < 1.0):
            raise ValueError(f"lam must be in [0, 1), got {self.lam}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.smoothing <= 0.0:
            raise ValueError(f"smoothing must be positive, got {self.smoothing}")

    def iteration_bound(self) -> int:
        """Closed-form sweep bound: the max-change sequence shrinks by a
        factor lam per sweep, so ceil(log(eps*(1-lam)) / log(lam)) sweeps
        suffice to push it below eps."""
        if self.lam == 0.0:
            return 1
        target = self.eps * (1.0 - self.lam)
        if target >= 1.0:
            return 1
        return max(1, math.ceil(math.log(target) / math.log(self.lam)))


def neighbor_pairs(
    topics: Mapping[str, Topic],
) -> tuple[set[tuple[str, str]], set[tuple[str, str]]]:
    """Parent-child pairs (parent, child) and unordered brother pairs (a, b), a < b.

    Brother topics share the same hypernym. Hypernym links pointing outside
    the table are ignored; cyclic links raise HypernymCycle.
    """
    cycle = _find_hypernym_cycle(topics)
    if cycle:
        raise HypernymCycle(cycle)
    parent_child: set[tuple[str, str]] = set()
    by_parent: dict[str, list[str]] = {}
    for tid in sorted(topics):
        hyper = topics[tid].hypernym
        if hyper is None or hyper not in topics:
            continue
        parent_child.add((hyper, tid))
        by_parent.setdefault(hyper, []).append(tid)
    brothers: set[tuple[str, str]] = set()
    for siblings in by_parent.values():
        for i, a in enumerate(siblings):
            for b in siblings[i + 1:]:
                brothers.add((a, b))
    return parent_child, brothers


def _find_hypernym_cycle(topics: Mapping[str, Topic]) -> Optional[list[str]]:
    for start in sorted(topics):
        seen: list[str] = [start]
        seen_set = {start}
        cur = topics[start].hypernym
        while cur is not None and cur in topics:
            if cur in seen_set:
                return seen[seen.index(cur):] + [cur]
            seen.append(cur)
            seen_set.add(cur)
            cur = topics[cur].hypernym
    return None


def facet_similarity(fa: Iterable[str], fb: Iterable[str], smoothing: float = 1.0) -> float:
    """Smoothed Jaccard similarity of two facet name sets, in (0, 1]."""
    if smoothing <= 0.0:
        raise ValueError("smoothing must be positive")
    a, b = set(fa), set(fb)
    return (len(a & b) + smoothing) / (len(a | b) + smoothing)


@dataclass
class ProbabilityTable:
    """Per-(topic, facet-name) probabilities with the seed mask."""

    topic_ids: tuple[str, ...]
    facet_names: tuple[str, ...]
    probabilities: np.ndarray  # shape (topics, facets)
    seeded: np.ndarray  # bool, same shape

    def probability(self, topic: str, facet: str) -> float:
        return float(
            self.probabilities[self.topic_ids.index(topic), self.facet_names.index(facet)]
        )

    def rows(self) -> Iterable[tuple[str, str, float, bool]]:
        for i, tid in enumerate(self.topic_ids):
            for j, name in enumerate(self.facet_names):
                yield tid, name, float(self.probabilities[i, j]), bool(self.seeded[i, j])

    def included_names(self, topic: str) -> frozenset[str]:
        i = self.topic_ids.index(topic)
        mask = self.probabilities[i] > INCLUSION_THRESHOLD
        return frozenset(name for j, name in enumerate(self.facet_names) if mask[j])

    def to_tsv(self) -> str:
        lines = ["topic\tfacet\tprobability\tseeded"]
        for tid, name, prob, seeded in self.rows():
            lines.append(f"{tid}\t{name}\t{prob!r}\t{int(seeded)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "ProbabilityTable":
        rows = [line.split("\t") for line in text.splitlines()[1:] if line]
        topic_ids = tuple(sorted({r[0] for r in rows}))
        facet_names = tuple(sorted({r[1] for r in rows}))
        probs = np.zeros((len(topic_ids), len(facet_names)))
        seeded = np.zeros_like(probs, dtype=bool)
        ti = {t: i for i, t in enumerate(topic_ids)}
        fi = {f: i for i, f in enumerate(facet_names)}
        for tid, name, prob, flag in rows:
            probs[ti[tid], fi[name]] = float(prob)
            seeded[ti[tid], fi[name]] = flag == "1"
        return cls(topic_ids=topic_ids, facet_names=facet_names, probabilities=probs, seeded=seeded)


@dataclass
class PropagationResult:
    trees: dict[str, FacetTree]
    table: ProbabilityTable
    iterations: int
    max_changes: tuple[float, ...]  # per-sweep max absolute change
    converged: bool


def propagate(
    trees: Mapping[str, FacetTree],
    topics: Mapping[str, Topic],
    params: PropagationParams = PropagationParams(),
) -> PropagationResult:
    """Run propagation to its fixed point and thicken the facet trees.

    Facets adopted by a topic attach under the parent path the facet has in
    the nearest donor: the neighbor of highest pair weight whose initial
    tree contains the facet (ties broken by topic id). When no donor exists
    or the donor's parent path is absent from the adopter, the facet goes
    under the root.
    """
    if set(trees) != set(topics):
        raise ValueError("trees and topics must cover the same topic ids")
    topic_ids = tuple(sorted(topics))
    index = {tid: i for i, tid in enumerate(topic_ids)}
    initial_names = {tid: trees[tid].names() for tid in topic_ids}
    facet_names = tuple(sorted(set().union(*initial_names.values()) if topic_ids else set()))
    name_index = {name: j for j, name in enumerate(facet_names)}
    n, f = len(topic_ids), len(facet_names)

    parent_child, brothers = neighbor_pairs(topics)
    weights = np.zeros((n, n))
    for (a, b) in sorted(parent_child | brothers):
        w = facet_similarity(initial_names[a], initial_names[b], params.smoothing)
        weights[index[a], index[b]] = w
        weights[index[b], index[a]] = w
    row_sums = weights.sum(axis=1)
    connected = row_sums > 0.0

    p0 = np.zeros((n, f))
    for tid in topic_ids:
        for name in initial_names[tid]:
            p0[index[tid], name_index[name]] = 1.0
    seeded = p0 == 1.0

    p = p0.copy()
    max_changes: list[float] = []
    converged = False
    iterations = 0
    for _ in range(params.max_iters):
        iterations += 1
        avg = p0.copy()
        if connected.any():
            avg[connected] = (weights[connected] @ p) / row_sums[connected, None]
        nxt = (1.0 - params.lam) * p0 + params.lam * avg
        nxt[seeded] = 1.0
        np.clip(nxt, 0.0, 1.0, out=nxt)
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteProbability("propagation produced a non-finite probability")
        change = float(np.max(np.abs(nxt - p))) if p.size else 0.0
        max_changes.append(change)
        p = nxt
        if change < params.eps:
            converged = True
            break

    table = ProbabilityTable(
        topic_ids=topic_ids, facet_names=facet_names, probabilities=p, seeded=seeded
    )
    final_trees = {
        tid: _thicken(tid, trees, table.included_names(tid), initial_names, weights, index, topic_ids)
        for tid in topic_ids
    }
    return PropagationResult(
        trees=final_trees,
        table=table,
        iterations=iterations,
        max_changes=tuple(max_changes),
        converged=converged,
    )


def _thicken(
    tid: str,
    trees: Mapping[str, FacetTree],
    included: frozenset[str],
    initial_names: Mapping[str, frozenset[str]],
    weights: np.ndarray,
    index: Mapping[str, int],
    topic_ids: tuple[str, ...],
) -> FacetTree:
    tree = trees[tid]
    adopted = sorted(included - initial_names[tid])
    if not adopted:
        return tree
    i = index[tid]
    neighbors = sorted(
        (tid2 for tid2 in topic_ids if weights[i, index[tid2]] > 0.0),
        key=lambda t: (-weights[i, index[t]], t),
    )
    pending: list[tuple[FacetPath, str]] = []
    for name in adopted:
        donor_parent: FacetPath = ()
        for neighbor in neighbors:
            if name in initial_names[neighbor]:
                occurrences = sorted(p for p in trees[neighbor].paths if p[-1] == name)
                donor_parent = occurrences[0][:-1]
                break
        pending.append((donor_parent, name))

    paths = set(tree.paths)
    pending.sort(key=lambda item: (len(item[0]), item[0], item[1]))
    while pending:
        progressed = False
        remaining: list[tuple[FacetPath, str]] = []
        for donor_parent, name in pending:
            if donor_parent == () or donor_parent in paths:
                paths.add(donor_parent + (name,))
                progressed = True
            else:
                remaining.append((donor_parent, name))
        if not progressed:
            for _, name in remaining:
                paths.add((name,))
            remaining = []
        pending = remaining
    return FacetTree(topic=tid, paths=frozenset(paths))
