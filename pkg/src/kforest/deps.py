"""Learning-dependency extraction over ordered topic pairs.

Built on two signals: core terms of a prerequisite topic tend to occur in
the documents of its dependents but not the other way round (asymmetry),
and dependencies connect topics that sit close together in the topic
hierarchy (locality). Five pair features feed a deterministic logistic
classifier:

    f1  coverage(a -> b): fraction of a's core terms found in b's document
    f2  coverage(b -> a)
    f3  f1 - f2
    f4  1 / (1 + hierarchy distance), 0 when disconnected
    f5  token-set Jaccard of the two documents
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateLabels, EmptyDocument, UntrainedModel
from .model import Topic, find_cycle
from .text import tokenize

DEFAULT_CORE_TERMS = 10
DEFAULT_RADIUS = 4

FEATURE_NAMES = ("coverage_ab", "coverage_ba", "asymmetry", "locality", "jaccard")


class TopicCorpus:
    """One concatenated document per topic, tokenized once."""

    def __init__(self, documents: Mapping[str, str]):
        self.documents = dict(documents)
        self.counts: dict[str, Counter[str]] = {}
        self.token_sets: dict[str, frozenset[str]] = {}
        df: Counter[str] = Counter()
        for tid in sorted(self.documents):
            toks = tokenize(self.documents[tid])
            self.counts[tid] = Counter(toks)
            tokset = frozenset(toks)
            self.token_sets[tid] = tokset
            df.update(tokset)
        self.df = df
        self.n_docs = len(self.documents)
        self._core_cache: dict[tuple[str, int], frozenset[str]] = {}

    def __contains__(self, tid: str) -> bool:
        return tid in self.documents

    def core_term_set(self, topic: str, k: int) -> frozenset[str]:
        key = (topic, k)
        cached = self._core_cache.get(key)
        if cached is None:
            cached = frozenset(core_terms(self, topic, k))
            self._core_cache[key] = cached
        return cached


def core_terms(corpus: TopicCorpus, topic: str, k: int = DEFAULT_CORE_TERMS) -> list[str]:
    """Top-k tokens of the topic's document by TF-IDF.

    tf is the raw count, idf = ln(N / df); ties break lexicographically.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    counts = corpus.counts[topic]
    if not counts:
        raise EmptyDocument(topic)
    scored = sorted(
        ((tf * math.log(corpus.n_docs / corpus.df[tok]), tok) for tok, tf in counts.items()),
        key=lambda item: (-item[0], item[1]),
    )
    return [tok for _, tok in scored[:k]]


def _hypernym_adjacency(topics: Mapping[str, Topic]) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {tid: set() for tid in topics}
    for tid, topic in topics.items():
        if topic.hypernym is not None and topic.hypernym in topics:
            adj[tid].add(topic.hypernym)
            adj[topic.hypernym].add(tid)
    return adj


def _distances_from(topics: Mapping[str, Topic], a: str) -> dict[str, int]:
    adj = _hypernym_adjacency(topics)
    seen = {a: 0}
    queue = deque([a])
    while queue:
        node = queue.popleft()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen[nxt] = seen[node] + 1
                queue.append(nxt)
    return seen


def hierarchy_distance(topics: Mapping[str, Topic], a: str, b: str) -> Optional[int]:
    """Undirected path length between two topics over hypernym links, or None."""
    if a == b:
        return 0
    return _distances_from(topics, a).get(b)


@dataclass(frozen=True)
class PairFeatures:
    coverage_ab: float
    coverage_ba: float
    asymmetry: float
    locality: float
    jaccard: float

    def vector(self) -> np.ndarray:
        return np.array(
            [self.coverage_ab, self.coverage_ba, self.asymmetry, self.locality, self.jaccard]
        )

    def reverse(self) -> "PairFeatures":
        """Features of the opposite pair ordering."""
        return PairFeatures(
            coverage_ab=self.coverage_ba,
            coverage_ba=self.coverage_ab,
            asymmetry=-self.asymmetry,
            locality=self.locality,
            jaccard=self.jaccard,
        )


def pair_features(
    corpus: TopicCorpus,
    a: str,
    b: str,
    topics: Mapping[str, Topic],
    k: int = DEFAULT_CORE_TERMS,
) -> PairFeatures:
    core_a = corpus.core_term_set(a, k)
    core_b = corpus.core_term_set(b, k)
    set_a, set_b = corpus.token_sets[a], corpus.token_sets[b]
    f1 = len(core_a & set_b) / len(core_a)
    f2 = len(core_b & set_a) / len(core_b)
    dist = hierarchy_distance(topics, a, b)
    f4 = 0.0 if dist is None else 1.0 / (1.0 + dist)
    union = set_a | set_b
    f5 = len(set_a & set_b) / len(union) if union else 0.0
    return PairFeatures(
        coverage_ab=f1, coverage_ba=f2, asymmetry=f1 - f2, locality=f4, jaccard=f5
    )


@dataclass
class DependencyModel:
    """Logistic classifier over standardized pair features."""

    weights: np.ndarray  # (5,)
    bias: float
    mean: np.ndarray  # (5,)
    spread: np.ndarray  # (5,), 1.0 where the feature was constant

    def score(self, features: PairFeatures) -> float:
        z = (features.vector() - self.mean) / self.spread
        return float(_sigmoid(np.dot(self.weights, z) + self.bias))


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def train(
    examples: Sequence[tuple[PairFeatures, int]],
    learning_rate: float = 0.5,
    iterations: int = 500,
) -> DependencyModel:
    """Fit the classifier with full-batch gradient descent on cross-entropy.

    Deterministic: zero-initialized weights, fixed iteration count. The loss
    must be non-increasing; if a dataset ever violates that, the rate is
    halved and training restarts.
    """
    labels = np.array([label for _, label in examples], dtype=np.float64)
    if labels.size == 0 or len(set(labels.tolist())) < 2:
        raise DegenerateLabels("training needs at least one positive and one negative example")
    x = np.stack([feat.vector() for feat, _ in examples])
    mean = x.mean(axis=0)
    spread = x.std(axis=0)
    spread[spread < 1e-12] = 1.0
    xs = (x - mean) / spread

    rate = learning_rate
    for _ in range(20):
        w = np.zeros(x.shape[1])
        b = 0.0
        losses: list[float] = []
        monotone = True
        for _ in range(iterations):
            z = xs @ w + b
            loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
            if losses and loss > losses[-1] + 1e-12:
                monotone = False
                break
            losses.append(loss)
            p = _sigmoid(z)
            grad_w = xs.T @ (p - labels) / labels.size
            grad_b = float(np.mean(p - labels))
            w = w - rate * grad_w
            b = b - rate * grad_b
        if monotone:
            return DependencyModel(weights=w, bias=b, mean=mean, spread=spread)
        rate /= 2.0
    raise DegenerateLabels("training loss would not decrease at any rate")


def training_accuracy(model: DependencyModel, examples: Sequence[tuple[PairFeatures, int]]) -> float:
    hits = sum(1 for feat, label in examples if (model.score(feat) > 0.5) == bool(label))
    return hits / len(examples)


def predict(
    model: Optional[DependencyModel],
    topics: Mapping[str, Topic],
    corpus: TopicCorpus,
    radius: int = DEFAULT_RADIUS,
    k: int = DEFAULT_CORE_TERMS,
) -> dict[tuple[str, str], float]:
    """Score candidate pairs and return an acyclic, antisymmetric edge set.

    Candidates are unordered pairs within hierarchy distance ``radius``.
    Both directions are scored; an edge is emitted iff the higher score
    exceeds 0.5 (equal scores yield no edge). Cycles are broken by
    repeatedly dropping the lowest-score edge on a detected cycle.
    """
    if model is None:
        raise UntrainedModel("predict requires a trained model")
    candidates = [tid for tid in sorted(topics) if tid in corpus]
    distances = {a: _distances_from(topics, a) for a in candidates}
    edges: dict[tuple[str, str], float] = {}
    for i, a in enumerate(candidates):
        for b in candidates[i + 1:]:
            dist = distances[a].get(b)
            if dist is None or dist > radius:
                continue
            forward = pair_features(corpus, a, b, topics, k)
            s_ab = model.score(forward)
            s_ba = model.score(forward.reverse())
            if s_ab == s_ba:
                continue
            score = max(s_ab, s_ba)
            if score > 0.5:
                edges[(a, b) if s_ab > s_ba else (b, a)] = score

    while True:
        cycle = find_cycle({t for e in edges for t in e}, edges.keys())
        if cycle is None:
            break
        on_cycle = [
            (u, v) for u, v in zip(cycle, cycle[1:]) if (u, v) in edges
        ]
        victim = min(on_cycle, key=lambda e: (edges[e], e))
        del edges[victim]
    return edges
