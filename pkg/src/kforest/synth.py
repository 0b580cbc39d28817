"""Deterministic synthetic course generator with a hidden ground truth.

The generator plants structure so that each pipeline stage has something to
recover and an oracle to score it against:

* Facets: every topic's true facet set is a noisy copy of its parent's set.
  The visible (initial) sets withhold each true facet with a configurable
  probability, but a withheld facet always stays visible in at least one
  neighbor topic, so propagation can win it back.
* Dependencies: prerequisite topics carry unique signature tokens that are
  quoted in the documents of their dependents, never the other way round,
  giving the planted edges asymmetric core-term coverage. Edges follow the
  breadth-first topic order, so the planted set is acyclic by construction.
* Assembly: every fragment quotes its facet's keyword twice, and facet
  label texts lead with the same keyword, so the keyword rule is an exact
  oracle for fragment labels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import InvalidSpec
from .ingest import CourseDataset, DatasetFragment, EmbeddingTable, FaLTRepository
from .model import FacetPath, FacetTree, Topic, fragment_id
from .text import tokenize

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne",
    "po", "ra", "su", "ta", "vi", "wo", "xe", "yo", "zu", "qa",
)
_FILLERS = (
    "system", "method", "value", "structure", "process", "result",
    "example", "case", "form", "model", "step", "rule", "part",
    "state", "order", "level", "group", "point", "term", "base",
)


def _words(syllables_per_word: int) -> list[str]:
    return ["".join(parts) for parts in product(_SYLLABLES, repeat=syllables_per_word)]


@dataclass(frozen=True)
class SyntheticCourseSpec:
    seed: int
    n_topics: int = 100
    branching: int = 4
    hide_probability: float = 0.3
    facet_pool_size: int = 36
    base_facets: int = 12
    drop_probability: float = 0.05
    extra_probability: float = 0.15
    fragments_per_facet: int = 3
    second_label_probability: float = 0.1
    dep_parent_probability: float = 0.5
    dep_sibling_probability: float = 0.25
    signature_tokens: int = 4

    def __post_init__(self) -> None:
        for name in (
            "hide_probability", "drop_probability", "extra_probability",
            "second_label_probability", "dep_parent_probability", "dep_sibling_probability",
        ):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise InvalidSpec(f"{name} must be in [0, 1], got {value}")
        if self.n_topics < 1:
            raise InvalidSpec("n_topics must be >= 1")
        if self.branching < 1:
            raise InvalidSpec("branching must be >= 1")
        if not (1 <= self.base_facets <= self.facet_pool_size):
            raise InvalidSpec("base_facets must be in [1, facet_pool_size]")
        if self.facet_pool_size > len(_words(2)):
            raise InvalidSpec("facet_pool_size exceeds the keyword pool")
        if self.fragments_per_facet < 1:
            raise InvalidSpec("fragments_per_facet must be >= 1")
        if self.signature_tokens < 1:
            raise InvalidSpec("signature_tokens must be >= 1")


@dataclass
class SynthTruth:
    """Hidden record for scoring recovery against the generator's plan."""

    spec: SyntheticCourseSpec
    true_facets: dict[str, frozenset[str]]
    visible_facets: dict[str, frozenset[str]]
    withheld: frozenset[tuple[str, str]]
    planted_edges: tuple[tuple[str, str], ...]
    fragment_labels: dict[str, frozenset[FacetPath]]

    def visible_trees(self) -> dict[str, FacetTree]:
        return {
            tid: FacetTree(topic=tid, paths=frozenset((name,) for name in names))
            for tid, names in self.visible_facets.items()
        }


def _neighbors(topics: Mapping[str, Topic]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {tid: set() for tid in topics}
    children: dict[str, list[str]] = {}
    for tid in sorted(topics):
        hyper = topics[tid].hypernym
        if hyper is not None:
            out[tid].add(hyper)
            out[hyper].add(tid)
            children.setdefault(hyper, []).append(tid)
    for siblings in children.values():
        for i, a in enumerate(siblings):
            for b in siblings[i + 1:]:
                out[a].add(b)
                out[b].add(a)
    return out


def synth_course(spec: SyntheticCourseSpec) -> tuple[CourseDataset, SynthTruth]:
    rng = np.random.default_rng(spec.seed)

    topic_words = _words(3)
    order = rng.permutation(len(topic_words))[: spec.n_topics]
    topic_ids = [topic_words[i] for i in order]
    topics: dict[str, Topic] = {}
    for i, tid in enumerate(topic_ids):
        hyper = topic_ids[(i - 1) // spec.branching] if i > 0 else None
        topics[tid] = Topic(id=tid, label=tid.capitalize(), hypernym=hyper)

    keyword_pool = _words(2)[: spec.facet_pool_size]
    signature_pool = [w + "z" for w in _words(3)]
    if spec.n_topics * spec.signature_tokens > len(signature_pool):
        raise InvalidSpec("signature pool exhausted; lower n_topics or signature_tokens")

    # True facet sets: inherit from the parent with seeded drops and extras.
    true_facets: dict[str, frozenset[str]] = {}
    for i, tid in enumerate(topic_ids):
        if i == 0:
            chosen = rng.choice(spec.facet_pool_size, size=spec.base_facets, replace=False)
            true_facets[tid] = frozenset(keyword_pool[j] for j in chosen)
            continue
        inherited = set(true_facets[topics[tid].hypernym])
        for name in sorted(inherited):
            if len(inherited) > 2 and rng.random() < spec.drop_probability:
                inherited.discard(name)
        if rng.random() < spec.extra_probability:
            outside = [w for w in keyword_pool if w not in inherited]
            if outside:
                inherited.add(outside[int(rng.integers(len(outside)))])
        true_facets[tid] = frozenset(inherited)

    # Visible sets withhold facets, then repair so every withheld facet
    # stays visible somewhere in the neighborhood.
    visible: dict[str, set[str]] = {}
    for tid in topic_ids:
        visible[tid] = {name for name in sorted(true_facets[tid]) if rng.random() >= spec.hide_probability}
    neighbor_map = _neighbors(topics)
    withheld: set[tuple[str, str]] = set()
    for tid in topic_ids:
        for name in sorted(true_facets[tid] - visible[tid]):
            if any(name in visible[other] for other in sorted(neighbor_map[tid])):
                withheld.add((tid, name))
            else:
                visible[tid].add(name)

    signatures: dict[str, list[str]] = {}
    sig_iter = iter(signature_pool)
    for tid in topic_ids:
        signatures[tid] = [next(sig_iter) for _ in range(spec.signature_tokens)]

    # Planted dependencies follow the breadth-first topic order, so the set
    # is acyclic: every edge points from an earlier topic to a later one.
    planted: list[tuple[str, str]] = []
    bfs_index = {tid: i for i, tid in enumerate(topic_ids)}
    for tid in topic_ids:
        hyper = topics[tid].hypernym
        if hyper is not None and rng.random() < spec.dep_parent_probability:
            planted.append((hyper, tid))
    children_of: dict[str, list[str]] = {}
    for tid in topic_ids:
        hyper = topics[tid].hypernym
        if hyper is not None:
            children_of.setdefault(hyper, []).append(tid)
    for siblings in children_of.values():
        for i, a in enumerate(siblings):
            for b in siblings[i + 1:]:
                if rng.random() < spec.dep_sibling_probability:
                    edge = (a, b) if bfs_index[a] < bfs_index[b] else (b, a)
                    planted.append(edge)

    fragments: list[DatasetFragment] = []
    fragment_labels: dict[str, frozenset[FacetPath]] = {}
    noise_pool = _words(2)[spec.facet_pool_size: spec.facet_pool_size + 200]
    seen_texts: set[tuple[str, str]] = set()

    def unique_text(tid: str, template_args: list[str]) -> str:
        for _ in range(64):
            noise = [noise_pool[int(rng.integers(len(noise_pool)))] for _ in range(2)]
            filler = _FILLERS[int(rng.integers(len(_FILLERS)))]
            text = " ".join(template_args + [filler, noise[0], noise[1]]) + "."
            if (tid, text) not in seen_texts:
                seen_texts.add((tid, text))
                return text
        raise InvalidSpec("could not generate a unique fragment text")

    def add_fragment(tid: str, text: str, facets: Iterable[str]) -> None:
        paths = tuple(sorted((name,) for name in facets))
        frag = DatasetFragment(id=fragment_id(text), topic=tid, text=text, facets=paths)
        fragments.append(frag)
        fragment_labels[frag.id] = frozenset(paths)

    for tid in topic_ids:
        names = sorted(true_facets[tid])
        for name in names:
            for _ in range(spec.fragments_per_facet):
                labels = {name}
                args = ["the", name, "of", tid, "covers", name]
                if len(names) > 1 and rng.random() < spec.second_label_probability:
                    other = names[int(rng.integers(len(names)))]
                    if other != name:
                        labels.add(other)
                        args += ["and", other]
                add_fragment(tid, unique_text(tid, args), labels)
        # Signature fragments carry the topic's own core terms.
        sig = signatures[tid]
        anchor = names[0]
        for _ in range(2):
            args = ["the"] + sig + ["principle", "of", tid] + sig + ["governs", anchor]
            add_fragment(tid, unique_text(tid, args), {anchor})
    for (u, v) in planted:
        anchor = sorted(true_facets[v])[0]
        args = ["review"] + signatures[u] + ["before", "the", anchor, "of", v]
        add_fragment(v, unique_text(v, args), {anchor})

    trees = {
        tid: FacetTree(topic=tid, paths=frozenset((name,) for name in sorted(true_facets[tid])))
        for tid in topic_ids
    }
    dataset = CourseDataset(
        name=f"synthetic-{spec.seed}",
        topics=topics,
        fragments=tuple(fragments),
        facet_trees=trees,
        dependencies=tuple(planted),
    )
    truth = SynthTruth(
        spec=spec,
        true_facets=true_facets,
        visible_facets={tid: frozenset(names) for tid, names in visible.items()},
        withheld=frozenset(withheld),
        planted_edges=tuple(planted),
        fragment_labels=fragment_labels,
    )
    return dataset, truth


def score_recovery(
    final_names: Mapping[str, frozenset[str]], truth: SynthTruth
) -> tuple[float, float]:
    """Precision and recall of adopted facets against the withheld truth."""
    adopted = {
        (tid, name)
        for tid, names in final_names.items()
        for name in names - truth.visible_facets[tid]
    }
    hits = len(adopted & truth.withheld)
    precision = hits / len(adopted) if adopted else 1.0
    recall = hits / len(truth.withheld) if truth.withheld else 1.0
    return precision, recall


def falt_texts(dataset: CourseDataset) -> dict[str, str]:
    """One keyword-led label text per facet name in the course."""
    names = sorted({p[-1] for tree in dataset.facet_trees.values() for p in tree.paths})
    return {
        name: f"the {name} aspect describes {name} details and {name} behavior"
        for name in names
    }


def falt_repository(dataset: CourseDataset) -> FaLTRepository:
    return FaLTRepository(texts=falt_texts(dataset))


def synth_embeddings(dataset: CourseDataset, dimension: int = 24, seed: int = 0) -> EmbeddingTable:
    """Unit-norm deterministic vectors for every token in the course texts."""
    vocab: set[str] = set()
    for frag in dataset.fragments:
        vocab.update(tokenize(frag.text))
    for text in falt_texts(dataset).values():
        vocab.update(tokenize(text))
    vectors: dict[str, np.ndarray] = {}
    for token in sorted(vocab):
        digest = hashlib.blake2b(f"{seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec = rng.standard_normal(dimension)
        vectors[token] = vec / np.linalg.norm(vec)
    return EmbeddingTable(dimension=dimension, vectors=vectors, seed=seed)


def render_embeddings(table: EmbeddingTable) -> str:
    lines = [f"{len(table.vectors)} {table.dimension}"]
    for token in sorted(table.vectors):
        comps = " ".join(repr(float(x)) for x in table.vectors[token])
        lines.append(f"{token} {comps}")
    return "\n".join(lines) + "\n"


def render_outlines(truth: SynthTruth) -> dict[str, str]:
    """MediaWiki outline per topic listing its visible facets."""
    out: dict[str, str] = {}
    for tid in sorted(truth.visible_facets):
        lines = [f"== {name} ==" for name in sorted(truth.visible_facets[tid])]
        out[tid] = "\n".join(lines) + ("\n" if lines else "")
    return out


def split_edges(
    edges: Iterable[tuple[str, str]], fraction: float, seed: int
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Deterministic train/test split of planted edges."""
    pool = sorted(edges)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    cut = int(len(pool) * fraction)
    train = sorted(pool[i] for i in order[:cut])
    test = sorted(pool[i] for i in order[cut:])
    return train, test


def sample_negative_pairs(
    topics: Mapping[str, Topic],
    forbidden: Iterable[tuple[str, str]],
    count: int,
    seed: int,
    radius: int = 4,
) -> list[tuple[str, str]]:
    """Seeded sample of ordered in-radius pairs that are not planted edges
    in either direction."""
    from .deps import hierarchy_distance

    banned = set(forbidden) | {(v, u) for (u, v) in forbidden}
    ids = sorted(topics)
    candidates = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            dist = hierarchy_distance(topics, a, b)
            if dist is None or dist > radius:
                continue
            if (a, b) not in banned:
                candidates.append((a, b))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(candidates))
    out: list[tuple[str, str]] = []
    for idx in order[: count]:
        a, b = candidates[int(idx)]
        out.append((a, b) if rng.random() < 0.5 else (b, a))
    return out
