"""Loaders: outline documents, course datasets, facet label texts, embeddings.

Outline documents come in two offline formats:

* MediaWiki headings: ``== Name ==`` with depth = number of ``=`` pairs - 1.
* Indented plain text: one heading per line, depth = leading tab count + 1.

A document is parsed in MediaWiki mode when any line is a MediaWiki heading;
non-heading lines are treated as body text and ignored in that mode.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyAfterNormalization,
    EmptyRepository,
    EmptyTable,
    IntegrityError,
    MalformedOutline,
    SchemaError,
)
from .model import (
    FacetPath,
    FacetTree,
    KnowledgeForest,
    KnowledgeFragment,
    MaterializedFacetTree,
    Topic,
    fragment_id,
)

# Navigation headings, not facets; removed together with their subtrees.
STOP_SECTIONS = frozenset({
    "references", "external links", "see also", "notes",
    "further reading", "bibliography",
})

PAD_TOKEN = "<pad>"


@dataclass(frozen=True)
class OutlineDocument:
    topic: str
    entries: tuple[tuple[str, int], ...]


_HEADING = re.compile(r"^(=+)\s*(.*?)\s*\1\s*$")


def parse_outline(text: str, topic: str = "") -> OutlineDocument:
    """Parse a contents/outline document into (heading, depth) entries."""
    lines = text.splitlines()
    mediawiki = any(_HEADING.match(line) for line in lines)
    raw: list[tuple[str, int]] = []
    for lineno, line in enumerate(lines, start=1):
        if mediawiki:
            if not line.strip():
                continue
            m = _HEADING.match(line)
            if m is None:
                if line.lstrip().startswith("="):
                    raise MalformedOutline(f"line {lineno}: unparseable heading {line!r}")
                continue  # body text
            depth = len(m.group(1)) - 1
            heading = m.group(2)
            if not heading or heading.startswith("=") or heading.endswith("="):
                raise MalformedOutline(f"line {lineno}: unparseable heading {line!r}")
        else:
            if not line.strip():
                continue
            depth = len(line) - len(line.lstrip("\t")) + 1
            heading = line.strip()
        raw.append((heading, depth))
        prev_depth = raw[-2][1] if len(raw) > 1 else 0
        if depth < 1 or depth > prev_depth + 1:
            raise MalformedOutline(
                f"line {lineno}: depth jump {prev_depth} -> {depth} at {heading!r}"
            )

    entries: list[tuple[str, int]] = []
    skip_deeper_than: Optional[int] = None
    for heading, depth in raw:
        if skip_deeper_than is not None and depth > skip_deeper_than:
            continue
        skip_deeper_than = None
        if heading.strip().lower() in STOP_SECTIONS:
            skip_deeper_than = depth
            continue
        entries.append((heading, depth))
    return OutlineDocument(topic=topic, entries=tuple(entries))


def render_outline(doc: OutlineDocument) -> str:
    """Native (MediaWiki) rendering; parse_outline inverts it for stop-free docs."""
    lines = []
    for heading, depth in doc.entries:
        marker = "=" * (depth + 1)
        lines.append(f"{marker} {heading} {marker}")
    return "\n".join(lines) + ("\n" if lines else "")


_LEADING_NUMBER = re.compile(r"^\d+(?:\.\d+)*\.?\s+")
_PARENTHETICAL = re.compile(r"\([^()]*\)")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def normalize_facet_name(raw: str) -> str:
    """Canonical facet name: lowercase slug, numbering and parentheticals removed."""
    s = raw.strip()
    s = _LEADING_NUMBER.sub("", s)
    s = _PARENTHETICAL.sub("", s)
    s = s.lower()
    s = _NON_ALNUM.sub("-", s).strip("-")
    if not s:
        raise EmptyAfterNormalization(f"nothing left of {raw!r} after normalization")
    return s


def initial_facets(doc: OutlineDocument) -> FacetTree:
    """Turn outline entries into the topic's initial facet tree.

    Parents come from document structure; names are normalized and duplicate
    siblings merged. Entries whose names normalize to nothing are skipped
    together with their subtrees.
    """
    paths: set[FacetPath] = set()
    stack: list[FacetPath] = []  # stack[d-1] = path of last kept entry at depth d
    skip_deeper_than: Optional[int] = None
    for heading, depth in doc.entries:
        if skip_deeper_than is not None and depth > skip_deeper_than:
            continue
        skip_deeper_than = None
        try:
            name = normalize_facet_name(heading)
        except EmptyAfterNormalization:
            skip_deeper_than = depth
            continue
        if depth - 1 > len(stack):
            raise MalformedOutline(f"depth jump to {depth} at {heading!r}")
        parent = stack[depth - 2] if depth >= 2 else ()
        path = parent + (name,)
        paths.add(path)
        del stack[depth - 1:]
        stack.append(path)
    return FacetTree(topic=doc.topic, paths=frozenset(paths))


# --- course datasets ---

@dataclass(frozen=True)
class DatasetFragment:
    id: str
    topic: str
    text: str
    facets: tuple[FacetPath, ...]  # gold facet labels, sorted


@dataclass(frozen=True)
class CourseDataset:
    name: str
    topics: dict[str, Topic]
    fragments: tuple[DatasetFragment, ...]
    facet_trees: dict[str, FacetTree]  # gold trees
    dependencies: tuple[tuple[str, str], ...]  # gold edges


@dataclass(frozen=True)
class CourseStats:
    topics: int
    fragments: int
    dependencies: int


def stats(ds: CourseDataset) -> CourseStats:
    return CourseStats(
        topics=len(ds.topics),
        fragments=len(ds.fragments),
        dependencies=len(ds.dependencies),
    )


def _expect(value, kind, location):
    if not isinstance(value, kind):
        raise SchemaError(location, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _path_from_json(obj, location) -> FacetPath:
    seq = _expect(obj, list, location)
    if not seq:
        raise SchemaError(location, "facet path must be non-empty")
    return tuple(_expect(seg, str, f"{location}[{i}]") for i, seg in enumerate(seq))


def parse_course_json(data, name_fallback: str = "") -> CourseDataset:
    """Build a CourseDataset from decoded JSON, checking schema and integrity."""
    root = _expect(data, dict, "$")
    name = _expect(root.get("name", name_fallback), str, "name")

    topics: dict[str, Topic] = {}
    for i, entry in enumerate(_expect(root.get("topics", []), list, "topics")):
        loc = f"topics[{i}]"
        obj = _expect(entry, dict, loc)
        tid = _expect(obj.get("id"), str, f"{loc}.id")
        label = _expect(obj.get("label", tid), str, f"{loc}.label")
        hyper = obj.get("hypernym")
        if hyper is not None:
            hyper = _expect(hyper, str, f"{loc}.hypernym")
        if tid in topics:
            raise IntegrityError(f"duplicate topic id {tid!r}")
        topics[tid] = Topic(id=tid, label=label, hypernym=hyper)
    for tid, topic in topics.items():
        if topic.hypernym is not None and topic.hypernym not in topics:
            raise IntegrityError(f"topic {tid!r} has unknown hypernym {topic.hypernym!r}")

    trees: dict[str, FacetTree] = {}
    trees_obj = _expect(root.get("facet_trees", {}), dict, "facet_trees")
    for tid in sorted(trees_obj):
        loc = f"facet_trees[{tid!r}]"
        if tid not in topics:
            raise IntegrityError(f"{loc}: unknown topic")
        paths: set[FacetPath] = set()
        for i, entry in enumerate(_expect(trees_obj[tid], list, loc)):
            obj = _expect(entry, dict, f"{loc}[{i}]")
            paths.add(_path_from_json(obj.get("path"), f"{loc}[{i}].path"))
        for path in paths:
            if len(path) > 1 and path[:-1] not in paths:
                raise IntegrityError(f"{loc}: facet {'/'.join(path)!r} has no parent facet")
        trees[tid] = FacetTree(topic=tid, paths=frozenset(paths))
    for tid in topics:
        trees.setdefault(tid, FacetTree(topic=tid))

    fragments: list[DatasetFragment] = []
    seen_texts: set[tuple[str, str]] = set()
    for i, entry in enumerate(_expect(root.get("fragments", []), list, "fragments")):
        loc = f"fragments[{i}]"
        obj = _expect(entry, dict, loc)
        topic = _expect(obj.get("topic"), str, f"{loc}.topic")
        text = _expect(obj.get("text"), str, f"{loc}.text")
        if topic not in topics:
            raise IntegrityError(f"{loc}: unknown topic {topic!r}")
        if not text.strip():
            raise IntegrityError(f"{loc}: empty fragment text")
        if (topic, text) in seen_texts:
            raise IntegrityError(f"{loc}: duplicate fragment text for topic {topic!r}")
        seen_texts.add((topic, text))
        facets = tuple(
            sorted(
                _path_from_json(p, f"{loc}.facets[{j}]")
                for j, p in enumerate(_expect(obj.get("facets", []), list, f"{loc}.facets"))
            )
        )
        for path in facets:
            if path not in trees[topic].paths:
                raise IntegrityError(
                    f"{loc}: facet {'/'.join(path)!r} not in the facet tree of {topic!r}"
                )
        fragments.append(DatasetFragment(id=fragment_id(text), topic=topic, text=text, facets=facets))

    dependencies: list[tuple[str, str]] = []
    seen_deps: set[tuple[str, str]] = set()
    for i, entry in enumerate(_expect(root.get("dependencies", []), list, "dependencies")):
        loc = f"dependencies[{i}]"
        seq = _expect(entry, list, loc)
        if len(seq) not in (2, 3):
            raise SchemaError(loc, "expected [from, to] or [from, to, score]")
        u = _expect(seq[0], str, f"{loc}[0]")
        v = _expect(seq[1], str, f"{loc}[1]")
        if u not in topics or v not in topics:
            raise IntegrityError(f"{loc}: unknown topic in ({u!r}, {v!r})")
        if u == v:
            raise IntegrityError(f"{loc}: self-dependency on {u!r}")
        if (u, v) in seen_deps:
            raise IntegrityError(f"{loc}: duplicate dependency ({u!r}, {v!r})")
        seen_deps.add((u, v))
        dependencies.append((u, v))

    return CourseDataset(
        name=name,
        topics=topics,
        fragments=tuple(fragments),
        facet_trees=trees,
        dependencies=tuple(dependencies),
    )


def load_course(path: str | Path) -> CourseDataset:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from exc
    return parse_course_json(data, name_fallback=path.stem)


def forest_from_dataset(
    ds: CourseDataset,
    trees: Optional[Mapping[str, FacetTree]] = None,
    with_gold_assembly: bool = False,
    with_gold_dependencies: bool = False,
) -> KnowledgeForest:
    """Assemble a forest from dataset parts.

    ``trees`` supplies the facet trees (defaults to the dataset's gold trees).
    Gold assembly entries are dropped when their facet is absent from the
    chosen tree.
    """
    chosen = dict(trees) if trees is not None else dict(ds.facet_trees)
    for tid in ds.topics:
        chosen.setdefault(tid, FacetTree(topic=tid))
    frags: dict[str, set[KnowledgeFragment]] = {tid: set() for tid in ds.topics}
    assembly: dict[str, set[tuple[FacetPath, str]]] = {tid: set() for tid in ds.topics}
    for frag in ds.fragments:
        frags[frag.topic].add(KnowledgeFragment(id=frag.id, topic=frag.topic, text=frag.text))
        if with_gold_assembly:
            for path in frag.facets:
                if path in chosen[frag.topic].paths:
                    assembly[frag.topic].add((path, frag.id))
    mfts = {
        tid: MaterializedFacetTree(
            tree=chosen[tid],
            fragments=frozenset(frags[tid]),
            assembly=frozenset(assembly[tid]),
        )
        for tid in ds.topics
    }
    deps: dict[tuple[str, str], float] = {}
    if with_gold_dependencies:
        deps = {edge: 1.0 for edge in ds.dependencies}
    return KnowledgeForest(topics=dict(ds.topics), mfts=mfts, dependencies=deps)


def topic_documents(ds: CourseDataset) -> dict[str, str]:
    """One concatenated document per topic, in dataset fragment order."""
    docs: dict[str, list[str]] = {tid: [] for tid in ds.topics}
    for frag in ds.fragments:
        docs[frag.topic].append(frag.text)
    return {tid: "\n".join(parts) for tid, parts in docs.items()}


# --- embeddings ---

@dataclass
class EmbeddingTable:
    """Token vectors plus a deterministic out-of-vocabulary policy.

    Vectors returned by :func:`lookup` must be treated as read-only.
    """

    dimension: int
    vectors: dict[str, np.ndarray]
    seed: int = 0
    _oov_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def load_embeddings(path: str | Path, seed: int = 0) -> EmbeddingTable:
    """Read the text embedding format: optional "count dim" header, then
    one token and its components per line, single spaces."""
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    dimension: Optional[int] = None
    lines = path.read_text(encoding="utf-8").splitlines()
    start = 0
    if lines:
        head = lines[0].split(" ")
        if len(head) == 2 and all(_is_int(tok) for tok in head):
            dimension = int(head[1])
            start = 1
    for lineno in range(start, len(lines)):
        line = lines[lineno]
        if not line.strip():
            continue
        parts = line.split(" ")
        token, comps = parts[0], parts[1:]
        try:
            vec = np.array([float(c) for c in comps], dtype=np.float64)
        except ValueError as exc:
            raise DimensionMismatch(f"line {lineno + 1}: non-numeric component") from exc
        if not comps or not np.all(np.isfinite(vec)):
            raise DimensionMismatch(f"line {lineno + 1}: bad vector for token {token!r}")
        if dimension is None:
            dimension = len(comps)
        if len(comps) != dimension:
            raise DimensionMismatch(
                f"line {lineno + 1}: expected {dimension} components, got {len(comps)}"
            )
        vectors.setdefault(token, vec)
    if dimension is None or not vectors:
        raise EmptyTable(str(path))
    return EmbeddingTable(dimension=dimension, vectors=vectors, seed=seed)


def _is_int(tok: str) -> bool:
    try:
        int(tok)
        return True
    except ValueError:
        return False


def lookup(table: EmbeddingTable, token: str) -> np.ndarray:
    """Stored vector, zero vector for the padding token, or a deterministic
    seeded pseudo-random vector in [-0.1, 0.1] for unknown tokens."""
    if token == PAD_TOKEN:
        return np.zeros(table.dimension)
    vec = table.vectors.get(token)
    if vec is not None:
        return vec
    cached = table._oov_cache.get(token)
    if cached is None:
        digest = hashlib.blake2b(
            f"{table.seed}\x00{token}".encode("utf-8"), digest_size=8
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        cached = rng.uniform(-0.1, 0.1, table.dimension)
        table._oov_cache[token] = cached
    return cached


# --- facet label texts ---

@dataclass
class FaLTRepository:
    """Reference texts describing facet labels, keyed by canonical name.

    Per-topic overrides (loaded from ``<topic>/<facet>.txt``) take
    precedence. Lookups of missing facets fall back to the facet name
    itself and are recorded in ``fallbacks``.
    """

    texts: dict[str, str]
    overrides: dict[tuple[str, str], str] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()
    fallbacks: set[str] = field(default_factory=set)

    def lookup(self, name: str, topic: Optional[str] = None) -> str:
        if topic is not None:
            override = self.overrides.get((topic, name))
            if override is not None:
                return override
        text = self.texts.get(name)
        if text is not None:
            return text
        self.fallbacks.add(name)
        return name

    def has(self, name: str, topic: Optional[str] = None) -> bool:
        if topic is not None and (topic, name) in self.overrides:
            return True
        return name in self.texts


def load_falt(directory: str | Path) -> FaLTRepository:
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyRepository(str(directory))
    texts: dict[str, str] = {}
    overrides: dict[tuple[str, str], str] = {}
    warnings: list[str] = []

    def read(path: Path) -> Optional[tuple[str, str]]:
        try:
            name = normalize_facet_name(path.stem)
        except EmptyAfterNormalization:
            warnings.append(f"{path.name}: name normalizes to nothing, skipped")
            return None
        content = path.read_text(encoding="utf-8").strip()
        if not content:
            warnings.append(f"{path.name}: empty file, skipped")
            return None
        return name, content

    for path in sorted(directory.glob("*.txt")):
        loaded = read(path)
        if loaded:
            texts[loaded[0]] = loaded[1]
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        for path in sorted(sub.glob("*.txt")):
            loaded = read(path)
            if loaded:
                overrides[(sub.name, loaded[0])] = loaded[1]
    return FaLTRepository(texts=texts, overrides=overrides, warnings=tuple(warnings))


def falt_from_texts(texts: Mapping[str, str]) -> FaLTRepository:
    """In-memory repository, used by the synthetic course generator."""
    return FaLTRepository(texts=dict(texts))
