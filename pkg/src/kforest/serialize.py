"""Forest serialization: N-Triples storage, DOT views, JSON interchange.

N-Triples is the canonical store. Output is byte-stable: triples are
deduplicated and sorted lexicographically by (subject, predicate, object),
literals escaped per the N-Triples rules, IRI path segments percent-encoded.
The parser accepts exactly the grammar subset the serializer emits (plus
blank lines and # comment lines) and reports positions on failure.
"""

from __future__ import annotations

import json
import re
from typing import Iterable, Optional
from urllib.parse import quote, unquote

from .errors import DanglingReference, ParseError, SchemaError, UnknownPredicate, UnknownTopic
from .model import (
    FacetPath,
    FacetTree,
    KnowledgeForest,
    KnowledgeFragment,
    MaterializedFacetTree,
    Topic,
    fragment_id,
)

BASE_IRI = "http://example.org/kf#"
TOPIC_PREFIX = BASE_IRI + "topic/"
FACET_PREFIX = BASE_IRI + "facet/"
FRAG_PREFIX = BASE_IRI + "frag/"
DEP_PREFIX = BASE_IRI + "dep/"

P_HAS_FACET = BASE_IRI + "hasFacet"
P_SUB_FACET_OF = BASE_IRI + "subFacetOf"
P_ASSEMBLED_TO = BASE_IRI + "assembledTo"
P_IS_PREREQUISITE_OF = BASE_IRI + "isPrerequisiteOf"
P_HAS_HYPERNYM = BASE_IRI + "hasHypernym"
P_LABEL = BASE_IRI + "label"
P_TEXT = BASE_IRI + "text"
P_SCORE = BASE_IRI + "score"

PREDICATES = frozenset({
    P_HAS_FACET, P_SUB_FACET_OF, P_ASSEMBLED_TO, P_IS_PREREQUISITE_OF,
    P_HAS_HYPERNYM, P_LABEL, P_TEXT, P_SCORE,
})

HEADER_COMMENT = "# knowledge forest vocabulary v1 <http://example.org/kf#>"


def _seg(name: str) -> str:
    return quote(name, safe="")


def topic_iri(topic_id: str) -> str:
    return TOPIC_PREFIX + _seg(topic_id)


def facet_iri(topic_id: str, path: FacetPath) -> str:
    return FACET_PREFIX + "/".join([_seg(topic_id)] + [_seg(p) for p in path])


def fragment_iri(topic_id: str, frag_id: str) -> str:
    return FRAG_PREFIX + _seg(topic_id) + "/" + frag_id


def dependency_iri(u: str, v: str) -> str:
    return DEP_PREFIX + _seg(u) + "/" + _seg(v)


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _escape_literal(text: str) -> str:
    out = []
    for ch in text:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def _format_score(score: float) -> str:
    return repr(float(score))


def to_ntriples(forest: KnowledgeForest) -> str:
    """Serialize a forest; structurally equal forests give identical bytes."""
    triples: set[tuple[str, str, str]] = set()

    def emit(s: str, p: str, o: str) -> None:
        triples.add((s, p, o))

    def lit(text: str) -> str:
        return f'"{_escape_literal(text)}"'

    for tid in sorted(forest.topics):
        topic = forest.topics[tid]
        emit(f"<{topic_iri(tid)}>", f"<{P_LABEL}>", lit(topic.label))
        if topic.hypernym is not None:
            emit(f"<{topic_iri(tid)}>", f"<{P_HAS_HYPERNYM}>", f"<{topic_iri(topic.hypernym)}>")
    for tid in sorted(forest.mfts):
        mft = forest.mfts[tid]
        for path in mft.tree.sorted_paths():
            child = f"<{facet_iri(tid, path)}>"
            if len(path) == 1:
                emit(f"<{topic_iri(tid)}>", f"<{P_HAS_FACET}>", child)
            else:
                emit(child, f"<{P_SUB_FACET_OF}>", f"<{facet_iri(tid, path[:-1])}>")
        for frag in sorted(mft.fragments, key=lambda f: f.id):
            emit(f"<{fragment_iri(tid, frag.id)}>", f"<{P_TEXT}>", lit(frag.text))
        for path, fid in sorted(mft.assembly):
            emit(
                f"<{fragment_iri(tid, fid)}>",
                f"<{P_ASSEMBLED_TO}>",
                f"<{facet_iri(tid, path)}>",
            )
    for (u, v) in forest.sorted_dependencies():
        emit(f"<{topic_iri(u)}>", f"<{P_IS_PREREQUISITE_OF}>", f"<{topic_iri(v)}>")
        emit(
            f"<{dependency_iri(u, v)}>",
            f"<{P_SCORE}>",
            lit(_format_score(forest.dependencies[(u, v)])),
        )

    if not triples:
        return ""
    lines = [HEADER_COMMENT]
    lines.extend(f"{s} {p} {o} ." for s, p, o in sorted(triples))
    return "\n".join(lines) + "\n"


# --- parsing ---

_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}


class _LineParser:
    def __init__(self, line: str, lineno: int):
        self.line = line
        self.lineno = lineno
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(self.lineno, self.pos + 1, message)

    def skip_ws(self) -> None:
        while self.pos < len(self.line) and self.line[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        return self.pos >= len(self.line)

    def take_iri(self) -> str:
        if self.at_end() or self.line[self.pos] != "<":
            raise self.error("expected '<'")
        end = self.line.find(">", self.pos + 1)
        if end == -1:
            raise self.error("unterminated IRI")
        iri = self.line[self.pos + 1 : end]
        if any(ch in iri for ch in ' <>"{}|^`') or any(ord(ch) < 0x21 for ch in iri):
            raise self.error("invalid character in IRI")
        if ":" not in iri:
            raise self.error("IRI is not absolute")
        self.pos = end + 1
        return iri

    def take_literal(self) -> str:
        if self.at_end() or self.line[self.pos] != '"':
            raise self.error("expected '\"'")
        self.pos += 1
        out: list[str] = []
        while True:
            if self.at_end():
                raise self.error("unterminated literal")
            ch = self.line[self.pos]
            if ch == '"':
                self.pos += 1
                return "".join(out)
            if ch == "\\":
                self.pos += 1
                if self.at_end():
                    raise self.error("dangling escape")
                esc = self.line[self.pos]
                if esc in _UNESCAPES:
                    out.append(_UNESCAPES[esc])
                    self.pos += 1
                elif esc in "uU":
                    width = 4 if esc == "u" else 8
                    hexdigits = self.line[self.pos + 1 : self.pos + 1 + width]
                    if len(hexdigits) != width or not re.fullmatch(r"[0-9A-Fa-f]+", hexdigits):
                        raise self.error("bad unicode escape")
                    out.append(chr(int(hexdigits, 16)))
                    self.pos += 1 + width
                else:
                    raise self.error(f"unknown escape \\{esc}")
            else:
                out.append(ch)
                self.pos += 1

    def take_object(self) -> tuple[str, str]:
        if self.at_end():
            raise self.error("expected object term")
        if self.line[self.pos] == "<":
            return "iri", self.take_iri()
        if self.line[self.pos] == '"':
            value = self.take_literal()
            if not self.at_end() and self.line[self.pos] in "@^":
                raise self.error("datatypes and language tags are not supported")
            return "literal", value
        raise self.error("expected IRI or literal")

    def expect_dot(self) -> None:
        self.skip_ws()
        if self.at_end() or self.line[self.pos] != ".":
            raise self.error("expected '.'")
        self.pos += 1
        self.skip_ws()
        if not self.at_end():
            raise self.error("trailing content after '.'")


def _split_resource(iri: str, lineno: int) -> tuple[str, list[str]]:
    for kind, prefix in (
        ("topic", TOPIC_PREFIX),
        ("facet", FACET_PREFIX),
        ("frag", FRAG_PREFIX),
        ("dep", DEP_PREFIX),
    ):
        if iri.startswith(prefix):
            segments = [unquote(seg) for seg in iri[len(prefix):].split("/")]
            if any(not seg for seg in segments):
                raise DanglingReference(f"line {lineno}: malformed resource IRI <{iri}>")
            return kind, segments
    raise DanglingReference(f"line {lineno}: IRI <{iri}> outside the forest vocabulary")


def from_ntriples(text: str) -> KnowledgeForest:
    """Parse a forest from its N-Triples storage form."""
    labels: dict[str, str] = {}
    hypernyms: dict[str, str] = {}
    referenced_topics: dict[str, int] = {}
    facet_declared: dict[str, set[FacetPath]] = {}
    facet_child_lines: list[tuple[int, str, FacetPath]] = []
    frag_texts: dict[tuple[str, str], str] = {}
    assembled: list[tuple[int, str, str, FacetPath, str]] = []
    dep_edges: set[tuple[str, str]] = set()
    dep_scores: dict[tuple[str, str], float] = {}

    def saw_topic(tid: str, lineno: int) -> None:
        referenced_topics.setdefault(tid, lineno)

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        if not raw_line.strip() or raw_line.lstrip().startswith("#"):
            continue
        lp = _LineParser(raw_line, lineno)
        lp.skip_ws()
        subject = lp.take_iri()
        lp.skip_ws()
        predicate = lp.take_iri()
        lp.skip_ws()
        obj_kind, obj = lp.take_object()
        lp.expect_dot()

        if predicate not in PREDICATES:
            raise UnknownPredicate(f"line {lineno}: <{predicate}>")

        def need(kind: str) -> None:
            if obj_kind != kind:
                raise ParseError(lineno, 1, f"predicate <{predicate}> expects a {kind} object")

        s_kind, s_segs = _split_resource(subject, lineno)
        if predicate == P_LABEL:
            need("literal")
            if s_kind != "topic" or len(s_segs) != 1:
                raise DanglingReference(f"line {lineno}: label on non-topic <{subject}>")
            labels[s_segs[0]] = obj
        elif predicate == P_HAS_HYPERNYM:
            need("iri")
            o_kind, o_segs = _split_resource(obj, lineno)
            if s_kind != "topic" or o_kind != "topic" or len(s_segs) != 1 or len(o_segs) != 1:
                raise DanglingReference(f"line {lineno}: hypernym link must join topics")
            hypernyms[s_segs[0]] = o_segs[0]
            saw_topic(s_segs[0], lineno)
            saw_topic(o_segs[0], lineno)
        elif predicate == P_HAS_FACET:
            need("iri")
            o_kind, o_segs = _split_resource(obj, lineno)
            if (
                s_kind != "topic"
                or len(s_segs) != 1
                or o_kind != "facet"
                or len(o_segs) != 2
                or o_segs[0] != s_segs[0]
            ):
                raise DanglingReference(
                    f"line {lineno}: hasFacet must join a topic to its depth-1 facet"
                )
            saw_topic(s_segs[0], lineno)
            facet_declared.setdefault(s_segs[0], set()).add((o_segs[1],))
        elif predicate == P_SUB_FACET_OF:
            need("iri")
            o_kind, o_segs = _split_resource(obj, lineno)
            if s_kind != "facet" or o_kind != "facet" or len(s_segs) < 3:
                raise DanglingReference(f"line {lineno}: subFacetOf must join two facets")
            if o_segs != s_segs[:-1]:
                raise DanglingReference(
                    f"line {lineno}: facet parent IRI does not match the child path"
                )
            tid = s_segs[0]
            saw_topic(tid, lineno)
            facet_declared.setdefault(tid, set()).add(tuple(s_segs[1:]))
            facet_child_lines.append((lineno, tid, tuple(s_segs[1:])))
        elif predicate == P_TEXT:
            need("literal")
            if s_kind != "frag" or len(s_segs) != 2:
                raise DanglingReference(f"line {lineno}: text on non-fragment <{subject}>")
            saw_topic(s_segs[0], lineno)
            frag_texts[(s_segs[0], s_segs[1])] = obj
        elif predicate == P_ASSEMBLED_TO:
            need("iri")
            o_kind, o_segs = _split_resource(obj, lineno)
            if s_kind != "frag" or len(s_segs) != 2 or o_kind != "facet" or len(o_segs) < 2:
                raise DanglingReference(f"line {lineno}: assembledTo must join fragment to facet")
            if o_segs[0] != s_segs[0]:
                raise DanglingReference(
                    f"line {lineno}: fragment and facet belong to different topics"
                )
            saw_topic(s_segs[0], lineno)
            assembled.append((lineno, s_segs[0], s_segs[1], tuple(o_segs[1:]), subject))
        elif predicate == P_IS_PREREQUISITE_OF:
            need("iri")
            o_kind, o_segs = _split_resource(obj, lineno)
            if s_kind != "topic" or o_kind != "topic" or len(s_segs) != 1 or len(o_segs) != 1:
                raise DanglingReference(f"line {lineno}: prerequisite link must join topics")
            saw_topic(s_segs[0], lineno)
            saw_topic(o_segs[0], lineno)
            dep_edges.add((s_segs[0], o_segs[0]))
        elif predicate == P_SCORE:
            need("literal")
            if s_kind != "dep" or len(s_segs) != 2:
                raise DanglingReference(f"line {lineno}: score on non-dependency <{subject}>")
            try:
                score = float(obj)
            except ValueError:
                raise ParseError(lineno, 1, f"score literal {obj!r} is not a number") from None
            saw_topic(s_segs[0], lineno)
            saw_topic(s_segs[1], lineno)
            dep_scores[(s_segs[0], s_segs[1])] = score

    for tid, lineno in sorted(referenced_topics.items()):
        if tid not in labels:
            raise DanglingReference(f"line {lineno}: topic {tid!r} referenced but never declared")
    for pair in sorted(dep_scores):
        if pair not in dep_edges:
            raise DanglingReference(f"score for missing dependency {pair!r}")
    for lineno, tid, path in facet_child_lines:
        declared = facet_declared.get(tid, set())
        if path[:-1] not in declared:
            raise DanglingReference(
                f"line {lineno}: facet {'/'.join(path)!r} of {tid!r} has no declared parent"
            )

    topics = {
        tid: Topic(id=tid, label=labels[tid], hypernym=hypernyms.get(tid))
        for tid in sorted(labels)
    }
    mfts: dict[str, MaterializedFacetTree] = {}
    frags_by_topic: dict[str, set[KnowledgeFragment]] = {tid: set() for tid in topics}
    for (tid, fid), body in frag_texts.items():
        frags_by_topic[tid].add(KnowledgeFragment(id=fid, topic=tid, text=body))
    assembly_by_topic: dict[str, set[tuple[FacetPath, str]]] = {tid: set() for tid in topics}
    for lineno, tid, fid, path, subject in assembled:
        if (tid, fid) not in frag_texts:
            raise DanglingReference(f"line {lineno}: assembled fragment <{subject}> has no text")
        if path not in facet_declared.get(tid, set()):
            raise DanglingReference(
                f"line {lineno}: assembly references undeclared facet {'/'.join(path)!r}"
            )
        assembly_by_topic[tid].add((path, fid))
    for tid in topics:
        mfts[tid] = MaterializedFacetTree(
            tree=FacetTree(topic=tid, paths=frozenset(facet_declared.get(tid, set()))),
            fragments=frozenset(frags_by_topic[tid]),
            assembly=frozenset(assembly_by_topic[tid]),
        )
    dependencies = {pair: dep_scores.get(pair, 1.0) for pair in sorted(dep_edges)}
    return KnowledgeForest(topics=topics, mfts=mfts, dependencies=dependencies)


# --- DOT views ---

def _dot_quote(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(forest: KnowledgeForest, view: str, topic: Optional[str] = None) -> str:
    """Graphviz rendering: one topic's facet tree, or the forest overview."""
    if view == "facet-tree":
        if topic is None or topic not in forest.topics:
            raise UnknownTopic(str(topic))
        mft = forest.mfts.get(topic)
        tree = mft.tree if mft else FacetTree(topic=topic)
        counts: dict[str, int] = {}
        for path in tree.paths:
            counts[path[-1]] = counts.get(path[-1], 0) + 1

        def node_id(path: FacetPath) -> str:
            if path == ():
                return topic
            name = path[-1]
            if counts[name] == 1 and name != topic:
                return name
            return "/".join(path)

        lines = [f"digraph {_dot_quote(topic)} {{"]
        lines.append(f"  {_dot_quote(topic)};")
        for parent, child in sorted(tree.edges(), key=lambda e: e[1]):
            lines.append(f"  {_dot_quote(node_id(parent))} -> {_dot_quote(node_id(child))};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    if view in ("forest-overview", "overview"):
        lines = ["digraph forest {"]
        for tid in sorted(forest.topics):
            lines.append(f"  {_dot_quote(tid)};")
        for (u, v) in sorted(forest.dependencies):
            lines.append(f"  {_dot_quote(u)} -> {_dot_quote(v)};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown view {view!r}")


# --- JSON interchange ---

def forest_to_json_obj(forest: KnowledgeForest) -> dict:
    topics = [
        {
            "id": tid,
            "label": forest.topics[tid].label,
            "hypernym": forest.topics[tid].hypernym,
        }
        for tid in sorted(forest.topics)
    ]
    facet_trees = {
        tid: [{"path": list(path)} for path in forest.mfts[tid].tree.sorted_paths()]
        for tid in sorted(forest.mfts)
    }
    fragments = []
    for tid in sorted(forest.mfts):
        mft = forest.mfts[tid]
        facets_of: dict[str, list[FacetPath]] = {}
        for path, fid in mft.assembly:
            facets_of.setdefault(fid, []).append(path)
        for frag in sorted(mft.fragments, key=lambda f: f.id):
            fragments.append(
                {
                    "topic": tid,
                    "text": frag.text,
                    "facets": [list(p) for p in sorted(facets_of.get(frag.id, []))],
                }
            )
    dependencies = [
        [u, v, forest.dependencies[(u, v)]] for (u, v) in forest.sorted_dependencies()
    ]
    return {
        "name": "",
        "topics": topics,
        "facet_trees": facet_trees,
        "fragments": fragments,
        "dependencies": dependencies,
    }


def to_json(forest: KnowledgeForest) -> str:
    return json.dumps(forest_to_json_obj(forest), ensure_ascii=False, indent=2) + "\n"


def forest_from_json_obj(data) -> KnowledgeForest:
    if not isinstance(data, dict):
        raise SchemaError("$", "expected an object")

    def expect(value, kind, location):
        if not isinstance(value, kind):
            raise SchemaError(location, f"expected {kind.__name__}")
        return value

    topics: dict[str, Topic] = {}
    for i, entry in enumerate(expect(data.get("topics", []), list, "topics")):
        obj = expect(entry, dict, f"topics[{i}]")
        tid = expect(obj.get("id"), str, f"topics[{i}].id")
        label = expect(obj.get("label", tid), str, f"topics[{i}].label")
        hyper = obj.get("hypernym")
        if hyper is not None:
            hyper = expect(hyper, str, f"topics[{i}].hypernym")
        topics[tid] = Topic(id=tid, label=label, hypernym=hyper)

    trees: dict[str, FacetTree] = {}
    for tid, entries in expect(data.get("facet_trees", {}), dict, "facet_trees").items():
        paths = set()
        for i, entry in enumerate(expect(entries, list, f"facet_trees[{tid!r}]")):
            obj = expect(entry, dict, f"facet_trees[{tid!r}][{i}]")
            seq = expect(obj.get("path"), list, f"facet_trees[{tid!r}][{i}].path")
            paths.add(tuple(expect(s, str, f"facet_trees[{tid!r}][{i}].path") for s in seq))
        trees[tid] = FacetTree(topic=tid, paths=frozenset(paths))
    for tid in topics:
        trees.setdefault(tid, FacetTree(topic=tid))

    frags: dict[str, set[KnowledgeFragment]] = {tid: set() for tid in topics}
    assembly: dict[str, set[tuple[FacetPath, str]]] = {tid: set() for tid in topics}
    for i, entry in enumerate(expect(data.get("fragments", []), list, "fragments")):
        obj = expect(entry, dict, f"fragments[{i}]")
        tid = expect(obj.get("topic"), str, f"fragments[{i}].topic")
        body = expect(obj.get("text"), str, f"fragments[{i}].text")
        if tid not in topics:
            raise SchemaError(f"fragments[{i}].topic", f"unknown topic {tid!r}")
        frag = KnowledgeFragment(id=fragment_id(body), topic=tid, text=body)
        frags[tid].add(frag)
        for j, p in enumerate(expect(obj.get("facets", []), list, f"fragments[{i}].facets")):
            seq = expect(p, list, f"fragments[{i}].facets[{j}]")
            assembly[tid].add(
                (tuple(expect(s, str, f"fragments[{i}].facets[{j}]") for s in seq), frag.id)
            )

    dependencies: dict[tuple[str, str], float] = {}
    for i, entry in enumerate(expect(data.get("dependencies", []), list, "dependencies")):
        seq = expect(entry, list, f"dependencies[{i}]")
        if len(seq) not in (2, 3):
            raise SchemaError(f"dependencies[{i}]", "expected [from, to] or [from, to, score]")
        u = expect(seq[0], str, f"dependencies[{i}][0]")
        v = expect(seq[1], str, f"dependencies[{i}][1]")
        score = 1.0
        if len(seq) == 3:
            if not isinstance(seq[2], (int, float)) or isinstance(seq[2], bool):
                raise SchemaError(f"dependencies[{i}][2]", "expected a number")
            score = float(seq[2])
        dependencies[(u, v)] = score

    mfts = {
        tid: MaterializedFacetTree(
            tree=trees[tid],
            fragments=frozenset(frags[tid]),
            assembly=frozenset(assembly[tid]),
        )
        for tid in topics
    }
    return KnowledgeForest(topics=topics, mfts=mfts, dependencies=dependencies)


def from_json(text: str) -> KnowledgeForest:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{exc.lineno}:{exc.colno}", exc.msg) from exc
    return forest_from_json_obj(data)
