"""Document graphs: sentence and document nodes joined by typed undirected edges."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .embeddings import default_stop_words, normalize, tokenize
from .hotpot_io import SpExample

log = logging.getLogger(__name__)

SENTENCE_DOCUMENT = "sentence_document"
DOCUMENT_DOCUMENT = "document_document"
EDGE_TYPES = (SENTENCE_DOCUMENT, DOCUMENT_DOCUMENT)

_PARENTHETICAL = re.compile(r"\s*\([^()]*\)\s*$")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class DocumentNode:
    title: str
    tokens: tuple[str, ...] = ()


@dataclass(frozen=True)
class SentenceNode:
    title: str
    sentence_index: int
    text: str

    @property
    def key(self) -> tuple[str, int]:
        return (self.title, self.sentence_index)


@dataclass
class DocumentGraph:
    nodes: list
    edges: list[tuple[int, int, str]]
    example_id: str = ""
    warnings: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.nodes)

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    def sentence_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if isinstance(n, SentenceNode)]

    def document_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if isinstance(n, DocumentNode)]

    def sentence_keys(self) -> list[tuple[str, int]]:
        return [n.key for n in self.nodes if isinstance(n, SentenceNode)]

    def edges_of_type(self, edge_type: str) -> list[tuple[int, int]]:
        return [(a, b) for a, b, t in self.edges if t == edge_type]

    def document_pairs(self) -> set[frozenset]:
        """document_document edges as unordered title pairs."""
        return {frozenset((self.nodes[a].title, self.nodes[b].title))
                for a, b in self.edges_of_type(DOCUMENT_DOCUMENT)}

    def canonical(self):
        """A node-order independent description, for isomorphism checks."""

        def node_key(n):
            if isinstance(n, DocumentNode):
                return (n.title, -1, "", n.tokens)
            return (n.title, n.sentence_index, n.text, ())

        keys = [node_key(n) for n in self.nodes]
        edges = sorted(tuple(sorted((keys[a], keys[b]))) + (t,) for a, b, t in self.edges)
        return sorted(keys), edges

    def validate(self):
        n = len(self.nodes)
        seen = set()
        owner_edges = {i: 0 for i in self.sentence_ids()}
        for a, b, t in self.edges:
            if t not in EDGE_TYPES:
                raise GraphError(f"unknown edge type {t!r}")
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) out of range")
            if a == b:
                raise GraphError(f"self-loop on node {a}")
            if a > b:
                raise GraphError(f"edge ({a}, {b}) not stored as (min, max)")
            if (a, b, t) in seen:
                raise GraphError(f"duplicate edge ({a}, {b}, {t})")
            seen.add((a, b, t))
            na, nb = self.nodes[a], self.nodes[b]
            if t == SENTENCE_DOCUMENT:
                sent, doc = (na, nb) if isinstance(na, SentenceNode) else (nb, na)
                sid = a if isinstance(na, SentenceNode) else b
                if not (isinstance(sent, SentenceNode) and isinstance(doc, DocumentNode)):
                    raise GraphError(f"sentence_document edge ({a}, {b}) joins the wrong node kinds")
                if sent.title != doc.title:
                    raise GraphError(f"sentence {sent.key} attached to foreign document {doc.title!r}")
                owner_edges[sid] += 1
            elif not (isinstance(na, DocumentNode) and isinstance(nb, DocumentNode)):
                raise GraphError(f"document_document edge ({a}, {b}) touches a sentence")
        bad = [i for i, c in owner_edges.items() if c != 1]
        if bad:
            raise GraphError(f"sentences without exactly one document edge: {bad[:5]}")


def base_title(title: str) -> str:
    """Normalized title with a trailing parenthetical disambiguator removed.

    >>> base_title("Kiss (band)")
    'kiss'
    """
    return normalize(_PARENTHETICAL.sub("", title))


def _linkable(base: str, stop_words) -> bool:
    return sum(len(t) for t in base.split() if t not in stop_words) >= 2


def mentions(title: str, text: str, stop_words=None) -> bool:
    """Whether ``title`` (reduced to its base form) occurs as whole words in ``text``."""
    stops = default_stop_words() if stop_words is None else stop_words
    base = base_title(title)
    if not base or not _linkable(base, stops):
        return False
    return f" {base} " in f" {normalize(text)} "


class TitleMentionLinker:
    """Links two documents when either one's base title appears in the other's text.

    Stands in for coreference-based entity linking; any callable with the same
    signature can be passed to :func:`build_graph` instead.
    """

    def __init__(self, stop_words=None):
        self.stop_words = default_stop_words() if stop_words is None else stop_words

    def __call__(self, docs: Sequence[tuple[str, str]]) -> set[frozenset]:
        return link_documents(docs, self.stop_words)


def _dedupe_titles(titles: Iterable[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for t in titles:
        if t in seen:
            seen[t] += 1
            out.append(f"{t} #{seen[t]}")
            log.warning("duplicate title %r renamed to %r", t, out[-1])
        else:
            seen[t] = 1
            out.append(t)
    return out


def link_documents(docs: Sequence[tuple[str, str]], stop_words=None) -> set[frozenset]:
    stops = default_stop_words() if stop_words is None else stop_words
    titles = _dedupe_titles(t for t, _ in docs)
    padded = [f" {normalize(text)} " for _, text in docs]
    bases = [base_title(t) for t in titles]
    usable = [bool(b) and _linkable(b, stops) for b in bases]
    pairs = set()
    for i in range(len(docs)):
        for j in range(len(docs)):
            if i != j and usable[i] and f" {bases[i]} " in padded[j]:
                pairs.add(frozenset((titles[i], titles[j])))
    return pairs


def _feature_tokens(title: str, mentioned: Iterable[str]) -> tuple[str, ...]:
    out: list[str] = []
    for t in [title] + sorted(mentioned, key=base_title):
        for tok in tokenize(_PARENTHETICAL.sub("", t)):
            if tok not in out:
                out.append(tok)
    return tuple(out)


def build_graph(example: SpExample, linker: Callable | None = None) -> DocumentGraph:
    if not example.paragraphs:
        raise GraphError(f"example {example.id!r} has no paragraphs")
    linker = linker or TitleMentionLinker()
    docs = [(title, " ".join(sents)) for title, sents in example.paragraphs]
    pairs = linker(docs)

    mentioned: dict[str, list[str]] = {t: [] for t, _ in docs}
    for title, text in docs:
        for other, _ in docs:
            if other != title and frozenset((title, other)) in pairs and mentions(other, text):
                mentioned[title].append(other)

    nodes: list = []
    edges: list[tuple[int, int, str]] = []
    doc_ids: dict[str, int] = {}
    warnings = 0
    for title, sents in example.paragraphs:
        doc_id = len(nodes)
        doc_ids[title] = doc_id
        nodes.append(DocumentNode(title, _feature_tokens(title, mentioned[title])))
        if not sents:
            warnings += 1
            log.warning("example %s: paragraph %r has no sentences", example.id, title)
        for i, s in enumerate(sents):
            edges.append((doc_id, len(nodes), SENTENCE_DOCUMENT))
            nodes.append(SentenceNode(title, i, s))
    for pair in pairs:
        a, b = sorted(doc_ids[t] for t in pair)
        edges.append((a, b, DOCUMENT_DOCUMENT))
    edges.sort(key=lambda e: (EDGE_TYPES.index(e[2]), e[0], e[1]))
    return DocumentGraph(nodes, edges, example.id, warnings)


def induced_subgraph(graph: DocumentGraph, kept_sentences: Iterable[tuple[str, int]]) -> DocumentGraph:
    """The subgraph on the kept sentences and the documents that own them."""
    kept = set(kept_sentences)
    present = set(graph.sentence_keys())
    missing = kept - present
    if missing:
        raise GraphError(f"kept sentences not in graph: {sorted(missing)[:5]}")
    owners = {title for title, _ in kept}
    old_ids = [i for i, n in enumerate(graph.nodes)
               if (isinstance(n, SentenceNode) and n.key in kept)
               or (isinstance(n, DocumentNode) and n.title in owners)]
    remap = {old: new for new, old in enumerate(old_ids)}
    edges = [(remap[a], remap[b], t) for a, b, t in graph.edges if a in remap and b in remap]
    return DocumentGraph([graph.nodes[i] for i in old_ids], edges, graph.example_id)


def permute_nodes(graph: DocumentGraph, order: Sequence[int]) -> DocumentGraph:
    """The same graph with node ``order[i]`` moved to position ``i``."""
    if sorted(order) != list(range(len(graph.nodes))):
        raise ValueError("order must be a permutation of the node ids")
    new_id = {old: new for new, old in enumerate(order)}
    edges = []
    for a, b, t in graph.edges:
        x, y = sorted((new_id[a], new_id[b]))
        edges.append((x, y, t))
    edges.sort(key=lambda e: (EDGE_TYPES.index(e[2]), e[0], e[1]))
    return DocumentGraph([graph.nodes[i] for i in order], edges, graph.example_id)
