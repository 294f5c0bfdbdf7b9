"""HotpotQA parsing and the binary checkpoint / graph cache formats.

All multi-byte integers are little-endian. Strings are a u32 byte length
followed by UTF-8 bytes.
"""

from __future__ import annotations

import io
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Any, BinaryIO

import numpy as np

from .numcore import ModelParams, Parameter

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DGN1"
CHECKPOINT_VERSION = 1
GRAPH_MAGIC = b"DGG1"
GRAPH_VERSION = 1


class DatasetFormatError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class SpExample:
    id: str
    question: str
    paragraphs: list[tuple[str, list[str]]]
    gold_facts: list[tuple[str, int]]
    metadata: dict[str, Any] = field(default_factory=dict)
    dropped_facts: int = 0

    @property
    def gold(self) -> set[tuple[str, int]]:
        return set(self.gold_facts)

    @property
    def titles(self) -> list[str]:
        return [t for t, _ in self.paragraphs]

    def sentence_keys(self) -> list[tuple[str, int]]:
        return [(t, i) for t, sents in self.paragraphs for i in range(len(sents))]

    @property
    def num_sentences(self) -> int:
        return sum(len(s) for _, s in self.paragraphs)


def _unique_titles(titles):
    seen: dict[str, int] = {}
    out = []
    for t in titles:
        if t in seen:
            seen[t] += 1
            new = f"{t} #{seen[t]}"
            log.warning("duplicate paragraph title %r renamed to %r", t, new)
            out.append(new)
        else:
            seen[t] = 1
            out.append(t)
    return out


def _example_from_json(idx: int, obj) -> SpExample:
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"element {idx}: expected an object")
    for key in ("_id", "question", "answer", "supporting_facts", "context"):
        if key not in obj:
            raise DatasetFormatError(f"element {idx}: missing field {key!r}")
    context = obj["context"]
    if not isinstance(context, list):
        raise DatasetFormatError(f"element {idx}: context must be an array")
    paragraphs = []
    for p in context:
        if not (isinstance(p, list) and len(p) == 2 and isinstance(p[0], str) and isinstance(p[1], list)):
            raise DatasetFormatError(f"element {idx}: malformed context entry {p!r:.80}")
        paragraphs.append((p[0], [str(s) for s in p[1]]))
    titles = _unique_titles([t for t, _ in paragraphs])
    paragraphs = [(t, sents) for t, (_, sents) in zip(titles, paragraphs)]
    lengths = dict((t, len(s)) for t, s in reversed(paragraphs))

    gold, dropped = [], 0
    for fact in obj["supporting_facts"]:
        if not (isinstance(fact, list) and len(fact) == 2):
            raise DatasetFormatError(f"element {idx}: malformed supporting fact {fact!r}")
        title, sent = fact
        if isinstance(sent, bool) or not isinstance(sent, int):
            raise DatasetFormatError(f"element {idx}: non-integer sentence index {sent!r}")
        if title not in lengths or not 0 <= sent < lengths[title]:
            dropped += 1
            continue
        if (title, sent) not in gold:
            gold.append((title, sent))
    if dropped:
        log.warning("example %s: dropped %d supporting fact(s) that point outside the context", obj["_id"], dropped)
    metadata = {k: obj[k] for k in ("answer", "type", "level") if k in obj}
    return SpExample(str(obj["_id"]), obj["question"], paragraphs, gold, metadata, dropped)


def parse_dataset(source: BinaryIO | str | os.PathLike) -> list[SpExample]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return parse_dataset(fh)
    try:
        data = json.load(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(data, list):
        raise DatasetFormatError("top level must be a JSON array")
    return [_example_from_json(i, obj) for i, obj in enumerate(data)]


def example_to_json(ex: SpExample) -> dict:
    obj = {
        "_id": ex.id,
        "question": ex.question,
        "supporting_facts": [[t, i] for t, i in ex.gold_facts],
        "context": [[t, list(s)] for t, s in ex.paragraphs],
    }
    obj.update(ex.metadata)
    obj.setdefault("answer", "")
    return obj


def serialize_dataset(examples: list[SpExample]) -> bytes:
    return json.dumps([example_to_json(e) for e in examples], ensure_ascii=False).encode("utf-8")


def write_atomic(path: str | os.PathLike, payload: bytes):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- low-level binary helpers --------------------------------------------------


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = memoryview(payload)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated stream")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("invalid UTF-8 string") from None

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes")


def _string(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _read_all(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


# -- checkpoints ---------------------------------------------------------------
#
# magic "DGN1" | version u32 | precision bits u32 (32|64) | seed u64
# | tensor count u32 | per tensor: name, rank u32, dims u32..., payload
# | config JSON (sorted keys) as a string


def save_checkpoint(params: ModelParams, config: dict, seed: int) -> bytes:
    dtype = np.dtype(params.dtype)
    bits = dtype.itemsize * 8
    if bits not in (32, 64):
        raise ValueError(f"unsupported parameter dtype {dtype}")
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<IIQI", CHECKPOINT_VERSION, bits, seed, len(params)))
    names = set()
    for name, p in params.items():
        if name in names:
            raise ValueError(f"duplicate parameter name {name!r}")
        names.add(name)
        if p.dtype != dtype:
            raise ValueError(f"parameter {name!r} is {p.dtype}, expected {dtype}")
        out.write(_string(name))
        out.write(struct.pack("<I", p.data.ndim))
        out.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        out.write(np.ascontiguousarray(p.data, dtype=dtype.newbyteorder("<")).tobytes())
    out.write(_string(json.dumps(config, sort_keys=True)))
    return out.getvalue()


def load_checkpoint(source) -> tuple[ModelParams, dict, int]:
    r = _Reader(_read_all(source))
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    bits = r.u32()
    if bits not in (32, 64):
        raise FormatError(f"bad precision field {bits}")
    dtype = np.dtype(np.float32 if bits == 32 else np.float64).newbyteorder("<")
    seed = r.u64()
    params = ModelParams()
    for _ in range(r.u32()):
        name = r.string()
        rank = r.u32()
        if rank not in (1, 2):
            raise FormatError(f"tensor {name!r}: bad rank {rank}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims))
        arr = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(dims)
        try:
            params.add(Parameter(name, arr, dtype=dtype.newbyteorder("=")))
        except ValueError as exc:
            raise FormatError(str(exc)) from None
    try:
        config = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad config block: {exc}") from None
    r.done()
    return params, config, seed


# -- graph cache ---------------------------------------------------------------
#
# magic "DGG1" | version u32 | example id | node count u32
# | per node: kind u8 (0 document, 1 sentence), title, sentence index i32
#   (-1 for documents), text, feature token count u32, tokens...
# | edge count u32 | per edge: a u32, b u32, type u8 (0 sentence_document, 1 document_document)


def cache_graph(graph) -> bytes:
    from .graph_builder import EDGE_TYPES, DocumentNode

    out = io.BytesIO()
    out.write(GRAPH_MAGIC)
    out.write(struct.pack("<I", GRAPH_VERSION))
    out.write(_string(graph.example_id))
    out.write(struct.pack("<I", len(graph.nodes)))
    for node in graph.nodes:
        is_doc = isinstance(node, DocumentNode)
        out.write(struct.pack("<B", 0 if is_doc else 1))
        out.write(_string(node.title))
        out.write(struct.pack("<i", -1 if is_doc else node.sentence_index))
        out.write(_string("" if is_doc else node.text))
        feats = node.tokens if is_doc else ()
        out.write(struct.pack("<I", len(feats)))
        for tok in feats:
            out.write(_string(tok))
    out.write(struct.pack("<I", len(graph.edges)))
    for a, b, etype in graph.edges:
        out.write(struct.pack("<IIB", a, b, EDGE_TYPES.index(etype)))
    return out.getvalue()


def load_graph(source):
    from .graph_builder import EDGE_TYPES, DocumentGraph, DocumentNode, SentenceNode

    r = _Reader(_read_all(source))
    if r.take(4) != GRAPH_MAGIC:
        raise FormatError("bad graph cache magic")
    version = r.u32()
    if version != GRAPH_VERSION:
        raise FormatError(f"unsupported graph cache version {version}")
    example_id = r.string()
    nodes = []
    for _ in range(r.u32()):
        kind = r.u8()
        title = r.string()
        sent = r.i32()
        text = r.string()
        tokens = tuple(r.string() for _ in range(r.u32()))
        if kind == 0:
            nodes.append(DocumentNode(title, tokens))
        elif kind == 1:
            nodes.append(SentenceNode(title, sent, text))
        else:
            raise FormatError(f"bad node kind {kind}")
    edges = []
    for _ in range(r.u32()):
        a, b, t = struct.unpack("<IIB", r.take(9))
        if t >= len(EDGE_TYPES) or a >= len(nodes) or b >= len(nodes):
            raise FormatError(f"bad edge ({a}, {b}, {t})")
        edges.append((a, b, EDGE_TYPES[t]))
    r.done()
    return DocumentGraph(nodes, edges, example_id)


def graph_cache_path(cache_dir: str | os.PathLike, example_id: str) -> str:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in example_id)
    return os.path.join(os.fspath(cache_dir), f"{safe}.dgg")
