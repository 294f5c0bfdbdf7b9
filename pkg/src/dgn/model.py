"""Gated graph network over document graphs, conditioned on the question.

Pipeline per graph:

1. every node's word vectors are scored against the question with a bilinear
   form (max over question words), softmax-normalised within the node, and
   mixed through ``tanh(V W_phi + b_phi)``;
2. a self-attention scorer pools each node's words into one annotation ``x``;
3. ``x`` is zero-padded to the hidden width and updated for ``T`` steps by a
   GRU whose input is the sum of typed, directed neighbour messages;
4. sentence nodes are classified from ``[h ; x]`` by a two-layer network.

All node words are processed as one stacked matrix with a per-row node index,
so a graph costs a fixed number of tensor operations regardless of size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .embeddings import EmbeddingTable, embed, tokenize
from .graph_builder import (DOCUMENT_DOCUMENT, EDGE_TYPES, SENTENCE_DOCUMENT, DocumentGraph,
                            DocumentNode, SentenceNode)
from .numcore import ModelParams, Parameter, Tensor

DIRECTIONS = ("in", "out")
SHARED = "shared"


class EmptyRepresentationError(ValueError):
    pass


class EmptyGraphError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int = 50
    hidden: int | None = None  # defaults to dim
    steps: int = 3
    attention_dim: int = 64
    output_hidden: int = 128
    collapse_edge_types: bool = False
    degree_norm: bool = False
    precision: int = 32
    remove_stop_words: bool = True

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = self.dim
        if self.hidden < self.dim:
            raise ConfigError(f"hidden size {self.hidden} is smaller than annotation size {self.dim}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if min(self.dim, self.attention_dim, self.output_hidden) < 1:
            raise ConfigError("all layer sizes must be positive")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self) -> dict:
        return asdict(self)


def propagation_keys(config: ModelConfig) -> list[str]:
    if config.collapse_edge_types:
        return [SHARED]
    return [f"{t}.{d}" for t in EDGE_TYPES for d in DIRECTIONS]


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn in a fixed order from ``seed``."""
    rng = np.random.default_rng(seed)
    D, H, S, O = config.dim, config.hidden, config.attention_dim, config.output_hidden
    dt = config.dtype
    params = ModelParams()

    def w(name, rows, cols):
        params.add(Parameter(name, _glorot(rng, rows, cols, (rows, cols)), dtype=dt))

    def b(name, size):
        params.add(Parameter(name, np.zeros(size), dtype=dt))

    w("att.W_b", D, D)
    b("att.b_ban", 1)
    w("att.W_phi", D, D)
    b("att.b_phi", D)
    w("att.W_s", D, S)
    b("att.b_s", S)
    w("att.u", S, 1)
    for key in propagation_keys(config):
        w(f"ggnn.P.{key}", H, H)
    b("ggnn.b", H)
    for gate in ("W_z", "U_z", "W_r", "U_r", "W", "U"):
        w(f"ggnn.{gate}", H, H)
    w("out.W1", H + D, O)
    b("out.b1", O)
    w("out.w2", O, 1)
    b("out.b2", 1)
    return params


def check_params(params: ModelParams, config: ModelConfig):
    expected = init_params(config, 0)
    if params.names() != expected.names():
        raise ConfigError(f"parameter set {params.names()} does not match config {expected.names()}")
    for name, p in expected.items():
        if params[name].shape != p.shape:
            raise ConfigError(f"{name}: checkpoint shape {params[name].shape} vs config shape {p.shape}")


# -- graph structure -----------------------------------------------------------


@dataclass
class AdjacencyStructure:
    """Directed message lists per (edge type, direction).

    Sentence-document edges have a natural orientation: ``out`` carries
    sentence -> document, ``in`` carries document -> sentence. Document-document
    edges have none, so both orientations populate both lists. Either way the
    ``in`` list is the transpose of the ``out`` list.
    """

    num_nodes: int
    lists: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def from_graph(cls, graph: DocumentGraph) -> "AdjacencyStructure":
        pairs: dict[tuple[str, str], list[tuple[int, int]]] = {
            (t, d): [] for t in EDGE_TYPES for d in DIRECTIONS}
        for a, b, t in graph.edges:
            if t == SENTENCE_DOCUMENT:
                s, d = (a, b) if isinstance(graph.nodes[a], SentenceNode) else (b, a)
                pairs[(t, "out")].append((s, d))
                pairs[(t, "in")].append((d, s))
            else:
                for d in DIRECTIONS:
                    pairs[(t, d)].extend([(a, b), (b, a)])
        return cls.from_pairs(len(graph.nodes), pairs)

    @classmethod
    def from_pairs(cls, num_nodes: int, pairs) -> "AdjacencyStructure":
        lists = {}
        for key, items in pairs.items():
            arr = np.array(sorted(items), dtype=np.int64).reshape(-1, 2)
            lists[key] = (arr[:, 0], arr[:, 1])
        return cls(num_nodes, lists)

    def dense(self) -> np.ndarray:
        """The |V| x 2|E||V| matrix: block (type, dir) holds A[dst, src] = 1."""
        n = self.num_nodes
        blocks = []
        for t in EDGE_TYPES:
            for d in DIRECTIONS:
                m = np.zeros((n, n))
                src, dst = self.lists.get((t, d), (np.zeros(0, int), np.zeros(0, int)))
                m[dst, src] = 1.0
                blocks.append(m)
        return np.concatenate(blocks, axis=1)

    def message_groups(self, collapse: bool = False) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(parameter key, src, dst) triples; collapsing merges every directed pair once."""
        if not collapse:
            return [(f"{t}.{d}", *self.lists[(t, d)]) for t in EDGE_TYPES for d in DIRECTIONS
                    if (t, d) in self.lists]
        pairs = sorted({(int(s), int(d)) for src, dst in self.lists.values() for s, d in zip(src, dst)})
        arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        return [(SHARED, arr[:, 0], arr[:, 1])]

    def in_degree(self, collapse: bool = False) -> np.ndarray:
        deg = np.zeros(self.num_nodes)
        for _, _, dst in self.message_groups(collapse):
            np.add.at(deg, dst, 1.0)
        return deg


@dataclass
class GraphInputs:
    """Numeric inputs of one (graph, question) pair, ready for the network."""

    question: np.ndarray
    words: np.ndarray
    word_node: np.ndarray
    num_nodes: int
    adjacency: AdjacencyStructure
    sentence_ids: np.ndarray
    sentence_keys: list[tuple[str, int]]
    empty_nodes: list[int]
    is_sentence: np.ndarray


def node_tokens(node, remove_stop_words: bool = True) -> list[str]:
    if isinstance(node, DocumentNode):
        return list(node.tokens)
    return tokenize(node.text, remove_stop_words=remove_stop_words)


def prepare_inputs(graph: DocumentGraph, question: str, table: EmbeddingTable,
                   config: ModelConfig) -> GraphInputs:
    if graph.is_empty:
        raise EmptyGraphError(f"graph {graph.example_id!r} is empty")
    sentence_ids = graph.sentence_ids()
    if not sentence_ids:
        raise EmptyGraphError(f"graph {graph.example_id!r} has no sentence nodes")
    if table.dimension != config.dim:
        raise ConfigError(f"embedding dimension {table.dimension} does not match model dimension {config.dim}")
    q, _ = embed(tokenize(question, remove_stop_words=config.remove_stop_words), table)
    if not len(q):
        raise EmptyRepresentationError(f"question of {graph.example_id!r} has no in-vocabulary tokens")
    rows, owner, empty = [], [], []
    for i, node in enumerate(graph.nodes):
        v, _ = embed(node_tokens(node, config.remove_stop_words), table)
        if not len(v):
            v = np.zeros((1, table.dimension), dtype=table.vectors.dtype)
            empty.append(i)
        rows.append(v)
        owner.extend([i] * len(v))
    dt = config.dtype
    return GraphInputs(
        question=q.astype(dt),
        words=np.concatenate(rows).astype(dt),
        word_node=np.array(owner, dtype=np.int64),
        num_nodes=len(graph.nodes),
        adjacency=AdjacencyStructure.from_graph(graph),
        sentence_ids=np.array(sentence_ids, dtype=np.int64),
        sentence_keys=[graph.nodes[i].key for i in sentence_ids],
        empty_nodes=empty,
        is_sentence=np.array([isinstance(n, SentenceNode) for n in graph.nodes]),
    )


# -- network pieces ------------------------------------------------------------


def condition_on_question(V, Q, params: ModelParams, word_node=None, num_nodes: int = 1):
    """Question-conditioned word vectors and their attention weights.

    Scores are ``V W_b Q^T + b`` reduced by max over question words; the
    weights are a softmax over each node's own words.
    """
    V, Q = nc.as_tensor(V, params.dtype), nc.as_tensor(Q, params.dtype)
    if V.shape[0] == 0 or Q.shape[0] == 0:
        raise EmptyRepresentationError("empty node or question representation")
    if word_node is None:
        word_node = np.zeros(V.shape[0], dtype=np.int64)
    scores = nc.add(nc.matmul(nc.matmul(V, params["att.W_b"]), nc.transpose(Q)), params["att.b_ban"])
    alpha = nc.segment_softmax(nc.row_max(scores), word_node, num_nodes)
    mixed = nc.tanh(nc.add(nc.matmul(V, params["att.W_phi"]), params["att.b_phi"]))
    return nc.mul(alpha, mixed), alpha


def pool_to_annotation(V_hat, params: ModelParams, word_node=None, num_nodes: int = 1):
    """Self-attention pooling of each node's words into one annotation row."""
    V_hat = nc.as_tensor(V_hat, params.dtype)
    if word_node is None:
        word_node = np.zeros(V_hat.shape[0], dtype=np.int64)
    hidden = nc.tanh(nc.add(nc.matmul(V_hat, params["att.W_s"]), params["att.b_s"]))
    delta = nc.segment_softmax(nc.matmul(hidden, params["att.u"]), word_node, num_nodes)
    return nc.segment_sum(nc.mul(delta, V_hat), word_node, num_nodes), delta


def init_hidden(x, hidden: int) -> Tensor:
    """Zero-extend annotations (n x D) to the hidden width (n x H)."""
    x = nc.as_tensor(x)
    n, d = x.shape
    if hidden < d:
        raise ConfigError(f"hidden size {hidden} smaller than annotation size {d}")
    if hidden == d:
        return x
    return nc.concat_cols([x, nc.Tensor(np.zeros((n, hidden - d), dtype=x.dtype))])


def aggregate(h: Tensor, adjacency: AdjacencyStructure, params: ModelParams, config: ModelConfig) -> Tensor:
    """Bias plus the sum over edge types and directions of transformed neighbour states."""
    n = adjacency.num_nodes
    total = None
    for key, src, dst in adjacency.message_groups(config.collapse_edge_types):
        if not len(src):
            continue
        msg = nc.segment_sum(nc.matmul(nc.gather_rows(h, src), params["ggnn.P." + key]), dst, n)
        total = msg if total is None else nc.add(total, msg)
    if total is None:
        total = nc.Tensor(np.zeros((n, h.shape[1]), dtype=h.dtype))
    elif config.degree_norm:
        deg = adjacency.in_degree(collapse=config.collapse_edge_types)
        total = nc.mul(total, nc.Tensor((1.0 / np.maximum(deg, 1.0))[:, None].astype(h.dtype)))
    return nc.add(total, params["ggnn.b"])


def gru_step(a: Tensor, h: Tensor, params: ModelParams) -> Tensor:
    z = nc.sigmoid(nc.add(nc.matmul(a, params["ggnn.W_z"]), nc.matmul(h, params["ggnn.U_z"])))
    r = nc.sigmoid(nc.add(nc.matmul(a, params["ggnn.W_r"]), nc.matmul(h, params["ggnn.U_r"])))
    cand = nc.tanh(nc.add(nc.matmul(a, params["ggnn.W"]), nc.matmul(nc.mul(r, h), params["ggnn.U"])))
    return nc.add(nc.mul(nc.one_minus(z), h), nc.mul(z, cand))


def propagate(h, adjacency: AdjacencyStructure, params: ModelParams, config: ModelConfig) -> Tensor:
    """Run ``config.steps`` message-passing updates; returns the final states."""
    h = nc.as_tensor(h, params.dtype)
    if h.shape[0] != adjacency.num_nodes:
        raise ValueError(f"{h.shape[0]} hidden states for {adjacency.num_nodes} nodes")
    for _ in range(config.steps):
        h = gru_step(aggregate(h, adjacency, params, config), h, params)
    return h


def classify_logits(h_final, x, params: ModelParams, node_ids, is_sentence=None) -> Tensor:
    """Output-network logits for the given nodes, which must all be sentences."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    if is_sentence is not None and not np.all(np.asarray(is_sentence)[node_ids]):
        raise ValueError("only sentence nodes can be classified")
    inp = nc.concat_cols([nc.gather_rows(nc.as_tensor(h_final), node_ids), nc.gather_rows(nc.as_tensor(x), node_ids)])
    hidden = nc.tanh(nc.add(nc.matmul(inp, params["out.W1"]), params["out.b1"]))
    return nc.add(nc.matmul(hidden, params["out.w2"]), params["out.b2"])


def classify(h_final, x, params: ModelParams, node_ids, is_sentence=None) -> np.ndarray:
    return nc.sigmoid(classify_logits(h_final, x, params, node_ids, is_sentence)).data[:, 0]


def forward_logits(inputs: GraphInputs, params: ModelParams, config: ModelConfig,
                   trace: dict | None = None) -> Tensor:
    """Sentence logits (n_sentences x 1), in ``inputs.sentence_keys`` order."""
    n = inputs.num_nodes
    V_hat, alpha = condition_on_question(inputs.words, inputs.question, params, inputs.word_node, n)
    x, delta = pool_to_annotation(V_hat, params, inputs.word_node, n)
    h0 = init_hidden(x, config.hidden)
    h = propagate(h0, inputs.adjacency, params, config)
    if trace is not None:
        trace.update(alpha=alpha.data[:, 0], delta=delta.data[:, 0], word_node=inputs.word_node,
                     x=x.data, h_initial=h0.data, h_final=h.data)
    return classify_logits(h, x, params, inputs.sentence_ids, inputs.is_sentence)


def forward(graph: DocumentGraph, question: str, table: EmbeddingTable, params: ModelParams,
            config: ModelConfig, trace: dict | None = None) -> dict[tuple[str, int], float]:
    """Supporting-fact probability for every sentence node of ``graph``."""
    inputs = prepare_inputs(graph, question, table, config)
    probs = nc.sigmoid(forward_logits(inputs, params, config, trace)).data[:, 0]
    return {key: float(p) for key, p in zip(inputs.sentence_keys, probs)}


def bce_loss(logits: Tensor, labels: Sequence[float], pos_weight: float = 1.0) -> Tensor:
    """Weighted binary cross-entropy averaged over sentences, computed from logits."""
    y = np.asarray(labels, dtype=logits.dtype).reshape(-1, 1)
    if y.shape != logits.shape:
        raise nc.ShapeError(f"{y.shape[0]} labels for logits of shape {logits.shape}")
    pos = nc.mul(nc.log_sigmoid(logits), nc.Tensor(pos_weight * y))
    neg = nc.mul(nc.log_sigmoid(nc.scale(logits, -1.0)), nc.Tensor(1 - y))
    return nc.scale(nc.sum_all(nc.add(pos, neg)), -1.0 / y.shape[0])
