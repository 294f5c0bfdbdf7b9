"""Training on gold supporting facts and P/R/F1 evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numcore as nc
from .embeddings import EmbeddingTable
from .graph_builder import DocumentGraph, build_graph, induced_subgraph
from .hotpot_io import SpExample
from .model import (EmptyGraphError, EmptyRepresentationError, GraphInputs, ModelConfig, bce_loss,
                    forward_logits, init_params, prepare_inputs)
from .numcore import ModelParams
from .prefilter import rank_and_select

log = logging.getLogger(__name__)


class TrainingDiverged(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    m: int = 5
    k: int = 30
    steps: int = 3
    hidden: int | None = None
    attention_dim: int = 64
    output_hidden: int = 128
    learning_rate: float = 1e-3
    epochs: int = 5
    seed: int = 0
    pos_weight: float = 1.0
    threshold: float = 0.5
    collapse_edge_types: bool = False
    degree_norm: bool = False
    precision: int = 32
    clip_norm: float = 5.0
    remove_stop_words: bool = True
    early_stopping: bool = False
    patience: int = 2

    def __post_init__(self):
        for name in ("m", "k", "steps", "attention_dim", "output_hidden", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.pos_weight <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate, pos_weight and clip_norm must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")

    def model_config(self, dim: int) -> ModelConfig:
        return ModelConfig(dim=dim, hidden=self.hidden, steps=self.steps, attention_dim=self.attention_dim,
                           output_hidden=self.output_hidden, collapse_edge_types=self.collapse_edge_types,
                           degree_norm=self.degree_norm, precision=self.precision,
                           remove_stop_words=self.remove_stop_words)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class SpMetrics:
    precision: float
    recall: float
    f1: float
    em: float
    examples: int
    skipped: int

    def to_json(self) -> dict:
        return asdict(self)


def sp_metrics_single(pred: Iterable, gold: Iterable) -> tuple[float, float, float, float]:
    pred, gold = set(pred), set(gold)
    if not gold:
        raise ValueError("gold set is empty")
    hit = len(pred & gold)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1, float(pred == gold)


def aggregate_metrics(pairs: Iterable[tuple[set, set]]) -> SpMetrics:
    """Macro-average over examples; examples without gold facts are skipped."""
    rows, skipped = [], 0
    for pred, gold in pairs:
        if not gold:
            skipped += 1
            continue
        rows.append(sp_metrics_single(pred, gold))
    if not rows:
        return SpMetrics(0.0, 0.0, 0.0, 0.0, 0, skipped)
    # math.fsum keeps the average independent of example order.
    n = len(rows)
    p, r, f, em = (math.fsum(col) / n for col in zip(*rows))
    return SpMetrics(p, r, f, em, n, skipped)


def make_training_graph(example: SpExample, table: EmbeddingTable, config: TrainConfig,
                        training: bool = True, graph: DocumentGraph | None = None) -> DocumentGraph:
    """Induced graph on the top-k sentences, plus every gold sentence when training."""
    graph = graph if graph is not None else build_graph(example)
    kept = set(rank_and_select(example, graph, table, config.m, config.k, config.remove_stop_words))
    if training:
        kept |= example.gold
    return induced_subgraph(graph, kept)


@dataclass
class PreparedExample:
    example: SpExample
    inputs: GraphInputs
    labels: np.ndarray


def prepare_examples(dataset: Sequence[SpExample], table: EmbeddingTable, config: TrainConfig,
                     training: bool) -> tuple[list[PreparedExample], list[str]]:
    """Numeric inputs per example; returns the examples that could not be encoded too."""
    mc = config.model_config(table.dimension)
    prepared, rejected = [], []
    for ex in dataset:
        try:
            graph = make_training_graph(ex, table, config, training)
            inputs = prepare_inputs(graph, ex.question, table, mc)
        except (EmptyGraphError, EmptyRepresentationError) as exc:
            log.warning("example %s skipped: %s", ex.id, exc)
            rejected.append(ex.id)
            continue
        gold = ex.gold
        labels = np.array([key in gold for key in inputs.sentence_keys], dtype=np.float64)
        prepared.append(PreparedExample(ex, inputs, labels))
    return prepared, rejected


class Adam:
    def __init__(self, params: ModelParams, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad.astype(p.dtype, copy=False)
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    norm = math.sqrt(math.fsum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad = p.grad * p.dtype.type(factor)
    return norm


def predict_probabilities(prepared: PreparedExample, params: ModelParams, mc: ModelConfig) -> dict:
    probs = nc.sigmoid(forward_logits(prepared.inputs, params, mc)).data[:, 0]
    return dict(zip(prepared.inputs.sentence_keys, probs.tolist()))


def _metrics_for(prepared: Sequence[PreparedExample], params, mc, threshold, rejected_gold=()) -> SpMetrics:
    pairs = []
    for pe in prepared:
        probs = predict_probabilities(pe, params, mc)
        pairs.append(({k for k, p in probs.items() if p > threshold}, pe.example.gold))
    pairs.extend((set(), gold) for gold in rejected_gold)
    return aggregate_metrics(pairs)


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    config: TrainConfig
    skipped: list[str]


def train(dataset: Sequence[SpExample], table: EmbeddingTable, config: TrainConfig,
          dev: Sequence[SpExample] | None = None, eval_train: bool = False,
          on_epoch: Callable[[dict], bool] | None = None) -> TrainResult:
    """Minimise weighted binary cross-entropy over sentence nodes, one graph per step.

    ``on_epoch`` receives each epoch record and may return True to stop early.
    """
    if not dataset:
        raise ValueError("empty training set")
    mc = config.model_config(table.dimension)
    prepared, skipped = prepare_examples(dataset, table, config, training=True)
    if not prepared:
        raise ValueError("no usable training examples")
    dev_prepared = prepare_examples(dev, table, config, training=False)[0] if dev else None
    eval_prepared = prepare_examples(dataset, table, config, training=False)[0] if eval_train else None

    params = init_params(mc, config.seed)
    opt = Adam(params, config.learning_rate)
    order_rng = np.random.default_rng([config.seed, 1])
    history: list[dict] = []
    best_f1, bad_epochs, best_state = -1.0, 0, None
    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in order_rng.permutation(len(prepared)):
            pe = prepared[idx]
            loss = bce_loss(forward_logits(pe.inputs, params, mc), pe.labels, config.pos_weight)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss on example {pe.example.id!r} in epoch {epoch}")
            nc.backward(loss, params)
            clip_gradients(params, config.clip_norm)
            opt.step()
            losses.append(value)
        record = {"epoch": epoch, "mean_loss": math.fsum(losses) / len(losses)}
        if eval_prepared is not None:
            record["train_f1"] = _metrics_for(eval_prepared, params, mc, config.threshold).f1
        if dev_prepared is not None:
            record["dev_f1"] = _metrics_for(dev_prepared, params, mc, config.threshold).f1
        history.append(record)
        log.info("epoch %d: %s", epoch, record)
        if config.early_stopping and dev_prepared is not None:
            if record["dev_f1"] > best_f1:
                best_f1, bad_epochs = record["dev_f1"], 0
                best_state = {p.name: p.data.copy() for p in params}
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break
        if on_epoch is not None and on_epoch(record):
            break
    if best_state is not None:
        for p in params:
            p.data[...] = best_state[p.name]
    return TrainResult(params, history, config, skipped)


def score_dataset(params: ModelParams, dataset: Sequence[SpExample], table: EmbeddingTable,
                  config: TrainConfig) -> list[tuple[SpExample, dict]]:
    """Per-example sentence probabilities on the eval-mode (pure top-k) graph.

    Examples that cannot be encoded get an empty probability map.
    """
    mc = config.model_config(table.dimension)
    prepared, _ = prepare_examples(dataset, table, config, training=False)
    probs = {pe.example.id: predict_probabilities(pe, params, mc) for pe in prepared}
    return [(ex, probs.get(ex.id, {})) for ex in dataset]


def evaluate(params: ModelParams, dataset: Sequence[SpExample], table: EmbeddingTable,
             config: TrainConfig) -> SpMetrics:
    scored = score_dataset(params, dataset, table, config)
    return aggregate_metrics(({k for k, p in probs.items() if p > config.threshold}, ex.gold)
                             for ex, probs in scored)


def predict(params: ModelParams, example: SpExample, table: EmbeddingTable,
            config: TrainConfig, above_threshold: bool = True) -> list[tuple[tuple[str, int], float]]:
    """Candidate sentence keys, most probable first (only those over the threshold by default)."""
    mc = config.model_config(table.dimension)
    prepared, rejected = prepare_examples([example], table, config, training=False)
    if rejected:
        return []
    probs = predict_probabilities(prepared[0], params, mc)
    order = {k: i for i, k in enumerate(example.sentence_keys())}
    ranked = sorted(probs.items(), key=lambda kv: (-kv[1], order[kv[0]]))
    return [(k, p) for k, p in ranked if p > config.threshold or not above_threshold]
