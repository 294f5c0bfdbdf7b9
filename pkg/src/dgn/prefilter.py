"""Embedding-similarity ranking of candidate sentences.

A sentence's relevance is the mean of the ``m`` largest cosine similarities
between its words and the question's words. The ``k`` best sentences survive.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable, embed, tokenize
from .hotpot_io import SpExample

log = logging.getLogger(__name__)

EMPTY_SCORE = -2.0
DEFAULT_M = 5
DEFAULT_K = 30


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    mat = mat.astype(np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def score_sentence(question_tokens: Sequence[str], sentence_tokens: Sequence[str],
                   table: EmbeddingTable, m: int = DEFAULT_M) -> float:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    q, _ = embed(question_tokens, table)
    s, _ = embed(sentence_tokens, table)
    if not len(q) or not len(s):
        return EMPTY_SCORE
    return _score_units(_unit_rows(q), _unit_rows(s), m)


def _score_units(q_unit: np.ndarray, s_unit: np.ndarray, m: int) -> float:
    sims = np.clip((s_unit @ q_unit.T).ravel(), -1.0, 1.0)
    top = min(m, sims.size)
    # Sort before averaging so the sum does not depend on token order.
    best = np.sort(np.partition(sims, sims.size - top)[sims.size - top:])
    return float(best.mean())


def score_example(example: SpExample, table: EmbeddingTable, m: int = DEFAULT_M,
                  remove_stop_words: bool = True) -> dict[tuple[str, int], float]:
    q, _ = embed(tokenize(example.question, remove_stop_words=remove_stop_words), table)
    q_unit = _unit_rows(q) if len(q) else None
    scores = {}
    for title, sents in example.paragraphs:
        for i, text in enumerate(sents):
            s, _ = embed(tokenize(text, remove_stop_words=remove_stop_words), table)
            if q_unit is None or not len(s):
                scores[(title, i)] = EMPTY_SCORE
            else:
                scores[(title, i)] = _score_units(q_unit, _unit_rows(s), m)
    return scores


def rank_and_select(example: SpExample, graph, table: EmbeddingTable, m: int = DEFAULT_M,
                    k: int = DEFAULT_K, remove_stop_words: bool = True) -> list[tuple[str, int]]:
    """Top-``k`` sentence keys by score; ties go to earlier paragraphs, then earlier sentences.

    ``graph`` is accepted for interface symmetry and may be None; the
    candidates are the example's sentences.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = score_example(example, table, m, remove_stop_words)
    position = {t: p for p, (t, _) in enumerate(example.paragraphs)}
    ranked = sorted(scores, key=lambda key: (-scores[key], position[key[0]], key[1]))
    return ranked[:k]


@dataclass
class RecallReport:
    k: int
    m: int
    recall: float
    mean_candidates: float
    discard_fraction: float
    skipped_examples: int
    examples: int

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        # 1 - k / mean_candidates: the discard rate implied by the corpus average.
        out["nominal_discard_fraction"] = (
            max(0.0, 1.0 - self.k / self.mean_candidates) if self.mean_candidates else 0.0)
        return out


def _example_stats(args):
    example, table, m, ks, remove_stop_words = args
    total = example.num_sentences
    if not total:
        return total, None
    ranked = rank_and_select(example, None, table, m, max(ks), remove_stop_words)
    gold = example.gold
    recalls = {}
    for k in ks:
        if gold:
            recalls[k] = len(gold & set(ranked[:k])) / len(gold)
    return total, recalls


def eval_recall_sweep(dataset: Sequence[SpExample], table: EmbeddingTable, m: int, ks: Sequence[int],
                      jobs: int = 1, remove_stop_words: bool = True) -> list[RecallReport]:
    """Recall statistics for several ``k`` from a single ranking pass."""
    if not dataset:
        raise ValueError("empty dataset")
    ks = sorted(set(ks))
    tasks = [(ex, table, m, ks, remove_stop_words) for ex in dataset]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            stats = list(pool.map(_example_stats, tasks, chunksize=64))
    else:
        stats = [_example_stats(t) for t in tasks]

    totals = [t for t, _ in stats if t]
    mean_candidates = float(np.mean([t for t, _ in stats])) if stats else 0.0
    reports = []
    for k in ks:
        per_example = [r[k] for _, r in stats if r is not None and k in r]
        skipped = len(stats) - len(per_example)
        recall = float(np.mean(per_example)) if per_example else 0.0
        kept_ratio = float(np.mean([min(k, t) / t for t in totals])) if totals else 1.0
        reports.append(RecallReport(k, m, recall, mean_candidates, 1.0 - kept_ratio, skipped, len(dataset)))
        if skipped:
            log.info("k=%d: %d example(s) without usable gold facts skipped", k, skipped)
    return reports


def eval_recall(dataset: Sequence[SpExample], table: EmbeddingTable, m: int = DEFAULT_M,
                k: int = DEFAULT_K, jobs: int = 1) -> tuple[float, float, float]:
    r = eval_recall_sweep(dataset, table, m, [k], jobs=jobs)[0]
    return r.recall, r.mean_candidates, r.discard_fraction
