"""Seeded HotpotQA-shaped corpora with matching random word vectors.

Each example has ``paragraphs`` Wikipedia-style paragraphs titled by invented
entities. A bridge paragraph mentions the second gold paragraph's title, the
question reuses content words of both gold sentences, and distractor
paragraphs borrow some of the same vocabulary.
"""

from __future__ import annotations

import io
import json

import numpy as np

from .embeddings import EmbeddingTable
from .hotpot_io import SpExample, example_to_json

_SYLLABLES = ["ka", "lo", "mer", "tan", "vi", "sol", "dra", "pe", "nu", "gar", "bel", "ost", "ri", "qua", "zen", "hol"]
_QUALIFIERS = ["band", "film", "novel", "footballer", "album", "river", "city"]
_FILLER = ["the", "of", "and", "is", "was", "a", "in", "by", "for", "with", "to", "on"]
_QUESTION_WORDS = ["what", "which", "who", "when", "where", "how"]


def _word(rng, lo=2, hi=3):
    return "".join(rng.choice(_SYLLABLES) for _ in range(rng.integers(lo, hi + 1)))


def _vocabulary(rng, size):
    words = set()
    while len(words) < size:
        words.add(_word(rng, 2, 4))
    return sorted(words)


def make_corpus(n_examples: int, seed: int = 0, dim: int = 50, paragraphs: int = 10,
                sentences: tuple[int, int] = (3, 5), vocab_size: int = 600, oov_rate: float = 0.02,
                cross_mentions: float = 0.3) -> tuple[list[SpExample], EmbeddingTable]:
    rng = np.random.default_rng(seed)
    content = _vocabulary(rng, vocab_size)
    titles_seen = set()

    def title():
        while True:
            t = f"{_word(rng).capitalize()} {_word(rng).capitalize()}"
            if rng.random() < 0.2:
                t += f" ({rng.choice(_QUALIFIERS)})"
            if t not in titles_seen:
                titles_seen.add(t)
                return t

    def sentence(extra=()):
        n = int(rng.integers(5, 10))
        words = [str(w) for w in rng.choice(content, size=n)]
        words += [str(w) for w in rng.choice(_FILLER, size=3)]
        words += list(extra)
        rng.shuffle(words)
        if rng.random() < oov_rate * 10:
            words.append("zz" + _word(rng))
        text = " ".join(words)
        return text[0].upper() + text[1:] + "."

    examples = []
    for e in range(n_examples):
        titles = [title() for _ in range(paragraphs)]
        paras = []
        for t in titles:
            count = int(rng.integers(sentences[0], sentences[1] + 1))
            paras.append([sentence() for _ in range(count)])
        a, b = rng.choice(paragraphs, size=2, replace=False)
        bridge_name = titles[b].split(" (")[0]
        ia = int(rng.integers(len(paras[a])))
        ib = int(rng.integers(len(paras[b])))
        paras[a][ia] = sentence(extra=[bridge_name])
        qa = [w for w in _content_words(paras[a][ia], content)][:3]
        qb = [w for w in _content_words(paras[b][ib], content)][:2]
        # Distractors echo one question word so the ranking is not trivial.
        for d in rng.choice([i for i in range(paragraphs) if i not in (a, b)], size=2, replace=False):
            j = int(rng.integers(len(paras[d])))
            paras[d][j] = sentence(extra=[qa[0]])
        # Incidental links between arbitrary paragraphs, written with or without the qualifier.
        for d in range(paragraphs):
            if rng.random() < cross_mentions:
                other = int(rng.integers(paragraphs))
                j = int(rng.integers(len(paras[d])))
                if other != d and (d, j) not in ((a, ia), (b, ib)):
                    name = titles[other] if rng.random() < 0.5 else titles[other].split(" (")[0]
                    paras[d][j] = sentence(extra=[name])
        question = f"{rng.choice(_QUESTION_WORDS).capitalize()} is the {' '.join(qa)} of the {' '.join(qb)}?"
        gold = [(titles[a], ia), (titles[b], ib)]
        examples.append(SpExample(f"syn{seed}-{e:05d}", question, list(zip(titles, paras)), gold,
                                  {"answer": "", "type": "bridge", "level": "synthetic"}))

    vocab = sorted({w.lower() for ex in examples for t, ss in ex.paragraphs
                    for s in ss + [t] for w in s.replace(".", " ").replace("(", " ").replace(")", " ").split()
                    if not w.lower().startswith("zz")} | set(content))
    vectors = rng.normal(size=(len(vocab), dim)) / np.sqrt(dim)
    return examples, EmbeddingTable(vocab, vectors)


def _content_words(text, content):
    vocab = set(content)
    return [w for w in text.rstrip(".").lower().split() if w in vocab]


def corpus_json(examples) -> bytes:
    return json.dumps([example_to_json(e) for e in examples]).encode("utf-8")


def table_text(table: EmbeddingTable) -> bytes:
    from .embeddings import dump_embeddings

    buf = io.BytesIO()
    dump_embeddings(table, buf)
    return buf.getvalue()
