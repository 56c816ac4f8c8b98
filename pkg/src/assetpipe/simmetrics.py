"""String similarity and ranking kernel.

Token-level metrics (jaccard, dice, cosine_tokens, bm25) share one tokenizer:
lowercase, punctuation replaced by spaces, whitespace split. Character-level
metrics (levenshtein_norm, partial_ratio) work on the raw characters;
partial_ratio lowercases first.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein

_PUNCT = re.compile(r"[^\w\s]+")
_WORD = re.compile(r"\w+")


def word_tokens(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def levenshtein_norm(a: str, b: str) -> float:
    """1 - edit_distance / max(len) ; two empty strings score 1.0."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    # one division keeps hand-checkable ratios such as 2/3 exact
    return (longest - Levenshtein.distance(a, b)) / longest


def jaccard(a: str, b: str) -> float:
    sa, sb = set(word_tokens(a)), set(word_tokens(b))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def dice(a: str, b: str) -> float:
    sa, sb = set(word_tokens(a)), set(word_tokens(b))
    if not sa and not sb:
        return 1.0
    return 2 * len(sa & sb) / (len(sa) + len(sb))


def cosine_tokens(a: str, b: str) -> float:
    ca, cb = Counter(word_tokens(a)), Counter(word_tokens(b))
    if not ca and not cb:
        return 1.0
    if not ca or not cb:
        return 0.0
    dot = sum(n * cb[t] for t, n in ca.items())
    if ca == cb:
        return 1.0
    norm = math.sqrt(sum(n * n for n in ca.values()) * sum(n * n for n in cb.values()))
    return min(1.0, dot / norm)


def partial_ratio(a: str, b: str) -> float:
    """Best levenshtein_norm of the shorter string against equal-length windows
    of the longer one, lowercased.

    This is a fixed-window approximation; it does not search windows of other
    lengths the way optimal local alignment would.
    """
    a, b = a.lower(), b.lower()
    s, t = (a, b) if len(a) <= len(b) else (b, a)
    if not s:
        return 1.0 if not t else 0.0
    if s in t:
        return 1.0
    n = len(s)
    best_dist = n
    for i in range(len(t) - n + 1):
        d = Levenshtein.distance(s, t[i:i + n], score_cutoff=best_dist)
        if d < best_dist:
            best_dist = d
            # 0 is impossible here (substring case returned above)
            if d == 1:
                break
    return (n - best_dist) / n


def tfidf_vectors(corpus: Sequence[str]) -> np.ndarray:
    """Smoothed TF-IDF over lowercased unigrams, rows L2-normalised.

    weight = count * (ln((N + 1) / (df + 1)) + 1). Documents without terms
    stay as zero rows.
    """
    docs = [_WORD.findall(d.lower()) for d in corpus]
    vocab = sorted({t for d in docs for t in d})
    index = {t: i for i, t in enumerate(vocab)}
    n = len(docs)
    mat = np.zeros((n, len(vocab)), dtype=float)
    for row, toks in enumerate(docs):
        for tok, count in Counter(toks).items():
            mat[row, index[tok]] = count
    df = (mat > 0).sum(axis=0)
    idf = np.log((n + 1) / (df + 1)) + 1.0
    mat *= idf
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    np.divide(mat, norms, out=mat, where=norms > 0)
    return mat


@dataclass(frozen=True)
class BM25Config:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass
class RankedList:
    """Candidates sorted by score descending, ties by id ascending."""

    items: list[tuple[Hashable, float]] = field(default_factory=list)

    @classmethod
    def from_scores(cls, scores: Iterable[tuple[Hashable, float]]) -> "RankedList":
        items = sorted(scores, key=lambda it: (-it[1], it[0]))
        for _, s in items:
            if not math.isfinite(s):
                raise ValueError(f"non-finite score {s!r}")
        return cls(items)

    def ids(self, k: int | None = None) -> list:
        items = self.items if k is None else self.items[:k]
        return [cid for cid, _ in items]

    def top(self, k: int) -> "RankedList":
        return RankedList(self.items[:k])

    @property
    def head(self) -> tuple[Hashable, float] | None:
        return self.items[0] if self.items else None

    def __len__(self) -> int:
        return len(self.items)


def bm25_scores(query: str, docs: Sequence[str], config: BM25Config = BM25Config()) -> list[float]:
    """Okapi BM25 with idf = ln((N - df + 0.5) / (df + 0.5) + 1).

    Repeated query terms contribute once per occurrence.
    """
    toks = [word_tokens(d) for d in docs]
    n = len(toks)
    q = word_tokens(query)
    if n == 0:
        return []
    if not q:
        return [0.0] * n
    lengths = [len(t) for t in toks]
    avgdl = sum(lengths) / n
    tfs = [Counter(t) for t in toks]
    df = Counter(term for t in toks for term in set(t))
    k1, b = config.k1, config.b
    scores = []
    for tf, dl in zip(tfs, lengths):
        score = 0.0
        for term in q:
            f = tf.get(term, 0)
            if not f:
                continue
            idf = math.log((n - df[term] + 0.5) / (df[term] + 0.5) + 1.0)
            score += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * dl / avgdl))
        scores.append(score)
    return scores


def bm25_rank(query: str, docs: Sequence[str], config: BM25Config = BM25Config()) -> RankedList:
    return RankedList.from_scores(enumerate(bm25_scores(query, docs, config)))


def hits_at_k(rankings: Sequence[RankedList], truths: Sequence[Hashable], k: int = 5) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(rankings) != len(truths):
        raise ValueError(f"{len(rankings)} rankings but {len(truths)} truths")
    if not rankings:
        raise ValueError("hits_at_k needs at least one ranking")
    hits = sum(1 for r, t in zip(rankings, truths) if t in r.ids(k))
    return hits / len(rankings)


def greedy_matches(
    predicted: Sequence[str],
    truth: Sequence[str],
    scorer: Callable[[str, str], float] = partial_ratio,
    threshold: float = 0.8,
) -> list[tuple[int, int, float]]:
    """One-to-one pairs (pred_idx, truth_idx, score), highest score first."""
    pairs = []
    for i, p in enumerate(predicted):
        for j, t in enumerate(truth):
            s = scorer(p, t)
            if s >= threshold:
                pairs.append((-s, i, j))
    pairs.sort()
    used_p, used_t, out = set(), set(), []
    for neg, i, j in pairs:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        out.append((i, j, -neg))
    return out


def prf(
    predicted: Iterable[str],
    truth: Iterable[str],
    scorer: Callable[[str, str], float] = partial_ratio,
    threshold: float = 0.8,
) -> tuple[float, float, float]:
    """Precision, recall and F1 under greedy one-to-one matching.

    Inputs are treated as sets; an empty side gives 0 for the ratio that
    divides by it.
    """
    pred = sorted(set(predicted))
    gold = sorted(set(truth))
    tp = len(greedy_matches(pred, gold, scorer, threshold))
    precision = tp / len(pred) if pred else 0.0
    recall = tp / len(gold) if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
