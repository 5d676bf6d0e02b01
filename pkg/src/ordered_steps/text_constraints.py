"""Narration-derived step windows.

Each step description is matched against TF-IDF vectors of a sliding word
window over the timed transcript; an ordered single-frame assignment picks
one mention per step, and each mention becomes a segment window around its
timestamp.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConstraintWindows, TaskSpec, stem, stem_tokens, tokenize
from .dp_assign import solve_single_frame

DEFAULT_WINDOW = 5
DEFAULT_HALF_WIDTH = 4.5


@dataclass(frozen=True)
class TimedTranscript:
    words: tuple[tuple[str, float], ...]

    def __post_init__(self):
        words = tuple((str(w).lower(), float(t)) for w, t in self.words)
        times = [t for _, t in words]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("transcript times must be non-decreasing")
        object.__setattr__(self, "words", words)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def tokens(self) -> list[str]:
        return [w for w, _ in self.words]

    @property
    def times(self) -> np.ndarray:
        return np.array([t for _, t in self.words], dtype=np.float64)


def _word_stems(token: str) -> list[str]:
    # a transcript token may carry punctuation or be empty after cleaning
    return [stem(t) for t in tokenize(token)]


def window_bounds(L: int, l: int, window: int) -> tuple[int, int]:
    """Half-open word range of the window centred on word ``l``, clipped to the transcript."""
    lo = l - (window - 1) // 2
    return max(lo, 0), min(lo + window, L)


def tfidf_matrix(docs: Sequence[Sequence[str]], vocab: dict[str, int]) -> np.ndarray:
    """Row-normalised TF-IDF: raw counts times ln((1+N)/(1+df)) + 1."""
    X = np.zeros((len(docs), len(vocab)))
    for i, doc in enumerate(docs):
        for term, n in Counter(doc).items():
            X[i, vocab[term]] = n
    df = (X > 0).sum(axis=0)
    idf = np.log((1.0 + len(docs)) / (1.0 + df)) + 1.0
    X *= idf
    norms = np.linalg.norm(X, axis=1)
    nz = norms > 0
    X[nz] /= norms[nz, None]
    return X


def sliding_tfidf(transcript: TimedTranscript, steps: TaskSpec | Sequence[str], window: int = DEFAULT_WINDOW):
    """Unit-row TF-IDF vectors for every transcript window (U) and step (V).

    Window ``l`` covers the ``window`` words centred on word ``l``. IDF is
    computed over the L windows plus the K step descriptions.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(transcript) == 0:
        raise ValueError("empty transcript")
    texts = steps.steps if isinstance(steps, TaskSpec) else tuple(steps)
    if not texts:
        raise ValueError("no step descriptions")

    word_stems = [_word_stems(w) for w in transcript.tokens]
    L = len(word_stems)
    windows = []
    for l in range(L):
        lo, hi = window_bounds(L, l, window)
        windows.append([s for ws in word_stems[lo:hi] for s in ws])
    step_docs = [stem_tokens(t) for t in texts]

    vocab: dict[str, int] = {}
    for doc in windows + step_docs:
        for term in doc:
            vocab.setdefault(term, len(vocab))
    if not vocab:
        vocab[""] = 0
    X = tfidf_matrix(windows + step_docs, vocab)
    return X[:L], X[L:]


def similarity(U, V) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
        raise ValueError(f"dimension mismatch: {U.shape} vs {V.shape}")
    # unit rows: clip only absorbs rounding
    return np.clip(U @ V.T, -1.0, 1.0)


def localize_steps(S) -> list[int]:
    """Word index of each step's mention, maximising total similarity in order."""
    S = np.asarray(S, dtype=np.float64)
    L, K = S.shape
    if L < K:
        raise ValueError(f"{L} words cannot host {K} ordered mentions")
    return list(solve_single_frame(-S).times)


def windows_from_mentions(
    indices: Sequence[int],
    transcript: TimedTranscript,
    half_width_sec: float = DEFAULT_HALF_WIDTH,
    T: int | None = None,
    seconds_per_segment: float = 1.0,
) -> ConstraintWindows:
    if half_width_sec <= 0:
        raise ValueError("half_width_sec must be positive")
    if T is None or T < 1:
        raise ValueError("T must be a positive segment count")
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValueError("mention indices must be strictly increasing")
    times = transcript.times
    out = []
    for l in indices:
        t = times[l]
        lo = math.floor((t - half_width_sec) / seconds_per_segment)
        hi = math.ceil((t + half_width_sec) / seconds_per_segment)
        lo = min(max(lo, 0), T - 1)
        hi = min(max(hi, 0), T - 1)
        out.append((lo, hi))
    return ConstraintWindows(tuple(out))


def text_windows(
    transcript: TimedTranscript,
    task: TaskSpec,
    T: int,
    window: int = DEFAULT_WINDOW,
    half_width_sec: float = DEFAULT_HALF_WIDTH,
    seconds_per_segment: float = 1.0,
) -> ConstraintWindows:
    """Full narration pipeline for one video: TF-IDF, ordered matching, windows."""
    U, V = sliding_tfidf(transcript, task, window)
    idx = localize_steps(similarity(U, V))
    return windows_from_mentions(idx, transcript, half_width_sec, T, seconds_per_segment)


def cossim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def triplet_margin_loss(anchor, positives, negatives, h: float = 0.1) -> float:
    """Hinge loss pulling positives towards ``anchor`` and pushing negatives away.

    (1/|P|) * sum over (p, n) of max(0, cos(a, n) - cos(a, p) + h)
    """
    positives = list(positives)
    negatives = list(negatives)
    if not positives or not negatives:
        raise ValueError("need at least one positive and one negative")
    if h < 0:
        raise ValueError("margin must be non-negative")
    pos = np.array([cossim(anchor, p) for p in positives])
    neg = np.array([cossim(anchor, n) for n in negatives])
    hinge = np.maximum(0.0, neg[None, :] - pos[:, None] + h)
    return float(hinge.sum() / len(positives))
