"""Domain types and the step/component bookkeeping shared by every module."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

GRANULARITIES = ("component", "shared_step", "task_step")

_TOKEN_RE = re.compile(r"[a-z]+")


class InfeasibleError(ValueError):
    """No assignment satisfies the ordering / at-least-once / window constraints."""


# ---------------------------------------------------------------------------
# Porter stemmer (original 1980 rule set)
# ---------------------------------------------------------------------------

_VOWELS = frozenset("aeiou")


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    # number of VC sequences in [C](VC)^m[V]
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        cons = _is_consonant(stem, i)
        if cons and prev_vowel:
            m += 1
        prev_vowel = not cons
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return len(word) >= 2 and word[-1] == word[-2] and _is_consonant(word, len(word) - 1)


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


def _apply_rules(word: str, rules, condition) -> str:
    # the first (longest) matching suffix decides; its condition is checked once
    for suffix, repl in rules:
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            return stem + repl if condition(stem) else word
    return word


_STEP2 = (
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
)
_STEP3 = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
)
_STEP4 = (
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment",
    "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
)


def _step1ab(w: str) -> str:
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
        return w
    for suffix in ("ed", "ing"):
        if w.endswith(suffix) and _has_vowel(w[: -len(suffix)]):
            w = w[: -len(suffix)]
            if w.endswith(("at", "bl", "iz")):
                return w + "e"
            if _ends_double_consonant(w) and w[-1] not in "lsz":
                return w[:-1]
            if _measure(w) == 1 and _ends_cvc(w):
                return w + "e"
            return w
    return w


def _step4(w: str) -> str:
    for suffix in sorted(_STEP4, key=len, reverse=True):
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) <= 1:
                return w
            if suffix == "ion" and not stem.endswith(("s", "t")):
                return w
            return stem
    return w


def _porter(w: str) -> str:
    if len(w) <= 2:
        return w
    w = _step1ab(w)
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"
    w = _apply_rules(w, _STEP2, lambda s: _measure(s) > 0)
    w = _apply_rules(w, _STEP3, lambda s: _measure(s) > 0)
    w = _step4(w)
    if w.endswith("e"):
        m = _measure(w[:-1])
        if m > 1 or (m == 1 and not _ends_cvc(w[:-1])):
            w = w[:-1]
    if _measure(w) > 1 and _ends_double_consonant(w) and w.endswith("l"):
        w = w[:-1]
    return w


def stem(word: str) -> str:
    """Lowercase Porter stem of ``word``, iterated until it stops changing.

    A single Porter pass is not idempotent ("agreed" -> "agre" -> "agr"), so the
    pass is repeated; every pass that changes the word shortens it or swaps a
    suffix for one of equal length, so the loop terminates quickly.
    """
    if not word:
        raise ValueError("cannot stem an empty word")
    w = word.lower()
    if not w.isalpha():
        raise ValueError(f"not a word of letters: {word!r}")
    for _ in range(16):
        nxt = _porter(w)
        if nxt == w:
            return w
        w = nxt
    return w


def tokenize(text: str) -> list[str]:
    """Lowercase, split on anything that is not a letter, drop empties."""
    return _TOKEN_RE.findall(text.lower())


def stem_tokens(text: str) -> list[str]:
    return [stem(t) for t in tokenize(text)]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    id: str
    title: str
    steps: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError(f"task {self.id!r} has no steps")
        for s in self.steps:
            if not tokenize(s):
                raise ValueError(f"task {self.id!r} has an empty step description")

    @property
    def num_steps(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class ComponentVocabulary:
    components: tuple[str, ...]
    index: dict = field(repr=False, compare=False, default=None)
    granularity: str = "component"

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("empty component vocabulary")
        idx = {c: i for i, c in enumerate(comps)}
        if len(idx) != len(comps):
            raise ValueError("duplicate components in vocabulary")
        object.__setattr__(self, "index", idx)

    def __len__(self) -> int:
        return len(self.components)

    @property
    def size(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class StepComponentMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.int8)
        if a.ndim != 2:
            raise ValueError("step/component matrix must be 2-D")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("step/component matrix must be binary")
        if (a.sum(axis=1) < 1).any():
            raise ValueError("every step needs at least one component")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def row_degrees(self) -> np.ndarray:
        return self.entries.sum(axis=1).astype(np.int64)

    @property
    def averaging(self) -> np.ndarray:
        """K x M matrix whose rows average the active components."""
        return self.entries / self.row_degrees[:, None].astype(np.float64)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class FeatureSequence:
    values: np.ndarray
    seconds_per_segment: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"features must be a non-empty T x D matrix, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("features contain non-finite values")
        if self.seconds_per_segment <= 0:
            raise ValueError("seconds_per_segment must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ConstraintWindows:
    """Per-step inclusive segment intervals; ``None`` means unconstrained."""

    intervals: tuple[Optional[tuple[int, int]], ...]

    def __post_init__(self):
        ivs = tuple(None if iv is None else (int(iv[0]), int(iv[1])) for iv in self.intervals)
        for iv in ivs:
            if iv is not None and not 0 <= iv[0] <= iv[1]:
                raise ValueError(f"bad window {iv}")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def unconstrained(cls, K: int) -> "ConstraintWindows":
        return cls((None,) * K)

    def __len__(self) -> int:
        return len(self.intervals)

    def validate(self, T: int) -> None:
        for iv in self.intervals:
            if iv is not None and iv[1] >= T:
                raise ValueError(f"window {iv} exceeds T={T}")

    def mask(self, T: int) -> np.ndarray:
        """Boolean T x K matrix, True where (t, k) is allowed."""
        self.validate(T)
        allowed = np.ones((T, len(self.intervals)), dtype=bool)
        for k, iv in enumerate(self.intervals):
            if iv is not None:
                allowed[:, k] = False
                allowed[iv[0] : iv[1] + 1, k] = True
        return allowed


@dataclass(frozen=True)
class Assignment:
    entries: np.ndarray
    mode: str = "single_frame"

    def __post_init__(self):
        if self.mode not in ("runs", "single_frame"):
            raise ValueError(f"unknown assignment mode {self.mode!r}")
        y = np.asarray(self.entries, dtype=np.int8)
        y.setflags(write=False)
        object.__setattr__(self, "entries", y)

    @classmethod
    def from_times(cls, times: Sequence[int], T: int) -> "Assignment":
        y = np.zeros((T, len(times)), dtype=np.int8)
        y[np.asarray(times, dtype=int), np.arange(len(times))] = 1
        return cls(y, "single_frame")

    @property
    def times(self) -> tuple[int, ...]:
        """First labelled segment of every step."""
        return tuple(int(np.flatnonzero(col)[0]) for col in self.entries.T)

    def labels(self) -> np.ndarray:
        """Per-segment step label, -1 for background."""
        out = np.full(self.entries.shape[0], -1, dtype=np.int64)
        t, k = np.nonzero(self.entries)
        out[t] = k
        return out

    def cost(self, S: np.ndarray) -> float:
        import math

        t, k = np.nonzero(self.entries)
        return math.fsum(np.asarray(S, dtype=np.float64)[t, k].tolist())

    def check(self, windows: Optional[ConstraintWindows] = None) -> None:
        """Raise ValueError if any type invariant is violated."""
        y = self.entries
        if y.ndim != 2 or not np.isin(y, (0, 1)).all():
            raise ValueError("assignment must be a binary T x K matrix")
        T, K = y.shape
        if (y.sum(axis=1) > 1).any():
            raise ValueError("a segment carries more than one step")
        last = -1
        for k in range(K):
            ts = np.flatnonzero(y[:, k])
            if ts.size == 0:
                raise ValueError(f"step {k} never assigned")
            if ts[0] <= last:
                raise ValueError(f"step {k} violates the ordering")
            last = ts[-1]
            if self.mode == "single_frame" and ts.size != 1:
                raise ValueError(f"step {k} has {ts.size} frames in single_frame mode")
            if self.mode == "runs" and ts[-1] - ts[0] + 1 != ts.size:
                raise ValueError(f"step {k} is not one contiguous run")
            if windows is not None and windows.intervals[k] is not None:
                lo, hi = windows.intervals[k]
                if ts[0] < lo or ts[-1] > hi:
                    raise ValueError(f"step {k} leaves its window [{lo}, {hi}]")


# ---------------------------------------------------------------------------
# Vocabulary and A^tau
# ---------------------------------------------------------------------------


def normalize_step(text: str) -> str:
    return " ".join(tokenize(text))


def _task_step_key(task: TaskSpec, k: int) -> str:
    return f"{task.id}#{k}"


def build_vocabulary(tasks: Iterable[TaskSpec], granularity: str = "component") -> ComponentVocabulary:
    """Collect the components (first-occurrence order) for the given granularity.

    ``component`` gives the unique stems over all step descriptions,
    ``shared_step`` one pseudo-component per distinct step text and
    ``task_step`` one per (task, step) pair.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks given")
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    seen: dict[str, None] = {}
    for task in tasks:
        for k, text in enumerate(task.steps):
            if granularity == "component":
                keys = stem_tokens(text)
            elif granularity == "shared_step":
                keys = [normalize_step(text)]
            else:
                keys = [_task_step_key(task, k)]
            for key in keys:
                seen.setdefault(key, None)
    return ComponentVocabulary(tuple(seen), granularity=granularity)


def build_step_component_matrix(
    task: TaskSpec, vocab: ComponentVocabulary, granularity: str = "component"
) -> StepComponentMatrix:
    if granularity != vocab.granularity:
        raise ValueError(
            f"vocabulary was built for {vocab.granularity!r}, not {granularity!r}"
        )
    A = np.zeros((task.num_steps, len(vocab)), dtype=np.int8)
    for k, text in enumerate(task.steps):
        if granularity == "component":
            keys = stem_tokens(text)
        elif granularity == "shared_step":
            keys = [normalize_step(text)]
        else:
            keys = [_task_step_key(task, k)]
        for key in keys:
            try:
                A[k, vocab.index[key]] = 1
            except KeyError:
                raise KeyError(f"component {key!r} of task {task.id!r} is not in the vocabulary") from None
    return StepComponentMatrix(A)
