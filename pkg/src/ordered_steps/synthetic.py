"""Desk-scale synthetic corpus with planted, ordered, component-built steps."""

from __future__ import annotations

import itertools
import string
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import FeatureSequence, TaskSpec, stem
from .text_constraints import TimedTranscript

# letters-only words that are their own stems
_WORDS = (
    "pour", "whisk", "cut", "add", "stir", "egg", "milk", "flour", "sugar", "salt",
    "butter", "lemon", "oil", "tire", "jack", "steak", "grill", "mix", "bake", "fry",
    "peel", "wash", "drain", "heat", "chop", "spread", "roll", "boil", "press", "fold",
    "crack", "rice", "bread", "cream", "water", "pan", "bowl", "knife", "shelf", "wheel",
    "bolt", "drill", "sand", "paint", "glue", "cake", "fish", "meat", "onion", "garlic",
)
_FILLER = ("so", "now", "we", "just", "then", "okay", "you", "it", "the", "and", "really", "nice", "go", "look")


def component_words(n: int) -> list[str]:
    """``n`` distinct words whose stems are themselves and each other distinct."""
    out = [w for w in _WORDS if stem(w) == w][:n]
    seen = set(out) | set(_FILLER)
    for a, b, c in itertools.product(string.ascii_lowercase, repeat=3):
        if len(out) >= n:
            break
        w = "zo" + a + b + c
        if stem(w) == w and w not in seen:
            out.append(w)
            seen.add(w)
    return out


@dataclass
class SyntheticSpec:
    num_tasks: int = 10
    steps_per_task: int = 4
    components_per_step: int = 2
    shared_component_pool_size: int = 12
    videos_per_task: int = 40
    test_videos_per_task: int = 10
    video_length: int = 100
    feature_dim: int = 16
    signal_strength: float = 1.0
    noise_std: float = 0.75
    missing_step_prob: float = 0.2
    narration_jitter_sec: float = 2.0
    background_fraction: float = 0.72
    filler_words_per_sec: float = 1.0
    gap_concentration: float = 0.2
    step_pool_size: int = 40  # > 0: tasks draw their steps from this many shared step descriptions
    seed: int = 0

    def __post_init__(self):
        for name in ("missing_step_prob", "background_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.signal_strength <= 0 or self.noise_std < 0 or self.narration_jitter_sec < 0:
            raise ValueError("signal must be positive; noise and jitter non-negative")
        if self.components_per_step > self.shared_component_pool_size:
            raise ValueError("a step cannot use more components than the pool holds")
        n_combos = _comb(self.shared_component_pool_size, self.components_per_step)
        if self.steps_per_task > n_combos:
            raise ValueError("pool too small for distinct steps within a task")
        if self.step_pool_size and not self.steps_per_task <= self.step_pool_size <= n_combos:
            raise ValueError("step_pool_size must be 0 or between steps_per_task and the number of component combinations")
        fg = round((1 - self.background_fraction) * self.video_length)
        if fg < self.steps_per_task:
            raise ValueError("video too short to show every step at least one segment")
        for name in ("num_tasks", "steps_per_task", "components_per_step", "video_length", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _comb(n: int, k: int) -> int:
    from math import comb

    return comb(n, k)


@dataclass
class SyntheticVideo:
    id: str
    task_id: str
    split: str
    features: FeatureSequence
    transcript: TimedTranscript
    gt: list  # per step: list of (start_sec, end_sec)
    step_runs: list  # per step: (first_segment, last_segment) or None when missing


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    tasks: list
    videos: list
    directions: np.ndarray = field(repr=False)

    def split(self, name: str) -> list:
        return [v for v in self.videos if v.split == name]

    def task(self, task_id: str) -> TaskSpec:
        return next(t for t in self.tasks if t.id == task_id)


def _split_count(rng, total: int, parts: int, minimum: int, concentration: float = 0.0) -> np.ndarray:
    # concentration > 0 draws the split proportions from a symmetric Dirichlet
    base = np.full(parts, minimum, dtype=int)
    p = rng.dirichlet(np.full(parts, concentration)) if concentration > 0 else np.full(parts, 1.0 / parts)
    return base + rng.multinomial(total - minimum * parts, p)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    words = component_words(spec.shared_component_pool_size)
    u = rng.normal(size=(spec.shared_component_pool_size, spec.feature_dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)

    def draw_combos(n):
        out: list[tuple[int, ...]] = []
        while len(out) < n:
            c = tuple(sorted(rng.choice(spec.shared_component_pool_size, spec.components_per_step, replace=False)))
            if c not in out:
                out.append(c)
        return out

    step_pool = draw_combos(spec.step_pool_size) if spec.step_pool_size else None
    tasks, step_comps = [], {}
    for i in range(spec.num_tasks):
        if step_pool is None:
            combos = draw_combos(spec.steps_per_task)
        else:
            combos = [step_pool[j] for j in rng.choice(len(step_pool), spec.steps_per_task, replace=False)]
        task = TaskSpec(f"task{i:02d}", f"synthetic task {i}", tuple(" ".join(words[m] for m in c) for c in combos))
        tasks.append(task)
        step_comps[task.id] = combos

    T = spec.video_length
    fg_total = round((1 - spec.background_fraction) * T)
    videos = []
    for task in tasks:
        K = task.num_steps
        means = np.array([u[list(c)].mean(axis=0) for c in step_comps[task.id]])
        n_videos = spec.videos_per_task + spec.test_videos_per_task
        for j in range(n_videos):
            split = "train" if j < spec.videos_per_task else "test"
            present = np.flatnonzero(rng.random(K) >= spec.missing_step_prob)
            X = spec.noise_std * rng.normal(size=(T, spec.feature_dim))
            runs: list = [None] * K
            if present.size:
                lengths = _split_count(rng, fg_total, present.size, 1)
                gaps = _split_count(rng, T - fg_total, present.size + 1, 0, spec.gap_concentration)
                t = gaps[0]
                for n, k in enumerate(present):
                    runs[k] = (int(t), int(t + lengths[n] - 1))
                    X[t : t + lengths[n]] += spec.signal_strength * means[k]
                    t += lengths[n] + gaps[n + 1]
            gt = [[] if r is None else [(float(r[0]), float(r[1] + 1))] for r in runs]

            n_fill = rng.poisson(spec.filler_words_per_sec * T)
            words_t = [(str(rng.choice(_FILLER)), float(s)) for s in rng.uniform(0, T, n_fill)]
            for k in present:
                j_sec = rng.uniform(-spec.narration_jitter_sec, spec.narration_jitter_sec)
                m = float(np.clip(runs[k][0] + j_sec, 0.0, T - 1e-3))
                for i, tok in enumerate(task.steps[k].split()):
                    words_t.append((tok, m + 0.3 * i))
            words_t.sort(key=lambda p: p[1])
            videos.append(
                SyntheticVideo(
                    id=f"{task.id}_v{j:03d}",
                    task_id=task.id,
                    split=split,
                    features=FeatureSequence(X),
                    transcript=TimedTranscript(tuple(words_t)),
                    gt=gt,
                    step_runs=runs,
                )
            )
    return SyntheticCorpus(spec, tasks, videos, u)
