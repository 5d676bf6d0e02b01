"""Inference on unseen videos, recall / mAP, and corpus statistics."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .dp_assign import solve_single_frame
from .model import step_scores


@dataclass(frozen=True)
class GroundTruth:
    """Inclusive [start_sec, end_sec] intervals per step; empty = step missing."""

    intervals: tuple

    def __post_init__(self):
        ivs = tuple(tuple((float(a), float(b)) for a, b in step) for step in self.intervals)
        for step in ivs:
            for a, b in step:
                if b < a:
                    raise ValueError(f"interval [{a}, {b}] ends before it starts")
        object.__setattr__(self, "intervals", ivs)

    @property
    def num_steps(self) -> int:
        return len(self.intervals)

    def missing(self) -> list[bool]:
        return [not step for step in self.intervals]


@dataclass(frozen=True)
class Prediction:
    times: tuple
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("predicted segments must strictly increase across steps")
        object.__setattr__(self, "times", times)


def segment_time(t: int, seconds_per_segment: float = 1.0) -> float:
    """Midpoint of segment ``t`` in seconds."""
    return (t + 0.5) * seconds_per_segment


def infer(bank, A, X) -> Prediction:
    """Ordered single prediction per step, maximising the summed step scores."""
    f = step_scores(bank, A, X)
    T, K = f.shape
    if T < K:
        raise ValueError(f"video with {T} segments cannot host {K} steps")
    return Prediction(solve_single_frame(-f).times, f)


def uniform_baseline(T: int, K: int) -> Prediction:
    if T < K:
        raise ValueError(f"T={T} < K={K}")
    return Prediction(tuple(int(np.floor((k + 0.5) * T / K)) for k in range(K)))


def _hits(times, gt: GroundTruth, seconds_per_segment: float, match: str) -> list[bool]:
    out = []
    for k, t in enumerate(times):
        ivs = gt.intervals[k]
        if match == "first":
            ivs = ivs[:1]
        mid = segment_time(t, seconds_per_segment)
        out.append(any(a <= mid <= b for a, b in ivs))
    return out


def recall(preds: Mapping, gt: Mapping, seconds_per_segment: float = 1.0, match: str = "any") -> float:
    """Fraction of all steps over all videos whose prediction lands in a GT interval.

    Missing steps stay in the denominator. ``match="first"`` only accepts the
    first annotated interval of a step.
    """
    if set(preds) != set(gt):
        raise ValueError("predictions and ground truth cover different videos")
    correct = total = 0
    for vid, p in preds.items():
        times = p.times if isinstance(p, Prediction) else tuple(p)
        g = gt[vid]
        if len(times) != g.num_steps:
            raise ValueError(f"video {vid}: {len(times)} predictions for {g.num_steps} steps")
        correct += sum(_hits(times, g, seconds_per_segment, match))
        total += g.num_steps
    return correct / total if total else 0.0


def positive_mask(gt: GroundTruth, T: int, seconds_per_segment: float = 1.0) -> np.ndarray:
    """T x K boolean matrix of segments whose midpoint lies in a step's interval."""
    mid = segment_time(np.arange(T), seconds_per_segment)
    out = np.zeros((T, gt.num_steps), dtype=bool)
    for k, ivs in enumerate(gt.intervals):
        for a, b in ivs:
            out[:, k] |= (mid >= a) & (mid <= b)
    return out


def average_precision(scores, positives) -> float:
    """Area under the step-wise precision/recall curve, tied scores grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = positives.sum()
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], positives[order]
    tp = np.cumsum(y)
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall_at = tp_at / n_pos
    gains = np.diff(np.r_[0.0, recall_at])
    return float(np.sum(gains * precision))


def mean_average_precision(scores: Sequence, gts: Sequence[GroundTruth], seconds_per_segment: float = 1.0) -> float:
    """mAP over the steps of one task; each step ranks every segment of every video."""
    if len(scores) != len(gts) or not scores:
        raise ValueError("need one score matrix per ground-truth video")
    S = np.concatenate([np.asarray(s, dtype=np.float64) for s in scores])
    if not np.isfinite(S).all():
        raise ValueError("non-finite scores")
    P = np.concatenate([positive_mask(g, np.asarray(s).shape[0], seconds_per_segment) for s, g in zip(scores, gts)])
    aps = [average_precision(S[:, k], P[:, k]) for k in range(S.shape[1]) if P[:, k].any()]
    if not aps:
        raise ValueError("no step has a positive segment")
    return float(np.mean(aps))


def longest_increasing_subsequence_length(xs: Sequence) -> int:
    tops: list = []
    for x in xs:
        i = bisect.bisect_left(tops, x)
        if i == len(tops):
            tops.append(x)
        else:
            tops[i] = x
    return len(tops)


def order_consistency(occurrences: Sequence[int]) -> float:
    """Longest strictly increasing subsequence of the step order over its length."""
    if len(occurrences) == 0:
        raise ValueError("empty occurrence sequence")
    return longest_increasing_subsequence_length(occurrences) / len(occurrences)


def occurrence_order(gt: GroundTruth) -> list[int]:
    """Step indices of all annotated intervals sorted by start time."""
    occ = [(a, b, k) for k, ivs in enumerate(gt.intervals) for a, b in ivs]
    return [k for _, _, k in sorted(occ)]


def corpus_stats(gts: Sequence[GroundTruth], lengths: Sequence[int], seconds_per_segment: float = 1.0) -> dict:
    """Background fraction, missing-step fraction and mean order consistency."""
    bg = total = missing = steps = 0
    consistencies = []
    for g, T in zip(gts, lengths):
        covered = positive_mask(g, T, seconds_per_segment).any(axis=1)
        bg += int((~covered).sum())
        total += T
        missing += sum(g.missing())
        steps += g.num_steps
        occ = occurrence_order(g)
        if occ:
            consistencies.append(order_consistency(occ))
    return {
        "background_fraction": bg / total if total else 0.0,
        "missing_step_fraction": missing / steps if steps else 0.0,
        "order_consistency": float(np.mean(consistencies)) if consistencies else float("nan"),
        "videos": len(gts),
    }
