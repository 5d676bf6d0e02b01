"""Exact solvers for min_{Y in C} sum_tk S_tk Y_tk under ordering and
at-least-once constraints, with +inf entries marking forbidden cells.

Background segments cost 0. Two label structures are supported:

* ``runs``: every step occupies one contiguous block, blocks appear in step
  order, any segment may stay background.
* ``single_frame``: every step gets exactly one segment, t_1 < ... < t_K.
"""

from __future__ import annotations

import itertools
import math
from typing import Optional

import numpy as np

from .core import Assignment, ConstraintWindows, InfeasibleError

_INF = np.inf


def _as_costs(S) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {S.shape}")
    if np.isnan(S).any() or np.isneginf(S).any():
        raise ValueError("cost matrix may only contain finite values or +inf")
    return S


def _check_feasible(S: np.ndarray) -> None:
    # greedy scan: place each step at its earliest allowed segment after the previous one
    T, K = S.shape
    if K < 1:
        raise ValueError("need at least one step")
    if T < K:
        raise InfeasibleError(f"T={T} segments cannot host K={K} ordered steps")
    finite = np.isfinite(S)
    t = -1
    for k in range(K):
        allowed = np.flatnonzero(finite[t + 1 :, k])
        if allowed.size == 0:
            raise InfeasibleError(f"no admissible segment for step {k} after segment {t}")
        t = t + 1 + int(allowed[0])


def apply_windows(S, windows: Optional[ConstraintWindows]) -> np.ndarray:
    """Copy of ``S`` with +inf wherever a step leaves its window."""
    S = np.array(S, dtype=np.float64)
    if windows is None:
        return S
    if len(windows) != S.shape[1]:
        raise ValueError(f"{len(windows)} windows for {S.shape[1]} steps")
    S[~windows.mask(S.shape[0])] = _INF
    return S


def solve_single_frame(S) -> Assignment:
    """One segment per step, strictly increasing, minimal total cost.

    Among optimal solutions the lexicographically earliest time tuple is
    returned. Runs in O(KT).
    """
    S = _as_costs(S)
    _check_feasible(S)
    T, K = S.shape

    # best[k, t]: optimal cost of steps k..K-1 with step k at segment t
    # after[k, t]: min over t' > t of best[k, t']
    best = np.empty((K, T))
    after = np.full((K, T), _INF)
    best[K - 1] = S[:, K - 1]
    for k in range(K - 1, -1, -1):
        if k < K - 1:
            best[k] = S[:, k] + after[k + 1]
        suffix_min = np.minimum.accumulate(best[k][::-1])[::-1]
        after[k, :-1] = suffix_min[1:]

    times = []
    target = best[0].min()
    if not np.isfinite(target):
        raise InfeasibleError("no finite-cost ordered assignment")
    t = int(np.flatnonzero(best[0] == target)[0])
    times.append(t)
    for k in range(1, K):
        target = after[k, t]
        cand = np.flatnonzero(best[k, t + 1 :] == target)
        t = t + 1 + int(cand[0])
        times.append(t)
    return Assignment.from_times(times, T)


def solve_runs(S) -> Assignment:
    """Contiguous ordered runs covering every step at least once.

    States are (y, z) with y the current label (0 = background) and z the last
    step seen, y in {0, z}. ``on[k]`` is state (k, k), ``off[k]`` is (0, k),
    with steps numbered from 1. Predecessors of (k, k) are (k, k), (k-1, k-1)
    and (0, k-1); predecessors of (0, k) are (k, k) and (0, k).
    """
    S = _as_costs(S)
    _check_feasible(S)
    T, K = S.shape

    on = np.full(K + 1, _INF)
    off = np.full(K + 1, _INF)
    off[0] = 0.0
    # back_on[t, k]: 0 = stayed in (k,k), 1 = came from (k-1,k-1), 2 = from (0,k-1)
    # back_off[t, k]: 0 = came from (k,k), 1 = stayed in (0,k)
    back_on = np.zeros((T, K + 1), dtype=np.int8)
    back_off = np.zeros((T, K + 1), dtype=np.int8)
    for t in range(T):
        prev_on, prev_off = on, off
        cand = np.stack([prev_on[1:], prev_on[:-1], prev_off[:-1]])
        choice = np.argmin(cand, axis=0)
        on = np.empty(K + 1)
        on[0] = _INF
        on[1:] = S[t] + cand[choice, np.arange(K)]
        back_on[t, 1:] = choice
        off = np.empty(K + 1)
        off[0] = prev_off[0]
        stay = prev_off[1:] < prev_on[1:]
        off[1:] = np.where(stay, prev_off[1:], prev_on[1:])
        back_off[t, 1:] = stay

    if not np.isfinite(min(on[K], off[K])):
        raise InfeasibleError("no finite-cost ordered assignment")
    y = np.zeros((T, K), dtype=np.int8)
    is_on = on[K] <= off[K]
    z = K
    for t in range(T - 1, -1, -1):
        if is_on:
            y[t, z - 1] = 1
            c = back_on[t, z]
            if c == 1:
                z -= 1
            elif c == 2:
                z -= 1
                is_on = False
        elif z > 0 and back_off[t, z] == 0:
            is_on = True
    return Assignment(y, "runs")


def solve(S, mode: str = "single_frame") -> Assignment:
    if mode == "single_frame":
        return solve_single_frame(S)
    if mode == "runs":
        return solve_runs(S)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

RUNS_MAX_T = 10
RUNS_MAX_K = 3
SINGLE_FRAME_MAX_CANDIDATES = 10**6


def _enumerate_runs(T: int, K: int, start: int = 0):
    if K == 0:
        yield ()
        return
    for a in range(start, T):
        for b in range(a, T - K + 1):
            for rest in _enumerate_runs(T, K - 1, b + 1):
                yield ((a, b),) + rest


def brute_force(S, mode: str = "single_frame") -> Assignment:
    """Exhaustive search over every feasible assignment (test oracle)."""
    S = np.asarray(S, dtype=np.float64)
    T, K = S.shape
    if mode == "runs":
        if T > RUNS_MAX_T or K > RUNS_MAX_K:
            raise ValueError(f"runs brute force limited to T<={RUNS_MAX_T}, K<={RUNS_MAX_K}")
    elif mode == "single_frame":
        if T >= K and math.comb(T, K) > SINGLE_FRAME_MAX_CANDIDATES:
            raise ValueError("too many single-frame candidates for brute force")
    else:
        raise ValueError(f"unknown mode {mode!r}")

    best_cost, best = math.inf, None
    if mode == "single_frame":
        for times in itertools.combinations(range(T), K):
            c = math.fsum(S[t, k] for k, t in enumerate(times))
            if c < best_cost:
                best_cost, best = c, times
        if best is None:
            raise InfeasibleError("no finite-cost assignment")
        return Assignment.from_times(best, T)

    for runs in _enumerate_runs(T, K):
        c = math.fsum(S[t, k] for k, (a, b) in enumerate(runs) for t in range(a, b + 1))
        if c < best_cost:
            best_cost, best = c, runs
    if best is None:
        raise InfeasibleError("no finite-cost assignment")
    y = np.zeros((T, K), dtype=np.int8)
    for k, (a, b) in enumerate(best):
        y[a : b + 1, k] = 1
    return Assignment(y, "runs")


def sample_feasible(T: int, K: int, windows: Optional[ConstraintWindows] = None, seed=None) -> Assignment:
    """Random single-frame assignment satisfying the constraints.

    Solves the ordered problem on i.i.d. uniform costs, so the draw is
    reproducible for a fixed seed but not uniform over the feasible set.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    S = apply_windows(rng.random((T, K)), windows)
    return solve_single_frame(S)
