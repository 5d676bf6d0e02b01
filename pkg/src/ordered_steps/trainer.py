"""Alternating weakly supervised training: labels Y by constrained DP, then
classifier parameters, starting from narration-constrained random labels.

Two modes share the loop:

``simple``
    Y minimises sum Y_tk F_tk; parameters take ``inner_epochs`` of mini-batch
    Adam on the assigned frames.
``majorize``
    Y minimises sum Y_tk [F_tk - (lr/2) ||grad F_tk||^2]; parameters take one
    full gradient step theta - lr * sum Y_tk grad F_tk. The objective history
    is non-increasing as long as lr respects ``majorize_step_limit``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    ConstraintWindows,
    FeatureSequence,
    InfeasibleError,
    TaskSpec,
    build_step_component_matrix,
    build_vocabulary,
)
from .dp_assign import apply_windows, sample_feasible, solve
from .model import (
    ComponentClassifierBank,
    OptimizerState,
    _averaging,
    adam_step,
    batch_grad_arrays,
    gradient_step,
    loss_term_table,
    weighted_loss_grad,
)

log = logging.getLogger(__name__)

THREADS_ENV = "ORDERED_STEPS_THREADS"


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "simple"
    init_epochs: int = 30
    outer_iterations: int = 30
    inner_epochs: int = 1
    learning_rate: float = 1e-5
    batch_size: int = 64
    use_text_constraints: bool = True
    granularity: str = "component"
    assignment_mode: str = "single_frame"
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("simple", "majorize"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if min(self.init_epochs, self.outer_iterations, self.inner_epochs) < 0 or self.batch_size < 1:
            raise ValueError("epoch / iteration counts must be non-negative, batch size positive")
        if self.mode == "majorize" and self.assignment_mode != "single_frame":
            raise ValueError("majorize mode requires single_frame assignments")


@dataclass(frozen=True)
class TrainingVideo:
    task_id: str
    features: FeatureSequence
    id: str = ""


@dataclass
class TrainState:
    bank: ComponentClassifierBank
    optimizer: OptimizerState
    A_by_task: dict
    vocabulary: object
    assignments: list  # Assignment or None for skipped videos
    history: list = field(default_factory=list)
    rng: np.random.Generator = field(default=None, repr=False)


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        n = 1
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, min(n, n_jobs))


def _map(fn, items):
    items = list(items)
    n = worker_count(len(items))
    if n == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def _task_matrices(tasks: Sequence[TaskSpec], granularity: str):
    vocab = build_vocabulary(tasks, granularity)
    return vocab, {t.id: build_step_component_matrix(t, vocab, granularity) for t in tasks}


def _active_windows(windows, config: TrainConfig, i: int) -> Optional[ConstraintWindows]:
    if not config.use_text_constraints or windows is None:
        return None
    return windows[i]


def _supervised_epoch(state: TrainState, videos, config: TrainConfig) -> None:
    X, task_ids, ks = [], [], []
    for v, y in zip(videos, state.assignments):
        if y is None:
            continue
        t, k = np.nonzero(y.entries)
        X.append(v.features.values[t])
        task_ids.extend([v.task_id] * t.size)
        ks.append(k)
    X = np.concatenate(X)
    task_ids = np.array(task_ids, dtype=object)
    ks = np.concatenate(ks)
    rng = state.rng
    order = rng.permutation(len(ks))
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        _, grad = batch_grad_arrays(state.bank, state.A_by_task, X[idx], task_ids[idx], ks[idx], training=True, seed=rng)
        state.bank, state.optimizer = adam_step(state.bank, grad, state.optimizer)


def initialize(videos, tasks: Sequence[TaskSpec], windows=None, config: TrainConfig = TrainConfig()) -> TrainState:
    """Zero bank trained on random constraint-respecting labels for ``init_epochs`` epochs."""
    tasks = list(tasks)
    vocab, A_by_task = _task_matrices(tasks, config.granularity)
    D = videos[0].features.D
    bank = ComponentClassifierBank.zeros(len(vocab), D, config.dropout)
    state = TrainState(
        bank=bank,
        optimizer=OptimizerState.fresh(bank, config.learning_rate),
        A_by_task=A_by_task,
        vocabulary=vocab,
        assignments=[None] * len(videos),
        rng=np.random.default_rng(config.seed),
    )
    for v in videos:
        if v.task_id not in A_by_task:
            raise KeyError(f"video task {v.task_id!r} not among the given tasks")
        if v.features.D != D:
            raise ValueError("all videos must share the feature dimension")

    active = []
    for i, v in enumerate(videos):
        K = A_by_task[v.task_id].shape[0]
        try:
            sample_feasible(v.features.T, K, _active_windows(windows, config, i), seed=0)
            active.append(i)
        except (InfeasibleError, ValueError) as exc:
            log.warning("skipping video %s: %s", v.id or i, exc)
    if not active:
        raise InfeasibleError("every video is infeasible under its constraints")

    for epoch in range(max(config.init_epochs, 1)):
        seeds = state.rng.integers(0, 2**63, size=len(videos))
        for i in active:
            v = videos[i]
            K = A_by_task[v.task_id].shape[0]
            state.assignments[i] = sample_feasible(v.features.T, K, _active_windows(windows, config, i), seed=int(seeds[i]))
        if epoch < config.init_epochs:
            _supervised_epoch(state, videos, config)
    state.history.append(objective(state, videos))
    return state


def cost_tables(state: TrainState, videos, config: TrainConfig) -> list:
    """Per-video Y-update cost (dropout off): F, or F - (lr/2)||grad F||^2 in majorize mode."""

    def one(v):
        A = state.A_by_task[v.task_id]
        if config.mode == "majorize":
            F, norms = loss_term_table(state.bank, A, v.features, with_grad_norms=True)
            return F - 0.5 * config.learning_rate * norms
        return loss_term_table(state.bank, A, v.features)

    return _map(one, videos)


def _total_grad(state: TrainState, videos, assignments):
    dW = np.zeros_like(state.bank.weights)
    db = np.zeros_like(state.bank.biases)
    for v, y in zip(videos, assignments):
        if y is None:
            continue
        gW, gb = weighted_loss_grad(state.bank, state.A_by_task[v.task_id], v.features, y)
        dW += gW
        db += gb
    return dW, db


def _bound_value(state: TrainState, videos, assignments, learning_rate: float) -> float:
    # value of the quadratic upper bound at its minimiser theta*(Y)
    dW, db = _total_grad(state, videos, assignments)
    return objective(state, videos, assignments) - 0.5 * learning_rate * (np.sum(dW * dW) + np.sum(db * db))


def update_assignments(state: TrainState, videos, windows=None, config: TrainConfig = TrainConfig()) -> list:
    """New per-video assignments from the constrained DP on the current cost tables.

    In majorize mode the candidate labels are kept only if they do not raise
    the exact upper-bound value relative to the current labels; the linear
    cost drops the cross terms of ||sum Y grad F||^2, and this check restores
    the descent guarantee.
    """
    tables = cost_tables(state, videos, config)

    def one(i):
        if state.assignments[i] is None:
            return None
        S = apply_windows(tables[i], _active_windows(windows, config, i))
        try:
            return solve(S, config.assignment_mode)
        except InfeasibleError as exc:
            log.warning("video %s infeasible during update: %s", videos[i].id or i, exc)
            return None

    new = _map(one, range(len(videos)))
    if config.mode == "majorize":
        new = [n if n is not None else o for n, o in zip(new, state.assignments)]
        lr = config.learning_rate
        if _bound_value(state, videos, new, lr) > _bound_value(state, videos, state.assignments, lr):
            log.info("majorize step kept the previous labels")
            return list(state.assignments)
    return new


def update_parameters(state: TrainState, videos, config: TrainConfig = TrainConfig()) -> ComponentClassifierBank:
    if config.mode == "majorize":
        grad = _total_grad(state, videos, state.assignments)
        state.bank = gradient_step(state.bank, grad, config.learning_rate)
    else:
        for _ in range(config.inner_epochs):
            _supervised_epoch(state, videos, config)
    return state.bank


def objective(state: TrainState, videos, assignments=None) -> float:
    """sum_v sum_tk Y_tk F_tk over all labelled videos, dropout off."""
    assignments = state.assignments if assignments is None else assignments
    total = 0.0
    for v, y in zip(videos, assignments):
        if y is None:
            continue
        F = loss_term_table(state.bank, state.A_by_task[v.task_id], v.features)
        total += float(np.sum(F[y.entries.astype(bool)]))
    return total


def majorize_step_limit(state: TrainState, videos) -> float:
    """Largest lr for which the quadratic bound with curvature 1/(lr N) is valid.

    Each F_tk has a gradient Lipschitz constant of at most
    0.5 * ||Abar||_2^2 * (||x_t||^2 + 1); N is the number of labelled terms.
    """
    L, N = 0.0, 0
    for v, y in zip(videos, state.assignments):
        if y is None:
            continue
        Abar = _averaging(state.A_by_task[v.task_id])
        sq = np.einsum("td,td->t", v.features.values, v.features.values).max() + 1.0
        L = max(L, 0.5 * np.linalg.norm(Abar, 2) ** 2 * sq)
        N += int(y.entries.sum())
    return 1.0 / (L * N) if L > 0 and N > 0 else np.inf


def train(videos, tasks: Sequence[TaskSpec], windows=None, config: TrainConfig = TrainConfig()):
    """Initialise, then alternate label and parameter updates.

    Returns ``(state, history)``; ``history[0]`` is the objective after
    initialisation and one entry follows every outer iteration.
    """
    state = initialize(videos, tasks, windows, config)
    if config.mode == "majorize":
        limit = majorize_step_limit(state, videos)
        if config.learning_rate > limit:
            log.warning("lr %.3g exceeds the majorization limit %.3g; descent is not guaranteed", config.learning_rate, limit)
    for _ in range(config.outer_iterations):
        state.assignments = update_assignments(state, videos, windows, config)
        update_parameters(state, videos, config)
        state.history.append(objective(state, videos))
    return state, list(state.history)
