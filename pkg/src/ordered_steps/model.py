"""Linear component classifiers, step composition, cross-entropy and Adam.

Step scores are f_k(x) = sum_m A_km g_m(x) / sum_m A_km with g(x) = W x + b.
The softmax runs over the K steps of the video's task only; background never
appears as a class.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import StepComponentMatrix


@dataclass(frozen=True)
class ComponentClassifierBank:
    weights: np.ndarray  # M x D
    biases: np.ndarray  # M
    dropout_rate: float = 0.5

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError(f"incompatible shapes W{W.shape} b{b.shape}")
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise ValueError("non-finite classifier parameters")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @classmethod
    def zeros(cls, M: int, D: int, dropout_rate: float = 0.5) -> "ComponentClassifierBank":
        return cls(np.zeros((M, D)), np.zeros(M), dropout_rate)

    @property
    def M(self) -> int:
        return self.weights.shape[0]

    @property
    def D(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class OptimizerState:
    first_moment: tuple[np.ndarray, np.ndarray]
    second_moment: tuple[np.ndarray, np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, bank: ComponentClassifierBank, learning_rate: float = 1e-5, **kw) -> "OptimizerState":
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        zeros = (np.zeros_like(bank.weights), np.zeros_like(bank.biases))
        return cls(zeros, zeros, 0, learning_rate, **kw)


def _averaging(A) -> np.ndarray:
    if isinstance(A, StepComponentMatrix):
        return A.averaging
    A = np.asarray(A, dtype=np.float64)
    deg = A.sum(axis=1)
    if (deg <= 0).any():
        raise ValueError("step with no active component")
    return A / deg[:, None]


def dropout_mask(shape, rate: float, seed) -> np.ndarray:
    """Inverted-dropout mask: kept entries scaled by 1/(1-rate)."""
    if rate == 0:
        return np.ones(shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def forward_components(bank: ComponentClassifierBank, x, training: bool = False, seed=None) -> np.ndarray:
    """Component scores g = W x + b for one feature vector or a T x D batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != bank.D:
        raise ValueError(f"feature dimension {x.shape[-1]} != bank dimension {bank.D}")
    if training:
        x = x * dropout_mask(x.shape, bank.dropout_rate, seed)
    return x @ bank.weights.T + bank.biases


def compose_step_scores(g, A) -> np.ndarray:
    """Average the component scores of each step's active components."""
    return np.asarray(g, dtype=np.float64) @ _averaging(A).T


def step_scores(bank: ComponentClassifierBank, A, X) -> np.ndarray:
    """T x K step score matrix (dropout off)."""
    X = getattr(X, "values", X)
    return compose_step_scores(forward_components(bank, X), A)


def log_softmax(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    z = f - f.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(f: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(f))


def step_cross_entropy(f, k: int) -> tuple[float, np.ndarray]:
    f = np.asarray(f, dtype=np.float64)
    if not 0 <= k < f.shape[0]:
        raise IndexError(f"step {k} out of range for {f.shape[0]} steps")
    if not np.isfinite(f).all():
        raise ValueError("non-finite scores")
    lp = log_softmax(f)
    grad = np.exp(lp)
    grad[k] -= 1.0
    return float(-lp[k]), grad


def batch_loss_and_grad(
    bank: ComponentClassifierBank,
    A_by_task: Mapping[str, object],
    batch: Sequence[tuple[np.ndarray, str, int]],
    training: bool = False,
    seed=None,
):
    """Mean cross-entropy over ``(x, task_id, k)`` examples and its exact gradient.

    Returns ``(loss, (dW, db))``. With ``training`` a dropout mask drawn from
    ``seed`` is applied to the inputs and held fixed for the gradient.
    """
    if not batch:
        raise ValueError("empty batch")
    X = np.array([np.asarray(x, dtype=np.float64) for x, _, _ in batch])
    tasks = np.array([t for _, t, _ in batch], dtype=object)
    ks = np.array([k for _, _, k in batch], dtype=np.int64)
    return batch_grad_arrays(bank, A_by_task, X, tasks, ks, training, seed)


def batch_grad_arrays(bank, A_by_task, X, tasks, ks, training: bool = False, seed=None):
    """Array form of :func:`batch_loss_and_grad` (rows of ``X`` with task ids and labels)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.D:
        raise ValueError("feature dimension mismatch")
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if training:
        X = X * dropout_mask(X.shape, bank.dropout_rate, seed)
    G = X @ bank.weights.T + bank.biases
    R = np.empty_like(G)
    total = 0.0
    for task in dict.fromkeys(tasks.tolist()):
        rows = np.flatnonzero(tasks == task)
        Abar = _averaging(A_by_task[task])
        K = Abar.shape[0]
        k = ks[rows]
        if k.min() < 0 or k.max() >= K:
            raise IndexError(f"step label out of range for task {task!r}")
        lp = log_softmax(G[rows] @ Abar.T)
        total += -lp[np.arange(rows.size), k].sum()
        dF = np.exp(lp)
        dF[np.arange(rows.size), k] -= 1.0
        R[rows] = dF @ Abar
    return total / n, (R.T @ X / n, R.sum(axis=0) / n)


def loss_term_table(bank: ComponentClassifierBank, A, X, with_grad_norms: bool = False):
    """Per-(t, k) cross-entropy F_tk and, optionally, ||grad F_tk||^2.

    For the linear bank grad_W F_tk = r x^T and grad_b F_tk = r with
    r = Abar^T (p_t - e_k), so ||grad F_tk||^2 = ||r||^2 (||x_t||^2 + 1).
    """
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    Abar = _averaging(A)
    lp = log_softmax(forward_components(bank, X) @ Abar.T)
    F = -lp
    if not with_grad_norms:
        return F
    P = np.exp(lp)
    Q = Abar @ Abar.T
    QP = P @ Q  # Q symmetric
    pqp = np.einsum("tk,tk->t", QP, P)
    r2 = pqp[:, None] - 2.0 * QP + np.diag(Q)[None, :]
    r2 = np.maximum(r2, 0.0)
    norms = r2 * (np.einsum("td,td->t", X, X) + 1.0)[:, None]
    return F, norms


def weighted_loss_grad(bank: ComponentClassifierBank, A, X, Y) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of sum_tk Y_tk F_tk with respect to (W, b), dropout off."""
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    Y = np.asarray(getattr(Y, "entries", Y), dtype=np.float64)
    Abar = _averaging(A)
    P = softmax(forward_components(bank, X) @ Abar.T)
    C = Y.sum(axis=1, keepdims=True) * P - Y
    R = C @ Abar
    return R.T @ X, R.sum(axis=0)


def adam_step(bank: ComponentClassifierBank, grad, state: OptimizerState):
    """One bias-corrected Adam update; returns ``(new_bank, new_state)``."""
    dW, db = (np.asarray(g, dtype=np.float64) for g in grad)
    if dW.shape != bank.weights.shape or db.shape != bank.biases.shape:
        raise ValueError("gradient shape mismatch")
    if not (np.isfinite(dW).all() and np.isfinite(db).all()):
        raise ValueError("non-finite gradient")
    b1, b2 = state.beta1, state.beta2
    step = state.step_count + 1
    m = tuple(b1 * mo + (1 - b1) * g for mo, g in zip(state.first_moment, (dW, db)))
    v = tuple(b2 * vo + (1 - b2) * g * g for vo, g in zip(state.second_moment, (dW, db)))
    bc1 = 1 - b1**step
    bc2 = 1 - b2**step
    new = [
        p - state.learning_rate * (mi / bc1) / (np.sqrt(vi / bc2) + state.eps)
        for p, mi, vi in zip((bank.weights, bank.biases), m, v)
    ]
    return (
        replace(bank, weights=new[0], biases=new[1]),
        replace(state, first_moment=m, second_moment=v, step_count=step),
    )


def gradient_step(bank: ComponentClassifierBank, grad, learning_rate: float) -> ComponentClassifierBank:
    """Plain step theta <- theta - lr * grad."""
    dW, db = grad
    if not (np.isfinite(dW).all() and np.isfinite(db).all()):
        raise ValueError("non-finite gradient")
    return replace(bank, weights=bank.weights - learning_rate * dW, biases=bank.biases - learning_rate * db)


def init_bank(M: int, D: int, dropout_rate: float = 0.5, scale: float = 0.0, seed: Optional[int] = None):
    if scale == 0.0:
        return ComponentClassifierBank.zeros(M, D, dropout_rate)
    rng = np.random.default_rng(seed)
    return ComponentClassifierBank(rng.normal(0, scale, (M, D)), np.zeros(M), dropout_rate)
