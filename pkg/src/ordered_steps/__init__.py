"""Weakly supervised temporal localization of ordered task steps.

Component-factored linear step classifiers trained by alternating an exact
ordered-assignment dynamic program with classifier updates, optionally
constrained by windows derived from timed narration.
"""

from .core import (
    Assignment,
    ComponentVocabulary,
    ConstraintWindows,
    FeatureSequence,
    InfeasibleError,
    StepComponentMatrix,
    TaskSpec,
    build_step_component_matrix,
    build_vocabulary,
    stem,
)
from .dp_assign import apply_windows, brute_force, sample_feasible, solve, solve_runs, solve_single_frame
from .evalkit import (
    GroundTruth,
    Prediction,
    corpus_stats,
    infer,
    mean_average_precision,
    order_consistency,
    recall,
    uniform_baseline,
)
from .model import ComponentClassifierBank, OptimizerState, adam_step, loss_term_table, step_scores
from .synthetic import SyntheticSpec, generate_synthetic
from .text_constraints import TimedTranscript, localize_steps, sliding_tfidf, text_windows, windows_from_mentions
from .trainer import TrainConfig, TrainingVideo, TrainState, initialize, train

__version__ = "0.1.0"
