"""Robustness checks for a fitted effect: placebo treatment, random common
cause and random subset removal.

Each test perturbs the data ``trials`` times and re-runs the *same*
estimator (same hyperparameters and ``random_state``), so only the
perturbation differs from the original fit. The p-value is a two-sided
normal test of the mean trial estimate against its expected value (0 for
the placebo, the original estimate otherwise), scaled by the standard
deviation of the trial estimates. A test fails when p < 0.05.

Trial ``i`` of test ``label`` draws from ``derive_seed(seed, label, i)``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._random import make_rng
from .estimators import _RECOVERABLE, normal_p_value
from .learners import CollinearityWarning
from .tabular import StudyFrame

__all__ = [
    "FAIL_BELOW",
    "RefutationReport",
    "RefutationTest",
    "Verdict",
    "refute_placebo",
    "refute_random_common_cause",
    "refute_subset_removal",
    "run_refutations",
]

FAIL_BELOW = 0.05
MIN_TRIALS = 20


class RefutationTest(enum.Enum):
    PLACEBO = "Placebo"
    RANDOM_COMMON_CAUSE = "RandomCommonCause"
    SUBSET_REMOVAL = "SubsetRemoval"


class Verdict(enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"


@dataclass(frozen=True)
class RefutationReport:
    test: RefutationTest
    original_ate: float
    refuted_effect: float
    p_value: float
    trials: int
    trial_sd: float

    def __post_init__(self):
        if self.trials < MIN_TRIALS:
            raise ValueError(f"trials must be >= {MIN_TRIALS}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")

    @property
    def verdict(self) -> Verdict:
        return Verdict.FAIL if self.p_value < FAIL_BELOW else Verdict.PASS


def _estimate(estimator, frame):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.simplefilter("ignore", CollinearityWarning)
        return float(estimator.estimate(frame))


def _check_trials(trials):
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}")


def _report(test, original, estimates, reference):
    estimates = np.asarray(estimates)
    if np.all(estimates == estimates[0]):
        # summing identical values can move the last bit; keep them exact
        mean, sd = float(estimates[0]), 0.0
    else:
        mean = float(estimates.mean())
        sd = float(estimates.std(ddof=1))
    return RefutationReport(test, float(original), mean,
                            normal_p_value(mean, reference, sd), len(estimates), sd)


def refute_placebo(estimator, frame: StudyFrame, trials: int = 100, seed: int = 0,
                   original_ate: float | None = None) -> RefutationReport:
    """Permute the treatment column; the effect should vanish."""
    _check_trials(trials)
    original = _estimate(estimator, frame) if original_ate is None else original_ate
    estimates = []
    for i in range(trials):
        perm = make_rng(seed, "placebo", i).permutation(frame.treatment)
        estimates.append(_estimate(estimator, frame.replace(treatment=perm)))
    return _report(RefutationTest.PLACEBO, original, estimates, 0.0)


def _standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def refute_random_common_cause(estimator, frame: StudyFrame, trials: int = 100, seed: int = 0,
                               original_ate: float | None = None,
                               column: Callable[[np.random.Generator, int], np.ndarray]
                               = _standard_normal) -> RefutationReport:
    """Append an independent random covariate; the effect should not move."""
    _check_trials(trials)
    original = _estimate(estimator, frame) if original_ate is None else original_ate
    names = frame.covariate_names + ("random_common_cause",)
    estimates = []
    for i in range(trials):
        extra = np.asarray(column(make_rng(seed, "random_common_cause", i), frame.n), float)
        z = np.column_stack([frame.covariates, extra])
        estimates.append(_estimate(estimator, frame.replace(covariates=z, covariate_names=names)))
    return _report(RefutationTest.RANDOM_COMMON_CAUSE, original, estimates, original)


def refute_subset_removal(estimator, frame: StudyFrame, fraction: float = 0.2,
                          trials: int = 100, seed: int = 0,
                          original_ate: float | None = None) -> RefutationReport:
    """Drop ``floor(fraction * n)`` random rows; the effect should not move.

    A draw that starves an arm (or that the estimator rejects) is redrawn,
    up to ``10 * trials`` draws.
    """
    _check_trials(trials)
    if not 0 <= fraction < 0.5:
        raise ValueError("fraction must lie in [0, 0.5)")
    original = _estimate(estimator, frame) if original_ate is None else original_ate
    n_drop = int(math.floor(fraction * frame.n))
    estimates = []
    draws = 0
    while len(estimates) < trials:
        if draws >= 10 * trials:
            raise RuntimeError(f"subset removal needed more than {10 * trials} draws")
        rng = make_rng(seed, "subset_removal", draws)
        draws += 1
        keep = np.sort(rng.permutation(frame.n)[n_drop:])
        t = frame.treatment[keep]
        if t.sum() < 2 or len(t) - t.sum() < 2:
            continue
        try:
            estimates.append(_estimate(estimator, frame.subset(keep)))
        except _RECOVERABLE:
            continue
    return _report(RefutationTest.SUBSET_REMOVAL, original, estimates, original)


def run_refutations(estimator, frame: StudyFrame, trials: int = 100, seed: int = 0,
                    fraction: float = 0.2,
                    original_ate: float | None = None) -> dict[RefutationTest, RefutationReport]:
    original = _estimate(estimator, frame) if original_ate is None else original_ate
    return {
        RefutationTest.PLACEBO: refute_placebo(estimator, frame, trials, seed, original),
        RefutationTest.RANDOM_COMMON_CAUSE:
            refute_random_common_cause(estimator, frame, trials, seed, original),
        RefutationTest.SUBSET_REMOVAL:
            refute_subset_removal(estimator, frame, fraction, trials, seed, original),
    }
