"""Unsupervised hyperparameter selection by the median strategy.

A random-search stage trains one reduced ensemble per sampled
(window size, transfer fraction, diversity weight) triple and takes the
triple with the median validation reconstruction error as the defaults.
Each hyperparameter is then swept over its full grid with the other two
fixed at the defaults, again selecting the median-error value. No stage
ever reads labels.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LabeledSeries, zscore_apply, zscore_fit
from .ensemble import EnsembleConfig, EnsembleState, score_series, train_ensemble
from .errors import ConfigError, DataError
from .model import CaeConfig

# reduced training schedule for tuning trials
_TUNE_MODELS = 4


@dataclass(frozen=True)
class HyperGrid:
    window_sizes: tuple[int, ...] = (4, 8, 16, 32, 64, 128, 256)
    transfer_fractions: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    diversity_weights: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    random_search_budget: int = 9

    def __post_init__(self):
        if not (self.window_sizes and self.transfer_fractions and self.diversity_weights):
            raise ConfigError("hyperparameter grids must be nonempty")
        if self.random_search_budget < 3:
            raise ConfigError("random_search_budget must be >= 3")

    @property
    def cardinality(self) -> int:
        return (len(self.window_sizes) * len(self.transfer_fractions)
                * len(self.diversity_weights))


@dataclass
class Trial:
    stage: str  # random_search | sweep_window | sweep_transfer | sweep_diversity
    window_size: int
    transfer_fraction: float
    diversity_weight: float
    error: float
    seconds: float


@dataclass
class TuneResult:
    defaults: tuple[int, float, float]
    selected: tuple[int, float, float]
    trials: list[Trial] = field(default_factory=list)


def validation_error(state: EnsembleState, validation: LabeledSeries) -> float:
    """Mean per-observation ensemble outlier score on the validation series."""
    if validation.length < state.cae_config.window_size:
        raise DataError(
            f"validation length {validation.length} < window size "
            f"{state.cae_config.window_size}"
        )
    return float(score_series(state, validation, keep_per_model=False).scores.mean())


def median_rank_select(entries: list[tuple[float, tuple]]) -> tuple:
    """Select from (error, value) pairs: the value whose error is the
    lower-middle of the sorted errors; among exact error ties at that rank,
    the smallest value wins."""
    if not entries:
        raise ConfigError("median selection over an empty trial list")
    errors = sorted(e for e, _ in entries)
    median_error = errors[(len(errors) - 1) // 2]
    tied = [value for error, value in entries if error == median_error]
    return min(tied)


def _default_evaluator(cae_config: CaeConfig, ens_config: EnsembleConfig, seed: int):
    """Train a reduced-schedule ensemble for one trial and report its
    validation reconstruction error. Deterministic per triple."""

    def evaluate(train: LabeledSeries, validation: LabeledSeries,
                 window_size: int, transfer_fraction: float,
                 diversity_weight: float) -> float:
        scale = zscore_fit(train)
        train_scaled = zscore_apply(train, scale)
        val_scaled = zscore_apply(validation, scale)
        trial_cae = cae_config.with_window(window_size)
        trial_ens = replace(
            ens_config,
            transfer_fraction=transfer_fraction,
            diversity_weight=diversity_weight,
            n_models=min(_TUNE_MODELS, ens_config.n_models),
            epochs_per_model=max(1, ens_config.epochs_per_model // 2),
            seed=int(np.random.default_rng(
                [seed, window_size, int(transfer_fraction * 1000),
                 int(diversity_weight * 1000)]).integers(2**31)),
        )
        state = train_ensemble(train_scaled, trial_cae, trial_ens)
        return validation_error(state, val_scaled)

    return evaluate


class _TrialRunner:
    """Caches trial errors by triple and records Trial rows."""

    def __init__(self, evaluate_fn, train, validation, workers: int = 1):
        self.evaluate_fn = evaluate_fn
        self.train = train
        self.validation = validation
        self.workers = workers
        self.cache: dict[tuple, float] = {}
        self.trials: list[Trial] = []

    def run(self, stage: str, triples: list[tuple[int, float, float]]) -> list[float]:
        missing = [t for t in triples if t not in self.cache]
        if self.workers > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(self._evaluate, missing))
        else:
            results = [self._evaluate(t) for t in missing]
        for triple, (error, seconds) in zip(missing, results):
            self.cache[triple] = error
            self.trials.append(Trial(stage, *triple, error=error, seconds=seconds))
        return [self.cache[t] for t in triples]

    def _evaluate(self, triple) -> tuple[float, float]:
        start = time.perf_counter()
        error = float(self.evaluate_fn(self.train, self.validation, *triple))
        if not np.isfinite(error):
            raise DataError(f"trial {triple} produced non-finite validation error")
        return error, time.perf_counter() - start


def random_search_defaults(grid: HyperGrid, train: LabeledSeries,
                           validation: LabeledSeries, budget: int, seed: int,
                           evaluate_fn=None, runner: _TrialRunner | None = None,
                           ) -> tuple[tuple[int, float, float], list[Trial]]:
    """Sample `budget` distinct triples uniformly, train one trial each, and
    return the triple whose validation error is the median of the trials."""
    if budget > grid.cardinality:
        raise ConfigError(
            f"random-search budget {budget} exceeds grid cardinality {grid.cardinality}"
        )
    if runner is None:
        runner = _TrialRunner(evaluate_fn, train, validation)
    all_triples = [
        (w, b, l)
        for w in grid.window_sizes
        for b in grid.transfer_fractions
        for l in grid.diversity_weights
    ]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(all_triples), size=budget, replace=False)
    triples = [all_triples[i] for i in chosen]
    errors = runner.run("random_search", triples)
    defaults = median_rank_select(list(zip(errors, triples)))
    return defaults, runner.trials


def sweep_hyperparameter(which: str, defaults: tuple[int, float, float],
                         grid: HyperGrid, train: LabeledSeries,
                         validation: LabeledSeries, evaluate_fn=None,
                         runner: _TrialRunner | None = None):
    """Vary one hyperparameter over its grid, the other two fixed at the
    defaults; return the value with the median validation error."""
    if runner is None:
        runner = _TrialRunner(evaluate_fn, train, validation)
    w_def, b_def, l_def = defaults
    if which == "window":
        triples = [(w, b_def, l_def) for w in grid.window_sizes]
        pick = 0
    elif which == "transfer":
        triples = [(w_def, b, l_def) for b in grid.transfer_fractions]
        pick = 1
    elif which == "diversity":
        triples = [(w_def, b_def, l) for l in grid.diversity_weights]
        pick = 2
    else:
        raise ConfigError(f"unknown sweep target {which!r}")
    errors = runner.run(f"sweep_{which}", triples)
    entries = [(e, t[pick]) for e, t in zip(errors, triples)]
    return median_rank_select(entries), runner.trials


def select_hyperparameters(grid: HyperGrid, train: LabeledSeries,
                           validation: LabeledSeries, budget: int | None = None,
                           seed: int = 0, evaluate_fn=None,
                           cae_config: CaeConfig | None = None,
                           ens_config: EnsembleConfig | None = None,
                           workers: int = 1) -> TuneResult:
    """Run the full selection: random-search defaults, then one median sweep
    per hyperparameter. `evaluate_fn(train, validation, w, beta, lam)` can
    replace the built-in trainer (used by tests; also the seam for stubs)."""
    if budget is None:
        budget = grid.random_search_budget
    if evaluate_fn is None:
        if cae_config is None or ens_config is None:
            raise ConfigError(
                "select_hyperparameters needs cae_config and ens_config "
                "unless an evaluate_fn is injected"
            )
        evaluate_fn = _default_evaluator(cae_config, ens_config, seed)

    runner = _TrialRunner(evaluate_fn, train, validation, workers=workers)
    defaults, _ = random_search_defaults(grid, train, validation, budget, seed,
                                         runner=runner)
    w_opt, _ = sweep_hyperparameter("window", defaults, grid, train, validation,
                                    runner=runner)
    b_opt, _ = sweep_hyperparameter("transfer", defaults, grid, train, validation,
                                    runner=runner)
    l_opt, _ = sweep_hyperparameter("diversity", defaults, grid, train, validation,
                                    runner=runner)
    return TuneResult(defaults=defaults, selected=(w_opt, b_opt, l_opt),
                      trials=runner.trials)
