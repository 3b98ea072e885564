"""Diversity-driven convolutional autoencoder ensembles for unsupervised
multivariate time series outlier detection."""

from .data import (GeneratorConfig, LabeledSeries, ScaleParams, WindowBatch,
                   load_series, make_windows, save_series, split_train_validation,
                   synth_generate, zscore_apply, zscore_fit)
from .ensemble import (EnsembleConfig, EnsembleState, ScoreSeries,
                       diversity_ensemble, diversity_pair, ensemble_average,
                       load_ensemble, loss_diverse, loss_first,
                       mean_window_diversity, save_ensemble, score_series,
                       train_ensemble, transfer_params)
from .errors import ConfigError, DataError, DivergenceError
from .metrics import (EvalReport, best_f1, confusion_at, mas_scores, pr_auc,
                      prf_at, report_at, roc_auc, topk_threshold)
from .model import CaeConfig, cae_forward, window_errors
from .tuner import HyperGrid, TuneResult, select_hyperparameters, validation_error

__version__ = "0.1.0"

__all__ = [
    "CaeConfig", "ConfigError", "DataError", "DivergenceError",
    "EnsembleConfig", "EnsembleState", "EvalReport", "GeneratorConfig",
    "HyperGrid", "LabeledSeries", "ScaleParams", "ScoreSeries", "TuneResult",
    "WindowBatch", "best_f1", "cae_forward", "confusion_at",
    "diversity_ensemble", "diversity_pair", "ensemble_average", "load_ensemble",
    "load_series", "loss_diverse", "loss_first", "make_windows", "mas_scores",
    "mean_window_diversity", "pr_auc", "prf_at", "report_at", "roc_auc",
    "save_ensemble", "save_series", "score_series", "select_hyperparameters",
    "split_train_validation", "synth_generate", "topk_threshold",
    "train_ensemble", "transfer_params", "validation_error", "window_errors",
    "zscore_apply", "zscore_fit",
]
