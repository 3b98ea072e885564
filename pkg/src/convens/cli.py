"""Command-line interface.

Subcommands: synth, tune, train, score, evaluate, diversity. Settings come
from an INI config file (one section per concern) and are overridden by
flags. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens_mod
from . import metrics
from .data import (GeneratorConfig, LabeledSeries, load_series, save_series,
                   synth_generate, zscore_apply, zscore_fit)
from .data import split_train_validation
from .ensemble import (EnsembleConfig, load_ensemble, save_ensemble,
                       score_series, train_ensemble)
from .errors import ConfigError, DataError, DivergenceError
from .model import CaeConfig
from .tuner import HyperGrid, select_hyperparameters

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

K_SWEEP_RANGE = range(1, 21)


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

class Settings:
    """Layered lookup: CLI flag (if set) > config file entry > default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.parser = configparser.ConfigParser()
        config_path = getattr(args, "config", None)
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise ConfigError(f"config file {path} not found")
            try:
                self.parser.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"config file {path}: {exc}") from exc

    def get(self, flag: str, section: str, key: str, convert, default=None):
        value = getattr(self.args, flag, None)
        if value is not None:
            return value
        if self.parser.has_option(section, key):
            raw = self.parser.get(section, key)
            try:
                return convert(raw)
            except ValueError as exc:
                raise ConfigError(f"config [{section}] {key} = {raw!r}: {exc}") from exc
        return default

    def require(self, flag: str, section: str, key: str, convert, what: str):
        value = self.get(flag, section, key, convert)
        if value is None:
            raise ConfigError(f"{what} required: pass --{flag.replace('_', '-')} "
                              f"or set [{section}] {key}")
        return value

    def get_flag(self, flag: str, section: str, key: str) -> bool:
        if getattr(self.args, flag, False):
            return True
        if self.parser.has_option(section, key):
            return _parse_bool(self.parser.get(section, key))
        return False


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def _parse_ints(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _out_dir(settings: Settings) -> Path:
    out = settings.require("out", "run", "out", str, "output directory")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _build_cae_config(settings: Settings, input_dim: int,
                      window_size: int | None = None) -> CaeConfig:
    if window_size is None:
        window_size = settings.require("window_size", "model", "window_size", int,
                                       "window size")
    no_attention = settings.get_flag("no_attention", "model", "no_attention")
    try:
        return CaeConfig(
            window_size=window_size,
            input_dim=input_dim,
            embed_dim=settings.get("embed_dim", "model", "embed_dim", int, 256),
            layers=settings.get("layers", "model", "layers", int, 10),
            kernel_size=settings.get("kernel_size", "model", "kernel_size", int, 3),
            use_attention=not no_attention,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_ens_config(settings: Settings, require_hyper: bool) -> EnsembleConfig:
    no_diversity = settings.get_flag("no_diversity", "ensemble", "no_diversity")
    no_ensemble = settings.get_flag("no_ensemble", "ensemble", "no_ensemble")

    n_models = settings.get("models", "ensemble", "models", int, 8)
    if no_ensemble:
        n_models = 1
    if require_hyper and not (no_diversity or no_ensemble):
        transfer = settings.require("transfer_fraction", "ensemble",
                                    "transfer_fraction", float, "transfer fraction")
        diversity = settings.require("diversity_weight", "ensemble",
                                     "diversity_weight", float, "diversity weight")
    else:
        transfer = settings.get("transfer_fraction", "ensemble",
                                "transfer_fraction", float, 0.0)
        diversity = settings.get("diversity_weight", "ensemble",
                                 "diversity_weight", float, 0.0)
    if no_diversity:
        transfer, diversity = 0.0, 0.0
    try:
        return EnsembleConfig(
            transfer_fraction=transfer,
            diversity_weight=diversity,
            n_models=n_models,
            epochs_per_model=settings.get("epochs_per_model", "ensemble",
                                          "epochs_per_model", int, 50),
            batch_size=settings.get("batch_size", "ensemble", "batch_size", int, 64),
            seed=settings.get("seed", "ensemble", "seed", int, 0),
            learning_rate=settings.get("learning_rate", "ensemble",
                                       "learning_rate", float, 1e-3),
            independent_models=no_diversity,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_train_series(settings: Settings) -> LabeledSeries:
    path = settings.require("train", "data", "train", str, "training CSV")
    label_column = settings.get("label_column", "data", "label_column", str, "label")
    return load_series(path, label_column=label_column)


def _load_test_series(settings: Settings) -> LabeledSeries:
    path = settings.require("test", "data", "test", str, "test CSV")
    label_column = settings.get("label_column", "data", "label_column", str, "label")
    return load_series(path, label_column=label_column)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    settings = Settings(args)
    out = _out_dir(settings)
    config = GeneratorConfig(
        seed=settings.get("seed", "synth", "seed", int, 0),
        length=settings.get("length", "synth", "length", int, 1000),
        dims=settings.get("dims", "synth", "dims", int, 3),
        contamination=settings.get("contamination", "synth", "contamination",
                                   float, 0.01),
        spike_magnitude=settings.get("spike_magnitude", "synth", "spike_magnitude",
                                     float, 4.0),
        noise_std=settings.get("noise_std", "synth", "noise_std", float, 0.1),
        name=settings.get("name", "synth", "name", str, "synth"),
    )
    series = synth_generate(config)
    target = out / f"{config.name}.csv"
    save_series(series, target)
    print(f"wrote {target} ({series.length} rows, {series.dims} dims, "
          f"{int(series.labels.sum())} outliers)")
    return EXIT_OK


def cmd_tune(args) -> int:
    settings = Settings(args)
    out = _out_dir(settings)
    series = _load_train_series(settings)
    grid = HyperGrid(
        window_sizes=settings.get("window_sizes", "tuner", "window_sizes",
                                  _parse_ints, HyperGrid.window_sizes),
        transfer_fractions=settings.get("transfer_fractions", "tuner",
                                        "transfer_fractions", _parse_floats,
                                        HyperGrid.transfer_fractions),
        diversity_weights=settings.get("diversity_weights", "tuner",
                                       "diversity_weights", _parse_floats,
                                       HyperGrid.diversity_weights),
        random_search_budget=settings.get("budget", "tuner", "budget", int, 9),
    )
    ratio = settings.get("validation_ratio", "tuner", "validation_ratio", float, 0.3)
    seed = settings.get("seed", "ensemble", "seed", int, 0)
    train, validation = split_train_validation(series, ratio,
                                               min_length=max(grid.window_sizes))
    cae_config = _build_cae_config(settings, series.dims,
                                   window_size=max(grid.window_sizes))
    ens_config = _build_ens_config(settings, require_hyper=False)
    result = select_hyperparameters(
        grid, train, validation, budget=grid.random_search_budget, seed=seed,
        cae_config=cae_config, ens_config=ens_config,
        workers=settings.get("workers", "run", "workers", int, 1),
    )

    header = ["stage", "window_size", "transfer_fraction", "diversity_weight",
              "validation_error", "seconds"]
    rows = [[t.stage, t.window_size, _fmt(t.transfer_fraction),
             _fmt(t.diversity_weight), _fmt(t.error), _fmt(t.seconds)]
            for t in result.trials]
    w_opt, b_opt, l_opt = result.selected
    rows.append(["selected", w_opt, _fmt(b_opt), _fmt(l_opt), "", ""])
    _write_csv(out / "tuning_trials.csv", header, rows)

    selected = {
        "window_size": int(w_opt),
        "transfer_fraction": float(b_opt),
        "diversity_weight": float(l_opt),
        "defaults": {
            "window_size": int(result.defaults[0]),
            "transfer_fraction": float(result.defaults[1]),
            "diversity_weight": float(result.defaults[2]),
        },
    }
    with open(out / "selected.json", "w", encoding="utf-8") as fh:
        json.dump(selected, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"selected window_size={w_opt} transfer_fraction={b_opt} "
          f"diversity_weight={l_opt}")
    return EXIT_OK


def _apply_tuning(settings: Settings) -> None:
    tuning = getattr(settings.args, "tuning", None)
    if not tuning:
        return
    path = Path(tuning) / "selected.json"
    if not path.exists():
        raise ConfigError(f"{path} not found (pass a tune output directory)")
    with open(path, encoding="utf-8") as fh:
        selected = json.load(fh)
    for flag, key in (("window_size", "window_size"),
                      ("transfer_fraction", "transfer_fraction"),
                      ("diversity_weight", "diversity_weight")):
        if getattr(settings.args, flag, None) is None:
            setattr(settings.args, flag, selected[key])
    settings.args.window_size = int(settings.args.window_size)


def cmd_train(args) -> int:
    settings = Settings(args)
    out = _out_dir(settings)
    _apply_tuning(settings)
    series = _load_train_series(settings)

    no_rescaling = settings.get_flag("no_rescaling", "data", "no_rescaling")
    scale = None
    if not no_rescaling:
        scale = zscore_fit(series)
        series = zscore_apply(series, scale)

    cae_config = _build_cae_config(settings, series.dims)
    ens_config = _build_ens_config(settings, require_hyper=True)
    state = train_ensemble(series, cae_config, ens_config)
    state.scale = scale
    save_ensemble(state, out)
    final = state.history[-1][-1]
    print(f"trained {len(state.models)} models; final loss {final.loss:.6f}; "
          f"checkpoint in {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    settings = Settings(args)
    out = _out_dir(settings)
    state = load_ensemble(Path(args.checkpoint))
    requested_w = getattr(args, "window_size", None)
    if requested_w is not None and requested_w != state.cae_config.window_size:
        raise ConfigError(
            f"window size mismatch: checkpoint has {state.cae_config.window_size}, "
            f"request asked for {requested_w}"
        )
    series = _load_test_series(settings)
    if state.scale is not None:
        series = zscore_apply(series, state.scale)
    result = score_series(state, series,
                          workers=settings.get("workers", "run", "workers", int, 1))

    per_model = bool(getattr(args, "per_model", False))
    header = ["index", "score"]
    if per_model:
        header += [f"score_model_{m}" for m in range(1, result.per_model.shape[0] + 1)]
    rows = []
    for i in range(result.scores.size):
        row = [i, _fmt(result.scores[i])]
        if per_model:
            row += [_fmt(v) for v in result.per_model[:, i]]
        rows.append(row)
    _write_csv(out / "scores.csv", header, rows)
    print(f"wrote {out / 'scores.csv'} ({result.scores.size} rows)")
    return EXIT_OK


def _read_scores(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "score" not in reader.fieldnames:
            raise DataError(f"{path}: missing `score` column")
        try:
            return np.array([float(row["score"]) for row in reader])
        except ValueError as exc:
            raise DataError(f"{path}: malformed score value: {exc}") from exc


def cmd_evaluate(args) -> int:
    settings = Settings(args)
    out = _out_dir(settings)
    scores = _read_scores(args.scores)
    series = _load_test_series(settings)
    if series.labels is None:
        raise DataError("evaluate requires a labeled test CSV")
    labels = series.labels
    if scores.size != labels.size:
        raise DataError(
            f"scores ({scores.size}) and test rows ({labels.size}) differ in length"
        )

    rule = settings.get("threshold_rule", "evaluate", "threshold_rule", str, "best-f1")
    if rule not in ("best-f1", "top-k"):
        raise ConfigError(f"threshold rule must be best-f1 or top-k, got {rule!r}")
    k_percent = settings.get("k_percent", "evaluate", "k_percent", float, 1.0)

    best = metrics.best_f1(scores, labels)
    topk_eps = metrics.topk_threshold(scores, k_percent)
    topk = metrics.report_at(scores, labels, topk_eps, "top_k", k_percent)
    chosen = best if rule == "best-f1" else topk

    header = ["rule", "threshold", "k_percent",
              "precision", "recall", "f1", "pr_auc", "roc_auc"]
    def report_row(report):
        return [report.threshold_rule, _fmt(report.threshold),
                "" if report.k_percent is None else _fmt(report.k_percent),
                _fmt(report.precision), _fmt(report.recall), _fmt(report.f1),
                _fmt(report.pr_auc), _fmt(report.roc_auc)]
    _write_csv(out / "report.csv", header, [report_row(best), report_row(topk)])

    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{'rule':<10}{'Precision':>11}{'Recall':>11}{'F1':>11}"
                 f"{'PR':>11}{'ROC':>11}\n")
        for report in (best, topk):
            fh.write(f"{report.threshold_rule:<10}"
                     f"{report.precision:>11.4f}{report.recall:>11.4f}"
                     f"{report.f1:>11.4f}{report.pr_auc:>11.4f}"
                     f"{report.roc_auc:>11.4f}\n")

    _write_csv(out / "pr_curve.csv", ["recall", "precision"],
               [[_fmt(r), _fmt(p)] for r, p in metrics.pr_curve(scores, labels)])
    _write_csv(out / "roc_curve.csv", ["fpr", "tpr"],
               [[_fmt(f), _fmt(t)] for f, t in metrics.roc_curve(scores, labels)])

    sweep_rows = []
    for k in K_SWEEP_RANGE:
        eps = metrics.topk_threshold(scores, float(k))
        precision, recall, f1 = metrics.prf_at(scores, labels, eps)
        sweep_rows.append([k, _fmt(precision), _fmt(recall), _fmt(f1)])
    _write_csv(out / "k_sweep.csv", ["k_percent", "precision", "recall", "f1"],
               sweep_rows)

    print(f"{chosen.threshold_rule}: precision={chosen.precision:.4f} "
          f"recall={chosen.recall:.4f} f1={chosen.f1:.4f} "
          f"pr_auc={chosen.pr_auc:.4f} roc_auc={chosen.roc_auc:.4f}")
    return EXIT_OK


def cmd_diversity(args) -> int:
    settings = Settings(args)
    out = _out_dir(settings)
    series = _load_test_series(settings)
    rows = []
    for label, directory in (("checkpoint", args.checkpoint),
                             ("checkpoint2", getattr(args, "checkpoint2", None))):
        if directory is None:
            continue
        state = load_ensemble(Path(directory))
        scoped = zscore_apply(series, state.scale) if state.scale is not None else series
        try:
            value = ens_mod.mean_window_diversity(state, scoped)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        rows.append([label, str(directory), _fmt(value)])
        print(f"{label}: mean ensemble diversity {value:.6f}")
    _write_csv(out / "diversity.csv", ["which", "path", "ensemble_diversity"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convens",
        description="Diversity-driven convolutional autoencoder ensembles "
                    "for time series outlier detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="max concurrent workers")

    def model_flags(p):
        p.add_argument("--window-size", dest="window_size", type=int)
        p.add_argument("--embed-dim", dest="embed_dim", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--kernel-size", dest="kernel_size", type=int)
        p.add_argument("--no-attention", dest="no_attention", action="store_true")

    def ensemble_flags(p):
        p.add_argument("--models", type=int)
        p.add_argument("--epochs-per-model", dest="epochs_per_model", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--transfer-fraction", dest="transfer_fraction", type=float)
        p.add_argument("--diversity-weight", dest="diversity_weight", type=float)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--no-diversity", dest="no_diversity", action="store_true")
        p.add_argument("--no-ensemble", dest="no_ensemble", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic labeled series CSV")
    common(p)
    p.add_argument("--length", type=int)
    p.add_argument("--dims", type=int)
    p.add_argument("--contamination", type=float)
    p.add_argument("--spike-magnitude", dest="spike_magnitude", type=float)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--name")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tune", help="unsupervised hyperparameter selection")
    common(p)
    model_flags(p)
    ensemble_flags(p)
    p.add_argument("--train")
    p.add_argument("--budget", type=int)
    p.add_argument("--validation-ratio", dest="validation_ratio", type=float)
    p.add_argument("--window-sizes", dest="window_sizes", type=_parse_ints)
    p.add_argument("--transfer-fractions", dest="transfer_fractions", type=_parse_floats)
    p.add_argument("--diversity-weights", dest="diversity_weights", type=_parse_floats)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="train an ensemble and write a checkpoint")
    common(p)
    model_flags(p)
    ensemble_flags(p)
    p.add_argument("--train")
    p.add_argument("--tuning", help="tune output directory with selected.json")
    p.add_argument("--no-rescaling", dest="no_rescaling", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a series with a trained checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test")
    p.add_argument("--window-size", dest="window_size", type=int,
                   help="assert the checkpoint was trained at this window size")
    p.add_argument("--per-model", dest="per_model", action="store_true",
                   help="include one score column per basic model")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="evaluate scores against labels")
    common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--test")
    p.add_argument("--threshold-rule", dest="threshold_rule",
                   choices=["best-f1", "top-k"])
    p.add_argument("--k-percent", dest="k_percent", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diversity", help="report ensemble diversity on a series")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--checkpoint2")
    p.add_argument("--test")
    p.set_defaults(func=cmd_diversity)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
