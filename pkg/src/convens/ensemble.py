"""Diversity-driven ensemble construction, training, and scoring.

Basic models are generated sequentially. The first trains jointly with
the shared embedding front-end on plain reconstruction; each later model
starts from a random fraction of its predecessor's parameter tensors and
trains against a diversity-driven objective: reconstruction error minus
a weighted squared distance from the frozen average of the models built
so far. Outlier scores are the per-observation median of the models'
stitched reconstruction errors.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as cae
from .autodiff import Tensor, no_grad
from .checkpoint import save_params, load_params
from .data import LabeledSeries, ScaleParams, make_windows
from .errors import DataError, DivergenceError
from .model import CaeConfig

# rng stream tags, combined with (seed, model_index)
_INIT, _TRANSFER, _SHUFFLE = 0, 1, 2

_SCORE_CHUNK = 256


@dataclass(frozen=True)
class EnsembleConfig:
    transfer_fraction: float
    diversity_weight: float
    n_models: int = 8
    epochs_per_model: int = 50
    batch_size: int = 64
    seed: int = 0
    learning_rate: float = 1e-3
    independent_models: bool = False  # train every model fresh, no transfer, weight 0

    def __post_init__(self):
        if not 0.0 <= self.transfer_fraction <= 1.0:
            raise ValueError(f"transfer_fraction must be in [0, 1], got {self.transfer_fraction}")
        if self.diversity_weight < 0.0:
            raise ValueError(f"diversity_weight must be >= 0, got {self.diversity_weight}")
        if self.n_models < 1:
            raise ValueError(f"n_models must be >= 1, got {self.n_models}")
        if self.epochs_per_model < 1 or self.batch_size < 1:
            raise ValueError("epochs_per_model and batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    recon_error: float
    diversity: float


@dataclass
class EnsembleState:
    cae_config: CaeConfig
    ens_config: EnsembleConfig
    embedding: dict[str, Tensor]
    models: list[dict[str, Tensor]]
    history: list[list[EpochStats]] = field(default_factory=list)
    scale: ScaleParams | None = None


@dataclass
class ScoreSeries:
    """Per-observation outlier scores aligned 1:1 with the source series."""

    scores: np.ndarray                 # (C,)
    per_model: np.ndarray | None = None  # (M, C) raw stitched errors


# ---------------------------------------------------------------------------
# Losses and diversity
# ---------------------------------------------------------------------------

def loss_first(x: Tensor, x_hat: Tensor) -> Tensor:
    """Reconstruction objective: squared error normalized by batch * window
    so the diversity weight keeps one scale across window sizes."""
    divisor = float(np.prod(x.shape[:-1]))
    return ad.scale(ad.sq_error(x_hat, x, "sum"), 1.0 / divisor)


def loss_diverse(x: Tensor, x_hat: Tensor, ensemble_avg, diversity_weight: float) -> Tensor:
    """Diversity-driven objective: reconstruction term minus the weighted
    distance from the frozen ensemble average. Gradients flow only through
    x_hat.

    The diversity term is the per-element mean squared distance (an extra
    1/embed_dim relative to the reconstruction term); with a shared scale,
    every weight >= 1 makes the objective concave in the reconstruction and
    later models collapse to the activation bounds.
    """
    if diversity_weight < 0.0:
        raise ValueError(f"diversity_weight must be >= 0, got {diversity_weight}")
    avg = ensemble_avg if isinstance(ensemble_avg, Tensor) else Tensor(ensemble_avg)
    j_term = loss_first(x, x_hat)
    k_term = ad.sq_error(x_hat, avg.detach(), "mean")
    return ad.sub(j_term, ad.scale(k_term, diversity_weight))


def ensemble_average(models: list[dict[str, Tensor]], x, cfg: CaeConfig) -> np.ndarray:
    """Mean reconstruction over basic models; computed without gradients so
    nothing flows into already-trained members."""
    if not models:
        raise ValueError("ensemble_average of an empty model list")
    xt = x if isinstance(x, Tensor) else Tensor(x)
    with no_grad():
        total = cae.reconstruct_embedded(xt, models[0], cfg).data.copy()
        for params in models[1:]:
            total += cae.reconstruct_embedded(xt, params, cfg).data
    return total / len(models)


def diversity_pair(out_m, out_n) -> float:
    """L2 distance between two models' reconstructions of the same input."""
    a = out_m.data if isinstance(out_m, Tensor) else np.asarray(out_m)
    b = out_n.data if isinstance(out_n, Tensor) else np.asarray(out_n)
    if a.shape != b.shape:
        raise ValueError(f"diversity_pair shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def diversity_ensemble(models: list[dict[str, Tensor]], x, cfg: CaeConfig) -> float:
    """Mean pairwise diversity over all unordered model pairs."""
    m = len(models)
    if m < 2:
        raise ValueError(f"ensemble diversity needs at least 2 models, got {m}")
    xt = x if isinstance(x, Tensor) else Tensor(x)
    with no_grad():
        outputs = [cae.reconstruct_embedded(xt, p, cfg).data for p in models]
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            total += diversity_pair(outputs[i], outputs[j])
    return 2.0 * total / (m * (m - 1))


def mean_window_diversity(state: "EnsembleState", series: LabeledSeries) -> float:
    """Ensemble diversity computed per window and averaged over all windows
    of `series` (already rescaled into the model's input space)."""
    m = len(state.models)
    if m < 2:
        raise ValueError(f"ensemble diversity needs at least 2 models, got {m}")
    cfg = state.cae_config
    windows = make_windows(series, cfg.window_size)
    with no_grad():
        x_all = cae.embed(Tensor(windows.windows), state.embedding).data
        outputs = []
        for params in state.models:
            chunks = [
                cae.reconstruct_embedded(Tensor(x_all[lo : lo + _SCORE_CHUNK]),
                                         params, cfg).data
                for lo in range(0, x_all.shape[0], _SCORE_CHUNK)
            ]
            outputs.append(np.concatenate(chunks))
    per_window = np.zeros(x_all.shape[0])
    for i in range(m):
        for j in range(i + 1, m):
            diff = outputs[i] - outputs[j]
            per_window += np.sqrt((diff * diff).sum(axis=(1, 2)))
    per_window *= 2.0 / (m * (m - 1))
    return float(per_window.mean())


# ---------------------------------------------------------------------------
# Parameter transfer
# ---------------------------------------------------------------------------

def transfer_params(prev: dict[str, Tensor], transfer_fraction: float, seed,
                    cfg: CaeConfig) -> dict[str, Tensor]:
    """New-model parameters where each named tensor is, independently with
    probability `transfer_fraction`, a copy of the predecessor's tensor and
    otherwise freshly initialized. Everything stays trainable."""
    if not 0.0 <= transfer_fraction <= 1.0:
        raise ValueError(f"transfer_fraction must be in [0, 1], got {transfer_fraction}")
    rng = np.random.default_rng(seed)
    params = cae.init_cae(cfg, rng)
    draws = rng.random(len(params))
    for name, u in zip(list(params), draws):
        if u < transfer_fraction:
            params[name] = Tensor(prev[name].data.copy(), requires_grad=True)
    return params


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def _train_one_model(model_index: int, params: dict[str, Tensor],
                     trainable: dict[str, Tensor], get_batch, n_batches_src: int,
                     ens: EnsembleConfig, cfg: CaeConfig) -> list[EpochStats]:
    opt = ad.adam_init(trainable, lr=ens.learning_rate)
    stats: list[EpochStats] = []
    for epoch in range(ens.epochs_per_model):
        rng = np.random.default_rng([ens.seed, model_index, _SHUFFLE, epoch])
        sums = np.zeros(3)
        n_batches = 0
        for idx in _batches(n_batches_src, ens.batch_size, rng):
            x, avg = get_batch(idx)
            ad.zero_grads(trainable)
            x_hat = cae.reconstruct_embedded(x, params, cfg)
            j_term = loss_first(x.detach(), x_hat)
            if avg is None:
                loss = j_term
                k_val = 0.0
            else:
                k_term = ad.sq_error(x_hat, Tensor(avg), "mean")
                loss = ad.sub(j_term, ad.scale(k_term, ens.diversity_weight))
                k_val = float(k_term.data)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise DivergenceError(model_index, epoch, loss_val)
            ad.backward(loss)
            ad.adam_step(trainable, opt)
            sums += (loss_val, float(j_term.data), k_val)
            n_batches += 1
        mean = sums / n_batches
        stats.append(EpochStats(epoch, float(mean[0]), float(mean[1]), float(mean[2])))
    return stats


def train_ensemble(train: LabeledSeries, cae_config: CaeConfig,
                   ens_config: EnsembleConfig) -> EnsembleState:
    """Sequentially build and train the ensemble's basic models.

    Model 1 trains with plain reconstruction loss, jointly with the shared
    embedding, which is frozen afterwards. Model i > 1 starts from a
    transferred parameter fraction and trains against the diversity-driven
    objective, with the frozen average of models 1..i-1 as the diversity
    target. Labels on `train`, if any, are ignored.
    """
    if train.dims != cae_config.input_dim:
        raise DataError(
            f"series has D={train.dims} but model expects D={cae_config.input_dim}"
        )
    windows = make_windows(train, cae_config.window_size)
    raw = windows.windows
    n_win = windows.count
    ens = ens_config
    cfg = cae_config

    # Model 1: embedding trains jointly; the reconstruction target is the
    # current embedding output, treated as a constant per step.
    embedding = cae.init_embedding(cfg, np.random.default_rng([ens.seed, 0, _INIT]))
    params = cae.init_cae(cfg, np.random.default_rng([ens.seed, 1, _INIT]))

    def batch_model1(idx):
        x = cae.embed(Tensor(raw[idx]), embedding)
        return x, None

    history = [_train_one_model(1, params, {**embedding, **params},
                                batch_model1, n_win, ens, cfg)]
    models = [params]

    if ens.n_models > 1:
        with no_grad():
            x_all = cae.embed(Tensor(raw), embedding).data  # embedding frozen from here on

        for i in range(2, ens.n_models + 1):
            if ens.independent_models:
                params = cae.init_cae(cfg, np.random.default_rng([ens.seed, i, _INIT]))
                avg_all = None
            else:
                params = transfer_params(models[-1], ens.transfer_fraction,
                                         [ens.seed, i, _TRANSFER], cfg)
                avg_all = _forward_mean(models, x_all, cfg)

            def batch_later(idx, avg_all=avg_all):
                x = Tensor(x_all[idx])
                if avg_all is None:
                    return x, None
                return x, avg_all[idx]

            history.append(_train_one_model(i, params, params, batch_later,
                                            n_win, ens, cfg))
            models.append(params)

    return EnsembleState(cae_config=cfg, ens_config=ens, embedding=embedding,
                         models=models, history=history)


def _forward_mean(models: list[dict[str, Tensor]], x_all: np.ndarray,
                  cfg: CaeConfig) -> np.ndarray:
    """Frozen ensemble average over every window, computed once per generation."""
    total = np.zeros_like(x_all)
    with no_grad():
        for params in models:
            for lo in range(0, x_all.shape[0], _SCORE_CHUNK):
                chunk = x_all[lo : lo + _SCORE_CHUNK]
                total[lo : lo + _SCORE_CHUNK] += cae.reconstruct_embedded(
                    Tensor(chunk), params, cfg).data
    return total / len(models)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def _stitch(errors: np.ndarray, length: int) -> np.ndarray:
    """Assemble per-observation errors from per-window errors (B, w): the
    first window supplies every position, each later window only its last."""
    w = errors.shape[1]
    out = np.empty(length)
    out[:w] = errors[0]
    out[w:] = errors[1:, -1]
    return out


def _model_window_errors(x_all: np.ndarray, params: dict[str, Tensor],
                         cfg: CaeConfig) -> np.ndarray:
    errs = np.empty(x_all.shape[:2])
    with no_grad():
        for lo in range(0, x_all.shape[0], _SCORE_CHUNK):
            chunk = x_all[lo : lo + _SCORE_CHUNK]
            x_hat = cae.reconstruct_embedded(Tensor(chunk), params, cfg).data
            errs[lo : lo + chunk.shape[0]] = cae.window_errors(chunk, x_hat)
    return errs


def score_series(state: EnsembleState, series: LabeledSeries,
                 keep_per_model: bool = True, workers: int = 1) -> ScoreSeries:
    """Median-of-models outlier score for every observation of `series`.

    The series must already be in the model's input space (rescaled the
    same way as the training data).
    """
    cfg = state.cae_config
    if series.length < cfg.window_size:
        raise DataError(
            f"series length {series.length} < window size {cfg.window_size}"
        )
    windows = make_windows(series, cfg.window_size)
    with no_grad():
        x_all = cae.embed(Tensor(windows.windows), state.embedding).data

    def one_model(params):
        return _stitch(_model_window_errors(x_all, params, cfg), series.length)

    if workers > 1 and len(state.models) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stitched = list(pool.map(one_model, state.models))
    else:
        stitched = [one_model(p) for p in state.models]

    per_model = np.stack(stitched)
    scores = np.median(per_model, axis=0)
    return ScoreSeries(scores=scores, per_model=per_model if keep_per_model else None)


# ---------------------------------------------------------------------------
# Checkpoint directory
# ---------------------------------------------------------------------------

_MANIFEST = "manifest.json"
_LOSS_CURVES = "loss_curves.csv"
_EMBEDDING = "embedding.npz"


def save_ensemble(state: EnsembleState, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arch = asdict(state.cae_config)
    save_params(directory / _EMBEDDING, state.embedding,
                {"architecture": arch, "seed": state.ens_config.seed})
    for i, params in enumerate(state.models, start=1):
        save_params(directory / f"model_{i:03d}.npz", params,
                    {"architecture": arch, "seed": state.ens_config.seed,
                     "model_index": i})
    manifest = {
        "cae_config": arch,
        "ens_config": asdict(state.ens_config),
        "n_models": len(state.models),
        "scale": None if state.scale is None else {
            "mean": state.scale.mean.tolist(),
            "std": state.scale.std.tolist(),
        },
    }
    with open(directory / _MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(directory / _LOSS_CURVES, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "epoch", "loss", "recon_error", "diversity"])
        for i, epochs in enumerate(state.history, start=1):
            for s in epochs:
                writer.writerow([i, s.epoch, repr(s.loss), repr(s.recon_error),
                                 repr(s.diversity)])


def load_ensemble(directory) -> EnsembleState:
    directory = Path(directory)
    manifest_path = directory / _MANIFEST
    if not manifest_path.exists():
        raise DataError(f"{directory}: not an ensemble checkpoint (no {_MANIFEST})")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = CaeConfig(**manifest["cae_config"])
    ens = EnsembleConfig(**manifest["ens_config"])

    def to_tensors(arrays):
        return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}

    emb_arrays, emb_meta = load_params(directory / _EMBEDDING)
    if emb_meta.get("architecture") != manifest["cae_config"]:
        raise DataError(f"{directory}: embedding architecture disagrees with manifest")
    models = []
    for i in range(1, manifest["n_models"] + 1):
        arrays, _ = load_params(directory / f"model_{i:03d}.npz")
        models.append(to_tensors(arrays))

    history: list[list[EpochStats]] = [[] for _ in models]
    curves = directory / _LOSS_CURVES
    if curves.exists():
        with open(curves, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                history[int(row["model"]) - 1].append(EpochStats(
                    int(row["epoch"]), float(row["loss"]),
                    float(row["recon_error"]), float(row["diversity"])))

    scale = None
    if manifest.get("scale") is not None:
        scale = ScaleParams(mean=np.array(manifest["scale"]["mean"]),
                            std=np.array(manifest["scale"]["std"]))
    return EnsembleState(cae_config=cfg, ens_config=ens,
                         embedding=to_tensors(emb_arrays), models=models,
                         history=history, scale=scale)
