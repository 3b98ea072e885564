"""Convolutional sequence-to-sequence autoencoder.

One basic model maps an embedded window X (w x D') through a GLU-gated
convolutional encoder stack, a causal decoder stack with per-layer
encoder injection and global attention, and a gated reconstruction head
back to w x D'. The shared embedding front-end maps raw windows (w x D)
into the D'-dimensional space where reconstruction errors are measured.

Parameters are flat name->Tensor dicts so they can be checkpointed,
transferred tensor-by-tensor, and updated by Adam without bespoke
container types.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class CaeConfig:
    window_size: int
    input_dim: int
    embed_dim: int = 256
    layers: int = 10
    kernel_size: int = 3
    use_attention: bool = True

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError(f"window_size must be >= 2, got {self.window_size}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")

    def with_window(self, window_size: int) -> "CaeConfig":
        return replace(self, window_size=window_size)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...],
             fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _conv_block(rng, prefix: str, c_in: int, c_out: int, k: int,
                params: dict[str, Tensor]) -> None:
    params[f"{prefix}/kernel"] = Tensor(
        _uniform(rng, (c_out, c_in, k), c_in * k, c_out * k), requires_grad=True)
    params[f"{prefix}/bias"] = Tensor(np.zeros(c_out), requires_grad=True)


def _glu_block(rng, prefix: str, channels: int, k: int, params: dict[str, Tensor]) -> None:
    _conv_block(rng, f"{prefix}/content", channels, channels, k, params)
    _conv_block(rng, f"{prefix}/gate", channels, channels, k, params)


def init_embedding(cfg: CaeConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, dp = cfg.input_dim, cfg.embed_dim
    return {
        "embedding/value_weight": Tensor(_uniform(rng, (dp, d), d, dp), requires_grad=True),
        "embedding/value_bias": Tensor(np.zeros(dp), requires_grad=True),
        "embedding/position_weight": Tensor(_uniform(rng, (dp, 1), 1, dp), requires_grad=True),
        "embedding/position_bias": Tensor(np.zeros(dp), requires_grad=True),
    }


def init_cae(cfg: CaeConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh encoder/decoder/reconstruction parameters (no embedding)."""
    dp, k = cfg.embed_dim, cfg.kernel_size
    params: dict[str, Tensor] = {}
    for layer in range(cfg.layers):
        _glu_block(rng, f"encoder/{layer}/glu", dp, k, params)
        _conv_block(rng, f"encoder/{layer}", dp, dp, k, params)
    # The decoder stack is one layer deeper than the encoder so that it
    # consumes every encoder state E^(0) .. E^(L), E^(0) being the input.
    for layer in range(cfg.layers + 1):
        _glu_block(rng, f"decoder/{layer}/glu", dp, k, params)
        _conv_block(rng, f"decoder/{layer}", dp, dp, k, params)
        params[f"decoder/{layer}/attn_weight"] = Tensor(
            _uniform(rng, (dp, dp), dp, dp), requires_grad=True)
        params[f"decoder/{layer}/attn_bias"] = Tensor(np.zeros(dp), requires_grad=True)
    _glu_block(rng, "recon/glu", dp, k, params)
    _conv_block(rng, "recon", dp, dp, k, params)
    return params


def _glu(x: Tensor, params: dict[str, Tensor], prefix: str, padding: str) -> Tensor:
    content = ad.conv1d(x, params[f"{prefix}/content/kernel"],
                        params[f"{prefix}/content/bias"], padding)
    gate = ad.conv1d(x, params[f"{prefix}/gate/kernel"],
                     params[f"{prefix}/gate/bias"], padding)
    return ad.mul(content, ad.sigmoid(gate))


def embed(window: Tensor, emb: dict[str, Tensor]) -> Tensor:
    """Map a raw window (..., w, D) to (..., w, D'): per-observation affine+tanh
    content embedding plus a position embedding of t/w for 1-based t."""
    w = window.shape[-2]
    content = ad.tanh(ad.linear(window, emb["embedding/value_weight"],
                                emb["embedding/value_bias"]))
    positions = Tensor((np.arange(1, w + 1, dtype=np.float64) / w).reshape(w, 1))
    pos = ad.tanh(ad.linear(positions, emb["embedding/position_weight"],
                            emb["embedding/position_bias"]))
    return ad.add(content, pos)


def encode(x: Tensor, params: dict[str, Tensor], cfg: CaeConfig) -> list[Tensor]:
    """Run the encoder stack; returns all states [E^(0)=X, E^(1), .., E^(L)]."""
    states = [x]
    e = x
    for layer in range(cfg.layers):
        gated = _glu(e, params, f"encoder/{layer}/glu", "same")
        conv = ad.conv1d(gated, params[f"encoder/{layer}/kernel"],
                         params[f"encoder/{layer}/bias"], "same")
        e = ad.add(ad.tanh(conv), e)  # residual
        states.append(e)
    return states


def attend(d_layer: Tensor, e_layer: Tensor, attn_weight: Tensor,
           attn_bias: Tensor) -> Tensor:
    """Global attention update: a state summary of each decoder position is
    dotted against every encoder position, softmax-normalized, and the
    resulting convex combination of encoder states is added back."""
    summary = ad.linear(d_layer, attn_weight, attn_bias)
    scores = ad.matmul(summary, ad.transpose_last2(e_layer))
    alpha = ad.softmax_rows(scores)
    context = ad.matmul(alpha, e_layer)
    return ad.add(d_layer, context)


def decode(x: Tensor, encoder_states: list[Tensor], params: dict[str, Tensor],
           cfg: CaeConfig) -> Tensor:
    """Run the causal decoder stack over D^(0)=X. Layer l injects the
    same-layer encoder state inside the activation, adds the residual,
    then applies the attention update against that encoder state."""
    if len(encoder_states) != cfg.layers + 1:
        raise ValueError(
            f"decode: expected {cfg.layers + 1} encoder states, got {len(encoder_states)}"
        )
    d = x
    for layer in range(cfg.layers + 1):
        gated = _glu(d, params, f"decoder/{layer}/glu", "causal")
        conv = ad.conv1d(gated, params[f"decoder/{layer}/kernel"],
                         params[f"decoder/{layer}/bias"], "causal")
        act = ad.tanh(ad.add(conv, encoder_states[layer]))
        d = ad.add(act, d)  # residual
        if cfg.use_attention:
            d = attend(d, encoder_states[layer],
                       params[f"decoder/{layer}/attn_weight"],
                       params[f"decoder/{layer}/attn_bias"])
    return d


def reconstruct(d_final: Tensor, params: dict[str, Tensor], cfg: CaeConfig) -> Tensor:
    gated = _glu(d_final, params, "recon/glu", "same")
    conv = ad.conv1d(gated, params["recon/kernel"], params["recon/bias"], "same")
    return ad.tanh(conv)


def reconstruct_embedded(x: Tensor, params: dict[str, Tensor], cfg: CaeConfig) -> Tensor:
    """Encoder + decoder + reconstruction head on an already-embedded window."""
    states = encode(x, params, cfg)
    d = decode(x, states, params, cfg)
    return reconstruct(d, params, cfg)


def cae_forward(window: Tensor, emb: dict[str, Tensor], params: dict[str, Tensor],
                cfg: CaeConfig) -> tuple[Tensor, Tensor]:
    """Full pipeline: returns (embedded input X, reconstruction X_hat)."""
    x = embed(window, emb)
    return x, reconstruct_embedded(x, params, cfg)


def window_errors(x, x_hat) -> np.ndarray:
    """Per-time-step squared L2 reconstruction error ||x_t - x_hat_t||^2.

    Accepts tensors or arrays of shape (..., w, D'); returns (..., w).
    """
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    b = x_hat.data if isinstance(x_hat, Tensor) else np.asarray(x_hat)
    if a.shape != b.shape:
        raise ValueError(f"window_errors shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).sum(axis=-1)
