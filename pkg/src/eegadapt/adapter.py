"""Learned channel distillation: temporal convolutions mapping any E x T
input onto the encoder's fixed channel/timestep grid.

The stack is a plain cascade of valid 1-D convolutions; the constructor
verifies that the stride/kernel arithmetic lands exactly on the configured
output length rather than padding silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError, NumericError
from .nnops import conv1d_backward, conv1d_forward, conv1d_output_len, gelu, gelu_grad

__all__ = [
    "ConvLayerSpec",
    "AdapterConfig",
    "AdapterParams",
    "default_adapter_config",
    "init_adapter_params",
    "adapter_forward",
    "adapter_grad",
    "adapter_forward_batch",
    "adapter_backward_batch",
]

_ACTIVATIONS = ("gelu", "none")


@dataclass(frozen=True)
class ConvLayerSpec:
    out_maps: int
    kernel_len: int
    stride: int = 1
    activation: str = "gelu"

    def __post_init__(self):
        if self.out_maps < 1 or self.kernel_len < 1 or self.stride < 1:
            raise DomainError(f"invalid conv layer spec {self}")
        if self.activation not in _ACTIVATIONS:
            raise DomainError(f"activation must be one of {_ACTIVATIONS}")


@dataclass(frozen=True)
class AdapterConfig:
    """Shape contract of the distillation network.

    The layer cascade must transform ``in_timesteps`` into exactly
    ``out_timesteps`` and the final layer must emit ``out_channels`` maps.
    """

    in_channels: int
    in_timesteps: int
    out_channels: int = 23
    out_timesteps: int = 0
    layers: tuple[ConvLayerSpec, ...] = ()

    def __post_init__(self):
        if self.in_channels < 1 or self.in_timesteps < 1:
            raise DomainError("input shape must be positive")
        if not self.layers:
            raise ConfigurationError("adapter needs at least one conv layer")
        t = self.in_timesteps
        for i, layer in enumerate(self.layers):
            try:
                t = conv1d_output_len(t, layer.kernel_len, layer.stride)
            except DimensionError as exc:
                raise ConfigurationError(f"layer {i}: {exc}") from exc
        if t != self.out_timesteps:
            raise ConfigurationError(
                f"layer cascade yields {t} timesteps, configured out_timesteps "
                f"is {self.out_timesteps}"
            )
        if self.layers[-1].out_maps != self.out_channels:
            raise ConfigurationError(
                f"final layer emits {self.layers[-1].out_maps} maps, configured "
                f"out_channels is {self.out_channels}"
            )

    def feature_map_chain(self) -> list[int]:
        maps = [self.in_channels]
        for layer in self.layers:
            maps.append(layer.out_maps)
        return maps


@dataclass
class ConvLayerParams:
    w: np.ndarray  # (out_maps, in_maps, kernel_len)
    b: np.ndarray  # (out_maps,)


@dataclass
class AdapterParams:
    layers: list[ConvLayerParams] = field(default_factory=list)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"layers.{i}.w", layer.w))
            out.append((f"layers.{i}.b", layer.b))
        return out


def default_adapter_config(in_channels: int, in_timesteps: int,
                           out_channels: int = 23,
                           out_timesteps: int | None = None,
                           hidden_maps: int = 64) -> AdapterConfig:
    """Two-layer default: a wide temporal layer, then a channel-shaping layer.

    With ``out_timesteps`` unset the first layer uses kernel 15 / stride 1
    and the output is 16 samples shorter than the input. With it set, the
    first layer's kernel and stride are solved so the cascade lands exactly
    on the requested length; the candidate with kernel closest to 15 wins.
    """
    if out_timesteps is None:
        out_timesteps = in_timesteps - 16
        if out_timesteps < 1:
            raise ConfigurationError(
                f"input of {in_timesteps} steps is too short for the default "
                "kernel sizes; pass an explicit layer stack"
            )
        first = ConvLayerSpec(hidden_maps, 15, 1, "gelu")
    else:
        # Second layer is kernel 3 / stride 1, so the first layer must
        # produce out_timesteps + 2 samples: kernel = T - stride*(out + 1).
        best = None
        for stride in range(1, 65):
            kernel = in_timesteps - stride * (out_timesteps + 1)
            if 2 <= kernel <= 64:
                cand = (abs(kernel - 15), stride, kernel)
                if best is None or cand < best:
                    best = cand
        if best is None:
            raise ConfigurationError(
                f"no two-layer stack maps {in_timesteps} steps onto "
                f"{out_timesteps}; pass an explicit layer stack"
            )
        first = ConvLayerSpec(hidden_maps, best[2], best[1], "gelu")
    return AdapterConfig(
        in_channels=in_channels,
        in_timesteps=in_timesteps,
        out_channels=out_channels,
        out_timesteps=out_timesteps,
        layers=(first, ConvLayerSpec(out_channels, 3, 1, "none")),
    )


def init_adapter_params(cfg: AdapterConfig, rng: np.random.Generator) -> AdapterParams:
    """Uniform +-sqrt(1/fan_in) weights, zero biases."""
    params = AdapterParams()
    in_maps = cfg.in_channels
    for layer in cfg.layers:
        fan_in = in_maps * layer.kernel_len
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(layer.out_maps, in_maps, layer.kernel_len))
        params.layers.append(ConvLayerParams(w=w, b=np.zeros(layer.out_maps)))
        in_maps = layer.out_maps
    return params


def _check_params(cfg: AdapterConfig, params: AdapterParams) -> None:
    if len(params.layers) != len(cfg.layers):
        raise DimensionError(
            f"params carry {len(params.layers)} layers for a {len(cfg.layers)}-layer config"
        )


def adapter_forward_batch(x: np.ndarray, params: AdapterParams,
                          cfg: AdapterConfig, keep_cache: bool = False):
    """Run the cascade on a batch (N, E, T) -> (N, out_channels, out_timesteps).

    Returns (output, cache); the cache holds per-layer inputs and
    pre-activations for the backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.in_timesteps:
        raise DimensionError(
            f"expected batch of shape (N, {cfg.in_channels}, {cfg.in_timesteps}), "
            f"got {x.shape}"
        )
    _check_params(cfg, params)
    h = x
    cache = [] if keep_cache else None
    for spec, lp in zip(cfg.layers, params.layers):
        z = conv1d_forward(h, lp.w, lp.b, spec.stride)
        if keep_cache:
            cache.append((h, z))
        h = gelu(z) if spec.activation == "gelu" else z
    if not np.all(np.isfinite(h)):
        raise NumericError("adapter forward produced non-finite values")
    return h, cache


def adapter_backward_batch(cache, params: AdapterParams, cfg: AdapterConfig,
                           dout: np.ndarray):
    """Reverse-mode gradients for a batch; returns (grads dict, dx)."""
    grads: dict[str, np.ndarray] = {}
    dh = np.asarray(dout, dtype=np.float64)
    for i in reversed(range(len(cfg.layers))):
        spec = cfg.layers[i]
        x_in, z = cache[i]
        dz = dh * gelu_grad(z) if spec.activation == "gelu" else dh
        dh, dw, db = conv1d_backward(x_in, params.layers[i].w, spec.stride, dz)
        grads[f"layers.{i}.w"] = dw
        grads[f"layers.{i}.b"] = db
    return grads, dh


def adapter_forward(x: np.ndarray, params: AdapterParams,
                    cfg: AdapterConfig) -> np.ndarray:
    """Single-sample forward: (E, T) -> (out_channels, out_timesteps)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D sample, got shape {x.shape}")
    out, _ = adapter_forward_batch(x[None], params, cfg)
    return out[0]


def adapter_grad(x: np.ndarray, params: AdapterParams, cfg: AdapterConfig,
                 upstream: np.ndarray):
    """Gradients of the forward map contracted with ``upstream``.

    ``upstream`` must match the output shape; returns (grads dict keyed by
    parameter name, gradient with respect to x).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cfg.out_channels, cfg.out_timesteps):
        raise DimensionError(
            f"upstream shape {upstream.shape} does not match output "
            f"({cfg.out_channels}, {cfg.out_timesteps})"
        )
    x = np.asarray(x, dtype=np.float64)
    _, cache = adapter_forward_batch(x[None], params, cfg, keep_cache=True)
    grads, dx = adapter_backward_batch(cache, params, cfg, upstream[None])
    return grads, dx[0]
