"""Core layer stacks shared by the encoders, decoders and the combiner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor

CORE_KINDS = ("circular-conv", "linear-conv", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int
    c_out: int
    kernel: int = 7
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in CORE_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.c_in < 1 or self.c_out < 1 or self.kernel < 1:
            raise ValueError("layer dimensions must be positive")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel}")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def core_specs(kind: str, channels: tuple[int, ...], activations: tuple[str, ...], kernel: int = 7) -> list[LayerSpec]:
    """Four-layer core. The dense variant keeps one map per layer except at the ends.

    A dense core layer maps the flattened ``c_in * h * w`` image to
    ``c_out * h * w`` values; hidden dense layers use a single channel so the
    widths stay at ``h * w``.
    """
    if len(activations) != len(channels) - 1:
        raise ValueError("need one activation per layer")
    if kind == "dense":
        channels = (channels[0],) + (1,) * (len(channels) - 2) + (channels[-1],)
    return [
        LayerSpec(kind, c_in, c_out, kernel, act)
        for c_in, c_out, act in zip(channels[:-1], channels[1:], activations)
    ]


def init_core(store: ParameterStore, prefix: str, specs: list[LayerSpec], hw: tuple[int, int],
              rng: np.random.Generator, zero_last: bool = False) -> None:
    h, w = hw
    for i, s in enumerate(specs):
        name = f"{prefix}{i}"
        last = zero_last and i == len(specs) - 1
        if s.kind == "dense":
            n_in, n_out = s.c_in * h * w, s.c_out * h * w
            shape = (n_out, n_in)
            weights = np.zeros(shape) if last else ad.glorot_uniform(rng, shape, n_in, n_out)
            store.add(f"{name}.w", weights)
            store.add(f"{name}.b", np.zeros(n_out))
        else:
            shape = (s.c_out, s.c_in, s.kernel, s.kernel)
            k2 = s.kernel * s.kernel
            weights = np.zeros(shape) if last else ad.glorot_uniform(rng, shape, s.c_in * k2, s.c_out * k2)
            store.add(f"{name}.w", weights)
            store.add(f"{name}.b", np.zeros(s.c_out))


def apply_layer(x: Tensor, store: ParameterStore, name: str, spec: LayerSpec, slope: float = 0.3) -> Tensor:
    w, b = store[f"{name}.w"], store[f"{name}.b"]
    if spec.kind == "circular-conv":
        y = ad.circular_conv2d(x, w, b)
    elif spec.kind == "linear-conv":
        y = ad.linear_conv2d(x, w, b)
    else:
        batch, _, h, wd = x.shape
        y = ad.dense(ad.reshape(x, (batch, -1)), w, b)
        y = ad.reshape(y, (batch, spec.c_out, h, wd))
    if spec.activation == "leaky-linear":
        return ad.leaky_linear(y, slope)
    return ad.ACTIVATIONS[spec.activation](y)


def apply_core(x: Tensor, store: ParameterStore, prefix: str, specs: list[LayerSpec], slope: float = 0.3) -> Tensor:
    for i, s in enumerate(specs):
        x = apply_layer(x, store, f"{prefix}{i}", s, slope)
    return x
