"""Temporal perturbations and firing-rate hybridization of spike trains.

All trains are ``[T, B, C, H, W]`` tensors with time on axis 0.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, flip, mean_over_axis, mul, permute_axis0
from .errors import ContractError, DimensionError


def _check_train(x: Tensor) -> None:
    if x.ndim < 1 or x.shape[0] < 1:
        raise ContractError("a spike train needs at least one timestep")


def temporal_reverse(x: Tensor) -> Tensor:
    """Slot ``t`` of the result holds frame ``T+1-t`` of ``x`` (1-indexed)."""
    _check_train(x)
    return flip(x, axis=0)


def shuffle_order(T: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(T)


def temporal_shuffle(x: Tensor, seed: int) -> Tensor:
    """Permute the frames of ``x`` with a seeded uniform permutation.

    The same permutation is applied to every sample of the batch.
    """
    _check_train(x)
    return permute_axis0(x, shuffle_order(x.shape[0], seed))


def firing_rate(x: Tensor) -> Tensor:
    """Per-neuron mean over time, ``(1/T) * sum_t x_t``."""
    _check_train(x)
    return mean_over_axis(x, 0)


def star_hybridize(orig: Tensor, reversed_: Tensor) -> Tensor:
    """Hadamard product of the firing rates of two trains."""
    if orig.shape != reversed_.shape:
        raise DimensionError(f"star_hybridize: shape mismatch {orig.shape} vs {reversed_.shape}")
    return mul(firing_rate(orig), firing_rate(reversed_))


def binary_star(a, b) -> np.ndarray:
    """Elementwise product of two binary spike frames.

    Kept as a diagnostic: on 0/1 inputs the product can only remove ones.
    """
    a = np.asarray(a.data if isinstance(a, Tensor) else a)
    b = np.asarray(b.data if isinstance(b, Tensor) else b)
    if a.shape != b.shape:
        raise DimensionError(f"binary_star: shape mismatch {a.shape} vs {b.shape}")
    for name, arr in (("first", a), ("second", b)):
        if not np.all((arr == 0) | (arr == 1)):
            raise ContractError(f"binary_star: {name} operand is not binary")
    return a * b


def implicit_dim_count(d: int) -> int:
    """Number of distinct quadratic terms a star product induces on ``d`` channels plus bias."""
    if d < 1:
        raise ContractError(f"implicit_dim_count needs d >= 1, got {d}")
    return (d + 2) * (d + 1) // 2
