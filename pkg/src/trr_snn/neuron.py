"""Leaky integrate-and-fire neurons with a rectangular surrogate gradient.

Forward dynamics per timestep::

    H(t) = (1 - 1/tau) * H(t-1) + I(t)
    S(t) = 1 if H(t) >= threshold else 0
    H(t) <- H(t) - S(t) * threshold          # soft reset

Backward replaces dS/dH by ``1/a`` inside ``|H - threshold| < a/2`` and 0
elsewhere, and unrolls through the leak and the reset paths (full BPTT).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autograd import Tensor, add, make_result, scale, sub
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class LIFParams:
    tau: float = 2.0
    threshold: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if self.tau < 1.0:
            raise ContractError(f"tau must be >= 1, got {self.tau}")
        if self.threshold <= 0 or self.a <= 0:
            raise ContractError("threshold and surrogate width a must be positive")

    @property
    def decay(self) -> float:
        return 1.0 - 1.0 / self.tau


def lif_backward_local(membrane: float, params: LIFParams) -> float:
    """Rectangular surrogate for dS/dH evaluated at one membrane value."""
    return 1.0 / params.a if abs(membrane - params.threshold) < params.a / 2 else 0.0


def surrogate_grad(membrane: np.ndarray, params: LIFParams) -> np.ndarray:
    dtype = membrane.dtype.type
    inside = np.abs(membrane - dtype(params.threshold)) < dtype(params.a / 2)
    return inside.astype(membrane.dtype) / dtype(params.a)


def _fire(h: np.ndarray, params: LIFParams, smooth: bool) -> np.ndarray:
    dtype = h.dtype.type
    if smooth:
        # piecewise-linear ramp whose derivative is exactly the surrogate
        ramp = (h - dtype(params.threshold)) / dtype(params.a) + dtype(0.5)
        return np.clip(ramp, 0, 1).astype(h.dtype)
    return (h >= dtype(params.threshold)).astype(h.dtype)


def spike_fn(membrane: Tensor, params: LIFParams, smooth: bool = False) -> Tensor:
    """Heaviside spike generation with the surrogate derivative on the tape."""
    h = membrane.data
    sg = surrogate_grad(h, params)
    return make_result(_fire(h, params, smooth), (membrane,), "spike", lambda g: (g * sg,))


@dataclass
class LIFLayerState:
    params: LIFParams
    membrane: Optional[Tensor] = None
    smooth: bool = field(default=False)

    def reset(self) -> None:
        self.membrane = None


def lif_step(state: LIFLayerState, current: Tensor) -> Tensor:
    """Advance ``state`` by one timestep and return the emitted spikes.

    Built from tape primitives, so gradients flow through the leak and the
    reset exactly as in :func:`lif_sequence`.
    """
    if state.membrane is None:
        state.membrane = Tensor(np.zeros(current.shape))
    if state.membrane.shape != current.shape:
        raise DimensionError(f"lif_step: membrane {state.membrane.shape} vs current {current.shape}")
    params = state.params
    h = add(scale(state.membrane, params.decay), current)
    spikes = spike_fn(h, params, state.smooth)
    state.membrane = sub(h, scale(spikes, params.threshold))
    return spikes


def lif_sequence(currents: Tensor, params: LIFParams, smooth: bool = False,
                 record: Optional[dict] = None) -> Tensor:
    """Run a LIF population over ``currents[T, ...]`` from a zero membrane.

    Fused forward/backward: equivalent to ``T`` calls of :func:`lif_step` but
    with a single tape node. With ``smooth=True`` the step function is
    replaced by the ramp whose slope is the surrogate; the backward pass is
    then the exact gradient of that forward.
    """
    x = currents.data
    if x.ndim < 1 or x.shape[0] == 0:
        raise ContractError("lif_sequence needs at least one timestep")
    dtype = x.dtype.type
    decay = dtype(params.decay)
    threshold = dtype(params.threshold)
    pre_reset = np.empty_like(x)
    spikes = np.empty_like(x)
    h = np.zeros(x.shape[1:], dtype=x.dtype)
    for t in range(x.shape[0]):
        h = decay * h + x[t]
        pre_reset[t] = h
        s = _fire(h, params, smooth)
        spikes[t] = s
        h = h - s * threshold
    if record is not None:
        record["membrane_pre_reset"] = pre_reset
        record["membrane_final"] = h

    def backward(g):
        sg = surrogate_grad(pre_reset, params)
        dcurrent = np.empty_like(g)
        carry = np.zeros(g.shape[1:], dtype=g.dtype)
        for t in range(g.shape[0] - 1, -1, -1):
            dh = g[t] * sg[t] + carry * (1 - threshold * sg[t])
            dcurrent[t] = dh
            carry = decay * dh
        return (dcurrent,)

    return make_result(spikes, (currents,), "lif", backward)


class LIF:
    """A stateless spiking nonlinearity applied over the leading time axis."""

    def __init__(self, params: Optional[LIFParams] = None, smooth: bool = False):
        self.params = params or LIFParams()
        self.smooth = smooth

    def __call__(self, currents: Tensor) -> Tensor:
        return lif_sequence(currents, self.params, self.smooth)

    def __repr__(self) -> str:
        p = self.params
        return f"LIF(tau={p.tau}, threshold={p.threshold}, a={p.a})"


__all__ = [
    "LIF", "LIFLayerState", "LIFParams", "lif_backward_local", "lif_sequence",
    "lif_step", "spike_fn", "surrogate_grad",
]
