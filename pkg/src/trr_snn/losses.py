"""Task, consistency and composed training objectives.

All losses average over the batch. Only the consistency term is tempered;
the cross-entropy terms use the raw logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autograd import Tensor, exp, log_softmax, mul, scale, sub, sum_all
from .errors import ContractError, DimensionError


@dataclass
class LogitsPair:
    z: Tensor
    z_hat: Tensor
    z_tilde: Optional[Tensor] = None

    def __post_init__(self):
        for name in ("z_hat", "z_tilde"):
            other = getattr(self, name)
            if other is not None and other.shape != self.z.shape:
                raise DimensionError(f"LogitsPair: {name} shape {other.shape} != z shape {self.z.shape}")


@dataclass(frozen=True)
class TrrLossWeights:
    alpha: float = 0.5
    t_tem: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.t_tem <= 0:
            raise ContractError(f"t_tem must be positive, got {self.t_tem}")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    con: float
    hybrid_ce: float
    total: float
    alpha: float

    def recompose(self) -> float:
        """Rebuild the total from the components with the same float32 ops."""
        f = np.float32
        total = f(self.ce) * f(1.0 - self.alpha) + f(self.con) + f(self.hybrid_ce) * f(self.alpha)
        return float(total)


def _check_logits(z: Tensor) -> None:
    if z.ndim != 2:
        raise DimensionError(f"logits must be [B, C], got {z.shape}")


def tempered_softmax(z: Tensor, t_tem: float) -> Tensor:
    if t_tem <= 0:
        raise ContractError(f"temperature must be positive, got {t_tem}")
    _check_logits(z)
    return exp(log_softmax(scale(z, 1.0 / t_tem), axis=1))


def consistency_loss(z: Tensor, z_hat: Tensor, t_tem: float = 2.0, detach_original: bool = False) -> Tensor:
    """``t_tem**2 * KL(p || p_hat)`` between tempered softmaxes, batch-averaged.

    Gradients reach both branches unless ``detach_original`` is set, in which
    case the original-branch distribution acts as a fixed target.
    """
    if t_tem <= 0:
        raise ContractError(f"temperature must be positive, got {t_tem}")
    _check_logits(z)
    if z.shape != z_hat.shape:
        raise DimensionError(f"consistency_loss: shape mismatch {z.shape} vs {z_hat.shape}")
    if detach_original:
        z = z.detach()
    log_p = log_softmax(scale(z, 1.0 / t_tem), axis=1)
    log_p_hat = log_softmax(scale(z_hat, 1.0 / t_tem), axis=1)
    kl = sum_all(mul(exp(log_p), sub(log_p, log_p_hat)))
    return scale(kl, t_tem * t_tem / z.shape[0])


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    _check_logits(logits)
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"cross_entropy: labels shape {labels.shape} != ({batch},)")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractError(f"cross_entropy: labels must lie in [0, {classes})")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(batch), labels] = 1.0
    picked = sum_all(mul(Tensor(onehot), log_softmax(logits, axis=1)))
    return scale(picked, -1.0 / batch)


def tr_loss(pair: LogitsPair, labels, t_tem: float = 2.0) -> Tensor:
    """Reversal-only objective: cross-entropy plus consistency."""
    return cross_entropy(pair.z, labels) + consistency_loss(pair.z, pair.z_hat, t_tem)


def trr_total_loss(pair: LogitsPair, labels, w: TrrLossWeights, enable_consistency: bool = True,
                   detach_original: bool = False) -> tuple[Tensor, LossBreakdown]:
    """``(1-alpha)*CE(z) + L_con(z, z_hat) + alpha*CE(z_tilde)`` plus its components.

    Terms that are switched off (consistency disabled, ``alpha == 0``) are left
    out of the graph entirely, so the all-off objective is bit-identical to
    plain cross-entropy.
    """
    if w.alpha > 0 and pair.z_tilde is None:
        raise ContractError("alpha > 0 requires the hybridization logits z_tilde")
    ce = cross_entropy(pair.z, labels)
    total = scale(ce, 1.0 - w.alpha)
    con_value = 0.0
    if enable_consistency:
        con = consistency_loss(pair.z, pair.z_hat, w.t_tem, detach_original)
        total = total + con
        con_value = con.item()
    hybrid_value = 0.0
    if w.alpha > 0:
        hybrid = cross_entropy(pair.z_tilde, labels)
        total = total + scale(hybrid, w.alpha)
        hybrid_value = hybrid.item()
    breakdown = LossBreakdown(ce=ce.item(), con=con_value, hybrid_ce=hybrid_value,
                              total=total.item(), alpha=w.alpha)
    return total, breakdown
