"""Training objectives over class log-probabilities and activation tensors.

The distillation losses compare two spiking activation tensors of shape
[t, c, b] (timesteps, classes, batch).  The order-2 norm is realized as a
sum of squares, not a Euclidean root: the root's gradient is singular at
the zero-loss fixed point.  All losses are normalized by batch size only,
so magnitudes do not depend on b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError


@dataclass(frozen=True)
class DistillLossConfig:
    """Weights and window geometry of the combined distillation loss.

    alpha, beta, gamma weigh the sliding-window loss, the full order-2 loss
    and the KL term; they must be positive and sum to 1.  delta is the
    sliding window length, stride the window step, m_sliding the norm order
    inside each window.  kl_direction selects which distribution sits in the
    numerator of the KL log ("student" matches the training objective here;
    "teacher" is the conventional distillation direction).
    """

    alpha: float
    beta: float
    gamma: float
    delta: int
    m_sliding: int = 1
    stride: int = 1
    kl_direction: str = "student"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ConfigError(f"loss weights must be positive, got {(self.alpha, self.beta, self.gamma)}")
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"loss weights must sum to 1, got {total}")
        if int(self.delta) != self.delta or self.delta < 1:
            raise ConfigError(f"window length must be a positive integer, got {self.delta}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigError(f"stride must be a positive integer, got {self.stride}")
        if self.m_sliding not in (1, 2):
            raise ConfigError(f"norm order must be 1 or 2, got {self.m_sliding}")
        if self.kl_direction not in ("student", "teacher"):
            raise ConfigError(f"kl_direction must be 'student' or 'teacher', got {self.kl_direction!r}")


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true classes."""
    labels = np.asarray(labels)
    b, c = log_probs.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} vs batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    picked = ad.gather_rows(log_probs, labels)
    return picked.sum() * (-1.0 / b)


def _check_pair(sat_a: Tensor, sat_b: Tensor):
    if sat_a.shape != sat_b.shape:
        raise ShapeError(f"activation tensor shapes differ: {sat_a.shape} vs {sat_b.shape}")
    if len(sat_a.shape) != 3:
        raise ShapeError(f"expected [t, c, b] tensors, got shape {sat_a.shape}")


def full_lm_loss(sat_t: Tensor, sat_s: Tensor, m: int) -> Tensor:
    """Order-m difference over the whole tensors, divided by batch size."""
    _check_pair(sat_t, sat_s)
    if m not in (1, 2):
        raise ConfigError(f"norm order must be 1 or 2, got {m}")
    b = sat_t.shape[2]
    d = sat_t - sat_s
    total = d.abs().sum() if m == 1 else (d * d).sum()
    return total * (1.0 / b)


def kl_loss(sat_s: Tensor, sat_t: Tensor, direction: str = "student") -> Tensor:
    """KL divergence between class softmaxes, averaged over (t, b) slices.

    With direction "student" each slice contributes
    sum_c p_s * (log p_s - log p_t), i.e. KL(student || teacher).
    """
    _check_pair(sat_s, sat_t)
    t, _, b = sat_s.shape
    ls_s = ad.log_softmax(sat_s, axis=1)
    ls_t = ad.log_softmax(sat_t, axis=1)
    if direction == "student":
        per_element = ls_s.exp() * (ls_s - ls_t)
    elif direction == "teacher":
        per_element = ls_t.exp() * (ls_t - ls_s)
    else:
        raise ConfigError(f"kl direction must be 'student' or 'teacher', got {direction!r}")
    return per_element.sum() * (1.0 / (t * b))


def sliding_lm_loss(sat_t: Tensor, sat_s: Tensor, delta: int, m: int, stride: int = 1) -> Tensor:
    """Order-m difference accumulated over length-delta time windows.

    Valid windows start at 0, stride, 2*stride, ... while start + delta <= t.
    Result is divided by batch size.
    """
    _check_pair(sat_t, sat_s)
    if m not in (1, 2):
        raise ConfigError(f"norm order must be 1 or 2, got {m}")
    t = sat_t.shape[0]
    b = sat_t.shape[2]
    if not 1 <= delta <= t:
        raise ConfigError(f"window length must satisfy 1 <= delta <= {t}, got {delta}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    d = sat_t - sat_s
    total = None
    for start in range(0, t - delta + 1, stride):
        window = d[start:start + delta]
        term = window.abs().sum() if m == 1 else (window * window).sum()
        total = term if total is None else total + term
    return total * (1.0 / b)


def combined_loss(sat_t: Tensor, sat_s: Tensor, cfg: DistillLossConfig) -> Tensor:
    """alpha * sliding + beta * full order-2 + gamma * KL."""
    sliding = sliding_lm_loss(sat_t, sat_s, cfg.delta, cfg.m_sliding, cfg.stride)
    full2 = full_lm_loss(sat_t, sat_s, m=2)
    kl = kl_loss(sat_s, sat_t, cfg.kl_direction)
    return sliding * cfg.alpha + full2 * cfg.beta + kl * cfg.gamma
