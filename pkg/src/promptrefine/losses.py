"""Multi-label classification losses over per-class probabilities.

All three losses take a score tensor ``s`` holding probabilities — a
``(c,)`` vector for one sample or an ``(r, c)`` matrix for a batch — plus
a same-shaped binary label array.  The scalar result is the mean over
samples of the per-sample sum over classes, so the single-sample and
batched forms agree.  Scores are clamped to ``[eps, ...]`` before any log
so saturated probabilities cannot produce infinities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["ASLConfig", "asl", "bce", "focal", "get_loss", "LOSS_NAMES"]

LOSS_NAMES = ("asl", "bce", "focal")


@dataclass
class ASLConfig:
    """Knobs of the asymmetric loss.

    gamma_pos / gamma_neg are the focusing exponents on the positive and
    negative branches; mu is the probability margin subtracted from the
    score on the negative branch before focusing (scores at or below mu
    contribute nothing and receive zero gradient — the subgradient at the
    kink is taken as 0).
    """

    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    mu: float = 0.05
    eps: float = 1e-8

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("focusing exponents must be >= 0")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError(f"margin mu must be in [0, 1), got {self.mu}")
        if not 0.0 < self.eps < 0.5:
            raise ValueError(f"eps must be in (0, 0.5), got {self.eps}")


def _check_inputs(s: Tensor, y: np.ndarray) -> tuple[np.ndarray, int]:
    y = np.asarray(y, dtype=np.float64)
    if s.shape != y.shape:
        raise ad.ShapeError(f"scores {s.shape} and labels {y.shape} differ")
    if s.data.ndim not in (1, 2):
        raise ad.ShapeError(f"scores must be a vector or matrix, got {s.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    rows = s.shape[0] if s.data.ndim == 2 else 1
    return y, rows


def asl(s: Tensor, y: np.ndarray, cfg: ASLConfig | None = None) -> Tensor:
    """Asymmetric loss.

    Per class j:

        -[ y_j * (1 - s_j)^gamma_pos * log(s_j)
           + (1 - y_j) * m_j^gamma_neg * log(1 - m_j) ]

    where m_j = max(s_j - mu, 0) is the margin-shifted negative score.
    With gamma_pos = gamma_neg = mu = 0 this is exactly ``bce``.
    """
    cfg = cfg or ASLConfig()
    y, rows = _check_inputs(s, y)
    pos_mask = ad.constant(y)
    neg_mask = ad.constant(1.0 - y)

    one_minus_s = ad.add_scalar(ad.neg(s), 1.0)
    pos = ad.mul(pos_mask,
                 ad.mul(ad.power(one_minus_s, cfg.gamma_pos),
                        ad.log(ad.clamp_min(s, cfg.eps))))

    shifted = ad.relu(ad.add_scalar(s, -cfg.mu))
    one_minus_shifted = ad.add_scalar(ad.neg(shifted), 1.0)
    neg = ad.mul(neg_mask,
                 ad.mul(ad.power(shifted, cfg.gamma_neg),
                        ad.log(ad.clamp_min(one_minus_shifted, cfg.eps))))

    total = ad.sum_all(ad.add(pos, neg))
    return ad.scale(total, -1.0 / rows)


def bce(s: Tensor, y: np.ndarray, eps: float = 1e-8) -> Tensor:
    """Plain binary cross-entropy over probabilities."""
    y, rows = _check_inputs(s, y)
    pos = ad.mul(ad.constant(y), ad.log(ad.clamp_min(s, eps)))
    one_minus_s = ad.add_scalar(ad.neg(s), 1.0)
    neg = ad.mul(ad.constant(1.0 - y), ad.log(ad.clamp_min(one_minus_s, eps)))
    total = ad.sum_all(ad.add(pos, neg))
    return ad.scale(total, -1.0 / rows)


def focal(s: Tensor, y: np.ndarray, gamma: float = 2.0, eps: float = 1e-8) -> Tensor:
    """Symmetric focal loss: both branches share the focusing exponent.

    -[ y * (1-s)^gamma * log(s) + (1-y) * s^gamma * log(1-s) ];
    gamma = 0 reduces to ``bce``.
    """
    if gamma < 0:
        raise ValueError(f"focal gamma must be >= 0, got {gamma}")
    y, rows = _check_inputs(s, y)
    one_minus_s = ad.add_scalar(ad.neg(s), 1.0)
    pos = ad.mul(ad.constant(y),
                 ad.mul(ad.power(one_minus_s, gamma),
                        ad.log(ad.clamp_min(s, eps))))
    neg = ad.mul(ad.constant(1.0 - y),
                 ad.mul(ad.power(s, gamma),
                        ad.log(ad.clamp_min(one_minus_s, eps))))
    total = ad.sum_all(ad.add(pos, neg))
    return ad.scale(total, -1.0 / rows)


def get_loss(name: str, loss_cfg: dict | None = None) -> Callable[[Tensor, np.ndarray], Tensor]:
    """Resolve a loss by config name ("asl", "bce", "focal").

    ``loss_cfg`` holds the optional keys gamma_pos / gamma_neg / mu for
    asl and gamma for focal; unknown names raise ValueError.
    """
    loss_cfg = dict(loss_cfg or {})
    loss_cfg.pop("name", None)
    if name == "asl":
        cfg = ASLConfig(
            gamma_pos=float(loss_cfg.get("gamma_pos", 0.0)),
            gamma_neg=float(loss_cfg.get("gamma_neg", 4.0)),
            mu=float(loss_cfg.get("mu", 0.05)),
        )
        return lambda s, y: asl(s, y, cfg)
    if name == "bce":
        return bce
    if name == "focal":
        gamma = float(loss_cfg.get("gamma", 2.0))
        return lambda s, y: focal(s, y, gamma)
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")
