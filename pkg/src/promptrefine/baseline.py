"""Mean-pooled linear baseline.

The reference point for the prompt model: average the v feature tokens
into one d0-vector, apply a linear layer, squash with a sigmoid.  Pooling
first means evidence for a rare class that lives in a couple of tokens is
diluted by whatever else is in the sample before the classifier ever sees
it; the prompt model's attention can pick those tokens out per class.
Trained with the same optimizer, loss, and epoch budget as the main model
so comparisons isolate the architecture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .data import LongTailDataset, split_groups
from .losses import get_loss
from .metrics import EvalReport, map_report

__all__ = ["BaselineParams", "init_baseline", "baseline_forward_batch",
           "score_baseline", "train_baseline"]


@dataclass
class BaselineParams:
    w: Tensor   # (d0, c)
    b: Tensor   # (c,)

    def learnable(self) -> dict:
        return {"w": self.w, "b": self.b}


def init_baseline(d0: int, c: int, seed: int) -> BaselineParams:
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d0)
    return BaselineParams(
        w=ad.parameter(rng.uniform(-bound, bound, size=(d0, c))),
        b=ad.parameter(np.zeros(c)),
    )


def baseline_forward_batch(samples, params: BaselineParams) -> Tensor:
    """Sigmoid scores (len(samples), c) from mean-pooled tokens."""
    pooled = np.stack([
        np.asarray(s.features if hasattr(s, "features") else s).mean(axis=0)
        for s in samples
    ])
    logits = ad.add_rowvec(ad.matmul(ad.constant(pooled), params.w), params.b)
    return ad.sigmoid(logits)


def score_baseline(params: BaselineParams, dataset: LongTailDataset) -> np.ndarray:
    return baseline_forward_batch(dataset.samples, params).data


def train_baseline(train_ds: LongTailDataset, test_ds: LongTailDataset,
                   loss_name: str = "asl", loss_cfg: dict | None = None,
                   epochs: int = 30, batch_size: int = 32,
                   learning_rate: float = 5e-5, weight_decay: float = 1e-4,
                   seed: int = 0) -> tuple[BaselineParams, EvalReport]:
    """Identical training protocol to the prompt model: Adam, the same loss
    family, the same epoch-keyed shuffles.  Returns the trained parameters
    and the final test report grouped by the training-set counts."""
    from .training import Adam  # local import to avoid a cycle

    d0 = train_ds.samples[0].features.shape[1]
    params = init_baseline(d0, train_ds.c, seed)
    adam = Adam(params.learnable(), learning_rate, weight_decay)
    loss_fn = get_loss(loss_name, loss_cfg)
    groups = split_groups(train_ds.class_counts)

    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(train_ds))
        for b, start in enumerate(range(0, len(order), batch_size)):
            batch = [train_ds.samples[i] for i in order[start:start + batch_size]]
            labels = np.stack([s.labels for s in batch])
            adam.zero_grad()
            loss = loss_fn(baseline_forward_batch(batch, params), labels)
            if not np.isfinite(loss.data).all():
                raise NonFiniteError(f"non-finite loss at epoch {epoch} batch {b}")
            ad.backward(loss)
            adam.step()

    report = map_report(score_baseline(params, test_ds),
                        test_ds.labels_matrix(), groups)
    return params, report
