"""Task losses and the uncertainty-weighted multi-task combination.

Each task carries a learnable s = log sigma^2. The combined loss is

    sum_cls exp(-s_i) * L_i  +  1/2 exp(-s_reg) * L_reg  +  1/2 sum_all s,

so a task's weight 1/sigma^2 falls as its uncertainty grows while the
log-sigma penalty keeps every s finite. With all s frozen at 0 this reduces
exactly to the equal-weight sum with regression coefficient 1/2, which the
equal-weight code path computes directly.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, NumericError
from .model import PROB_CEIL, PROB_FLOOR

CLS_TASKS = ("browse", "collect", "cart", "purchase")
REG_TASK = "order_volume"


def bce(p, y):
    """Mean binary cross-entropy, -[y log p + (1-y) log(1-p)], over the batch.

    p must already be clamped into [1e-7, 1-1e-7].
    """
    p = p if isinstance(p, Tensor) else Tensor(p)
    if np.any(p.data < PROB_FLOOR) or np.any(p.data > PROB_CEIL):
        raise ContractError(
            "bce probabilities must lie in [1e-7, 1-1e-7]; clamp them first")
    y = np.asarray(y, dtype=np.float64)
    pos = ag.mul(y, ag.log(p))
    neg = ag.mul(1.0 - y, ag.log(ag.sub(1.0, p)))
    return ag.neg(ag.reduce_mean(ag.add(pos, neg)))


def mse(pred, y):
    """Mean squared error (y - pred)^2 over the batch."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    diff = ag.sub(np.asarray(y, dtype=np.float64), pred)
    return ag.reduce_mean(diff ** 2)


class UncertaintyParams:
    """One learnable log-variance per task, initialized to 0 (sigma^2 = 1)."""

    def __init__(self, cls_tasks=CLS_TASKS, reg_task=REG_TASK, trainable=True):
        self.cls_tasks = tuple(cls_tasks)
        self.reg_task = reg_task
        self.log_vars = {
            task: Tensor(0.0, requires_grad=trainable, name=f"loss.s_{task}")
            for task in self.cls_tasks + (reg_task,)
        }

    def params(self):
        return [self.log_vars[t] for t in self.cls_tasks + (self.reg_task,)]

    def variances(self):
        """Current sigma^2 = exp(s) per task."""
        return {t: float(np.exp(v.data)) for t, v in self.log_vars.items()}


@dataclass
class LossBreakdown:
    """Raw per-task losses, their 1/sigma^2 weights (the regression term also
    carries a fixed 1/2), the log-sigma regularizer, and the combined total.
    ``total_tensor`` is the graph node to backpropagate."""

    task_losses: dict
    task_weights: dict
    regularizer: float
    total: float
    total_tensor: Tensor

    def recombine(self):
        """Recompute the total from the stored pieces (invariant check)."""
        out = sum(self.task_weights[t] * self.task_losses[t]
                  for t in self.task_losses if t != REG_TASK)
        out += 0.5 * self.task_weights[REG_TASK] * self.task_losses[REG_TASK]
        return out + self.regularizer

    CSV_FIELDS = ("loss_browse", "loss_collect", "loss_cart", "loss_purchase",
                  "loss_order_volume", "weight_browse", "weight_collect",
                  "weight_cart", "weight_purchase", "weight_order_volume",
                  "regularizer", "total")

    def csv_row(self):
        vals = [self.task_losses[t] for t in CLS_TASKS + (REG_TASK,)]
        vals += [self.task_weights[t] for t in CLS_TASKS + (REG_TASK,)]
        vals += [self.regularizer, self.total]
        return vals


def _check_finite(name, loss):
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"loss '{name}' is not finite: {value}")
    return value


def uncertainty_combine(cls_losses, reg_loss, params):
    """Combine per-task losses with learnable 1/sigma^2 weights.

    cls_losses: dict task -> scalar loss tensor, keyed like params.cls_tasks.
    """
    if set(cls_losses) != set(params.cls_tasks):
        raise ContractError(
            f"expected losses for {params.cls_tasks}, got {tuple(cls_losses)}")
    raw = {t: _check_finite(t, cls_losses[t]) for t in params.cls_tasks}
    raw[params.reg_task] = _check_finite(params.reg_task, reg_loss)

    total = None
    weights = {}
    for task in params.cls_tasks:
        s = params.log_vars[task]
        term = ag.mul(ag.exp(ag.neg(s)), cls_losses[task])
        weights[task] = float(np.exp(-s.data))
        total = term if total is None else ag.add(total, term)
    s_reg = params.log_vars[params.reg_task]
    weights[params.reg_task] = float(np.exp(-s_reg.data))
    total = ag.add(total, ag.scale(ag.mul(ag.exp(ag.neg(s_reg)), reg_loss), 0.5))

    penalty = None
    for task in params.cls_tasks + (params.reg_task,):
        s = params.log_vars[task]
        penalty = s if penalty is None else ag.add(penalty, s)
    penalty = ag.scale(penalty, 0.5)
    total = ag.add(total, penalty)

    return LossBreakdown(
        task_losses=raw,
        task_weights=weights,
        regularizer=float(penalty.data),
        total=float(total.data),
        total_tensor=total,
    )


def equal_weight_combine(cls_losses, reg_loss):
    """Plain multi-task sum: classification losses plus half the regression."""
    raw = {t: _check_finite(t, loss) for t, loss in cls_losses.items()}
    raw[REG_TASK] = _check_finite(REG_TASK, reg_loss)
    total = None
    for task in cls_losses:
        total = cls_losses[task] if total is None else ag.add(total, cls_losses[task])
    total = ag.add(total, ag.scale(reg_loss, 0.5))
    weights = {t: 1.0 for t in raw}
    return LossBreakdown(
        task_losses=raw,
        task_weights=weights,
        regularizer=0.0,
        total=float(total.data),
        total_tensor=total,
    )


def task_losses(outputs, y_browse, y_collect, y_cart, y_purchase, order_volume):
    """The four classification losses and the order-volume regression loss."""
    cls = {
        "browse": bce(outputs.p_browse, y_browse),
        "collect": bce(outputs.p_collect, y_collect),
        "cart": bce(outputs.p_cart, y_cart),
        "purchase": bce(outputs.p_purchase, y_purchase),
    }
    return cls, mse(outputs.ov_pred, order_volume)
