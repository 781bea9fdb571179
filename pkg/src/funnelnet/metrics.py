"""Classification and regression metrics, plus coupon-policy metrics over
simulated allocation logs."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError
from .model import TASKS


def _check_two_classes(labels, metric):
    if np.all(labels == labels[0]):
        raise UndefinedMetricError(f"{metric} undefined: labels contain one class")


def auc(scores, labels):
    """Rank-based AUC with ties counted one half.

    Equals the fraction of (positive, negative) pairs ranked correctly,
    counting tied scores as half a correct pair.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ContractError(
            f"auc: {scores.shape} scores vs {labels.shape} labels")
    _check_two_classes(labels, "auc")
    # average rank per tied group
    uniq, inverse, counts = np.unique(scores, return_inverse=True,
                                      return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = (upper - counts + 1 + upper) / 2.0
    ranks = avg_rank[inverse]
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1(scores, labels, threshold=0.5):
    """Harmonic mean of precision and recall at the threshold; zero
    denominators yield 0."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_two_classes(labels, "f1")
    preds = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(preds & pos))
    fp = int(np.sum(preds & ~pos))
    fn = int(np.sum(~preds & pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class RegressionMetrics:
    mae: float
    mape: float
    wmape: float


def regression_metrics(preds, targets):
    """MAE, MAPE, WMAPE with predictions clamped at zero first.

    A zero target contributes |pred| / 1 to MAPE (unit denominator rule) and
    only to the numerator of WMAPE. WMAPE needs a positive target total.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.size < 1:
        raise ContractError(
            f"regression metrics need matching nonempty arrays, got "
            f"{preds.shape} and {targets.shape}")
    preds = np.clip(preds, 0.0, None)
    err = np.abs(preds - targets)
    mae = float(err.mean())
    denom = np.where(targets == 0, 1.0, targets)
    mape = float((err / denom).mean())
    total = targets.sum()
    if total == 0:
        raise UndefinedMetricError("wmape undefined: target total is zero")
    return RegressionMetrics(mae=mae, mape=mape, wmape=float(err.sum() / total))


@dataclass(frozen=True)
class PolicyEvent:
    """One user's row in a coupon allocation log."""

    received: int
    verified: int
    verified_amount: float
    order_volume: float
    transaction_amount: float


@dataclass(frozen=True)
class PolicyMetrics:
    """Aggregates of an allocation log; each metric raises on access when its
    denominator is zero."""

    received: int
    verified: int
    verified_amount: float
    order_volume: float
    transaction_amount: float

    @property
    def verification_rate(self):
        if self.received == 0:
            raise UndefinedMetricError("verification rate undefined: nothing received")
        return self.verified / self.received

    @property
    def cost_per_order(self):
        if self.order_volume == 0:
            raise UndefinedMetricError("cost per order undefined: zero order volume")
        return self.verified_amount / self.order_volume

    @property
    def roi(self):
        if self.verified_amount == 0:
            raise UndefinedMetricError("roi undefined: zero verified amount")
        return self.transaction_amount / self.verified_amount


def policy_metrics(events):
    """Fold per-user events into verification rate, cost per order, and ROI.

    The verification rate uses counts; cost per order and ROI use the
    monetary verification total, reported alongside the raw aggregates.
    """
    received = sum(e.received for e in events)
    verified = sum(e.verified for e in events)
    return PolicyMetrics(
        received=received,
        verified=verified,
        verified_amount=float(sum(e.verified_amount for e in events)),
        order_volume=float(sum(e.order_volume for e in events)),
        transaction_amount=float(sum(e.transaction_amount for e in events)),
    )


def simulate_allocation(scores, y_purchase, order_volume, strategy,
                        budget_frac=0.3, seed=0, coupon_value=5.0,
                        unit_price=10.0):
    """Allocation log for one coupon strategy at a fixed budget.

    model: coupons go to the top budget_frac users by score; random: to a
    uniform sample of the same size. A coupon is verified when its holder
    actually purchases; verified users contribute their order volume and
    unit_price * order_volume of transactions.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    k = max(1, int(round(budget_frac * n)))
    if strategy == "model":
        chosen = np.argsort(-scores, kind="mergesort")[:k]
    elif strategy == "random":
        chosen = np.random.default_rng([seed, 2]).choice(n, size=k, replace=False)
    else:
        raise ContractError(f"unknown strategy '{strategy}'")
    received = np.zeros(n, dtype=int)
    received[chosen] = 1
    verified = received * (np.asarray(y_purchase) == 1)
    return [
        PolicyEvent(
            received=int(received[i]),
            verified=int(verified[i]),
            verified_amount=coupon_value * verified[i],
            order_volume=float(order_volume[i] * verified[i]),
            transaction_amount=float(unit_price * order_volume[i] * verified[i]),
        )
        for i in range(n)
    ]


@dataclass
class MetricsReport:
    """Per-task AUC/F1, order-volume regression metrics, optional policy block."""

    classification: dict
    regression: RegressionMetrics
    policy: PolicyMetrics | None = None

    def csv_rows(self, variant):
        rows = []
        for task in TASKS:
            stats = self.classification[task]
            rows.append([variant, task, "auc", repr(stats["auc"])])
            rows.append([variant, task, "f1", repr(stats["f1"])])
        for name in ("mae", "mape", "wmape"):
            rows.append([variant, "order_volume", name,
                         repr(getattr(self.regression, name))])
        return rows


def collect_scores(model, ds, batch_size=1024):
    """Forward the dataset through the model, returning score arrays."""
    outs = {f"p_{t}": [] for t in TASKS}
    outs["ov"] = []
    for start in range(0, len(ds), batch_size):
        sel = slice(start, start + batch_size)
        out = model.forward(ds.fields[sel], ds.short[sel], ds.long[sel])
        for t in TASKS:
            outs[f"p_{t}"].append(out.marginal(t).data)
        outs["ov"].append(out.ov_pred.data)
    return {k: np.concatenate(v) for k, v in outs.items()}


def evaluate_model(model, ds, threshold=0.5):
    """MetricsReport of a trained model on a stacked dataset."""
    scores = collect_scores(model, ds)
    classification = {}
    for task in TASKS:
        s = scores[f"p_{task}"]
        labels = ds.label(task)
        classification[task] = {
            "auc": auc(s, labels),
            "f1": f1(s, labels, threshold=threshold),
        }
    regression = regression_metrics(scores["ov"], ds.order_volume)
    return MetricsReport(classification=classification, regression=regression)
