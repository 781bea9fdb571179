"""Baseline models sharing the training harness and metric surface.

LinearBaseline: one linear model per task over one-hot field features plus
the flattened raw sequences ("lr"). The "mtl-equal" baseline is the main
network with gated fusion disabled and the equal-weight loss, built by the
trainer's variant switch.
"""

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import Linear
from .model import TASKS, TaskOutputs, projected_probability


class LinearBaseline:
    """Per-task logistic/linear heads over a shared one-hot featurization."""

    def __init__(self, gen_config, rng):
        self.cards = tuple(gen_config.field_cardinalities)
        self.offsets = np.concatenate([[0], np.cumsum(self.cards)[:-1]])
        self.onehot_dim = int(sum(self.cards))
        seq_dim = (gen_config.short_len + gen_config.long_len) * gen_config.channels
        self.num_features = self.onehot_dim + seq_dim
        self.heads = {
            task: Linear(self.num_features, 1, rng, f"lr.{task}")
            for task in TASKS
        }
        self.ov_head = Linear(self.num_features, 1, rng, "lr.ov")

    def named_params(self):
        out = {}
        for task in TASKS:
            for p in self.heads[task].params():
                out[p.name] = p
        for p in self.ov_head.params():
            out[p.name] = p
        return out

    def featurize(self, fields, short, long):
        fields = np.asarray(fields)
        n = fields.shape[0]
        x = np.zeros((n, self.num_features))
        x[np.arange(n)[:, None], fields + self.offsets[None, :]] = 1.0
        x[:, self.onehot_dim:] = np.concatenate(
            [np.asarray(short).reshape(n, -1), np.asarray(long).reshape(n, -1)],
            axis=1)
        return x

    def forward(self, fields, short, long):
        x = Tensor(self.featurize(fields, short, long))
        probs = {
            task: projected_probability(x, self.heads[task]) for task in TASKS
        }
        ov = ag.reshape(self.ov_head.forward(x), (x.shape[0],))
        return TaskOutputs(
            p_browse=probs["browse"],
            p_collect=probs["collect"],
            p_cart=probs["cart"],
            q_browse=None, q_collect=None, q_cart=None,
            p_purchase=probs["purchase"],
            p_purchase_raw=probs["purchase"],
            ov_pred=ov,
        )


def run_baseline(variant, train_records, test_records, train_config, gen_config):
    """Train a baseline variant with the shared harness and evaluate it."""
    from dataclasses import replace

    from .metrics import evaluate_model
    from .data import stack_records
    from .training import train

    if variant not in ("lr", "mtl-equal"):
        raise ValueError(f"unknown baseline variant '{variant}'")
    config = replace(train_config, variant=variant)
    result = train(config, train_records, gen_config)
    report = evaluate_model(result.model, stack_records(test_records))
    return report, result
