"""Finite-difference verification of every differentiable component.

Each check builds a small seeded instance, compares ``backward()`` gradients
against central differences via ``autograd.grad_check``, and reports the max
relative error. Plain ops must come in under 1e-6; composed layers and the
full model loss under 1e-4. Instance parameters are redrawn uniform(-0.6,
0.6) so gradient entries stay clear of the finite-difference noise floor.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import (
    Cin, Embedding, FieldSchema, Linear, MultiHeadSelfAttention,
    ResidualBlock, SequenceEncoder, attention,
)
from .losses import (
    UncertaintyParams, bce, mse, task_losses, uncertainty_combine,
)
from .model import GatedFusion, IntentModel, ModelConfig

OP_TOL = 1e-6
DEEP_TOL = 1e-4
DEFAULT_SEEDS = (0, 5, 7, 12, 21)


@dataclass
class CheckResult:
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error < self.tolerance


def _sum(t):
    return ag.reduce_sum(t)


def _mix(t, w):
    return ag.reduce_sum(ag.mul(t, w))


def _op_checks(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    y = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    alpha = Tensor(0.3, requires_grad=True)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    checks = {
        "op.add": (lambda x, y: _sum(ag.tanh(ag.add(x, y))), [x, y]),
        "op.sub": (lambda x, y: _sum(ag.tanh(ag.sub(x, y))), [x, y]),
        "op.mul": (lambda x, y: _sum(ag.tanh(ag.mul(x, y))), [x, y]),
        "op.scale": (lambda x: _sum(ag.tanh(ag.scale(x, 1.7))), [x]),
        "op.sigmoid": (lambda x: _sum(ag.sigmoid(x)), [x]),
        "op.tanh": (lambda x: _sum(ag.tanh(x)), [x]),
        "op.prelu": (lambda x, al: _sum(ag.tanh(ag.prelu(x, al))), [x, alpha]),
        "op.exp": (lambda x: _sum(ag.tanh(ag.exp(x))), [x]),
        "op.log": (lambda p: _sum(ag.log(p)), [pos]),
        "op.pow": (lambda p: _sum(p ** 2), [pos]),
        "op.matmul": (lambda a, b: _sum(ag.tanh(ag.matmul(a, b))), [a, b]),
        "op.softmax": (lambda x, w: _mix(ag.softmax_rows(x), w), [x, w]),
        "op.reduce_sum": (lambda x: _sum(ag.tanh(ag.reduce_sum(x, axis=1))), [x]),
        "op.reduce_mean": (lambda x: _sum(ag.tanh(ag.reduce_mean(x, axis=0))), [x]),
        "op.reduce_max": (lambda x: _sum(ag.tanh(ag.reduce_max(x, axis=0))), [x]),
        "op.concat": (lambda x, y: _sum(ag.tanh(ag.concat([x, y], axis=1))), [x, y]),
        "op.reshape": (lambda x: _sum(ag.tanh(ag.reshape(x, (4, 3)))), [x]),
        "op.transpose": (lambda a, b: _sum(ag.tanh(ag.matmul(ag.transpose(b), ag.transpose(a)))), [a, b]),
        "op.clip": (lambda x: _sum(ag.clip(x, -5.0, 5.0) ** 2), [x]),
    }
    for name, (f, inputs) in checks.items():
        yield name, ag.grad_check(f, inputs), OP_TOL


def _redraw(params, rng, scale=0.6):
    for p in params:
        p.data[...] = rng.uniform(-scale, scale, p.data.shape)


def _layer_checks(seed):
    rng = np.random.default_rng(seed)

    emb = Embedding(FieldSchema.from_cardinalities([3, 4], dim=3), rng)
    idx = np.column_stack([rng.integers(0, c, size=3) for c in (3, 4)])
    w_emb = Tensor(rng.standard_normal((3, 2, 3)))
    yield "layer.embedding", ag.grad_check(
        lambda *ts: _mix(emb.forward(idx), w_emb), emb.tables), DEEP_TOL

    lin = Linear(4, 3, rng, "lin")
    _redraw(lin.params(), rng)
    x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    yield "layer.linear", ag.grad_check(
        lambda *ts: _sum(ag.tanh(lin.forward(x))), lin.params() + [x]), DEEP_TOL

    res = ResidualBlock(4, 5, rng, "res")
    _redraw(res.params()[:-1], rng)
    xr = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    yield "layer.residual", ag.grad_check(
        lambda *ts: _sum(ag.tanh(res.forward(xr))), res.params() + [xr]), DEEP_TOL

    cin = Cin(3, 3, (2, 2), rng)
    _redraw(cin.params(), rng)
    x0 = Tensor(rng.standard_normal((2, 3, 3)), requires_grad=True)
    yield "layer.cin", ag.grad_check(
        lambda *ts: _sum(ag.tanh(cin.forward(x0))), cin.params() + [x0]), DEEP_TOL

    q = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    k = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    v = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    yield "layer.attention", ag.grad_check(
        lambda q, k, v: _sum(ag.tanh(attention(q, k, v))), [q, k, v]), DEEP_TOL

    mhsa = MultiHeadSelfAttention(4, 2, rng)
    _redraw(mhsa.params(), rng)
    xm = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    yield "layer.multi_head_attention", ag.grad_check(
        lambda *ts: _sum(ag.tanh(mhsa.forward(xm))), mhsa.params() + [xm]), DEEP_TOL

    enc = SequenceEncoder(2, 4, 2, rng, "enc", positional=True)
    _redraw([p for p in enc.params() if p.size > 1], rng)
    seq = Tensor(rng.standard_normal((2, 3, 2)), requires_grad=True)
    yield "layer.sequence_encoder", ag.grad_check(
        lambda *ts: _sum(ag.tanh(enc.forward(seq))), enc.params() + [seq]), DEEP_TOL

    fuse = GatedFusion(3, rng, "fuse")
    _redraw(fuse.params(), rng)
    hc = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    hp = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    yield "layer.gated_fusion", ag.grad_check(
        lambda *ts: _sum(ag.tanh(fuse.forward(hc, hp))),
        fuse.params() + [hc, hp]), DEEP_TOL

    z = Tensor(rng.standard_normal(4), requires_grad=True)
    labels = rng.integers(0, 2, 4).astype(float)
    yield "loss.bce", ag.grad_check(
        lambda z: bce(ag.clip(ag.sigmoid(z), 1e-7, 1 - 1e-7), labels), [z]), OP_TOL

    pred = Tensor(rng.standard_normal(4), requires_grad=True)
    targets = rng.poisson(1.5, 4).astype(float)
    yield "loss.mse", ag.grad_check(lambda p: mse(p, targets), [pred]), OP_TOL

    uparams = UncertaintyParams()
    raw = [Tensor(v, requires_grad=True) for v in rng.uniform(0.2, 2.0, 5)]

    def combined(*ts):
        cls = dict(zip(uparams.cls_tasks, raw[:4]))
        return uncertainty_combine(cls, raw[4], uparams).total_tensor

    yield "loss.uncertainty", ag.grad_check(
        combined, raw + uparams.params()), OP_TOL


def _model_check(seed):
    schema = FieldSchema.from_cardinalities([3, 3], dim=3)
    rng = np.random.default_rng(seed)
    config = ModelConfig(embed_dim=3, cin_layers=(3,), d_model=4, attn_heads=2,
                         trunk_width=5, trunk_hidden=5, head_width=3)
    model = IntentModel(schema, 2, config, rng)
    for p in model.named_params().values():
        p.data[...] = rng.uniform(-0.6, 0.6, p.data.shape)
    rng_batch = np.random.default_rng(seed + 1000)
    n = 4
    idx = np.column_stack([rng_batch.integers(0, c, size=n) for c in (3, 3)])
    short = rng_batch.standard_normal((n, 3, 2))
    long = rng_batch.standard_normal((n, 2, 2))
    labels = [rng_batch.integers(0, 2, n) for _ in range(4)]
    ov = rng_batch.poisson(1.0, n).astype(float)
    uparams = UncertaintyParams()
    params = list(model.named_params().values()) + uparams.params()

    def loss(*ts):
        out = model.forward(idx, short, long)
        cls, reg = task_losses(out, *labels, ov)
        return uncertainty_combine(cls, reg, uparams).total_tensor

    yield "model.loss", ag.grad_check(loss, params), DEEP_TOL


def run_component_checks(seeds=DEFAULT_SEEDS):
    """Every component's max relative error across the seeded instances."""
    results = {}
    for seed in seeds:
        for source in (_op_checks, _layer_checks, _model_check):
            for name, err, tol in source(seed):
                prev = results.get(name)
                if prev is None or err > prev.error:
                    results[name] = CheckResult(error=err, tolerance=tol)
    return results
