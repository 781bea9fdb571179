"""The assembled multi-task intent network.

Feature extraction (field-embedding crossing, two sequence encoders, a
residual trunk summed with a linear memorization path) feeds four task
heads: browse, collect, and cart marginals, and a purchase head whose
hidden state is blended with each condition head through a GRU-style gate.
Each blended state projects to a conditional purchase probability, and the
purchase probability is composed as the sum of marginal * conditional over
the three condition routes. A separate scalar head regresses order volume.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DimensionError
from .layers import (
    Cin, Embedding, Linear, ResidualBlock, SequenceEncoder, linear_forward,
)

PROB_FLOOR = 1e-7
PROB_CEIL = 1.0 - 1e-7

CONDITIONS = ("browse", "collect", "cart")
TASKS = CONDITIONS + ("purchase",)


def clamp_probability(p):
    """Clamp into [1e-7, 1 - 1e-7]; the clamped copy is what enters log-losses."""
    return ag.clip(p, PROB_FLOOR, PROB_CEIL)


def total_probability(p_browse, p_collect, p_cart, q_browse, q_collect, q_cart):
    """Purchase probability as the sum of marginal * conditional per route.

    Scalar float version used for diagnostics and tests. The three products
    are combined with an exactly rounded sum, so permuting the conditions
    cannot change the result. The raw sum is returned as-is; it may exceed 1
    because the three behaviors are not mutually exclusive, and callers clamp
    a copy before any log-loss.
    """
    probs = (p_browse, p_collect, p_cart, q_browse, q_collect, q_cart)
    for v in probs:
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"probability {v} outside [0, 1]")
    return math.fsum((p_browse * q_browse, p_collect * q_collect, p_cart * q_cart))


class GatedFusion:
    """GRU-style gate blending a condition hidden state with the purchase one.

    update = sigmoid(W_u [h_cond, h_pur] + b_u)
    reset  = sigmoid(W_r [h_cond, h_pur] + b_r)
    cand   = tanh(W_c [reset * h_cond, h_pur] + b_c)
    out    = update * h_cond + (1 - update) * cand
    """

    def __init__(self, width, rng, name):
        self.width = width
        bound = 1.0 / math.sqrt(2 * width)

        def gate(tag):
            w = Tensor(rng.uniform(-bound, bound, (width, 2 * width)),
                       requires_grad=True, name=f"{name}.w_{tag}")
            b = Tensor(np.zeros(width), requires_grad=True, name=f"{name}.b_{tag}")
            return w, b

        self.w_update, self.b_update = gate("update")
        self.w_reset, self.b_reset = gate("reset")
        self.w_cand, self.b_cand = gate("cand")

    def params(self):
        return [self.w_update, self.b_update, self.w_reset, self.b_reset,
                self.w_cand, self.b_cand]

    def forward(self, h_cond, h_pur):
        if h_cond.shape[-1] != self.width or h_pur.shape[-1] != self.width:
            raise DimensionError(
                f"gated fusion expects width {self.width}, got "
                f"{h_cond.shape} and {h_pur.shape}")
        both = ag.concat([h_cond, h_pur], axis=-1)
        update = ag.sigmoid(linear_forward(both, self.w_update, self.b_update))
        reset = ag.sigmoid(linear_forward(both, self.w_reset, self.b_reset))
        gated = ag.concat([ag.mul(reset, h_cond), h_pur], axis=-1)
        cand = ag.tanh(linear_forward(gated, self.w_cand, self.b_cand))
        return ag.add(ag.mul(update, h_cond), ag.mul(ag.sub(1.0, update), cand))


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 8
    cin_layers: tuple = (8, 8)
    cin_pooling: str = "sum"
    d_model: int = 16
    attn_heads: int = 2
    trunk_width: int = 64
    trunk_hidden: int = 64
    head_width: int = 16
    positional: bool = True
    use_linear: bool = True
    fusion: bool = True


@dataclass
class TaskOutputs:
    """Per-batch predictions, all shape (B,). Probabilities are clamped into
    [1e-7, 1-1e-7]; p_purchase_raw keeps the unclamped composed sum for
    diagnostics. q_* are None when gated fusion is disabled."""

    p_browse: Tensor
    p_collect: Tensor
    p_cart: Tensor
    q_browse: Tensor
    q_collect: Tensor
    q_cart: Tensor
    p_purchase: Tensor
    p_purchase_raw: Tensor
    ov_pred: Tensor

    def marginal(self, condition):
        return getattr(self, f"p_{condition}")

    def conditional(self, condition):
        return getattr(self, f"q_{condition}")


def _squeeze_scalar_column(x):
    return ag.reshape(x, (x.shape[0],))


def projected_probability(hidden, proj):
    """Clamped sigmoid of a learned scalar projection of a hidden state.

    The projection is what lets a vector-valued head emit a probability;
    the result is clamped so downstream log-losses stay finite.
    """
    return clamp_probability(ag.sigmoid(_squeeze_scalar_column(proj.forward(hidden))))


class IntentModel:
    """Full network; ``variant`` behavior is controlled by ModelConfig flags."""

    def __init__(self, schema, seq_channels, config, rng):
        self.schema = schema
        self.config = config
        self.use_linear = config.use_linear
        self.fusion = config.fusion

        self.embedding = Embedding(schema, rng)
        self.cin = Cin(schema.num_fields, schema.dim, config.cin_layers, rng,
                       pooling=config.cin_pooling)
        self.enc_short = SequenceEncoder(seq_channels, config.d_model,
                                         config.attn_heads, rng, "short",
                                         positional=config.positional)
        self.enc_long = SequenceEncoder(seq_channels, config.d_model,
                                        config.attn_heads, rng, "long",
                                        positional=config.positional)
        fused_in = self.cin.out_dim + 2 * config.d_model
        self.trunk_proj = Linear(fused_in, config.trunk_width, rng, "trunk.proj")
        self.trunk_alpha = Tensor(0.25, requires_grad=True, name="trunk.alpha")
        self.trunk_res = ResidualBlock(config.trunk_width, config.trunk_hidden,
                                       rng, "trunk.res")
        self.linear_path = Linear(schema.num_fields * schema.dim,
                                  config.trunk_width, rng, "linear_path")

        self.head_fc = {}
        self.head_alpha = {}
        for task in TASKS:
            self.head_fc[task] = Linear(config.trunk_width, config.head_width,
                                        rng, f"head.{task}")
            self.head_alpha[task] = Tensor(0.25, requires_grad=True,
                                           name=f"head.{task}.alpha")
        self.marginal_proj = {
            c: Linear(config.head_width, 1, rng, f"marginal.{c}")
            for c in CONDITIONS
        }
        self.purchase_proj = Linear(config.head_width, 1, rng, "marginal.purchase")
        self.fuse = {
            c: GatedFusion(config.head_width, rng, f"fuse.{c}")
            for c in CONDITIONS
        }
        self.conditional_proj = {
            c: Linear(config.head_width, 1, rng, f"conditional.{c}")
            for c in CONDITIONS
        }
        self.ov_head = Linear(config.trunk_width, 1, rng, "ov")

    def named_params(self):
        params = self.embedding.params() + self.cin.params()
        params += self.enc_short.params() + self.enc_long.params()
        params += self.trunk_proj.params() + [self.trunk_alpha]
        params += self.trunk_res.params() + self.linear_path.params()
        for task in TASKS:
            params += self.head_fc[task].params() + [self.head_alpha[task]]
        for c in CONDITIONS:
            params += self.marginal_proj[c].params()
        params += self.purchase_proj.params()
        for c in CONDITIONS:
            params += self.fuse[c].params() + self.conditional_proj[c].params()
        params += self.ov_head.params()
        out = {}
        for p in params:
            if p.name in out:
                raise ContractError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def extract_features(self, indices, short_seq, long_seq):
        """Fused representation feeding every head: (B, trunk_width)."""
        emb = self.embedding.forward(indices)  # (B, M, D)
        parts = [
            self.cin.forward(emb),
            self.enc_short.forward(short_seq),
            self.enc_long.forward(long_seq),
        ]
        fused = ag.concat(parts, axis=-1)
        trunk = self.trunk_res.forward(
            ag.prelu(self.trunk_proj.forward(fused), self.trunk_alpha))
        if self.use_linear:
            flat = ag.reshape(emb, (emb.shape[0], emb.shape[1] * emb.shape[2]))
            trunk = ag.add(trunk, self.linear_path.forward(flat))
        return trunk

    def forward(self, indices, short_seq, long_seq):
        indices = np.asarray(indices)
        short_seq = short_seq if isinstance(short_seq, Tensor) else Tensor(short_seq)
        long_seq = long_seq if isinstance(long_seq, Tensor) else Tensor(long_seq)
        trunk = self.extract_features(indices, short_seq, long_seq)

        hidden = {
            task: ag.prelu(self.head_fc[task].forward(trunk), self.head_alpha[task])
            for task in TASKS
        }
        marginals = {
            c: projected_probability(hidden[c], self.marginal_proj[c])
            for c in CONDITIONS
        }

        if self.fusion:
            conditionals = {}
            for c in CONDITIONS:
                blended = self.fuse[c].forward(hidden[c], hidden["purchase"])
                conditionals[c] = projected_probability(blended, self.conditional_proj[c])
            routes = [ag.mul(marginals[c], conditionals[c]) for c in CONDITIONS]
            raw = ag.add(ag.add(routes[0], routes[1]), routes[2])
            p_purchase = clamp_probability(raw)
        else:
            conditionals = {c: None for c in CONDITIONS}
            raw = ag.sigmoid(_squeeze_scalar_column(
                self.purchase_proj.forward(hidden["purchase"])))
            p_purchase = clamp_probability(raw)

        ov = _squeeze_scalar_column(self.ov_head.forward(trunk))
        return TaskOutputs(
            p_browse=marginals["browse"],
            p_collect=marginals["collect"],
            p_cart=marginals["cart"],
            q_browse=conditionals["browse"],
            q_collect=conditionals["collect"],
            q_cart=conditionals["cart"],
            p_purchase=p_purchase,
            p_purchase_raw=raw,
            ov_pred=ov,
        )
