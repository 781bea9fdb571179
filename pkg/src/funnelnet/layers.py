"""Reusable layers built on the autograd tensor.

All layers accept a batch axis in front of the shapes they document
(vectors become ``(B, n)``, sequences ``(B, t, d)``) and also work on a
single unbatched example. Parameters are float64 tensors initialized from
a caller-supplied RNG with uniform ``+-1/sqrt(fan_in)`` weights, zero
biases, and PReLU slopes at 0.25.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DimensionError, InputError


@dataclass(frozen=True)
class Field:
    """One categorical field: name and vocabulary size."""

    name: str
    cardinality: int


@dataclass(frozen=True)
class FieldSchema:
    """The categorical fields plus the embedding width shared by all of them."""

    fields: tuple
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ContractError(f"embedding dim must be >= 1, got {self.dim}")
        for field in self.fields:
            if field.cardinality < 1:
                raise ContractError(
                    f"field '{field.name}' has cardinality {field.cardinality}")

    @property
    def num_fields(self):
        return len(self.fields)

    @classmethod
    def from_cardinalities(cls, cardinalities, dim):
        fields = tuple(Field(f"f{i}", c) for i, c in enumerate(cardinalities))
        return cls(fields=fields, dim=dim)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Embedding:
    """One embedding table per field; lookup stacks rows into (B, M, D)."""

    def __init__(self, schema, rng, name="embed"):
        self.schema = schema
        self.tables = []
        for field in schema.fields:
            data = _uniform(rng, (field.cardinality, schema.dim), schema.dim)
            self.tables.append(
                Tensor(data, requires_grad=True, name=f"{name}.{field.name}"))

    def params(self):
        return list(self.tables)

    def forward(self, indices):
        """indices: int array (B, M) or (M,); returns (B, M, D) or (M, D)."""
        idx = np.asarray(indices)
        single = idx.ndim == 1
        if single:
            idx = idx[None, :]
        if idx.shape[1] != self.schema.num_fields:
            raise DimensionError(
                f"expected {self.schema.num_fields} field indices, got {idx.shape[1]}")
        cols = []
        for f, field in enumerate(self.schema.fields):
            col = idx[:, f]
            if np.any((col < 0) | (col >= field.cardinality)):
                bad = col[(col < 0) | (col >= field.cardinality)][0]
                raise InputError(
                    f"field '{field.name}': index {bad} outside [0, {field.cardinality})")
            rows = ag.gather_rows(self.tables[f], col)  # (B, D)
            cols.append(ag.reshape(rows, (idx.shape[0], 1, self.schema.dim)))
        out = ag.concat(cols, axis=1)
        return ag.reshape(out, out.shape[1:]) if single else out


def linear_forward(x, weight, bias=None):
    """Affine map with weight (p, n): y = x @ weight^T (+ bias)."""
    if x.shape[-1] != weight.shape[-1]:
        raise DimensionError(
            f"linear: input width {x.shape} does not match weight {weight.shape}")
    single = x.ndim == 1
    if single:
        x = ag.reshape(x, (1, x.shape[0]))
    out = ag.matmul(x, ag.transpose(weight))
    if bias is not None:
        out = ag.add(out, bias)
    return ag.reshape(out, out.shape[1:]) if single else out


class Linear:
    def __init__(self, in_dim, out_dim, rng, name, bias=True):
        self.weight = Tensor(
            _uniform(rng, (out_dim, in_dim), in_dim),
            requires_grad=True, name=f"{name}.weight")
        self.bias = None
        if bias:
            self.bias = Tensor(
                np.zeros(out_dim), requires_grad=True, name=f"{name}.bias")

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x):
        return linear_forward(x, self.weight, self.bias)


class ResidualBlock:
    """y = f(x) + x with f = affine -> PReLU -> affine; widths return to n."""

    def __init__(self, width, hidden, rng, name):
        self.fc1 = Linear(width, hidden, rng, f"{name}.fc1")
        self.fc2 = Linear(hidden, width, rng, f"{name}.fc2")
        self.alpha = Tensor(0.25, requires_grad=True, name=f"{name}.alpha")

    def params(self):
        return self.fc1.params() + self.fc2.params() + [self.alpha]

    def forward(self, x):
        inner = ag.prelu(self.fc1.forward(x), self.alpha)
        return ag.add(self.fc2.forward(inner), x)


class Cin:
    """Vector-wise crossing of field embeddings.

    Layer k maps (B, H_{k-1}, D) to (B, H_k, D): feature map h is a weighted
    sum over all Hadamard products between previous-layer rows and input
    field rows. Weight k is stored (H_k, H_{k-1} * m) with the (i, j) pair
    flattened row-major. Each layer is pooled over D (sum or mean) and the
    pooled maps from all layers are concatenated into (B, sum(H_k)).
    """

    def __init__(self, num_fields, dim, layer_sizes, rng, name="cin", pooling="sum"):
        if pooling not in ("sum", "mean"):
            raise ContractError(f"unknown CIN pooling '{pooling}'")
        if any(h < 1 for h in layer_sizes):
            raise ContractError(f"CIN layer sizes must be >= 1, got {layer_sizes}")
        self.num_fields = num_fields
        self.dim = dim
        self.layer_sizes = tuple(layer_sizes)
        self.pooling = pooling
        self.weights = []
        prev = num_fields
        for k, h in enumerate(layer_sizes):
            data = _uniform(rng, (h, prev * num_fields), prev * num_fields)
            self.weights.append(Tensor(data, requires_grad=True, name=f"{name}.w{k}"))
            prev = h

    @property
    def out_dim(self):
        return sum(self.layer_sizes)

    def params(self):
        return list(self.weights)

    def forward(self, x0):
        """x0: (B, m, D) or (m, D) field embeddings -> (B, sum(H)) or (sum(H),)."""
        single = x0.ndim == 2
        if single:
            x0 = ag.reshape(x0, (1,) + x0.shape)
        batch, m, dim = x0.shape
        if m != self.num_fields or dim != self.dim:
            raise DimensionError(
                f"CIN expects (B, {self.num_fields}, {self.dim}), got {x0.shape}")
        x = x0
        pooled = []
        for weight in self.weights:
            h_prev = x.shape[1]
            left = ag.reshape(x, (batch, h_prev, 1, dim))
            right = ag.reshape(x0, (batch, 1, m, dim))
            z = ag.reshape(ag.mul(left, right), (batch, h_prev * m, dim))
            x = ag.matmul(weight, z)  # (B, H_k, D)
            if self.pooling == "sum":
                pooled.append(ag.reduce_sum(x, axis=2))
            else:
                pooled.append(ag.reduce_mean(x, axis=2))
        out = ag.concat(pooled, axis=1)
        return ag.reshape(out, (self.out_dim,)) if single else out


def attention(q, k, v, return_weights=False):
    """Scaled dot-product attention: softmax(q k^T / sqrt(d_k)) v."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(
            f"attention: query width {q.shape} does not match key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(
            f"attention: key rows {k.shape} do not match value rows {v.shape}")
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    weights = ag.softmax_rows(scores)
    out = ag.matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadSelfAttention:
    """Per-head projections of one input, attention per head, concat, output map."""

    def __init__(self, d_model, heads, rng, name="attn"):
        if d_model % heads != 0:
            raise DimensionError(
                f"d_model {d_model} not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        d_k = d_model // heads
        self.wq, self.wk, self.wv = [], [], []
        for i in range(heads):
            for store, tag in ((self.wq, "q"), (self.wk, "k"), (self.wv, "v")):
                data = _uniform(rng, (d_model, d_k), d_model)
                store.append(Tensor(data, requires_grad=True, name=f"{name}.{tag}{i}"))
        self.out_w = Tensor(
            _uniform(rng, (heads * d_k, d_model), heads * d_k),
            requires_grad=True, name=f"{name}.out")

    def params(self):
        return self.wq + self.wk + self.wv + [self.out_w]

    def forward(self, x):
        """x: (..., t, d_model) used as query, key, and value."""
        if x.shape[-1] != self.d_model:
            raise DimensionError(
                f"self-attention expects width {self.d_model}, got {x.shape}")
        outs = [
            attention(ag.matmul(x, self.wq[i]),
                      ag.matmul(x, self.wk[i]),
                      ag.matmul(x, self.wv[i]))
            for i in range(self.heads)
        ]
        return ag.matmul(ag.concat(outs, axis=-1), self.out_w)


def sinusoidal_encoding(length, dim):
    """Fixed sin/cos position table, (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    return np.where(i.astype(int) % 2 == 0, np.sin(angle), np.cos(angle))


class SequenceEncoder:
    """Sequence -> fixed vector: input projection, optional positions, one
    self-attention block with a position-wise PReLU affine, max-pool over time.
    """

    def __init__(self, in_dim, d_model, heads, rng, name, positional=True):
        self.proj = Linear(in_dim, d_model, rng, f"{name}.proj")
        self.attn = MultiHeadSelfAttention(d_model, heads, rng, f"{name}.attn")
        self.ff = Linear(d_model, d_model, rng, f"{name}.ff")
        self.alpha = Tensor(0.25, requires_grad=True, name=f"{name}.alpha")
        self.positional = positional
        self.d_model = d_model

    def params(self):
        return self.proj.params() + self.attn.params() + self.ff.params() + [self.alpha]

    def pre_pool(self, seq):
        """The attention-block output before pooling: (..., t, d_model)."""
        if seq.shape[-2] == 0:
            raise InputError("cannot encode an empty sequence")
        h = self.proj.forward(seq)
        if self.positional:
            h = ag.add(h, Tensor(sinusoidal_encoding(seq.shape[-2], self.d_model)))
        a = self.attn.forward(h)
        return ag.prelu(self.ff.forward(a), self.alpha)

    def forward(self, seq):
        """seq: (B, t, d) or (t, d) -> (B, d_model) or (d_model,)."""
        return ag.reduce_max(self.pre_pool(seq), axis=-2)
