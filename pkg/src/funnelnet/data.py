"""Feature schema, numeric binning, dataset serialization, and a synthetic
user-funnel generator with known ground-truth probabilities.

The generator stands in for production clickstream data. Each user draws a
latent trait vector that shapes everything observable: categorical fields
are quantile-binned projections of the traits, and the short/long behavior
sequences are Poisson counts whose per-channel rates load on the traits.
The true behavior probabilities are logistic functions of those observables
(additive field effects, pairwise field interactions, and concave sequence
aggregates), so a model consuming the same observables can in principle
reach the emitted ground truth. Purchase is realized through the funnel:
each realized behavior opens an independent conditional route, making the
true purchase probability 1 - prod(1 - p_c * q_c). The additive
sum-of-routes composition the model predicts is therefore an approximation
of this union, exactly as intended.

All randomness derives from (seed, stream, example index), so generation is
reproducible and partitionable by example.
"""

import bisect
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError, ParseError
from .layers import FieldSchema

CONDITIONS = ("browse", "collect", "cart")


@dataclass(frozen=True)
class BinningSpec:
    """Sorted bucket edges; values map to len(edges) + 1 buckets."""

    edges: tuple

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ContractError(f"bin edges must be strictly increasing: {edges}")
        object.__setattr__(self, "edges", edges)


def bin_numeric(value, spec):
    """Bucket index of the half-open interval [e_i, e_{i+1}) holding value.

    Below the first edge -> 0; at or above the last edge -> last bucket.
    """
    if math.isnan(value):
        raise InputError("cannot bin NaN")
    return bisect.bisect_right(spec.edges, value)


@dataclass
class TruthRecord:
    """Generator ground truth for one example; p_purchase is the union
    probability 1 - prod(1 - p_c * q_c) used for Bayes-oracle evaluation."""

    p_browse: float
    p_collect: float
    p_cart: float
    q_browse: float
    q_collect: float
    q_cart: float
    p_purchase: float


@dataclass(eq=False)
class ExampleRecord:
    fields: list
    short_seq: np.ndarray  # (t, d) daily behavior counts
    long_seq: np.ndarray   # (T, d) period aggregates
    y_browse: int
    y_collect: int
    y_cart: int
    y_purchase: int
    order_volume: int
    truth: TruthRecord | None = None

    def __eq__(self, other):
        if not isinstance(other, ExampleRecord):
            return NotImplemented
        return (list(self.fields) == list(other.fields)
                and np.array_equal(self.short_seq, other.short_seq)
                and np.array_equal(self.long_seq, other.long_seq)
                and (self.y_browse, self.y_collect, self.y_cart,
                     self.y_purchase, self.order_volume)
                == (other.y_browse, other.y_collect, other.y_cart,
                    other.y_purchase, other.order_volume)
                and self.truth == other.truth)


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic population shape and signal strengths.

    label_noise is the standard deviation of a per-example jitter added to
    every true logit before sampling, so the emitted probabilities stay the
    exact sampling probabilities at any noise level. Setting the three
    scales and all biases to zero makes every probability exactly 0.5.
    """

    field_cardinalities: tuple = (6, 5, 8, 4, 7, 5, 6, 4, 9, 5, 6, 4)
    short_len: int = 14
    long_len: int = 8
    channels: int = 4
    trait_dim: int = 4
    coef_seed: int = 910
    n_train: int = 50000
    n_test: int = 10000
    label_noise: float = 0.0
    additive_scale: float = 3.0
    interaction_scale: float = 2.6
    sequence_scale: float = 2.4
    marginal_biases: tuple = (0.6, -1.0, -0.8)
    conditional_biases: tuple = (-1.2, -0.9, -0.7)
    ov_bias: float = 0.3
    ov_scale: float = 0.5

    def __post_init__(self):
        if self.short_len < 1 or self.long_len < 1 or self.channels < 1:
            raise ContractError("sequence dims must be positive")
        if any(c < 1 for c in self.field_cardinalities):
            raise ContractError("field cardinalities must be positive")

    def schema(self, embed_dim):
        return FieldSchema.from_cardinalities(self.field_cardinalities, embed_dim)


class _Coefficients:
    """All fixed generator coefficients, drawn once from coef_seed."""

    _HEADS = 6  # three marginals then three conditionals

    def __init__(self, config):
        rng = np.random.default_rng(config.coef_seed)
        m = len(config.field_cardinalities)
        d = config.channels
        k = config.trait_dim

        proj = rng.standard_normal((m, k))
        self.field_proj = proj / np.linalg.norm(proj, axis=1, keepdims=True)
        self.field_noise = 0.6
        self.field_sd = math.sqrt(1.0 + self.field_noise ** 2)
        # quantile-space bins: scores become uniforms, then bucketed evenly
        self.field_bins = [
            BinningSpec(tuple(j / card for j in range(1, card)))
            if card > 1 else BinningSpec(())
            for card in config.field_cardinalities
        ]

        self.short_load = rng.standard_normal((d, k)) * (0.5 / math.sqrt(k))
        self.short_base = rng.uniform(-0.3, 0.9, d)
        self.long_load = rng.standard_normal((d, k)) * (0.5 / math.sqrt(k))
        self.long_base = rng.uniform(0.8, 1.8, d)
        self.short_center = np.log1p(np.exp(self.short_base))
        self.long_center = np.log1p(np.exp(self.long_base))

        all_pairs = [(f, g) for f in range(m) for g in range(f + 1, m)]
        n_pairs = min(2 * m, len(all_pairs))
        chosen = rng.choice(len(all_pairs), size=n_pairs, replace=False)
        self.pairs = [all_pairs[c] for c in chosen]

        self.w_field = rng.standard_normal((self._HEADS, m)) * math.sqrt(3.0 / m)
        self.w_pair = rng.standard_normal((self._HEADS, n_pairs)) * math.sqrt(3.0 / n_pairs)
        self.w_short = rng.standard_normal((self._HEADS, d)) * math.sqrt(0.5 / d)
        self.w_long = rng.standard_normal((self._HEADS, d)) * math.sqrt(0.5 / d)

        self.w_ov_field = rng.standard_normal(m) * math.sqrt(1.0 / m)
        self.w_ov_seq = rng.standard_normal(2 * d) * math.sqrt(0.5 / (2 * d))


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def _make_example(config, coefs, rng, collect_truth=True):
    z = rng.standard_normal(config.trait_dim)

    scores = coefs.field_proj @ z + coefs.field_noise * rng.standard_normal(
        len(config.field_cardinalities))
    indices = []
    for f, card in enumerate(config.field_cardinalities):
        u = 0.5 * (1.0 + math.erf(scores[f] / (coefs.field_sd * math.sqrt(2.0))))
        indices.append(bin_numeric(u, coefs.field_bins[f]))

    short_rate = np.exp(np.clip(coefs.short_base + coefs.short_load @ z, -4.0, 3.0))
    long_rate = np.exp(np.clip(coefs.long_base + coefs.long_load @ z, -4.0, 3.5))
    short_seq = rng.poisson(short_rate, size=(config.short_len, config.channels)).astype(float)
    long_seq = rng.poisson(long_rate, size=(config.long_len, config.channels)).astype(float)

    cards = np.asarray(config.field_cardinalities, dtype=float)
    v = (np.asarray(indices) + 0.5) / cards - 0.5
    phi_pairs = np.array([4.0 * v[f] * v[g] for f, g in coefs.pairs])
    phi_short = np.log1p(short_seq.mean(axis=0)) - coefs.short_center
    phi_long = np.log1p(long_seq.mean(axis=0)) - coefs.long_center

    biases = tuple(config.marginal_biases) + tuple(config.conditional_biases)
    noise = (config.label_noise * rng.standard_normal(6)
             if config.label_noise > 0 else np.zeros(6))
    probs = []
    for h in range(6):
        logit = (biases[h]
                 + config.additive_scale * float(coefs.w_field[h] @ v)
                 + config.interaction_scale * float(coefs.w_pair[h] @ phi_pairs)
                 + config.sequence_scale * float(coefs.w_short[h] @ phi_short
                                                 + coefs.w_long[h] @ phi_long)
                 + noise[h])
        probs.append(_sigmoid(logit))
    p = probs[:3]
    q = probs[3:]

    labels = [int(rng.random() < pc) for pc in p]
    purchased = 0
    for realized, qc in zip(labels, q):
        if realized and rng.random() < qc:
            purchased = 1  # keep drawing so every open route consumes randomness

    order_volume = 0
    if purchased:
        ov_logit = config.ov_bias + config.ov_scale * float(
            coefs.w_ov_field @ v
            + coefs.w_ov_seq @ np.concatenate([phi_short, phi_long]))
        lam = math.exp(min(ov_logit, 2.5))
        order_volume = 1 + int(rng.poisson(lam))

    truth = None
    if collect_truth:
        p_purchase = 1.0 - math.prod(1.0 - pc * qc for pc, qc in zip(p, q))
        truth = TruthRecord(
            p_browse=p[0], p_collect=p[1], p_cart=p[2],
            q_browse=q[0], q_collect=q[1], q_cart=q[2],
            p_purchase=p_purchase)

    return ExampleRecord(
        fields=indices,
        short_seq=short_seq,
        long_seq=long_seq,
        y_browse=labels[0],
        y_collect=labels[1],
        y_cart=labels[2],
        y_purchase=purchased,
        order_volume=order_volume,
        truth=truth,
    )


def generate_synthetic(config, seed, n_examples=None, stream=0):
    """Generate records with per-example derived seeds: (seed, stream, index)."""
    coefs = _Coefficients(config)
    n = config.n_train if n_examples is None else n_examples
    records = []
    for i in range(n):
        rng = np.random.default_rng([seed, stream, i])
        records.append(_make_example(config, coefs, rng))
    return records


def generate_split(config, seed):
    """The (train, test) pair used by the training pipeline."""
    train = generate_synthetic(config, seed, config.n_train, stream=0)
    test = generate_synthetic(config, seed, config.n_test, stream=1)
    return train, test


_RECORD_KEYS = ("fields", "short_seq", "long_seq", "y_browse", "y_collect",
                "y_cart", "y_purchase", "order_volume", "truth")
_TRUTH_KEYS = ("p_browse", "p_collect", "p_cart", "q_browse", "q_collect",
               "q_cart", "p_purchase")


def _record_to_obj(record):
    truth = None
    if record.truth is not None:
        truth = {k: getattr(record.truth, k) for k in _TRUTH_KEYS}
    return {
        "fields": [int(i) for i in record.fields],
        "short_seq": record.short_seq.tolist(),
        "long_seq": record.long_seq.tolist(),
        "y_browse": int(record.y_browse),
        "y_collect": int(record.y_collect),
        "y_cart": int(record.y_cart),
        "y_purchase": int(record.y_purchase),
        "order_volume": int(record.order_volume),
        "truth": truth,
    }


def write_dataset(records, path):
    """Line-delimited records, one JSON object per line, fixed key order."""
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(_record_to_obj(record)) + "\n")


def read_dataset(path):
    """Inverse of write_dataset; raises ParseError naming the bad line."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid record: {exc}",
                                 line_number=lineno) from None
            try:
                truth = obj["truth"]
                record = ExampleRecord(
                    fields=[int(i) for i in obj["fields"]],
                    short_seq=np.asarray(obj["short_seq"], dtype=np.float64),
                    long_seq=np.asarray(obj["long_seq"], dtype=np.float64),
                    y_browse=int(obj["y_browse"]),
                    y_collect=int(obj["y_collect"]),
                    y_cart=int(obj["y_cart"]),
                    y_purchase=int(obj["y_purchase"]),
                    order_volume=int(obj["order_volume"]),
                    truth=None if truth is None else TruthRecord(
                        **{k: float(truth[k]) for k in _TRUTH_KEYS}),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}: invalid record: {exc}",
                                 line_number=lineno) from None
            records.append(record)
    return records


@dataclass
class StackedDataset:
    """Whole dataset as contiguous arrays for fast batch slicing."""

    fields: np.ndarray        # (N, M) int64
    short: np.ndarray         # (N, t, d)
    long: np.ndarray          # (N, T, d)
    y_browse: np.ndarray
    y_collect: np.ndarray
    y_cart: np.ndarray
    y_purchase: np.ndarray
    order_volume: np.ndarray  # float
    truth_purchase: np.ndarray | None = None

    def __len__(self):
        return self.fields.shape[0]

    def label(self, task):
        return getattr(self, f"y_{task}")

    def slice(self, sel):
        return StackedDataset(
            fields=self.fields[sel], short=self.short[sel], long=self.long[sel],
            y_browse=self.y_browse[sel], y_collect=self.y_collect[sel],
            y_cart=self.y_cart[sel], y_purchase=self.y_purchase[sel],
            order_volume=self.order_volume[sel],
            truth_purchase=(None if self.truth_purchase is None
                            else self.truth_purchase[sel]))


def stack_records(records):
    if not records:
        raise InputError("cannot stack an empty dataset")
    truth = None
    if all(r.truth is not None for r in records):
        truth = np.array([r.truth.p_purchase for r in records])
    return StackedDataset(
        fields=np.array([r.fields for r in records], dtype=np.int64),
        short=np.stack([r.short_seq for r in records]),
        long=np.stack([r.long_seq for r in records]),
        y_browse=np.array([r.y_browse for r in records], dtype=np.float64),
        y_collect=np.array([r.y_collect for r in records], dtype=np.float64),
        y_cart=np.array([r.y_cart for r in records], dtype=np.float64),
        y_purchase=np.array([r.y_purchase for r in records], dtype=np.float64),
        order_volume=np.array([r.order_volume for r in records], dtype=np.float64),
        truth_purchase=truth,
    )
