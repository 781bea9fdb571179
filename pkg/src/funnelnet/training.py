"""Mini-batch training: Adam, a seeded deterministic loop, and checkpoints.

Everything random derives from the run seed: model init uses stream
(seed, 0) and epoch shuffling stream (seed, 1), so one (config, dataset)
pair always produces bit-identical parameters. Checkpoints are npz files
carrying every parameter tensor, the optimizer moments, the epoch counter,
and a JSON meta block with the resolved configs and their hash; reloading
restores bit-identical forward outputs.
"""

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import __version__
from .data import GeneratorConfig, stack_records
from .errors import ContractError, NumericError
from .losses import (
    CLS_TASKS, REG_TASK, UncertaintyParams, equal_weight_combine, task_losses,
    uncertainty_combine,
)
from .model import IntentModel, ModelConfig

VARIANTS = ("full", "mtl-equal", "lr")
LOSS_SCHEMES = ("uncertainty", "equal")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 12
    seed: int = 7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_scheme: str = "uncertainty"
    variant: str = "full"
    model: ModelConfig = ModelConfig()

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ContractError("learning rate, batch size, epochs must be positive")
        if self.loss_scheme not in LOSS_SCHEMES:
            raise ContractError(f"unknown loss scheme '{self.loss_scheme}'")
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant '{self.variant}'")


class Adam:
    """Standard first/second-moment update with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.t = 0

    def step(self):
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in tensor '{name}'")
            grads[name] = g
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class CheckpointState:
    params: dict
    adam_m: dict
    adam_v: dict
    adam_t: int
    epoch: int
    meta: dict


def config_hash(meta_configs):
    return hashlib.sha256(
        json.dumps(meta_configs, sort_keys=True).encode()).hexdigest()


def _meta(train_config, gen_config, epoch):
    configs = {"train": asdict(train_config), "generator": asdict(gen_config)}
    return {
        "configs": configs,
        "config_hash": config_hash(configs),
        "epoch": epoch,
        "version": __version__,
    }


def save_checkpoint(state, path):
    parent = os.path.dirname(str(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    arrays = {f"param/{k}": v for k, v in state.params.items()}
    arrays.update({f"adam_m/{k}": v for k, v in state.adam_m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in state.adam_v.items()})
    meta = dict(state.meta, epoch=state.epoch, adam_t=state.adam_t)
    arrays["meta"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as blob:
        meta = json.loads(str(blob["meta"]))
        params, adam_m, adam_v = {}, {}, {}
        for key in blob.files:
            if key.startswith("param/"):
                params[key[len("param/"):]] = blob[key]
            elif key.startswith("adam_m/"):
                adam_m[key[len("adam_m/"):]] = blob[key]
            elif key.startswith("adam_v/"):
                adam_v[key[len("adam_v/"):]] = blob[key]
    return CheckpointState(params=params, adam_m=adam_m, adam_v=adam_v,
                           adam_t=meta.pop("adam_t"), epoch=meta["epoch"],
                           meta=meta)


def build_model(train_config, gen_config, rng):
    """Model object plus its uncertainty parameters (None for equal-weight)."""
    variant = train_config.variant
    if variant == "lr":
        from .baselines import LinearBaseline
        model = LinearBaseline(gen_config, rng)
        return model, None, "equal"
    model_config = replace(train_config.model, fusion=(variant == "full"))
    schema = gen_config.schema(model_config.embed_dim)
    model = IntentModel(schema, gen_config.channels, model_config, rng)
    scheme = train_config.loss_scheme if variant == "full" else "equal"
    uparams = UncertaintyParams() if scheme == "uncertainty" else None
    return model, uparams, scheme


class Trainer:
    def __init__(self, config, records, gen_config):
        self.config = config
        self.gen_config = gen_config
        self.dataset = stack_records(records)
        rng_init = np.random.default_rng([config.seed, 0])
        self.model, self.uparams, self.scheme = build_model(config, gen_config, rng_init)
        self._shuffle_rng = np.random.default_rng([config.seed, 1])
        params = dict(self.model.named_params())
        if self.uparams is not None:
            params.update({p.name: p for p in self.uparams.params()})
        self.optimizer = Adam(params, lr=config.learning_rate,
                              beta1=config.beta1, beta2=config.beta2,
                              eps=config.eps)

    def _capture(self, epoch):
        return CheckpointState(
            params={k: p.data.copy() for k, p in self.optimizer.params.items()},
            adam_m={k: v.copy() for k, v in self.optimizer.m.items()},
            adam_v={k: v.copy() for k, v in self.optimizer.v.items()},
            adam_t=self.optimizer.t,
            epoch=epoch,
            meta=_meta(self.config, self.gen_config, epoch),
        )

    def restore(self, state):
        for name, p in self.optimizer.params.items():
            if p.data.shape != state.params[name].shape:
                raise ContractError(
                    f"checkpoint shape mismatch for '{name}': "
                    f"{state.params[name].shape} vs {p.data.shape}")
            p.data[...] = state.params[name]
            self.optimizer.m[name][...] = state.adam_m[name]
            self.optimizer.v[name][...] = state.adam_v[name]
        self.optimizer.t = state.adam_t

    def _combine(self, cls, reg):
        if self.scheme == "uncertainty":
            return uncertainty_combine(cls, reg, self.uparams)
        return equal_weight_combine(cls, reg)

    def _epoch_row(self, epoch, sums, count):
        row = {"epoch": epoch}
        row.update({k: v / count for k, v in sums.items()})
        variances = (self.uparams.variances() if self.uparams is not None
                     else {t: 1.0 for t in CLS_TASKS + (REG_TASK,)})
        row.update({f"sigma2_{t}": variances[t] for t in CLS_TASKS + (REG_TASK,)})
        return row

    def run(self, out_dir=None):
        ds = self.dataset
        n = len(ds)
        history = []
        last_good = self._capture(0)
        try:
            for epoch in range(1, self.config.epochs + 1):
                perm = self._shuffle_rng.permutation(n)
                sums = {}
                batches = 0
                for start in range(0, n, self.config.batch_size):
                    sel = perm[start:start + self.config.batch_size]
                    self.optimizer.zero_grad()
                    out = self.model.forward(ds.fields[sel], ds.short[sel], ds.long[sel])
                    cls, reg = task_losses(
                        out, ds.y_browse[sel], ds.y_collect[sel], ds.y_cart[sel],
                        ds.y_purchase[sel], ds.order_volume[sel])
                    breakdown = self._combine(cls, reg)
                    breakdown.total_tensor.backward()
                    self.optimizer.step()
                    batches += 1
                    for key, value in zip(breakdown.CSV_FIELDS, breakdown.csv_row()):
                        sums[key] = sums.get(key, 0.0) + value
                history.append(self._epoch_row(epoch, sums, batches))
                last_good = self._capture(epoch)
        except NumericError:
            if out_dir is not None:
                save_checkpoint(last_good, _checkpoint_path(out_dir))
            raise
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            save_checkpoint(last_good, _checkpoint_path(out_dir))
            write_history_csv(history, f"{out_dir}/history.csv")
        return TrainResult(model=self.model, uparams=self.uparams,
                           history=history, state=last_good)


@dataclass
class TrainResult:
    model: object
    uparams: object
    history: list
    state: CheckpointState


def _checkpoint_path(out_dir):
    return f"{out_dir}/checkpoint.npz"


def train(config, records, gen_config, out_dir=None):
    return Trainer(config, records, gen_config).run(out_dir=out_dir)


def load_model_from_checkpoint(path):
    """Rebuild the model a checkpoint was trained with and load its weights."""
    state = load_checkpoint(path)
    configs = state.meta["configs"]
    train_config = TrainConfig(**{**configs["train"],
                                  "model": ModelConfig(**_tupled(configs["train"]["model"]))})
    gen_config = GeneratorConfig(**_tupled(configs["generator"]))
    rng = np.random.default_rng([train_config.seed, 0])
    model, uparams, _ = build_model(train_config, gen_config, rng)
    named = dict(model.named_params())
    if uparams is not None:
        named.update({p.name: p for p in uparams.params()})
    for name, p in named.items():
        p.data[...] = state.params[name]
    return model, uparams, train_config, gen_config, state


def _tupled(d):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def write_history_csv(history, path):
    if not history:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    fields = list(history[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow(row)
