import numpy as np
import numpy.testing as npt
import pytest

from funnelnet.autograd import Tensor
from funnelnet.data import GeneratorConfig, generate_synthetic, stack_records
from funnelnet.errors import ContractError, NumericError
from funnelnet.losses import task_losses, uncertainty_combine, equal_weight_combine
from funnelnet.model import ModelConfig
from funnelnet.training import (
    Adam, Trainer, TrainConfig, load_checkpoint, load_model_from_checkpoint,
    save_checkpoint, train,
)

SMALL_GEN = GeneratorConfig(field_cardinalities=(4, 3, 5), short_len=4,
                            long_len=3, channels=2, n_train=256, n_test=64)
SMALL_MODEL = ModelConfig(embed_dim=4, cin_layers=(4,), d_model=4, attn_heads=2,
                          trunk_width=8, trunk_hidden=8, head_width=4)


def small_records(seed=7, n=256):
    return generate_synthetic(SMALL_GEN, seed=seed, n_examples=n)


def small_config(**overrides):
    base = dict(model=SMALL_MODEL, epochs=2, batch_size=64, seed=3)
    base.update(overrides)
    return TrainConfig(**base)


class TestAdam:
    def test_zero_gradient_leaves_fresh_params_unchanged(self):
        w = Tensor([1.0, -2.0], requires_grad=True, name="w")
        opt = Adam({"w": w})
        w.grad = np.zeros(2)
        opt.step()
        npt.assert_array_equal(w.data, [1.0, -2.0])
        npt.assert_array_equal(opt.m["w"], 0.0)

    def test_moments_decay_on_zero_gradient(self):
        w = Tensor([1.0], requires_grad=True, name="w")
        opt = Adam({"w": w})
        w.grad = np.array([2.0])
        opt.step()
        m_before = opt.m["w"].copy()
        w.grad = np.array([0.0])
        opt.step()
        assert abs(opt.m["w"][0]) < abs(m_before[0])

    def test_constant_gradient_update_approaches_lr(self):
        w = Tensor(0.0, requires_grad=True, name="w")
        opt = Adam({"w": w}, lr=0.01)
        prev = float(w.data)
        for _ in range(300):
            w.grad = np.asarray(4.2)
            opt.step()
            delta = float(w.data) - prev
            prev = float(w.data)
        assert abs(abs(delta) - 0.01) < 1e-6

    def test_quadratic_converges(self):
        w = Tensor(0.0, requires_grad=True, name="w")
        opt = Adam({"w": w}, lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            ((w - 3.0) ** 2).backward()
            opt.step()
        assert abs(float(w.data) - 3.0) < 1e-4

    def test_non_finite_gradient_names_tensor(self):
        w = Tensor([1.0], requires_grad=True, name="trunk.proj.weight")
        opt = Adam({"trunk.proj.weight": w})
        w.grad = np.array([float("nan")])
        with pytest.raises(NumericError, match="trunk.proj.weight"):
            opt.step()

    def test_missing_gradient_treated_as_zero(self):
        w = Tensor([1.0], requires_grad=True, name="w")
        opt = Adam({"w": w})
        opt.step()
        npt.assert_array_equal(w.data, [1.0])


class TestTrainConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ContractError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ContractError):
            TrainConfig(loss_scheme="softmax")
        with pytest.raises(ContractError):
            TrainConfig(variant="xgboost")


class TestTrainLoop:
    def test_zero_epochs_returns_untouched_initialization(self):
        records = small_records()
        result = train(small_config(epochs=0), records, SMALL_GEN)
        fresh = Trainer(small_config(epochs=0), records, SMALL_GEN)
        for name, p in fresh.model.named_params().items():
            npt.assert_array_equal(result.state.params[name], p.data)
        assert result.history == []
        assert result.state.epoch == 0

    def test_same_seed_identical_final_parameters(self):
        records = small_records()
        a = train(small_config(), records, SMALL_GEN)
        b = train(small_config(), records, SMALL_GEN)
        for name in a.state.params:
            npt.assert_array_equal(a.state.params[name], b.state.params[name])

    def test_different_seed_differs(self):
        records = small_records()
        a = train(small_config(), records, SMALL_GEN)
        b = train(small_config(seed=4), records, SMALL_GEN)
        assert any(not np.array_equal(a.state.params[k], b.state.params[k])
                   for k in a.state.params)

    def test_history_rows_carry_losses_weights_and_variances(self):
        result = train(small_config(epochs=2), small_records(), SMALL_GEN)
        assert len(result.history) == 2
        row = result.history[0]
        for key in ("loss_browse", "loss_purchase", "loss_order_volume",
                    "weight_browse", "regularizer", "total",
                    "sigma2_purchase", "sigma2_order_volume"):
            assert key in row
        assert result.history[0]["epoch"] == 1

    def test_purchase_loss_decreases_early(self):
        # soft check: must hold for at least one of three seeds
        ok = 0
        for seed in (3, 4, 5):
            result = train(small_config(epochs=3, seed=seed),
                           small_records(n=512), SMALL_GEN)
            losses = [row["loss_purchase"] for row in result.history]
            ok += losses[0] > losses[1] > losses[2]
        assert ok >= 1

    def test_numeric_error_checkpoints_last_good_epoch(self, tmp_path):
        trainer = Trainer(small_config(epochs=2), small_records(), SMALL_GEN)
        trainer.model.trunk_proj.weight.data[0, 0] = float("nan")
        with pytest.raises(NumericError):
            trainer.run(out_dir=str(tmp_path))
        state = load_checkpoint(tmp_path / "checkpoint.npz")
        assert state.epoch == 0  # aborted during epoch 1

    def test_equal_weight_gradients_match_uncertainty_at_s_zero(self):
        records = small_records(n=128)
        cfg_u = small_config(loss_scheme="uncertainty", epochs=0)
        cfg_e = small_config(loss_scheme="equal", epochs=0)
        tr_u = Trainer(cfg_u, records, SMALL_GEN)
        tr_e = Trainer(cfg_e, records, SMALL_GEN)
        ds = tr_u.dataset

        def step_grads(trainer, combine):
            out = trainer.model.forward(ds.fields[:64], ds.short[:64], ds.long[:64])
            cls, reg = task_losses(out, ds.y_browse[:64], ds.y_collect[:64],
                                   ds.y_cart[:64], ds.y_purchase[:64],
                                   ds.order_volume[:64])
            combine(cls, reg).total_tensor.backward()
            return {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                    for name, p in trainer.model.named_params().items()}

        g_u = step_grads(tr_u, lambda c, r: uncertainty_combine(c, r, tr_u.uparams))
        g_e = step_grads(tr_e, equal_weight_combine)
        assert set(g_u) == set(g_e)
        for name in g_u:
            npt.assert_array_equal(g_u[name], g_e[name])


class TestCheckpoint:
    def test_round_trip_bit_identical_forward(self, tmp_path):
        records = small_records()
        result = train(small_config(), records, SMALL_GEN, out_dir=str(tmp_path))
        ds = stack_records(records[:32])
        before = result.model.forward(ds.fields, ds.short, ds.long)

        model, _, _, _, state = load_model_from_checkpoint(tmp_path / "checkpoint.npz")
        after = model.forward(ds.fields, ds.short, ds.long)
        for name in ("p_browse", "p_collect", "p_cart", "p_purchase", "ov_pred"):
            npt.assert_array_equal(getattr(before, name).data,
                                   getattr(after, name).data)
        assert state.meta["config_hash"] == result.state.meta["config_hash"]

    def test_checkpoint_files_identical_for_same_seed(self, tmp_path):
        records = small_records()
        train(small_config(), records, SMALL_GEN, out_dir=str(tmp_path / "a"))
        train(small_config(), records, SMALL_GEN, out_dir=str(tmp_path / "b"))
        a = load_checkpoint(tmp_path / "a" / "checkpoint.npz")
        b = load_checkpoint(tmp_path / "b" / "checkpoint.npz")
        assert a.meta == b.meta
        for name in a.params:
            npt.assert_array_equal(a.params[name], b.params[name])
            npt.assert_array_equal(a.adam_m[name], b.adam_m[name])

    def test_history_csv_written(self, tmp_path):
        train(small_config(epochs=1), small_records(), SMALL_GEN,
              out_dir=str(tmp_path))
        text = (tmp_path / "history.csv").read_text()
        header = text.splitlines()[0]
        assert header.startswith("epoch,loss_browse")
        assert "sigma2_order_volume" in header

    def test_save_load_optimizer_state(self, tmp_path):
        records = small_records()
        result = train(small_config(epochs=1), records, SMALL_GEN)
        path = tmp_path / "ck.npz"
        save_checkpoint(result.state, path)
        state = load_checkpoint(path)
        assert state.adam_t == result.state.adam_t
        assert state.epoch == 1


class TestVariants:
    def test_mtl_equal_has_no_uncertainty_params(self):
        trainer = Trainer(small_config(variant="mtl-equal"), small_records(),
                          SMALL_GEN)
        assert trainer.uparams is None
        assert trainer.scheme == "equal"
        assert trainer.model.fusion is False

    def test_lr_variant_builds_linear_baseline(self):
        from funnelnet.baselines import LinearBaseline
        trainer = Trainer(small_config(variant="lr"), small_records(), SMALL_GEN)
        assert isinstance(trainer.model, LinearBaseline)
        result = trainer.run()
        assert len(result.history) == 2

    def test_tmp_dirs_needed_for_checkpoint_only(self):
        result = train(small_config(epochs=1), small_records(), SMALL_GEN)
        assert result.state.epoch == 1
