"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The synthetic-recovery criteria (8 and 10) train all three model variants on
the default generator for three seeds; run with ``pytest -s`` to watch the
per-criterion lines appear.
"""

import math
import time

import numpy as np
import numpy.testing as npt
import pytest

from funnelnet import autograd as ag
from funnelnet.autograd import Tensor
from funnelnet.data import GeneratorConfig, generate_split, stack_records
from funnelnet.gradcheck import DEFAULT_SEEDS, run_component_checks
from funnelnet.layers import Cin, FieldSchema, MultiHeadSelfAttention, attention
from funnelnet.losses import (
    CLS_TASKS, UncertaintyParams, equal_weight_combine, task_losses,
    uncertainty_combine,
)
from funnelnet.metrics import (
    auc, collect_scores, policy_metrics, regression_metrics,
    simulate_allocation,
)
from funnelnet.model import (
    GatedFusion, IntentModel, ModelConfig, PROB_CEIL, PROB_FLOOR,
    total_probability,
)
from funnelnet.training import Trainer, TrainConfig, train
from oracles import attention_oracle, auc_pair_oracle, cin_oracle, multi_head_oracle

ACCEPT_EPOCHS = 16
SEEDS = (7, 8, 9)
MAJORITY = 2  # each clause must hold on at least 2 of the 3 seeds


def _report(number, name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"[criterion {number:2d}] {name}: {status}  {detail}")
    assert passed, f"criterion {number} ({name}) failed: {detail}"


def test_criterion_01_gradient_integrity():
    t0 = time.time()
    results = run_component_checks(seeds=DEFAULT_SEEDS)
    elapsed = time.time() - t0
    bad = {k: v.error for k, v in results.items() if not v.passed}
    worst = max(results.values(), key=lambda r: r.error / r.tolerance)
    _report(1, "gradient integrity", not bad and elapsed < 30.0,
            f"{len(results)} components, worst rel err {worst.error:.2e}, "
            f"{elapsed:.1f}s (budget 30s); failures: {bad}")


def test_criterion_02_cin_oracle_equivalence():
    t0 = time.time()
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        m = int(rng.integers(1, 6))
        dim = int(rng.integers(1, 6))
        sizes = tuple(int(rng.integers(1, 6)) for _ in range(int(rng.integers(1, 3))))
        cin = Cin(m, dim, sizes, rng)
        x0 = rng.standard_normal((m, dim))
        got = cin.forward(Tensor(x0)).data
        want = cin_oracle(x0, [w.data for w in cin.weights], sizes)
        worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.time() - t0
    _report(2, "feature-crossing oracle equivalence",
            worst < 1e-10 and elapsed < 5.0,
            f"100 instances, max abs diff {worst:.2e}, {elapsed:.1f}s (budget 5s)")


def test_criterion_03_attention_oracle_equivalence():
    worst_attn, worst_mh = 0.0, 0.0
    for i in range(100):
        rng = np.random.default_rng(2000 + i)
        t = int(rng.integers(1, 7))
        d_k = int(rng.integers(1, 5))
        d_v = int(rng.integers(1, 5))
        q, k = rng.standard_normal((t, d_k)), rng.standard_normal((t, d_k))
        v = rng.standard_normal((t, d_v))
        got = attention(Tensor(q), Tensor(k), Tensor(v)).data
        worst_attn = max(worst_attn, float(np.max(np.abs(got - attention_oracle(q, k, v)))))

        heads = int(rng.choice([1, 2]))
        d_model = heads * int(rng.integers(1, 5))
        mhsa = MultiHeadSelfAttention(d_model, heads, rng)
        x = rng.standard_normal((t, d_model))
        got = mhsa.forward(Tensor(x)).data
        worst_mh = max(worst_mh, float(np.max(np.abs(got - multi_head_oracle(mhsa, x)))))
    _report(3, "attention oracle equivalence",
            worst_attn < 1e-12 and worst_mh < 1e-12,
            f"100 instances, attention {worst_attn:.2e}, multi-head {worst_mh:.2e}")


def _tiny_model(seed):
    rng = np.random.default_rng(seed)
    config = ModelConfig(embed_dim=3, cin_layers=(3,), d_model=4, attn_heads=2,
                         trunk_width=6, trunk_hidden=6, head_width=4)
    model = IntentModel(FieldSchema.from_cardinalities([4, 3, 5], 3), 2, config, rng)
    for p in model.named_params().values():
        p.data[...] = rng.uniform(-0.8, 0.8, p.data.shape)
    return model, rng


def test_criterion_04_composition_consistency():
    worst = 0.0
    checked = 0
    for instance in range(20):
        model, rng = _tiny_model(3000 + instance)
        n = 50
        idx = np.column_stack([rng.integers(0, c, n) for c in (4, 3, 5)])
        short = rng.standard_normal((n, 3, 2))
        long = rng.standard_normal((n, 2, 2))
        out = model.forward(idx, short, long)
        for b in range(n):
            composed = total_probability(
                out.p_browse.data[b], out.p_collect.data[b], out.p_cart.data[b],
                out.q_browse.data[b], out.q_collect.data[b], out.q_cart.data[b])
            clamped = min(max(composed, PROB_FLOOR), PROB_CEIL)
            worst = max(worst, abs(out.p_purchase.data[b] - clamped))
            checked += 1
    # exact symmetry of the composition under permutation of the conditions
    rng = np.random.default_rng(99)
    symmetric = True
    for _ in range(200):
        p, q = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        base = total_probability(p[0], p[1], p[2], q[0], q[1], q[2])
        for perm in ((1, 0, 2), (2, 1, 0), (0, 2, 1), (1, 2, 0), (2, 0, 1)):
            if total_probability(p[perm[0]], p[perm[1]], p[perm[2]],
                                 q[perm[0]], q[perm[1]], q[perm[2]]) != base:
                symmetric = False
    _report(4, "total-probability composition",
            checked == 1000 and worst < 1e-12 and symmetric,
            f"{checked} forwards, max |forward - composed| {worst:.2e}, "
            f"permutation exactness: {symmetric}")


def test_criterion_05_gate_saturation_limits():
    worst_high, worst_low = 0.0, 0.0
    for seed in range(5):
        rng = np.random.default_rng(4000 + seed)
        fuse = GatedFusion(16, rng, "fuse")
        for w in (fuse.w_update, fuse.w_reset, fuse.w_cand):
            w.data *= 0.2
        h_cond = rng.uniform(-1, 1, (20, 16))
        h_pur = rng.uniform(-1, 1, (20, 16))

        fuse.b_update.data[:] = 20.0
        out = fuse.forward(Tensor(h_cond), Tensor(h_pur))
        worst_high = max(worst_high, float(np.max(np.abs(out.data - h_cond))))

        fuse.b_update.data[:] = -20.0
        out = fuse.forward(Tensor(h_cond), Tensor(h_pur))
        both = np.concatenate([h_cond, h_pur], axis=-1)
        reset = 1 / (1 + np.exp(-(both @ fuse.w_reset.data.T + fuse.b_reset.data)))
        cand = np.tanh(np.concatenate([reset * h_cond, h_pur], axis=-1)
                       @ fuse.w_cand.data.T + fuse.b_cand.data)
        worst_low = max(worst_low, float(np.max(np.abs(out.data - cand))))
    _report(5, "gate saturation limits",
            worst_high < 1e-6 and worst_low < 1e-6,
            f"bias +20: {worst_high:.2e}, bias -20: {worst_low:.2e} (tol 1e-6)")


def test_criterion_06_loss_reductions():
    rng = np.random.default_rng(5)
    values = rng.uniform(0.2, 2.0, 4)
    reg_value = float(rng.uniform(0.2, 2.0))

    params = UncertaintyParams()
    cls = {t: Tensor(v) for t, v in zip(CLS_TASKS, values)}
    bd = uncertainty_combine(cls, Tensor(reg_value), params)
    exact = bd.total == values.sum() + 0.5 * reg_value

    # finite differences of d total / d s_i against the closed form
    eps = 1e-5
    fd_ok = True
    for task, value in zip(CLS_TASKS, values):
        s = params.log_vars[task]
        for point in (0.0, 0.3, -0.4):
            s.data[...] = point
            plus = uncertainty_combine(cls, Tensor(reg_value), params).total
            s.data[...] = point - 2 * eps
            minus = uncertainty_combine(cls, Tensor(reg_value), params).total
            s.data[...] = point - eps
            closed = -math.exp(-float(s.data)) * value + 0.5
            fd_ok = fd_ok and abs((plus - minus) / (2 * eps) - closed) < 1e-8
            s.data[...] = 0.0

    # code-path equality of shared-parameter gradients at s = 0
    gen = GeneratorConfig(field_cardinalities=(4, 3, 5), short_len=4,
                          long_len=3, channels=2, n_train=128)
    from funnelnet.data import generate_synthetic
    records = generate_synthetic(gen, seed=1, n_examples=128)
    model_cfg = ModelConfig(embed_dim=4, cin_layers=(4,), d_model=4,
                            attn_heads=2, trunk_width=8, trunk_hidden=8,
                            head_width=4)

    def step_grads(scheme):
        cfg = TrainConfig(model=model_cfg, epochs=0, seed=3, loss_scheme=scheme)
        trainer = Trainer(cfg, records, gen)
        ds = trainer.dataset
        out = trainer.model.forward(ds.fields, ds.short, ds.long)
        cls_l, reg_l = task_losses(out, ds.y_browse, ds.y_collect, ds.y_cart,
                                   ds.y_purchase, ds.order_volume)
        if scheme == "uncertainty":
            uncertainty_combine(cls_l, reg_l, trainer.uparams).total_tensor.backward()
        else:
            equal_weight_combine(cls_l, reg_l).total_tensor.backward()
        return {name: (np.zeros_like(p.data) if p.grad is None else p.grad)
                for name, p in trainer.model.named_params().items()}

    g_u, g_e = step_grads("uncertainty"), step_grads("equal")
    max_diff = max(float(np.max(np.abs(g_u[k] - g_e[k]))) for k in g_u)
    bitwise = all(np.array_equal(g_u[k], g_e[k]) for k in g_u)
    _report(6, "uncertainty-loss reductions",
            exact and fd_ok and (bitwise or max_diff < 1e-12),
            f"s=0 reduction exact: {exact}, fd matches closed form: {fd_ok}, "
            f"grad paths bitwise: {bitwise} (max diff {max_diff:.1e})")


def test_criterion_07_metric_correctness():
    auc_ok = True
    for i in range(200):
        rng = np.random.default_rng(6000 + i)
        n = int(rng.integers(4, 51))
        scores = np.round(rng.uniform(0, 1, n), 1)
        labels = rng.integers(0, 2, n)
        if np.all(labels == labels[0]):
            labels[0] = 1 - labels[0]
        if abs(auc(scores, labels) - auc_pair_oracle(scores, labels)) > 1e-12:
            auc_ok = False

    m = regression_metrics([1.0, 1.0], [0.0, 2.0])
    mape_ok = m.mape == 0.75

    rng = np.random.default_rng(61)
    targets = rng.poisson(1.2, 50).astype(float)
    preds = rng.uniform(0, 4, 50)
    base = regression_metrics(preds, targets).wmape
    scale_ok = all(
        abs(regression_metrics(preds * s, targets * s).wmape - base) <= 1e-12 * base
        for s in rng.uniform(0.01, 1000.0, 20))
    _report(7, "metric correctness", auc_ok and mape_ok and scale_ok,
            f"auc oracle 200 cases: {auc_ok}, zero-denominator example: {mape_ok}, "
            f"wmape scale invariance: {scale_ok}")


@pytest.fixture(scope="module")
def trained():
    results = {}
    for seed in SEEDS:
        gen = GeneratorConfig()
        train_recs, test_recs = generate_split(gen, seed=seed)
        test_ds = stack_records(test_recs)
        per = {
            "test_ds": test_ds,
            "oracle_auc": auc(test_ds.truth_purchase, test_ds.y_purchase),
            "times": {},
        }
        for variant in ("full", "mtl-equal", "lr"):
            cfg = TrainConfig(variant=variant, epochs=ACCEPT_EPOCHS, seed=seed)
            t0 = time.time()
            result = train(cfg, train_recs, gen)
            per["times"][variant] = time.time() - t0
            scores = collect_scores(result.model, test_ds)
            per[variant] = {
                "purchase_auc": auc(scores["p_purchase"], test_ds.y_purchase),
                "wmape": regression_metrics(scores["ov"], test_ds.order_volume).wmape,
                "purchase_scores": scores["p_purchase"],
            }
        results[seed] = per
    return results


def test_criterion_08_synthetic_recovery(trained):
    clauses = {"a_vs_lr": 0, "b_vs_mtl": 0, "c_vs_oracle": 0, "d_wmape": 0}
    details = []
    slowest = 0.0
    for seed, per in trained.items():
        full = per["full"]
        clauses["a_vs_lr"] += full["purchase_auc"] >= per["lr"]["purchase_auc"] + 0.01
        clauses["b_vs_mtl"] += full["purchase_auc"] >= per["mtl-equal"]["purchase_auc"] - 0.005
        clauses["c_vs_oracle"] += full["purchase_auc"] >= per["oracle_auc"] - 0.05
        clauses["d_wmape"] += full["wmape"] <= per["lr"]["wmape"]
        slowest = max(slowest, per["times"]["full"])
        details.append(
            f"seed {seed}: oracle {per['oracle_auc']:.4f} full {full['purchase_auc']:.4f} "
            f"mtl {per['mtl-equal']['purchase_auc']:.4f} lr {per['lr']['purchase_auc']:.4f} "
            f"wmape full/lr {full['wmape']:.3f}/{per['lr']['wmape']:.3f}")
    passed = all(v >= MAJORITY for v in clauses.values()) and slowest < 600.0
    _report(8, "synthetic recovery",
            passed,
            f"clause passes {clauses} (need >= {MAJORITY}/3 each), "
            f"slowest full training {slowest:.0f}s (budget 600s); " + "; ".join(details))


def test_criterion_09_determinism_and_persistence(tmp_path):
    gen = GeneratorConfig(field_cardinalities=(4, 3, 5), short_len=4,
                          long_len=3, channels=2, n_train=256)
    from funnelnet.data import generate_synthetic
    records = generate_synthetic(gen, seed=2, n_examples=256)
    model_cfg = ModelConfig(embed_dim=4, cin_layers=(4,), d_model=4,
                            attn_heads=2, trunk_width=8, trunk_hidden=8,
                            head_width=4)
    cfg = TrainConfig(model=model_cfg, epochs=2, batch_size=64, seed=5)
    a = train(cfg, records, gen, out_dir=str(tmp_path / "a"))
    b = train(cfg, records, gen)
    identical = all(np.array_equal(a.state.params[k], b.state.params[k])
                    for k in a.state.params)

    from funnelnet.training import load_model_from_checkpoint
    ds = stack_records(records[:48])
    before = a.model.forward(ds.fields, ds.short, ds.long)
    model, _, _, _, _ = load_model_from_checkpoint(tmp_path / "a" / "checkpoint.npz")
    after = model.forward(ds.fields, ds.short, ds.long)
    round_trip = all(
        np.array_equal(getattr(before, name).data, getattr(after, name).data)
        for name in ("p_browse", "p_collect", "p_cart", "q_browse", "q_collect",
                     "q_cart", "p_purchase", "ov_pred"))
    _report(9, "determinism and persistence", identical and round_trip,
            f"same-seed params identical: {identical}, "
            f"round-trip forward bit-identical: {round_trip}")


def test_criterion_10_policy_simulation(trained):
    wins = 0
    details = []
    for seed, per in trained.items():
        ds = per["test_ds"]
        scores = per["full"]["purchase_scores"]
        vr_model = policy_metrics(simulate_allocation(
            scores, ds.y_purchase, ds.order_volume, "model",
            seed=seed)).verification_rate
        vr_random = policy_metrics(simulate_allocation(
            scores, ds.y_purchase, ds.order_volume, "random",
            seed=seed)).verification_rate
        wins += vr_model >= vr_random
        details.append(f"seed {seed}: model {vr_model:.3f} vs random {vr_random:.3f}")
    _report(10, "policy simulation sanity", wins >= MAJORITY,
            f"{wins}/3 seeds favored the model strategy; " + "; ".join(details))
