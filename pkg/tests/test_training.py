import hashlib
import math

import numpy as np
import pytest

from peft_muts import checkpoint
from peft_muts.autodiff import Rng, Tensor
from peft_muts.backbone import BackboneSpec, build_backbone, save_weights
from peft_muts.errors import ContractError, NumericError, SpecError
from peft_muts.peft import ModelConfig, build_model
from peft_muts.training import AdamW, TrainConfig, compute_metrics, evaluate, finetune, lr_schedule
from peft_muts.training.finetune import read_trace_csv, write_trace_csv
from peft_muts.training.pretrain import PretrainConfig, pretrain_proxy, span_mask
from peft_muts.training.stability import stability_experiment
from peft_muts.training.variance import (
    VarianceLawParams, batch_exponent_note, grid, variance_law_mc, write_csv,
)

# -- optimizer --------------------------------------------------------------

def _param(value, grad, name="peft.0.A"):
    t = Tensor(np.array(value, dtype=np.float64), True, name)
    t.grad = np.array(grad, dtype=np.float64)
    return t


def test_adamw_zero_grad_no_decay_is_identity():
    p = _param([1.5, -2.0], [0.0, 0.0])
    AdamW({"p": p}, TrainConfig(weight_decay=0.0)).step()
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_adamw_decay_only_scales_exactly():
    w = np.array([1.5, -2.0, 0.25])
    p = _param(w, np.zeros(3))
    AdamW({"peft.0.A": p}, TrainConfig(lr=1e-3, weight_decay=0.01)).step()
    assert p.data.tobytes() == (w * (1 - 1e-5)).tobytes()


def test_adamw_matches_scalar_oracle():
    lr, b1, b2, eps, wd, g = 1e-3, 0.9, 0.999, 1e-8, 0.01, 0.3
    w, m, v = 0.7, 0.0, 0.0
    p = _param(0.7, g)
    opt = AdamW({"peft.0.A": p}, TrainConfig(lr=lr, weight_decay=wd))
    for t in range(1, 4):
        w *= 1 - lr * wd
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        p.grad = np.array(g)
        opt.step()
        assert abs(p.data.item() - w) < 1e-12


def test_adamw_skips_decay_for_meta_and_bias():
    u = _param([1.0], [0.0], "meta.u")
    b = _param(2.0, 0.0, "regressor.bias")
    AdamW({"meta.u": u, "regressor.bias": b}, TrainConfig(weight_decay=0.5)).step()
    assert u.data[0] == 1.0 and b.data.item() == 2.0


def test_adamw_nan_gradient_names_tensor():
    p = _param([1.0], [np.nan])
    with pytest.raises(NumericError, match="peft.3.W"):
        AdamW({"peft.3.W": p}, TrainConfig()).step()


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_schedule(0, cfg) == 1e-3
    assert lr_schedule(1, cfg) == pytest.approx(9.9e-4, rel=1e-15)
    assert lr_schedule(100, cfg) == pytest.approx(3.66e-4, rel=1e-3)


@pytest.mark.parametrize("kw", [{"lr": -1.0}, {"lr_decay": 0.0}, {"lr_decay": 1.5}, {"batch_size": 0}])
def test_train_config_validation(kw):
    with pytest.raises(SpecError):
        TrainConfig(**kw)


# -- metrics ----------------------------------------------------------------

def _loop_metrics(y, p):
    n = len(y)
    mae = sum(abs(a - b) for a, b in zip(y, p)) / n
    rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(y, p)) / n)
    nz = [(a, b) for a, b in zip(y, p) if a != 0]
    mape = 100 * sum(abs(a - b) / abs(a) for a, b in nz) / len(nz)
    sm = 0.0
    for a, b in zip(y, p):
        d = (abs(a) + abs(b)) / 2
        sm += 0.0 if d == 0 else abs(a - b) / d
    return mae, rmse, mape, 100 * sm / n


def test_metrics_match_scalar_loops():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        y = rng.uniform(0, 1, n)
        y[rng.random(n) < 0.1] = 0.0
        y[0] = 0.5
        p = rng.uniform(-0.2, 1.2, n)
        r = compute_metrics(y, p)
        for got, want in zip((r.mae, r.rmse, r.mape, r.smape), _loop_metrics(list(y), list(p))):
            assert abs(got - want) <= 1e-12 * max(1.0, abs(want))
        assert r.rmse >= r.mae


def test_metric_examples():
    r = compute_metrics([1.0, 1.0], [0.0, 2.0])
    assert (r.mae, r.rmse, r.mape) == (1.0, 1.0, 100.0)
    assert compute_metrics([0.0], [0.5]).smape == 200.0
    r = compute_metrics([0.0, 0.3], [0.0, 0.3])
    assert (r.mae, r.rmse, r.mape, r.smape, r.mape_skipped) == (0.0, 0.0, 0.0, 0.0, 1)


def test_metrics_errors():
    with pytest.raises(ContractError):
        compute_metrics([], [])
    with pytest.raises(ContractError):
        compute_metrics([1.0], [1.0, 2.0])


# -- fine-tuning ------------------------------------------------------------

SMALL = BackboneSpec.from_channels([4, 8, 8], embed_kernel=5, embed_stride=1)


def _model(seed=0, **kw):
    cfg = ModelConfig(3, 16, backbone=SMALL.to_dict(), **kw)
    return build_model(cfg, rng=Rng(seed))


def _data(n=12, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, 3, 16))
    return x, x.mean(axis=(1, 2))


def _bytes(model):
    return checkpoint.encode(model.state_dict())


def test_zero_lr_leaves_model_unchanged():
    m = _model()
    before = _bytes(m)
    x, y = _data(1)
    finetune(m, x, y, TrainConfig(lr=0.0, epochs=1))
    assert _bytes(m) == before


def test_first_batch_loss_of_zero_init_model():
    x, y = _data(8)
    _, tr = finetune(_model(), x, y, TrainConfig(epochs=1, batch_size=8))
    assert tr.batch_losses[0][0] == pytest.approx(np.sum(y**2) / (2 * 8), rel=1e-15)


def test_frozen_backbone_hash_unchanged():
    m = _model()
    h0 = hashlib.sha256(checkpoint.encode(m.backbone.state_dict())).hexdigest()
    x, y = _data()
    finetune(m, x, y, TrainConfig(epochs=3))
    assert hashlib.sha256(checkpoint.encode(m.backbone.state_dict())).hexdigest() == h0


def test_finetune_deterministic():
    x, y = _data()
    a, ta = finetune(_model(1), x, y, TrainConfig(epochs=3, seed=4), probe_x=x[:5])
    b, tb = finetune(_model(1), x, y, TrainConfig(epochs=3, seed=4), probe_x=x[:5])
    assert _bytes(a) == _bytes(b)
    assert ta.loss_mean == tb.loss_mean and ta.sigma_z_norm == tb.sigma_z_norm


def test_partial_batch_kept():
    x, y = _data(10)
    _, tr = finetune(_model(), x, y, TrainConfig(epochs=1, batch_size=4))
    assert len(tr.batch_losses[0]) == 3


def test_finetune_reduces_loss():
    x, y = _data(16)
    _, tr = finetune(_model(), x, y, TrainConfig(epochs=30, lr=1e-2))
    assert tr.loss_mean[-1] < tr.loss_mean[0]


def test_finetune_empty_set_errors():
    with pytest.raises(ContractError):
        finetune(_model(), np.zeros((0, 3, 16)), np.zeros(0), TrainConfig(epochs=1))


def test_float32_training_runs():
    x, y = _data(8)
    m, tr = finetune(_model(), x, y, TrainConfig(epochs=2, dtype="float32"))
    assert m.reg_weight.data.dtype == np.float32
    assert np.isfinite(tr.loss_mean).all()


def test_evaluate_and_trace_csv(tmp_path):
    x, y = _data(8)
    m, tr = finetune(_model(), x, y, TrainConfig(epochs=2), probe_x=x)
    assert evaluate(m, x, y).n == 8
    write_trace_csv(tmp_path / "t.csv", [tr])
    rows = read_trace_csv(tmp_path / "t.csv")
    assert [r["epoch"] for r in rows] == ["0", "1"]
    assert float(rows[1]["sigma_z_norm"]) == tr.sigma_z_norm[1]


# -- stability --------------------------------------------------------------

def test_stability_needs_two_seeds():
    x, y = _data(4)
    with pytest.raises(SpecError):
        stability_experiment(x, y, x, build_backbone(SMALL, Rng(0)), seeds=[0])


def test_stability_zero_lr_constant_sigma_and_shared_first_loss():
    x, y = _data(8)
    cfg = TrainConfig(lr=0.0, epochs=3, weight_decay=0.0)
    traces, summary = stability_experiment(x, y, x, build_backbone(SMALL, Rng(0)), seeds=[0, 1],
                                           cfg=cfg, arms=("peft",), probe_epoch=2, data_seed=9)
    for runs in traces.values():
        for tr in runs:
            assert len(set(tr.sigma_z_norm)) == 1
    zero = traces[("peft", "zero")]
    assert zero[0].loss_mean[0] == zero[1].loss_mean[0]
    assert set(summary["comparison"]) == {"peft"}


# -- variance law -----------------------------------------------------------

def test_variance_zero_init_matches_closed_form():
    r = variance_law_mc(VarianceLawParams(sigma_phi=0.0, trials=100_000))
    assert abs(r["measured"] / r["predicted_zero"] - 1) < 0.1
    assert "eta^2/B form" in batch_exponent_note(r) and r["measured"] > r["predicted_zero_b2"] * 4


def test_variance_random_init_matches_exact_iid_form():
    r = variance_law_mc(VarianceLawParams(sigma_phi=1.0, trials=50_000))
    assert abs(r["measured"] / r["predicted_exact"] - 1) < 0.1


def test_variance_degenerate_and_errors():
    assert variance_law_mc(VarianceLawParams(sigma_z=0.0, trials=10_000))["measured"] == 0.0
    assert variance_law_mc(VarianceLawParams(d=0, trials=10_000))["measured"] == 0.0
    with pytest.raises(SpecError):
        variance_law_mc(VarianceLawParams(trials=100))


def test_variance_grid_zero_init_is_smallest(tmp_path):
    rows = grid(sigma_zs=(0.5, 1.0, 2.0), trials=10_000)
    for sz in (0.5, 1.0, 2.0):
        sub = [r for r in rows if r["sigma_z"] == sz]
        zero = [r["measured"] for r in sub if r["sigma_phi"] == 0.0][0]
        assert all(zero < r["measured"] for r in sub if r["sigma_phi"] > 0)
    write_csv(tmp_path / "v.csv", rows)
    header = (tmp_path / "v.csv").read_text().splitlines()[0]
    assert header == "sigma_z,sigma_phi,measured,predicted_random,predicted_zero,trials"


# -- proxy pre-training -----------------------------------------------------

def _pool(n=24, T=16):
    t = np.linspace(0, 1, T)
    ph = np.random.default_rng(0).uniform(0, 1, n)
    return 0.5 + 0.5 * np.sin(2 * np.pi * (t[None, :] + ph[:, None]))


def test_span_mask():
    m = span_mask(5, 16, 0.25, Rng(0))
    assert (m.sum(axis=1) == 4).all()
    for row in m:
        idx = np.flatnonzero(row)
        assert (np.diff(idx) == 1).all()
    assert not span_mask(3, 16, 0.0, Rng(0)).any()


def test_pretrain_zero_mask_loss_is_zero():
    _, losses = pretrain_proxy(build_backbone(SMALL, Rng(0)), _pool(), PretrainConfig(epochs=1, mask_ratio=0.0))
    assert losses == [0.0, 0.0]


def test_pretrain_reduces_loss_and_is_deterministic(tmp_path):
    cfg = PretrainConfig(epochs=2, batch_size=8, lr=3e-3)
    _, losses = pretrain_proxy(build_backbone(SMALL, Rng(0)), _pool(), cfg, tmp_path / "a.pmts")
    pretrain_proxy(build_backbone(SMALL, Rng(0)), _pool(), cfg, tmp_path / "b.pmts")
    assert losses[-1] < losses[0]
    assert (tmp_path / "a.pmts").read_bytes() == (tmp_path / "b.pmts").read_bytes()


def test_pretrain_empty_pool():
    with pytest.raises(ContractError):
        pretrain_proxy(build_backbone(SMALL, Rng(0)), np.zeros((0, 16)))


def test_pretrained_weights_load_into_model(tmp_path):
    bb, _ = pretrain_proxy(build_backbone(SMALL, Rng(0)), _pool(), PretrainConfig(epochs=1))
    save_weights(bb, tmp_path / "bb.pmts")
    assert bb.frozen
