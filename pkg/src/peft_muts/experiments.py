"""Desk-scale synthetic benchmark shared by the few-shot and stability studies.

A small residual backbone is pre-trained by masked reconstruction on a pool
of univariate synthetic fragments.  Each seed then generates a fleet of
3-variable run-to-failure units, trains on 40 windows drawn from a handful
of units and tests on every window of the remaining units.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Rng
from .backbone import BackboneSpec, build_backbone
from .dataio import FewShotConfig, gen_synthetic, prepare, synthetic_pool
from .peft import ModelConfig, build_model
from .training import TrainConfig, evaluate, finetune
from .training.finetune import choose_probe
from .training.pretrain import PretrainConfig, pretrain_proxy
from .training.stability import stability_experiment

FEWSHOT_ARMS = ("peft", "linear", "full")


@dataclass
class DeskBenchmark:
    n_vars: int = 3
    window: int = 32
    step: int = 16
    units: int = 30
    train_units: int = 6
    n_train: int = 40
    noise: float = 0.05
    width: int = 8
    n_blocks: int = 4
    pool_size: int = 1024
    pool_seed: int = 100
    pretrain_epochs: int = 40
    pretrain_lr: float = 3e-3

    @property
    def spec(self):
        return BackboneSpec.small(width=self.width, n_blocks=self.n_blocks)

    def to_dict(self):
        return asdict(self)


def pretrained_backbone(bench=None, seed=0):
    """Proxy-pretrained frozen backbone and its reconstruction-loss curve."""
    bench = bench or DeskBenchmark()
    pool = synthetic_pool(bench.pool_size, bench.window, seed=bench.pool_seed, noise=bench.noise)
    cfg = PretrainConfig(epochs=bench.pretrain_epochs, batch_size=32, lr=bench.pretrain_lr, seed=seed)
    return pretrain_proxy(build_backbone(bench.spec, Rng(seed)), pool, cfg)


def fewshot_task(bench, seed):
    """``(x, y, test)`` for one seed: 40 normalised training windows and the held-out test set."""
    units = gen_synthetic(units=bench.units, n_vars=bench.n_vars, seed=seed, noise=bench.noise)
    prep = prepare(units[: bench.train_units], bench.window, bench.step, FewShotConfig(seed=seed),
                   test_units=units[bench.train_units:], source="synthetic")
    tr = prep.train
    n = min(bench.n_train, len(tr))
    idx = np.sort(Rng(seed).child("sub").choice(len(tr), size=n, replace=False))
    return tr.x[idx], tr.y[idx], prep.test


def few_shot_benefit(seeds=range(5), bench=None, backbone=None, epochs=300, lr=1e-3, arms=FEWSHOT_ARMS):
    """Test MAE per seed and arm, plus how often PEFT beats each baseline.

    ``linear`` trains only the regressor on the frozen pretrained backbone;
    ``full`` trains a randomly initialised backbone from scratch.
    """
    bench = bench or DeskBenchmark()
    if backbone is None:
        backbone, _ = pretrained_backbone(bench)
    rows = []
    for seed in seeds:
        x, y, test = fewshot_task(bench, seed)
        row = {"seed": seed, "n_train": len(y)}
        for arm in arms:
            cfg = ModelConfig(bench.n_vars, bench.window, arm=arm, backbone=bench.spec.to_dict())
            model = build_model(cfg, None if arm == "full" else backbone.copy(), Rng(seed))
            model, trace = finetune(model, x, y, TrainConfig(epochs=epochs, lr=lr, seed=seed), arm=arm)
            row[arm] = evaluate(model, test.x, test.y).mae
            row[f"{arm}_final_loss"] = trace.loss_mean[-1]
        rows.append(row)
    wins = {a: sum(r["peft"] < r[a] for r in rows) for a in arms if a != "peft" and "peft" in arms}
    return {"rows": rows, "wins": wins, "seeds": len(rows)}


def stability_task(seeds=range(5), bench=None, backbone=None, epochs=11, probe_epoch=10,
                   arms=("peft", "full"), data_seed=0):
    """Cross-seed loss dispersion for zero vs Kaiming regressors on one few-shot task."""
    bench = bench or DeskBenchmark()
    if backbone is None:
        backbone, _ = pretrained_backbone(bench)
    x, y, test = fewshot_task(bench, data_seed)
    probe = test.x[choose_probe(len(test), data_seed)]
    return stability_experiment(x, y, probe, backbone, seeds, TrainConfig(epochs=epochs), arms=arms,
                                probe_epoch=probe_epoch)
