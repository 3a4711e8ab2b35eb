"""Fine-tuning stability experiment.

Runs every (backbone arm, regressor init) pair over several seeds on the
same data and compares how much the early training loss varies between
seeds.  Arms:

* ``peft``   pretrained frozen backbone with adapters and meta-variable
* ``full``   pretrained backbone, every weight trained, no adapters
* ``random`` randomly initialised backbone, every weight trained
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..autodiff import Rng
from ..errors import SpecError
from ..peft import ModelConfig, build_model
from .finetune import finetune
from .optim import TrainConfig

ARMS = ("peft", "full", "random")
INITS = ("zero", "kaiming")


def arm_model(arm, init, *, n_vars, window, backbone, seed, ranks=None):
    """Model for one arm; ``backbone`` is the pretrained state (copied, never mutated)."""
    if arm not in ARMS:
        raise SpecError(f"unknown stability arm {arm!r}")
    if init not in INITS:
        raise SpecError(f"unknown regressor init {init!r}")
    spec = backbone.spec
    cfg = ModelConfig(n_vars, window, "peft" if arm == "peft" else "full",
                      meta_variable=arm == "peft", zero_init=init == "zero", ranks=ranks,
                      backbone=spec.to_dict())
    rng = Rng(seed).child("model")
    bb = None if arm == "random" else backbone.copy()
    return build_model(cfg, bb, rng)


def stability_experiment(x, y, probe_x, backbone, seeds, cfg=None, arms=ARMS, inits=INITS,
                         probe_epoch=10, ranks=None, data_seed=None):
    """Traces for every arm/init/seed plus a cross-seed dispersion summary.

    Within one seed every arm sees the same mini-batch order; with
    ``data_seed`` set, every seed shares that order too.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise SpecError("stability comparison needs at least 2 seeds")
    cfg = cfg or TrainConfig()
    n_vars, window = np.asarray(x).shape[1:]
    traces = {}
    for arm in arms:
        for init in inits:
            runs = []
            for s in seeds:
                model = arm_model(arm, init, n_vars=n_vars, window=window, backbone=backbone, seed=s, ranks=ranks)
                _, tr = finetune(model, x, y, replace(cfg, seed=s), probe_x=probe_x, arm=f"{arm}-{init}",
                                 shuffle_seed=data_seed)
                runs.append(tr)
            traces[(arm, init)] = runs
    return traces, summarize(traces, probe_epoch)


def summarize(traces, probe_epoch=10):
    """Per-arm mean/std curves and the epoch-``probe_epoch`` cross-seed loss std."""
    curves, at_probe = {}, {}
    for (arm, init), runs in traces.items():
        loss = np.array([r.loss_mean for r in runs])
        sig = np.array([r.sigma_z_norm for r in runs])
        curves[f"{arm}-{init}"] = {
            "loss_mean": loss.mean(axis=0).tolist(), "loss_std": loss.std(axis=0).tolist(),
            "sigma_mean": sig.mean(axis=0).tolist(), "sigma_std": sig.std(axis=0).tolist(),
        }
        e = min(probe_epoch, loss.shape[1] - 1)
        at_probe[f"{arm}-{init}"] = float(loss[:, e].std()) if loss.size else float("nan")
    comparison = {}
    for arm in {a for a, _ in traces}:
        z, k = at_probe.get(f"{arm}-zero"), at_probe.get(f"{arm}-kaiming")
        if z is not None and k is not None:
            comparison[arm] = {"zero_std": z, "kaiming_std": k, "zero_lower": bool(z < k)}
    return {"probe_epoch": probe_epoch, "loss_std_at_probe": at_probe, "comparison": comparison,
            "curves": curves}
