import numpy as np

from peft_muts.experiments import DeskBenchmark, few_shot_benefit, fewshot_task, pretrained_backbone, stability_task

TINY = DeskBenchmark(units=8, train_units=4, n_train=12, width=4, n_blocks=2, pool_size=32, pretrain_epochs=1)


def test_fewshot_task_shapes_and_split():
    x, y, test = fewshot_task(TINY, 0)
    assert x.shape == (12, 3, 32) and y.shape == (12,)
    assert np.all((y >= 0) & (y <= 1))
    assert set(np.unique(test.unit)) == set(range(4, 8))


def test_benchmark_runs_are_reproducible():
    bb, losses = pretrained_backbone(TINY)
    assert len(losses) == 2
    a = few_shot_benefit([0, 1], TINY, bb, epochs=2)
    b = few_shot_benefit([0, 1], TINY, bb, epochs=2)
    assert a == b
    assert set(a["wins"]) == {"linear", "full"}
    _, summary = stability_task([0, 1], TINY, bb, epochs=3, probe_epoch=2)
    assert set(summary["comparison"]) == {"peft", "full"}
