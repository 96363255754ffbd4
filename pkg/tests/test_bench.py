import numpy as np
import pytest

from lspkit.baselines import memory_estimate
from lspkit.bench import bias_bench, fit_layer, mean_relative_bias
from lspkit.config import BenchConfig
from lspkit.projector import FitConfig
from lspkit.toy_models import SyntheticTask
from lspkit.trainer import TrainConfig

SQUARE_TASK = SyntheticTask(dims=(6, 6, 6), n_train=64, n_eval=16, seed=2)


def test_fit_layer_fits_a_full_size_square_pair():
    grads = list(np.random.default_rng(0).standard_normal((4, 6, 6)))
    cfg = FitConfig(alpha=1e-9, max_steps=20, timeout_steps=20)
    result = fit_layer(grads, 6, 2, cfg, seed=0)
    assert result.fitted.P.r == result.fitted.Q.r == 2
    assert result.fitted.d == 6
    assert result.report.steps > 0
    assert np.array_equal(result.fitted.P.positions, result.initial.P.positions)
    assert not np.array_equal(result.fitted.P.values, result.initial.P.values)
    assert mean_relative_bias(result.fitted, grads) < mean_relative_bias(result.initial, grads)


def test_full_size_bench_rows_use_the_requested_r():
    bench = BenchConfig(
        d_values=(6,),
        r_values=(2,),
        seeds=(0,),
        corpus_steps=8,
        corpus_every=2,
        galore=False,
        fit=FitConfig(alpha=1e-9, max_steps=10, timeout_steps=10, normalize_targets=True),
    )
    df = bias_bench(SQUARE_TASK, TrainConfig(d=6, r=2), bench).set_index("method")
    extra = 2 * memory_estimate("lsp", 6, 6, 2, bench.opt_factor).extra
    assert df.loc["lsp", "extra_memory"] == extra
    assert df.loc["lsp_random", "extra_memory"] == extra
    assert df.loc["lsp", "train_bias"] < df.loc["lsp_random", "train_bias"]
    assert df.loc["lsp", "heldout_bias"] > 0.0


@pytest.mark.slow
def test_default_bias_bench_trends():
    bench = BenchConfig()
    df = bias_bench(SyntheticTask(), TrainConfig(), bench)
    medians = df.groupby(["method", "d"])["heldout_bias"].median()
    lsp = medians["lsp"].sort_index()
    random = medians["lsp_random"].sort_index()
    galore = df.loc[df["method"] == "galore", "heldout_bias"].median()

    assert list(lsp.index) == list(bench.d_values)
    # held-out bias does not grow with d
    assert np.all(np.diff(lsp.to_numpy()) <= 1e-2)
    assert np.all(lsp.to_numpy() < random.to_numpy())
    # every d has the same extra memory as the GaLore rank it is compared with
    assert np.all(lsp.to_numpy() <= galore)
