from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from canopynet.errors import EmptyRegion, NonFinite
from canopynet.net import NetConfig, checkpoint_to_bytes, forward, init_parameters
from canopynet.synth import SynthConfig, generate_dataset
from canopynet.train import (Adam, SplitKind, SplitPlan, TrainConfig, augment_shift, draw_shifts,
                             eval_loss, make_splits, nll_loss, prepare, train_model,
                             validation_split)
from canopynet.waveform import Dataset, TargetSpec

from oracles import nll_reference

NET = NetConfig(n_bins=256, n_blocks=2, base_channels=4, dropout_rate=0.1)


@pytest.fixture(scope="module")
def data200():
    return generate_dataset(200, SynthConfig(n_bins=256, height_max_m=25), seed=3)


# -- loss --------------------------------------------------------------------

@pytest.mark.parametrize("mu,s,y,want", [(1.5, 0.0, 1.5, 0.0), (3.0, 0.0, 1.0, 2.0), (0.7, 2.0, 0.7, 1.0)])
def test_nll_plugins(mu, s, y, want):
    loss, _, _ = nll_loss([mu], [s], [y], eps=0.0)
    assert loss == pytest.approx(want, abs=1e-12)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-4, 4), st.floats(-5, 5)), min_size=1, max_size=8))
def test_nll_gradient_finite_differences(rows):
    mu, s, y = (np.array(c, dtype=np.float64) for c in zip(*rows))
    _, dmu, ds = nll_loss(mu, s, y)
    h = 1e-5
    for i in range(len(mu)):
        for arr, g in ((mu, dmu), (s, ds)):
            old = arr[i]
            arr[i] = old + h
            lp = nll_reference(mu, s, y)
            arr[i] = old - h
            lm = nll_reference(mu, s, y)
            arr[i] = old
            num = (lp - lm) / (2 * h)
            # central differences carry ~1e-11 absolute round-off at this step
            scale = max(abs(num), abs(g[i]))
            assert abs(num - g[i]) <= 1e-6 * scale + 1e-9


def test_nll_rejects_non_finite():
    with pytest.raises(NonFinite):
        nll_loss([np.nan], [0.0], [1.0])


# -- Adam --------------------------------------------------------------------

def test_adam_first_step():
    p = {"w": np.zeros(5)}
    Adam(lr=1e-4).step(p, {"w": np.ones(5)})
    assert np.all(np.abs(p["w"] + 1e-4) < 1e-8)


def test_adam_zero_gradient():
    p = {"w": np.full(3, 2.0)}
    opt = Adam(lr=1e-2)
    for _ in range(3):
        opt.step(p, {"w": np.zeros(3)})
    np.testing.assert_array_equal(p["w"], 2.0)


def test_adam_skips_buffers():
    p = {"b.bn1.running_mean": np.zeros(2), "w": np.zeros(2)}
    Adam().step(p, {"b.bn1.running_mean": np.ones(2), "w": np.ones(2)})
    assert np.all(p["b.bn1.running_mean"] == 0) and np.all(p["w"] != 0)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": rng.normal(size=4)}
        opt = Adam(1e-3)
        for _ in range(20):
            opt.step(p, {"w": rng.normal(size=4)})
        return p["w"].tobytes()
    assert run() == run()


# -- augmentation ------------------------------------------------------------

def test_shift_zero_is_identity():
    x = np.r_[np.zeros(5), np.arange(1.0, 6.0), np.zeros(5)]
    out, k = augment_shift(x, 0.0, np.random.default_rng(0))
    assert k == 0 and np.array_equal(out, x)


def test_shift_moves_support():
    from canopynet.kernels import shift_rows
    x = np.zeros(100)
    x[30:80] = np.linspace(1, 2, 50)  # support ends 20 bins before the tail
    out = shift_rows(x[None, :], np.array([10]))[0]
    np.testing.assert_array_equal(np.nonzero(out)[0], np.nonzero(x)[0] + 10)
    assert out.sum() == x.sum()


def test_shift_distribution_uniform():
    n, frac = 100, 0.2
    kmax = 20
    first = np.full(100000, 40)
    last = np.full(100000, 59)  # any shift in [-20, 20] keeps the support inside
    k = draw_shifts(first, last, n, frac, np.random.default_rng(1))
    counts = np.bincount(k + kmax, minlength=2 * kmax + 1)
    p = 1.0 / (2 * kmax + 1)
    sd = np.sqrt(len(k) * p * (1 - p))
    assert np.all(np.abs(counts - len(k) * p) < 3 * sd + 1)
    assert sps.chisquare(counts).pvalue > 1e-4


def test_shift_falls_back_to_zero():
    # support spans the whole vector: every non-zero shift is rejected
    k = draw_shifts(np.array([0]), np.array([49]), 50, 0.2, np.random.default_rng(0))
    assert k.tolist() == [0]


@given(st.integers(0, 10 ** 6))
def test_shift_preserves_energy(seed):
    rng = np.random.default_rng(seed)
    x = np.zeros(120)
    a = int(rng.integers(0, 100))
    x[a:a + 15] = rng.uniform(0.1, 1.0, 15)
    out, k = augment_shift(x, 0.2, rng)
    assert out.sum() == pytest.approx(x.sum(), rel=1e-12)
    assert np.count_nonzero(out) == np.count_nonzero(x)


# -- splits ------------------------------------------------------------------

def test_kfold_partition(data200):
    d = data200.subset(data200.ids[:100])
    plan = make_splits(d, "RANDOM_KFOLD", 10, seed=4)
    folds = [set(plan.test_ids(f).tolist()) for f in plan.folds]
    assert all(len(f) == 10 for f in folds)
    assert set().union(*folds) == set(d.ids.tolist())
    assert sum(len(f) for f in folds) == 100
    assert make_splits(d, "RANDOM_KFOLD", 10, seed=4) == plan
    for f in plan.folds:
        assert not set(plan.train_ids(f)) & set(plan.test_ids(f))


def test_geographic_holdout(data200):
    plan = make_splits(data200, SplitKind.GEOGRAPHIC_HOLDOUT, region="EU")
    eu = {w.id for w in data200.waveforms if w.metadata["region"] == "EU"}
    assert set(plan.test_ids(1).tolist()) == eu
    assert not eu & set(plan.train_ids(1).tolist())
    with pytest.raises(EmptyRegion):
        make_splits(data200, "GEOGRAPHIC_HOLDOUT", region="TR")


def test_split_csv_round_trip(data200):
    plan = make_splits(data200, "RANDOM_KFOLD", 5, seed=2)
    assert SplitPlan.from_csv(plan.to_csv()) == plan


# -- training ----------------------------------------------------------------

def test_best_epoch_no_worse_than_first(data200):
    tc = TrainConfig(epochs=5, learning_rate=1e-3, batch_size=32)
    ck = train_model(data200, data200.ids, NET, tc, seed=0)
    vals = [h[2] for h in ck.history]
    assert ck.best_val_loss == min(vals) <= vals[0]
    assert ck.best_epoch == 1 + vals.index(min(vals))


def test_same_seed_same_bytes(data200):
    tc = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=32)
    a = train_model(data200, data200.ids, NET, tc, seed=5)
    b = train_model(data200, data200.ids, NET, tc, seed=5)
    assert checkpoint_to_bytes(a) == checkpoint_to_bytes(b)


def test_training_loss_decreases(data200):
    net = NetConfig(n_bins=256, n_blocks=6, channel_schedule=(8, 8, 16, 16, 16, 16), dropout_rate=0.1)
    tc = TrainConfig(epochs=8, learning_rate=1e-3, batch_size=32)
    ck = train_model(data200, data200.ids, net, tc, seed=1)
    data = prepare(data200, data200.ids, net.n_bins)
    initial = eval_loss(init_parameters(net, 1), net, data.X, data.y, ck.stats)
    assert ck.history[-1][1] < initial - 0.2


def test_constant_target_converges(data200):
    recs = tuple((w, TargetSpec("RH98", 17.0)) for w, _ in data200.records)
    d = Dataset(recs, data200.n_bins)
    tc = TrainConfig(epochs=50, learning_rate=1e-3, batch_size=64)
    ck = train_model(d, d.ids, NET, tc, seed=0)
    data = prepare(d, d.ids, NET.n_bins)
    xz = (data.X - ck.stats.input_mean) / ck.stats.input_std
    mu = forward(ck.params, NET, xz).mu_std * ck.stats.target_std + ck.stats.target_mean
    assert np.all(np.abs(mu - 17.0) < 0.1 * ck.stats.target_std)


def test_validation_records_do_not_leak(data200):
    tc = TrainConfig(epochs=1, learning_rate=1e-3, batch_size=32)
    data = prepare(data200, data200.ids, NET.n_bins)
    _, val_idx = validation_split(len(data.y), tc.val_fraction, np.random.default_rng(tc.split_seed))
    val_ids = set(data.ids[val_idx].tolist())
    # corrupt the validation targets and waveforms; stats and weights must not move
    recs = []
    for w, t in data200.records:
        if w.id in val_ids:
            w = replace(w, amplitudes=w.amplitudes[::-1] * 3)
            t = TargetSpec(t.kind, t.value_m + 50)
        recs.append((w, t))
    other = Dataset(tuple(recs), data200.n_bins)
    a = train_model(data200, data200.ids, NET, tc, seed=2)
    b = train_model(other, other.ids, NET, tc, seed=2)
    assert a.stats == b.stats
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.history[0][1] == b.history[0][1]


def test_too_few_records(data200):
    with pytest.raises(ValueError):
        train_model(data200, data200.ids[:50], NET, TrainConfig(batch_size=64))
