from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canopynet.errors import DegenerateVariance
from canopynet.match import (MatchResult, accepted_pairs, blocks_from_datasets, blocks_to_datasets,
                             gate_results, match_block, match_block_bruteforce, pearson)
from canopynet.synth import simulate_track, smooth_track_params


def track(dx=0.0, dz=0.0, seed=0, noise=0.1, controls=20, **kw):
    params = smooth_track_params(controls, seed, noise_sigma=noise)
    return simulate_track(params, (dx, dz), n_bins=384, seed=seed, **kw)


# -- pearson -----------------------------------------------------------------

def test_pearson_plugins():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 0, -1, 0], [0, 1, 0, -1]) == pytest.approx(0.0)
    with pytest.raises(DegenerateVariance):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


@settings(max_examples=40)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 10), st.floats(-10, 10))
def test_pearson_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert pearson(a * x + b, y) == pytest.approx(pearson(x, y), abs=1e-12)


# -- search ------------------------------------------------------------------

def test_zero_offset_recovered():
    blk, _ = track(noise=0.0)
    r = match_block(blk)
    assert r.offset == (0.0, 0.0)
    assert r.mean_corr == pytest.approx(1.0, abs=1e-9)


def test_injected_offset_recovered():
    blk, truth = track(20.0, 0.6, seed=3)
    r = match_block(blk)
    assert abs(r.offset_dx_m - truth.offset_dx_m) <= blk.step_m
    assert abs(r.offset_dz_m - truth.offset_dz_m) <= 0.15 + 1e-9


def test_negative_offset_recovered():
    blk, truth = track(-35.0, -0.9, seed=8)
    r = match_block(blk)
    assert abs(r.offset_dx_m + 35.0) <= blk.step_m
    assert abs(r.offset_dz_m + 0.9) <= 0.15 + 1e-9


def test_window_too_small_gives_edge_answer():
    blk, _ = track(40.0, 0.0, seed=3)
    r = match_block(blk.with_window(max_dx_m=10.0))
    assert abs(r.offset_dx_m) <= 10.0  # the truth is outside and cannot be returned


def test_affine_shot_transform_same_answer():
    blk, _ = track(15.0, 0.3, seed=4)
    scaled = replace(blk, shots=tuple(replace(w, amplitudes=(2 * w.amplitudes + 3).astype(np.float32))
                                      for w in blk.shots))
    a, b = match_block(blk), match_block(scaled)
    assert a.offset == b.offset
    np.testing.assert_allclose(a.shot_corr, b.shot_corr, atol=1e-6)


def test_matches_bruteforce():
    blk, _ = track(10.0, -0.45, seed=6, controls=8)
    blk = blk.with_window(max_dx_m=20.0, max_dz_m=0.6)
    r = match_block(blk)
    score, dx, dz = match_block_bruteforce(blk)
    assert (r.offset_dx_m, r.offset_dz_m) == (dx, dz)
    assert r.mean_corr == pytest.approx(score, abs=1e-10)


# -- gate --------------------------------------------------------------------

def result(corrs, mean=None):
    c = np.asarray(corrs, dtype=float)
    return MatchResult(0.0, 0.0, float(c.mean() if mean is None else mean), len(c), c,
                       np.arange(len(c)), np.ones(len(c), bool))


def test_gate_too_few_shots():
    assert gate_results([result([0.99] * 24)]) == []
    assert len(gate_results([result([0.99] * 25)])) == 1


def test_gate_block_corr_must_exceed():
    assert gate_results([result([0.99] * 30, mean=0.90)]) == []


def test_gate_shot_level():
    (g,) = gate_results([result([0.98] * 28 + [0.95, 0.90])])
    assert g.kept.tolist() == [True] * 28 + [False, False]


def test_gate_idempotent():
    once = gate_results([result([0.98] * 20 + [0.93] * 10)])
    twice = gate_results(once)
    assert [g.kept.tolist() for g in once] == [g.kept.tolist() for g in twice]


def test_accepted_pairs_carry_reference_target():
    blk, _ = track(0.0, 0.0, seed=2, noise=0.02)
    gated = gate_results([match_block(blk)])
    pairs = accepted_pairs([blk], gated)
    assert len(pairs) == int(gated[0].kept.sum()) > 0
    w, t = pairs[0]
    s = [i for i, sw in enumerate(blk.shots) if sw.id == w.id][0]
    # targets are stored as float32
    assert t.value_m == np.float32(blk.reference_targets[gated[0].node_index[s]])
    assert 0.95 < float(w.metadata["pearson_quality"]) <= 1.0


def test_dataset_round_trip():
    blocks = [track(5.0, 0.15, seed=s, controls=8, block=s)[0] for s in (0, 1)]
    shots, refs = blocks_to_datasets(blocks)
    back = blocks_from_datasets(shots, refs)
    assert [b.block for b in back] == [0, 1]
    for a, b in zip(blocks, back):
        np.testing.assert_allclose(a.node_x_m, b.node_x_m, atol=1e-3)
        # amplitudes round-trip through float32
        np.testing.assert_allclose(a.reference, b.reference, rtol=1e-6, atol=1e-6 * a.reference.max())
        assert match_block(a).offset == match_block(b).offset
