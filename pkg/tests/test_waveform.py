import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from canopynet.errors import (DegenerateVariance, FormatError, LengthExceeded, VersionError,
                              ZeroEnergy)
from canopynet.waveform import (Dataset, RawWaveform, TargetKind, TargetSpec, concat,
                                dataset_from_bytes, dataset_to_bytes, destandardize,
                                fit_standardization, load_dataset, preprocess, preprocess_many,
                                read_csv_dataset, save_dataset, standardize)


def wf(i, amps, noise=0.0, **meta):
    return RawWaveform(i, amps, noise, lat=1.5 * i, lon=-2.0 * i, elevation_first_return_m=100 + i,
                       metadata=meta)


def small_dataset():
    recs = tuple((wf(i, [1.0 + i, 2.0, 3.0 * i + 1], 0.25, region="EU", k=str(i)),
                  TargetSpec(TargetKind.RH98, 10.0 * i + 0.1)) for i in range(3))
    return Dataset(recs, n_bins=8)


# -- preprocess --------------------------------------------------------------

def test_preprocess_normalises():
    assert preprocess(wf(0, [2, 2, 4]), 3) == pytest.approx([0.25, 0.25, 0.5], abs=1e-15)


def test_preprocess_subtracts_noise_and_pads():
    np.testing.assert_allclose(preprocess(wf(0, [2, 2, 4], noise=1.0), 4), [0.2, 0.2, 0.6, 0.0],
                               atol=1e-15)


def test_preprocess_zero_energy():
    with pytest.raises(ZeroEnergy):
        preprocess(wf(0, [1, 1], noise=1.0), 4)


def test_preprocess_too_long():
    with pytest.raises(LengthExceeded):
        preprocess(wf(0, [1, 2, 3]), 2)


def test_preprocess_keeps_negative_bins():
    out = preprocess(wf(0, [0.5, 3.0, 0.5], noise=1.0), 3)
    assert out[0] < 0 and out.sum() == pytest.approx(1.0)


def test_preprocess_many_drops_and_reports_indices():
    X, kept = preprocess_many([wf(0, [1, 2]), wf(1, [1, 1], noise=1.0), wf(2, [3, 1])], 4)
    assert kept.tolist() == [0, 2]
    assert X.shape == (2, 4)


@given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=40), st.floats(0.0, 1.0))
def test_preprocess_sums_to_one(amps, noise):
    w = wf(0, amps, noise)
    sig = np.asarray(w.amplitudes, dtype=np.float64) - w.noise_mean
    if not sig.sum() > 1e-3:
        return
    assert preprocess(w, 64).sum() == pytest.approx(1.0, abs=1e-6)


# -- standardization ---------------------------------------------------------

def test_standardization_symmetric_pair():
    stats = fit_standardization([[0.0, 1.0], [1.0, 0.0]], [0.0, 2.0])
    assert (stats.target_mean, stats.target_std) == (1.0, 1.0)
    np.testing.assert_array_equal(standardize([0.0, 2.0], stats, "target"), [-1.0, 1.0])


def test_standardization_population_std():
    stats = fit_standardization([[0.0, 1.0]] * 3, [10.0, 20.0, 30.0])
    assert stats.target_mean == 20.0
    assert stats.target_std == pytest.approx(8.1650, abs=1e-4)


def test_standardization_degenerate_inputs():
    with pytest.raises(DegenerateVariance):
        fit_standardization([[0.5, 0.5], [0.5, 0.5]], [1.0, 2.0])


def test_standardize_plugins():
    stats = fit_standardization([[0.0, 2.0], [2.0, 0.0]], [1.0, 3.0])
    assert standardize(stats.input_mean, stats) == 0.0
    assert standardize(stats.input_mean + 2 * stats.input_std, stats) == pytest.approx(2.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_standardize_round_trip(xs):
    stats = fit_standardization([[0.0, 3.0], [1.0, 7.0]], [2.0, 5.0])
    for which in ("input", "target"):
        back = destandardize(standardize(xs, stats, which), stats, which)
        np.testing.assert_allclose(back, xs, rtol=0, atol=1e-12 * (1 + np.max(np.abs(xs))))


# -- containers --------------------------------------------------------------

def test_round_trip(tmp_path):
    d = small_dataset()
    p = tmp_path / "d.wfds"
    save_dataset(d, p)
    back = load_dataset(p)
    assert back.n_bins == d.n_bins and back.records == d.records
    assert dataset_to_bytes(back) == p.read_bytes()


def test_truncated_file(tmp_path):
    data = dataset_to_bytes(small_dataset())
    for cut in (3, 20, len(data) - 1):
        with pytest.raises(FormatError):
            dataset_from_bytes(data[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError):
        dataset_from_bytes(dataset_to_bytes(small_dataset()) + b"\0")


def test_bad_magic_and_version():
    data = bytearray(dataset_to_bytes(small_dataset()))
    with pytest.raises(FormatError):
        dataset_from_bytes(b"XXXX" + bytes(data[4:]))
    data[4] = 99
    with pytest.raises(VersionError):
        dataset_from_bytes(bytes(data))


def test_mixed_target_kinds_rejected():
    recs = ((wf(0, [1.0]), TargetSpec("RH98", 1.0)), (wf(1, [1.0]), TargetSpec("RH70", 1.0)))
    with pytest.raises(ValueError):
        Dataset(recs, 4)


def test_duplicate_ids_rejected():
    recs = ((wf(0, [1.0]), TargetSpec("RH98", 1.0)), (wf(0, [2.0]), TargetSpec("RH98", 1.0)))
    with pytest.raises(ValueError):
        Dataset(recs, 4)


def test_metadata_separator_rejected():
    with pytest.raises(ValueError):
        wf(0, [1.0], bad="a;b")
    with pytest.raises(ValueError):
        RawWaveform(0, [1.0], metadata={"pearson_quality": "1.5"})


def test_csv_fixture(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("id,amplitudes,noise_mean,lat,lon,elevation_first_return_m,target,metadata\n"
                 "7,1;2;3,0.5,10.25,-3.5,250.0,12.5,region=EU;pft=2\n"
                 "8,0;4,0,11,-4,251,3,\n")
    d = read_csv_dataset(p, "RH98", n_bins=4)
    assert d.ids.tolist() == [7, 8]
    w, t = d.records[0]
    assert w.metadata == {"region": "EU", "pft": "2"} and t.value_m == 12.5
    np.testing.assert_allclose(preprocess(w, 4), [0.5 / 4.5, 1.5 / 4.5, 2.5 / 4.5, 0])


def test_subset_and_concat():
    d = small_dataset()
    assert d.subset([2, 0]).ids.tolist() == [0, 2]
    other = Dataset(((wf(9, [1.0]), TargetSpec("RH98", 1.0)),), 16)
    both = concat([d, other])
    assert both.n_bins == 16 and len(both.records) == 4
