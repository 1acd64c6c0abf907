import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgrecon import dataio
from ecgrecon.dataio import (
    ECGRecord,
    ProcessedData,
    check_einthoven,
    parse_record,
    prepare_corpus,
    resample_to_125hz,
    segment_record,
    select_leads,
    split_by_patient,
    split_train_val,
    truncate_to_window,
)
from ecgrecon.errors import (
    DataQualityError,
    IngestionError,
    SchemaError,
    TooShortError,
    UnsupportedRateError,
)
from ecgrecon.leads import ALL_LEADS, LeadLabel
from ecgrecon.synthetic import synthetic_record, write_wfdb


def make_record(n, rate=125, fill=None, rid="r"):
    sig = np.tile(np.arange(n, dtype=float), (12, 1)) if fill is None else np.full((12, n), fill)
    return ECGRecord(rid, sig, rate)


# -- parse_record -----------------------------------------------------------

def test_parse_ptbxl_like(tmp_path, rng):
    sig = synthetic_record(rng, 10.0, 500)
    hea = write_wfdb(tmp_path, "00001_hr", sig, 500)
    rec = parse_record(hea)
    assert rec.signals.shape == (12, 5000)
    assert rec.sampling_rate_hz == 500
    # 16-bit storage at 1 uV resolution
    np.testing.assert_allclose(rec.signals, sig, atol=6e-4)


def test_parse_ptb_like_drops_extra_channels(tmp_path, rng):
    sig = synthetic_record(rng, 30.0, 1000)
    names = [lead.value.lower() for lead in ALL_LEADS]
    write_wfdb(tmp_path / "patient007", "s0001_re", sig, 1000, lead_names=names,
               comments=["age: 67", "sex: male", "Reason for admission: Myocardial infarction"],
               extra_channels=3)
    rec = parse_record(tmp_path / "patient007" / "s0001_re")
    assert rec.signals.shape == (12, 30000)
    assert rec.sampling_rate_hz == 1000
    assert rec.patient_id == "patient007"
    assert rec.metadata["reason for admission"] == "Myocardial infarction"


def test_parse_reorders_to_canonical(tmp_path, rng):
    sig = synthetic_record(rng, 2.0, 500)
    order = list(reversed(range(12)))
    names = [ALL_LEADS[i].value for i in order]
    write_wfdb(tmp_path, "rev", sig[order], 500, lead_names=names)
    rec = parse_record(tmp_path / "rev.hea")
    np.testing.assert_allclose(rec.signals, sig, atol=6e-4)


def test_parse_eleven_leads_is_schema_error(tmp_path, rng):
    sig = synthetic_record(rng, 2.0, 500)[:11]
    write_wfdb(tmp_path, "short", sig, 500, lead_names=[lead.value for lead in ALL_LEADS[:11]])
    with pytest.raises(SchemaError, match="V6"):
        parse_record(tmp_path / "short")


def test_parse_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        parse_record(tmp_path / "nope")


def test_parse_non_finite_names_record(tmp_path, rng):
    sig = synthetic_record(rng, 2.0, 500)
    sig[3, 100] = np.nan
    write_wfdb(tmp_path, "holey", sig, 500)
    with pytest.raises(DataQualityError, match="holey"):
        parse_record(tmp_path / "holey")


def test_parse_is_bit_identical(tmp_path, rng):
    write_wfdb(tmp_path, "a", synthetic_record(rng, 3.0, 500), 500)
    a = parse_record(tmp_path / "a")
    b = parse_record(tmp_path / "a")
    assert a.signals.tobytes() == b.signals.tobytes()


def test_record_rejects_wrong_row_count():
    with pytest.raises(SchemaError):
        ECGRecord("x", np.zeros((11, 10)), 500)


# -- resampling -------------------------------------------------------------

def test_resample_shape():
    out = resample_to_125hz(make_record(5000, 500, fill=0.0))
    assert out.signals.shape == (12, 1250)
    assert out.sampling_rate_hz == 125


@pytest.mark.parametrize("n,rate,expected", [(5000, 500, 1250), (30000, 1000, 3750),
                                             (5003, 500, 1250), (999, 1000, 124)])
def test_resample_length_is_floor(n, rate, expected):
    assert resample_to_125hz(make_record(n, rate, fill=1.0)).num_samples == expected


@pytest.mark.parametrize("rate", [500, 1000])
def test_resample_preserves_dc(rate):
    out = resample_to_125hz(make_record(10 * rate, rate, fill=0.73))
    edge = int(0.2 * 125)
    interior = out.signals[:, edge:-edge]
    assert np.max(np.abs(interior - 0.73)) < 1e-6
    assert abs(interior.mean() - 0.73) < 1e-6


@pytest.mark.parametrize("rate", [500, 1000])
def test_resample_sine_against_analytic(rate):
    t = np.arange(10 * rate) / rate
    sig = np.tile(np.sin(2 * np.pi * 10 * t), (12, 1))
    out = resample_to_125hz(ECGRecord("sine", sig, rate))
    tt = np.arange(out.num_samples) / 125
    mask = (tt >= 0.2) & (tt <= tt[-1] - 0.2)
    err = np.abs(out.signals - np.sin(2 * np.pi * 10 * tt))[:, mask]
    assert err.max() < 1e-2


def test_resample_attenuates_above_nyquist():
    rate = 500
    t = np.arange(10 * rate) / rate
    # 100 Hz would alias to 25 Hz at 125 Hz
    sig = np.tile(np.sin(2 * np.pi * 100 * t), (12, 1))
    out = resample_to_125hz(ECGRecord("hf", sig, rate))
    assert np.max(np.abs(out.signals[:, 25:-25])) < 1e-3


@pytest.mark.parametrize("rate", [360, 257, 100])
def test_resample_unsupported_rate(rate):
    with pytest.raises(UnsupportedRateError):
        resample_to_125hz(make_record(2000, rate, fill=0.0))


# -- windowing --------------------------------------------------------------

def test_truncate_prefix():
    rec = make_record(1250)
    w = truncate_to_window(rec)
    assert w.signals.shape == (12, 1024)
    np.testing.assert_array_equal(w.signals, rec.signals[:, :1024])


def test_truncate_identity():
    rec = make_record(1024)
    np.testing.assert_array_equal(truncate_to_window(rec).signals, rec.signals)


def test_truncate_too_short():
    with pytest.raises(TooShortError):
        truncate_to_window(make_record(1000))


def test_truncate_requires_125hz():
    with pytest.raises(UnsupportedRateError):
        truncate_to_window(make_record(5000, 500))


def test_segment_offsets():
    rec = make_record(3750)
    segs = segment_record(rec)
    assert [s.segment_index for s in segs] == [0, 1, 2]
    assert [s.signals[0, 0] for s in segs] == [0, 1024, 2048]


def test_segment_below_one_window():
    assert segment_record(make_record(1023)) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=6000))
def test_segment_count_and_concatenation_law(n):
    rec = make_record(n)
    segs = segment_record(rec)
    assert len(segs) == n // 1024
    if segs:
        joined = np.concatenate([s.signals for s in segs], axis=1)
        np.testing.assert_array_equal(joined, rec.signals[:, : len(segs) * 1024])


# -- splitting --------------------------------------------------------------

def test_split_ptbxl_sizes():
    ids = [f"{k:05d}" for k in range(21799)]
    split = split_train_val(ids, seed=0)
    # oracle: floor(0.9 * 21799) = 19619 by direct arithmetic
    assert len(split.train_ids) == 19619
    assert len(split.val_ids) == 2180


def test_split_ten():
    split = split_train_val([str(k) for k in range(10)], seed=3)
    assert (len(split.train_ids), len(split.val_ids)) == (9, 1)


def test_split_deterministic_and_order_independent():
    ids = [f"r{k}" for k in range(100)]
    a = split_train_val(ids, seed=5)
    assert a == split_train_val(ids, seed=5)
    assert a == split_train_val(list(reversed(ids)), seed=5)
    assert a != split_train_val(ids, seed=6)


def test_split_empty():
    with pytest.raises(ValueError):
        split_train_val([], seed=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=400), st.integers(min_value=0, max_value=2**31))
def test_split_partition_law(n, seed):
    ids = [f"id{k}" for k in range(n)]
    s = split_train_val(ids, seed)
    assert set(s.train_ids) | set(s.val_ids) == set(ids)
    assert not set(s.train_ids) & set(s.val_ids)
    assert len(s.train_ids) == math.floor(0.9 * n)
    assert s == split_train_val(ids, seed)


def test_split_by_patient_keeps_patients_together():
    ids = [f"r{k}" for k in range(200)]
    patients = [f"p{k // 3}" for k in range(200)]
    s = split_by_patient(ids, patients, seed=1)
    owner = dict(zip(ids, patients))
    assert not {owner[i] for i in s.train_ids} & {owner[i] for i in s.val_ids}
    assert set(s.train_ids) | set(s.val_ids) == set(ids)
    assert abs(len(s.train_ids) - 180) <= 2


# -- Einthoven and lead selection ------------------------------------------

def test_einthoven_exact_zero(rng):
    sig = rng.normal(size=(12, 2000))
    sig[1] = sig[0] + sig[2]
    assert check_einthoven(ECGRecord("e", sig, 500)) == 0.0


def test_einthoven_perturbed(rng):
    sig = rng.normal(size=(12, 2000))
    sig[1] = sig[0] + sig[2]
    sig[1, 1234] += 0.5
    assert check_einthoven(ECGRecord("e", sig, 500)) == pytest.approx(0.5, abs=1e-12)


def test_select_leads(windows):
    w = windows[0]
    assert select_leads(w, ["I", "II"]).shape == (2, 1024)
    v = select_leads(w, [f"V{k}" for k in range(1, 7)])
    np.testing.assert_array_equal(v, w[6:12])
    swapped = select_leads(w, [LeadLabel.V2, LeadLabel.I])
    np.testing.assert_array_equal(swapped, w[[7, 0]])


@pytest.mark.parametrize("leads", [["I", "I"], ["V7"], []])
def test_select_leads_errors(windows, leads):
    with pytest.raises(ValueError):
        select_leads(windows[0], leads)


# -- corpus preparation -----------------------------------------------------

def test_prepare_ptbxl(processed):
    m = json.loads((processed / "ptbxl" / "manifest.json").read_text())
    assert m["n_records"] == 30
    assert m["n_segments"] == {"train": 27, "val": 3}
    assert not set(m["splits"]["train"]) & set(m["splits"]["val"])
    train = np.load(processed / "ptbxl" / "train.npy")
    assert train.shape == (27, 12, 1024)
    assert m["einthoven"]["gate_passed"]
    assert m["einthoven"]["threshold_mv"] == 0.1


def test_prepare_ptb_segments(processed):
    data = ProcessedData(processed)
    m = data.manifest("ptb")
    assert m["n_segments"]["test"] == 11
    assert [r["segments"] for r in m["records"]] == [3, 3, 5]
    assert data.test.shape == (11, 12, 1024)
    assert data.test_keys()[:4] == [("s0001_re", 0), ("s0001_re", 1), ("s0001_re", 2),
                                   ("s0002_re", 0)]
    assert data.test_metadata()["s0001_re"]["patient_id"] == "patient001"


def test_prepare_windows_match_pipeline(processed, synthetic_raw):
    rec = resample_to_125hz(parse_record(synthetic_raw / "ptb" / "patient003" / "s0003_re"))
    segs = segment_record(rec)
    data = ProcessedData(processed)
    np.testing.assert_array_equal(data.test[6:11], np.stack([s.signals for s in segs]).astype(np.float32))


def test_prepare_rejects_bad_records(tmp_path, rng):
    raw = tmp_path / "raw"
    for k in range(3):
        write_wfdb(raw / "records500" / "00000", f"{k:05d}_hr", synthetic_record(rng, 10.0, 500), 500)
    write_wfdb(raw / "records500" / "00000", "99999_hr", synthetic_record(rng, 10.0, 500)[:11], 500,
               lead_names=[lead.value for lead in ALL_LEADS[:11]])
    m = prepare_corpus(raw, "ptbxl", tmp_path / "out")
    assert m["n_records"] == 3
    assert m["rejected"][0]["record_id"] == "99999_hr"
    assert "SchemaError" in m["rejected"][0]["reason"]


def test_prepare_empty_dir_writes_nothing(tmp_path):
    (tmp_path / "raw").mkdir()
    with pytest.raises(IngestionError, match="expected layout"):
        prepare_corpus(tmp_path / "raw", "ptb", tmp_path / "out")
    assert not (tmp_path / "out").exists()


def test_prepare_limit_fraction(synthetic_raw, tmp_path):
    m = prepare_corpus(synthetic_raw / "ptbxl", "ptbxl", tmp_path, seed=0, limit_fraction=0.1)
    assert m["n_records"] == 3


def test_prepare_skips_records100(tmp_path, rng):
    raw = tmp_path / "raw"
    write_wfdb(raw / "records500" / "00000", "00001_hr", synthetic_record(rng, 10.0, 500), 500)
    write_wfdb(raw / "records100" / "00000", "00001_lr", synthetic_record(rng, 10.0, 100), 100)
    assert [p.name for p in dataio.find_records(raw, "ptbxl")] == ["00001_hr.hea"]


def test_prepare_reads_ptbxl_patient_ids(tmp_path, rng):
    raw = tmp_path / "raw"
    for k in (1, 2):
        write_wfdb(raw / "records500" / "00000", f"{k:05d}_hr", synthetic_record(rng, 10.0, 500), 500)
    (raw / "ptbxl_database.csv").write_text(
        "ecg_id,patient_id,filename_hr\n"
        "1,15709.0,records500/00000/00001_hr\n"
        "2,13243.0,records500/00000/00002_hr\n"
    )
    m = prepare_corpus(raw, "ptbxl", tmp_path / "out", split_policy="patient")
    assert {r["patient_id"] for r in m["records"]} == {"15709", "13243"}
    assert m["split_policy"] == "patient"


def test_processed_data_pickles_without_arrays(processed):
    import pickle

    data = ProcessedData(processed)
    _ = data.train
    clone = pickle.loads(pickle.dumps(data))
    assert clone._cache == {}
    assert clone.train.shape == data.train.shape
