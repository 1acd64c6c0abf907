"""PhysioNet ECG ingestion: parse, resample to 125 Hz, window, split, persist."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from ecgrecon import PIPELINE_VERSION
from ecgrecon._kernels import einthoven_residual
from ecgrecon.errors import (
    DataQualityError,
    IngestionError,
    SchemaError,
    TooShortError,
    UnsupportedRateError,
)
from ecgrecon.leads import ALL_LEADS, LeadLabel, lead_indices, parse_lead

log = logging.getLogger(__name__)

TARGET_RATE_HZ = 125
WINDOW = 1024
TRAIN_FRACTION = 0.9
# data-quality gate on |II - (I + III)|, mV
EINTHOVEN_THRESHOLD_MV = 0.1
EINTHOVEN_MIN_PASS_FRACTION = 0.95

# anti-aliasing FIR: Kaiser window, 50 Hz cutoff (< 62.5 Hz Nyquist at 125 Hz)
AA_CUTOFF_HZ = 50.0
AA_TAPS_PER_FACTOR = 40
AA_KAISER_BETA = 8.0

DATA_ROOT_ENV = "ECGRECON_DATA_ROOT"

_UNIT_SCALE = {"mv": 1.0, "uv": 1e-3, "µv": 1e-3, "μv": 1e-3, "v": 1e3, "nu": 1.0, "": 1.0}


@dataclass
class ECGRecord:
    record_id: str
    signals: np.ndarray
    sampling_rate_hz: int
    patient_id: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        sig = np.asarray(self.signals, dtype=np.float64)
        if sig.ndim != 2 or sig.shape[0] != len(ALL_LEADS):
            raise SchemaError(
                f"{self.record_id}: expected 12 lead rows, got shape {sig.shape}"
            )
        if sig.shape[1] < 1:
            raise DataQualityError(f"{self.record_id}: record has no samples")
        if not np.all(np.isfinite(sig)):
            bad = sorted({ALL_LEADS[r].value for r in np.nonzero(~np.isfinite(sig))[0]})
            raise DataQualityError(
                f"{self.record_id}: non-finite samples in lead(s) {', '.join(bad)}"
            )
        if int(self.sampling_rate_hz) != self.sampling_rate_hz or self.sampling_rate_hz <= 0:
            raise ValueError(f"{self.record_id}: bad sampling rate {self.sampling_rate_hz!r}")
        self.signals = sig
        self.sampling_rate_hz = int(self.sampling_rate_hz)

    @property
    def num_samples(self) -> int:
        return self.signals.shape[1]

    def lead(self, label) -> np.ndarray:
        return self.signals[parse_lead(label).index]


@dataclass
class SegmentWindow:
    source_record_id: str
    segment_index: int
    signals: np.ndarray

    def __post_init__(self):
        if self.signals.shape != (len(ALL_LEADS), WINDOW):
            raise ValueError(f"window must have shape (12, {WINDOW}), got {self.signals.shape}")
        if not np.all(np.isfinite(self.signals)):
            raise DataQualityError(f"{self.source_record_id}: non-finite window values")


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...] = ()
    split_seed: int = 0


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _header_metadata(comments: Iterable[str]) -> dict:
    meta = {}
    for line in comments:
        key, sep, value = line.partition(":")
        if sep and key.strip():
            meta[key.strip().lower()] = value.strip()
    return meta


def parse_record(path, patient_id: str | None = None) -> ECGRecord:
    """Read a WFDB header/data pair into an ECGRecord.

    ``path`` may point at the ``.hea`` file or the record base name. Only the
    12 standard leads are kept, in canonical order; extra channels (PTB's Frank
    leads, for instance) are dropped. Amplitudes are converted to millivolts.
    """
    import wfdb

    base = Path(path)
    if base.suffix in (".hea", ".dat"):
        base = base.with_suffix("")
    record_id = base.name
    if not base.with_suffix(".hea").is_file():
        raise IngestionError(f"{record_id}: header {base.with_suffix('.hea')} not found")
    try:
        rec = wfdb.rdrecord(str(base), physical=True)
    except Exception as exc:  # wfdb raises a mix of OSError/ValueError
        raise IngestionError(f"{record_id}: cannot read record: {exc}") from exc

    lookup = {}
    for ch, name in enumerate(rec.sig_name or []):
        try:
            lookup.setdefault(parse_lead(name), ch)
        except ValueError:
            continue
    missing = [lead.value for lead in ALL_LEADS if lead not in lookup]
    if missing:
        raise SchemaError(f"{record_id}: missing lead(s) {', '.join(missing)}")

    rows = []
    for lead in ALL_LEADS:
        ch = lookup[lead]
        unit = (rec.units[ch] if rec.units else "mV") or "mV"
        scale = _UNIT_SCALE.get(unit.strip().lower())
        if scale is None:
            raise SchemaError(f"{record_id}: unsupported unit {unit!r} on lead {lead.value}")
        rows.append(rec.p_signal[:, ch] * scale)
    signals = np.vstack(rows)

    meta = _header_metadata(rec.comments or [])
    if patient_id is None:
        patient_id = meta.get("patient_id", base.parent.name)
    return ECGRecord(
        record_id=record_id,
        signals=signals,
        sampling_rate_hz=int(round(rec.fs)),
        patient_id=str(patient_id),
        metadata=meta,
    )


# ---------------------------------------------------------------------------
# resampling and windowing
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def anti_alias_taps(rate_hz: int) -> np.ndarray:
    """Linear-phase low-pass FIR used before decimating ``rate_hz`` to 125 Hz."""
    factor = rate_hz // TARGET_RATE_HZ
    taps = signal.firwin(
        AA_TAPS_PER_FACTOR * factor + 1,
        AA_CUTOFF_HZ,
        fs=rate_hz,
        window=("kaiser", AA_KAISER_BETA),
    )
    taps.setflags(write=False)
    return taps


def decimate_to_125hz(signals: np.ndarray, rate_hz: int) -> np.ndarray:
    if rate_hz % TARGET_RATE_HZ or rate_hz < TARGET_RATE_HZ:
        raise UnsupportedRateError(
            f"cannot decimate {rate_hz} Hz to {TARGET_RATE_HZ} Hz by an integer factor"
        )
    factor = rate_hz // TARGET_RATE_HZ
    n_out = signals.shape[-1] * TARGET_RATE_HZ // rate_hz
    if factor == 1:
        return np.array(signals, dtype=np.float64, copy=True)
    # resample_poly compensates the FIR group delay (zero phase)
    out = signal.resample_poly(signals, 1, factor, axis=-1, window=anti_alias_taps(rate_hz))
    return out[..., :n_out]


def resample_to_125hz(record: ECGRecord) -> ECGRecord:
    """Low-pass then decimate to 125 Hz; keeps floor(n * 125 / rate) samples."""
    out = decimate_to_125hz(record.signals, record.sampling_rate_hz)
    if out.shape[1] < 1:
        raise TooShortError(f"{record.record_id}: too short to resample")
    return ECGRecord(
        record_id=record.record_id,
        signals=out,
        sampling_rate_hz=TARGET_RATE_HZ,
        patient_id=record.patient_id,
        metadata=dict(record.metadata),
    )


def _require_125(record: ECGRecord):
    if record.sampling_rate_hz != TARGET_RATE_HZ:
        raise UnsupportedRateError(
            f"{record.record_id}: expected {TARGET_RATE_HZ} Hz, got {record.sampling_rate_hz}"
        )


def truncate_to_window(record: ECGRecord) -> SegmentWindow:
    _require_125(record)
    if record.num_samples < WINDOW:
        raise TooShortError(
            f"{record.record_id}: {record.num_samples} samples < {WINDOW}"
        )
    return SegmentWindow(record.record_id, 0, record.signals[:, :WINDOW].copy())


def segment_record(record: ECGRecord) -> list[SegmentWindow]:
    _require_125(record)
    count = record.num_samples // WINDOW
    return [
        SegmentWindow(record.record_id, k, record.signals[:, k * WINDOW:(k + 1) * WINDOW].copy())
        for k in range(count)
    ]


def split_train_val(record_ids: Sequence[str], seed: int) -> DatasetSplit:
    """Seeded record-level split: floor(0.9 N) ids to train, the rest to val.

    Ids are sorted first, so the split depends only on the id set and seed.
    """
    ids = sorted(set(map(str, record_ids)))
    if not ids:
        raise ValueError("cannot split an empty id list")
    if len(ids) != len(record_ids):
        raise ValueError("record ids must be unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = math.floor(TRAIN_FRACTION * len(ids))
    shuffled = [ids[i] for i in order]
    return DatasetSplit(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), (), seed)


def split_by_patient(record_ids: Sequence[str], patient_ids: Sequence[str], seed: int) -> DatasetSplit:
    """Patient-level variant: no patient has records in both train and val.

    Patients are shuffled and assigned to train until floor(0.9 N) records are
    covered, so the record ratio is approximate.
    """
    if len(record_ids) != len(patient_ids):
        raise ValueError("record_ids and patient_ids differ in length")
    if not record_ids:
        raise ValueError("cannot split an empty id list")
    by_patient: dict[str, list[str]] = {}
    for rid, pid in sorted(zip(map(str, record_ids), map(str, patient_ids))):
        by_patient.setdefault(pid, []).append(rid)
    patients = sorted(by_patient)
    order = np.random.default_rng(seed).permutation(len(patients))
    target = math.floor(TRAIN_FRACTION * len(record_ids))
    train, val = [], []
    for i in order:
        bucket = train if len(train) < target else val
        bucket.extend(by_patient[patients[i]])
    return DatasetSplit(tuple(train), tuple(val), (), seed)


def check_einthoven(record: ECGRecord) -> float:
    """Max over samples of |II - (I + III)| in mV."""
    return einthoven_residual(
        record.signals[LeadLabel.I.index],
        record.signals[LeadLabel.II.index],
        record.signals[LeadLabel.III.index],
    )


def select_leads(window, leads) -> np.ndarray:
    """Rows of ``window`` (SegmentWindow or (12, L) array) in the order given."""
    leads = [parse_lead(lead) for lead in leads]
    if not leads:
        raise ValueError("lead list is empty")
    if len(set(leads)) != len(leads):
        raise ValueError(f"duplicate leads in {[lead.value for lead in leads]}")
    data = window.signals if isinstance(window, SegmentWindow) else np.asarray(window)
    return data[..., lead_indices(leads), :]


# ---------------------------------------------------------------------------
# corpus preparation
# ---------------------------------------------------------------------------

CORPORA = ("ptbxl", "ptb")


def find_records(raw_dir, corpus: str) -> list[Path]:
    """Header files of a corpus download, sorted by path.

    PTB-XL ships both ``records100`` and ``records500``; only the 500 Hz tree
    is used.
    """
    raw_dir = Path(raw_dir)
    headers = sorted(raw_dir.rglob("*.hea"))
    if corpus == "ptbxl":
        headers = [h for h in headers if "records100" not in h.parts]
    return headers


def _ptbxl_patients(raw_dir: Path) -> dict[str, str]:
    db = raw_dir / "ptbxl_database.csv"
    if not db.is_file():
        return {}
    out = {}
    with db.open(newline="") as fh:
        for row in csv.DictReader(fh):
            name = Path(row.get("filename_hr", "")).name
            pid = row.get("patient_id", "")
            if name and pid:
                out[name] = str(int(float(pid)))
    return out


@dataclass
class _Prepared:
    record_id: str
    patient_id: str
    native_rate: int
    native_samples: int
    windows: np.ndarray | None
    einthoven_mv: float | None
    metadata: dict
    error: str | None = None


def _prepare_one(args) -> _Prepared:
    path, corpus, patient_id = args
    rid = Path(path).with_suffix("").name
    try:
        rec = parse_record(path, patient_id=patient_id)
        resid = check_einthoven(rec)
        low = resample_to_125hz(rec)
        if corpus == "ptbxl":
            windows = truncate_to_window(low).signals[None]
        else:
            segs = segment_record(low)
            windows = (
                np.stack([s.signals for s in segs]) if segs
                else np.empty((0, len(ALL_LEADS), WINDOW))
            )
        return _Prepared(rid, rec.patient_id, rec.sampling_rate_hz, rec.num_samples,
                         windows.astype(np.float32), resid, rec.metadata)
    except (IngestionError, SchemaError, DataQualityError, TooShortError, UnsupportedRateError) as exc:
        return _Prepared(rid, patient_id or "", 0, 0, None, None, {}, f"{type(exc).__name__}: {exc}")


def _map_ordered(func, items, parallelism: int):
    if parallelism <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(func, items, chunksize=16))


def einthoven_summary(residuals: Sequence[float], threshold: float = EINTHOVEN_THRESHOLD_MV) -> dict:
    r = np.asarray(residuals, dtype=np.float64)
    if r.size == 0:
        return {"threshold_mv": threshold, "n_records": 0, "fraction_below": None,
                "gate_passed": False, "quantiles_mv": {}}
    frac = float(np.mean(r < threshold))
    qs = (0.5, 0.9, 0.95, 0.99, 1.0)
    return {
        "threshold_mv": threshold,
        "n_records": int(r.size),
        "fraction_below": round(frac, 6),
        "min_pass_fraction": EINTHOVEN_MIN_PASS_FRACTION,
        "gate_passed": bool(frac >= EINTHOVEN_MIN_PASS_FRACTION),
        "quantiles_mv": {f"q{int(q * 100)}": round(float(np.quantile(r, q)), 6) for q in qs},
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def prepare_corpus(
    raw_dir,
    corpus: str,
    out_dir,
    seed: int = 0,
    parallelism: int = 1,
    split_policy: str = "record",
    limit_fraction: float | None = None,
) -> dict:
    """Run parse -> resample -> window -> split for one corpus and persist it.

    ``ptbxl`` yields one truncated window per record split 90/10 into
    ``train.npy`` / ``val.npy``. ``ptb`` yields consecutive non-overlapping
    windows in ``test.npy``. Both write ``manifest.json`` alongside. Returns the
    manifest.

    ``limit_fraction`` keeps a seeded subset of the records (desk-scale runs).
    """
    if corpus not in CORPORA:
        raise ValueError(f"corpus must be one of {CORPORA}, got {corpus!r}")
    if split_policy not in ("record", "patient"):
        raise ValueError("split_policy must be 'record' or 'patient'")
    raw_dir = Path(raw_dir)
    headers = find_records(raw_dir, corpus) if raw_dir.is_dir() else []
    if not headers:
        layout = (
            "<raw>/records500/00000/00001_hr.hea ... (+ optional ptbxl_database.csv)"
            if corpus == "ptbxl" else "<raw>/patient001/s0010_re.hea ..."
        )
        raise IngestionError(f"no WFDB headers under {raw_dir}; expected layout {layout}")

    if limit_fraction is not None:
        if not 0 < limit_fraction <= 1:
            raise ValueError("limit_fraction must be in (0, 1]")
        keep = max(1, round(limit_fraction * len(headers)))
        pick = np.sort(np.random.default_rng(seed).permutation(len(headers))[:keep])
        headers = [headers[i] for i in pick]

    patients = _ptbxl_patients(raw_dir) if corpus == "ptbxl" else {}
    jobs = [(str(h), corpus, patients.get(h.with_suffix("").name)) for h in headers]
    prepared = _map_ordered(_prepare_one, jobs, parallelism)

    ok = [p for p in prepared if p.error is None]
    rejected = [{"record_id": p.record_id, "reason": p.error} for p in prepared if p.error]
    for r in rejected:
        log.warning("rejected %s", r["reason"])
    if not ok:
        raise IngestionError(f"no usable records under {raw_dir}")

    out_dir = Path(out_dir) / corpus
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [
        {
            "record_id": p.record_id,
            "patient_id": p.patient_id,
            "native_rate_hz": p.native_rate,
            "native_samples": p.native_samples,
            "segments": int(p.windows.shape[0]),
            "einthoven_residual_mv": round(float(p.einthoven_mv), 9),
            "metadata": p.metadata,
        }
        for p in ok
    ]
    by_id = {p.record_id: p for p in ok}
    if len(by_id) != len(ok):
        raise IngestionError("duplicate record ids in corpus")

    manifest = {
        "pipeline_version": PIPELINE_VERSION,
        "corpus": corpus,
        "seed": seed,
        "sampling_rate_hz": TARGET_RATE_HZ,
        "window": WINDOW,
        "resampler": {
            "method": "polyphase FIR decimation",
            "cutoff_hz": AA_CUTOFF_HZ,
            "taps_per_factor": AA_TAPS_PER_FACTOR,
            "kaiser_beta": AA_KAISER_BETA,
        },
        "limit_fraction": limit_fraction,
        "n_records": len(ok),
        "n_rejected": len(rejected),
        "rejected": rejected,
        "einthoven": einthoven_summary([p.einthoven_mv for p in ok]),
        "records": records,
    }

    if corpus == "ptbxl":
        ids = [p.record_id for p in ok]
        if split_policy == "patient":
            split = split_by_patient(ids, [p.patient_id for p in ok], seed)
        else:
            split = split_train_val(ids, seed)
        for name, part in (("train", split.train_ids), ("val", split.val_ids)):
            arr = (np.concatenate([by_id[i].windows for i in part]) if part
                   else np.empty((0, len(ALL_LEADS), WINDOW), np.float32))
            np.save(out_dir / f"{name}.npy", arr)
        manifest["split_policy"] = split_policy
        manifest["splits"] = {"train": list(split.train_ids), "val": list(split.val_ids)}
        manifest["n_segments"] = {"train": len(split.train_ids), "val": len(split.val_ids)}
    else:
        arr = np.concatenate([p.windows for p in ok])
        np.save(out_dir / "test.npy", arr)
        manifest["n_segments"] = {"test": int(arr.shape[0])}
        manifest["test_index"] = [
            [p.record_id, k] for p in ok for k in range(p.windows.shape[0])
        ]

    _write_json(out_dir / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# processed dataset access
# ---------------------------------------------------------------------------

def default_data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "data/processed"))


class ProcessedData:
    """Read-only view of a processed dataset directory.

    Arrays are memory-mapped on first access; instances pickle without them so
    they can be shipped to worker processes.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._cache: dict[str, np.ndarray] = {}

    def __getstate__(self):
        return {"root": self.root, "_cache": {}}

    def manifest(self, corpus: str) -> dict:
        path = self.root / corpus / "manifest.json"
        if not path.is_file():
            raise IngestionError(f"processed {corpus} manifest not found at {path}")
        return json.loads(path.read_text())

    def split(self, name: str) -> np.ndarray:
        if name not in self._cache:
            corpus = "ptb" if name == "test" else "ptbxl"
            path = self.root / corpus / f"{name}.npy"
            if not path.is_file():
                raise IngestionError(f"processed split {name!r} not found at {path}")
            self._cache[name] = np.load(path, mmap_mode="r")
        return self._cache[name]

    @property
    def train(self) -> np.ndarray:
        return self.split("train")

    @property
    def val(self) -> np.ndarray:
        return self.split("val")

    @property
    def test(self) -> np.ndarray:
        return self.split("test")

    def test_keys(self) -> list[tuple[str, int]]:
        return [(rid, int(k)) for rid, k in self.manifest("ptb")["test_index"]]

    def test_metadata(self) -> dict[str, dict]:
        return {r["record_id"]: dict(r["metadata"], patient_id=r["patient_id"])
                for r in self.manifest("ptb")["records"]}

    def dataset_split(self) -> DatasetSplit:
        m = self.manifest("ptbxl")
        test_ids = ()
        try:
            test_ids = tuple(r["record_id"] for r in self.manifest("ptb")["records"])
        except IngestionError:
            pass
        return DatasetSplit(tuple(m["splits"]["train"]), tuple(m["splits"]["val"]),
                            test_ids, m["seed"])
