"""Synthetic 12-lead ECGs from a rotating heart dipole, for tests and smoke runs.

Each beat is a sum of Gaussian P/Q/R/S/T deflections of a 3D dipole. Leads are
projections onto electrode positions, so the limb leads obey Einthoven's law
exactly and the precordial leads are referenced to the Wilson terminal. Per
record, the heart axis is randomly rotated and the heart rate varies.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ecgrecon.leads import ALL_LEADS

# x: patient left, y: inferior, z: anterior
_RA = np.array([-0.5, -0.29, 0.0])
_LA = np.array([0.5, -0.29, 0.0])
_LL = np.array([0.0, 0.577, 0.0])
_CHEST_DEG = np.array([-20.0, 0.0, 20.0, 45.0, 65.0, 85.0])
_CHEST = np.stack(
    [np.sin(np.radians(_CHEST_DEG)), np.full(6, 0.15), np.cos(np.radians(_CHEST_DEG))], axis=1
) * 1.3

# (offset from beat onset s, width s, amplitude mV, direction)
_WAVES = (
    (0.10, 0.025, 0.15, (0.6, 0.8, 0.1)),
    (0.215, 0.010, 0.20, (-0.3, -0.2, 0.9)),
    (0.24, 0.012, 1.30, (0.55, 0.75, -0.35)),
    (0.265, 0.012, 0.45, (-0.4, 0.2, 0.85)),
    (0.50, 0.050, 0.35, (0.5, 0.6, 0.6)),
)


def _rotation(rng: np.random.Generator, scale: float) -> np.ndarray:
    a, b, c = rng.normal(scale=scale, size=3)
    rx = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
    ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    rz = np.array([[np.cos(c), -np.sin(c), 0], [np.sin(c), np.cos(c), 0], [0, 0, 1]])
    return rz @ ry @ rx


def dipole_trace(rng: np.random.Generator, seconds: float, fs: int) -> np.ndarray:
    """Heart dipole (3, n) in mV-equivalent units."""
    n = int(round(seconds * fs))
    t = np.arange(n) / fs
    rr = 60.0 / rng.uniform(55, 95)
    rot = _rotation(rng, 0.35)
    amp_jitter = rng.uniform(0.7, 1.3, size=len(_WAVES))
    d = np.zeros((3, n))
    onset = -rng.uniform(0, rr)
    while onset < seconds:
        for (off, width, amp, direction), j in zip(_WAVES, amp_jitter):
            centre = onset + off * (rr / 0.85) ** 0.5
            g = np.exp(-0.5 * ((t - centre) / width) ** 2)
            d += (rot @ np.asarray(direction))[:, None] * (amp * j) * g
        onset += rr * rng.uniform(0.95, 1.05)
    return d


def leads_from_dipole(d: np.ndarray) -> np.ndarray:
    """Project a dipole trace onto the 12 standard leads, canonical order."""
    ra, la, ll = _RA @ d, _LA @ d, _LL @ d
    wct = (ra + la + ll) / 3.0
    lead_i = la - ra
    lead_iii = ll - la
    lead_ii = lead_i + lead_iii
    avr = ra - (la + ll) / 2.0
    avl = la - (ra + ll) / 2.0
    avf = ll - (ra + la) / 2.0
    chest = _CHEST @ d - wct
    return np.vstack([lead_i, lead_ii, lead_iii, avr, avl, avf, chest])


def synthetic_record(
    rng: np.random.Generator, seconds: float = 10.0, fs: int = 500, noise_mv: float = 0.01
) -> np.ndarray:
    sig = leads_from_dipole(dipole_trace(rng, seconds, fs))
    if noise_mv:
        sig = sig + rng.normal(scale=noise_mv, size=sig.shape)
    # rebuild II from the noisy I and III so the identity holds bit for bit
    sig[1] = sig[0] + sig[2]
    return sig


def synthetic_windows(n: int, seed: int = 0, length: int = 1024, fs: int = 125) -> np.ndarray:
    """``n`` independent synthetic windows, shape (n, 12, length), float32."""
    rng = np.random.default_rng(seed)
    out = np.stack([synthetic_record(rng, length / fs + 1e-9, fs)[:, :length] for _ in range(n)])
    return out.astype(np.float32)


def write_wfdb(
    directory,
    record_name: str,
    signals: np.ndarray,
    fs: int,
    lead_names=None,
    comments=(),
    extra_channels: int = 0,
) -> Path:
    """Write a (channels, n) mV array as a WFDB 16-bit record (1 uV resolution)."""
    import wfdb

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(lead_names or [lead.value for lead in ALL_LEADS])
    sig = np.asarray(signals, dtype=np.float64)
    if extra_channels:
        sig = np.vstack([sig, np.zeros((extra_channels, sig.shape[1]))])
        names += [f"x{k}" for k in range(extra_channels)]
    n_ch = sig.shape[0]
    wfdb.wrsamp(
        record_name,
        fs=fs,
        units=["mV"] * n_ch,
        sig_name=names,
        p_signal=sig.T.copy(),
        fmt=["16"] * n_ch,
        adc_gain=[1000.0] * n_ch,
        baseline=[0] * n_ch,
        comments=list(comments),
        write_dir=str(directory),
    )
    return directory / f"{record_name}.hea"


def write_synthetic_corpus(
    root, corpus: str, n_records: int, seed: int = 0, durations=None
) -> list[Path]:
    """Lay out a small PTB-XL-like or PTB-like WFDB tree under ``root``.

    PTB-XL-like: ``records500/00000/NNNNN_hr`` at 500 Hz, 10 s.
    PTB-like: ``patientNNN/sNNNN_re`` at 1000 Hz with 3 extra (Frank) channels.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    paths = []
    for k in range(n_records):
        if corpus == "ptbxl":
            sig = synthetic_record(rng, 10.0, 500)
            paths.append(write_wfdb(root / "records500" / "00000", f"{k + 1:05d}_hr", sig, 500))
        elif corpus == "ptb":
            seconds = durations[k] if durations is not None else float(rng.uniform(30, 40))
            sig = synthetic_record(rng, seconds, 1000)
            names = [lead.value.lower() for lead in ALL_LEADS]
            sex = "female" if k % 2 else "male"
            comments = [f"age: {30 + k}", f"sex: {sex}", "Reason for admission: Healthy control"]
            paths.append(
                write_wfdb(root / f"patient{k + 1:03d}", f"s{k + 1:04d}_re", sig, 1000,
                           lead_names=names, comments=comments, extra_channels=3)
            )
        else:
            raise ValueError(f"unknown corpus {corpus!r}")
    return paths
