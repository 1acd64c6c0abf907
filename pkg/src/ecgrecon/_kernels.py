"""Row-wise metric kernels with a numba path and a pure-numpy fallback.

The numba kernels are used when numba imports and ``ECGRECON_NO_NUMBA`` is
unset (or "0"). Set ``ECGRECON_NO_NUMBA=1`` to force the numpy path. Both
paths are always importable so they can be compared against each other; see
``benchmarks/bench_kernels.py``.

All kernels take 2D float64 arrays of shape (rows, samples) and reduce along
the last axis.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    # system TBB is often too old for numba; prefer OpenMP/workqueue
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda func: func

    prange = range


def _env_disables_numba() -> bool:
    return os.environ.get("ECGRECON_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = NUMBA_AVAILABLE and not _env_disables_numba()

# PCC is undefined when either signal's population std falls below this (mV).
MIN_STD = 1e-12


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _neumaier_sum(values):
    # compensated summation; keeps near-zero covariances accurate
    s = 0.0
    c = 0.0
    for k in range(values.shape[0]):
        v = values[k]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


@njit(cache=True, parallel=True)
def _pcc_rows_numba(x, y, min_std):
    rows, n = x.shape
    out = np.empty(rows)
    for r in prange(rows):
        mx = _neumaier_sum(x[r]) / n
        my = _neumaier_sum(y[r]) / n
        dx = x[r] - mx
        dy = y[r] - my
        sxy = _neumaier_sum(dx * dy)
        sxx = _neumaier_sum(dx * dx)
        syy = _neumaier_sum(dy * dy)
        if np.sqrt(sxx / n) < min_std or np.sqrt(syy / n) < min_std:
            out[r] = np.nan
        else:
            v = sxy / np.sqrt(sxx * syy)
            out[r] = min(1.0, max(-1.0, v))
    return out


@njit(cache=True, parallel=True)
def _mse_rows_numba(x, y):
    rows, n = x.shape
    out = np.empty(rows)
    for r in prange(rows):
        d = x[r] - y[r]
        out[r] = _neumaier_sum(d * d) / n
    return out


@njit(cache=True)
def _einthoven_residual_numba(lead_i, lead_ii, lead_iii):
    worst = 0.0
    for k in range(lead_i.shape[0]):
        v = abs(lead_ii[k] - (lead_i[k] + lead_iii[k]))
        if v > worst:
            worst = v
    return worst


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------

def _pcc_rows_numpy(x, y, min_std):
    n = x.shape[1]
    dx = x - x.mean(axis=1, keepdims=True)
    dy = y - y.mean(axis=1, keepdims=True)
    # np.sum is pairwise; np.dot/einsum are not
    sxy = np.sum(dx * dy, axis=1)
    sxx = np.sum(dx * dx, axis=1)
    syy = np.sum(dy * dy, axis=1)
    flat = (np.sqrt(sxx / n) < min_std) | (np.sqrt(syy / n) < min_std)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = sxy / np.sqrt(sxx * syy)
    r = np.clip(r, -1.0, 1.0)
    r[flat] = np.nan
    return r


def _mse_rows_numpy(x, y):
    d = x - y
    return np.sum(d * d, axis=1) / x.shape[1]


def _einthoven_residual_numpy(lead_i, lead_ii, lead_iii):
    if lead_i.size == 0:
        return 0.0
    return float(np.max(np.abs(lead_ii - (lead_i + lead_iii))))


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _as_rows(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"expected a 1D or 2D array, got shape {a.shape}")
    return a


def _pair(x, y):
    x = _as_rows(x)
    y = _as_rows(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def pcc_rows(x, y, min_std: float = MIN_STD, use_numba: bool | None = None) -> np.ndarray:
    """Pearson correlation of each row pair; NaN marks a flat (undefined) row."""
    x, y = _pair(x, y)
    if x.shape[1] < 2:
        raise ValueError("need at least 2 samples per row")
    if USE_NUMBA if use_numba is None else use_numba:
        return _pcc_rows_numba(x, y, float(min_std))
    return _pcc_rows_numpy(x, y, float(min_std))


def mse_rows(x, y, use_numba: bool | None = None) -> np.ndarray:
    x, y = _pair(x, y)
    if x.shape[1] < 1:
        raise ValueError("need at least 1 sample per row")
    if USE_NUMBA if use_numba is None else use_numba:
        return _mse_rows_numba(x, y)
    return _mse_rows_numpy(x, y)


def einthoven_residual(lead_i, lead_ii, lead_iii, use_numba: bool | None = None) -> float:
    a = np.ascontiguousarray(lead_i, dtype=np.float64)
    b = np.ascontiguousarray(lead_ii, dtype=np.float64)
    c = np.ascontiguousarray(lead_iii, dtype=np.float64)
    if not (a.shape == b.shape == c.shape) or a.ndim != 1:
        raise ValueError("leads I, II, III must be 1D arrays of equal length")
    if USE_NUMBA if use_numba is None else use_numba:
        return float(_einthoven_residual_numba(a, b, c))
    return _einthoven_residual_numpy(a, b, c)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
