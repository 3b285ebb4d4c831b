"""Hot matcher kernels: numba-jitted with a pure-numpy fallback.

Set SEQPLACE_PURE_NUMPY=1 to force the numpy path; it is also selected
automatically when numba is unavailable. Both implementations stay
importable via IMPLEMENTATIONS for parity tests and benchmarking
(benchmarks/compare_backends.py).

All kernels take float64 arrays and accumulate in the same element order
in both backends, so results agree to the last few ulps.
"""

from __future__ import annotations

import os

import numpy as np

PURE_NUMPY_ENV = "SEQPLACE_PURE_NUMPY"
ENHANCE_EPS = 1e-9


# --- pure numpy implementations -----------------------------------------------

def _sad_matrix_numpy(ref, query):
    out = np.empty((ref.shape[0], query.shape[0]), dtype=np.float64)
    for i in range(ref.shape[0]):
        out[i] = np.abs(query - ref[i]).sum(axis=1)
    return out


def _enhance_numpy(d, r_window):
    n_rows = d.shape[0]
    w = min(r_window, n_rows)
    lo = np.clip(np.arange(n_rows) - r_window // 2, 0, n_rows - w)
    # per-column offset keeps the cumulative sums well conditioned (the
    # normalization is shift-invariant, and constant columns become exact)
    shifted = d - d[:1]
    s = np.zeros((n_rows + 1, d.shape[1]))
    np.cumsum(shifted, axis=0, out=s[1:])
    s2 = np.zeros_like(s)
    np.cumsum(shifted * shifted, axis=0, out=s2[1:])
    mean = (s[lo + w] - s[lo]) / w
    var = np.maximum((s2[lo + w] - s2[lo]) / w - mean * mean, 0.0)
    return (shifted - mean) / (np.sqrt(var) + ENHANCE_EPS)


def _line_scores_numpy(et, ds, offsets):
    # et is the enhanced matrix transposed to (n_query, n_ref) so the inner
    # gather walks contiguous rows; offsets[v, k] = round(v * k).
    n_query, n_ref = et.shape
    out = np.zeros((n_query, n_ref))
    idx = np.arange(n_ref)
    for j in range(ds - 1, n_query):
        best = np.full(n_ref, np.inf)
        for v in range(offsets.shape[0]):
            acc = np.zeros(n_ref)
            for k in range(ds):
                rows = np.clip(idx - offsets[v, k], 0, n_ref - 1)
                acc += et[j - k, rows]
            np.minimum(best, acc / ds, out=best)
        out[j] = best
    return out


_NUMPY_IMPL = {
    "sad_matrix": _sad_matrix_numpy,
    "enhance": _enhance_numpy,
    "line_scores": _line_scores_numpy,
}

IMPLEMENTATIONS = {"numpy": _NUMPY_IMPL}


# --- numba implementations ----------------------------------------------------

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

if njit is not None:

    @njit(cache=True)
    def _sad_matrix_numba(ref, query):
        n_ref, dim = ref.shape
        n_query = query.shape[0]
        out = np.empty((n_ref, n_query), dtype=np.float64)
        for i in range(n_ref):
            for j in range(n_query):
                acc = 0.0
                for k in range(dim):
                    acc += abs(ref[i, k] - query[j, k])
                out[i, j] = acc
        return out

    @njit(cache=True)
    def _enhance_numba(d, r_window):
        n_rows, n_cols = d.shape
        w = min(r_window, n_rows)
        out = np.empty((n_rows, n_cols), dtype=np.float64)
        sums = np.empty(n_cols, dtype=np.float64)
        sqs = np.empty(n_cols, dtype=np.float64)
        half = r_window // 2
        for i in range(n_rows):
            lo = i - half
            if lo < 0:
                lo = 0
            elif lo > n_rows - w:
                lo = n_rows - w
            for j in range(n_cols):
                sums[j] = 0.0
                sqs[j] = 0.0
            for k in range(lo, lo + w):
                for j in range(n_cols):
                    v = d[k, j]
                    sums[j] += v
                    sqs[j] += v * v
            for j in range(n_cols):
                mean = sums[j] / w
                var = sqs[j] / w - mean * mean
                if var < 0.0:
                    var = 0.0
                out[i, j] = (d[i, j] - mean) / (np.sqrt(var) + ENHANCE_EPS)
        return out

    @njit(cache=True)
    def _line_scores_numba(et, ds, offsets):
        n_query, n_ref = et.shape
        n_vel = offsets.shape[0]
        out = np.zeros((n_query, n_ref))
        for j in range(ds - 1, n_query):
            for i in range(n_ref):
                best = np.inf
                for v in range(n_vel):
                    acc = 0.0
                    for k in range(ds):
                        r = i - offsets[v, k]
                        if r < 0:
                            r = 0
                        elif r >= n_ref:
                            r = n_ref - 1
                        acc += et[j - k, r]
                    score = acc / ds
                    if score < best:
                        best = score
                out[j, i] = best
        return out

    IMPLEMENTATIONS["numba"] = {
        "sad_matrix": _sad_matrix_numba,
        "enhance": _enhance_numba,
        "line_scores": _line_scores_numba,
    }


def _select_backend() -> str:
    if os.environ.get(PURE_NUMPY_ENV, "") == "1" or "numba" not in IMPLEMENTATIONS:
        return "numpy"
    return "numba"


BACKEND = _select_backend()

sad_matrix = IMPLEMENTATIONS[BACKEND]["sad_matrix"]
enhance = IMPLEMENTATIONS[BACKEND]["enhance"]
line_scores = IMPLEMENTATIONS[BACKEND]["line_scores"]


def active_backend() -> str:
    return BACKEND
