"""numba kernels for the per-packet hot loops.

All 32-bit quantities travel as int64 and are masked explicitly, which keeps
the arithmetic identical to the C reference without relying on unsigned
wraparound semantics.
"""

from __future__ import annotations

import numpy as np
from numba import njit

M32 = 0xFFFFFFFF


@njit(cache=True, inline="always")
def _sfh_word(h, w):
    # one 4-byte chunk of a big-endian serialized word, read as two LE halves
    lo = ((w >> 24) & 0xFF) | (((w >> 16) & 0xFF) << 8)
    hi = ((w >> 8) & 0xFF) | ((w & 0xFF) << 8)
    h = (h + lo) & M32
    tmp = ((hi << 11) ^ h) & M32
    h = ((h << 16) & M32) ^ tmp
    h = (h + (h >> 11)) & M32
    return h


@njit(cache=True, inline="always")
def _sfh_avalanche(h):
    h ^= (h << 3) & M32
    h = (h + (h >> 5)) & M32
    h ^= (h << 4) & M32
    h = (h + (h >> 17)) & M32
    h ^= (h << 25) & M32
    h = (h + (h >> 6)) & M32
    return h


@njit(cache=True)
def sfh_prefix(w0, w1, w2, w3):
    """State after the 16-byte puzzle input; the message is 20 bytes long."""
    h = 20
    h = _sfh_word(h, w0)
    h = _sfh_word(h, w1)
    h = _sfh_word(h, w2)
    h = _sfh_word(h, w3)
    return h


@njit(cache=True)
def sfh_finish(h, nonce):
    return _sfh_avalanche(_sfh_word(h, nonce))


@njit(cache=True)
def _meets(digest, d):
    if d <= 0:
        return True
    return (digest >> (32 - d)) == 0


@njit(cache=True)
def sfh_words(w0, w1, w2, w3, w4):
    n = w0.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = sfh_finish(sfh_prefix(w0[i], w1[i], w2[i], w3[i]), w4[i])
    return out


@njit(cache=True)
def sfh_search(h_prefix, start, d, max_trials):
    """Sequential nonce search; returns (nonce, trials) or (-1, max_trials)."""
    nonce = start & M32
    for i in range(max_trials):
        if _meets(sfh_finish(h_prefix, nonce), d):
            return nonce, i + 1
        nonce = (nonce + 1) & M32
    return -1, max_trials


@njit(cache=True)
def sfh_verify(src, dst, ports, bucket, nonce, d, claim, use_previous):
    """Vectorized verifier: pass if the current or previous bucket meets d.

    A packet whose modeled proof claim already covers d passes without hashing.
    """
    n = src.shape[0]
    ok = np.zeros(n, np.bool_)
    for i in range(n):
        di = d[i]
        if di <= 0 or claim[i] >= di:
            ok[i] = True
            continue
        b = bucket[i]
        if _meets(sfh_finish(sfh_prefix(src[i], dst[i], ports[i], b & M32), nonce[i]), di):
            ok[i] = True
        elif use_previous and b > 0:
            if _meets(sfh_finish(sfh_prefix(src[i], dst[i], ports[i], (b - 1) & M32), nonce[i]), di):
                ok[i] = True
    return ok


@njit(cache=True)
def droptail(arrivals, ser, busy, pending, capacity):
    """Drop-tail FIFO over sorted arrivals.

    ``pending`` holds finish times (sorted) of packets already committed to the
    transmitter; ``capacity`` is the waiting room excluding the packet in
    service. Returns (accepted mask, finish times, new busy_until).
    """
    n = arrivals.shape[0]
    m = pending.shape[0]
    buf = np.empty(m + n, np.int64)
    for j in range(m):
        buf[j] = pending[j]
    head = 0
    tail = m
    accept = np.zeros(n, np.bool_)
    fin = np.zeros(n, np.int64)
    for i in range(n):
        a = arrivals[i]
        while head < tail and buf[head] <= a:
            head += 1
        if tail - head <= capacity:
            start = a if a > busy else busy
            busy = start + ser
            buf[tail] = busy
            tail += 1
            accept[i] = True
            fin[i] = busy
    return accept, fin, busy
