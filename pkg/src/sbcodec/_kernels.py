"""Numba-compiled inner loops for bitplane coding and traversal.

These mirror the pure-Python reference pieces in ``entropy_codec``
(range coder, context formation, traversal order) bit for bit; the test
suite cross-checks the two paths byte-exactly. Keep any behavioral change
synchronized with the reference.

Coder layout: 32-bit carry-propagating range coder, byte renormalization,
16-bit fixed-point probabilities. Probability models are per-context
(c0, c1) counters rescaled at RESCALE_LIMIT.
"""

from __future__ import annotations

import numpy as np
from numba import njit

N_SIG_CONTEXTS = 16
N_REF_CONTEXTS = 9
N_MODELS = N_SIG_CONTEXTS + N_REF_CONTEXTS

RESCALE_LIMIT = 1024
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


@njit(cache=True, inline="always")
def _prob_one(models, m):
    c0 = models[m, 0]
    c1 = models[m, 1]
    p = (c1 << 16) // (c0 + c1)
    if p < 1:
        p = 1
    elif p > 65535:
        p = 65535
    return p


@njit(cache=True, inline="always")
def _update(models, m, bit):
    models[m, bit] += 1
    if models[m, 0] + models[m, 1] >= RESCALE_LIMIT:
        models[m, 0] = (models[m, 0] + 1) >> 1
        models[m, 1] = (models[m, 1] + 1) >> 1


@njit(cache=True, inline="always")
def _sig_ctx(sig, y, x, h, w):
    # B (up), D (left), E (right), F (down); out of bounds counts as 0.
    v = 0
    if y > 0 and sig[y - 1, x]:
        v += 8
    if x > 0 and sig[y, x - 1]:
        v += 4
    if x + 1 < w and sig[y, x + 1]:
        v += 2
    if y + 1 < h and sig[y + 1, x]:
        v += 1
    return v


@njit(cache=True, inline="always")
def _ref_ctx(prev_bits, cur_bits, y, x, h, w):
    # Previous plane at B, D, E, F plus current plane at A, B, C, D.
    v = 0
    if y > 0 and prev_bits[y - 1, x]:
        v += 1
    if x > 0 and prev_bits[y, x - 1]:
        v += 1
    if x + 1 < w and prev_bits[y, x + 1]:
        v += 1
    if y + 1 < h and prev_bits[y + 1, x]:
        v += 1
    if y > 0 and x > 0 and cur_bits[y - 1, x - 1]:
        v += 1
    if y > 0 and cur_bits[y - 1, x]:
        v += 1
    if y > 0 and x + 1 < w and cur_bits[y - 1, x + 1]:
        v += 1
    if x > 0 and cur_bits[y, x - 1]:
        v += 1
    return v


@njit(cache=True, inline="always")
def _shift_low(low, cache, cache_size, out, pos):
    if low < 0xFF000000 or low > _MASK32:
        carry = low >> 32
        out[pos] = (cache + carry) & 0xFF
        pos += 1
        for _ in range(cache_size - 1):
            out[pos] = (0xFF + carry) & 0xFF
            pos += 1
        cache = (low >> 24) & 0xFF
        cache_size = 0
    cache_size += 1
    low = (low << 8) & _MASK32
    return low, cache, cache_size, pos


@njit(cache=True)
def encode_tensor(q, b, out):
    """Encode all bitplanes of q (H, W, C) into out; return (nbytes, cost).

    One codeword spans the whole tensor; models and significance state
    reset per feature map. ``cost`` is the sum of -log2 of the probability
    mass the coder allocated to each coded bit.
    """
    h, w, c = q.shape
    models = np.empty((N_MODELS, 2), np.int64)
    sig = np.empty((h, w), np.uint8)
    newly_sig = np.empty((h, w), np.uint8)
    prev_bits = np.empty((h, w), np.uint8)
    cur_bits = np.empty((h, w), np.uint8)

    low = 0
    rng = _MASK32
    cache = 0
    cache_size = 1
    pos = 0
    cost = 0.0

    for ch in range(c):
        models[:] = 1
        sig[:] = 0
        prev_bits[:] = 0
        for k in range(b):
            shift = b - 1 - k
            newly_sig[:] = 0
            cur_bits[:] = 0
            for y in range(h):
                for x in range(w):
                    bit = (q[y, x, ch] >> shift) & 1
                    if sig[y, x] == 0:
                        m = _sig_ctx(sig, y, x, h, w)
                        if bit:
                            newly_sig[y, x] = 1
                    else:
                        m = N_SIG_CONTEXTS + _ref_ctx(prev_bits, cur_bits, y, x, h, w)
                    cur_bits[y, x] = bit

                    p = _prob_one(models, m)
                    bound = (rng >> 16) * p
                    rng_before = rng
                    if bit:
                        rng = bound
                    else:
                        low += bound
                        rng -= bound
                    cost -= np.log2(rng / rng_before)
                    while rng < _TOP:
                        low, cache, cache_size, pos = _shift_low(
                            low, cache, cache_size, out, pos
                        )
                        rng = (rng << 8) & _MASK32
                    _update(models, m, bit)
            for y in range(h):
                for x in range(w):
                    if newly_sig[y, x]:
                        sig[y, x] = 1
            tmp = prev_bits
            prev_bits = cur_bits
            cur_bits = tmp
    for _ in range(5):
        low, cache, cache_size, pos = _shift_low(low, cache, cache_size, out, pos)
    return pos, cost


@njit(cache=True)
def decode_tensor(data, h, w, c, b, q_out):
    """Decode into q_out (H, W, C); return 0 on success, 1 on truncation."""
    models = np.empty((N_MODELS, 2), np.int64)
    sig = np.empty((h, w), np.uint8)
    newly_sig = np.empty((h, w), np.uint8)
    prev_bits = np.empty((h, w), np.uint8)
    cur_bits = np.empty((h, w), np.uint8)
    n = data.size

    rng = _MASK32
    code = 0
    pos = 0
    for _ in range(5):
        if pos >= n:
            return 1
        code = ((code << 8) | data[pos]) & _MASK32
        pos += 1

    q_out[:] = 0
    for ch in range(c):
        models[:] = 1
        sig[:] = 0
        prev_bits[:] = 0
        for k in range(b):
            shift = b - 1 - k
            newly_sig[:] = 0
            cur_bits[:] = 0
            for y in range(h):
                for x in range(w):
                    if sig[y, x] == 0:
                        m = _sig_ctx(sig, y, x, h, w)
                    else:
                        m = N_SIG_CONTEXTS + _ref_ctx(prev_bits, cur_bits, y, x, h, w)

                    p = _prob_one(models, m)
                    bound = (rng >> 16) * p
                    if code < bound:
                        bit = 1
                        rng = bound
                    else:
                        bit = 0
                        code -= bound
                        rng -= bound
                    while rng < _TOP:
                        if pos >= n:
                            return 1
                        code = ((code << 8) | data[pos]) & _MASK32
                        pos += 1
                        rng = (rng << 8) & _MASK32
                    _update(models, m, bit)

                    if bit:
                        q_out[y, x, ch] |= 1 << shift
                        if sig[y, x] == 0:
                            newly_sig[y, x] = 1
                    cur_bits[y, x] = bit
            for y in range(h):
                for x in range(w):
                    if newly_sig[y, x]:
                        sig[y, x] = 1
            tmp = prev_bits
            prev_bits = cur_bits
            cur_bits = tmp
    return 0


@njit(cache=True)
def trace_contexts(q, b, ctx_out):
    """Fill ctx_out (H, W, C, b) with the model index of every coded bit.

    Same traversal and context rules as encode_tensor, without coding.
    """
    h, w, c = q.shape
    sig = np.empty((h, w), np.uint8)
    newly_sig = np.empty((h, w), np.uint8)
    prev_bits = np.empty((h, w), np.uint8)
    cur_bits = np.empty((h, w), np.uint8)

    for ch in range(c):
        sig[:] = 0
        prev_bits[:] = 0
        for k in range(b):
            shift = b - 1 - k
            newly_sig[:] = 0
            cur_bits[:] = 0
            for y in range(h):
                for x in range(w):
                    bit = (q[y, x, ch] >> shift) & 1
                    if sig[y, x] == 0:
                        m = _sig_ctx(sig, y, x, h, w)
                        if bit:
                            newly_sig[y, x] = 1
                    else:
                        m = N_SIG_CONTEXTS + _ref_ctx(prev_bits, cur_bits, y, x, h, w)
                    cur_bits[y, x] = bit
                    ctx_out[y, x, ch, k] = m
            for y in range(h):
                for x in range(w):
                    if newly_sig[y, x]:
                        sig[y, x] = 1
            tmp = prev_bits
            prev_bits = cur_bits
            cur_bits = tmp
