"""Polar codes: Gaussian-approximation construction, encoder and CA-SCL decoder.

Encoding is ``x = u F^{(x)n}`` with ``F = [[1, 0], [1, 1]]`` in natural
(non bit-reversed) order, so ``x = [(u_a ^ u_b) G', u_b G']`` for the two
halves of ``u``. The information word is the payload followed by its CRC;
it occupies the non-frozen positions of ``u`` in increasing index order.

LLR sign convention: ``llr = log P(bit = 0) / P(bit = 1)``, so a positive
LLR favours bit 0 and BPSK maps bit 0 to +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

from .crc import CRC11_LEN, crc_attach, crc_matrix

# ---------------------------------------------------------------------------
# construction


def _log_phi(x: float) -> float:
    """log of Chung's approximation to the GA function phi."""
    if x <= 0.0:
        return 0.0
    if x < 10.0:
        return -0.4527 * x**0.86 + 0.0218
    return 0.5 * math.log(math.pi / x) - x / 4.0 + math.log1p(-10.0 / (7.0 * x))


def _log_phi_inverse(target: float) -> float:
    """Solve ``log phi(x) = target`` for ``x >= 0`` (``log phi`` is decreasing)."""
    if target >= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while _log_phi(hi) > target:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _log_phi(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return 0.5 * (lo + hi)


def _check_mean(m: float) -> float:
    # mean of the check-node output: phi^-1(1 - (1 - phi(m))^2), evaluated in logs
    lp = _log_phi(m)
    p = math.exp(lp)
    return _log_phi_inverse(lp + math.log(2.0 - p))


def ga_means(block_length: int, design_snr_db: float) -> np.ndarray:
    """Mean LLR of every synthetic channel ``u_i`` under BPSK at Es/N0 = design SNR."""
    n = _log2_exact(block_length)
    es_n0 = 10.0 ** (design_snr_db / 10.0)
    means = np.array([4.0 * es_n0])
    for _ in range(n):
        nxt = np.empty(2 * means.size)
        nxt[0::2] = [_check_mean(m) for m in means]
        nxt[1::2] = 2.0 * means
        means = nxt
    return means


def design_snr_for_rate(rate: float) -> float:
    """Es/N0 in dB at which a real-input AWGN channel has capacity ``rate`` bits."""
    return 10.0 * math.log10((2.0 ** (2.0 * rate) - 1.0) / 2.0)


@lru_cache(maxsize=256)
def construct(block_length: int, info_length: int, design_snr_db: float) -> tuple[int, ...]:
    """Information positions: the ``info_length`` most reliable synthetic channels."""
    means = ga_means(block_length, design_snr_db)
    # stable sort: equal reliabilities keep the lower index first
    order = np.argsort(-means, kind="stable")
    return tuple(sorted(int(i) for i in order[:info_length]))


def _log2_exact(n: int) -> int:
    k = int(n).bit_length() - 1
    if n < 2 or (1 << k) != n:
        raise ValueError(f"block length must be a power of two >= 2, got {n}")
    return k


@dataclass(frozen=True)
class CodewordSpec:
    """Polar code parameters.

    ``info_length`` counts payload plus CRC bits. ``crc_length`` is 11 for
    the CRC-aided code and may be 0 for an uncoded-check variant used in
    small exhaustive tests. The frozen set comes from the Gaussian
    approximation at ``design_snr_db``; by default the design point is the
    SNR at which BPSK capacity equals the code rate.
    """

    info_length: int
    block_length: int = 256
    list_size: int = 8
    crc_length: int = CRC11_LEN
    design_snr_db: float | None = None
    info_set: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        _log2_exact(self.block_length)
        if self.crc_length not in (0, CRC11_LEN):
            raise ValueError("crc_length must be 0 or 11")
        if not self.crc_length < self.info_length <= self.block_length:
            raise ValueError(
                f"info_length {self.info_length} must exceed the CRC and fit N={self.block_length}"
            )
        if self.list_size < 1:
            raise ValueError("list_size must be positive")
        design = self.design_snr_db
        if design is None:
            design = design_snr_for_rate(self.info_length / self.block_length)
            object.__setattr__(self, "design_snr_db", design)
        info = np.array(construct(self.block_length, self.info_length, round(design, 12)))
        info.setflags(write=False)
        object.__setattr__(self, "info_set", info)

    @property
    def payload_length(self) -> int:
        return self.info_length - self.crc_length

    @property
    def frozen_set(self) -> np.ndarray:
        mask = np.ones(self.block_length, dtype=bool)
        mask[self.info_set] = False
        return np.flatnonzero(mask)

    @property
    def frozen_mask(self) -> np.ndarray:
        mask = np.ones(self.block_length, dtype=bool)
        mask[self.info_set] = False
        return mask


# ---------------------------------------------------------------------------
# encoder


def polar_transform(u) -> np.ndarray:
    """``u F^{(x)n}`` over GF(2) along the last axis."""
    x = np.array(u, dtype=np.uint8)
    n = x.shape[-1]
    _log2_exact(n)
    half = n // 2
    while half >= 1:
        v = x.reshape(x.shape[:-1] + (n // (2 * half), 2, half))
        v[..., 0, :] ^= v[..., 1, :]
        half //= 2
    return x


def polar_encode(spec: CodewordSpec, payload) -> np.ndarray:
    """Attach the CRC, fill the information positions and transform."""
    payload = np.asarray(payload, dtype=np.uint8)
    if payload.shape[-1] != spec.payload_length:
        raise ValueError(
            f"payload has {payload.shape[-1]} bits, spec expects {spec.payload_length}"
        )
    if payload.ndim == 1:
        info = crc_attach(payload) if spec.crc_length else payload
        u = np.zeros(spec.block_length, dtype=np.uint8)
    else:
        info = np.stack([crc_attach(p) for p in payload]) if spec.crc_length else payload
        u = np.zeros(payload.shape[:-1] + (spec.block_length,), dtype=np.uint8)
    u[..., spec.info_set] = info
    return polar_transform(u)


# ---------------------------------------------------------------------------
# CRC-aided successive-cancellation list decoder


@njit(cache=True)
def _off(n_total, depth):
    return 2 * n_total - 2 * (n_total >> depth)


@njit(cache=True)
def _copy_path(src, dst, alpha, bl, br, u):
    alpha[dst, :] = alpha[src, :]
    bl[dst, :] = bl[src, :]
    br[dst, :] = br[src, :]
    u[dst, :] = u[src, :]


@njit(cache=True)
def _leaf_llr(alpha, bl, l, i, n_total, n):
    """Update path ``l``'s LLR tree down to leaf ``i`` and return the leaf LLR."""
    if i == 0:
        start = 0
    else:
        tz = 0
        while (i >> tz) & 1 == 0:
            tz += 1
        dstar = n - 1 - tz
        # right child of the node at depth dstar
        m = n_total >> (dstar + 1)
        src = _off(n_total, dstar)
        dst = _off(n_total, dstar + 1)
        left = _off(n_total, dstar + 1)
        for j in range(m):
            a = alpha[l, src + j]
            b = alpha[l, src + j + m]
            if bl[l, left + j]:
                alpha[l, dst + j] = b - a
            else:
                alpha[l, dst + j] = b + a
        start = dstar + 1
    for d in range(start, n):
        m = n_total >> (d + 1)
        src = _off(n_total, d)
        dst = _off(n_total, d + 1)
        for j in range(m):
            a = alpha[l, src + j]
            b = alpha[l, src + j + m]
            mag = min(abs(a), abs(b))
            alpha[l, dst + j] = mag if (a >= 0.0) == (b >= 0.0) else -mag
    return alpha[l, _off(n_total, n)]


@njit(cache=True)
def _push_bit(bl, br, l, i, bit, n_total, n):
    """Store leaf decision ``bit`` and fold finished right subtrees upward."""
    leaf = _off(n_total, n)
    if i & 1:
        br[l, leaf] = bit
    else:
        bl[l, leaf] = bit
        return
    d = n
    while d > 0 and (i >> (n - d)) & 1:
        m = n_total >> d
        lo = _off(n_total, d)
        parent = _off(n_total, d - 1)
        # the parent is a right child iff the next bit of i up the tree is set
        to_right = d - 1 > 0 and (i >> (n - d + 1)) & 1
        target = br if to_right else bl
        for j in range(m):
            target[l, parent + j] = bl[l, lo + j] ^ br[l, lo + j]
            target[l, parent + j + m] = br[l, lo + j]
        d -= 1


@njit(cache=True)
def scl_decode_kernel(llr, frozen, list_size, crc_gen, crc_len, info_idx):
    """Returns (information bits, crc_pass, best path metric).

    An all-zero LLR vector carries no observation; the decoder still
    returns a decision but never reports it as CRC-confirmed.
    """
    n_total = llr.size
    erased = True
    for j in range(n_total):
        if llr[j] != 0.0:
            erased = False
            break
    n = 0
    while (1 << n) < n_total:
        n += 1
    L = list_size
    alpha = np.zeros((L, 2 * n_total))
    bl = np.zeros((L, 2 * n_total), dtype=np.uint8)
    br = np.zeros((L, 2 * n_total), dtype=np.uint8)
    u = np.zeros((L, n_total), dtype=np.uint8)
    pm = np.zeros(L)
    active = np.zeros(L, dtype=np.bool_)
    active[0] = True
    alpha[0, :n_total] = llr
    cand_pm = np.empty(2 * L)
    cand_path = np.empty(2 * L, dtype=np.int64)
    cand_bit = np.empty(2 * L, dtype=np.uint8)
    leaf_llr = np.zeros(L)
    keep = np.zeros((L, 2), dtype=np.bool_)
    for i in range(n_total):
        for l in range(L):
            if active[l]:
                leaf_llr[l] = _leaf_llr(alpha, bl, l, i, n_total, n)
        if frozen[i]:
            for l in range(L):
                if active[l]:
                    lam = leaf_llr[l]
                    if lam < 0.0:
                        pm[l] += -lam
                    u[l, i] = 0
                    _push_bit(bl, br, l, i, 0, n_total, n)
            continue
        nc = 0
        for l in range(L):
            if active[l]:
                lam = leaf_llr[l]
                cand_pm[nc] = pm[l] + (-lam if lam < 0.0 else 0.0)
                cand_path[nc] = l
                cand_bit[nc] = 0
                nc += 1
                cand_pm[nc] = pm[l] + (lam if lam > 0.0 else 0.0)
                cand_path[nc] = l
                cand_bit[nc] = 1
                nc += 1
        order = np.argsort(cand_pm[:nc], kind="mergesort")
        survivors = min(L, nc)
        keep[:, :] = False
        for r in range(survivors):
            c = order[r]
            keep[cand_path[c], cand_bit[c]] = True
        # slots whose path has no surviving child become free
        free = np.empty(L, dtype=np.int64)
        nfree = 0
        for l in range(L):
            if not active[l] or not (keep[l, 0] or keep[l, 1]):
                free[nfree] = l
                nfree += 1
        new_pm0 = np.empty(L)
        new_pm1 = np.empty(L)
        for l in range(L):
            if active[l]:
                lam = leaf_llr[l]
                new_pm0[l] = pm[l] + (-lam if lam < 0.0 else 0.0)
                new_pm1[l] = pm[l] + (lam if lam > 0.0 else 0.0)
        for l in range(L):
            if active[l] and not (keep[l, 0] or keep[l, 1]):
                active[l] = False
        # a copy lands in a free slot whose keep flags are both unset, so the
        # loop passes over it when it reaches that slot
        fi = 0
        for l in range(L):
            if not active[l]:
                continue
            if keep[l, 0] and keep[l, 1]:
                s = free[fi]
                fi += 1
                _copy_path(l, s, alpha, bl, br, u)
                active[s] = True
                pm[s] = new_pm1[l]
                u[s, i] = 1
                _push_bit(bl, br, s, i, 1, n_total, n)
                pm[l] = new_pm0[l]
                u[l, i] = 0
                _push_bit(bl, br, l, i, 0, n_total, n)
            elif keep[l, 0]:
                pm[l] = new_pm0[l]
                u[l, i] = 0
                _push_bit(bl, br, l, i, 0, n_total, n)
            elif keep[l, 1]:
                pm[l] = new_pm1[l]
                u[l, i] = 1
                _push_bit(bl, br, l, i, 1, n_total, n)
    k = info_idx.size
    best_pm = np.inf
    best_l = -1
    idx = np.empty(L, dtype=np.int64)
    na = 0
    for l in range(L):
        if active[l]:
            idx[na] = l
            na += 1
    ordered = idx[:na][np.argsort(pm[idx[:na]], kind="mergesort")]
    bits = np.empty(k, dtype=np.uint8)
    if crc_len == 0:
        best_l = ordered[0]
        for j in range(k):
            bits[j] = u[best_l, info_idx[j]]
        return bits, not erased, pm[best_l]
    npay = k - crc_len
    for r in range(na):
        l = ordered[r]
        ok = True
        for c in range(crc_len):
            acc = 0
            for j in range(npay):
                if u[l, info_idx[j]] and crc_gen[j, c]:
                    acc ^= 1
            if acc != u[l, info_idx[npay + c]]:
                ok = False
                break
        if ok:
            for j in range(k):
                bits[j] = u[l, info_idx[j]]
            return bits, not erased, pm[l]
        if pm[l] < best_pm:
            best_pm = pm[l]
            best_l = l
    for j in range(k):
        bits[j] = u[best_l, info_idx[j]]
    return bits, False, best_pm


@njit(cache=True)
def _decode_batch(llrs, frozen, list_size, crc_gen, crc_len, info_idx):
    b = llrs.shape[0]
    out = np.empty((b, info_idx.size), dtype=np.uint8)
    ok = np.empty(b, dtype=np.bool_)
    for r in range(b):
        bits, flag, _ = scl_decode_kernel(llrs[r], frozen, list_size, crc_gen, crc_len, info_idx)
        out[r] = bits
        ok[r] = flag
    return out, ok


def _kernel_args(spec: CodewordSpec):
    if spec.crc_length:
        gen = np.ascontiguousarray(crc_matrix(spec.payload_length))
    else:
        gen = np.zeros((1, 1), dtype=np.uint8)
    return (
        np.ascontiguousarray(spec.frozen_mask),
        spec.list_size,
        gen,
        spec.crc_length,
        np.ascontiguousarray(spec.info_set.astype(np.int64)),
    )


def polar_decode(spec: CodewordSpec, llrs) -> tuple[np.ndarray, bool]:
    """CRC-aided SCL decoding of one codeword.

    Returns the payload of the most likely list entry that passes the CRC,
    or of the most likely entry overall with ``crc_pass = False``. Without
    a CRC the most likely entry is returned with ``crc_pass = True``. An
    all-zero input is an erasure and is never flagged as passing.
    """
    llrs = np.ascontiguousarray(llrs, dtype=np.float64)
    if llrs.shape != (spec.block_length,):
        raise ValueError(f"expected {spec.block_length} LLRs, got shape {llrs.shape}")
    bits, ok, _ = scl_decode_kernel(llrs, *_kernel_args(spec))
    return bits[: spec.payload_length].copy(), bool(ok)


def polar_decode_batch(spec: CodewordSpec, llrs) -> tuple[np.ndarray, np.ndarray]:
    """Decode a (B, N) array of LLR rows; returns (B, payload) bits and CRC flags."""
    llrs = np.ascontiguousarray(llrs, dtype=np.float64)
    if llrs.ndim != 2 or llrs.shape[1] != spec.block_length:
        raise ValueError(f"expected (B, {spec.block_length}) LLRs, got shape {llrs.shape}")
    bits, ok = _decode_batch(llrs, *_kernel_args(spec))
    return bits[:, : spec.payload_length], ok
