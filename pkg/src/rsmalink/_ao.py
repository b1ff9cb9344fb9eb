"""Compiled kernels for the alternating sum-rate optimizer.

All rates inside this module are in nats. The precoder layout is the
superposition form: ``pc`` is the stream decoded first by every user and
``pp[k]`` the stream decoded last by user k. Three modes share the code:

* ``MODE_RSMA``: everything free.
* ``MODE_SDMA``: ``pc`` frozen at zero.
* ``MODE_NOMA``: ``pp[weak]`` frozen at zero; ``pc`` carries the weak
  user's message and must be decodable by both users.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MODE_RSMA = 0
MODE_SDMA = 1
MODE_NOMA = 2

_LAMBDA_BISECTIONS = 30
_MIRROR_STEPS = 40
_MU_BISECTIONS = 100
_BACKTRACKS = 40
_MIN_OVERRELAX = 0.5
_SPLIT_SPAN = 12.0
_SPLIT_REFINES = 12
_MAX_OVERRELAX = 32.0


@njit(cache=True)
def stream_stats(H, sigma2, pc, pp):
    """Mean rates and the MMSE surrogate coefficients at ``(pc, pp)``.

    Returns ``rc, rp`` (mean common/private rates per user) and, per user,
    the quadratic surrogate ``xi(P) = sum_streams p^H Q p - 2 Re(v^H p) + const``
    for the common stream (``Qc, vc, cc``) and the private stream
    (``Qp, vp, cp``).
    """
    n_samp, k_users, m = H.shape
    rc = np.zeros(k_users)
    rp = np.zeros(k_users)
    Qc = np.zeros((k_users, m, m), dtype=np.complex128)
    Qp = np.zeros((k_users, m, m), dtype=np.complex128)
    vc = np.zeros((k_users, m), dtype=np.complex128)
    vp = np.zeros((k_users, m), dtype=np.complex128)
    cc = np.zeros(k_users)
    cp = np.zeros(k_users)
    for n in range(n_samp):
        for k in range(k_users):
            h = H[n, k]
            ec = 0j
            for j in range(m):
                ec += np.conj(h[j]) * pc[j]
            tp = sigma2[k]
            eown = 0j
            for i in range(k_users):
                e = 0j
                for j in range(m):
                    e += np.conj(h[j]) * pp[i, j]
                tp += e.real * e.real + e.imag * e.imag
                if i == k:
                    eown = e
            aown = eown.real * eown.real + eown.imag * eown.imag
            ac = ec.real * ec.real + ec.imag * ec.imag
            tc = tp + ac
            ip = tp - aown
            # common stream: interference is every private stream
            gc = np.conj(ec) / tc
            uc = tc / tp
            rc[k] += np.log(uc)
            wc = uc * (gc.real * gc.real + gc.imag * gc.imag)
            cc[k] += wc * sigma2[k] + uc - np.log(uc)
            # private stream after the common stream is removed
            gp = np.conj(eown) / tp
            up = tp / ip
            rp[k] += np.log(up)
            wp = up * (gp.real * gp.real + gp.imag * gp.imag)
            cp[k] += wp * sigma2[k] + up - np.log(up)
            for a in range(m):
                vc[k, a] += uc * np.conj(gc) * h[a]
                vp[k, a] += up * np.conj(gp) * h[a]
                for b in range(m):
                    hh = h[a] * np.conj(h[b])
                    Qc[k, a, b] += wc * hh
                    Qp[k, a, b] += wp * hh
    inv = 1.0 / n_samp
    return rc * inv, rp * inv, Qc * inv, vc * inv, cc * inv, Qp * inv, vp * inv, cp * inv


@njit(cache=True)
def mean_rates(H, sigma2, pc, pp):
    n_samp, k_users, m = H.shape
    rc = np.zeros(k_users)
    rp = np.zeros(k_users)
    for n in range(n_samp):
        for k in range(k_users):
            h = H[n, k]
            ec = 0j
            for j in range(m):
                ec += np.conj(h[j]) * pc[j]
            tp = sigma2[k]
            aown = 0.0
            for i in range(k_users):
                e = 0j
                for j in range(m):
                    e += np.conj(h[j]) * pp[i, j]
                a = e.real * e.real + e.imag * e.imag
                tp += a
                if i == k:
                    aown = a
            rc[k] += np.log1p((ec.real * ec.real + ec.imag * ec.imag) / tp)
            rp[k] += np.log1p(aown / (tp - aown))
    return rc / n_samp, rp / n_samp


@njit(cache=True)
def penalized_objective(rc, rp, mode, weak, r0, rho):
    """Sum-rate minus ``rho`` times the QoS violation; returns (value, violation)."""
    k_users = rp.size
    rcmin = 0.0
    if mode != MODE_SDMA:
        rcmin = rc[0]
        for k in range(1, k_users):
            if rc[k] < rcmin:
                rcmin = rc[k]
    if mode == MODE_NOMA:
        strong = 1 - weak
        viol = max(0.0, r0 - rcmin) + max(0.0, r0 - rp[strong])
        return rcmin + rp[strong] - rho * viol, viol
    shortfall = 0.0
    total = rcmin
    for k in range(k_users):
        total += rp[k]
        shortfall += max(0.0, r0 - rp[k])
    viol = max(0.0, shortfall - rcmin)
    return total - rho * viol, viol


@njit(cache=True)
def _quad(Q, p):
    """Re(p^H Q p) for Hermitian Q."""
    m = p.size
    acc = 0.0
    for a in range(m):
        row = 0j
        for b in range(m):
            row += Q[a, b] * p[b]
        acc += (np.conj(p[a]) * row).real
    return acc


@njit(cache=True)
def _re_inner(v, p):
    acc = 0.0
    for a in range(p.size):
        acc += (np.conj(v[a]) * p[a]).real
    return acc


@njit(cache=True)
def _surrogate_rates(pc, pp, Qc, vc, cc, Qp, vp, cp):
    k_users = pp.shape[0]
    rc = np.empty(k_users)
    rp = np.empty(k_users)
    for k in range(k_users):
        quad_p = 0.0
        quad_pc = _quad(Qc[k], pc)
        for i in range(k_users):
            quad_p += _quad(Qp[k], pp[i])
            quad_pc += _quad(Qc[k], pp[i])
        rc[k] = 1.0 - (quad_pc - 2.0 * _re_inner(vc[k], pc) + cc[k])
        rp[k] = 1.0 - (quad_p - 2.0 * _re_inner(vp[k], pp[k]) + cp[k])
    return rc, rp


@njit(cache=True)
def _weighted_value(rc, rp, c, b):
    val = 0.0
    if c > 0.0:
        m = rc[0]
        for k in range(1, rc.size):
            if rc[k] < m:
                m = rc[k]
        val += c * m
    for k in range(rp.size):
        val += b[k] * rp[k]
    return val


@njit(cache=True)
def _eigh(A):
    """Ascending eigenpairs of a Hermitian matrix; closed form for 2 x 2."""
    if A.shape[0] != 2:
        return np.linalg.eigh(A)
    a = A[0, 0].real
    d = A[1, 1].real
    b = A[0, 1]
    half = 0.5 * (a - d)
    rad = np.sqrt(half * half + b.real * b.real + b.imag * b.imag)
    mid = 0.5 * (a + d)
    w = np.array([mid - rad, mid + rad])
    U = np.zeros((2, 2), dtype=np.complex128)
    if rad == 0.0 or abs(b) <= 1e-300:
        if a <= d:
            U[0, 0] = 1.0
            U[1, 1] = 1.0
        else:
            U[1, 0] = 1.0
            U[0, 1] = 1.0
        return w, U
    # top eigenvector from the better conditioned of the two null-space rows
    lam = w[1]
    x0 = b
    x1 = lam - a + 0j
    y0 = lam - d + 0j
    y1 = np.conj(b)
    if abs(x0) ** 2 + abs(x1) ** 2 >= abs(y0) ** 2 + abs(y1) ** 2:
        v0, v1 = x0, x1
    else:
        v0, v1 = y0, y1
    nrm = np.sqrt(abs(v0) ** 2 + abs(v1) ** 2)
    v0 /= nrm
    v1 /= nrm
    U[0, 1] = v0
    U[1, 1] = v1
    U[0, 0] = -np.conj(v1)
    U[1, 0] = np.conj(v0)
    return w, U


@njit(cache=True)
def _power_at(mu, mag, eig):
    pw = 0.0
    dpw = 0.0
    for s in range(mag.shape[0]):
        for j in range(mag.shape[1]):
            if mag[s, j] > 0.0:
                d = eig[s, j] + mu
                t = mag[s, j] / (d * d)
                pw += t
                dpw -= 2.0 * t / d
    return pw, dpw


@njit(cache=True)
def _solve_multiplier(mag, eig, total, power):
    """Root of ``power(mu) = P`` by safeguarded Newton on ``power(mu)^(-1/2)``."""
    lo = 0.0
    hi = np.sqrt(total / power) * 1.0000001 + 1e-300
    target = 1.0 / np.sqrt(power)
    mu = hi
    for _ in range(_MU_BISECTIONS):
        pw, dpw = _power_at(mu, mag, eig)
        if pw > power:
            lo = mu
        else:
            hi = mu
        g = 1.0 / np.sqrt(pw) - target
        if abs(g) <= 1e-13 * target or hi - lo <= 1e-15 * hi:
            break
        # d/dmu of pw^(-1/2)
        dg = -0.5 * dpw / (pw * np.sqrt(pw))
        step = mu - g / dg if dg > 0.0 else 0.5 * (lo + hi)
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        mu = step
    pw, _ = _power_at(mu, mag, eig)
    # rounding-level overshoot is fine; anything larger falls back to the safe side
    if pw > power * (1.0 + 1e-12):
        mu = hi
    return mu


@njit(cache=True)
def _closed_form(lam, c, b, Qc, vc, Qp, vp, power, freeze_common, frozen_private):
    """Maximise the lambda-weighted surrogate over the power ball.

    Solves ``(A + mu I) p = f`` per stream with one shared multiplier ``mu``
    found by bisection on the power constraint.
    """
    k_users, m, _ = Qc.shape
    Ac = np.zeros((m, m), dtype=np.complex128)
    Ap = np.zeros((m, m), dtype=np.complex128)
    fc = np.zeros(m, dtype=np.complex128)
    for k in range(k_users):
        wk = c * lam[k]
        for a in range(m):
            fc[a] += wk * vc[k, a]
            for bb in range(m):
                Ac[a, bb] += wk * Qc[k, a, bb]
                Ap[a, bb] += wk * Qc[k, a, bb] + b[k] * Qp[k, a, bb]
    # Hermitian symmetrisation guards eigh against rounding asymmetry
    for a in range(m):
        for bb in range(a, m):
            x = 0.5 * (Ac[a, bb] + np.conj(Ac[bb, a]))
            Ac[a, bb] = x
            Ac[bb, a] = np.conj(x)
            y = 0.5 * (Ap[a, bb] + np.conj(Ap[bb, a]))
            Ap[a, bb] = y
            Ap[bb, a] = np.conj(y)
    ec, Uc = _eigh(Ac)
    ep, Up = _eigh(Ap)
    n_streams = k_users + 1
    coef = np.zeros((n_streams, m), dtype=np.complex128)
    eig = np.zeros((n_streams, m))
    active = np.zeros(n_streams, dtype=np.bool_)
    if not freeze_common:
        for j in range(m):
            acc = 0j
            for a in range(m):
                acc += np.conj(Uc[a, j]) * fc[a]
            coef[0, j] = acc
            eig[0, j] = ec[j]
        active[0] = True
    for i in range(k_users):
        if i == frozen_private:
            continue
        for j in range(m):
            acc = 0j
            for a in range(m):
                acc += np.conj(Up[a, j]) * vp[i, a]
            coef[i + 1, j] = b[i] * acc
            eig[i + 1, j] = ep[j]
        active[i + 1] = True
    scale = 0.0
    total = 0.0
    for s in range(n_streams):
        if active[s]:
            for j in range(m):
                if eig[s, j] < 0.0:
                    eig[s, j] = 0.0
                if eig[s, j] > scale:
                    scale = eig[s, j]
                total += coef[s, j].real ** 2 + coef[s, j].imag ** 2
    pc = np.zeros(m, dtype=np.complex128)
    pp = np.zeros((k_users, m), dtype=np.complex128)
    if total == 0.0:
        return pc, pp
    tiny = 1e-13 * max(scale, 1e-300)
    # drop null-space components that carry no linear term
    mag = np.zeros((n_streams, m))
    singular = False
    for s in range(n_streams):
        for j in range(m):
            if active[s]:
                mag[s, j] = coef[s, j].real ** 2 + coef[s, j].imag ** 2
                if eig[s, j] <= tiny:
                    if mag[s, j] <= 1e-24 * total:
                        mag[s, j] = 0.0
                        coef[s, j] = 0.0
                    else:
                        singular = True
    mu = 0.0
    need = singular
    if not need:
        p0 = 0.0
        for s in range(n_streams):
            for j in range(m):
                if mag[s, j] > 0.0:
                    p0 += mag[s, j] / (eig[s, j] * eig[s, j])
        need = p0 > power
    if need:
        mu = _solve_multiplier(mag, eig, total, power)
    for s in range(n_streams):
        if not active[s]:
            continue
        U = Uc if s == 0 else Up
        for j in range(m):
            if mag[s, j] > 0.0:
                scale_j = coef[s, j] / (eig[s, j] + mu)
                for a in range(m):
                    if s == 0:
                        pc[a] += U[a, j] * scale_j
                    else:
                        pp[s - 1, a] += U[a, j] * scale_j
    return pc, pp


@njit(cache=True)
def _solve_subproblem(pc0, pp0, c, b, Qc, vc, cc, Qp, vp, cp, power, freeze_common, frozen_private):
    """Best precoders for ``c * min_k rc_k + sum_k b_k rp_k`` on the surrogate.

    The min is handled through its dual weights on the simplex: bisection
    for two users, exponentiated-gradient steps otherwise. The incoming
    point is itself a candidate, so the surrogate never decreases.
    """
    k_users = pp0.shape[0]
    rc, rp = _surrogate_rates(pc0, pp0, Qc, vc, cc, Qp, vp, cp)
    best = _weighted_value(rc, rp, c, b)
    best_pc = pc0.copy()
    best_pp = pp0.copy()
    lam = np.full(k_users, 1.0 / k_users)
    if c <= 0.0 or k_users == 1:
        if k_users == 1:
            lam[0] = 1.0
        pc, pp = _closed_form(lam, c, b, Qc, vc, Qp, vp, power, freeze_common, frozen_private)
        rc, rp = _surrogate_rates(pc, pp, Qc, vc, cc, Qp, vp, cp)
        val = _weighted_value(rc, rp, c, b)
        if val > best:
            return pc, pp, val
        return best_pc, best_pp, best
    if k_users == 2:
        lo = 0.0
        hi = 1.0
        for _ in range(_LAMBDA_BISECTIONS):
            mid = 0.5 * (lo + hi)
            lam[0] = mid
            lam[1] = 1.0 - mid
            pc, pp = _closed_form(lam, c, b, Qc, vc, Qp, vp, power, freeze_common, frozen_private)
            rc, rp = _surrogate_rates(pc, pp, Qc, vc, cc, Qp, vp, cp)
            val = _weighted_value(rc, rp, c, b)
            if val > best:
                best = val
                best_pc = pc
                best_pp = pp
            if rc[0] > rc[1]:
                hi = mid
            else:
                lo = mid
        return best_pc, best_pp, best
    for t in range(_MIRROR_STEPS):
        pc, pp = _closed_form(lam, c, b, Qc, vc, Qp, vp, power, freeze_common, frozen_private)
        rc, rp = _surrogate_rates(pc, pp, Qc, vc, cc, Qp, vp, cp)
        val = _weighted_value(rc, rp, c, b)
        if val > best:
            best = val
            best_pc = pc
            best_pp = pp
        step = 2.0 / np.sqrt(t + 1.0)
        mean = np.mean(rc)
        lam = lam * np.exp(-step * (rc - mean))
        lam = lam / np.sum(lam)
    return best_pc, best_pp, best


@njit(cache=True)
def _total_power(pc, pp):
    acc = 0.0
    for a in range(pc.size):
        acc += pc[a].real ** 2 + pc[a].imag ** 2
    for i in range(pp.shape[0]):
        for a in range(pp.shape[1]):
            acc += pp[i, a].real ** 2 + pp[i, a].imag ** 2
    return acc


@njit(cache=True)
def _scaled(pc, pp, frac, used, pc_pow, pp_pow):
    return pc * np.sqrt((1.0 - frac) * used / pc_pow), pp * np.sqrt(frac * used / pp_pow)


@njit(cache=True)
def _split_search(H, sigma2, pc, pp, mode, weak, r0, rho, obj):
    """Line search on the common/private power ratio with directions fixed.

    The MM steps move power between the layers very slowly when their
    optimal powers differ by orders of magnitude, so the ratio is searched
    directly on a log grid and refined by golden section.
    """
    pc_pow = 0.0
    for a in range(pc.size):
        pc_pow += pc[a].real ** 2 + pc[a].imag ** 2
    used = _total_power(pc, pp)
    pp_pow = used - pc_pow
    if pc_pow <= 0.0 or pp_pow <= 0.0:
        return pc, pp, obj, -1.0
    f0 = pp_pow / used
    best_x = 0.0
    best = obj
    # log2 offsets from the current private fraction
    lo_lim = np.log2(1e-12 / f0)
    hi_lim = -np.log2(f0)
    x = -_SPLIT_SPAN
    while x <= _SPLIT_SPAN:
        if lo_lim < x < hi_lim:
            qc, qp = _scaled(pc, pp, f0 * 2.0**x, used, pc_pow, pp_pow)
            rc, rp = mean_rates(H, sigma2, qc, qp)
            val, _ = penalized_objective(rc, rp, mode, weak, r0, rho)
            if val > best:
                best = val
                best_x = x
        x += 1.0
    a = max(best_x - 1.0, lo_lim)
    b = min(best_x + 1.0, hi_lim)
    g = 0.5 * (np.sqrt(5.0) - 1.0)
    for _ in range(_SPLIT_REFINES):
        x1 = b - g * (b - a)
        x2 = a + g * (b - a)
        qc, qp = _scaled(pc, pp, f0 * 2.0**x1, used, pc_pow, pp_pow)
        rc, rp = mean_rates(H, sigma2, qc, qp)
        v1, _ = penalized_objective(rc, rp, mode, weak, r0, rho)
        qc, qp = _scaled(pc, pp, f0 * 2.0**x2, used, pc_pow, pp_pow)
        rc, rp = mean_rates(H, sigma2, qc, qp)
        v2, _ = penalized_objective(rc, rp, mode, weak, r0, rho)
        if v1 > best:
            best = v1
            best_x = x1
        if v2 > best:
            best = v2
            best_x = x2
        if v1 >= v2:
            b = x2
        else:
            a = x1
    if best <= obj:
        return pc, pp, obj, -1.0
    qc, qp = _scaled(pc, pp, f0 * 2.0**best_x, used, pc_pow, pp_pow)
    rc, rp = mean_rates(H, sigma2, qc, qp)
    val, viol = penalized_objective(rc, rp, mode, weak, r0, rho)
    if val <= obj:
        return pc, pp, obj, -1.0
    return qc, qp, val, viol


@njit(cache=True)
def ao_run(H, sigma2, power, pc, pp, mode, weak, r0, rho, max_iter, tol, trace):
    """Alternating optimisation from ``(pc, pp)``.

    ``trace`` receives the penalised objective (nats) after every outer
    iteration, starting with the initial point. Returns the final
    precoders, the number of recorded trace entries, the objective and the
    QoS violation.
    """
    k_users = pp.shape[0]
    freeze_common = mode == MODE_SDMA
    frozen_private = weak if mode == MODE_NOMA else -1
    pc = pc.copy()
    pp = pp.copy()
    if freeze_common:
        pc[:] = 0.0
    if frozen_private >= 0:
        pp[frozen_private] = 0.0
    rc, rp, Qc, vc, cc, Qp, vp, cp = stream_stats(H, sigma2, pc, pp)
    obj, viol = penalized_objective(rc, rp, mode, weak, r0, rho)
    trace[0] = obj
    count = 1
    b = np.ones(k_users)
    beta = _MIN_OVERRELAX
    for _ in range(max_iter):
        # linearise the QoS penalty around the current rates
        if mode == MODE_NOMA:
            strong = 1 - weak
            rcmin = min(rc[0], rc[1])
            c = 1.0 + (rho if rcmin < r0 else 0.0)
            b[:] = 0.0
            b[strong] = 1.0 + (rho if rp[strong] < r0 else 0.0)
        else:
            active = viol > 0.0
            c = 0.0 if mode == MODE_SDMA else (1.0 + (rho if active else 0.0))
            for k in range(k_users):
                b[k] = 1.0 + (rho if (active and rp[k] < r0) else 0.0)
        npc, npp, _ = _solve_subproblem(
            pc, pp, c, b, Qc, vc, cc, Qp, vp, cp, power, freeze_common, frozen_private
        )
        nrc, nrp = mean_rates(H, sigma2, npc, npp)
        nobj, nviol = penalized_objective(nrc, nrp, mode, weak, r0, rho)
        if nobj < obj:
            dpc = npc - pc
            dpp = npp - pp
            t = 1.0
            accepted = False
            for _ in range(_BACKTRACKS):
                t *= 0.5
                tpc = pc + t * dpc
                tpp = pp + t * dpp
                trc, trp = mean_rates(H, sigma2, tpc, tpp)
                tobj, tviol = penalized_objective(trc, trp, mode, weak, r0, rho)
                if tobj >= obj:
                    npc, npp, nobj, nviol = tpc, tpp, tobj, tviol
                    accepted = True
                    break
            if not accepted:
                break
        else:
            # over-relax along the MM step; kept only when it helps
            epc = npc + beta * (npc - pc)
            epp = npp + beta * (npp - pp)
            used = _total_power(epc, epp)
            if used > power:
                s = np.sqrt(power / used)
                epc *= s
                epp *= s
            erc, erp = mean_rates(H, sigma2, epc, epp)
            eobj, eviol = penalized_objective(erc, erp, mode, weak, r0, rho)
            if eobj > nobj:
                npc, npp, nobj, nviol = epc, epp, eobj, eviol
                beta = min(2.0 * beta, _MAX_OVERRELAX)
            else:
                beta = max(0.5 * beta, _MIN_OVERRELAX)
        change = nobj - obj
        pc = npc
        pp = npp
        obj = nobj
        viol = nviol
        if change <= tol * max(abs(obj), 1e-6) and not freeze_common:
            spc, spp, sobj, sviol = _split_search(H, sigma2, pc, pp, mode, weak, r0, rho, obj)
            if sobj > obj:
                change += sobj - obj
                pc, pp, obj, viol = spc, spp, sobj, sviol
        trace[count] = obj
        count += 1
        if change <= tol * max(abs(obj), 1e-6):
            break
        rc, rp, Qc, vc, cc, Qp, vp, cp = stream_stats(H, sigma2, pc, pp)
    return pc, pp, count, obj, viol
