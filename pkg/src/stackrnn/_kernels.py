"""Fused numba kernels for the recurrent step, window BPTT and stream scoring.

Memory layout: each memory unit's state is ``(base, lo, hi)`` into a flat
float64 buffer; the cell at head-relative offset ``o`` (``lo <= o <= hi``)
lives at ``buf[base + o - lo]``. Everything outside ``[lo, hi]`` reads -1.
An empty unit has ``lo = 0, hi = -1``. Stacks always have ``lo = 0``.

Scratch and gradient arrays are indexed ``center + offset`` with
``center = cap + 2`` and width ``2 * cap + 5``.
"""

from __future__ import annotations

import math

import numba
import numpy as np

KIND_RNN, KIND_STACK, KIND_LIST = 0, 1, 2

OK, OVERFLOW = 0, 1

_jit = numba.njit(cache=True, nogil=True)


def scratch_width(cap: int) -> int:
    return 2 * cap + 5


@_jit
def _get(buf, base, lo, hi, o):
    if o < lo or o > hi:
        return -1.0
    return buf[base + o - lo]


@_jit
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@_jit
def _softmax_inplace(z, n):
    mx = z[0]
    for i in range(1, n):
        if z[i] > mx:
            mx = z[i]
    s = 0.0
    for i in range(n):
        z[i] = math.exp(z[i] - mx)
        s += z[i]
    for i in range(n):
        z[i] /= s


@_jit
def _mem_update(kind, noop, a, v, buf, base, lo, hi, scratch, center, cap, drop):
    """Write the updated cells into ``scratch``; returns (lo', hi', status)."""
    if kind == KIND_STACK:
        wlo = 0
        whi = hi + 1
        pu = a[0]
        po = a[1]
        no = a[2] if noop else 0.0
        for i in range(wlo, whi + 1):
            if i == 0:
                x = pu * v + po * _get(buf, base, lo, hi, 1)
            else:
                x = pu * _get(buf, base, lo, hi, i - 1) + po * _get(buf, base, lo, hi, i + 1)
            if noop:
                x += no * _get(buf, base, lo, hi, i)
            scratch[center + i] = x
    else:
        if hi < lo:
            wlo = -1
            whi = 1
        else:
            wlo = min(lo, 0) - 1
            whi = max(hi, 0) + 1
        ins = a[0]
        le = a[1]
        ri = a[2]
        no = a[3] if noop else 0.0
        for i in range(wlo, whi + 1):
            r = _get(buf, base, lo, hi, i + 1)
            x = ri * r + le * _get(buf, base, lo, hi, i - 1)
            if i == 0:
                x += ins * v
            elif i < 0:
                x += ins * r
            else:
                x += ins * _get(buf, base, lo, hi, i)
            if noop:
                x += no * _get(buf, base, lo, hi, i)
            scratch[center + i] = x

    status = OK
    nlo = wlo
    nhi = whi
    for _ in range(2):
        while nlo <= nhi and scratch[center + nhi] == -1.0:
            nhi -= 1
        if kind == KIND_LIST:
            while nlo <= nhi and scratch[center + nlo] == -1.0:
                nlo += 1
        if nlo > nhi:
            return 0, -1, status
        top = cap - 1 if kind == KIND_STACK else cap
        bottom = -cap
        if nhi <= top and nlo >= bottom:
            break
        if not drop:
            return nlo, nhi, OVERFLOW
        nhi = min(nhi, top)
        nlo = max(nlo, bottom)
    return nlo, nhi, status


@_jit
def _step(U, R, V, A, D, P, kind, noop, use_R, k, cap, drop, discrete, x,
          h_prev, buf, bases, los, his,
          dst, ptr, dst_bases, dst_los, dst_his,
          h, r, act, vals, y, scratch, center):
    """One time step. Returns (status, new write pointer)."""
    m = U.shape[1]
    d = U.shape[0]
    S = A.shape[0]
    na = A.shape[1]

    for j in range(S):
        for q in range(k):
            r[j * k + q] = _get(buf, bases[j], los[j], his[j], q)

    for i in range(m):
        z = U[x, i]
        if use_R:
            for c in range(m):
                z += R[i, c] * h_prev[c]
        for c in range(S * k):
            z += P[i, c] * r[c]
        h[i] = _sigmoid(z)

    status = OK
    for j in range(S):
        for ai in range(na):
            z = 0.0
            for c in range(m):
                z += A[j, ai, c] * h[c]
            act[j, ai] = z
        _softmax_inplace(act[j], na)
        if discrete:
            best = 0
            for ai in range(1, na):
                if act[j, ai] > act[j, best]:
                    best = ai
            for ai in range(na):
                act[j, ai] = 1.0 if ai == best else 0.0
        z = 0.0
        for c in range(m):
            z += D[j, c] * h[c]
        vals[j] = _sigmoid(z)
        nlo, nhi, st = _mem_update(kind, noop, act[j], vals[j], buf, bases[j], los[j],
                                   his[j], scratch, center, cap, drop)
        if st != OK:
            status = st
        dst_bases[j] = ptr
        dst_los[j] = nlo
        dst_his[j] = nhi
        for o in range(nlo, nhi + 1):
            dst[ptr] = scratch[center + o]
            ptr += 1

    for o in range(d):
        z = 0.0
        for i in range(m):
            z += V[i, o] * h[i]
        y[o] = z
    _softmax_inplace(y, d)
    return status, ptr


@_jit
def forward_window(U, R, V, A, D, P, kind, noop, use_R, k, cap, drop, discrete,
                   tokens, mask, h0, buf0, bases0, los0, his0,
                   H, ACT, VALS, Y, RD, store, bases, los, his, scratch):
    """Run ``len(tokens) - 1`` steps, caching everything backward needs.

    Slot ``t`` of ``H`` / ``bases`` / ``los`` / ``his`` holds the state *before*
    step ``t``; slot ``T`` is the carried-out state. Returns (loss, status).
    """
    T = tokens.shape[0] - 1
    S = A.shape[0]
    center = (scratch.shape[0] - 1) // 2
    ptr = 0
    for j in range(S):
        bases[0, j] = ptr
        los[0, j] = los0[j]
        his[0, j] = his0[j]
        for o in range(los0[j], his0[j] + 1):
            store[ptr] = buf0[bases0[j] + o - los0[j]]
            ptr += 1
    H[0, :] = h0
    loss = 0.0
    for t in range(T):
        st, ptr = _step(U, R, V, A, D, P, kind, noop, use_R, k, cap, drop, discrete,
                        tokens[t], H[t], store, bases[t], los[t], his[t],
                        store, ptr, bases[t + 1], los[t + 1], his[t + 1],
                        H[t + 1], RD[t], ACT[t], VALS[t], Y[t], scratch, center)
        if st != OK:
            return loss, st
        if mask[t]:
            loss -= math.log(Y[t, tokens[t + 1]])
    return loss, OK


@_jit
def backward_window(U, R, V, A, D, P, kind, noop, use_R, k,
                    tokens, mask, H, ACT, VALS, Y, RD, store, bases, los, his,
                    gU, gR, gV, gA, gD, gP, gcur, gprev):
    """Exact gradient of the cached window loss, truncated at slot 0."""
    T = tokens.shape[0] - 1
    m = U.shape[1]
    d = U.shape[0]
    S = A.shape[0]
    na = A.shape[1]
    center = (gcur.shape[1] - 1) // 2
    dh = np.zeros(m)
    dh_next = np.zeros(m)
    dz = np.zeros(m)
    dy = np.zeros(d)
    da = np.zeros(max(na, 1))

    for j in range(S):
        for o in range(los[T, j], his[T, j] + 1):
            gcur[j, center + o] = 0.0

    for t in range(T - 1, -1, -1):
        h = H[t + 1]
        for i in range(m):
            dh[i] = dh_next[i]
        if mask[t]:
            for o in range(d):
                dy[o] = Y[t, o]
            dy[tokens[t + 1]] -= 1.0
            for i in range(m):
                acc = 0.0
                for o in range(d):
                    gV[i, o] += h[i] * dy[o]
                    acc += V[i, o] * dy[o]
                dh[i] += acc

        for j in range(S):
            a = ACT[t, j]
            v = VALS[t, j]
            plo = los[t, j]
            phi = his[t, j]
            pb = bases[t, j]
            for o in range(plo, phi + 1):
                gprev[j, center + o] = 0.0
            for ai in range(na):
                da[ai] = 0.0
            dv = 0.0
            for i in range(los[t + 1, j], his[t + 1, j] + 1):
                gi = gcur[j, center + i]
                if gi == 0.0:
                    continue
                if kind == KIND_STACK:
                    if i == 0:
                        da[0] += gi * v
                        dv += gi * a[0]
                    else:
                        da[0] += gi * _get(store, pb, plo, phi, i - 1)
                        if i - 1 <= phi:
                            gprev[j, center + i - 1] += gi * a[0]
                    da[1] += gi * _get(store, pb, plo, phi, i + 1)
                    if i + 1 <= phi:
                        gprev[j, center + i + 1] += gi * a[1]
                    if noop:
                        da[2] += gi * _get(store, pb, plo, phi, i)
                        if i <= phi:
                            gprev[j, center + i] += gi * a[2]
                else:
                    rv = _get(store, pb, plo, phi, i + 1)
                    da[2] += gi * rv
                    if plo <= i + 1 <= phi:
                        gprev[j, center + i + 1] += gi * a[2]
                    da[1] += gi * _get(store, pb, plo, phi, i - 1)
                    if plo <= i - 1 <= phi:
                        gprev[j, center + i - 1] += gi * a[1]
                    if i == 0:
                        da[0] += gi * v
                        dv += gi * a[0]
                    elif i < 0:
                        da[0] += gi * rv
                        if plo <= i + 1 <= phi:
                            gprev[j, center + i + 1] += gi * a[0]
                    else:
                        da[0] += gi * _get(store, pb, plo, phi, i)
                        if plo <= i <= phi:
                            gprev[j, center + i] += gi * a[0]
                    if noop:
                        da[3] += gi * _get(store, pb, plo, phi, i)
                        if plo <= i <= phi:
                            gprev[j, center + i] += gi * a[3]

            dpre = dv * v * (1.0 - v)
            if dpre != 0.0:
                for c in range(m):
                    gD[j, c] += dpre * h[c]
                    dh[c] += dpre * D[j, c]
            s = 0.0
            for ai in range(na):
                s += a[ai] * da[ai]
            for ai in range(na):
                dl = a[ai] * (da[ai] - s)
                if dl != 0.0:
                    for c in range(m):
                        gA[j, ai, c] += dl * h[c]
                        dh[c] += dl * A[j, ai, c]

        for i in range(m):
            dz[i] = dh[i] * h[i] * (1.0 - h[i])
        x = tokens[t]
        hp = H[t]
        for i in range(m):
            gU[x, i] += dz[i]
            for c in range(S * k):
                gP[i, c] += dz[i] * RD[t, c]
        if use_R:
            for i in range(m):
                for c in range(m):
                    gR[i, c] += dz[i] * hp[c]
            for c in range(m):
                acc = 0.0
                for i in range(m):
                    acc += R[i, c] * dz[i]
                dh_next[c] = acc
        for j in range(S):
            for q in range(k):
                if los[t, j] <= q <= his[t, j]:
                    acc = 0.0
                    for i in range(m):
                        acc += P[i, j * k + q] * dz[i]
                    gprev[j, center + q] += acc
        gcur, gprev = gprev, gcur


@_jit
def run_stream(U, R, V, A, D, P, kind, noop, use_R, k, cap, drop, discrete,
               tokens, h, buf, bases, los, his, buf2, bases2, los2, his2, scratch,
               logp, pred, act_idx, tops, act_prob):
    """Forward-only pass over ``tokens``; no caching, state updated in place.

    Per step ``t`` records log p(tokens[t+1]) (NaN for the last step), the
    argmax prediction, each unit's argmax action, its distribution and its
    top cell after the update. Returns (status, which buffer holds the state).
    """
    T = tokens.shape[0]
    m = U.shape[1]
    d = U.shape[0]
    S = A.shape[0]
    na = A.shape[1]
    center = (scratch.shape[0] - 1) // 2
    h_new = np.empty(m)
    r = np.empty(max(S * k, 1))
    act = np.empty((S, max(na, 1)))
    vals = np.empty(max(S, 1))
    y = np.empty(d)
    cur = 0
    for t in range(T):
        if cur == 0:
            st, _ = _step(U, R, V, A, D, P, kind, noop, use_R, k, cap, drop, discrete,
                          tokens[t], h, buf, bases, los, his, buf2, 0, bases2, los2, his2,
                          h_new, r, act, vals, y, scratch, center)
        else:
            st, _ = _step(U, R, V, A, D, P, kind, noop, use_R, k, cap, drop, discrete,
                          tokens[t], h, buf2, bases2, los2, his2, buf, 0, bases, los, his,
                          h_new, r, act, vals, y, scratch, center)
        if st != OK:
            return st, cur
        cur = 1 - cur
        for i in range(m):
            h[i] = h_new[i]
        best = 0
        for o in range(1, d):
            if y[o] > y[best]:
                best = o
        pred[t] = best
        logp[t] = math.log(y[tokens[t + 1]]) if t + 1 < T else np.nan
        for j in range(S):
            b = 0
            for ai in range(na):
                act_prob[t, j, ai] = act[j, ai]
                if act[j, ai] > act[j, b]:
                    b = ai
            act_idx[t, j] = b
            if cur == 1:
                tops[t, j] = _get(buf2, bases2[j], los2[j], his2[j], 0)
            else:
                tops[t, j] = _get(buf, bases[j], los[j], his[j], 0)
    return OK, cur
