"""Compiled per-step agent loop.

Mirrors ``behavior.action_utilities`` / ``effective_weights`` operation for
operation so that traces match the reference path bit for bit. Agents are
addressed by slot (index into the step's sorted id list).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
DR = np.array([-1, -1, 0, 1, 1, 1, 0, -1, 0], dtype=np.int64)
DC = np.array([0, 1, 1, 1, 0, -1, -1, -1, 0], dtype=np.int64)
X = 8


@njit(cache=True)
def _cross(ar, ac, br, bc, cr, cc):
    return (br - ar) * (cc - ac) - (bc - ac) * (cr - ar)


@njit(cache=True)
def _gcd(a, b):
    a = abs(a)
    b = abs(b)
    while b:
        a, b = b, a % b
    return a


@njit(cache=True)
def hull_cells(rs, cs):
    """Lattice points in the closed convex hull of integer points (Pick)."""
    n = rs.shape[0]
    keys = rs * 1000003 + cs
    order = np.argsort(keys)
    pr = np.empty(n, dtype=np.int64)
    pc = np.empty(n, dtype=np.int64)
    m = 0
    for k in range(n):
        i = order[k]
        if m > 0 and pr[m - 1] == rs[i] and pc[m - 1] == cs[i]:
            continue
        pr[m] = rs[i]
        pc[m] = cs[i]
        m += 1
    if m == 1:
        return 1
    if m == 2:
        return _gcd(pr[1] - pr[0], pc[1] - pc[0]) + 1
    hr = np.empty(2 * m, dtype=np.int64)
    hc = np.empty(2 * m, dtype=np.int64)
    h = 0
    for i in range(m):
        while h >= 2 and _cross(hr[h - 2], hc[h - 2], hr[h - 1], hc[h - 1], pr[i], pc[i]) <= 0:
            h -= 1
        hr[h] = pr[i]
        hc[h] = pc[i]
        h += 1
    lo = h + 1
    for i in range(m - 2, -1, -1):
        while h >= lo and _cross(hr[h - 2], hc[h - 2], hr[h - 1], hc[h - 1], pr[i], pc[i]) <= 0:
            h -= 1
        hr[h] = pr[i]
        hc[h] = pc[i]
        h += 1
    h -= 1
    if h == 2:
        return _gcd(hr[1] - hr[0], hc[1] - hc[0]) + 1
    twice = 0
    boundary = 0
    for i in range(h):
        j = (i + 1) % h
        twice += hr[i] * hc[j] - hr[j] * hc[i]
        boundary += _gcd(hr[j] - hr[i], hc[j] - hc[i])
    twice = abs(twice)
    return (twice - boundary + 2) // 2 + boundary


@njit(cache=True)
def _centroid(ptr, idx, g, pr, pc):
    sr = 0
    sc = 0
    n = ptr[g + 1] - ptr[g]
    for k in range(ptr[g], ptr[g + 1]):
        sr += pr[idx[k]]
        sc += pc[idx[k]]
    return sr / n, sc / n


@njit(cache=True)
def _approach(r0, c0, r1, c1, gr, gc):
    d0 = math.hypot(r0 - gr, c0 - gc)
    d1 = math.hypot(r1 - gr, c1 - gc)
    v = (d0 - d1) / SQRT2
    if v < -1.0:
        return -1.0
    if v > 1.0:
        return 1.0
    return v


@njit(cache=True)
def _shift(r, c, a, rows, cols, wrap):
    r2 = r + DR[a]
    c2 = c + DC[a]
    if wrap:
        r2 %= rows
    if r2 < 0 or r2 >= rows or c2 < 0 or c2 >= cols:
        return -1, -1
    return r2, c2


@njit(cache=True)
def run_agents(order, uniforms, pr, pc, prev, dest, direct, simple, root, mem_ptr, mem_idx,
               all_ptr, all_idx, occ_n, occ_id, path, walk, obst, weights, delta, wrap, actions):
    """Sequentially decide and apply one action per agent in ``order``.

    ``direct``/``root`` give per-slot group indices (-1 for none; ``root``
    is -1 when it equals the direct group). ``mem_*`` lists live direct
    members per group, ``all_*`` live members of the whole subtree.
    """
    rows, cols = walk.shape
    util = np.empty(9)
    adm = np.zeros(9, dtype=np.bool_)
    tr = np.empty(9, dtype=np.int64)
    tc = np.empty(9, dtype=np.int64)
    for k in range(order.shape[0]):
        s = order[k]
        r = pr[s]
        c = pc[s]
        pf = path[dest[s]]
        g = direct[s]
        L = root[s]

        kg = weights[0]
        kc = weights[5]
        ki = weights[6]
        if g >= 0 and simple[g]:
            n = mem_ptr[g + 1] - mem_ptr[g]
            rs = np.empty(n, dtype=np.int64)
            cs = np.empty(n, dtype=np.int64)
            for j in range(n):
                rs[j] = pr[mem_idx[mem_ptr[g] + j]]
                cs[j] = pc[mem_idx[mem_ptr[g] + j]]
            db = math.tanh((hull_cells(rs, cs) / n) / delta)
            kc = kc / 3.0 + (2.0 * kc / 3.0) * db
            kg = kg / 3.0 + (2.0 * kg / 3.0) * (1.0 - db)
            ki = ki / 3.0 + (2.0 * ki / 3.0) * (1.0 - db)

        pmin = np.inf
        pmax = -np.inf
        for a in range(9):
            adm[a] = False
            if a == X:
                r2, c2 = r, c
            else:
                r2, c2 = _shift(r, c, a, rows, cols, wrap)
                if r2 < 0 or not walk[r2, c2] or not math.isfinite(pf[r2, c2]):
                    continue
                others = 0
                for j in range(occ_n[r2, c2]):
                    if occ_id[r2, c2, j] != s:
                        others += 1
                if others >= 2:
                    continue
            adm[a] = True
            tr[a] = r2
            tc[a] = c2
            v = pf[r2, c2]
            if v < pmin:
                pmin = v
            if v > pmax:
                pmax = v

        cr = cc = ir = ic = 0.0
        if g >= 0:
            cr, cc = _centroid(all_ptr, all_idx, g, pr, pc)
            if L >= 0:
                ir, ic = _centroid(all_ptr, all_idx, L, pr, pc)

        top = -np.inf
        for a in range(9):
            if not adm[a]:
                continue
            r2 = tr[a]
            c2 = tc[a]
            G = (pmax - pf[r2, c2]) / (pmax - pmin) if pmax > pmin else 0.0
            Ob = -obst[r2, c2]
            crowd = 0
            for b in range(8):
                nr, nc = _shift(r2, c2, b, rows, cols, wrap)
                if nr < 0:
                    continue
                for j in range(occ_n[nr, nc]):
                    o = occ_id[nr, nc, j]
                    if o == s or (g >= 0 and direct[o] == g):
                        continue
                    crowd += 1
            S = -min(crowd, 8) / 8.0
            D = 0.0
            if a != X and prev[s] >= 0:
                d = abs(a - prev[s]) % 8
                turns = min(d, 8 - d)
                D = 1.0 if turns == 0 else (0.5 if turns == 1 else 0.0)
            others = 0
            for j in range(occ_n[r2, c2]):
                if occ_id[r2, c2, j] != s:
                    others += 1
            Ov = -1.0 if others == 1 else 0.0
            C = 0.0
            I = 0.0
            if g >= 0:
                C = _approach(r, c, r2, c2, cr, cc)
                if L >= 0:
                    I = _approach(r, c, r2, c2, ir, ic)
            u = 0.0
            u += kg * G
            u += weights[1] * Ob
            u += weights[2] * S
            u += weights[3] * D
            u += weights[4] * Ov
            u += kc * C
            u += ki * I
            if a == 1 or a == 3 or a == 5 or a == 7:
                u = u / SQRT2
            util[a] = u
            if u > top:
                top = u

        z = 0.0
        for a in range(9):
            if adm[a]:
                util[a] = math.exp(util[a] - top)
                z += util[a]
            else:
                util[a] = 0.0
        acc = 0.0
        chosen = -1
        for a in range(9):
            p = util[a] / z
            if p <= 0.0:
                continue
            acc += p
            chosen = a
            if uniforms[k] < acc:
                break
        actions[k] = chosen

        if chosen != X:
            r2 = tr[chosen]
            c2 = tc[chosen]
            # remove from source cell
            n0 = occ_n[r, c]
            for j in range(n0):
                if occ_id[r, c, j] == s:
                    occ_id[r, c, j] = occ_id[r, c, n0 - 1]
                    occ_id[r, c, n0 - 1] = -1
                    break
            occ_n[r, c] = n0 - 1
            occ_id[r2, c2, occ_n[r2, c2]] = s
            occ_n[r2, c2] += 1
            pr[s] = r2
            pc[s] = c2
            prev[s] = chosen
