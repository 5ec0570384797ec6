"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops over scalars and shares
no code with the package, so agreement is evidence of correctness rather
than of a shared bug.
"""

from __future__ import annotations

import itertools
import math


def slot_cost_oracle(lam, prev, v, parents, cfg):
    """(energy, delay, switching, total) for one slot, scalar loops only."""
    n_mbs = cfg.n_mbs
    n_sbs = len(v)
    mbs_traffic = [lam[m] for m in range(n_mbs)]
    sbs_load = []
    for i in range(n_sbs):
        lam_i = lam[n_mbs + i]
        if v[i] == 1:
            sbs_load.append(min(lam_i, cfg.load_cap))
        else:
            sbs_load.append(0.0)
            mbs_traffic[parents[i]] += lam_i
    mbs_load = [min(t / cfg.capacity_ratio, cfg.load_cap) for t in mbs_traffic]

    e = 0.0
    for i in range(n_sbs):
        if v[i] == 1:
            e += cfg.sbs_const_power + sbs_load[i] * cfg.sbs_load_power
        else:
            e += cfg.sbs_sleep_power
    for m in range(n_mbs):
        e += cfg.mbs_const_power + mbs_load[m] * cfg.mbs_load_power

    d = 0.0
    for rho in mbs_load + sbs_load:
        d += cfg.beta_d * rho / (1.0 - rho)

    s = 0.0
    for i in range(n_sbs):
        if v[i] - prev[i] > 0:
            s += cfg.beta_s * (v[i] - prev[i])
    return e, d, s, e + d + s


def hamming_ball(v_hat, distance):
    """Every binary vector within ``distance`` flips of ``v_hat`` (as tuples)."""
    n = len(v_hat)
    out = []
    for bits in itertools.product((0, 1), repeat=n):
        if sum(abs(b - int(x)) for b, x in zip(bits, v_hat)) <= distance:
            out.append(bits)
    return out


def tie_key(bits):
    """Fewest active SBSs first, then lowest ``sum_i v_i 2^i``."""
    return sum(bits), sum(b << i for i, b in enumerate(bits))


def brute_argmin(candidates, score):
    best, best_val = None, math.inf
    for c in sorted(candidates, key=tie_key):
        val = score(c)
        if val < best_val:
            best, best_val = c, val
    return best


def ou_simulate(theta, sigma, steps, rng):
    """Discrete OU recursion n <- n - theta n + sigma z, one scalar at a time."""
    x = 0.0
    out = []
    z = rng.standard_normal(steps)
    for k in range(steps):
        x = x - theta * x + sigma * z[k]
        out.append(x)
    return out
