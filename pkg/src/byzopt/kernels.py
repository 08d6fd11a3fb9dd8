"""Hot numeric kernels for trimming, root finding and the iterative rounds.

Every kernel is written as plain loops over flat arrays. With the default
backend the functions below are compiled with numba's ``@njit``; setting
``BYZOPT_BACKEND=numpy`` binds the identical un-jitted source instead, so the
two paths produce bit-identical results (the numpy path is 1-2 orders of
magnitude slower on the 1e5-round algorithms; see benchmarks/).

Gradient-sign classification everywhere uses SIGN_ZERO_TOL: values in
[-tol, +tol] count as zero, matching the sign-partition contract.
"""

from __future__ import annotations

import os

import numpy as np

BACKEND_ENV = "BYZOPT_BACKEND"

SIGN_ZERO_TOL = 1e-12

# gradient source codes for simulated rounds
SRC_FUNCTION = 0      # evaluate the packed function (honest / virtual)
SRC_SILENT = 1
SRC_CONSTANT = 2      # p0
SRC_FLIPFLOP = 3      # p0 = period, p1 = magnitude; sign flips by round block
SRC_MEDIAN_DRAG = 4   # p0 = target, p1 = magnitude; pressure toward target
SRC_DECREASING = 5    # p0 = slope, p1 = clip bound; g = clip(-slope*x)

# attempt status codes
STATUS_MAX_ROUNDS = 0
STATUS_RESIDUAL = 1
STATUS_DETECTION = 2

# detection reasons (0 = no broadcast received, 1..3 = admissibility rules)
RULE_NO_BROADCAST = 0
RULE_DECREASE_UP = 1
RULE_INCREASE_DOWN = 2
RULE_BOUND = 3

ROOT_OK = 0
ROOT_BRACKET_FAIL = 1

REC_BUFFER = 512  # pending record entries before a merge into the sorted part


def _pick_backend() -> str:
    choice = os.environ.get(BACKEND_ENV, "auto").strip().lower()
    if choice in ("", "auto"):
        try:
            import numba  # noqa: F401
            return "numba"
        except ImportError:
            return "numpy"
    if choice in ("numba", "jit"):
        import numba  # noqa: F401  (fail loudly if requested but missing)
        return "numba"
    if choice in ("numpy", "python", "nojit"):
        return "numpy"
    raise ValueError(f"unrecognised {BACKEND_ENV}={choice!r}")


BACKEND = _pick_backend()

if BACKEND == "numba":
    from numba import njit

    def _jit(fn):
        return njit(cache=True)(fn)
else:
    def _jit(fn):
        return fn


@_jit
def _grad_agent(kind, p0, p1, p2, bp_off, bp_x, bp_d, i, x):
    k = kind[i]
    if k == 0:  # quadratic
        return 2.0 * p1[i] * (x - p0[i])
    if k == 1:  # huber
        u = x - p0[i]
        if u > p2[i]:
            return p1[i]
        if u < -p2[i]:
            return -p1[i]
        return p1[i] * u / p2[i]
    # piecewise-linear derivative, constant outside the nodes
    lo = bp_off[i]
    hi = bp_off[i + 1]
    if x <= bp_x[lo]:
        return bp_d[lo]
    if x >= bp_x[hi - 1]:
        return bp_d[hi - 1]
    a = lo
    b = hi - 1
    while b - a > 1:
        m = (a + b) // 2
        if bp_x[m] <= x:
            a = m
        else:
            b = m
    return bp_d[a] + (bp_d[b] - bp_d[a]) * (x - bp_x[a]) / (bp_x[b] - bp_x[a])


@_jit
def grad_all(kind, p0, p1, p2, bp_off, bp_x, bp_d, x, out):
    for i in range(kind.size):
        out[i] = _grad_agent(kind, p0, p1, p2, bp_off, bp_x, bp_d, i, x)


@_jit
def trimmed_sums_sorted(ds, f):
    """(positive-side, negative-side) trimmed derivative sums.

    ``ds`` ascending. The positive side drops the min(f, #positive) largest
    values, the negative side the min(f, #negative) smallest.
    """
    n = ds.size
    npos = 0
    nneg = 0
    for i in range(n):
        if ds[i] > SIGN_ZERO_TOL:
            npos += 1
        elif ds[i] < -SIGN_ZERO_TOL:
            nneg += 1
    drop_hi = f if npos > f else npos
    drop_lo = f if nneg > f else nneg
    pos = 0.0
    neg = 0.0
    for i in range(n - drop_hi):
        if ds[i] > SIGN_ZERO_TOL:
            pos += ds[i]
    for i in range(drop_lo, n):
        if ds[i] < -SIGN_ZERO_TOL:
            neg += ds[i]
    return pos, neg


@_jit
def rank_sum_sorted(ds, f):
    """Sum of the middle n-2f order statistics (``ds`` ascending)."""
    s = 0.0
    for i in range(f, ds.size - f):
        s += ds[i]
    return s


@_jit
def aggregate_at(kind, p0, p1, p2, bp_off, bp_x, bp_d, x, f, mode, scratch):
    """Trimmed aggregate (mode 0) or middle-rank sum (mode 1) at x."""
    for i in range(kind.size):
        scratch[i] = _grad_agent(kind, p0, p1, p2, bp_off, bp_x, bp_d, i, x)
    ds = np.sort(scratch)
    if mode == 0:
        pos, neg = trimmed_sums_sorted(ds, f)
        return pos + neg
    return rank_sum_sorted(ds, f)


@_jit
def solve_root_kernel(kind, p0, p1, p2, bp_off, bp_x, bp_d, f, mode,
                      x1, x2, tol, scratch):
    """Deterministic bisection on [x1, x2].

    Stops once |aggregate| <= tol; if the interval collapses to float
    resolution first, returns the visited point with the smallest residual.
    Returns (root, residual, iterations, status).
    """
    a1 = aggregate_at(kind, p0, p1, p2, bp_off, bp_x, bp_d, x1, f, mode, scratch)
    if a1 == 0.0:
        return x1, 0.0, 0, ROOT_OK
    a2 = aggregate_at(kind, p0, p1, p2, bp_off, bp_x, bp_d, x2, f, mode, scratch)
    if a2 == 0.0:
        return x2, 0.0, 0, ROOT_OK
    if a1 > 0.0 or a2 < 0.0:
        return np.nan, np.nan, 0, ROOT_BRACKET_FAIL
    lo = x1
    hi = x2
    best_x = x1
    best_a = a1
    if abs(a2) < abs(a1):
        best_x = x2
        best_a = a2
    it = 0
    while it < 200:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        am = aggregate_at(kind, p0, p1, p2, bp_off, bp_x, bp_d, mid, f, mode, scratch)
        it += 1
        if abs(am) < abs(best_a):
            best_a = am
            best_x = mid
        if abs(am) <= tol:
            return mid, am, it, ROOT_OK
        if am < 0.0:
            lo = mid
        else:
            hi = mid
    return best_x, best_a, it, ROOT_OK


@_jit
def _strategy_gradient(kind, p0, p1, p2, bp_off, bp_x, bp_d,
                       src, sp0, sp1, i, x, t):
    s = src[i]
    if s == SRC_FUNCTION:
        return _grad_agent(kind, p0, p1, p2, bp_off, bp_x, bp_d, i, x)
    if s == SRC_CONSTANT:
        return sp0[i]
    if s == SRC_FLIPFLOP:
        period = int(sp0[i])
        if ((t - 1) // period) % 2 == 0:
            return sp1[i]
        return -sp1[i]
    if s == SRC_MEDIAN_DRAG:
        if x > sp0[i]:
            return sp1[i]
        if x < sp0[i]:
            return -sp1[i]
        return 0.0
    # SRC_DECREASING
    g = -sp0[i] * x
    if g > sp1[i]:
        g = sp1[i]
    elif g < -sp1[i]:
        g = -sp1[i]
    return g


@_jit
def _record_check(rxs, rgs, rlen, bxs, bgs, blen, x, g, bound):
    """Admissibility verdict for a received gradient against one peer record.

    0 ok; 1 some earlier x' <= x had a larger gradient; 2 some earlier
    x' >= x had a smaller one; 3 magnitude exceeds the declared bound.
    Comparisons are exact. The sorted part (rxs, rgs) holds mutually
    consistent entries, so its gradients are non-decreasing along x and the
    extremal witnesses sit next to the insertion point; the unsorted pending
    window is scanned in full.
    """
    if rlen > 0:
        idx = np.searchsorted(rxs[:rlen], x, side="right")
        if idx > 0 and rgs[idx - 1] > g:
            return 1
    if blen > 0 and np.any((bxs[:blen] <= x) & (bgs[:blen] > g)):
        return 1
    if rlen > 0:
        idx = np.searchsorted(rxs[:rlen], x, side="left")
        if idx < rlen and rgs[idx] < g:
            return 2
    if blen > 0 and np.any((bxs[:blen] >= x) & (bgs[:blen] < g)):
        return 2
    if abs(g) > bound:
        return 3
    return 0


@_jit
def _record_merge(rxs, rgs, rlen, bxs, bgs, blen):
    # stable sort keeps older entries first among equal estimates (which
    # carry equal gradients anyway, by mutual consistency)
    cx = np.concatenate((rxs[:rlen], bxs[:blen]))
    cg = np.concatenate((rgs[:rlen], bgs[:blen]))
    order = np.argsort(cx, kind="mergesort")
    total = rlen + blen
    rxs[:total] = cx[order]
    rgs[:total] = cg[order]
    return total


@_jit
def alg3_attempt(kind, p0, p1, p2, bp_off, bp_x, bp_d,
                 src, sp0, sp1,
                 f, x0, lam_scale, lam_power, bound,
                 max_rounds, tol, stride, symmetric,
                 rec_xs, rec_gs, rec_len, buf_xs, buf_gs, buf_len,
                 grads,
                 trace_t, trace_x, trace_agg):
    """One isolation-free attempt of the record-checked gradient method.

    Each round: receive one gradient per agent (lowest-id misbehaviour is
    detected and ends the attempt), append to the per-peer records, trim the
    extremes, step x against the trimmed sum. ``symmetric`` selects the trim
    rule: 0 drops up-to-f per sign (all, if fewer carry that sign); 1 always
    drops the f largest and f smallest regardless of sign.

    Returns (status, rounds, x, aggregate, detected_agent, detected_rule,
    n_trace, min_x, max_x).
    """
    n = kind.size
    x = x0
    min_x = x
    max_x = x
    ntr = 0
    agg = 0.0
    rounds = 0
    for t in range(1, max_rounds + 1):
        lam = lam_scale / t ** lam_power
        det_agent = -1
        det_rule = -1
        for i in range(n):
            if src[i] == SRC_SILENT:
                det_agent = i
                det_rule = RULE_NO_BROADCAST
                break
            g = _strategy_gradient(kind, p0, p1, p2, bp_off, bp_x, bp_d,
                                   src, sp0, sp1, i, x, t)
            rule = _record_check(rec_xs[i], rec_gs[i], rec_len[i],
                                 buf_xs[i], buf_gs[i], buf_len[i],
                                 x, g, bound)
            if rule != 0:
                det_agent = i
                det_rule = rule
                break
            grads[i] = g
        if det_agent >= 0:
            return (STATUS_DETECTION, t, x, agg, det_agent, det_rule,
                    ntr, min_x, max_x)
        for i in range(n):
            k = buf_len[i]
            buf_xs[i, k] = x
            buf_gs[i, k] = grads[i]
            buf_len[i] = k + 1
            if buf_len[i] == REC_BUFFER:
                rec_len[i] = _record_merge(rec_xs[i], rec_gs[i], rec_len[i],
                                           buf_xs[i], buf_gs[i], REC_BUFFER)
                buf_len[i] = 0
        ds = np.sort(grads)
        if symmetric == 1:
            drop_hi = f
            drop_lo = f
        else:
            npos = 0
            nneg = 0
            for i in range(n):
                if ds[i] > SIGN_ZERO_TOL:
                    npos += 1
                elif ds[i] < -SIGN_ZERO_TOL:
                    nneg += 1
            drop_hi = f if npos > f else npos
            drop_lo = f if nneg > f else nneg
        agg = 0.0
        for i in range(drop_lo, n - drop_hi):
            agg += ds[i]
        if tol > 0.0 and abs(agg) <= tol:
            return (STATUS_RESIDUAL, t - 1, x, agg, -1, -1, ntr, min_x, max_x)
        x = x - lam * agg
        if x < min_x:
            min_x = x
        if x > max_x:
            max_x = x
        if t == 1 or t % stride == 0 or t == max_rounds:
            trace_t[ntr] = t
            trace_x[ntr] = x
            trace_agg[ntr] = agg
            ntr += 1
        rounds = t
    return (STATUS_MAX_ROUNDS, rounds, x, agg, -1, -1, ntr, min_x, max_x)


@_jit
def alg45_attempt(kind, p0, p1, p2, bp_off, bp_x, bp_d,
                  src, sp0, sp1, nonfaulty,
                  f, x0, lam_scale, lam_power,
                  max_rounds, tol, stride, mode,
                  grads, trace_t, trace_x, trace_agg):
    """One attempt of the trimmed-mean (mode 0) / midpoint (mode 1) method.

    Only silence is detectable here. Tracks the worst excursion of the
    aggregate outside the non-faulty gradient range (``margin``; <= 0 means
    the aggregate always stayed inside).

    Returns (status, rounds, x, aggregate, detected_agent, n_trace,
    min_x, max_x, margin).
    """
    n = kind.size
    x = x0
    min_x = x
    max_x = x
    ntr = 0
    agg = 0.0
    margin = -np.inf
    rounds = 0
    for t in range(1, max_rounds + 1):
        lam = lam_scale / t ** lam_power
        det_agent = -1
        for i in range(n):
            if src[i] == SRC_SILENT:
                det_agent = i
                break
            grads[i] = _strategy_gradient(kind, p0, p1, p2, bp_off, bp_x, bp_d,
                                          src, sp0, sp1, i, x, t)
        if det_agent >= 0:
            return (STATUS_DETECTION, t, x, agg, det_agent, ntr,
                    min_x, max_x, margin)
        ds = np.sort(grads)
        if mode == 0:
            s = 0.0
            for i in range(f, n - f):
                s += ds[i]
            agg = s / (n - 2 * f)
        else:
            agg = 0.5 * (ds[f] + ds[n - f - 1])
        hmin = np.inf
        hmax = -np.inf
        for i in range(n):
            if nonfaulty[i]:
                if grads[i] < hmin:
                    hmin = grads[i]
                if grads[i] > hmax:
                    hmax = grads[i]
        if agg - hmax > margin:
            margin = agg - hmax
        if hmin - agg > margin:
            margin = hmin - agg
        if tol > 0.0 and abs(agg) <= tol:
            return (STATUS_RESIDUAL, t - 1, x, agg, -1, ntr,
                    min_x, max_x, margin)
        x = x - lam * agg
        if x < min_x:
            min_x = x
        if x > max_x:
            max_x = x
        if t == 1 or t % stride == 0 or t == max_rounds:
            trace_t[ntr] = t
            trace_x[ntr] = x
            trace_agg[ntr] = agg
            ntr += 1
        rounds = t
    return (STATUS_MAX_ROUNDS, rounds, x, agg, -1, ntr, min_x, max_x, margin)
