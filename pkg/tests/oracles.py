"""Independent oracles the implementation is checked against.

Everything here recomputes expected values from first principles (subset
enumeration, quadrature, finite differences, LP feasibility, a plain-Python
round replay) and deliberately avoids the package's own aggregation and
kernel code paths.
"""

import itertools
import math

import numpy as np
from scipy import integrate, optimize

ZTOL = 1e-12


def brute_force_trimmed_sums(derivs, f):
    """Exact (positive-side min, negative-side max) over all subsets <= f.

    Kept values are summed left-to-right in ascending order, the same
    accumulation the implementation uses, so agreement can be exact.
    """
    ds = sorted(derivs)
    pos = [d for d in ds if d > ZTOL]
    neg = [d for d in ds if d < -ZTOL]

    def side(values, better):
        if not values:
            return 0.0
        best = None
        for k in range(min(f, len(values)) + 1):
            for removed in itertools.combinations(range(len(values)), k):
                rm = set(removed)
                s = 0.0
                for j, v in enumerate(values):
                    if j not in rm:
                        s += v
                if best is None or better(s, best):
                    best = s
        return best

    return side(pos, lambda a, b: a < b), side(neg, lambda a, b: a > b)


def brute_force_rank_sum(derivs, f):
    ds = sorted(derivs)
    s = 0.0
    for v in ds[f:len(ds) - f]:
        s += v
    return s


def quadrature_value(fn, x, anchor=None):
    """Function value recovered by integrating the derivative numerically."""
    if anchor is None:
        anchor = fn.argmin_interval()[0]
    val, _ = integrate.quad(fn.grad, anchor, x, limit=200)
    return val + fn.value(anchor)


def central_difference(fn, x, h=1e-6):
    return (fn.value(x + h) - fn.value(x - h)) / (2.0 * h)


def lp_weight_feasible(derivs, beta, gamma, tol=0.0):
    """LP feasibility over every gamma-subset (scipy.linprog oracle)."""
    ids = [a for a, _ in derivs]
    ds = np.array([v for _, v in derivs])
    m = len(ids)
    if gamma > m:
        return False
    for subset in itertools.combinations(range(m), gamma):
        lb = np.zeros(m)
        lb[list(subset)] = beta
        res = optimize.linprog(
            c=np.zeros(m),
            A_ub=np.vstack([ds, -ds]),
            b_ub=np.array([tol, tol]),
            A_eq=np.ones((1, m)),
            b_eq=np.array([1.0]),
            bounds=list(zip(lb, [None] * m)),
            method="highs",
        )
        if res.status == 0:
            return True
    return False


def adversary_gradient(strategy, fn, x, t):
    """Re-interpretation of the catalogue, independent of the kernels."""
    kind = strategy.kind
    p = strategy.params
    if kind == "honest":
        return fn.grad(x)
    if kind == "virtual_function":
        return p["function"].grad(x)
    if kind == "silent":
        return None
    if kind == "constant_gradient":
        return p["g"]
    if kind == "extreme_gradient":
        return p["sign"] * p["magnitude"]
    if kind == "flip_flop":
        return p["magnitude"] if ((t - 1) // p["period"]) % 2 == 0 \
            else -p["magnitude"]
    if kind == "median_drag":
        if x > p["target"]:
            return p["magnitude"]
        if x < p["target"]:
            return -p["magnitude"]
        return 0.0
    if kind == "inadmissible_function":
        return float(np.clip(-p["slope"] * x, -p["bound"], p["bound"]))
    raise AssertionError(kind)


def replay_iterative(scn, max_rounds, alg=None):
    """Plain-Python replay of one attempt of the iterative algorithms.

    Uses the public record checker for admissibility and recomputes the
    trimming arithmetic directly. Returns a dict with the trajectory, the
    per-round aggregates, and the first detection (agent, round, rule).
    """
    from byzopt.algorithms import GradientRecord, check_gradient_admissible
    from byzopt.simnet import consensus_input, trimmed_mean

    alg = alg or scn.algorithm
    n, f = scn.n, scn.f
    agents = list(range(1, n + 1))
    inputs = {}
    for a in agents:
        v = consensus_input(scn.strategy(a), scn.functions[a],
                            scn.default_value)
        inputs[a] = scn.default_value if v is None else v
    x = trimmed_mean(inputs.values(), f)
    lip = scn.lipschitz
    if lip is None:
        lip = max(scn.functions[a].lipschitz_bound for a in agents
                  if a not in scn.faulty)
    record = GradientRecord(lipschitz=lip)
    xs = [x]
    aggs = []
    detection = None
    for t in range(1, max_rounds + 1):
        grads = {}
        for a in agents:
            g = adversary_gradient(scn.strategy(a), scn.functions[a], x, t)
            if g is None:
                detection = (a, t, "no_broadcast")
                break
            if alg == "alg3":
                verdict = check_gradient_admissible(record, a, t, x, g)
                if not verdict.ok:
                    detection = (a, t, f"rule{verdict.rule}")
                    break
            grads[a] = g
        if detection is not None:
            break
        if alg == "alg3":
            for a in agents:
                record.append(a, t, x, grads[a])
        ds = sorted(grads.values())
        if alg == "alg3" and not scn.symmetric_trim:
            npos = sum(1 for v in ds if v > ZTOL)
            nneg = sum(1 for v in ds if v < -ZTOL)
            kept = ds[min(f, nneg):len(ds) - min(f, npos)]
        else:
            kept = ds[f:len(ds) - f]
        # left-to-right sums so the replay matches the kernels bit-for-bit
        agg = 0.0
        for v in kept:
            agg += v
        if alg == "alg4":
            agg = agg / len(kept)
        elif alg == "alg5":
            agg = 0.5 * (kept[0] + kept[-1])
        aggs.append(agg)
        lam = scn.stepsizes.scale / t ** scn.stepsizes.power
        x = x - lam * agg
        xs.append(x)
    return {"xs": xs, "aggs": aggs, "detection": detection}


def first_violation_round(scn, max_rounds=50):
    """Round at which the first admissibility violation becomes provable.

    Replays the honest trajectory while feeding every received gradient into
    the reference checker without isolating anyone, and reports the earliest
    round where any check fires.
    """
    from byzopt.algorithms import GradientRecord, check_gradient_admissible
    from byzopt.simnet import consensus_input, trimmed_mean

    n, f = scn.n, scn.f
    agents = list(range(1, n + 1))
    inputs = {}
    for a in agents:
        v = consensus_input(scn.strategy(a), scn.functions[a],
                            scn.default_value)
        inputs[a] = scn.default_value if v is None else v
    x = trimmed_mean(inputs.values(), f)
    lip = scn.lipschitz or max(scn.functions[a].lipschitz_bound
                               for a in agents if a not in scn.faulty)
    record = GradientRecord(lipschitz=lip)
    for t in range(1, max_rounds + 1):
        grads = {}
        for a in agents:
            g = adversary_gradient(scn.strategy(a), scn.functions[a], x, t)
            if g is None:
                return t
            verdict = check_gradient_admissible(record, a, t, x, g)
            if not verdict.ok:
                return t
            grads[a] = g
        for a in agents:
            record.append(a, t, x, grads[a])
        ds = sorted(grads.values())
        npos = sum(1 for v in ds if v > ZTOL)
        nneg = sum(1 for v in ds if v < -ZTOL)
        kept = ds[min(f, nneg):len(ds) - min(f, npos)]
        agg = 0.0
        for v in kept:
            agg += v
        x = x - scn.stepsizes.scale / t ** scn.stepsizes.power * agg
    return None
