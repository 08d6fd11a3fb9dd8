"""Convex-combination weight certificates and their independent verification.

A certificate for output x~ on an ensemble with non-faulty set N is a weight
vector alpha over N with alpha >= 0, sum(alpha) = 1, stationarity
sum(alpha_i * h_i'(x~)) ~= 0, and at least gamma weights at least beta. Two
constructions are implemented from the zero of the trimmed aggregate:

* ``paired_trim``: beta = 1/(2(|N|-f)), gamma = |N|-f. Splits the derivative
  multiset at x~ into the f largest, the f smallest and the middle band,
  re-introduces equal-sized non-faulty sets from both extremes and solves a
  single interpolation coefficient so the faulty middle contribution is
  reproduced by the extremes.
* ``scaled_trim``: beta = 1/n, gamma = |N|-f. Same partition, but the middle
  band is rescaled by the dominant interpolation side before normalising.

``y_membership`` is the independent feasibility oracle: it decides directly
from the derivative multiset whether any qualifying weight vector exists,
by interval tests over all gamma-subsets (enumerated exactly up to 15
non-faulty agents, swept over sorted windows beyond).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Optional

from .convexlib import Quadratic
from .kernels import SIGN_ZERO_TOL
from .trimagg import FunctionEnsemble

SUM_TOL = 1e-9
STATIONARITY_TOL = 1e-8
WEIGHT_SLACK = 1e-12
ROOT_PRECONDITION_TOL = 1e-8
ENUMERATION_LIMIT = 15

CONSTRUCTION_PAIRED = "paired_trim"
CONSTRUCTION_SCALED = "scaled_trim"
CONSTRUCTION_ORACLE = "oracle"
CONSTRUCTION_MANUAL = "manual"


class RootPreconditionError(ValueError):
    """The supplied point is not a zero of the trimmed aggregate."""


class CertificateConstructionError(RuntimeError):
    """Interpolation left [0, 1]; unreachable for a genuine aggregate zero."""


class InfeasibleSpecError(ValueError):
    """gamma * beta > 1: no weight vector can meet the requirement at all."""


class DegenerateWeightsError(ValueError):
    """The weighted quadratic has zero total curvature."""


@dataclass(frozen=True)
class WeightSpec:
    """(beta, gamma) pair a weight vector must meet."""

    beta: float
    gamma: int
    label: str = ""

    @staticmethod
    def from_total(n: int, f: int) -> "WeightSpec":
        """Spec achieved by the trimmed-mean method: beta=1/(2(n-f)), gamma=n-2f."""
        return WeightSpec(1.0 / (2.0 * (n - f)), n - 2 * f, "total")

    @staticmethod
    def from_nonfaulty(n_nonfaulty: int, f: int) -> "WeightSpec":
        """Spec tied to the non-faulty count: beta=1/(2(|N|-f)), gamma=|N|-f."""
        return WeightSpec(1.0 / (2.0 * (n_nonfaulty - f)), n_nonfaulty - f,
                          "nonfaulty")


@dataclass(frozen=True)
class WeightCertificate:
    weights: dict[int, float]   # non-faulty agent id -> weight
    at_x: float
    beta: float
    gamma: int
    construction: str

    def to_dict(self) -> dict:
        return {
            "weights": {str(a): float(v) for a, v in sorted(self.weights.items())},
            "at_x": float(self.at_x),
            "beta": float(self.beta),
            "gamma": int(self.gamma),
            "construction": self.construction,
        }

    @staticmethod
    def from_dict(d: dict) -> "WeightCertificate":
        return WeightCertificate(
            weights={int(a): float(v) for a, v in d["weights"].items()},
            at_x=float(d["at_x"]),
            beta=float(d["beta"]),
            gamma=int(d["gamma"]),
            construction=d["construction"],
        )


def _trim_partition(ens: FunctionEnsemble, x: float, rule: str):
    """Index partition (f largest | middle | f smallest) of derivatives at x.

    rule "signed" pins the trimmed positive/negative subsets to the extreme
    blocks when ties occur (so the middle-band sum equals the trimmed
    aggregate); rule "rank" breaks ties purely by agent id.
    """
    d = ens.gradients_at(x)
    n, f = ens.n, ens.f
    if rule == "signed":
        pos = [i for i in range(n) if d[i] > SIGN_ZERO_TOL]
        neg = [i for i in range(n) if d[i] < -SIGN_ZERO_TOL]
        top = set(sorted(pos, key=lambda i: (-d[i], i))[:min(f, len(pos))])
        bot = set(sorted(neg, key=lambda i: (d[i], i))[:min(f, len(neg))])
        prio = [0 if i in top else (2 if i in bot else 1) for i in range(n)]
    elif rule == "rank":
        prio = [1] * n
    else:
        raise ValueError(f"unknown trim rule {rule!r}")
    order = sorted(range(n), key=lambda i: (-d[i], prio[i], i))
    return d, order[:f], order[f:n - f], order[n - f:]


def extract_weights(ens: FunctionEnsemble, faulty: Iterable[int], x_root: float,
                    bound: str = "half", rule: str = "signed") -> WeightCertificate:
    """Build a weight certificate at a zero of the trimmed aggregate.

    ``bound`` selects the guarantee: "half" gives beta = 1/(2(|N|-f)),
    "inverse_n" gives beta = 1/n; both certify gamma = |N|-f weights at the
    threshold. ``rule`` must match how x_root was found: "signed" for the
    trimmed-aggregate zero, "rank" for the middle-rank-sum zero.

    Raises RootPreconditionError when x_root is not actually a zero, and
    CertificateConstructionError when the interpolation coefficient leaves
    [0, 1] (impossible for a genuine zero).
    """
    faulty = frozenset(int(a) for a in faulty)
    if not faulty <= set(ens.agents):
        raise ValueError(f"faulty ids {sorted(faulty)} outside 1..{ens.n}")
    phi = len(faulty)
    if phi > ens.f:
        raise ValueError(f"|faulty|={phi} exceeds fault budget f={ens.f}")
    n, f = ens.n, ens.f
    n_nonfaulty = n - phi

    d, top, middle, bottom = _trim_partition(ens, float(x_root), rule)
    fidx = {a - 1 for a in faulty}
    resid = math.fsum(d[i] for i in middle)
    if abs(resid) > ROOT_PRECONDITION_TOL:
        raise RootPreconditionError(
            f"middle-band derivative sum {resid:.3e} at x={x_root}; "
            "not a zero of the aggregate"
        )

    mid_free = sorted(set(middle) - fidx)
    mid_faulty = sorted(set(middle) & fidx)
    m = f - phi + len(mid_faulty)
    cand1 = sorted(set(top) - fidx)
    cand2 = sorted(set(bottom) - fidx)
    if len(cand1) < m or len(cand2) < m:
        raise CertificateConstructionError(
            "not enough non-faulty extreme agents to re-introduce"
        )
    ext1 = cand1[:m]
    ext2 = cand2[:m]
    s1 = math.fsum(d[i] for i in ext1)
    s2 = math.fsum(d[i] for i in ext2)
    t_mid = math.fsum(d[i] for i in mid_faulty)

    def clamp01(z: float, what: str) -> float:
        if z < -1e-9 or z > 1.0 + 1e-9:
            raise CertificateConstructionError(
                f"{what}={z!r} outside [0, 1]; extreme-sum bracketing violated"
            )
        return min(1.0, max(0.0, z))

    if bound == "half":
        zeta = 0.5 if s1 == s2 else clamp01((t_mid - s2) / (s1 - s2), "zeta")
        denom = float(n_nonfaulty - f)
        w_mid, w1, w2 = 1.0 / denom, zeta / denom, (1.0 - zeta) / denom
        beta = 1.0 / (2.0 * (n_nonfaulty - f))
        construction = CONSTRUCTION_PAIRED
    elif bound == "inverse_n":
        zeta = 0.5 if s1 == s2 else clamp01(s2 / (s2 - s1), "zeta")
        major = zeta if zeta >= 0.5 else 1.0 - zeta
        if t_mid > 0.0 and s1 > 0.0:
            z1 = clamp01(t_mid / s1, "zeta1")
            w_mid = major
            w1 = major * z1 + zeta
            w2 = 1.0 - zeta
        elif t_mid < 0.0 and s2 < 0.0:
            z2 = clamp01(t_mid / s2, "zeta2")
            w_mid = major
            w1 = zeta
            w2 = major * z2 + (1.0 - zeta)
        else:
            if abs(t_mid) > 1e-9:
                raise CertificateConstructionError(
                    f"middle faulty sum {t_mid!r} has no matching extreme sum"
                )
            w_mid, w1, w2 = major, zeta, 1.0 - zeta
        chi = w_mid * len(mid_free) + w1 * len(ext1) + w2 * len(ext2)
        w_mid, w1, w2 = w_mid / chi, w1 / chi, w2 / chi
        beta = 1.0 / n
        construction = CONSTRUCTION_SCALED
    else:
        raise ValueError(f"unknown bound {bound!r}")

    weights: dict[int, float] = {}
    for i in mid_free:
        weights[i + 1] = w_mid
    for i in ext1:
        weights[i + 1] = w1
    for i in ext2:
        weights[i + 1] = w2
    return WeightCertificate(
        weights=weights, at_x=float(x_root), beta=beta,
        gamma=n_nonfaulty - f, construction=construction,
    )


@dataclass
class CertificateCheck:
    ok: bool
    checks: list[dict]
    threshold_count: int        # weights >= beta - slack (verdict basis)
    strict_threshold_count: int  # weights strictly > beta (informational)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": self.checks,
            "threshold_count": self.threshold_count,
            "strict_threshold_count": self.strict_threshold_count,
            "threshold_semantics": "weight >= beta - 1e-12",
        }


def verify_certificate(cert: WeightCertificate, ens: FunctionEnsemble,
                       faulty: Iterable[int]) -> CertificateCheck:
    """Independently re-check every certificate invariant, with residuals.

    The threshold count uses weight >= beta - 1e-12; the strict > beta count
    is reported alongside since the problem statement uses the strict form.
    """
    faulty = frozenset(int(a) for a in faulty)
    w = cert.weights
    checks = []

    def add(name, ok, measured):
        checks.append({"name": name, "ok": bool(ok), "measured": measured})

    neg = min(w.values(), default=0.0)
    add("weights_nonnegative", neg >= 0.0, float(neg))

    bad_support = sorted(a for a in w
                         if a in faulty or not 1 <= a <= ens.n)
    add("weights_on_nonfaulty", not bad_support, bad_support)

    total = math.fsum(w.values())
    add("total_weight", abs(total - 1.0) <= SUM_TOL, float(total))

    stat = math.fsum(v * ens.functions[a - 1].grad(cert.at_x)
                     for a, v in sorted(w.items()))
    add("stationarity", abs(stat) <= STATIONARITY_TOL, float(stat))

    count = sum(1 for v in w.values() if v >= cert.beta - WEIGHT_SLACK)
    strict = sum(1 for v in w.values() if v > cert.beta)
    add("threshold_count", count >= cert.gamma, int(count))

    return CertificateCheck(
        ok=all(c["ok"] for c in checks),
        checks=checks,
        threshold_count=count,
        strict_threshold_count=strict,
    )


@dataclass(frozen=True)
class YMembership:
    feasible: bool
    witness: Optional[dict[int, float]]


def _normalize_derivs(derivs) -> list[tuple[int, float]]:
    if isinstance(derivs, Mapping):
        items = [(int(a), float(v)) for a, v in derivs.items()]
    else:
        items = [(int(a), float(v)) for a, v in derivs]
    items.sort()
    return items


def y_membership(derivs, spec: WeightSpec,
                 stationarity_tol: float = 0.0) -> YMembership:
    """Decide whether qualifying weights exist for the given derivatives.

    ``derivs`` lists (agent id, derivative at the candidate point) for
    exactly the non-faulty agents. Weights alpha >= 0 with sum 1 must place
    at least gamma entries at >= beta and achieve |sum(alpha*d)| <=
    stationarity_tol. For each gamma-subset S the reachable stationarity
    values form the interval beta*sum_S(d) + (1-gamma*beta)*[min d, max d],
    so feasibility is an interval intersection test; the witness parks the
    free mass on the extreme agents.
    """
    items = _normalize_derivs(derivs)
    m = len(items)
    beta = float(spec.beta)
    gamma = max(0, int(spec.gamma))
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    if beta * gamma > 1.0 + 1e-12:
        raise InfeasibleSpecError(
            f"gamma*beta = {gamma * beta} > 1: no weight vector can comply"
        )
    if gamma > m:
        return YMembership(False, None)
    if m == 0:
        return YMembership(False, None)

    ids = [a for a, _ in items]
    ds = [v for _, v in items]
    rest = max(0.0, 1.0 - gamma * beta)
    dmin = min(ds)
    dmax = max(ds)
    lo_id = ids[min(range(m), key=lambda i: (ds[i], ids[i]))]
    hi_id = ids[max(range(m), key=lambda i: (ds[i], -ids[i]))]
    tol = float(stationarity_tol)

    if m <= ENUMERATION_LIMIT:
        subsets = combinations(range(m), gamma)
    else:
        order = sorted(range(m), key=lambda i: ds[i])
        subsets = (tuple(order[k:k + gamma]) for k in range(m - gamma + 1))

    for subset in subsets:
        base = beta * math.fsum(ds[i] for i in subset)
        lo = base + rest * dmin
        hi = base + rest * dmax
        if lo > tol or hi < -tol:
            continue
        target = min(max(0.0, lo), hi)
        weights = {ids[i]: beta for i in subset}
        if rest > 0.0:
            if dmax == dmin:
                t = 0.0
            else:
                t = (target - base - rest * dmin) / (rest * (dmax - dmin))
                t = min(1.0, max(0.0, t))
            weights[lo_id] = weights.get(lo_id, 0.0) + (1.0 - t) * rest
            weights[hi_id] = weights.get(hi_id, 0.0) + t * rest
        return YMembership(True, weights)
    return YMembership(False, None)


def y_distance(ens: FunctionEnsemble, faulty: Iterable[int], spec: WeightSpec,
               x: float, stationarity_tol: float = 0.0,
               initial_step: float = 1e-6, max_radius: float = 64.0) -> float:
    """Distance proxy from x to the feasible set, by doubling outward scan.

    Returns 0.0 when x itself is feasible, the first feasible offset
    otherwise, and +inf when nothing within max_radius qualifies.
    """
    faulty = frozenset(int(a) for a in faulty)
    nonfaulty = [a for a in ens.agents if a not in faulty]

    def feasible(at: float) -> bool:
        derivs = [(a, ens.functions[a - 1].grad(at)) for a in nonfaulty]
        return y_membership(derivs, spec, stationarity_tol).feasible

    if feasible(x):
        return 0.0
    r = float(initial_step)
    while r <= max_radius:
        if feasible(x - r) or feasible(x + r):
            return r
        r *= 2.0
    return math.inf


def quadratic_weighted_optimum(weights: Mapping[int, float],
                               quads: Mapping[int, Quadratic]) -> float:
    """Closed-form minimizer of a weighted sum of quadratics.

    sum(alpha*s*a) / sum(alpha*s); raises DegenerateWeightsError when the
    weighted curvature vanishes.
    """
    num = 0.0
    den = 0.0
    for a, alpha in sorted(weights.items()):
        q = quads[a]
        if not isinstance(q, Quadratic):
            raise TypeError(f"agent {a}: expected Quadratic, got {type(q)!r}")
        num += alpha * q.s * q.a
        den += alpha * q.s
    if den == 0.0:
        raise DegenerateWeightsError("weighted curvature is zero")
    return num / den


def impossibility_scenarios(n: int = 4, f: int = 1, phi: int = 1) -> list:
    """Scenario pairs demonstrating the two inherent limits.

    The first pair gives two executions that non-faulty agents cannot tell
    apart although the exact-average problem forces incompatible outputs
    (their minimizer hulls intersect in the single point 0, where neither
    execution's true derivative sum vanishes). The second pair forces the
    common output to f+1 while every qualifying weight vector must zero out
    agents 1..f, capping the achievable gamma at |N|-f.
    """
    from .simnet import AdversaryStrategy, Scenario, StepSchedule

    if n <= 3 * f:
        raise ValueError(f"need n > 3f, got n={n}, f={f}")
    if f <= 0:
        raise ValueError("constructions need f >= 1")
    if not 0 < phi <= f:
        raise ValueError(f"need 0 < phi <= f, got phi={phi}")

    honest = AdversaryStrategy("honest")

    def scenario(name, functions, faulty, metadata):
        return Scenario(
            name=name, n=n, f=f,
            functions={i + 1: fn for i, fn in enumerate(functions)},
            faulty=frozenset(faulty),
            adversary={a: honest for a in faulty},
            algorithm="alg1",
            stepsizes=StepSchedule(),
            max_rounds=1,
            seed=0,
            metadata=metadata,
        )

    # agents 2..n-1 carry x^2 + i: common minimizer 0, value-shifted
    mid = [Quadratic(0.0, 1.0, float(i)) for i in range(2, n)]
    funcs1 = [Quadratic(-1.0)] + mid + [Quadratic(1.0)]
    scenarios = [
        scenario("identical-view-a", funcs1, {n},
                 {"expected_hull": [-1.0, 0.0], "intersection": 0.0}),
        scenario("identical-view-b", funcs1, {1},
                 {"expected_hull": [0.0, 1.0], "intersection": 0.0}),
    ]

    a = float(f + 1)
    funcs2 = []
    for i in range(1, n + 1):
        if i <= f or i >= n - phi + 1:
            funcs2.append(Quadratic(float(i)))
        else:
            funcs2.append(Quadratic(a))
    scenarios.append(
        scenario("weight-cap-a", funcs2, set(range(n - phi + 1, n + 1)),
                 {"forced_output": a, "zero_weight_agents": list(range(1, f + 1)),
                  "expected_hull": [1.0, a]})
    )
    scenarios.append(
        scenario("weight-cap-b", funcs2, set(range(1, f + 1)),
                 {"forced_output": a, "expected_hull": [a, float(n)]})
    )
    return scenarios
