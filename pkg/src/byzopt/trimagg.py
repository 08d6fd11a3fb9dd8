"""Trimmed-gradient calculus over an ensemble of cost functions.

Given n admissible functions and a fault budget f (with n > 3f), this module
computes the sign partition of the derivative multiset at a point, the
fault-trimmed positive/negative derivative sums and their total, the ranked
derivative statistics, a bracket on which the trimmed aggregate changes sign,
and the deterministic bisection root. All of these are non-decreasing,
continuous functions of x, which is what makes bisection sound.

Tie-breaking is deterministic everywhere: the lowest agent id is trimmed
first. Sign classification treats |derivative| <= SIGN_ZERO_TOL as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .convexlib import (
    AdmissibleFunction,
    PackedFunctions,
    check_admissible,
    pack_functions,
)
from .kernels import SIGN_ZERO_TOL

DEFAULT_ROOT_TOL = 1e-10

MODE_TRIMMED = "trimmed"
MODE_RANK = "rank"
_MODE_CODE = {MODE_TRIMMED: 0, MODE_RANK: 1}


class EnsembleError(ValueError):
    """The ensemble violates a construction invariant (e.g. n <= 3f)."""


class BracketError(RuntimeError):
    """The sign bracket failed; unreachable for admissible ensembles."""


@dataclass
class FunctionEnsemble:
    """n admissible functions (agent id = index + 1) plus fault budget f."""

    functions: tuple[AdmissibleFunction, ...]
    f: int

    def __post_init__(self):
        self.functions = tuple(self.functions)
        n = len(self.functions)
        if self.f < 0:
            raise EnsembleError(f"fault budget must be non-negative, got {self.f}")
        if n <= 3 * self.f:
            raise EnsembleError(f"need n > 3f, got n={n}, f={self.f}")
        for idx, fn in enumerate(self.functions):
            report = check_admissible(fn)
            if not report.ok:
                raise EnsembleError(
                    f"function of agent {idx + 1} is not admissible: "
                    f"{report.violations}"
                )
        self._pack: Optional[PackedFunctions] = None

    @property
    def n(self) -> int:
        return len(self.functions)

    @property
    def agents(self) -> range:
        return range(1, self.n + 1)

    @property
    def pack(self) -> PackedFunctions:
        if self._pack is None:
            self._pack = pack_functions(self.functions)
        return self._pack

    def gradients_at(self, x: float) -> np.ndarray:
        p = self.pack
        out = np.empty(self.n)
        kernels.grad_all(p.kind, p.p0, p.p1, p.p2, p.bp_off, p.bp_x, p.bp_d,
                         float(x), out)
        return out

    def argmin_hull(self, agents: Optional[Iterable[int]] = None) -> tuple[float, float]:
        """Convex hull of the minimizer sets of the given agents (default all)."""
        p = self.pack
        idx = (np.asarray(sorted(agents), dtype=np.int64) - 1
               if agents is not None else np.arange(self.n))
        return float(np.min(p.xmin[idx])), float(np.max(p.xmax[idx]))


@dataclass(frozen=True)
class SignPartition:
    """Agent ids split by derivative sign at ``at_x`` (zero within tolerance)."""

    positive: frozenset[int]
    negative: frozenset[int]
    zero: frozenset[int]
    at_x: float


def sign_partition(ens: FunctionEnsemble, x: float) -> SignPartition:
    d = ens.gradients_at(x)
    pos = frozenset(i + 1 for i in range(ens.n) if d[i] > SIGN_ZERO_TOL)
    neg = frozenset(i + 1 for i in range(ens.n) if d[i] < -SIGN_ZERO_TOL)
    zero = frozenset(ens.agents) - pos - neg
    return SignPartition(positive=pos, negative=neg, zero=zero, at_x=float(x))


def _sorted_gradients(ens: FunctionEnsemble, x: float) -> np.ndarray:
    return np.sort(ens.gradients_at(x))


def trimmed_positive_gradient_sum(ens: FunctionEnsemble, x: float) -> float:
    """Smallest possible sum of positive derivatives after removing <= f of them."""
    pos, _ = kernels.trimmed_sums_sorted(_sorted_gradients(ens, x), ens.f)
    return float(pos)


def trimmed_negative_gradient_sum(ens: FunctionEnsemble, x: float) -> float:
    """Largest possible sum of negative derivatives after removing <= f of them."""
    _, neg = kernels.trimmed_sums_sorted(_sorted_gradients(ens, x), ens.f)
    return float(neg)


def trimmed_gradient_aggregate(ens: FunctionEnsemble, x: float) -> float:
    """Sum of the two trimmed sides; non-decreasing and continuous in x."""
    pos, neg = kernels.trimmed_sums_sorted(_sorted_gradients(ens, x), ens.f)
    return float(pos + neg)


def rank_gradient(ens: FunctionEnsemble, x: float, k: int) -> float:
    """k-th largest derivative at x (ties included), 1 <= k <= n."""
    if not 1 <= k <= ens.n:
        raise ValueError(f"rank must be in 1..{ens.n}, got {k}")
    ds = _sorted_gradients(ens, x)
    return float(ds[ens.n - k])


def rank_gradient_sum(ens: FunctionEnsemble, x: float) -> float:
    """Sum of the (f+1)-th through (n-f)-th largest derivatives at x."""
    return float(kernels.rank_sum_sorted(_sorted_gradients(ens, x), ens.f))


def root_bracket(ens: FunctionEnsemble) -> tuple[float, float]:
    """Deterministic bracket (x1, x2) with aggregate(x1) <= 0 <= aggregate(x2).

    x1 is the right end of the minimizer interval of the agent with the
    (f+1)-th smallest such right end; x2 the left end for the (f+1)-th
    largest left end. Ties break on the lower agent id.
    """
    p = ens.pack
    by_max = sorted(range(ens.n), key=lambda i: (p.xmax[i], i))
    by_min = sorted(range(ens.n), key=lambda i: (-p.xmin[i], i))
    x1 = float(p.xmax[by_max[ens.f]])
    x2 = float(p.xmin[by_min[ens.f]])
    return x1, x2


def solve_root(ens: FunctionEnsemble, mode: str = MODE_TRIMMED,
               tol: float = DEFAULT_ROOT_TOL) -> float:
    """Deterministic zero of the trimmed aggregate (or the middle-rank sum).

    Bisection from ``root_bracket``; never fails for a valid ensemble. The
    returned point has |aggregate| <= tol except when the bracket collapses
    to float resolution first, in which case the smallest-residual visited
    point is returned.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    code = _MODE_CODE[mode]
    x1, x2 = root_bracket(ens)
    p = ens.pack
    root, residual, _, status = kernels.solve_root_kernel(
        p.kind, p.p0, p.p1, p.p2, p.bp_off, p.bp_x, p.bp_d,
        ens.f, code, x1, x2, tol, np.empty(ens.n),
    )
    if status != kernels.ROOT_OK:
        raise BracketError(
            f"aggregate bracket failed on [{x1}, {x2}] (mode={mode}); "
            "this is unreachable for admissible ensembles"
        )
    return float(root)


def aggregate_antiderivative(ens: FunctionEnsemble, c: float, x: float,
                             tol: float = 1e-10) -> float:
    """Integral of the trimmed aggregate from c to x (adaptive Simpson).

    Convex in x since the integrand is non-decreasing; provided for
    demonstration and verification, the algorithms only ever need the
    integrand itself. Requires c <= x.
    """
    c = float(c)
    x = float(x)
    if not (math.isfinite(c) and math.isfinite(x)):
        raise ValueError("integration limits must be finite")
    if c > x:
        raise ValueError(f"need c <= x, got c={c}, x={x}")
    if c == x:
        return 0.0

    def h(t: float) -> float:
        return trimmed_gradient_aggregate(ens, t)

    def simpson(a, fa, fm, fb, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, m, b, fa, fm, fb, whole, eps, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = h(lm)
        frm = h(rm)
        left = simpson(a, fa, flm, fm, m)
        right = simpson(m, fm, frm, fb, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, lm, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
                + recurse(m, rm, b, fm, frm, fb, right, 0.5 * eps, depth - 1))

    m = 0.5 * (c + x)
    fa, fm, fb = h(c), h(m), h(x)
    whole = simpson(c, fa, fm, fb, x)
    return recurse(c, m, x, fa, fm, fb, whole, tol, 48)


def gradient_grid(ens: FunctionEnsemble, xs: Sequence[float]) -> np.ndarray:
    """Derivative matrix, shape (len(xs), n); vectorised over the grid."""
    xs = np.asarray(xs, dtype=np.float64)
    p = ens.pack
    out = np.empty((xs.size, ens.n))
    for i in range(ens.n):
        k = p.kind[i]
        if k == 0:
            out[:, i] = 2.0 * p.p1[i] * (xs - p.p0[i])
        elif k == 1:
            out[:, i] = p.p1[i] * np.clip((xs - p.p0[i]) / p.p2[i], -1.0, 1.0)
        else:
            lo, hi = p.bp_off[i], p.bp_off[i + 1]
            out[:, i] = np.interp(xs, p.bp_x[lo:hi], p.bp_d[lo:hi])
    return out


def aggregate_grid(ens: FunctionEnsemble, xs: Sequence[float]) -> dict:
    """All aggregate statistics over a grid at once (for suites and plots).

    Returns arrays keyed by "trimmed_pos", "trimmed_neg", "aggregate",
    "rank_sum", plus "ranked": the (m, n) derivative matrix sorted descending
    per row, so ranked[:, k-1] is the k-th largest derivative.
    """
    f = ens.f
    n = ens.n
    S = np.sort(gradient_grid(ens, xs), axis=1)  # ascending per row
    m = S.shape[0]
    ispos = S > SIGN_ZERO_TOL
    isneg = S < -SIGN_ZERO_TOL
    npos = ispos.sum(axis=1)
    nneg = isneg.sum(axis=1)
    drop_hi = np.minimum(f, npos)
    drop_lo = np.minimum(f, nneg)
    Z = np.zeros((m, n + 1))
    np.cumsum(S, axis=1, out=Z[:, 1:])
    rows = np.arange(m)
    total_pos = (S * ispos).sum(axis=1)
    total_neg = (S * isneg).sum(axis=1)
    # the dropped extremes are all positive (resp. negative) by construction
    top_sum = Z[rows, n] - Z[rows, n - drop_hi]
    bot_sum = Z[rows, drop_lo]
    return {
        "trimmed_pos": total_pos - top_sum,
        "trimmed_neg": total_neg - bot_sum,
        "aggregate": (total_pos - top_sum) + (total_neg - bot_sum),
        "rank_sum": Z[:, n - f] - Z[:, f],
        "ranked": S[:, ::-1],
    }
