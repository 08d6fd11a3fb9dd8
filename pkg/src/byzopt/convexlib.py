"""Scalar convex cost functions with exact derivatives.

Three closed-form families cover everything the algorithms need: a plain
quadratic, a Huber-style function (quadratic core, linear tails, so the
derivative is globally bounded), and a primitive defined by a piecewise-linear
derivative. All derivatives are exact, which keeps trimming, ranking and
root-finding free of numerical-differentiation noise.

A function is *admissible* when its derivative is continuous and
non-decreasing and its minimizer set is a nonempty closed bounded interval.
``check_admissible`` verifies this, symbolically where the family permits and
on a sample grid as a defensive double-check. Construction alone does not
guarantee admissibility: ``PiecewiseLinearDerivative`` can represent broken
functions on purpose, which the simulator uses for misbehaving broadcasters.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

# Grid resolution for the sample-based admissibility double-check.
DEFAULT_GRID_POINTS = 10_000
# Slack for monotonicity / Lipschitz comparisons on sampled grids.
GRID_SLACK = 1e-12

KIND_QUADRATIC = 0
KIND_HUBER = 1
KIND_PLD = 2


class DomainError(ValueError):
    """An operation was evaluated at a non-finite point."""


def _require_finite(x) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"expected a finite argument, got {x!r}")
    return x


@dataclass(frozen=True)
class Quadratic:
    """s*(x - a)**2 + c with s > 0. Unique minimizer at ``a``.

    The derivative 2*s*(x - a) is unbounded, so no Lipschitz bound is carried.
    """

    a: float
    s: float = 1.0
    c: float = 0.0
    lipschitz_bound: Optional[float] = None  # declared bound; never valid here

    def __post_init__(self):
        _require_finite(self.a)
        _require_finite(self.c)
        if not (math.isfinite(self.s) and self.s > 0):
            raise ValueError(f"quadratic scale must be positive, got {self.s!r}")

    def value(self, x: float) -> float:
        x = _require_finite(x)
        return self.s * (x - self.a) ** 2 + self.c

    def grad(self, x: float) -> float:
        x = _require_finite(x)
        return 2.0 * self.s * (x - self.a)

    def argmin_interval(self) -> tuple[float, float]:
        return (self.a, self.a)


@dataclass(frozen=True)
class Huber:
    """Quadratic within ``width`` of the vertex, linear with slope ±``slope`` beyond.

    value(a) = 0; the derivative is slope*(x-a)/width on the core and saturates
    at ±slope, so the function is globally ``slope``-Lipschitz.
    """

    a: float
    slope: float
    width: float
    lipschitz_bound: Optional[float] = None  # defaults to ``slope``

    def __post_init__(self):
        _require_finite(self.a)
        if not (math.isfinite(self.slope) and self.slope > 0):
            raise ValueError(f"huber slope must be positive, got {self.slope!r}")
        if not (math.isfinite(self.width) and self.width > 0):
            raise ValueError(f"huber width must be positive, got {self.width!r}")
        if self.lipschitz_bound is None:
            object.__setattr__(self, "lipschitz_bound", self.slope)

    def value(self, x: float) -> float:
        x = _require_finite(x)
        u = x - self.a
        if abs(u) <= self.width:
            return self.slope * u * u / (2.0 * self.width)
        return self.slope * (abs(u) - self.width / 2.0)

    def grad(self, x: float) -> float:
        x = _require_finite(x)
        u = x - self.a
        if u > self.width:
            return self.slope
        if u < -self.width:
            return -self.slope
        return self.slope * u / self.width

    def argmin_interval(self) -> tuple[float, float]:
        return (self.a, self.a)


@dataclass(frozen=True)
class PiecewiseLinearDerivative:
    """Primitive of a continuous piecewise-linear derivative.

    ``points`` is an ordered sequence of (x, slope) nodes. Between nodes the
    derivative interpolates linearly; outside them it is held constant at the
    boundary slopes, so the derivative is globally bounded. The value anchors
    at 0 on the minimizer set when one exists (first node otherwise).

    Nothing forces the node slopes to be non-decreasing: a decreasing run
    yields a deliberately inadmissible function.
    """

    points: tuple[tuple[float, float], ...]
    lipschitz_bound: Optional[float] = None  # defaults to max |slope|
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(x), float(d)) for x, d in self.points)
        if not pts:
            raise ValueError("need at least one (x, slope) node")
        for x, d in pts:
            _require_finite(x)
            _require_finite(d)
        xs = [x for x, _ in pts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("node x coordinates must be strictly increasing")
        object.__setattr__(self, "points", pts)
        # antiderivative at each node, anchored to 0 at the first node
        cum = [0.0]
        for (x0, d0), (x1, d1) in zip(pts, pts[1:]):
            cum.append(cum[-1] + 0.5 * (d0 + d1) * (x1 - x0))
        object.__setattr__(self, "_cum", tuple(cum))
        if self.lipschitz_bound is None:
            object.__setattr__(
                self, "lipschitz_bound", max(abs(d) for _, d in pts)
            )

    @property
    def node_x(self) -> tuple[float, ...]:
        return tuple(x for x, _ in self.points)

    @property
    def node_d(self) -> tuple[float, ...]:
        return tuple(d for _, d in self.points)

    def grad(self, x: float) -> float:
        x = _require_finite(x)
        pts = self.points
        if x <= pts[0][0]:
            return pts[0][1]
        if x >= pts[-1][0]:
            return pts[-1][1]
        xs = self.node_x
        k = bisect.bisect_right(xs, x) - 1
        x0, d0 = pts[k]
        x1, d1 = pts[k + 1]
        return d0 + (d1 - d0) * (x - x0) / (x1 - x0)

    def _antiderivative(self, x: float) -> float:
        # integral of grad from the first node to x
        pts = self.points
        if x <= pts[0][0]:
            return pts[0][1] * (x - pts[0][0])
        if x >= pts[-1][0]:
            return self._cum[-1] + pts[-1][1] * (x - pts[-1][0])
        xs = self.node_x
        k = bisect.bisect_right(xs, x) - 1
        x0, d0 = pts[k]
        x1, d1 = pts[k + 1]
        dk = d0 + (d1 - d0) * (x - x0) / (x1 - x0)
        return self._cum[k] + 0.5 * (d0 + dk) * (x - x0)

    def value(self, x: float) -> float:
        x = _require_finite(x)
        zero = self._zero_interval()
        anchor = zero[0] if zero is not None else self.points[0][0]
        return self._antiderivative(x) - self._antiderivative(anchor)

    def _zero_interval(self) -> Optional[tuple[float, float]]:
        """Zero set of the derivative, assuming non-decreasing node slopes.

        Returns None when the zero set is empty or unbounded (inadmissible).
        """
        ds = self.node_d
        xs = self.node_x
        if ds[0] > 0 or ds[-1] < 0:
            return None
        if ds[0] == 0 or ds[-1] == 0:
            return None  # flat at an end: unbounded argmin
        lo = hi = None
        for k in range(len(ds) - 1):
            d0, d1 = ds[k], ds[k + 1]
            if d0 < 0 <= d1:
                if d1 == 0:
                    lo = xs[k + 1]
                else:
                    lo = xs[k] + (0.0 - d0) * (xs[k + 1] - xs[k]) / (d1 - d0)
                break
        for k in range(len(ds) - 1, 0, -1):
            d0, d1 = ds[k - 1], ds[k]
            if d0 <= 0 < d1:
                if d0 == 0:
                    hi = xs[k - 1]
                else:
                    hi = xs[k - 1] + (0.0 - d0) * (xs[k] - xs[k - 1]) / (d1 - d0)
                break
        if lo is None or hi is None:
            return None
        return (lo, hi)

    def argmin_interval(self) -> tuple[float, float]:
        zero = self._zero_interval()
        if zero is None:
            raise ValueError("function has no compact minimizer set")
        return zero


AdmissibleFunction = Union[Quadratic, Huber, PiecewiseLinearDerivative]


def evaluate(fn: AdmissibleFunction, x: float) -> float:
    """Exact function value at x."""
    return fn.value(x)


def gradient(fn: AdmissibleFunction, x: float) -> float:
    """Exact derivative at x; non-decreasing in x for admissible functions."""
    return fn.grad(x)


def argmin_interval(fn: AdmissibleFunction) -> tuple[float, float]:
    """Closed bounded interval on which the derivative is exactly zero."""
    return fn.argmin_interval()


def default_function() -> Quadratic:
    """Replacement cost function assumed for misbehaving broadcasters."""
    return Quadratic(0.0, 1.0, 0.0)


@dataclass
class AdmissibilityReport:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def gradient_samples(fn: AdmissibleFunction, xs: np.ndarray) -> np.ndarray:
    """Vectorised derivative over a grid (same closed forms as ``grad``)."""
    xs = np.asarray(xs, dtype=np.float64)
    if isinstance(fn, Quadratic):
        return 2.0 * fn.s * (xs - fn.a)
    if isinstance(fn, Huber):
        return fn.slope * np.clip((xs - fn.a) / fn.width, -1.0, 1.0)
    return np.interp(xs, np.asarray(fn.node_x), np.asarray(fn.node_d))


def _structural_interval(fn: AdmissibleFunction) -> tuple[float, float]:
    if isinstance(fn, Quadratic):
        span = max(10.0, 10.0 / math.sqrt(fn.s))
        return (fn.a - span, fn.a + span)
    if isinstance(fn, Huber):
        span = max(10.0, 5.0 * fn.width)
        return (fn.a - span, fn.a + span)
    xs = fn.node_x
    span = max(10.0, 0.5 * (xs[-1] - xs[0]))
    return (xs[0] - span, xs[-1] + span)


def check_admissible(
    fn: AdmissibleFunction,
    lo: Optional[float] = None,
    hi: Optional[float] = None,
    num: int = DEFAULT_GRID_POINTS,
) -> AdmissibilityReport:
    """Report admissibility violations.

    Symbolic checks run where the family permits (node slopes, zero-crossing
    structure, exact derivative bounds); a grid of ``num`` points over
    [lo, hi] plus every node doubles as a defensive sample-based check. The
    interval defaults to a structural neighbourhood of the function.
    """
    violations: list[str] = []
    declared = fn.lipschitz_bound

    if isinstance(fn, Quadratic):
        if declared is not None:
            violations.append("lipschitz_exceeded")  # derivative is unbounded
    elif isinstance(fn, Huber):
        if declared is not None and fn.slope > declared + GRID_SLACK:
            violations.append("lipschitz_exceeded")
    else:
        ds = fn.node_d
        if any(b < a for a, b in zip(ds, ds[1:])):
            violations.append("non_monotone_gradient")
        elif fn._zero_interval() is None:
            violations.append("unbounded_argmin")
        if declared is not None and max(abs(d) for d in ds) > declared + GRID_SLACK:
            violations.append("lipschitz_exceeded")

    if lo is None or hi is None:
        lo, hi = _structural_interval(fn)
    grid = np.linspace(lo, hi, num)
    if isinstance(fn, PiecewiseLinearDerivative):
        grid = np.sort(np.concatenate([grid, np.asarray(fn.node_x)]))
    g = gradient_samples(fn, grid)
    if np.any(np.diff(g) < -GRID_SLACK):
        if "non_monotone_gradient" not in violations:
            violations.append("non_monotone_gradient")
    if declared is not None and np.any(np.abs(g) > declared + GRID_SLACK):
        if "lipschitz_exceeded" not in violations:
            violations.append("lipschitz_exceeded")
    if not isinstance(fn, PiecewiseLinearDerivative):
        try:
            a0, a1 = fn.argmin_interval()
        except ValueError:
            violations.append("unbounded_argmin")
        else:
            if not (math.isfinite(a0) and math.isfinite(a1) and a0 <= a1):
                violations.append("unbounded_argmin")

    return AdmissibilityReport(ok=not violations, violations=violations)


# --- serialization ---------------------------------------------------------

def function_to_dict(fn: AdmissibleFunction) -> dict:
    if isinstance(fn, Quadratic):
        d = {"kind": "quadratic", "a": fn.a, "s": fn.s, "c": fn.c}
    elif isinstance(fn, Huber):
        d = {"kind": "huber", "a": fn.a, "slope": fn.slope, "width": fn.width}
        if fn.lipschitz_bound != fn.slope:
            d["lipschitz_bound"] = fn.lipschitz_bound
    elif isinstance(fn, PiecewiseLinearDerivative):
        d = {
            "kind": "piecewise_linear_derivative",
            "points": [[x, s] for x, s in fn.points],
        }
        if fn.lipschitz_bound != max(abs(s) for _, s in fn.points):
            d["lipschitz_bound"] = fn.lipschitz_bound
    else:
        raise TypeError(f"unknown function type {type(fn)!r}")
    return d


def function_from_dict(d: dict) -> AdmissibleFunction:
    kind = d.get("kind")
    if kind == "quadratic":
        return Quadratic(d["a"], d.get("s", 1.0), d.get("c", 0.0))
    if kind == "huber":
        return Huber(
            d["a"], d["slope"], d["width"], d.get("lipschitz_bound")
        )
    if kind == "piecewise_linear_derivative":
        pts = tuple((x, s) for x, s in d["points"])
        return PiecewiseLinearDerivative(pts, d.get("lipschitz_bound"))
    raise ValueError(f"unknown function kind {kind!r}")


# --- flat packing for the numeric kernels ----------------------------------

@dataclass
class PackedFunctions:
    """Structure-of-arrays view of a function list, consumed by the kernels.

    PiecewiseLinearDerivative nodes are stored CSR-style in (offsets, node_x,
    node_d); other rows leave their slot empty.
    """

    kind: np.ndarray     # int64[n]
    p0: np.ndarray       # float64[n]  vertex / vertex / unused
    p1: np.ndarray       # float64[n]  scale  / slope  / unused
    p2: np.ndarray       # float64[n]  offset / width  / unused
    bp_off: np.ndarray   # int64[n+1]
    bp_x: np.ndarray     # float64[total nodes]
    bp_d: np.ndarray     # float64[total nodes]
    xmin: np.ndarray     # float64[n]  argmin interval, NaN when absent
    xmax: np.ndarray     # float64[n]
    lip: np.ndarray      # float64[n]  declared bound, +inf when absent


def pack_functions(fns: Sequence[AdmissibleFunction]) -> PackedFunctions:
    n = len(fns)
    kind = np.zeros(n, dtype=np.int64)
    p0 = np.zeros(n)
    p1 = np.zeros(n)
    p2 = np.zeros(n)
    off = np.zeros(n + 1, dtype=np.int64)
    bx: list[float] = []
    bd: list[float] = []
    xmin = np.full(n, np.nan)
    xmax = np.full(n, np.nan)
    lip = np.full(n, np.inf)
    for i, fn in enumerate(fns):
        if isinstance(fn, Quadratic):
            kind[i] = KIND_QUADRATIC
            p0[i], p1[i], p2[i] = fn.a, fn.s, fn.c
        elif isinstance(fn, Huber):
            kind[i] = KIND_HUBER
            p0[i], p1[i], p2[i] = fn.a, fn.slope, fn.width
        elif isinstance(fn, PiecewiseLinearDerivative):
            kind[i] = KIND_PLD
            bx.extend(fn.node_x)
            bd.extend(fn.node_d)
        else:
            raise TypeError(f"unknown function type {type(fn)!r}")
        off[i + 1] = len(bx)
        try:
            xmin[i], xmax[i] = fn.argmin_interval()
        except ValueError:
            pass
        if fn.lipschitz_bound is not None:
            lip[i] = fn.lipschitz_bound
    return PackedFunctions(
        kind=kind, p0=p0, p1=p1, p2=p2,
        bp_off=off, bp_x=np.asarray(bx, dtype=np.float64),
        bp_d=np.asarray(bd, dtype=np.float64),
        xmin=xmin, xmax=xmax, lip=lip,
    )
