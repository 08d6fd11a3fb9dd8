"""Deterministic synchronous-network primitives and the adversary catalogue.

The network is idealized: reliable broadcast delivers one identical payload
to every correct receiver (a faulty sender picks the payload or stays silent,
but cannot equivocate), agreement is a trimmed mean over one input per agent,
and plain point-to-point sends do allow per-receiver values. Silence is
always observable and is replaced by a predefined default where the protocol
says so.

Adversaries are a fixed catalogue of per-agent strategies; a scenario maps
each actually-faulty agent to one. Everything is deterministic given the
scenario (the seed exists for scenario generation and report echoing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from . import kernels
from .convexlib import (
    AdmissibleFunction,
    Huber,
    PiecewiseLinearDerivative,
    function_from_dict,
    function_to_dict,
)

ALGORITHMS = ("alg1", "alg2", "alg3", "alg4", "alg5", "alg6")

ADVERSARY_KINDS = (
    "honest",
    "silent",
    "inadmissible_function",
    "constant_gradient",
    "extreme_gradient",
    "virtual_function",
    "flip_flop",
    "median_drag",
)


class ScenarioError(ValueError):
    """Scenario fails a construction invariant (n <= 3f, bad ids, ...)."""


class InternalInvariantError(RuntimeError):
    """A should-be-unreachable simulation invariant was violated."""


@dataclass(frozen=True)
class AdversaryStrategy:
    """One catalogue entry: a behaviour kind plus its parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ScenarioError(f"unknown adversary kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "constant_gradient":
            p["g"] = float(p["g"])
        elif self.kind == "extreme_gradient":
            sign = int(p.get("sign", 1))
            if sign not in (-1, 1):
                raise ScenarioError(f"extreme_gradient sign must be +-1, got {sign}")
            p["sign"] = sign
            p["magnitude"] = float(p["magnitude"])
        elif self.kind == "virtual_function":
            fn = p["function"]
            if isinstance(fn, dict):
                fn = function_from_dict(fn)
            p["function"] = fn
        elif self.kind == "flip_flop":
            p["period"] = int(p.get("period", 1))
            if p["period"] < 1:
                raise ScenarioError("flip_flop period must be >= 1")
            p["magnitude"] = float(p.get("magnitude", 1.0))
        elif self.kind == "median_drag":
            p["target"] = float(p["target"])
            p["magnitude"] = float(p.get("magnitude", 1.0))
        elif self.kind == "inadmissible_function":
            p["slope"] = float(p.get("slope", 1.0))
            p["bound"] = float(p.get("bound", 1.0))
        for k, v in p.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise ScenarioError(f"{self.kind} parameter {k} is not finite")
        object.__setattr__(self, "params", p)

    def to_dict(self) -> dict:
        p = dict(self.params)
        if self.kind == "virtual_function":
            p["function"] = function_to_dict(p["function"])
        return {"kind": self.kind, **p}

    @staticmethod
    def from_dict(d: dict) -> "AdversaryStrategy":
        d = dict(d)
        kind = d.pop("kind")
        return AdversaryStrategy(kind, d)


HONEST = AdversaryStrategy("honest")


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing stepsizes scale/(t+1)**power (square-summable, not summable)."""

    scale: float = 1.0
    power: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ScenarioError(f"step scale must be positive, got {self.scale}")
        if not (0.5 < self.power <= 1.0):
            raise ScenarioError(
                f"step power must lie in (0.5, 1], got {self.power}"
            )

    def value(self, t: int) -> float:
        return self.scale / (t + 1) ** self.power

    def to_dict(self) -> dict:
        return {"scale": self.scale, "power": self.power}

    @staticmethod
    def from_dict(d: Optional[dict]) -> "StepSchedule":
        if not d:
            return StepSchedule()
        return StepSchedule(float(d.get("scale", 1.0)), float(d.get("power", 1.0)))


@dataclass
class Scenario:
    """Complete, deterministic description of one simulated run."""

    n: int
    f: int
    functions: dict[int, AdmissibleFunction]
    faulty: frozenset[int] = frozenset()
    adversary: dict[int, AdversaryStrategy] = field(default_factory=dict)
    algorithm: str = "alg1"
    stepsizes: StepSchedule = field(default_factory=StepSchedule)
    max_rounds: int = 100_000
    seed: int = 0
    tol: float = 1e-6          # iterative residual stop; 0 runs the full horizon
    root_tol: float = 1e-12    # bisection tolerance for the one-shot ones
    trace_stride: int = 1000
    default_value: float = 0.0
    default_function: Optional[AdmissibleFunction] = None  # replacement cost
    isolate_silent: bool = True  # False: substitute default_value instead
    symmetric_trim: bool = False  # record-checked method: always drop f/f
    lipschitz: Optional[float] = None
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.faulty = frozenset(int(a) for a in self.faulty)
        if self.n <= 3 * self.f:
            raise ScenarioError(f"need n > 3f, got n={self.n}, f={self.f}")
        if self.f < 0:
            raise ScenarioError("fault budget must be non-negative")
        if self.algorithm not in ALGORITHMS:
            raise ScenarioError(f"unknown algorithm {self.algorithm!r}")
        agents = set(range(1, self.n + 1))
        if set(self.functions) != agents:
            raise ScenarioError("functions must cover agents 1..n exactly")
        if not self.faulty <= agents:
            raise ScenarioError("faulty ids outside 1..n")
        if len(self.faulty) > self.f:
            raise ScenarioError(
                f"|faulty|={len(self.faulty)} exceeds fault budget f={self.f}"
            )
        self.adversary = {int(a): s for a, s in self.adversary.items()}
        if not set(self.adversary) <= self.faulty:
            raise ScenarioError("adversary entries must be faulty agents")
        for a in self.faulty:
            self.adversary.setdefault(a, HONEST)
        if self.max_rounds < 1:
            raise ScenarioError("max_rounds must be >= 1")
        if self.trace_stride < 1:
            raise ScenarioError("trace_stride must be >= 1")
        if self.default_function is not None:
            from .convexlib import check_admissible
            if not check_admissible(self.default_function).ok:
                raise ScenarioError("default_function must be admissible")

    @property
    def phi(self) -> int:
        return len(self.faulty)

    @property
    def nonfaulty(self) -> list[int]:
        return [a for a in range(1, self.n + 1) if a not in self.faulty]

    def strategy(self, agent: int) -> AdversaryStrategy:
        return self.adversary.get(agent, HONEST)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "f": self.f,
            "functions": {str(a): function_to_dict(fn)
                          for a, fn in sorted(self.functions.items())},
            "faulty": sorted(self.faulty),
            "adversary": {str(a): s.to_dict()
                          for a, s in sorted(self.adversary.items())},
            "algorithm": self.algorithm,
            "stepsizes": self.stepsizes.to_dict(),
            "max_rounds": self.max_rounds,
            "seed": self.seed,
            "tol": self.tol,
            "root_tol": self.root_tol,
            "trace_stride": self.trace_stride,
            "default_value": self.default_value,
            "default_function": (None if self.default_function is None
                                 else function_to_dict(self.default_function)),
            "isolate_silent": self.isolate_silent,
            "symmetric_trim": self.symmetric_trim,
            "lipschitz": self.lipschitz,
            "metadata": self.metadata,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "Scenario":
        try:
            functions = {int(a): function_from_dict(spec)
                         for a, spec in d["functions"].items()}
            adversary_raw = d.get("adversary", {})
            faulty = frozenset(int(a) for a in d.get("faulty", ()))
            if isinstance(adversary_raw, Mapping) and "kind" in adversary_raw:
                strat = AdversaryStrategy.from_dict(dict(adversary_raw))
                adversary = {a: strat for a in faulty}
            else:
                adversary = {int(a): AdversaryStrategy.from_dict(s)
                             for a, s in adversary_raw.items()}
            return Scenario(
                n=int(d["n"]),
                f=int(d["f"]),
                functions=functions,
                faulty=faulty,
                adversary=adversary,
                algorithm=d.get("algorithm", "alg1"),
                stepsizes=StepSchedule.from_dict(d.get("stepsizes")),
                max_rounds=int(d.get("max_rounds", 100_000)),
                seed=int(d.get("seed", 0)),
                tol=float(d.get("tol", 1e-6)),
                root_tol=float(d.get("root_tol", 1e-12)),
                trace_stride=int(d.get("trace_stride", 1000)),
                default_value=float(d.get("default_value", 0.0)),
                default_function=(None if d.get("default_function") is None
                                  else function_from_dict(d["default_function"])),
                isolate_silent=bool(d.get("isolate_silent", True)),
                symmetric_trim=bool(d.get("symmetric_trim", False)),
                lipschitz=(None if d.get("lipschitz") is None
                           else float(d["lipschitz"])),
                name=d.get("name", ""),
                metadata=dict(d.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"malformed scenario: {exc}") from exc


@dataclass
class RoundLog:
    """One synchronous round: what was sent, delivered, detected."""

    round: int
    broadcasts: dict[int, object] = field(default_factory=dict)
    deliveries: dict[int, dict[int, float]] = field(default_factory=dict)
    detections: list[dict] = field(default_factory=list)
    restarts: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "broadcasts": {str(k): v for k, v in sorted(self.broadcasts.items())},
            "deliveries": {str(k): {str(r): v for r, v in sorted(d.items())}
                           for k, d in sorted(self.deliveries.items())},
            "detections": self.detections,
            "restarts": self.restarts,
        }


def _payload_summary(payload) -> object:
    if payload is None:
        return None
    if isinstance(payload, (int, float)):
        return float(payload)
    return function_to_dict(payload)


def byz_broadcast(log: RoundLog, sender: int, payload):
    """Reliable broadcast: every correct receiver gets this same payload.

    A faulty sender chooses the payload (or None for observable silence) but
    cannot send different values to different receivers.
    """
    log.broadcasts[sender] = _payload_summary(payload)
    return payload


def point_to_point_send(log: RoundLog, sender: int,
                        values: Union[float, None, Mapping[int, Optional[float]]],
                        receivers, default: float) -> dict[int, float]:
    """Plain sends: per-receiver values are allowed; None becomes the default."""
    receivers = list(receivers)
    if values is None or isinstance(values, (int, float)):
        values = {r: values for r in receivers}
    out = {}
    for r in receivers:
        v = values.get(r)
        out[r] = default if v is None else float(v)
    log.deliveries[sender] = dict(out)
    return out


def trimmed_mean(values, f: int) -> float:
    vals = sorted(float(v) for v in values)
    if len(vals) <= 2 * f:
        raise InternalInvariantError("trimmed mean needs more than 2f inputs")
    kept = vals[f:len(vals) - f] if f > 0 else vals
    out = math.fsum(kept) / len(kept)
    # the exact mean lies within the kept range; undo any last-ulp rounding
    return min(max(out, kept[0]), kept[-1])


def exact_consensus(inputs: Mapping[int, float], f: int,
                    nonfaulty=None) -> float:
    """Agreement primitive: drop the f smallest and f largest inputs, average.

    With at most f faulty inputs the result lies in the non-faulty input
    hull; when ``nonfaulty`` is given this validity condition is asserted.
    """
    out = trimmed_mean(inputs.values(), f)
    if nonfaulty is not None:
        good = [float(inputs[a]) for a in nonfaulty if a in inputs]
        if good and not (min(good) <= out <= max(good)):
            raise InternalInvariantError(
                f"consensus output {out} outside non-faulty hull "
                f"[{min(good)}, {max(good)}]"
            )
    return out


# --- strategy behaviour hooks ----------------------------------------------

def broadcast_function_payload(strat: AdversaryStrategy,
                               own_fn: AdmissibleFunction):
    """Cost-function payload for the one-shot algorithms' exchange step."""
    k = strat.kind
    p = strat.params
    if k == "honest":
        return own_fn
    if k in ("silent", "flip_flop"):
        return None
    if k == "inadmissible_function":
        s = p["slope"]
        return PiecewiseLinearDerivative(((-1.0, s), (1.0, -s)))
    if k == "constant_gradient":
        return PiecewiseLinearDerivative(((0.0, p["g"]),))
    if k == "extreme_gradient":
        return PiecewiseLinearDerivative(((0.0, p["sign"] * p["magnitude"]),))
    if k == "virtual_function":
        return p["function"]
    if k == "median_drag":
        return Huber(p["target"], p["magnitude"], 1e-3)
    raise InternalInvariantError(f"unhandled strategy {k!r}")


def gradient_source(strat: AdversaryStrategy) -> tuple[int, float, float]:
    """Kernel source code + parameters for the gradient-exchange rounds."""
    k = strat.kind
    p = strat.params
    if k in ("honest", "virtual_function"):
        return kernels.SRC_FUNCTION, 0.0, 0.0
    if k == "silent":
        return kernels.SRC_SILENT, 0.0, 0.0
    if k == "constant_gradient":
        return kernels.SRC_CONSTANT, p["g"], 0.0
    if k == "extreme_gradient":
        return kernels.SRC_CONSTANT, p["sign"] * p["magnitude"], 0.0
    if k == "flip_flop":
        return kernels.SRC_FLIPFLOP, float(p["period"]), p["magnitude"]
    if k == "median_drag":
        return kernels.SRC_MEDIAN_DRAG, p["target"], p["magnitude"]
    if k == "inadmissible_function":
        return kernels.SRC_DECREASING, p["slope"], p["bound"]
    raise InternalInvariantError(f"unhandled strategy {k!r}")


def effective_function(strat: AdversaryStrategy,
                       own_fn: AdmissibleFunction) -> AdmissibleFunction:
    """Function evaluated for SRC_FUNCTION agents (virtual ones lie here)."""
    if strat.kind == "virtual_function":
        return strat.params["function"]
    return own_fn


def consensus_input(strat: AdversaryStrategy, own_fn: AdmissibleFunction,
                    default: float) -> Optional[float]:
    """Value an agent feeds into the agreement primitive (None = silent)."""
    k = strat.kind
    p = strat.params
    if k == "honest":
        return own_fn.argmin_interval()[0]
    if k == "silent":
        return None
    if k == "virtual_function":
        return p["function"].argmin_interval()[0]
    if k == "extreme_gradient":
        return p["sign"] * p["magnitude"]
    if k == "flip_flop":
        return p["magnitude"]
    if k == "median_drag":
        return p["target"]
    if k == "constant_gradient":
        return p["g"]
    return default  # inadmissible_function


def p2p_values(strat: AdversaryStrategy, own_fn: AdmissibleFunction,
               receivers) -> Union[float, None, dict[int, Optional[float]]]:
    """Values sent over plain point-to-point links (rank-vote exchange)."""
    k = strat.kind
    p = strat.params
    if k == "honest":
        return own_fn.argmin_interval()[0]
    if k == "silent":
        return None
    if k == "virtual_function":
        return p["function"].argmin_interval()[0]
    if k == "extreme_gradient":
        return p["sign"] * p["magnitude"]
    if k == "flip_flop":
        # equivocate: alternate sign across receiver blocks of `period`
        period = p["period"]
        mag = p["magnitude"]
        out = {}
        for rank, r in enumerate(sorted(receivers)):
            out[r] = mag if (rank // period) % 2 == 0 else -mag
        return out
    if k == "median_drag":
        return p["target"]
    if k == "constant_gradient":
        return p["g"]
    return None  # inadmissible_function: nothing sensible to send
