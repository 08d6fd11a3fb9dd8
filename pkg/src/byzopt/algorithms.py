"""Agent-level algorithms over the synchronous network.

Two one-shot algorithms exchange whole cost functions and solve the trimmed
aggregate (or middle-rank sum) for its zero; three iterative ones exchange
derivatives each round and step against a fault-trimmed aggregate; the last
one exchanges local minimizers once and takes a rank vote. All of them keep
every non-faulty agent's state identical in every round, so one logical
computation stands for all non-faulty agents, and the outcome asserts it.

Isolation/restart: when a misbehaving sender is detected (silence, or a
gradient record inconsistency in the record-checked method), the agent is
removed, both n and f drop by one, and the algorithm restarts from
initialization with cleared records. A detected agent is always truly
faulty; the run aborts with InternalInvariantError otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .certify import (
    WeightCertificate,
    WeightSpec,
    extract_weights,
    verify_certificate,
    y_distance,
    y_membership,
)
from .convexlib import check_admissible, default_function, pack_functions
from .simnet import (
    InternalInvariantError,
    RoundLog,
    Scenario,
    ScenarioError,
    broadcast_function_payload,
    byz_broadcast,
    consensus_input,
    effective_function,
    exact_consensus,
    gradient_source,
    p2p_values,
    point_to_point_send,
)
from .trimagg import (
    FunctionEnsemble,
    rank_gradient_sum,
    solve_root,
    trimmed_gradient_aggregate,
)

# residual below which an iterative run is reported as converged
CONVERGENCE_RESIDUAL = 1e-3
# stationarity slack used when checking the iterates' weight feasibility
Y_STATIONARITY_SLACK = 1e-3

_RULE_NAMES = {
    kernels.RULE_NO_BROADCAST: "no_broadcast",
    kernels.RULE_DECREASE_UP: "rule1",
    kernels.RULE_INCREASE_DOWN: "rule2",
    kernels.RULE_BOUND: "rule3",
}


@dataclass
class AlgorithmOutcome:
    algorithm: str
    outputs: dict[int, float]
    converged: bool
    iterations: int
    stop_reason: str
    detections: list[dict] = field(default_factory=list)
    restarts: int = 0
    certificate: Optional[WeightCertificate] = None
    certificate_check: Optional[dict] = None
    trace: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    verdict_ok: bool = True
    round_logs: list[RoundLog] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "outputs": {str(a): float(v) for a, v in sorted(self.outputs.items())},
            "converged": self.converged,
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "detections": self.detections,
            "restarts": self.restarts,
            "certificate": (None if self.certificate is None
                            else self.certificate.to_dict()),
            "certificate_check": self.certificate_check,
            "stats": self.stats,
            "verdict_ok": self.verdict_ok,
        }


# --- gradient records (reference implementation of the kernel's checks) ----

@dataclass
class GradientRecord:
    """Per-peer history of (round, estimate, received gradient) triples."""

    lipschitz: float
    entries: dict[int, list[tuple[int, float, float]]] = field(default_factory=dict)

    def append(self, peer: int, t: int, x: float, g: float) -> None:
        self.entries.setdefault(peer, []).append((t, x, g))

    def clear(self) -> None:
        self.entries.clear()


@dataclass(frozen=True)
class AdmissibilityVerdict:
    ok: bool
    rule: Optional[int]  # 1, 2 or 3 when not ok


def check_gradient_admissible(record: GradientRecord, peer: int, t: int,
                              x_prev: float, g: float) -> AdmissibilityVerdict:
    """Exact-comparison admissibility check of a received gradient.

    rule 1: some earlier round had estimate <= x_prev but a larger gradient;
    rule 2: some earlier round had estimate >= x_prev but a smaller one;
    rule 3: |g| exceeds the declared bound. Honest gradients of admissible
    L-bounded functions can never trip any of these.
    """
    hist = record.entries.get(peer, ())
    for t0, x0, g0 in hist:
        if t0 < t and x0 <= x_prev and g0 > g:
            return AdmissibilityVerdict(False, 1)
    for t0, x0, g0 in hist:
        if t0 < t and x0 >= x_prev and g0 < g:
            return AdmissibilityVerdict(False, 2)
    if abs(g) > record.lipschitz:
        return AdmissibilityVerdict(False, 3)
    return AdmissibilityVerdict(True, None)


# --- one-shot algorithms (function exchange + aggregate zero) --------------

def _gather_broadcast_ensemble(scn: Scenario, log: RoundLog):
    """Function-exchange step: silence or inadmissible payloads are replaced
    by the default function known to all agents."""
    fallback = scn.default_function or default_function()
    fns = []
    replacements = []
    for a in range(1, scn.n + 1):
        if a in scn.faulty:
            payload = broadcast_function_payload(scn.strategy(a),
                                                 scn.functions[a])
        else:
            payload = scn.functions[a]
        delivered = byz_broadcast(log, a, payload)
        if delivered is None:
            fns.append(fallback)
            event = {"agent": a, "round": 0, "reason": "no_broadcast"}
            replacements.append(event)
            log.detections.append(event)
            continue
        report = check_admissible(delivered)
        if not report.ok:
            fns.append(fallback)
            event = {"agent": a, "round": 0,
                     "reason": "inadmissible_broadcast",
                     "violations": report.violations}
            replacements.append(event)
            log.detections.append(event)
        else:
            fns.append(delivered)
    return FunctionEnsemble(tuple(fns), scn.f), replacements


def _run_one_shot(scn: Scenario, mode: str, rule: str) -> AlgorithmOutcome:
    log = RoundLog(round=0)
    ens, replacements = _gather_broadcast_ensemble(scn, log)
    x = solve_root(ens, mode=mode, tol=scn.root_tol)
    if mode == "trimmed":
        residual = trimmed_gradient_aggregate(ens, x)
    else:
        residual = rank_gradient_sum(ens, x)
    cert = extract_weights(ens, scn.faulty, x, bound="half", rule=rule)
    check = verify_certificate(cert, ens, scn.faulty)
    outputs = {a: x for a in scn.nonfaulty}
    return AlgorithmOutcome(
        algorithm=scn.algorithm,
        outputs=outputs,
        converged=True,
        iterations=1,
        stop_reason="single_shot",
        detections=replacements,
        certificate=cert,
        certificate_check=check.to_dict(),
        trace=[{"t": 0, "x": float(x), "aggregate": float(residual)}],
        stats={
            "residual": float(residual),
            "ensemble_hull": list(ens.argmin_hull()),
            "nonfaulty_hull": list(ens.argmin_hull(scn.nonfaulty)),
        },
        verdict_ok=check.ok,
        round_logs=[log],
    )


def run_alg1(scn: Scenario) -> AlgorithmOutcome:
    """Function exchange, then the deterministic trimmed-aggregate zero."""
    return _run_one_shot(scn, mode="trimmed", rule="signed")


def run_alg2(scn: Scenario) -> AlgorithmOutcome:
    """Function exchange, then the deterministic middle-rank-sum zero."""
    return _run_one_shot(scn, mode="rank", rule="rank")


# --- iterative algorithms ---------------------------------------------------

def _lipschitz_for(scn: Scenario, live: list[int]) -> float:
    bound = scn.lipschitz
    declared = []
    for a in live:
        if a in scn.faulty:
            continue
        lb = scn.functions[a].lipschitz_bound
        if lb is None:
            raise ScenarioError(
                f"agent {a}: the record-checked method needs a derivative "
                "bound on every non-faulty function"
            )
        declared.append(lb)
    if bound is None:
        bound = max(declared)
    if any(lb > bound + 1e-12 for lb in declared):
        raise ScenarioError(
            "declared function bounds exceed the scenario derivative bound"
        )
    return float(bound)


def _init_consensus(scn: Scenario, live: list[int], f_cur: int,
                    round_idx: int) -> tuple[float, RoundLog]:
    log = RoundLog(round=round_idx)
    inputs = {}
    for a in live:
        v = consensus_input(scn.strategy(a), scn.functions[a],
                            scn.default_value)
        byz_broadcast(log, a, v)
        inputs[a] = scn.default_value if v is None else float(v)
    good = [a for a in live if a not in scn.faulty]
    x0 = exact_consensus(inputs, f_cur, nonfaulty=good)
    return x0, log


def _attempt_arrays(scn: Scenario, live: list[int]):
    strategies = [scn.strategy(a) for a in live]
    src = np.zeros(len(live), dtype=np.int64)
    sp0 = np.zeros(len(live))
    sp1 = np.zeros(len(live))
    fns = []
    for idx, (a, strat) in enumerate(zip(live, strategies)):
        code, a0, a1 = gradient_source(strat)
        if (scn.algorithm in ("alg4", "alg5") and code == kernels.SRC_SILENT
                and not scn.isolate_silent):
            code, a0, a1 = kernels.SRC_CONSTANT, scn.default_value, 0.0
        src[idx], sp0[idx], sp1[idx] = code, a0, a1
        fns.append(effective_function(strat, scn.functions[a]))
    nonfaulty = np.array([a not in scn.faulty for a in live])
    return pack_functions(fns), src, sp0, sp1, nonfaulty


def _run_iterative(scn: Scenario) -> AlgorithmOutcome:
    alg = scn.algorithm
    live = list(range(1, scn.n + 1))
    f_cur = scn.f
    lip = _lipschitz_for(scn, live) if alg == "alg3" else None
    nf_mins = [scn.functions[a].argmin_interval() for a in scn.nonfaulty]
    nf_hull = (min(lo for lo, _ in nf_mins), max(hi for _, hi in nf_mins))

    detections: list[dict] = []
    logs: list[RoundLog] = []
    trace: list[dict] = []
    iterations = 0
    attempt = 0
    trace_cap = scn.max_rounds // scn.trace_stride + 4
    margin = -math.inf

    while True:
        n_cur = len(live)
        pack, src, sp0, sp1, nonfaulty = _attempt_arrays(scn, live)
        x0, log0 = _init_consensus(scn, live, f_cur, round_idx=0)
        logs.append(log0)
        trace.append({"attempt": attempt, "t": 0, "x": float(x0),
                      "aggregate": None})
        grads = np.empty(n_cur)
        trace_t = np.zeros(trace_cap, dtype=np.int64)
        trace_x = np.zeros(trace_cap)
        trace_agg = np.zeros(trace_cap)
        if alg == "alg3":
            cap = scn.max_rounds + kernels.REC_BUFFER
            rec_xs = np.empty((n_cur, cap))
            rec_gs = np.empty((n_cur, cap))
            rec_len = np.zeros(n_cur, dtype=np.int64)
            buf_xs = np.empty((n_cur, kernels.REC_BUFFER))
            buf_gs = np.empty((n_cur, kernels.REC_BUFFER))
            buf_len = np.zeros(n_cur, dtype=np.int64)
            (status, rounds, x, agg, det_i, det_rule, ntr,
             min_x, max_x) = kernels.alg3_attempt(
                pack.kind, pack.p0, pack.p1, pack.p2,
                pack.bp_off, pack.bp_x, pack.bp_d,
                src, sp0, sp1,
                f_cur, x0, scn.stepsizes.scale, scn.stepsizes.power, lip,
                scn.max_rounds, scn.tol, scn.trace_stride,
                int(scn.symmetric_trim),
                rec_xs, rec_gs, rec_len, buf_xs, buf_gs, buf_len,
                grads,
                trace_t, trace_x, trace_agg,
            )
        else:
            mode = 0 if alg == "alg4" else 1
            (status, rounds, x, agg, det_i, ntr,
             min_x, max_x, att_margin) = kernels.alg45_attempt(
                pack.kind, pack.p0, pack.p1, pack.p2,
                pack.bp_off, pack.bp_x, pack.bp_d,
                src, sp0, sp1, nonfaulty,
                f_cur, x0, scn.stepsizes.scale, scn.stepsizes.power,
                scn.max_rounds, scn.tol, scn.trace_stride, mode,
                grads, trace_t, trace_x, trace_agg,
            )
            det_rule = kernels.RULE_NO_BROADCAST
            margin = max(margin, att_margin)

        iterations += int(rounds)
        for k in range(int(ntr)):
            trace.append({"attempt": attempt, "t": int(trace_t[k]),
                          "x": float(trace_x[k]),
                          "aggregate": float(trace_agg[k])})

        if status == kernels.STATUS_DETECTION:
            agent = live[int(det_i)]
            if agent not in scn.faulty:
                raise InternalInvariantError(
                    f"non-faulty agent {agent} was detected; the checks are "
                    "unsound"
                )
            event = {"agent": agent, "attempt": attempt, "round": int(rounds),
                     "reason": _RULE_NAMES[int(det_rule)]}
            detections.append(event)
            log_det = RoundLog(round=int(rounds))
            log_det.detections.append(event)
            log_det.restarts.append({"removed": agent, "n": n_cur - 1,
                                     "f": f_cur - 1})
            logs.append(log_det)
            live.remove(agent)
            f_cur -= 1
            attempt += 1
            if attempt > scn.phi:
                raise InternalInvariantError(
                    "more restarts than actually-faulty agents"
                )
            continue
        break

    x_final = float(x)
    residual = float(agg)
    stats: dict = {
        "residual": residual,
        "attempts": attempt + 1,
        "surviving_n": len(live),
        "surviving_f": f_cur,
        "observed_range": [float(min_x), float(max_x)],
        "nonfaulty_hull": list(nf_hull),
    }
    if alg == "alg3":
        lo = nf_hull[0] - len(live) * scn.stepsizes.scale * lip
        hi = nf_hull[1] + len(live) * scn.stepsizes.scale * lip
        stats["confinement"] = [lo, hi]
        stats["lipschitz"] = lip
        if min_x < lo - 1e-9 or max_x > hi + 1e-9:
            raise InternalInvariantError(
                f"estimates left the confinement interval [{lo}, {hi}]: "
                f"observed [{min_x}, {max_x}]"
            )
    else:
        stats["neutrality_margin"] = float(margin)
        if margin > 1e-9:
            raise InternalInvariantError(
                "aggregate left the non-faulty gradient range "
                f"(margin {margin:.3e})"
            )

    converged = (status == kernels.STATUS_RESIDUAL
                 or abs(residual) <= CONVERGENCE_RESIDUAL)
    verdict = converged
    if alg in ("alg4", "alg5"):
        if alg == "alg4":
            spec = WeightSpec.from_total(len(live), f_cur)
        else:
            spec = WeightSpec.from_nonfaulty(len(scn.nonfaulty), f_cur)
        derivs = [(a, scn.functions[a].grad(x_final)) for a in scn.nonfaulty]
        ym = y_membership(derivs, spec, stationarity_tol=Y_STATIONARITY_SLACK)
        stats["weight_spec"] = {"beta": spec.beta, "gamma": spec.gamma}
        stats["y_feasible"] = ym.feasible
        stats["y_witness"] = (None if ym.witness is None else
                              {str(a): v for a, v in sorted(ym.witness.items())})
        ens_all = FunctionEnsemble(
            tuple(scn.functions[a] for a in range(1, scn.n + 1)), scn.f)
        stats["y_distance"] = y_distance(ens_all, scn.faulty, spec, x_final,
                                         stationarity_tol=Y_STATIONARITY_SLACK)
        verdict = ym.feasible

    return AlgorithmOutcome(
        algorithm=alg,
        outputs={a: x_final for a in scn.nonfaulty},
        converged=converged,
        iterations=iterations,
        stop_reason=("residual" if status == kernels.STATUS_RESIDUAL
                     else "max_rounds"),
        detections=detections,
        restarts=attempt,
        certificate=None,
        certificate_check=None,
        trace=trace,
        stats=stats,
        verdict_ok=verdict,
        round_logs=logs,
    )


def run_alg3(scn: Scenario) -> AlgorithmOutcome:
    """Record-checked distributed gradient method with isolation/restart."""
    return _run_iterative(scn)


def run_alg4(scn: Scenario) -> AlgorithmOutcome:
    """Trimmed-mean gradient iteration (drop f highest/lowest, average rest)."""
    return _run_iterative(scn)


def run_alg5(scn: Scenario) -> AlgorithmOutcome:
    """Midpoint gradient iteration (mean of the surviving extremes)."""
    return _run_iterative(scn)


# --- rank-vote algorithm -----------------------------------------------------

def run_alg6(scn: Scenario) -> AlgorithmOutcome:
    """One point-to-point exchange of local minimizers, rank vote, agreement.

    Works without derivative exchange; faulty senders may equivocate in the
    exchange step. The outcome records how many non-faulty minimizers sit on
    each side of the output, and the weight-feasibility oracle's verdict.
    """
    n, f = scn.n, scn.f
    receivers = list(range(1, n + 1))
    log0 = RoundLog(round=0)
    delivered: dict[int, dict[int, float]] = {}
    v_true = {a: scn.functions[a].argmin_interval()[0] for a in range(1, n + 1)}
    for a in range(1, n + 1):
        if a in scn.faulty:
            vals = p2p_values(scn.strategy(a), scn.functions[a], receivers)
        else:
            vals = v_true[a]
        delivered[a] = point_to_point_send(log0, a, vals, receivers,
                                           scn.default_value)

    rank = math.ceil(n / 2)
    medians = {}
    for j in scn.nonfaulty:
        votes = sorted((delivered[i][j], i) for i in range(1, n + 1))
        medians[j] = votes[rank - 1][0]

    log1 = RoundLog(round=1)
    inputs = {}
    for a in range(1, n + 1):
        if a in scn.faulty:
            v = consensus_input(scn.strategy(a), scn.functions[a],
                                scn.default_value)
        else:
            v = medians[a]
        byz_broadcast(log1, a, v)
        inputs[a] = scn.default_value if v is None else float(v)
    x = exact_consensus(inputs, f, nonfaulty=scn.nonfaulty)

    nonfaulty = scn.nonfaulty
    le_count = sum(1 for a in nonfaulty if v_true[a] <= x)
    ge_count = sum(1 for a in nonfaulty if v_true[a] >= x)
    spec = WeightSpec(1.0 / (2.0 * len(nonfaulty)), rank - scn.phi, "rank_vote")
    derivs = [(a, scn.functions[a].grad(x)) for a in nonfaulty]
    ym = y_membership(derivs, spec)

    cert = None
    check_dict = None
    verdict = ym.feasible
    if ym.feasible:
        cert = WeightCertificate(weights=ym.witness, at_x=float(x),
                                 beta=spec.beta, gamma=spec.gamma,
                                 construction="oracle")
        ens = FunctionEnsemble(
            tuple(scn.functions[a] for a in range(1, n + 1)), f)
        check = verify_certificate(cert, ens, scn.faulty)
        check_dict = check.to_dict()
        verdict = check.ok

    return AlgorithmOutcome(
        algorithm="alg6",
        outputs={a: float(x) for a in nonfaulty},
        converged=True,
        iterations=1,
        stop_reason="single_shot",
        detections=[],
        certificate=cert,
        certificate_check=check_dict,
        trace=[{"t": 0, "x": float(x), "aggregate": None}],
        stats={
            "rank": rank,
            "medians": {str(a): float(v) for a, v in sorted(medians.items())},
            "le_count": le_count,
            "ge_count": ge_count,
            "count_bound": rank - scn.phi,
            "weight_spec": {"beta": spec.beta, "gamma": spec.gamma},
            "y_feasible": ym.feasible,
        },
        verdict_ok=verdict,
        round_logs=[log0, log1],
    )


_RUNNERS = {
    "alg1": run_alg1,
    "alg2": run_alg2,
    "alg3": run_alg3,
    "alg4": run_alg4,
    "alg5": run_alg5,
    "alg6": run_alg6,
}


def run_algorithm(scn: Scenario) -> AlgorithmOutcome:
    """Dispatch a scenario to its configured algorithm."""
    outcome = _RUNNERS[scn.algorithm](scn)
    outs = list(outcome.outputs.values())
    if outs and any(v != outs[0] for v in outs):
        raise InternalInvariantError("non-faulty outputs differ")
    return outcome
