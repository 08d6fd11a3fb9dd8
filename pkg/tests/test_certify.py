import math

import numpy as np
import pytest

from byzopt import (
    FunctionEnsemble,
    Quadratic,
    WeightCertificate,
    WeightSpec,
    extract_weights,
    impossibility_scenarios,
    quadratic_weighted_optimum,
    solve_root,
    verify_certificate,
    y_membership,
)
from byzopt.certify import (
    CONSTRUCTION_PAIRED,
    CONSTRUCTION_SCALED,
    DegenerateWeightsError,
    InfeasibleSpecError,
    RootPreconditionError,
)

import oracles
from helpers import e1, quad_ensemble, random_ensemble


def test_extract_paired_with_one_faulty():
    ens = e1()
    cert = extract_weights(ens, {4}, 2.5)
    assert cert.construction == CONSTRUCTION_PAIRED
    assert cert.weights == {2: 0.5, 3: 0.5}
    assert cert.beta == 0.25 and cert.gamma == 2
    check = verify_certificate(cert, ens, {4})
    assert check.ok and check.threshold_count >= 2


def test_extract_paired_no_faulty():
    ens = e1()
    cert = extract_weights(ens, set(), 2.5)
    assert cert.beta == pytest.approx(1.0 / 6.0)
    assert cert.gamma == 3
    assert cert.weights[2] == pytest.approx(1.0 / 3.0)
    assert cert.weights[1] == pytest.approx(1.0 / 6.0)
    assert verify_certificate(cert, ens, set()).ok


def test_extract_identical_functions():
    ens = quad_ensemble([2.0] * 5)
    for faulty in (set(), {5}):
        cert = extract_weights(ens, faulty, 2.0)
        assert verify_certificate(cert, ens, faulty).ok


def test_scaled_construction_passes_where_paired_would_not():
    ens = e1()
    paired = extract_weights(ens, set(), 2.5)
    # the paired weights at threshold 1/n only clear it for 2 of 4 agents
    forced = WeightCertificate(weights=paired.weights, at_x=2.5,
                               beta=0.25, gamma=3,
                               construction=paired.construction)
    assert not verify_certificate(forced, ens, set()).ok
    scaled = extract_weights(ens, set(), 2.5, bound="inverse_n")
    assert scaled.construction == CONSTRUCTION_SCALED
    assert scaled.beta == 0.25
    assert verify_certificate(scaled, ens, set()).ok


def test_verify_certificate_negative_cases():
    ens = e1()
    bad = WeightCertificate(weights={2: 0.9, 3: 0.1}, at_x=2.5,
                            beta=0.25, gamma=2, construction="manual")
    check = verify_certificate(bad, ens, {4})
    stat = next(c for c in check.checks if c["name"] == "stationarity")
    assert not stat["ok"]
    assert stat["measured"] == pytest.approx(0.8)

    on_faulty = WeightCertificate(weights={4: 1.0}, at_x=4.0, beta=0.5,
                                  gamma=1, construction="manual")
    check = verify_certificate(on_faulty, ens, {4})
    assert not next(c for c in check.checks
                    if c["name"] == "weights_on_nonfaulty")["ok"]

    short = WeightCertificate(weights={2: 0.3, 3: 0.3}, at_x=2.5,
                              beta=0.25, gamma=2, construction="manual")
    assert not next(c for c in verify_certificate(short, ens, set()).checks
                    if c["name"] == "total_weight")["ok"]


def test_uniform_weights_on_average_minimizer():
    # the ideal exact-average case: uniform weights over all of N
    vertices = [0.5, 1.0, 2.0, 4.5]
    ens = quad_ensemble(vertices)
    uniform = {a: 0.25 for a in range(1, 5)}
    x = quadratic_weighted_optimum(uniform, dict(enumerate(ens.functions, 1)))
    assert x == pytest.approx(np.mean(vertices))
    cert = WeightCertificate(weights=uniform, at_x=x, beta=0.25, gamma=4,
                             construction="manual")
    assert verify_certificate(cert, ens, set()).ok


def test_extract_requires_a_root():
    with pytest.raises(RootPreconditionError):
        extract_weights(e1(), {4}, 1.0)


def test_extract_random_both_bounds_and_rules():
    rng = np.random.default_rng(23)
    for _ in range(40):
        ens = random_ensemble(rng)
        phi = int(rng.integers(0, ens.f + 1))
        faulty = set(int(a) for a in
                     rng.choice(ens.n, size=phi, replace=False) + 1)
        for mode, rule in (("trimmed", "signed"), ("rank", "rank")):
            x = solve_root(ens, mode, 1e-12)
            cert = extract_weights(ens, faulty, x, bound="half", rule=rule)
            assert verify_certificate(cert, ens, faulty).ok
            cert_n = extract_weights(ens, faulty, x, bound="inverse_n",
                                     rule=rule)
            assert cert_n.beta == pytest.approx(1.0 / ens.n)
            assert verify_certificate(cert_n, ens, faulty).ok


def test_inverse_n_bound_with_faulty_middle_band():
    # place a faulty agent inside the middle band on each side of zero so
    # both signed re-introduction branches of the 1/n construction run
    ens = quad_ensemble([0.0, 1.0, 2.0, 10.0])
    x = solve_root(ens, "trimmed", 1e-12)
    d = ens.gradients_at(x)
    order = sorted(range(4), key=lambda i: -d[i])
    middle = order[1:3]
    pos_mid = [i + 1 for i in middle if d[i] > 0]
    neg_mid = [i + 1 for i in middle if d[i] < 0]
    assert pos_mid and neg_mid  # the band straddles zero
    for faulty in ({pos_mid[0]}, {neg_mid[0]}):
        cert = extract_weights(ens, faulty, x, bound="inverse_n")
        assert verify_certificate(cert, ens, faulty).ok
        paired = extract_weights(ens, faulty, x, bound="half")
        assert verify_certificate(paired, ens, faulty).ok


def test_certificate_oracle_agreement():
    rng = np.random.default_rng(29)
    for _ in range(25):
        ens = random_ensemble(rng, n=int(rng.integers(4, 10)))
        phi = int(rng.integers(0, ens.f + 1))
        faulty = set(int(a) for a in
                     rng.choice(ens.n, size=phi, replace=False) + 1)
        x = solve_root(ens, "trimmed", 1e-12)
        cert = extract_weights(ens, faulty, x)
        nonfaulty = [a for a in ens.agents if a not in faulty]
        derivs = [(a, ens.functions[a - 1].grad(x)) for a in nonfaulty]
        spec = WeightSpec.from_nonfaulty(len(nonfaulty), ens.f)
        assert spec.beta == pytest.approx(cert.beta)
        ym = y_membership(derivs, spec, stationarity_tol=1e-9)
        assert ym.feasible


def test_y_membership_worked_examples():
    ym = y_membership([(1, 3.0), (2, 1.0), (3, -1.0)], WeightSpec(0.25, 2))
    assert ym.feasible
    w = ym.witness
    assert abs(sum(w.values()) - 1.0) <= 1e-12
    assert abs(sum(w[a] * d for a, d in [(1, 3.0), (2, 1.0), (3, -1.0)]
                   if a in w)) <= 1e-12
    assert sum(1 for v in w.values() if v >= 0.25 - 1e-12) >= 2

    assert not y_membership([(1, 2.0), (2, 2.0), (3, 2.0)],
                            WeightSpec(0.1, 2)).feasible
    ym = y_membership([(1, 0.0)], WeightSpec(1.0, 1))
    assert ym.feasible and ym.witness == {1: 1.0}


def test_y_membership_edge_cases():
    with pytest.raises(InfeasibleSpecError):
        y_membership([(1, 0.0), (2, 0.0)], WeightSpec(0.6, 2))
    # more required qualifiers than agents
    assert not y_membership([(1, 0.0)], WeightSpec(0.1, 2)).feasible
    # gamma = 0 leaves only the stationarity constraint
    assert y_membership([(1, -1.0), (2, 3.0)], WeightSpec(0.9, 0)).feasible
    assert not y_membership([(1, 1.0), (2, 3.0)], WeightSpec(0.9, 0)).feasible
    # wide stationarity slack
    assert y_membership([(1, 1.0), (2, 3.0)], WeightSpec(0.25, 2),
                        stationarity_tol=1.5).feasible


def test_y_membership_matches_lp_oracle():
    rng = np.random.default_rng(31)
    for _ in range(60):
        m = int(rng.integers(1, 7))
        derivs = [(a + 1, float(rng.uniform(-3, 3))) for a in range(m)]
        if rng.integers(0, 2):
            derivs[int(rng.integers(0, m))] = (int(rng.integers(1, m + 1)), 0.0)
        gamma = int(rng.integers(0, m + 1))
        beta = float(rng.uniform(0.0, 1.0 / max(gamma, 1)))
        tol = float(rng.choice([0.0, 1e-3, 0.5]))
        got = y_membership(derivs, WeightSpec(beta, gamma), tol).feasible
        want = oracles.lp_weight_feasible(derivs, beta, gamma, tol)
        assert got == want, (derivs, beta, gamma, tol)


def test_y_membership_witness_always_valid():
    rng = np.random.default_rng(37)
    for _ in range(80):
        m = int(rng.integers(1, 9))
        derivs = [(a + 1, float(rng.uniform(-4, 4))) for a in range(m)]
        gamma = int(rng.integers(0, m + 1))
        beta = float(rng.uniform(0.0, 1.0 / max(gamma, 1)))
        tol = float(rng.choice([0.0, 1e-3]))
        ym = y_membership(derivs, WeightSpec(beta, gamma), tol)
        if not ym.feasible:
            continue
        w = ym.witness
        d = dict(derivs)
        assert all(v >= -1e-15 for v in w.values())
        assert abs(sum(w.values()) - 1.0) <= 1e-9
        assert abs(sum(v * d[a] for a, v in w.items())) <= tol + 1e-9
        assert sum(1 for v in w.values() if v >= beta - 1e-12) >= gamma


def test_y_membership_sweep_path_beyond_enumeration():
    rng = np.random.default_rng(41)
    spec = WeightSpec.from_nonfaulty(20, 5)
    # symmetric derivatives: some middle window must straddle zero
    sym = [(a + 1, float(v)) for a, v in enumerate(np.linspace(-2, 2, 20))]
    ym = y_membership(sym, spec)
    assert ym.feasible
    d = dict(sym)
    assert abs(sum(v * d[a] for a, v in ym.witness.items())) <= 1e-9
    assert sum(1 for v in ym.witness.values()
               if v >= spec.beta - 1e-12) >= spec.gamma
    all_pos = [(a + 1, float(rng.uniform(0.5, 2))) for a in range(20)]
    assert not y_membership(all_pos, spec).feasible


def test_feasible_set_is_an_interval():
    rng = np.random.default_rng(43)
    for _ in range(8):
        n = int(rng.integers(4, 9))
        ens = random_ensemble(rng, n=n, kinds=("quadratic",))
        spec = WeightSpec.from_nonfaulty(n, ens.f)
        lo, hi = ens.argmin_hull()
        xs = np.linspace(lo - 0.5, hi + 0.5, 161)
        feas = []
        for x in xs:
            derivs = [(a, ens.functions[a - 1].grad(float(x)))
                      for a in ens.agents]
            feas.append(y_membership(derivs, spec).feasible)
        idx = [i for i, ok in enumerate(feas) if ok]
        assert idx, "root sits inside, so some grid point must qualify"
        assert idx == list(range(idx[0], idx[-1] + 1))


def test_quadratic_weighted_optimum():
    quads = {1: Quadratic(7.0), 2: Quadratic(2.0), 3: Quadratic(3.0),
             4: Quadratic(4.0)}
    assert quadratic_weighted_optimum({2: 0.5, 3: 0.5}, quads) == 2.5
    assert quadratic_weighted_optimum({1: 1.0}, quads) == 7.0
    quads14 = {i: Quadratic(float(i)) for i in range(1, 5)}
    assert quadratic_weighted_optimum({i: 0.25 for i in range(1, 5)},
                                      quads14) == 2.5
    with pytest.raises(DegenerateWeightsError):
        quadratic_weighted_optimum({1: 0.0}, quads)


def test_impossibility_identical_view_pair():
    for n, f in ((4, 1), (7, 2)):
        scns = impossibility_scenarios(n=n, f=f, phi=f)
        a, b = scns[0], scns[1]
        hull_a = FunctionEnsemble(
            tuple(a.functions[i] for i in range(1, n + 1)), f
        ).argmin_hull(a.nonfaulty)
        hull_b = FunctionEnsemble(
            tuple(b.functions[i] for i in range(1, n + 1)), f
        ).argmin_hull(b.nonfaulty)
        assert hull_a == (-1.0, 0.0)
        assert hull_b == (0.0, 1.0)
        # intersection is the single point 0, where neither execution's
        # derivative sum vanishes
        s_a = sum(a.functions[i].grad(0.0) for i in a.nonfaulty)
        s_b = sum(b.functions[i].grad(0.0) for i in b.nonfaulty)
        assert s_a != 0.0 and s_b != 0.0


def test_impossibility_weight_cap_pair():
    for n, f, phi in ((4, 1, 1), (7, 2, 1), (7, 2, 2)):
        scns = impossibility_scenarios(n=n, f=f, phi=phi)
        case1, case2 = scns[2], scns[3]
        a = float(f + 1)
        fns = case1.functions
        ens1 = FunctionEnsemble(tuple(fns[i] for i in range(1, n + 1)), f)
        assert ens1.argmin_hull(case1.nonfaulty) == (1.0, a)
        assert ens1.argmin_hull(case2.nonfaulty) == (a, float(n))
        # at the forced output, agents 1..f pull strictly upward, everyone
        # else in case 1 is exactly stationary: their weights must vanish
        for i in range(1, f + 1):
            assert fns[i].grad(a) > 0.0
        for i in range(f + 1, n - phi + 1):
            assert fns[i].grad(a) == 0.0
        derivs = [(i, fns[i].grad(a)) for i in case1.nonfaulty]
        nonfaulty = len(case1.nonfaulty)
        ok = y_membership(derivs, WeightSpec(1e-9, nonfaulty - f))
        assert ok.feasible
        assert all(ok.witness.get(i, 0.0) == 0.0 for i in range(1, f + 1))
        gamma_over = nonfaulty - f + 1
        for beta in np.logspace(-6, math.log10(0.999 / gamma_over), 10):
            assert not y_membership(
                derivs, WeightSpec(float(beta), gamma_over)).feasible


def test_impossibility_scenarios_validation():
    with pytest.raises(ValueError):
        impossibility_scenarios(n=4, f=2)
    with pytest.raises(ValueError):
        impossibility_scenarios(n=4, f=1, phi=0)
