"""Shared builders for ensembles and scenarios used across the test suite."""

import numpy as np

from byzopt import FunctionEnsemble, Huber, Quadratic, Scenario


def quad_ensemble(vertices, f=1, scale=1.0):
    return FunctionEnsemble(
        tuple(Quadratic(float(v), scale) for v in vertices), f)


def e1():
    """The worked four-quadratic ensemble with vertices 1..4 and f=1."""
    return quad_ensemble([1.0, 2.0, 3.0, 4.0], f=1)


def random_ensemble(rng, n=None, f=None, kinds=("quadratic", "huber"),
                    span=4.0):
    """Seeded mixed ensemble with n > 3f; vertices in [-span, span]."""
    if n is None:
        n = int(rng.integers(4, 13))
    if f is None:
        f = (n - 1) // 3
    fns = []
    for _ in range(n):
        kind = kinds[int(rng.integers(0, len(kinds)))]
        a = float(rng.uniform(-span, span))
        if kind == "quadratic":
            fns.append(Quadratic(a, float(rng.uniform(0.5, 3.0))))
        else:
            fns.append(Huber(a, float(rng.uniform(0.5, 3.0)),
                             float(rng.uniform(0.5, 2.0))))
    return FunctionEnsemble(tuple(fns), f)


def huber_functions(vertices, slope=2.0, width=1.0):
    return {i + 1: Huber(float(v), slope, width)
            for i, v in enumerate(vertices)}


def quad_functions(vertices, scale=1.0):
    return {i + 1: Quadratic(float(v), scale)
            for i, v in enumerate(vertices)}


def scenario(functions, f=1, algorithm="alg1", faulty=(), adversary=None,
             **kw):
    return Scenario(
        n=len(functions), f=f, functions=dict(functions),
        faulty=frozenset(faulty), adversary=dict(adversary or {}),
        algorithm=algorithm, **kw)
