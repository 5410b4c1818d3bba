"""Nested-loop reference implementations, written without numpy contractions."""

import itertools
import math

import numpy as np


def indices(dims):
    return itertools.product(*(range(d) for d in dims))


def contract_all(data, vs):
    total = 0.0
    for idx in indices(data.shape):
        term = data[idx]
        for a, i in enumerate(idx):
            term *= vs[a][i]
        total += term
    return total


def contract_leave_one(data, axis, vs):
    other = [a for a in range(data.ndim) if a != axis]
    out = np.zeros(data.shape[axis])
    for idx in indices(data.shape):
        term = data[idx]
        for a, v in zip(other, vs):
            term *= v[idx[a]]
        out[idx[axis]] += term
    return out


def contract_leave_two(data, held, v):
    a, b = held
    (c,) = {0, 1, 2} - {a, b}
    out = np.zeros((data.shape[a], data.shape[b]))
    for idx in indices(data.shape):
        out[idx[a], idx[b]] += data[idx] * v[idx[c]]
    return out


def symmetrize(data):
    k = data.ndim
    out = np.zeros_like(data)
    perms = list(itertools.permutations(range(k)))
    for idx in indices(data.shape):
        out[idx] = sum(data[tuple(idx[p] for p in perm)] for perm in perms) / math.factorial(k)
    return out


def outer_power(v, k):
    out = np.zeros((len(v),) * k)
    for idx in indices(out.shape):
        term = 1.0
        for i in idx:
            term *= v[i]
        out[idx] = term
    return out


def deflate(data, v, alpha):
    return data - alpha * outer_power(v, data.ndim)


def power_step(data, v):
    g = contract_leave_one(data, 0, [v] * (data.ndim - 1))
    return g / math.sqrt(sum(x * x for x in g))


def symmetrized_step(data, v):
    g = sum(contract_leave_one(data, a, [v] * (data.ndim - 1)) for a in range(data.ndim))
    return g / math.sqrt(sum(x * x for x in g))
