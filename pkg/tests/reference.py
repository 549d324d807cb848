"""Straight-line scalar reference implementations used as merging oracles.

These deliberately avoid numpy vectorization and any code sharing with the
package so kernel tests compare two independent derivations.
"""

import math


def ref_task_arithmetic(base, finetuned, lam):
    n = len(base)
    out = []
    for i in range(n):
        delta = 0.0
        for model in finetuned:
            delta += model[i] - base[i]
        out.append(base[i] + lam * delta)
    return out


def ref_ties(base, finetuned, k, lam):
    n = len(base)
    r = max(1, round(k * n))
    kept_sets = []
    taus = []
    for model in finetuned:
        tau = [model[i] - base[i] for i in range(n)]
        order = sorted(range(n), key=lambda i: (-abs(tau[i]), i))
        kept_sets.append(set(order[:r]))
        taus.append(tau)
    out = []
    for i in range(n):
        total = 0.0
        for t in range(len(finetuned)):
            if i in kept_sets[t]:
                total += taus[t][i]
        gamma = 1.0 if total >= 0 else -1.0
        aligned = []
        for t in range(len(finetuned)):
            if i in kept_sets[t]:
                value = taus[t][i]
                sign = 1.0 if value >= 0 else -1.0
                if sign == gamma:
                    aligned.append(value)
        delta = sum(aligned) / len(aligned) if aligned else 0.0
        out.append(base[i] + lam * delta)
    return out


def ref_slerp(a, b, t):
    if t == 0.0:
        return list(a)
    if t == 1.0:
        return list(b)
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    dot = sum(x * y for x, y in zip(a, b))
    cos = min(1.0, max(-1.0, dot / (norm_a * norm_b)))
    omega = math.acos(cos)
    if math.sin(omega) < 1e-6:
        return [(1.0 - t) * x + t * y for x, y in zip(a, b)]
    ca = math.sin((1.0 - t) * omega) / math.sin(omega)
    cb = math.sin(t * omega) / math.sin(omega)
    return [ca * x + cb * y for x, y in zip(a, b)]


def ref_linear(models, w):
    n = len(models[0])
    out = []
    for i in range(n):
        acc = 0.0
        for weight, model in zip(w, models):
            acc += weight * model[i]
        out.append(acc)
    return out
