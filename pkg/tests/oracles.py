"""Slow, literal reference implementations used as test oracles."""

import math


def group_oracle(times, sizes, max_payload=1432, variation=0.10, slot=1.0, per_side=2):
    """Labels 'F' / 'S' / 'Sp' by direct pairwise enumeration.

    Within each slot the non-full packets are ranked by (time, size, input
    order); a packet polls every other non-full packet of its slot whose rank
    differs by at most `per_side` and is Steady on a strict majority of
    agreements (ties Sparse).
    """
    n = len(sizes)
    labels = [None] * n
    for i in range(n):
        if sizes[i] >= max_payload:
            labels[i] = "F"
    slots = {}
    for i in range(n):
        if labels[i] is None:
            slots.setdefault(math.floor(times[i] / slot), []).append(i)
    for members in slots.values():
        ranked = sorted(members, key=lambda i: (times[i], sizes[i], i))
        for r, i in enumerate(ranked):
            polled = agree = 0
            for q, j in enumerate(ranked):
                if j == i or abs(q - r) > per_side:
                    continue
                polled += 1
                if abs(sizes[j] - sizes[i]) <= variation * sizes[i]:
                    agree += 1
            labels[i] = "S" if 2 * agree > polled else "Sp"
    return labels


def ema_oracle(values, alpha):
    """attr_t = alpha * x_t + (1 - alpha) * attr_{t-1}, seeded with the first value."""
    out = []
    prev = None
    for x in values:
        prev = x if prev is None else alpha * x + (1 - alpha) * prev
        out.append(prev)
    return out


def transition_oracle(stages, order):
    """Hand-style count of consecutive pairs into a nested list indexed by `order`."""
    counts = [[0] * len(order) for _ in order]
    for a, b in zip(stages, stages[1:]):
        counts[order.index(a)][order.index(b)] += 1
    return counts
