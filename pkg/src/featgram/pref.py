"""Preference-ordered enumeration of disjunctive alternatives.

Each alternative ``(group, index)`` carries a weight (default 0) and a
full context scores the sum of its choices.  Contexts come out best
first, ties broken lexicographically, by a best-first search over
partial contexts whose bound adds the best still-open weight per group.
"""

from __future__ import annotations

import heapq
import math

from . import fs as F
from .errors import WeightsError


class PreferenceWeights:
    def __init__(self, weights=None):
        self.weights = {}
        for (g, i), w in (weights or {}).items():
            w = float(w)
            if not math.isfinite(w):
                raise WeightsError(f"weight for {g} {i} is not finite")
            self.weights[(int(g), int(i))] = w

    def weight(self, group, index):
        return self.weights.get((group, index), 0.0)

    def score(self, context):
        return sum(self.weight(g, i) for g, i in context.items())

    def __repr__(self):
        return f"PreferenceWeights({self.weights!r})"

    @classmethod
    def from_text(cls, text):
        weights = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise WeightsError(
                    f"line {lineno}: expected 'group index weight'")
            try:
                g, i, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise WeightsError(f"line {lineno}: bad number") from None
            if not math.isfinite(w):
                raise WeightsError(f"line {lineno}: weight is not finite")
            weights[(g, i)] = w
        return cls(weights)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as e:
            raise WeightsError(f"cannot read {path}: {e}") from None

    def to_text(self):
        return "".join(f"{g} {i} {w:g}\n"
                       for (g, i), w in sorted(self.weights.items()))


class SearchCounter:
    """Number of partial contexts checked for consistency."""

    def __init__(self):
        self.expanded = 0


def _contexts(fs, weights, counter):
    order = sorted(fs.groups)
    domains = {g: sorted(fs.groups[g][1]) for g in order}
    best = [max(weights.weight(g, i) for i in domains[g]) for g in order]
    # rest[k]: best total still available from groups k..end
    rest = [0.0] * (len(order) + 1)
    for k in range(len(order) - 1, -1, -1):
        rest[k] = rest[k + 1] + best[k]
    _, search = F._solver_and_search(fs)

    def consistent(prefix):
        counter.expanded += 1
        doms = {g: [i] for g, i in zip(order, prefix)}
        return search.first(order[:len(prefix)], doms) is not None

    # entries: (-bound, prefix, score-so-far); a full prefix pops in
    # (score desc, lexicographic) order since its bound is exact
    heap = [(-rest[0], (), 0.0)]
    while heap:
        neg, prefix, score = heapq.heappop(heap)
        if not consistent(prefix):
            continue
        k = len(prefix)
        if k == len(order):
            yield score, dict(zip(order, prefix))
            continue
        g = order[k]
        for i in domains[g]:
            s = score + weights.weight(g, i)
            heapq.heappush(heap, (-(s + rest[k + 1]), prefix + (i,), s))


def best_contexts(fs, weights=None, k=None, counter=None):
    """Up to ``k`` consistent full contexts as ``(score, {group: index})``,
    best first."""
    weights = weights or PreferenceWeights()
    counter = counter or SearchCounter()
    out = []
    if fs is None:
        return out
    for item in _contexts(fs, weights, counter):
        out.append(item)
        if k is not None and len(out) >= k:
            break
    return out


def ordered_dnf(fs, weights=None, counter=None):
    """Disjunction-free alternatives of ``fs``, lazily, best context first.

    Yields ``(score, context, structure)``.
    """
    if fs is None:
        return
    weights = weights or PreferenceWeights()
    counter = counter or SearchCounter()
    for score, ctx in _contexts(fs, weights, counter):
        doms = {g: [i] for g, i in ctx.items()}
        for _, alt in F.iter_dnf(fs, doms):
            yield score, ctx, alt
