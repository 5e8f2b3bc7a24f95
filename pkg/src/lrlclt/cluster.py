"""Intersection graphs, Ursell functions, polymer partition functions and truncated cluster series.

Ursell coefficients and the cluster series only depend on polymer supports, so
both are evaluated over a *support table*: for every support U the summed
activity of the polymers living on U (and the summed moduli, and the count).
This regrouping is exact.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from lrlclt.errors import BudgetExceeded, DomainError
from lrlclt.gibbs import build_exact, decode
from lrlclt.polymer import ActivityContext, Polymer, activity

URSELL_EDGE_BUDGET = 24
MAX_ORDER = 5
TUPLE_BUDGET = 2**22
SUBSET_SITE_BUDGET = 22


@dataclass(frozen=True)
class IntersectionGraph:
    n: int
    edges: frozenset

    @classmethod
    def of(cls, supports: Sequence[Iterable]) -> IntersectionGraph:
        sets = [frozenset(s) for s in supports]
        edges = frozenset((i, j) for i, j in itertools.combinations(range(len(sets)), 2) if sets[i] & sets[j])
        return cls(len(sets), edges)

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        adj = {i: set() for i in range(self.n)}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        seen, stack = {0}, [0]
        while stack:
            for j in adj[stack.pop()] - seen:
                seen.add(j)
                stack.append(j)
        return len(seen) == self.n


def intersection_graph(polymers: Sequence) -> IntersectionGraph:
    return IntersectionGraph.of([_support(p) for p in polymers])


def _support(p):
    return p.support if isinstance(p, Polymer) else tuple(p)


_URSELL_CACHE: dict = {}


def connected_signed_count(n: int, edges: frozenset) -> int:
    """Sum over connected spanning subgraphs of (-1)^(number of edges).

    Vertex-subset recursion on the connected part of the generating function
    with every edge weight equal to -1: the total weight of a vertex set is 1
    when it spans no edge and 0 otherwise.
    """
    adj = [0] * n
    for i, j in edges:
        adj[i] |= 1 << j
        adj[j] |= 1 << i
    full = (1 << n) - 1
    independent = [True] * (1 << n)
    for S in range(1, 1 << n):
        low = (S & -S).bit_length() - 1
        rest = S & ~(1 << low)
        independent[S] = independent[rest] and not (adj[low] & rest)
    conn = [0] * (1 << n)
    for S in range(1, 1 << n):
        low = S & -S
        total = 1 if independent[S] else 0
        rest = S & ~low
        sub = rest
        # proper subsets V of S containing the lowest vertex
        while True:
            V = sub | low
            if V != S:
                total -= conn[V] * (1 if independent[S & ~V] else 0)
            if sub == 0:
                break
            sub = (sub - 1) & rest
        conn[S] = total
    return conn[full]


def ursell(polymers: Sequence) -> Fraction:
    """phi^T of an ordered tuple, exact."""
    n = len(polymers)
    if n == 0:
        raise DomainError("the Ursell function needs at least one polymer")
    if n == 1:
        return Fraction(1)
    g = intersection_graph(polymers)
    return ursell_of_graph(g)


def ursell_of_graph(g: IntersectionGraph) -> Fraction:
    if g.n == 1:
        return Fraction(1)
    if len(g.edges) > URSELL_EDGE_BUDGET:
        raise BudgetExceeded("Ursell intersection-graph edges", len(g.edges), URSELL_EDGE_BUDGET)
    if not g.is_connected():
        return Fraction(0)
    key = (g.n, g.edges)
    hit = _URSELL_CACHE.get(key)
    if hit is None:
        hit = Fraction(connected_signed_count(g.n, g.edges), math.factorial(g.n))
        _URSELL_CACHE[key] = hit
    return hit


@dataclass
class SupportTable:
    """Per-support sums of activities over a polymer family."""

    sites: tuple
    weight: dict = field(default_factory=dict)
    abs_weight: dict = field(default_factory=dict)
    count: dict = field(default_factory=dict)
    family: str = ""

    def add(self, support: tuple, value: complex, modulus: float | None = None, count: int = 1):
        key = tuple(support)
        self.weight[key] = self.weight.get(key, 0j) + complex(value)
        self.abs_weight[key] = self.abs_weight.get(key, 0.0) + (abs(value) if modulus is None else modulus)
        self.count[key] = self.count.get(key, 0) + count

    @property
    def supports(self) -> list[tuple]:
        return sorted(self.weight)


def support_table(ctx: ActivityContext, polymers: Iterable[Polymer], kind: str = "zeta_t", c: float = 0.0) -> SupportTable:
    table = SupportTable(ctx.region.sites, family=f"enumerated:{kind}")
    for R in polymers:
        table.add(R.support, activity(ctx, R, kind, c))
    return table


def full_family_table(ctx: ActivityContext, restrict_to_r2: bool = False) -> SupportTable:
    """zeta_t summed over every polymer of the region, one support at a time.

    On a support U with |U| >= 2 the polymers are a connected spanning pair
    graph on U decorated by any subset of singletons of U. The decorations sum
    to prod_x exp(i t f(sigma_x)/sqrt(D_k)), and the pair graphs to the
    connected part of prod_{pairs} exp(-beta Phi), per configuration of U.
    """
    sites = ctx.region.sites
    n, q = len(sites), ctx.model.space.q
    if n > SUBSET_SITE_BUDGET:
        raise BudgetExceeded("sites in a full-family polymer sum", n, SUBSET_SITE_BUDGET)
    table = SupportTable(sites, family="full" + (":R2" if restrict_to_r2 else ""))
    phase = ctx.phase
    if not restrict_to_r2:
        for i, x in enumerate(sites):
            val = complex(np.dot(ctx.masses[i], phase - 1.0))
            table.add((x,), val, count=1)
    for size in range(2, n + 1):
        for U in itertools.combinations(range(n), size):
            m = len(U)
            if q**m > 2**20:
                raise BudgetExceeded(f"configurations of a {m}-site support", q**m, 2**20)
            dig = decode(np.arange(q**m), m, q)
            base = np.prod(ctx.masses[np.array(U)[None, :], dig], axis=1).astype(complex)
            if not restrict_to_r2:
                base *= np.prod(phase[dig], axis=1)
            boltz = {}
            for a, b in itertools.combinations(range(m), 2):
                xi = ctx.pair_xi(sites[U[a]], sites[U[b]])
                boltz[(a, b)] = 1.0 + xi[dig[:, a], dig[:, b]]
            conn = _connected_part(m, boltz, dig.shape[0])
            val = complex(np.dot(base, conn))
            pair_graphs = _connected_graph_count(m)
            table.add(tuple(sites[i] for i in U), val, modulus=abs(val),
                      count=pair_graphs * (1 if restrict_to_r2 else 2**m))
    return table


def _connected_part(m: int, boltz: dict, width: int) -> np.ndarray:
    # C(S) = T(S) - sum_{V containing min S, V != S} C(V) T(S \ V), T(S) = prod of pair factors inside S
    T = np.ones((1 << m, width))
    for S in range(1, 1 << m):
        members = [i for i in range(m) if S >> i & 1]
        for a, b in itertools.combinations(members, 2):
            T[S] *= boltz[(a, b)]
    C = np.zeros((1 << m, width))
    for S in range(1, 1 << m):
        low = S & -S
        rest = S & ~low
        acc = T[S].copy()
        sub = rest
        while True:
            V = sub | low
            if V != S:
                acc -= C[V] * T[S & ~V]
            if sub == 0:
                break
            sub = (sub - 1) & rest
        C[S] = acc
    return C[(1 << m) - 1]


def _connected_graph_count(m: int) -> int:
    # labelled connected graphs on m vertices
    c = [0, 1]
    for k in range(2, m + 1):
        total = 2 ** math.comb(k, 2)
        total -= sum(math.comb(k - 1, j - 1) * c[j] * 2 ** math.comb(k - j, 2) for j in range(1, k))
        c.append(total)
    return c[m]


def polymer_partition_function(table: SupportTable) -> complex:
    """1 + sum over families of polymers with pairwise disjoint supports of the activity product.

    Dynamic programme over site subsets: the lowest site of the remaining set
    is either uncovered or covered by exactly one support.
    """
    sites = table.sites
    n = len(sites)
    if n > SUBSET_SITE_BUDGET:
        raise BudgetExceeded("sites in a polymer partition function", n, SUBSET_SITE_BUDGET)
    pos = {s: i for i, s in enumerate(sites)}
    by_low: dict[int, list] = {}
    for U, w in table.weight.items():
        if w == 0:
            continue
        mask = 0
        for s in U:
            mask |= 1 << pos[s]
        by_low.setdefault((mask & -mask).bit_length() - 1, []).append((mask, w))
    G = [0j] * (1 << n)
    G[0] = 1 + 0j
    for S in range(1, 1 << n):
        low = (S & -S).bit_length() - 1
        acc = G[S & ~(1 << low)]
        for mask, w in by_low.get(low, ()):
            if mask & S == mask:
                acc += w * G[S & ~mask]
        G[S] = acc
    return G[(1 << n) - 1]


@dataclass(frozen=True)
class FactorizationReport:
    lhs: complex
    rhs: complex
    log_norm_product: float
    xi: complex
    rel_error: float


def factorization_check(ctx: ActivityContext, table: SupportTable | None = None) -> FactorizationReport:
    """Compare Z_t from exact enumeration with prod_x N_x times the polymer partition function.

    Z_t = Z * mu(exp(i t S_k / sqrt(D_k))) and N_x = sum_e lambda(e) exp(-beta h_x(e)).
    """
    g = build_exact(ctx.model, ctx.region, ctx.beta, ctx.bc)
    u = ctx.scaled_t
    phases = np.exp(1j * u * g.s_values)
    lhs = complex(np.exp(g.log_z) * np.dot(g.probabilities, phases))
    if table is None:
        table = full_family_table(ctx)
    xi = polymer_partition_function(table)
    log_norm = float(np.sum(ctx.log_norms))
    rhs = complex(math.exp(log_norm) * xi)
    return FactorizationReport(lhs, rhs, log_norm, xi, abs(lhs - rhs) / abs(lhs))


@dataclass(frozen=True)
class SeriesOrder:
    n: int
    term_count: int
    increment: complex
    partial_sum: complex


def truncated_log_series(table: SupportTable, order: int, pin=None, require_large: bool = False,
                         absolute: bool = False, budget: int = TUPLE_BUDGET) -> list[SeriesOrder]:
    """Partial sums of sum_n sum_{ordered n-tuples} phi^T prod activity, for n <= order.

    ``pin`` is a site (some support must contain it) or a polymer / support
    (some support must meet it). ``require_large`` keeps only tuples with a
    support of more than one site. ``absolute`` sums |phi^T| prod |activity|
    from the per-support moduli. ``term_count`` counts ordered polymer tuples.
    """
    if not 1 <= order <= MAX_ORDER:
        raise DomainError(f"series order must lie in 1..{MAX_ORDER}")
    if pin is None:
        pin_set = None
    elif isinstance(pin, Polymer):
        pin_set = frozenset(pin.support)
    elif pin and isinstance(pin[0], tuple):
        pin_set = frozenset(pin)
    else:
        pin_set = frozenset([tuple(pin)])

    weights = table.abs_weight if absolute else table.weight
    supports = [U for U in table.supports if weights[U] != 0]
    sets = [frozenset(U) for U in supports]
    w = [weights[U] for U in supports]
    cnt = [table.count[U] for U in supports]
    needed = sum(math.comb(len(supports) + n - 1, n) for n in range(1, order + 1))
    if needed > budget:
        raise BudgetExceeded("support multisets in the cluster series", needed, budget)
    rows, partial, visited = [], 0j, 0
    for n in range(1, order + 1):
        inc, terms = 0j, 0
        for combo in itertools.combinations_with_replacement(range(len(supports)), n):
            visited += 1
            if visited > budget:
                raise BudgetExceeded("support multisets in the cluster series", visited, budget)
            if pin_set is not None and not any(sets[i] & pin_set for i in combo):
                continue
            if require_large and not any(len(sets[i]) > 1 for i in combo):
                continue
            g = IntersectionGraph.of([sets[i] for i in combo])
            phi = ursell_of_graph(g)
            if phi == 0:
                continue
            mult = Counter(combo)
            orderings = math.factorial(n)
            for m in mult.values():
                orderings //= math.factorial(m)
            prod = 1 + 0j
            tuples = orderings
            for i in combo:
                prod *= w[i]
                tuples *= cnt[i]
            coef = abs(phi) if absolute else phi
            inc += orderings * float(coef) * prod
            terms += tuples
        partial += inc
        rows.append(SeriesOrder(n, terms, inc, partial))
    return rows
