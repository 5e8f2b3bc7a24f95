"""Independent oracles shared by the test modules.

Nothing here calls into lrlclt's numerical code: energies, partition functions,
connectivity and Ursell coefficients are recomputed from their definitions.
"""

from __future__ import annotations

import itertools
import math
import sys
from fractions import Fraction

import networkx as nx
import pytest


def ising_coupling(r: int, J: float, alpha: float, trunc: int) -> float:
    if r < 1 or r > trunc:
        return 0.0
    return J if r == 1 else r ** (alpha - 2.0)


def maxnorm(x, y) -> int:
    return max(abs(a - b) for a, b in zip(x, y))


def ising_energy(sites, spins, J, alpha, trunc, boundary=None, pair_factor=1.0) -> float:
    """Double-loop Ising energy: -c s_x s_y inside, -c s_x w outside (boundary = constant spin or None)."""
    sites = [tuple(s) for s in sites]
    inside = set(sites)
    e = 0.0
    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            c = ising_coupling(maxnorm(sites[i], sites[j]), J, alpha, trunc) * pair_factor
            e -= c * spins[i] * spins[j]
    if boundary is not None:
        d = len(sites[0])
        for x, s in zip(sites, spins):
            for v in itertools.product(range(-trunc, trunc + 1), repeat=d):
                y = tuple(a + b for a, b in zip(x, v))
                if y in inside:
                    continue
                c = ising_coupling(max(abs(t) for t in v), J, alpha, trunc)
                e -= c * s * boundary
    return e


def ising_partition(sites, beta, J, alpha, trunc, boundary=None):
    """(Z, list of (spins, weight)) by itertools enumeration."""
    rows = []
    for spins in itertools.product((-1, 1), repeat=len(sites)):
        rows.append((spins, math.exp(-beta * ising_energy(sites, spins, J, alpha, trunc, boundary))))
    return math.fsum(w for _, w in rows), rows


def union_find_connected(bonds) -> bool:
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for b in bonds:
        for s in b:
            parent.setdefault(s, s)
    for b in bonds:
        b = list(b)
        for s in b[1:]:
            parent[find(s)] = find(b[0])
    return len({find(s) for s in parent}) <= 1


def ursell_oracle(supports) -> Fraction:
    """Signed count of connected spanning subgraphs of the intersection graph over n!, by edge subsets."""
    n = len(supports)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if set(supports[i]) & set(supports[j])]
    total = 0
    for m in range(len(edges) + 1):
        for sub in itertools.combinations(edges, m):
            g = nx.Graph()
            g.add_nodes_from(range(n))
            g.add_edges_from(sub)
            if nx.is_connected(g):
                total += (-1) ** m
    return Fraction(total, math.factorial(n))


@pytest.fixture
def oracles():
    import types

    return types.SimpleNamespace(ising_coupling=ising_coupling, ising_energy=ising_energy,
                                 ising_partition=ising_partition, union_find_connected=union_find_connected,
                                 ursell_oracle=ursell_oracle, maxnorm=maxnorm)


def pytest_terminal_summary(terminalreporter):
    # reuse the module pytest already imported so the recorded results are visible
    mod = next((m for name, m in list(sys.modules.items()) if name.rsplit(".", 1)[-1] == "test_acceptance"), None)
    if mod is None or not hasattr(mod, "summary_lines"):
        return
    lines = mod.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
